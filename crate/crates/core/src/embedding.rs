//! Dense per-entity vectors and the shared embedding text format.
//!
//! Text format: a header line `<entity_count> <dim>`, then one line per
//! entity, `<label> <f1> ... <fdim>`, floats with 9 significant digits.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMethod {
    Rdf2vec,
    Kglove,
    Transe,
    Complex,
    Simple,
}

impl EmbeddingMethod {
    pub const ALL: [EmbeddingMethod; 5] = [
        EmbeddingMethod::Rdf2vec,
        EmbeddingMethod::Kglove,
        EmbeddingMethod::Transe,
        EmbeddingMethod::Complex,
        EmbeddingMethod::Simple,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rdf2vec => "rdf2vec",
            Self::Kglove => "kglove",
            Self::Transe => "transe",
            Self::Complex => "complex",
            Self::Simple => "simple",
        }
    }
}

impl fmt::Display for EmbeddingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmbeddingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown embedding method `{s}`")))
    }
}

/// Vectors indexed by entity id. Entities the method produced no vector
/// for (e.g. nodes absent from the co-occurrence matrix) hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub method: EmbeddingMethod,
    pub dim: usize,
    pub labels: Vec<String>,
    pub vectors: Vec<Option<Vec<f64>>>,
}

impl EmbeddingSet {
    pub fn new(method: EmbeddingMethod, dim: usize, labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            method,
            dim,
            labels,
            vectors: vec![None; n],
        }
    }

    pub fn get(&self, entity: usize) -> Option<&[f64]> {
        self.vectors.get(entity)?.as_deref()
    }

    pub fn present_count(&self) -> usize {
        self.vectors.iter().filter(|v| v.is_some()).count()
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.present_count(), self.dim)?;
        for (label, vector) in self.labels.iter().zip(&self.vectors) {
            if let Some(v) = vector {
                write!(out, "{label}")?;
                for x in v {
                    write!(out, " {x:.8e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Reads the text format; rows keep file order and all are present.
    pub fn read_text<R: BufRead>(reader: R, method: EmbeddingMethod) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (count, dim) = match lines.next() {
            Some((_, header)) => {
                let header = header?;
                let parts: Vec<&str> = header.split_whitespace().collect();
                match parts.as_slice() {
                    [c, d] => (parse_usize(c, 1)?, parse_usize(d, 1)?),
                    _ => return Err(parse_err(1, "expected `<entity_count> <dim>` header")),
                }
            }
            None => return Err(parse_err(1, "empty embedding file")),
        };
        let mut set = EmbeddingSet::new(method, dim, Vec::with_capacity(count));
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let label = parts.next().expect("non-empty line").to_string();
            let v = parts
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| parse_err(i + 1, &format!("bad float `{p}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if v.len() != dim {
                return Err(parse_err(
                    i + 1,
                    &format!("expected {dim} values, found {}", v.len()),
                ));
            }
            set.labels.push(label);
            set.vectors.push(Some(v));
        }
        if set.labels.len() != count {
            return Err(parse_err(
                1,
                &format!("header announces {count} rows, found {}", set.labels.len()),
            ));
        }
        Ok(set)
    }
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(line, &format!("expected an integer, found `{s}`")))
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

/// Sidecar JSON written next to every embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub method: EmbeddingMethod,
    pub dim: usize,
    pub sigma: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub loss_curve: Vec<f64>,
}
