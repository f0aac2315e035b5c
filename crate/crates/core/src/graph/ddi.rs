use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use super::{Canonicalizer, Dictionary, KnowledgeGraph};
use crate::error::{Error, Result};

/// The set of entity ids that are drugs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DrugUniverse {
    ids: BTreeSet<usize>,
}

impl DrugUniverse {
    pub fn new(ids: impl IntoIterator<Item = usize>) -> Self {
        Self {
            ids: ids.into_iter().collect(),
        }
    }

    /// Every entity whose label starts with `prefix`.
    pub fn from_prefix(graph: &KnowledgeGraph, prefix: &str) -> Self {
        Self::new(
            graph
                .entities()
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, l)| l.starts_with(prefix))
                .map(|(i, _)| i),
        )
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdiPair {
    pub u: usize,
    pub v: usize,
    pub label: u8,
    pub sources: BTreeSet<String>,
}

/// Canonical labeled drug pairs plus the drug universe.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DdiDataset {
    /// Sorted by `(u, v)`; `u < v`.
    pub pairs: Vec<DdiPair>,
    pub universe: DrugUniverse,
    pub skipped_unknown: usize,
    pub skipped_self: usize,
}

impl DdiDataset {
    /// Assembles a dataset from already-canonical positive pairs.
    pub fn from_positive_pairs(
        pairs: impl IntoIterator<Item = (usize, usize)>,
        universe: DrugUniverse,
    ) -> Result<Self> {
        let mut merged: BTreeMap<(usize, usize), DdiPair> = BTreeMap::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::Usage(format!("self pair ({a}, {a})")));
            }
            if !universe.contains(a) || !universe.contains(b) {
                return Err(Error::Usage(format!(
                    "pair ({a}, {b}) outside the drug universe"
                )));
            }
            let (u, v) = (a.min(b), a.max(b));
            merged.entry((u, v)).or_insert(DdiPair {
                u,
                v,
                label: 1,
                sources: BTreeSet::new(),
            });
        }
        Ok(Self {
            pairs: merged.into_values().collect(),
            universe,
            skipped_unknown: 0,
            skipped_self: 0,
        })
    }

    pub fn drug_count(&self) -> usize {
        self.universe.len()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs
            .iter()
            .filter(|p| p.label == 1)
            .map(|p| (p.u, p.v))
    }

    pub fn skipped(&self) -> usize {
        self.skipped_unknown + self.skipped_self
    }
}

/// A named tab-separated DDI edge list.
pub struct DdiSource<R> {
    pub name: String,
    pub reader: R,
}

/// Reads `drug_u<TAB>drug_v<TAB>source` rows into canonical positive pairs.
///
/// Labels are rewritten through `canon` and resolved in `entities`. Rows
/// naming a drug outside `universe` are skipped and counted, as are
/// self-pairs. Duplicates merge their source tags.
pub fn extract_ddi_pairs<R: BufRead>(
    files: Vec<DdiSource<R>>,
    entities: &Dictionary,
    universe: &DrugUniverse,
    canon: &Canonicalizer,
) -> Result<DdiDataset> {
    let mut merged: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
    let mut skipped_unknown = 0;
    let mut skipped_self = 0;
    for file in files {
        for (i, line) in file.reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{}: expected `drug_u<TAB>drug_v<TAB>source`", file.name),
                });
            }
            let resolve = |label: &str| {
                entities
                    .id(canon.canonical(label))
                    .filter(|&id| universe.contains(id))
            };
            let (Some(a), Some(b)) = (resolve(fields[0]), resolve(fields[1])) else {
                skipped_unknown += 1;
                continue;
            };
            if a == b {
                skipped_self += 1;
                continue;
            }
            merged
                .entry((a.min(b), a.max(b)))
                .or_default()
                .insert(fields[2].to_string());
        }
    }
    if skipped_unknown > 0 {
        log::warn!("skipped {skipped_unknown} DDI rows naming drugs outside the universe");
    }
    Ok(DdiDataset {
        pairs: merged
            .into_iter()
            .map(|((u, v), sources)| DdiPair {
                u,
                v,
                label: 1,
                sources,
            })
            .collect(),
        universe: universe.clone(),
        skipped_unknown,
        skipped_self,
    })
}
