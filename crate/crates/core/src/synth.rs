//! Synthetic drug knowledge graphs with a planted interaction rule.
//!
//! Drugs bind targets, targets sit in pathways, and two drugs interact iff
//! they share at least `min_shared` targets. Target popularity follows a
//! Zipf law so that some drugs are far more interaction-prone than others.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{write_ntriples, DDI_PREDICATES};
use crate::rng::RngStream;

pub const DRUG_PREFIX: &str = "http://bio2rdf.org/drugbank:DB";
pub const ALIAS_PREFIX: &str = "http://bio2rdf.org/kegg:D";
pub const TARGET_PREFIX: &str = "http://bio2rdf.org/uniprot:P";
pub const PATHWAY_PREFIX: &str = "http://bio2rdf.org/kegg:path";
pub const HAS_TARGET: &str = "http://bio2rdf.org/vocabulary:hasTarget";
pub const IS_PRESENT_IN: &str = "http://bio2rdf.org/vocabulary:isPresentIn";
pub const LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub drugs: usize,
    pub targets: usize,
    pub pathways: usize,
    /// Targets per drug, drawn uniformly from this inclusive range.
    pub targets_per_drug: (usize, usize),
    /// Exponent of the target popularity law; 0 is uniform.
    pub target_zipf: f64,
    /// Drugs interact iff they share at least this many targets.
    pub min_shared: usize,
    /// Fraction of rule positives replaced by random non-rule pairs.
    pub noise: f64,
    /// Drugs whose interaction triples use an alias IRI resolved through
    /// the mapping file.
    pub aliased_drugs: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            drugs: 500,
            targets: 100,
            pathways: 20,
            targets_per_drug: (3, 3),
            target_zipf: 1.0,
            min_shared: 1,
            noise: 0.05,
            aliased_drugs: 10,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.targets_per_drug;
        if self.drugs < 2 || self.targets == 0 || self.pathways == 0 || self.min_shared == 0 {
            return Err(Error::Config(
                "synthetic counts must be >= 1 (drugs >= 2)".into(),
            ));
        }
        if lo == 0 || lo > hi || hi > self.targets {
            return Err(Error::Config(format!(
                "invalid targets per drug range {lo}..={hi}"
            )));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise rate {} outside [0, 0.5)",
                self.noise
            )));
        }
        if self.target_zipf < 0.0 || self.aliased_drugs > self.drugs {
            return Err(Error::Config(
                "zipf exponent must be >= 0 and aliases <= drugs".into(),
            ));
        }
        Ok(())
    }
}

pub fn drug_label(i: usize) -> String {
    format!("{DRUG_PREFIX}{i:05}")
}

pub fn alias_label(i: usize) -> String {
    format!("{ALIAS_PREFIX}{i:05}")
}

fn target_label(i: usize) -> String {
    format!("{TARGET_PREFIX}{i:05}")
}

fn pathway_label(i: usize) -> String {
    format!("{PATHWAY_PREFIX}{i:05}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    /// Sorted target indices per drug.
    pub drug_targets: Vec<Vec<usize>>,
    pub target_pathway: Vec<usize>,
    /// Pairs (by drug index, `u < v`) satisfying the rule.
    pub planted: Vec<(usize, usize)>,
    /// Emitted positive pairs after label noise, sorted.
    pub positives: Vec<(usize, usize)>,
}

/// Pairs sharing at least `min_shared` targets.
pub fn rule_pairs(drug_targets: &[Vec<usize>], min_shared: usize) -> Vec<(usize, usize)> {
    let sets: Vec<BTreeSet<usize>> = drug_targets
        .iter()
        .map(|t| t.iter().copied().collect())
        .collect();
    let mut out = Vec::new();
    for u in 0..sets.len() {
        for v in u + 1..sets.len() {
            if sets[u].intersection(&sets[v]).count() >= min_shared {
                out.push((u, v));
            }
        }
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed, 0).rng();
    let weights: Vec<f64> = (0..spec.targets)
        .map(|j| ((j + 1) as f64).powf(-spec.target_zipf))
        .collect();
    let (lo, hi) = spec.targets_per_drug;
    let drug_targets: Vec<Vec<usize>> = (0..spec.drugs)
        .map(|_| {
            let k = rng.random_range(lo..=hi);
            let mut t = index::sample_weighted(&mut rng, spec.targets, |j| weights[j], k)
                .expect("positive finite weights")
                .into_vec();
            t.sort_unstable();
            t
        })
        .collect();
    let target_pathway: Vec<usize> = (0..spec.targets)
        .map(|_| rng.random_range(0..spec.pathways))
        .collect();

    let planted = rule_pairs(&drug_targets, spec.min_shared);
    let planted_set: BTreeSet<(usize, usize)> = planted.iter().copied().collect();
    let flips = (spec.noise * planted.len() as f64).round() as usize;
    let mut positives: BTreeSet<(usize, usize)> = planted_set.clone();
    if flips > 0 {
        let mut noise_rng = RngStream::new(spec.seed, 1).rng();
        for i in index::sample(&mut noise_rng, planted.len(), flips) {
            positives.remove(&planted[i]);
        }
        let n = spec.drugs;
        let non_rule = n * (n - 1) / 2 - planted.len();
        let wanted = flips.min(non_rule);
        let mut added = 0;
        while added < wanted {
            let (a, b) = (noise_rng.random_range(0..n), noise_rng.random_range(0..n));
            let pair = (a.min(b), a.max(b));
            if a != b && !planted_set.contains(&pair) && positives.insert(pair) {
                added += 1;
            }
        }
    }
    Ok(SyntheticData {
        spec: spec.clone(),
        drug_targets,
        target_pathway,
        planted,
        positives: positives.into_iter().collect(),
    })
}

/// Paths of the files written by [`write_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFiles {
    /// Background graph with drug labels as literals.
    pub graph: PathBuf,
    /// Interaction triples under the DDI predicates (to be stripped).
    pub interactions: PathBuf,
    pub mapping: PathBuf,
    pub ddi: PathBuf,
}

impl SyntheticData {
    /// Interaction-triple subject for drug `i`: aliased drugs use their
    /// alias IRI.
    fn interaction_label(&self, i: usize) -> String {
        if i < self.spec.aliased_drugs {
            alias_label(i)
        } else {
            drug_label(i)
        }
    }

    pub fn write_graph<W: Write>(&self, mut out: W) -> Result<()> {
        for (d, targets) in self.drug_targets.iter().enumerate() {
            let drug = drug_label(d);
            for &t in targets {
                write_ntriples(
                    &mut out,
                    [(drug.as_str(), HAS_TARGET, target_label(t).as_str())],
                )?;
            }
            writeln!(out, "<{drug}> <{LABEL}> \"drug {d}\"@en .")?;
        }
        for (t, &p) in self.target_pathway.iter().enumerate() {
            write_ntriples(
                &mut out,
                [(
                    target_label(t).as_str(),
                    IS_PRESENT_IN,
                    pathway_label(p).as_str(),
                )],
            )?;
        }
        Ok(())
    }

    pub fn write_interactions<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, &(u, v)) in self.positives.iter().enumerate() {
            let predicate = DDI_PREDICATES[k % DDI_PREDICATES.len()];
            write_ntriples(
                &mut out,
                [(
                    self.interaction_label(u).as_str(),
                    predicate,
                    self.interaction_label(v).as_str(),
                )],
            )?;
        }
        Ok(())
    }

    pub fn write_mapping<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.spec.aliased_drugs {
            writeln!(out, "{}\t{}", alias_label(i), drug_label(i))?;
        }
        Ok(())
    }

    /// `drug_u  drug_v  source` rows, aliased drugs under their alias.
    pub fn write_ddi<W: Write>(&self, mut out: W) -> Result<()> {
        for &(u, v) in &self.positives {
            writeln!(
                out,
                "{}\t{}\tsynthetic",
                self.interaction_label(u),
                self.interaction_label(v)
            )?;
        }
        Ok(())
    }

    pub fn write_files(&self, dir: &Path) -> Result<SyntheticFiles> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let files = SyntheticFiles {
            graph: dir.join("graph.nt"),
            interactions: dir.join("interactions.nt"),
            mapping: dir.join("mapping.tsv"),
            ddi: dir.join("ddi.tsv"),
        };
        let mut buf = Vec::new();
        self.write_graph(&mut buf)?;
        fs::write(&files.graph, &buf).map_err(|e| Error::file(&files.graph, e))?;
        buf.clear();
        self.write_interactions(&mut buf)?;
        fs::write(&files.interactions, &buf).map_err(|e| Error::file(&files.interactions, e))?;
        buf.clear();
        self.write_mapping(&mut buf)?;
        fs::write(&files.mapping, &buf).map_err(|e| Error::file(&files.mapping, e))?;
        buf.clear();
        self.write_ddi(&mut buf)?;
        fs::write(&files.ddi, &buf).map_err(|e| Error::file(&files.ddi, e))?;
        Ok(files)
    }
}
