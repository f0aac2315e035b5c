//! Run configuration: a TOML file of `key = value` lines under sections.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, MetricName};
use crate::convlstm::{Network, NetworkConfig};
use crate::embedding::EmbeddingMethod;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLD;
use crate::synth::{SyntheticSpec, DRUG_PREFIX};

/// Every accepted key, shown by `--help`.
pub const CONFIG_KEYS: &str = "\
Config file keys (TOML; unknown keys are errors):
  seed = 0                      master seed
  [paths]
    triples = [\"kg.nt\"]         N-Triples files, one named source each
    mapping = \"mapping.tsv\"     optional source<TAB>canonical IRI table
    ddi = [\"ddi.tsv\"]           drug_u<TAB>drug_v<TAB>source files
    out = \"run\"                 output directory
  [embedding]
    methods = [\"complex\"]       rdf2vec | kglove | transe | complex | simple
    dim = 32
    sigma = 15                  corrupted triples per positive
    epochs = 100                optional; omitted uses the method default
    learning_rate = 0.01        optional; omitted uses the method default
    walks = 500                 rdf2vec walks per entity
    depth = 5                   rdf2vec walk depth (hops)
    window = 5                  rdf2vec context window
    damping = 0.85              kglove personalized PageRank damping
    tolerance = 1e-6            kglove push tolerance
  [pairs]
    drug_prefix = \"http://bio2rdf.org/drugbank:DB\"
    negative_ratio = 1.0        sampled unknown pairs per positive
    holdout = 0.2               outer test fraction
    folds = 5
    stratified = true
  [models]
    classifiers = [\"logreg\"]    logreg | nb | knn | svm | rf | gbt | convlstm
    selection_metric = \"aupr\"   aupr | roc_auc | f1 | mcc
    search_budget = 0           random-search draws; 0 keeps defaults
    ensemble_size = 3           members of the model-averaging ensemble
    threshold = 0.5             F1/MCC operating threshold
    learning_fractions = []     training fractions for learning curves
  [network]                     Conv-LSTM settings (seq_len, filters, kernel,
                                pool, hidden, lstm_layers, cell_kernel,
                                cell_positions, dropout, noise, dense,
                                batch_size, epochs, validation_fraction,
                                [network.optimizer] kind/rate/beta1/beta2/decay/eps)
  [synthetic]                   optional; generates the inputs instead of
                                reading [paths] (drugs, targets, pathways,
                                targets_per_drug, target_zipf, min_shared,
                                noise, aliased_drugs, seed)
";

/// A classifier selectable in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Baseline(BaselineKind),
    Convlstm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline(k) => k.as_str(),
            Self::Convlstm => "convlstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().as_str() {
            "nb" => BaselineKind::GaussianNb,
            "svm" => BaselineKind::LinearSvm,
            "rf" => BaselineKind::RandomForest,
            "convlstm" | "conv-lstm" => return Ok(Self::Convlstm),
            "mae" => {
                return Err(Error::Config(
                    "`mae` is the ensemble of trained models, not a classifier".into(),
                ))
            }
            other => other
                .parse()
                .map_err(|_| Error::Config(format!("unknown model `{s}`")))?,
        };
        Ok(Self::Baseline(kind))
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub triples: Vec<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub ddi: Vec<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            triples: Vec::new(),
            mapping: None,
            ddi: Vec::new(),
            out: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub methods: Vec<EmbeddingMethod>,
    pub dim: usize,
    pub sigma: usize,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub walks: usize,
    pub depth: usize,
    pub window: usize,
    pub damping: f64,
    pub tolerance: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            methods: vec![EmbeddingMethod::Complex],
            dim: 32,
            sigma: 15,
            epochs: None,
            learning_rate: None,
            walks: 500,
            depth: 5,
            window: 5,
            damping: 0.85,
            tolerance: 1e-6,
        }
    }
}

impl EmbeddingConfig {
    /// Width of one drug's vector for `method`.
    pub fn width(&self, method: EmbeddingMethod) -> usize {
        match method {
            EmbeddingMethod::Complex | EmbeddingMethod::Simple => 2 * self.dim,
            _ => self.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsConfig {
    pub drug_prefix: String,
    pub negative_ratio: f64,
    pub holdout: f64,
    pub folds: usize,
    pub stratified: bool,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self {
            drug_prefix: DRUG_PREFIX.to_string(),
            negative_ratio: 1.0,
            holdout: 0.2,
            folds: 5,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub classifiers: Vec<ModelKind>,
    pub selection_metric: MetricName,
    pub search_budget: usize,
    pub ensemble_size: usize,
    pub threshold: f64,
    pub learning_fractions: Vec<f64>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            classifiers: vec![ModelKind::Baseline(BaselineKind::Logreg)],
            selection_metric: MetricName::Aupr,
            search_budget: 0,
            ensemble_size: 3,
            threshold: DEFAULT_THRESHOLD,
            learning_fractions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub embedding: EmbeddingConfig,
    pub pairs: PairsConfig,
    pub models: ModelsConfig,
    pub network: NetworkConfig,
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            embedding: EmbeddingConfig::default(),
            pairs: PairsConfig::default(),
            models: ModelsConfig::default(),
            network: NetworkConfig::default(),
            synthetic: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks values and shapes without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let e = &self.embedding;
        if e.methods.is_empty() || e.dim == 0 || e.sigma == 0 {
            return bad("embedding needs >= 1 method, dim >= 1 and sigma >= 1".into());
        }
        if e.epochs == Some(0) || e.learning_rate.is_some_and(|r| !(r > 0.0)) {
            return bad("embedding epochs and learning rate must be positive".into());
        }
        if e.walks == 0
            || e.depth == 0
            || e.window == 0
            || !(0.0..1.0).contains(&e.damping)
            || !(e.tolerance > 0.0)
        {
            return bad("invalid walk or PageRank settings".into());
        }
        let p = &self.pairs;
        if !(p.negative_ratio > 0.0) || !(0.0..1.0).contains(&p.holdout) || p.folds < 2 {
            return bad("pairs need negative_ratio > 0, holdout in [0, 1) and folds >= 2".into());
        }
        let m = &self.models;
        if m.classifiers.is_empty() || m.ensemble_size == 0 {
            return bad("models need >= 1 classifier and ensemble_size >= 1".into());
        }
        if !(m.threshold > 0.0 && m.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", m.threshold));
        }
        if m.learning_fractions
            .iter()
            .any(|f| !(*f > 0.0 && *f <= 1.0))
        {
            return bad("learning fractions must lie in (0, 1]".into());
        }
        if m.classifiers.contains(&ModelKind::Convlstm) {
            for &method in &e.methods {
                Network::new(self.network.clone(), 2 * e.width(method))
                    .map_err(|err| Error::Config(format!("{method}: {err}")))?;
            }
        }
        match &self.synthetic {
            Some(spec) => spec.validate(),
            None if self.paths.triples.is_empty() || self.paths.ddi.is_empty() => {
                bad("paths.triples and paths.ddi are required without [synthetic]".into())
            }
            None => Ok(()),
        }
    }

    /// Every input file named in `[paths]` must exist.
    pub fn check_inputs(&self) -> Result<()> {
        let missing: Vec<String> = self
            .paths
            .triples
            .iter()
            .chain(&self.paths.ddi)
            .chain(&self.paths.mapping)
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "missing input files: {}",
                missing.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.synthetic = Some(SyntheticSpec::default());
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_method_is_config_error() {
        let err = RunConfig::from_toml("[embedding]\nmethods = [\"word2vec\"]\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sede = 1\n").is_err());
        assert!(RunConfig::from_toml("[pairs]\nfold = 5\n").is_err());
        assert!(RunConfig::from_toml("[network]\nfilter = 5\n").is_err());
    }

    #[test]
    fn model_aliases() {
        let cfg = RunConfig::from_toml(
            "[models]\nclassifiers = [\"nb\", \"svm\", \"rf\", \"gbt\", \"knn\", \"convlstm\"]\n",
        )
        .unwrap();
        let names: Vec<&str> = cfg.models.classifiers.iter().map(|k| k.as_str()).collect();
        assert_eq!(
            names,
            [
                "gaussian-nb",
                "linear-svm",
                "random-forest",
                "gbt",
                "knn",
                "convlstm"
            ]
        );
        assert!("mae".parse::<ModelKind>().is_err());
    }

    #[test]
    fn bad_network_shape_fails_validation() {
        let mut cfg = RunConfig::default();
        cfg.synthetic = Some(SyntheticSpec::default());
        cfg.models.classifiers = vec![ModelKind::Convlstm];
        // 128 features do not reshape into 100 positions.
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.network.seq_len = 32;
        cfg.network.pool = 2;
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_inputs_are_listed() {
        let mut cfg = RunConfig::default();
        cfg.paths.triples = vec!["/nonexistent/kg.nt".into()];
        cfg.paths.ddi = vec!["/nonexistent/ddi.tsv".into()];
        cfg.validate().unwrap();
        let err = cfg.check_inputs().unwrap_err().to_string();
        assert!(err.contains("kg.nt") && err.contains("ddi.tsv"));
    }
}
