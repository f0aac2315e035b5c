//! End-to-end runs: ingest, strip interaction predicates, embed, build
//! pairs, cross-validate classifiers, ensemble and report.
//!
//! Stages talk only through files in the run directory, so every stage can
//! also be driven on its own. Each stage writes its completion file last.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_baseline, random_search, save_baseline, BaselineTrainer, HyperParams, SearchReport,
};
use crate::config::{ModelKind, RunConfig};
use crate::convlstm::{train_network, ConvLstmTrainer};
use crate::embedding::{EmbeddingManifest, EmbeddingMethod, EmbeddingSet};
use crate::error::{Error, Result};
use crate::eval::{
    calibration_curve, cross_validate, cv_from_scores, ensemble_average, evaluate, learning_curve,
    write_curve_csv, CalibrationBin, LearningCurve, MetricsReport, Trainer,
};
use crate::graph::{
    build_graph, extract_ddi_pairs, parse_ntriples, write_ntriples, DdiDataset, DdiSource,
    Dictionary, DrugUniverse, GraphStats, KnowledgeGraph, MappingTable, NamedSource,
    DDI_PREDICATES,
};
use crate::pairs::{
    build_pair_features, labeled_pairs, make_folds, sample_negative_pairs, write_pair_tsv, FoldPlan,
};
use crate::rng::derive_seed;
use crate::shallow::{
    glove_embeddings, skipgram_embeddings, train_glove, train_skipgram, GloveConfig, SkipGramConfig,
};
use crate::synth::generate_synthetic;
use crate::triple::{train_triple_embeddings, TripleMethod, TripleTrainConfig};
use crate::walks::{build_cooccurrence, generate_walks};

/// Negatives-per-positive values of the sigma sweep.
pub const SIGMA_SWEEP: [usize; 5] = [5, 10, 15, 20, 25];

/// Name of the ensemble row in reports.
pub const MAE: &str = "mae";

const CALIBRATION_BINS: usize = 10;

/// File locations inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_echo(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn synthetic_dir(&self) -> PathBuf {
        self.root.join("synthetic")
    }

    pub fn staged_graph(&self) -> PathBuf {
        self.root.join("ingest/graph.nt")
    }

    pub fn positives(&self) -> PathBuf {
        self.root.join("ingest/ddi_positives.tsv")
    }

    pub fn drugs(&self) -> PathBuf {
        self.root.join("ingest/drugs.txt")
    }

    pub fn ingest_stats(&self) -> PathBuf {
        self.root.join("ingest/stats.json")
    }

    pub fn embeddings(&self, m: EmbeddingMethod) -> PathBuf {
        self.root.join(format!("embed/{m}/embeddings.txt"))
    }

    pub fn embedding_manifest(&self, m: EmbeddingMethod) -> PathBuf {
        self.root.join(format!("embed/{m}/manifest.json"))
    }

    pub fn pairs(&self, m: EmbeddingMethod) -> PathBuf {
        self.root.join(format!("pairs/{m}/pairs.tsv"))
    }

    pub fn model_report(&self, m: EmbeddingMethod, model: &str) -> PathBuf {
        self.root.join(format!("eval/{m}/{model}.json"))
    }

    pub fn predictions(&self, m: EmbeddingMethod, model: &str) -> PathBuf {
        self.root.join(format!("eval/{m}/{model}.predictions.tsv"))
    }

    pub fn model_dir(&self, m: EmbeddingMethod) -> PathBuf {
        self.root.join(format!("models/{m}"))
    }

    pub fn curves_dir(&self) -> PathBuf {
        self.root.join("curves")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }

    pub fn failed_marker(&self) -> PathBuf {
        self.root.join("FAILED")
    }

    /// Stage names expected for `cfg`, each with its completion file.
    pub fn expected_stages(&self, cfg: &RunConfig) -> Vec<(String, PathBuf)> {
        let mut out = vec![("ingest".to_string(), self.ingest_stats())];
        for &m in &cfg.embedding.methods {
            out.push((format!("embed/{m}"), self.embedding_manifest(m)));
            out.push((format!("pairs/{m}"), self.pairs(m)));
            for k in &cfg.models.classifiers {
                out.push((format!("train/{m}/{k}"), self.model_report(m, k.as_str())));
            }
            out.push((format!("eval/{m}"), self.model_report(m, MAE)));
        }
        out
    }
}

/// Seed of a named stage, derived from the master seed.
pub fn stage_seed(cfg: &RunConfig, stage: &str) -> u64 {
    derive_seed(cfg.seed, stage)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::file(dir, e)),
        None => Ok(()),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::file(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

/// Input files of a run after synthetic generation, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub triples: Vec<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub ddi: Vec<PathBuf>,
}

fn resolve_inputs(cfg: &RunConfig, layout: &RunLayout) -> Result<Inputs> {
    match &cfg.synthetic {
        Some(spec) => {
            let files = generate_synthetic(spec)?.write_files(&layout.synthetic_dir())?;
            Ok(Inputs {
                triples: vec![files.graph, files.interactions],
                mapping: Some(files.mapping),
                ddi: vec![files.ddi],
            })
        }
        None => {
            cfg.check_inputs()?;
            Ok(Inputs {
                triples: cfg.paths.triples.clone(),
                mapping: cfg.paths.mapping.clone(),
                ddi: cfg.paths.ddi.clone(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub seed: u64,
    pub inputs: Inputs,
    pub graph: GraphStats,
    pub staged: GraphStats,
    /// Interaction-predicate triples removed before embedding.
    pub stripped_triples: usize,
    /// Interaction-predicate IRIs found by scanning the staged file.
    pub staged_ddi_mentions: usize,
    pub drugs: usize,
    pub positives: usize,
    pub skipped_unknown: usize,
    pub skipped_self: usize,
}

/// Lines of an N-Triples file that mention an interaction predicate.
pub fn scan_for_ddi_predicates(path: &Path) -> Result<usize> {
    let mut count = 0;
    for line in open(path)?.lines() {
        let line = line?;
        if DDI_PREDICATES.iter().any(|p| line.contains(p)) {
            count += 1;
        }
    }
    Ok(count)
}

/// Parses the inputs, writes the interaction-free graph, the drug list and
/// the positive pairs.
pub fn stage_ingest(cfg: &RunConfig) -> Result<IngestStats> {
    let layout = RunLayout::new(&cfg.paths.out);
    fs::create_dir_all(&layout.root).map_err(|e| Error::file(&layout.root, e))?;
    write_bytes(&layout.config_echo(), cfg.to_toml()?.as_bytes())?;
    let inputs = resolve_inputs(cfg, &layout)?;

    let mut sources = Vec::with_capacity(inputs.triples.len());
    for path in &inputs.triples {
        sources.push(NamedSource::new(
            file_name(path),
            parse_ntriples(open(path)?)?,
        ));
    }
    let mapping = match &inputs.mapping {
        Some(path) => MappingTable::parse_tsv(open(path)?)?,
        None => MappingTable::default(),
    };
    let graph = build_graph(&sources, &mapping)?;
    let universe = DrugUniverse::from_prefix(&graph, &cfg.pairs.drug_prefix);
    if universe.is_empty() {
        return Err(Error::Pipeline(format!(
            "no entity starts with `{}`",
            cfg.pairs.drug_prefix
        )));
    }
    let mut ddi_files = Vec::with_capacity(inputs.ddi.len());
    for path in &inputs.ddi {
        ddi_files.push(DdiSource {
            name: file_name(path),
            reader: open(path)?,
        });
    }
    let dataset = extract_ddi_pairs(
        ddi_files,
        graph.entities(),
        &universe,
        &mapping.canonicalizer()?,
    )?;
    let staged = graph.strip_relations(&DDI_PREDICATES);

    let mut buf = Vec::new();
    for t in staged.triples() {
        let l = staged.labeled(t);
        write_ntriples(
            &mut buf,
            [(l.subject.as_str(), l.predicate.as_str(), l.object.as_str())],
        )?;
    }
    write_bytes(&layout.staged_graph(), &buf)?;

    buf.clear();
    for id in universe.ids() {
        writeln!(buf, "{}", graph.entities().label(id))?;
    }
    write_bytes(&layout.drugs(), &buf)?;

    buf.clear();
    writeln!(buf, "drug_u\tdrug_v\tsources")?;
    for p in &dataset.pairs {
        let sources: Vec<&str> = p.sources.iter().map(String::as_str).collect();
        writeln!(
            buf,
            "{}\t{}\t{}",
            graph.entities().label(p.u),
            graph.entities().label(p.v),
            sources.join(",")
        )?;
    }
    write_bytes(&layout.positives(), &buf)?;

    let stats = IngestStats {
        seed: cfg.seed,
        inputs,
        graph: graph.stats(),
        staged: staged.stats(),
        stripped_triples: graph.triples().len() - staged.triples().len(),
        staged_ddi_mentions: scan_for_ddi_predicates(&layout.staged_graph())?,
        drugs: universe.len(),
        positives: dataset.pairs.len(),
        skipped_unknown: dataset.skipped_unknown,
        skipped_self: dataset.skipped_self,
    };
    write_json(&layout.ingest_stats(), &stats)?;
    Ok(stats)
}

/// The staged graph as the embedding stage sees it.
pub fn load_staged_graph(layout: &RunLayout) -> Result<KnowledgeGraph> {
    let path = layout.staged_graph();
    let parsed = parse_ntriples(open(&path)?)?;
    build_graph(
        &[NamedSource::new("staged", parsed)],
        &MappingTable::default(),
    )
}

/// Trains one embedding method on the staged graph.
pub fn stage_embed(cfg: &RunConfig, method: EmbeddingMethod) -> Result<EmbeddingManifest> {
    let layout = RunLayout::new(&cfg.paths.out);
    let graph = load_staged_graph(&layout)?;
    let e = &cfg.embedding;
    let seed = stage_seed(cfg, &format!("embed/{method}"));
    let (set, epochs, sigma, loss_curve) = match method {
        EmbeddingMethod::Rdf2vec => {
            let defaults = SkipGramConfig::default();
            let sg = SkipGramConfig {
                dim: e.dim,
                window: e.window,
                epochs: e.epochs.unwrap_or(defaults.epochs),
                learning_rate: e.learning_rate.unwrap_or(defaults.learning_rate),
                seed,
                ..defaults
            };
            let corpus = generate_walks(&graph, e.walks, e.depth, derive_seed(seed, "walks"));
            let (model, report) = train_skipgram(&corpus, &sg)?;
            (
                skipgram_embeddings(&model, &corpus),
                sg.epochs,
                None,
                report.epoch_objectives,
            )
        }
        EmbeddingMethod::Kglove => {
            let defaults = GloveConfig::default();
            let gc = GloveConfig {
                dim: e.dim,
                epochs: e.epochs.unwrap_or(defaults.epochs),
                learning_rate: e.learning_rate.unwrap_or(defaults.learning_rate),
                seed,
                ..defaults
            };
            let matrix = build_cooccurrence(&graph, e.damping, e.tolerance);
            let (model, report) = train_glove(&matrix, &gc)?;
            let set = glove_embeddings(&model, &matrix, graph.entities().labels());
            (set, gc.epochs, None, report.epoch_objectives)
        }
        EmbeddingMethod::Transe | EmbeddingMethod::Complex | EmbeddingMethod::Simple => {
            let mut tc = TripleTrainConfig::new(method.as_str().parse::<TripleMethod>()?, e.dim);
            tc.sampling.ratio = e.sigma;
            tc.sampling.seed = derive_seed(seed, "corrupt");
            tc.seed = seed;
            if let Some(n) = e.epochs {
                tc.epochs = n;
            }
            if let Some(r) = e.learning_rate {
                tc.optimizer.rate = r;
            }
            let (model, report) = train_triple_embeddings(&graph, &tc)?;
            (
                model.to_embedding_set(graph.entities().labels()),
                tc.epochs,
                Some(e.sigma),
                report.epoch_losses,
            )
        }
    };
    let mut buf = Vec::new();
    set.write_text(&mut buf)?;
    write_bytes(&layout.embeddings(method), &buf)?;
    let manifest = EmbeddingManifest {
        method,
        dim: set.dim,
        sigma,
        epochs,
        seed,
        loss_curve,
    };
    write_json(&layout.embedding_manifest(method), &manifest)?;
    Ok(manifest)
}

fn read_drugs(layout: &RunLayout) -> Result<Vec<String>> {
    let mut drugs = Vec::new();
    for line in open(&layout.drugs())?.lines() {
        let line = line?;
        if !line.is_empty() {
            drugs.push(line);
        }
    }
    Ok(drugs)
}

/// Embeddings re-indexed by position in `drugs`.
fn drug_embeddings(
    layout: &RunLayout,
    method: EmbeddingMethod,
    drugs: &[String],
) -> Result<EmbeddingSet> {
    let all = EmbeddingSet::read_text(open(&layout.embeddings(method))?, method)?;
    let by_label: HashMap<&str, &Vec<f64>> = all
        .labels
        .iter()
        .zip(&all.vectors)
        .filter_map(|(l, v)| v.as_ref().map(|v| (l.as_str(), v)))
        .collect();
    let mut set = EmbeddingSet::new(method, all.dim, drugs.to_vec());
    for (slot, label) in set.vectors.iter_mut().zip(drugs) {
        *slot = by_label.get(label.as_str()).map(|v| (*v).clone());
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub positives: usize,
    pub negatives: usize,
    pub filtered: usize,
    pub holdout: usize,
}

/// Samples negatives, builds pair features and assigns folds.
pub fn stage_pairs(cfg: &RunConfig, method: EmbeddingMethod) -> Result<PairSummary> {
    let layout = RunLayout::new(&cfg.paths.out);
    let drugs = read_drugs(&layout)?;
    let dict = Dictionary::from_labels(drugs.iter())?;
    let mut positives = Vec::new();
    for (i, line) in open(&layout.positives())?.lines().enumerate().skip(1) {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        let lookup = |label: &str| {
            dict.id(label).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("`{label}` is not in the drug list"),
            })
        };
        if f.len() < 2 {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected drug_u<TAB>drug_v<TAB>sources".into(),
            });
        }
        positives.push((lookup(f[0])?, lookup(f[1])?));
    }
    let dataset = DdiDataset::from_positive_pairs(positives, DrugUniverse::new(0..drugs.len()))?;
    let negatives = sample_negative_pairs(
        &dataset,
        cfg.pairs.negative_ratio,
        stage_seed(cfg, "negatives"),
    )?;
    let labeled = labeled_pairs(&dataset, &negatives);
    let features = build_pair_features(&labeled, &drug_embeddings(&layout, method, &drugs)?)?;
    let p = &cfg.pairs;
    let plan = make_folds(
        &features.labels(),
        p.folds,
        p.holdout,
        p.stratified,
        stage_seed(cfg, "folds"),
    )?;
    let mut buf = Vec::new();
    write_pair_tsv(&mut buf, &features.examples, &plan, &dict)?;
    write_bytes(&layout.pairs(method), &buf)?;
    Ok(PairSummary {
        positives: dataset.pairs.len(),
        negatives: negatives.len(),
        filtered: features.filtered,
        holdout: plan.holdout_indices().len(),
    })
}

fn parse_fold(text: &str, line: usize) -> Result<Option<usize>> {
    if text == "holdout" {
        return Ok(None);
    }
    text.parse().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("bad fold `{text}`"),
    })
}

/// Pair rows with features, as written by [`stage_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub drug_u: Vec<String>,
    pub drug_v: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub plan: FoldPlan,
}

pub fn load_pairs(layout: &RunLayout, method: EmbeddingMethod, k: usize) -> Result<PairTable> {
    let drugs = read_drugs(layout)?;
    let set = drug_embeddings(layout, method, &drugs)?;
    let index: HashMap<&str, usize> = drugs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let mut table = PairTable {
        drug_u: Vec::new(),
        drug_v: Vec::new(),
        features: Vec::new(),
        labels: Vec::new(),
        plan: FoldPlan {
            k,
            fold: Vec::new(),
        },
    };
    for (i, line) in open(&layout.pairs(method))?.lines().enumerate().skip(1) {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        if f.len() != 4 {
            return Err(bad("expected drug_u<TAB>drug_v<TAB>label<TAB>fold".into()));
        }
        let mut feature = Vec::new();
        for d in &f[..2] {
            let v = index
                .get(d)
                .and_then(|&id| set.get(id))
                .ok_or_else(|| bad(format!("no embedding for `{d}`")))?;
            feature.extend_from_slice(v);
        }
        let label = match f[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("bad label `{other}`"))),
        };
        let fold = parse_fold(f[3], i + 1)?;
        if fold.is_some_and(|x| x >= k) {
            return Err(bad(format!("fold {} outside 0..{k}", f[3])));
        }
        table.drug_u.push(f[0].to_string());
        table.drug_v.push(f[1].to_string());
        table.features.push(feature);
        table.labels.push(label);
        table.plan.fold.push(fold);
    }
    Ok(table)
}

/// Evaluation record of one classifier (or the ensemble) on one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub method: EmbeddingMethod,
    pub model: String,
    pub seed: u64,
    pub hyperparameters: Option<HyperParams>,
    pub search: Option<SearchReport>,
    /// Ensemble members, best first.
    pub members: Vec<String>,
    /// Mean over folds, curves from pooled out-of-fold scores.
    pub cv: MetricsReport,
    pub holdout: Option<MetricsReport>,
    pub calibration: Vec<CalibrationBin>,
    pub learning_curve: Option<LearningCurve>,
}

/// One score per pair row: out-of-fold for training rows, final-model for
/// held-out rows.
fn write_predictions(path: &Path, table: &PairTable, scores: &[f64]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "drug_u\tdrug_v\tlabel\tfold\tscore")?;
    for i in 0..scores.len() {
        let fold = table.plan.fold[i].map_or_else(|| "holdout".to_string(), |f| f.to_string());
        writeln!(
            buf,
            "{}\t{}\t{}\t{fold}\t{}",
            table.drug_u[i], table.drug_v[i], table.labels[i], scores[i]
        )?;
    }
    write_bytes(path, &buf)
}

fn read_prediction_scores(path: &Path) -> Result<Vec<f64>> {
    let mut scores = Vec::new();
    for (i, line) in open(path)?.lines().enumerate().skip(1) {
        let line = line?;
        let score = line
            .rsplit('\t')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "missing score".into(),
            })?;
        scores.push(score);
    }
    Ok(scores)
}

fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn pooled_oof(oof: &[Option<f64>], labels: &[u8]) -> (Vec<f64>, Vec<u8>) {
    oof.iter()
        .zip(labels)
        .filter_map(|(s, &l)| s.map(|s| (s, l)))
        .unzip()
}

/// Cross-validates one classifier, refits it on the whole training portion
/// and scores the holdout.
pub fn stage_train(
    cfg: &RunConfig,
    method: EmbeddingMethod,
    model: ModelKind,
) -> Result<ModelReport> {
    let layout = RunLayout::new(&cfg.paths.out);
    let table = load_pairs(&layout, method, cfg.pairs.folds)?;
    let (x, y, plan) = (&table.features, &table.labels, &table.plan);
    let m = &cfg.models;
    let seed = stage_seed(cfg, &format!("train/{method}/{model}"));
    let mut search = None;
    let trainer: Box<dyn Trainer> = match model {
        ModelKind::Baseline(kind) => {
            let mut params = kind.defaults();
            if m.search_budget > 0 {
                let space = kind.search_space(m.search_budget);
                let report = random_search(
                    kind,
                    &space,
                    x,
                    y,
                    plan,
                    m.selection_metric,
                    derive_seed(seed, "search"),
                )?;
                params = report.best.clone();
                search = Some(report);
            }
            Box::new(BaselineTrainer { kind, params })
        }
        ModelKind::Convlstm => Box::new(ConvLstmTrainer {
            config: cfg.network.clone(),
        }),
    };
    let cv = cross_validate(trainer.as_ref(), x, y, plan, m.threshold, seed)?;
    let cv_report = cv.report(y, m.threshold)?;
    let (oof_scores, oof_labels) = pooled_oof(&cv.oof, y);
    let calibration = calibration_curve(&oof_scores, &oof_labels, CALIBRATION_BINS)?;
    let learning = if m.learning_fractions.is_empty() {
        None
    } else {
        let mut fractions = m.learning_fractions.clone();
        fractions.sort_by(f64::total_cmp);
        Some(learning_curve(
            trainer.as_ref(),
            x,
            y,
            &fractions,
            plan,
            derive_seed(seed, "learning"),
        )?)
    };

    let train_idx = plan.training_indices();
    let hold_idx = plan.holdout_indices();
    let (xt, yt, xh) = (
        gather(x, &train_idx),
        gather(y, &train_idx),
        gather(x, &hold_idx),
    );
    let final_seed = derive_seed(seed, "final");
    let model_dir = layout.model_dir(method);
    fs::create_dir_all(&model_dir).map_err(|e| Error::file(&model_dir, e))?;
    let (hold_scores, hyperparameters) = match model {
        ModelKind::Baseline(kind) => {
            let params = search
                .as_ref()
                .map_or_else(|| kind.defaults(), |s: &SearchReport| s.best.clone());
            let fitted = fit_baseline(kind, &xt, &yt, &params, final_seed)?;
            write_bytes(
                &model_dir.join(format!("{model}.json")),
                save_baseline(&fitted, &params)?.as_bytes(),
            )?;
            let scores = if xh.is_empty() {
                Vec::new()
            } else {
                fitted.predict_proba(&xh)?
            };
            (scores, Some(params))
        }
        ModelKind::Convlstm => {
            let mut nc = cfg.network.clone();
            nc.seed = final_seed;
            let (net, _) = train_network(&xt, &yt, &nc)?;
            net.save(
                &model_dir.join("convlstm.manifest.json"),
                &model_dir.join("convlstm.bin"),
            )?;
            let scores = if xh.is_empty() {
                Vec::new()
            } else {
                net.predict_proba(&xh)?
            };
            (scores, None)
        }
    };
    let holdout = if hold_idx.is_empty() {
        None
    } else {
        Some(evaluate(&hold_scores, &gather(y, &hold_idx), m.threshold)?)
    };

    let mut scores = vec![0.0; y.len()];
    for (i, s) in cv.oof.iter().enumerate() {
        if let Some(s) = s {
            scores[i] = *s;
        }
    }
    for (&i, &s) in hold_idx.iter().zip(&hold_scores) {
        scores[i] = s;
    }
    write_predictions(&layout.predictions(method, model.as_str()), &table, &scores)?;
    let report = ModelReport {
        method,
        model: model.as_str().to_string(),
        seed,
        hyperparameters,
        search,
        members: Vec::new(),
        cv: cv_report,
        holdout,
        calibration,
        learning_curve: learning,
    };
    write_json(&layout.model_report(method, model.as_str()), &report)?;
    Ok(report)
}

/// Averages the top classifiers of `method` by the selection metric.
pub fn stage_ensemble(cfg: &RunConfig, method: EmbeddingMethod) -> Result<ModelReport> {
    let layout = RunLayout::new(&cfg.paths.out);
    let m = &cfg.models;
    let mut ranked = Vec::with_capacity(m.classifiers.len());
    for k in &m.classifiers {
        let report: ModelReport = read_json(&layout.model_report(method, k.as_str()))?;
        ranked.push((m.selection_metric.of(&report.cv.metrics()), k.as_str()));
    }
    // Stable: ties keep the configured classifier order.
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let members: Vec<String> = ranked
        .iter()
        .take(m.ensemble_size)
        .map(|(_, k)| k.to_string())
        .collect();

    let table = load_pairs(&layout, method, cfg.pairs.folds)?;
    let (y, plan) = (&table.labels, &table.plan);
    let member_scores = members
        .iter()
        .map(|k| read_prediction_scores(&layout.predictions(method, k)))
        .collect::<Result<Vec<_>>>()?;
    if member_scores.iter().any(|s| s.len() != y.len()) {
        return Err(Error::Pipeline(format!(
            "{method}: prediction files do not match the pair table"
        )));
    }
    let scores = ensemble_average(&member_scores)?;
    let oof: Vec<Option<f64>> = scores
        .iter()
        .zip(&plan.fold)
        .map(|(&s, f)| f.map(|_| s))
        .collect();
    let cv = cv_from_scores(&oof, y, plan, m.threshold)?;
    let (oof_scores, oof_labels) = pooled_oof(&oof, y);
    let hold_idx = plan.holdout_indices();
    let holdout = if hold_idx.is_empty() {
        None
    } else {
        Some(evaluate(
            &gather(&scores, &hold_idx),
            &gather(y, &hold_idx),
            m.threshold,
        )?)
    };
    write_predictions(&layout.predictions(method, MAE), &table, &scores)?;
    let report = ModelReport {
        method,
        model: MAE.to_string(),
        seed: cfg.seed,
        hyperparameters: None,
        search: None,
        members,
        cv: cv.report(y, m.threshold)?,
        holdout,
        calibration: calibration_curve(&oof_scores, &oof_labels, CALIBRATION_BINS)?,
        learning_curve: None,
    };
    write_json(&layout.model_report(method, MAE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: EmbeddingMethod,
    pub model: String,
    pub aupr: f64,
    pub f1: f64,
    pub mcc: f64,
    pub roc_auc: f64,
    pub pearson: Option<f64>,
    pub aupr_std: f64,
    pub holdout_aupr: Option<f64>,
    pub holdout_f1: Option<f64>,
    pub holdout_mcc: Option<f64>,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub folds: usize,
    pub threshold: f64,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, method: EmbeddingMethod, model: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.model == model)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "method,model,AUPR,F1-score,MCC")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.method, r.model, r.aupr, r.f1, r.mcc
            )?;
        }
        Ok(())
    }
}

fn write_model_curves(layout: &RunLayout, r: &ModelReport) -> Result<()> {
    let dir = layout.curves_dir();
    let stem = format!("{}_{}", r.method, r.model);
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, ("recall", "precision"), &r.cv.pr_curve)?;
    write_bytes(&dir.join(format!("{stem}_pr.csv")), &buf)?;
    buf.clear();
    write_curve_csv(&mut buf, ("fpr", "tpr"), &r.cv.roc_curve)?;
    write_bytes(&dir.join(format!("{stem}_roc.csv")), &buf)?;
    buf.clear();
    let points: Vec<(f64, f64)> = r
        .calibration
        .iter()
        .map(|b| (b.mean_score, b.fraction_positive))
        .collect();
    write_curve_csv(&mut buf, ("bin_mean", "bin_fraction"), &points)?;
    write_bytes(&dir.join(format!("{stem}_calibration.csv")), &buf)
}

/// Consolidates the evaluation records of a completed run directory into
/// `report.json`, `report.csv` and `curves/`.
pub fn emit_report(run_dir: &Path) -> Result<Report> {
    let layout = RunLayout::new(run_dir);
    if !layout.config_echo().is_file() {
        return Err(Error::Report {
            missing: vec!["ingest".into()],
        });
    }
    let cfg = RunConfig::load(&layout.config_echo())?;
    let missing: Vec<String> = layout
        .expected_stages(&cfg)
        .into_iter()
        .filter(|(_, path)| !path.is_file())
        .map(|(name, _)| name)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Report { missing });
    }
    let mut rows = Vec::new();
    for &method in &cfg.embedding.methods {
        let names = cfg
            .models
            .classifiers
            .iter()
            .map(|k| k.as_str())
            .chain([MAE]);
        for name in names {
            let r: ModelReport = read_json(&layout.model_report(method, name))?;
            write_model_curves(&layout, &r)?;
            rows.push(ReportRow {
                method,
                model: r.model,
                aupr: r.cv.aupr,
                f1: r.cv.f1,
                mcc: r.cv.mcc,
                roc_auc: r.cv.roc_auc,
                pearson: r.cv.pearson,
                aupr_std: r.cv.std.map_or(0.0, |s| s.aupr),
                holdout_aupr: r.holdout.as_ref().map(|h| h.aupr),
                holdout_f1: r.holdout.as_ref().map(|h| h.f1),
                holdout_mcc: r.holdout.as_ref().map(|h| h.mcc),
                members: r.members,
            });
        }
    }
    let report = Report {
        seed: cfg.seed,
        folds: cfg.pairs.folds,
        threshold: cfg.models.threshold,
        rows,
    };
    write_json(&layout.report_json(), &report)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_bytes(&layout.report_csv(), &buf)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub deterministic: bool,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub timings_ms: BTreeMap<String, u64>,
}

/// Runs a stage, timing it and tagging any error with the stage name.
fn timed<T>(
    name: &str,
    timings: &mut BTreeMap<String, u64>,
    stage: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    log::info!("stage {name}");
    let out = stage().map_err(|e| e.in_stage(name))?;
    timings.insert(name.to_string(), start.elapsed().as_millis() as u64);
    Ok(out)
}

/// Executes every stage in order and writes the report and run manifest.
///
/// All work is single-threaded, so identical configs give identical
/// reports. On failure the outputs written so far stay in place next to a
/// `FAILED` marker naming the stage.
pub fn run_pipeline(cfg: &RunConfig, deterministic: bool) -> Result<Report> {
    cfg.validate()?;
    if cfg.synthetic.is_none() {
        cfg.check_inputs()?;
    }
    let layout = RunLayout::new(&cfg.paths.out);
    fs::create_dir_all(&layout.root).map_err(|e| Error::file(&layout.root, e))?;
    let marker = layout.failed_marker();
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::file(&marker, e))?;
    }
    let mut timings = BTreeMap::new();
    let result = run_stages(cfg, &layout, &mut timings);
    let report = match result {
        Ok(report) => report,
        Err(e) => {
            write_bytes(&marker, format!("{}\n", e.chain()).as_bytes())?;
            return Err(e);
        }
    };
    let mut seeds = BTreeMap::new();
    seeds.insert("master".to_string(), cfg.seed);
    for name in ["negatives", "folds"] {
        seeds.insert(name.to_string(), stage_seed(cfg, name));
    }
    for &m in &cfg.embedding.methods {
        let name = format!("embed/{m}");
        seeds.insert(name.clone(), stage_seed(cfg, &name));
        for k in &cfg.models.classifiers {
            let name = format!("train/{m}/{k}");
            seeds.insert(name.clone(), stage_seed(cfg, &name));
        }
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        deterministic,
        config: cfg.clone(),
        seeds,
        timings_ms: timings,
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(report)
}

fn run_stages(
    cfg: &RunConfig,
    layout: &RunLayout,
    timings: &mut BTreeMap<String, u64>,
) -> Result<Report> {
    let stats = timed("ingest", timings, || stage_ingest(cfg))?;
    if stats.staged_ddi_mentions > 0 {
        return Err(
            Error::Pipeline("staged graph still mentions interaction predicates".into())
                .in_stage("ingest"),
        );
    }
    for &m in &cfg.embedding.methods {
        timed(&format!("embed/{m}"), timings, || stage_embed(cfg, m))?;
        timed(&format!("pairs/{m}"), timings, || stage_pairs(cfg, m))?;
        for &k in &cfg.models.classifiers {
            timed(&format!("train/{m}/{k}"), timings, || {
                stage_train(cfg, m, k)
            })?;
        }
        timed(&format!("eval/{m}"), timings, || stage_ensemble(cfg, m))?;
    }
    timed("report", timings, || emit_report(&layout.root))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: usize,
    pub method: EmbeddingMethod,
    pub model: String,
    pub aupr: f64,
    pub f1: f64,
    pub mcc: f64,
}

/// Reruns the pipeline once per sigma (triple methods only) into
/// `out/sigma-<s>/` and tabulates the results by ascending sigma.
pub fn sweep_sigma(
    cfg: &RunConfig,
    sigmas: &[usize],
    deterministic: bool,
) -> Result<Vec<SweepRow>> {
    let methods: Vec<EmbeddingMethod> = cfg
        .embedding
        .methods
        .iter()
        .copied()
        .filter(|m| m.as_str().parse::<TripleMethod>().is_ok())
        .collect();
    if methods.is_empty() {
        return Err(Error::Config(
            "sigma sweep needs transe, complex or simple".into(),
        ));
    }
    let mut sigmas = sigmas.to_vec();
    sigmas.sort_unstable();
    sigmas.dedup();
    let mut rows = Vec::new();
    for &sigma in &sigmas {
        let mut sub = cfg.clone();
        sub.embedding.methods = methods.clone();
        sub.embedding.sigma = sigma;
        sub.paths.out = cfg.paths.out.join(format!("sigma-{sigma}"));
        let report = run_pipeline(&sub, deterministic)?;
        rows.extend(report.rows.into_iter().map(|r| SweepRow {
            sigma,
            method: r.method,
            model: r.model,
            aupr: r.aupr,
            f1: r.f1,
            mcc: r.mcc,
        }));
    }
    write_json(&cfg.paths.out.join("sweep.json"), &rows)?;
    let mut buf = Vec::new();
    writeln!(buf, "sigma,method,model,AUPR,F1-score,MCC")?;
    for r in &rows {
        writeln!(
            buf,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.sigma, r.method, r.model, r.aupr, r.f1, r.mcc
        )?;
    }
    write_bytes(&cfg.paths.out.join("sweep.csv"), &buf)?;
    Ok(rows)
}

/// Writes the synthetic inputs of `cfg` (or the default spec) under `dir`.
pub fn write_synthetic_inputs(cfg: &RunConfig, dir: &Path) -> Result<crate::synth::SyntheticFiles> {
    let spec = cfg.synthetic.clone().unwrap_or_default();
    let files = generate_synthetic(&spec)?.write_files(dir)?;
    let w = BufWriter::new(File::create(dir.join("spec.json")).map_err(|e| Error::file(dir, e))?);
    serde_json::to_writer_pretty(w, &spec)?;
    Ok(files)
}
