//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p kgddi --test acceptance`; numeric
//! arguments after `--` select criteria.

use std::collections::HashSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use kgddi::baselines::{BaselineKind, BaselineTrainer};
use kgddi::config::{ModelKind, RunConfig};
use kgddi::convlstm::{binary_cross_entropy, CellDims, ConvLstmCell, Mode, Network, NetworkConfig};
use kgddi::embedding::EmbeddingMethod;
use kgddi::eval::{cross_validate, pearson, pr_aupr, roc_auc, threshold_metrics, Confusion};
use kgddi::graph::{DdiDataset, DrugUniverse, KnowledgeGraph, Triple, DDI_PREDICATES};
use kgddi::optim::{grad_check, OptimizerConfig};
use kgddi::pairs::{make_folds, sample_negative_pairs};
use kgddi::pipeline::{
    load_pairs, run_pipeline, scan_for_ddi_predicates, stage_ingest, sweep_sigma, RunLayout,
    SIGMA_SWEEP,
};
use kgddi::rng::RngStream;
use kgddi::shallow::{SkipGramModel, SkipGramSample};
use kgddi::synth::{generate_synthetic, SyntheticSpec, DRUG_PREFIX};
use kgddi::triple::{
    corrupt_triple, train_triple_embeddings, LossConfig, LossItem, NegativeSamplingConfig, Norm,
    TripleEmbedding, TripleMethod, TripleTrainConfig,
};

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

fn uniform(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

/// Worst relative error over a random 3-entity instance, with the number of
/// instances redrawn first. An L1 instance is redrawn when its only
/// violation is an exact zero from cancelling sign terms, where the central
/// difference returns roundoff of about 1e-10.
fn triple_gradient(
    method: TripleMethod,
    norm: Norm,
    corrupt: bool,
) -> Result<(f64, usize), String> {
    let mut rng = RngStream::new(31, method as u64 * 2 + norm as u64).rng();
    for redrawn in 0..50 {
        let mut m = TripleEmbedding::zeros(method, 4, 3, 2);
        m.norm = norm;
        m.params = uniform(&mut rng, m.params.len(), 1.0);
        let items: Vec<LossItem> = (0..6)
            .map(|i| {
                let h = rng.random_range(0..3);
                let t = (h + rng.random_range(1..3)) % 3;
                let positive = Triple::new(h, rng.random_range(0..2), t);
                // Head or tail replaced by a different entity.
                let other =
                    |e: usize, rng: &mut rand_chacha::ChaCha8Rng| (e + rng.random_range(1..3)) % 3;
                let negative = if rng.random_bool(0.5) {
                    Triple::new(other(h, &mut rng), positive.relation, t)
                } else {
                    Triple::new(h, positive.relation, other(t, &mut rng))
                };
                match method {
                    TripleMethod::Transe => LossItem::Margin { positive, negative },
                    _ if i % 2 == 0 => LossItem::Labeled {
                        triple: positive,
                        label: 1.0,
                    },
                    _ => LossItem::Labeled {
                        triple: negative,
                        label: -1.0,
                    },
                }
            })
            .collect();
        // Every hinge stays active, away from its kink.
        let loss = LossConfig {
            margin: 10.0,
            regularization: 1e-3,
        };
        let (_, mut grad) = m.loss_and_grad(&items, &loss);
        if corrupt {
            grad[0] = grad[0] * 1.01 + 1e-6;
        }
        let mut probe = m.clone();
        let report = grad_check(
            |p| {
                probe.params.copy_from_slice(p);
                probe.loss_and_grad(&items, &loss).0
            },
            &m.params,
            &grad,
            FD_EPS,
            FD_TOL,
        )
        .map_err(|e| e.to_string())?;
        let cancelled = norm == Norm::L1 && report.analytic == 0.0 && report.numeric.abs() < 1e-9;
        if !cancelled {
            return Ok((report.max_relative_error, redrawn));
        }
    }
    Err(format!(
        "{method:?} {norm:?}: no instance without exact cancellations"
    ))
}

fn skipgram_gradient() -> Result<f64, String> {
    let mut rng = RngStream::new(32, 0).rng();
    let mut model = SkipGramModel::new(6, 4, vec![1.0 / 6.0; 6], 1);
    model.params = uniform(&mut rng, model.params.len(), 0.8);
    let samples: Vec<SkipGramSample> = (0..5)
        .map(|_| SkipGramSample {
            center: rng.random_range(0..6),
            context: rng.random_range(0..6),
            negatives: (0..3).map(|_| rng.random_range(0..6)).collect(),
        })
        .collect();
    let (_, grad) = model.loss_and_grad(&samples);
    let mut probe = model.clone();
    let report = grad_check(
        |p| {
            probe.params.copy_from_slice(p);
            probe.loss_and_grad(&samples).0
        },
        &model.params,
        &grad,
        FD_EPS,
        FD_TOL,
    )
    .map_err(|e| e.to_string())?;
    Ok(report.max_relative_error)
}

fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        seq_len: 8,
        filters: 3,
        kernel: 2,
        pool: 2,
        hidden: 4,
        lstm_layers: 1,
        cell_kernel: 2,
        cell_positions: 2,
        dropout: 0.25,
        noise: 0.05,
        dense: 5,
        optimizer: OptimizerConfig::adam(0.01),
        batch_size: 4,
        epochs: 1,
        validation_fraction: 0.0,
        seed: 3,
    }
}

/// Worst relative error per named parameter tensor.
fn network_gradient(mode: Mode) -> Result<Vec<(String, f64)>, String> {
    let mut net = Network::new(tiny_network(), 16).map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(33, 0).rng();
    net.params = uniform(&mut rng, net.params.len(), 0.8);
    let rows: Vec<Vec<f64>> = (0..3).map(|_| uniform(&mut rng, 16, 1.0)).collect();
    let labels = [1, 0, 1];
    let (_, grad) = net
        .loss_and_grad(&rows, &labels, mode, 21)
        .map_err(|e| e.to_string())?;
    let mut probe = net.clone();
    let mut out = Vec::new();
    let mut offset = 0;
    for (name, len) in net.layout() {
        let mut worst: f64 = 0.0;
        for i in offset..offset + len {
            probe.params[i] = net.params[i] + FD_EPS;
            let plus = probe
                .loss(&rows, &labels, mode, 21)
                .map_err(|e| e.to_string())?;
            probe.params[i] = net.params[i] - FD_EPS;
            let minus = probe
                .loss(&rows, &labels, mode, 21)
                .map_err(|e| e.to_string())?;
            probe.params[i] = net.params[i];
            worst = worst.max(rel_err(grad[i], (plus - minus) / (2.0 * FD_EPS)));
        }
        out.push((name, worst));
        offset += len;
    }
    if offset != net.params.len() {
        return Err(format!(
            "layout covers {offset} of {} parameters",
            net.params.len()
        ));
    }
    Ok(out)
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = vec![("skip-gram".into(), skipgram_gradient()?)];
    let mut redrawn = 0;
    for (name, method, norm) in [
        ("TransE L2", TripleMethod::Transe, Norm::L2),
        ("TransE L1", TripleMethod::Transe, Norm::L1),
        ("ComplEx", TripleMethod::Complex, Norm::L2),
        ("SimplE", TripleMethod::Simple, Norm::L2),
    ] {
        let (e, r) = triple_gradient(method, norm, false)?;
        worst.push((name.into(), e));
        redrawn += r;
    }
    let mut tensors = 0;
    for mode in [Mode::Eval, Mode::Train] {
        for (name, e) in network_gradient(mode)? {
            worst.push((format!("conv-lstm {mode:?} {name}"), e));
            tensors += 1;
        }
    }
    for (name, e) in &worst {
        ensure(*e < FD_TOL, || format!("{name}: relative error {e:.2e}"))?;
    }
    let (control, _) = triple_gradient(TripleMethod::Complex, Norm::L2, true)?;
    ensure(control >= FD_TOL, || {
        format!("corrupted gradient passed ({control:.2e})")
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    Ok(format!(
        "{} checks ({tensors} conv-lstm tensors, {redrawn} L1 instances redrawn), max rel err {max:.1e}; corrupted control {control:.1e}; {elapsed:.1?}",
        worst.len()
    ))
}

// ---------------------------------------------------------------------------
// 2. Metric oracles

fn brute_auc(s: &[f64], l: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] == 1 && l[j] == 0 {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Step-wise average precision, recomputing counts at every distinct
/// threshold from scratch.
fn brute_aupr(s: &[f64], l: &[u8]) -> f64 {
    let positives = l.iter().filter(|&&y| y == 1).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut area, mut prev) = (0.0, 0.0);
    for t in thresholds {
        let selected: Vec<usize> = (0..s.len()).filter(|&i| s[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| l[i] == 1).count() as f64;
        let recall = tp / positives;
        area += (recall - prev) * (tp / selected.len() as f64);
        prev = recall;
    }
    area
}

/// Pairwise form of the correlation coefficient.
fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    sxy / (sxx * syy).sqrt()
}

/// F1 from precision and recall; MCC as the phi coefficient of the
/// thresholded predictions against labels.
fn brute_f1_mcc(s: &[f64], l: &[u8], threshold: f64) -> (f64, f64) {
    let pred: Vec<f64> = s.iter().map(|&x| (x >= threshold) as u8 as f64).collect();
    let truth: Vec<f64> = l.iter().map(|&y| y as f64).collect();
    let tp: f64 = pred.iter().zip(&truth).map(|(p, t)| p * t).sum();
    let predicted: f64 = pred.iter().sum();
    let actual: f64 = truth.iter().sum();
    let f1 = if predicted == 0.0 || actual == 0.0 || tp == 0.0 {
        0.0
    } else {
        let (p, r) = (tp / predicted, tp / actual);
        2.0 * p * r / (p + r)
    };
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    let mcc = if constant(&pred) || constant(&truth) {
        0.0
    } else {
        brute_pearson(&pred, &truth)
    };
    (f1, mcc)
}

fn criterion_metric_oracles() -> Outcome {
    let mut rng = RngStream::new(2, 0).rng();
    let mut worst = [0.0f64; 5];
    let mut invariance: f64 = 0.0;
    let mut ties = 0usize;
    for instance in 0..1000 {
        let n = rng.random_range(2..=200);
        // Coarse grids force ties on most instances.
        let levels = [5, 20, 1000][instance % 3];
        let s: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut l: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        l[0] = 1;
        l[1] = 0;
        let distinct: HashSet<u64> = s.iter().map(|x| x.to_bits()).collect();
        ties += (distinct.len() < n) as usize;

        let auc = roc_auc(&s, &l).map_err(|e| e.to_string())?.area;
        let aupr = pr_aupr(&s, &l).map_err(|e| e.to_string())?.area;
        let tm = threshold_metrics(&s, &l, 0.5).map_err(|e| e.to_string())?;
        let (f1, mcc) = brute_f1_mcc(&s, &l, 0.5);
        let y: Vec<f64> = l.iter().map(|&v| v as f64).collect();
        let r = if distinct.len() > 1 {
            (pearson(&s, &y).map_err(|e| e.to_string())? - brute_pearson(&s, &y)).abs()
        } else {
            0.0
        };
        let diffs = [
            (auc - brute_auc(&s, &l)).abs(),
            (aupr - brute_aupr(&s, &l)).abs(),
            (tm.f1 - f1).abs(),
            (tm.mcc - mcc).abs(),
            r,
        ];
        for (w, d) in worst.iter_mut().zip(diffs) {
            *w = w.max(d);
        }
        for f in [|x: f64| x.exp(), |x: f64| 3.0 * x + 1.0, |x: f64| x * x * x] {
            let t: Vec<f64> = s.iter().map(|&x| f(x)).collect();
            invariance =
                invariance.max((roc_auc(&t, &l).map_err(|e| e.to_string())?.area - auc).abs());
        }
    }
    let names = ["AUC", "AUPR", "F1", "MCC", "Pearson"];
    for (name, w) in names.iter().zip(worst) {
        ensure(w <= ORACLE_TOL, || {
            format!("{name} differs from oracle by {w:.2e}")
        })?;
    }
    ensure(invariance <= ORACLE_TOL, || {
        format!("monotone invariance off by {invariance:.2e}")
    })?;
    Ok(format!(
        "1000 instances ({ties} with ties), max |diff| {:.1e}, monotone invariance {invariance:.1e}",
        worst.iter().fold(0.0f64, |a, &b| a.max(b))
    ))
}

// ---------------------------------------------------------------------------
// 3. Hand-checked values

fn criterion_hand_values() -> Outcome {
    let bce = binary_cross_entropy(&[1], &[0.5]);
    ensure((bce - std::f64::consts::LN_2).abs() <= ORACLE_TOL, || {
        format!("BCE {bce}")
    })?;

    let c = Confusion {
        tp: 2,
        tn: 2,
        fp: 1,
        fn_: 1,
    };
    ensure((c.mcc() - 1.0 / 3.0).abs() <= ORACLE_TOL, || {
        format!("MCC {}", c.mcc())
    })?;

    let mut m = TripleEmbedding::zeros(TripleMethod::Complex, 1, 2, 1);
    m.entity_mut(0, 0)[0] = 1.0;
    m.entity_mut(1, 1)[0] = 1.0;
    m.relation_mut(1, 0)[0] = 1.0;
    let forward = m.score(Triple::new(0, 0, 1));
    let backward = m.score(Triple::new(1, 0, 0));
    ensure(
        (forward - 1.0).abs() <= ORACLE_TOL && (backward + 1.0).abs() <= ORACLE_TOL,
        || format!("ComplEx scores {forward}, {backward}"),
    )?;

    let dims = CellDims {
        positions: 3,
        input_channels: 2,
        hidden: 2,
        kernel: 3,
    };
    let cell = ConvLstmCell::zeros(dims);
    let c_prev = [1.0, -2.0, 0.5, 0.0, 3.0, -0.25];
    let out = cell
        .step(&[0.3, -1.0, 2.0, 0.1, 0.0, 5.0], &[0.7; 6], &c_prev)
        .map_err(|e| e.to_string())?;
    for j in 0..6 {
        ensure((out.c[j] - 0.5 * c_prev[j]).abs() <= ORACLE_TOL, || {
            format!("cell state {j}: {}", out.c[j])
        })?;
    }
    Ok(format!(
        "BCE {bce:.12}, MCC {:.12}, ComplEx {forward:+}/{backward:+}, zero cell c = 0.5 c_prev",
        c.mcc()
    ))
}

// ---------------------------------------------------------------------------
// 4. Embedding expressiveness

/// Held-out triple ranking AUC: 20% of `truth` is withheld, and every
/// candidate triple not used for training is scored.
fn heldout_auc(
    cfg: &TripleTrainConfig,
    entities: usize,
    truth: &[(usize, usize, usize)],
) -> Result<f64, String> {
    let mut t = truth.to_vec();
    t.shuffle(&mut RngStream::new(cfg.seed, 77).rng());
    let (test, train) = t.split_at(t.len() / 5);
    let g = KnowledgeGraph::toy(entities, 1, train).map_err(|e| e.to_string())?;
    let (model, _) = train_triple_embeddings(&g, cfg).map_err(|e| e.to_string())?;
    let train: HashSet<_> = train.iter().copied().collect();
    let test: HashSet<_> = test.iter().copied().collect();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for h in 0..entities {
        for tail in 0..entities {
            if train.contains(&(h, 0, tail)) {
                continue;
            }
            scores.push(model.score(Triple::new(h, 0, tail)));
            labels.push(test.contains(&(h, 0, tail)) as u8);
        }
    }
    Ok(roc_auc(&scores, &labels).map_err(|e| e.to_string())?.area)
}

fn criterion_toy_embeddings() -> Outcome {
    const N: usize = 30;
    let mut block = (0..N).collect::<Vec<usize>>();
    block.shuffle(&mut RngStream::new(5, 0).rng());
    let mut rng = RngStream::new(9, 0).rng();

    // Symmetric: same-block pairs over 3 blocks of 10.
    let sym: Vec<_> = (0..N)
        .flat_map(|a| (0..N).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && block[a] % 3 == block[b] % 3)
        .map(|(a, b)| (a, 0, b))
        .collect();
    // Antisymmetric: a random tournament between 3 blocks of 10.
    let mut beats = [[false; 3]; 3];
    for i in 0..3 {
        for j in i + 1..3 {
            let f = rng.random_bool(0.5);
            beats[i][j] = f;
            beats[j][i] = !f;
        }
    }
    let anti: Vec<_> = (0..N)
        .flat_map(|a| (0..N).map(move |b| (a, b)))
        .filter(|&(a, b)| beats[block[a] % 3][block[b] % 3])
        .map(|(a, b)| (a, 0, b))
        .collect();
    // Translation: block k points to block k + 1 over 5 blocks of 6.
    let chain: Vec<_> = (0..N)
        .flat_map(|a| (0..N).map(move |b| (a, b)))
        .filter(|&(a, b)| block[b] % 5 == block[a] % 5 + 1)
        .map(|(a, b)| (a, 0, b))
        .collect();

    let mut parts = Vec::new();
    for (name, method, truth, batch) in [
        ("ComplEx symmetric", TripleMethod::Complex, &sym, 16),
        ("ComplEx antisymmetric", TripleMethod::Complex, &anti, 16),
        ("TransE translation", TripleMethod::Transe, &chain, 8),
    ] {
        let start = Instant::now();
        let mut cfg = TripleTrainConfig::new(method, 16);
        cfg.epochs = 200;
        cfg.batch_size = batch;
        cfg.seed = 1;
        let auc = heldout_auc(&cfg, N, truth)?;
        let elapsed = start.elapsed();
        ensure(auc >= 0.95, || format!("{name}: AUC {auc:.3}"))?;
        ensure(elapsed < Duration::from_secs(120), || {
            format!("{name}: took {elapsed:?}")
        })?;
        parts.push(format!("{name} {auc:.3} ({elapsed:.1?})"));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------------
// 5. End-to-end planted structure

fn drug_index(label: &str) -> usize {
    label
        .strip_prefix(DRUG_PREFIX)
        .and_then(|s| s.parse().ok())
        .expect("synthetic drug label")
}

fn criterion_end_to_end(root: &Path) -> Outcome {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    cfg.paths.out = root.join("planted");
    cfg.embedding.methods = vec![EmbeddingMethod::Complex];
    cfg.embedding.dim = 32;
    cfg.models.classifiers = vec![ModelKind::Baseline(BaselineKind::Logreg)];
    cfg.pairs.folds = 5;
    cfg.pairs.holdout = 0.0;
    let spec = SyntheticSpec::default();
    cfg.synthetic = Some(spec.clone());
    let report = run_pipeline(&cfg, true).map_err(|e| e.chain())?;
    let row = report
        .rows
        .iter()
        .find(|r| r.model == "logreg")
        .ok_or("no logreg row")?;
    let elapsed = start.elapsed();

    // Ceiling: the same classifier on the true target indicators of the
    // same pairs and folds.
    let table = load_pairs(
        &RunLayout::new(&cfg.paths.out),
        EmbeddingMethod::Complex,
        cfg.pairs.folds,
    )
    .map_err(|e| e.chain())?;
    let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let indicator = |label: &str| {
        let mut v = vec![0.0; spec.targets];
        for &t in &data.drug_targets[drug_index(label)] {
            v[t] = 1.0;
        }
        v
    };
    let oracle: Vec<Vec<f64>> = table
        .drug_u
        .iter()
        .zip(&table.drug_v)
        .map(|(u, v)| [indicator(u), indicator(v)].concat())
        .collect();
    let ceiling = cross_validate(
        &BaselineTrainer::new(BaselineKind::Logreg),
        &oracle,
        &table.labels,
        &table.plan,
        0.5,
        0,
    )
    .map_err(|e| e.to_string())?
    .mean
    .aupr;
    let prevalence =
        table.labels.iter().filter(|&&y| y == 1).count() as f64 / table.labels.len() as f64;
    let detail = format!(
        "AUPR {:.3} (F1 {:.3}, MCC {:.3}), random {prevalence:.3}, target-indicator ceiling {ceiling:.3}, {elapsed:.1?}",
        row.aupr, row.f1, row.mcc
    );
    ensure(row.aupr >= 0.85, || detail.clone())?;
    ensure(row.aupr - prevalence >= 0.30, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(300), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Small pipeline configuration shared by criteria 6, 8 and 9.

fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.paths.out = out.to_path_buf();
    cfg.embedding.methods = vec![EmbeddingMethod::Complex];
    cfg.embedding.dim = 8;
    cfg.embedding.epochs = Some(5);
    cfg.models.classifiers = vec![
        ModelKind::Baseline(BaselineKind::Logreg),
        ModelKind::Baseline(BaselineKind::GaussianNb),
    ];
    cfg.synthetic = Some(SyntheticSpec {
        drugs: 60,
        targets: 30,
        pathways: 5,
        target_zipf: 0.5,
        ..SyntheticSpec::default()
    });
    cfg
}

// ---------------------------------------------------------------------------
// 6. Sigma sweep

fn criterion_sigma_sweep(root: &Path) -> Outcome {
    let cfg = small(&root.join("sweep"));
    let rows = sweep_sigma(&cfg, &SIGMA_SWEEP, true).map_err(|e| e.chain())?;
    let sigmas: Vec<usize> = rows.iter().map(|r| r.sigma).collect();
    ensure(sigmas.windows(2).all(|w| w[0] <= w[1]), || {
        format!("unsorted sigmas {sigmas:?}")
    })?;
    let distinct: Vec<usize> = {
        let mut d = sigmas.clone();
        d.dedup();
        d
    };
    ensure(distinct == SIGMA_SWEEP, || format!("swept {distinct:?}"))?;
    for s in SIGMA_SWEEP {
        let dir = cfg.paths.out.join(format!("sigma-{s}"));
        ensure(dir.join("report.json").is_file(), || {
            format!("missing sub-report for {s}")
        })?;
    }
    let csv = fs::read_to_string(cfg.paths.out.join("sweep.csv")).map_err(|e| e.to_string())?;
    ensure(csv.lines().count() == rows.len() + 1, || {
        "sweep.csv row count".into()
    })?;
    let table = rows
        .iter()
        .filter(|r| r.model == "logreg")
        .map(|r| format!("{}:{:.3}", r.sigma, r.aupr))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(format!("{} rows; logreg AUPR by sigma {table}", rows.len()))
}

// ---------------------------------------------------------------------------
// 7. Sampling correctness

fn criterion_sampling() -> Outcome {
    let mut rng = RngStream::new(3, 0).rng();
    let mut triples = HashSet::new();
    while triples.len() < 60 {
        triples.insert((
            rng.random_range(0..20),
            rng.random_range(0..2),
            rng.random_range(0..20),
        ));
    }
    let triples: Vec<_> = triples.into_iter().collect();
    let g = KnowledgeGraph::toy(20, 2, &triples).map_err(|e| e.to_string())?;
    let sampling = NegativeSamplingConfig {
        ratio: 1,
        filtered: true,
        seed: 4,
    };
    let mut corrupt_hits = 0;
    for draw in 0..100_000u64 {
        let t = g.triples()[draw as usize % g.triples().len()];
        let neg = corrupt_triple(t, &g, &sampling, draw).map_err(|e| e.to_string())?;
        corrupt_hits += g.contains(&neg) as usize;
    }
    ensure(corrupt_hits == 0, || {
        format!("{corrupt_hits} corruptions were known triples")
    })?;

    let mut positives = HashSet::new();
    while positives.len() < 1000 {
        let (a, b) = (rng.random_range(0..100), rng.random_range(0..100));
        if a != b {
            positives.insert((a.min(b), a.max(b)));
        }
    }
    let dataset =
        DdiDataset::from_positive_pairs(positives.iter().copied(), DrugUniverse::new(0..100))
            .map_err(|e| e.to_string())?;
    let (mut draws, mut pair_hits) = (0, 0);
    for seed in 0..100 {
        let negatives = sample_negative_pairs(&dataset, 1.0, seed).map_err(|e| e.to_string())?;
        draws += negatives.len();
        pair_hits += negatives.iter().filter(|p| positives.contains(p)).count();
    }
    ensure(draws >= 100_000 && pair_hits == 0, || {
        format!("{pair_hits} of {draws} negative pairs were positives")
    })?;

    let mut worst_spread = 0;
    for seed in 0..50 {
        let n = rng.random_range(50..400);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        let plan = make_folds(&labels, 5, 0.2, true, seed).map_err(|e| e.to_string())?;
        let mut seen = vec![0usize; n];
        for i in plan.holdout_indices() {
            seen[i] += 1;
        }
        for class in [0u8, 1] {
            let counts: Vec<usize> = (0..5)
                .map(|f| {
                    plan.fold_indices(f)
                        .iter()
                        .filter(|&&i| labels[i] == class)
                        .count()
                })
                .collect();
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            worst_spread = worst_spread.max(spread);
        }
        for f in 0..5 {
            for i in plan.fold_indices(f) {
                seen[i] += 1;
            }
        }
        ensure(seen.iter().all(|&c| c == 1), || {
            format!("seed {seed}: folds overlap or miss examples")
        })?;
    }
    ensure(worst_spread <= 1, || {
        format!("class counts across folds differ by {worst_spread}")
    })?;
    Ok(format!(
        "100000 corruptions and {draws} negative pairs, 0 overlaps; 50 fold plans disjoint and covering, class spread <= {worst_spread}"
    ))
}

// ---------------------------------------------------------------------------
// 8. Determinism

fn criterion_determinism(root: &Path) -> Outcome {
    let read =
        |cfg: &RunConfig, name: &str| fs::read(cfg.paths.out.join(name)).map_err(|e| e.to_string());
    let a = small(&root.join("det-a"));
    let b = small(&root.join("det-b"));
    run_pipeline(&a, true).map_err(|e| e.chain())?;
    run_pipeline(&b, true).map_err(|e| e.chain())?;
    for name in ["report.json", "report.csv"] {
        ensure(read(&a, name)? == read(&b, name)?, || {
            format!("{name} differs")
        })?;
    }
    Ok(format!(
        "report.json ({} bytes) and report.csv identical",
        read(&a, "report.json")?.len()
    ))
}

// ---------------------------------------------------------------------------
// 9. Pipeline hygiene

fn criterion_hygiene(root: &Path) -> Outcome {
    let cfg = small(&root.join("hygiene"));
    let stats = stage_ingest(&cfg).map_err(|e| e.chain())?;
    let layout = RunLayout::new(&cfg.paths.out);
    let staged = scan_for_ddi_predicates(&layout.staged_graph()).map_err(|e| e.to_string())?;
    let raw = scan_for_ddi_predicates(&layout.synthetic_dir().join("interactions.nt"))
        .map_err(|e| e.to_string())?;
    ensure(raw > 0, || {
        "control: raw interaction file has no DDI triples".into()
    })?;
    ensure(staged == 0 && stats.staged_ddi_mentions == 0, || {
        format!("{staged} DDI triples staged")
    })?;
    Ok(format!(
        "0 of {} staged triples use {} DDI predicates; {} stripped; raw input has {raw}",
        stats.staged.triples,
        DDI_PREDICATES.len(),
        stats.stripped_triples
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let root = dir.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gradient integrity", Box::new(criterion_gradients)),
        ("metric oracles", Box::new(criterion_metric_oracles)),
        ("hand-checked values", Box::new(criterion_hand_values)),
        (
            "embedding expressiveness",
            Box::new(criterion_toy_embeddings),
        ),
        (
            "end-to-end planted structure",
            Box::new(|| criterion_end_to_end(root)),
        ),
        ("sigma sweep", Box::new(|| criterion_sigma_sweep(root))),
        ("sampling correctness", Box::new(criterion_sampling)),
        ("determinism", Box::new(|| criterion_determinism(root))),
        ("pipeline hygiene", Box::new(|| criterion_hygiene(root))),
    ];
    // Numeric arguments select criteria; anything else is ignored.
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
