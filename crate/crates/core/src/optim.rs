//! First-order optimizers and the finite-difference gradient checker.
//!
//! Every trainable model in the crate keeps its parameters in one flat
//! `Vec<f64>` and hands that slice, plus a gradient of the same length, to
//! [`Optimizer::step`]. Sparse trainers (skip-gram, GloVe) call
//! [`Optimizer::begin_step`] once and then [`Optimizer::update`] for the
//! coordinates they touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Rmsprop,
    Adam,
    Adamax,
}

impl OptimizerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adagrad" => Ok(Self::Adagrad),
            "rmsprop" => Ok(Self::Rmsprop),
            "adam" => Ok(Self::Adam),
            "adamax" => Ok(Self::Adamax),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Decay of the squared-gradient average (RMSprop only).
    pub decay: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, rate: f64) -> Self {
        Self {
            kind,
            rate,
            beta1: 0.9,
            beta2: 0.999,
            decay: 0.9,
            eps: 1e-8,
        }
    }

    pub fn adam(rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, rate)
    }

    pub fn sgd(rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, rate)
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
    // Bias-correction factors for the current step.
    correction1: f64,
    correction2: f64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, parameter_count: usize) -> Self {
        let first = match config.kind {
            OptimizerKind::Adam | OptimizerKind::Adamax => vec![0.0; parameter_count],
            _ => Vec::new(),
        };
        let second = match config.kind {
            OptimizerKind::Sgd => Vec::new(),
            _ => vec![0.0; parameter_count],
        };
        Self {
            config,
            first,
            second,
            steps: 0,
            correction1: 1.0,
            correction2: 1.0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_rate(&mut self, rate: f64) {
        self.config.rate = rate;
    }

    /// Dense update of every coordinate.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Usage(format!(
                "parameter length {} != gradient length {}",
                params.len(),
                grads.len()
            )));
        }
        self.check_len(params.len())?;
        self.begin_step();
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.apply(i, p, g);
        }
        Ok(())
    }

    /// Advances the step counter for a round of [`Optimizer::update`] calls.
    pub fn begin_step(&mut self) {
        self.steps += 1;
        let t = self.steps as i32;
        self.correction1 = 1.0 - self.config.beta1.powi(t);
        self.correction2 = 1.0 - self.config.beta2.powi(t);
    }

    /// Updates a single coordinate with index `index` in the optimizer state.
    pub fn update(&mut self, index: usize, param: &mut f64, grad: f64) {
        self.apply(index, param, grad);
    }

    fn check_len(&self, n: usize) -> Result<()> {
        let state = self.first.len().max(self.second.len());
        if self.config.kind != OptimizerKind::Sgd && state != n {
            return Err(Error::Usage(format!(
                "optimizer state sized for {state} parameters, got {n}"
            )));
        }
        Ok(())
    }

    #[inline]
    fn apply(&mut self, i: usize, p: &mut f64, g: f64) {
        let c = &self.config;
        match c.kind {
            OptimizerKind::Sgd => *p -= c.rate * g,
            OptimizerKind::Adagrad => {
                self.second[i] += g * g;
                *p -= c.rate * g / (self.second[i].sqrt() + c.eps);
            }
            OptimizerKind::Rmsprop => {
                let v = &mut self.second[i];
                *v = c.decay * *v + (1.0 - c.decay) * g * g;
                *p -= c.rate * g / (v.sqrt() + c.eps);
            }
            OptimizerKind::Adam => {
                let m = &mut self.first[i];
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                let v = &mut self.second[i];
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = self.first[i] / self.correction1;
                let v_hat = self.second[i] / self.correction2;
                *p -= c.rate * m_hat / (v_hat.sqrt() + c.eps);
            }
            OptimizerKind::Adamax => {
                let m = &mut self.first[i];
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                let u = &mut self.second[i];
                *u = (c.beta2 * *u).max(g.abs());
                *p -= c.rate / self.correction1 * self.first[i] / (self.second[i] + c.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate at which the maximum was observed.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Compares `analytic` against central finite differences of `loss` at
/// `params`, coordinate by coordinate.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Usage(format!(
            "parameter length {} != gradient length {}",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        passed: true,
    };
    for i in 0..params.len() {
        let original = probe[i];
        probe[i] = original + eps;
        let plus = loss(&probe);
        probe[i] = original - eps;
        let minus = loss(&probe);
        probe[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::GradCheck(format!(
                "non-finite loss while perturbing coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > report.max_relative_error || i == 0 {
            report.max_relative_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_relative_error < tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [OptimizerKind; 5] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adagrad,
        OptimizerKind::Rmsprop,
        OptimizerKind::Adam,
        OptimizerKind::Adamax,
    ];

    #[test]
    fn zero_gradient_leaves_parameters_fixed() {
        for kind in KINDS {
            let mut opt = Optimizer::new(OptimizerConfig::new(kind, 0.1), 3);
            let mut params = vec![1.0, -2.0, 0.5];
            for _ in 0..10 {
                opt.step(&mut params, &[0.0; 3]).unwrap();
            }
            assert_eq!(params, vec![1.0, -2.0, 0.5], "{kind:?}");
            assert_eq!(opt.steps(), 10);
        }
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), 1);
        let mut p = [1.0];
        opt.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_has_magnitude_rate() {
        for g in [1e-3, 0.5, -7.0, 250.0] {
            let cfg = OptimizerConfig::adam(0.01);
            let mut opt = Optimizer::new(cfg, 1);
            let mut p = [0.0];
            opt.step(&mut p, &[g]).unwrap();
            // m_hat = g, v_hat = g^2, so the step is rate * g / (|g| + eps).
            let expected = -0.01 * g / (g.abs() + cfg.eps);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!((p[0].abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        for kind in KINDS {
            let rate = match kind {
                OptimizerKind::Sgd => 0.1,
                OptimizerKind::Adagrad => 0.5,
                _ => 0.05,
            };
            let mut opt = Optimizer::new(OptimizerConfig::new(kind, rate), 2);
            let mut w = vec![3.0, -4.0];
            for _ in 0..2000 {
                let g: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
                opt.step(&mut w, &g).unwrap();
            }
            assert!(w.iter().all(|x| x.abs() < 0.05), "{kind:?}: {w:?}");
        }
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1), 2);
        let mut p = vec![0.0; 2];
        assert!(matches!(opt.step(&mut p, &[1.0]), Err(Error::Usage(_))));
        let mut p3 = vec![0.0; 3];
        assert!(matches!(opt.step(&mut p3, &[1.0; 3]), Err(Error::Usage(_))));
    }

    fn sq_norm(w: &[f64]) -> f64 {
        w.iter().map(|x| x * x).sum()
    }

    #[test]
    fn grad_check_accepts_exact_quadratic_gradient() {
        let report = grad_check(sq_norm, &[1.0, 2.0], &[2.0, 4.0], 1e-5, 1e-4).unwrap();
        assert!(report.passed);
        assert!(report.max_relative_error < 1e-8);
    }

    #[test]
    fn grad_check_rejects_wrong_gradient() {
        let report = grad_check(sq_norm, &[1.0, 2.0], &[2.0, 0.0], 1e-5, 1e-4).unwrap();
        assert!(!report.passed);
        assert!((report.max_relative_error - 1.0).abs() < 1e-6);
        assert_eq!(report.worst_index, 1);
    }

    #[test]
    fn grad_check_reports_non_finite_loss() {
        let f = |w: &[f64]| if w[0] > 1.0 { f64::NAN } else { w[0] };
        assert!(matches!(
            grad_check(f, &[1.0], &[1.0], 1e-5, 1e-4),
            Err(Error::GradCheck(_))
        ));
    }
}
