use kgddi::convlstm::{train_network, Mode, Network, NetworkConfig};
use kgddi::optim::OptimizerConfig;
use kgddi::rng::RngStream;
use rand::Rng;

const SEQ: usize = 8;
const CHANNELS: usize = 2;

/// Quadrant XOR points kept away from the axes.
fn xor_points(n: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<u8>) {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let p: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if p[0].abs() > 0.1 && p[1].abs() > 0.1 {
            points.push(p);
        }
    }
    let labels = points.iter().map(|p| (p[0] * p[1] > 0.0) as u8).collect();
    (points, labels)
}

/// Every sequence position carries the same two channels.
fn lift(p: &[f64; 2]) -> Vec<f64> {
    (0..SEQ).flat_map(|_| p.iter().copied()).collect()
}

/// 2-16-1 tanh network trained by full-batch gradient descent on the
/// logistic loss; returns training accuracy.
fn dense_oracle_accuracy(points: &[[f64; 2]], labels: &[u8]) -> f64 {
    const H: usize = 16;
    let mut rng = RngStream::new(99, 0).rng();
    let mut w1: Vec<[f64; 2]> = (0..H)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let mut b1 = vec![0.0; H];
    let mut w2: Vec<f64> = (0..H).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut b2 = 0.0;
    let forward = |w1: &[[f64; 2]], b1: &[f64], w2: &[f64], b2: f64, p: &[f64; 2]| {
        let h: Vec<f64> = (0..H)
            .map(|j| (w1[j][0] * p[0] + w1[j][1] * p[1] + b1[j]).tanh())
            .collect();
        let z: f64 = h.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>() + b2;
        (h, 1.0 / (1.0 + (-z).exp()))
    };
    let n = points.len() as f64;
    for _ in 0..5000 {
        let (mut g1, mut gb1, mut g2, mut gb2) =
            (vec![[0.0; 2]; H], vec![0.0; H], vec![0.0; H], 0.0);
        for (p, &y) in points.iter().zip(labels) {
            let (h, q) = forward(&w1, &b1, &w2, b2, p);
            let dz = (q - y as f64) / n;
            gb2 += dz;
            for j in 0..H {
                g2[j] += dz * h[j];
                let dh = dz * w2[j] * (1.0 - h[j] * h[j]);
                gb1[j] += dh;
                g1[j][0] += dh * p[0];
                g1[j][1] += dh * p[1];
            }
        }
        for j in 0..H {
            w1[j][0] -= 0.5 * g1[j][0];
            w1[j][1] -= 0.5 * g1[j][1];
            b1[j] -= 0.5 * gb1[j];
            w2[j] -= 0.5 * g2[j];
        }
        b2 -= 0.5 * gb2;
    }
    let correct = points
        .iter()
        .zip(labels)
        .filter(|(p, &y)| (forward(&w1, &b1, &w2, b2, p).1 >= 0.5) == (y == 1))
        .count();
    correct as f64 / n
}

#[test]
fn conv_lstm_learns_lifted_xor() {
    let (points, labels) = xor_points(200, 4);
    let oracle = dense_oracle_accuracy(&points, &labels);
    assert!(oracle >= 0.95, "dense oracle only reaches {oracle}");

    let rows: Vec<Vec<f64>> = points.iter().map(lift).collect();
    let cfg = NetworkConfig {
        seq_len: SEQ,
        filters: 4,
        kernel: 2,
        pool: 2,
        hidden: 4,
        lstm_layers: 1,
        cell_kernel: 2,
        cell_positions: 2,
        dropout: 0.0,
        noise: 0.0,
        dense: 8,
        optimizer: OptimizerConfig::adam(0.01),
        batch_size: 16,
        epochs: 300,
        validation_fraction: 0.0,
        seed: 1,
    };
    let (net, report) = train_network(&rows, &labels, &cfg).unwrap();
    assert_eq!(report.train_loss.len(), 300);
    let probs = net.predict_proba(&rows).unwrap();
    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(p, &y)| (**p >= 0.5) == (y == 1))
        .count();
    let accuracy = correct as f64 / rows.len() as f64;
    assert!(
        accuracy >= 0.95,
        "accuracy {accuracy}, dense oracle {oracle}"
    );
    let (lo, hi) = net.gate_extrema(&rows).unwrap();
    assert!(lo > 0.0 && hi < 1.0);
    // Eval mode is a pure function of its input.
    assert_eq!(
        net.forward(&rows, Mode::Eval, 1).unwrap(),
        net.forward(&rows, Mode::Eval, 2).unwrap()
    );
    assert_eq!(
        Network::new(cfg, SEQ * CHANNELS).unwrap().input_dim,
        rows[0].len()
    );
}
