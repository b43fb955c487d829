//! Backpropagated MTAE gradients against central finite differences.

use fedsift::mtae::{LossWeights, Mtae, MtaeParams, MtaeSpec};
use fedsift::svdd::SvddState;
use fedsift::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Objective recomputed from raw network outputs.
fn objective(
    mtae: &Mtae,
    p: &MtaeParams<f64>,
    x: &Matrix<f64>,
    y: &[usize],
    w: &LossWeights,
    svdd: Option<&SvddState<f64>>,
) -> f64 {
    let out = mtae.infer(p, x).unwrap();
    let n = x.rows() as f64;
    let mut rec = 0.0;
    let mut cls = 0.0;
    for i in 0..x.rows() {
        let r = out.reconstruction.row(i);
        let mse: f64 = r
            .iter()
            .zip(x.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / r.len() as f64;
        rec += mse;
        let logits = out.logits.row(i);
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        cls += lse - logits[y[i]];
    }
    let mut total = w.rec * rec / n + w.cls * cls / n;
    if let Some(s) = svdd {
        let k = s.centroids.len();
        let mut reg = 0.0;
        for c in 0..k {
            let r2 = s.radii[c] * s.radii[c];
            let members: Vec<usize> = (0..y.len()).filter(|&j| y[j] == c).collect();
            let hinge: f64 = members
                .iter()
                .map(|&j| {
                    let d2: f64 = out
                        .embedding
                        .row(j)
                        .iter()
                        .zip(&s.centroids[c])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2 - r2).max(0.0)
                })
                .sum();
            reg += r2
                + if members.is_empty() {
                    0.0
                } else {
                    hinge / members.len() as f64
                };
        }
        total += w.reg * reg / k as f64;
    }
    total
}

/// Radii placed halfway into the widest gap of each class's squared
/// distances, so no sample sits near the hinge.
fn svdd_away_from_kink(
    z: &Matrix<f64>,
    y: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> SvddState<f64> {
    let dim = z.cols();
    let mut state = SvddState::new(0.4, 0);
    state.active = true;
    state.centroids = (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    state.radii = (0..k)
        .map(|c| {
            let mut d2: Vec<f64> = (0..y.len())
                .filter(|&j| y[j] == c)
                .map(|j| {
                    z.row(j)
                        .iter()
                        .zip(&state.centroids[c])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect();
            d2.push(0.0);
            d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = d2
                .windows(2)
                .map(|w| (w[0], w[1]))
                .max_by(|a, b| (a.1 - a.0).partial_cmp(&(b.1 - b.0)).unwrap())
                .unwrap_or((0.0, 1.0));
            ((lo + hi) / 2.0).sqrt()
        })
        .collect();
    state
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn check_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(3..7);
    let k = rng.random_range(2..5);
    let spec = MtaeSpec {
        input_dim,
        embed_dim: rng.random_range(2..4),
        encoder_hidden: vec![rng.random_range(3..6)],
        decoder_hidden: vec![rng.random_range(3..6)],
        classifier_hidden: if rng.random_bool(0.5) {
            vec![3]
        } else {
            vec![]
        },
        class_count: k,
    };
    let mtae = Mtae::new(spec).unwrap();
    // Fresh inits have zero biases, which can park ReLUs exactly on their kink.
    let mut params: MtaeParams<f64> = mtae.init(&mut rng);
    params
        .values_mut()
        .for_each(|v| *v = rng.random_range(-0.8..0.8));
    let n = rng.random_range(3..7);
    let x = Matrix::from_vec(
        n,
        input_dim,
        (0..n * input_dim)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
    )
    .unwrap();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let weights = LossWeights {
        rec: 1.0,
        cls: rng.random_range(0.05..1.0),
        reg: rng.random_range(0.1..1.0),
    };
    let svdd = if seed.is_multiple_of(2) {
        let z = mtae.embed(&params, &x).unwrap();
        Some(svdd_away_from_kink(&z, &y, k, &mut rng))
    } else {
        None
    };

    let analytic = mtae
        .loss_and_grad(&params, &x, &y, &weights, svdd.as_ref())
        .unwrap();
    let expected_loss = objective(&mtae, &params, &x, &y, &weights, svdd.as_ref());
    assert!(
        (analytic.loss - expected_loss).abs() < 1e-12,
        "seed {seed}: loss mismatch"
    );

    let grads: Vec<f64> = analytic.grads.values().collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, &g) in grads.iter().enumerate() {
        let mut plus = params.clone();
        *plus.values_mut().nth(i).unwrap() += h;
        let mut minus = params.clone();
        *minus.values_mut().nth(i).unwrap() -= h;
        let fd = (objective(&mtae, &plus, &x, &y, &weights, svdd.as_ref())
            - objective(&mtae, &minus, &x, &y, &weights, svdd.as_ref()))
            / (2.0 * h);
        worst = worst.max(relative_error(g, fd));
    }
    worst
}

#[test]
fn backprop_matches_finite_differences() {
    for seed in 0..25 {
        let worst = check_instance(seed);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst:e}");
    }
}
