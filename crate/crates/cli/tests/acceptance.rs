//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fedsift::adaptive_threshold::{calculate_lt, select_samples, AtState};
use fedsift::datasets::{synth_generate, ClientShard};
use fedsift::federation::{FederationConfig, Simulation};
use fedsift::metrics::{classification_metrics, psnr, ssim};
use fedsift::mtae::{LossWeights, Mtae, MtaeParams, MtaeSpec};
use fedsift::nn::{ce_loss, SgdConfig};
use fedsift::outlier::{DetectorKind, OcsvmModel, OcsvmParams, OutlierModel};
use fedsift::rng::{names, RngStreams};
use fedsift::svdd::{update_radii, DistanceReport, SvddState};
use fedsift::{Dataset64, Matrix};
use fedsift_cli::{build_simulation, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Option<Duration>);

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 1: gradients ----

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
    let (mut rec, mut cls) = (0.0, 0.0);
    for i in 0..x.rows() {
        let r = out.reconstruction.row(i);
        rec += r
            .iter()
            .zip(x.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / r.len() as f64;
        let logits = out.logits.row(i);
        cls += logits.iter().map(|v| v.exp()).sum::<f64>().ln() - logits[y[i]];
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

fn gradient_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(3..7);
    let k = rng.random_range(2..5);
    let mtae = Mtae::new(MtaeSpec {
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
    })
    .unwrap();
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
    let w = LossWeights {
        rec: 1.0,
        cls: rng.random_range(0.05..1.0),
        reg: rng.random_range(0.1..1.0),
    };
    let svdd = seed.is_multiple_of(2).then(|| {
        let z = mtae.embed(&params, &x).unwrap();
        let mut s = SvddState::new(0.4, 0);
        s.active = true;
        s.centroids = (0..k)
            .map(|_| (0..z.cols()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // radius halfway into the widest gap of squared distances
        s.radii = (0..k)
            .map(|c| {
                let mut d2: Vec<f64> = (0..n)
                    .filter(|&j| y[j] == c)
                    .map(|j| {
                        z.row(j)
                            .iter()
                            .zip(&s.centroids[c])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum()
                    })
                    .collect();
                d2.push(0.0);
                d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let (lo, hi) = d2
                    .windows(2)
                    .map(|p| (p[0], p[1]))
                    .max_by(|a, b| (a.1 - a.0).partial_cmp(&(b.1 - b.0)).unwrap())
                    .unwrap_or((0.0, 1.0));
                ((lo + hi) / 2.0).sqrt()
            })
            .collect();
        s
    });
    let analytic = mtae
        .loss_and_grad(&params, &x, &y, &w, svdd.as_ref())
        .unwrap();
    assert!((analytic.loss - objective(&mtae, &params, &x, &y, &w, svdd.as_ref())).abs() < 1e-12);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.grads.values().enumerate() {
        let mut plus = params.clone();
        *plus.values_mut().nth(i).unwrap() += h;
        let mut minus = params.clone();
        *minus.values_mut().nth(i).unwrap() -= h;
        let fd = (objective(&mtae, &plus, &x, &y, &w, svdd.as_ref())
            - objective(&mtae, &minus, &x, &y, &w, svdd.as_ref()))
            / (2.0 * h);
        worst = worst.max((g - fd).abs() / (g.abs() + fd.abs()).max(1e-6));
    }
    worst
}

fn gradient_oracle() -> Check {
    let worst = (0..25).map(gradient_instance).fold(0.0, f64::max);
    ensure(
        worst < 1e-4,
        format!("25 instances, worst relative error {worst:.2e}"),
    )
}

// ---- 2: centralized equivalence ----

fn centralized_equivalence() -> Check {
    let (seed, rounds) = (21, 50);
    let train: Dataset64 = synth_generate(3, 12, 5, 4);
    let test: Dataset64 = synth_generate(3, 4, 5, 5);
    let spec = MtaeSpec {
        input_dim: 25,
        embed_dim: 4,
        encoder_hidden: vec![12],
        decoder_hidden: vec![12],
        classifier_hidden: vec![],
        class_count: 3,
    };
    let weights = LossWeights::default();
    let sgd = SgdConfig {
        learning_rate: 0.1,
        weight_decay: 0.001,
        batch_size: train.len(),
        local_epochs: 1,
    };
    let mut cfg = FederationConfig::new(rounds, 1);
    cfg.clients_per_round = 1;
    cfg.warmup_round = 0;
    cfg.seed = seed;
    let shard = ClientShard {
        client_id: 0,
        indices: (0..train.len()).collect(),
    };
    let mtae = Mtae::new(spec.clone()).unwrap();
    let mut direct = mtae.init::<f64, _>(&mut RngStreams::new(seed).stream(names::INIT, &[]));
    for _ in 0..rounds {
        let step = mtae
            .loss_and_grad(&direct, &train.images, &train.labels, &weights, None)
            .unwrap();
        direct.sgd_step(&step.grads, &sgd).unwrap();
    }
    let mut sim = Simulation::new(spec, weights, sgd, cfg, train, test, vec![shard]).unwrap();
    sim.run().unwrap();
    let diff = sim.params().max_abs_diff(&direct);
    ensure(
        diff <= 1e-12,
        format!("{rounds} rounds, max abs diff {diff:.2e}"),
    )
}

// ---- 3, 4: detectors ----

fn planted(seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = (0..1900).map(|_| rng.sample(StandardNormal)).collect();
    for _ in 0..50 {
        let r = rng.random_range(36.0f64..64.0).sqrt();
        let t = rng.random_range(0.0..2.0 * PI);
        data.extend([r * t.cos(), r * t.sin()]);
    }
    Matrix::from_vec(1000, 2, data).unwrap()
}

fn planted_recovery() -> Check {
    let score = |fit: &dyn Fn(&Matrix<f64>, u64) -> OutlierModel<f64>| {
        let (mut recall, mut fpr) = (Vec::new(), Vec::new());
        for seed in 0..10 {
            let points = planted(seed);
            let v = fit(&points, seed).predict_outliers(&points, 0.05).unwrap();
            recall.push(v.is_outlier[950..].iter().filter(|&&o| o).count() as f64 / 50.0);
            fpr.push(v.is_outlier[..950].iter().filter(|&&o| o).count() as f64 / 950.0);
        }
        (median(recall), median(fpr))
    };
    let ocsvm = |gamma: Option<f64>| {
        move |p: &Matrix<f64>, _: u64| {
            OutlierModel::Ocsvm(
                OcsvmModel::fit(
                    p,
                    &OcsvmParams {
                        gamma,
                        ..OcsvmParams::with_nu(0.05)
                    },
                )
                .unwrap(),
            )
        }
    };
    let (dr, df) = score(&ocsvm(None));
    let (or, of) = score(&ocsvm(Some(0.1)));
    let (ir, iff) = score(&|p, seed| {
        OutlierModel::fit(
            DetectorKind::Iforest,
            p,
            0.05,
            &mut ChaCha8Rng::seed_from_u64(seed + 100),
        )
        .unwrap()
    });
    let detail = format!(
        "OCSVM gamma=0.1 recall {or:.2} fpr {of:.3}; IF recall {ir:.2} fpr {iff:.3}; OCSVM default gamma recall {dr:.2} fpr {df:.3} (informational)"
    );
    ensure(or >= 0.8 && of <= 0.1 && ir >= 0.8 && iff <= 0.1, detail)
}

fn nu_property() -> Check {
    let mut worst_out: f64 = f64::MIN;
    let mut worst_sv: f64 = f64::MAX;
    for nu in [0.1, 0.4, 0.5] {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Matrix<f64> = Matrix::from_vec(
                200,
                2,
                (0..400).map(|_| rng.sample(StandardNormal)).collect(),
            )
            .unwrap();
            let model = OcsvmModel::fit(&points, &OcsvmParams::with_nu(nu)).unwrap();
            let outside = model
                .decision_batch(&points)
                .unwrap()
                .iter()
                .filter(|&&s| s < 0.0)
                .count() as f64
                / 200.0;
            let sv = model.dual_coef().iter().filter(|&&a| a > 0.0).count() as f64 / 200.0;
            worst_out = worst_out.max(outside - nu);
            worst_sv = worst_sv.min(sv - nu);
        }
    }
    ensure(
        worst_out <= 0.02 && worst_sv >= -0.02,
        format!("max(outlier frac - nu) {worst_out:+.3}, min(SV frac - nu) {worst_sv:+.3}"),
    )
}

// ---- 5: adaptive threshold ----

fn at_oracles() -> Check {
    let mut failures = Vec::new();
    let lt = calculate_lt(&[0.1, 0.3], &[1.0, 2.0], 0.5).unwrap();
    if (lt - 0.8f64).abs() > 1e-15 {
        failures.push(format!("lt {lt}"));
    }
    let history = |h: &[f64], ltr: f64| {
        let mut s = AtState::<f64>::new(0.1, 2, 0.75);
        s.ltr = ltr;
        s.utility = h.iter().enumerate().map(|(i, &u)| (i + 1, u)).collect();
        s
    };
    let mut up = history(&[1.0, 1.0, 0.5], 0.1);
    up.control_ltr(0.5, 1, 4);
    if (up.ltr - 0.2).abs() > 1e-15 {
        failures.push(format!("rise gave ltr {}", up.ltr));
    }
    let mut down = history(&[0.5, 0.5, 1.0], 0.1);
    down.control_ltr(1.0, 1, 4);
    if down.ltr != 0.0 {
        failures.push(format!("clamp gave ltr {}", down.ltr));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for trial in 0..200 {
        let n = rng.random_range(0..40);
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let (t, p) = (rng.random_range(0.0..2.0), rng.random_range(0.0..=1.0));
        let picked = select_samples(&losses, t, p, &mut rng);
        let under = losses.iter().filter(|&&l| l < t).count();
        let expected = under + (p * (n - under) as f64 + 1e-9).floor() as usize;
        if picked.len() != expected || (0..n).any(|j| losses[j] < t && !picked.contains(&j)) {
            failures.push(format!("selection trial {trial}"));
        }
    }
    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            "lt = 0.8; ltr 0.1 -> 0.2; ltr 0.1 -> 0 (clamped); 200 selection-count trials".into()
        } else {
            failures.join(", ")
        },
    )
}

// ---- 6: SVDD ----

fn svdd_quantile() -> Check {
    let report = DistanceReport {
        per_class: vec![(1..=10).map(f64::from).collect()],
    };
    let radius = update_radii(&report, 0.4, &[0.0])[0];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..5);
        let nu = rng.random_range(0.05..0.95);
        let report = DistanceReport {
            per_class: (0..k)
                .map(|_| {
                    let n = rng.random_range(1..60);
                    (0..n)
                        .map(|_| rng.random_range(0.0..10.0))
                        .collect::<Vec<f64>>()
                })
                .collect(),
        };
        let radii = update_radii(&report, nu, &vec![0.0; k]);
        for (c, d) in report.per_class.iter().enumerate() {
            let n = d.len() as f64;
            if d.iter().filter(|&&x| x > radii[c]).count() as f64 / n > nu + 1.0 / n {
                violations += 1;
            }
        }
    }
    ensure(
        radius == 6.0 && violations == 0,
        format!("radius {radius}; {violations} exceedance violations in 100 trials"),
    )
}

// ---- 7: desk-scale reproduction ----

const DESK_MODES: [&str; 4] = ["none", "adaptive_threshold", "ocsvm", "iforest"];

fn desk_config(mode: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
seed = {seed}
[dataset]
kind = "synth"
class_count = 4
train_per_class = 300
test_per_class = 100
image_side = 8
pixel_noise = 0.9
blob_width = 0.35
[noise]
kind = "closed_set"
rate = 0.4
[federation]
rounds = 200
clients = 20
clients_per_round = 2
eval_interval = 10
[selection]
mode = "{mode}"
space = "loss2d"
warmup_round = 80
refit_interval = 5
"#
    ))
    .unwrap()
}

fn desk_reproduction() -> Check {
    let mut best = vec![Vec::new(); 4];
    let (mut removed, mut noisy) = ([0usize; 4], [0usize; 4]);
    for seed in 0..5 {
        for (m, mode) in DESK_MODES.iter().enumerate() {
            let result = build_simulation(&desk_config(mode, seed), 1)
                .unwrap()
                .run()
                .unwrap();
            best[m].push(result.best.accuracy);
            removed[m] += result.reports.iter().map(|r| r.removed).sum::<usize>();
            noisy[m] += result
                .reports
                .iter()
                .map(|r| r.removed_noisy)
                .sum::<usize>();
        }
    }
    let med: Vec<f64> = best.into_iter().map(median).collect();
    let gain = |m: usize| 100.0 * (med[m] - med[0]);
    let precision = |m: usize| noisy[m] as f64 / removed[m].max(1) as f64;
    let pooled =
        noisy[1..].iter().sum::<usize>() as f64 / removed[1..].iter().sum::<usize>().max(1) as f64;
    let mut detail = format!("baseline best acc {:.4}", med[0]);
    for (m, name) in [(1, "AT"), (2, "OCSVM"), (3, "IF")] {
        detail += &format!(
            "; {name} {:.4} ({:+.2} pts, removal precision {:.3})",
            med[m],
            gain(m),
            precision(m)
        );
    }
    detail += &format!("; pooled removal precision {pooled:.3} (need >= 0.60)");
    ensure(
        gain(2) >= 2.0 && gain(3) >= 2.0 && gain(1) >= 0.0 && pooled >= 0.6,
        detail,
    )
}

// ---- 8: metrics ----

fn metric_closed_forms() -> Check {
    let ce = ce_loss(&Matrix::<f64>::zeros(1, 10), &[3])
        .unwrap()
        .per_sample[0];
    let target = vec![0.0f64; 16];
    let off = vec![0.5f64; 16];
    let p = psnr(&off, &target, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..1.0)).collect();
    let s = ssim(&img, &img, 10, 10);
    let f1a = classification_metrics(&[0, 0, 1], &[0, 1, 1], 2).macro_f1;
    let f1b = classification_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).macro_f1;
    ensure(
        (ce - 10f64.ln()).abs() <= 1e-9
            && (p - 6.0206).abs() <= 1e-3
            && s == 1.0
            && (f1a - 2.0 / 3.0).abs() < 1e-15
            && (f1b - 1.0 / 3.0).abs() < 1e-15,
        format!("CE {ce:.12}, PSNR {p:.4} dB, SSIM(x,x) {s}, macro-F1 {f1a:.6} and {f1b:.6}"),
    )
}

// ---- 9: determinism ----

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        r#"
seed = 5
[dataset]
kind = "synth"
train_per_class = 60
test_per_class = 20
[noise]
kind = "closed_set"
[federation]
rounds = 30
clients = 8
clients_per_round = 3
eval_interval = 5
[selection]
mode = "iforest"
warmup_round = 10
"#,
    )
    .unwrap();
    let run = |workers: usize, tag: &str| {
        let out = dir.path().join(tag);
        let status = Command::new(env!("CARGO_BIN_EXE_fedsift"))
            .arg("run")
            .arg(&config)
            .args(["--workers", &workers.to_string(), "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        std::fs::read(out.join("rounds.csv")).unwrap()
    };
    let a = run(2, "a");
    let b = run(2, "b");
    let c = run(1, "c");
    ensure(
        a == b && a == c,
        format!(
            "rounds.csv {} bytes; two --workers 2 runs {}; --workers 1 {}",
            a.len(),
            if a == b { "identical" } else { "differ" },
            if a == c { "identical" } else { "differs" }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "gradient oracle",
            gradient_oracle,
            Some(Duration::from_secs(30)),
        ),
        (
            "centralized equivalence",
            centralized_equivalence,
            Some(Duration::from_secs(30)),
        ),
        (
            "planted-outlier recovery",
            planted_recovery,
            Some(Duration::from_secs(60)),
        ),
        ("OCSVM nu-property", nu_property, None),
        ("adaptive threshold oracles", at_oracles, None),
        ("SVDD quantile contract", svdd_quantile, None),
        (
            "desk-scale reproduction",
            desk_reproduction,
            Some(Duration::from_secs(15 * 60)),
        ),
        ("metric closed forms", metric_closed_forms, None),
        ("determinism", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(d), Some(l)) if elapsed > l => {
                Err(format!("{d}; over the {}s budget", l.as_secs()))
            }
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} [{}] {name}: {detail} ({:.1}s)",
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
