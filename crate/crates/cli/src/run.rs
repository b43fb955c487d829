use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use fedsift::datasets::{
    inject_closed_set, inject_open_set, load_idx, partition_noniid, SynthParams,
};
use fedsift::federation::{ExperimentResult, RoundReport, Simulation};
use fedsift::metrics::MetricRecord;
use fedsift::rng::{names, RngStreams};
use fedsift::{Dataset64, Simulation64};

use crate::config::{DatasetConfig, ExperimentConfig, NoiseKindConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] fedsift::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl RunError {
    fn classify(e: fedsift::Error) -> Self {
        match e {
            fedsift::Error::Config(msg) => Self::Config(msg),
            other => Self::Runtime(other),
        }
    }
}

pub struct Datasets {
    pub train: Dataset64,
    pub test: Dataset64,
}

/// Loads or generates train/test data and injects the configured noise.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<Datasets, RunError> {
    let streams = RngStreams::new(cfg.seed);
    let (train, mut test, source) = match &cfg.dataset {
        DatasetConfig::Synth(s) => {
            let params = |per_class| SynthParams {
                noise_amplitude: s.pixel_noise,
                blob_width: s.blob_width,
                ..SynthParams::new(s.class_count, per_class, s.image_side)
            };
            let train = params(s.train_per_class).generate(streams.seed(names::SYNTH_TRAIN, &[]));
            let test = params(s.test_per_class).generate(streams.seed(names::SYNTH_TEST, &[]));
            let source = (cfg.noise.kind == NoiseKindConfig::OpenSet).then(|| {
                SynthParams {
                    phase: 0.5,
                    ..params(s.train_per_class)
                }
                .generate(streams.seed(names::SYNTH_OPEN_SET, &[]))
            });
            (train, test, source)
        }
        DatasetConfig::Idx(i) => {
            let mut train: Dataset64 = load_idx(&i.train_images, &i.train_labels)?;
            let mut test: Dataset64 = load_idx(&i.test_images, &i.test_labels)?;
            let k = train.class_count.max(test.class_count);
            train.class_count = k;
            test.class_count = k;
            let source = match (&i.open_set_images, &i.open_set_labels) {
                (Some(img), Some(lbl)) => Some(load_idx(img, lbl)?),
                _ => None,
            };
            (train, test, source)
        }
    };
    if (train.image_rows, train.image_cols) != (test.image_rows, test.image_cols) {
        return Err(RunError::Config(
            "train and test images differ in size".into(),
        ));
    }
    test.noise_flag.iter_mut().for_each(|f| *f = false);

    let noise_seed = streams.seed(names::NOISE, &[]);
    let train = match cfg.noise.kind {
        NoiseKindConfig::None => train,
        NoiseKindConfig::ClosedSet => {
            inject_closed_set(&train, cfg.noise.rate, noise_seed).map_err(RunError::classify)?
        }
        NoiseKindConfig::OpenSet => {
            let source = source
                .ok_or_else(|| RunError::Config("open-set noise needs an image source".into()))?;
            inject_open_set(&train, &source, cfg.noise.rate, noise_seed)
                .map_err(RunError::classify)?
        }
    };
    Ok(Datasets { train, test })
}

pub fn build_simulation(cfg: &ExperimentConfig, workers: usize) -> Result<Simulation64, RunError> {
    let Datasets { train, test } = build_datasets(cfg)?;
    let streams = RngStreams::new(cfg.seed);
    let fed = cfg.federation_config(workers);
    let shards = partition_noniid(
        &train.labels,
        train.class_count,
        fed.clients,
        cfg.partition.scheme(),
        streams.seed(names::PARTITION, &[]),
    )
    .map_err(RunError::classify)?;
    let spec = cfg.model.spec(train.input_dim(), train.class_count);
    Simulation::new(
        spec,
        cfg.model.loss_weights(),
        cfg.model.sgd(),
        fed,
        train,
        test,
        shards,
    )
    .map_err(RunError::classify)
}

pub const ROUNDS_HEADER: &str = "round,accuracy,macro_precision,macro_recall,macro_f1,psnr_db,ssim,selected_samples,removed_samples";
pub const REMOVAL_HEADER: &str = "round,removed,noisy_removed,clean_removed";

pub fn rounds_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from(ROUNDS_HEADER);
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{}", r.round);
        match &r.metrics {
            Some(m) => {
                let _ = write!(
                    out,
                    ",{},{},{},{},{},{}",
                    m.accuracy,
                    m.macro_precision,
                    m.macro_recall,
                    m.macro_f1,
                    m.psnr_db,
                    m.ssim.clamp(0.0, 1.0)
                );
            }
            None => out.push_str(",,,,,,"),
        }
        let _ = writeln!(out, ",{},{}", r.selected_samples(), r.removed);
    }
    out
}

/// One row per round in which selection may act (after the warm-up round).
pub fn removal_csv(reports: &[RoundReport], warmup_round: usize) -> String {
    let mut out = String::from(REMOVAL_HEADER);
    out.push('\n');
    for r in reports.iter().filter(|r| r.round > warmup_round) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.round, r.removed, r.removed_noisy, r.removed_clean
        );
    }
    out
}

fn record_json(m: &MetricRecord) -> serde_json::Value {
    json!({
        "round": m.round,
        "accuracy": m.accuracy,
        "macro_precision": m.macro_precision,
        "macro_recall": m.macro_recall,
        "macro_f1": m.macro_f1,
        "psnr_db": m.psnr_db,
        "ssim": m.ssim,
    })
}

pub fn summary_json(cfg: &ExperimentConfig, result: &ExperimentResult) -> serde_json::Value {
    let removed: usize = result.reports.iter().map(|r| r.removed).sum();
    let noisy: usize = result.reports.iter().map(|r| r.removed_noisy).sum();
    json!({
        "seed": cfg.seed,
        "rounds_run": result.reports.len(),
        "best": record_json(&result.best),
        "final": record_json(&result.last),
        "removed_samples": removed,
        "removed_noisy": noisy,
        "removed_clean": removed - noisy,
        "removal_precision": result.removal_precision(),
        "config": cfg.to_json(),
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| RunError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Runs the experiment and writes `rounds.csv`, `removal.csv` and
/// `summary.json` into `cfg.output.directory`.
pub fn run(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentResult, RunError> {
    let mut sim = build_simulation(cfg, workers)?;
    let result = sim.run()?;
    let dir = &cfg.output.directory;
    std::fs::create_dir_all(dir).map_err(|source| RunError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    write_file(dir, "rounds.csv", &rounds_csv(&result.reports))?;
    write_file(
        dir,
        "removal.csv",
        &removal_csv(&result.reports, sim.config().warmup_round),
    )?;
    let summary = serde_json::to_string_pretty(&summary_json(cfg, &result)).expect("plain json");
    write_file(dir, "summary.json", &(summary + "\n"))?;
    Ok(result)
}
