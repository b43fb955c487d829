//! FedAvg with per-round sample selection.
//!
//! Each round the server samples `P` of `N` clients. From the warm-up round
//! `t_s` onward, clients compute per-sample loss points or embeddings (`κ`)
//! with the current global model; from `t_s + 1` they drop samples flagged by
//! the active selector before `E` epochs of mini-batch SGD. The server pools
//! the round's `κ` to refit its detector at `t_s` and every `t_w` rounds,
//! steers the adaptive threshold, refreshes SVDD radii, and averages client
//! models weighted by their retained sample counts.
//!
//! Randomness comes from named streams keyed by round and client, so client
//! updates may run on any number of threads without changing results.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::adaptive_threshold::{calculate_lt, select_samples, AtState, LossMeta};
use crate::datasets::{ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{classification_metrics, psnr, ssim, BestRoundTracker, MetricRecord};
use crate::mtae::{LossWeights, Mtae, MtaeParams, MtaeSpec};
use crate::nn::SgdConfig;
use crate::outlier::{DetectorKind, OutlierModel};
use crate::rng::{names, RngStreams};
use crate::scalar::Real;
use crate::svdd::{client_distances, update_radii, DistanceReport, SvddState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    None,
    AdaptiveThreshold,
    Ocsvm,
    Iforest,
}

impl SelectionMode {
    fn detector(self) -> Option<DetectorKind> {
        match self {
            Self::Ocsvm => Some(DetectorKind::Ocsvm),
            Self::Iforest => Some(DetectorKind::Iforest),
            _ => None,
        }
    }
}

/// Where detectors look for outliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionSpace {
    /// `(λ_cls · CE, λ_rec · MSE)` per sample.
    Loss2d,
    /// Encoder embeddings.
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtParams {
    pub loss_step: f64,
    pub window: usize,
    pub retain_prob: f64,
}

impl Default for AtParams {
    fn default() -> Self {
        Self {
            loss_step: 0.1,
            window: 5,
            retain_prob: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvddParams {
    pub enabled: bool,
    pub nu: f64,
    pub activation_round: usize,
    pub recenter: bool,
}

impl Default for SvddParams {
    fn default() -> Self {
        Self {
            enabled: false,
            nu: 0.4,
            activation_round: 500,
            recenter: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub rounds: usize,
    pub clients: usize,
    pub clients_per_round: usize,
    /// First round that computes `κ`; removal starts one round later.
    pub warmup_round: usize,
    /// Detector refit interval `t_w`.
    pub refit_interval: usize,
    pub mode: SelectionMode,
    pub space: SelectionSpace,
    pub contamination: f64,
    pub at: AtParams,
    pub svdd: SvddParams,
    pub eval_interval: usize,
    pub seed: u64,
    /// Threads used for client updates; results do not depend on it.
    pub workers: usize,
}

impl FederationConfig {
    pub fn new(rounds: usize, clients: usize) -> Self {
        Self {
            rounds,
            clients,
            clients_per_round: clients.div_ceil(10).max(1),
            warmup_round: 400,
            refit_interval: 5,
            mode: SelectionMode::None,
            space: SelectionSpace::Loss2d,
            contamination: 0.4,
            at: AtParams::default(),
            svdd: SvddParams::default(),
            eval_interval: 10,
            seed: 0,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return fail("clients must be at least 1".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.clients {
            return fail(format!(
                "clients_per_round must lie in [1, {}], got {}",
                self.clients, self.clients_per_round
            ));
        }
        if self.refit_interval == 0 {
            return fail("refit_interval must be at least 1".into());
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be at least 1".into());
        }
        if self.rounds > 0 && self.warmup_round >= self.rounds {
            return fail(format!(
                "warmup_round ({}) must be smaller than rounds ({})",
                self.warmup_round, self.rounds
            ));
        }
        let c = self.contamination;
        let valid = match self.mode {
            SelectionMode::Ocsvm => c > 0.0 && c <= 1.0,
            _ => (0.0..=1.0).contains(&c),
        };
        if !valid {
            return fail(format!("contamination out of range: {c}"));
        }
        if !(0.0..=1.0).contains(&self.at.retain_prob) {
            return fail(format!(
                "retain_prob must lie in [0, 1], got {}",
                self.at.retain_prob
            ));
        }
        if self.at.window == 0 {
            return fail("adaptive threshold window must be at least 1".into());
        }
        if !(self.at.loss_step >= 0.0 && self.at.loss_step <= 1.0) {
            return fail(format!(
                "loss_step must lie in [0, 1], got {}",
                self.at.loss_step
            ));
        }
        if !(self.svdd.nu > 0.0 && self.svdd.nu < 1.0) {
            return fail(format!("svdd nu must lie in (0, 1), got {}", self.svdd.nu));
        }
        Ok(())
    }
}

/// Uniform sample of `per_round` distinct client ids, ascending.
pub fn select_clients<R: Rng + ?Sized>(
    clients: usize,
    per_round: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut ids = index::sample(rng, clients, per_round.min(clients)).into_vec();
    ids.sort_unstable();
    ids
}

/// What a client uses to drop samples this round.
#[derive(Debug, Clone, Copy)]
pub enum Selector<'a, T> {
    None,
    Threshold {
        lt: T,
        retain_prob: f64,
    },
    Detector {
        model: &'a OutlierModel<T>,
        contamination: f64,
    },
}

/// Read-only inputs shared by every client in a round.
#[derive(Debug, Clone, Copy)]
pub struct ClientContext<'a, T> {
    pub mtae: &'a Mtae,
    pub loss_weights: &'a LossWeights,
    pub sgd: &'a SgdConfig,
    pub data: &'a LabeledDataset<T>,
    pub round: usize,
    pub warmup_round: usize,
    pub mode: SelectionMode,
    pub space: SelectionSpace,
    pub selector: Selector<'a, T>,
    pub svdd: Option<&'a SvddState<T>>,
    pub streams: RngStreams,
}

#[derive(Debug, Clone)]
pub struct ClientReturn<T> {
    pub client_id: usize,
    pub params: MtaeParams<T>,
    /// Samples trained on.
    pub sample_count: usize,
    /// Pre-selection loss points or embeddings, one row per shard sample.
    pub kappa: Option<Matrix<T>>,
    pub loss_meta: Option<LossMeta<T>>,
    pub distances: Option<DistanceReport<T>>,
    pub removed: usize,
    pub removed_noisy: usize,
}

/// One client's local round.
pub fn client_update<T: Real>(
    ctx: &ClientContext<'_, T>,
    shard: &ClientShard,
    global: &MtaeParams<T>,
    sgd_epochs: usize,
) -> Result<ClientReturn<T>> {
    if shard.is_empty() {
        return Err(Error::Protocol(format!(
            "client {} has an empty shard",
            shard.client_id
        )));
    }
    let x = ctx.data.images.select_rows(&shard.indices);
    let labels: Vec<usize> = shard.indices.iter().map(|&i| ctx.data.labels[i]).collect();
    let id = shard.client_id as u64;
    let round = ctx.round as u64;

    let observe = ctx.mode != SelectionMode::None && ctx.round >= ctx.warmup_round;
    let mut kappa = None;
    let mut weighted: Option<Vec<T>> = None;
    if observe {
        let out = ctx.mtae.forward(global, &x, &labels, ctx.loss_weights)?;
        kappa = Some(match ctx.space {
            SelectionSpace::Loss2d => out.losses.loss_point_matrix(),
            SelectionSpace::Feature => out.embedding,
        });
        weighted = Some(out.losses.weighted_sum);
    }

    let mut retained: Vec<usize> = match (&ctx.selector, ctx.round > ctx.warmup_round) {
        (
            Selector::Detector {
                model,
                contamination,
            },
            true,
        ) => {
            let points = kappa.as_ref().expect("kappa computed after warm-up");
            let verdict = model.predict_outliers(points, *contamination)?;
            (0..shard.len())
                .filter(|&j| !verdict.is_outlier[j])
                .collect()
        }
        (Selector::Threshold { lt, retain_prob }, true) => {
            let losses = weighted.as_ref().expect("losses computed after warm-up");
            let mut rng = ctx.streams.stream(names::AT_SAMPLING, &[round, id]);
            select_samples(losses, *lt, *retain_prob, &mut rng)
        }
        _ => (0..shard.len()).collect(),
    };
    if retained.is_empty() {
        let losses = weighted.as_ref().expect("selection implies losses");
        let lowest = (0..losses.len())
            .min_by(|&a, &b| losses[a].partial_cmp(&losses[b]).expect("finite losses"))
            .expect("nonempty shard");
        retained.push(lowest);
    }

    let loss_meta = match (&weighted, ctx.mode) {
        (Some(losses), SelectionMode::AdaptiveThreshold) => Some(LossMeta {
            low: losses.iter().copied().fold(T::infinity(), T::min),
            high: losses.iter().copied().fold(T::neg_infinity(), T::max),
            selected_loss_sum: retained.iter().map(|&j| losses[j]).sum(),
            selected_count: retained.len(),
        }),
        _ => None,
    };

    let removed = shard.len() - retained.len();
    let removed_noisy = {
        let mut keep = vec![false; shard.len()];
        retained.iter().for_each(|&j| keep[j] = true);
        (0..shard.len())
            .filter(|&j| !keep[j] && ctx.data.noise_flag[shard.indices[j]])
            .count()
    };

    let train_x = x.select_rows(&retained);
    let train_y: Vec<usize> = retained.iter().map(|&j| labels[j]).collect();
    let svdd = ctx.svdd.filter(|s| s.active);
    let mut params = global.clone();
    let mut rng = ctx.streams.stream(names::SHUFFLE, &[round, id]);
    let mut order: Vec<usize> = (0..retained.len()).collect();
    let batch = ctx.sgd.batch_size.max(1);
    for _ in 0..sgd_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let bx = train_x.select_rows(chunk);
            let by: Vec<usize> = chunk.iter().map(|&j| train_y[j]).collect();
            let step = ctx
                .mtae
                .loss_and_grad(&params, &bx, &by, ctx.loss_weights, svdd)?;
            params.sgd_step(&step.grads, ctx.sgd)?;
        }
    }

    let distances = match svdd {
        Some(state) => {
            let z = ctx.mtae.embed(&params, &train_x)?;
            Some(client_distances(&z, &train_y, &state.centroids)?)
        }
        None => None,
    };

    Ok(ClientReturn {
        client_id: shard.client_id,
        params,
        sample_count: retained.len(),
        kappa,
        loss_meta,
        distances,
        removed,
        removed_noisy,
    })
}

/// `Σ mᵢ wᵢ / Σ mᵢ`, accumulated in ascending client-id order.
pub fn aggregate<T: Real>(returns: &[ClientReturn<T>]) -> Result<MtaeParams<T>> {
    let first = returns
        .first()
        .ok_or_else(|| Error::Protocol("no client returns to aggregate".into()))?;
    let mut ordered: Vec<&ClientReturn<T>> = returns.iter().collect();
    ordered.sort_by_key(|r| r.client_id);
    let total: usize = ordered.iter().map(|r| r.sample_count).sum();
    if total == 0 {
        return Err(Error::Protocol(
            "clients returned zero samples in total".into(),
        ));
    }
    let total = T::from_count(total);
    let mut acc = first.params.zeros_like();
    for r in ordered {
        if !r.params.same_shape(&acc) {
            return Err(Error::Protocol(format!(
                "client {} returned mismatched parameter shapes",
                r.client_id
            )));
        }
        acc.add_scaled(&r.params, T::from_count(r.sample_count))?;
    }
    acc.values_mut().for_each(|v| *v /= total);
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub participants: Vec<usize>,
    /// Retained (trained-on) sample count per participant.
    pub sample_counts: Vec<usize>,
    pub shard_sizes: Vec<usize>,
    /// Whether clients applied a selector this round.
    pub selection_applied: bool,
    pub detector_fitted: bool,
    pub removed: usize,
    pub removed_noisy: usize,
    pub removed_clean: usize,
    /// Threshold that clients will use next round (AT mode).
    pub next_threshold: Option<f64>,
    pub ltr: Option<f64>,
    pub metrics: Option<MetricRecord>,
}

impl RoundReport {
    pub fn selected_samples(&self) -> usize {
        self.sample_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub reports: Vec<RoundReport>,
    pub best: MetricRecord,
    pub last: MetricRecord,
}

impl ExperimentResult {
    pub fn removal_precision(&self) -> Option<f64> {
        let removed: usize = self.reports.iter().map(|r| r.removed).sum();
        let noisy: usize = self.reports.iter().map(|r| r.removed_noisy).sum();
        (removed > 0).then(|| noisy as f64 / removed as f64)
    }
}

/// Server state and round loop.
pub struct Simulation<T> {
    mtae: Mtae,
    loss_weights: LossWeights,
    sgd: SgdConfig,
    config: FederationConfig,
    train: LabeledDataset<T>,
    test: LabeledDataset<T>,
    shards: Vec<ClientShard>,
    streams: RngStreams,
    params: MtaeParams<T>,
    detector: Option<OutlierModel<T>>,
    at: AtState<T>,
    svdd: SvddState<T>,
    round: usize,
    tracker: BestRoundTracker,
    pool: Option<rayon::ThreadPool>,
}

impl<T: Real> Simulation<T> {
    pub fn new(
        spec: MtaeSpec,
        loss_weights: LossWeights,
        sgd: SgdConfig,
        config: FederationConfig,
        train: LabeledDataset<T>,
        test: LabeledDataset<T>,
        shards: Vec<ClientShard>,
    ) -> Result<Self> {
        config.validate()?;
        sgd.validate()?;
        loss_weights.validate()?;
        if shards.len() != config.clients {
            return Err(Error::Config(format!(
                "{} shards for {} clients",
                shards.len(),
                config.clients
            )));
        }
        if let Some(s) = shards.iter().find(|s| s.is_empty()) {
            return Err(Error::Config(format!(
                "client {} has no samples",
                s.client_id
            )));
        }
        if spec.input_dim != train.input_dim() || spec.input_dim != test.input_dim() {
            return Err(Error::Config(format!(
                "model input_dim {} does not match image size {}",
                spec.input_dim,
                train.input_dim()
            )));
        }
        if spec.class_count != train.class_count || spec.class_count != test.class_count {
            return Err(Error::Config(
                "class_count differs between model and datasets".into(),
            ));
        }
        let mtae = Mtae::new(spec)?;
        let streams = RngStreams::new(config.seed);
        let params = mtae.init(&mut streams.stream(names::INIT, &[]));
        let at = AtState::new(config.at.loss_step, config.at.window, config.at.retain_prob);
        let mut svdd = SvddState::new(config.svdd.nu, config.svdd.activation_round);
        svdd.recenter = config.svdd.recenter;
        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            mtae,
            loss_weights,
            sgd,
            config,
            train,
            test,
            shards,
            streams,
            params,
            detector: None,
            at,
            svdd,
            round: 0,
            tracker: BestRoundTracker::default(),
            pool,
        })
    }

    pub fn params(&self) -> &MtaeParams<T> {
        &self.params
    }

    pub fn mtae(&self) -> &Mtae {
        &self.mtae
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn train_data(&self) -> &LabeledDataset<T> {
        &self.train
    }

    pub fn test_data(&self) -> &LabeledDataset<T> {
        &self.test
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn loss_weights(&self) -> &LossWeights {
        &self.loss_weights
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn detector(&self) -> Option<&OutlierModel<T>> {
        self.detector.as_ref()
    }

    pub fn svdd(&self) -> &SvddState<T> {
        &self.svdd
    }

    pub fn at_state(&self) -> &AtState<T> {
        &self.at
    }

    pub fn best(&self) -> Option<&MetricRecord> {
        self.tracker.best()
    }

    /// Metrics of the current global model on the test set.
    pub fn evaluate(&self, round: usize) -> Result<MetricRecord> {
        let out = self.mtae.infer(&self.params, &self.test.images)?;
        let cls =
            classification_metrics(&out.predictions(), &self.test.labels, self.test.class_count);
        let n = self.test.len().max(1) as f64;
        let (rows, cols) = (self.test.image_rows, self.test.image_cols);
        let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
        for i in 0..self.test.len() {
            let (rec, img) = (out.reconstruction.row(i), self.test.images.row(i));
            psnr_sum += psnr(rec, img, 1.0);
            ssim_sum += ssim(rec, img, rows, cols);
        }
        Ok(MetricRecord {
            round,
            accuracy: cls.accuracy,
            macro_precision: cls.macro_precision,
            macro_recall: cls.macro_recall,
            macro_f1: cls.macro_f1,
            psnr_db: psnr_sum / n,
            ssim: ssim_sum / n,
        })
    }

    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round;
        self.run_round_inner(round).map_err(|e| e.at_round(round))
    }

    fn run_round_inner(&mut self, round: usize) -> Result<RoundReport> {
        let cfg = &self.config;
        if cfg.svdd.enabled && self.svdd.needs_server_embeddings(round) {
            let z = self.mtae.embed(&self.params, &self.test.images)?;
            self.svdd
                .maybe_activate(round, &z, &self.test.labels, self.test.class_count)?;
        }

        let participants = select_clients(
            cfg.clients,
            cfg.clients_per_round,
            &mut self.streams.stream(names::CLIENTS, &[round as u64]),
        );
        let selector = match (cfg.mode, &self.detector, self.at.lt) {
            (SelectionMode::Ocsvm | SelectionMode::Iforest, Some(model), _) => Selector::Detector {
                model,
                contamination: cfg.contamination,
            },
            (SelectionMode::AdaptiveThreshold, _, Some(lt)) => Selector::Threshold {
                lt,
                retain_prob: cfg.at.retain_prob,
            },
            _ => Selector::None,
        };
        let selection_applied = round > cfg.warmup_round && !matches!(selector, Selector::None);
        let ctx = ClientContext {
            mtae: &self.mtae,
            loss_weights: &self.loss_weights,
            sgd: &self.sgd,
            data: &self.train,
            round,
            warmup_round: cfg.warmup_round,
            mode: cfg.mode,
            space: cfg.space,
            selector,
            svdd: cfg.svdd.enabled.then_some(&self.svdd),
            streams: self.streams,
        };
        let epochs = self.sgd.local_epochs;
        let global = &self.params;
        let shards = &self.shards;
        let work = |&id: &usize| client_update(&ctx, &shards[id], global, epochs);
        let returns: Vec<ClientReturn<T>> = match &self.pool {
            Some(pool) => {
                pool.install(|| participants.par_iter().map(work).collect::<Result<_>>())?
            }
            None => participants.iter().map(work).collect::<Result<_>>()?,
        };

        // Server-side selection state for the next round.
        let mut detector_fitted = false;
        let after_warmup = round >= cfg.warmup_round;
        if let Some(kind) = cfg.mode.detector() {
            let refit = after_warmup
                && (round.is_multiple_of(cfg.refit_interval) || round == cfg.warmup_round);
            if refit {
                let mut pooled = Matrix::zeros(0, 0);
                for r in &returns {
                    if let Some(k) = &r.kappa {
                        pooled.vstack(k)?;
                    }
                }
                if pooled.rows() >= 2 {
                    let mut rng = self.streams.stream(names::IFOREST, &[round as u64]);
                    self.detector = Some(OutlierModel::fit(
                        kind,
                        &pooled,
                        cfg.contamination,
                        &mut rng,
                    )?);
                    detector_fitted = true;
                }
            }
        }
        if cfg.mode == SelectionMode::AdaptiveThreshold && after_warmup {
            let metas: Vec<LossMeta<T>> = returns.iter().filter_map(|r| r.loss_meta).collect();
            let loss_sum = metas.iter().map(|m| m.selected_loss_sum).sum();
            let count = metas.iter().map(|m| m.selected_count).sum();
            self.at.control_ltr(loss_sum, count, round);
            let low: Vec<T> = metas.iter().map(|m| m.low).collect();
            let high: Vec<T> = metas.iter().map(|m| m.high).collect();
            self.at.lt = Some(calculate_lt(&low, &high, self.at.ltr)?);
        }

        self.params = aggregate(&returns)?;

        if self.svdd.active {
            let mut merged = DistanceReport::empty(self.test.class_count);
            for report in returns.iter().filter_map(|r| r.distances.as_ref()) {
                merged.merge(report);
            }
            self.svdd.radii = update_radii(&merged, self.svdd.nu, &self.svdd.radii);
        }

        let metrics = if round.is_multiple_of(self.config.eval_interval) {
            let record = self.evaluate(round)?;
            self.tracker.update(record);
            Some(record)
        } else {
            None
        };

        let removed: usize = returns.iter().map(|r| r.removed).sum();
        let removed_noisy: usize = returns.iter().map(|r| r.removed_noisy).sum();
        let at_mode = self.config.mode == SelectionMode::AdaptiveThreshold;
        self.round += 1;
        Ok(RoundReport {
            round,
            participants,
            sample_counts: returns.iter().map(|r| r.sample_count).collect(),
            shard_sizes: returns
                .iter()
                .map(|r| self.shards[r.client_id].len())
                .collect(),
            selection_applied,
            detector_fitted,
            removed,
            removed_noisy,
            removed_clean: removed - removed_noisy,
            next_threshold: self.at.lt.filter(|_| at_mode).map(Real::as_f64),
            ltr: at_mode.then(|| self.at.ltr.as_f64()),
            metrics,
        })
    }

    /// Runs the remaining rounds, calling `on_round` after each.
    pub fn run_with(&mut self, mut on_round: impl FnMut(&RoundReport)) -> Result<ExperimentResult> {
        let mut reports = Vec::with_capacity(self.config.rounds.saturating_sub(self.round));
        while self.round < self.config.rounds {
            let report = self.run_round()?;
            on_round(&report);
            reports.push(report);
        }
        let last = self.evaluate(self.round)?;
        let best = self.tracker.best().copied().unwrap_or(last);
        Ok(ExperimentResult {
            reports,
            best,
            last,
        })
    }

    pub fn run(&mut self) -> Result<ExperimentResult> {
        self.run_with(|_| {})
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{inject_closed_set, partition_noniid, synth_generate, PartitionScheme};
    use crate::nn::{ParamSet, ParamTensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_params(v: f64) -> MtaeParams<f64> {
        let one = |v| ParamSet::new(vec![ParamTensor::new(vec![1, 1], vec![v]).unwrap()]);
        MtaeParams {
            encoder: one(v),
            decoder: one(v),
            classifier: one(v),
        }
    }

    fn ret(client_id: usize, count: usize, v: f64) -> ClientReturn<f64> {
        ClientReturn {
            client_id,
            params: scalar_params(v),
            sample_count: count,
            kappa: None,
            loss_meta: None,
            distances: None,
            removed: 0,
            removed_noisy: 0,
        }
    }

    #[test]
    fn client_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_clients(5, 5, &mut rng), vec![0, 1, 2, 3, 4]);
        assert_eq!(select_clients(1, 1, &mut rng), vec![0]);
        let a = select_clients(100, 10, &mut ChaCha8Rng::seed_from_u64(9));
        let b = select_clients(100, 10, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn aggregation_cases() {
        let same = aggregate(&[ret(0, 3, 2.5), ret(1, 7, 2.5)]).unwrap();
        assert_eq!(same, scalar_params(2.5));

        let weighted = aggregate(&[ret(0, 1, 0.0), ret(1, 3, 4.0)]).unwrap();
        assert_eq!(weighted, scalar_params(3.0));

        let a = aggregate(&[ret(2, 2, 1.0), ret(0, 5, 7.0), ret(1, 1, -3.0)]).unwrap();
        let b = aggregate(&[ret(1, 1, -3.0), ret(2, 2, 1.0), ret(0, 5, 7.0)]).unwrap();
        assert_eq!(a, b);

        assert!(aggregate::<f64>(&[]).is_err());
        let mut odd = ret(1, 1, 0.0);
        odd.params.encoder = ParamSet::new(vec![ParamTensor::zeros(vec![2])]);
        assert!(matches!(
            aggregate(&[ret(0, 1, 0.0), odd]),
            Err(Error::Protocol(_))
        ));
    }

    fn small_setup(mode: SelectionMode, rounds: usize, warmup: usize) -> Simulation<f64> {
        let train = inject_closed_set(&synth_generate(3, 30, 6, 1), 0.4, 2).unwrap();
        let test = synth_generate(3, 10, 6, 3);
        let shards = partition_noniid(&train.labels, 3, 6, PartitionScheme::default(), 4).unwrap();
        let mut spec = MtaeSpec::desk_scale(36, 3);
        spec.encoder_hidden = vec![16];
        spec.decoder_hidden = vec![16];
        spec.embed_dim = 4;
        let mut cfg = FederationConfig::new(rounds, 6);
        cfg.clients_per_round = 3;
        cfg.warmup_round = warmup;
        cfg.refit_interval = 3;
        cfg.mode = mode;
        cfg.seed = 17;
        let sgd = SgdConfig {
            batch_size: 8,
            local_epochs: 2,
            ..SgdConfig::default()
        };
        Simulation::new(spec, LossWeights::default(), sgd, cfg, train, test, shards).unwrap()
    }

    #[test]
    fn zero_epochs_return_global_weights() {
        let sim = small_setup(SelectionMode::None, 4, 1);
        let ctx = ClientContext {
            mtae: &sim.mtae,
            loss_weights: &sim.loss_weights,
            sgd: &sim.sgd,
            data: &sim.train,
            round: 0,
            warmup_round: 1,
            mode: SelectionMode::None,
            space: SelectionSpace::Loss2d,
            selector: Selector::None,
            svdd: None,
            streams: sim.streams,
        };
        let out = client_update(&ctx, &sim.shards[0], &sim.params, 0).unwrap();
        assert_eq!(out.params, sim.params);
        assert_eq!(out.sample_count, sim.shards[0].len());
        assert!(out.kappa.is_none());
    }

    #[test]
    fn detector_refit_cadence_and_removal_gate() {
        let mut sim = small_setup(SelectionMode::Iforest, 12, 4);
        let reports = sim.run().unwrap().reports;
        let fitted: Vec<usize> = reports
            .iter()
            .filter(|r| r.detector_fitted)
            .map(|r| r.round)
            .collect();
        assert_eq!(fitted, vec![4, 6, 9]);
        for r in &reports {
            if r.round <= 4 {
                assert_eq!(r.removed, 0, "round {}", r.round);
                assert!(!r.selection_applied);
            } else {
                assert!(r.selection_applied);
            }
            assert!(r.removed_noisy <= r.removed);
            let shard_total: usize = r.shard_sizes.iter().sum();
            assert_eq!(r.selected_samples() + r.removed, shard_total);
        }
    }

    #[test]
    fn warmup_rounds_identical_across_modes() {
        let modes = [
            SelectionMode::None,
            SelectionMode::AdaptiveThreshold,
            SelectionMode::Ocsvm,
            SelectionMode::Iforest,
        ];
        let mut snapshots = Vec::new();
        for mode in modes {
            let mut sim = small_setup(mode, 10, 5);
            for _ in 0..5 {
                sim.run_round().unwrap();
            }
            snapshots.push(sim.params.clone());
        }
        for s in &snapshots[1..] {
            assert_eq!(s, &snapshots[0]);
        }
    }

    #[test]
    fn eval_rounds_and_zero_round_run() {
        let mut sim = small_setup(SelectionMode::None, 25, 5);
        let result = sim.run().unwrap();
        let evals: Vec<usize> = result
            .reports
            .iter()
            .filter_map(|r| r.metrics.map(|m| m.round))
            .collect();
        assert_eq!(evals, vec![0, 10, 20]);
        assert!(result.best.accuracy >= result.last.accuracy || result.best.round != 25);
        assert!(result.reports.iter().all(|r| r.removed == 0));

        let mut empty = small_setup(SelectionMode::None, 0, 0);
        let initial = empty.evaluate(0).unwrap();
        let result = empty.run().unwrap();
        assert!(result.reports.is_empty());
        assert_eq!(result.last, initial);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut a = small_setup(SelectionMode::AdaptiveThreshold, 12, 3);
        let mut b = small_setup(SelectionMode::AdaptiveThreshold, 12, 3);
        b.config.workers = 3;
        b.pool = Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(3)
                .build()
                .unwrap(),
        );
        assert_eq!(a.run().unwrap(), b.run().unwrap());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FederationConfig::new(10, 4);
        assert_eq!(cfg.clients_per_round, 1);
        cfg.warmup_round = 5;
        assert!(cfg.validate().is_ok());
        cfg.warmup_round = 10;
        assert!(cfg.validate().is_err());
        cfg.warmup_round = 5;
        cfg.clients_per_round = 5;
        assert!(cfg.validate().is_err());
        cfg.clients_per_round = 2;
        cfg.mode = SelectionMode::Ocsvm;
        cfg.contamination = 0.0;
        assert!(cfg.validate().is_err());
        cfg.contamination = 1.5;
        cfg.mode = SelectionMode::Iforest;
        assert!(cfg.validate().is_err());
    }
}
