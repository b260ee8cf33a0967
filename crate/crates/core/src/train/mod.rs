//! The training loop: pair construction (augmentation-only, prior-guided, or
//! queue-based), SGD with momentum, EMA teacher for the distillation
//! objective, and the support-queue machinery.

mod eval;
mod metrics;

pub use eval::{embed_ids, knn_accuracy, linear_probe, projection_feature_std, recall_at_1};
pub use metrics::{runtime_report, MetricsLog, StepRecord};

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_pipeline, AugmentationPipeline};
use crate::data::{Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{
    self, ema_update, forward, images_to_matrix, init_params, register_params, EncoderConfig,
    InitSpec, ModelGrads, ModelParams, TeacherState,
};
use crate::model::graph::Graph;
use crate::objectives::{
    self, barlow_graph, byol_graph, extract_report, infonce_graph, queue_substitute, vicreg_graph,
    LossNodes, LossReport, VicregCoeffs,
};
use crate::rng::{mix, stream};
use crate::sampler::{build_bank, EmbeddingBank, GpsConfig, GpsMode, PriorEncoder, SupportQueue};

const TAG_AUG: u64 = 0xA06;
const TAG_SHUFFLE: u64 = 0x5F1E;
const TAG_SAMPLER: u64 = 0x6B5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Simclr,
    Byol,
    Barlow,
    Vicreg,
    Nnclr,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Simclr => "simclr",
            Objective::Byol => "byol",
            Objective::Barlow => "barlow",
            Objective::Vicreg => "vicreg",
            Objective::Nnclr => "nnclr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Baseline,
    Gps,
    Nnclr,
}

impl PairMode {
    pub fn name(&self) -> &'static str {
        match self {
            PairMode::Baseline => "baseline",
            PairMode::Gps => "gps",
            PairMode::Nnclr => "nnclr",
        }
    }
}

/// Objective coefficients, all overridable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoeffs {
    pub temperature: f64,
    pub barlow_lambda: f64,
    pub vicreg: VicregCoeffs,
    pub vicreg_gamma: f64,
    pub byol_momentum: f64,
}

impl Default for LossCoeffs {
    fn default() -> Self {
        Self {
            temperature: objectives::DEFAULT_TEMPERATURE,
            barlow_lambda: objectives::DEFAULT_BARLOW_LAMBDA,
            vicreg: VicregCoeffs::default(),
            vicreg_gamma: objectives::DEFAULT_VICREG_GAMMA,
            byol_momentum: objectives::DEFAULT_BYOL_MOMENTUM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub pair_mode: PairMode,
    pub gps: Option<GpsConfig>,
    pub prior: Option<PriorEncoder>,
    pub aug_setting: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub classifier_lr: f64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub init: InitSpec,
    pub queue_capacity: Option<usize>,
    pub loss: LossCoeffs,
}

impl TrainConfig {
    /// Desk-scale defaults; the documented larger-scale configuration keeps
    /// the same structure at 400 epochs and batch 256.
    pub fn new(objective: Objective, pair_mode: PairMode, encoder: EncoderConfig) -> Self {
        Self {
            objective,
            pair_mode,
            gps: None,
            prior: None,
            aug_setting: "rhflip".into(),
            epochs: 50,
            batch_size: 64,
            lr: 0.1,
            weight_decay: 1e-4,
            momentum: 0.9,
            classifier_lr: 0.3,
            seed: 0,
            encoder,
            init: InitSpec::Random,
            queue_capacity: None,
            loss: LossCoeffs::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !["strong", "rhflip", "none"].contains(&self.aug_setting.as_str()) {
            return Err(Error::Config(format!("unknown aug_setting {:?}", self.aug_setting)));
        }
        if self.lr < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("lr and weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("sgd momentum must lie in [0, 1)".into()));
        }
        match self.pair_mode {
            PairMode::Gps => {
                if self.gps.is_none() || self.prior.is_none() {
                    return Err(Error::Config("gps pair mode needs gps config and prior".into()));
                }
            }
            PairMode::Baseline | PairMode::Nnclr => {
                if self.gps.is_some() {
                    return Err(Error::Config("gps config is only valid in gps pair mode".into()));
                }
            }
        }
        let is_nnclr_obj = matches!(self.objective, Objective::Nnclr);
        let is_nnclr_mode = matches!(self.pair_mode, PairMode::Nnclr);
        if is_nnclr_obj != is_nnclr_mode {
            return Err(Error::Config("nnclr objective and nnclr pair mode go together".into()));
        }
        if is_nnclr_obj != self.queue_capacity.is_some() {
            return Err(Error::Config("queue_capacity is required exactly for nnclr".into()));
        }
        if matches!(self.objective, Objective::Byol) && self.encoder.predictor_widths.is_none() {
            return Err(Error::Config("byol needs a predictor head".into()));
        }
        if !(self.loss.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.loss.byol_momentum) {
            return Err(Error::Config("byol momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Indexed positive pairs with their augmented views and the seeds that
/// produced them. Rebuilding a view from (id, seed) is bit-reproducible.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub ids_a: Vec<usize>,
    pub ids_b: Vec<usize>,
    pub views_a: Vec<Image>,
    pub views_b: Vec<Image>,
    pub rng_trace: Vec<(u64, u64)>,
}

/// Construct a positive-pair batch.
///
/// Baseline and nnclr modes pair each sample with itself (the nnclr
/// substitution happens inside its loss); gps mode pairs each sample with its
/// selected neighbor. View seeds depend only on `aug_seed` and the position,
/// never on the mode, so runs differing only in pairing stay comparable.
pub fn build_pairs(
    mode: PairMode,
    bank: Option<&EmbeddingBank>,
    gps: Option<&GpsConfig>,
    dataset: &Dataset,
    batch_ids: &[usize],
    pipeline: &AugmentationPipeline,
    aug_seed: u64,
    sampler_rng: &mut ChaCha8Rng,
) -> Result<PairBatch> {
    let ids_a: Vec<usize> = batch_ids.to_vec();
    let ids_b: Vec<usize> = match mode {
        PairMode::Baseline | PairMode::Nnclr => ids_a.clone(),
        PairMode::Gps => {
            let bank = bank.ok_or_else(|| Error::Config("gps mode needs an embedding bank".into()))?;
            let cfg = gps.ok_or_else(|| Error::Config("gps mode needs a gps config".into()))?;
            cfg.validate(bank.k_max())?;
            ids_a
                .iter()
                .map(|&id| match cfg.mode {
                    GpsMode::TauBall => bank.gps_positive(id, cfg),
                    GpsMode::KnnRandom => bank.knn_positive(id, cfg, sampler_rng),
                })
                .collect()
        }
    };
    let rng_trace: Vec<(u64, u64)> = (0..ids_a.len())
        .map(|i| (mix(aug_seed, i as u64, 0, 0), mix(aug_seed, i as u64, 1, 0)))
        .collect();
    let views: Vec<(Image, Image)> = ids_a
        .par_iter()
        .zip(ids_b.par_iter())
        .zip(rng_trace.par_iter())
        .map(|((&ia, &ib), &(sa, sb))| {
            (
                pipeline.apply(&dataset.sample(ia).image, sa),
                pipeline.apply(&dataset.sample(ib).image, sb),
            )
        })
        .collect();
    let (views_a, views_b) = views.into_iter().unzip();
    Ok(PairBatch { ids_a, ids_b, views_a, views_b, rng_trace })
}

struct SgdState {
    velocity: Vec<Array2<f64>>,
}

impl SgdState {
    fn new(params: &ModelParams) -> Self {
        Self { velocity: params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect() }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads, lr: f64, momentum: f64, wd: f64) {
        for ((theta, g), v) in params
            .tensors_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(&mut self.velocity)
        {
            v.zip_mut_with(g, |vi, &gi| *vi = momentum * *vi + gi);
            if wd > 0.0 {
                v.zip_mut_with(theta, |vi, &ti| *vi += wd * ti);
            }
            theta.zip_mut_with(v, |ti, &vi| *ti -= lr * vi);
        }
    }
}

/// Loss + exact gradients for one batch, with the report extracted from the
/// same graph evaluation.
fn step_loss<F>(params: &ModelParams, build: F) -> Result<(LossReport, ModelGrads)>
where
    F: FnOnce(&mut Graph, &model::ParamIds) -> Result<LossNodes>,
{
    let mut g = Graph::new();
    let ids = register_params(&mut g, params, true);
    let nodes = build(&mut g, &ids)?;
    let report = extract_report(&g, &nodes)?;
    g.backward(nodes.total);
    let tensors: Vec<Array2<f64>> = ids.flat().iter().map(|&id| g.grad(id).clone()).collect();
    for t in &tensors {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
    }
    Ok((report, ModelGrads { tensors }))
}

fn average_nodes(g: &mut Graph, a: &LossNodes, b: &LossNodes) -> LossNodes {
    let half = |g: &mut Graph, x, y| {
        let s = g.add(x, y);
        g.scale(s, 0.5)
    };
    let total = half(g, a.total, b.total);
    let distance = half(g, a.distance, b.distance);
    let diversity = half(g, a.diversity, b.diversity);
    let components = a
        .components
        .iter()
        .zip(&b.components)
        .map(|((name, xa), (_, xb))| (name.clone(), half(g, *xa, *xb)))
        .collect();
    LossNodes { total, distance, diversity, components }
}

/// Train an encoder on the split's train tier. Deterministic given the
/// config seed.
pub fn train(config: &TrainConfig, dataset: &Dataset, split: &SplitSpec) -> Result<(ModelParams, MetricsLog)> {
    config.validate()?;
    if split.train_ids.is_empty() {
        return Err(Error::Argument("train split is empty".into()));
    }
    if dataset.channels() != config.encoder.input_channels {
        return Err(Error::Config(format!(
            "dataset has {} channels, encoder expects {}",
            dataset.channels(),
            config.encoder.input_channels
        )));
    }
    let pipeline = make_pipeline(&config.aug_setting, config.encoder.input_hw)?;
    let train_ids: Vec<usize> = split.train_ids.iter().copied().collect();
    let train_view = dataset.subset(&train_ids)?;

    let bank = match config.pair_mode {
        PairMode::Gps => {
            let prior = config.prior.as_ref().unwrap();
            let gps = config.gps.as_ref().unwrap();
            let k_max = match gps.mode {
                GpsMode::KnnRandom => gps.k,
                GpsMode::TauBall => 1,
            };
            if k_max >= train_view.len() {
                return Err(Error::Config(format!(
                    "k {k_max} needs more than {} training samples",
                    train_view.len()
                )));
            }
            Some(build_bank(prior, &train_view, k_max)?)
        }
        _ => None,
    };

    let mut params = init_params(&config.encoder, config.seed, &config.init)?;
    let mut teacher = match config.objective {
        Objective::Byol => Some(TeacherState::new(&params, config.loss.byol_momentum)?),
        _ => None,
    };
    let mut queue = match config.objective {
        Objective::Nnclr => Some(SupportQueue::new(config.queue_capacity.unwrap())?),
        _ => None,
    };
    let mut sgd = SgdState::new(&params);
    let mut sampler_rng = stream(config.seed, TAG_SAMPLER, 0, 0);
    let mut log = MetricsLog::new();

    let mut step = 0usize;
    let mut batch = 0u64;
    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..train_view.len()).collect();
        order.shuffle(&mut stream(config.seed, TAG_SHUFFLE, epoch as u64, 0));
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let step_start = Instant::now();
            let aug_seed = mix(config.seed, TAG_AUG, batch, 0);
            batch += 1;
            let pairs = build_pairs(
                config.pair_mode,
                bank.as_ref(),
                config.gps.as_ref(),
                &train_view,
                chunk,
                &pipeline,
                aug_seed,
                &mut sampler_rng,
            )?;
            let x_a = images_to_matrix(&pairs.views_a);
            let x_b = images_to_matrix(&pairs.views_b);

            let outcome = run_step(
                config,
                &mut params,
                teacher.as_mut(),
                queue.as_mut(),
                &mut sgd,
                &x_a,
                &x_b,
            )
            .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;

            if let Some(report) = outcome {
                log.push_step(StepRecord {
                    step,
                    epoch,
                    objective: config.objective.name().to_string(),
                    report,
                    step_seconds: step_start.elapsed().as_secs_f64(),
                });
                step += 1;
            }
        }
        log.epoch_seconds.push(epoch_start.elapsed().as_secs_f64());
    }
    Ok((params, log))
}

/// One gradient step; returns None for queue warm-up batches that skip the
/// loss entirely.
fn run_step(
    config: &TrainConfig,
    params: &mut ModelParams,
    teacher: Option<&mut TeacherState>,
    queue: Option<&mut SupportQueue>,
    sgd: &mut SgdState,
    x_a: &Array2<f64>,
    x_b: &Array2<f64>,
) -> Result<Option<LossReport>> {
    let coeffs = config.loss;
    let cfg_encoder = config.encoder.clone();
    let (report, grads) = match config.objective {
        Objective::Simclr => step_loss(params, |g, ids| {
            let xa = g.constant(x_a.clone());
            let xb = g.constant(x_b.clone());
            let (_, z1, _) = model::forward_nodes(g, ids, xa, &cfg_encoder);
            let (_, z2, _) = model::forward_nodes(g, ids, xb, &cfg_encoder);
            Ok(infonce_graph(g, z1, z2, coeffs.temperature))
        })?,
        Objective::Barlow => step_loss(params, |g, ids| {
            let xa = g.constant(x_a.clone());
            let xb = g.constant(x_b.clone());
            let (_, z1, _) = model::forward_nodes(g, ids, xa, &cfg_encoder);
            let (_, z2, _) = model::forward_nodes(g, ids, xb, &cfg_encoder);
            Ok(barlow_graph(g, z1, z2, coeffs.barlow_lambda))
        })?,
        Objective::Vicreg => step_loss(params, |g, ids| {
            let xa = g.constant(x_a.clone());
            let xb = g.constant(x_b.clone());
            let (_, z1, _) = model::forward_nodes(g, ids, xa, &cfg_encoder);
            let (_, z2, _) = model::forward_nodes(g, ids, xb, &cfg_encoder);
            Ok(vicreg_graph(g, z1, z2, coeffs.vicreg, coeffs.vicreg_gamma))
        })?,
        Objective::Byol => {
            let teacher_ref = teacher.as_ref().expect("validated");
            let t_a = forward(&teacher_ref.params, x_a)?.projections;
            let t_b = forward(&teacher_ref.params, x_b)?.projections;
            step_loss(params, |g, ids| {
                let xa = g.constant(x_a.clone());
                let xb = g.constant(x_b.clone());
                let (_, _, p1) = model::forward_nodes(g, ids, xa, &cfg_encoder);
                let (_, _, p2) = model::forward_nodes(g, ids, xb, &cfg_encoder);
                let (p1, p2) = (p1.expect("byol has a predictor"), p2.expect("byol has a predictor"));
                let tb = g.constant(t_b.clone());
                let ta = g.constant(t_a.clone());
                let fwd = byol_graph(g, p1, tb);
                let rev = byol_graph(g, p2, ta);
                Ok(average_nodes(g, &fwd, &rev))
            })?
        }
        Objective::Nnclr => {
            let queue_ref = queue.expect("validated");
            let z1 = forward(params, x_a)?.projections;
            if queue_ref.len() < config.batch_size {
                // warm-up: feed the queue, no gradient step
                queue_ref.push(&z1);
                return Ok(None);
            }
            let substituted = queue_substitute(&z1, queue_ref)?;
            let out = step_loss(params, |g, ids| {
                let xb = g.constant(x_b.clone());
                let (_, z2, _) = model::forward_nodes(g, ids, xb, &cfg_encoder);
                let sub = g.constant(substituted.clone());
                Ok(infonce_graph(g, sub, z2, coeffs.temperature))
            })?;
            queue_ref.push(&z1);
            out
        }
    };
    sgd.step(params, &grads, config.lr, config.momentum, config.weight_decay);
    if let Some(t) = teacher {
        let m = t.momentum;
        ema_update(&mut t.params, params, m)?;
    }
    Ok(Some(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::model::{Activation, Arch};
    use crate::sampler::TieBreak;
    use std::collections::BTreeSet;

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            arch: Arch::Mlp,
            input_hw: 8,
            input_channels: 3,
            hidden_widths: vec![12],
            embed_dim: 6,
            projector_widths: vec![8, 4],
            predictor_widths: None,
            activation: Activation::Relu,
        }
    }

    fn full_split(n: usize) -> SplitSpec {
        SplitSpec {
            train_ids: (0..n).collect(),
            dss_ids: BTreeSet::new(),
            dsu_ids: BTreeSet::new(),
            duu_ids: BTreeSet::new(),
        }
    }

    #[test]
    fn gps_pairs_with_tiny_tau_collapse_to_baseline_pairs() {
        let ds = generate_synthetic(2, 2, 4, 8, 0.1, false, 3).unwrap();
        let bank = build_bank(&PriorEncoder::IdentityPixels, &ds, 1).unwrap();
        let cfg = GpsConfig {
            mode: GpsMode::TauBall,
            tau: 1e-12,
            tie_break: TieBreak::PreferNonself,
            ..GpsConfig::default()
        };
        let pipeline = make_pipeline("rhflip", 8).unwrap();
        let ids: Vec<usize> = (0..ds.len()).collect();
        let mut rng = stream(0, 0, 0, 0);
        let gps_pairs =
            build_pairs(PairMode::Gps, Some(&bank), Some(&cfg), &ds, &ids, &pipeline, 5, &mut rng).unwrap();
        let base_pairs =
            build_pairs(PairMode::Baseline, None, None, &ds, &ids, &pipeline, 5, &mut rng).unwrap();
        assert_eq!(gps_pairs.ids_b, base_pairs.ids_b);
        assert_eq!(gps_pairs.views_b, base_pairs.views_b);
        assert_eq!(gps_pairs.rng_trace, base_pairs.rng_trace);
    }

    #[test]
    fn baseline_pairs_with_identity_pipeline_have_equal_views() {
        let ds = generate_synthetic(1, 2, 3, 8, 0.1, false, 1).unwrap();
        let pipeline = make_pipeline("none", 8).unwrap();
        let ids: Vec<usize> = (0..ds.len()).collect();
        let mut rng = stream(0, 0, 0, 0);
        let pairs = build_pairs(PairMode::Baseline, None, None, &ds, &ids, &pipeline, 9, &mut rng).unwrap();
        assert_eq!(pairs.views_a, pairs.views_b);
    }

    #[test]
    fn flip_closed_gps_pairs_are_exact_mirrors() {
        let ds = generate_synthetic(2, 2, 4, 8, 0.05, true, 11).unwrap();
        // flip-invariant prior: mean of image and its mirror, via a bank file
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flipinv.bank");
        let n = ds.len();
        let d = 8 * 8 * 3;
        let mut m = Array2::zeros((n, d));
        for s in ds.samples() {
            let mirror = s.image.hflip();
            for (j, (a, b)) in s.image.pixels().iter().zip(mirror.pixels()).enumerate() {
                m[[s.id, j]] = 0.5 * (a + b);
            }
        }
        crate::data::save_bank(&path, &m).unwrap();
        let bank = build_bank(&PriorEncoder::File { path }, &ds, 1).unwrap();
        let cfg = GpsConfig {
            mode: GpsMode::TauBall,
            tau: 1e-9,
            tie_break: TieBreak::PreferNonself,
            ..GpsConfig::default()
        };
        let pipeline = make_pipeline("none", 8).unwrap();
        let ids: Vec<usize> = (0..n).collect();
        let mut rng = stream(0, 0, 0, 0);
        let pairs =
            build_pairs(PairMode::Gps, Some(&bank), Some(&cfg), &ds, &ids, &pipeline, 2, &mut rng).unwrap();
        for i in 0..n {
            assert_eq!(pairs.views_b[i], pairs.views_a[i].hflip(), "pair {i} is not a mirror");
            assert_ne!(pairs.ids_a[i], pairs.ids_b[i]);
        }
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let ds = generate_synthetic(2, 2, 4, 8, 0.1, false, 5).unwrap();
        let mut config = TrainConfig::new(Objective::Simclr, PairMode::Baseline, small_encoder());
        config.epochs = 0;
        config.seed = 42;
        let (params, log) = train(&config, &ds, &full_split(ds.len())).unwrap();
        let init = init_params(&config.encoder, 42, &InitSpec::Random).unwrap();
        assert_eq!(params, init);
        assert!(log.steps.is_empty());
    }

    #[test]
    fn single_step_with_zero_lr_leaves_params_unchanged() {
        let ds = generate_synthetic(1, 2, 4, 8, 0.1, false, 6).unwrap();
        let mut config = TrainConfig::new(Objective::Simclr, PairMode::Baseline, small_encoder());
        config.epochs = 1;
        config.batch_size = 16;
        config.lr = 0.0;
        config.seed = 7;
        let (params, log) = train(&config, &ds, &full_split(ds.len())).unwrap();
        let init = init_params(&config.encoder, 7, &InitSpec::Random).unwrap();
        assert_eq!(params, init);
        assert_eq!(log.steps.len(), 1);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let ds = generate_synthetic(2, 2, 6, 8, 0.1, false, 9).unwrap();
        let mut config = TrainConfig::new(Objective::Vicreg, PairMode::Baseline, small_encoder());
        config.epochs = 3;
        config.batch_size = 8;
        config.lr = 0.05;
        config.seed = 13;
        let (pa, la) = train(&config, &ds, &full_split(ds.len())).unwrap();
        let (pb, lb) = train(&config, &ds, &full_split(ds.len())).unwrap();
        assert_eq!(pa, pb);
        let losses_a: Vec<f64> = la.steps.iter().map(|s| s.report.total).collect();
        let losses_b: Vec<f64> = lb.steps.iter().map(|s| s.report.total).collect();
        assert_eq!(losses_a, losses_b);
    }

    #[test]
    fn all_objectives_run_and_log() {
        let ds = generate_synthetic(2, 2, 4, 8, 0.1, false, 21).unwrap();
        for objective in [Objective::Simclr, Objective::Byol, Objective::Barlow, Objective::Vicreg, Objective::Nnclr] {
            let mut encoder = small_encoder();
            let pair_mode = match objective {
                Objective::Nnclr => PairMode::Nnclr,
                _ => PairMode::Baseline,
            };
            if matches!(objective, Objective::Byol) {
                encoder.predictor_widths = Some(vec![6, 4]);
            }
            let mut config = TrainConfig::new(objective, pair_mode, encoder);
            config.epochs = 2;
            config.batch_size = 8;
            config.lr = 0.01;
            if matches!(objective, Objective::Nnclr) {
                config.queue_capacity = Some(64);
            }
            let (_, log) = train(&config, &ds, &full_split(ds.len())).unwrap();
            assert!(!log.steps.is_empty(), "{objective:?} logged no steps");
            for s in &log.steps {
                assert!(s.report.total.is_finite());
                assert_eq!(s.objective, config.objective.name());
            }
        }
    }

    #[test]
    fn gps_knn_training_runs() {
        let ds = generate_synthetic(2, 2, 6, 8, 0.1, false, 33).unwrap();
        let mut config = TrainConfig::new(Objective::Simclr, PairMode::Gps, small_encoder());
        config.epochs = 2;
        config.batch_size = 8;
        config.gps = Some(GpsConfig { mode: GpsMode::KnnRandom, k: 4, ..GpsConfig::default() });
        config.prior = Some(PriorEncoder::LabelOracle { seed: 1 });
        let (_, log) = train(&config, &ds, &full_split(ds.len())).unwrap();
        assert!(!log.steps.is_empty());
    }

    #[test]
    fn config_validation_rejects_inconsistencies() {
        let enc = small_encoder();
        let mut c = TrainConfig::new(Objective::Simclr, PairMode::Gps, enc.clone());
        assert!(c.validate().is_err()); // gps mode without gps/prior
        c = TrainConfig::new(Objective::Nnclr, PairMode::Baseline, enc.clone());
        assert!(c.validate().is_err()); // objective and mode must match
        c = TrainConfig::new(Objective::Nnclr, PairMode::Nnclr, enc.clone());
        assert!(c.validate().is_err()); // missing queue capacity
        c.queue_capacity = Some(32);
        assert!(c.validate().is_ok());
        c = TrainConfig::new(Objective::Byol, PairMode::Baseline, enc);
        assert!(c.validate().is_err()); // byol needs a predictor
    }
}
