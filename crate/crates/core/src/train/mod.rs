//! Losses, the Adam optimizer, adaptive density control and the training loop.

pub mod loss;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::grad::{backward, LossBreakdown};
use crate::math::{logit, sigmoid, Vec3};
use crate::scene::{init_from_transient, init_random, CloudGradients, GaussianCloud, ParamGroup};

pub use loss::{LossConfig, MeasurementScale, SonarKind};

/// Per-group Adam step sizes. The means rate is multiplied by the scene extent
/// and decays exponentially from `means` to `means_final`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub means: f64,
    pub means_final: f64,
    pub quats: f64,
    pub log_scales: f64,
    pub opacity_logits: f64,
    pub colors: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1.6e-4,
            means_final: 1.6e-6,
            quats: 1e-3,
            log_scales: 5e-3,
            opacity_logits: 0.05,
            colors: 2.5e-3,
        }
    }
}

impl LearningRates {
    fn validate(&self) -> Result<()> {
        let all = [
            self.means,
            self.means_final,
            self.quats,
            self.log_scales,
            self.opacity_logits,
            self.colors,
        ];
        if all.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("learning rates must be finite and positive"));
        }
        Ok(())
    }

    /// Concrete per-group rates at `iteration` of `iterations`.
    pub fn at(&self, iteration: usize, iterations: usize, extent: f64) -> GroupRates {
        let t = if iterations > 1 {
            iteration as f64 / (iterations - 1) as f64
        } else {
            0.0
        };
        let means = (self.means.ln() * (1.0 - t) + self.means_final.ln() * t).exp() * extent;
        GroupRates([
            means,
            self.quats,
            self.log_scales,
            self.opacity_logits,
            self.colors,
        ])
    }
}

/// Step size per [`ParamGroup`], in [`ParamGroup::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRates(pub [f64; 5]);

impl GroupRates {
    pub fn uniform(rate: f64) -> Self {
        Self([rate; 5])
    }

    fn of(&self, group: ParamGroup) -> f64 {
        self.0[ParamGroup::ALL.iter().position(|g| *g == group).unwrap()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    /// Iterations between density updates; 0 disables densification.
    pub interval: usize,
    pub start: usize,
    pub stop: usize,
    /// Mean positional-gradient norm above which a Gaussian is cloned or split.
    pub grad_threshold: f64,
    /// Gaussians whose largest scale exceeds this fraction of the scene extent are split, smaller ones cloned.
    pub split_fraction: f64,
    /// Gaussians with activated opacity below this are removed.
    pub prune_opacity: f64,
    /// Upper bound on the cloud size after densification.
    pub max_gaussians: usize,
    /// Iterations between opacity resets inside the densification window; 0 disables.
    pub opacity_reset_interval: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start: 500,
            stop: 5000,
            grad_threshold: 2e-4,
            split_fraction: 0.01,
            prune_opacity: 0.005,
            max_gaussians: 200_000,
            opacity_reset_interval: 3000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// Uniform in the dataset bounds.
    #[default]
    Random,
    /// Random Gaussians plus as many again seeded from echosounder energy.
    Transient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub method: InitMethod,
    pub gaussians: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            method: InitMethod::Random,
            gaussians: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rates: LearningRates,
    pub densify: DensifyConfig,
    pub init: InitConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 7000,
            rates: LearningRates::default(),
            densify: DensifyConfig::default(),
            init: InitConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        self.rates.validate()?;
        if !(self.densify.prune_opacity >= 0.0) || !(self.densify.grad_threshold >= 0.0) {
            return Err(Error::invalid("densify thresholds must be nonnegative"));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: CloudGradients,
    pub v: CloudGradients,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: CloudGradients::zeros(n),
            v: CloudGradients::zeros(n),
            step: 0,
        }
    }

    /// Keeps rows `keep` in order, then appends `fresh` zeroed rows.
    fn remap(&mut self, keep: &[usize], fresh: usize) {
        self.m = self.m.select(keep);
        self.v = self.v.select(keep);
        self.m.extend_from(&CloudGradients::zeros(fresh));
        self.v.extend_from(&CloudGradients::zeros(fresh));
    }
}

/// One bias-corrected Adam update of every parameter group.
pub fn adam_step(
    cloud: &mut GaussianCloud,
    grads: &CloudGradients,
    state: &mut AdamState,
    rates: &GroupRates,
) -> Result<()> {
    if grads.len() != cloud.len() || state.m.len() != cloud.len() || state.v.len() != cloud.len() {
        return Err(Error::shape(cloud.len(), grads.len()));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient passed to adam_step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for group in ParamGroup::ALL {
        let lr = rates.of(group);
        let g = grads.group(group);
        let m = state.m.group_mut(group);
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
        }
        let v = state.v.group_mut(group);
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
        }
        let (m, v) = (state.m.group(group), state.v.group(group));
        for ((p, mi), vi) in cloud.group_mut(group).iter_mut().zip(m).zip(v) {
            *p -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Accumulated positional-gradient norms used to pick densification candidates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one iteration's mean gradients; Gaussians with an all-zero gradient were not seen.
    pub fn accumulate(&mut self, grads: &CloudGradients) {
        for (i, g) in grads.means.iter().enumerate() {
            if *g != [0.0; 3] {
                self.grad_sum[i] += Vec3::from(*g).norm();
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Child scale divisor for split Gaussians.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Clones small and splits large high-gradient Gaussians, prunes transparent
/// ones and remaps optimizer rows to match. Resets `stats`.
///
/// A split replaces the parent with two children drawn from the parent's
/// distribution, each with scales divided by 1.6.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    state: &mut AdamState,
    stats: &mut DensifyStats,
    cfg: &DensifyConfig,
    scene_extent: f64,
    rng: &mut impl Rng,
) -> Result<DensifyOutcome> {
    let n = cloud.len();
    if stats.grad_sum.len() != n || state.m.len() != n {
        return Err(Error::shape(n, stats.grad_sum.len()));
    }
    let mut out = DensifyOutcome::default();
    let mut keep = Vec::with_capacity(n);
    let mut fresh = GaussianCloud::default();
    let budget = cfg.max_gaussians.saturating_sub(n);
    for i in 0..n {
        let opacity = sigmoid(cloud.opacity_logits[i]);
        if opacity < cfg.prune_opacity {
            out.pruned += 1;
            continue;
        }
        let grow = stats.mean(i) > cfg.grad_threshold && out.cloned + out.split < budget;
        let max_scale = cloud.log_scales[i].iter().cloned().fold(f64::MIN, f64::max).exp();
        if grow && max_scale > cfg.split_fraction * scene_extent {
            let g = cloud.activate(i)?;
            let child_log_scale = cloud.log_scales[i].map(|s| s - SPLIT_SCALE_DIVISOR.ln());
            for _ in 0..2 {
                let z = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let m = g.mean + g.rotation * g.scale.component_mul(&z);
                fresh.push(
                    [m.x, m.y, m.z],
                    cloud.quats[i],
                    child_log_scale,
                    cloud.opacity_logits[i],
                    cloud.colors[i],
                );
            }
            out.split += 1;
            continue;
        }
        keep.push(i);
        if grow {
            fresh.extend_from(&cloud.select(&[i]));
            out.cloned += 1;
        }
    }
    let mut next = cloud.select(&keep);
    next.extend_from(&fresh);
    state.remap(&keep, fresh.len());
    *cloud = next;
    *stats = DensifyStats::new(cloud.len());
    Ok(out)
}

/// Opacity that [`reset_opacity`] caps every Gaussian at.
pub const RESET_OPACITY: f64 = 0.01;

/// Caps every opacity at [`RESET_OPACITY`] and clears the matching optimizer moments.
pub fn reset_opacity(cloud: &mut GaussianCloud, state: &mut AdamState) {
    let cap = logit(RESET_OPACITY);
    for (i, o) in cloud.opacity_logits.iter_mut().enumerate() {
        *o = o.min(cap);
        state.m.opacity_logits[i] = 0.0;
        state.v.opacity_logits[i] = 0.0;
    }
}

/// One training-log row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub camera_loss: f64,
    pub sonar_loss: f64,
    pub total_loss: f64,
    pub gaussians: usize,
}

pub struct TrainOutcome {
    pub cloud: GaussianCloud,
    pub log: Vec<LogRow>,
}

/// Half the diagonal of the dataset bounds.
pub fn scene_extent(dataset: &Dataset) -> f64 {
    0.5 * dataset.bounds.diagonal()
}

fn usable(obs: &Observation, loss: &LossConfig) -> bool {
    obs.image.is_some()
        || (loss.uses_sonar()
            && match loss.sonar_kind {
                SonarKind::Echo => obs.echo.is_some(),
                SonarKind::Fls => obs.fls.is_some(),
                SonarKind::None => false,
            })
}

fn check_dataset(dataset: &Dataset, loss: &LossConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Missing("dataset has no observations".into()));
    }
    if loss.uses_sonar() {
        let has = dataset.observations.iter().any(|o| match loss.sonar_kind {
            SonarKind::Echo => o.echo.is_some(),
            SonarKind::Fls => o.fls.is_some(),
            SonarKind::None => true,
        });
        if !has {
            let name = match loss.sonar_kind {
                SonarKind::Echo => "echo",
                _ => "fls",
            };
            return Err(Error::Missing(format!(
                "sonar_kind={name} but the dataset has no {name} measurements"
            )));
        }
    } else if dataset.observations.iter().all(|o| o.image.is_none()) {
        return Err(Error::Missing(
            "dataset has no camera images and the loss uses no sonar".into(),
        ));
    }
    Ok(())
}

/// Initial cloud per `cfg.init`.
pub fn initial_cloud(dataset: &Dataset, cfg: &TrainConfig) -> Result<GaussianCloud> {
    let base = init_random(cfg.init.gaussians, &dataset.bounds, cfg.seed)?;
    match cfg.init.method {
        InitMethod::Random => Ok(base),
        InitMethod::Transient => {
            let transients: Vec<_> = dataset
                .observations
                .iter()
                .filter_map(|o| {
                    o.echo
                        .clone()
                        .or_else(|| o.fls.as_ref().map(|f| crate::render::TransientHistogram {
                            bins: f.bins,
                            values: f.marginal(),
                        }))
                        .map(|h| (o.view.clone(), h))
                })
                .collect();
            init_from_transient(&base, &transients, cfg.init.gaussians, cfg.seed ^ 0x5eed)
        }
    }
}

/// Initializes per `cfg.init` and optimizes. See [`train_from`].
pub fn train(dataset: &Dataset, loss: &LossConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cloud = initial_cloud(dataset, cfg)?;
    train_from(dataset, cloud, loss, cfg)
}

/// Optimizes `cloud` against `dataset`, one uniformly sampled view per iteration.
///
/// The returned cloud is rounded to `f32` so that it equals its checkpoint.
pub fn train_from(
    dataset: &Dataset,
    mut cloud: GaussianCloud,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    check_dataset(dataset, loss)?;
    cloud.validate()?;
    let pool: Vec<&Observation> = dataset
        .observations
        .iter()
        .filter(|o| usable(o, loss))
        .collect();
    let extent = scene_extent(dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(cloud.len());
    let mut stats = DensifyStats::new(cloud.len());
    let mut log = Vec::with_capacity(cfg.iterations);
    let d = &cfg.densify;

    for it in 0..cfg.iterations {
        let obs = pool[rng.gen_range(0..pool.len())];
        let (l, grads): (LossBreakdown, _) =
            backward(&cloud, std::slice::from_ref(obs), &dataset.sonar, loss).map_err(|e| {
                Error::NonFinite(format!("training diverged at iteration {it}: {e}"))
            })?;
        log.push(LogRow {
            iteration: it,
            camera_loss: l.camera,
            sonar_loss: l.sonar,
            total_loss: l.total,
            gaussians: cloud.len(),
        });
        stats.accumulate(&grads);
        adam_step(
            &mut cloud,
            &grads,
            &mut state,
            &cfg.rates.at(it, cfg.iterations, extent),
        )?;
        let step = it + 1;
        if d.interval > 0 && step >= d.start && step <= d.stop && step % d.interval == 0 {
            let o = densify_and_prune(&mut cloud, &mut state, &mut stats, d, extent, &mut rng)?;
            log::debug!("iteration {step}: {o:?}, {} gaussians", cloud.len());
            if cloud.is_empty() {
                return Err(Error::Degenerate(format!(
                    "every gaussian was pruned at iteration {step}"
                )));
            }
        }
        let r = d.opacity_reset_interval;
        if r > 0 && d.interval > 0 && step < d.stop && step % r == 0 {
            reset_opacity(&mut cloud, &mut state);
        }
    }
    cloud.quantize_f32();
    Ok(TrainOutcome { cloud, log })
}

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
