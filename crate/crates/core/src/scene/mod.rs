//! Optimizable Gaussian parameters, sensor poses, and initialization.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, Mat3, Quaternion, Vec3};
use crate::render::TransientHistogram;

/// Degree-0 spherical harmonic constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Default activated opacity of freshly initialized Gaussians.
pub const INIT_OPACITY: f64 = 0.1;

/// Pinhole sensor pose shared by the camera and the collocated sonar.
///
/// `rotation` and `translation` map world points into camera space
/// (x right, y down, z forward). Pixel `(i, j)` has its center at
/// `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ViewRecord", try_from = "ViewRecord")]
pub struct SensorView {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl From<SensorView> for ViewRecord {
    fn from(v: SensorView) -> Self {
        let r = &v.rotation;
        ViewRecord {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [v.translation.x, v.translation.y, v.translation.z],
            fx: v.fx,
            fy: v.fy,
            cx: v.cx,
            cy: v.cy,
            width: v.width,
            height: v.height,
        }
    }
}

impl TryFrom<ViewRecord> for SensorView {
    type Error = Error;

    fn try_from(r: ViewRecord) -> Result<Self> {
        let m = r.rotation;
        SensorView::new(
            Mat3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            Vec3::from(r.translation),
            [r.fx, r.fy, r.cx, r.cy],
            r.width,
            r.height,
        )
    }
}

impl SensorView {
    /// `intrinsics` is `[fx, fy, cx, cy]` in pixels.
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid(format!("focal lengths must be positive ({fx}, {fy})")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image size must be nonzero"));
        }
        let orth = (rotation * rotation.transpose() - Mat3::identity()).abs().max();
        if !(orth < 1e-6) || !(rotation.determinant() > 0.0) {
            return Err(Error::invalid("view rotation is not a proper rotation"));
        }
        if !translation.iter().chain([cx, cy].iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("view translation or principal point".into()));
        }
        Ok(Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at the world origin looking down +z with centered principal point.
    pub fn identity(width: usize, height: usize, focal: f64) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            fx: focal,
            fy: focal,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: usize,
        height: usize,
        focal: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up vector is parallel to the viewing direction"))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            rotation,
            translation,
            [focal, focal, 0.5 * width as f64, 0.5 * height as f64],
            width,
            height,
        )
    }

    /// Sensor position in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Unnormalized camera-space direction through image-plane point `(px, py)`.
    pub fn camera_direction(&self, px: f64, py: f64) -> Vec3 {
        Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0)
    }

    /// Unit world-space direction through image-plane point `(px, py)`.
    pub fn world_direction(&self, px: f64, py: f64) -> Vec3 {
        (self.rotation.transpose() * self.camera_direction(px, py)).normalize()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn around(center: Vec3, half_extent: f64) -> Self {
        Self {
            min: [
                center.x - half_extent,
                center.y - half_extent,
                center.z - half_extent,
            ],
            max: [
                center.x + half_extent,
                center.y + half_extent,
                center.z + half_extent,
            ],
        }
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|k| !(self.max[k] > self.min[k]))
    }

    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|k| (self.max[k] - self.min[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }
}

/// Parameter groups of a [`GaussianCloud`], in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Means,
    Quats,
    LogScales,
    OpacityLogits,
    Colors,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Means,
        ParamGroup::Quats,
        ParamGroup::LogScales,
        ParamGroup::OpacityLogits,
        ParamGroup::Colors,
    ];

    /// Scalars per Gaussian.
    pub fn width(self) -> usize {
        match self {
            ParamGroup::Means | ParamGroup::LogScales | ParamGroup::Colors => 3,
            ParamGroup::Quats => 4,
            ParamGroup::OpacityLogits => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Means => "means",
            ParamGroup::Quats => "quats",
            ParamGroup::LogScales => "log_scales",
            ParamGroup::OpacityLogits => "opacity_logits",
            ParamGroup::Colors => "colors",
        }
    }
}

/// Generates the parallel-array storage shared by clouds and their gradients.
macro_rules! parameter_arrays {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, Default, PartialEq)]
        pub struct $name {
            pub means: Vec<[f64; 3]>,
            pub quats: Vec<[f64; 4]>,
            pub log_scales: Vec<[f64; 3]>,
            pub opacity_logits: Vec<f64>,
            pub colors: Vec<[f64; 3]>,
        }

        impl $name {
            pub fn len(&self) -> usize {
                self.means.len()
            }

            pub fn is_empty(&self) -> bool {
                self.means.is_empty()
            }

            pub fn group(&self, group: ParamGroup) -> &[f64] {
                match group {
                    ParamGroup::Means => self.means.as_flattened(),
                    ParamGroup::Quats => self.quats.as_flattened(),
                    ParamGroup::LogScales => self.log_scales.as_flattened(),
                    ParamGroup::OpacityLogits => &self.opacity_logits,
                    ParamGroup::Colors => self.colors.as_flattened(),
                }
            }

            pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
                match group {
                    ParamGroup::Means => self.means.as_flattened_mut(),
                    ParamGroup::Quats => self.quats.as_flattened_mut(),
                    ParamGroup::LogScales => self.log_scales.as_flattened_mut(),
                    ParamGroup::OpacityLogits => &mut self.opacity_logits,
                    ParamGroup::Colors => self.colors.as_flattened_mut(),
                }
            }

            /// New instance holding rows `indices` in that order.
            pub fn select(&self, indices: &[usize]) -> Self {
                Self {
                    means: indices.iter().map(|&i| self.means[i]).collect(),
                    quats: indices.iter().map(|&i| self.quats[i]).collect(),
                    log_scales: indices.iter().map(|&i| self.log_scales[i]).collect(),
                    opacity_logits: indices.iter().map(|&i| self.opacity_logits[i]).collect(),
                    colors: indices.iter().map(|&i| self.colors[i]).collect(),
                }
            }

            pub fn extend_from(&mut self, other: &Self) {
                self.means.extend_from_slice(&other.means);
                self.quats.extend_from_slice(&other.quats);
                self.log_scales.extend_from_slice(&other.log_scales);
                self.opacity_logits.extend_from_slice(&other.opacity_logits);
                self.colors.extend_from_slice(&other.colors);
            }

            /// True when every parameter array has the same row count.
            pub fn lengths_agree(&self) -> bool {
                let n = self.means.len();
                self.quats.len() == n
                    && self.log_scales.len() == n
                    && self.opacity_logits.len() == n
                    && self.colors.len() == n
            }
        }
    };
}

parameter_arrays!(
    /// Raw optimizable parameters of N anisotropic Gaussians.
    ///
    /// Activations: scale = exp(log_scale), opacity = logistic(logit),
    /// rgb = clamp(SH_C0·color + 0.5, 0, 1), rotation from the normalized quaternion.
    GaussianCloud
);

parameter_arrays!(
    /// Loss gradients with the same layout as [`GaussianCloud`].
    CloudGradients
);

impl CloudGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![[0.0; 3]; n],
            quats: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
        }
    }

    pub fn all_finite(&self) -> bool {
        ParamGroup::ALL
            .iter()
            .all(|g| self.group(*g).iter().all(|v| v.is_finite()))
    }
}

/// Activated view of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivatedGaussian {
    pub mean: Vec3,
    /// Normalized quaternion.
    pub quat: Quaternion,
    pub rotation: Mat3,
    pub scale: Vec3,
    pub opacity: f64,
    pub rgb: [f64; 3],
}

pub fn color_from_sh(sh: f64) -> f64 {
    (SH_C0 * sh + 0.5).clamp(0.0, 1.0)
}

pub fn sh_from_color(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

impl GaussianCloud {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            means: Vec::with_capacity(n),
            quats: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    pub fn push(
        &mut self,
        mean: [f64; 3],
        quat: [f64; 4],
        log_scale: [f64; 3],
        opacity_logit: f64,
        color: [f64; 3],
    ) {
        self.means.push(mean);
        self.quats.push(quat);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(opacity_logit);
        self.colors.push(color);
    }

    /// Appends a Gaussian given in activated form.
    pub fn push_activated(
        &mut self,
        mean: Vec3,
        quat: Quaternion,
        scale: Vec3,
        opacity: f64,
        rgb: [f64; 3],
    ) {
        self.push(
            [mean.x, mean.y, mean.z],
            quat.to_array(),
            [scale.x.ln(), scale.y.ln(), scale.z.ln()],
            logit(opacity),
            rgb.map(sh_from_color),
        );
    }

    pub fn activate(&self, index: usize) -> Result<ActivatedGaussian> {
        let quat = Quaternion::from_array(self.quats[index]).normalized()?;
        let ls = self.log_scales[index];
        Ok(ActivatedGaussian {
            mean: Vec3::from(self.means[index]),
            quat,
            rotation: quat.unit_to_rotation(),
            scale: Vec3::new(ls[0].exp(), ls[1].exp(), ls[2].exp()),
            opacity: sigmoid(self.opacity_logits[index]),
            rgb: self.colors[index].map(color_from_sh),
        })
    }

    pub fn opacity(&self, index: usize) -> f64 {
        sigmoid(self.opacity_logits[index])
    }

    /// Checks array lengths and finiteness.
    pub fn validate(&self) -> Result<()> {
        if !self.lengths_agree() {
            return Err(Error::invalid("gaussian parameter arrays differ in length"));
        }
        for g in ParamGroup::ALL {
            if self.group(g).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gaussian {}", g.name())));
            }
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32`, so checkpoints round-trip exactly.
    pub fn quantize_f32(&mut self) {
        for g in ParamGroup::ALL {
            for v in self.group_mut(g) {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        ParamGroup::ALL.iter().map(|g| g.width() * self.len()).sum()
    }
}

fn default_log_scale(diagonal: f64, n: usize) -> f64 {
    (diagonal / (n as f64).cbrt() / 3.0).ln()
}

fn random_unit_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|v| v / n);
        }
    }
}

/// `n` Gaussians with means uniform in `bounds`, random orientations,
/// isotropic scales and low opacity. Deterministic per seed.
pub fn init_random(n: usize, bounds: &Aabb, seed: u64) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::invalid("init_random needs at least one gaussian"));
    }
    if bounds.is_degenerate() {
        return Err(Error::invalid("initialization box is degenerate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_scale = default_log_scale(bounds.diagonal(), n);
    let opacity_logit = logit(INIT_OPACITY);
    let mut cloud = GaussianCloud::with_capacity(n);
    for _ in 0..n {
        let mean = std::array::from_fn(|k| rng.gen_range(bounds.min[k]..bounds.max[k]));
        let quat = random_unit_quat(&mut rng);
        cloud.push(mean, quat, [log_scale; 3], opacity_logit, [0.0; 3]);
    }
    Ok(cloud)
}

/// Appends `n_extra` Gaussians placed where the transients carry energy.
///
/// Each seed picks a view uniformly, a range bin with probability
/// proportional to its value, and an image-plane point uniformly over the
/// view's frustum, then sits at the bin-center range along that ray.
pub fn init_from_transient(
    base: &GaussianCloud,
    transients: &[(SensorView, TransientHistogram)],
    n_extra: usize,
    seed: u64,
) -> Result<GaussianCloud> {
    let mut cloud = base.clone();
    if n_extra == 0 {
        return Ok(cloud);
    }
    if transients.is_empty() {
        return Err(Error::Missing("no transients to seed from".into()));
    }
    let mut samplers = Vec::with_capacity(transients.len());
    for (_, hist) in transients {
        if hist.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("transient histograms must be nonnegative"));
        }
        let sampler = WeightedIndex::new(&hist.values)
            .map_err(|_| Error::Degenerate("transient histogram has no energy".into()))?;
        samplers.push(sampler);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(n_extra);
    for _ in 0..n_extra {
        let v = rng.gen_range(0..transients.len());
        let (view, hist) = &transients[v];
        let bin = samplers[v].sample(&mut rng);
        let px = rng.gen_range(0.0..view.width as f64);
        let py = rng.gen_range(0.0..view.height as f64);
        let range = hist.bins.center(bin);
        means.push(view.center() + view.world_direction(px, py) * range);
    }

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for m in &means {
        for k in 0..3 {
            lo[k] = lo[k].min(m[k]);
            hi[k] = hi[k].max(m[k]);
        }
    }
    let min_width = transients
        .iter()
        .map(|(_, h)| h.bins.width())
        .fold(f64::INFINITY, f64::min);
    let diagonal = Aabb::new(lo, hi).diagonal().max(min_width * 3.0);
    let log_scale = default_log_scale(diagonal, n_extra);
    let opacity_logit = logit(INIT_OPACITY);
    for m in means {
        let quat = random_unit_quat(&mut rng);
        cloud.push([m.x, m.y, m.z], quat, [log_scale; 3], opacity_logit, [0.0; 3]);
    }
    Ok(cloud)
}
