//! Forward rendering of camera images, echosounder transients and
//! forward-looking sonar images from a Gaussian cloud.
//!
//! All three modalities share one depth-sorted [`SplatList`]. Sonar rays are
//! composited exactly like camera pixels; each visible splat then deposits
//! its accumulated `T·α` into range bins with the unnormalized weight
//! `exp(-(z-μ)²/(2σ_zz))`, restricted to bins within `μ ± 3√σ_zz`. Sonar
//! outputs are divided by the ray count so their mass does not depend on the
//! ray grid resolution.

mod splat;

pub use splat::{
    prepare_splats, Splat, SplatGeometry, SplatList, ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN,
};
pub(crate) use splat::{composite_ray, Hit};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GaussianCloud, SensorView};

/// Uniform range binning `[range_min, range_max)` split into `bins` cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RangeBinsRecord", into = "RangeBinsRecord")]
pub struct RangeBins {
    bins: usize,
    range_min: f64,
    range_max: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeBinsRecord {
    bins: usize,
    range_min: f64,
    range_max: f64,
}

impl TryFrom<RangeBinsRecord> for RangeBins {
    type Error = Error;
    fn try_from(r: RangeBinsRecord) -> Result<Self> {
        RangeBins::new(r.bins, r.range_min, r.range_max)
    }
}

impl From<RangeBins> for RangeBinsRecord {
    fn from(r: RangeBins) -> Self {
        RangeBinsRecord {
            bins: r.bins,
            range_min: r.range_min,
            range_max: r.range_max,
        }
    }
}

impl RangeBins {
    pub fn new(bins: usize, range_min: f64, range_max: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("need at least one range bin"));
        }
        if !(range_max > range_min) || !range_min.is_finite() || !range_max.is_finite() {
            return Err(Error::invalid(format!(
                "invalid range [{range_min}, {range_max}]"
            )));
        }
        Ok(Self {
            bins,
            range_min,
            range_max,
        })
    }

    pub fn len(&self) -> usize {
        self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.bins == 0
    }

    pub fn range_min(&self) -> f64 {
        self.range_min
    }

    pub fn range_max(&self) -> f64 {
        self.range_max
    }

    pub fn width(&self) -> f64 {
        (self.range_max - self.range_min) / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.range_min + (i as f64 + 0.5) * self.width()
    }

    /// Bin containing `range`, if inside `[range_min, range_max)`.
    pub fn index_of(&self, range: f64) -> Option<usize> {
        if !(range >= self.range_min && range < self.range_max) {
            return None;
        }
        let i = ((range - self.range_min) / self.width()).floor() as usize;
        Some(i.min(self.bins - 1))
    }

    /// Inclusive bin span whose centers lie within `mu ± 3·sqrt(var)`.
    pub(crate) fn span(&self, mu: f64, var: f64) -> Option<(usize, usize)> {
        let reach = 3.0 * var.sqrt();
        let w = self.width();
        let lo = ((mu - reach - self.range_min) / w - 0.5).ceil();
        let hi = ((mu + reach - self.range_min) / w - 0.5).floor();
        let lo = lo.max(0.0);
        let hi = hi.min(self.bins as f64 - 1.0);
        if !(lo <= hi) {
            return None;
        }
        Some((lo as usize, hi as usize))
    }
}

/// Range-resolved intensity from a single-element sonar.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientHistogram {
    pub bins: RangeBins,
    pub values: Vec<f64>,
}

impl TransientHistogram {
    pub fn new(bins: RangeBins, values: Vec<f64>) -> Result<Self> {
        if values.len() != bins.len() {
            return Err(Error::shape(bins.len(), values.len()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("transient values must be finite and nonnegative"));
        }
        Ok(Self { bins, values })
    }

    pub fn zeros(bins: RangeBins) -> Self {
        Self {
            values: vec![0.0; bins.len()],
            bins,
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Index of the largest bin (first on ties).
    pub fn peak(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Range-by-azimuth intensity from a forward-looking sonar; row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlsImage {
    pub bins: RangeBins,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl FlsImage {
    pub fn new(bins: RangeBins, rows: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::invalid("FLS image needs at least one row"));
        }
        if values.len() != rows * bins.len() {
            return Err(Error::shape(rows * bins.len(), values.len()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("FLS values must be finite and nonnegative"));
        }
        Ok(Self { bins, rows, values })
    }

    pub fn zeros(bins: RangeBins, rows: usize) -> Self {
        Self {
            values: vec![0.0; rows * bins.len()],
            bins,
            rows,
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let b = self.bins.len();
        &self.values[j * b..(j + 1) * b]
    }

    /// Sum over rows, i.e. the echosounder histogram this image marginalizes to.
    pub fn marginal(&self) -> Vec<f64> {
        let b = self.bins.len();
        let mut out = vec![0.0; b];
        for j in 0..self.rows {
            for (o, v) in out.iter_mut().zip(&self.values[j * b..(j + 1) * b]) {
                *o += v;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
    pub final_transmittance: Vec<f64>,
}

impl RenderedImage {
    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
            final_transmittance: vec![1.0; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }
}

/// Range binning and ray sampling for sonar renders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SonarConfig {
    pub bins: RangeBins,
    /// Sonar rays across the image plane (columns).
    #[serde(default = "default_grid")]
    pub grid_width: usize,
    /// Sonar rays across the image plane (rows).
    #[serde(default = "default_grid")]
    pub grid_height: usize,
    /// FLS azimuth rows.
    #[serde(default = "default_rows")]
    pub rows: usize,
}

fn default_grid() -> usize {
    64
}

fn default_rows() -> usize {
    32
}

impl SonarConfig {
    pub fn new(bins: RangeBins) -> Self {
        Self {
            bins,
            grid_width: default_grid(),
            grid_height: default_grid(),
            rows: default_rows(),
        }
    }

    pub fn with_grid(mut self, width: usize, height: usize) -> Self {
        self.grid_width = width;
        self.grid_height = height;
        self
    }

    pub fn with_rows(mut self, rows: usize) -> Self {
        self.rows = rows;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_width == 0 || self.grid_height == 0 {
            return Err(Error::invalid("sonar ray grid must be nonempty"));
        }
        if self.rows == 0 {
            return Err(Error::invalid("FLS rows must be at least one"));
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        self.grid_width * self.grid_height
    }

    /// Image-plane position of sonar ray `(a, b)`.
    pub fn ray_position(&self, view: &SensorView, a: usize, b: usize) -> (f64, f64) {
        (
            (a as f64 + 0.5) * view.width as f64 / self.grid_width as f64,
            (b as f64 + 0.5) * view.height as f64 / self.grid_height as f64,
        )
    }
}

/// Range bins and weights one splat deposits into.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SonarKernel {
    pub row: usize,
    pub first: usize,
    pub weights: Vec<f64>,
}

/// FLS row whose image band contains pixel height `y`.
pub(crate) fn fls_row(y: f64, height: usize, rows: usize) -> usize {
    let j = (y / height as f64 * rows as f64).floor();
    if j < 0.0 {
        0
    } else {
        (j as usize).min(rows - 1)
    }
}

pub(crate) fn sonar_kernel(s: &Splat, bins: &RangeBins, height: usize, rows: usize) -> SonarKernel {
    let row = fls_row(s.center[1], height, rows);
    match bins.span(s.depth, s.sigma_zz) {
        None => SonarKernel {
            row,
            first: 0,
            weights: Vec::new(),
        },
        Some((lo, hi)) => SonarKernel {
            row,
            first: lo,
            weights: (lo..=hi)
                .map(|i| {
                    let d = bins.center(i) - s.depth;
                    (-d * d / (2.0 * s.sigma_zz)).exp()
                })
                .collect(),
        },
    }
}

/// Camera render over a prepared splat list.
pub fn composite_image(list: &SplatList) -> RenderedImage {
    let (w, h) = (list.width, list.height);
    let rows: Vec<Vec<([f64; 3], f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut c = [0.0; 3];
                    let t = composite_ray(list, x as f64 + 0.5, y as f64 + 0.5, |hit| {
                        let s = &list.splats[hit.pos as usize];
                        let weight = hit.transmittance * hit.sample.alpha;
                        for k in 0..3 {
                            c[k] += weight * s.rgb[k];
                        }
                    });
                    (c, t)
                })
                .collect()
        })
        .collect();
    let mut img = RenderedImage::black(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (c, t)) in row.into_iter().enumerate() {
            img.pixels[y * w + x] = c;
            img.final_transmittance[y * w + x] = t;
        }
    }
    img
}

/// Σ over sonar rays of T·α for each splat, in splat-list order.
///
/// Each grid row is reduced separately and the partial sums are added in
/// row order, so the result does not depend on scheduling.
pub fn sonar_visibility(list: &SplatList, view: &SensorView, cfg: &SonarConfig) -> Vec<f64> {
    let n = list.len();
    if n == 0 {
        return Vec::new();
    }
    let partials: Vec<Vec<f64>> = (0..cfg.grid_height)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; n];
            for a in 0..cfg.grid_width {
                let (px, py) = cfg.ray_position(view, a, b);
                composite_ray(list, px, py, |hit| {
                    acc[hit.pos as usize] += hit.transmittance * hit.sample.alpha;
                });
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn deposit(
    list: &SplatList,
    visibility: &[f64],
    cfg: &SonarConfig,
    rows: usize,
    out: &mut [f64],
) {
    let b = cfg.bins.len();
    let norm = 1.0 / cfg.ray_count() as f64;
    for (s, v) in list.splats.iter().zip(visibility) {
        if *v == 0.0 {
            continue;
        }
        let k = sonar_kernel(s, &cfg.bins, list.height, rows);
        let base = if rows == 1 { 0 } else { k.row * b };
        for (i, w) in k.weights.iter().enumerate() {
            out[base + k.first + i] += v * w * norm;
        }
    }
}

pub(crate) fn echo_from_visibility(
    list: &SplatList,
    visibility: &[f64],
    cfg: &SonarConfig,
) -> TransientHistogram {
    let mut h = TransientHistogram::zeros(cfg.bins);
    deposit(list, visibility, cfg, 1, &mut h.values);
    h
}

pub(crate) fn fls_from_visibility(
    list: &SplatList,
    visibility: &[f64],
    cfg: &SonarConfig,
) -> FlsImage {
    let mut img = FlsImage::zeros(cfg.bins, cfg.rows);
    deposit(list, visibility, cfg, cfg.rows, &mut img.values);
    img
}

pub fn render_camera(cloud: &GaussianCloud, view: &SensorView) -> RenderedImage {
    composite_image(&prepare_splats(cloud, view))
}

pub fn render_echosounder(
    cloud: &GaussianCloud,
    view: &SensorView,
    cfg: &SonarConfig,
) -> Result<TransientHistogram> {
    cfg.validate()?;
    let list = prepare_splats(cloud, view);
    let vis = sonar_visibility(&list, view, cfg);
    Ok(echo_from_visibility(&list, &vis, cfg))
}

pub fn render_fls(cloud: &GaussianCloud, view: &SensorView, cfg: &SonarConfig) -> Result<FlsImage> {
    cfg.validate()?;
    let list = prepare_splats(cloud, view);
    let vis = sonar_visibility(&list, view, cfg);
    Ok(fls_from_visibility(&list, &vis, cfg))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modalities {
    pub camera: bool,
    pub echo: bool,
    pub fls: bool,
}

impl Modalities {
    pub const CAMERA: Modalities = Modalities {
        camera: true,
        echo: false,
        fls: false,
    };

    pub fn is_empty(&self) -> bool {
        !(self.camera || self.echo || self.fls)
    }

    /// Parses a comma-separated list such as `camera,echo`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut m = Modalities::default();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "camera" | "rgb" => m.camera = true,
                "echo" | "echosounder" => m.echo = true,
                "fls" => m.fls = true,
                "all" => {
                    m.camera = true;
                    m.echo = true;
                    m.fls = true;
                }
                other => return Err(Error::invalid(format!("unknown modality '{other}'"))),
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderBundle {
    pub image: Option<RenderedImage>,
    pub echo: Option<TransientHistogram>,
    pub fls: Option<FlsImage>,
}

/// Renders several modalities from a single shared splat list.
pub fn render_all(
    cloud: &GaussianCloud,
    view: &SensorView,
    modalities: Modalities,
    cfg: &SonarConfig,
) -> Result<RenderBundle> {
    if modalities.is_empty() {
        return Err(Error::invalid("no modality requested"));
    }
    let list = prepare_splats(cloud, view);
    let mut out = RenderBundle::default();
    if modalities.camera {
        out.image = Some(composite_image(&list));
    }
    if modalities.echo || modalities.fls {
        cfg.validate()?;
        let vis = sonar_visibility(&list, view, cfg);
        if modalities.echo {
            out.echo = Some(echo_from_visibility(&list, &vis, cfg));
        }
        if modalities.fls {
            out.fls = Some(fls_from_visibility(&list, &vis, cfg));
        }
    }
    Ok(out)
}
