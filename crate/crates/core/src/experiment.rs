//! Paired camera-only versus camera+sonar reconstructions on procedural scenes.
//!
//! Every variant trains from the same seed and initial cloud on the same
//! simulated views, then is scored on held-out poses outside the training arc
//! and against the scene's ground-truth surface points.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::metrics::{chamfer, cloud_from_gaussians, psnr, PointCloud, DEFAULT_OPACITY_FLOOR};
use crate::render::{render_camera, Modalities, RangeBins, SonarConfig};
use crate::scene::{Aabb, GaussianCloud, SensorView};
use crate::simulate::{
    gen_trajectory, procedural, shade_rgb, simulate_dataset, ProceduralScene, SimConfig,
    TrajectoryKind, SPHERE_RINGS,
};
use crate::train::{train, LossConfig, MeasurementScale, SonarKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    RgbOnly,
    RgbEcho,
    RgbFls,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::RgbOnly, Variant::RgbEcho, Variant::RgbFls];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RgbOnly => "rgb",
            Variant::RgbEcho => "rgb+echo",
            Variant::RgbFls => "rgb+fls",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSetup {
    pub scene: String,
    /// Training arc in degrees.
    pub arc_degrees: f64,
    pub views: usize,
    /// Held-out arc angles in degrees, measured from the first training pose.
    pub novel_degrees: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Half side of a cube around the scene target that replaces the scene bounds
    /// for seeding Gaussians and for the sonar range window.
    pub volume_half_extent: Option<f64>,
    pub sonar_grid: usize,
    pub bins: usize,
    pub fls_rows: usize,
    pub weight: f64,
    pub measurement_scale: MeasurementScale,
    pub train: TrainConfig,
}

impl FusionSetup {
    /// Two textureless plates seen from ten poses on a 5° arc.
    pub fn limited_baseline() -> Self {
        let mut train = TrainConfig::default();
        train.iterations = 2000;
        train.init.gaussians = 1500;
        train.densify.start = 400;
        train.densify.stop = 1600;
        train.densify.max_gaussians = 3000;
        train.densify.opacity_reset_interval = 0;
        Self {
            scene: "plates".into(),
            arc_degrees: 5.0,
            views: 10,
            novel_degrees: vec![15.0, 30.0, 45.0],
            width: 48,
            height: 48,
            focal: 96.0,
            volume_half_extent: None,
            sonar_grid: 32,
            bins: 128,
            fls_rows: 8,
            weight: 3.0,
            measurement_scale: MeasurementScale::Raw,
            train,
        }
    }

    /// The Cornell-box scene under the limited-baseline protocol.
    pub fn cornell() -> Self {
        Self {
            scene: "cornell".into(),
            ..Self::limited_baseline()
        }
    }

    pub fn loss(&self, variant: Variant) -> LossConfig {
        match variant {
            Variant::RgbOnly => LossConfig::camera_only(),
            Variant::RgbEcho | Variant::RgbFls => LossConfig {
                weight: self.weight,
                sonar_kind: if variant == Variant::RgbEcho {
                    SonarKind::Echo
                } else {
                    SonarKind::Fls
                },
                measurement_scale: self.measurement_scale,
            },
        }
    }
}

/// Simulated training views, held-out views and ground truth for one setup.
pub struct FusionData {
    pub scene: ProceduralScene,
    pub train: Dataset,
    pub novel: Vec<(SensorView, Image)>,
    pub truth: PointCloud,
}

fn arc_views(p: &ProceduralScene, setup: &FusionSetup, extent: f64, n: usize) -> Result<Vec<SensorView>> {
    let base = SensorView::look_at(p.eye, p.target, p.up, setup.width, setup.height, setup.focal)?;
    Ok(gen_trajectory(TrajectoryKind::Arc, extent, n, &base, p.target, p.up)?.views)
}

/// Range bins spanning the nearest to the farthest corner of `volume` over all views.
fn volume_bins(volume: &Aabb, views: &[SensorView], bins: usize) -> Result<RangeBins> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in views {
        let c = v.center();
        for k in 0..8 {
            let corner = Vec3::new(
                if k & 1 == 0 { volume.min[0] } else { volume.max[0] },
                if k & 2 == 0 { volume.min[1] } else { volume.max[1] },
                if k & 4 == 0 { volume.min[2] } else { volume.max[2] },
            );
            let d = (corner - c).norm();
            hi = hi.max(d);
        }
        let nearest = Vec3::from(std::array::from_fn(|i| c[i].clamp(volume.min[i], volume.max[i])));
        lo = lo.min((nearest - c).norm());
    }
    RangeBins::new(bins, lo, hi)
}

pub fn prepare(setup: &FusionSetup) -> Result<FusionData> {
    let p = procedural(&setup.scene)?;
    let views = arc_views(&p, setup, setup.arc_degrees, setup.views)?;
    let volume = match setup.volume_half_extent {
        Some(h) if !(h > 0.0) => return Err(Error::invalid("volume_half_extent must be positive")),
        Some(h) => Aabb::around(p.target, h),
        None => p.bounds,
    };
    let bins = volume_bins(&volume, &views, setup.bins)?;
    let sonar = SonarConfig::new(bins)
        .with_grid(setup.sonar_grid, setup.sonar_grid)
        .with_rows(setup.fls_rows);
    let cfg = SimConfig {
        sonar,
        light: p.light,
        modalities: Modalities {
            camera: true,
            echo: true,
            fls: true,
        },
    };
    let trajectory = gen_trajectory(
        TrajectoryKind::Arc,
        setup.arc_degrees,
        setup.views,
        &views[0],
        p.target,
        p.up,
    )?;
    let train = simulate_dataset(&p.scene, &trajectory, &cfg, volume)?;
    let mut novel = Vec::with_capacity(setup.novel_degrees.len());
    for &deg in &setup.novel_degrees {
        let v = arc_views(&p, setup, deg, 2)?.pop().expect("two views");
        let img = shade_rgb(&v, &p.scene, &p.light)?;
        novel.push((v, img));
    }
    let truth = p.scene.surface_points(SPHERE_RINGS);
    Ok(FusionData {
        scene: p,
        train,
        novel,
        truth,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub variant: Variant,
    pub seed: u64,
    /// Infinite when no Gaussian clears the opacity floor.
    pub chamfer: f64,
    /// Mean PSNR over held-out views.
    pub novel_psnr: f64,
    pub gaussians: usize,
}

/// Chamfer distance, or infinity for an empty reconstruction.
pub fn reconstruction_chamfer(cloud: &GaussianCloud, truth: &PointCloud) -> Result<f64> {
    let pred = cloud_from_gaussians(cloud, DEFAULT_OPACITY_FLOOR);
    if pred.is_empty() {
        return Ok(f64::INFINITY);
    }
    chamfer(&pred, truth)
}

pub fn novel_view_psnr(cloud: &GaussianCloud, novel: &[(SensorView, Image)]) -> Result<f64> {
    if novel.is_empty() {
        return Err(Error::invalid("no held-out views"));
    }
    let mut sum = 0.0;
    for (v, gt) in novel {
        sum += psnr(gt, &Image::from(&render_camera(cloud, v)))?;
    }
    Ok(sum / novel.len() as f64)
}

/// Training dataset restricted to the modalities a variant may see.
fn variant_dataset(data: &Dataset, variant: Variant) -> Dataset {
    let observations = data
        .observations
        .iter()
        .map(|o| Observation {
            view: o.view.clone(),
            image: o.image.clone(),
            echo: (variant == Variant::RgbEcho).then(|| o.echo.clone()).flatten(),
            fls: (variant == Variant::RgbFls).then(|| o.fls.clone()).flatten(),
        })
        .collect();
    Dataset {
        observations,
        sonar: data.sonar,
        bounds: data.bounds,
    }
}

pub fn run_variant(setup: &FusionSetup, data: &FusionData, variant: Variant, seed: u64) -> Result<VariantScore> {
    let mut cfg = setup.train;
    cfg.seed = seed;
    let dataset = variant_dataset(&data.train, variant);
    let out = train(&dataset, &setup.loss(variant), &cfg)?;
    Ok(VariantScore {
        variant,
        seed,
        chamfer: reconstruction_chamfer(&out.cloud, &data.truth)?,
        novel_psnr: novel_view_psnr(&out.cloud, &data.novel)?,
        gaussians: out.cloud.len(),
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Sample standard deviation (divisor `n − 1`).
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Vector from the scene target to the first training pose, for reporting.
pub fn viewing_distance(data: &FusionData) -> f64 {
    let c: Vec3 = data.train.observations[0].view.center();
    (c - data.scene.target).norm()
}
