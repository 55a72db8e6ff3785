use crate::math::{
    project, ray_space_jacobian, Mat3, Plane, Projection, SymMat2, SymMat3, Vec3, COV2D_EPS,
    Z_NEAR,
};
use crate::scene::{GaussianCloud, SensorView};

/// Smallest α that contributes to a ray.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// α is clamped to this value.
pub const ALPHA_MAX: f64 = 0.99;
/// Rays stop compositing once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

pub(crate) const TILE_SIZE: usize = 16;

/// Per-Gaussian data read while compositing rays.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    /// Row of the source Gaussian in the cloud.
    pub index: usize,
    /// Projected center in pixel coordinates.
    pub center: [f64; 2],
    /// Inverse of the projected pixel-space covariance.
    pub conic: SymMat2,
    pub opacity: f64,
    pub rgb: [f64; 3],
    /// Euclidean sensor-to-center distance (ray-space z).
    pub depth: f64,
    /// Ray-space variance along the range axis.
    pub sigma_zz: f64,
    /// Half extents of the box outside which α < 1/255.
    pub half_extent: [f64; 2],
}

/// Intermediate geometry kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGeometry {
    pub mean_cam: Vec3,
    pub jacobian: Mat3,
    pub cov_cam: Mat3,
    pub cov_ray: Mat3,
    pub cov_px: SymMat2,
    pub rotation: Mat3,
    pub scale: Vec3,
    /// Normalized quaternion and the norm of the raw one.
    pub quat_unit: [f64; 4],
    pub quat_norm: f64,
}

/// Depth-sorted splats of one view plus a tile index over the image plane.
#[derive(Clone, Debug)]
pub struct SplatList {
    pub splats: Vec<Splat>,
    pub geometry: Vec<SplatGeometry>,
    pub width: usize,
    pub height: usize,
    tiles_x: usize,
    tiles_y: usize,
    tiles: Vec<Vec<u32>>,
}

impl SplatList {
    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Positions (into `splats`, depth order) of splats that may cover `(px, py)`.
    pub(crate) fn candidates(&self, px: f64, py: f64) -> &[u32] {
        let tx = ((px / TILE_SIZE as f64).floor().max(0.0) as usize).min(self.tiles_x - 1);
        let ty = ((py / TILE_SIZE as f64).floor().max(0.0) as usize).min(self.tiles_y - 1);
        &self.tiles[ty * self.tiles_x + tx]
    }

    fn build_tiles(&mut self) {
        self.tiles_x = self.width.div_ceil(TILE_SIZE).max(1);
        self.tiles_y = self.height.div_ceil(TILE_SIZE).max(1);
        self.tiles = vec![Vec::new(); self.tiles_x * self.tiles_y];
        let tile = TILE_SIZE as f64;
        for (pos, s) in self.splats.iter().enumerate() {
            let clamp_x = |v: f64| ((v / tile).floor().max(0.0) as usize).min(self.tiles_x - 1);
            let clamp_y = |v: f64| ((v / tile).floor().max(0.0) as usize).min(self.tiles_y - 1);
            let x0 = clamp_x(s.center[0] - s.half_extent[0]);
            let x1 = clamp_x(s.center[0] + s.half_extent[0]);
            let y0 = clamp_y(s.center[1] - s.half_extent[1]);
            let y1 = clamp_y(s.center[1] + s.half_extent[1]);
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    self.tiles[ty * self.tiles_x + tx].push(pos as u32);
                }
            }
        }
    }
}

/// Projects every Gaussian into the view, culls invisible ones and sorts by range.
///
/// A Gaussian is culled when its camera depth is at or below [`Z_NEAR`], when
/// its opacity can never reach [`ALPHA_MIN`], or when its footprint (the
/// larger of the 3σ ellipse and the α ≥ 1/255 ellipse) misses the image.
pub fn prepare_splats(cloud: &GaussianCloud, view: &SensorView) -> SplatList {
    let mut entries: Vec<(Splat, SplatGeometry)> = Vec::with_capacity(cloud.len());
    for index in 0..cloud.len() {
        let Ok(g) = cloud.activate(index) else {
            continue;
        };
        let mean_cam = view.world_to_camera(&g.mean);
        if !(mean_cam.z > Z_NEAR) {
            continue;
        }
        let threshold = 255.0 * g.opacity;
        if !(threshold > 1.0) {
            continue;
        }
        let scale2 = g.scale.component_mul(&g.scale);
        let cov = g.rotation * Mat3::from_diagonal(&scale2) * g.rotation.transpose();
        let cov_cam = view.rotation * cov * view.rotation.transpose();
        let jacobian = ray_space_jacobian(&mean_cam);
        let cov_ray = jacobian * cov_cam * jacobian.transpose();
        let sym_ray = SymMat3::from_matrix(&cov_ray);
        let Projection::Cov2(xy) = project(&sym_ray, Plane::Xy) else {
            unreachable!()
        };
        let Projection::Variance(sigma_zz) = project(&sym_ray, Plane::Z) else {
            unreachable!()
        };
        let cov_px = SymMat2 {
            xx: view.fx * view.fx * xy.xx + COV2D_EPS,
            xy: view.fx * view.fy * xy.xy,
            yy: view.fy * view.fy * xy.yy + COV2D_EPS,
        };
        let Some(conic) = cov_px.inverse() else {
            continue;
        };
        if !(sigma_zz > 0.0) {
            continue;
        }
        let center = [
            view.fx * mean_cam.x / mean_cam.z + view.cx,
            view.fy * mean_cam.y / mean_cam.z + view.cy,
        ];
        let r2 = 2.0 * threshold.ln();
        let half_extent = [(r2 * cov_px.xx).sqrt(), (r2 * cov_px.yy).sqrt()];
        let cull_extent = [
            half_extent[0].max(3.0 * cov_px.xx.sqrt()),
            half_extent[1].max(3.0 * cov_px.yy.sqrt()),
        ];
        if center[0] + cull_extent[0] < 0.0
            || center[0] - cull_extent[0] > view.width as f64
            || center[1] + cull_extent[1] < 0.0
            || center[1] - cull_extent[1] > view.height as f64
        {
            continue;
        }
        let depth = mean_cam.norm();
        let raw_norm = crate::math::Quaternion::from_array(cloud.quats[index]).norm();
        entries.push((
            Splat {
                index,
                center,
                conic,
                opacity: g.opacity,
                rgb: g.rgb,
                depth,
                sigma_zz,
                half_extent,
            },
            SplatGeometry {
                mean_cam,
                jacobian,
                cov_cam,
                cov_ray,
                cov_px,
                rotation: g.rotation,
                scale: g.scale,
                quat_unit: g.quat.to_array(),
                quat_norm: raw_norm,
            },
        ));
    }
    // Ties broken by storage index so the order is total.
    entries.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.index.cmp(&b.0.index)));
    let (splats, geometry) = entries.into_iter().unzip();
    let mut list = SplatList {
        splats,
        geometry,
        width: view.width,
        height: view.height,
        tiles_x: 0,
        tiles_y: 0,
        tiles: Vec::new(),
    };
    list.build_tiles();
    list
}

/// α evaluation of one splat at an image-plane point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AlphaSample {
    pub alpha: f64,
    /// Unnormalized footprint value exp(power).
    pub footprint: f64,
    pub clamped: bool,
    pub dx: f64,
    pub dy: f64,
}

#[inline]
pub(crate) fn sample_alpha(s: &Splat, px: f64, py: f64) -> Option<AlphaSample> {
    let dx = px - s.center[0];
    let dy = py - s.center[1];
    let q = &s.conic;
    let power = -0.5 * (q.xx * dx * dx + 2.0 * q.xy * dx * dy + q.yy * dy * dy);
    if power > 0.0 {
        return None;
    }
    let footprint = power.exp();
    let raw = s.opacity * footprint;
    let clamped = raw > ALPHA_MAX;
    let alpha = if clamped { ALPHA_MAX } else { raw };
    if alpha < ALPHA_MIN {
        return None;
    }
    Some(AlphaSample {
        alpha,
        footprint,
        clamped,
        dx,
        dy,
    })
}

/// One composited contribution along a ray.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Hit {
    /// Position in the sorted splat list.
    pub pos: u32,
    /// Transmittance before this splat.
    pub transmittance: f64,
    pub sample: AlphaSample,
}

/// Front-to-back traversal of the splats covering `(px, py)`.
/// Returns the transmittance left after the last contribution.
#[inline]
pub(crate) fn composite_ray(
    list: &SplatList,
    px: f64,
    py: f64,
    mut visit: impl FnMut(Hit),
) -> f64 {
    let mut t = 1.0;
    for &pos in list.candidates(px, py) {
        let s = &list.splats[pos as usize];
        let Some(sample) = sample_alpha(s, px, py) else {
            continue;
        };
        visit(Hit {
            pos,
            transmittance: t,
            sample,
        });
        t *= 1.0 - sample.alpha;
        if t < TRANSMITTANCE_MIN {
            break;
        }
    }
    t
}
