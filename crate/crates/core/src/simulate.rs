//! Ground-truth generator: procedural and OBJ scenes, ray-cast depth and
//! Lambertian images, depth-histogram sonar measurements and restricted
//! sensor trajectories.

use std::path::Path;

use nalgebra::{Rotation3, Unit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_dataset, Dataset, Observation};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::metrics::{write_ply, PointCloud};
use crate::render::{FlsImage, Modalities, RangeBins, SonarConfig, TransientHistogram};
use crate::scene::{Aabb, SensorView};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub vertices: [Vec3; 3],
    pub albedo: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub albedo: [f64; 3],
}

/// Triangles plus analytic spheres. Spheres are intersected exactly and only
/// tessellated when ground-truth points are requested.
#[derive(Clone, Debug, Default)]
pub struct TriScene {
    triangles: Vec<Triangle>,
    spheres: Vec<Sphere>,
    bvh: Vec<BvhNode>,
    order: Vec<u32>,
}

#[derive(Clone, Copy, Debug)]
struct BvhNode {
    min: Vec3,
    max: Vec3,
    /// Leaf: `count > 0`, triangles `order[start..start + count]`. Inner: children at `start`, `start + 1`.
    start: u32,
    count: u32,
}

const BVH_LEAF: usize = 4;

/// Nearest surface point along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    /// Distance from the ray origin (the direction is unit length).
    pub distance: f64,
    /// Unit geometric normal facing the ray origin.
    pub normal: Vec3,
    pub albedo: [f64; 3],
}

fn check_finite(v: &Vec3) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("scene vertex".into()))
    }
}

impl TriScene {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn spheres(&self) -> &[Sphere] {
        &self.spheres
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty() && self.spheres.is_empty()
    }

    pub fn add_triangle(&mut self, vertices: [Vec3; 3], albedo: [f64; 3]) -> Result<()> {
        vertices.iter().try_for_each(check_finite)?;
        self.triangles.push(Triangle { vertices, albedo });
        self.bvh.clear();
        Ok(())
    }

    pub fn add_sphere(&mut self, center: Vec3, radius: f64, albedo: [f64; 3]) -> Result<()> {
        check_finite(&center)?;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("sphere radius must be positive, got {radius}")));
        }
        self.spheres.push(Sphere {
            center,
            radius,
            albedo,
        });
        Ok(())
    }

    /// Planar quad `origin + s·u + t·v`, `s, t ∈ [0, 1]`, as a `divisions × divisions` grid.
    pub fn add_quad(
        &mut self,
        origin: Vec3,
        u: Vec3,
        v: Vec3,
        divisions: usize,
        albedo: [f64; 3],
    ) -> Result<()> {
        let n = divisions.max(1);
        let p = |i: usize, j: usize| origin + u * (i as f64 / n as f64) + v * (j as f64 / n as f64);
        for i in 0..n {
            for j in 0..n {
                self.add_triangle([p(i, j), p(i + 1, j), p(i + 1, j + 1)], albedo)?;
                self.add_triangle([p(i, j), p(i + 1, j + 1), p(i, j + 1)], albedo)?;
            }
        }
        Ok(())
    }

    /// Closed axis-aligned box with each face subdivided.
    pub fn add_box(&mut self, min: Vec3, max: Vec3, divisions: usize, albedo: [f64; 3]) -> Result<()> {
        let d = max - min;
        if !(d.x > 0.0 && d.y > 0.0 && d.z > 0.0) {
            return Err(Error::invalid("box must have positive extent"));
        }
        let (ex, ey, ez) = (Vec3::x() * d.x, Vec3::y() * d.y, Vec3::z() * d.z);
        self.add_quad(min, ey, ex, divisions, albedo)?;
        self.add_quad(min + ez, ex, ey, divisions, albedo)?;
        self.add_quad(min, ex, ez, divisions, albedo)?;
        self.add_quad(min + ey, ez, ex, divisions, albedo)?;
        self.add_quad(min, ez, ey, divisions, albedo)?;
        self.add_quad(min + ex, ey, ez, divisions, albedo)?;
        Ok(())
    }

    /// Triangles of every model in an OBJ file; materials' diffuse color when present.
    pub fn load_obj(path: &Path, default_albedo: [f64; 3]) -> Result<Self> {
        let opts = tobj::LoadOptions {
            triangulate: true,
            single_index: true,
            ..Default::default()
        };
        let (models, materials) =
            tobj::load_obj(path, &opts).map_err(|e| Error::format(path, e.to_string()))?;
        let materials = materials.unwrap_or_default();
        let mut scene = TriScene::new();
        for model in models {
            let mesh = &model.mesh;
            let albedo = mesh
                .material_id
                .and_then(|id| materials.get(id))
                .and_then(|m| m.diffuse)
                .map(|d| d.map(|c| c as f64))
                .unwrap_or(default_albedo);
            let vertex = |i: u32| {
                let k = 3 * i as usize;
                Vec3::new(
                    mesh.positions[k] as f64,
                    mesh.positions[k + 1] as f64,
                    mesh.positions[k + 2] as f64,
                )
            };
            for tri in mesh.indices.chunks_exact(3) {
                scene.add_triangle([vertex(tri[0]), vertex(tri[1]), vertex(tri[2])], albedo)?;
            }
        }
        if scene.is_empty() {
            return Err(Error::format(path, "no triangles"));
        }
        Ok(scene)
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for t in &self.triangles {
            for v in &t.vertices {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
        }
        for s in &self.spheres {
            lo = lo.inf(&(s.center - Vec3::repeat(s.radius)));
            hi = hi.sup(&(s.center + Vec3::repeat(s.radius)));
        }
        if self.is_empty() {
            None
        } else {
            Some(Aabb::new(lo.into(), hi.into()))
        }
    }

    /// Distinct mesh vertices, with spheres tessellated into `sphere_rings` latitude rings.
    pub fn surface_points(&self, sphere_rings: usize) -> PointCloud {
        let mut pts: Vec<[f64; 3]> = self
            .triangles
            .iter()
            .flat_map(|t| t.vertices.map(|v| [v.x, v.y, v.z]))
            .collect();
        let rings = sphere_rings.max(2);
        for s in &self.spheres {
            pts.push((s.center + Vec3::new(0.0, s.radius, 0.0)).into());
            pts.push((s.center - Vec3::new(0.0, s.radius, 0.0)).into());
            for i in 1..rings {
                let theta = std::f64::consts::PI * i as f64 / rings as f64;
                for j in 0..2 * rings {
                    let phi = std::f64::consts::PI * j as f64 / rings as f64;
                    let d = Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin());
                    pts.push((s.center + d * s.radius).into());
                }
            }
        }
        pts.sort_by(|a, b| {
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(a[2].total_cmp(&b[2]))
        });
        pts.dedup();
        PointCloud { points: pts }
    }

    /// Builds the triangle hierarchy; tracing calls this lazily through [`TriScene::prepared`].
    pub fn build(&mut self) {
        self.order = (0..self.triangles.len() as u32).collect();
        self.bvh.clear();
        if self.triangles.is_empty() {
            return;
        }
        self.bvh.push(BvhNode {
            min: Vec3::zeros(),
            max: Vec3::zeros(),
            start: 0,
            count: 0,
        });
        self.build_node(0, 0, self.triangles.len());
    }

    pub fn prepared(mut self) -> Self {
        self.build();
        self
    }

    fn build_node(&mut self, node: usize, start: usize, end: usize) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut clo = lo;
        let mut chi = hi;
        for &t in &self.order[start..end] {
            let tri = &self.triangles[t as usize];
            for v in &tri.vertices {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            let c = centroid(tri);
            clo = clo.inf(&c);
            chi = chi.sup(&c);
        }
        self.bvh[node].min = lo;
        self.bvh[node].max = hi;
        let count = end - start;
        let spread = chi - clo;
        let axis = spread.imax();
        if count <= BVH_LEAF || !(spread[axis] > 0.0) {
            self.bvh[node].start = start as u32;
            self.bvh[node].count = count as u32;
            return;
        }
        let tris = &self.triangles;
        self.order[start..end]
            .sort_by(|a, b| centroid(&tris[*a as usize])[axis].total_cmp(&centroid(&tris[*b as usize])[axis]));
        let mid = start + count / 2;
        let left = self.bvh.len();
        let blank = self.bvh[node];
        self.bvh.push(blank);
        self.bvh.push(blank);
        self.bvh[node].start = left as u32;
        self.bvh[node].count = 0;
        self.build_node(left, start, mid);
        self.build_node(left + 1, mid, end);
    }

    /// Nearest hit along `origin + t·dir`, `t > 1e-9`, with `dir` unit length.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfaceHit> {
        debug_assert!(self.bvh.len() > 0 || self.triangles.is_empty());
        let mut best: Option<(f64, Vec3, [f64; 3])> = None;
        for s in &self.spheres {
            if let Some(t) = ray_sphere(origin, dir, s) {
                if best.map_or(true, |b| t < b.0) {
                    let n = (origin + dir * t - s.center) / s.radius;
                    best = Some((t, n, s.albedo));
                }
            }
        }
        if !self.bvh.is_empty() {
            let inv = dir.map(|d| 1.0 / d);
            let mut stack = vec![0usize];
            while let Some(i) = stack.pop() {
                let node = &self.bvh[i];
                let limit = best.map_or(f64::INFINITY, |b| b.0);
                if !ray_box(origin, &inv, &node.min, &node.max, limit) {
                    continue;
                }
                if node.count > 0 {
                    let range = node.start as usize..(node.start + node.count) as usize;
                    for &t in &self.order[range] {
                        let tri = &self.triangles[t as usize];
                        if let Some(d) = ray_triangle(origin, dir, tri) {
                            if best.map_or(true, |b| d < b.0) {
                                let [a, b, c] = tri.vertices;
                                let n = (b - a).cross(&(c - a)).normalize();
                                best = Some((d, n, tri.albedo));
                            }
                        }
                    }
                } else {
                    stack.push(node.start as usize);
                    stack.push(node.start as usize + 1);
                }
            }
        }
        best.map(|(distance, n, albedo)| SurfaceHit {
            distance,
            normal: if n.dot(dir) > 0.0 { -n } else { n },
            albedo,
        })
    }
}

fn centroid(t: &Triangle) -> Vec3 {
    (t.vertices[0] + t.vertices[1] + t.vertices[2]) / 3.0
}

const RAY_EPS: f64 = 1e-9;

fn ray_sphere(o: &Vec3, d: &Vec3, s: &Sphere) -> Option<f64> {
    let oc = o - s.center;
    let b = oc.dot(d);
    let c = oc.norm_squared() - s.radius * s.radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    // Stable pair of roots of t² + 2bt + c = 0.
    let q = -b - root.copysign(b);
    let (t0, t1) = if q != 0.0 { (q, c / q) } else { (0.0, 0.0) };
    let (near, far) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
    if near > RAY_EPS {
        Some(near)
    } else if far > RAY_EPS {
        Some(far)
    } else {
        None
    }
}

fn ray_box(o: &Vec3, inv: &Vec3, lo: &Vec3, hi: &Vec3, limit: f64) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = limit;
    for k in 0..3 {
        let a = (lo[k] - o[k]) * inv[k];
        let b = (hi[k] - o[k]) * inv[k];
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        // NaN from 0·∞ leaves the bound unchanged.
        if near > t0 {
            t0 = near;
        }
        if far < t1 {
            t1 = far;
        }
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Möller–Trumbore intersection.
fn ray_triangle(o: &Vec3, d: &Vec3, t: &Triangle) -> Option<f64> {
    let [a, b, c] = t.vertices;
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let dist = e2.dot(&q) * inv;
    (dist > RAY_EPS).then_some(dist)
}

/// Per-pixel Euclidean distance to the first surface; `None` where the ray escapes.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        self.depths[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|d| d.is_some()).count()
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.depths.iter().flatten();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), d| (lo.min(*d), hi.max(*d))))
    }
}

fn ensure_built(scene: &TriScene) -> Result<()> {
    if !scene.triangles.is_empty() && scene.bvh.is_empty() {
        return Err(Error::invalid("call TriScene::build before tracing"));
    }
    Ok(())
}

fn cast<T: Send>(view: &SensorView, f: impl Fn(Vec3, Vec3) -> T + Sync) -> Vec<T> {
    let origin = view.center();
    (0..view.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let f = &f;
            (0..view.width).map(move |x| {
                f(origin, view.world_direction(x as f64 + 0.5, y as f64 + 0.5))
            })
        })
        .collect()
}

/// Nearest-hit distances through every pixel center.
pub fn trace_depth(view: &SensorView, scene: &TriScene) -> Result<DepthMap> {
    ensure_built(scene)?;
    Ok(DepthMap {
        width: view.width,
        height: view.height,
        depths: cast(view, |o, d| scene.intersect(&o, &d).map(|h| h.distance)),
    })
}

/// Directional light; `direction` points from the scene toward the light.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: [f64; 3],
}

pub const AMBIENT: f64 = 0.1;

/// Lambertian shading `albedo·(max(0, n·l) + 0.1)` clamped to `[0, 1]`, black on a miss.
pub fn shade_rgb(view: &SensorView, scene: &TriScene, light: &Light) -> Result<Image> {
    ensure_built(scene)?;
    let l = Vec3::from(light.direction)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::invalid("light direction is zero"))?;
    let pixels = cast(view, |o, d| match scene.intersect(&o, &d) {
        None => [0.0; 3],
        Some(h) => {
            let k = h.normal.dot(&l).max(0.0) + AMBIENT;
            h.albedo.map(|a| (a * k).clamp(0.0, 1.0))
        }
    });
    Image::new(view.width, view.height, pixels)
}

/// Counts valid depths per range bin, divided by the total pixel count.
pub fn make_echo_gt(depth: &DepthMap, bins: &RangeBins) -> TransientHistogram {
    let mut h = TransientHistogram::zeros(*bins);
    let total = (depth.width * depth.height) as f64;
    for d in depth.depths.iter().flatten() {
        if let Some(i) = bins.index_of(*d) {
            h.values[i] += 1.0;
        }
    }
    h.values.iter_mut().for_each(|v| *v /= total);
    h
}

/// Per-row-band version of [`make_echo_gt`]; image row `y` feeds azimuth row `y·rows/H`.
pub fn make_fls_gt(depth: &DepthMap, bins: &RangeBins, rows: usize) -> Result<FlsImage> {
    if rows == 0 || depth.height % rows != 0 {
        return Err(Error::invalid(format!(
            "FLS rows ({rows}) must divide the image height ({})",
            depth.height
        )));
    }
    let mut img = FlsImage::zeros(*bins, rows);
    let total = (depth.width * depth.height) as f64;
    let band = depth.height / rows;
    let b = bins.len();
    for y in 0..depth.height {
        let row = y / band;
        for x in 0..depth.width {
            if let Some(i) = depth.at(x, y).and_then(|d| bins.index_of(d)) {
                img.values[row * b + i] += 1.0;
            }
        }
    }
    img.values.iter_mut().for_each(|v| *v /= total);
    Ok(img)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Orbit about the target around the world up axis; extent in degrees.
    Arc,
    /// Translation along the base view's x axis; extent in scene units.
    Line,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub extent: f64,
    pub views: Vec<SensorView>,
}

/// `n` equally spaced poses starting at `base` and spanning `extent`.
///
/// Arc poses keep looking at `target`; line poses keep the base orientation.
pub fn gen_trajectory(
    kind: TrajectoryKind,
    extent: f64,
    n: usize,
    base: &SensorView,
    target: Vec3,
    up: Vec3,
) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::invalid("a trajectory needs at least two views"));
    }
    if !extent.is_finite() {
        return Err(Error::invalid("trajectory extent must be finite"));
    }
    let eye = base.center();
    let mut views = Vec::with_capacity(n);
    for k in 0..n {
        let s = extent * k as f64 / (n - 1) as f64;
        let view = match kind {
            TrajectoryKind::Arc => {
                let axis = Unit::try_new(up, 1e-12)
                    .ok_or_else(|| Error::invalid("up vector is zero"))?;
                let rot = Rotation3::from_axis_angle(&axis, s.to_radians());
                let e = target + rot * (eye - target);
                let mut v = SensorView::look_at(e, target, up, base.width, base.height, base.fx)?;
                v.fy = base.fy;
                v.cx = base.cx;
                v.cy = base.cy;
                v
            }
            TrajectoryKind::Line => {
                let mut v = base.clone();
                v.translation -= Vec3::x() * s;
                v
            }
        };
        views.push(view);
    }
    Ok(Trajectory {
        kind,
        extent,
        views,
    })
}

/// Sensor and output settings for [`simulate_dataset`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub sonar: SonarConfig,
    pub light: Light,
    pub modalities: Modalities,
}

/// Default echosounder bins: 128 over `[0.5·d_min, 1.5·d_max]` of the valid depths.
pub fn default_bins(depths: &[DepthMap]) -> Result<RangeBins> {
    let (lo, hi) = depths
        .iter()
        .filter_map(DepthMap::range)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (l, h)| (a.min(l), b.max(h)));
    if !(lo <= hi) {
        return Err(Error::Degenerate("no view sees the scene".into()));
    }
    RangeBins::new(128, 0.5 * lo, 1.5 * hi)
}

/// Ground-truth observations of `scene` from every view in `trajectory`.
pub fn simulate_dataset(
    scene: &TriScene,
    trajectory: &Trajectory,
    cfg: &SimConfig,
    bounds: Aabb,
) -> Result<Dataset> {
    if cfg.modalities.is_empty() {
        return Err(Error::invalid("no modality requested"));
    }
    cfg.sonar.validate()?;
    let mut observations = Vec::with_capacity(trajectory.views.len());
    for view in &trajectory.views {
        let depth = (cfg.modalities.echo || cfg.modalities.fls)
            .then(|| trace_depth(view, scene))
            .transpose()?;
        let image = cfg
            .modalities
            .camera
            .then(|| shade_rgb(view, scene, &cfg.light))
            .transpose()?;
        let echo = match (&depth, cfg.modalities.echo) {
            (Some(d), true) => Some(make_echo_gt(d, &cfg.sonar.bins)),
            _ => None,
        };
        let fls = match (&depth, cfg.modalities.fls) {
            (Some(d), true) => Some(make_fls_gt(d, &cfg.sonar.bins, cfg.sonar.rows)?),
            _ => None,
        };
        observations.push(Observation {
            view: view.clone(),
            image,
            echo,
            fls,
        });
    }
    Ok(Dataset {
        observations,
        sonar: cfg.sonar,
        bounds,
    })
}

pub const GT_POINTS_FILE: &str = "gt_points.ply";

/// Simulates and writes the dataset plus the ground-truth surface points.
pub fn build_dataset(
    scene: &TriScene,
    trajectory: &Trajectory,
    cfg: &SimConfig,
    bounds: Aabb,
    out: &Path,
) -> Result<Dataset> {
    let dataset = simulate_dataset(scene, trajectory, cfg, bounds)?;
    write_dataset(out, &dataset, Some(GT_POINTS_FILE))?;
    write_ply(&out.join(GT_POINTS_FILE), &scene.surface_points(SPHERE_RINGS))?;
    Ok(dataset)
}

/// Latitude rings used to tessellate analytic spheres into ground-truth points.
pub const SPHERE_RINGS: usize = 32;

/// A built-in scene with a suggested sensor placement.
#[derive(Clone, Debug)]
pub struct ProceduralScene {
    pub name: &'static str,
    pub scene: TriScene,
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub light: Light,
    /// Region the reconstruction is expected to occupy.
    pub bounds: Aabb,
}

pub const PROCEDURAL_SCENES: [&str; 5] = ["sphere", "box", "cornell", "desk", "plates"];

/// Built-in scenes:
/// - `sphere`: textureless sphere of radius 0.5 at the origin, viewed from 4 m.
/// - `box`: textureless cube of side 0.8.
/// - `cornell`: open-front room with red and green side walls and two blocks.
/// - `desk`: tabletop with a box and a sphere.
/// - `plates`: a small plate 0.8 m in front of a larger one, viewed head-on.
pub fn procedural(name: &str) -> Result<ProceduralScene> {
    let grey = [0.7, 0.7, 0.7];
    let up = Vec3::y();
    let mut scene = TriScene::new();
    let (eye, target, light, bounds);
    match name {
        "sphere" => {
            scene.add_sphere(Vec3::zeros(), 0.5, grey)?;
            eye = Vec3::new(0.0, 0.0, -4.0);
            target = Vec3::zeros();
            light = Light {
                direction: [0.3, 0.5, -1.0],
            };
            bounds = Aabb::around(target, 0.75);
        }
        "box" => {
            scene.add_box(Vec3::repeat(-0.4), Vec3::repeat(0.4), 8, grey)?;
            eye = Vec3::new(1.2, 1.0, -3.6);
            target = Vec3::zeros();
            light = Light {
                direction: [0.5, 0.8, -0.6],
            };
            bounds = Aabb::around(target, 0.75);
        }
        "cornell" => {
            let white = [0.75, 0.75, 0.75];
            let (lo, hi) = (Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
            let s = 2.0;
            // Floor, ceiling and back wall face inward; the -z side is open.
            scene.add_quad(lo, Vec3::z() * s, Vec3::x() * s, 10, white)?;
            scene.add_quad(Vec3::new(-1.0, 1.0, -1.0), Vec3::x() * s, Vec3::z() * s, 10, white)?;
            scene.add_quad(Vec3::new(-1.0, -1.0, 1.0), Vec3::y() * s, Vec3::x() * s, 10, white)?;
            scene.add_quad(lo, Vec3::y() * s, Vec3::z() * s, 10, [0.75, 0.15, 0.15])?;
            scene.add_quad(Vec3::new(1.0, -1.0, -1.0), Vec3::z() * s, Vec3::y() * s, 10, [0.15, 0.75, 0.15])?;
            scene.add_box(Vec3::new(-0.6, -1.0, -0.1), Vec3::new(-0.05, 0.2, 0.5), 6, white)?;
            scene.add_box(Vec3::new(0.15, -1.0, -0.5), Vec3::new(0.65, -0.45, 0.0), 5, white)?;
            eye = Vec3::new(0.0, 0.0, -3.5);
            target = Vec3::new(0.0, 0.0, 0.0);
            light = Light {
                direction: [0.2, 0.6, -1.0],
            };
            bounds = Aabb::new(lo.into(), hi.into());
        }
        "desk" => {
            let wood = [0.55, 0.4, 0.25];
            scene.add_quad(Vec3::new(-1.0, 0.0, -0.6), Vec3::z() * 1.2, Vec3::x() * 2.0, 12, wood)?;
            scene.add_box(Vec3::new(-0.7, 0.0, -0.2), Vec3::new(-0.3, 0.35, 0.2), 6, [0.2, 0.35, 0.7])?;
            scene.add_sphere(Vec3::new(0.35, 0.2, 0.05), 0.2, [0.8, 0.75, 0.3])?;
            eye = Vec3::new(0.0, 1.1, -2.6);
            target = Vec3::new(0.0, 0.15, 0.0);
            light = Light {
                direction: [0.4, 1.0, -0.5],
            };
            bounds = Aabb::new([-1.0, -0.05, -0.6], [1.0, 0.45, 0.6]);
        }
        "plates" => {
            // Equal albedo, head-on light: the two plates differ only in depth.
            scene.add_quad(Vec3::new(-0.8, -0.8, 0.4), Vec3::y() * 1.6, Vec3::x() * 1.6, 8, grey)?;
            scene.add_quad(Vec3::new(-0.6, -0.2, -0.4), Vec3::y() * 0.7, Vec3::x() * 0.7, 4, grey)?;
            eye = Vec3::new(0.0, 0.0, -4.0);
            target = Vec3::zeros();
            light = Light {
                direction: [0.0, 0.0, -1.0],
            };
            bounds = Aabb::new([-0.9, -0.9, -2.0], [0.9, 0.9, 0.45]);
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown scene '{other}' (expected one of {PROCEDURAL_SCENES:?} or an .obj path)"
            )))
        }
    }
    Ok(ProceduralScene {
        name: PROCEDURAL_SCENES.iter().find(|n| **n == name).unwrap(),
        scene: scene.prepared(),
        eye,
        target,
        up,
        light,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn odd_view() -> SensorView {
        SensorView::identity(9, 9, 10.0)
    }

    #[test]
    fn sphere_center_pixel_depth() {
        let mut s = TriScene::new();
        s.add_sphere(Vec3::new(0.0, 0.0, 5.0), 1.0, [1.0; 3]).unwrap();
        let d = trace_depth(&odd_view(), &s.prepared()).unwrap();
        assert_eq!(d.at(4, 4), Some(4.0));
    }

    #[test]
    fn plane_center_pixel_depth() {
        let mut s = TriScene::new();
        s.add_quad(Vec3::new(-5.0, -5.0, 3.0), Vec3::x() * 10.0, Vec3::y() * 10.0, 3, [1.0; 3])
            .unwrap();
        let s = s.prepared();
        let v = odd_view();
        let d = trace_depth(&v, &s).unwrap();
        assert!((d.at(4, 4).unwrap() - 3.0).abs() < 1e-12);
        // Off-axis pixels report Euclidean distance, not camera depth.
        for y in 0..9 {
            for x in 0..9 {
                let dir = v.camera_direction(x as f64 + 0.5, y as f64 + 0.5);
                let want = 3.0 * dir.norm() / dir.z;
                assert!((d.at(x, y).unwrap() - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_scene_is_all_misses_and_black() {
        let s = TriScene::new().prepared();
        let v = odd_view();
        assert_eq!(trace_depth(&v, &s).unwrap().valid_count(), 0);
        let img = shade_rgb(&v, &s, &Light { direction: [0.0, 0.0, -1.0] }).unwrap();
        assert!(img.pixels.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn unbuilt_scene_is_rejected() {
        let mut s = TriScene::new();
        s.add_box(Vec3::repeat(-1.0), Vec3::repeat(1.0), 1, [1.0; 3]).unwrap();
        assert!(trace_depth(&odd_view(), &s).is_err());
    }

    #[test]
    fn sphere_depths_match_closed_form() {
        let c = Vec3::new(0.3, -0.2, 6.0);
        let r = 1.3;
        let mut s = TriScene::new();
        s.add_sphere(c, r, [1.0; 3]).unwrap();
        let v = SensorView::identity(31, 23, 14.0);
        let d = trace_depth(&v, &s.prepared()).unwrap();
        let mut hits = 0;
        for y in 0..v.height {
            for x in 0..v.width {
                let u = v.world_direction(x as f64 + 0.5, y as f64 + 0.5);
                // Distance along u to the foot of the perpendicular from c, then back by the half chord.
                let along = u.dot(&c);
                let miss2 = c.norm_squared() - along * along;
                let want = (miss2 <= r * r).then(|| along - (r * r - miss2).sqrt());
                match (d.at(x, y), want) {
                    (Some(a), Some(b)) => {
                        assert!((a - b).abs() < 1e-9);
                        hits += 1;
                    }
                    (None, None) => {}
                    other => panic!("{other:?}"),
                }
            }
        }
        assert!(hits > 20);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = TriScene::new();
        for _ in 0..60 {
            let base = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(3.0..8.0));
            let tri = [0, 1, 2].map(|_| base + Vec3::from_fn(|_, _| rng.gen_range(-0.6..0.6)));
            s.add_triangle(tri, [rng.gen(), rng.gen(), rng.gen()]).unwrap();
        }
        let s = s.prepared();
        let v = SensorView::identity(24, 24, 12.0);
        let d = trace_depth(&v, &s).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                let dir = v.world_direction(x as f64 + 0.5, y as f64 + 0.5);
                let brute = s
                    .triangles()
                    .iter()
                    .filter_map(|t| ray_triangle(&Vec3::zeros(), &dir, t))
                    .fold(None, |b: Option<f64>, t| Some(b.map_or(t, |b| b.min(t))));
                assert_eq!(d.at(x, y), brute);
            }
        }
    }

    #[test]
    fn lambertian_shading_examples() {
        let albedo = [0.5, 0.95, 0.2];
        let mut s = TriScene::new();
        s.add_quad(Vec3::new(-5.0, -5.0, 3.0), Vec3::x() * 10.0, Vec3::y() * 10.0, 1, albedo)
            .unwrap();
        let s = s.prepared();
        let v = odd_view();
        let facing = shade_rgb(&v, &s, &Light { direction: [0.0, 0.0, -1.0] }).unwrap();
        let p = facing.pixel(4, 4);
        for (got, a) in p.iter().zip(albedo) {
            assert!((got - (a * 1.1).min(1.0)).abs() < 1e-12);
        }
        let grazing = shade_rgb(&v, &s, &Light { direction: [1.0, 0.0, 0.0] }).unwrap();
        for (got, a) in grazing.pixel(4, 4).iter().zip(albedo) {
            assert!((got - 0.1 * a).abs() < 1e-12);
        }
    }

    fn random_depth(rng: &mut impl Rng, w: usize, h: usize) -> DepthMap {
        DepthMap {
            width: w,
            height: h,
            depths: (0..w * h)
                .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0.0..5.0)))
                .collect(),
        }
    }

    #[test]
    fn echo_gt_examples() {
        let bins = RangeBins::new(10, 0.0, 10.0).unwrap();
        let constant = DepthMap {
            width: 4,
            height: 2,
            depths: vec![Some(3.3); 8],
        };
        let h = make_echo_gt(&constant, &bins);
        assert_eq!(h.values[3], 1.0);
        assert_eq!(h.total(), 1.0);
        let mut half = constant.clone();
        half.depths[4..].iter_mut().for_each(|d| *d = Some(7.5));
        let h = make_echo_gt(&half, &bins);
        assert_eq!((h.values[3], h.values[7]), (0.5, 0.5));
    }

    #[test]
    fn echo_and_fls_gt_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bins = RangeBins::new(16, 0.5, 4.5).unwrap();
        for _ in 0..10 {
            let d = random_depth(&mut rng, 12, 8);
            let h = make_echo_gt(&d, &bins);
            let fls = make_fls_gt(&d, &bins, 4).unwrap();
            let mut echo = vec![0.0; 16];
            let mut rows = vec![0.0; 4 * 16];
            let mut valid_in_range = 0;
            for y in 0..8 {
                for x in 0..12 {
                    if let Some(z) = d.at(x, y) {
                        for i in 0..16 {
                            let lo = 0.5 + 0.25 * i as f64;
                            if z >= lo && z < lo + 0.25 {
                                echo[i] += 1.0 / 96.0;
                                rows[(y / 2) * 16 + i] += 1.0 / 96.0;
                                valid_in_range += 1;
                            }
                        }
                    }
                }
            }
            for (a, b) in h.values.iter().zip(&echo) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in fls.values.iter().zip(&rows) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in fls.marginal().iter().zip(&h.values) {
                assert!((a - b).abs() <= 1e-15 * b.max(1.0));
            }
            assert!((h.total() - valid_in_range as f64 / 96.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fls_rows_must_divide_height() {
        let bins = RangeBins::new(4, 0.0, 1.0).unwrap();
        let d = DepthMap {
            width: 2,
            height: 6,
            depths: vec![Some(0.5); 12],
        };
        assert!(make_fls_gt(&d, &bins, 4).is_err());
        let f = make_fls_gt(&d, &bins, 6).unwrap();
        for j in 0..6 {
            assert!((f.row(j)[2] - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn arc_spacing_and_line_examples() {
        let base = SensorView::look_at(Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), Vec3::y(), 8, 8, 8.0)
            .unwrap();
        let angle = |a: &SensorView, b: &SensorView| {
            a.center().normalize().dot(&b.center().normalize()).clamp(-1.0, 1.0).acos().to_degrees()
        };
        let t = gen_trajectory(TrajectoryKind::Arc, 2.3, 5, &base, Vec3::zeros(), Vec3::y()).unwrap();
        for w in t.views.windows(2) {
            assert!((angle(&w[0], &w[1]) - 0.575).abs() < 1e-9);
            assert!((w[1].center().norm() - 4.0).abs() < 1e-12);
        }
        let t = gen_trajectory(TrajectoryKind::Arc, 40.0, 41, &base, Vec3::zeros(), Vec3::y()).unwrap();
        for w in t.views.windows(2) {
            assert!((angle(&w[0], &w[1]) - 1.0).abs() < 1e-9);
        }
        assert!((angle(&t.views[0], &t.views[40]) - 40.0).abs() < 1e-9);
        let t = gen_trajectory(TrajectoryKind::Line, 0.0, 3, &base, Vec3::zeros(), Vec3::y()).unwrap();
        assert!(t.views.iter().all(|v| *v == base));
        let t = gen_trajectory(TrajectoryKind::Line, 0.5, 3, &base, Vec3::zeros(), Vec3::y()).unwrap();
        let shift = t.views[2].center() - base.center();
        let x_axis = base.rotation.transpose() * Vec3::x();
        assert!((shift - x_axis * 0.5).norm() < 1e-12);
        assert!(gen_trajectory(TrajectoryKind::Arc, 1.0, 1, &base, Vec3::zeros(), Vec3::y()).is_err());
    }

    #[test]
    fn procedural_scenes_are_visible() {
        for name in PROCEDURAL_SCENES {
            let p = procedural(name).unwrap();
            let v = SensorView::look_at(p.eye, p.target, p.up, 32, 32, 40.0).unwrap();
            let d = trace_depth(&v, &p.scene).unwrap();
            assert!(d.valid_count() > 50, "{name}");
            let pts = p.scene.surface_points(SPHERE_RINGS);
            assert!(pts.points.len() > 100, "{name}");
            let b = p.bounds;
            assert!(pts.points.iter().all(|q| b.contains(q)), "{name}");
        }
        assert!(procedural("teapot").is_err());
    }

    #[test]
    fn camera_only_dataset_has_no_sonar() {
        let p = procedural("sphere").unwrap();
        let base = SensorView::look_at(p.eye, p.target, p.up, 16, 16, 20.0).unwrap();
        let t = gen_trajectory(TrajectoryKind::Arc, 2.3, 3, &base, p.target, p.up).unwrap();
        let cfg = SimConfig {
            sonar: SonarConfig::new(RangeBins::new(32, 3.0, 4.5).unwrap()).with_rows(8),
            light: p.light,
            modalities: Modalities::CAMERA,
        };
        let d = simulate_dataset(&p.scene, &t, &cfg, p.bounds).unwrap();
        assert!(d.observations.iter().all(|o| o.echo.is_none() && o.fls.is_none() && o.image.is_some()));
    }

    #[test]
    fn dataset_files_round_trip_and_are_reproducible() {
        let p = procedural("box").unwrap();
        let base = SensorView::look_at(p.eye, p.target, p.up, 16, 16, 20.0).unwrap();
        let t = gen_trajectory(TrajectoryKind::Arc, 5.0, 3, &base, p.target, p.up).unwrap();
        let cfg = SimConfig {
            sonar: SonarConfig::new(RangeBins::new(32, 2.5, 5.0).unwrap()).with_rows(8),
            light: p.light,
            modalities: Modalities::parse("all").unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let mem = build_dataset(&p.scene, &t, &cfg, p.bounds, &a).unwrap();
        build_dataset(&p.scene, &t, &cfg, p.bounds, &b).unwrap();
        let mut names: Vec<_> = walk(&a);
        names.sort();
        assert_eq!(names.len(), 3 + 3 * 3);
        for n in &names {
            assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n}");
        }
        let back = crate::dataset::read_dataset(&a).unwrap();
        for (x, y) in back.observations.iter().zip(&mem.observations) {
            assert_eq!(x.echo, y.echo);
            assert_eq!(x.fls, y.fls);
            assert_eq!(x.view, y.view);
            assert_eq!(x.image.as_ref().unwrap().to_rgb8(), y.image.as_ref().unwrap().to_rgb8());
        }
    }

    fn walk(root: &Path) -> Vec<String> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(root).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                for f in walk(&p) {
                    out.push(format!("{}/{}", p.file_name().unwrap().to_string_lossy(), f));
                }
            } else {
                out.push(p.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
        out
    }
}
