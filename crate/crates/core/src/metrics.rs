//! Image and point-cloud quality metrics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{sigmoid, Mat3, Vec3};
use crate::scene::GaussianCloud;

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP: f64 = 99.0;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

/// `10·log10(1/MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    })
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-region filtering with the SSIM window.
fn filter(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of the luma channels, 11×11 Gaussian window (σ = 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let (w, h) = (a.width, a.height);
    let x = a.luma();
    let y = b.luma();
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter(&x, w, h, &k);
    let my = filter(&y, w, h, &k);
    let sxx = filter(&prod(&x, &x), w, h, &k);
    let syy = filter(&prod(&y, &y), w, h, &k);
    let sxy = filter(&prod(&x, &y), w, h, &k);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `p ↦ R·p + t`, e.g. a user-supplied alignment to the ground-truth frame.
    pub fn transformed(&self, rotation: &Mat3, translation: &Vec3) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| (rotation * Vec3::from(*p) + translation).into())
                .collect(),
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid(format!("{what} point cloud is empty")));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what} point cloud")));
        }
        Ok(())
    }
}

/// Uniform grid over a point set answering exact nearest-neighbor queries.
pub struct NearestIndex<'a> {
    points: &'a [[f64; 3]],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    order: Vec<u32>,
}

impl<'a> NearestIndex<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(&Vec3::from(*p));
            hi = hi.sup(&Vec3::from(*p));
        }
        let extent = (hi - lo).map(|v| v.max(0.0));
        // At most about one cell per point.
        let n = points.len().max(1) as f64;
        let cell = (extent.norm() / n.cbrt()).max(1e-9);
        let dims = [0, 1, 2].map(|k| ((extent[k] / cell).floor() as usize + 1).min(1 << 10));
        let cell = (0..3)
            .map(|k| extent[k] / dims[k] as f64)
            .fold(cell, f64::max);
        let mut idx = NearestIndex {
            points,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let ncell = dims[0] * dims[1] * dims[2];
        let keys: Vec<usize> = points.iter().map(|p| idx.key(&idx.coords(p))).collect();
        let mut counts = vec![0u32; ncell + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        idx.starts = counts;
        idx.order = order;
        idx
    }

    fn coords(&self, p: &[f64; 3]) -> [isize; 3] {
        [0, 1, 2].map(|k| ((p[k] - self.origin[k]) / self.cell).floor() as isize)
    }

    fn key(&self, c: &[isize; 3]) -> usize {
        let c = [0, 1, 2].map(|k| c[k].clamp(0, self.dims[k] as isize - 1) as usize);
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Distance from `q` to the closest indexed point.
    pub fn nearest_distance(&self, q: &[f64; 3]) -> f64 {
        let c = self.coords(q);
        let dist2 = |i: u32| {
            let p = &self.points[i as usize];
            (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>()
        };
        let mut best = f64::INFINITY;
        let dims = self.dims.map(|d| d as isize);
        // Chebyshev distance (in cells) from c to the nearest grid cell.
        let first = (0..3)
            .map(|k| (-c[k]).max(c[k] - (dims[k] - 1)).max(0))
            .max()
            .unwrap();
        let last = first + dims.iter().max().unwrap();
        for ring in first..=last {
            let lo = [0, 1, 2].map(|k| (c[k] - ring).max(0));
            let hi = [0, 1, 2].map(|k| (c[k] + ring).min(dims[k] - 1));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let cc = [x, y, z];
                        if (0..3).map(|k| (cc[k] - c[k]).abs()).max().unwrap() != ring {
                            continue;
                        }
                        let k = self.key(&cc);
                        for &i in &self.order[self.starts[k] as usize..self.starts[k + 1] as usize] {
                            best = best.min(dist2(i));
                        }
                    }
                }
            }
            // Cells beyond this ring are at least `ring` cell widths from the query.
            if best.sqrt() <= ring as f64 * self.cell {
                break;
            }
        }
        best.sqrt()
    }
}

fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    let index = NearestIndex::new(&to.points);
    from.points
        .par_iter()
        .map(|p| index.nearest_distance(p))
        .collect()
}

/// Symmetric mean of mean nearest-neighbor distances.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    p.check("first")?;
    q.check("second")?;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(nearest_distances(p, q)) + mean(nearest_distances(q, p))))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Fractions of predicted and true points within `threshold` of the other set.
pub fn precision_recall_f1(
    predicted: &PointCloud,
    truth: &PointCloud,
    threshold: f64,
) -> Result<PrecisionRecall> {
    predicted.check("predicted")?;
    truth.check("ground-truth")?;
    if !(threshold > 0.0) {
        return Err(Error::invalid("threshold must be positive"));
    }
    let frac = |d: Vec<f64>| d.iter().filter(|v| **v <= threshold).count() as f64 / d.len() as f64;
    let precision = frac(nearest_distances(predicted, truth));
    let recall = frac(nearest_distances(truth, predicted));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PrecisionRecall {
        precision,
        recall,
        f1,
    })
}

pub const DEFAULT_OPACITY_FLOOR: f64 = 0.1;
pub const DEFAULT_F1_THRESHOLD: f64 = 0.05;

/// Means of Gaussians whose activated opacity is at least `floor`.
pub fn cloud_from_gaussians(cloud: &GaussianCloud, floor: f64) -> PointCloud {
    PointCloud {
        points: cloud
            .means
            .iter()
            .zip(&cloud.opacity_logits)
            .filter(|(_, l)| sigmoid(**l) >= floor)
            .map(|(m, _)| *m)
            .collect(),
    }
}

/// ASCII PLY with `x y z` vertex properties.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .map_err(io)?;
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p[0], p[1], p[2]).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads ASCII PLY vertices; the first three vertex properties are taken as `x y z`.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut next = || -> Result<Option<String>> {
        lines.next().transpose().map_err(|e| Error::io(path, e))
    };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(bad("missing 'ply' magic"));
    }
    let mut count = None;
    let mut in_vertex = false;
    let mut props = 0;
    loop {
        let line = next()?.ok_or_else(|| bad("unterminated header"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ASCII PLY is supported")),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ..] if in_vertex => props += 1,
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    if props < 3 {
        return Err(bad("vertices need x y z"));
    }
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next()?.ok_or_else(|| bad("truncated vertex list"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad vertex"))?;
        if v.len() != 3 {
            return Err(bad("short vertex line"));
        }
        points.push([v[0], v[1], v[2]]);
    }
    Ok(PointCloud { points })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryScore {
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub predicted_points: usize,
    pub truth_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub geometry: Option<GeometryScore>,
}

pub fn geometry_score(
    predicted: &PointCloud,
    truth: &PointCloud,
    threshold: f64,
) -> Result<GeometryScore> {
    let pr = precision_recall_f1(predicted, truth, threshold)?;
    Ok(GeometryScore {
        chamfer: chamfer(predicted, truth)?,
        precision: pr.precision,
        recall: pr.recall,
        f1: pr.f1,
        threshold,
        predicted_points: predicted.len(),
        truth_points: truth.len(),
    })
}

impl EvalReport {
    pub fn new(views: Vec<ViewScore>, geometry: Option<GeometryScore>) -> Self {
        let mean = |f: fn(&ViewScore) -> f64| {
            (!views.is_empty()).then(|| views.iter().map(f).sum::<f64>() / views.len() as f64)
        };
        Self {
            mean_psnr: mean(|v| v.psnr),
            mean_ssim: mean(|v| v.ssim),
            views,
            geometry,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    fn brute_chamfer(p: &PointCloud, q: &PointCloud) -> f64 {
        let nn = |a: &[f64; 3], set: &PointCloud| {
            set.points
                .iter()
                .map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let pq: f64 = p.points.iter().map(|a| nn(a, q)).sum::<f64>() / p.len() as f64;
        let qp: f64 = q.points.iter().map(|a| nn(a, p)).sum::<f64>() / q.len() as f64;
        0.5 * (pq + qp)
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud {
            points: (0..n)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.1..0.1)])
                .collect(),
        }
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::filled(2, 8, [0.5; 3])).is_err());
    }

    #[test]
    fn psnr_matches_brute_force_and_falls_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 9, 7);
        let b = random_image(&mut rng, 9, 7);
        let mut s = 0.0;
        for (p, q) in a.pixels.iter().zip(&b.pixels) {
            for k in 0..3 {
                s += (p[k] - q[k]).powi(2);
            }
        }
        let want = 10.0 * (1.0 / (s / 189.0)).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-12);

        let base = Image::filled(16, 16, [0.5; 3]);
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.02, 0.04, 0.08, 0.16] {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            let noisy = Image::new(
                16,
                16,
                base.pixels
                    .iter()
                    .map(|p| p.map(|v| v + sigma * r.sample::<f64, _>(rand_distr::StandardNormal)))
                    .collect(),
            )
            .unwrap();
            let v = psnr(&base, &noisy).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        let binary = Image::new(
            16,
            16,
            (0..256).map(|_| [if rng.gen_bool(0.5) { 1.0 } else { 0.0 }; 3]).collect(),
        )
        .unwrap();
        let inv = Image::new(16, 16, binary.pixels.iter().map(|p| p.map(|v| 1.0 - v)).collect()).unwrap();
        assert!(ssim(&binary, &inv).unwrap() < 0.0);

        let c = Image::filled(12, 12, [0.4; 3]);
        let d = Image::filled(12, 12, [0.5; 3]);
        let (x, y) = (0.4f64, 0.5f64);
        let c1 = 1e-4;
        let want = (2.0 * x * y + c1) / (x * x + y * y + c1);
        assert!((ssim(&c, &d).unwrap() - want).abs() < 1e-9);
        assert!(ssim(&Image::filled(8, 8, [0.0; 3]), &Image::filled(8, 8, [0.0; 3])).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let p = PointCloud {
            points: vec![[0.0; 3]],
        };
        let q = PointCloud {
            points: vec![[1.0, 0.0, 0.0]],
        };
        assert_eq!(chamfer(&p, &q).unwrap(), 1.0);
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        assert!(chamfer(&p, &PointCloud::default()).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..20 {
            let p = random_cloud(&mut rng, 1 + (i * 37) % 200);
            let q = random_cloud(&mut rng, 1 + (i * 53) % 200);
            let got = chamfer(&p, &q).unwrap();
            assert!((got - brute_chamfer(&p, &q)).abs() < 1e-9);
            assert_eq!(got, chamfer(&q, &p).unwrap());
        }
        // Queries far outside the indexed box.
        let p = random_cloud(&mut rng, 50);
        let far = PointCloud {
            points: vec![[30.0, -40.0, 5.0], [0.0, 0.0, 100.0]],
        };
        assert!((chamfer(&p, &far).unwrap() - brute_chamfer(&p, &far)).abs() < 1e-9);
    }

    #[test]
    fn precision_recall_examples() {
        let q = PointCloud {
            points: (0..9).map(|i| [i as f64, 0.0, 0.0]).collect(),
        };
        let r = precision_recall_f1(&q, &q, 0.05).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let mut p = q.clone();
        p.points.push([0.0, 50.0, 0.0]);
        let r = precision_recall_f1(&p, &q, 0.05).unwrap();
        assert!((r.precision - 0.9).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 2.0 * 0.9 / 1.9).abs() < 1e-15);
        let shifted = PointCloud {
            points: q.points.iter().map(|p| [p[0], p[1] + 0.5, p[2]]).collect(),
        };
        let r = precision_recall_f1(&shifted, &q, 0.05).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn gaussian_cloud_filter() {
        let mut c = GaussianCloud::default();
        for (i, o) in [0.05, 0.5, 0.09, 0.1, 0.99].iter().enumerate() {
            c.push([i as f64; 3], [1.0, 0.0, 0.0, 0.0], [0.0; 3], crate::math::logit(*o), [0.0; 3]);
        }
        let pts = cloud_from_gaussians(&c, DEFAULT_OPACITY_FLOOR);
        let want: Vec<[f64; 3]> = (0..5)
            .filter(|i| sigmoid(c.opacity_logits[*i]) >= 0.1)
            .map(|i| [i as f64; 3])
            .collect();
        assert_eq!(pts.points, want);
        assert_eq!(cloud_from_gaussians(&c, 0.0).len(), 5);
        assert!(cloud_from_gaussians(&c, 0.999).is_empty());
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_cloud(&mut rng, 17);
        write_ply(&path, &c).unwrap();
        assert_eq!(read_ply(&path).unwrap(), c);
        std::fs::write(&path, "ply\nformat binary_little_endian 1.0\nend_header\n").unwrap();
        assert!(read_ply(&path).is_err());
    }

    #[test]
    fn report_means() {
        let r = EvalReport::new(
            vec![
                ViewScore { view: 0, psnr: 20.0, ssim: 0.5 },
                ViewScore { view: 1, psnr: 30.0, ssim: 0.7 },
            ],
            None,
        );
        assert_eq!(r.mean_psnr, Some(25.0));
        assert!((r.mean_ssim.unwrap() - 0.6).abs() < 1e-15);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    }

    proptest! {
        #[test]
        fn chamfer_is_symmetric_and_nonnegative(seed in 0u64..1000, n in 1usize..40, m in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_cloud(&mut rng, n);
            let q = random_cloud(&mut rng, m);
            let a = chamfer(&p, &q).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a, chamfer(&q, &p).unwrap());
            prop_assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
            let r = precision_recall_f1(&p, &q, 0.1).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.precision) && (0.0..=1.0).contains(&r.recall));
        }
    }
}
