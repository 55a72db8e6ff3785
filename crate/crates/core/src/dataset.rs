//! Posed multi-modal observations and their directory layout on disk.
//!
//! ```text
//! manifest.json          modalities, sonar config, scene bounds, view count
//! cameras.json           one view record per observation
//! images/view_0000.png
//! echo/view_0000.csv     one row of range bins
//! fls/view_0000.csv      one row per azimuth
//! ```
//!
//! Transient CSVs carry a header of `lo..hi` bin edges followed by rows of values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_png, write_png, Image};
use crate::render::{FlsImage, Modalities, RangeBins, SonarConfig, TransientHistogram};
use crate::scene::{Aabb, SensorView};

/// Everything measured from one sensor pose. Any subset of modalities may be present.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub view: SensorView,
    pub image: Option<Image>,
    pub echo: Option<TransientHistogram>,
    pub fls: Option<FlsImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub sonar: SonarConfig,
    /// Region expected to contain the scene; used for initialization and learning-rate scale.
    pub bounds: Aabb,
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub views: usize,
    pub modalities: Modalities,
    pub sonar: SonarConfig,
    pub bounds: Aabb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_points: Option<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Modalities present in every observation.
    pub fn modalities(&self) -> Modalities {
        let all = |f: fn(&Observation) -> bool| {
            !self.observations.is_empty() && self.observations.iter().all(f)
        };
        Modalities {
            camera: all(|o| o.image.is_some()),
            echo: all(|o| o.echo.is_some()),
            fls: all(|o| o.fls.is_some()),
        }
    }

    pub fn views(&self) -> Vec<SensorView> {
        self.observations.iter().map(|o| o.view.clone()).collect()
    }
}

pub fn view_file_name(index: usize, ext: &str) -> String {
    format!("view_{index:04}.{ext}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the dataset; `gt_points` is recorded in the manifest when the caller also writes that file.
pub fn write_dataset(dir: &Path, dataset: &Dataset, gt_points: Option<&str>) -> Result<()> {
    create_dir(dir)?;
    let modalities = dataset.modalities();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        views: dataset.len(),
        modalities,
        sonar: dataset.sonar,
        bounds: dataset.bounds,
        gt_points: gt_points.map(str::to_owned),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("cameras.json"), &dataset.views())?;
    for (sub, on) in [("images", modalities.camera), ("echo", modalities.echo), ("fls", modalities.fls)] {
        if on {
            create_dir(&dir.join(sub))?;
        }
    }
    for (i, obs) in dataset.observations.iter().enumerate() {
        if let (true, Some(img)) = (modalities.camera, &obs.image) {
            write_png(&dir.join("images").join(view_file_name(i, "png")), img)?;
        }
        if let (true, Some(h)) = (modalities.echo, &obs.echo) {
            write_transient_csv(
                &dir.join("echo").join(view_file_name(i, "csv")),
                &h.bins,
                1,
                &h.values,
            )?;
        }
        if let (true, Some(f)) = (modalities.fls, &obs.fls) {
            write_transient_csv(
                &dir.join("fls").join(view_file_name(i, "csv")),
                &f.bins,
                f.rows,
                &f.values,
            )?;
        }
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            dir.join("manifest.json"),
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    manifest.sonar.validate()?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let cameras_path = dir.join("cameras.json");
    let views: Vec<SensorView> = read_json(&cameras_path)?;
    if views.len() != manifest.views {
        return Err(Error::format(
            cameras_path,
            format!("{} views listed, manifest says {}", views.len(), manifest.views),
        ));
    }
    let m = manifest.modalities;
    let mut observations = Vec::with_capacity(views.len());
    for (i, view) in views.into_iter().enumerate() {
        let image = if m.camera {
            let img = read_png(&dir.join("images").join(view_file_name(i, "png")))?;
            if img.width != view.width || img.height != view.height {
                return Err(Error::shape(
                    format!("{}x{}", view.width, view.height),
                    format!("{}x{}", img.width, img.height),
                ));
            }
            Some(img)
        } else {
            None
        };
        let echo = if m.echo {
            let (bins, rows, values) =
                read_transient_csv(&dir.join("echo").join(view_file_name(i, "csv")))?;
            if rows != 1 {
                return Err(Error::shape(1, rows));
            }
            Some(TransientHistogram::new(bins, values)?)
        } else {
            None
        };
        let fls = if m.fls {
            let (bins, rows, values) =
                read_transient_csv(&dir.join("fls").join(view_file_name(i, "csv")))?;
            Some(FlsImage::new(bins, rows, values)?)
        } else {
            None
        };
        observations.push(Observation {
            view,
            image,
            echo,
            fls,
        });
    }
    Ok(Dataset {
        observations,
        sonar: manifest.sonar,
        bounds: manifest.bounds,
    })
}

/// Path of the ground-truth point cloud named in the manifest, if any.
pub fn gt_points_path(dir: &Path) -> Result<Option<PathBuf>> {
    Ok(read_manifest(dir)?.gt_points.map(|p| dir.join(p)))
}

fn bin_edge(bins: &RangeBins, i: usize) -> f64 {
    if i == bins.len() {
        bins.range_max()
    } else {
        bins.range_min() + i as f64 * bins.width()
    }
}

/// Writes `rows` rows of `bins.len()` values under a `lo..hi` header.
pub fn write_transient_csv(path: &Path, bins: &RangeBins, rows: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * bins.len() {
        return Err(Error::shape(rows * bins.len(), values.len()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header: Vec<String> = (0..bins.len())
        .map(|i| format!("{}..{}", bin_edge(bins, i), bin_edge(bins, i + 1)))
        .collect();
    w.write_record(&header)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for row in values.chunks(bins.len().max(1)) {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a transient CSV back as `(bins, rows, values)`.
pub fn read_transient_csv(path: &Path) -> Result<(RangeBins, usize, Vec<f64>)> {
    let bad = |m: String| Error::format(path, m);
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let mut edges = Vec::with_capacity(header.len());
    for field in header.iter() {
        let (lo, hi) = field
            .split_once("..")
            .ok_or_else(|| bad(format!("header field '{field}' is not 'lo..hi'")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("bad bin edge '{s}'")))
        };
        edges.push((parse(lo)?, parse(hi)?));
    }
    if edges.is_empty() {
        return Err(bad("no range bins".into()));
    }
    let bins = RangeBins::new(edges.len(), edges[0].0, edges[edges.len() - 1].1)?;
    for (i, (lo, hi)) in edges.iter().enumerate() {
        let tol = 1e-9 * bins.range_max().abs().max(1.0);
        if (lo - bin_edge(&bins, i)).abs() > tol || (hi - bin_edge(&bins, i + 1)).abs() > tol {
            return Err(bad(format!("bin {i} edges are not uniform")));
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != bins.len() {
            return Err(Error::shape(bins.len(), rec.len()));
        }
        for v in rec.iter() {
            values.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value '{v}'")))?,
            );
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(bad("no data rows".into()));
    }
    Ok((bins, rows, values))
}
