//! Ray-traces a built-in scene along a short arc and writes a camera + echosounder + FLS dataset.
//!
//! ```text
//! cargo run --release --example simulate_scene -- cornell /tmp/cornell_ds
//! ```

use std::path::PathBuf;

use zsplat::render::{Modalities, SonarConfig};
use zsplat::scene::SensorView;
use zsplat::simulate::{build_dataset, default_bins, gen_trajectory, procedural, trace_depth, SimConfig, TrajectoryKind};

fn main() -> zsplat::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "desk".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| format!("{name}_dataset")));

    let p = procedural(&name)?;
    let base = SensorView::look_at(p.eye, p.target, p.up, 96, 96, 110.0)?;
    let trajectory = gen_trajectory(TrajectoryKind::Arc, 5.0, 10, &base, p.target, p.up)?;
    let depths = trajectory
        .views
        .iter()
        .map(|v| trace_depth(v, &p.scene))
        .collect::<zsplat::Result<Vec<_>>>()?;
    let valid: usize = depths.iter().map(|d| d.valid_count()).sum();
    let cfg = SimConfig {
        sonar: SonarConfig::new(default_bins(&depths)?).with_rows(32),
        light: p.light,
        modalities: Modalities { camera: true, echo: true, fls: true },
    };
    let dataset = build_dataset(&p.scene, &trajectory, &cfg, p.bounds, &out)?;
    let bins = cfg.sonar.bins;
    println!(
        "{}: {} views, {:.1}% of pixels hit geometry, range bins {} x {:.4} m from {:.3} m",
        name,
        dataset.len(),
        100.0 * valid as f64 / (depths.len() * 96 * 96) as f64,
        bins.len(),
        bins.width(),
        bins.range_min()
    );
    println!("wrote {}", out.display());
    Ok(())
}
