//! Paired camera-only and camera+sonar reconstructions on a limited-baseline scene.
//!
//! ```text
//! cargo run --release --example fusion_experiment -- plates 3
//! cargo run --release --example fusion_experiment -- cornell 5
//! ```
//!
//! Each variant trains from the same seed on the same ten views spanning a 5°
//! arc, then is scored by Chamfer distance to the mesh vertices and by PSNR
//! on held-out poses 15°, 30° and 45° along the arc.

use zsplat::experiment::{median, prepare, run_variant, sample_std, viewing_distance, FusionSetup, Variant};

fn main() -> zsplat::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "plates".into());
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let setup = match preset.as_str() {
        "cornell" => FusionSetup::cornell(),
        _ => FusionSetup::limited_baseline(),
    };
    let data = prepare(&setup)?;
    println!(
        "{}: {} views over {}° at {:.2} m, {} ground-truth points",
        setup.scene,
        setup.views,
        setup.arc_degrees,
        viewing_distance(&data),
        data.truth.len()
    );
    let mut scores = Vec::new();
    for seed in 0..seeds {
        for v in Variant::ALL {
            let t = std::time::Instant::now();
            let s = run_variant(&setup, &data, v, seed)?;
            println!(
                "seed {seed} {:9} chamfer {:.4}  novel PSNR {:5.2} dB  {} gaussians  {:.0}s",
                v.name(),
                s.chamfer,
                s.novel_psnr,
                s.gaussians,
                t.elapsed().as_secs_f64()
            );
            scores.push(s);
        }
    }
    println!("\nvariant    median chamfer  median PSNR  PSNR std");
    for v in Variant::ALL {
        let chamfer: Vec<f64> = scores.iter().filter(|s| s.variant == v).map(|s| s.chamfer).collect();
        let psnr: Vec<f64> = scores.iter().filter(|s| s.variant == v).map(|s| s.novel_psnr).collect();
        let std = sample_std(&psnr).map_or("-".into(), |s| format!("{s:.3}"));
        println!(
            "{:9}  {:14.4}  {:11.2}  {std:>8}",
            v.name(),
            median(&chamfer).unwrap(),
            median(&psnr).unwrap()
        );
    }
    Ok(())
}
