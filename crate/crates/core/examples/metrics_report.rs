//! Image and point-cloud metrics on small constructed inputs.
//!
//! ```text
//! cargo run --release --example metrics_report
//! ```

use zsplat::image::Image;
use zsplat::metrics::{chamfer, precision_recall_f1, psnr, ssim, PointCloud};

fn main() -> zsplat::Result<()> {
    let (w, h) = (64, 64);
    let clean = Image::new(
        w,
        h,
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64 / w as f64, (i / w) as f64 / h as f64);
                [x, y, 0.5 * (x + y)]
            })
            .collect(),
    )?;
    for amp in [0.01, 0.05, 0.1] {
        let noisy = Image::new(
            w,
            h,
            clean
                .pixels
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let s = if (i * 7919) % 2 == 0 { amp } else { -amp };
                    p.map(|v| (v + s).clamp(0.0, 1.0))
                })
                .collect(),
        )?;
        println!("±{amp:<4} noise: PSNR {:6.2} dB, SSIM {:.4}", psnr(&clean, &noisy)?, ssim(&clean, &noisy)?);
    }

    let truth = PointCloud { points: (0..10).map(|i| [i as f64, 0.0, 0.0]).collect() };
    let mut pred = truth.clone();
    pred.points[9] = [9.0, 5.0, 0.0];
    pred.points.push([9.0, 0.01, 0.0]);
    let pr = precision_recall_f1(&pred, &truth, 0.05)?;
    println!(
        "9 exact + 1 stray + 1 near: precision {:.3}, recall {:.3}, F1 {:.3}, chamfer {:.4}",
        pr.precision,
        pr.recall,
        pr.f1,
        chamfer(&pred, &truth)?
    );
    Ok(())
}
