//! Renders a handful of Gaussians as a camera image, an echosounder transient and an FLS image.
//!
//! ```text
//! cargo run --release --example render_modalities -- /tmp/render_demo
//! ```

use std::path::PathBuf;

use zsplat::dataset::write_transient_csv;
use zsplat::image::{write_png, Image};
use zsplat::math::{Quaternion, Vec3};
use zsplat::render::{render_all, Modalities, RangeBins, SonarConfig};
use zsplat::scene::{GaussianCloud, SensorView};

fn main() -> zsplat::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_demo".into()));
    std::fs::create_dir_all(&out).map_err(|e| zsplat::Error::Io { path: out.clone(), source: e })?;

    let mut cloud = GaussianCloud::default();
    let tilt = Quaternion::new(0.92, 0.0, 0.0, 0.39);
    cloud.push_activated(Vec3::new(-0.4, 0.0, 3.0), tilt, Vec3::new(0.3, 0.08, 0.08), 0.9, [0.9, 0.2, 0.2]);
    cloud.push_activated(Vec3::new(0.3, -0.2, 3.6), Quaternion::IDENTITY, Vec3::repeat(0.2), 0.8, [0.2, 0.7, 0.3]);
    cloud.push_activated(Vec3::new(0.1, 0.35, 2.5), Quaternion::IDENTITY, Vec3::new(0.15, 0.05, 0.15), 0.7, [0.2, 0.3, 0.9]);

    let view = SensorView::identity(128, 128, 140.0);
    let sonar = SonarConfig::new(RangeBins::new(96, 2.0, 4.4)?).with_rows(16);
    let all = Modalities { camera: true, echo: true, fls: true };
    let bundle = render_all(&cloud, &view, all, &sonar)?;

    let image = Image::from(bundle.image.as_ref().expect("camera requested"));
    write_png(&out.join("camera.png"), &image)?;
    let echo = bundle.echo.expect("echo requested");
    write_transient_csv(&out.join("echo.csv"), &echo.bins, 1, &echo.values)?;
    let fls = bundle.fls.expect("fls requested");
    write_transient_csv(&out.join("fls.csv"), &fls.bins, fls.rows, &fls.values)?;

    println!("echo peak at {:.3} m, total mass {:.5}", echo.bins.center(echo.peak()), echo.total());
    for j in 0..fls.rows {
        let row = fls.row(j);
        let mass: f64 = row.iter().sum();
        if mass > 0.0 {
            let peak = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            println!("fls row {j:2}: mass {mass:.5}, peak {:.3} m", fls.bins.center(peak));
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
