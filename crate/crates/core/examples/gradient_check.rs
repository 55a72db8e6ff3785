//! Compares analytic gradients with central finite differences on random scenes
//! for every loss configuration.
//!
//! ```text
//! cargo run --release --example gradient_check -- 5
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsplat::dataset::Observation;
use zsplat::grad::{check_gradients, GradCheckReport, GradCheckTolerance};
use zsplat::image::Image;
use zsplat::math::{Quaternion, Vec3};
use zsplat::render::{render_all, Modalities, RangeBins, SonarConfig};
use zsplat::scene::{GaussianCloud, SensorView};
use zsplat::train::{LossConfig, MeasurementScale, SonarKind};

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> GaussianCloud {
    let mut c = GaussianCloud::default();
    for _ in 0..n {
        let q = Quaternion::new(rng.gen_range(0.5..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        c.push_activated(
            Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(2.5..3.5)),
            q,
            Vec3::new(rng.gen_range(0.08..0.3), rng.gen_range(0.08..0.3), rng.gen_range(0.08..0.3)),
            rng.gen_range(0.2..0.9),
            [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
        );
    }
    c
}

fn main() -> zsplat::Result<()> {
    let scenes: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let view = SensorView::identity(16, 16, 18.0);
    let sonar = SonarConfig::new(RangeBins::new(32, 1.8, 4.2)?).with_grid(32, 32).with_rows(4);
    let losses = [
        ("camera only", LossConfig::camera_only()),
        ("camera + echo", LossConfig { weight: 1.0, sonar_kind: SonarKind::Echo, measurement_scale: MeasurementScale::Raw }),
        ("camera + fls", LossConfig { weight: 1.0, sonar_kind: SonarKind::Fls, measurement_scale: MeasurementScale::Raw }),
        ("camera + echo, unit mass", LossConfig { weight: 2.0, sonar_kind: SonarKind::Echo, measurement_scale: MeasurementScale::UnitMass }),
    ];
    let all = Modalities { camera: true, echo: true, fls: true };
    for (name, loss) in losses {
        let mut total = GradCheckReport::default();
        for s in 0..scenes {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let target = render_all(&random_cloud(&mut rng, 6), &view, all, &sonar)?;
            let obs = Observation {
                view: view.clone(),
                image: target.image.as_ref().map(Image::from),
                echo: target.echo,
                fls: target.fls,
            };
            let model = random_cloud(&mut rng, 6);
            total.merge(check_gradients(&model, &[obs], &sonar, &loss, &GradCheckTolerance::default())?);
        }
        println!(
            "{name:26} checked {:4}  excluded {:3}  pass rate {:.4}",
            total.checked,
            total.excluded,
            total.pass_rate()
        );
        for m in total.mismatches.iter().take(3) {
            println!("    {:?}[{}]: analytic {:.6e}, numeric {:.6e}", m.group, m.coordinate, m.analytic, m.numeric);
        }
    }
    Ok(())
}
