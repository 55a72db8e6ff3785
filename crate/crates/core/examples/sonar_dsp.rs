//! Pulse-compresses a noisy synthetic chirp echo and reports the recovered ranges.
//!
//! ```text
//! cargo run --release --example sonar_dsp
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use zsplat::dsp::{echo_to_histogram, synth_chirp, EchoConfig, Waveform, SPEED_OF_SOUND_AIR};
use zsplat::render::RangeBins;

fn main() -> zsplat::Result<()> {
    let fs = 100_000.0;
    let chirp = synth_chirp(10_000.0, 30_000.0, 1e-3, fs)?;
    let targets = [(1.2, 1.0), (1.35, 0.6), (2.8, 0.3)];
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut background = Waveform::new(vec![0.0; 4096], fs)?;
    let hum = synth_chirp(2_000.0, 2_000.0, 40e-3, fs)?;
    background.add_at(&hum, 0, 0.05);
    let mut rx = background.clone();
    for (range, gain) in targets {
        let lag = (2.0 * range / SPEED_OF_SOUND_AIR * fs).round() as usize;
        rx.add_at(&chirp, lag, gain);
    }
    for s in rx.samples.iter_mut() {
        *s += 0.02 * rng.sample::<f64, _>(StandardNormal);
    }

    let cfg = EchoConfig {
        bins: RangeBins::new(200, 0.0, 4.0)?,
        speed_of_sound: SPEED_OF_SOUND_AIR,
        group_delay: 0.0,
    };
    let h = echo_to_histogram(&rx, Some(&background), &chirp, &cfg)?;
    let max = h.values[h.peak()];
    println!("range resolution c/(2B) = {:.4} m, bin width {:.4} m", SPEED_OF_SOUND_AIR / 40_000.0, cfg.bins.width());
    for i in 1..h.values.len() - 1 {
        let v = h.values[i];
        if v > 0.2 * max && v > h.values[i - 1] && v >= h.values[i + 1] {
            println!("peak at {:.3} m ({:.0}% of max)", cfg.bins.center(i), 100.0 * v / max);
        }
    }
    println!("true targets: {:?}", targets.map(|t| t.0));
    Ok(())
}
