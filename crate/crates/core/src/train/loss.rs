//! Camera and sonar loss terms with their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Which sonar measurement supervises training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SonarKind {
    #[default]
    Echo,
    Fls,
    None,
}

/// How measured and rendered transients are scaled before comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementScale {
    /// Both sides are divided by their own total mass.
    UnitMass,
    #[default]
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Sonar weight `w` in `L = L_c + w·L_s`.
    pub weight: f64,
    pub sonar_kind: SonarKind,
    pub measurement_scale: MeasurementScale,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weight: 1.0,
            sonar_kind: SonarKind::Echo,
            measurement_scale: MeasurementScale::Raw,
        }
    }
}

/// Sonar weights outside this band are accepted with a warning.
pub const RECOMMENDED_WEIGHT: (f64, f64) = (0.1, 3.0);

impl LossConfig {
    pub fn camera_only() -> Self {
        Self {
            weight: 0.0,
            sonar_kind: SonarKind::None,
            measurement_scale: MeasurementScale::Raw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::invalid(format!(
                "sonar weight must be finite and nonnegative, got {}",
                self.weight
            )));
        }
        if self.uses_sonar()
            && !(RECOMMENDED_WEIGHT.0..=RECOMMENDED_WEIGHT.1).contains(&self.weight)
        {
            log::warn!(
                "sonar weight {} is outside the recommended range [{}, {}]",
                self.weight,
                RECOMMENDED_WEIGHT.0,
                RECOMMENDED_WEIGHT.1
            );
        }
        Ok(())
    }

    /// True when the sonar term participates in the loss.
    pub fn uses_sonar(&self) -> bool {
        self.sonar_kind != SonarKind::None && self.weight > 0.0
    }
}

fn check_same(measured: &Image, rendered: &Image) -> Result<()> {
    if measured.width != rendered.width || measured.height != rendered.height {
        return Err(Error::shape(
            format!("{}x{}", measured.width, measured.height),
            format!("{}x{}", rendered.width, rendered.height),
        ));
    }
    Ok(())
}

/// Mean absolute difference over pixels and channels.
pub fn camera_loss(measured: &Image, rendered: &Image) -> Result<f64> {
    check_same(measured, rendered)?;
    let n = (measured.pixels.len() * 3) as f64;
    let sum: f64 = measured
        .pixels
        .iter()
        .zip(&rendered.pixels)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>())
        .sum();
    Ok(sum / n)
}

/// Gradient of [`camera_loss`] with respect to the rendered pixels.
/// The subgradient at a zero residual is taken as 0.
pub fn camera_loss_grad(measured: &Image, rendered: &Image) -> Result<Vec<[f64; 3]>> {
    check_same(measured, rendered)?;
    let scale = 1.0 / (measured.pixels.len() * 3) as f64;
    Ok(measured
        .pixels
        .iter()
        .zip(&rendered.pixels)
        .map(|(m, r)| std::array::from_fn(|k| sign(r[k] - m[k]) * scale))
        .collect())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Euclidean (vector or Frobenius) norm of the difference over `sqrt(len)`.
pub fn sonar_loss(measured: &[f64], rendered: &[f64]) -> Result<f64> {
    Ok(sonar_loss_grad(measured, rendered)?.0)
}

/// [`sonar_loss`] and its gradient with respect to `rendered`; zero at a zero residual.
pub fn sonar_loss_grad(measured: &[f64], rendered: &[f64]) -> Result<(f64, Vec<f64>)> {
    if measured.len() != rendered.len() {
        return Err(Error::shape(measured.len(), rendered.len()));
    }
    if measured.is_empty() {
        return Err(Error::invalid("empty sonar measurement"));
    }
    let root_n = (measured.len() as f64).sqrt();
    let norm = measured
        .iter()
        .zip(rendered)
        .map(|(m, r)| (r - m) * (r - m))
        .sum::<f64>()
        .sqrt();
    let grad = if norm > 0.0 {
        measured
            .iter()
            .zip(rendered)
            .map(|(m, r)| (r - m) / (norm * root_n))
            .collect()
    } else {
        vec![0.0; measured.len()]
    };
    Ok((norm / root_n, grad))
}

/// Sonar loss after optional unit-mass normalization; gradient is with
/// respect to the unnormalized rendering.
pub fn scaled_sonar_loss_grad(
    measured: &[f64],
    rendered: &[f64],
    scale: MeasurementScale,
) -> Result<(f64, Vec<f64>)> {
    match scale {
        MeasurementScale::Raw => sonar_loss_grad(measured, rendered),
        MeasurementScale::UnitMass => {
            let m_total: f64 = measured.iter().sum();
            let m: Vec<f64> = if m_total > 0.0 {
                measured.iter().map(|v| v / m_total).collect()
            } else {
                measured.to_vec()
            };
            let r_total: f64 = rendered.iter().sum();
            if !(r_total > 0.0) {
                let zeros = vec![0.0; rendered.len()];
                let (loss, _) = sonar_loss_grad(&m, &zeros)?;
                return Ok((loss, zeros));
            }
            let r: Vec<f64> = rendered.iter().map(|v| v / r_total).collect();
            let (loss, g) = sonar_loss_grad(&m, &r)?;
            let dot: f64 = g.iter().zip(&r).map(|(a, b)| a * b).sum();
            Ok((loss, g.iter().map(|gi| (gi - dot) / r_total).collect()))
        }
    }
}

pub fn total_loss(camera: f64, sonar: f64, weight: f64) -> f64 {
    camera + weight * sonar
}
