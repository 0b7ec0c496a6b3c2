//! Fronthaul compression of pilot and data observations.
//!
//! Two pilot models are provided: the additive Gaussian model, which realizes
//! the circulant quantization noise exactly, and a per-bin scalar uniform
//! quantizer acting on the real and imaginary parts of each frequency bin.
//!
//! The scalar quantizer operates on the unitary spectrum `Y^n[k] / sqrt(N_p)`,
//! where a circulant noise of PSD `S` has per-bin variance `S`. Its step
//! `sqrt(12 / u)` then gives a per-component error variance of `S`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::{pilot_bin_power, InvPsdGrid};
use crate::psd_optimizer::white_psd_baseline;
use crate::signal_model::{complex_gaussian, seeded_rng, DataFrame, PilotFrame, SystemConfig};

/// Clip radius in standard deviations of the bin amplitude.
pub const CLIP_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionModel {
    Gaussian,
    ScalarUniform,
}

/// Pilot observations as received by the central unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPilotFrame {
    /// Frequency-domain observations `Y^n[k] + Q^n[k]`; zero on dropped bins.
    pub observations: Grid<Complex64>,
    pub transmitted_mask: Grid<bool>,
    pub model: CompressionModel,
}

impl CompressedPilotFrame {
    pub fn transmitted_count(&self) -> usize {
        self.transmitted_mask
            .as_slice()
            .iter()
            .filter(|m| **m)
            .count()
    }
}

/// Per-bin steps and clip radii, in the unitary-spectrum domain.
///
/// A step of `0` passes the bin through unquantized; an infinite step marks a
/// dropped bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarQuantizerSpec {
    pub step: Grid<f64>,
    pub clip_radius: Grid<f64>,
}

impl ScalarQuantizerSpec {
    pub fn is_transmitted(&self, n: usize, k: usize) -> bool {
        self.step[(n, k)].is_finite()
    }

    /// Bits per frame needed to index the levels of every transmitted bin,
    /// `2 log2(levels)` per bin. Diagnostic only.
    pub fn level_bits(&self) -> f64 {
        self.step
            .as_slice()
            .iter()
            .zip(self.clip_radius.as_slice())
            .filter(|(d, _)| d.is_finite() && **d > 0.0)
            .map(|(d, c)| 2.0 * (2.0 * c / d).ceil().max(1.0).log2())
            .sum()
    }
}

/// Adds complex Gaussian noise of variance `N_p / u` to every bin.
pub fn apply_gaussian_model(
    frame: &PilotFrame,
    grid: &InvPsdGrid,
    rng_seed: u64,
) -> Result<CompressedPilotFrame> {
    apply_gaussian_model_with(frame, grid, &mut seeded_rng(rng_seed, 0))
}

pub fn apply_gaussian_model_with<R: Rng + ?Sized>(
    frame: &PilotFrame,
    grid: &InvPsdGrid,
    rng: &mut R,
) -> Result<CompressedPilotFrame> {
    let (rows, cols) = frame.observations.shape();
    if grid.u.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch {
            expected: (rows, cols),
            got: grid.u.shape(),
        });
    }
    let np = cols as f64;
    let mut observations = frame.observations.clone();
    let mut mask = Grid::filled(rows, cols, true);
    for n in 0..rows {
        for k in 0..cols {
            let u = grid.u[(n, k)];
            if u == 0.0 {
                mask[(n, k)] = false;
                observations[(n, k)] = Complex64::new(0.0, 0.0);
            } else if u.is_finite() {
                observations[(n, k)] += complex_gaussian(rng, np / u);
            }
        }
    }
    Ok(CompressedPilotFrame {
        observations,
        transmitted_mask: mask,
        model: CompressionModel::Gaussian,
    })
}

/// Steps `sqrt(12 / u)` and a 4-sigma clip radius on the bin amplitude.
pub fn design_scalar_quantizer(
    grid: &InvPsdGrid,
    cfg: &SystemConfig,
) -> Result<ScalarQuantizerSpec> {
    grid.check_shape(cfg)?;
    Ok(ScalarQuantizerSpec {
        step: grid.u.map(|u| (12.0 / u).sqrt()),
        clip_radius: clip_radii(cfg),
    })
}

/// Uniform step of the white baseline with the same clip radii as the
/// shaped quantizer.
pub fn uniform_reference_quantizer(cfg: &SystemConfig) -> Result<ScalarQuantizerSpec> {
    design_scalar_quantizer(&white_psd_baseline(cfg)?, cfg)
}

fn clip_radii(cfg: &SystemConfig) -> Grid<f64> {
    pilot_bin_power(cfg).map(|p| CLIP_SIGMAS * p.sqrt())
}

/// Midrise uniform quantizer with saturation at `+-clip`.
pub fn midrise(x: f64, step: f64, clip: f64) -> f64 {
    if step == 0.0 {
        return x;
    }
    let x = x.clamp(-clip, clip);
    let q = step * ((x / step).floor() + 0.5);
    // Keep the outermost cells inside the clip radius when a level fits there.
    if q > clip && q - step > 0.0 {
        q - step
    } else if q < -clip && q + step < 0.0 {
        q + step
    } else {
        q
    }
}

/// Quantizes the real and imaginary parts of every transmitted bin.
pub fn apply_scalar_quantizer(
    frame: &PilotFrame,
    spec: &ScalarQuantizerSpec,
) -> Result<CompressedPilotFrame> {
    let shape = frame.observations.shape();
    if spec.step.shape() != shape || spec.clip_radius.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape,
            got: spec.step.shape(),
        });
    }
    let root = (shape.1 as f64).sqrt();
    let mut observations = frame.observations.clone();
    let mut mask = Grid::filled(shape.0, shape.1, true);
    for n in 0..shape.0 {
        for k in 0..shape.1 {
            let step = spec.step[(n, k)];
            if !step.is_finite() {
                mask[(n, k)] = false;
                observations[(n, k)] = Complex64::new(0.0, 0.0);
                continue;
            }
            let clip = spec.clip_radius[(n, k)];
            let z = observations[(n, k)] / root;
            observations[(n, k)] =
                Complex64::new(midrise(z.re, step, clip), midrise(z.im, step, clip)) * root;
        }
    }
    Ok(CompressedPilotFrame {
        observations,
        transmitted_mask: mask,
        model: CompressionModel::ScalarUniform,
    })
}

/// Adds white complex Gaussian noise of variance `sigma2_qd` per data sample.
pub fn apply_data_quantizer(frame: &DataFrame, sigma2_qd: f64, rng_seed: u64) -> Result<DataFrame> {
    apply_data_quantizer_with(frame, sigma2_qd, &mut seeded_rng(rng_seed, 0))
}

pub fn apply_data_quantizer_with<R: Rng + ?Sized>(
    frame: &DataFrame,
    sigma2_qd: f64,
    rng: &mut R,
) -> Result<DataFrame> {
    if !(sigma2_qd >= 0.0 && sigma2_qd.is_finite()) {
        return Err(Error::Domain(format!(
            "data quantization variance must be finite and nonnegative, got {sigma2_qd}"
        )));
    }
    let mut out = frame.clone();
    if sigma2_qd > 0.0 {
        for y in out.observations.iter_mut() {
            *y += complex_gaussian(rng, sigma2_qd);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::{synthesize_data_frame, synthesize_pilot_frame, Constellation};

    #[test]
    fn midrise_levels() {
        assert_eq!(midrise(0.2, 1.0, 10.0), 0.5);
        assert_eq!(midrise(-0.2, 1.0, 10.0), -0.5);
        assert_eq!(midrise(3.7, 1.0, 10.0), 3.5);
        assert_eq!(midrise(50.0, 1.0, 4.0), 3.5);
        assert_eq!(midrise(-50.0, 1.0, 4.0), -3.5);
        assert_eq!(midrise(0.123, 0.0, 1.0), 0.123);
        // A step wider than the range leaves one level per sign.
        assert_eq!(midrise(0.3, 10.0, 1.0), 5.0);
        assert_eq!(midrise(-0.3, 10.0, 1.0), -5.0);
    }

    #[test]
    fn step_design() {
        let cfg = SystemConfig::default();
        let spec =
            design_scalar_quantizer(&InvPsdGrid::uniform(&cfg, 12.0, 0.0).unwrap(), &cfg).unwrap();
        assert!(spec
            .step
            .as_slice()
            .iter()
            .all(|d| (*d - 1.0).abs() < 1e-15));
        let finer =
            design_scalar_quantizer(&InvPsdGrid::uniform(&cfg, 24.0, 0.0).unwrap(), &cfg).unwrap();
        assert!((spec.step[(0, 0)] / finer.step[(0, 0)] - 2f64.sqrt()).abs() < 1e-12);
        let dropped =
            design_scalar_quantizer(&InvPsdGrid::uniform(&cfg, 0.0, 0.0).unwrap(), &cfg).unwrap();
        assert!(!dropped.is_transmitted(1, 3));
        let np = cfg.pilot_len as f64;
        let p = cfg.pilot_energy * cfg.amplitude * cfg.amplitude + cfg.pilot_noise_power();
        // Same radius as 4 sigma of the unnormalized bin, expressed per unit DFT gain.
        assert!((spec.clip_radius[(1, 5)] * np.sqrt() - 4.0 * (np * p).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reference_quantizer_is_uniform() {
        let cfg = SystemConfig::default();
        let spec = uniform_reference_quantizer(&cfg).unwrap();
        let d0 = spec.step[(0, 0)];
        assert!(spec.step.as_slice().iter().all(|d| *d == d0));
    }

    #[test]
    fn gaussian_model_extremes() {
        let cfg = SystemConfig::default();
        let frame = synthesize_pilot_frame(&cfg, 0.1, 0.2, 3).unwrap();
        let same = apply_gaussian_model(&frame, &InvPsdGrid::unquantized(&cfg), 1).unwrap();
        assert_eq!(same.observations, frame.observations);
        assert_eq!(same.transmitted_count(), cfg.oversampling * cfg.pilot_len);
        let none =
            apply_gaussian_model(&frame, &InvPsdGrid::uniform(&cfg, 0.0, 0.0).unwrap(), 1).unwrap();
        assert_eq!(none.transmitted_count(), 0);
    }

    #[test]
    fn scalar_quantizer_is_deterministic() {
        let cfg = SystemConfig::default();
        let frame = synthesize_pilot_frame(&cfg, -0.05, 1.0, 9).unwrap();
        let spec = uniform_reference_quantizer(&cfg).unwrap();
        let a = apply_scalar_quantizer(&frame, &spec).unwrap();
        let b = apply_scalar_quantizer(&frame, &spec).unwrap();
        assert_eq!(a, b);
        assert!(spec.level_bits() > 0.0);
    }

    #[test]
    fn data_quantizer_zero_is_identity() {
        let cfg = SystemConfig::default();
        let frame = synthesize_data_frame(&cfg, 0.0, 0.0, Constellation::Qpsk, 4).unwrap();
        assert_eq!(apply_data_quantizer(&frame, 0.0, 7).unwrap(), frame);
        assert!(apply_data_quantizer(&frame, -1.0, 7).is_err());
    }
}
