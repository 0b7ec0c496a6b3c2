//! Monte Carlo link simulation: pilot compression, offset estimation,
//! compensation, detection and statistics.
//!
//! Trial `i` of a run with seed `s` draws everything from stream `i` of a
//! ChaCha8 generator seeded with `s`, so runs are reproducible and identical
//! with or without rayon.

pub mod estimator;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use estimator::{estimate_offsets, wrap_angle, wrap_cycles, EstimationResult};

use crate::error::{Error, Result};
use crate::exec::{compensated_sum, map_indexed, Parallelism};
use crate::metrics::{ErrorTermPowers, InvPsdGrid};
use crate::quantizer::{
    apply_data_quantizer_with, apply_gaussian_model_with, apply_scalar_quantizer,
    CompressedPilotFrame, CompressionModel, ScalarQuantizerSpec,
};
use crate::signal_model::{
    pulse_value, seeded_rng, Constellation, DataFrame, FrameContext, PilotFrame, SystemConfig,
};

/// Smallest run accepted by the experiment drivers.
pub const MIN_TRIALS: usize = 100;

/// Pilot compression applied before estimation.
#[derive(Debug, Clone, PartialEq)]
pub enum Compression {
    Unquantized,
    Gaussian(InvPsdGrid),
    Scalar(ScalarQuantizerSpec),
}

impl Compression {
    pub fn apply<R: Rng + ?Sized>(
        &self,
        frame: &PilotFrame,
        rng: &mut R,
    ) -> Result<CompressedPilotFrame> {
        match self {
            Compression::Unquantized => {
                let (rows, cols) = frame.observations.shape();
                Ok(CompressedPilotFrame {
                    observations: frame.observations.clone(),
                    transmitted_mask: crate::grid::Grid::filled(rows, cols, true),
                    model: CompressionModel::Gaussian,
                })
            }
            Compression::Gaussian(grid) => apply_gaussian_model_with(frame, grid, rng),
            Compression::Scalar(spec) => apply_scalar_quantizer(frame, spec),
        }
    }
}

/// Whether the data phase uses the estimated offsets or the true ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    #[default]
    Estimated,
    Perfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SerSetup {
    pub constellation: Constellation,
    pub sigma2_qd: f64,
    pub sync: SyncMode,
}

/// Aggregated Monte Carlo results; `se_*` are standard errors of the means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub mse_tau: f64,
    pub se_tau: f64,
    pub mse_theta: f64,
    pub se_theta: f64,
    pub ser: f64,
    pub se_ser: f64,
    pub n_trials: usize,
    pub n_symbols: u64,
    /// Trials whose pilots could not separate delay and phase; these use the
    /// prior mean `(0, 0)` as the estimate.
    pub estimation_failures: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    err_tau2: f64,
    err_theta2: f64,
    symbol_errors: u64,
    symbols: u64,
    failed: bool,
}

/// Applies `exp(-j theta_hat)` and undoes the delay `tau_hat` on the data
/// observations.
pub fn compensate(ctx: &FrameContext, data: &DataFrame, est: &EstimationResult) -> Vec<Complex64> {
    let rotation = Complex64::from_polar(1.0, -est.theta_hat);
    let mut buf: Vec<Complex64> = data.observations.iter().map(|y| y * rotation).collect();
    if est.tau_hat != 0.0 {
        ctx.data_dft
            .delay(&mut buf, -est.tau_hat / ctx.cfg.symbol_period);
    }
    buf
}

/// Compensates the data field and returns nearest-neighbour decisions as
/// indices into `constellation.points()`.
pub fn compensate_and_detect(
    data: &DataFrame,
    est: &EstimationResult,
    cfg: &SystemConfig,
    constellation: Constellation,
) -> Result<Vec<usize>> {
    let ctx = FrameContext::new(cfg)?;
    Ok(detect(&ctx, &compensate(&ctx, data, est), constellation))
}

fn detect(ctx: &FrameContext, samples: &[Complex64], constellation: Constellation) -> Vec<usize> {
    let scale = ctx.cfg.amplitude * ctx.cfg.data_energy.sqrt();
    samples
        .iter()
        .map(|z| constellation.nearest(*z, scale))
        .collect()
}

fn draw_offsets<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> (f64, f64) {
    let t = cfg.symbol_period;
    let tau = rng.random_range(-0.25 * t..0.25 * t);
    let theta = rng.random_range(-0.5 * PI..0.5 * PI);
    (tau, theta)
}

fn check_trials(n_trials: usize) -> Result<()> {
    if n_trials < MIN_TRIALS {
        return Err(Error::InvalidConfig(format!(
            "Monte Carlo runs need at least {MIN_TRIALS} trials, got {n_trials}"
        )));
    }
    Ok(())
}

/// Mean and standard error of the mean.
fn mean_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = compensated_sum(values.clone()) / nf;
    let var = compensated_sum(values.map(|v| (v - mean) * (v - mean))) / (nf - 1.0).max(1.0);
    (mean, (var / nf).sqrt())
}

fn aggregate(outcomes: Vec<Result<Outcome>>, seed: u64) -> Result<TrialStats> {
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let n = outcomes.len();
    let (mse_tau, se_tau) = mean_se(outcomes.iter().map(|o| o.err_tau2), n);
    let (mse_theta, se_theta) = mean_se(outcomes.iter().map(|o| o.err_theta2), n);
    let n_symbols: u64 = outcomes.iter().map(|o| o.symbols).sum();
    let errors: u64 = outcomes.iter().map(|o| o.symbol_errors).sum();
    let estimation_failures = outcomes.iter().filter(|o| o.failed).count();
    let (ser, se_ser) = if n_symbols == 0 {
        (0.0, 0.0)
    } else {
        let per_trial = outcomes
            .iter()
            .map(|o| o.symbol_errors as f64 / o.symbols.max(1) as f64);
        let (_, se) = mean_se(per_trial, n);
        (errors as f64 / n_symbols as f64, se)
    };
    Ok(TrialStats {
        mse_tau,
        se_tau,
        mse_theta,
        se_theta,
        ser,
        se_ser,
        n_trials: n,
        n_symbols,
        estimation_failures,
        seed,
    })
}

fn estimation_trial(
    ctx: &FrameContext,
    compression: &Compression,
    seed: u64,
    trial: usize,
) -> Result<(f64, f64, Option<EstimationResult>, ChaCha8Rng)> {
    let mut rng = seeded_rng(seed, trial as u64);
    let (tau, theta) = draw_offsets(&mut rng, &ctx.cfg);
    let frame = ctx.pilot_frame(tau, theta, &mut rng)?;
    let compressed = compression.apply(&frame, &mut rng)?;
    match estimate_offsets(&compressed, &frame.pilots_freq, &ctx.cfg) {
        Ok(est) => Ok((tau, theta, Some(est), rng)),
        Err(Error::EstimationImpossible(_)) => Ok((tau, theta, None, rng)),
        Err(e) => Err(e),
    }
}

const PRIOR_MEAN: EstimationResult = EstimationResult {
    tau_hat: 0.0,
    theta_hat: 0.0,
    objective: f64::NAN,
};

/// Estimator MSE over random offsets, pilots and noise.
pub fn run_mse_experiment(
    cfg: &SystemConfig,
    compression: &Compression,
    n_trials: usize,
    seed: u64,
) -> Result<TrialStats> {
    run_mse_experiment_with(cfg, compression, n_trials, seed, Parallelism::Auto)
}

pub fn run_mse_experiment_with(
    cfg: &SystemConfig,
    compression: &Compression,
    n_trials: usize,
    seed: u64,
    parallelism: Parallelism,
) -> Result<TrialStats> {
    check_trials(n_trials)?;
    let ctx = FrameContext::new(cfg)?;
    let outcomes = map_indexed(n_trials, parallelism, |i| {
        let (tau, theta, est, _) = estimation_trial(&ctx, compression, seed, i)?;
        let failed = est.is_none();
        let est = est.unwrap_or(PRIOR_MEAN);
        Ok(Outcome {
            err_tau2: (est.tau_hat - tau).powi(2),
            err_theta2: wrap_angle(est.theta_hat - theta).powi(2),
            symbol_errors: 0,
            symbols: 0,
            failed,
        })
    });
    aggregate(outcomes, seed)
}

/// Uncoded symbol error rate of the full pilot-then-data pipeline.
pub fn run_ser_experiment(
    cfg: &SystemConfig,
    compression: &Compression,
    setup: &SerSetup,
    n_trials: usize,
    seed: u64,
) -> Result<TrialStats> {
    run_ser_experiment_with(cfg, compression, setup, n_trials, seed, Parallelism::Auto)
}

pub fn run_ser_experiment_with(
    cfg: &SystemConfig,
    compression: &Compression,
    setup: &SerSetup,
    n_trials: usize,
    seed: u64,
    parallelism: Parallelism,
) -> Result<TrialStats> {
    check_trials(n_trials)?;
    let ctx = FrameContext::new(cfg)?;
    let outcomes = map_indexed(n_trials, parallelism, |i| {
        let (tau, theta, est, mut rng) = match setup.sync {
            SyncMode::Estimated => estimation_trial(&ctx, compression, seed, i)?,
            SyncMode::Perfect => {
                let mut rng = seeded_rng(seed, i as u64);
                let (tau, theta) = draw_offsets(&mut rng, cfg);
                let est = EstimationResult {
                    tau_hat: tau,
                    theta_hat: theta,
                    objective: 0.0,
                };
                (tau, theta, Some(est), rng)
            }
        };
        let failed = est.is_none();
        let est = est.unwrap_or(PRIOR_MEAN);
        let data = ctx.data_frame(tau, theta, setup.constellation, &mut rng)?;
        let data = apply_data_quantizer_with(&data, setup.sigma2_qd, &mut rng)?;
        let decisions = detect(&ctx, &compensate(&ctx, &data, &est), setup.constellation);
        let errors = decisions
            .iter()
            .zip(&data.symbol_indices)
            .filter(|(a, b)| a != b)
            .count() as u64;
        Ok(Outcome {
            err_tau2: (est.tau_hat - tau).powi(2),
            err_theta2: wrap_angle(est.theta_hat - theta).powi(2),
            symbol_errors: errors,
            symbols: decisions.len() as u64,
            failed,
        })
    });
    aggregate(outcomes, seed)
}

/// Neighbours on each side kept in the interference sum.
const ISI_SPAN: i64 = 3;

/// Empirical powers of the desired signal, the phase-error term and the ISI
/// for uniform residual errors, using the exact sinc pulse.
///
/// Timing and phase errors are drawn by Latin-hypercube stratification over
/// `n_trials` strata; the data symbols are QPSK.
pub fn measure_error_term_powers(
    cfg: &SystemConfig,
    delta_tau_max: f64,
    delta_theta_max: f64,
    n_trials: usize,
    seed: u64,
) -> Result<ErrorTermPowers> {
    measure_error_term_powers_with(
        cfg,
        delta_tau_max,
        delta_theta_max,
        n_trials,
        seed,
        Parallelism::Auto,
    )
}

pub fn measure_error_term_powers_with(
    cfg: &SystemConfig,
    delta_tau_max: f64,
    delta_theta_max: f64,
    n_trials: usize,
    seed: u64,
    parallelism: Parallelism,
) -> Result<ErrorTermPowers> {
    cfg.validate()?;
    let t = cfg.symbol_period;
    if !(delta_tau_max >= 0.0 && delta_tau_max < 0.5 * t) {
        return Err(Error::Domain(format!(
            "delta_tau_max must lie in [0, T/2), got {delta_tau_max}"
        )));
    }
    if !(delta_theta_max >= 0.0) {
        return Err(Error::Domain("delta_theta_max must be nonnegative".into()));
    }
    if n_trials == 0 {
        return Err(Error::InvalidConfig("need at least one draw".into()));
    }
    let mut strata: Vec<usize> = (0..n_trials).collect();
    strata.shuffle(&mut seeded_rng(seed, u64::MAX));
    let points = Constellation::Qpsk.points();
    let scale = cfg.data_energy.sqrt();
    let amp = cfg.amplitude;

    let draws = map_indexed(n_trials, parallelism, |i| {
        let mut rng = seeded_rng(seed, i as u64);
        let nf = n_trials as f64;
        let dtau = ((i as f64 + rng.random::<f64>()) / nf - 0.5) * delta_tau_max;
        let dtheta = ((strata[i] as f64 + rng.random::<f64>()) / nf - 0.5) * delta_theta_max;
        let mut symbol = || points[rng.random_range(0..points.len())] * scale;
        let x_m = symbol();
        let gain = if dtau == 0.0 {
            1.0
        } else {
            pulse_value(dtau, cfg)
        };
        let s_d = amp * x_m * gain;
        let z_s = s_d * (Complex64::from_polar(1.0, dtheta) - 1.0);
        let mut isi = Complex64::new(0.0, 0.0);
        for l in -ISI_SPAN..=ISI_SPAN {
            if l == 0 {
                continue;
            }
            let x_l = symbol();
            if dtau != 0.0 {
                isi += x_l * pulse_value(l as f64 * t + dtau, cfg);
            }
        }
        let z_isi = amp * Complex64::from_polar(1.0, dtheta) * isi;
        [s_d.norm_sqr(), z_s.norm_sqr(), z_isi.norm_sqr()]
    });
    let mean = |j: usize| compensated_sum(draws.iter().map(|d| d[j])) / n_trials as f64;
    Ok(ErrorTermPowers {
        p_signal: mean(0),
        p_phase_noise: mean(1),
        p_isi: mean(2),
    })
}
