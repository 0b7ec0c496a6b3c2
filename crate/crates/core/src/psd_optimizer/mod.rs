//! Optimization of the pilot quantization-noise spectrum.
//!
//! The effective SNR is maximized over the inverse PSD `u` of every pilot bin
//! subject to the fronthaul budget `N_p C`. The data-phase variance is fixed
//! by saturating the data budget, which leaves a weighted sum of the two
//! bounds to minimize. The substitution `v = 1 / (1 + (N0/T_s) u)` makes the
//! objective convex; the rate constraint becomes a difference of convex
//! functions, handled by linearizing its concave part at the current iterate
//! and solving the resulting convex problem (see [`barrier`]) until the
//! objective stops improving.

pub mod barrier;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

pub use barrier::{solve_convex_subproblem, solve_convex_subproblem_from, SubproblemSolution};

use crate::error::{Error, Result};
use crate::grid::{centered_index, Grid};
use crate::metrics::{
    self, crb, data_rate, pilot_bin_power, pilot_rate, InvPsdGrid, LinearApproxCoeffs,
};
use crate::signal_model::{polyphase_response, SystemConfig};

/// `v = 1 / (1 + (N0/T_s) u)`.
pub fn charnes_cooper(u: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::Domain(format!(
            "inverse PSD must be nonnegative, got {u}"
        )));
    }
    if u.is_infinite() {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + cfg.pilot_noise_power() * u))
}

/// `u = (1/v - 1) / (N0/T_s)`, defined for `0 < v <= 1`.
pub fn charnes_cooper_inverse(v: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::Domain(format!("v must lie in (0, 1], got {v}")));
    }
    Ok((1.0 / v - 1.0) / cfg.pilot_noise_power())
}

/// Fisher weights and objective weights of the reduced problem.
///
/// `b[i] = E_xp A^2 |G^n[k]|^2` feeds the phase bound and
/// `a[i] = (2 pi / (N_p T))^2 k_c^2 b[i]` the delay bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcCoefficients {
    pub a: Grid<f64>,
    pub b: Grid<f64>,
    /// `N0 / T_s`.
    pub noise: f64,
    /// `A^2 E_xd`, the weight of the phase bound.
    pub theta_weight: f64,
    /// `A^2 E_xd a_bar / T^2`, the weight of the delay bound.
    pub tau_weight: f64,
    /// `N_p C`.
    pub budget_bits: f64,
}

impl DcCoefficients {
    pub fn new(cfg: &SystemConfig, approx: &LinearApproxCoeffs) -> Result<Self> {
        cfg.validate()?;
        if !(cfg.noise_psd > 0.0) {
            return Err(Error::Domain(
                "the change of variables needs a positive noise PSD".into(),
            ));
        }
        let g = polyphase_response(cfg).g_freq;
        let signal = cfg.pilot_energy * cfg.amplitude * cfg.amplitude;
        let b = g.map(|z| signal * z.norm_sqr());
        let scale = metrics::delay_fisher_scale(cfg);
        let a = Grid::from_fn(cfg.oversampling, cfg.pilot_len, |n, k| {
            let kc = centered_index(k, cfg.pilot_len) as f64;
            scale * kc * kc * b[(n, k)]
        });
        let p = cfg.amplitude * cfg.amplitude * cfg.data_energy;
        let t = cfg.symbol_period;
        Ok(DcCoefficients {
            a,
            b,
            noise: cfg.pilot_noise_power(),
            theta_weight: p,
            tau_weight: p * approx.a_bar / (t * t),
            budget_bits: cfg.pilot_len as f64 * cfg.capacity,
        })
    }

    /// False when no bin carries delay information (every `k_c = 0`).
    pub fn has_tau_term(&self) -> bool {
        self.tau_weight > 0.0 && self.a.as_slice().iter().any(|a| *a > 0.0)
    }
}

/// Tangent of the concave rate part at an iterate: `e v + f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linearization {
    pub e: Grid<f64>,
    pub f: Grid<f64>,
}

/// Weighted bound sum in the transformed variables. Returns `+inf` when a
/// term has zero Fisher information (e.g. `v = 1` everywhere).
pub fn dc_objective(v: &Grid<f64>, coeffs: &DcCoefficients) -> f64 {
    let mut sb = 0.0;
    let mut sa = 0.0;
    for ((v, a), b) in v
        .as_slice()
        .iter()
        .zip(coeffs.a.as_slice())
        .zip(coeffs.b.as_slice())
    {
        sb += b / coeffs.noise * (1.0 - v);
        sa += a / coeffs.noise * (1.0 - v);
    }
    if !(sb > 0.0) {
        return f64::INFINITY;
    }
    let mut j = coeffs.theta_weight / sb;
    if coeffs.has_tau_term() {
        if !(sa > 0.0) {
            return f64::INFINITY;
        }
        j += coeffs.tau_weight / sa;
    }
    j
}

/// Tangent of `log2(b (1 - v) + N0/T_s)` at `v_iterate`.
pub fn dc_linearize(v_iterate: &Grid<f64>, coeffs: &DcCoefficients) -> Result<Linearization> {
    if v_iterate
        .as_slice()
        .iter()
        .any(|v| !(*v > 0.0 && *v <= 1.0))
    {
        return Err(Error::Domain("iterate must lie in (0, 1]".into()));
    }
    let nu = coeffs.noise;
    let e = Grid::from_fn(v_iterate.rows(), v_iterate.cols(), |n, k| {
        let b = coeffs.b[(n, k)];
        -b / (LN_2 * (nu + b - b * v_iterate[(n, k)]))
    });
    let f = Grid::from_fn(v_iterate.rows(), v_iterate.cols(), |n, k| {
        let b = coeffs.b[(n, k)];
        let v = v_iterate[(n, k)];
        (nu + b - b * v).log2() - e[(n, k)] * v
    });
    Ok(Linearization { e, f })
}

/// The concave rate part `log2(b (1 - v) + N0/T_s)` of one bin.
pub fn concave_rate_term(v: f64, b: f64, noise: f64) -> f64 {
    (noise + b - b * v).log2()
}

/// Exact (non-linearized) pilot rate in the transformed variables.
pub fn rate_in_v(v: &Grid<f64>, coeffs: &DcCoefficients) -> f64 {
    let nu = coeffs.noise;
    v.as_slice()
        .iter()
        .zip(coeffs.b.as_slice())
        .map(|(v, b)| {
            let s = 1.0 - v;
            // log2((nu + b s) / (nu v)), written to keep precision for small s
            ((b * s / nu).ln_1p() - (-s).ln_1p()) / LN_2
        })
        .sum()
}

/// One accepted iterate of the DC loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcState {
    pub v: Grid<f64>,
    pub iteration: usize,
    pub objective: f64,
    /// `N_p C` minus the exact pilot rate at `v`.
    pub constraint_slack: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcTrace {
    /// Iterate 0 is the initialization `v = 1`.
    pub states: Vec<DcState>,
    pub converged: bool,
    pub warning: Option<String>,
    /// Pulse coefficients used for the objective weights.
    pub approx: LinearApproxCoeffs,
}

impl DcTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.objective).collect()
    }

    pub fn iterations(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Relative objective change that stops the DC loop.
    pub tol: f64,
    /// Relative duality-gap target of each convex subproblem.
    pub subproblem_tol: f64,
    /// Bins with `u < drop_threshold * max(u)` are dropped.
    pub drop_threshold: f64,
    /// Allowed violation of the exact rate constraint, in bits.
    pub tol_feas: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iters: 200,
            tol: 1e-8,
            subproblem_tol: 1e-12,
            drop_threshold: 1e-9,
            tol_feas: 1e-6,
        }
    }
}

/// Largest nominal timing-error spread used for the pulse coefficients.
const MAX_NOMINAL_SPREAD: f64 = 0.5;

/// Pulse coefficients at the spread implied by the white-PSD bounds at the
/// operating point; held fixed while the spectrum is optimized.
pub fn nominal_coeffs(cfg: &SystemConfig) -> Result<LinearApproxCoeffs> {
    let white = white_psd_baseline(cfg)?;
    let bounds = crb(cfg, &white)?;
    let spread = (12.0 * bounds.crb_tau)
        .sqrt()
        .min(MAX_NOMINAL_SPREAD * cfg.symbol_period);
    metrics::linear_approx_coeffs(spread, (12.0 * bounds.crb_theta).sqrt(), cfg)
}

/// Runs the DC algorithm with default settings and nominal coefficients.
pub fn optimize_psd(
    cfg: &SystemConfig,
    max_iters: usize,
    tol: f64,
) -> Result<(InvPsdGrid, DcTrace)> {
    let settings = OptimizerSettings {
        max_iters,
        tol,
        ..OptimizerSettings::default()
    };
    optimize_psd_with(cfg, &nominal_coeffs(cfg)?, &settings)
}

pub fn optimize_psd_with(
    cfg: &SystemConfig,
    approx: &LinearApproxCoeffs,
    settings: &OptimizerSettings,
) -> Result<(InvPsdGrid, DcTrace)> {
    let coeffs = DcCoefficients::new(cfg, approx)?;
    let (rows, cols) = cfg.grid_shape();
    let mut v = Grid::filled(rows, cols, 1.0);
    let mut states = vec![DcState {
        v: v.clone(),
        iteration: 0,
        objective: f64::INFINITY,
        constraint_slack: coeffs.budget_bits,
        kkt_residual: 0.0,
    }];
    let mut best = f64::INFINITY;
    let mut converged = false;
    let mut warning = None;

    for iteration in 1..=settings.max_iters {
        let lin = dc_linearize(&v, &coeffs)?;
        let start = warm_start(&v, &coeffs, &lin);
        let sol =
            solve_convex_subproblem_from(&coeffs, &lin, settings.subproblem_tol, start.as_deref())?;
        let next = Grid::from_vec(rows, cols, sol.s.iter().map(|s| 1.0 - s).collect());
        let objective = dc_objective(&next, &coeffs);
        if objective > best {
            // The barrier solution can only lose to the incumbent by its
            // duality gap; keep the incumbent and stop.
            converged = (objective - best) <= 1e3 * settings.subproblem_tol * best;
            if !converged {
                warning = Some(format!(
                    "DC iteration {iteration} increased the objective from {best} to {objective}"
                ));
            }
            break;
        }
        let slack = coeffs.budget_bits - rate_in_v(&next, &coeffs);
        if slack < -settings.tol_feas {
            warning = Some(format!(
                "DC iteration {iteration} violates the rate budget by {} bits",
                -slack
            ));
            break;
        }
        let change = if best.is_finite() {
            (best - objective) / objective
        } else {
            f64::INFINITY
        };
        v = next;
        best = objective;
        states.push(DcState {
            v: v.clone(),
            iteration,
            objective,
            constraint_slack: slack,
            kkt_residual: sol.kkt_residual,
        });
        if change < settings.tol {
            converged = true;
            break;
        }
    }
    if !converged && warning.is_none() {
        warning = Some(format!(
            "DC algorithm did not converge within {} iterations",
            settings.max_iters
        ));
    }

    let mut u = v.map(|v| {
        if *v >= 1.0 {
            0.0
        } else {
            (1.0 / v - 1.0) / coeffs.noise
        }
    });
    let u_max = u.as_slice().iter().cloned().fold(0.0, f64::max);
    for x in u.as_mut_slice() {
        if *x < settings.drop_threshold * u_max {
            *x = 0.0;
        }
    }
    let grid = InvPsdGrid::new(u, data_phase_noise_variance(cfg)?)?;
    Ok((
        grid,
        DcTrace {
            states,
            converged,
            warning,
            approx: *approx,
        },
    ))
}

/// Strictly feasible start for the next subproblem, blending the incumbent
/// with a small uniform point.
fn warm_start(v: &Grid<f64>, coeffs: &DcCoefficients, lin: &Linearization) -> Option<Vec<f64>> {
    if v.as_slice().iter().all(|v| *v == 1.0) {
        return None;
    }
    let budget = coeffs.budget_bits;
    let nu = coeffs.noise;
    let h = |s: &[f64]| -> f64 {
        s.iter()
            .zip(lin.e.as_slice().iter().zip(lin.f.as_slice()))
            .map(|(s, (e, f))| e * (1.0 - s) + f - (nu * (1.0 - s)).log2())
            .sum::<f64>()
            - budget
    };
    let incumbent: Vec<f64> = v.as_slice().iter().map(|v| 1.0 - v).collect();
    for floor in [1e-3, 1e-5, 1e-8] {
        for weight in [0.9, 0.5] {
            let s: Vec<f64> = incumbent
                .iter()
                .map(|s| weight * s + (1.0 - weight) * floor)
                .collect();
            if s.iter().all(|x| *x > 0.0 && *x < 1.0) && h(&s) < 0.0 {
                return Some(s.iter().map(|s| 1.0 - s).collect());
            }
        }
    }
    None
}

/// Data-phase quantization variance that saturates the data budget `N_d C`.
pub fn data_phase_noise_variance(cfg: &SystemConfig) -> Result<f64> {
    cfg.validate()?;
    let target = cfg.data_len as f64 * cfg.capacity;
    let excess = |sigma2: f64| data_rate(cfg, sigma2).map(|r| r - target);
    let power = cfg.data_energy * cfg.amplitude * cfg.amplitude + cfg.data_noise_power();
    bisect_log(
        excess,
        power * 1e-300_f64.max(f64::MIN_POSITIVE),
        power * 1e3,
        1e-14,
    )
}

/// Uniform inverse PSD that saturates the pilot budget `N_p C`.
pub fn white_psd_baseline(cfg: &SystemConfig) -> Result<InvPsdGrid> {
    cfg.validate()?;
    let target = cfg.pilot_len as f64 * cfg.capacity;
    let (rows, cols) = cfg.grid_shape();
    let power = pilot_bin_power(cfg);
    let p_min = power
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let excess = |u: f64| {
        pilot_rate(
            cfg,
            &InvPsdGrid {
                u: Grid::filled(rows, cols, u),
                sigma2_qd: 0.0,
            },
        )
        .map(|r| target - r)
    };
    // Rate is increasing in u; bisect on the decreasing excess.
    let u = bisect_log(excess, 1e-300 / p_min, 1e300 / p_min, 1e-15)?;
    InvPsdGrid::new(Grid::filled(rows, cols, u), data_phase_noise_variance(cfg)?)
}

/// Root of a decreasing function on `[lo, hi]` by geometric bisection.
fn bisect_log(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
) -> Result<f64> {
    if !(f(lo)? > 0.0 && f(hi)? < 0.0) {
        return Err(Error::Numerical(
            "bisection bracket does not contain a root".into(),
        ));
    }
    for _ in 0..4000 {
        let mid = (lo * hi).sqrt();
        let mid = if mid > lo && mid < hi {
            mid
        } else {
            0.5 * (lo + hi)
        };
        let val = f(mid)?;
        if val == 0.0 {
            return Ok(mid);
        }
        if val > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= rel_tol * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn charnes_cooper_examples() {
        let mut cfg = SystemConfig {
            oversampling: 1,
            ..SystemConfig::default()
        };
        cfg.noise_psd = cfg.sample_period();
        assert_eq!(charnes_cooper(0.0, &cfg).unwrap(), 1.0);
        assert_eq!(charnes_cooper(1.0, &cfg).unwrap(), 0.5);
        assert!(charnes_cooper(1e300, &cfg).unwrap() < 1e-299);
        assert_eq!(charnes_cooper(f64::INFINITY, &cfg).unwrap(), 0.0);
        assert!(charnes_cooper(-1.0, &cfg).is_err());
        assert!(charnes_cooper_inverse(0.0, &cfg).is_err());
        assert!(charnes_cooper_inverse(1.5, &cfg).is_err());
        assert_eq!(charnes_cooper_inverse(1.0, &cfg).unwrap(), 0.0);
        for u in [0.01, 0.3, 2.0, 40.0] {
            let back = charnes_cooper_inverse(charnes_cooper(u, &cfg).unwrap(), &cfg).unwrap();
            assert!(rel(back, u) < 1e-12);
        }
    }

    #[test]
    fn linearize_example_and_tangency() {
        let coeffs = DcCoefficients {
            a: Grid::filled(1, 1, 0.0),
            b: Grid::filled(1, 1, 1.0),
            noise: 1.0,
            theta_weight: 1.0,
            tau_weight: 0.0,
            budget_bits: 1.0,
        };
        let lin = dc_linearize(&Grid::filled(1, 1, 1.0), &coeffs).unwrap();
        assert!((lin.e[(0, 0)] + 1.0 / LN_2).abs() < 1e-12);
        assert!((lin.f[(0, 0)] - 1.0 / LN_2).abs() < 1e-12);
        assert!((lin.e[(0, 0)] + std::f64::consts::LOG2_E).abs() < 1e-6);
        assert!(dc_linearize(&Grid::filled(1, 1, 0.0), &coeffs).is_err());
    }

    #[test]
    fn white_baseline_closed_forms() {
        let mut cfg = SystemConfig {
            oversampling: 1,
            pilot_energy: 1.0,
            capacity: 1.0,
            ..SystemConfig::default()
        };
        cfg.noise_psd = 0.1 * cfg.sample_period();
        let w = white_psd_baseline(&cfg).unwrap();
        assert!(rel(w.u[(0, 0)], 1.0 / 0.59) < 1e-12);
        assert!((w.u[(0, 0)] - 1.694_915).abs() < 1e-6);

        let mut cfg2 = SystemConfig {
            oversampling: 2,
            pilot_energy: 1.0,
            capacity: 3.0,
            ..SystemConfig::default()
        };
        cfg2.noise_psd = 0.1 * cfg2.sample_period();
        let w2 = white_psd_baseline(&cfg2).unwrap();
        let s_white = 1.0 / w2.u[(1, 3)];
        assert!(rel(s_white, 0.59 / (2f64.powf(1.5) - 1.0)) < 1e-12);
        assert!((s_white - 0.322_681_7).abs() < 1e-7);
        let bits = pilot_rate(&cfg2, &w2).unwrap();
        assert!((bits - 48.0).abs() < 1e-9);
    }

    #[test]
    fn data_variance_closed_form() {
        let cfg = SystemConfig {
            amplitude: 0.7,
            data_energy: 1.0,
            noise_psd: 0.1,
            capacity: 3.0,
            ..SystemConfig::default()
        };
        let s = data_phase_noise_variance(&cfg).unwrap();
        assert!(rel(s, 0.59 / 7.0) < 1e-10);
        assert!((s - 0.084_285_7).abs() < 1e-7);
        let rate = data_rate(&cfg, s).unwrap();
        assert!(rel(rate, 84.0 * 3.0) < 1e-9);
        let big = SystemConfig {
            capacity: 40.0,
            ..cfg
        };
        assert!(data_phase_noise_variance(&big).unwrap() < 1e-11);
    }
}
