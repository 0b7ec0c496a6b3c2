//! Closed-form performance arithmetic: fronthaul rates, Cramer-Rao bounds,
//! the piecewise-linear pulse coefficients, error-term powers and the
//! effective SNR that the optimizer maximizes.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{centered_index, Grid};
use crate::signal_model::{polyphase_response, pulse_value, SystemConfig};

/// Inverse quantization-noise PSD of the pilot branches plus the data-phase
/// quantization-noise variance.
///
/// `u[(n, k)] = 1 / S_Q^n[k]`; zero means the bin is dropped (not sent),
/// `f64::INFINITY` means it is sent without quantization noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvPsdGrid {
    pub u: Grid<f64>,
    pub sigma2_qd: f64,
}

impl InvPsdGrid {
    pub fn new(u: Grid<f64>, sigma2_qd: f64) -> Result<Self> {
        if u.as_slice().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain(
                "inverse PSD entries must be nonnegative".into(),
            ));
        }
        if !(sigma2_qd >= 0.0) {
            return Err(Error::Domain(
                "data quantization variance must be nonnegative".into(),
            ));
        }
        Ok(InvPsdGrid { u, sigma2_qd })
    }

    pub fn uniform(cfg: &SystemConfig, u: f64, sigma2_qd: f64) -> Result<Self> {
        let (f, np) = cfg.grid_shape();
        Self::new(Grid::filled(f, np, u), sigma2_qd)
    }

    /// No quantization anywhere.
    pub fn unquantized(cfg: &SystemConfig) -> Self {
        let (f, np) = cfg.grid_shape();
        InvPsdGrid {
            u: Grid::filled(f, np, f64::INFINITY),
            sigma2_qd: 0.0,
        }
    }

    pub fn check_shape(&self, cfg: &SystemConfig) -> Result<()> {
        if self.u.shape() != cfg.grid_shape() {
            return Err(Error::ShapeMismatch {
                expected: cfg.grid_shape(),
                got: self.u.shape(),
            });
        }
        Ok(())
    }

    pub fn is_transmitted(&self, n: usize, k: usize) -> bool {
        self.u[(n, k)] > 0.0
    }

    pub fn dropped_count(&self) -> usize {
        self.u.as_slice().iter().filter(|v| **v == 0.0).count()
    }
}

/// Timing bound in seconds squared, phase bound in radians squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbPair {
    pub crb_tau: f64,
    pub crb_theta: f64,
}

/// Piecewise-linear approximation of the sinc pulse around a timing error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearApproxCoeffs {
    pub delta_tau_max: f64,
    pub delta_theta_max: f64,
    pub eta: f64,
    pub c: [f64; 5],
    pub a_bar: f64,
}

impl LinearApproxCoeffs {
    /// Slopes for a positive timing error, for neighbors `m-3..m+3` without `m`.
    pub fn a_plus(&self) -> [f64; 6] {
        let [c1, c2, c3, c4, c5] = self.c;
        [0.0, c4, -c2, c1, -c3, c5]
    }

    /// Slopes for a negative timing error.
    pub fn a_minus(&self) -> [f64; 6] {
        let [c1, c2, c3, c4, c5] = self.c;
        [-c5, c3, -c1, c2, -c4, 0.0]
    }
}

/// Closed-form powers of the desired signal, the phase-error noise and the ISI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTermPowers {
    pub p_signal: f64,
    pub p_phase_noise: f64,
    pub p_isi: f64,
}

/// Signal-plus-noise power `E_xp A^2 |G^n[k]|^2 + N0 / T_s` of every pilot bin.
pub fn pilot_bin_power(cfg: &SystemConfig) -> Grid<f64> {
    let g = polyphase_response(cfg).g_freq;
    let signal = cfg.pilot_energy * cfg.amplitude * cfg.amplitude;
    let noise = cfg.pilot_noise_power();
    g.map(|z| signal * z.norm_sqr() + noise)
}

/// `(2 pi / (N_p T))^2`: Fisher weight per unit `k_c^2` for the delay.
pub fn delay_fisher_scale(cfg: &SystemConfig) -> f64 {
    let w = 2.0 * PI / (cfg.pilot_len as f64 * cfg.symbol_period);
    w * w
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / LN_2
}

/// Fronthaul bits for the pilot field, summed over branches and bins.
pub fn pilot_rate(cfg: &SystemConfig, grid: &InvPsdGrid) -> Result<f64> {
    grid.check_shape(cfg)?;
    let power = pilot_bin_power(cfg);
    Ok(power
        .as_slice()
        .iter()
        .zip(grid.u.as_slice())
        .map(|(p, u)| if *u == 0.0 { 0.0 } else { log2_1p(p * u) })
        .sum())
}

/// The pilot rate from explicit circulant covariance matrices,
/// `sum_n log2 |K_y + K_q| / |K_q|`.
pub fn pilot_rate_logdet(cfg: &SystemConfig, grid: &InvPsdGrid) -> Result<f64> {
    grid.check_shape(cfg)?;
    if grid
        .u
        .as_slice()
        .iter()
        .any(|u| !(*u > 0.0 && u.is_finite()))
    {
        return Err(Error::Domain(
            "log-det rate needs finite, nonzero noise PSD on every bin".into(),
        ));
    }
    let power = pilot_bin_power(cfg);
    let mut bits = 0.0;
    for n in 0..cfg.oversampling {
        let q_psd: Vec<f64> = grid.u.row(n).iter().map(|u| 1.0 / u).collect();
        let y_psd = power.row(n);
        let k_q = circulant_from_psd(&q_psd);
        let k_yq = circulant_from_psd(y_psd) + &k_q;
        bits += (hermitian_logdet(k_yq)? - hermitian_logdet(k_q)?) / LN_2;
    }
    Ok(bits)
}

/// Circulant Hermitian matrix whose DFT eigenvalues are `psd`.
fn circulant_from_psd(psd: &[f64]) -> DMatrix<Complex64> {
    let n = psd.len();
    let first_col: Vec<Complex64> = (0..n)
        .map(|m| {
            psd.iter()
                .enumerate()
                .map(|(k, s)| Complex64::from_polar(*s, 2.0 * PI * (k * m) as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| first_col[(i + n - j) % n])
}

fn hermitian_logdet(m: DMatrix<Complex64>) -> Result<f64> {
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    Ok(chol.l().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum())
}

/// Fronthaul bits for the data field at quantization variance `sigma2_qd`.
pub fn data_rate(cfg: &SystemConfig, sigma2_qd: f64) -> Result<f64> {
    if !(sigma2_qd > 0.0) {
        return Err(Error::Domain(format!(
            "data quantization variance must be positive, got {sigma2_qd}"
        )));
    }
    if sigma2_qd.is_infinite() {
        return Ok(0.0);
    }
    let power = cfg.data_energy * cfg.amplitude * cfg.amplitude + cfg.data_noise_power();
    Ok(cfg.data_len as f64 * log2_1p(power / sigma2_qd))
}

/// `1 / (N0/T_s + S)` written in terms of `u = 1/S`.
fn bin_weight(u: f64, noise: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else if u.is_infinite() {
        1.0 / noise
    } else {
        u / (1.0 + noise * u)
    }
}

/// Cramer-Rao bounds of the timing and phase offsets under the additive
/// quantization-noise model.
pub fn crb(cfg: &SystemConfig, grid: &InvPsdGrid) -> Result<CrbPair> {
    grid.check_shape(cfg)?;
    let g = polyphase_response(cfg).g_freq;
    let signal = cfg.pilot_energy * cfg.amplitude * cfg.amplitude;
    let noise = cfg.pilot_noise_power();
    let mut info_theta = 0.0;
    let mut info_tau = 0.0;
    for (n, k, u) in grid.u.indexed() {
        let w = bin_weight(*u, noise);
        if w == 0.0 {
            continue;
        }
        let b = signal * g[(n, k)].norm_sqr() * w;
        let kc = centered_index(k, cfg.pilot_len) as f64;
        info_theta += b;
        info_tau += kc * kc * b;
    }
    info_tau *= delay_fisher_scale(cfg);
    if !(info_theta > 0.0) {
        return Err(Error::InfiniteCrb("theta"));
    }
    if !(info_tau > 0.0) {
        return Err(Error::InfiniteCrb("tau"));
    }
    Ok(CrbPair {
        crb_tau: 1.0 / info_tau,
        crb_theta: 1.0 / info_theta,
    })
}

/// Coefficients of the piecewise-linear pulse approximation for a timing
/// error uniform on `[-delta_tau_max/2, delta_tau_max/2]`.
///
/// `delta_tau_max = 0` returns the small-error limit.
pub fn linear_approx_coeffs(
    delta_tau_max: f64,
    delta_theta_max: f64,
    cfg: &SystemConfig,
) -> Result<LinearApproxCoeffs> {
    let t = cfg.symbol_period;
    if !(delta_tau_max >= 0.0 && delta_tau_max < t) {
        return Err(Error::Domain(format!(
            "linear pulse approximation needs 0 <= delta_tau_max < T, got {delta_tau_max}"
        )));
    }
    if !(delta_theta_max >= 0.0) {
        return Err(Error::Domain("delta_theta_max must be nonnegative".into()));
    }
    let (eta, c) = if delta_tau_max == 0.0 {
        // |g'(l T)| T = 1/l at the integer zero crossings.
        (0.0, [1.0, 1.0, 0.5, 0.5, 1.0 / 3.0])
    } else {
        let half = delta_tau_max / (2.0 * t);
        let scale = 1.0 / half;
        let g = |x: f64| pulse_value(x * t, cfg);
        (
            scale * (1.0 - g(half)),
            [
                scale * g(1.0 - half),
                scale * g(1.0 + half).abs(),
                scale * g(2.0 - half).abs(),
                scale * g(2.0 + half),
                scale * g(3.0 - half),
            ],
        )
    };
    let mut coeffs = LinearApproxCoeffs {
        delta_tau_max,
        delta_theta_max,
        eta,
        c,
        a_bar: 0.0,
    };
    coeffs.a_bar = coeffs.a_plus().iter().map(|a| a * a).sum();
    Ok(coeffs)
}

/// Coefficients at the nominal error spread implied by a pair of bounds,
/// `delta_max = sqrt(12 CRB)`.
pub fn coeffs_from_crb(cfg: &SystemConfig, crbs: &CrbPair) -> Result<LinearApproxCoeffs> {
    linear_approx_coeffs(
        (12.0 * crbs.crb_tau).sqrt(),
        (12.0 * crbs.crb_theta).sqrt(),
        cfg,
    )
}

fn signal_shrink(cfg: &SystemConfig, crbs: &CrbPair, coeffs: &LinearApproxCoeffs) -> f64 {
    1.0 - coeffs.eta / (2.0 * cfg.symbol_period) * (12.0 * crbs.crb_tau).sqrt()
}

/// Approximate powers of the desired signal, the phase-error term and the
/// residual-timing ISI.
pub fn error_term_powers(
    cfg: &SystemConfig,
    crbs: &CrbPair,
    coeffs: &LinearApproxCoeffs,
) -> ErrorTermPowers {
    let p = cfg.amplitude * cfg.amplitude * cfg.data_energy;
    let shrink = signal_shrink(cfg, crbs, coeffs);
    let t = cfg.symbol_period;
    ErrorTermPowers {
        p_signal: p * shrink,
        p_phase_noise: p * crbs.crb_theta * shrink,
        p_isi: p * coeffs.a_bar / (t * t) * crbs.crb_tau,
    }
}

/// Effective SNR keeping the signal-shrink factor (before dropping it to 1).
pub fn effective_snr_full(
    cfg: &SystemConfig,
    crbs: &CrbPair,
    coeffs: &LinearApproxCoeffs,
    sigma2_qd: f64,
) -> f64 {
    let terms = error_term_powers(cfg, crbs, coeffs);
    terms.p_signal / (terms.p_phase_noise + terms.p_isi + cfg.data_noise_power() + sigma2_qd)
}

/// Effective post-compensation SNR with residual synchronization errors
/// modeled as extra noise.
pub fn effective_snr(
    cfg: &SystemConfig,
    crbs: &CrbPair,
    coeffs: &LinearApproxCoeffs,
    sigma2_qd: f64,
) -> f64 {
    let p = cfg.amplitude * cfg.amplitude * cfg.data_energy;
    let t = cfg.symbol_period;
    p / (p * crbs.crb_theta
        + p * coeffs.a_bar / (t * t) * crbs.crb_tau
        + cfg.data_noise_power()
        + sigma2_qd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_cfg(f: usize) -> SystemConfig {
        // E_xp = 1, A = 0.7, N0/T_s = 0.1.
        let mut cfg = SystemConfig {
            oversampling: f,
            pilot_energy: 1.0,
            data_energy: 1.0,
            ..SystemConfig::default()
        };
        cfg.noise_psd = 0.1 * cfg.sample_period();
        cfg
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn rate_examples() {
        let cfg = flat_cfg(1);
        assert_eq!(
            pilot_rate(&cfg, &InvPsdGrid::uniform(&cfg, 0.0, 1.0).unwrap()).unwrap(),
            0.0
        );
        let g = InvPsdGrid::uniform(&cfg, 1.0 / 0.59, 1.0).unwrap();
        assert!(rel(pilot_rate(&cfg, &g).unwrap(), 16.0) < 1e-12);
        let cfg2 = flat_cfg(2);
        let g2 = InvPsdGrid::uniform(&cfg2, 1.0 / 0.59, 1.0).unwrap();
        assert!(rel(pilot_rate(&cfg2, &g2).unwrap(), 32.0) < 1e-12);
    }

    #[test]
    fn logdet_identity_covariances() {
        // Signal-plus-noise PSD 1 and noise PSD 1 give one bit per eigenvalue.
        let mut cfg = flat_cfg(2);
        cfg.pilot_energy = 0.5 / (cfg.amplitude * cfg.amplitude);
        cfg.noise_psd = 0.5 * cfg.sample_period();
        let g = InvPsdGrid::uniform(&cfg, 1.0, 1.0).unwrap();
        let bits = pilot_rate_logdet(&cfg, &g).unwrap();
        assert!(rel(bits, 32.0) < 1e-12, "{bits}");
    }

    #[test]
    fn logdet_rejects_dropped_bins() {
        let cfg = flat_cfg(1);
        let mut g = InvPsdGrid::uniform(&cfg, 1.0, 1.0).unwrap();
        g.u[(0, 3)] = 0.0;
        assert!(matches!(pilot_rate_logdet(&cfg, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn logdet_uniform_closed_form() {
        let cfg = flat_cfg(2);
        let u = 3.7;
        let g = InvPsdGrid::uniform(&cfg, u, 1.0).unwrap();
        let p = 0.49 + 0.1;
        let closed = 32.0 * (1.0 + p * u).log2();
        assert!(rel(pilot_rate_logdet(&cfg, &g).unwrap(), closed) < 1e-10);
    }

    #[test]
    fn data_rate_examples() {
        let mut cfg = flat_cfg(1);
        cfg.noise_psd = 0.1;
        assert_eq!(data_rate(&cfg, f64::INFINITY).unwrap(), 0.0);
        assert!(rel(data_rate(&cfg, 0.59).unwrap(), 84.0) < 1e-12);
        let sigma2 = 0.59 / 7.0;
        assert!(rel(data_rate(&cfg, sigma2).unwrap(), 84.0 * 3.0) < 1e-12);
        assert!(data_rate(&cfg, 0.0).is_err());
        assert!(data_rate(&cfg, -1.0).is_err());
    }

    fn unit_cfg() -> SystemConfig {
        SystemConfig {
            amplitude: 1.0,
            oversampling: 1,
            pilot_energy: 1.0,
            noise_psd: 1.0,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn crb_examples_without_quantization() {
        let cfg = unit_cfg();
        let c = crb(&cfg, &InvPsdGrid::unquantized(&cfg)).unwrap();
        assert!(rel(c.crb_theta, 0.0625) < 1e-12);
        let expected_tau = 1.0 / ((2.0 * PI / 16.0).powi(2) * 344.0);
        assert!(rel(c.crb_tau, expected_tau) < 1e-12);
        assert!((c.crb_tau - 0.018_850_5).abs() < 1e-7);

        let doubled = SystemConfig {
            pilot_energy: 2.0,
            ..cfg.clone()
        };
        let d = crb(&doubled, &InvPsdGrid::unquantized(&doubled)).unwrap();
        assert!(rel(d.crb_theta, c.crb_theta / 2.0) < 1e-12);
        assert!(rel(d.crb_tau, c.crb_tau / 2.0) < 1e-12);
    }

    #[test]
    fn crb_errors_when_uninformative() {
        let cfg = unit_cfg();
        let none = InvPsdGrid::uniform(&cfg, 0.0, 0.0).unwrap();
        assert_eq!(crb(&cfg, &none), Err(Error::InfiniteCrb("theta")));
        let mut dc_only = none.clone();
        dc_only.u[(0, 0)] = 1.0;
        assert_eq!(crb(&cfg, &dc_only), Err(Error::InfiniteCrb("tau")));
    }

    #[test]
    fn crb_theta_ignores_bin_permutation_but_tau_does_not() {
        let cfg = unit_cfg();
        let vals: Vec<f64> = (0..16).map(|i| 0.2 + 0.3 * i as f64).collect();
        let mut rev = vals.clone();
        rev.rotate_left(5);
        let a = InvPsdGrid::new(Grid::from_vec(1, 16, vals), 0.0).unwrap();
        let b = InvPsdGrid::new(Grid::from_vec(1, 16, rev), 0.0).unwrap();
        let ca = crb(&cfg, &a).unwrap();
        let cb = crb(&cfg, &b).unwrap();
        assert!(rel(ca.crb_theta, cb.crb_theta) < 1e-12);
        assert!(rel(ca.crb_tau, cb.crb_tau) > 1e-3);
    }

    #[test]
    fn coeff_examples() {
        let cfg = SystemConfig::default();
        let c = linear_approx_coeffs(0.2, 0.1, &cfg).unwrap();
        let eta = 10.0 * (1.0 - (0.1 * PI).sin() / (0.1 * PI));
        assert!(rel(c.eta, eta) < 1e-12);
        assert!((c.eta - 0.163_683_6).abs() < 1e-7);

        let tiny = linear_approx_coeffs(1e-7, 0.0, &cfg).unwrap();
        let limit = [1.0, 1.0, 0.5, 0.5, 1.0 / 3.0];
        for (got, want) in tiny.c.iter().zip(limit) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!((tiny.a_bar - 2.611_111_111).abs() < 1e-5);
        let zero = linear_approx_coeffs(0.0, 0.0, &cfg).unwrap();
        assert!((zero.a_bar - 2.611_111_111_111).abs() < 1e-12);

        for d in [0.01, 0.2, 0.7] {
            let c = linear_approx_coeffs(d, 0.0, &cfg).unwrap();
            let minus: f64 = c.a_minus().iter().map(|a| a * a).sum();
            assert!(rel(c.a_bar, minus) < 1e-14);
            assert!(c.c.iter().all(|v| *v >= 0.0));
        }
        assert!(linear_approx_coeffs(1.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn error_term_examples() {
        let cfg = SystemConfig {
            amplitude: 0.7,
            data_energy: 1.0,
            ..SystemConfig::default()
        };
        let coeffs = linear_approx_coeffs(0.1, 0.1, &cfg).unwrap();
        let zero = CrbPair {
            crb_tau: 0.0,
            crb_theta: 0.0,
        };
        let p = error_term_powers(&cfg, &zero, &coeffs);
        assert!(rel(p.p_signal, 0.49) < 1e-12);
        assert_eq!((p.p_phase_noise, p.p_isi), (0.0, 0.0));

        let phase_only = CrbPair {
            crb_tau: 0.0,
            crb_theta: 0.01,
        };
        let p = error_term_powers(&cfg, &phase_only, &coeffs);
        assert!(rel(p.p_phase_noise, 0.0049) < 1e-12);

        let unit = SystemConfig {
            amplitude: 1.0,
            ..cfg.clone()
        };
        let mut c = coeffs;
        c.a_bar = 2.6111;
        let p = error_term_powers(
            &unit,
            &CrbPair {
                crb_tau: 0.001,
                crb_theta: 0.0,
            },
            &c,
        );
        assert!(rel(p.p_isi, 0.0026111) < 1e-12);
    }

    #[test]
    fn effective_snr_examples() {
        let mut cfg = SystemConfig {
            amplitude: 0.7,
            data_energy: 1.0,
            ..SystemConfig::default()
        };
        cfg.noise_psd = 0.1 * cfg.symbol_period;
        let coeffs = linear_approx_coeffs(0.0, 0.0, &cfg).unwrap();
        let zero = CrbPair {
            crb_tau: 0.0,
            crb_theta: 0.0,
        };
        assert!(rel(effective_snr(&cfg, &zero, &coeffs, 0.0), 4.9) < 1e-12);
        assert!(rel(effective_snr(&cfg, &zero, &coeffs, 0.1), 2.45) < 1e-12);
        let mut last = f64::INFINITY;
        for crb_tau in [0.0, 1e-4, 1e-3, 1e-2] {
            let v = effective_snr(
                &cfg,
                &CrbPair {
                    crb_tau,
                    crb_theta: 0.0,
                },
                &coeffs,
                0.0,
            );
            assert!(v < last);
            last = v;
        }
    }
}
