//! System parameters, pulse shape, polyphase responses and frame synthesis.
//!
//! Conventions used across the crate:
//!
//! - Forward DFTs are unnormalized, `X[k] = sum_m x[m] exp(-j 2 pi k m / N)`,
//!   and inverse DFTs carry the `1/N`. Circulant covariance eigenvalues are
//!   therefore the PSD values themselves, while per-bin noise variances scale
//!   by `N`.
//! - Frequency enters formulas through the centered index `k_c`
//!   ([`centered_index`]).
//! - Delays are in seconds. Branch `n` of the `F`-fold oversampled pilot sees
//!   the phase `theta - 2 pi k_c (tau / T) / N_p`; its sampling advance
//!   `n T_s` lives in the polyphase response `G^n[k]`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{centered_index, Grid};

/// Physical and frame parameters of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Channel amplitude `A`.
    pub amplitude: f64,
    /// Symbol period `T` in seconds.
    pub symbol_period: f64,
    /// Oversampling factor `F` of the pilot field.
    pub oversampling: usize,
    pub pilot_len: usize,
    pub data_len: usize,
    /// Per-symbol pilot power `E_xp`.
    pub pilot_energy: f64,
    /// Per-symbol data power `E_xd`.
    pub data_energy: f64,
    /// Two-sided noise PSD `N0`.
    pub noise_psd: f64,
    /// Fronthaul capacity in bits per uplink sample.
    pub capacity: f64,
    /// Sidelobes kept by time-domain pulse checks.
    pub pulse_truncation: usize,
}

impl Default for SystemConfig {
    /// `A = 0.7`, `F = 2`, `N = 100`, `N_p = 16`, `C = 3`, `SNR_p = SNR_d = 20 dB`.
    fn default() -> Self {
        SystemConfig {
            amplitude: 0.7,
            symbol_period: 1.0,
            oversampling: 2,
            pilot_len: 16,
            data_len: 84,
            pilot_energy: 1.0,
            data_energy: 1.0,
            noise_psd: 1.0,
            capacity: 3.0,
            pulse_truncation: 8,
        }
        .with_common_snr_db(20.0)
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude must be positive and finite");
        }
        if !(self.symbol_period > 0.0 && self.symbol_period.is_finite()) {
            return bad("symbol_period must be positive and finite");
        }
        if self.oversampling < 1 {
            return bad("oversampling must be at least 1");
        }
        if self.pilot_len < 4 {
            return bad("pilot_len must be at least 4");
        }
        if self.data_len < 1 {
            return bad("data_len must be at least 1");
        }
        if !(self.pilot_energy > 0.0 && self.pilot_energy.is_finite()) {
            return bad("pilot_energy must be positive and finite");
        }
        if !(self.data_energy > 0.0 && self.data_energy.is_finite()) {
            return bad("data_energy must be positive and finite");
        }
        if !(self.noise_psd >= 0.0 && self.noise_psd.is_finite()) {
            return bad("noise_psd must be nonnegative and finite");
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return bad("capacity must be positive and finite");
        }
        if self.pulse_truncation < 4 {
            return bad("pulse_truncation must be at least 4");
        }
        Ok(())
    }

    /// `T_s = T / F`.
    pub fn sample_period(&self) -> f64 {
        self.symbol_period / self.oversampling as f64
    }

    /// Per-sample noise power of each pilot polyphase branch, `N0 / T_s`.
    pub fn pilot_noise_power(&self) -> f64 {
        self.noise_psd / self.sample_period()
    }

    /// Per-sample noise power of the baud-rate data field, `N0 / T`.
    pub fn data_noise_power(&self) -> f64 {
        self.noise_psd / self.symbol_period
    }

    /// `N = N_p + N_d`.
    pub fn frame_len(&self) -> usize {
        self.pilot_len + self.data_len
    }

    /// `SNR_p = E_xp / (N0 / T_s)`.
    pub fn snr_p(&self) -> f64 {
        self.pilot_energy / self.pilot_noise_power()
    }

    /// `SNR_d = E_xd / (N0 / T)`.
    pub fn snr_d(&self) -> f64 {
        self.data_energy / self.data_noise_power()
    }

    /// Sets `N0` so that `SNR_p` equals `db`, keeping `E_xp`.
    pub fn with_snr_p_db(mut self, db: f64) -> Self {
        let snr = 10f64.powf(db / 10.0);
        self.noise_psd = self.pilot_energy * self.sample_period() / snr;
        self
    }

    /// Sets `N0` and `E_xp` so that `SNR_p = SNR_d` equals `db`, keeping `E_xd`.
    pub fn with_common_snr_db(mut self, db: f64) -> Self {
        let snr = 10f64.powf(db / 10.0);
        self.noise_psd = self.data_energy * self.symbol_period / snr;
        self.pilot_energy = snr * self.pilot_noise_power();
        self
    }

    /// Centered frequency index of pilot bin `k`.
    pub fn pilot_kc(&self, k: usize) -> i64 {
        centered_index(k, self.pilot_len)
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.oversampling, self.pilot_len)
    }
}

/// Data-field modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Bpsk,
    Qpsk,
}

impl Constellation {
    /// Unit-energy constellation points.
    pub fn points(self) -> &'static [Complex64] {
        const H: f64 = std::f64::consts::FRAC_1_SQRT_2;
        const BPSK: [Complex64; 2] = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
        const QPSK: [Complex64; 4] = [
            Complex64::new(H, H),
            Complex64::new(-H, H),
            Complex64::new(-H, -H),
            Complex64::new(H, -H),
        ];
        match self {
            Constellation::Bpsk => &BPSK,
            Constellation::Qpsk => &QPSK,
        }
    }

    /// Index of the point of the `scale`-scaled constellation nearest to `z`.
    pub fn nearest(self, z: Complex64, scale: f64) -> usize {
        self.points()
            .iter()
            .map(|p| (z - p * scale).norm_sqr())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Constellation::Bpsk),
            "qpsk" => Ok(Constellation::Qpsk),
            other => Err(Error::InvalidConfig(format!(
                "unsupported constellation '{other}' (expected bpsk or qpsk)"
            ))),
        }
    }
}

/// `g(t) = sin(pi t / T) / (pi t / T)`.
pub fn pulse_value(t: f64, cfg: &SystemConfig) -> f64 {
    sinc(t / cfg.symbol_period)
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Frequency responses `G^n[k]` of the `F` polyphase branches.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyphaseResponse {
    pub g_freq: Grid<Complex64>,
}

/// `G^n[k] = exp(+j 2 pi k_c n / (N_p F))`.
pub fn polyphase_response(cfg: &SystemConfig) -> PolyphaseResponse {
    let np = cfg.pilot_len;
    let f = cfg.oversampling;
    let g_freq = Grid::from_fn(f, np, |n, k| {
        let kc = centered_index(k, np) as f64;
        Complex64::from_polar(1.0, 2.0 * PI * kc * n as f64 / (np * f) as f64)
    });
    PolyphaseResponse { g_freq }
}

/// Cached unnormalized forward / inverse DFT of one length.
#[derive(Clone)]
pub struct Dft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

impl Dft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Dft {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// In-place inverse transform including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Circular fractional delay by `delay_over_t` symbol periods, applied as
    /// the linear phase `exp(-j 2 pi k_c delay / N)` on the spectrum.
    pub fn delay(&self, buf: &mut [Complex64], delay_over_t: f64) {
        self.forward(buf);
        apply_delay_phase(buf, delay_over_t);
        self.inverse(buf);
    }
}

/// Multiplies spectrum bin `k` by `exp(-j 2 pi k_c delay / N)`.
pub fn apply_delay_phase(spectrum: &mut [Complex64], delay_over_t: f64) {
    let n = spectrum.len();
    for (k, v) in spectrum.iter_mut().enumerate() {
        let kc = centered_index(k, n) as f64;
        *v *= Complex64::from_polar(1.0, -2.0 * PI * kc * delay_over_t / n as f64);
    }
}

/// Circularly-symmetric complex Gaussian with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Generator used for one experiment, or for one trial of a Monte Carlo run.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotFrame {
    /// Time-domain pilot symbols `x_p`.
    pub pilots: Vec<Complex64>,
    /// Unnormalized DFT of the pilots, `X_p[k]`.
    pub pilots_freq: Vec<Complex64>,
    /// Frequency-domain observations `Y^n[k]` before compression.
    pub observations: Grid<Complex64>,
    pub true_tau: f64,
    pub true_theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataFrame {
    pub symbols: Vec<Complex64>,
    /// Indices of `symbols` in `constellation.points()`.
    pub symbol_indices: Vec<usize>,
    pub constellation: Constellation,
    /// Baud-rate time-domain observations.
    pub observations: Vec<Complex64>,
    pub true_tau: f64,
    pub true_theta: f64,
}

/// Reusable transforms and responses for repeated synthesis with one config.
#[derive(Debug, Clone)]
pub struct FrameContext {
    pub cfg: SystemConfig,
    pub response: PolyphaseResponse,
    pub pilot_dft: Dft,
    pub data_dft: Dft,
}

impl FrameContext {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(FrameContext {
            cfg: cfg.clone(),
            response: polyphase_response(cfg),
            pilot_dft: Dft::new(cfg.pilot_len),
            data_dft: Dft::new(cfg.data_len),
        })
    }

    pub fn pilot_frame<R: Rng + ?Sized>(
        &self,
        tau: f64,
        theta: f64,
        rng: &mut R,
    ) -> Result<PilotFrame> {
        let cfg = &self.cfg;
        check_residual_delay(tau, cfg)?;
        let np = cfg.pilot_len;
        let pilots: Vec<Complex64> = (0..np)
            .map(|_| complex_gaussian(rng, cfg.pilot_energy))
            .collect();
        let mut pilots_freq = pilots.clone();
        self.pilot_dft.forward(&mut pilots_freq);

        let noise_var = np as f64 * cfg.pilot_noise_power();
        let rotation = Complex64::from_polar(cfg.amplitude, theta);
        let tau_over_t = tau / cfg.symbol_period;
        let mut observations = Grid::filled(cfg.oversampling, np, Complex64::new(0.0, 0.0));
        for n in 0..cfg.oversampling {
            for k in 0..np {
                let kc = centered_index(k, np) as f64;
                let delay = Complex64::from_polar(1.0, -2.0 * PI * kc * tau_over_t / np as f64);
                let clean = rotation * pilots_freq[k] * self.response.g_freq[(n, k)] * delay;
                let noise = if noise_var > 0.0 {
                    complex_gaussian(rng, noise_var)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                observations[(n, k)] = clean + noise;
            }
        }
        Ok(PilotFrame {
            pilots,
            pilots_freq,
            observations,
            true_tau: tau,
            true_theta: theta,
        })
    }

    pub fn data_frame<R: Rng + ?Sized>(
        &self,
        tau: f64,
        theta: f64,
        constellation: Constellation,
        rng: &mut R,
    ) -> Result<DataFrame> {
        let cfg = &self.cfg;
        check_residual_delay(tau, cfg)?;
        let points = constellation.points();
        let scale = cfg.data_energy.sqrt();
        let symbol_indices: Vec<usize> = (0..cfg.data_len)
            .map(|_| rng.random_range(0..points.len()))
            .collect();
        let symbols: Vec<Complex64> = symbol_indices.iter().map(|&i| points[i] * scale).collect();

        let mut observations = symbols.clone();
        if tau != 0.0 {
            self.data_dft
                .delay(&mut observations, tau / cfg.symbol_period);
        }
        let rotation = Complex64::from_polar(cfg.amplitude, theta);
        let noise_var = cfg.data_noise_power();
        for y in observations.iter_mut() {
            *y *= rotation;
            if noise_var > 0.0 {
                *y += complex_gaussian(rng, noise_var);
            }
        }
        Ok(DataFrame {
            symbols,
            symbol_indices,
            constellation,
            observations,
            true_tau: tau,
            true_theta: theta,
        })
    }
}

fn check_residual_delay(tau: f64, cfg: &SystemConfig) -> Result<()> {
    if !(tau.abs() < 0.5 * cfg.symbol_period) {
        return Err(Error::Domain(format!(
            "residual delay {tau} outside (-T/2, T/2) with T = {}",
            cfg.symbol_period
        )));
    }
    Ok(())
}

/// Synthesizes the frequency-domain pilot observations of one frame.
pub fn synthesize_pilot_frame(
    cfg: &SystemConfig,
    tau: f64,
    theta: f64,
    seed: u64,
) -> Result<PilotFrame> {
    let ctx = FrameContext::new(cfg)?;
    ctx.pilot_frame(tau, theta, &mut seeded_rng(seed, 0))
}

/// Synthesizes the baud-rate data observations of one frame.
pub fn synthesize_data_frame(
    cfg: &SystemConfig,
    tau: f64,
    theta: f64,
    constellation: Constellation,
    seed: u64,
) -> Result<DataFrame> {
    let ctx = FrameContext::new(cfg)?;
    ctx.data_frame(tau, theta, constellation, &mut seeded_rng(seed, 0))
}
