//! Joint least-squares phase and timing estimation from per-bin phases.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::centered_index;
use crate::quantizer::CompressedPilotFrame;
use crate::signal_model::SystemConfig;

const GRID_STEPS: usize = 64;
const REFINE_ROUNDS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub tau_hat: f64,
    pub theta_hat: f64,
    /// Final value of the wrapped least-squares cost, in cycles squared.
    pub objective: f64,
}

/// Maps `x` to `[-1/2, 1/2)`.
pub fn wrap_cycles(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

/// Maps an angle to `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    2.0 * PI * wrap_cycles(x / (2.0 * PI))
}

/// One usable bin: normalized phase `y = r - k_c n / (N_p F)` and slope
/// `d = k_c / N_p`, so that the model reads `y = phi - d t` with
/// `phi = theta / 2 pi` and `t = tau / T`.
#[derive(Clone, Copy)]
struct Obs {
    y: f64,
    d: f64,
}

fn cost(obs: &[Obs], phi: f64, t: f64) -> f64 {
    obs.iter()
        .map(|o| {
            let e = wrap_cycles(o.y - phi + o.d * t);
            e * e
        })
        .sum()
}

/// Least-squares fit of `(theta, tau)` to the phases of the transmitted bins:
/// a 64 x 64 grid search over `tau in [-T/2, T/2]`, `theta in [-pi, pi)`,
/// then refinement rounds that freeze the wrap integers and solve the
/// resulting linear problem exactly.
pub fn estimate_offsets(
    compressed: &CompressedPilotFrame,
    pilots_freq: &[Complex64],
    cfg: &SystemConfig,
) -> Result<EstimationResult> {
    let (rows, np) = compressed.observations.shape();
    if pilots_freq.len() != np {
        return Err(Error::ShapeMismatch {
            expected: (1, np),
            got: (1, pilots_freq.len()),
        });
    }
    let f = rows as f64;
    let mut obs = Vec::with_capacity(rows * np);
    for n in 0..rows {
        for (k, x) in pilots_freq.iter().enumerate() {
            if !compressed.transmitted_mask[(n, k)] {
                continue;
            }
            let z = compressed.observations[(n, k)] * x.conj();
            if z.norm_sqr() == 0.0 {
                continue;
            }
            let kc = centered_index(k, np) as f64;
            let r = z.arg() / (2.0 * PI);
            obs.push(Obs {
                y: r - kc * n as f64 / (np as f64 * f),
                d: kc / np as f64,
            });
        }
    }
    let first_d = obs.first().map(|o| o.d);
    if obs.len() < 2 || obs.iter().all(|o| Some(o.d) == first_d) {
        return Err(Error::EstimationImpossible(format!(
            "need at least 2 transmitted bins with distinct frequencies, got {}",
            obs.len()
        )));
    }

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for j in 0..GRID_STEPS {
        let t = -0.5 + j as f64 / (GRID_STEPS - 1) as f64;
        for i in 0..GRID_STEPS {
            let phi = -0.5 + i as f64 / GRID_STEPS as f64;
            let c = cost(&obs, phi, t);
            if c < best.0 {
                best = (c, phi, t);
            }
        }
    }
    let (mut phi, mut t) = (best.1, best.2);
    for _ in 0..REFINE_ROUNDS {
        // Normal equations of sum (y - m - phi + d t)^2 over (phi, t).
        let (mut s1, mut sd, mut sdd, mut sy, mut sdy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for o in &obs {
            let resid = o.y - phi + o.d * t;
            let y = o.y - (resid - wrap_cycles(resid));
            s1 += 1.0;
            sd += o.d;
            sdd += o.d * o.d;
            sy += y;
            sdy += o.d * y;
        }
        let det = s1 * sdd - sd * sd;
        let phi_new = (sdd * sy - sd * sdy) / det;
        let t_new = (sd * sy - s1 * sdy) / det;
        if cost(&obs, phi_new, t_new) <= cost(&obs, phi, t) {
            phi = phi_new;
            t = t_new;
        }
    }

    let t = t.clamp(-0.5, 0.5);
    Ok(EstimationResult {
        tau_hat: t * cfg.symbol_period,
        theta_hat: wrap_angle(2.0 * PI * phi),
        objective: cost(&obs, phi, t),
    })
}
