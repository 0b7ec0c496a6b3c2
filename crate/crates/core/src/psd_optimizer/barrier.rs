//! Log-barrier interior-point solver for the convex subproblem of one DC
//! iteration.
//!
//! The solver works in `s = 1 - v`, so that bins pushed to `v = 1` (dropped)
//! keep full relative precision as `s -> 0+`. In these variables
//!
//! ```text
//! J(s) = w_theta / sum(b s / nu) + w_tau / sum(a s / nu)
//! h(s) = sum((e + f) - e s - log2(nu (1 - s))) - budget <= 0,   s > 0
//! ```
//!
//! The Newton system has diagonal-plus-rank-3 structure and is solved with
//! the Woodbury identity, so each step costs `O(K)`.

use std::f64::consts::LN_2;

use nalgebra::{Matrix3, Vector3};

use super::{DcCoefficients, Linearization};
use crate::error::{Error, Result};

/// Result of one convex subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    /// Optimal `s = 1 - v`, in grid storage order.
    pub s: Vec<f64>,
    pub objective: f64,
    /// Value of the linearized constraint, `<= 0` at any returned point.
    pub constraint: f64,
    /// Max of relative stationarity residual and relative complementarity gap.
    pub kkt_residual: f64,
    pub newton_steps: usize,
}

const BARRIER_GROWTH: f64 = 8.0;
const MAX_NEWTON: usize = 200;
const MAX_OUTER: usize = 80;

struct Problem<'a> {
    b: &'a [f64],
    a: &'a [f64],
    /// `-e`, strictly positive.
    slope: Vec<f64>,
    /// Constant part of the linearized constraint, budget included.
    offset: f64,
    w_theta: f64,
    w_tau: f64,
    nu: f64,
    has_tau: bool,
}

impl Problem<'_> {
    fn sums(&self, s: &[f64]) -> (f64, f64) {
        let sb = self.b.iter().zip(s).map(|(b, s)| b * s).sum::<f64>() / self.nu;
        let sa = self.a.iter().zip(s).map(|(a, s)| a * s).sum::<f64>() / self.nu;
        (sb, sa)
    }

    fn objective(&self, s: &[f64]) -> f64 {
        let (sb, sa) = self.sums(s);
        let mut j = self.w_theta / sb;
        if self.has_tau {
            j += self.w_tau / sa;
        }
        j
    }

    fn constraint(&self, s: &[f64]) -> f64 {
        self.offset
            + s.iter()
                .zip(&self.slope)
                .map(|(s, d)| d * s - (self.nu * (1.0 - s)).log2())
                .sum::<f64>()
    }

    fn in_domain(&self, s: &[f64]) -> bool {
        s.iter().all(|v| *v > 0.0 && *v < 1.0) && self.constraint(s) < 0.0
    }

    /// `t J - ln(-h) - sum ln s`, or `+inf` outside the domain.
    fn barrier(&self, s: &[f64], t: f64) -> f64 {
        if !s.iter().all(|v| *v > 0.0 && *v < 1.0) {
            return f64::INFINITY;
        }
        let h = self.constraint(s);
        if !(h < 0.0) {
            return f64::INFINITY;
        }
        t * self.objective(s) - (-h).ln() - s.iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// Minimizes the DC subproblem from the default strictly feasible start.
pub fn solve_convex_subproblem(
    coeffs: &DcCoefficients,
    lin: &Linearization,
    tol: f64,
) -> Result<SubproblemSolution> {
    solve_convex_subproblem_from(coeffs, lin, tol, None)
}

/// Minimizes the DC subproblem starting from `start` (given as `v`), which
/// must be strictly feasible; `None` picks an interior point automatically.
pub fn solve_convex_subproblem_from(
    coeffs: &DcCoefficients,
    lin: &Linearization,
    tol: f64,
    start: Option<&[f64]>,
) -> Result<SubproblemSolution> {
    let k = coeffs.b.len();
    if lin.e.len() != k || lin.f.len() != k || coeffs.a.len() != k {
        return Err(Error::Domain(
            "subproblem grids have inconsistent sizes".into(),
        ));
    }
    if !(coeffs.budget_bits > 0.0) {
        return Err(Error::Infeasible(
            "fronthaul budget must be positive".into(),
        ));
    }
    let e = lin.e.as_slice();
    let f = lin.f.as_slice();
    let nu = coeffs.noise;
    let offset = e.iter().zip(f).map(|(e, f)| e + f).sum::<f64>() - coeffs.budget_bits;
    let problem = Problem {
        b: coeffs.b.as_slice(),
        a: coeffs.a.as_slice(),
        slope: e.iter().map(|e| -e).collect(),
        offset,
        w_theta: coeffs.theta_weight,
        w_tau: coeffs.tau_weight,
        nu,
        has_tau: coeffs.has_tau_term(),
    };
    if problem.slope.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Domain(
            "linearization slopes must be negative".into(),
        ));
    }

    let mut s = match start {
        Some(v) => {
            let s: Vec<f64> = v.iter().map(|v| 1.0 - v).collect();
            if !problem.in_domain(&s) {
                return Err(Error::Infeasible(
                    "starting point is not strictly feasible".into(),
                ));
            }
            s
        }
        None => interior_point(&problem)?,
    };

    let m = (k + 1) as f64;
    let mut t = m / problem.objective(&s).max(f64::MIN_POSITIVE);
    let mut newton_steps = 0;
    for _ in 0..MAX_OUTER {
        newton_steps += center(&problem, &mut s, t)?;
        let j = problem.objective(&s);
        if m / t <= tol * j {
            break;
        }
        t *= BARRIER_GROWTH;
    }

    let objective = problem.objective(&s);
    let constraint = problem.constraint(&s);
    let kkt_residual = kkt_residual(&problem, &s, t);
    Ok(SubproblemSolution {
        s,
        objective,
        constraint,
        kkt_residual,
        newton_steps,
    })
}

/// A uniform point `c 1` with the linearized constraint strictly negative.
fn interior_point(problem: &Problem) -> Result<Vec<f64>> {
    let k = problem.b.len();
    let mut c = 0.25;
    for _ in 0..200 {
        let s = vec![c; k];
        if problem.in_domain(&s) {
            return Ok(s);
        }
        c *= 0.5;
    }
    Err(Error::Infeasible(
        "no strictly feasible point for the linearized rate constraint".into(),
    ))
}

/// Damped Newton centering at barrier weight `t`; returns the step count.
fn center(problem: &Problem, s: &mut Vec<f64>, t: f64) -> Result<usize> {
    let k = s.len();
    let mut grad = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut step = vec![0.0; k];
    let mut trial = vec![0.0; k];
    for iter in 0..MAX_NEWTON {
        let (sb, sa) = problem.sums(s);
        let h = problem.constraint(s);
        let neg_h = -h;

        // Columns of the rank-3 part: objective (theta, tau) and constraint.
        let cb = (2.0 * t * problem.w_theta / (sb * sb * sb)).sqrt() / problem.nu;
        let ca = if problem.has_tau {
            (2.0 * t * problem.w_tau / (sa * sa * sa)).sqrt() / problem.nu
        } else {
            0.0
        };
        let mut u_cols = [vec![0.0; k], vec![0.0; k], vec![0.0; k]];
        for i in 0..k {
            let si = s[i];
            let dh = problem.slope[i] + 1.0 / (LN_2 * (1.0 - si));
            let d2h = 1.0 / (LN_2 * (1.0 - si) * (1.0 - si));
            let mut dj = -problem.w_theta * problem.b[i] / (problem.nu * sb * sb);
            if problem.has_tau {
                dj -= problem.w_tau * problem.a[i] / (problem.nu * sa * sa);
            }
            grad[i] = t * dj + dh / neg_h - 1.0 / si;
            diag[i] = d2h / neg_h + 1.0 / (si * si);
            u_cols[0][i] = cb * problem.b[i];
            u_cols[1][i] = ca * problem.a[i];
            u_cols[2][i] = dh / neg_h;
        }

        woodbury_solve(&diag, &u_cols, &grad, &mut step)?;
        for v in step.iter_mut() {
            *v = -*v;
        }
        let slope: f64 = grad.iter().zip(&step).map(|(g, d)| g * d).sum();
        let decrement = -slope;
        if !(decrement.is_finite()) {
            return Err(Error::Numerical("non-finite Newton decrement".into()));
        }
        if decrement <= 1e-14 {
            return Ok(iter);
        }

        // Largest step keeping s in (0, 1).
        let mut alpha: f64 = 1.0;
        for (si, di) in s.iter().zip(&step) {
            if *di < 0.0 {
                alpha = alpha.min(0.99 * si / -di);
            } else if *di > 0.0 {
                alpha = alpha.min(0.99 * (1.0 - si) / di);
            }
        }
        let phi = problem.barrier(s, t);
        let mut accepted = false;
        while alpha > 1e-16 {
            for i in 0..k {
                trial[i] = s[i] + alpha * step[i];
            }
            let phi_new = problem.barrier(&trial, t);
            if phi_new.is_finite() && phi_new <= phi + 0.25 * alpha * slope + 1e-14 * phi.abs() {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Rounding floor reached: the point is centered to working precision.
            return Ok(iter);
        }
        std::mem::swap(s, &mut trial);
    }
    Ok(MAX_NEWTON)
}

/// Solves `(diag(d) + U U^T) x = rhs` for three columns `U`.
fn woodbury_solve(d: &[f64], u: &[Vec<f64>; 3], rhs: &[f64], out: &mut [f64]) -> Result<()> {
    let k = d.len();
    // y = D^-1 rhs, Z = D^-1 U
    let mut small = Matrix3::<f64>::identity();
    let mut uty = Vector3::<f64>::zeros();
    for i in 0..k {
        let inv = 1.0 / d[i];
        let y = rhs[i] * inv;
        for r in 0..3 {
            uty[r] += u[r][i] * y;
            for c in 0..3 {
                small[(r, c)] += u[r][i] * u[c][i] * inv;
            }
        }
    }
    let coef = small
        .lu()
        .solve(&uty)
        .ok_or_else(|| Error::Numerical("singular Woodbury capacitance matrix".into()))?;
    for i in 0..k {
        let correction = u[0][i] * coef[0] + u[1][i] * coef[1] + u[2][i] * coef[2];
        out[i] = (rhs[i] - correction) / d[i];
    }
    Ok(())
}

fn kkt_residual(problem: &Problem, s: &[f64], t: f64) -> f64 {
    let (sb, sa) = problem.sums(s);
    let neg_h = -problem.constraint(s);
    let lambda = 1.0 / (t * neg_h);
    let mut worst_grad: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for (i, &si) in s.iter().enumerate() {
        let mut dj = -problem.w_theta * problem.b[i] / (problem.nu * sb * sb);
        if problem.has_tau {
            dj -= problem.w_tau * problem.a[i] / (problem.nu * sa * sa);
        }
        let dh = problem.slope[i] + 1.0 / (LN_2 * (1.0 - si));
        let mu = 1.0 / (t * si);
        worst_grad = worst_grad.max(dj.abs());
        worst_res = worst_res.max((dj + lambda * dh - mu).abs());
    }
    let gap = (s.len() + 1) as f64 / (t * problem.objective(s));
    (worst_res / worst_grad).max(gap)
}
