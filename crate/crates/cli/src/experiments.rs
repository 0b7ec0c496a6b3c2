//! One runner per experiment kind. Each sweep point and series combination is
//! an independent job; rows come back in sweep order, series order.

use frontsync::exec::{map_indexed, Parallelism};
use frontsync::link_sim::{
    measure_error_term_powers, run_mse_experiment, run_ser_experiment, Compression, SerSetup,
    SyncMode, TrialStats,
};
use frontsync::metrics::{crb, error_term_powers, linear_approx_coeffs, CrbPair, InvPsdGrid};
use frontsync::psd_optimizer::{nominal_coeffs, optimize_psd, white_psd_baseline, DcTrace};
use frontsync::quantizer::{design_scalar_quantizer, uniform_reference_quantizer};
use frontsync::SystemConfig;
use serde::Serialize;

use crate::config::{ExperimentConfig, Kind};
use crate::table::{Cell, ResultTable};
use crate::CliError;

/// The system behind one block of rows.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub sweep_value: f64,
    pub seed: u64,
    pub system: SystemConfig,
}

#[derive(Debug)]
pub struct RunOutput {
    pub table: ResultTable,
    pub runs: Vec<RunRecord>,
    pub warnings: Vec<String>,
}

struct Job {
    sweep_value: f64,
    seed: u64,
    system: SystemConfig,
}

struct JobResult {
    rows: Vec<Vec<Cell>>,
    warning: Option<String>,
}

fn columns(kind: Kind, perfect: bool) -> Vec<&'static str> {
    let mut c = vec!["sweep", "capacity", "oversampling"];
    c.extend_from_slice(match kind {
        Kind::OptimizePsd => &[
            "n",
            "k_c",
            "inv_psd",
            "inv_psd_white",
            "iterations",
            "converged",
        ][..],
        Kind::CrbSweep => &[
            "crb_tau_opt",
            "crb_theta_opt",
            "crb_tau_white",
            "crb_theta_white",
            "snr_eff_opt",
            "snr_eff_white",
            "dropped_bins",
            "iterations",
            "converged",
        ],
        Kind::MseSweep => &[
            "mse_tau_opt",
            "se_tau_opt",
            "mse_theta_opt",
            "se_theta_opt",
            "mse_tau_white",
            "se_tau_white",
            "mse_theta_white",
            "se_theta_white",
            "crb_tau_opt",
            "crb_theta_opt",
            "crb_tau_white",
            "crb_theta_white",
            "failures_opt",
            "failures_white",
            "trials",
            "converged",
        ],
        Kind::ValidateScalar => &[
            "mse_tau_opt",
            "se_tau_opt",
            "mse_theta_opt",
            "se_theta_opt",
            "mse_tau_uniform",
            "se_tau_uniform",
            "mse_theta_uniform",
            "se_theta_uniform",
            "failures_opt",
            "failures_uniform",
            "trials",
            "converged",
        ],
        Kind::SerSweep => &[
            "ser_opt",
            "se_ser_opt",
            "ser_white",
            "se_ser_white",
            "sigma2_qd",
            "failures_opt",
            "failures_white",
            "symbols",
            "converged",
        ],
        Kind::ValidateAppendix => &[
            "delta_theta_max",
            "p_signal",
            "p_signal_closed",
            "p_phase_noise",
            "p_phase_noise_closed",
            "p_isi",
            "p_isi_closed",
            "trials",
        ],
    });
    if perfect {
        c.extend_from_slice(&["ser_perfect", "se_ser_perfect"]);
    }
    c
}

pub fn run(cfg: &ExperimentConfig, parallelism: Parallelism) -> Result<RunOutput, CliError> {
    let mut jobs = Vec::new();
    for (i, v) in cfg.sweep.values.iter().enumerate() {
        for (j, system) in cfg.systems(*v).into_iter().enumerate() {
            jobs.push(Job {
                sweep_value: *v,
                seed: cfg.seed.wrapping_add(((i as u64) << 16) + j as u64),
                system,
            });
        }
    }
    let perfect = cfg.kind == Kind::SerSweep && cfg.perfect_sync;
    let results = map_indexed(jobs.len(), parallelism, |i| run_job(cfg, &jobs[i]));
    let mut table = ResultTable::new(columns(cfg.kind, perfect));
    let mut warnings = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let res = res?;
        if let Some(w) = res.warning {
            warnings.push(format!(
                "sweep {} C {} F {}: {w}",
                job.sweep_value, job.system.capacity, job.system.oversampling
            ));
        }
        for row in res.rows {
            table.push(row);
        }
    }
    let runs = jobs
        .into_iter()
        .map(|j| RunRecord {
            sweep_value: j.sweep_value,
            seed: j.seed,
            system: j.system,
        })
        .collect();
    Ok(RunOutput {
        table,
        runs,
        warnings,
    })
}

fn cells<const N: usize>(c: [Cell; N]) -> [Cell; N] {
    c
}

fn prefix(job: &Job) -> Vec<Cell> {
    vec![
        job.sweep_value.into(),
        job.system.capacity.into(),
        job.system.oversampling.into(),
    ]
}

fn warning_of(trace: &DcTrace) -> Option<String> {
    match (&trace.warning, trace.converged) {
        (Some(w), _) => Some(w.clone()),
        (None, false) => Some(format!(
            "optimizer stopped after {} iterations",
            trace.iterations()
        )),
        (None, true) => None,
    }
}

fn bounds(sys: &SystemConfig, grid: &InvPsdGrid) -> CrbPair {
    crb(sys, grid).unwrap_or(CrbPair {
        crb_tau: f64::INFINITY,
        crb_theta: f64::INFINITY,
    })
}

fn mse_cells(s: &TrialStats) -> [Cell; 4] {
    [
        s.mse_tau.into(),
        s.se_tau.into(),
        s.mse_theta.into(),
        s.se_theta.into(),
    ]
}

fn run_job(cfg: &ExperimentConfig, job: &Job) -> Result<JobResult, CliError> {
    let sys = &job.system;
    let trials = cfg.trials.unwrap_or(0);
    let mut row = prefix(job);
    if cfg.kind == Kind::ValidateAppendix {
        let dtheta = cfg.delta_theta_max.expect("checked at load");
        let dtau = job.sweep_value;
        let m = measure_error_term_powers(sys, dtau, dtheta, trials, job.seed)?;
        let crbs = CrbPair {
            crb_tau: dtau * dtau / 12.0,
            crb_theta: dtheta * dtheta / 12.0,
        };
        let c = error_term_powers(sys, &crbs, &linear_approx_coeffs(dtau, dtheta, sys)?);
        row.extend(cells([
            dtheta.into(),
            m.p_signal.into(),
            c.p_signal.into(),
            m.p_phase_noise.into(),
            c.p_phase_noise.into(),
            m.p_isi.into(),
            c.p_isi.into(),
            trials.into(),
        ]));
        return Ok(JobResult {
            rows: vec![row],
            warning: None,
        });
    }

    let (opt, trace) = optimize_psd(sys, cfg.max_iters, cfg.tol)?;
    let warning = warning_of(&trace);
    let white = white_psd_baseline(sys)?;
    let converged = warning.is_none();
    let rows = match cfg.kind {
        Kind::OptimizePsd => {
            let np = sys.pilot_len;
            let mut rows = Vec::with_capacity(sys.oversampling * np);
            for n in 0..sys.oversampling {
                // Centered frequency order, -N_p/2 first.
                for kc in -(np as i64 / 2)..(np as i64 - np as i64 / 2) {
                    let k = kc.rem_euclid(np as i64) as usize;
                    let mut r = prefix(job);
                    r.extend(cells([
                        n.into(),
                        kc.into(),
                        opt.u[(n, k)].into(),
                        white.u[(n, k)].into(),
                        trace.iterations().into(),
                        converged.into(),
                    ]));
                    rows.push(r);
                }
            }
            rows
        }
        Kind::CrbSweep => {
            let approx = nominal_coeffs(sys)?;
            let (bo, bw) = (bounds(sys, &opt), bounds(sys, &white));
            row.extend(cells([
                bo.crb_tau.into(),
                bo.crb_theta.into(),
                bw.crb_tau.into(),
                bw.crb_theta.into(),
                frontsync::metrics::effective_snr(sys, &bo, &approx, opt.sigma2_qd).into(),
                frontsync::metrics::effective_snr(sys, &bw, &approx, white.sigma2_qd).into(),
                opt.dropped_count().into(),
                trace.iterations().into(),
                converged.into(),
            ]));
            vec![row]
        }
        Kind::MseSweep => {
            let (bo, bw) = (bounds(sys, &opt), bounds(sys, &white));
            let a = run_mse_experiment(sys, &Compression::Gaussian(opt), trials, job.seed)?;
            let b = run_mse_experiment(sys, &Compression::Gaussian(white), trials, job.seed)?;
            row.extend(mse_cells(&a));
            row.extend(mse_cells(&b));
            row.extend(cells([
                bo.crb_tau.into(),
                bo.crb_theta.into(),
                bw.crb_tau.into(),
                bw.crb_theta.into(),
                a.estimation_failures.into(),
                b.estimation_failures.into(),
                trials.into(),
                converged.into(),
            ]));
            vec![row]
        }
        Kind::ValidateScalar => {
            let shaped = Compression::Scalar(design_scalar_quantizer(&opt, sys)?);
            let uniform = Compression::Scalar(uniform_reference_quantizer(sys)?);
            let a = run_mse_experiment(sys, &shaped, trials, job.seed)?;
            let b = run_mse_experiment(sys, &uniform, trials, job.seed)?;
            row.extend(mse_cells(&a));
            row.extend(mse_cells(&b));
            row.extend(cells([
                a.estimation_failures.into(),
                b.estimation_failures.into(),
                trials.into(),
                converged.into(),
            ]));
            vec![row]
        }
        Kind::SerSweep => {
            let constellation = cfg.constellation();
            let setup = |sigma2_qd, sync| SerSetup {
                constellation,
                sigma2_qd,
                sync,
            };
            let sigma2 = opt.sigma2_qd;
            let white_setup = setup(white.sigma2_qd, SyncMode::Estimated);
            let a = run_ser_experiment(
                sys,
                &Compression::Gaussian(opt),
                &setup(sigma2, SyncMode::Estimated),
                trials,
                job.seed,
            )?;
            let b = run_ser_experiment(
                sys,
                &Compression::Gaussian(white),
                &white_setup,
                trials,
                job.seed,
            )?;
            row.extend(cells([
                a.ser.into(),
                a.se_ser.into(),
                b.ser.into(),
                b.se_ser.into(),
                sigma2.into(),
                a.estimation_failures.into(),
                b.estimation_failures.into(),
                (a.n_symbols as i64).into(),
                converged.into(),
            ]));
            if cfg.perfect_sync {
                let p = run_ser_experiment(
                    sys,
                    &Compression::Unquantized,
                    &setup(sigma2, SyncMode::Perfect),
                    trials,
                    job.seed,
                )?;
                row.extend(cells([p.ser.into(), p.se_ser.into()]));
            }
            vec![row]
        }
        Kind::ValidateAppendix => unreachable!(),
    };
    Ok(JobResult { rows, warning })
}
