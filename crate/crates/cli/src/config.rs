//! Experiment configuration files.
//!
//! A config is a TOML document with a fixed set of keys; unknown keys are
//! rejected. See the README for the full grammar.

use std::path::{Path, PathBuf};

use frontsync::{Constellation, SystemConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    OptimizePsd,
    CrbSweep,
    MseSweep,
    SerSweep,
    ValidateAppendix,
    ValidateScalar,
}

impl Kind {
    pub fn is_monte_carlo(self) -> bool {
        !matches!(self, Kind::OptimizePsd | Kind::CrbSweep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Common `SNR_p = SNR_d` in dB.
    SnrDb,
    /// Pilot SNR in dB with the pilot power held fixed.
    SnrPDb,
    /// Timing-error spread `delta_tau_max` in units of `T`.
    DeltaTauMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Overrides of the default system parameters. Noise follows the sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOverrides {
    pub amplitude: Option<f64>,
    pub symbol_period: Option<f64>,
    pub oversampling: Option<usize>,
    pub pilot_len: Option<usize>,
    pub data_len: Option<usize>,
    pub pilot_energy: Option<f64>,
    pub data_energy: Option<f64>,
    pub capacity: Option<f64>,
    pub pulse_truncation: Option<usize>,
}

/// Lists that multiply every sweep point into one curve per combination.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Series {
    pub capacity: Option<Vec<f64>>,
    pub oversampling: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    pub trials: Option<usize>,
    #[serde(default = "default_output")]
    pub output_path: PathBuf,
    #[serde(default)]
    pub system: SystemOverrides,
    pub sweep: Sweep,
    #[serde(default)]
    pub series: Series,
    /// `ser-sweep` only.
    pub constellation: Option<String>,
    /// `ser-sweep` only; adds the perfect-synchronization reference curve.
    #[serde(default)]
    pub perfect_sync: bool,
    /// `validate-appendix` only, in radians.
    pub delta_theta_max: Option<f64>,
    /// Optimizer iteration cap and tolerance.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_output() -> PathBuf {
    PathBuf::from(".")
}

fn default_max_iters() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-8
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!(
                "name must be a plain file stem, got {:?}",
                self.name
            ));
        }
        if self.sweep.values.is_empty() {
            return bad("sweep.values must not be empty".into());
        }
        if let Some(v) = self.sweep.values.iter().find(|v| !v.is_finite()) {
            return bad(format!("sweep.values must be finite, got {v}"));
        }
        let appendix = self.kind == Kind::ValidateAppendix;
        if appendix != (self.sweep.variable == SweepVariable::DeltaTauMax) {
            return bad(format!(
                "sweep.variable {:?} does not apply to kind {:?}",
                self.sweep.variable, self.kind
            ));
        }
        if self.kind.is_monte_carlo() && self.trials.is_none() {
            return bad(format!(
                "missing key `trials` (required by kind {:?})",
                self.kind
            ));
        }
        if self.kind == Kind::SerSweep {
            match &self.constellation {
                None => {
                    return bad("missing key `constellation` (required by kind ser-sweep)".into())
                }
                Some(c) => {
                    Constellation::parse(c).map_err(|e| CliError::Config(e.to_string()))?;
                }
            }
        } else if self.constellation.is_some() || self.perfect_sync {
            return bad("`constellation` and `perfect_sync` apply only to ser-sweep".into());
        }
        if appendix {
            if self.delta_theta_max.is_none() {
                return bad(
                    "missing key `delta_theta_max` (required by kind validate-appendix)".into(),
                );
            }
        } else if self.delta_theta_max.is_some() {
            return bad("`delta_theta_max` applies only to validate-appendix".into());
        }
        if matches!(self.series.capacity.as_deref(), Some([]))
            || matches!(self.series.oversampling.as_deref(), Some([]))
        {
            return bad("series lists must not be empty".into());
        }
        for sys in self.systems(self.sweep.values[0]) {
            sys.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn base_system(&self) -> SystemConfig {
        let d = SystemConfig::default();
        let o = &self.system;
        SystemConfig {
            amplitude: o.amplitude.unwrap_or(d.amplitude),
            symbol_period: o.symbol_period.unwrap_or(d.symbol_period),
            oversampling: o.oversampling.unwrap_or(d.oversampling),
            pilot_len: o.pilot_len.unwrap_or(d.pilot_len),
            data_len: o.data_len.unwrap_or(d.data_len),
            pilot_energy: o.pilot_energy.unwrap_or(d.pilot_energy),
            data_energy: o.data_energy.unwrap_or(d.data_energy),
            noise_psd: d.noise_psd,
            capacity: o.capacity.unwrap_or(d.capacity),
            pulse_truncation: o.pulse_truncation.unwrap_or(d.pulse_truncation),
        }
    }

    /// Resolved systems of every series at one sweep value, in series order
    /// (capacity outer, oversampling inner).
    pub fn systems(&self, sweep_value: f64) -> Vec<SystemConfig> {
        let base = self.base_system();
        let caps = self.series.capacity.clone().unwrap_or(vec![base.capacity]);
        let overs = self
            .series
            .oversampling
            .clone()
            .unwrap_or(vec![base.oversampling]);
        let mut out = Vec::with_capacity(caps.len() * overs.len());
        for c in &caps {
            for f in &overs {
                let sys = SystemConfig {
                    capacity: *c,
                    oversampling: *f,
                    ..base.clone()
                };
                out.push(match self.sweep.variable {
                    SweepVariable::SnrDb => sys.with_common_snr_db(sweep_value),
                    SweepVariable::SnrPDb => sys.with_snr_p_db(sweep_value),
                    SweepVariable::DeltaTauMax => sys,
                });
            }
        }
        out
    }

    pub fn constellation(&self) -> Constellation {
        self.constellation
            .as_deref()
            .map(|c| Constellation::parse(c).expect("checked at load"))
            .unwrap_or(Constellation::Qpsk)
    }
}
