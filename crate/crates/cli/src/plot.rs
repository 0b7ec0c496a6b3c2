//! Gnuplot scripts for result tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

enum Layout {
    Psd,
    Crb,
    Mse { baseline: &'static str },
    Ser { perfect: bool },
    Appendix,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let malformed = |msg: String| CliError::Plot(format!("{}: {msg}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| malformed(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            rows.push(rec.iter().map(str::to_owned).collect::<Vec<_>>());
        }
        let t = Table { header, rows };
        for name in ["sweep", "capacity", "oversampling"] {
            let c = t
                .col0(name)
                .ok_or_else(|| malformed(format!("missing column {name}")))?;
            if let Some(bad) = t
                .rows
                .iter()
                .map(|r| &r[c])
                .find(|v| v.parse::<f64>().is_err())
            {
                return Err(malformed(format!("non-numeric {name} value {bad:?}")));
            }
        }
        if t.rows.is_empty() {
            return Err(malformed("no data rows".into()));
        }
        Ok(t)
    }

    fn col0(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn has(&self, name: &str) -> bool {
        self.col0(name).is_some()
    }

    /// 1-based column number for gnuplot.
    fn col(&self, name: &str) -> usize {
        self.col0(name).expect("layout checked") + 1
    }

    /// Distinct values of the given columns, in first-appearance order.
    fn distinct(&self, names: &[&str]) -> Vec<Vec<String>> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.col0(n).expect("layout checked"))
            .collect();
        let mut out: Vec<Vec<String>> = Vec::new();
        for r in &self.rows {
            let key: Vec<String> = idx.iter().map(|i| r[*i].clone()).collect();
            if !out.contains(&key) {
                out.push(key);
            }
        }
        out
    }

    fn layout(&self) -> Result<Layout, CliError> {
        Ok(if self.has("inv_psd") {
            Layout::Psd
        } else if self.has("mse_tau_white") {
            Layout::Mse { baseline: "white" }
        } else if self.has("mse_tau_uniform") {
            Layout::Mse {
                baseline: "uniform",
            }
        } else if self.has("ser_opt") {
            Layout::Ser {
                perfect: self.has("ser_perfect"),
            }
        } else if self.has("crb_tau_opt") {
            Layout::Crb
        } else if self.has("p_isi_closed") {
            Layout::Appendix
        } else {
            return Err(CliError::Plot("unrecognized table layout".into()));
        })
    }

    /// `column(a)==x && column(b)==y` for a series key.
    fn filter(&self, names: &[&str], key: &[String]) -> String {
        names
            .iter()
            .zip(key)
            .map(|(n, v)| format!("column({})=={v}", self.col(n)))
            .collect::<Vec<_>>()
            .join(" && ")
    }

    fn series_plot(&self, file: &str, x: &str, curves: &[(&str, &str, &str)]) -> String {
        let keys = self.distinct(&["capacity", "oversampling"]);
        let mut parts = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            let cond = self.filter(&["capacity", "oversampling"], key);
            for (col, label, style) in curves {
                parts.push(format!(
                    "'{file}' every ::1 using {}:(({cond}) ? column({}) : 1/0) with linespoints {style} lc {} title 'C={} F={} {label}'",
                    self.col(x),
                    self.col(col),
                    i + 1,
                    trim(&key[0]),
                    key[1]
                ));
            }
        }
        format!("plot {}\n", parts.join(", \\\n     "))
    }
}

fn trim(v: &str) -> String {
    v.parse::<f64>()
        .map(|x| format!("{x}"))
        .unwrap_or_else(|_| v.to_owned())
}

/// Writes `<stem>.gp` next to the table and returns its path.
pub fn emit_plot_script(csv_path: &Path) -> Result<PathBuf, CliError> {
    let table = Table::read(csv_path)?;
    let layout = table.layout()?;
    let file = csv_path
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| CliError::Plot(format!("bad path {}", csv_path.display())))?;
    let stem = file.strip_suffix(".csv").unwrap_or(file);
    let mut s = String::new();
    writeln!(
        s,
        "# Plot of {file}; run from the directory holding the table."
    )
    .unwrap();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set terminal pngcairo size 1200,500 enhanced").unwrap();
    writeln!(s, "set output '{stem}.png'").unwrap();
    writeln!(s, "set grid").unwrap();
    writeln!(s, "set key outside right").unwrap();
    let solid = "dt 1 pt 7";
    let dashed = "dt 2 pt 6";
    let dotted = "dt 3 pt 2";
    match layout {
        Layout::Psd => {
            writeln!(s, "set xlabel 'k_c'\nset ylabel '1/S'\nset xzeroaxis").unwrap();
            let keys = table.distinct(&["sweep", "capacity", "oversampling", "n"]);
            let mut parts = Vec::new();
            for (i, key) in keys.iter().enumerate() {
                let cond = table.filter(&["sweep", "capacity", "oversampling", "n"], key);
                parts.push(format!(
                    "'{file}' every ::1 using (column({})+0.1*{i}):(({cond}) ? column({}) : 1/0) with impulses lw 2 lc {} title 'SNR_p={} dB n={}'",
                    table.col("k_c"),
                    table.col("inv_psd"),
                    i + 1,
                    trim(&key[0]),
                    key[3]
                ));
            }
            writeln!(s, "plot {}", parts.join(", \\\n     ")).unwrap();
        }
        Layout::Mse { baseline } => {
            writeln!(s, "set multiplot layout 1,2").unwrap();
            writeln!(
                s,
                "set logscale y\nset format y '10^{{%T}}'\nset xlabel 'SNR_p (dB)'"
            )
            .unwrap();
            for (param, label) in [
                ("tau", "MSE of {/Symbol t} (T^2)"),
                ("theta", "MSE of {/Symbol q} (rad^2)"),
            ] {
                writeln!(s, "set ylabel '{label}'").unwrap();
                let opt = format!("mse_{param}_opt");
                let base = format!("mse_{param}_{baseline}");
                s.push_str(&table.series_plot(
                    file,
                    "sweep",
                    &[(&opt, "optimized", solid), (&base, baseline, dashed)],
                ));
            }
            writeln!(s, "unset multiplot").unwrap();
        }
        Layout::Ser { perfect } => {
            writeln!(
                s,
                "set logscale y\nset format y '10^{{%T}}'\nset xlabel 'SNR (dB)'\nset ylabel 'SER'"
            )
            .unwrap();
            let mut curves = vec![
                ("ser_opt", "optimized", solid),
                ("ser_white", "white", dashed),
            ];
            if perfect {
                curves.push(("ser_perfect", "perfect sync", dotted));
            }
            s.push_str(&table.series_plot(file, "sweep", &curves));
        }
        Layout::Crb => {
            writeln!(s, "set multiplot layout 1,2").unwrap();
            writeln!(
                s,
                "set logscale y\nset format y '10^{{%T}}'\nset xlabel 'SNR_p (dB)'"
            )
            .unwrap();
            for param in ["tau", "theta"] {
                writeln!(s, "set ylabel 'CRB {param}'").unwrap();
                let opt = format!("crb_{param}_opt");
                let white = format!("crb_{param}_white");
                s.push_str(&table.series_plot(
                    file,
                    "sweep",
                    &[(&opt, "optimized", solid), (&white, "white", dashed)],
                ));
            }
            writeln!(s, "unset multiplot").unwrap();
        }
        Layout::Appendix => {
            writeln!(s, "set logscale y\nset format y '10^{{%T}}'\nset xlabel '{{/Symbol D}}{{/Symbol t}}_{{max}} (T)'\nset ylabel 'power'").unwrap();
            s.push_str(&table.series_plot(
                file,
                "sweep",
                &[
                    ("p_phase_noise", "phase noise", "dt 1 pt 7"),
                    (
                        "p_phase_noise_closed",
                        "phase noise closed form",
                        "dt 2 pt 0",
                    ),
                    ("p_isi", "ISI", "dt 1 pt 5"),
                    ("p_isi_closed", "ISI closed form", "dt 2 pt 0"),
                ],
            ));
        }
    }
    let out = csv_path.with_file_name(format!("{stem}.gp"));
    std::fs::write(&out, s)?;
    Ok(out)
}
