//! Run artifacts: the manifest, density/trajectory snapshots, and per-step
//! metric series. Every CSV written here is loadable by the metrics
//! command (see the readers below).

use std::fmt::Write as _;
use std::path::Path;

use nfmkv_core::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const DENSITY_FILE: &str = "density.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const METRICS_JSON_FILE: &str = "metrics_report.json";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";

#[derive(serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub config_echo: Option<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_echo: Option<&str>) -> Manifest {
        Manifest {
            tool: "nfmkv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            threads: std::env::var("NFMKV_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(1),
            config_echo: config_echo.map(str::to_owned),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            field: "manifest".into(),
            detail: e.to_string(),
        })?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    // Shortest decimal that round-trips the exact value.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Density rows: `step,t,x0[,x1],density`.
pub fn write_density_csv(
    path: &Path,
    dim: usize,
    rows: impl Iterator<Item = (usize, f64, Vec<f64>, f64)>,
) -> Result<()> {
    let mut out = String::new();
    match dim {
        1 => out.push_str("step,t,x0,density\n"),
        2 => out.push_str("step,t,x0,x1,density\n"),
        _ => return Err(Error::invalid("density snapshots are 1-D or 2-D")),
    }
    for (step, t, x, density) in rows {
        let _ = write!(out, "{step},{}", fmt_f64(t));
        for v in &x {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        let _ = writeln!(out, ",{}", fmt_f64(density));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Trajectory rows: `sample,step,t,x0,...,x{d-1}`.
pub fn write_trajectory_csv(
    path: &Path,
    dim: usize,
    rows: impl Iterator<Item = (usize, usize, f64, Vec<f64>)>,
) -> Result<()> {
    let mut out = String::from("sample,step,t");
    for k in 0..dim {
        let _ = write!(out, ",x{k}");
    }
    out.push('\n');
    for (sample, step, t, x) in rows {
        let _ = write!(out, "{sample},{step},{}", fmt_f64(t));
        for v in &x {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Series rows: `step,t,value`.
pub fn write_series_csv(path: &Path, rows: impl Iterator<Item = (usize, f64, f64)>) -> Result<()> {
    let mut out = String::from("step,t,value\n");
    for (step, t, v) in rows {
        let _ = writeln!(out, "{step},{},{}", fmt_f64(t), fmt_f64(v));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        field: format!("{}:{line}", path.display()),
        detail: format!("bad number `{s}`"),
    })
}

/// Read back a series CSV as (step, t, value) triples.
pub fn read_series_csv(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "step,t,value" {
                return Err(Error::Parse {
                    field: path.display().to_string(),
                    detail: format!("unexpected header `{line}`"),
                });
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                field: format!("{}:{i}", path.display()),
                detail: "expected 3 columns".into(),
            });
        }
        let step = parts[0].parse::<usize>().map_err(|_| Error::Parse {
            field: format!("{}:{i}", path.display()),
            detail: format!("bad step `{}`", parts[0]),
        })?;
        rows.push((step, parse_f64(parts[1], path, i)?, parse_f64(parts[2], path, i)?));
    }
    Ok(rows)
}

/// Read back a trajectory CSV: (sample, step, t, position).
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<(usize, usize, f64, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut dim = 0usize;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("sample,step,t,x0") {
                return Err(Error::Parse {
                    field: path.display().to_string(),
                    detail: format!("unexpected header `{line}`"),
                });
            }
            dim = line.split(',').count() - 3;
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 + dim {
            return Err(Error::Parse {
                field: format!("{}:{i}", path.display()),
                detail: format!("expected {} columns", 3 + dim),
            });
        }
        let parse_idx = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                field: format!("{}:{i}", path.display()),
                detail: format!("bad index `{s}`"),
            })
        };
        let sample = parse_idx(parts[0])?;
        let step = parse_idx(parts[1])?;
        let t = parse_f64(parts[2], path, i)?;
        let mut x = Vec::with_capacity(dim);
        for part in &parts[3..] {
            x.push(parse_f64(part, path, i)?);
        }
        rows.push((sample, step, t, x));
    }
    Ok(rows)
}

/// Read back a density CSV: (step, t, position, density).
pub fn read_density_csv(path: &Path) -> Result<Vec<(usize, f64, Vec<f64>, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut dim = 0usize;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            dim = match line {
                "step,t,x0,density" => 1,
                "step,t,x0,x1,density" => 2,
                other => {
                    return Err(Error::Parse {
                        field: path.display().to_string(),
                        detail: format!("unexpected header `{other}`"),
                    })
                }
            };
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 + dim {
            return Err(Error::Parse {
                field: format!("{}:{i}", path.display()),
                detail: format!("expected {} columns", 3 + dim),
            });
        }
        let step = parts[0].parse::<usize>().map_err(|_| Error::Parse {
            field: format!("{}:{i}", path.display()),
            detail: format!("bad step `{}`", parts[0]),
        })?;
        let t = parse_f64(parts[1], path, i)?;
        let mut x = Vec::with_capacity(dim);
        for part in &parts[2..2 + dim] {
            x.push(parse_f64(part, path, i)?);
        }
        rows.push((step, t, x, parse_f64(parts[2 + dim], path, i)?));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![(0usize, 0.0f64, -2.5f64), (1, 0.02, -2.6431e-7)];
        write_series_csv(&p, rows.clone().into_iter()).unwrap();
        let back = read_series_csv(&p).unwrap();
        assert_eq!(rows.len(), back.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.to_bits(), b.1.to_bits());
            assert_eq!(a.2.to_bits(), b.2.to_bits());
        }
    }

    #[test]
    fn density_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let rows = vec![
            (0usize, 0.0f64, vec![0.25, -1.0], 0.159),
            (1, 0.5, vec![0.5, 2.0], 1.0 / 3.0),
        ];
        write_density_csv(&p, 2, rows.clone().into_iter()).unwrap();
        let back = read_density_csv(&p).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.3.to_bits(), b.3.to_bits());
        }
    }
}
