//! Deterministic CSV/JSON reading and writing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use gpbas::control::{QuadraticCost, Rollout};
use gpbas::environments::Environment;
use gpbas::gp::{Dataset, TargetMode};

use crate::error::{CliError, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn dataset_header(env: &Environment) -> Vec<String> {
    env.input_names().into_iter().chain(env.target_names()).collect()
}

pub fn write_dataset(path: &Path, env: &Environment, data: &Dataset) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..data.len())
        .map(|i| {
            data.inputs()
                .row(i)
                .iter()
                .chain(data.targets().row(i).iter())
                .map(|&v| num(v))
                .collect()
        })
        .collect();
    write_csv(path, &dataset_header(env), &rows)
}

/// Read a dataset CSV whose header must match the environment's columns.
pub fn read_dataset(path: &Path, env: &Environment) -> Result<Dataset> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let expected = dataset_header(env);
    if header != expected {
        return Err(CliError::usage(format!(
            "{}: header {:?} does not match the {} environment columns {:?}",
            path.display(),
            header,
            env.name(),
            expected
        )));
    }
    let n_in = env.input_names().len();
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::usage(format!("{}: row {}: {e}", path.display(), line + 2)))?;
        inputs.push(vals[..n_in].to_vec());
        targets.push(vals[n_in..].to_vec());
    }
    if inputs.is_empty() {
        return Err(CliError::usage(format!("{}: dataset has no rows", path.display())));
    }
    Ok(Dataset::from_rows(&inputs, &targets, TargetMode::ContinuousDerivative)?)
}

/// Trajectory table: `t, x_1..x_n, z_1..z_q, u_1..u_m, h_min, cost_to_go`.
/// The last knot carries no control.
pub fn write_trajectory(path: &Path, rollout: &Rollout, cost: &QuadraticCost, dt: f64) -> Result<()> {
    let first = &rollout.states[0];
    let (n, q) = (first.x.len(), first.z.len());
    let m = cost.control_dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=q).map(|i| format!("z_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend(["h_min".to_string(), "cost_to_go".to_string()]);

    let knots = rollout.states.len();
    let mut to_go = vec![0.0; knots];
    if knots > rollout.controls.len() {
        to_go[knots - 1] = cost.terminal(&rollout.states[knots - 1].to_vector());
        for k in (0..knots - 1).rev() {
            to_go[k] = to_go[k + 1] + cost.running(&rollout.states[k].to_vector(), &rollout.controls[k]);
        }
    }
    let rows: Vec<Vec<String>> = rollout
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut row = vec![num(k as f64 * dt)];
            row.extend(s.x.iter().chain(s.z.iter()).map(|&v| num(v)));
            match rollout.controls.get(k).filter(|_| k + 1 < knots) {
                Some(u) => row.extend(u.iter().map(|&v| num(v))),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            row.push(num(rollout.h_min[k]));
            row.push(num(to_go[k]));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn output_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
