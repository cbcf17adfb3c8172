//! CSV dumps with JSON sidecars.
//!
//! * trajectories: `t,x0..x{n-1}`, one row per sample, plus `<file>.json`
//!   with the grid and seed;
//! * episode logs: `step,t,r,D,Pf,a1..aN`;
//! * continuation runs: `param,residual,D,Pf,max_real_eig`.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a dump
//! back gives bit-identical values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EpisodeLog, StepRecord};
use crate::equilibria::ContinuationRun;
use crate::error::{Error, Result};
use crate::spectral::{Fourier, GridConfig, RealField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub length: f64,
    pub n_points: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl TrajectoryMeta {
    pub fn new(grid: &GridConfig, seed: u64, config_hash: Option<String>) -> Self {
        Self {
            length: grid.length,
            n_points: grid.n_points,
            dt: grid.dt,
            seed,
            config_hash,
        }
    }
}

/// `traj.csv` -> `traj.csv.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn parse(field: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{}: cannot parse {field:?} as a number", path.display())))
}

fn check_header(reader: &mut csv::Reader<fs::File>, expected: &[String], path: &Path) -> Result<()> {
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != expected {
        return Err(Error::Config(format!(
            "{}: header {:?} does not match {:?}",
            path.display(),
            header,
            expected
        )));
    }
    Ok(())
}

fn trajectory_header(n: usize) -> Vec<String> {
    std::iter::once("t".to_owned())
        .chain((0..n).map(|j| format!("x{j}")))
        .collect()
}

pub fn write_trajectory(path: &Path, times: &[f64], states: &[RealField], meta: &TrajectoryMeta) -> Result<()> {
    if times.len() != states.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            got: states.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(meta.n_points))?;
    for (t, u) in times.iter().zip(states) {
        if u.len() != meta.n_points {
            return Err(Error::LengthMismatch {
                expected: meta.n_points,
                got: u.len(),
            });
        }
        w.write_record(std::iter::once(fmt(*t)).chain(u.0.iter().map(|v| fmt(*v))))?;
    }
    w.flush()?;
    write_json(&sidecar_path(path), meta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub times: Vec<f64>,
    pub states: Vec<RealField>,
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let meta: TrajectoryMeta = read_json(&sidecar_path(path))?;
    let mut r = csv::Reader::from_path(path)?;
    check_header(&mut r, &trajectory_header(meta.n_points), path)?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        times.push(parse(&rec[0], path)?);
        let u = rec.iter().skip(1).map(|f| parse(f, path)).collect::<Result<Vec<_>>>()?;
        states.push(RealField(u));
    }
    Ok(Trajectory { meta, times, states })
}

fn episode_header(n_jets: usize) -> Vec<String> {
    ["step", "t", "r", "D", "Pf"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n_jets).map(|i| format!("a{i}")))
        .collect()
}

pub fn write_episode_log(path: &Path, log: &EpisodeLog, n_jets: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(episode_header(n_jets))?;
    for s in &log.steps {
        if s.action.len() != n_jets {
            return Err(Error::LengthMismatch {
                expected: n_jets,
                got: s.action.len(),
            });
        }
        let fixed = [s.step.to_string(), fmt(s.t), fmt(s.r), fmt(s.d), fmt(s.pf)];
        w.write_record(fixed.into_iter().chain(s.action.iter().map(|a| fmt(*a))))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_log(path: &Path, n_jets: usize) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(&mut r, &episode_header(n_jets), path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let step = rec[0]
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad step index {:?}", path.display(), &rec[0])))?;
        out.push(StepRecord {
            step,
            t: parse(&rec[1], path)?,
            r: parse(&rec[2], path)?,
            d: parse(&rec[3], path)?,
            pf: parse(&rec[4], path)?,
            action: rec.iter().skip(5).map(|f| parse(f, path)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// One row of a continuation dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationRow {
    pub param: f64,
    pub residual: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "Pf")]
    pub pf: f64,
    pub max_real_eig: f64,
}

pub fn continuation_rows(run: &ContinuationRun) -> Result<Vec<ContinuationRow>> {
    run.params
        .iter()
        .zip(&run.solutions)
        .map(|(&param, eq)| {
            let fourier = Fourier::new(eq.grid)?;
            Ok(ContinuationRow {
                param,
                residual: eq.residual_norm,
                d: fourier.dissipation(&eq.u)?,
                pf: fourier.power_input(&eq.u, &eq.f)?,
                max_real_eig: eq.max_real_eig(),
            })
        })
        .collect()
}

pub fn write_continuation(path: &Path, rows: &[ContinuationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["param", "residual", "D", "Pf", "max_real_eig"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_continuation(path: &Path) -> Result<Vec<ContinuationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ContinuationRow>, _>>()?;
    Ok(rows)
}

/// Plain numeric table with a header, used for gains and ensemble series.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::LengthMismatch {
                expected: header.len(),
                got: row.len(),
            });
        }
        w.write_record(row.iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(|f| parse(f, path)).collect::<Result<Vec<_>>>()?);
    }
    Ok((header, rows))
}
