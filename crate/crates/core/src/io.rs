//! Trajectory files: CSV (`t,u_1..u_m,y_1..y_l`) and a JSON envelope.
//!
//! Values are written with 17 significant digits, so reading a file back
//! reproduces every `f64` bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lti::{RngSeed, Trajectory};

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let (m, l) = (traj.m(), traj.l());
    let mut w = csv::Writer::from_writer(out);
    let header = std::iter::once("t".to_string())
        .chain((1..=m).map(|i| format!("u_{i}")))
        .chain((1..=l).map(|i| format!("y_{i}")));
    w.write_record(header).map_err(csv_err)?;
    for k in 0..traj.len() {
        let mut row = vec![(traj.start_time + k).to_string()];
        row.extend(traj.inputs.column(k).iter().map(|&x| fmt17(x)));
        row.extend(traj.outputs.column(k).iter().map(|&x| fmt17(x)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory CSV; `m` and `l` come from the `u_*`/`y_*` header columns.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Format("first column must be 't'".into()));
    }
    let m = header.iter().filter(|h| h.starts_with("u_")).count();
    let l = header.iter().filter(|h| h.starts_with("y_")).count();
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=m).map(|i| format!("u_{i}")))
        .chain((1..=l).map(|i| format!("y_{i}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Format(format!(
            "header must be {}, got {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let t: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("bad time index '{}': {e}", &rec[0])))?;
        times.push(t);
        for field in rec.iter().skip(1) {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad value '{field}': {e}")))?,
            );
        }
    }
    let start_time = *times
        .first()
        .ok_or_else(|| Error::Format("trajectory has no samples".into()))?;
    if times.iter().enumerate().any(|(k, &t)| t != start_time + k) {
        return Err(Error::Format("time column must be consecutive".into()));
    }
    let len = times.len();
    let rows = Matrix::from_column_slice(m + l, len, &values);
    Trajectory::new(rows.rows(0, m).into_owned(), rows.rows(m, l).into_owned(), start_time)
}

/// Trajectory plus provenance, as stored in the JSON envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub traj: Trajectory,
    pub seed: Option<RngSeed>,
    pub task_label: String,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    m: usize,
    l: usize,
    #[serde(rename = "T")]
    horizon: usize,
    start_time: usize,
    seed: Option<u64>,
    task_label: String,
    /// One `[u_1..u_m, y_1..y_l]` row per sample.
    data: Vec<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn to_json(&self) -> Result<String> {
        let t = &self.traj;
        let data = (0..t.len())
            .map(|k| {
                t.inputs
                    .column(k)
                    .iter()
                    .chain(t.outputs.column(k).iter())
                    .cloned()
                    .collect()
            })
            .collect();
        Ok(serde_json::to_string(&Envelope {
            m: t.m(),
            l: t.l(),
            horizon: t.horizon(),
            start_time: t.start_time,
            seed: self.seed.map(|s| s.0),
            task_label: self.task_label.clone(),
            data,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Envelope = serde_json::from_str(s)?;
        if e.data.len() != e.horizon + 1 {
            return Err(Error::Format(format!(
                "T = {} needs {} samples, found {}",
                e.horizon,
                e.horizon + 1,
                e.data.len()
            )));
        }
        if let Some(bad) = e.data.iter().find(|r| r.len() != e.m + e.l) {
            return Err(Error::Format(format!(
                "sample has {} values, expected {}",
                bad.len(),
                e.m + e.l
            )));
        }
        let flat: Vec<f64> = e.data.concat();
        let rows = Matrix::from_column_slice(e.m + e.l, e.data.len(), &flat);
        let traj = Trajectory::new(
            rows.rows(0, e.m).into_owned(),
            rows.rows(e.m, e.l).into_owned(),
            e.start_time,
        )?;
        Ok(Self {
            traj,
            seed: e.seed.map(RngSeed),
            task_label: e.task_label,
        })
    }
}
