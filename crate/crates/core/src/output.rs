//! Plot-ready trajectory tables and their CSV form.
//!
//! Floats are written in shortest round-trip decimal form, so reading a
//! table back reproduces every value exactly.

use std::path::Path;

use crate::error::{invalid, Result};
use crate::sim::Trajectory;

/// Column-labelled rows of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Which optional columns to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Columns {
    pub energy: bool,
    pub defect: bool,
}

impl TrajectoryTable {
    /// Builds `t, g…, v…, [w…, eta], y, [V], [defect]` from a trajectory
    /// whose vector part is `v` (`closed_loop = false`) or `(v, w, η)`.
    pub fn from_trajectory(traj: &Trajectory, dim: usize, closed_loop: bool, columns: Columns) -> Result<Self> {
        let Some(first) = traj.states.first() else {
            return Ok(Self {
                columns: vec!["t".into()],
                rows: Vec::new(),
            });
        };
        let embed = first.g.coords().len();
        let expected = if closed_loop { 2 * dim + 1 } else { dim };
        if first.x.len() != expected {
            return Err(invalid(format!("state has {} entries, expected {expected}", first.x.len())));
        }
        let mut names = vec!["t".to_string()];
        names.extend((0..embed).map(|i| format!("g{i}")));
        names.extend((0..dim).map(|i| format!("v{i}")));
        if closed_loop {
            names.extend((0..dim).map(|i| format!("w{i}")));
            names.push("eta".into());
        }
        names.push("y".into());
        let energy = match (&traj.energy, columns.energy) {
            (Some(e), true) => Some(e),
            _ => None,
        };
        if energy.is_some() {
            names.push("V".into());
        }
        if columns.defect {
            names.push("defect".into());
        }
        let rows = (0..traj.len())
            .map(|k| {
                let s = &traj.states[k];
                let mut row = Vec::with_capacity(names.len());
                row.push(traj.times[k]);
                row.extend(s.g.coords().iter());
                row.extend(s.x.iter());
                row.push(traj.outputs[k]);
                if let Some(e) = energy {
                    row.push(e[k]);
                }
                if columns.defect {
                    row.push(traj.defect[k]);
                }
                row
            })
            .collect();
        Ok(Self { columns: names, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .deserialize::<Vec<f64>>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.iter().any(|row| row.len() != columns.len()) {
            return Err(invalid("ragged trajectory table"));
        }
        Ok(Self { columns, rows })
    }
}
