//! Plain-text outputs: trajectory and grid CSV files with fixed headers,
//! and the JSON header that travels with a grid.
//!
//! Floats are written as `{:.16e}` (17 significant digits) so every value
//! reads back to the same bits.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::hjb::{Axis, GridTag, ValueGrid};
use crate::scalar::Real;
use crate::sde::PathEnsemble;

pub const TRAJECTORY_HEADER: &str = "path,step,time,fish,x,v,u";
pub const GRID_HEADER: &str = "x,v,value";

/// Round-trip float formatting.
pub fn fmt_float<T: Real>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

/// One row per `(path, step, fish)`, in that nesting order.
pub fn write_trajectories_csv<T: Real, W: Write>(ensemble: &PathEnsemble<T>, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for (p, path) in ensemble.paths.iter().enumerate() {
        for (k, (state, controls)) in path.states.iter().zip(&path.controls).enumerate() {
            for i in 0..state.n_fish() {
                writeln!(
                    out,
                    "{p},{k},{},{i},{},{},{}",
                    fmt_float(state.time),
                    fmt_float(state.positions[i]),
                    fmt_float(state.velocities[i]),
                    fmt_float(controls[i])
                )?;
            }
        }
    }
    Ok(())
}

/// One row per node, `x` outer and `v` inner.
pub fn write_grid_csv<T: Real, W: Write>(grid: &ValueGrid<T>, mut out: W) -> io::Result<()> {
    writeln!(out, "{GRID_HEADER}")?;
    let xs = grid.x.coords();
    let vs = grid.v.coords();
    for (i, x) in xs.iter().enumerate() {
        for (j, v) in vs.iter().enumerate() {
            writeln!(out, "{},{},{}", fmt_float(*x), fmt_float(*v), fmt_float(grid.values[[i, j]]))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub x: Axis<f64>,
    pub v: Axis<f64>,
}

/// Metadata written next to a grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub axes: GridAxes,
    pub time: f64,
    pub tag: GridTag,
}

impl GridHeader {
    pub fn of<T: Real>(grid: &ValueGrid<T>) -> Self {
        let ax = |a: &Axis<T>| Axis { min: a.min.as_f64(), max: a.max.as_f64(), n: a.n };
        GridHeader { axes: GridAxes { x: ax(&grid.x), v: ax(&grid.v) }, time: grid.time.as_f64(), tag: grid.tag }
    }
}
