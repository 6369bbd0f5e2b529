//! `H`-valued paths on a uniform time grid.
//!
//! All times are snapped to the nearest grid node. A path stopped at node `j`
//! holds its node-`j` value from `j` on; a bump at node `j` is added from node
//! `j` inclusive, which is how càdlàg directions `h 1_{[t,T]}` are represented.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::hilbert::{dist, norm, HilbertVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    /// Nearest grid node to `t`; errors outside `[0, T]`.
    pub fn snap(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.horizon;
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::Domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let j = (t / self.dt()).round();
        Ok((j.max(0.0) as usize).min(self.steps))
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && self.horizon == other.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    grid: TimeGrid,
    dim: usize,
    /// Node-major storage: node `j` occupies `values[j*dim..(j+1)*dim]`.
    values: Vec<f64>,
}

impl PathGrid {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.nodes() * dim],
        }
    }

    pub fn constant(grid: TimeGrid, c: &[f64]) -> Self {
        let mut values = Vec::with_capacity(grid.nodes() * c.len());
        for _ in 0..grid.nodes() {
            values.extend_from_slice(c);
        }
        Self {
            grid,
            dim: c.len(),
            values,
        }
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.nodes() * dim);
        for j in 0..grid.nodes() {
            let v = f(grid.time(j));
            if v.len() != dim {
                return Err(Error::Config(format!(
                    "path function returned {} coordinates, expected {dim}",
                    v.len()
                )));
            }
            values.extend(v);
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_nodes(grid: TimeGrid, nodes: &[HilbertVec]) -> Result<Self> {
        if nodes.len() != grid.nodes() {
            return Err(Error::Config(format!(
                "expected {} nodes, got {}",
                grid.nodes(),
                nodes.len()
            )));
        }
        let dim = nodes[0].dim();
        if nodes.iter().any(|v| v.dim() != dim) {
            return Err(Error::Config("ragged path nodes".into()));
        }
        Ok(Self {
            grid,
            dim,
            values: nodes.iter().flat_map(|v| v.0.iter().copied()).collect(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn at_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn view(&self, upto: usize) -> PathView<'_> {
        PathView {
            path: self,
            upto: upto.min(self.grid.steps),
        }
    }

    pub fn full_view(&self) -> PathView<'_> {
        self.view(self.grid.steps)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Copies node `upto` into every later node.
    pub fn freeze_after(&mut self, upto: usize) {
        let d = self.dim;
        let (head, tail) = self.values.split_at_mut((upto + 1) * d);
        let frozen = &head[upto * d..];
        for chunk in tail.chunks_mut(d) {
            chunk.copy_from_slice(frozen);
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t");
        for k in 1..=self.dim {
            header.push_str(&format!(",c{k}"));
        }
        writeln!(w, "{header}")?;
        for j in 0..self.grid.nodes() {
            let mut line = fmt17(self.grid.time(j));
            for v in self.at(j) {
                line.push(',');
                line.push_str(&fmt17(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads the format written by [`PathGrid::write_csv`]; the grid is
    /// inferred from the first and last time stamps.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Io("empty path csv".into()))??;
        let dim = header.split(',').count() - 1;
        if dim == 0 || !header.starts_with("t,") {
            return Err(Error::Io(format!("bad path csv header: {header}")));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Io(format!("bad number in path csv: {e}")))?;
            if fields.len() != dim + 1 {
                return Err(Error::Io(format!("ragged row in path csv: {line}")));
            }
            times.push(fields[0]);
            values.extend_from_slice(&fields[1..]);
        }
        if times.len() < 2 {
            return Err(Error::Io("path csv needs at least two rows".into()));
        }
        let grid = TimeGrid::new(*times.last().unwrap(), times.len() - 1)?;
        Ok(Self { grid, dim, values })
    }
}

/// Seventeen significant digits, enough to round-trip an `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// A path seen through `x_{. ^ t_upto}`: reads past `upto` return the
/// node-`upto` value, so coefficients fed a view cannot anticipate.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    path: &'a PathGrid,
    upto: usize,
}

impl<'a> PathView<'a> {
    pub fn upto(&self) -> usize {
        self.upto
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.path.grid
    }

    pub fn dim(&self) -> usize {
        self.path.dim
    }

    pub fn at(&self, j: usize) -> &'a [f64] {
        self.path.at(j.min(self.upto))
    }

    /// Value at the stopping node.
    pub fn current(&self) -> &'a [f64] {
        self.path.at(self.upto)
    }

    /// `||x||_t` at the stopping node.
    pub fn sup_norm(&self) -> f64 {
        (0..=self.upto)
            .map(|j| norm(self.path.at(j)))
            .fold(0.0, f64::max)
    }

    pub fn to_path(&self) -> PathGrid {
        let mut p = self.path.clone();
        p.freeze_after(self.upto);
        p
    }
}

/// `x_{. ^ t}`.
pub fn stop(x: &PathGrid, t: f64) -> Result<PathGrid> {
    let j = x.grid.snap(t)?;
    Ok(stop_at(x, j))
}

pub fn stop_at(x: &PathGrid, j: usize) -> PathGrid {
    let mut y = x.clone();
    y.freeze_after(j.min(x.grid.steps));
    y
}

/// `x + h 1_{[t,T]}`.
pub fn bump(x: &PathGrid, t: f64, h: &[f64]) -> Result<PathGrid> {
    let j = x.grid.snap(t)?;
    bump_at(x, j, h)
}

pub fn bump_at(x: &PathGrid, j: usize, h: &[f64]) -> Result<PathGrid> {
    if h.len() != x.dim {
        return Err(Error::Config(format!(
            "bump direction has dimension {}, path has {}",
            h.len(),
            x.dim
        )));
    }
    let mut y = x.clone();
    for node in j..x.grid.nodes() {
        for (v, hk) in y.at_mut(node).iter_mut().zip(h) {
            *v += hk;
        }
    }
    Ok(y)
}

/// `||x||_t = max_{s <= t} |x_s|_H` over grid nodes.
pub fn sup_seminorm(x: &PathGrid, t: f64) -> Result<f64> {
    let j = x.grid.snap(t)?;
    Ok(x.view(j).sup_norm())
}

pub fn sup_norm(x: &PathGrid) -> f64 {
    x.full_view().sup_norm()
}

/// `||x - y||_t` over nodes `0..=upto`, without allocating.
pub fn sup_dist(x: &PathGrid, y: &PathGrid, upto: usize) -> f64 {
    (0..=upto)
        .map(|j| dist(x.at(j), y.at(j)))
        .fold(0.0, f64::max)
}

pub fn check_compatible(x: &PathGrid, y: &PathGrid) -> Result<()> {
    if !x.grid.same_as(&y.grid) || x.dim != y.dim {
        return Err(Error::Config(
            "paths live on different grids or spaces; resample first".into(),
        ));
    }
    Ok(())
}
