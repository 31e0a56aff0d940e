//! Structured tensor-product chart grids.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

/// Smallest node count accepted on any axis.
pub const MIN_NODES: usize = 8;

/// One coordinate axis of a chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    pub periodic: bool,
    /// Fraction of the axis range at each end that is excluded from residual
    /// norms. Always zero on periodic axes.
    pub margin: f64,
}

impl Axis {
    /// Periodic axis covering `[lo, hi)` with `nodes` nodes, spacing `(hi - lo) / nodes`.
    pub fn periodic(lo: f64, hi: f64, nodes: usize) -> Self {
        Axis { lo, hi, nodes, periodic: true, margin: 0.0 }
    }

    /// Closed axis covering `[lo, hi]` with both endpoints as nodes.
    pub fn closed(lo: f64, hi: f64, nodes: usize, margin: f64) -> Self {
        Axis { lo, hi, nodes, periodic: false, margin }
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.hi - self.lo) / self.nodes as f64
        } else {
            (self.hi - self.lo) / (self.nodes - 1) as f64
        }
    }

    pub fn period(&self) -> Option<f64> {
        self.periodic.then(|| self.hi - self.lo)
    }

    /// Number of nodes at each end of a closed axis that lie in the margin.
    pub fn margin_nodes(&self) -> usize {
        if self.periodic || self.margin <= 0.0 {
            return 0;
        }
        (self.margin * (self.nodes - 1) as f64 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }
}

/// Rectangular coordinate domain with per-axis resolution and periodicity.
///
/// Nodes are enumerated row-major: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartGrid {
    axes: Vec<Axis>,
    #[serde(skip)]
    strides: Vec<usize>,
    #[serde(skip)]
    count: usize,
}

impl ChartGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(GeomError::InvalidGrid("grid needs at least one axis".into()));
        }
        for (a, ax) in axes.iter().enumerate() {
            if ax.nodes < MIN_NODES {
                return Err(GeomError::InvalidGrid(format!(
                    "axis {a} has {} nodes, need at least {MIN_NODES}",
                    ax.nodes
                )));
            }
            if !(ax.hi > ax.lo) || !ax.lo.is_finite() || !ax.hi.is_finite() {
                return Err(GeomError::InvalidGrid(format!("axis {a} has empty range")));
            }
            if ax.periodic && ax.margin != 0.0 {
                return Err(GeomError::InvalidGrid(format!("periodic axis {a} has nonzero margin")));
            }
            if !(0.0..=0.25).contains(&ax.margin) {
                return Err(GeomError::InvalidGrid(format!("axis {a} margin outside [0, 0.25]")));
            }
        }
        let mut grid = ChartGrid { axes, strides: Vec::new(), count: 0 };
        grid.index_tables();
        Ok(grid)
    }

    fn index_tables(&mut self) {
        let n = self.axes.len();
        self.strides = vec![1; n];
        for a in (0..n.saturating_sub(1)).rev() {
            self.strides[a] = self.strides[a + 1] * self.axes[a + 1].nodes;
        }
        self.count = self.axes.iter().map(|a| a.nodes).product();
    }

    /// Rebuilds index tables after deserialization.
    pub fn rehydrate(mut self) -> Result<Self> {
        let axes = std::mem::take(&mut self.axes);
        ChartGrid::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    pub fn node_count(&self) -> usize {
        self.count
    }

    pub fn spacing(&self, a: usize) -> f64 {
        self.axes[a].spacing()
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    pub fn is_fully_periodic(&self) -> bool {
        self.axes.iter().all(|a| a.periodic)
    }

    /// Per-axis index of a node.
    pub fn axis_index(&self, node: usize, a: usize) -> usize {
        (node / self.strides[a]) % self.axes[a].nodes
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        (0..self.dim()).map(|a| self.axis_index(node, a)).collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coord(&self, node: usize) -> Vec<f64> {
        (0..self.dim()).map(|a| self.axes[a].coord(self.axis_index(node, a))).collect()
    }

    /// Node reached by moving `offset` steps along axis `a`; wraps on
    /// periodic axes, `None` when leaving a closed axis.
    pub fn shift(&self, node: usize, a: usize, offset: isize) -> Option<usize> {
        let n = self.axes[a].nodes as isize;
        let i = self.axis_index(node, a) as isize;
        let j = i + offset;
        let j = if self.axes[a].periodic {
            j.rem_euclid(n)
        } else if (0..n).contains(&j) {
            j
        } else {
            return None;
        };
        Some((node as isize + (j - i) * self.strides[a] as isize) as usize)
    }

    /// True when the node lies outside every axis margin.
    pub fn is_interior(&self, node: usize) -> bool {
        self.axes.iter().enumerate().all(|(a, ax)| {
            let m = ax.margin_nodes();
            let i = self.axis_index(node, a);
            m == 0 || (i >= m && i + m < ax.nodes)
        })
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.count).filter(|&k| self.is_interior(k)).collect()
    }

    /// Product trapezoid weight of a node (coordinate measure only).
    pub fn quadrature_weight(&self, node: usize) -> f64 {
        self.axes
            .iter()
            .enumerate()
            .map(|(a, ax)| {
                let h = ax.spacing();
                let i = self.axis_index(node, a);
                if !ax.periodic && (i == 0 || i + 1 == ax.nodes) {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    /// Uniform cell volume `prod h_a`, used by the symmetric operator inner product.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn torus(n: usize) -> ChartGrid {
        ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, n), Axis::periodic(0.0, 2.0 * PI, n)]).unwrap()
    }

    #[test]
    fn rejects_coarse_and_malformed_axes() {
        assert!(ChartGrid::new(vec![Axis::periodic(0.0, 1.0, 7)]).is_err());
        assert!(ChartGrid::new(vec![Axis::closed(1.0, 1.0, 16, 0.0)]).is_err());
        assert!(ChartGrid::new(vec![Axis { margin: 0.1, ..Axis::periodic(0.0, 1.0, 16) }]).is_err());
        assert!(ChartGrid::new(vec![Axis::closed(0.0, 1.0, 16, 0.3)]).is_err());
    }

    #[test]
    fn row_major_enumeration_is_reproducible() {
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 1.0, 8), Axis::closed(0.0, 1.0, 9, 0.0)]).unwrap();
        assert_eq!(g.node_count(), 72);
        let k = g.flat_index(&[3, 5]);
        assert_eq!(k, 3 * 9 + 5);
        assert_eq!(g.multi_index(k), vec![3, 5]);
        let x = g.coord(k);
        assert_eq!(x[0], 0.0 + 3.0 * (1.0 / 8.0));
        assert_eq!(x[1], 0.0 + 5.0 * (1.0 / 8.0));
    }

    #[test]
    fn shift_wraps_periodic_and_stops_on_closed() {
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 1.0, 8), Axis::closed(0.0, 1.0, 9, 0.0)]).unwrap();
        let k = g.flat_index(&[0, 0]);
        assert_eq!(g.shift(k, 0, -1), Some(g.flat_index(&[7, 0])));
        assert_eq!(g.shift(k, 1, -1), None);
        assert_eq!(g.shift(k, 1, 8), Some(g.flat_index(&[0, 8])));
    }

    #[test]
    fn margin_nodes_align_on_dyadic_resolutions() {
        for n in [32usize, 64, 128] {
            let ax = Axis::closed(0.0, 1.0, n + 1, 1.0 / 16.0);
            assert_eq!(ax.margin_nodes() * 16, n);
        }
        let g = ChartGrid::new(vec![Axis::closed(0.0, 1.0, 33, 1.0 / 16.0)]).unwrap();
        assert!(!g.is_interior(1));
        assert!(g.is_interior(2));
        assert!(g.is_interior(30));
        assert!(!g.is_interior(31));
    }

    #[test]
    fn torus_weights_sum_to_area() {
        let g = torus(16);
        let total: f64 = (0..g.node_count()).map(|k| g.quadrature_weight(k)).sum();
        assert!((total - 4.0 * PI * PI).abs() < 1e-12);
    }
}
