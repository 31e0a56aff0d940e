//! Finite-difference stencils on chart grids.
//!
//! Derivatives are evaluated as `sum_k w_k (f[s_k] - f[c]) / h^m`, which is
//! exactly zero for constant input. Closed axes fall back to one-sided
//! stencils of the same order near their ends.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::grid::ChartGrid;

/// What to do when a centered stencil would leave a closed axis at a
/// node outside the margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryRule {
    /// Return `StencilOutOfDomain`.
    Strict,
    /// Silently switch to a one-sided stencil.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdConfig {
    /// Accuracy order: 2, 4 or 6.
    pub order: usize,
    pub boundary: BoundaryRule,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { order: 2, boundary: BoundaryRule::Strict }
    }
}

impl FdConfig {
    pub fn order(order: usize) -> Self {
        FdConfig { order, ..Default::default() }
    }

    fn half_width(&self) -> usize {
        self.order / 2
    }
}

/// Fornberg's recursion: weights `c[d][j]` approximating the `d`-th derivative
/// at `z` from samples at `x[j]`, for `d = 0..=m`.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Integer-offset stencil (offset, weight) with weights in units of `h^-m`.
type Stencil = Vec<(isize, f64)>;

fn build_stencil(offsets: std::ops::RangeInclusive<isize>, at: isize, m: usize) -> Stencil {
    let pts: Vec<isize> = offsets.collect();
    let xs: Vec<f64> = pts.iter().map(|&p| p as f64).collect();
    let w = fornberg_weights(at as f64, &xs, m);
    pts.iter()
        .zip(&w[m])
        .filter(|(&p, _)| p != at)
        .map(|(&p, &wk)| (p - at, wk))
        .collect()
}

/// Stencils for one axis: either a single periodic stencil or one per node index.
#[derive(Debug, Clone)]
struct AxisStencils {
    periodic: Option<Stencil>,
    per_index: Vec<Stencil>,
}

impl AxisStencils {
    fn new(nodes: usize, periodic: bool, order: usize, m: usize) -> Self {
        let w = (order / 2) as isize;
        if periodic {
            return AxisStencils { periodic: Some(build_stencil(-w..=w, 0, m)), per_index: Vec::new() };
        }
        let n = nodes as isize;
        let per_index = (0..n)
            .map(|i| {
                if i - w >= 0 && i + w < n {
                    build_stencil(i - w..=i + w, i, m)
                } else {
                    let size = (order + m) as isize;
                    let start = (i - w).clamp(0, n - size);
                    build_stencil(start..=start + size - 1, i, m)
                }
            })
            .collect();
        AxisStencils { periodic: None, per_index }
    }

    fn get(&self, i: usize) -> &Stencil {
        match &self.periodic {
            Some(s) => s,
            None => &self.per_index[i],
        }
    }
}

/// Derivative engine bound to a grid and a stencil configuration.
#[derive(Debug, Clone)]
pub struct Differ<'g> {
    grid: &'g ChartGrid,
    cfg: FdConfig,
    first: Vec<AxisStencils>,
    second: Vec<AxisStencils>,
}

impl<'g> Differ<'g> {
    pub fn new(grid: &'g ChartGrid, cfg: FdConfig) -> Result<Self> {
        if !matches!(cfg.order, 2 | 4 | 6) {
            return Err(GeomError::InvalidParameters(format!("stencil order {} (expected 2, 4 or 6)", cfg.order)));
        }
        let mk = |m| {
            grid.axes().iter().map(|ax| AxisStencils::new(ax.nodes, ax.periodic, cfg.order, m)).collect()
        };
        Ok(Differ { grid, cfg, first: mk(1), second: mk(2) })
    }

    pub fn grid(&self) -> &ChartGrid {
        self.grid
    }

    pub fn config(&self) -> FdConfig {
        self.cfg
    }

    /// Checks that centered stencils of half-width `w` fit at every
    /// non-margin node of axis `a`.
    pub fn check_axis(&self, a: usize, w: usize) -> Result<()> {
        let ax = self.grid.axis(a);
        if self.cfg.boundary == BoundaryRule::OneSided || ax.periodic {
            return Ok(());
        }
        let m = ax.margin_nodes();
        if m < w {
            let mut idx = vec![0; self.grid.dim()];
            for (b, other) in self.grid.axes().iter().enumerate() {
                idx[b] = other.margin_nodes();
            }
            idx[a] = m;
            return Err(GeomError::StencilOutOfDomain { node: self.grid.flat_index(&idx), axis: a });
        }
        Ok(())
    }

    fn apply(
        &self,
        stencils: &AxisStencils,
        scale: f64,
        f: &[f64],
        ncomp: usize,
        a: usize,
        periods: Option<&[Option<f64>]>,
    ) -> Vec<f64> {
        let g = self.grid;
        let mut out = vec![0.0; f.len()];
        let stride = g.stride(a);
        let nodes = g.axis(a).nodes as isize;
        for node in 0..g.node_count() {
            let i = g.axis_index(node, a);
            let st = stencils.get(i);
            for c in 0..ncomp {
                let fc = f[node * ncomp + c];
                let period = periods.and_then(|p| p[c]);
                let mut acc = 0.0;
                for &(off, w) in st {
                    let j = if stencils.periodic.is_some() {
                        (i as isize + off).rem_euclid(nodes)
                    } else {
                        i as isize + off
                    };
                    let s = (node as isize + (j - i as isize) * stride as isize) as usize;
                    let mut d = f[s * ncomp + c] - fc;
                    if let Some(p) = period {
                        d -= p * (d / p).round();
                    }
                    acc += w * d;
                }
                out[node * ncomp + c] = acc * scale;
            }
        }
        out
    }

    /// First derivative along axis `a` of an `ncomp`-component nodal field.
    pub fn d1(&self, f: &[f64], ncomp: usize, a: usize) -> Result<Vec<f64>> {
        self.check_axis(a, self.cfg.half_width())?;
        let h = self.grid.spacing(a);
        Ok(self.apply(&self.first[a], 1.0 / h, f, ncomp, a, None))
    }

    /// First derivative where component `c` lives on a circle of period
    /// `periods[c]`; differences are unwrapped to the nearest representative.
    pub fn d1_wrapped(&self, f: &[f64], ncomp: usize, a: usize, periods: &[Option<f64>]) -> Result<Vec<f64>> {
        self.check_axis(a, self.cfg.half_width())?;
        let h = self.grid.spacing(a);
        Ok(self.apply(&self.first[a], 1.0 / h, f, ncomp, a, Some(periods)))
    }

    /// Pure second derivative along axis `a`.
    pub fn d2(&self, f: &[f64], ncomp: usize, a: usize) -> Result<Vec<f64>> {
        self.check_axis(a, self.cfg.half_width())?;
        let h = self.grid.spacing(a);
        Ok(self.apply(&self.second[a], 1.0 / (h * h), f, ncomp, a, None))
    }

    pub fn d2_wrapped(&self, f: &[f64], ncomp: usize, a: usize, periods: &[Option<f64>]) -> Result<Vec<f64>> {
        self.check_axis(a, self.cfg.half_width())?;
        let h = self.grid.spacing(a);
        Ok(self.apply(&self.second[a], 1.0 / (h * h), f, ncomp, a, Some(periods)))
    }

    /// Second partial `d_a d_b f`; pure stencil when `a == b`, composed
    /// first derivatives otherwise.
    pub fn d_ab(&self, f: &[f64], ncomp: usize, a: usize, b: usize) -> Result<Vec<f64>> {
        if a == b {
            self.d2(f, ncomp, a)
        } else {
            let fb = self.d1(f, ncomp, b)?;
            self.d1(&fb, ncomp, a)
        }
    }

    /// Matrix transpose of `d1` along axis `a` (no unwrapping).
    pub fn d1_transpose(&self, u: &[f64], ncomp: usize, a: usize) -> Result<Vec<f64>> {
        self.check_axis(a, self.cfg.half_width())?;
        let g = self.grid;
        let scale = 1.0 / g.spacing(a);
        let stencils = &self.first[a];
        let stride = g.stride(a);
        let nodes = g.axis(a).nodes as isize;
        let mut out = vec![0.0; u.len()];
        for node in 0..g.node_count() {
            let i = g.axis_index(node, a);
            for &(off, w) in stencils.get(i) {
                let j = if stencils.periodic.is_some() {
                    (i as isize + off).rem_euclid(nodes)
                } else {
                    i as isize + off
                };
                let s = (node as isize + (j - i as isize) * stride as isize) as usize;
                for c in 0..ncomp {
                    let v = w * scale * u[node * ncomp + c];
                    out[s * ncomp + c] += v;
                    out[node * ncomp + c] -= v;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use std::f64::consts::PI;

    #[test]
    fn fornberg_reproduces_textbook_weights() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let expect1 = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        let expect2 = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
        for j in 0..5 {
            assert!((w[1][j] - expect1[j]).abs() < 1e-14);
            assert!((w[2][j] - expect2[j]).abs() < 1e-14);
        }
        let w = fornberg_weights(0.0, &[0.0, 1.0, 2.0], 1);
        assert!((w[1][0] + 1.5).abs() < 1e-14 && (w[1][1] - 2.0).abs() < 1e-14 && (w[1][2] + 0.5).abs() < 1e-14);
    }

    fn max_err(order: usize, n: usize) -> (f64, f64) {
        let g = ChartGrid::new(vec![Axis::closed(0.0, 1.0, n + 1, 0.0)]).unwrap();
        let d = Differ::new(&g, FdConfig { order, boundary: BoundaryRule::OneSided }).unwrap();
        let f: Vec<f64> = (0..g.node_count()).map(|k| (3.0 * g.coord(k)[0]).sin()).collect();
        let df = d.d1(&f, 1, 0).unwrap();
        let ddf = d.d2(&f, 1, 0).unwrap();
        let mut e1: f64 = 0.0;
        let mut e2: f64 = 0.0;
        for k in 0..g.node_count() {
            let x = g.coord(k)[0];
            e1 = e1.max((df[k] - 3.0 * (3.0 * x).cos()).abs());
            e2 = e2.max((ddf[k] + 9.0 * (3.0 * x).sin()).abs());
        }
        (e1, e2)
    }

    #[test]
    fn one_sided_closures_keep_the_order() {
        for order in [2usize, 4] {
            let (a1, a2) = max_err(order, 32);
            let (b1, b2) = max_err(order, 64);
            let p1 = (a1 / b1).log2();
            let p2 = (a2 / b2).log2();
            assert!(p1 > order as f64 - 0.3, "order {order}: d1 slope {p1}");
            assert!(p2 > order as f64 - 0.3, "order {order}: d2 slope {p2}");
        }
    }

    #[test]
    fn constants_differentiate_to_exact_zero() {
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 1.0, 16), Axis::closed(0.0, 1.0, 17, 0.0)]).unwrap();
        let d = Differ::new(&g, FdConfig { order: 4, boundary: BoundaryRule::OneSided }).unwrap();
        let f = vec![0.7310585786300049; g.node_count()];
        for a in 0..2 {
            assert!(d.d1(&f, 1, a).unwrap().iter().all(|&v| v == 0.0));
            assert!(d.d2(&f, 1, a).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn strict_rule_rejects_stencils_crossing_the_margin() {
        let g = ChartGrid::new(vec![Axis::closed(0.0, 1.0, 33, 0.0)]).unwrap();
        let d = Differ::new(&g, FdConfig::order(2)).unwrap();
        let f = vec![0.0; 33];
        assert!(matches!(d.d1(&f, 1, 0), Err(GeomError::StencilOutOfDomain { axis: 0, .. })));
        let g = ChartGrid::new(vec![Axis::closed(0.0, 1.0, 33, 1.0 / 32.0)]).unwrap();
        let d = Differ::new(&g, FdConfig::order(2)).unwrap();
        assert!(d.d1(&f, 1, 0).is_ok());
        let d4 = Differ::new(&g, FdConfig::order(4)).unwrap();
        assert!(d4.d1(&f, 1, 0).is_err());
    }

    #[test]
    fn wrapped_difference_unwinds_the_seam() {
        let n = 32;
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, n)]).unwrap();
        let d = Differ::new(&g, FdConfig::order(4)).unwrap();
        // f(x) = 2x taken modulo 2*pi
        let f: Vec<f64> = (0..n).map(|k| (2.0 * g.coord(k)[0]).rem_euclid(2.0 * PI)).collect();
        let df = d.d1_wrapped(&f, 1, 0, &[Some(2.0 * PI)]).unwrap();
        assert!(df.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn transpose_matches_adjoint_pairing() {
        let g = ChartGrid::new(vec![Axis::closed(0.0, 1.0, 12, 0.0), Axis::periodic(0.0, 1.0, 10)]).unwrap();
        let d = Differ::new(&g, FdConfig { order: 4, boundary: BoundaryRule::OneSided }).unwrap();
        let n = g.node_count();
        let u: Vec<f64> = (0..2 * n).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let v: Vec<f64> = (0..2 * n).map(|k| ((k * 13 % 7) as f64 - 3.0) * 0.3).collect();
        for a in 0..2 {
            let du = d.d1(&u, 2, a).unwrap();
            let dtv = d.d1_transpose(&v, 2, a).unwrap();
            let lhs: f64 = du.iter().zip(&v).map(|(x, y)| x * y).sum();
            let rhs: f64 = u.iter().zip(&dtv).map(|(x, y)| x * y).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }
}
