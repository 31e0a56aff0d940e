//! Metric models with closed-form derivative evaluators, and metrics
//! sampled on chart grids.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{GeomError, Result};
use crate::grid::ChartGrid;

/// Metric components and their first and second coordinate derivatives at a point.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub g: DMatrix<f64>,
    /// `dg[a]` holds `d_a g_ij`.
    pub dg: Vec<DMatrix<f64>>,
    /// `ddg[a * n + b]` holds `d_a d_b g_ij`.
    pub ddg: Vec<DMatrix<f64>>,
}

impl MetricJet {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn constant(g: DMatrix<f64>) -> Self {
        let n = g.nrows();
        MetricJet { dg: vec![DMatrix::zeros(n, n); n], ddg: vec![DMatrix::zeros(n, n); n * n], g }
    }
}

/// A Riemannian metric on a coordinate chart, evaluable anywhere in the chart.
pub trait MetricModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Closed-form metric jet at `x`.
    fn jet(&self, x: &[f64]) -> MetricJet;

    fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        self.jet(x).g
    }

    /// Period of each coordinate, `None` for non-periodic coordinates.
    fn periods(&self) -> Vec<Option<f64>>;

    /// Sectional curvature when the model is a space form.
    fn constant_curvature(&self) -> Option<f64> {
        None
    }

    fn label(&self) -> String;
}

/// Metric jet of `model` by central differences of `metric` with step `step`
/// (sixth-order stencils). Independent of the closed-form `jet`.
pub fn jet_by_differences(model: &dyn MetricModel, x: &[f64], step: f64) -> MetricJet {
    const W1: [(f64, f64); 3] = [(1.0, 45.0 / 60.0), (2.0, -9.0 / 60.0), (3.0, 1.0 / 60.0)];
    const W2: [(f64, f64); 4] = [(0.0, -49.0 / 18.0), (1.0, 3.0 / 2.0), (2.0, -3.0 / 20.0), (3.0, 1.0 / 90.0)];
    let n = model.dim();
    let at = |shift: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(a, d) in shift {
            y[a] += d;
        }
        model.metric(&y)
    };
    let g = model.metric(x);
    let d1 = |a: usize| {
        let mut acc = DMatrix::zeros(n, n);
        for &(k, w) in &W1 {
            acc += (at(&[(a, k * step)]) - at(&[(a, -k * step)])) * w;
        }
        acc / step
    };
    let dg: Vec<DMatrix<f64>> = (0..n).map(d1).collect();
    let mut ddg = vec![DMatrix::zeros(n, n); n * n];
    for a in 0..n {
        for b in 0..n {
            let v = if a == b {
                let mut acc = &g * W2[0].1;
                for &(k, w) in &W2[1..] {
                    acc += (at(&[(a, k * step)]) + at(&[(a, -k * step)])) * w;
                }
                acc / (step * step)
            } else {
                let mut acc = DMatrix::zeros(n, n);
                for &(k, wk) in &W1 {
                    for &(l, wl) in &W1 {
                        let (ks, ls) = (k * step, l * step);
                        let m = at(&[(a, ks), (b, ls)]) - at(&[(a, ks), (b, -ls)]) - at(&[(a, -ks), (b, ls)])
                            + at(&[(a, -ks), (b, -ls)]);
                        acc += m * (wk * wl);
                    }
                }
                acc / (step * step)
            };
            ddg[a * n + b] = v;
        }
    }
    MetricJet { g, dg, ddg }
}

/// Constant metric on a chart, e.g. a flat torus or a scaled circle.
#[derive(Debug, Clone)]
pub struct ConstantMetric {
    pub g: DMatrix<f64>,
    pub periods: Vec<Option<f64>>,
}

impl ConstantMetric {
    /// Euclidean metric on the flat torus with the given side lengths.
    pub fn flat_torus(sides: &[f64]) -> Self {
        let n = sides.len();
        ConstantMetric { g: DMatrix::identity(n, n), periods: sides.iter().map(|&s| Some(s)).collect() }
    }

    /// Euclidean metric on `R^n` (no periodic coordinates).
    pub fn euclidean(n: usize) -> Self {
        ConstantMetric { g: DMatrix::identity(n, n), periods: vec![None; n] }
    }
}

impl MetricModel for ConstantMetric {
    fn dim(&self) -> usize {
        self.g.nrows()
    }

    fn jet(&self, _x: &[f64]) -> MetricJet {
        MetricJet::constant(self.g.clone())
    }

    fn periods(&self) -> Vec<Option<f64>> {
        self.periods.clone()
    }

    fn constant_curvature(&self) -> Option<f64> {
        Some(0.0)
    }

    fn label(&self) -> String {
        format!("constant metric, dim {}", self.dim())
    }
}

/// Round sphere of radius `r` in hyperspherical coordinates
/// `(chi_1, ..., chi_n)`, with `g = r^2 (dchi_1^2 + sin^2 chi_1 dchi_2^2 + ...)`.
/// The last coordinate has period `2 pi`.
#[derive(Debug, Clone, Copy)]
pub struct RoundSphere {
    pub n: usize,
    pub r: f64,
}

impl MetricModel for RoundSphere {
    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, x: &[f64]) -> MetricJet {
        let n = self.n;
        let r2 = self.r * self.r;
        let s: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let cot: Vec<f64> = x.iter().map(|v| v.cos() / v.sin()).collect();
        let mut g = DMatrix::zeros(n, n);
        let mut dg = vec![DMatrix::zeros(n, n); n];
        let mut ddg = vec![DMatrix::zeros(n, n); n * n];
        for k in 0..n {
            let gk = r2 * (0..k).map(|j| s[j] * s[j]).product::<f64>();
            g[(k, k)] = gk;
            for a in 0..k {
                // d_a sin^2 = 2 sin cos; written without dividing by sin
                let others: f64 = (0..k).filter(|&j| j != a).map(|j| s[j] * s[j]).product();
                dg[a][(k, k)] = r2 * others * (2.0 * x[a]).sin();
                for b in 0..k {
                    let v = if a == b {
                        r2 * others * 2.0 * (2.0 * x[a]).cos()
                    } else {
                        let rest: f64 = (0..k).filter(|&j| j != a && j != b).map(|j| s[j] * s[j]).product();
                        r2 * rest * (2.0 * x[a]).sin() * (2.0 * x[b]).sin()
                    };
                    ddg[a * n + b][(k, k)] = v;
                }
            }
        }
        let _ = cot;
        MetricJet { g, dg, ddg }
    }

    fn periods(&self) -> Vec<Option<f64>> {
        let mut p = vec![None; self.n];
        p[self.n - 1] = Some(2.0 * std::f64::consts::PI);
        p
    }

    fn constant_curvature(&self) -> Option<f64> {
        Some(1.0 / (self.r * self.r))
    }

    fn label(&self) -> String {
        format!("round S^{}({})", self.n, self.r)
    }
}

/// Riemannian product of two metric models (block-diagonal metric).
#[derive(Debug, Clone)]
pub struct ProductMetric {
    pub first: Arc<dyn MetricModel>,
    pub second: Arc<dyn MetricModel>,
}

impl MetricModel for ProductMetric {
    fn dim(&self) -> usize {
        self.first.dim() + self.second.dim()
    }

    fn jet(&self, x: &[f64]) -> MetricJet {
        let (p, q) = (self.first.dim(), self.second.dim());
        let n = p + q;
        let ja = self.first.jet(&x[..p]);
        let jb = self.second.jet(&x[p..]);
        let mut g = DMatrix::zeros(n, n);
        g.view_mut((0, 0), (p, p)).copy_from(&ja.g);
        g.view_mut((p, p), (q, q)).copy_from(&jb.g);
        let mut dg = vec![DMatrix::zeros(n, n); n];
        for a in 0..p {
            dg[a].view_mut((0, 0), (p, p)).copy_from(&ja.dg[a]);
        }
        for a in 0..q {
            dg[p + a].view_mut((p, p), (q, q)).copy_from(&jb.dg[a]);
        }
        let mut ddg = vec![DMatrix::zeros(n, n); n * n];
        for a in 0..p {
            for b in 0..p {
                ddg[a * n + b].view_mut((0, 0), (p, p)).copy_from(&ja.ddg[a * p + b]);
            }
        }
        for a in 0..q {
            for b in 0..q {
                ddg[(p + a) * n + p + b].view_mut((p, p), (q, q)).copy_from(&jb.ddg[a * q + b]);
            }
        }
        MetricJet { g, dg, ddg }
    }

    fn periods(&self) -> Vec<Option<f64>> {
        let mut p = self.first.periods();
        p.extend(self.second.periods());
        p
    }

    fn label(&self) -> String {
        format!("{} x {}", self.first.label(), self.second.label())
    }
}

/// Metric components sampled on every node of a chart grid.
#[derive(Debug, Clone)]
pub struct MetricField {
    grid: ChartGrid,
    dim: usize,
    components: Vec<f64>,
    inverse: Vec<f64>,
    volume_density: Vec<f64>,
    model: Option<Arc<dyn MetricModel>>,
}

impl MetricField {
    /// Samples a metric model at the grid nodes.
    pub fn sample(grid: &ChartGrid, model: Arc<dyn MetricModel>) -> Result<Self> {
        let n = grid.dim();
        if model.dim() != n {
            return Err(GeomError::ShapeMismatch(format!("metric dim {} on {n}-dim grid", model.dim())));
        }
        let mut comps = Vec::with_capacity(grid.node_count() * n * n);
        for k in 0..grid.node_count() {
            let g = model.metric(&grid.coord(k));
            comps.extend(g.iter());
        }
        let mut field = Self::from_components(grid, comps)?;
        field.model = Some(model);
        Ok(field)
    }

    /// Builds a metric from per-node `n x n` component blocks.
    pub fn from_components(grid: &ChartGrid, components: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        let nn = n * n;
        if components.len() != grid.node_count() * nn {
            return Err(GeomError::ShapeMismatch("metric component count".into()));
        }
        let mut inverse = vec![0.0; components.len()];
        let mut vol = vec![0.0; grid.node_count()];
        let mut comps = components;
        for k in 0..grid.node_count() {
            let block = &mut comps[k * nn..(k + 1) * nn];
            // symmetrize exactly
            for i in 0..n {
                for j in i + 1..n {
                    let m = 0.5 * (block[i * n + j] + block[j * n + i]);
                    block[i * n + j] = m;
                    block[j * n + i] = m;
                }
            }
            let g = DMatrix::from_column_slice(n, n, block);
            let chol = g.clone().cholesky().ok_or(GeomError::DegenerateMetric(k))?;
            let det: f64 = chol.l_dirty().diagonal().iter().map(|d| d * d).product();
            if !(det > 0.0) || !det.is_finite() {
                return Err(GeomError::DegenerateMetric(k));
            }
            let mut ginv = chol.inverse();
            ginv = (&ginv + ginv.transpose()) * 0.5;
            let resid = (&g * &ginv - DMatrix::identity(n, n)).abs().max();
            let cond = g.abs().column_sum().max() * ginv.abs().column_sum().max();
            if resid > 1e-12 * cond.max(1.0) {
                return Err(GeomError::DegenerateMetric(k));
            }
            inverse[k * nn..(k + 1) * nn].copy_from_slice(ginv.as_slice());
            vol[k] = det.sqrt();
        }
        Ok(MetricField {
            grid: grid.clone(),
            dim: n,
            components: comps,
            inverse,
            volume_density: vol,
            model: None,
        })
    }

    pub fn grid(&self) -> &ChartGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> Option<&Arc<dyn MetricModel>> {
        self.model.as_ref()
    }

    pub fn g(&self, node: usize, i: usize, j: usize) -> f64 {
        self.components[node * self.dim * self.dim + i * self.dim + j]
    }

    pub fn ginv(&self, node: usize, i: usize, j: usize) -> f64 {
        self.inverse[node * self.dim * self.dim + i * self.dim + j]
    }

    pub fn metric_at(&self, node: usize) -> DMatrix<f64> {
        let nn = self.dim * self.dim;
        DMatrix::from_column_slice(self.dim, self.dim, &self.components[node * nn..(node + 1) * nn])
    }

    pub fn inverse_at(&self, node: usize) -> DMatrix<f64> {
        let nn = self.dim * self.dim;
        DMatrix::from_column_slice(self.dim, self.dim, &self.inverse[node * nn..(node + 1) * nn])
    }

    pub fn volume_density(&self, node: usize) -> f64 {
        self.volume_density[node]
    }

    /// Raw per-node `n x n` component blocks.
    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn inverse_components(&self) -> &[f64] {
        &self.inverse
    }
}
