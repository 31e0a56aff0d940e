//! Christoffel symbols, Riemann and Ricci tensors, sectional curvature and
//! pointwise curvature extremes.
//!
//! Conventions: `R(X,Y) = [D_X, D_Y] - D_[X,Y]`, `R_ijkl = g(R(d_i, d_j) d_k, d_l)`,
//! `Ric_ij = g^kl R_kijl`, `sec(X,Y) = R(X,Y,Y,X) / |X ^ Y|^2`. The unit sphere
//! has `R_ijkl = g_jk g_il - g_ik g_jl`, `Ric = (n-1) g` and `sec = 1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::grid::ChartGrid;
use crate::metric::{MetricField, MetricJet, MetricModel};
use crate::stencil::{Differ, FdConfig};

/// Curvature data at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCurvature {
    pub n: usize,
    /// `Gamma^k_ij` at `k*n*n + i*n + j`.
    pub christoffel: Vec<f64>,
    /// `R_ijkl` at `((i*n + j)*n + k)*n + l`.
    pub riemann: Vec<f64>,
    pub ricci: Vec<f64>,
    pub scalar: f64,
}

impl PointCurvature {
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> f64 {
        self.christoffel[(k * self.n + i) * self.n + j]
    }

    pub fn riem(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.riemann[((i * n + j) * n + k) * n + l]
    }

    pub fn ric(&self, i: usize, j: usize) -> f64 {
        self.ricci[i * self.n + j]
    }

    pub fn ricci_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.ricci)
    }

    /// `R(X, Y, Z, W)` for coordinate vectors.
    pub fn riem_vectors(&self, x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                if y[j] == 0.0 {
                    continue;
                }
                for k in 0..n {
                    if z[k] == 0.0 {
                        continue;
                    }
                    for l in 0..n {
                        acc += x[i] * y[j] * z[k] * w[l] * self.riem(i, j, k, l);
                    }
                }
            }
        }
        acc
    }

    /// Sectional curvature of the plane spanned by `x` and `y` under metric `g`.
    pub fn sectional(&self, g: &DMatrix<f64>, x: &[f64], y: &[f64]) -> Result<f64> {
        let xv = DVector::from_column_slice(x);
        let yv = DVector::from_column_slice(y);
        let xx = xv.dot(&(g * &xv));
        let yy = yv.dot(&(g * &yv));
        let xy = xv.dot(&(g * &yv));
        let area = xx * yy - xy * xy;
        if !(area > 1e-14 * xx * yy) || !area.is_finite() {
            return Err(GeomError::DegeneratePlane);
        }
        Ok(self.riem_vectors(x, y, y, x) / area)
    }
}

/// Levi-Civita connection and curvature from a metric jet.
pub fn curvature_from_jet(jet: &MetricJet) -> Result<PointCurvature> {
    let n = jet.dim();
    let ginv = jet.g.clone().cholesky().ok_or(GeomError::DegenerateMetric(0))?.inverse();
    let dg = |a: usize, i: usize, j: usize| jet.dg[a][(i, j)];
    let ddg = |a: usize, b: usize, i: usize, j: usize| 0.5 * (jet.ddg[a * n + b][(i, j)] + jet.ddg[b * n + a][(i, j)]);
    // first kind: G1[k][i][j] = 1/2 (d_i g_jk + d_j g_ik - d_k g_ij)
    let mut g1 = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                g1[(k * n + i) * n + j] = 0.5 * (dg(i, j, k) + dg(j, i, k) - dg(k, i, j));
            }
        }
    }
    let mut gamma = vec![0.0; n * n * n];
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                gamma[(m * n + i) * n + j] = (0..n).map(|k| ginv[(m, k)] * g1[(k * n + i) * n + j]).sum();
            }
        }
    }
    // d_a Gamma_{k i j} (first kind)
    let dg1 = |a: usize, k: usize, i: usize, j: usize| 0.5 * (ddg(a, i, j, k) + ddg(a, j, i, k) - ddg(a, k, i, j));
    let mut riemann = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut v = dg1(i, l, j, k) - dg1(j, l, i, k);
                    for s in 0..n {
                        v -= g1[(s * n + i) * n + l] * gamma[(s * n + j) * n + k];
                        v += g1[(s * n + j) * n + l] * gamma[(s * n + i) * n + k];
                    }
                    riemann[((i * n + j) * n + k) * n + l] = v;
                }
            }
        }
    }
    let mut ricci = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for k in 0..n {
                for l in 0..n {
                    v += ginv[(k, l)] * riemann[((k * n + i) * n + j) * n + l];
                }
            }
            ricci[i * n + j] = v;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (ricci[i * n + j] + ricci[j * n + i]);
            ricci[i * n + j] = m;
            ricci[j * n + i] = m;
        }
    }
    let scalar = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| ginv[(i, j)] * ricci[i * n + j]).sum();
    Ok(PointCurvature { n, christoffel: gamma, riemann, ricci, scalar })
}

/// Curvature of a metric model at an arbitrary chart point.
pub fn model_curvature(model: &dyn MetricModel, x: &[f64]) -> Result<PointCurvature> {
    curvature_from_jet(&model.jet(x))
}

/// How metric derivatives are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureMode {
    /// Closed-form jet of the metric's model.
    Analytic,
    /// Central differences of the sampled components.
    FiniteDifference(FdConfig),
}

/// Christoffel, Riemann, Ricci and scalar curvature at every grid node.
#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    grid: ChartGrid,
    n: usize,
    christoffel: Vec<f64>,
    riemann: Vec<f64>,
    ricci: Vec<f64>,
    scalar: Vec<f64>,
    mode: CurvatureMode,
}

/// Computes the Levi-Civita connection and curvature of a sampled metric.
pub fn build_levi_civita(metric: &MetricField, mode: CurvatureMode) -> Result<CurvatureBundle> {
    let grid = metric.grid();
    let n = metric.dim();
    let nn = n * n;
    let points: Vec<PointCurvature> = match mode {
        CurvatureMode::Analytic => {
            let model = metric
                .model()
                .ok_or_else(|| GeomError::InvalidParameters("analytic curvature needs a metric model".into()))?
                .clone();
            (0..grid.node_count())
                .into_par_iter()
                .map(|k| curvature_from_jet(&model.jet(&grid.coord(k))).map_err(|_| GeomError::DegenerateMetric(k)))
                .collect::<Result<_>>()?
        }
        CurvatureMode::FiniteDifference(cfg) => {
            let d = Differ::new(grid, cfg)?;
            let comps = metric.components();
            let first: Vec<Vec<f64>> = (0..n).map(|a| d.d1(comps, nn, a)).collect::<Result<_>>()?;
            let mut second: Vec<Vec<f64>> = vec![Vec::new(); n * n];
            for a in 0..n {
                for b in a..n {
                    let v = if a == b { d.d2(comps, nn, a)? } else { d.d1(&first[b], nn, a)? };
                    if a != b {
                        let w = d.d1(&first[a], nn, b)?;
                        let avg: Vec<f64> = v.iter().zip(&w).map(|(x, y)| 0.5 * (x + y)).collect();
                        second[b * n + a] = avg.clone();
                        second[a * n + b] = avg;
                    } else {
                        second[a * n + a] = v;
                    }
                }
            }
            (0..grid.node_count())
                .into_par_iter()
                .map(|k| {
                    let block = |src: &[f64]| DMatrix::from_column_slice(n, n, &src[k * nn..(k + 1) * nn]);
                    let jet = MetricJet {
                        g: metric.metric_at(k),
                        dg: first.iter().map(|f| block(f)).collect(),
                        ddg: second.iter().map(|f| block(f)).collect(),
                    };
                    curvature_from_jet(&jet).map_err(|_| GeomError::DegenerateMetric(k))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut b = CurvatureBundle {
        grid: grid.clone(),
        n,
        christoffel: Vec::with_capacity(points.len() * n * nn),
        riemann: Vec::with_capacity(points.len() * nn * nn),
        ricci: Vec::with_capacity(points.len() * nn),
        scalar: Vec::with_capacity(points.len()),
        mode,
    };
    for p in points {
        b.christoffel.extend(p.christoffel);
        b.riemann.extend(p.riemann);
        b.ricci.extend(p.ricci);
        b.scalar.push(p.scalar);
    }
    Ok(b)
}

impl CurvatureBundle {
    pub fn grid(&self) -> &ChartGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> CurvatureMode {
        self.mode
    }

    pub fn gamma(&self, node: usize, k: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.christoffel[node * n * n * n + (k * n + i) * n + j]
    }

    pub fn riem(&self, node: usize, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.riemann[node * n * n * n * n + ((i * n + j) * n + k) * n + l]
    }

    pub fn ric(&self, node: usize, i: usize, j: usize) -> f64 {
        self.ricci[node * self.n * self.n + i * self.n + j]
    }

    pub fn scalar(&self, node: usize) -> f64 {
        self.scalar[node]
    }

    pub fn christoffel_slice(&self, node: usize) -> &[f64] {
        let c = self.n * self.n * self.n;
        &self.christoffel[node * c..(node + 1) * c]
    }

    pub fn point(&self, node: usize) -> PointCurvature {
        let n = self.n;
        let (c3, c4, c2) = (n * n * n, n * n * n * n, n * n);
        PointCurvature {
            n,
            christoffel: self.christoffel[node * c3..(node + 1) * c3].to_vec(),
            riemann: self.riemann[node * c4..(node + 1) * c4].to_vec(),
            ricci: self.ricci[node * c2..(node + 1) * c2].to_vec(),
            scalar: self.scalar[node],
        }
    }
}

/// Sectional curvature at a grid node for the plane spanned by `x` and `y`.
pub fn sectional_curvature(
    curv: &CurvatureBundle,
    metric: &MetricField,
    node: usize,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    check_node(curv, node)?;
    curv.point(node).sectional(&metric.metric_at(node), x, y)
}

fn check_node(curv: &CurvatureBundle, node: usize) -> Result<()> {
    if node >= curv.grid.node_count() {
        return Err(GeomError::ShapeMismatch(format!("node {node} out of range")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremeKind {
    RicMin,
    RicMax,
    SecMin,
}

/// Sampling budget for the sectional-curvature minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremeConfig {
    pub random_planes: usize,
    pub refine_steps: usize,
    pub seed: u64,
}

impl Default for ExtremeConfig {
    fn default() -> Self {
        ExtremeConfig { random_planes: 256, refine_steps: 20, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureExtreme {
    pub value: f64,
    /// True when the value is exact rather than a sampled bound: Ricci
    /// extremes always, `sec_min` only where the curvature is pointwise
    /// constant.
    pub certified: bool,
}

/// Generalized eigenvalues of the symmetric pair `(a, g)`, ascending.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (vals, _) = generalized_eigen(a, g)?;
    Ok(vals)
}

/// Generalized eigenpairs of `(a, g)`: ascending values and g-orthonormal
/// eigenvectors as columns.
pub fn generalized_eigen(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = g.clone().cholesky().ok_or(GeomError::DegenerateMetric(0))?;
    let linv = chol.l().try_inverse().ok_or(GeomError::DegenerateMetric(0))?;
    let mut m = &linv * a * linv.transpose();
    m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs_y = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, linv.transpose() * vecs_y))
}

/// Relative deviation of `R` from the constant-curvature form
/// `K (g_jk g_il - g_ik g_jl)`, with `K` taken from the scalar curvature.
pub fn constant_curvature_defect(p: &PointCurvature, g: &DMatrix<f64>) -> (f64, f64) {
    let n = p.n;
    if n < 2 {
        return (0.0, 0.0);
    }
    let k = p.scalar / (n * (n - 1)) as f64;
    let mut dev: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let r = p.riem(i, j, a, b);
                    let model = k * (g[(j, a)] * g[(i, b)] - g[(i, a)] * g[(j, b)]);
                    dev = dev.max((r - model).abs());
                    scale = scale.max(r.abs());
                }
            }
        }
    }
    (k, if scale > 0.0 { dev / scale } else { 0.0 })
}

/// Ricci and sectional curvature extremes of a single point.
pub fn point_extreme(
    p: &PointCurvature,
    g: &DMatrix<f64>,
    kind: ExtremeKind,
    cfg: &ExtremeConfig,
    seed_offset: u64,
) -> Result<CurvatureExtreme> {
    let n = p.n;
    match kind {
        ExtremeKind::RicMin | ExtremeKind::RicMax => {
            let vals = generalized_eigenvalues(&p.ricci_matrix(), g)?;
            let value = if kind == ExtremeKind::RicMin { vals[0] } else { vals[n - 1] };
            Ok(CurvatureExtreme { value, certified: true })
        }
        ExtremeKind::SecMin => {
            if n < 2 {
                return Ok(CurvatureExtreme { value: 0.0, certified: true });
            }
            let (k, defect) = constant_curvature_defect(p, g);
            if defect < 1e-10 {
                return Ok(CurvatureExtreme { value: k, certified: true });
            }
            Ok(CurvatureExtreme { value: sampled_sec_min(p, g, cfg, seed_offset), certified: false })
        }
    }
}

fn sampled_sec_min(p: &PointCurvature, g: &DMatrix<f64>, cfg: &ExtremeConfig, seed_offset: u64) -> f64 {
    let n = p.n;
    let sec = |x: &[f64], y: &[f64]| p.sectional(g, x, y).ok();
    let mut best = f64::INFINITY;
    let mut best_plane: Option<(Vec<f64>, Vec<f64>)> = None;
    let consider = |x: Vec<f64>, y: Vec<f64>, best: &mut f64, plane: &mut Option<(Vec<f64>, Vec<f64>)>| {
        if let Some(s) = sec(&x, &y) {
            if s < *best {
                *best = s;
                *plane = Some((x, y));
            }
        }
    };
    let unit = |i: usize| {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    };
    for i in 0..n {
        for j in i + 1..n {
            consider(unit(i), unit(j), &mut best, &mut best_plane);
        }
    }
    if let Ok((_, vecs)) = generalized_eigen(&p.ricci_matrix(), g) {
        for i in 0..n {
            for j in i + 1..n {
                let x = vecs.column(i).iter().copied().collect();
                let y = vecs.column(j).iter().copied().collect();
                consider(x, y, &mut best, &mut best_plane);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ seed_offset.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    for _ in 0..cfg.random_planes {
        let x = gauss(&mut rng);
        let y = gauss(&mut rng);
        consider(x, y, &mut best, &mut best_plane);
    }
    if let Some((mut x, mut y)) = best_plane {
        let mut step = 0.25;
        for _ in 0..cfg.refine_steps {
            let mut improved = false;
            for which in 0..2 {
                for i in 0..n {
                    for sgn in [1.0, -1.0] {
                        let (mut x2, mut y2) = (x.clone(), y.clone());
                        let norm = if which == 0 { &mut x2 } else { &mut y2 };
                        let len = norm.iter().map(|v| v * v).sum::<f64>().sqrt();
                        norm[i] += sgn * step * len;
                        if let Some(s) = sec(&x2, &y2) {
                            if s < best {
                                best = s;
                                x = x2;
                                y = y2;
                                improved = true;
                            }
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
    }
    best
}

/// Extreme Ricci or sectional curvature at a grid node.
pub fn curvature_extremes(
    curv: &CurvatureBundle,
    metric: &MetricField,
    node: usize,
    kind: ExtremeKind,
    cfg: &ExtremeConfig,
) -> Result<CurvatureExtreme> {
    check_node(curv, node)?;
    point_extreme(&curv.point(node), &metric.metric_at(node), kind, cfg, node as u64)
}

/// Largest violations of the curvature symmetries at a point, relative to
/// the largest Riemann component (absolute when the tensor vanishes).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SymmetryResiduals {
    pub christoffel_symmetry: f64,
    pub antisymmetry_first: f64,
    pub antisymmetry_second: f64,
    pub pair_symmetry: f64,
    pub bianchi: f64,
    pub ricci_symmetry: f64,
}

impl SymmetryResiduals {
    pub fn max(&self) -> f64 {
        [
            self.christoffel_symmetry,
            self.antisymmetry_first,
            self.antisymmetry_second,
            self.pair_symmetry,
            self.bianchi,
            self.ricci_symmetry,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn merge(&mut self, o: &SymmetryResiduals) {
        self.christoffel_symmetry = self.christoffel_symmetry.max(o.christoffel_symmetry);
        self.antisymmetry_first = self.antisymmetry_first.max(o.antisymmetry_first);
        self.antisymmetry_second = self.antisymmetry_second.max(o.antisymmetry_second);
        self.pair_symmetry = self.pair_symmetry.max(o.pair_symmetry);
        self.bianchi = self.bianchi.max(o.bianchi);
        self.ricci_symmetry = self.ricci_symmetry.max(o.ricci_symmetry);
    }
}

pub fn point_symmetry_residuals(p: &PointCurvature) -> SymmetryResiduals {
    let n = p.n;
    let scale = p.riemann.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let gscale = p.christoffel.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut r = SymmetryResiduals::default();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                r.christoffel_symmetry = r.christoffel_symmetry.max((p.gamma(k, i, j) - p.gamma(k, j, i)).abs() / gscale);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            r.ricci_symmetry = r.ricci_symmetry.max((p.ric(i, j) - p.ric(j, i)).abs() / scale);
            for k in 0..n {
                for l in 0..n {
                    let v = p.riem(i, j, k, l);
                    r.antisymmetry_first = r.antisymmetry_first.max((v + p.riem(j, i, k, l)).abs() / scale);
                    r.antisymmetry_second = r.antisymmetry_second.max((v + p.riem(i, j, l, k)).abs() / scale);
                    r.pair_symmetry = r.pair_symmetry.max((v - p.riem(k, l, i, j)).abs() / scale);
                    let b = v + p.riem(i, k, l, j) + p.riem(i, l, j, k);
                    r.bianchi = r.bianchi.max(b.abs() / scale);
                }
            }
        }
    }
    r
}

/// Symmetry and first-Bianchi residuals, maximized over all nodes.
pub fn symmetry_suite(curv: &CurvatureBundle) -> SymmetryResiduals {
    let per: Vec<SymmetryResiduals> =
        (0..curv.grid.node_count()).into_par_iter().map(|k| point_symmetry_residuals(&curv.point(k))).collect();
    let mut out = SymmetryResiduals::default();
    for r in &per {
        out.merge(r);
    }
    out
}
