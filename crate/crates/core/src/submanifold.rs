//! Isometric immersions: induced metric, normal frame, second fundamental
//! form, mean curvature, the Simons identity, pinching, Codazzi and
//! divergence identities, and the Clifford constants.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    build_levi_civita, generalized_eigenvalues, model_curvature, CurvatureBundle, CurvatureMode, PointCurvature,
};
use crate::error::{GeomError, Result};
use crate::field::{Role, TensorField};
use crate::grid::ChartGrid;
use crate::metric::{MetricField, MetricModel};
use crate::operators::{divergence_sym2, gradient, LaplaceBeltrami};
use crate::quadrature::{integrate_values, Region};
use crate::sampled::{DerivativeSource, PointMap, SampledMap};
use crate::stencil::{Differ, FdConfig};

#[derive(Debug, Clone)]
struct AmbientPoint {
    g: DMatrix<f64>,
    curv: PointCurvature,
}

/// An immersion `F: M^n -> (N^(n+k), h)` sampled on the grid of `M`, with
/// the induced metric `F^* h`, a normal frame, and the ambient geometry at
/// the image points.
#[derive(Debug, Clone)]
pub struct Immersion {
    ambient: Arc<dyn MetricModel>,
    map: SampledMap,
    induced: MetricField,
    induced_curv: CurvatureBundle,
    codim: usize,
    ambient_curvature: Option<f64>,
    /// Per node `k` ambient vectors of `m = n + k` components.
    normals: Vec<f64>,
    points: Vec<AmbientPoint>,
    fd: FdConfig,
}

impl Immersion {
    pub fn new(
        grid: &ChartGrid,
        ambient: Arc<dyn MetricModel>,
        map: &dyn PointMap,
        source: DerivativeSource,
        fd: FdConfig,
    ) -> Result<Self> {
        let n = grid.dim();
        let m = ambient.dim();
        if map.source_dim() != n || map.target_dim() != m || m <= n {
            return Err(GeomError::ShapeMismatch(format!("immersion {} does not fit its charts", map.label())));
        }
        let sampled = SampledMap::sample(map, grid, source, &ambient.periods())?;
        let points: Vec<AmbientPoint> = (0..grid.node_count())
            .into_par_iter()
            .map(|k| {
                let y = sampled.value(k);
                Ok(AmbientPoint { g: ambient.metric(y), curv: model_curvature(ambient.as_ref(), y)? })
            })
            .collect::<Result<_>>()?;
        let mut comps = vec![0.0; grid.node_count() * n * n];
        let mut normals = vec![0.0; grid.node_count() * (m - n) * m];
        let per: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.node_count())
            .into_par_iter()
            .map(|k| {
                let t = tangent_matrix(&sampled, k, n, m);
                let h = &points[k].g;
                let gram = t.transpose() * h * &t;
                let sv = gram.clone().symmetric_eigen().eigenvalues.min();
                if !(sv.max(0.0).sqrt() > 1e-8) {
                    return Err(GeomError::DegenerateImmersion(k));
                }
                let frame = normal_frame(&t, h).ok_or(GeomError::DegenerateImmersion(k))?;
                Ok((gram.iter().copied().collect(), frame))
            })
            .collect::<Result<_>>()?;
        for (k, (g, f)) in per.into_iter().enumerate() {
            comps[k * n * n..(k + 1) * n * n].copy_from_slice(&g);
            normals[k * (m - n) * m..(k + 1) * (m - n) * m].copy_from_slice(&f);
        }
        let induced = MetricField::from_components(grid, comps)?;
        let induced_curv = build_levi_civita(&induced, CurvatureMode::FiniteDifference(fd))?;
        Ok(Immersion {
            ambient_curvature: ambient.constant_curvature(),
            ambient,
            map: sampled,
            induced,
            induced_curv,
            codim: m - n,
            normals,
            points,
            fd,
        })
    }

    pub fn grid(&self) -> &ChartGrid {
        self.induced.grid()
    }

    pub fn n(&self) -> usize {
        self.induced.dim()
    }

    pub fn m(&self) -> usize {
        self.ambient.dim()
    }

    pub fn codimension(&self) -> usize {
        self.codim
    }

    pub fn ambient(&self) -> &Arc<dyn MetricModel> {
        &self.ambient
    }

    pub fn ambient_constant_curvature(&self) -> Option<f64> {
        self.ambient_curvature
    }

    /// Overrides the ambient constant curvature (e.g. for charts whose
    /// model does not advertise one).
    pub fn with_constant_curvature(mut self, c: Option<f64>) -> Self {
        self.ambient_curvature = c;
        self
    }

    pub fn induced_metric(&self) -> &MetricField {
        &self.induced
    }

    pub fn induced_curvature(&self) -> &CurvatureBundle {
        &self.induced_curv
    }

    pub fn sampled(&self) -> &SampledMap {
        &self.map
    }

    pub fn fd(&self) -> FdConfig {
        self.fd
    }

    /// Normal vector `a` at a node, ambient components.
    pub fn normal(&self, node: usize, a: usize) -> &[f64] {
        let m = self.m();
        let base = node * self.codim * m + a * m;
        &self.normals[base..base + m]
    }

    pub fn ambient_metric(&self, node: usize) -> &DMatrix<f64> {
        &self.points[node].g
    }

    pub fn ambient_point_curvature(&self, node: usize) -> &PointCurvature {
        &self.points[node].curv
    }

    /// `Ric_h(N_a, N_a)` at a node.
    pub fn ambient_ricci_normal(&self, node: usize, a: usize) -> f64 {
        let m = self.m();
        let nv = self.normal(node, a);
        let c = &self.points[node].curv;
        let mut s = 0.0;
        for p in 0..m {
            for q in 0..m {
                s += c.ric(p, q) * nv[p] * nv[q];
            }
        }
        s
    }

    /// Largest `|h(N_a, N_b) - delta_ab|` and `|h(N_a, dF_i)|` over all nodes.
    pub fn frame_defect(&self) -> f64 {
        let (n, m, k) = (self.n(), self.m(), self.codim);
        let mut worst: f64 = 0.0;
        for node in 0..self.grid().node_count() {
            let h = &self.points[node].g;
            let t = tangent_matrix(&self.map, node, n, m);
            for a in 0..k {
                let na = DVector::from_column_slice(self.normal(node, a));
                for b in 0..k {
                    let nb = DVector::from_column_slice(self.normal(node, b));
                    let want = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((na.dot(&(h * &nb)) - want).abs());
                }
                for i in 0..n {
                    worst = worst.max((na.dot(&(h * t.column(i)))).abs());
                }
            }
        }
        worst
    }

    /// Largest jump `|N(x) - N(y)|` between neighbouring nodes (codimension one).
    pub fn normal_jump(&self) -> f64 {
        let grid = self.grid();
        let mut worst: f64 = 0.0;
        for node in 0..grid.node_count() {
            for a in 0..grid.dim() {
                if let Some(p) = grid.shift(node, a, 1) {
                    let d: f64 = self.normal(node, 0).iter().zip(self.normal(p, 0)).map(|(x, y)| (x - y).powi(2)).sum();
                    worst = worst.max(d.sqrt());
                }
            }
        }
        worst
    }
}

/// `m x n` matrix of tangent vectors `dF_i` (columns).
fn tangent_matrix(map: &SampledMap, k: usize, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |a, i| map.d1(k, i, a))
}

/// h-orthonormal normal vectors, flattened. Codimension one uses the
/// generalized cross product of the tangent vectors, which varies
/// smoothly and fixes the orientation; higher codimension uses
/// Gram-Schmidt on the ambient coordinate vectors.
fn normal_frame(t: &DMatrix<f64>, h: &DMatrix<f64>) -> Option<Vec<f64>> {
    let (m, n) = t.shape();
    let k = m - n;
    let hinv = h.clone().cholesky()?.inverse();
    if k == 1 {
        let mut nu = DVector::zeros(m);
        for b in 0..m {
            let mut mat = DMatrix::zeros(m, m);
            mat[(b, 0)] = 1.0;
            mat.view_mut((0, 1), (m, n)).copy_from(t);
            nu[b] = mat.determinant();
        }
        let v = &hinv * &nu;
        let len = v.dot(&(h * &v)).sqrt();
        if !(len > 0.0) {
            return None;
        }
        return Some((v / len).iter().copied().collect());
    }
    let mut basis: Vec<DVector<f64>> = (0..n).map(|i| t.column(i).into_owned()).collect();
    // orthonormalize the tangent space first
    for i in 0..n {
        for j in 0..i {
            let c = basis[i].dot(&(h * &basis[j]));
            let bj = basis[j].clone();
            basis[i] -= bj * c;
        }
        let len = basis[i].dot(&(h * &basis[i])).sqrt();
        basis[i] /= len;
    }
    let mut candidates: Vec<DVector<f64>> = (0..m)
        .map(|a| {
            let mut e = DVector::zeros(m);
            e[a] = 1.0;
            let mut v = &hinv * e;
            for b in &basis {
                v -= b * v.dot(&(h * b));
            }
            v
        })
        .collect();
    candidates.sort_by(|x, y| y.dot(&(h * y)).total_cmp(&x.dot(&(h * x))));
    let mut out = Vec::with_capacity(k * m);
    let mut normals: Vec<DVector<f64>> = Vec::new();
    for mut v in candidates {
        if normals.len() == k {
            break;
        }
        for b in &normals {
            v -= b * v.dot(&(h * b));
        }
        let len = v.dot(&(h * &v)).sqrt();
        if len > 1e-6 {
            normals.push(v / len);
        }
    }
    if normals.len() < k {
        return None;
    }
    for v in normals {
        out.extend(v.iter());
    }
    Some(out)
}

/// Second fundamental form and derived quantities at every node.
#[derive(Debug, Clone)]
pub struct SecondFundamentalData {
    n: usize,
    k: usize,
    m: usize,
    /// Normal-valued `phi(d_i, d_j)` in ambient components, `[(i*n + j)*m + alpha]`.
    phi_vec: Vec<f64>,
    /// Frame components `h(phi_ij, N_a)`, `[(i*n + j)*k + a]`.
    phi: Vec<f64>,
    mean: Vec<f64>,
    mean_vec: Vec<f64>,
    phi_norm_sq: Vec<f64>,
    /// `A^i_j` for hypersurfaces.
    shape: Option<Vec<f64>>,
    principal: Option<Vec<f64>>,
    /// Christoffels from the tangential part of the ambient second derivative.
    gauss_christoffel: Vec<f64>,
}

impl SecondFundamentalData {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn codimension(&self) -> usize {
        self.k
    }

    pub fn phi(&self, node: usize, a: usize, i: usize, j: usize) -> f64 {
        let (n, k) = (self.n, self.k);
        self.phi[node * n * n * k + (i * n + j) * k + a]
    }

    /// Ambient components of the normal vector `phi(d_i, d_j)`.
    pub fn phi_vector(&self, node: usize, i: usize, j: usize) -> &[f64] {
        let (n, m) = (self.n, self.m);
        let base = node * n * n * m + (i * n + j) * m;
        &self.phi_vec[base..base + m]
    }

    pub fn mean_curvature(&self, node: usize, a: usize) -> f64 {
        self.mean[node * self.k + a]
    }

    /// Length of the mean curvature vector.
    pub fn mean_curvature_norm(&self, node: usize) -> f64 {
        self.mean[node * self.k..(node + 1) * self.k].iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    pub fn mean_curvature_vector(&self, node: usize) -> &[f64] {
        &self.mean_vec[node * self.m..(node + 1) * self.m]
    }

    pub fn phi_norm_sq(&self, node: usize) -> f64 {
        self.phi_norm_sq[node]
    }

    pub fn phi_norm_sq_values(&self) -> &[f64] {
        &self.phi_norm_sq
    }

    pub fn shape_operator(&self, node: usize) -> Option<&[f64]> {
        let nn = self.n * self.n;
        self.shape.as_ref().map(|s| &s[node * nn..(node + 1) * nn])
    }

    /// Principal curvatures in ascending order (hypersurfaces only).
    pub fn principal_curvatures(&self, node: usize) -> Option<&[f64]> {
        let n = self.n;
        self.principal.as_ref().map(|p| &p[node * n..(node + 1) * n])
    }

    pub fn gauss_christoffel(&self, node: usize, l: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.gauss_christoffel[node * n * n * n + (l * n + i) * n + j]
    }

    /// The component `h(phi, N_a)` as a sym2 field.
    pub fn phi_field(&self, grid: &ChartGrid, a: usize) -> Result<TensorField> {
        let (n, k) = (self.n, self.k);
        let data = (0..grid.node_count())
            .flat_map(|node| (0..n * n).map(move |ij| (node, ij)))
            .map(|(node, ij)| self.phi[node * n * n * k + ij * k + a])
            .collect();
        TensorField::sym2_symmetrized(grid, data)
    }

    pub fn mean_field(&self, grid: &ChartGrid, a: usize) -> TensorField {
        let data = (0..grid.node_count()).map(|node| self.mean_curvature(node, a)).collect();
        TensorField::from_data(grid, Role::Scalar, data).expect("scalar field")
    }

    pub fn phi_norm_sq_field(&self, grid: &ChartGrid) -> TensorField {
        TensorField::from_data(grid, Role::Scalar, self.phi_norm_sq.clone()).expect("scalar field")
    }
}

fn h_dot(h: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let m = x.len();
    let mut s = 0.0;
    for p in 0..m {
        for q in 0..m {
            s += h[(p, q)] * x[p] * y[q];
        }
    }
    s
}

/// Second fundamental form `phi(X, Y) = (D_X Y)^normal` from the Gauss formula.
pub fn second_fundamental_form(imm: &Immersion) -> Result<SecondFundamentalData> {
    let (n, m, k) = (imm.n(), imm.m(), imm.codim);
    let nodes = imm.grid().node_count();
    let metric = &imm.induced;
    struct Node {
        phi_vec: Vec<f64>,
        phi: Vec<f64>,
        mean: Vec<f64>,
        mean_vec: Vec<f64>,
        norm_sq: f64,
        shape: Vec<f64>,
        principal: Vec<f64>,
        gamma: Vec<f64>,
    }
    let per: Vec<Node> = (0..nodes)
        .into_par_iter()
        .map(|node| {
            let h = imm.ambient_metric(node);
            let ac = imm.ambient_point_curvature(node);
            let t: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|a| imm.map.d1(node, i, a)).collect()).collect();
            let ginv = metric.inverse_at(node);
            let mut gamma = vec![0.0; n * n * n];
            let mut phi_vec = vec![0.0; n * n * m];
            for i in 0..n {
                for j in 0..n {
                    let w: Vec<f64> = (0..m)
                        .map(|al| {
                            let mut v = imm.map.d2(node, i, j, al);
                            for b in 0..m {
                                for c in 0..m {
                                    v += ac.gamma(al, b, c) * t[i][b] * t[j][c];
                                }
                            }
                            v
                        })
                        .collect();
                    let proj: Vec<f64> = (0..n).map(|p| h_dot(h, &w, &t[p])).collect();
                    let mut nv = w;
                    for l in 0..n {
                        let c: f64 = (0..n).map(|p| ginv[(l, p)] * proj[p]).sum();
                        gamma[(l * n + i) * n + j] = c;
                        for al in 0..m {
                            nv[al] -= c * t[l][al];
                        }
                    }
                    phi_vec[(i * n + j) * m..(i * n + j + 1) * m].copy_from_slice(&nv);
                }
            }
            // symmetrize in (i, j)
            for i in 0..n {
                for j in i + 1..n {
                    for al in 0..m {
                        let s = 0.5 * (phi_vec[(i * n + j) * m + al] + phi_vec[(j * n + i) * m + al]);
                        phi_vec[(i * n + j) * m + al] = s;
                        phi_vec[(j * n + i) * m + al] = s;
                    }
                }
            }
            let mut phi = vec![0.0; n * n * k];
            for ij in 0..n * n {
                for a in 0..k {
                    phi[ij * k + a] = h_dot(h, &phi_vec[ij * m..(ij + 1) * m], imm.normal(node, a));
                }
            }
            let mut mean_vec = vec![0.0; m];
            for i in 0..n {
                for j in 0..n {
                    for al in 0..m {
                        mean_vec[al] += ginv[(i, j)] * phi_vec[(i * n + j) * m + al] / n as f64;
                    }
                }
            }
            let mean: Vec<f64> = (0..k).map(|a| h_dot(h, &mean_vec, imm.normal(node, a))).collect();
            let mut norm_sq = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for p in 0..n {
                        for q in 0..n {
                            let c = ginv[(i, p)] * ginv[(j, q)];
                            if c != 0.0 {
                                norm_sq += c * h_dot(
                                    h,
                                    &phi_vec[(i * n + j) * m..(i * n + j + 1) * m],
                                    &phi_vec[(p * n + q) * m..(p * n + q + 1) * m],
                                );
                            }
                        }
                    }
                }
            }
            let (shape, principal) = if k == 1 {
                let b = DMatrix::from_fn(n, n, |i, j| phi[(i * n + j) * k]);
                let a = &ginv * &b;
                let ev = generalized_eigenvalues(&b, &metric.metric_at(node))?;
                (a.transpose().iter().copied().collect(), ev)
            } else {
                (Vec::new(), Vec::new())
            };
            Ok(Node { phi_vec, phi, mean, mean_vec, norm_sq: norm_sq.max(0.0), shape, principal, gamma })
        })
        .collect::<Result<_>>()?;
    let mut data = SecondFundamentalData {
        n,
        k,
        m,
        phi_vec: Vec::with_capacity(nodes * n * n * m),
        phi: Vec::with_capacity(nodes * n * n * k),
        mean: Vec::with_capacity(nodes * k),
        mean_vec: Vec::with_capacity(nodes * m),
        phi_norm_sq: Vec::with_capacity(nodes),
        shape: (k == 1).then(|| Vec::with_capacity(nodes * n * n)),
        principal: (k == 1).then(|| Vec::with_capacity(nodes * n)),
        gauss_christoffel: Vec::with_capacity(nodes * n * n * n),
    };
    for p in per {
        data.phi_vec.extend(p.phi_vec);
        data.phi.extend(p.phi);
        data.mean.extend(p.mean);
        data.mean_vec.extend(p.mean_vec);
        data.phi_norm_sq.push(p.norm_sq);
        if let Some(s) = data.shape.as_mut() {
            s.extend(p.shape);
        }
        if let Some(s) = data.principal.as_mut() {
            s.extend(p.principal);
        }
        data.gauss_christoffel.extend(p.gamma);
    }
    Ok(data)
}

fn interior_max(grid: &ChartGrid, f: impl Fn(usize) -> f64) -> f64 {
    grid.interior_nodes().into_iter().map(f).fold(0.0, f64::max)
}

/// Largest `|n H_a - tr_g phi_a|`.
pub fn trace_identity_residual(data: &SecondFundamentalData, imm: &Immersion) -> f64 {
    let n = data.n;
    let g = &imm.induced;
    (0..imm.grid().node_count())
        .map(|node| {
            (0..data.k)
                .map(|a| {
                    let mut tr = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            tr += g.ginv(node, i, j) * data.phi(node, a, i, j);
                        }
                    }
                    (n as f64 * data.mean_curvature(node, a) - tr).abs()
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Largest `|g(AX, Y) - g(X, AY)|` over coordinate pairs (hypersurfaces).
pub fn shape_operator_asymmetry(data: &SecondFundamentalData, imm: &Immersion) -> Result<f64> {
    if data.k != 1 {
        return Err(GeomError::HypersurfaceOnly(data.k));
    }
    let n = data.n;
    let mut worst: f64 = 0.0;
    for node in 0..imm.grid().node_count() {
        let a = DMatrix::from_row_slice(n, n, data.shape_operator(node).expect("hypersurface"));
        let lowered = imm.induced.metric_at(node) * a;
        worst = worst.max((&lowered - lowered.transpose()).amax());
    }
    Ok(worst)
}

/// Largest difference between the Gauss-formula Christoffels and those of
/// the induced metric, over interior nodes.
pub fn gauss_christoffel_defect(data: &SecondFundamentalData, imm: &Immersion) -> f64 {
    let n = data.n;
    let curv = &imm.induced_curv;
    interior_max(imm.grid(), |node| {
        let mut w: f64 = 0.0;
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    w = w.max((data.gauss_christoffel(node, l, i, j) - curv.gamma(node, l, i, j)).abs());
                }
            }
        }
        w
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PinchingReport {
    pub max_phi_norm_sq: f64,
    pub min_phi_norm_sq: f64,
    pub bound: f64,
    pub below_bound: bool,
    pub constant: bool,
    pub totally_geodesic: bool,
    pub equality_case: bool,
    pub tolerance: f64,
}

/// Compares `|phi|^2` against `kn/(2k-1) C`.
pub fn pinching_check(data: &SecondFundamentalData, imm: &Immersion, tol: f64) -> Result<PinchingReport> {
    let c = imm.ambient_curvature.ok_or(GeomError::AmbientNotSpaceForm)?;
    let (n, k) = (data.n as f64, data.k as f64);
    let bound = k * n / (2.0 * k - 1.0) * c;
    let vals = &data.phi_norm_sq;
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = bound.abs().max(1.0);
    Ok(PinchingReport {
        max_phi_norm_sq: max,
        min_phi_norm_sq: min,
        bound,
        below_bound: max <= bound + tol * scale,
        constant: max - min <= tol * scale,
        totally_geodesic: max <= tol * scale,
        equality_case: max > tol * scale && (max - bound).abs() <= tol * scale && (min - bound).abs() <= tol * scale,
        tolerance: tol,
    })
}

/// Van der Waerden-Bortolotti derivative of `phi`, normal-valued.
#[derive(Debug, Clone)]
pub struct VdwbDerivative {
    n: usize,
    m: usize,
    /// `(D_l phi)(d_i, d_j)` at `((l*n + i)*n + j)*m + alpha` per node.
    values: Vec<f64>,
    /// Pointwise norm `|D phi|`.
    norm: Vec<f64>,
    interior_max: f64,
}

impl VdwbDerivative {
    pub fn vector(&self, node: usize, l: usize, i: usize, j: usize) -> &[f64] {
        let (n, m) = (self.n, self.m);
        let base = node * n * n * n * m + ((l * n + i) * n + j) * m;
        &self.values[base..base + m]
    }

    /// Frame component `h((D_l phi)_ij, N_a)`.
    pub fn component(&self, imm: &Immersion, node: usize, l: usize, i: usize, j: usize, a: usize) -> f64 {
        h_dot(imm.ambient_metric(node), self.vector(node, l, i, j), imm.normal(node, a))
    }

    pub fn norm(&self, node: usize) -> f64 {
        self.norm[node]
    }

    pub fn norm_sq_values(&self) -> Vec<f64> {
        self.norm.iter().map(|v| v * v).collect()
    }

    /// Largest norm over interior nodes.
    pub fn max_norm(&self) -> f64 {
        self.interior_max
    }

    pub fn is_parallel(&self, tol: f64) -> bool {
        self.interior_max <= tol
    }
}

/// `D_l phi_ij = (dbar_l phi_ij)^normal - phi(D_l d_i, d_j) - phi(d_i, D_l d_j)`.
pub fn vdwb_derivative(data: &SecondFundamentalData, imm: &Immersion) -> Result<VdwbDerivative> {
    let (n, m) = (data.n, data.m);
    let grid = imm.grid();
    let differ = Differ::new(grid, imm.fd)?;
    let width = n * n * m;
    let parts: Vec<Vec<f64>> = (0..n).map(|l| differ.d1(&data.phi_vec, width, l)).collect::<Result<_>>()?;
    let curv = &imm.induced_curv;
    let metric = &imm.induced;
    let per: Vec<(Vec<f64>, f64)> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            let h = imm.ambient_metric(node);
            let ac = imm.ambient_point_curvature(node);
            let ginv = metric.inverse_at(node);
            let t: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|a| imm.map.d1(node, i, a)).collect()).collect();
            let phi = |i: usize, j: usize, al: usize| data.phi_vec[node * width + (i * n + j) * m + al];
            let mut out = vec![0.0; n * width];
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let mut v: Vec<f64> = (0..m)
                            .map(|al| {
                                let mut s = parts[l][node * width + (i * n + j) * m + al];
                                for b in 0..m {
                                    for c in 0..m {
                                        s += ac.gamma(al, b, c) * t[l][b] * phi(i, j, c);
                                    }
                                }
                                for p in 0..n {
                                    s -= curv.gamma(node, p, l, i) * phi(p, j, al) + curv.gamma(node, p, l, j) * phi(i, p, al);
                                }
                                s
                            })
                            .collect();
                        let proj: Vec<f64> = (0..n).map(|p| h_dot(h, &v, &t[p])).collect();
                        for q in 0..n {
                            let c: f64 = (0..n).map(|p| ginv[(q, p)] * proj[p]).sum();
                            for al in 0..m {
                                v[al] -= c * t[q][al];
                            }
                        }
                        out[((l * n + i) * n + j) * m..((l * n + i) * n + j + 1) * m].copy_from_slice(&v);
                    }
                }
            }
            let mut sq = 0.0;
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let x = &out[((l * n + i) * n + j) * m..((l * n + i) * n + j + 1) * m];
                        for l2 in 0..n {
                            for i2 in 0..n {
                                for j2 in 0..n {
                                    let c = ginv[(l, l2)] * ginv[(i, i2)] * ginv[(j, j2)];
                                    if c != 0.0 {
                                        let y = &out[((l2 * n + i2) * n + j2) * m..((l2 * n + i2) * n + j2 + 1) * m];
                                        sq += c * h_dot(h, x, y);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (out, sq.max(0.0).sqrt())
        })
        .collect();
    let mut values = Vec::with_capacity(grid.node_count() * n * width);
    let mut norm = Vec::with_capacity(grid.node_count());
    for (v, s) in per {
        values.extend(v);
        norm.push(s);
    }
    let interior_max = interior_max(grid, |k| norm[k]);
    Ok(VdwbDerivative { n, m, values, norm, interior_max })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimonsReport {
    pub max_abs: f64,
    pub min_residual: f64,
    /// Exact identity for hypersurfaces, lower bound `r >= 0` otherwise.
    pub identity: bool,
    pub max_mean_curvature: f64,
    pub minimal_tolerance: f64,
    pub minimal: bool,
    pub laplacian_term_max: f64,
    pub gradient_term_max: f64,
    pub algebraic_term_max: f64,
    #[serde(skip)]
    pub residual: Vec<f64>,
}

/// `r = 1/2 Lap|phi|^2 - |D phi|^2 - (nC - (2 - 1/k)|phi|^2)|phi|^2`.
pub fn simons_residual(data: &SecondFundamentalData, imm: &Immersion) -> Result<SimonsReport> {
    let c = imm.ambient_curvature.ok_or(GeomError::AmbientNotSpaceForm)?;
    let grid = imm.grid();
    let (n, k) = (data.n as f64, data.k as f64);
    let lap = LaplaceBeltrami::new(&imm.induced, imm.fd)?.apply(&data.phi_norm_sq)?;
    let dphi = vdwb_derivative(data, imm)?.norm_sq_values();
    let residual: Vec<f64> = (0..grid.node_count())
        .map(|node| {
            let s = data.phi_norm_sq[node];
            0.5 * lap[node] - dphi[node] - (n * c - (2.0 - 1.0 / k) * s) * s
        })
        .collect();
    let scale = data.phi_norm_sq.iter().copied().fold(0.0, f64::max).sqrt().max(1.0);
    let h = grid.max_spacing();
    let minimal_tolerance = 10.0 * h * h * scale;
    let max_mean_curvature = interior_max(grid, |node| data.mean_curvature_norm(node));
    let interior = grid.interior_nodes();
    Ok(SimonsReport {
        max_abs: interior_max(grid, |node| residual[node].abs()),
        min_residual: interior.iter().map(|&node| residual[node]).fold(f64::INFINITY, f64::min),
        identity: data.k == 1,
        max_mean_curvature,
        minimal_tolerance,
        minimal: max_mean_curvature <= minimal_tolerance,
        laplacian_term_max: interior_max(grid, |node| 0.5 * lap[node].abs()),
        gradient_term_max: interior_max(grid, |node| dphi[node]),
        algebraic_term_max: interior_max(grid, |node| {
            let s = data.phi_norm_sq[node];
            ((n * c - (2.0 - 1.0 / k) * s) * s).abs()
        }),
        residual,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodazziReport {
    /// `max |(D_i phi)_jk - (D_j phi)_ik|`.
    pub codazzi_max: f64,
    /// `max |delta phi + n dH|` (hypersurfaces).
    pub divergence_max: Option<f64>,
    /// `max |delta phi0 + (n-1) dH|` (hypersurfaces).
    pub traceless_divergence_max: Option<f64>,
    pub traceless_divergence_lhs_max: Option<f64>,
    pub delta_phi_max: Option<f64>,
    pub dh_max: Option<f64>,
}

/// Codazzi equations and the divergence identities for `phi` and its
/// traceless part.
pub fn codazzi_residual(data: &SecondFundamentalData, imm: &Immersion) -> Result<CodazziReport> {
    imm.ambient_curvature.ok_or(GeomError::AmbientNotSpaceForm)?;
    let grid = imm.grid();
    let (n, m) = (data.n, data.m);
    let d = vdwb_derivative(data, imm)?;
    let codazzi_max = interior_max(grid, |node| {
        let h = imm.ambient_metric(node);
        let mut w: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let diff: Vec<f64> = (0..m).map(|al| d.vector(node, i, j, l)[al] - d.vector(node, j, i, l)[al]).collect();
                    w = w.max(h_dot(h, &diff, &diff).max(0.0).sqrt());
                }
            }
        }
        w
    });
    if data.k != 1 {
        return Ok(CodazziReport {
            codazzi_max,
            divergence_max: None,
            traceless_divergence_max: None,
            traceless_divergence_lhs_max: None,
            delta_phi_max: None,
            dh_max: None,
        });
    }
    let metric = &imm.induced;
    let curv = &imm.induced_curv;
    let phi = data.phi_field(grid, 0)?;
    let delta_phi = divergence_sym2(&phi, metric, curv, imm.fd)?;
    let delta_phi0 = divergence_sym2(&traceless_part(data, imm)?, metric, curv, imm.fd)?;
    let dh = gradient(&data.mean_field(grid, 0), imm.fd)?;
    let norm1 = |node: usize, v: &dyn Fn(usize) -> f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += metric.ginv(node, i, j) * v(i) * v(j);
            }
        }
        s.max(0.0).sqrt()
    };
    let nf = n as f64;
    Ok(CodazziReport {
        codazzi_max,
        divergence_max: Some(interior_max(grid, |node| {
            norm1(node, &|i| delta_phi.at(node)[i] + nf * dh.at(node)[i])
        })),
        traceless_divergence_max: Some(interior_max(grid, |node| {
            norm1(node, &|i| delta_phi0.at(node)[i] + (nf - 1.0) * dh.at(node)[i])
        })),
        traceless_divergence_lhs_max: Some(interior_max(grid, |node| norm1(node, &|i| delta_phi0.at(node)[i]))),
        delta_phi_max: Some(interior_max(grid, |node| norm1(node, &|i| delta_phi.at(node)[i]))),
        dh_max: Some(interior_max(grid, |node| norm1(node, &|i| dh.at(node)[i]))),
    })
}

/// `phi0 = phi - H g` for a hypersurface.
pub fn traceless_part(data: &SecondFundamentalData, imm: &Immersion) -> Result<TensorField> {
    if data.k != 1 {
        return Err(GeomError::HypersurfaceOnly(data.k));
    }
    let n = data.n;
    let g = &imm.induced;
    let grid = imm.grid();
    let mut out = Vec::with_capacity(grid.node_count() * n * n);
    for node in 0..grid.node_count() {
        let hm = data.mean_curvature(node, 0);
        for i in 0..n {
            for j in 0..n {
                out.push(data.phi(node, 0, i, j) - hm * g.g(node, i, j));
            }
        }
    }
    TensorField::sym2_symmetrized(grid, out)
}

/// `(int |phi|^p)^(1/p)`.
pub fn phi_lp_norm(data: &SecondFundamentalData, imm: &Immersion, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(GeomError::InvalidExponent(p));
    }
    let vals: Vec<f64> = data.phi_norm_sq.iter().map(|s| s.sqrt().powf(p)).collect();
    Ok(integrate_values(&vals, &imm.induced, Region::Full).powf(1.0 / p))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CliffordConstants {
    pub n1: usize,
    pub n2: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `n1 l1 + n2 l2`.
    pub mean_identity: f64,
    /// `n1 l1^2 + n2 l2^2 - n`.
    pub norm_identity: f64,
    pub holds: bool,
    /// The printed `-sqrt(n/n2)` and its defect in `n1 l1 + n2 l2`.
    pub printed_lambda2: f64,
    pub printed_mean_identity: f64,
}

impl CliffordConstants {
    /// Expected principal curvatures in ascending order.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut v: Vec<f64> =
            std::iter::repeat(self.lambda1).take(self.n1).chain(std::iter::repeat(self.lambda2).take(self.n2)).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Largest deviation of computed principal curvatures from the
    /// expected spectrum, allowing for either normal orientation.
    pub fn deviation(&self, data: &SecondFundamentalData, grid: &ChartGrid) -> Option<f64> {
        let want = self.spectrum();
        let mut flipped: Vec<f64> = want.iter().map(|v| -v).collect();
        flipped.sort_by(f64::total_cmp);
        let dev = |target: &[f64]| {
            (0..grid.node_count())
                .map(|node| {
                    let p = data.principal_curvatures(node).unwrap_or(&[]);
                    if p.len() != target.len() {
                        return f64::INFINITY;
                    }
                    p.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        data.principal.as_ref()?;
        Some(dev(&want).min(dev(&flipped)))
    }
}

pub fn clifford_constants_check(n1: usize, n2: usize) -> Result<CliffordConstants> {
    if n1 == 0 || n2 == 0 {
        return Err(GeomError::InvalidParameters("Clifford factors need n1, n2 >= 1".into()));
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let lambda1 = (b / a).sqrt();
    let lambda2 = -(a / b).sqrt();
    let mean_identity = a * lambda1 + b * lambda2;
    let norm_identity = a * lambda1 * lambda1 + b * lambda2 * lambda2 - n;
    let printed_lambda2 = -(n / b).sqrt();
    Ok(CliffordConstants {
        n1,
        n2,
        lambda1,
        lambda2,
        mean_identity,
        norm_identity,
        holds: mean_identity.abs() < 1e-12 * n && norm_identity.abs() < 1e-12 * n,
        printed_lambda2,
        printed_mean_identity: a * lambda1 + b * printed_lambda2,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classification {
    pub totally_geodesic: bool,
    pub totally_umbilical: bool,
    pub minimal: bool,
    pub cmc: bool,
    pub generic: bool,
    pub max_phi_norm: f64,
    pub max_umbilicity_defect: f64,
    pub max_mean_curvature: f64,
    pub mean_curvature_variation: f64,
    pub tolerance: f64,
}

pub fn classify(data: &SecondFundamentalData, imm: &Immersion, tol: f64) -> Classification {
    let grid = imm.grid();
    let (n, m) = (data.n, data.m);
    let g = &imm.induced;
    let max_phi_norm = interior_max(grid, |node| data.phi_norm_sq[node].sqrt());
    let max_umbilicity_defect = interior_max(grid, |node| {
        let h = imm.ambient_metric(node);
        let hv = data.mean_curvature_vector(node);
        let diff = |i: usize, j: usize| -> Vec<f64> {
            (0..m).map(|al| data.phi_vector(node, i, j)[al] - g.g(node, i, j) * hv[al]).collect()
        };
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = diff(i, j);
                for p in 0..n {
                    for q in 0..n {
                        s += g.ginv(node, i, p) * g.ginv(node, j, q) * h_dot(h, &x, &diff(p, q));
                    }
                }
            }
        }
        s.max(0.0).sqrt()
    });
    let max_mean_curvature = interior_max(grid, |node| data.mean_curvature_norm(node));
    let interior = grid.interior_nodes();
    let mean_curvature_variation = if data.k == 1 {
        let vals: Vec<f64> = interior.iter().map(|&node| data.mean_curvature(node, 0)).collect();
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - avg).abs()).fold(0.0, f64::max)
    } else {
        let vals: Vec<f64> = interior.iter().map(|&node| data.mean_curvature_norm(node)).collect();
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - avg).abs()).fold(0.0, f64::max)
    };
    let totally_geodesic = max_phi_norm <= tol;
    let totally_umbilical = max_umbilicity_defect <= tol;
    let minimal = max_mean_curvature <= tol;
    let cmc = mean_curvature_variation <= tol;
    Classification {
        totally_geodesic,
        totally_umbilical,
        minimal,
        cmc,
        generic: !(totally_geodesic || totally_umbilical || minimal || cmc),
        max_phi_norm,
        max_umbilicity_defect,
        max_mean_curvature,
        mean_curvature_variation,
        tolerance: tol,
    }
}
