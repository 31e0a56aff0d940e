//! L2-orthogonal decomposition of symmetric two-tensors
//! `phi = 1/2 L_xi g + lambda g + phi_TT`, the Cauchy-Ahlfors operator and
//! the Ahlfors Laplacian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::CurvatureBundle;
use crate::error::{GeomError, Result, SolverStats};
use crate::field::{Role, TensorField};
use crate::metric::MetricField;
use crate::operators::{divergence_sym2, gradient, raise, symmetric_derivative, trace_g};
use crate::quadrature::{integrate_values, l2_inner, lp_norm, pairwise_sum, Region};
use crate::spectral::{lanczos, LanczosConfig};
use crate::stencil::{Differ, FdConfig};
use crate::submanifold::{codazzi_residual, Immersion, SecondFundamentalData};

/// `delta* theta = 1/2 L_{theta#} g`.
pub fn delta_star(theta: &TensorField, curv: &CurvatureBundle, cfg: FdConfig) -> Result<TensorField> {
    symmetric_derivative(theta, curv, cfg)
}

/// Traceless part `T - (tr_g T / n) g`.
pub fn traceless(t: &TensorField, metric: &MetricField) -> Result<TensorField> {
    let tr = trace_g(t, metric)?;
    let n = metric.dim();
    let mut data = t.data().to_vec();
    for k in 0..metric.grid().node_count() {
        let s = tr.data()[k] / n as f64;
        for i in 0..n {
            for j in 0..n {
                data[k * n * n + i * n + j] -= s * metric.g(k, i, j);
            }
        }
    }
    TensorField::sym2_symmetrized(metric.grid(), data)
}

/// `S theta = L_xi g + (2/n) (delta theta) g`, equal to `2 (delta* theta)^0`.
pub fn cauchy_ahlfors(theta: &TensorField, metric: &MetricField, curv: &CurvatureBundle, cfg: FdConfig) -> Result<TensorField> {
    Ok(traceless(&delta_star(theta, curv, cfg)?, metric)?.scaled(2.0))
}

/// `S* S theta` with `S* = 2 delta`.
pub fn ahlfors_laplacian(theta: &TensorField, metric: &MetricField, curv: &CurvatureBundle, cfg: FdConfig) -> Result<TensorField> {
    let s = cauchy_ahlfors(theta, metric, curv, cfg)?;
    Ok(divergence_sym2(&s, metric, curv, cfg)?.scaled(2.0))
}

/// Discrete `S` together with its exact adjoint for the grid inner
/// products `sum sqrt(g) g^ij a_i b_j` and `sum sqrt(g) g^ik g^jl A_ij B_kl`.
#[derive(Debug, Clone)]
pub struct AhlforsOperator<'a> {
    metric: &'a MetricField,
    curv: &'a CurvatureBundle,
    differ: Differ<'a>,
    cfg: FdConfig,
}

impl<'a> AhlforsOperator<'a> {
    pub fn new(metric: &'a MetricField, curv: &'a CurvatureBundle, cfg: FdConfig) -> Result<Self> {
        let differ = Differ::new(metric.grid(), cfg)?;
        Ok(AhlforsOperator { metric, curv, differ, cfg })
    }

    pub fn dim(&self) -> usize {
        self.metric.grid().node_count() * self.metric.dim()
    }

    pub fn s(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let t = TensorField::from_data(self.metric.grid(), Role::OneForm, theta.to_vec())?;
        Ok(cauchy_ahlfors(&t, self.metric, self.curv, self.cfg)?.into_data())
    }

    /// Adjoint of `s`.
    pub fn s_adjoint(&self, t: &[f64]) -> Result<Vec<f64>> {
        let metric = self.metric;
        let grid = metric.grid();
        let n = metric.dim();
        let nn = n * n;
        let tf = TensorField::from_data(grid, Role::Sym2, t.to_vec())?;
        let p = traceless(&tf, metric)?;
        let u: Vec<f64> = (0..grid.node_count())
            .into_par_iter()
            .flat_map_iter(|k| {
                let vol = metric.volume_density(k);
                let pk = p.at(k);
                let mut out = vec![0.0; nn];
                for i in 0..n {
                    for j in 0..n {
                        let mut s = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                s += metric.ginv(k, i, a) * metric.ginv(k, j, b) * pk[a * n + b];
                            }
                        }
                        out[i * n + j] = vol * s;
                    }
                }
                out
            })
            .collect();
        let dt: Vec<Vec<f64>> = (0..n).map(|i| self.differ.d1_transpose(&u, nn, i)).collect::<Result<_>>()?;
        let out: Vec<f64> = (0..grid.node_count())
            .into_par_iter()
            .flat_map_iter(|k| {
                let mut v = vec![0.0; n];
                for m in 0..n {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += 2.0 * dt[i][k * nn + i * n + m];
                        for j in 0..n {
                            s -= 2.0 * self.curv.gamma(k, m, i, j) * u[k * nn + i * n + j];
                        }
                    }
                    v[m] = s;
                }
                let vol = metric.volume_density(k);
                (0..n).map(move |j| (0..n).map(|m| metric.g(k, j, m) * v[m]).sum::<f64>() / vol).collect::<Vec<_>>()
            })
            .collect();
        Ok(out)
    }

    /// `S^dagger S`.
    pub fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.s_adjoint(&self.s(theta)?)
    }

    pub fn inner_one_form(&self, a: &[f64], b: &[f64]) -> f64 {
        let metric = self.metric;
        let n = metric.dim();
        let vals: Vec<f64> = (0..metric.grid().node_count())
            .map(|k| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += metric.ginv(k, i, j) * a[k * n + i] * b[k * n + j];
                    }
                }
                s * metric.volume_density(k)
            })
            .collect();
        pairwise_sum(&vals) * metric.grid().cell_volume()
    }

    pub fn inner_sym2(&self, a: &[f64], b: &[f64]) -> f64 {
        let metric = self.metric;
        let n = metric.dim();
        let nn = n * n;
        let vals: Vec<f64> = (0..metric.grid().node_count())
            .map(|k| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        for p in 0..n {
                            for q in 0..n {
                                s += metric.ginv(k, i, p) * metric.ginv(k, j, q) * a[k * nn + i * n + j] * b[k * nn + p * n + q];
                            }
                        }
                    }
                }
                s * metric.volume_density(k)
            })
            .collect();
        pairwise_sum(&vals) * metric.grid().cell_volume()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative residual target.
    pub tolerance: f64,
    /// Defaults to `10 sqrt(node count)`.
    pub max_iterations: Option<usize>,
    /// Ritz values below `kernel_tol * lambda_max` count as kernel.
    pub kernel_tol: f64,
    pub lanczos_steps: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tolerance: 1e-8, max_iterations: None, kernel_tol: 1e-8, lanczos_steps: 60, seed: 0x5eed }
    }
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub theta: TensorField,
    pub lambda: TensorField,
    pub tt_part: TensorField,
    /// `1/2 L_xi g = delta* theta`.
    pub lie_part: TensorField,
    pub solver_stats: SolverStats,
    pub kernel_dimension: usize,
    pub diagnostics: DecompositionDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionDiagnostics {
    pub reconstruction_error: f64,
    pub orthogonality: f64,
    pub tt_trace_max: f64,
    /// `|S^dagger phi_TT| / |S^dagger phi0|` in the discrete inner product.
    pub adjoint_divergence: f64,
    /// Largest `|delta phi_TT|` by the covariant difference formula.
    pub divergence_max: f64,
    pub phi_l2: f64,
}

/// Kernel Ritz vectors and the largest Ritz value.
fn kernel_vectors(op: &AhlforsOperator, cfg: &SolverConfig) -> Result<(Vec<Vec<f64>>, f64)> {
    let apply = |x: &[f64]| op.apply(x);
    let inner = |a: &[f64], b: &[f64]| op.inner_one_form(a, b);
    let pairs = lanczos(&apply, &inner, op.dim(), LanczosConfig { steps: cfg.lanczos_steps, seed: cfg.seed })?;
    let top = pairs.last().map(|p| p.value.abs()).unwrap_or(0.0);
    let mut kernel = Vec::new();
    for p in pairs.into_iter().filter(|p| p.value < cfg.kernel_tol * top) {
        let aq = op.apply(&p.vector)?;
        if op.inner_one_form(&aq, &aq).sqrt() <= cfg.kernel_tol * top {
            kernel.push(p.vector);
        }
    }
    Ok((kernel, top))
}

fn project_out(x: &mut [f64], kernel: &[Vec<f64>], op: &AhlforsOperator) {
    for q in kernel {
        let c = op.inner_one_form(x, q);
        x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
    }
}

/// Solves `S^dagger S theta = 2 S^dagger phi0` by conjugate gradients and
/// splits `phi` accordingly.
pub fn solve_decomposition(
    phi: &TensorField,
    metric: &MetricField,
    curv: &CurvatureBundle,
    cfg: FdConfig,
    solver: SolverConfig,
) -> Result<DecompositionResult> {
    let grid = metric.grid();
    if !grid.is_fully_periodic() {
        return Err(GeomError::NotClosedManifold);
    }
    if phi.role() != Role::Sym2 {
        return Err(GeomError::ShapeMismatch("decomposition needs a sym2 field".into()));
    }
    let n = metric.dim();
    let op = AhlforsOperator::new(metric, curv, cfg)?;
    let phi0 = traceless(phi, metric)?;
    let b: Vec<f64> = op.s_adjoint(phi0.data())?.into_iter().map(|v| 2.0 * v).collect();
    let (kernel, top) = kernel_vectors(&op, &solver)?;
    let b_norm = op.inner_one_form(&b, &b).sqrt();
    // roundoff level relative to |2 S^dagger| |phi0|
    let floor = 1e-13 * 2.0 * top.sqrt() * op.inner_sym2(phi0.data(), phi0.data()).sqrt();
    let target = (solver.tolerance * b_norm).max(floor);
    let max_iter = solver.max_iterations.unwrap_or_else(|| (10.0 * (grid.node_count() as f64).sqrt()).ceil() as usize);
    let mut x = vec![0.0; op.dim()];
    let mut stats = SolverStats { iterations: 0, final_residual: 0.0, kernel_projection_applied: !kernel.is_empty() };
    if b_norm > floor {
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = op.inner_one_form(&r, &r);
        let mut converged = false;
        for it in 0..max_iter {
            let ap = op.apply(&p)?;
            let pap = op.inner_one_form(&p, &ap);
            stats.iterations = it + 1;
            if !(pap > 0.0) {
                break;
            }
            let alpha = rr / pap;
            x.iter_mut().zip(&p).for_each(|(a, b)| *a += alpha * b);
            r.iter_mut().zip(&ap).for_each(|(a, b)| *a -= alpha * b);
            let rr_new = op.inner_one_form(&r, &r);
            if rr_new.sqrt() <= target {
                converged = true;
                break;
            }
            let beta = rr_new / rr;
            p.iter_mut().zip(&r).for_each(|(a, b)| *a = b + beta * *a);
            rr = rr_new;
        }
        let ax = op.apply(&x)?;
        let res: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        stats.final_residual = op.inner_one_form(&res, &res).sqrt() / b_norm;
        if !converged || stats.final_residual * b_norm > 10.0 * target {
            return Err(GeomError::SolverDiverged(stats));
        }
        project_out(&mut x, &kernel, &op);
    }
    let theta = TensorField::from_data(grid, Role::OneForm, x)?;
    let lie_part = delta_star(&theta, curv, cfg)?;
    let rest = phi.combine(1.0, &lie_part, -1.0)?;
    let lambda = trace_g(&rest, metric)?.scaled(1.0 / n as f64);
    let mut tt = rest.data().to_vec();
    for k in 0..grid.node_count() {
        for i in 0..n {
            for j in 0..n {
                tt[k * n * n + i * n + j] -= lambda.data()[k] * metric.g(k, i, j);
            }
        }
    }
    let tt_part = TensorField::sym2_symmetrized(grid, tt)?;
    let mut model = lie_part.data().to_vec();
    for k in 0..grid.node_count() {
        for i in 0..n {
            for j in 0..n {
                model[k * n * n + i * n + j] += lambda.data()[k] * metric.g(k, i, j);
            }
        }
    }
    let model = TensorField::from_data(grid, Role::Sym2, model)?;
    let recon = phi.combine(1.0, &model, -1.0)?.combine(1.0, &tt_part, -1.0)?;
    let s_phi0 = op.s_adjoint(phi0.data())?;
    let s_tt = op.s_adjoint(tt_part.data())?;
    let s_phi0_norm = op.inner_one_form(&s_phi0, &s_phi0).sqrt();
    let s_tt_norm = op.inner_one_form(&s_tt, &s_tt).sqrt();
    let diagnostics = DecompositionDiagnostics {
        reconstruction_error: lp_norm(&recon, metric, 2.0)?,
        orthogonality: l2_inner(&model, &tt_part, metric, Region::Full)?.abs(),
        tt_trace_max: trace_g(&tt_part, metric)?.max_abs(),
        adjoint_divergence: if s_phi0_norm > 0.0 { s_tt_norm / s_phi0_norm } else { s_tt_norm },
        divergence_max: divergence_sym2(&tt_part, metric, curv, cfg)?.max_abs(),
        phi_l2: lp_norm(phi, metric, 2.0)?,
    };
    Ok(DecompositionResult { theta, lambda, tt_part, lie_part, solver_stats: stats, kernel_dimension: kernel.len(), diagnostics })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegralFormulaReport {
    /// `max |delta phi0|`, `max |(n-1) dH|` and `max |delta phi0 + (n-1) dH|`.
    pub eq38_lhs_max: f64,
    pub eq38_rhs_max: f64,
    pub eq38_residual: f64,
    /// `<S' theta, S' theta>` with `S' = S/2`, the normalization in which
    /// the integral formula balances.
    pub eq39_lhs: f64,
    /// `-(n-1) int L_xi H dv`.
    pub eq39_rhs: f64,
    pub eq39_difference: f64,
    /// `<S theta, S theta>` with `S` as printed.
    pub s_theta_sq: f64,
    pub integral_vanishes: bool,
    pub s_theta_norm: f64,
    pub mean_curvature_variation: f64,
    /// `|phi - H g - phi_TT|_L2`.
    pub split_residual: f64,
    pub tolerance: f64,
}

/// Evaluates both sides of `delta phi0 = -(n-1) dH` and of the integral
/// formula `<S theta, S theta> = -(n-1) int L_xi H`.
pub fn check_3_8_and_3_9(
    imm: &Immersion,
    data: &SecondFundamentalData,
    result: &DecompositionResult,
    tol: f64,
) -> Result<IntegralFormulaReport> {
    if data.codimension() != 1 {
        return Err(GeomError::HypersurfaceOnly(data.codimension()));
    }
    let grid = imm.grid();
    if !grid.is_fully_periodic() {
        return Err(GeomError::NotClosedManifold);
    }
    let metric = imm.induced_metric();
    let curv = imm.induced_curvature();
    let fd = imm.fd();
    let n = metric.dim();
    let cod = codazzi_residual(data, imm)?;
    let h = data.mean_field(grid, 0);
    let dh = gradient(&h, fd)?;
    let xi = raise(&result.theta, metric)?;
    let lie_h: Vec<f64> = (0..grid.node_count())
        .map(|k| (0..n).map(|i| dh.at(k)[i] * xi.at(k)[i]).sum())
        .collect();
    let integral = integrate_values(&lie_h, metric, Region::Full);
    let s = cauchy_ahlfors(&result.theta, metric, curv, fd)?;
    let s_sq = l2_inner(&s, &s, metric, Region::Full)?;
    let lhs = 0.25 * s_sq;
    let rhs = -(n as f64 - 1.0) * integral;
    let scale = lhs.abs().max(rhs.abs()).max(result.diagnostics.phi_l2.powi(2)).max(1e-300);
    let hv: Vec<f64> = h.data().to_vec();
    let mean = hv.iter().sum::<f64>() / hv.len() as f64;
    let mut split = data.phi_field(grid, 0)?.combine(1.0, &result.tt_part, -1.0)?.into_data();
    for k in 0..grid.node_count() {
        for i in 0..n {
            for j in 0..n {
                split[k * n * n + i * n + j] -= hv[k] * metric.g(k, i, j);
            }
        }
    }
    let split = TensorField::from_data(grid, Role::Sym2, split)?;
    Ok(IntegralFormulaReport {
        eq38_lhs_max: cod.traceless_divergence_lhs_max.unwrap_or(0.0),
        eq38_rhs_max: (n as f64 - 1.0) * cod.dh_max.unwrap_or(0.0),
        eq38_residual: cod.traceless_divergence_max.unwrap_or(0.0),
        eq39_lhs: lhs,
        eq39_rhs: rhs,
        eq39_difference: (lhs - rhs).abs(),
        s_theta_sq: s_sq,
        integral_vanishes: integral.abs() <= tol * scale,
        s_theta_norm: s_sq.sqrt(),
        mean_curvature_variation: hv.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max),
        split_residual: lp_norm(&split, metric, 2.0)?,
        tolerance: tol,
    })
}
