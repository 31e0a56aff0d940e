//! Smooth maps between Riemannian manifolds: pullback metric, energy,
//! second fundamental form of a map, tension, the curvature term `Q(f)`
//! of the Bochner formula and its lower bound, and the pinching hypotheses.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    generalized_eigenvalues, model_curvature, point_extreme, CurvatureBundle, CurvatureExtreme, ExtremeConfig,
    ExtremeKind, PointCurvature,
};
use crate::error::{GeomError, Result};
use crate::field::{Role, TensorField};
use crate::metric::{MetricField, MetricModel};
use crate::operators::LaplaceBeltrami;
use crate::quadrature::{integrate_values, Region};
use crate::sampled::{DerivativeSource, PointMap, SampledMap};
use crate::stencil::FdConfig;

/// Codomain geometry at the image of one node.
#[derive(Debug, Clone)]
struct TargetPoint {
    g: DMatrix<f64>,
    curv: PointCurvature,
}

/// A map `f: (M, g) -> (N, h)` sampled on the domain grid. The codomain
/// geometry is evaluated from its metric model at the image points.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    domain: MetricField,
    domain_curv: CurvatureBundle,
    codomain: Arc<dyn MetricModel>,
    map: SampledMap,
    fd: FdConfig,
    targets: Vec<TargetPoint>,
}

impl SmoothMap {
    pub fn new(
        domain: MetricField,
        domain_curv: CurvatureBundle,
        codomain: Arc<dyn MetricModel>,
        map: &dyn PointMap,
        source: DerivativeSource,
        fd: FdConfig,
    ) -> Result<Self> {
        if map.source_dim() != domain.dim() || map.target_dim() != codomain.dim() {
            return Err(GeomError::ShapeMismatch(format!("map {} does not fit its charts", map.label())));
        }
        let sampled = SampledMap::sample(map, domain.grid(), source, &codomain.periods())?;
        let targets = (0..domain.grid().node_count())
            .into_par_iter()
            .map(|k| {
                let y = sampled.value(k);
                Ok(TargetPoint { g: codomain.metric(y), curv: model_curvature(codomain.as_ref(), y)? })
            })
            .collect::<Result<_>>()?;
        Ok(SmoothMap { domain, domain_curv, codomain, map: sampled, fd, targets })
    }

    pub fn domain(&self) -> &MetricField {
        &self.domain
    }

    pub fn domain_curvature(&self) -> &CurvatureBundle {
        &self.domain_curv
    }

    pub fn codomain(&self) -> &Arc<dyn MetricModel> {
        &self.codomain
    }

    pub fn sampled(&self) -> &SampledMap {
        &self.map
    }

    pub fn fd(&self) -> FdConfig {
        self.fd
    }

    pub fn n(&self) -> usize {
        self.domain.dim()
    }

    pub fn m(&self) -> usize {
        self.codomain.dim()
    }

    fn nodes(&self) -> usize {
        self.domain.grid().node_count()
    }

    /// Codomain metric at the image of `node`.
    pub fn target_metric(&self, node: usize) -> &DMatrix<f64> {
        &self.targets[node].g
    }

    pub fn target_curvature(&self, node: usize) -> &PointCurvature {
        &self.targets[node].curv
    }

    fn pullback_at(&self, k: usize) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let h = &self.targets[k].g;
        DMatrix::from_fn(n, n, |i, j| {
            let mut s = 0.0;
            for a in 0..m {
                for b in 0..m {
                    s += self.map.d1(k, i, a) * self.map.d1(k, j, b) * h[(a, b)];
                }
            }
            s
        })
    }

    /// `Phi^ab = f_k^a f_l^b g^kl` at a node.
    fn phi_at(&self, k: usize) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        DMatrix::from_fn(m, m, |a, b| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.map.d1(k, i, a) * self.map.d1(k, j, b) * self.domain.ginv(k, i, j);
                }
            }
            s
        })
    }

    fn trace_at(&self, k: usize) -> f64 {
        let pb = self.pullback_at(k);
        let n = self.n();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.domain.ginv(k, i, j) * pb[(i, j)];
            }
        }
        s
    }

    /// `(Ddf)_ij^a` at a node, stored at `(i*n + j)*m + a`.
    fn hessian_at(&self, k: usize) -> Vec<f64> {
        let (n, m) = (self.n(), self.m());
        let tc = &self.targets[k].curv;
        let mut out = vec![0.0; n * n * m];
        for i in 0..n {
            for j in 0..n {
                for a in 0..m {
                    let mut v = self.map.d2(k, i, j, a);
                    for l in 0..n {
                        v -= self.domain_curv.gamma(k, l, i, j) * self.map.d1(k, l, a);
                    }
                    for b in 0..m {
                        let fib = self.map.d1(k, i, b);
                        if fib == 0.0 {
                            continue;
                        }
                        for c in 0..m {
                            v += tc.gamma(a, b, c) * fib * self.map.d1(k, j, c);
                        }
                    }
                    out[(i * n + j) * m + a] = v;
                }
            }
        }
        out
    }

    fn hessian_norm_sq_at(&self, k: usize) -> f64 {
        let (n, m) = (self.n(), self.m());
        let d = self.hessian_at(k);
        let h = &self.targets[k].g;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    for q in 0..n {
                        let w = self.domain.ginv(k, i, p) * self.domain.ginv(k, j, q);
                        if w == 0.0 {
                            continue;
                        }
                        for a in 0..m {
                            for b in 0..m {
                                s += w * h[(a, b)] * d[(i * n + j) * m + a] * d[(p * n + q) * m + b];
                            }
                        }
                    }
                }
            }
        }
        s
    }

    fn q_at(&self, k: usize) -> f64 {
        let (n, m) = (self.n(), self.m());
        let phi = self.phi_at(k);
        let tc = &self.targets[k].curv;
        let mut first = 0.0;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let pac = phi[(a, c)];
                    if pac == 0.0 {
                        continue;
                    }
                    for e in 0..m {
                        first += tc.riem(a, b, c, e) * pac * phi[(b, e)];
                    }
                }
            }
        }
        let pb = self.pullback_at(k);
        let mut second = 0.0;
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    for q in 0..n {
                        second += self.domain.ginv(k, i, p)
                            * self.domain.ginv(k, j, q)
                            * pb[(p, q)]
                            * self.domain_curv.ric(k, i, j);
                    }
                }
            }
        }
        first + second
    }

    fn scalar_field(&self, f: impl Fn(usize) -> f64 + Sync + Send) -> TensorField {
        let data: Vec<f64> = (0..self.nodes()).into_par_iter().map(f).collect();
        TensorField::from_data(self.domain.grid(), Role::Scalar, data).expect("scalar shape")
    }
}

/// `(f^-1 h)_kl = f_k^a f_l^b h_ab`.
pub fn pullback_metric(f: &SmoothMap) -> TensorField {
    let data: Vec<f64> =
        (0..f.nodes()).into_par_iter().flat_map_iter(|k| f.pullback_at(k).iter().copied().collect::<Vec<_>>()).collect();
    TensorField::sym2_symmetrized(f.domain.grid(), data).expect("sym2 shape")
}

/// `e(f) = (1/2) trace_g (f^-1 h)`.
pub fn energy_density(f: &SmoothMap) -> TensorField {
    f.scalar_field(|k| 0.5 * f.trace_at(k))
}

/// `trace_g (f^-1 h)`, the un-halved density.
pub fn energy_trace(f: &SmoothMap) -> TensorField {
    f.scalar_field(|k| f.trace_at(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletEnergy {
    /// Integral of `e(f) dv_g`.
    pub integral: f64,
    /// Half of `integral`, the normalization of the displayed `E(f)`.
    pub half_integral: f64,
    pub finite: bool,
    /// True when closed axes were integrated up to their chart ends rather
    /// than over a closed manifold.
    pub approximate: bool,
}

pub fn dirichlet_energy(f: &SmoothMap) -> DirichletEnergy {
    let e = energy_density(f);
    let integral = integrate_values(e.data(), &f.domain, Region::Full);
    DirichletEnergy {
        integral,
        half_integral: 0.5 * integral,
        finite: integral.is_finite(),
        approximate: !f.domain.grid().is_fully_periodic(),
    }
}

/// `Phi^ab` per node and its eigenvalues relative to the codomain metric,
/// in descending order.
#[derive(Debug, Clone)]
pub struct PhiTensor {
    pub m: usize,
    /// `m*m` block per node.
    pub phi: Vec<f64>,
    pub eigenvalues: Vec<Vec<f64>>,
}

impl PhiTensor {
    pub fn sum(&self, node: usize) -> f64 {
        self.eigenvalues[node].iter().sum()
    }

    pub fn sum_sq(&self, node: usize) -> f64 {
        self.eigenvalues[node].iter().map(|l| l * l).sum()
    }
}

pub fn phi_tensor(f: &SmoothMap) -> Result<PhiTensor> {
    let m = f.m();
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..f.nodes())
        .into_par_iter()
        .map(|k| {
            let phi = f.phi_at(k);
            let h = &f.targets[k].g;
            // eigenvalues of Phi.h, self-adjoint for h: solve h Phi h v = l h v
            let a = h * &phi * h;
            let a = (&a + a.transpose()) * 0.5;
            let mut vals = generalized_eigenvalues(&a, h).map_err(|_| GeomError::DegenerateMetric(k))?;
            vals.reverse();
            Ok((phi.iter().copied().collect(), vals))
        })
        .collect::<Result<_>>()?;
    let mut phi = Vec::with_capacity(f.nodes() * m * m);
    let mut eigenvalues = Vec::with_capacity(f.nodes());
    for (p, v) in per {
        phi.extend(p);
        eigenvalues.push(v);
    }
    Ok(PhiTensor { m, phi, eigenvalues })
}

/// `(Ddf)_ij^a = d_i d_j f^a - Gamma^k_ij f_k^a + Gamma^a_bc f_i^b f_j^c`,
/// per node at `(i*n + j)*m + a`.
pub fn map_hessian(f: &SmoothMap) -> Vec<f64> {
    (0..f.nodes()).into_par_iter().flat_map_iter(|k| f.hessian_at(k)).collect()
}

/// `tau^a = g^ij (Ddf)_ij^a`, per node `m` entries.
pub fn tension_field(f: &SmoothMap) -> Vec<f64> {
    let (n, m) = (f.n(), f.m());
    (0..f.nodes())
        .into_par_iter()
        .flat_map_iter(|k| {
            let d = f.hessian_at(k);
            (0..m)
                .map(|a| {
                    let mut s = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            s += f.domain.ginv(k, i, j) * d[(i * n + j) * m + a];
                        }
                    }
                    s
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Pointwise `|tau|_h`.
pub fn tension_norm(f: &SmoothMap) -> TensorField {
    let m = f.m();
    let tau = tension_field(f);
    f.scalar_field(|k| {
        let h = &f.targets[k].g;
        let t = &tau[k * m..(k + 1) * m];
        let mut s = 0.0;
        for a in 0..m {
            for b in 0..m {
                s += h[(a, b)] * t[a] * t[b];
            }
        }
        s.max(0.0).sqrt()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicityCheck {
    pub harmonic: bool,
    /// Largest tension norm over non-margin nodes.
    pub max_tension: f64,
    pub tolerance: f64,
}

pub fn is_harmonic(f: &SmoothMap, tol: f64) -> HarmonicityCheck {
    let max_tension = tension_norm(f).max_abs_interior();
    HarmonicityCheck { harmonic: max_tension <= tol, max_tension, tolerance: tol }
}

/// `|Ddf|^2` with all indices contracted.
pub fn hessian_norm_sq(f: &SmoothMap) -> TensorField {
    f.scalar_field(|k| f.hessian_norm_sq_at(k))
}

/// The curvature term `Q(f)` of the Bochner formula
/// `Delta e(f) = |Ddf|^2 + Q(f)` for harmonic `f`.
pub fn q_term(f: &SmoothMap) -> TensorField {
    f.scalar_field(|k| f.q_at(k))
}

/// Residual of `Delta e(f) = |Ddf|^2 + Q(f)`.
#[derive(Debug, Clone)]
pub struct WeitzenboeckReport {
    /// Largest `|r|` over non-margin nodes.
    pub max_abs: f64,
    /// L2 norm of `r` over non-margin nodes.
    pub l2: f64,
    pub residual: TensorField,
    pub laplacian_energy: TensorField,
    pub hessian_norm_sq: TensorField,
    pub q: TensorField,
    pub harmonicity: HarmonicityCheck,
    /// Set when `f` is not harmonic within tolerance, so the identity is
    /// not expected to hold.
    pub informational: bool,
}

pub fn weitzenboeck_residual(f: &SmoothMap, harmonic_tol: f64) -> Result<WeitzenboeckReport> {
    let e = energy_density(f);
    let lap = LaplaceBeltrami::new(&f.domain, f.fd)?.apply(e.data())?;
    let lap = TensorField::from_data(f.domain.grid(), Role::Scalar, lap)?;
    let hess = hessian_norm_sq(f);
    let q = q_term(f);
    let r: Vec<f64> = (0..f.nodes()).map(|k| lap.data()[k] - hess.data()[k] - q.data()[k]).collect();
    let residual = TensorField::from_data(f.domain.grid(), Role::Scalar, r)?;
    let sq: Vec<f64> = residual.data().iter().map(|v| v * v).collect();
    let l2 = integrate_values(&sq, &f.domain, Region::Interior).max(0.0).sqrt();
    let harmonicity = is_harmonic(f, harmonic_tol);
    Ok(WeitzenboeckReport {
        max_abs: residual.max_abs_interior(),
        l2,
        residual,
        laplacian_energy: lap,
        hessian_norm_sq: hess,
        q,
        informational: !harmonicity.harmonic,
        harmonicity,
    })
}

/// Curvature extremes entering the `Q(f)` bound at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeExtremes {
    /// Smallest domain Ricci curvature.
    pub ric_min: f64,
    /// Largest codomain Ricci curvature at the image point.
    pub target_ric_max: f64,
    /// Smallest codomain Ricci curvature at the image point.
    pub target_ric_min: f64,
    /// Smallest codomain sectional curvature at the image point.
    pub target_sec_min: CurvatureExtreme,
}

pub fn node_extremes(f: &SmoothMap, cfg: &ExtremeConfig) -> Result<Vec<NodeExtremes>> {
    (0..f.nodes())
        .into_par_iter()
        .map(|k| {
            let dom = f.domain_curv.point(k);
            let g = f.domain.metric_at(k);
            let ric_min = if f.n() > 0 { point_extreme(&dom, &g, ExtremeKind::RicMin, cfg, k as u64)?.value } else { 0.0 };
            let t = &f.targets[k];
            Ok(NodeExtremes {
                ric_min,
                target_ric_max: point_extreme(&t.curv, &t.g, ExtremeKind::RicMax, cfg, k as u64)?.value,
                target_ric_min: point_extreme(&t.curv, &t.g, ExtremeKind::RicMin, cfg, k as u64)?.value,
                target_sec_min: point_extreme(&t.curv, &t.g, ExtremeKind::SecMin, cfg, k as u64)?,
            })
        })
        .collect()
}

/// Pointwise lower bound
/// `B = (sum l^2)(m sec_min - Ric_max) + (sum l)(Ric_min - sec_min sum l)`
/// for `Q(f)`, valid where `sec_min` is certified.
#[derive(Debug, Clone)]
pub struct QLowerBound {
    pub bound: TensorField,
    pub certified: Vec<bool>,
    /// Count of nodes where the bound rests on a sampled `sec_min`.
    pub uncertified_nodes: usize,
}

pub fn q_lower_bound(f: &SmoothMap, cfg: &ExtremeConfig) -> Result<QLowerBound> {
    let phi = phi_tensor(f)?;
    let ext = node_extremes(f, cfg)?;
    let m = f.m() as f64;
    let bound = f.scalar_field(|k| {
        let (s1, s2) = (phi.sum(k), phi.sum_sq(k));
        let x = &ext[k];
        let sec = x.target_sec_min.value;
        s2 * (m * sec - x.target_ric_max) + s1 * (x.ric_min - sec * s1)
    });
    let certified: Vec<bool> = ext.iter().map(|x| x.target_sec_min.certified).collect();
    let uncertified_nodes = certified.iter().filter(|c| !**c).count();
    Ok(QLowerBound { bound, certified, uncertified_nodes })
}

/// Evaluation of the curvature hypotheses
/// `sec_min(f(x)) e(f)(x) <= Ric_min(x)` and `sec_min >= Ric_max / m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub strict: bool,
    pub pass: bool,
    pub energy_condition: bool,
    pub pinching_condition: bool,
    /// Energy condition with `e = (1/2) trace`.
    pub energy_condition_half_trace: bool,
    /// Energy condition with the full trace `sum l = trace_g(f^-1 h)`.
    pub energy_condition_trace: bool,
    /// Largest `sec_min e - Ric_min` (half-trace normalization).
    pub max_energy_excess: f64,
    /// Largest `sec_min trace - Ric_min`.
    pub max_energy_excess_trace: f64,
    /// Smallest `sec_min - Ric_max / m`.
    pub min_pinching_margin: f64,
    pub failing_nodes: usize,
    pub first_failing_node: Option<usize>,
    /// `(m-1) sec_min <= Ric <= m sec_min` on the codomain samples.
    pub double_inequality_holds: bool,
    pub double_inequality_max_violation: f64,
    pub tolerance: f64,
}

/// Non-strict mode uses `e = (1/2) trace` in the energy condition. Strict
/// mode uses the full trace there, which is what makes the lower bound on
/// `Q(f)` non-negative, and requires `sec_min > Ric_max / m`.
pub fn check_hypotheses_2_3(f: &SmoothMap, strict: bool, cfg: &ExtremeConfig) -> Result<HypothesisReport> {
    let ext = node_extremes(f, cfg)?;
    let m = f.m() as f64;
    let tol = 1e-9;
    let mut r = HypothesisReport {
        strict,
        pass: true,
        energy_condition: true,
        pinching_condition: true,
        energy_condition_half_trace: true,
        energy_condition_trace: true,
        max_energy_excess: f64::NEG_INFINITY,
        max_energy_excess_trace: f64::NEG_INFINITY,
        min_pinching_margin: f64::INFINITY,
        failing_nodes: 0,
        first_failing_node: None,
        double_inequality_holds: true,
        double_inequality_max_violation: 0.0,
        tolerance: tol,
    };
    for (k, x) in ext.iter().enumerate() {
        let tr = f.trace_at(k);
        let sec = x.target_sec_min.value;
        let scale = 1.0 + x.ric_min.abs() + (sec * tr).abs();
        let half_excess = sec * 0.5 * tr - x.ric_min;
        let trace_excess = sec * tr - x.ric_min;
        let margin = sec - x.target_ric_max / m;
        r.max_energy_excess = r.max_energy_excess.max(half_excess);
        r.max_energy_excess_trace = r.max_energy_excess_trace.max(trace_excess);
        r.min_pinching_margin = r.min_pinching_margin.min(margin);
        let half_ok = half_excess <= tol * scale;
        let trace_ok = trace_excess <= tol * scale;
        r.energy_condition_half_trace &= half_ok;
        r.energy_condition_trace &= trace_ok;
        let pscale = 1.0 + sec.abs() + x.target_ric_max.abs();
        let (energy_ok, pinch_ok) =
            if strict { (trace_ok, margin > tol * pscale) } else { (half_ok, margin >= -tol * pscale) };
        r.energy_condition &= energy_ok;
        r.pinching_condition &= pinch_ok;
        if !(energy_ok && pinch_ok) {
            r.failing_nodes += 1;
            r.first_failing_node.get_or_insert(k);
        }
        let low = (m - 1.0) * sec - x.target_ric_min;
        let high = x.target_ric_max - m * sec;
        let v = low.max(high).max(0.0);
        r.double_inequality_max_violation = r.double_inequality_max_violation.max(v);
        r.double_inequality_holds &= v <= tol * pscale;
    }
    r.pass = r.energy_condition && r.pinching_condition;
    Ok(r)
}

/// Integrated Bochner formula on a closed domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralQReport {
    pub integral_q: f64,
    pub integral_hessian_sq: f64,
    /// `integral (|Ddf|^2 + Q)`, zero by Stokes for harmonic maps.
    pub integral_sum: f64,
    pub q_nonpositive: bool,
    pub identity_holds: bool,
    pub tolerance: f64,
    /// True when closed chart axes stand in for a closed manifold (polar
    /// margins); the integrals then omit the excluded caps.
    pub approximate: bool,
    pub harmonicity: HarmonicityCheck,
}

pub fn integral_q_check(f: &SmoothMap, tol: f64, harmonic_tol: f64) -> Result<IntegralQReport> {
    let grid = f.domain.grid();
    if grid.axes().iter().any(|ax| !ax.periodic && ax.margin_nodes() == 0) {
        return Err(GeomError::NotClosedManifold);
    }
    let approximate = !grid.is_fully_periodic();
    let region = if approximate { Region::Interior } else { Region::Full };
    let q = q_term(f);
    let h = hessian_norm_sq(f);
    let integral_q = integrate_values(q.data(), &f.domain, region);
    let integral_hessian_sq = integrate_values(h.data(), &f.domain, region);
    let integral_sum = integral_q + integral_hessian_sq;
    Ok(IntegralQReport {
        integral_q,
        integral_hessian_sq,
        integral_sum,
        q_nonpositive: integral_q <= tol,
        identity_holds: integral_sum.abs() <= tol,
        tolerance: tol,
        approximate,
        harmonicity: is_harmonic(f, harmonic_tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{build_levi_civita, CurvatureMode};
    use crate::formulas::{ConstantMap, Equator, IdentityMap, LatitudeCircle, LinearMap};
    use crate::grid::{Axis, ChartGrid};
    use crate::metric::{ConstantMetric, RoundSphere};
    use std::f64::consts::PI;

    fn torus_domain(n: usize) -> (MetricField, CurvatureBundle) {
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, n), Axis::periodic(0.0, 2.0 * PI, n)]).unwrap();
        let m = MetricField::sample(&g, Arc::new(ConstantMetric::flat_torus(&[2.0 * PI, 2.0 * PI]))).unwrap();
        let c = build_levi_civita(&m, CurvatureMode::Analytic).unwrap();
        (m, c)
    }

    fn sphere_domain(res: usize, mode: CurvatureMode) -> (MetricField, CurvatureBundle) {
        let eps = PI / 128.0;
        let g = ChartGrid::new(vec![Axis::closed(eps, PI - eps, res + 1, 1.0 / 16.0), Axis::periodic(0.0, 2.0 * PI, res)])
            .unwrap();
        let m = MetricField::sample(&g, Arc::new(RoundSphere { n: 2, r: 1.0 })).unwrap();
        let c = build_levi_civita(&m, mode).unwrap();
        (m, c)
    }

    fn flat_target() -> Arc<dyn MetricModel> {
        Arc::new(ConstantMetric::flat_torus(&[2.0 * PI, 2.0 * PI]))
    }

    fn build(dom: (MetricField, CurvatureBundle), target: Arc<dyn MetricModel>, map: &dyn PointMap, src: DerivativeSource) -> SmoothMap {
        SmoothMap::new(dom.0, dom.1, target, map, src, FdConfig::default()).unwrap()
    }

    fn linear() -> LinearMap {
        LinearMap { n: 2, m: 2, matrix: vec![2.0, 0.0, 0.0, 1.0] }
    }

    #[test]
    fn pullback_and_energy_of_torus_maps() {
        let f = build(torus_domain(16), flat_target(), &linear(), DerivativeSource::Analytic);
        let pb = pullback_metric(&f);
        for k in 0..f.nodes() {
            assert_eq!(pb.at(k), &[4.0, 0.0, 0.0, 1.0]);
        }
        assert!(energy_density(&f).data().iter().all(|e| *e == 2.5));
        let d = dirichlet_energy(&f);
        assert!((d.integral - 2.5 * 4.0 * PI * PI).abs() < 1e-11);
        assert_eq!(d.half_integral, 0.5 * d.integral);
        let id = build(torus_domain(16), flat_target(), &IdentityMap { n: 2 }, DerivativeSource::Analytic);
        assert!(energy_density(&id).data().iter().all(|e| *e == 1.0));
        let c = build(torus_domain(16), flat_target(), &ConstantMap { n: 2, point: vec![1.0, 2.0] }, DerivativeSource::Analytic);
        assert_eq!(pullback_metric(&c).max_abs(), 0.0);
        assert_eq!(dirichlet_energy(&c).integral, 0.0);
    }

    #[test]
    fn torus_maps_have_vanishing_hessian_q_and_residual() {
        let f = build(torus_domain(16), flat_target(), &linear(), DerivativeSource::Analytic);
        assert!(map_hessian(&f).iter().all(|v| *v == 0.0));
        assert!(tension_field(&f).iter().all(|v| *v == 0.0));
        assert_eq!(q_term(&f).max_abs(), 0.0);
        let w = weitzenboeck_residual(&f, 1e-10).unwrap();
        assert!(w.max_abs < 1e-12 && !w.informational);
        let b = q_lower_bound(&f, &ExtremeConfig::default()).unwrap();
        assert_eq!(b.bound.max_abs(), 0.0);
        let i = integral_q_check(&f, 1e-10, 1e-10).unwrap();
        assert_eq!((i.integral_q, i.integral_hessian_sq), (0.0, 0.0));
        assert!(!i.approximate);
    }

    #[test]
    fn identity_on_round_sphere() {
        let f = build(sphere_domain(32, CurvatureMode::Analytic), Arc::new(RoundSphere { n: 2, r: 1.0 }), &IdentityMap { n: 2 }, DerivativeSource::Analytic);
        for e in energy_density(&f).data() {
            assert!((e - 1.0).abs() <= 4.0 * f64::EPSILON);
        }
        assert!(map_hessian(&f).iter().all(|v| v.abs() < 1e-13));
        let q = q_term(&f);
        assert!(q.max_abs() < 1e-6);
        let phi = phi_tensor(&f).unwrap();
        let b = q_lower_bound(&f, &ExtremeConfig::default()).unwrap();
        for k in 0..f.nodes() {
            assert!((phi.sum(k) - 2.0).abs() < 1e-12 && (phi.sum_sq(k) - 2.0).abs() < 1e-12);
            assert!(b.bound.data()[k].abs() < 1e-6 && b.certified[k]);
        }
        let loose = check_hypotheses_2_3(&f, false, &ExtremeConfig::default()).unwrap();
        let strict = check_hypotheses_2_3(&f, true, &ExtremeConfig::default()).unwrap();
        assert!(loose.pass && !strict.pass);
        assert!(loose.double_inequality_holds && loose.double_inequality_max_violation < 1e-14);
        assert!((loose.min_pinching_margin - 0.5).abs() < 1e-12);
        assert!(loose.energy_condition_half_trace && !strict.energy_condition_trace);
        assert!(loose.max_energy_excess.abs() < 1e-12 && (strict.max_energy_excess_trace - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_map_into_sphere_passes_strict_hypotheses() {
        let f = build(torus_domain(16), Arc::new(RoundSphere { n: 2, r: 1.0 }), &ConstantMap { n: 2, point: vec![1.0, 0.5] }, DerivativeSource::Analytic);
        let r = check_hypotheses_2_3(&f, true, &ExtremeConfig::default()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(check_hypotheses_2_3(&f, false, &ExtremeConfig::default()).unwrap().pass);
        assert_eq!(q_term(&f).max_abs(), 0.0);
        let flat = build(torus_domain(16), flat_target(), &linear(), DerivativeSource::Analytic);
        assert!(check_hypotheses_2_3(&flat, false, &ExtremeConfig::default()).unwrap().pass);
    }

    #[test]
    fn great_circle_is_geodesic_and_latitude_circle_is_not() {
        let circle = |theta0: f64| {
            let g = ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, 64)]).unwrap();
            let s = theta0.sin();
            let m = MetricField::sample(&g, Arc::new(ConstantMetric { g: nalgebra::DMatrix::from_element(1, 1, s * s), periods: vec![Some(2.0 * PI)] })).unwrap();
            let c = build_levi_civita(&m, CurvatureMode::Analytic).unwrap();
            (m, c)
        };
        let sphere: Arc<dyn MetricModel> = Arc::new(RoundSphere { n: 2, r: 1.0 });
        let eq = build(circle(PI / 2.0), sphere.clone(), &Equator { n: 1 }, DerivativeSource::Analytic);
        assert!(map_hessian(&eq).iter().all(|v| v.abs() < 1e-15));
        let lat = build(circle(PI / 3.0), sphere, &LatitudeCircle { theta0: PI / 3.0 }, DerivativeSource::Analytic);
        let tn = tension_norm(&lat);
        let want = 1.0 / 3f64.sqrt();
        assert!(tn.data().iter().all(|t| (t - want).abs() < 1e-14));
        assert!(!is_harmonic(&lat, 1e-6).harmonic);
    }

    #[test]
    fn grid_identity_on_sphere_has_second_order_residual() {
        let resid = |res: usize| {
            let f = build(
                sphere_domain(res, CurvatureMode::FiniteDifference(FdConfig::default())),
                Arc::new(RoundSphere { n: 2, r: 1.0 }),
                &IdentityMap { n: 2 },
                DerivativeSource::Grid(FdConfig::default()),
            );
            weitzenboeck_residual(&f, 1.0).unwrap().max_abs
        };
        let (a, b) = (resid(32), resid(64));
        let p = (a / b).log2();
        assert!((p - 2.0).abs() < 0.3, "{a} {b} {p}");
    }

    #[test]
    fn sphere_integral_check_is_approximate() {
        let f = build(sphere_domain(32, CurvatureMode::Analytic), Arc::new(RoundSphere { n: 2, r: 1.0 }), &IdentityMap { n: 2 }, DerivativeSource::Analytic);
        let r = integral_q_check(&f, 1e-6, 1e-6).unwrap();
        assert!(r.approximate && r.identity_holds);
        let g = ChartGrid::new(vec![Axis::closed(0.0, 1.0, 9, 0.0), Axis::periodic(0.0, 1.0, 8)]).unwrap();
        let m = MetricField::sample(&g, Arc::new(ConstantMetric { g: nalgebra::DMatrix::identity(2, 2), periods: vec![None, Some(1.0)] })).unwrap();
        let c = build_levi_civita(&m, CurvatureMode::Analytic).unwrap();
        let f = build((m, c), flat_target(), &IdentityMap { n: 2 }, DerivativeSource::Analytic);
        assert_eq!(integral_q_check(&f, 1e-6, 1e-6).unwrap_err(), GeomError::NotClosedManifold);
    }
}
