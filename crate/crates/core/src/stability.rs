//! Jacobi operator `L = Lap + |phi|^2 + Ric(N, N)` of a hypersurface, its
//! spectrum, and the superharmonicity and rigidity checks.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result, SolverStats};
use crate::field::{Role, TensorField};
use crate::operators::{gradient, LaplaceBeltrami};
use crate::quadrature::pairwise_sum;
use crate::spectral::{lanczos, LanczosConfig};
use crate::submanifold::{Immersion, SecondFundamentalData};

#[derive(Debug, Clone)]
pub struct JacobiOperator<'a> {
    imm: &'a Immersion,
    lap: LaplaceBeltrami<'a>,
    potential: Vec<f64>,
    phi_norm_sq: Vec<f64>,
    ricci_normal: Vec<f64>,
}

impl<'a> JacobiOperator<'a> {
    pub fn new(imm: &'a Immersion, data: &SecondFundamentalData) -> Result<Self> {
        if imm.codimension() != 1 {
            return Err(GeomError::HypersurfaceOnly(imm.codimension()));
        }
        let nodes = imm.grid().node_count();
        let phi_norm_sq = data.phi_norm_sq_values().to_vec();
        let ricci_normal: Vec<f64> = (0..nodes).map(|k| imm.ambient_ricci_normal(k, 0)).collect();
        let potential = phi_norm_sq.iter().zip(&ricci_normal).map(|(a, b)| a + b).collect();
        let lap = LaplaceBeltrami::new(imm.induced_metric(), imm.fd())?;
        Ok(JacobiOperator { imm, lap, potential, phi_norm_sq, ricci_normal })
    }

    /// Adds a constant to the potential.
    pub fn shifted(mut self, c: f64) -> Self {
        self.potential.iter_mut().for_each(|v| *v += c);
        self
    }

    pub fn immersion(&self) -> &Immersion {
        self.imm
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn ricci_normal(&self) -> &[f64] {
        &self.ricci_normal
    }

    pub fn phi_norm_sq(&self) -> &[f64] {
        &self.phi_norm_sq
    }

    /// True when the ambient Ricci term is negative somewhere.
    pub fn ricci_negative(&self) -> bool {
        self.ricci_normal.iter().any(|v| *v < 0.0)
    }

    pub fn potential_range(&self) -> (f64, f64) {
        let lo = self.potential.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.potential.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.lap.apply(u)?;
        out.iter_mut().zip(&self.potential).zip(u).for_each(|((o, v), x)| *o += v * x);
        Ok(out)
    }

    pub fn laplacian(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.lap.apply(u)
    }

    /// `sum sqrt(g) u v` times the cell volume; the pairing in which the
    /// second-order flux Laplacian is symmetric.
    pub fn pairing(&self, u: &[f64], v: &[f64]) -> f64 {
        let metric = self.imm.induced_metric();
        let vals: Vec<f64> = (0..u.len()).map(|k| metric.volume_density(k) * u[k] * v[k]).collect();
        pairwise_sum(&vals) * metric.grid().cell_volume()
    }
}

pub fn jacobi_apply(op: &JacobiOperator, u: &TensorField) -> Result<TensorField> {
    if u.role() != Role::Scalar {
        return Err(GeomError::ShapeMismatch("Jacobi operator acts on scalars".into()));
    }
    TensorField::from_data(u.grid(), Role::Scalar, op.apply(u.data())?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilitySpectrum {
    /// Largest Ritz values, descending.
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub lambda_max: f64,
    pub stable: bool,
    pub tolerance: f64,
    pub potential_range: (f64, f64),
    /// `max |v - mean v| / max |v|` of the top eigenvector.
    pub top_mode_variation: f64,
    pub ricci_negative: bool,
}

/// Solves `(sigma - L) x = b` by Jacobi-preconditioned conjugate gradients
/// in the pairing inner product.
fn shifted_solve(op: &JacobiOperator, sigma: f64, pre: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let b_norm = op.pairing(b, b).sqrt();
    let mut x = vec![0.0; b.len()];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(pre).map(|(a, p)| a / p).collect();
    let mut p = z.clone();
    let mut rz = op.pairing(&r, &z);
    let max_iter = 50 * (b.len() as f64).sqrt() as usize + 100;
    for it in 0..max_iter {
        let lp = op.apply(&p)?;
        let ap: Vec<f64> = p.iter().zip(&lp).map(|(a, l)| sigma * a - l).collect();
        let pap = op.pairing(&p, &ap);
        if !(pap > 0.0) {
            return Err(GeomError::SolverDiverged(SolverStats {
                iterations: it,
                final_residual: op.pairing(&r, &r).sqrt() / b_norm,
                kernel_projection_applied: false,
            }));
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(a, q)| *a += alpha * q);
        r.iter_mut().zip(&ap).for_each(|(a, q)| *a -= alpha * q);
        let rn = op.pairing(&r, &r).sqrt();
        if rn <= 1e-13 * b_norm {
            return Ok(x);
        }
        z = r.iter().zip(pre).map(|(a, q)| a / q).collect();
        let rz_new = op.pairing(&r, &z);
        let beta = rz_new / rz;
        p.iter_mut().zip(&z).for_each(|(a, q)| *a = q + beta * *a);
        rz = rz_new;
    }
    Err(GeomError::SolverDiverged(SolverStats {
        iterations: max_iter,
        final_residual: op.pairing(&r, &r).sqrt() / b_norm,
        kernel_projection_applied: false,
    }))
}

/// Largest eigenvalues of `L`; stable iff `lambda_max <= tol` with
/// `tol = 10 h^2 (|V|_inf + |lambda_max(Lap)|) + 1e-8`.
///
/// Uses Lanczos on `(sigma - L)^-1` with `sigma = max V + 1`, which lies
/// above the spectrum because the flux Laplacian is non-positive.
pub fn stability_spectrum(op: &JacobiOperator, num_modes: usize, cfg: LanczosConfig) -> Result<StabilitySpectrum> {
    if !op.lap.is_flux_form() {
        return Err(GeomError::InvalidParameters("stability spectrum needs the second-order flux Laplacian".into()));
    }
    let dim = op.imm.grid().node_count();
    let num_modes = num_modes.max(1);
    let (_, vmax) = op.potential_range();
    let sigma = vmax + 1.0;
    let pre: Vec<f64> = op.lap.approximate_diagonal().iter().zip(&op.potential).map(|(d, v)| (sigma - d - v).max(1.0)).collect();
    let solve = |b: &[f64]| shifted_solve(op, sigma, &pre, b);
    let inner = |a: &[f64], b: &[f64]| op.pairing(a, b);
    let steps = (3 * num_modes + 20).min(dim);
    let pairs = lanczos(&solve, &inner, dim, LanczosConfig { steps, seed: cfg.seed })?;
    let mut top = Vec::new();
    for p in pairs.iter().rev().take(num_modes) {
        if !(p.value > 0.0) {
            break;
        }
        let lambda = sigma - 1.0 / p.value;
        let lv = op.apply(&p.vector)?;
        let res: Vec<f64> = lv.iter().zip(&p.vector).map(|(a, b)| a - lambda * b).collect();
        top.push((lambda, op.pairing(&res, &res).sqrt(), &p.vector));
    }
    if top.is_empty() || top[0].1 > 1e-5 * sigma {
        return Err(GeomError::SolverDiverged(SolverStats {
            iterations: steps,
            final_residual: top.first().map(|t| t.1).unwrap_or(f64::INFINITY),
            kernel_projection_applied: false,
        }));
    }
    let one = vec![1.0; dim];
    let lap_top = op.pairing(&one, &op.laplacian(&one)?) / op.pairing(&one, &one);
    let h = op.imm.grid().max_spacing();
    let vabs = op.potential.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tolerance = 10.0 * h * h * (vabs + lap_top.abs()) + 1e-8;
    let lambda_max = top[0].0;
    let v = top[0].2;
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let vm = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(StabilitySpectrum {
        eigenvalues: top.iter().map(|t| t.0).collect(),
        residuals: top.iter().map(|t| t.1).collect(),
        lambda_max,
        stable: lambda_max <= tolerance,
        tolerance,
        potential_range: op.potential_range(),
        top_mode_variation: v.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max) / vm,
        ricci_negative: op.ricci_negative(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperharmonicReport {
    pub min_abs_u: f64,
    /// `max |1/2 Lap u^2 - |du|^2 - u Lap u|`.
    pub identity_residual: f64,
    pub half_laplacian_u2_max: f64,
    pub lu_max: f64,
    /// `L u <= tol` at every node.
    pub hypothesis_holds: bool,
    /// `u Lap u <= -V u^2 + tol` at every node.
    pub inequality_holds: bool,
    /// `Lap u^2 <= tol` at every node.
    pub u2_superharmonic: bool,
    pub tolerance: f64,
}

pub fn superharmonic_check(op: &JacobiOperator, u: &TensorField, tol: f64) -> Result<SuperharmonicReport> {
    let grid = op.imm.grid();
    let metric = op.imm.induced_metric();
    let n = metric.dim();
    let ud = u.data();
    let (mut min_abs, mut at) = (f64::INFINITY, 0);
    for (k, v) in ud.iter().enumerate() {
        if v.abs() < min_abs {
            min_abs = v.abs();
            at = k;
        }
    }
    if min_abs <= tol {
        return Err(GeomError::ZeroCrossing(at));
    }
    let u2: Vec<f64> = ud.iter().map(|v| v * v).collect();
    let lap_u2 = op.laplacian(&u2)?;
    let lap_u = op.laplacian(ud)?;
    let lu = op.apply(ud)?;
    let du = gradient(u, op.imm.fd())?;
    let interior = grid.interior_nodes();
    let mut report = SuperharmonicReport {
        min_abs_u: min_abs,
        identity_residual: 0.0,
        half_laplacian_u2_max: f64::NEG_INFINITY,
        lu_max: f64::NEG_INFINITY,
        hypothesis_holds: true,
        inequality_holds: true,
        u2_superharmonic: true,
        tolerance: tol,
    };
    for &k in &interior {
        let mut grad_sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                grad_sq += metric.ginv(k, i, j) * du.at(k)[i] * du.at(k)[j];
            }
        }
        let half = 0.5 * lap_u2[k];
        report.identity_residual = report.identity_residual.max((half - grad_sq - ud[k] * lap_u[k]).abs());
        report.half_laplacian_u2_max = report.half_laplacian_u2_max.max(half);
        report.lu_max = report.lu_max.max(lu[k]);
        report.hypothesis_holds &= lu[k] <= tol;
        report.inequality_holds &= ud[k] * lap_u[k] <= -op.potential[k] * u2[k] + tol;
        report.u2_superharmonic &= lap_u2[k] <= tol;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityReport {
    pub u_constant: bool,
    pub u_variation: f64,
    /// `L u <= tol` everywhere.
    pub hypothesis_holds: bool,
    pub max_phi_norm: f64,
    pub max_abs_ricci_normal: f64,
    pub max_potential: f64,
    /// `phi = 0` and `Ric(N, N) = 0`.
    pub conclusion_holds: bool,
    /// The conclusion holds whenever the hypothesis does.
    pub consistent: bool,
    pub note: String,
}

/// Conclusion of the rigidity theorems for a constant test function `u`.
pub fn rigidity_report(op: &JacobiOperator, u: &TensorField, tol: f64) -> Result<RigidityReport> {
    let grid = op.imm.grid();
    let ud = u.data();
    let mean = ud.iter().sum::<f64>() / ud.len() as f64;
    let u_variation = ud.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let lu = op.apply(ud)?;
    let interior = grid.interior_nodes();
    let hypothesis_holds = interior.iter().all(|&k| lu[k] <= tol);
    let max_phi_norm = interior.iter().map(|&k| op.phi_norm_sq[k].sqrt()).fold(0.0, f64::max);
    let max_abs_ricci_normal = interior.iter().map(|&k| op.ricci_normal[k].abs()).fold(0.0, f64::max);
    let max_potential = interior.iter().map(|&k| op.potential[k]).fold(f64::NEG_INFINITY, f64::max);
    let conclusion_holds = max_phi_norm <= tol && max_abs_ricci_normal <= tol;
    Ok(RigidityReport {
        u_constant: u_variation <= tol * mean.abs().max(1.0),
        u_variation,
        hypothesis_holds,
        max_phi_norm,
        max_abs_ricci_normal,
        max_potential,
        conclusion_holds,
        consistent: !hypothesis_holds || conclusion_holds,
        note: "compact grid: the L1 condition on u is vacuous and parabolicity is not checked".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulas::{Equator, GraphHypersurface, SphereProductImmersion};
    use crate::grid::{Axis, ChartGrid};
    use crate::metric::{ConstantMetric, MetricModel, RoundSphere};
    use crate::sampled::DerivativeSource;
    use crate::stencil::FdConfig;
    use crate::submanifold::second_fundamental_form;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn torus2(n: usize) -> ChartGrid {
        ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, n), Axis::periodic(0.0, 2.0 * PI, n)]).unwrap()
    }

    fn equator(n: usize) -> Immersion {
        let eps = PI / 128.0;
        let g = ChartGrid::new(vec![Axis::closed(eps, PI - eps, n + 1, 1.0 / 16.0), Axis::periodic(0.0, 2.0 * PI, n)]).unwrap();
        Immersion::new(&g, Arc::new(RoundSphere { n: 3, r: 1.0 }), &Equator { n: 2 }, DerivativeSource::Analytic, FdConfig::default())
            .unwrap()
    }

    fn clifford(n: usize) -> Immersion {
        Immersion::new(
            &torus2(n),
            Arc::new(RoundSphere { n: 3, r: 1.0 }),
            &SphereProductImmersion::minimal(1, 1),
            DerivativeSource::Reference,
            FdConfig::default(),
        )
        .unwrap()
    }

    fn flat_subtorus(n: usize) -> Immersion {
        let ambient: Arc<dyn MetricModel> = Arc::new(ConstantMetric::flat_torus(&[2.0 * PI; 3]));
        Immersion::new(&torus2(n), ambient, &GraphHypersurface { eps: 0.0 }, DerivativeSource::Analytic, FdConfig::default())
            .unwrap()
    }

    fn ones(imm: &Immersion) -> TensorField {
        TensorField::scalar(imm.grid(), |_| 1.0)
    }

    #[test]
    fn equator_is_unstable_with_constant_top_mode() {
        let imm = equator(32);
        let data = second_fundamental_form(&imm).unwrap();
        let op = JacobiOperator::new(&imm, &data).unwrap();
        let lu = jacobi_apply(&op, &ones(&imm)).unwrap();
        assert!(lu.data().iter().all(|v| (v - 2.0).abs() < 1e-12));
        let spec = stability_spectrum(&op, 3, LanczosConfig::default()).unwrap();
        assert!((spec.lambda_max - 2.0).abs() < spec.tolerance, "{spec:?}");
        assert!(!spec.stable && spec.top_mode_variation < 1e-6);
        let sh = superharmonic_check(&op, &ones(&imm), 1e-10).unwrap();
        assert!(!sh.hypothesis_holds);
        let rig = rigidity_report(&op, &ones(&imm), 1e-10).unwrap();
        assert!(rig.u_constant && !rig.hypothesis_holds && rig.consistent);
        assert!((rig.max_potential - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clifford_torus_top_eigenvalue_is_four() {
        let imm = clifford(32);
        let data = second_fundamental_form(&imm).unwrap();
        let op = JacobiOperator::new(&imm, &data).unwrap();
        let lu = jacobi_apply(&op, &ones(&imm)).unwrap();
        assert!(lu.data().iter().all(|v| (v - 4.0).abs() < 1e-4));
        let spec = stability_spectrum(&op, 2, LanczosConfig::default()).unwrap();
        assert!((spec.lambda_max - 4.0).abs() < spec.tolerance, "{spec:?}");
        assert!(!spec.stable);
        let rig = rigidity_report(&op, &ones(&imm), 1e-8).unwrap();
        assert!(!rig.hypothesis_holds && rig.consistent);
    }

    #[test]
    fn flat_subtorus_is_stable_and_rigid() {
        let imm = flat_subtorus(32);
        let data = second_fundamental_form(&imm).unwrap();
        let op = JacobiOperator::new(&imm, &data).unwrap();
        let spec = stability_spectrum(&op, 2, LanczosConfig::default()).unwrap();
        assert!(spec.lambda_max.abs() < 1e-8 && spec.stable);
        let sh = superharmonic_check(&op, &ones(&imm), 1e-10).unwrap();
        assert!(sh.hypothesis_holds && sh.u2_superharmonic && sh.inequality_holds);
        let rig = rigidity_report(&op, &ones(&imm), 1e-10).unwrap();
        assert!(rig.hypothesis_holds && rig.conclusion_holds && rig.consistent);
        let u = TensorField::scalar(imm.grid(), |x| x[0].sin() + 2.0);
        let lu = jacobi_apply(&op, &u).unwrap();
        let lap = crate::operators::laplace_beltrami(&u, imm.induced_metric(), imm.fd()).unwrap();
        assert_eq!(lu.data(), lap.data());
    }

    #[test]
    fn operator_is_symmetric_and_shifts_exactly() {
        let imm = equator(24);
        let data = second_fundamental_form(&imm).unwrap();
        let op = JacobiOperator::new(&imm, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nodes = imm.grid().node_count();
        let u: Vec<f64> = (0..nodes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..nodes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = op.pairing(&op.apply(&u).unwrap(), &v);
        let b = op.pairing(&u, &op.apply(&v).unwrap());
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        let base = stability_spectrum(&op, 3, LanczosConfig::default()).unwrap();
        let shifted = stability_spectrum(&op.clone().shifted(-0.75), 3, LanczosConfig::default()).unwrap();
        for (x, y) in base.eigenvalues.iter().zip(&shifted.eigenvalues) {
            assert!((x - 0.75 - y).abs() < 1e-8);
        }
    }

    #[test]
    fn product_rule_identity_decays() {
        let run = |n| {
            let imm = clifford(n);
            let data = second_fundamental_form(&imm).unwrap();
            let op = JacobiOperator::new(&imm, &data).unwrap();
            let u = TensorField::scalar(imm.grid(), |x| 2.0 + x[0].sin() * x[1].cos());
            superharmonic_check(&op, &u, 1e-10).unwrap().identity_residual
        };
        let (a, b) = (run(32), run(64));
        assert!(((a / b).log2() - 2.0).abs() < 0.3, "{a} {b}");
    }

    #[test]
    fn zero_crossing_is_rejected() {
        let imm = flat_subtorus(16);
        let data = second_fundamental_form(&imm).unwrap();
        let op = JacobiOperator::new(&imm, &data).unwrap();
        let u = TensorField::scalar(imm.grid(), |x| x[0].sin());
        assert!(matches!(superharmonic_check(&op, &u, 1e-10), Err(GeomError::ZeroCrossing(_))));
    }
}
