//! Differential operators on chart grids: Laplace-Beltrami, gradient,
//! covariant derivatives, divergence and the Lie derivative of the metric.

use crate::curvature::CurvatureBundle;
use crate::error::{GeomError, Result};
use crate::field::{Role, TensorField};
use crate::metric::MetricField;
use crate::stencil::{Differ, FdConfig};

fn expect_role(t: &TensorField, role: Role) -> Result<()> {
    if t.role() != role {
        return Err(GeomError::ShapeMismatch(format!("expected {role:?}, got {:?}", t.role())));
    }
    Ok(())
}

/// The Laplace-Beltrami operator `Delta f = trace_g Hess f` (non-positive
/// spectrum), with coefficients precomputed for repeated application.
///
/// Order 2 uses the compact flux form with face-averaged `sqrt(g) g^aa`
/// and no flux through closed-axis ends; it is symmetric and non-positive
/// in the pairing `sum sqrt(g) u v` on fully periodic grids. Higher orders
/// use `g^ij d_i d_j f + (1/sqrt g) d_i(sqrt g g^ij) d_j f`.
#[derive(Debug, Clone)]
pub struct LaplaceBeltrami<'m> {
    metric: &'m MetricField,
    differ: Differ<'m>,
    /// `sqrt(g) g^ij` per node, `n*n` block.
    coeff: Vec<f64>,
    /// `(1/sqrt g) d_i(sqrt g g^ij)` per node, `n` entries indexed by `j`.
    drift: Vec<f64>,
}

impl<'m> LaplaceBeltrami<'m> {
    pub fn new(metric: &'m MetricField, cfg: FdConfig) -> Result<Self> {
        let grid = metric.grid();
        let differ = Differ::new(grid, cfg)?;
        let n = metric.dim();
        let nn = n * n;
        let half = if cfg.order == 2 { 1 } else { cfg.order / 2 };
        for a in 0..n {
            differ.check_axis(a, half)?;
        }
        let mut coeff = vec![0.0; grid.node_count() * nn];
        for k in 0..grid.node_count() {
            let v = metric.volume_density(k);
            for i in 0..n {
                for j in 0..n {
                    coeff[k * nn + i * n + j] = v * metric.ginv(k, i, j);
                }
            }
        }
        let mut drift = Vec::new();
        if cfg.order > 2 {
            drift = vec![0.0; grid.node_count() * n];
            for i in 0..n {
                let d = differ.d1(&coeff, nn, i)?;
                for k in 0..grid.node_count() {
                    let v = metric.volume_density(k);
                    for j in 0..n {
                        drift[k * n + j] += d[k * nn + i * n + j] / v;
                    }
                }
            }
        }
        Ok(LaplaceBeltrami { metric, differ, coeff, drift })
    }

    pub fn metric(&self) -> &MetricField {
        self.metric
    }

    /// True for the second-order flux form, which is symmetric and
    /// non-positive in `sum sqrt(g) u v`.
    pub fn is_flux_form(&self) -> bool {
        self.differ.config().order == 2
    }

    /// Diagonal of the face-averaged second-derivative part (cross terms
    /// and drift omitted).
    pub fn approximate_diagonal(&self) -> Vec<f64> {
        let grid = self.metric.grid();
        let n = self.metric.dim();
        let nn = n * n;
        (0..grid.node_count())
            .map(|k| {
                let mut d = 0.0;
                for a in 0..n {
                    let h2 = grid.spacing(a) * grid.spacing(a);
                    let ck = self.coeff[k * nn + a * n + a];
                    for off in [1, -1] {
                        match grid.shift(k, a, off) {
                            Some(p) => d -= 0.5 * (ck + self.coeff[p * nn + a * n + a]) / h2,
                            None if !self.is_flux_form() => d -= ck / h2,
                            None => {}
                        }
                    }
                }
                d / self.metric.volume_density(k)
            })
            .collect()
    }

    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        let grid = self.metric.grid();
        if f.len() != grid.node_count() {
            return Err(GeomError::ShapeMismatch("laplacian input length".into()));
        }
        if self.differ.config().order == 2 {
            self.apply_flux(f)
        } else {
            self.apply_expanded(f)
        }
    }

    fn apply_flux(&self, f: &[f64]) -> Result<Vec<f64>> {
        let grid = self.metric.grid();
        let n = self.metric.dim();
        let nn = n * n;
        let mut out = vec![0.0; f.len()];
        for a in 0..n {
            let h2 = grid.spacing(a) * grid.spacing(a);
            for (k, o) in out.iter_mut().enumerate() {
                let ck = self.coeff[k * nn + a * n + a];
                let mut acc = 0.0;
                if let Some(p) = grid.shift(k, a, 1) {
                    acc += 0.5 * (ck + self.coeff[p * nn + a * n + a]) * (f[p] - f[k]);
                }
                if let Some(m) = grid.shift(k, a, -1) {
                    acc -= 0.5 * (ck + self.coeff[m * nn + a * n + a]) * (f[k] - f[m]);
                }
                *o += acc / h2;
            }
        }
        let cross = (0..n).any(|a| (0..n).any(|b| a != b && self.coeff.chunks(nn).any(|c| c[a * n + b] != 0.0)));
        if cross {
            let grads: Vec<Vec<f64>> = (0..n).map(|b| self.differ.d1(f, 1, b)).collect::<Result<_>>()?;
            for a in 0..n {
                let mut q = vec![0.0; f.len()];
                for b in (0..n).filter(|&b| b != a) {
                    for k in 0..f.len() {
                        q[k] += self.coeff[k * nn + a * n + b] * grads[b][k];
                    }
                }
                let dq = self.differ.d1(&q, 1, a)?;
                for k in 0..f.len() {
                    out[k] += dq[k];
                }
            }
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o /= self.metric.volume_density(k);
        }
        Ok(out)
    }

    fn apply_expanded(&self, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.metric.dim();
        let nn = n * n;
        let grads: Vec<Vec<f64>> = (0..n).map(|b| self.differ.d1(f, 1, b)).collect::<Result<_>>()?;
        let mut out = vec![0.0; f.len()];
        for i in 0..n {
            for j in i..n {
                let d = if i == j { self.differ.d2(f, 1, i)? } else { self.differ.d1(&grads[j], 1, i)? };
                let mult = if i == j { 1.0 } else { 2.0 };
                for k in 0..f.len() {
                    out[k] += mult * self.coeff[k * nn + i * n + j] / self.metric.volume_density(k) * d[k];
                }
            }
        }
        for k in 0..f.len() {
            for j in 0..n {
                out[k] += self.drift[k * n + j] * grads[j][k];
            }
        }
        Ok(out)
    }
}

/// `Delta f` for a scalar field.
pub fn laplace_beltrami(f: &TensorField, metric: &MetricField, cfg: FdConfig) -> Result<TensorField> {
    expect_role(f, Role::Scalar)?;
    let out = LaplaceBeltrami::new(metric, cfg)?.apply(f.data())?;
    TensorField::from_data(metric.grid(), Role::Scalar, out)
}

/// Differential `df` of a scalar field, as a one-form.
pub fn gradient(f: &TensorField, cfg: FdConfig) -> Result<TensorField> {
    expect_role(f, Role::Scalar)?;
    let grid = f.grid();
    let n = grid.dim();
    let d = Differ::new(grid, cfg)?;
    let parts: Vec<Vec<f64>> = (0..n).map(|a| d.d1(f.data(), 1, a)).collect::<Result<_>>()?;
    let mut data = vec![0.0; grid.node_count() * n];
    for k in 0..grid.node_count() {
        for a in 0..n {
            data[k * n + a] = parts[a][k];
        }
    }
    TensorField::from_data(grid, Role::OneForm, data)
}

/// Index lowering `xi_j = g_jk xi^k`.
pub fn lower(xi: &TensorField, metric: &MetricField) -> Result<TensorField> {
    expect_role(xi, Role::Vector)?;
    let n = metric.dim();
    let mut data = vec![0.0; xi.data().len()];
    for k in 0..metric.grid().node_count() {
        let v = xi.at(k);
        for j in 0..n {
            data[k * n + j] = (0..n).map(|i| metric.g(k, j, i) * v[i]).sum();
        }
    }
    TensorField::from_data(metric.grid(), Role::OneForm, data)
}

/// Index raising `theta^j = g^jk theta_k`.
pub fn raise(theta: &TensorField, metric: &MetricField) -> Result<TensorField> {
    expect_role(theta, Role::OneForm)?;
    let n = metric.dim();
    let mut data = vec![0.0; theta.data().len()];
    for k in 0..metric.grid().node_count() {
        let v = theta.at(k);
        for j in 0..n {
            data[k * n + j] = (0..n).map(|i| metric.ginv(k, j, i) * v[i]).sum();
        }
    }
    TensorField::from_data(metric.grid(), Role::Vector, data)
}

/// `trace_g T = g^ij T_ij` of a sym2 field.
pub fn trace_g(t: &TensorField, metric: &MetricField) -> Result<TensorField> {
    expect_role(t, Role::Sym2)?;
    let n = metric.dim();
    let data = (0..metric.grid().node_count())
        .map(|k| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += metric.ginv(k, i, j) * t.get2(k, i, j);
                }
            }
            s
        })
        .collect();
    TensorField::from_data(metric.grid(), Role::Scalar, data)
}

/// Symmetrized covariant derivative `(1/2)(D_i theta_j + D_j theta_i)`
/// of a one-form, i.e. `(1/2) L_{theta#} g`.
pub fn symmetric_derivative(theta: &TensorField, curv: &CurvatureBundle, cfg: FdConfig) -> Result<TensorField> {
    expect_role(theta, Role::OneForm)?;
    let grid = theta.grid();
    let n = grid.dim();
    let d = Differ::new(grid, cfg)?;
    let parts: Vec<Vec<f64>> = (0..n).map(|a| d.d1(theta.data(), n, a)).collect::<Result<_>>()?;
    let mut data = vec![0.0; grid.node_count() * n * n];
    for k in 0..grid.node_count() {
        let t = theta.at(k);
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.5 * (parts[i][k * n + j] + parts[j][k * n + i]);
                for m in 0..n {
                    v -= curv.gamma(k, m, i, j) * t[m];
                }
                data[k * n * n + i * n + j] = v;
            }
        }
    }
    TensorField::sym2_symmetrized(grid, data)
}

/// `(L_xi g)_ij = D_i xi_j + D_j xi_i` with `xi_j = g_jk xi^k`.
pub fn lie_derivative_metric(
    xi: &TensorField,
    metric: &MetricField,
    curv: &CurvatureBundle,
    cfg: FdConfig,
) -> Result<TensorField> {
    let flat = lower(xi, metric)?;
    Ok(symmetric_derivative(&flat, curv, cfg)?.scaled(2.0))
}

/// Covariant derivative `D_i T_jk` of a sym2 field, stored per node at
/// `(i*n + j)*n + k`.
pub fn covariant_derivative_sym2(t: &TensorField, curv: &CurvatureBundle, cfg: FdConfig) -> Result<Vec<f64>> {
    expect_role(t, Role::Sym2)?;
    let grid = t.grid();
    let n = grid.dim();
    let nn = n * n;
    let d = Differ::new(grid, cfg)?;
    let parts: Vec<Vec<f64>> = (0..n).map(|a| d.d1(t.data(), nn, a)).collect::<Result<_>>()?;
    let mut out = vec![0.0; grid.node_count() * nn * n];
    for k in 0..grid.node_count() {
        let tk = t.at(k);
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let mut v = parts[i][k * nn + j * n + l];
                    for m in 0..n {
                        v -= curv.gamma(k, m, i, j) * tk[m * n + l] + curv.gamma(k, m, i, l) * tk[j * n + m];
                    }
                    out[k * nn * n + (i * n + j) * n + l] = v;
                }
            }
        }
    }
    Ok(out)
}

/// `(delta T)_j = -g^ik D_i T_kj`.
pub fn divergence_sym2(
    t: &TensorField,
    metric: &MetricField,
    curv: &CurvatureBundle,
    cfg: FdConfig,
) -> Result<TensorField> {
    let dt = covariant_derivative_sym2(t, curv, cfg)?;
    let grid = metric.grid();
    let n = metric.dim();
    let mut data = vec![0.0; grid.node_count() * n];
    for k in 0..grid.node_count() {
        for j in 0..n {
            let mut v = 0.0;
            for i in 0..n {
                for l in 0..n {
                    v -= metric.ginv(k, i, l) * dt[k * n * n * n + (i * n + l) * n + j];
                }
            }
            data[k * n + j] = v;
        }
    }
    TensorField::from_data(grid, Role::OneForm, data)
}

/// `delta theta = -div theta# = -g^ij D_i theta_j` for a one-form.
pub fn codifferential(theta: &TensorField, metric: &MetricField, curv: &CurvatureBundle, cfg: FdConfig) -> Result<TensorField> {
    let s = symmetric_derivative(theta, curv, cfg)?;
    let tr = trace_g(&s, metric)?;
    Ok(tr.scaled(-1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{build_levi_civita, CurvatureMode};
    use crate::grid::{Axis, ChartGrid};
    use crate::metric::{ConstantMetric, MetricModel, RoundSphere};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn torus(n: usize) -> MetricField {
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, n), Axis::periodic(0.0, 2.0 * PI, n)]).unwrap();
        MetricField::sample(&g, Arc::new(ConstantMetric::flat_torus(&[2.0 * PI, 2.0 * PI]))).unwrap()
    }

    fn sphere(res: usize) -> MetricField {
        let eps = PI / 128.0;
        let g = ChartGrid::new(vec![Axis::closed(eps, PI - eps, res + 1, 1.0 / 16.0), Axis::periodic(0.0, 2.0 * PI, res)])
            .unwrap();
        MetricField::sample(&g, Arc::new(RoundSphere { n: 2, r: 1.0 })).unwrap()
    }

    fn slope(e1: f64, e2: f64) -> f64 {
        (e1 / e2).log2()
    }

    #[test]
    fn laplacian_of_constant_is_exactly_zero() {
        for order in [2, 4] {
            for m in [torus(16), sphere(32)] {
                let c = TensorField::scalar(m.grid(), |_| 3.25);
                let l = laplace_beltrami(&c, &m, FdConfig::order(order)).unwrap();
                assert!(l.data().iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn flat_laplacian_of_sine() {
        let m = torus(128);
        let f = TensorField::scalar(m.grid(), |x| x[0].sin());
        let l = laplace_beltrami(&f, &m, FdConfig::default()).unwrap();
        let err = (0..m.grid().node_count()).map(|k| (l.data()[k] + f.data()[k]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    fn sphere_eigen_error(order: usize, res: usize) -> f64 {
        let m = sphere(res);
        let f = TensorField::scalar(m.grid(), |x| x[0].cos());
        let l = laplace_beltrami(&f, &m, FdConfig::order(order)).unwrap();
        m.grid().interior_nodes().into_iter().map(|k| (l.data()[k] + 2.0 * f.data()[k]).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn sphere_degree_one_harmonic_converges() {
        for order in [2usize, 4] {
            let (a, b, c) = (sphere_eigen_error(order, 32), sphere_eigen_error(order, 64), sphere_eigen_error(order, 128));
            assert!(slope(a, b) > order as f64 - 0.3 && slope(b, c) > order as f64 - 0.3, "order {order}: {a} {b} {c}");
        }
    }

    #[test]
    fn flux_laplacian_is_symmetric_on_periodic_grids() {
        #[derive(Debug)]
        struct Conformal;
        impl MetricModel for Conformal {
            fn dim(&self) -> usize {
                2
            }
            fn jet(&self, x: &[f64]) -> crate::metric::MetricJet {
                crate::metric::jet_by_differences(self, x, 1e-3)
            }
            fn metric(&self, x: &[f64]) -> nalgebra::DMatrix<f64> {
                let e = (0.3 * x[0].sin() * x[1].cos()).exp();
                nalgebra::DMatrix::from_row_slice(2, 2, &[e, 0.2 * e * x[0].cos(), 0.2 * e * x[0].cos(), 1.5 * e])
            }
            fn periods(&self) -> Vec<Option<f64>> {
                vec![Some(2.0 * PI); 2]
            }
            fn label(&self) -> String {
                "conformal".into()
            }
        }
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, 24), Axis::periodic(0.0, 2.0 * PI, 20)]).unwrap();
        let m = MetricField::sample(&g, Arc::new(Conformal)).unwrap();
        let op = LaplaceBeltrami::new(&m, FdConfig::default()).unwrap();
        let u: Vec<f64> = (0..g.node_count()).map(|k| ((k * 37 % 101) as f64).sin()).collect();
        let v: Vec<f64> = (0..g.node_count()).map(|k| ((k * 53 % 97) as f64).cos()).collect();
        let (lu, lv) = (op.apply(&u).unwrap(), op.apply(&v).unwrap());
        let pair = |a: &[f64], b: &[f64]| (0..a.len()).map(|k| m.volume_density(k) * a[k] * b[k]).sum::<f64>();
        let (x, y) = (pair(&lu, &v), pair(&u, &lv));
        assert!((x - y).abs() < 1e-10 * x.abs().max(1.0), "{x} {y}");
        assert!(pair(&lu, &u) <= 0.0);
        let total: f64 = pair(&lu, &vec![1.0; u.len()]);
        assert!(total.abs() < 1e-9);
    }

    #[test]
    fn divergence_of_metric_vanishes() {
        let m = sphere(32);
        let c = build_levi_civita(&m, CurvatureMode::Analytic).unwrap();
        let g = TensorField::from_data(m.grid(), Role::Sym2, m.components().to_vec()).unwrap();
        let d = divergence_sym2(&g, &m, &c, FdConfig::default()).unwrap();
        assert!(d.max_abs_interior() < 1e-12);
    }

    #[test]
    fn flat_divergence_and_lie_derivative() {
        let m = torus(128);
        let c = build_levi_civita(&m, CurvatureMode::Analytic).unwrap();
        let cfg = FdConfig::default();
        let t = TensorField::from_fn(m.grid(), Role::Sym2, |x| vec![x[0].cos(), 0.0, 0.0, -x[0].cos()]).unwrap();
        let d = divergence_sym2(&t, &m, &c, cfg).unwrap();
        let h2 = (2.0 * PI / 128.0f64).powi(2);
        for k in 0..m.grid().node_count() {
            let x = m.grid().coord(k);
            assert!((d.at(k)[0] - x[0].sin()).abs() < h2);
            assert_eq!(d.at(k)[1], 0.0);
        }
        let xi = TensorField::from_fn(m.grid(), Role::Vector, |x| vec![x[0].sin(), 0.0]).unwrap();
        let l = lie_derivative_metric(&xi, &m, &c, cfg).unwrap();
        for k in 0..m.grid().node_count() {
            let x = m.grid().coord(k);
            assert!((l.get2(k, 0, 0) - 2.0 * x[0].cos()).abs() < 2.0 * h2);
            assert_eq!([l.get2(k, 0, 1), l.get2(k, 1, 1)], [0.0, 0.0]);
        }
        let zero = lie_derivative_metric(&TensorField::zeros(m.grid(), Role::Vector), &m, &c, cfg).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    fn killing_residual(res: usize) -> f64 {
        let m = sphere(res);
        let c = build_levi_civita(&m, CurvatureMode::Analytic).unwrap();
        // rotation about the x-axis
        let xi = TensorField::from_fn(m.grid(), Role::Vector, |x| {
            vec![-x[1].sin(), -x[0].cos() / x[0].sin() * x[1].cos()]
        })
        .unwrap();
        let l = lie_derivative_metric(&xi, &m, &c, FdConfig::default()).unwrap();
        let norm = crate::quadrature::pointwise_norm(&l, &m);
        norm.max_abs_interior()
    }

    #[test]
    fn killing_field_annihilates_metric_at_second_order() {
        let (a, b, c) = (killing_residual(32), killing_residual(64), killing_residual(128));
        assert!(slope(a, b) > 1.7 && slope(b, c) > 1.7, "{a} {b} {c}");
    }
}
