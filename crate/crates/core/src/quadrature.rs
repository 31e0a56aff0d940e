//! Integration over a chart with the Riemannian volume element.

use rayon::join;

use crate::error::{GeomError, Result};
use crate::field::{Role, TensorField};
use crate::metric::MetricField;

const LEAF: usize = 64;

/// Sum by a fixed binary tree, so the result does not depend on how the
/// work is scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    if values.len() > 1 << 14 {
        let (a, b) = join(|| pairwise_sum(&values[..mid]), || pairwise_sum(&values[mid..]));
        a + b
    } else {
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Which nodes a quadrature covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Region {
    /// Every node, trapezoid weights on closed axes.
    #[default]
    Full,
    /// Only nodes outside the axis margins.
    Interior,
}

/// `sum_k w_k sqrt(det g) f_k` over the selected nodes.
pub fn integrate_values(values: &[f64], metric: &MetricField, region: Region) -> f64 {
    let grid = metric.grid();
    let terms: Vec<f64> = (0..grid.node_count())
        .map(|k| {
            if region == Region::Interior && !grid.is_interior(k) {
                0.0
            } else {
                grid.quadrature_weight(k) * metric.volume_density(k) * values[k]
            }
        })
        .collect();
    pairwise_sum(&terms)
}

/// Integral of a scalar field with respect to `dv_g`.
pub fn integrate(f: &TensorField, metric: &MetricField) -> Result<f64> {
    integrate_in(f, metric, Region::Full)
}

pub fn integrate_in(f: &TensorField, metric: &MetricField, region: Region) -> Result<f64> {
    if f.role() != Role::Scalar {
        return Err(GeomError::ShapeMismatch("integrate expects a scalar field".into()));
    }
    Ok(integrate_values(f.data(), metric, region))
}

/// Squared pointwise norm with every index contracted through the metric.
pub fn norm_sq_at(t: &TensorField, metric: &MetricField, node: usize) -> f64 {
    let n = metric.dim();
    let v = t.at(node);
    match t.role() {
        Role::Scalar => v[0] * v[0],
        Role::OneForm | Role::Vector => {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let m = if t.role() == Role::OneForm { metric.ginv(node, i, j) } else { metric.g(node, i, j) };
                    acc += m * v[i] * v[j];
                }
            }
            acc
        }
        Role::Sym2 => {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            acc += metric.ginv(node, i, k) * metric.ginv(node, j, l) * v[i * n + j] * v[k * n + l];
                        }
                    }
                }
            }
            acc
        }
    }
}

pub fn pointwise_norm(t: &TensorField, metric: &MetricField) -> TensorField {
    let vals: Vec<f64> = (0..metric.grid().node_count()).map(|k| norm_sq_at(t, metric, k).max(0.0).sqrt()).collect();
    TensorField::from_data(metric.grid(), Role::Scalar, vals).expect("scalar shape")
}

/// `(integral of |T|_g^p dv_g)^(1/p)`.
pub fn lp_norm(t: &TensorField, metric: &MetricField, p: f64) -> Result<f64> {
    lp_norm_in(t, metric, p, Region::Full)
}

pub fn lp_norm_in(t: &TensorField, metric: &MetricField, p: f64, region: Region) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(GeomError::InvalidExponent(p));
    }
    let vals: Vec<f64> =
        (0..metric.grid().node_count()).map(|k| norm_sq_at(t, metric, k).max(0.0).powf(0.5 * p)).collect();
    Ok(integrate_values(&vals, metric, region).powf(1.0 / p))
}

/// L2 pairing of two fields of the same role, contracting through the metric.
pub fn l2_inner(a: &TensorField, b: &TensorField, metric: &MetricField, region: Region) -> Result<f64> {
    if a.role() != b.role() {
        return Err(GeomError::ShapeMismatch("pairing fields of different roles".into()));
    }
    let n = metric.dim();
    let vals: Vec<f64> = (0..metric.grid().node_count())
        .map(|k| {
            let (u, v) = (a.at(k), b.at(k));
            match a.role() {
                Role::Scalar => u[0] * v[0],
                Role::OneForm => {
                    let mut s = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            s += metric.ginv(k, i, j) * u[i] * v[j];
                        }
                    }
                    s
                }
                Role::Vector => {
                    let mut s = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            s += metric.g(k, i, j) * u[i] * v[j];
                        }
                    }
                    s
                }
                Role::Sym2 => {
                    let mut s = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            for p in 0..n {
                                for q in 0..n {
                                    s += metric.ginv(k, i, p) * metric.ginv(k, j, q) * u[i * n + j] * v[p * n + q];
                                }
                            }
                        }
                    }
                    s
                }
            }
        })
        .collect();
    Ok(integrate_values(&vals, metric, region))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, ChartGrid};
    use crate::metric::{ConstantMetric, RoundSphere};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn flat(n: usize) -> MetricField {
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, n), Axis::periodic(0.0, 2.0 * PI, n)]).unwrap();
        MetricField::sample(&g, Arc::new(ConstantMetric::flat_torus(&[2.0 * PI, 2.0 * PI]))).unwrap()
    }

    #[test]
    fn torus_volume_and_periodic_mean() {
        let m = flat(32);
        let one = TensorField::scalar(m.grid(), |_| 1.0);
        assert!((integrate(&one, &m).unwrap() - 4.0 * PI * PI).abs() < 1e-12);
        let s = TensorField::scalar(m.grid(), |x| x[0].sin());
        assert!(integrate(&s, &m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sphere_area_within_one_percent() {
        let eps = PI / 128.0;
        let g = ChartGrid::new(vec![Axis::closed(eps, PI - eps, 65, 1.0 / 16.0), Axis::periodic(0.0, 2.0 * PI, 64)])
            .unwrap();
        let m = MetricField::sample(&g, Arc::new(RoundSphere { n: 2, r: 1.0 })).unwrap();
        let area = integrate(&TensorField::scalar(&g, |_| 1.0), &m).unwrap();
        assert!((area - 4.0 * PI).abs() < 0.01 * 4.0 * PI);
        // trapezoid error for the integral of sin over [eps, pi - eps]
        let h = (PI - 2.0 * eps) / 64.0;
        let predicted = -2.0 * PI * (h * h / 12.0) * 2.0 * eps.cos();
        assert!((area - 4.0 * PI * eps.cos() - predicted).abs() < 1e-6);
    }

    #[test]
    fn lp_norms() {
        let m = flat(16);
        let g = TensorField::from_fn(m.grid(), Role::Sym2, |_| vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = lp_norm(&g, &m, 2.0).unwrap();
        assert!((v - 2f64.sqrt() * 2.0 * PI).abs() < 1e-12);
        assert_eq!(lp_norm(&TensorField::zeros(m.grid(), Role::OneForm), &m, 3.0).unwrap(), 0.0);
        assert_eq!(lp_norm(&g, &m, 0.5), Err(GeomError::InvalidExponent(0.5)));
    }

    #[test]
    fn pairwise_sum_is_schedule_independent() {
        let v: Vec<f64> = (0..100_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 + 1e-9 * i as f64).collect();
        let a = pairwise_sum(&v);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| pairwise_sum(&v));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
