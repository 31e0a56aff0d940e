//! Maps between charts sampled on a grid together with their first and
//! second coordinate derivatives.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::grid::ChartGrid;
use crate::stencil::{Differ, FdConfig};

/// Value, first and second derivatives of a map `R^n -> R^m` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct MapJet {
    pub value: Vec<f64>,
    /// `d_i f^a` at `i*m + a`.
    pub d1: Vec<f64>,
    /// `d_i d_j f^a` at `(i*n + j)*m + a`.
    pub d2: Vec<f64>,
}

/// A smooth map given pointwise in chart coordinates.
pub trait PointMap: Send + Sync + fmt::Debug {
    fn source_dim(&self) -> usize;
    fn target_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;

    /// Closed-form jet, when available.
    fn jet(&self, _x: &[f64]) -> Option<MapJet> {
        None
    }

    fn label(&self) -> String;
}

/// Where map derivatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    /// The map's closed-form jet.
    Analytic,
    /// Sixth-order central differences of the pointwise map with a fixed
    /// step, accurate to about `1e-10` in second derivatives; independent of the grid.
    Reference,
    /// Finite differences of the sampled node values.
    Grid(FdConfig),
}

// Three steps stay inside the polar cut-off of the sphere chart.
const REF_STEP: f64 = 8e-3;
const W1: [(f64, f64); 3] = [(1.0, 45.0 / 60.0), (2.0, -9.0 / 60.0), (3.0, 1.0 / 60.0)];
const W2: [(f64, f64); 4] = [(0.0, -49.0 / 18.0), (1.0, 3.0 / 2.0), (2.0, -3.0 / 20.0), (3.0, 1.0 / 90.0)];

fn unwrap_to(v: f64, centre: f64, period: Option<f64>) -> f64 {
    match period {
        Some(p) => v - p * ((v - centre) / p).round(),
        None => v,
    }
}

/// Jet of `map` at `x` by sixth-order central differences with step `step`.
/// Components with a period are unwrapped towards the centre value.
pub fn reference_jet(map: &dyn PointMap, x: &[f64], step: f64, periods: &[Option<f64>]) -> MapJet {
    let n = map.source_dim();
    let m = map.target_dim();
    let centre = map.eval(x);
    let at = |shift: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(a, d) in shift {
            y[a] += d;
        }
        let v = map.eval(&y);
        (0..m).map(|c| unwrap_to(v[c], centre[c], periods[c])).collect::<Vec<f64>>()
    };
    let mut d1 = vec![0.0; n * m];
    let mut d2 = vec![0.0; n * n * m];
    for a in 0..n {
        for &(k, w) in &W1 {
            let (p, q) = (at(&[(a, k * step)]), at(&[(a, -k * step)]));
            for c in 0..m {
                d1[a * m + c] += w * (p[c] - q[c]) / step;
            }
        }
        for c in 0..m {
            d2[(a * n + a) * m + c] = W2[0].1 * centre[c];
        }
        for &(k, w) in &W2[1..] {
            let (p, q) = (at(&[(a, k * step)]), at(&[(a, -k * step)]));
            for c in 0..m {
                d2[(a * n + a) * m + c] += w * (p[c] + q[c]);
            }
        }
        for c in 0..m {
            d2[(a * n + a) * m + c] /= step * step;
        }
        for b in a + 1..n {
            let mut acc = vec![0.0; m];
            for &(k, wk) in &W1 {
                for &(l, wl) in &W1 {
                    let (ks, ls) = (k * step, l * step);
                    let pp = at(&[(a, ks), (b, ls)]);
                    let pm = at(&[(a, ks), (b, -ls)]);
                    let mp = at(&[(a, -ks), (b, ls)]);
                    let mm = at(&[(a, -ks), (b, -ls)]);
                    for c in 0..m {
                        acc[c] += wk * wl * (pp[c] - pm[c] - mp[c] + mm[c]);
                    }
                }
            }
            for c in 0..m {
                let v = acc[c] / (step * step);
                d2[(a * n + b) * m + c] = v;
                d2[(b * n + a) * m + c] = v;
            }
        }
    }
    MapJet { value: centre, d1, d2 }
}

/// A map sampled at every node of its source grid.
#[derive(Debug, Clone)]
pub struct SampledMap {
    grid: ChartGrid,
    n: usize,
    m: usize,
    values: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    source: DerivativeSource,
}

impl SampledMap {
    /// Samples `map` on `grid`. Target components with a period are reduced
    /// to `[0, period)` and differenced across the seam.
    pub fn sample(
        map: &dyn PointMap,
        grid: &ChartGrid,
        source: DerivativeSource,
        periods: &[Option<f64>],
    ) -> Result<Self> {
        let n = map.source_dim();
        let m = map.target_dim();
        if n != grid.dim() || periods.len() != m {
            return Err(GeomError::ShapeMismatch(format!("map {} on a {}-dim grid", map.label(), grid.dim())));
        }
        let nodes = grid.node_count();
        let jets: Vec<MapJet> = match source {
            DerivativeSource::Analytic => (0..nodes)
                .into_par_iter()
                .map(|k| {
                    map.jet(&grid.coord(k))
                        .ok_or_else(|| GeomError::InvalidParameters(format!("{} has no closed-form jet", map.label())))
                })
                .collect::<Result<_>>()?,
            DerivativeSource::Reference => {
                (0..nodes).into_par_iter().map(|k| reference_jet(map, &grid.coord(k), REF_STEP, periods)).collect()
            }
            DerivativeSource::Grid(cfg) => return Self::from_grid_values(map, grid, cfg, periods),
        };
        let mut values = Vec::with_capacity(nodes * m);
        let mut d1 = Vec::with_capacity(nodes * n * m);
        let mut d2 = Vec::with_capacity(nodes * n * n * m);
        for j in jets {
            values.extend(j.value.iter().enumerate().map(|(c, v)| wrap(*v, periods[c])));
            d1.extend(j.d1);
            d2.extend(j.d2);
        }
        Ok(SampledMap { grid: grid.clone(), n, m, values, d1, d2, source })
    }

    fn from_grid_values(map: &dyn PointMap, grid: &ChartGrid, cfg: FdConfig, periods: &[Option<f64>]) -> Result<Self> {
        let n = grid.dim();
        let m = map.target_dim();
        let nodes = grid.node_count();
        let values: Vec<f64> = (0..nodes)
            .into_par_iter()
            .flat_map_iter(|k| map.eval(&grid.coord(k)).into_iter().enumerate().map(|(c, v)| wrap(v, periods[c])))
            .collect();
        let d = Differ::new(grid, cfg)?;
        let first: Vec<Vec<f64>> = (0..n).map(|a| d.d1_wrapped(&values, m, a, periods)).collect::<Result<_>>()?;
        let mut d1 = vec![0.0; nodes * n * m];
        let mut d2 = vec![0.0; nodes * n * n * m];
        for a in 0..n {
            for k in 0..nodes {
                for c in 0..m {
                    d1[k * n * m + a * m + c] = first[a][k * m + c];
                }
            }
            let pure = d.d2_wrapped(&values, m, a, periods)?;
            for k in 0..nodes {
                for c in 0..m {
                    d2[k * n * n * m + (a * n + a) * m + c] = pure[k * m + c];
                }
            }
            for b in a + 1..n {
                let ab = d.d1(&first[b], m, a)?;
                let ba = d.d1(&first[a], m, b)?;
                for k in 0..nodes {
                    for c in 0..m {
                        let v = 0.5 * (ab[k * m + c] + ba[k * m + c]);
                        d2[k * n * n * m + (a * n + b) * m + c] = v;
                        d2[k * n * n * m + (b * n + a) * m + c] = v;
                    }
                }
            }
        }
        Ok(SampledMap { grid: grid.clone(), n, m, values, d1, d2, source: DerivativeSource::Grid(cfg) })
    }

    pub fn grid(&self) -> &ChartGrid {
        &self.grid
    }

    pub fn source_dim(&self) -> usize {
        self.n
    }

    pub fn target_dim(&self) -> usize {
        self.m
    }

    pub fn source(&self) -> DerivativeSource {
        self.source
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.m..(node + 1) * self.m]
    }

    /// `d_i f^a`.
    pub fn d1(&self, node: usize, i: usize, a: usize) -> f64 {
        self.d1[node * self.n * self.m + i * self.m + a]
    }

    /// `d_i d_j f^a`.
    pub fn d2(&self, node: usize, i: usize, j: usize, a: usize) -> f64 {
        self.d2[node * self.n * self.n * self.m + (i * self.n + j) * self.m + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn wrap(v: f64, period: Option<f64>) -> f64 {
    match period {
        Some(p) => v.rem_euclid(p),
        None => v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use std::f64::consts::PI;

    #[derive(Debug)]
    struct Wave;

    impl PointMap for Wave {
        fn source_dim(&self) -> usize {
            2
        }
        fn target_dim(&self) -> usize {
            2
        }
        fn eval(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0].sin() * x[1].cos(), x[1] + 0.3 * x[0].sin()]
        }
        fn jet(&self, x: &[f64]) -> Option<MapJet> {
            let (s0, c0, s1, c1) = (x[0].sin(), x[0].cos(), x[1].sin(), x[1].cos());
            Some(MapJet {
                value: self.eval(x),
                d1: vec![c0 * c1, 0.3 * c0, -s0 * s1, 1.0],
                d2: vec![-s0 * c1, -0.3 * s0, -c0 * s1, 0.0, -c0 * s1, 0.0, -s0 * c1, 0.0],
            })
        }
        fn label(&self) -> String {
            "wave".into()
        }
    }

    fn grid(n: usize) -> ChartGrid {
        ChartGrid::new(vec![Axis::periodic(0.0, 2.0 * PI, n), Axis::periodic(0.0, 2.0 * PI, n)]).unwrap()
    }

    fn max_diff(a: &SampledMap, b: &SampledMap) -> (f64, f64) {
        let e1 = a.d1.iter().zip(&b.d1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let e2 = a.d2.iter().zip(&b.d2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        (e1, e2)
    }

    #[test]
    fn reference_matches_closed_form() {
        let p = [None, Some(2.0 * PI)];
        let g = grid(16);
        let a = SampledMap::sample(&Wave, &g, DerivativeSource::Analytic, &p).unwrap();
        let r = SampledMap::sample(&Wave, &g, DerivativeSource::Reference, &p).unwrap();
        let (e1, e2) = max_diff(&a, &r);
        assert!(e1 < 1e-11 && e2 < 1e-10, "{e1} {e2}");
        assert!(a.values().iter().skip(1).step_by(2).all(|v| (0.0..2.0 * PI).contains(v)));
    }

    #[test]
    fn grid_derivatives_converge_across_the_seam() {
        let p = [None, Some(2.0 * PI)];
        let errs: Vec<(f64, f64)> = [32, 64]
            .iter()
            .map(|&n| {
                let g = grid(n);
                let a = SampledMap::sample(&Wave, &g, DerivativeSource::Analytic, &p).unwrap();
                let f = SampledMap::sample(&Wave, &g, DerivativeSource::Grid(FdConfig::default()), &p).unwrap();
                max_diff(&a, &f)
            })
            .collect();
        assert!((errs[0].0 / errs[1].0).log2() > 1.8);
        assert!((errs[0].1 / errs[1].1).log2() > 1.8);
    }
}
