//! Concrete maps and immersions in chart coordinates.

use std::f64::consts::PI;

use crate::sampled::{MapJet, PointMap};

/// Point of the unit sphere `S^n` in `R^(n+1)` from hyperspherical angles:
/// `x_0 = cos c_1`, `x_1 = sin c_1 cos c_2`, ..., `x_n = sin c_1 ... sin c_n`.
pub fn hyperspherical_embed(angles: &[f64]) -> Vec<f64> {
    let n = angles.len();
    let mut x = Vec::with_capacity(n + 1);
    let mut prod = 1.0;
    for &c in angles {
        x.push(prod * c.cos());
        prod *= c.sin();
    }
    x.push(prod);
    x
}

/// Hyperspherical angles of a nonzero point of `R^(n+1)`; the last angle is
/// reduced to `[0, 2 pi)`.
pub fn hyperspherical_angles(x: &[f64]) -> Vec<f64> {
    let n = x.len() - 1;
    let mut out = Vec::with_capacity(n);
    for j in 0..n - 1 {
        let tail = x[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push((x[j] / tail).clamp(-1.0, 1.0).acos());
    }
    out.push(x[n].atan2(x[n - 1]).rem_euclid(2.0 * PI));
    out
}

/// The identity of an `n`-dimensional chart.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMap {
    pub n: usize,
}

impl PointMap for IdentityMap {
    fn source_dim(&self) -> usize {
        self.n
    }
    fn target_dim(&self) -> usize {
        self.n
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn jet(&self, x: &[f64]) -> Option<MapJet> {
        let n = self.n;
        let mut d1 = vec![0.0; n * n];
        for i in 0..n {
            d1[i * n + i] = 1.0;
        }
        Some(MapJet { value: x.to_vec(), d1, d2: vec![0.0; n * n * n] })
    }
    fn label(&self) -> String {
        format!("identity on R^{}", self.n)
    }
}

/// A constant map to `point`.
#[derive(Debug, Clone)]
pub struct ConstantMap {
    pub n: usize,
    pub point: Vec<f64>,
}

impl PointMap for ConstantMap {
    fn source_dim(&self) -> usize {
        self.n
    }
    fn target_dim(&self) -> usize {
        self.point.len()
    }
    fn eval(&self, _x: &[f64]) -> Vec<f64> {
        self.point.clone()
    }
    fn jet(&self, _x: &[f64]) -> Option<MapJet> {
        let (n, m) = (self.n, self.point.len());
        Some(MapJet { value: self.point.clone(), d1: vec![0.0; n * m], d2: vec![0.0; n * n * m] })
    }
    fn label(&self) -> String {
        "constant map".into()
    }
}

/// `f(x) = A x` with `A` given row-major as `m x n`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub n: usize,
    pub m: usize,
    pub matrix: Vec<f64>,
}

impl PointMap for LinearMap {
    fn source_dim(&self) -> usize {
        self.n
    }
    fn target_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m).map(|a| (0..self.n).map(|i| self.matrix[a * self.n + i] * x[i]).sum()).collect()
    }
    fn jet(&self, x: &[f64]) -> Option<MapJet> {
        let (n, m) = (self.n, self.m);
        let mut d1 = vec![0.0; n * m];
        for i in 0..n {
            for a in 0..m {
                d1[i * m + a] = self.matrix[a * n + i];
            }
        }
        Some(MapJet { value: self.eval(x), d1, d2: vec![0.0; n * n * m] })
    }
    fn label(&self) -> String {
        format!("linear map {:?}", self.matrix)
    }
}

/// The circle of colatitude `theta0` in the `(theta, phi)` chart of `S^2`:
/// `t -> (theta0, t)`.
#[derive(Debug, Clone, Copy)]
pub struct LatitudeCircle {
    pub theta0: f64,
}

impl PointMap for LatitudeCircle {
    fn source_dim(&self) -> usize {
        1
    }
    fn target_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![self.theta0, x[0]]
    }
    fn jet(&self, x: &[f64]) -> Option<MapJet> {
        Some(MapJet { value: self.eval(x), d1: vec![0.0, 1.0], d2: vec![0.0, 0.0] })
    }
    fn label(&self) -> String {
        format!("latitude circle theta = {}", self.theta0)
    }
}

/// Equatorial inclusion `S^n -> S^(n+1)`: `(c_1..c_n) -> (pi/2, c_1..c_n)`.
#[derive(Debug, Clone, Copy)]
pub struct Equator {
    pub n: usize,
}

impl PointMap for Equator {
    fn source_dim(&self) -> usize {
        self.n
    }
    fn target_dim(&self) -> usize {
        self.n + 1
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![PI / 2.0];
        v.extend_from_slice(x);
        v
    }
    fn jet(&self, x: &[f64]) -> Option<MapJet> {
        let (n, m) = (self.n, self.n + 1);
        let mut d1 = vec![0.0; n * m];
        for i in 0..n {
            d1[i * m + i + 1] = 1.0;
        }
        Some(MapJet { value: self.eval(x), d1, d2: vec![0.0; n * n * m] })
    }
    fn label(&self) -> String {
        format!("equator S^{} in S^{}", self.n, self.n + 1)
    }
}

/// Round sphere of radius `r` in Euclidean `R^(n+1)`, parametrized by
/// hyperspherical angles.
#[derive(Debug, Clone, Copy)]
pub struct SphereInFlat {
    pub n: usize,
    pub r: f64,
}

impl PointMap for SphereInFlat {
    fn source_dim(&self) -> usize {
        self.n
    }
    fn target_dim(&self) -> usize {
        self.n + 1
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        hyperspherical_embed(x).into_iter().map(|v| self.r * v).collect()
    }
    fn label(&self) -> String {
        format!("S^{}({}) in R^{}", self.n, self.r, self.n + 1)
    }
}

/// Product `S^n1(r1) x S^n2(r2)` with `r1^2 + r2^2 = 1`, immersed in the
/// hyperspherical chart of `S^(n1+n2+1)`. Ambient coordinates are ordered
/// `(r1 y1, r2 y2)`, so the image stays away from the ambient chart poles
/// and the angles of the second factor reappear unchanged.
///
/// Source coordinates: the angles of the first factor, then the second.
#[derive(Debug, Clone, Copy)]
pub struct SphereProductImmersion {
    pub n1: usize,
    pub n2: usize,
    pub r1: f64,
    pub r2: f64,
}

impl SphereProductImmersion {
    /// The minimal product with `r_i = sqrt(n_i / n)`.
    pub fn minimal(n1: usize, n2: usize) -> Self {
        let n = (n1 + n2) as f64;
        SphereProductImmersion { n1, n2, r1: (n1 as f64 / n).sqrt(), r2: (n2 as f64 / n).sqrt() }
    }

    pub fn ambient_point(&self, x: &[f64]) -> Vec<f64> {
        let mut p: Vec<f64> = hyperspherical_embed(&x[..self.n1]).into_iter().map(|v| self.r1 * v).collect();
        p.extend(hyperspherical_embed(&x[self.n1..]).into_iter().map(|v| self.r2 * v));
        p
    }
}

impl PointMap for SphereProductImmersion {
    fn source_dim(&self) -> usize {
        self.n1 + self.n2
    }
    fn target_dim(&self) -> usize {
        self.n1 + self.n2 + 1
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        hyperspherical_angles(&self.ambient_point(x))
    }
    fn label(&self) -> String {
        format!("S^{}({:.6}) x S^{}({:.6}) in S^{}", self.n1, self.r1, self.n2, self.r2, self.n1 + self.n2 + 1)
    }
}

/// Graph `(u, v) -> (u, v, eps sin u)` in the flat 3-torus.
#[derive(Debug, Clone, Copy)]
pub struct GraphHypersurface {
    pub eps: f64,
}

impl PointMap for GraphHypersurface {
    fn source_dim(&self) -> usize {
        2
    }
    fn target_dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0], x[1], self.eps * x[0].sin()]
    }
    fn jet(&self, x: &[f64]) -> Option<MapJet> {
        let mut d1 = vec![0.0; 6];
        d1[0] = 1.0;
        d1[2] = self.eps * x[0].cos();
        d1[4] = 1.0;
        let mut d2 = vec![0.0; 12];
        d2[2] = -self.eps * x[0].sin();
        Some(MapJet { value: self.eval(x), d1, d2 })
    }
    fn label(&self) -> String {
        format!("graph z = {} sin u in T^3", self.eps)
    }
}

/// Flat torus `(u, v) -> (r1 cos u, r1 sin u, r2 cos v, r2 sin v)` in `R^4`.
#[derive(Debug, Clone, Copy)]
pub struct FlatTorusInR4 {
    pub r1: f64,
    pub r2: f64,
}

impl PointMap for FlatTorusInR4 {
    fn source_dim(&self) -> usize {
        2
    }
    fn target_dim(&self) -> usize {
        4
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![self.r1 * x[0].cos(), self.r1 * x[0].sin(), self.r2 * x[1].cos(), self.r2 * x[1].sin()]
    }
    fn jet(&self, x: &[f64]) -> Option<MapJet> {
        let (cu, su, cv, sv) = (x[0].cos(), x[0].sin(), x[1].cos(), x[1].sin());
        let (a, b) = (self.r1, self.r2);
        let d1 = vec![-a * su, a * cu, 0.0, 0.0, 0.0, 0.0, -b * sv, b * cv];
        let mut d2 = vec![0.0; 16];
        d2[0] = -a * cu;
        d2[1] = -a * su;
        d2[12 + 2] = -b * cv;
        d2[12 + 3] = -b * sv;
        Some(MapJet { value: self.eval(x), d1, d2 })
    }
    fn label(&self) -> String {
        format!("flat torus S^1({}) x S^1({}) in R^4", self.r1, self.r2)
    }
}
