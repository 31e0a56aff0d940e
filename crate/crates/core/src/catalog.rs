//! Named geometries with closed-form reference values.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{build_levi_civita, curvature_extremes, CurvatureBundle, CurvatureMode, ExtremeConfig, ExtremeKind};
use crate::error::{GeomError, Result};
use crate::formulas::{
    ConstantMap, Equator, FlatTorusInR4, GraphHypersurface, IdentityMap, LatitudeCircle, LinearMap, SphereInFlat,
    SphereProductImmersion,
};
use crate::grid::{Axis, ChartGrid};
use crate::maps::{energy_density, tension_norm, SmoothMap};
use crate::metric::{ConstantMetric, MetricField, MetricModel, ProductMetric, RoundSphere};
use crate::sampled::{DerivativeSource, PointMap};
use crate::spectral::LanczosConfig;
use crate::stability::{stability_spectrum, JacobiOperator};
use crate::stencil::FdConfig;
use crate::submanifold::{pinching_check, second_fundamental_form, Immersion};

/// Polar cut-off of the latitude-longitude sphere chart.
pub const SPHERE_CHART_EPS: f64 = PI / 128.0;
/// Fraction of each closed axis excluded from residual norms.
pub const SPHERE_MARGIN: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Manifold,
    Map,
    Immersion,
}

/// String-valued parameters, `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params(pub BTreeMap<String, String>);

impl Params {
    /// Parses `k=v,k=v`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| GeomError::InvalidParameters(format!("expected key=value, got '{part}'")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Params(map))
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| GeomError::InvalidParameters(format!("{key}: '{v}' is not a number"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| GeomError::InvalidParameters(format!("{key}: '{v}' is not a count"))),
        }
    }

    fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.0.get(key).map(String::as_str).unwrap_or(default)
    }

    fn check_known(&self, name: &str, known: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(GeomError::InvalidParameters(format!("{name} has no parameter '{k}'"))),
            None => Ok(()),
        }
    }
}

/// Coordinate chart of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// `n` periodic axes of length `side`.
    Torus { n: usize, side: f64 },
    /// Hyperspherical angles: `n - 1` closed polar angles and one periodic angle.
    Sphere { n: usize },
    Product(Vec<Chart>),
}

impl Chart {
    pub fn dim(&self) -> usize {
        match self {
            Chart::Torus { n, .. } | Chart::Sphere { n } => *n,
            Chart::Product(parts) => parts.iter().map(Chart::dim).sum(),
        }
    }

    fn axes(&self, res: usize) -> Vec<Axis> {
        match self {
            Chart::Torus { n, side } => (0..*n).map(|_| Axis::periodic(0.0, *side, res)).collect(),
            Chart::Sphere { n } => {
                let mut v: Vec<Axis> = (0..n - 1)
                    .map(|_| Axis::closed(SPHERE_CHART_EPS, PI - SPHERE_CHART_EPS, res + 1, SPHERE_MARGIN))
                    .collect();
                v.push(Axis::periodic(0.0, 2.0 * PI, res));
                v
            }
            Chart::Product(parts) => parts.iter().flat_map(|p| p.axes(res)).collect(),
        }
    }

    /// Grid at resolution `res`: `res` nodes per periodic axis, `res + 1` per closed axis.
    pub fn grid(&self, res: usize) -> Result<ChartGrid> {
        ChartGrid::new(self.axes(res))
    }
}

/// The analytic objects behind an entry.
#[derive(Debug, Clone)]
pub enum Geometry {
    Manifold { model: Arc<dyn MetricModel> },
    Map { domain: Arc<dyn MetricModel>, codomain: Arc<dyn MetricModel>, map: Arc<dyn PointMap> },
    Immersion { ambient: Arc<dyn MetricModel>, map: Arc<dyn PointMap> },
}

/// A closed-form value and the tolerance within which the numerical
/// pipeline must reproduce it at the default resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub quantity: String,
    pub value: f64,
    pub tolerance: f64,
    pub provenance: String,
}

fn reference(quantity: &str, value: f64, tolerance: f64, provenance: &str) -> Reference {
    Reference { quantity: quantity.into(), value, tolerance, provenance: provenance.into() }
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub kind: EntryKind,
    pub params: Params,
    pub chart: Chart,
    pub geometry: Geometry,
    pub references: Vec<Reference>,
    pub default_resolution: usize,
    /// Reference checks take curvature from the model jet.
    pub jet_curvature: bool,
    pub description: String,
}

impl CatalogEntry {
    pub fn grid(&self, res: usize) -> Result<ChartGrid> {
        self.chart.grid(res)
    }

    /// Codimension-one immersions.
    pub fn is_hypersurface(&self) -> bool {
        match &self.geometry {
            Geometry::Immersion { ambient, map } => ambient.dim() == map.source_dim() + 1,
            _ => false,
        }
    }
}

/// Parameter schema of one catalog name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntrySchema {
    pub name: &'static str,
    pub kind: EntryKind,
    pub params: Vec<(&'static str, &'static str)>,
    pub description: &'static str,
}

pub fn list() -> Vec<EntrySchema> {
    use EntryKind::*;
    let e = |name, kind, params: &[(&'static str, &'static str)], description| EntrySchema {
        name,
        kind,
        params: params.to_vec(),
        description,
    };
    vec![
        e("flat_torus", Manifold, &[("n", "2"), ("side", "2pi")], "flat torus R^n / (side Z)^n"),
        e("round_sphere", Manifold, &[("n", "2"), ("r", "1")], "round sphere of radius r, latitude-longitude chart"),
        e("sphere_product", Manifold, &[("r1", "1"), ("r2", "2")], "Riemannian product S^2(r1) x S^2(r2)"),
        e("identity_map", Map, &[("entry", "round_sphere"), ("n", "2"), ("r", "1")], "identity of round_sphere or flat_torus"),
        e("constant_map", Map, &[("entry", "round_sphere"), ("n", "2"), ("r", "1")], "constant map to a fixed point"),
        e(
            "linear_torus_map",
            Map,
            &[("a11", "2"), ("a12", "0"), ("a21", "0"), ("a22", "1")],
            "linear map of the flat 2-torus with integer matrix",
        ),
        e("circle_to_sphere", Map, &[("theta0", "pi/2")], "unit circle onto the latitude theta0 of S^2"),
        e("clifford_torus", Immersion, &[("n1", "1"), ("n2", "1")], "minimal S^n1 x S^n2 in S^(n1+n2+1)"),
        e("equator", Immersion, &[("n", "2")], "totally geodesic S^n in S^(n+1)"),
        e("graph_hypersurface", Immersion, &[("eps", "0.1")], "graph z = eps sin u in the flat 3-torus"),
        e("flat_subtorus", Immersion, &[], "totally geodesic z = 0 in the flat 3-torus"),
        e("sphere_in_flat", Immersion, &[("n", "2"), ("r", "1")], "round sphere of radius r in R^(n+1)"),
        e("flat_torus_in_r4", Immersion, &[("r1", "1"), ("r2", "2")], "product of circles in R^4, codimension two"),
    ]
}

fn parse_angle(s: &str) -> Result<f64> {
    let t = s.replace(' ', "");
    let v = match t.as_str() {
        "pi" => PI,
        "pi/2" => PI / 2.0,
        "pi/3" => PI / 3.0,
        "pi/4" => PI / 4.0,
        "pi/6" => PI / 6.0,
        _ => t.parse().map_err(|_| GeomError::InvalidParameters(format!("'{s}' is not an angle")))?,
    };
    Ok(v)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(GeomError::InvalidParameters(format!("{name} must be positive, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(GeomError::InvalidParameters(format!("{name} must be at least 1")))
    }
}

fn manifold(entry: &str, n: usize, r: f64) -> Result<(Chart, Arc<dyn MetricModel>)> {
    match entry {
        "round_sphere" => {
            if n < 1 {
                return Err(GeomError::InvalidParameters("sphere dimension must be at least 1".into()));
            }
            Ok((Chart::Sphere { n }, Arc::new(RoundSphere { n, r: positive("r", r)? })))
        }
        "flat_torus" => Ok((Chart::Torus { n, side: 2.0 * PI }, Arc::new(ConstantMetric::flat_torus(&vec![2.0 * PI; n])))),
        other => Err(GeomError::UnknownEntry(other.to_string())),
    }
}

/// Builds a catalog entry; missing parameters take their defaults.
pub fn build(name: &str, params: &Params) -> Result<CatalogEntry> {
    let mut resolved = params.clone();
    let entry = match name {
        "flat_torus" => {
            params.check_known(name, &["n", "side"])?;
            let n = at_least_one("n", params.usize_or("n", 2)?)?;
            let side = positive("side", params.f64_or("side", 2.0 * PI)?)?;
            resolved.set("n", n);
            resolved.set("side", side);
            let zero = |q: &str| reference(q, 0.0, 1e-12, "flat metric");
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Manifold,
                params: resolved,
                chart: Chart::Torus { n, side },
                geometry: Geometry::Manifold { model: Arc::new(ConstantMetric::flat_torus(&vec![side; n])) },
                references: vec![zero("scalar_curvature"), zero("ric_min"), zero("ric_max"), zero("sec_min")],
                jet_curvature: false,
                default_resolution: 32,
                description: format!("flat torus T^{n}, side {side}"),
            }
        }
        "round_sphere" => {
            params.check_known(name, &["n", "r"])?;
            let n = params.usize_or("n", 2)?;
            if n < 2 {
                return Err(GeomError::InvalidParameters("round_sphere needs n >= 2".into()));
            }
            let r = positive("r", params.f64_or("r", 1.0)?)?;
            resolved.set("n", n);
            resolved.set("r", r);
            let k = 1.0 / (r * r);
            let nf = n as f64;
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Manifold,
                params: resolved,
                chart: Chart::Sphere { n },
                geometry: Geometry::Manifold { model: Arc::new(RoundSphere { n, r }) },
                references: vec![
                    reference("sec_min", k, 1e-4, "constant curvature 1/r^2"),
                    reference("ric_min", (nf - 1.0) * k, 1e-4, "Ric = (n-1)/r^2 g"),
                    reference("ric_max", (nf - 1.0) * k, 1e-4, "Ric = (n-1)/r^2 g"),
                    reference("scalar_curvature", nf * (nf - 1.0) * k, 1e-3, "n(n-1)/r^2"),
                ],
                jet_curvature: false,
                default_resolution: if n == 2 { 64 } else { 32 },
                description: format!("round sphere S^{n}({r})"),
            }
        }
        "sphere_product" => {
            params.check_known(name, &["r1", "r2"])?;
            let r1 = positive("r1", params.f64_or("r1", 1.0)?)?;
            let r2 = positive("r2", params.f64_or("r2", 2.0)?)?;
            resolved.set("r1", r1);
            resolved.set("r2", r2);
            let (k1, k2) = (1.0 / (r1 * r1), 1.0 / (r2 * r2));
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Manifold,
                params: resolved,
                chart: Chart::Product(vec![Chart::Sphere { n: 2 }, Chart::Sphere { n: 2 }]),
                geometry: Geometry::Manifold {
                    model: Arc::new(ProductMetric {
                        first: Arc::new(RoundSphere { n: 2, r: r1 }),
                        second: Arc::new(RoundSphere { n: 2, r: r2 }),
                    }),
                },
                references: vec![
                    reference("sec_min", 0.0, 1e-3, "mixed planes of a product are flat"),
                    reference("ric_min", k1.min(k2), 1e-3, "Ricci is K_i g on each factor"),
                    reference("ric_max", k1.max(k2), 1e-3, "Ricci is K_i g on each factor"),
                    reference("scalar_curvature", 2.0 * (k1 + k2), 1e-3, "sum of factor scalar curvatures"),
                ],
                jet_curvature: true,
                default_resolution: 12,
                description: format!("S^2({r1}) x S^2({r2})"),
            }
        }
        "identity_map" | "constant_map" => {
            params.check_known(name, &["entry", "n", "r"])?;
            let which = params.str_or("entry", "round_sphere").to_string();
            let n = at_least_one("n", params.usize_or("n", 2)?)?;
            let r = params.f64_or("r", 1.0)?;
            let (chart, model) = manifold(&which, n, r)?;
            resolved.set("entry", &which);
            resolved.set("n", n);
            if which == "round_sphere" {
                resolved.set("r", r);
            }
            let identity = name == "identity_map";
            let map: Arc<dyn PointMap> = if identity {
                Arc::new(IdentityMap { n })
            } else {
                let mut point = vec![PI / 2.0; n];
                point[n - 1] = if which == "round_sphere" { 1.0 } else { 0.5 };
                Arc::new(ConstantMap { n, point })
            };
            let references = if identity {
                vec![
                    reference("energy_density", n as f64 / 2.0, 1e-10, "e(id) = n/2"),
                    reference("tension_norm", 0.0, 1e-6, "the identity is harmonic"),
                ]
            } else {
                vec![
                    reference("energy_density", 0.0, 1e-14, "constant map"),
                    reference("tension_norm", 0.0, 1e-8, "constant map"),
                ]
            };
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Map,
                params: resolved,
                chart,
                geometry: Geometry::Map { domain: model.clone(), codomain: model, map },
                references,
                jet_curvature: false,
                default_resolution: 32,
                description: format!("{} of {which} (n = {n})", if identity { "identity" } else { "constant map" }),
            }
        }
        "linear_torus_map" => {
            params.check_known(name, &["a11", "a12", "a21", "a22"])?;
            let a = [
                params.f64_or("a11", 2.0)?,
                params.f64_or("a12", 0.0)?,
                params.f64_or("a21", 0.0)?,
                params.f64_or("a22", 1.0)?,
            ];
            if a.iter().any(|v| v.fract() != 0.0) {
                return Err(GeomError::InvalidParameters("torus map matrix must be integral".into()));
            }
            for (k, v) in ["a11", "a12", "a21", "a22"].iter().zip(a) {
                resolved.set(k, v);
            }
            let torus: Arc<dyn MetricModel> = Arc::new(ConstantMetric::flat_torus(&[2.0 * PI, 2.0 * PI]));
            let e = 0.5 * a.iter().map(|v| v * v).sum::<f64>();
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Map,
                params: resolved,
                chart: Chart::Torus { n: 2, side: 2.0 * PI },
                geometry: Geometry::Map {
                    domain: torus.clone(),
                    codomain: torus,
                    map: Arc::new(LinearMap { n: 2, m: 2, matrix: a.to_vec() }),
                },
                references: vec![
                    reference("energy_density", e, 1e-12, "half the squared Frobenius norm"),
                    reference("tension_norm", 0.0, 1e-8, "linear maps of flat tori are harmonic"),
                ],
                jet_curvature: false,
                default_resolution: 32,
                description: format!("linear torus map [[{}, {}], [{}, {}]]", a[0], a[1], a[2], a[3]),
            }
        }
        "circle_to_sphere" => {
            params.check_known(name, &["theta0"])?;
            let theta0 = parse_angle(params.str_or("theta0", "pi/2"))?;
            if !(theta0 > 0.0 && theta0 < PI) {
                return Err(GeomError::InvalidParameters("theta0 must lie in (0, pi)".into()));
            }
            resolved.set("theta0", theta0);
            let s = theta0.sin();
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Map,
                params: resolved,
                chart: Chart::Torus { n: 1, side: 2.0 * PI },
                geometry: Geometry::Map {
                    domain: Arc::new(ConstantMetric::flat_torus(&[2.0 * PI])),
                    codomain: Arc::new(RoundSphere { n: 2, r: 1.0 }),
                    map: Arc::new(LatitudeCircle { theta0 }),
                },
                references: vec![
                    reference("energy_density", 0.5 * s * s, 1e-12, "e = sin^2(theta0)/2"),
                    reference("tension_norm", (s * theta0.cos()).abs(), 1e-6, "|tau| = |sin cos theta0|"),
                ],
                jet_curvature: false,
                default_resolution: 64,
                description: format!("latitude circle theta = {theta0}"),
            }
        }
        "clifford_torus" => {
            params.check_known(name, &["n1", "n2"])?;
            let n1 = at_least_one("n1", params.usize_or("n1", 1)?)?;
            let n2 = at_least_one("n2", params.usize_or("n2", 1)?)?;
            resolved.set("n1", n1);
            resolved.set("n2", n2);
            let n = (n1 + n2) as f64;
            let (l1, l2) = ((n2 as f64 / n1 as f64).sqrt(), -(n1 as f64 / n2 as f64).sqrt());
            let chart = |k: usize| if k == 1 { Chart::Torus { n: 1, side: 2.0 * PI } } else { Chart::Sphere { n: k } };
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Immersion,
                params: resolved,
                chart: Chart::Product(vec![chart(n1), chart(n2)]),
                geometry: Geometry::Immersion {
                    ambient: Arc::new(RoundSphere { n: n1 + n2 + 1, r: 1.0 }),
                    map: Arc::new(SphereProductImmersion::minimal(n1, n2)),
                },
                references: vec![
                    reference("phi_norm_sq", n, 1e-4, "n1 l1^2 + n2 l2^2 = n"),
                    reference("mean_curvature", 0.0, 1e-4, "minimal product"),
                    reference("principal_abs_max", l1.max(-l2), 1e-4, "l1 = sqrt(n2/n1), l2 = -sqrt(n1/n2)"),
                    reference("principal_abs_min", l1.min(-l2), 1e-4, "l1 = sqrt(n2/n1), l2 = -sqrt(n1/n2)"),
                    reference("pinching_bound", n, 0.0, "kn/(2k-1) C with k = 1, C = 1"),
                    reference("jacobi_lambda_max", 2.0 * n, 1e-2, "V = |phi|^2 + Ric(N, N) = 2n, constant"),
                ],
                jet_curvature: false,
                default_resolution: if n1 + n2 == 2 { 64 } else { 32 },
                description: format!("Clifford torus S^{n1} x S^{n2} in S^{}", n1 + n2 + 1),
            }
        }
        "equator" => {
            params.check_known(name, &["n"])?;
            let n = params.usize_or("n", 2)?;
            if n < 2 {
                return Err(GeomError::InvalidParameters("equator needs n >= 2".into()));
            }
            resolved.set("n", n);
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Immersion,
                params: resolved,
                chart: Chart::Sphere { n },
                geometry: Geometry::Immersion { ambient: Arc::new(RoundSphere { n: n + 1, r: 1.0 }), map: Arc::new(Equator { n }) },
                references: vec![
                    reference("phi_norm_sq", 0.0, 1e-8, "totally geodesic"),
                    reference("mean_curvature", 0.0, 1e-8, "totally geodesic"),
                    reference("jacobi_lambda_max", n as f64, 1e-2, "V = Ric(N, N) = n, constants maximize"),
                ],
                jet_curvature: false,
                default_resolution: if n == 2 { 64 } else { 32 },
                description: format!("equator S^{n} in S^{}", n + 1),
            }
        }
        "graph_hypersurface" | "flat_subtorus" => {
            let eps = if name == "flat_subtorus" {
                params.check_known(name, &[])?;
                0.0
            } else {
                params.check_known(name, &["eps"])?;
                let e = params.f64_or("eps", 0.1)?;
                if !e.is_finite() {
                    return Err(GeomError::InvalidParameters("eps must be finite".into()));
                }
                resolved.set("eps", e);
                e
            };
            let mut references = vec![reference("mean_curvature_max", eps.abs() / 2.0, 1e-8, "max of eps sin u / (2 W^3) at u = pi/2")];
            if eps == 0.0 {
                references.push(reference("phi_norm_sq", 0.0, 1e-8, "totally geodesic"));
                references.push(reference("jacobi_lambda_max", 0.0, 1e-6, "V = 0, constants in the kernel"));
            }
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Immersion,
                params: resolved,
                chart: Chart::Torus { n: 2, side: 2.0 * PI },
                geometry: Geometry::Immersion {
                    ambient: Arc::new(ConstantMetric::flat_torus(&[2.0 * PI; 3])),
                    map: Arc::new(GraphHypersurface { eps }),
                },
                references,
                jet_curvature: false,
                default_resolution: 64,
                description: if eps == 0.0 { "flat subtorus z = 0 in T^3".into() } else { format!("graph z = {eps} sin u in T^3") },
            }
        }
        "sphere_in_flat" => {
            params.check_known(name, &["n", "r"])?;
            let n = params.usize_or("n", 2)?;
            if n < 2 {
                return Err(GeomError::InvalidParameters("sphere_in_flat needs n >= 2".into()));
            }
            let r = positive("r", params.f64_or("r", 1.0)?)?;
            resolved.set("n", n);
            resolved.set("r", r);
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Immersion,
                params: resolved,
                chart: Chart::Sphere { n },
                geometry: Geometry::Immersion {
                    ambient: Arc::new(ConstantMetric::euclidean(n + 1)),
                    map: Arc::new(SphereInFlat { n, r }),
                },
                references: vec![
                    reference("mean_curvature_abs", 1.0 / r, 1e-6, "umbilical, phi = g / r"),
                    reference("phi_norm_sq", n as f64 / (r * r), 1e-6, "n / r^2"),
                ],
                jet_curvature: false,
                default_resolution: 64,
                description: format!("S^{n}({r}) in R^{}", n + 1),
            }
        }
        "flat_torus_in_r4" => {
            params.check_known(name, &["r1", "r2"])?;
            let r1 = positive("r1", params.f64_or("r1", 1.0)?)?;
            let r2 = positive("r2", params.f64_or("r2", 2.0)?)?;
            resolved.set("r1", r1);
            resolved.set("r2", r2);
            let s = 1.0 / (r1 * r1) + 1.0 / (r2 * r2);
            CatalogEntry {
                name: name.into(),
                kind: EntryKind::Immersion,
                params: resolved,
                chart: Chart::Torus { n: 2, side: 2.0 * PI },
                geometry: Geometry::Immersion { ambient: Arc::new(ConstantMetric::euclidean(4)), map: Arc::new(FlatTorusInR4 { r1, r2 }) },
                references: vec![
                    reference("phi_norm_sq", s, 1e-8, "1/r1^2 + 1/r2^2"),
                    reference("mean_curvature_abs", 0.5 * s.sqrt(), 1e-8, "|H| = sqrt(1/r1^2 + 1/r2^2) / 2"),
                ],
                jet_curvature: false,
                default_resolution: 32,
                description: format!("S^1({r1}) x S^1({r2}) in R^4"),
            }
        }
        other => return Err(GeomError::UnknownEntry(other.to_string())),
    };
    Ok(entry)
}

/// An entry sampled on a grid.
#[derive(Debug, Clone)]
pub enum Realized {
    Manifold { metric: MetricField, curvature: CurvatureBundle },
    Map(SmoothMap),
    Immersion(Immersion),
}

/// How a realization obtains derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizeConfig {
    /// Stencils for maps and immersions. The stability spectrum needs order 2.
    pub fd: FdConfig,
    /// Stencils for the curvature of manifold entries; `None` uses the model jet.
    pub curvature_fd: Option<FdConfig>,
    /// Stencils for the domain curvature of map entries; `None` uses the model jet.
    pub domain_fd: Option<FdConfig>,
    pub source: DerivativeSource,
}

impl Default for RealizeConfig {
    fn default() -> Self {
        RealizeConfig { fd: FdConfig::order(2), curvature_fd: Some(FdConfig::order(4)), domain_fd: None, source: DerivativeSource::Reference }
    }
}

impl CatalogEntry {
    pub fn realize(&self, res: usize, cfg: &RealizeConfig) -> Result<Realized> {
        let grid = self.grid(res)?;
        match &self.geometry {
            Geometry::Manifold { model } => {
                let metric = MetricField::sample(&grid, model.clone())?;
                let fd = if self.jet_curvature { None } else { cfg.curvature_fd };
                let mode = fd.map_or(CurvatureMode::Analytic, CurvatureMode::FiniteDifference);
                let curvature = build_levi_civita(&metric, mode)?;
                Ok(Realized::Manifold { metric, curvature })
            }
            Geometry::Map { domain, codomain, map } => {
                let metric = MetricField::sample(&grid, domain.clone())?;
                let mode = cfg.domain_fd.map_or(CurvatureMode::Analytic, CurvatureMode::FiniteDifference);
                let curv = build_levi_civita(&metric, mode)?;
                Ok(Realized::Map(SmoothMap::new(metric, curv, codomain.clone(), map.as_ref(), cfg.source, cfg.fd)?))
            }
            Geometry::Immersion { ambient, map } => {
                Ok(Realized::Immersion(Immersion::new(&grid, ambient.clone(), map.as_ref(), cfg.source, cfg.fd)?))
            }
        }
    }
}

/// One reference compared with the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub quantity: String,
    pub reference: f64,
    pub computed: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub provenance: String,
}

/// Worst pointwise value of a node quantity: the node farthest from the reference.
fn worst(nodes: &[usize], target: f64, f: impl Fn(usize) -> f64) -> f64 {
    nodes.iter().map(|&k| f(k)).fold(target, |acc, v| if (v - target).abs() > (acc - target).abs() { v } else { acc })
}

fn extreme(nodes: &[usize], f: impl Fn(usize) -> f64, max: bool) -> f64 {
    let it = nodes.iter().map(|&k| f(k));
    if max { it.fold(f64::NEG_INFINITY, f64::max) } else { it.fold(f64::INFINITY, f64::min) }
}

/// Computes every reference quantity of `entry` at resolution `res`.
pub fn reference_check(entry: &CatalogEntry, res: usize, cfg: &RealizeConfig) -> Result<Vec<ReferenceRow>> {
    let realized = entry.realize(res, cfg)?;
    let nodes = entry.grid(res)?.interior_nodes();
    let mut data = None;
    let mut rows = Vec::with_capacity(entry.references.len());
    for r in &entry.references {
        let v = r.value;
        let computed = match (&realized, r.quantity.as_str()) {
            (Realized::Manifold { metric, curvature }, q) => {
                let kind = match q {
                    "sec_min" => Some(ExtremeKind::SecMin),
                    "ric_min" => Some(ExtremeKind::RicMin),
                    "ric_max" => Some(ExtremeKind::RicMax),
                    _ => None,
                };
                match kind {
                    Some(kind) => {
                        let ex = ExtremeConfig::default();
                        let vals = nodes
                            .par_iter()
                            .map(|&k| curvature_extremes(curvature, metric, k, kind, &ex).map(|e| e.value))
                            .collect::<Result<Vec<_>>>()?;
                        let max = kind == ExtremeKind::RicMax;
                        extreme(&(0..vals.len()).collect::<Vec<_>>(), |i| vals[i], max)
                    }
                    None => worst(&nodes, v, |k| curvature.scalar(k)),
                }
            }
            (Realized::Map(f), "energy_density") => {
                let e = energy_density(f);
                worst(&nodes, v, |k| e.at(k)[0])
            }
            (Realized::Map(f), "tension_norm") => {
                let t = tension_norm(f);
                worst(&nodes, v, |k| t.at(k)[0])
            }
            (Realized::Immersion(imm), q) => {
                if data.is_none() {
                    data = Some(second_fundamental_form(imm)?);
                }
                let d = data.as_ref().expect("computed above");
                match q {
                    "phi_norm_sq" => worst(&nodes, v, |k| d.phi_norm_sq(k)),
                    "mean_curvature" | "mean_curvature_abs" => worst(&nodes, v, |k| d.mean_curvature_norm(k)),
                    "mean_curvature_max" => extreme(&nodes, |k| d.mean_curvature_norm(k), true),
                    "principal_abs_max" | "principal_abs_min" => {
                        let max = q == "principal_abs_max";
                        worst(&nodes, v, |k| match d.principal_curvatures(k) {
                            Some(p) => extreme(&(0..p.len()).collect::<Vec<_>>(), |i| p[i].abs(), max),
                            None => f64::NAN,
                        })
                    }
                    "pinching_bound" => pinching_check(d, imm, r.tolerance)?.bound,
                    "jacobi_lambda_max" => {
                        let op = JacobiOperator::new(imm, d)?;
                        stability_spectrum(&op, 1, LanczosConfig::default())?.lambda_max
                    }
                    other => return Err(GeomError::InvalidParameters(format!("no evaluator for '{other}'"))),
                }
            }
            (_, other) => return Err(GeomError::InvalidParameters(format!("no evaluator for '{other}'"))),
        };
        let error = (computed - v).abs();
        rows.push(ReferenceRow {
            quantity: r.quantity.clone(),
            reference: v,
            computed,
            error,
            tolerance: r.tolerance,
            pass: error <= r.tolerance,
            provenance: r.provenance.clone(),
        });
    }
    Ok(rows)
}
