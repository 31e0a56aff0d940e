//! Verification reports, the check dispatcher and the convergence runner.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::value::RawValue;

use crate::catalog::{self, CatalogEntry, Geometry, Params, RealizeConfig, Realized};
use crate::curvature::{symmetry_suite, ExtremeConfig};
use crate::decomposition::{check_3_8_and_3_9, solve_decomposition, SolverConfig};
use crate::error::{GeomError, Result};
use crate::maps::{
    check_hypotheses_2_3, q_lower_bound, q_term, weitzenboeck_residual, SmoothMap,
};
use crate::sampled::DerivativeSource;
use crate::spectral::LanczosConfig;
use crate::stability::{stability_spectrum, JacobiOperator};
use crate::stencil::FdConfig;
use crate::submanifold::{
    clifford_constants_check, codazzi_residual, pinching_check, second_fundamental_form, simons_residual,
    vdwb_derivative, Immersion,
};

/// Every check id accepted by [`run_check`].
pub const CHECK_IDS: [&str; 12] = [
    "weitzenboeck",
    "q_bound",
    "hypotheses_2_3",
    "simons",
    "pinching",
    "codazzi",
    "clifford_constants",
    "decomposition",
    "integral_3_9",
    "stability",
    "symmetry",
    "reference",
];

/// Residuals at or below this are treated as exact and skip the order test.
pub const FLOOR: f64 = 1e-10;

/// A float written with 17 significant digits; non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Real(pub f64);

impl Real {
    pub fn format(v: f64) -> Option<String> {
        v.is_finite().then(|| format!("{v:.16e}"))
    }
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match Real::format(self.0) {
            Some(text) => RawValue::from_string(text).map_err(serde::ser::Error::custom)?.serialize(s),
            None => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Real(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN)))
    }
}

impl From<f64> for Real {
    fn from(v: f64) -> Self {
        Real(v)
    }
}

/// Pretty JSON with every float written to 17 significant digits.
struct Digits17<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + std::io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(v))
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

/// Serializes `value` as indented JSON with 17-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("value serializes");
    String::from_utf8(out).expect("JSON is UTF-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Informational,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Informational => "informational",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRef {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

/// Residuals of one resolution inside a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub resolution: usize,
    pub h: Real,
    pub residual: Real,
    pub tolerance: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_id: String,
    pub geometry: GeometryRef,
    pub resolutions: Vec<usize>,
    /// Largest grid spacing at each resolution.
    pub spacings: Vec<Real>,
    pub residuals: BTreeMap<String, Real>,
    pub tolerances: BTreeMap<String, Real>,
    /// Computed quantities that are reported but not tested.
    pub values: BTreeMap<String, Real>,
    pub flags: BTreeMap<String, bool>,
    /// The residual the convergence runner tracks.
    pub primary: Option<String>,
    pub convergence_order: Option<Real>,
    pub expected_order: Option<Real>,
    pub table: Vec<StudyRow>,
    pub verdict: Verdict,
    pub provenance_notes: Vec<String>,
    pub error: Option<String>,
}

impl VerificationReport {
    fn new(check_id: &str, entry: &CatalogEntry) -> Self {
        VerificationReport {
            check_id: check_id.to_string(),
            geometry: GeometryRef { name: entry.name.clone(), params: entry.params.0.clone() },
            resolutions: Vec::new(),
            spacings: Vec::new(),
            residuals: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            values: BTreeMap::new(),
            flags: BTreeMap::new(),
            primary: None,
            convergence_order: None,
            expected_order: None,
            table: Vec::new(),
            verdict: Verdict::Informational,
            provenance_notes: Vec::new(),
            error: None,
        }
    }

    fn residual(&mut self, name: &str, value: f64, tolerance: f64) {
        if self.primary.is_none() {
            self.primary = Some(name.to_string());
        }
        self.residuals.insert(name.to_string(), Real(value));
        self.tolerances.insert(name.to_string(), Real(tolerance));
    }

    fn value(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), Real(value));
    }

    fn flag(&mut self, name: &str, value: bool) {
        self.flags.insert(name.to_string(), value);
    }

    fn note(&mut self, note: impl Into<String>) {
        let note = note.into();
        if !self.provenance_notes.contains(&note) {
            self.provenance_notes.push(note);
        }
    }

    /// True when every residual is at most its tolerance.
    pub fn residuals_pass(&self) -> bool {
        self.residuals.iter().all(|(k, r)| self.tolerances.get(k).is_some_and(|t| r.0 <= t.0))
    }

    /// Process exit code: 0 pass or informational, 2 fail, 3 solver or module error.
    pub fn exit_code(&self) -> i32 {
        match (&self.error, self.verdict) {
            (Some(_), _) => 3,
            (None, Verdict::Fail) => 2,
            _ => 0,
        }
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    /// Per-resolution table as CSV, or the single-resolution residuals
    /// when no study was run.
    pub fn to_csv(&self) -> Result<String> {
        let io = |e: csv::Error| GeomError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let text = |v: Real| Real::format(v.0).unwrap_or_else(|| "nan".into());
        w.write_record(["check_id", "geometry", "residual", "resolution", "h", "value", "tolerance"]).map_err(io)?;
        if self.table.is_empty() {
            let res = self.resolutions.first().map(ToString::to_string).unwrap_or_default();
            let h = self.spacings.first().map(|h| text(*h)).unwrap_or_default();
            for (name, r) in &self.residuals {
                let t = self.tolerances.get(name).copied().unwrap_or(Real(f64::NAN));
                w.write_record([&self.check_id, &self.geometry.name, name, &res, &h, &text(*r), &text(t)])
                    .map_err(io)?;
            }
        } else {
            let name = self.primary.clone().unwrap_or_default();
            for row in &self.table {
                w.write_record([
                    &self.check_id,
                    &self.geometry.name,
                    &name,
                    &row.resolution.to_string(),
                    &text(row.h),
                    &text(row.residual),
                    &text(row.tolerance),
                ])
                .map_err(io)?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| GeomError::Io(e.to_string()))?)
            .map_err(|e| GeomError::Io(e.to_string()))
    }
}

/// How map jets are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivatives {
    Analytic,
    Reference,
    Grid,
}

/// Settings shared by every check. Unset tolerances use
/// `max(1e-6, 10 h^2 scale)` with a per-check scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Single-check resolution; the entry default when unset.
    pub resolution: Option<usize>,
    /// Resolutions of a convergence study.
    pub resolutions: Vec<usize>,
    /// Overrides every residual tolerance.
    pub tol: Option<f64>,
    /// Stencil order, 2 or 4.
    pub order: usize,
    pub seed: u64,
    /// Strict hypothesis variant.
    pub strict: bool,
    /// Reference jets for single checks and grid differences for studies when unset.
    pub derivatives: Option<Derivatives>,
    /// Eigenvalues reported by the stability check.
    pub modes: usize,
    /// Tension bound below which a map counts as harmonic; the identity tolerance when unset.
    pub harmonic_tol: Option<f64>,
    pub solver_tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            resolution: None,
            resolutions: vec![32, 64, 128],
            tol: None,
            order: 2,
            seed: 0x5eed,
            strict: false,
            derivatives: None,
            modes: 3,
            harmonic_tol: None,
            solver_tolerance: 1e-10,
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order != 2 && self.order != 4 {
            return Err(GeomError::InvalidParameters(format!("order must be 2 or 4, got {}", self.order)));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(GeomError::InvalidParameters("tol must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn fd(&self) -> FdConfig {
        FdConfig::order(self.order)
    }

    fn source(&self) -> DerivativeSource {
        match self.derivatives.unwrap_or(Derivatives::Reference) {
            Derivatives::Analytic => DerivativeSource::Analytic,
            Derivatives::Reference => DerivativeSource::Reference,
            Derivatives::Grid => DerivativeSource::Grid(self.fd()),
        }
    }

    fn realize(&self) -> RealizeConfig {
        let grid = self.derivatives == Some(Derivatives::Grid);
        RealizeConfig {
            fd: self.fd(),
            source: self.source(),
            domain_fd: grid.then(|| self.fd()),
            ..RealizeConfig::default()
        }
    }

    fn tau(&self, h: f64, scale: f64) -> f64 {
        self.tol.unwrap_or_else(|| (10.0 * h * h * scale.max(1.0)).max(1e-6))
    }

    fn fixed(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }
}

fn smooth_map(entry: &CatalogEntry, res: usize, cfg: &CheckConfig) -> Result<SmoothMap> {
    match &entry.geometry {
        Geometry::Map { .. } => match entry.realize(res, &cfg.realize())? {
            Realized::Map(f) => Ok(f),
            _ => unreachable!("map entries realize as maps"),
        },
        Geometry::Immersion { ambient, map } => {
            let imm = immersion(entry, res, cfg)?;
            SmoothMap::new(
                imm.induced_metric().clone(),
                imm.induced_curvature().clone(),
                ambient.clone(),
                map.as_ref(),
                cfg.source(),
                cfg.fd(),
            )
        }
        Geometry::Manifold { .. } => {
            Err(GeomError::InvalidParameters(format!("{} is a manifold, not a map", entry.name)))
        }
    }
}

fn immersion(entry: &CatalogEntry, res: usize, cfg: &CheckConfig) -> Result<Immersion> {
    match &entry.geometry {
        Geometry::Immersion { ambient, map } => {
            Immersion::new(&entry.grid(res)?, ambient.clone(), map.as_ref(), cfg.source(), cfg.fd())
        }
        _ => Err(GeomError::InvalidParameters(format!("{} is not an immersion", entry.name))),
    }
}

fn chart_notes(report: &mut VerificationReport, entry: &CatalogEntry, res: usize) -> Result<()> {
    if !entry.grid(res)?.is_fully_periodic() {
        report.note("polar margin of 1/16 per closed axis excluded from residual maxima and integrals");
    }
    Ok(())
}

/// Fills `report` with one resolution of `check_id`; returns true when
/// the outcome is informational rather than a test.
fn check_at(check_id: &str, entry: &CatalogEntry, res: usize, cfg: &CheckConfig, report: &mut VerificationReport) -> Result<bool> {
    let grid = entry.grid(res)?;
    let h = grid.max_spacing();
    let nodes = grid.interior_nodes();
    let interior_max = |f: &dyn Fn(usize) -> f64| nodes.iter().map(|&k| f(k)).fold(0.0, f64::max);
    chart_notes(report, entry, res)?;
    match check_id {
        "weitzenboeck" => {
            let f = smooth_map(entry, res, cfg)?;
            let harmonic_tol = cfg.harmonic_tol.unwrap_or_else(|| cfg.tau(h, 1.0));
            let w = weitzenboeck_residual(&f, harmonic_tol)?;
            let scale = [w.laplacian_energy.max_abs_interior(), w.hessian_norm_sq.max_abs_interior(), w.q.max_abs_interior()]
                .into_iter()
                .fold(1.0, f64::max);
            report.residual("weitzenboeck_max", w.max_abs, cfg.tau(h, scale));
            report.value("weitzenboeck_l2", w.l2);
            report.value("max_tension", w.harmonicity.max_tension);
            report.value("laplacian_energy_max", w.laplacian_energy.max_abs_interior());
            report.value("hessian_norm_sq_max", w.hessian_norm_sq.max_abs_interior());
            report.value("q_max", w.q.max_abs_interior());
            report.flag("harmonic", w.harmonicity.harmonic);
            if w.informational {
                report.note("map is not harmonic; the identity carries a tension term and is reported only");
            }
            Ok(w.informational)
        }
        "q_bound" => {
            let f = smooth_map(entry, res, cfg)?;
            let qb = q_lower_bound(&f, &ExtremeConfig { seed: cfg.seed, ..ExtremeConfig::default() })?;
            let q = q_term(&f);
            let checked: Vec<usize> = nodes.iter().copied().filter(|&k| qb.certified[k]).collect();
            let excess = checked.iter().map(|&k| qb.bound.at(k)[0] - q.at(k)[0]).fold(f64::NEG_INFINITY, f64::max);
            let gap = checked.iter().map(|&k| (qb.bound.at(k)[0] - q.at(k)[0]).abs()).fold(0.0, f64::max);
            let scale = 1.0 + q.max_abs_interior();
            report.residual("bound_excess", excess.max(0.0), cfg.fixed(1e-6 * scale));
            report.value("equality_gap", gap);
            report.value("max_excess_signed", excess);
            report.value("checked_nodes", checked.len() as f64);
            report.value("uncertified_nodes", qb.uncertified_nodes as f64);
            report.flag("equality", gap <= 1e-6 * scale);
            if qb.uncertified_nodes > 0 {
                report.note("sectional-curvature minimum sampled where the codomain is not pointwise constant; those nodes are skipped");
            }
            Ok(false)
        }
        "hypotheses_2_3" => {
            let f = smooth_map(entry, res, cfg)?;
            let r = check_hypotheses_2_3(&f, cfg.strict, &ExtremeConfig { seed: cfg.seed, ..ExtremeConfig::default() })?;
            let tol = r.tolerance;
            let energy = if cfg.strict { r.max_energy_excess_trace } else { r.max_energy_excess };
            report.residual("energy_excess", energy, cfg.fixed(tol));
            report.residual("pinching_deficit", -r.min_pinching_margin, if cfg.strict { -tol } else { tol });
            report.residual("double_inequality_violation", r.double_inequality_max_violation, tol);
            report.value("failing_nodes", r.failing_nodes as f64);
            report.flag("strict", cfg.strict);
            report.flag("hypotheses_hold", r.pass);
            report.flag("energy_condition_half_trace", r.energy_condition_half_trace);
            report.flag("energy_condition_trace", r.energy_condition_trace);
            report.flag("double_inequality_holds", r.double_inequality_holds);
            report.note(if cfg.strict {
                "strict variant: energy bound uses the full trace and the pinching margin must be positive"
            } else {
                "non-strict variant: energy bound uses e(f) and the pinching margin may vanish"
            });
            Ok(false)
        }
        "simons" => {
            let imm = immersion(entry, res, cfg)?;
            let data = second_fundamental_form(&imm)?;
            let s = simons_residual(&data, &imm)?;
            let tol = cfg.tol.unwrap_or(s.minimal_tolerance.max(1e-6));
            if s.identity {
                report.residual("simons_max", s.max_abs, tol);
            } else {
                report.residual("simons_violation", (-s.min_residual).max(0.0), tol);
                report.note("higher codimension: the Simons formula is checked as the inequality r >= 0");
            }
            let d = vdwb_derivative(&data, &imm)?;
            report.value("max_vdwb_norm", d.max_norm());
            report.value("laplacian_term_max", s.laplacian_term_max);
            report.value("gradient_term_max", s.gradient_term_max);
            report.value("algebraic_term_max", s.algebraic_term_max);
            report.value("max_mean_curvature", s.max_mean_curvature);
            report.flag("minimal", s.minimal);
            report.flag("parallel", d.is_parallel(10.0 * h * h));
            if !s.minimal {
                report.note("immersion is not minimal; the formula assumes H = 0 and is reported only");
            }
            Ok(!s.minimal)
        }
        "pinching" => {
            let imm = immersion(entry, res, cfg)?;
            let data = second_fundamental_form(&imm)?;
            let tol = cfg.tau(h, 1.0);
            let p = pinching_check(&data, &imm, tol)?;
            let max_h = interior_max(&|k| data.mean_curvature_norm(k));
            let minimal = max_h <= tol;
            let defect = p.max_phi_norm_sq.min((p.max_phi_norm_sq - p.bound).abs().max((p.min_phi_norm_sq - p.bound).abs()));
            report.residual("pinching_conclusion_defect", defect, p.tolerance);
            report.value("max_phi_norm_sq", p.max_phi_norm_sq);
            report.value("min_phi_norm_sq", p.min_phi_norm_sq);
            report.value("bound", p.bound);
            report.value("max_mean_curvature", max_h);
            report.flag("minimal", minimal);
            report.flag("below_bound", p.below_bound);
            report.flag("equality_case", p.equality_case);
            report.flag("totally_geodesic", p.totally_geodesic);
            let applies = minimal && p.below_bound;
            if !applies {
                report.note("pinching hypotheses (minimal, |phi|^2 below the bound) fail; conclusion reported only");
            }
            Ok(!applies)
        }
        "codazzi" => {
            let imm = immersion(entry, res, cfg)?;
            let data = second_fundamental_form(&imm)?;
            let c = codazzi_residual(&data, &imm)?;
            let phi_max = interior_max(&|k| data.phi_norm_sq(k)).sqrt();
            let tol = cfg.tau(h, phi_max);
            if let Some(d) = c.divergence_max {
                report.residual("divergence_max", d, tol);
            }
            report.residual("codazzi_max", c.codazzi_max, tol);
            if let Some(t) = c.traceless_divergence_max {
                report.residual("traceless_divergence_max", t, tol);
            }
            for (name, v) in [
                ("delta_phi_max", c.delta_phi_max),
                ("dh_max", c.dh_max),
                ("traceless_divergence_lhs_max", c.traceless_divergence_lhs_max),
            ] {
                if let Some(v) = v {
                    report.value(name, v);
                }
            }
            Ok(false)
        }
        "clifford_constants" => {
            if entry.name != "clifford_torus" {
                return Err(GeomError::InvalidParameters("clifford_constants needs a clifford_torus entry".into()));
            }
            let n1: usize = entry.params.0["n1"].parse().expect("resolved parameter");
            let n2: usize = entry.params.0["n2"].parse().expect("resolved parameter");
            let cc = clifford_constants_check(n1, n2)?;
            let imm = immersion(entry, res, cfg)?;
            let data = second_fundamental_form(&imm)?;
            let dev = cc.deviation(&data, &grid).ok_or(GeomError::HypersurfaceOnly(imm.codimension()))?;
            report.residual("principal_deviation", dev, cfg.fixed(1e-4));
            report.residual("mean_identity", cc.mean_identity.abs(), cfg.fixed(1e-12));
            report.residual("norm_identity", cc.norm_identity.abs(), cfg.fixed(1e-12));
            report.value("lambda1", cc.lambda1);
            report.value("lambda2", cc.lambda2);
            report.value("printed_lambda2", cc.printed_lambda2);
            report.value("printed_mean_identity", cc.printed_mean_identity);
            report.note("second principal curvature taken as -sqrt(n1/n2), the value that satisfies the minimality identity");
            Ok(false)
        }
        "decomposition" | "integral_3_9" => {
            let imm = immersion(entry, res, cfg)?;
            let data = second_fundamental_form(&imm)?;
            let phi = data.phi_field(&grid, 0)?;
            let solver = SolverConfig { tolerance: cfg.solver_tolerance, seed: cfg.seed, ..SolverConfig::default() };
            let d = solve_decomposition(&phi, imm.induced_metric(), imm.induced_curvature(), cfg.fd(), solver)?;
            report.value("solver_iterations", d.solver_stats.iterations as f64);
            report.value("solver_residual", d.solver_stats.final_residual);
            report.value("kernel_dimension", d.kernel_dimension as f64);
            if check_id == "decomposition" {
                let x = &d.diagnostics;
                report.residual("reconstruction_error", x.reconstruction_error, cfg.fixed(1e-6));
                report.residual("orthogonality", x.orthogonality, cfg.fixed(1e-6));
                report.residual("tt_trace_max", x.tt_trace_max, cfg.fixed(1e-6));
                report.residual("adjoint_divergence", x.adjoint_divergence, cfg.fixed(1e-6));
                report.value("covariant_divergence_max", x.divergence_max);
                report.value("phi_l2", x.phi_l2);
                report.note("divergence-free part tested through the discrete adjoint of the conformal Killing operator");
            } else {
                let r = check_3_8_and_3_9(&imm, &data, &d, cfg.tau(h, 1.0))?;
                report.residual("integral_difference", r.eq39_difference, cfg.tol.unwrap_or(r.tolerance));
                report.residual("traceless_divergence_residual", r.eq38_residual, cfg.tau(h, r.eq38_lhs_max));
                report.value("s_theta_sq_scaled", r.eq39_lhs);
                report.value("mean_curvature_integral", r.eq39_rhs);
                report.value("s_theta_sq", r.s_theta_sq);
                report.value("s_theta_norm", r.s_theta_norm);
                report.value("split_residual", r.split_residual);
                report.value("mean_curvature_variation", r.mean_curvature_variation);
                report.flag("integral_vanishes", r.integral_vanishes);
                report.note("integral formula balanced with S' = S/2 on the left-hand side");
            }
            Ok(false)
        }
        "stability" => {
            let imm = immersion(entry, res, cfg)?;
            let data = second_fundamental_form(&imm)?;
            let op = JacobiOperator::new(&imm, &data)?;
            let s = stability_spectrum(&op, cfg.modes, LanczosConfig { seed: cfg.seed, ..LanczosConfig::default() })?;
            let (vmin, vmax) = op.potential_range();
            report.residual("ritz_residual", s.residuals[0], 1e-5 * (vmax.abs().max(vmin.abs()) + 1.0));
            if let Some(r) = entry.references.iter().find(|r| r.quantity == "jacobi_lambda_max") {
                report.residual("lambda_max_error", (s.lambda_max - r.value).abs(), cfg.fixed(r.tolerance));
                report.value("lambda_max_reference", r.value);
            }
            report.value("lambda_max", s.lambda_max);
            report.value("stability_tolerance", s.tolerance);
            report.value("top_mode_variation", s.top_mode_variation);
            report.value("potential_min", vmin);
            report.value("potential_max", vmax);
            for (i, v) in s.eigenvalues.iter().enumerate() {
                report.value(&format!("eigenvalue_{i}"), *v);
            }
            report.flag("stable", s.stable);
            report.flag("ricci_negative", s.ricci_negative);
            report.note("spectrum of the second-order flux Laplacian by shift-invert Lanczos");
            Ok(false)
        }
        "symmetry" => {
            let curv = match entry.realize(res, &cfg.realize())? {
                Realized::Manifold { curvature, .. } => curvature,
                Realized::Map(f) => f.domain_curvature().clone(),
                Realized::Immersion(imm) => imm.induced_curvature().clone(),
            };
            let s = symmetry_suite(&curv);
            let tol = cfg.tau(h, 1.0);
            report.residual("symmetry_max", s.max(), tol);
            report.value("christoffel_symmetry", s.christoffel_symmetry);
            report.value("antisymmetry_first", s.antisymmetry_first);
            report.value("antisymmetry_second", s.antisymmetry_second);
            report.value("pair_symmetry", s.pair_symmetry);
            report.value("bianchi", s.bianchi);
            report.value("ricci_symmetry", s.ricci_symmetry);
            Ok(false)
        }
        "reference" => {
            if entry.jet_curvature {
                report.note("curvature taken from the model jet rather than finite differences");
            }
            for row in catalog::reference_check(entry, res, &cfg.realize())? {
                report.residual(&row.quantity, row.error, cfg.fixed(row.tolerance));
                report.value(&format!("{}_computed", row.quantity), row.computed);
                report.value(&format!("{}_reference", row.quantity), row.reference);
            }
            Ok(false)
        }
        other => Err(GeomError::UnknownCheck(other.to_string())),
    }
}

fn finish(report: &mut VerificationReport, informational: bool) {
    report.verdict = if report.error.is_some() {
        Verdict::Fail
    } else if informational || report.residuals.is_empty() {
        Verdict::Informational
    } else if report.residuals_pass() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
}

/// Runs one check at one resolution. Module errors are recorded in the
/// report; unknown check ids and invalid settings are returned as errors.
pub fn run_check(check_id: &str, entry: &CatalogEntry, cfg: &CheckConfig) -> Result<VerificationReport> {
    if !CHECK_IDS.contains(&check_id) {
        return Err(GeomError::UnknownCheck(check_id.to_string()));
    }
    cfg.validate()?;
    let res = cfg.resolution.unwrap_or(entry.default_resolution);
    let grid = entry.grid(res)?;
    let mut report = VerificationReport::new(check_id, entry);
    report.resolutions.push(res);
    report.spacings.push(Real(grid.max_spacing()));
    let informational = match check_at(check_id, entry, res, cfg, &mut report) {
        Ok(i) => i,
        Err(e @ (GeomError::UnknownCheck(_) | GeomError::UnknownEntry(_))) => return Err(e),
        Err(e) => {
            report.error = Some(e.to_string());
            false
        }
    };
    finish(&mut report, informational);
    Ok(report)
}

/// Least-squares slope of `log r` against `log h` over the positive residuals.
pub fn fitted_order(h: &[f64], r: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h.iter().zip(r).filter(|(h, r)| **h > 0.0 && **r > 0.0).map(|(h, r)| (h.ln(), r.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs `check_id` at every resolution of `cfg.resolutions` (at least three,
/// each double the previous) and fits the decay order of the primary residual.
/// Passes when the order is within 0.3 of the stencil order or every
/// residual is at the floor.
pub fn convergence_study(check_id: &str, entry: &CatalogEntry, cfg: &CheckConfig) -> Result<VerificationReport> {
    let res = &cfg.resolutions;
    if res.len() < 3 || res.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(GeomError::InvalidParameters("a study needs at least three dyadic resolutions".into()));
    }
    let mut report = VerificationReport::new(check_id, entry);
    let mut informational = false;
    let mut hs = Vec::new();
    let mut rs = Vec::new();
    for &n in res {
        let derivatives = Some(cfg.derivatives.unwrap_or(Derivatives::Grid));
        let single = run_check(check_id, entry, &CheckConfig { resolution: Some(n), derivatives, ..cfg.clone() })?;
        report.resolutions.push(n);
        report.spacings.extend(single.spacings.iter().copied());
        for note in &single.provenance_notes {
            report.note(note.clone());
        }
        if let Some(e) = single.error {
            report.error = Some(format!("resolution {n}: {e}"));
            break;
        }
        informational |= single.verdict == Verdict::Informational;
        let Some(primary) = single.primary.clone() else {
            return Err(GeomError::InvalidParameters(format!("check {check_id} has no residual to study")));
        };
        let r = single.residuals[&primary];
        report.table.push(StudyRow { resolution: n, h: single.spacings[0], residual: r, tolerance: single.tolerances[&primary] });
        report.primary = Some(primary);
        hs.push(single.spacings[0].0);
        rs.push(r.0);
        if n == *res.last().expect("nonempty") {
            report.values = single.values;
            report.flags = single.flags;
        }
    }
    if report.error.is_none() {
        let expected = cfg.order as f64;
        report.expected_order = Some(Real(expected));
        let worst = rs.iter().copied().fold(0.0, f64::max);
        let order = fitted_order(&hs, &rs);
        report.convergence_order = order.map(Real);
        if worst <= FLOOR {
            report.residual("max_residual", worst, FLOOR);
            report.flag("at_floor", true);
            report.note("residual at the floating-point floor; order test skipped");
        } else {
            report.flag("at_floor", false);
            let dev = order.map_or(f64::INFINITY, |o| (o - expected).abs());
            report.residual("order_deviation", dev, 0.3);
        }
    }
    finish(&mut report, informational);
    Ok(report)
}

/// Builds a catalog entry from a name and a `k=v,...` string.
pub fn resolve_geometry(name: &str, params: &str) -> Result<CatalogEntry> {
    catalog::build(name, &Params::parse(params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_use_seventeen_significant_digits_and_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let text = serde_json::to_string(&Real(v)).unwrap();
            let mantissa = text.trim_start_matches('-').split('e').next().unwrap().replace('.', "");
            assert_eq!(mantissa.len(), 17, "{text}");
            let back: Real = serde_json::from_str(&text).unwrap();
            assert_eq!(back.0.to_bits(), v.to_bits());
        }
        assert_eq!(serde_json::to_string(&Real(f64::NAN)).unwrap(), "null");
        assert!(serde_json::from_str::<Real>("null").unwrap().0.is_nan());
    }

    #[test]
    fn fitted_order_recovers_power_laws() {
        let h = [0.4, 0.2, 0.1, 0.05];
        let r: Vec<f64> = h.iter().map(|h: &f64| 3.0 * h.powi(2)).collect();
        assert!((fitted_order(&h, &r).unwrap() - 2.0).abs() < 1e-12);
        let r: Vec<f64> = h.iter().map(|h: &f64| 0.5 * h.powi(4)).collect();
        assert!((fitted_order(&h, &r).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(fitted_order(&[0.1], &[1.0]), None);
        assert_eq!(fitted_order(&[0.1, 0.05], &[0.0, 0.0]), None);
    }

    #[test]
    fn verdict_matches_residuals_and_exit_codes() {
        let e = resolve_geometry("flat_torus", "").unwrap();
        let mut r = VerificationReport::new("symmetry", &e);
        r.residual("a", 1.0, 2.0);
        finish(&mut r, false);
        assert_eq!((r.verdict, r.exit_code()), (Verdict::Pass, 0));
        r.residual("b", 3.0, 2.0);
        finish(&mut r, false);
        assert_eq!((r.verdict, r.exit_code()), (Verdict::Fail, 2));
        r.error = Some("solver".into());
        finish(&mut r, false);
        assert_eq!(r.exit_code(), 3);
        let mut empty = VerificationReport::new("symmetry", &e);
        finish(&mut empty, false);
        assert_eq!(empty.verdict, Verdict::Informational);
    }

    #[test]
    fn unknown_checks_and_bad_settings_are_errors() {
        let e = resolve_geometry("flat_torus", "").unwrap();
        let cfg = CheckConfig::default();
        assert!(matches!(run_check("curl", &e, &cfg), Err(GeomError::UnknownCheck(_))));
        let bad = CheckConfig { order: 3, ..CheckConfig::default() };
        assert!(matches!(run_check("symmetry", &e, &bad), Err(GeomError::InvalidParameters(_))));
        let few = CheckConfig { resolutions: vec![16, 32], ..CheckConfig::default() };
        assert!(convergence_study("symmetry", &e, &few).is_err());
        let skew = CheckConfig { resolutions: vec![16, 24, 48], ..CheckConfig::default() };
        assert!(convergence_study("symmetry", &e, &skew).is_err());
    }

    #[test]
    fn module_errors_are_recorded_in_the_report() {
        let e = resolve_geometry("equator", "").unwrap();
        let r = run_check("decomposition", &e, &CheckConfig { resolution: Some(16), ..CheckConfig::default() }).unwrap();
        assert!(r.error.as_deref().unwrap().contains("closed manifold"));
        assert_eq!((r.verdict, r.exit_code()), (Verdict::Fail, 3));
        let flat = resolve_geometry("flat_torus", "").unwrap();
        let r = run_check("simons", &flat, &CheckConfig::default()).unwrap();
        assert_eq!(r.exit_code(), 3);
    }

    #[test]
    fn flat_subtorus_is_stable() {
        let e = resolve_geometry("flat_subtorus", "").unwrap();
        let r = run_check("stability", &e, &CheckConfig { resolution: Some(32), ..CheckConfig::default() }).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.flags["stable"]);
        assert!(r.values["lambda_max"].0.abs() < 1e-8);
    }

    #[test]
    fn linear_map_study_sits_at_the_floor() {
        let e = resolve_geometry("linear_torus_map", "").unwrap();
        let cfg = CheckConfig { resolutions: vec![16, 32, 64], ..CheckConfig::default() };
        let r = convergence_study("weitzenboeck", &e, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.flags["at_floor"]);
        assert_eq!(r.table.len(), 3);
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv, convergence_study("weitzenboeck", &e, &cfg).unwrap().to_csv().unwrap());
    }

    #[test]
    fn graph_codazzi_study_converges_at_second_order() {
        let e = resolve_geometry("graph_hypersurface", "eps=0.1").unwrap();
        let cfg = CheckConfig { resolutions: vec![16, 32, 64], ..CheckConfig::default() };
        let r = convergence_study("codazzi", &e, &cfg).unwrap();
        let order = r.convergence_order.unwrap().0;
        assert!((order - 2.0).abs() < 0.3, "{order}");
        assert_eq!(r.verdict, Verdict::Pass);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["primary"], "divergence_max");
    }
}
