//! Acceptance criteria, one line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use bochner_core::catalog::{self, CatalogEntry, EntryKind, Params, RealizeConfig, Realized};
use bochner_core::decomposition::{ahlfors_laplacian, delta_star, solve_decomposition, SolverConfig};
use bochner_core::field::{Role, TensorField};
use bochner_core::report::{convergence_study, fitted_order, run_check, CheckConfig, Derivatives, Verdict, VerificationReport};
use bochner_core::stability::{superharmonic_check, JacobiOperator};
use bochner_core::stencil::FdConfig;
use bochner_core::submanifold::second_fundamental_form;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const DYADIC: [usize; 3] = [32, 64, 128];

fn entry(name: &str, params: &str) -> CatalogEntry {
    catalog::build(name, &Params::parse(params).unwrap()).unwrap()
}

fn at(res: usize) -> CheckConfig {
    CheckConfig { resolution: Some(res), ..CheckConfig::default() }
}

fn grid_study() -> CheckConfig {
    CheckConfig { resolutions: DYADIC.to_vec(), derivatives: Some(Derivatives::Grid), ..CheckConfig::default() }
}

fn check(id: &str, e: &CatalogEntry, cfg: &CheckConfig) -> Result<VerificationReport, String> {
    let r = run_check(id, e, cfg).map_err(|err| format!("{id} on {}: {err}", e.name))?;
    match &r.error {
        Some(err) => Err(format!("{id} on {}: {err}", e.name)),
        None => Ok(r),
    }
}

fn study(id: &str, e: &CatalogEntry, cfg: &CheckConfig) -> Result<VerificationReport, String> {
    let r = convergence_study(id, e, cfg).map_err(|err| format!("{id} study on {}: {err}", e.name))?;
    match &r.error {
        Some(err) => Err(format!("{id} study on {}: {err}", e.name)),
        None => Ok(r),
    }
}

fn value(r: &VerificationReport, key: &str) -> f64 {
    r.values.get(key).or_else(|| r.residuals.get(key)).map_or(f64::NAN, |v| v.0)
}

fn order(r: &VerificationReport) -> f64 {
    r.convergence_order.map_or(f64::NAN, |v| v.0)
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn order_two(p: f64, what: &str) -> Result<(), String> {
    ensure((p - 2.0).abs() <= 0.3, format!("{what}: fitted order {p:.3}"))
}

fn criterion_1() -> Outcome {
    let mut notes = Vec::new();
    for (name, params) in [("identity_map", ""), ("equator", "")] {
        let start = Instant::now();
        let r = study("weitzenboeck", &entry(name, params), &grid_study())?;
        let secs = start.elapsed().as_secs_f64();
        order_two(order(&r), name)?;
        ensure(r.verdict == Verdict::Pass, format!("{name}: verdict {}", r.verdict))?;
        ensure(secs < 30.0, format!("{name}: study took {secs:.1} s"))?;
        notes.push(format!("{name} order {:.2} in {secs:.1} s", order(&r)));
    }
    for params in ["", "a11=1,a12=1,a21=-1,a22=2"] {
        let cfg = CheckConfig { derivatives: Some(Derivatives::Analytic), ..grid_study() };
        let r = study("weitzenboeck", &entry("linear_torus_map", params), &cfg)?;
        let worst = r.table.iter().map(|row| row.residual.0).fold(0.0, f64::max);
        ensure(worst < 1e-12, format!("linear torus map [{params}]: residual {worst:e}"))?;
        notes.push(format!("linear torus {worst:.1e}"));
    }
    Ok(notes.join(", "))
}

fn criterion_2() -> Outcome {
    let mut maps: Vec<CatalogEntry> =
        catalog::list().iter().filter(|s| s.kind == EntryKind::Map).map(|s| entry(&s.name, "")).collect();
    maps.push(entry("identity_map", "entry=flat_torus"));
    maps.push(entry("identity_map", "n=3"));
    maps.push(entry("constant_map", "entry=flat_torus"));
    for e in &maps {
        let r = check("q_bound", e, &at(e.default_resolution))?;
        ensure(r.verdict == Verdict::Pass, format!("{} {:?}: bound_excess {:e}", e.name, e.params.0, value(&r, "bound_excess")))?;
        ensure(value(&r, "checked_nodes") > 0.0, format!("{}: no certified nodes", e.name))?;
    }
    let r = check("q_bound", &entry("identity_map", ""), &at(32))?;
    let gap = value(&r, "equality_gap");
    ensure(gap <= 1e-6, format!("identity equality gap {gap:e}"))?;
    Ok(format!("{} maps, identity gap {gap:.1e}", maps.len()))
}

fn criterion_3() -> Outcome {
    let identity = entry("identity_map", "");
    let loose = check("hypotheses_2_3", &identity, &at(32))?;
    ensure(loose.verdict == Verdict::Pass, "identity fails the non-strict hypotheses")?;
    let strict = CheckConfig { strict: true, ..at(32) };
    let tight = check("hypotheses_2_3", &identity, &strict)?;
    ensure(tight.verdict == Verdict::Fail, "identity passes the strict hypotheses")?;
    let constant = check("hypotheses_2_3", &entry("constant_map", ""), &strict)?;
    ensure(constant.verdict == Verdict::Pass, "constant map fails the strict hypotheses")?;
    let mut worst: f64 = 0.0;
    for params in ["", "r=2", "r=0.5", "n=3", "entry=flat_torus"] {
        let r = check("hypotheses_2_3", &entry("identity_map", params), &at(16))?;
        let v = value(&r, "double_inequality_violation");
        let tol = r.tolerances["double_inequality_violation"].0;
        ensure(r.flags["double_inequality_holds"] && v <= tol, format!("double inequality [{params}]: {v:e} > {tol:e}"))?;
        worst = worst.max(v);
    }
    Ok(format!("double inequality violation {worst:.1e} (roundoff)"))
}

fn criterion_4() -> Outcome {
    let clifford = entry("clifford_torus", "");
    let s = study("simons", &clifford, &grid_study())?;
    order_two(order(&s), "simons")?;
    let p = check("pinching", &clifford, &at(64))?;
    let (lo, hi) = (value(&p, "min_phi_norm_sq"), value(&p, "max_phi_norm_sq"));
    ensure((lo - 2.0).abs() <= 1e-4 && (hi - 2.0).abs() <= 1e-4, format!("|phi|^2 in [{lo}, {hi}]"))?;
    ensure(value(&p, "bound") == 2.0, "pinching bound is not 2")?;
    ensure(p.flags["equality_case"], "equality case not detected")?;
    let single = check("simons", &clifford, &at(64))?;
    let h = single.spacings[0].0;
    let vdwb = value(&single, "max_vdwb_norm");
    ensure(vdwb <= 10.0 * h * h, format!("max |D phi| {vdwb:e} above 10 h^2"))?;
    Ok(format!("order {:.2}, |phi|^2 = {hi:.6}, max |D phi| {vdwb:.1e}", order(&s)))
}

fn criterion_5() -> Outcome {
    let mut notes = Vec::new();
    // The 4-dimensional (2,2) chart at N = 64 has 1.7e7 nodes; it runs at N = 16.
    for (params, res) in [("n1=1,n2=1", 64), ("n1=1,n2=2", 64), ("n1=2,n2=2", 16)] {
        let r = check("clifford_constants", &entry("clifford_torus", params), &at(res))?;
        ensure(r.verdict == Verdict::Pass, format!("({params}) at N={res}: {:?}", r.residuals))?;
        ensure(value(&r, "mean_identity") == 0.0, format!("({params}) mean identity {:e}", value(&r, "mean_identity")))?;
        notes.push(format!("({params}) N={res} dev {:.1e}", value(&r, "principal_deviation")));
    }
    Ok(notes.join(", "))
}

fn criterion_6() -> Outcome {
    let graph = entry("graph_hypersurface", "eps=0.1");
    let s = study("codazzi", &graph, &grid_study())?;
    order_two(order(&s), "graph divergence")?;
    let single = check("codazzi", &graph, &at(64))?;
    for key in ["delta_phi_max", "dh_max", "traceless_divergence_lhs_max"] {
        ensure(value(&single, key) > 1e-3, format!("{key} = {:e}", value(&single, key)))?;
    }
    ensure(single.verdict == Verdict::Pass, format!("graph codazzi residuals {:?}", single.residuals))?;
    let c = check("codazzi", &entry("clifford_torus", ""), &at(64))?;
    let h = c.spacings[0].0;
    let worst = c.residuals.values().map(|v| v.0).fold(0.0, f64::max);
    ensure(worst <= 10.0 * h * h, format!("clifford codazzi residual {worst:e}"))?;
    Ok(format!("graph order {:.2}, clifford max {worst:.1e}", order(&s)))
}

fn flat_torus(res: usize) -> (bochner_core::metric::MetricField, bochner_core::curvature::CurvatureBundle) {
    match entry("flat_torus", "").realize(res, &RealizeConfig::default()).unwrap() {
        Realized::Manifold { metric, curvature } => (metric, curvature),
        _ => unreachable!(),
    }
}

fn criterion_7() -> Outcome {
    let fd = FdConfig::order(2);
    let (metric, curv) = flat_torus(32);
    let grid = metric.grid().clone();
    let theta0 = TensorField::from_fn(&grid, Role::OneForm, |x| vec![x[0].sin() + 0.5 * x[1].cos(), (x[0] - x[1]).sin()])
        .map_err(|e| e.to_string())?;
    let lie = delta_star(&theta0, &curv, fd).map_err(|e| e.to_string())?;
    let g = TensorField::from_fn(&grid, Role::Sym2, |_| vec![1.0, 0.0, 0.0, 1.0]).map_err(|e| e.to_string())?;
    let phi = lie.combine(1.0, &g, 1.0).map_err(|e| e.to_string())?;
    let solver = SolverConfig::default();
    let d = solve_decomposition(&phi, &metric, &curv, fd, solver).map_err(|e| e.to_string())?;
    let x = &d.diagnostics;
    let lambda_err = d.lambda.data().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    ensure(lambda_err < 1e-6, format!("lambda off by {lambda_err:e}"))?;
    ensure(d.tt_part.max_abs() < 1e-6, format!("tt part {:e}", d.tt_part.max_abs()))?;
    ensure(x.reconstruction_error < 1e-6, format!("reconstruction {:e}", x.reconstruction_error))?;
    ensure(x.orthogonality < 1e-6, format!("orthogonality {:e}", x.orthogonality))?;
    ensure(x.tt_trace_max <= solver.tolerance, format!("tt trace {:e}", x.tt_trace_max))?;
    ensure(x.divergence_max <= solver.tolerance, format!("tt divergence {:e}", x.divergence_max))?;

    let mut hs = Vec::new();
    let mut rs = Vec::new();
    for n in DYADIC {
        let (metric, curv) = flat_torus(n);
        let grid = metric.grid();
        let theta = TensorField::from_fn(grid, Role::OneForm, |x| vec![x[0].sin(), 0.0]).map_err(|e| e.to_string())?;
        let lap = ahlfors_laplacian(&theta, &metric, &curv, fd).map_err(|e| e.to_string())?;
        let err = lap.combine(1.0, &theta, -2.0).map_err(|e| e.to_string())?.max_abs();
        hs.push(grid.max_spacing());
        rs.push(err);
    }
    let p = fitted_order(&hs, &rs).unwrap_or(f64::NAN);
    order_two(p, "eigenform")?;
    Ok(format!("lambda err {lambda_err:.1e}, reconstruction {:.1e}, eigenform order {p:.2}", x.reconstruction_error))
}

fn criterion_8() -> Outcome {
    let g = check("integral_3_9", &entry("graph_hypersurface", "eps=0.1"), &at(64))?;
    let (lhs, rhs) = (value(&g, "s_theta_sq_scaled"), value(&g, "mean_curvature_integral"));
    ensure(lhs > 1e-3 && rhs > 1e-3, format!("graph sides {lhs:e} {rhs:e}"))?;
    ensure(g.verdict == Verdict::Pass, format!("graph integral residuals {:?}", g.residuals))?;
    let c = check("integral_3_9", &entry("clifford_torus", ""), &at(32))?;
    let (cl, cr) = (value(&c, "s_theta_sq_scaled"), value(&c, "mean_curvature_integral"));
    ensure(cl.abs() < 1e-6 && cr.abs() < 1e-6, format!("clifford sides {cl:e} {cr:e}"))?;
    let split = value(&c, "split_residual");
    ensure(split < 1e-6, format!("clifford phi - phi_TT = {split:e}"))?;
    Ok(format!("graph {lhs:.6} vs {rhs:.6}, clifford split {split:.1e}"))
}

fn criterion_9() -> Outcome {
    let flat = check("stability", &entry("flat_subtorus", ""), &at(64))?;
    let lf = value(&flat, "lambda_max");
    ensure(flat.flags["stable"] && lf.abs() <= value(&flat, "stability_tolerance"), format!("flat lambda_max {lf:e}"))?;
    let mut notes = vec![format!("flat {lf:.1e}")];
    for (name, target) in [("equator", 2.0), ("clifford_torus", 4.0)] {
        let r = check("stability", &entry(name, ""), &at(64))?;
        let l = value(&r, "lambda_max");
        ensure((l - target).abs() <= 1e-2 && !r.flags["stable"], format!("{name} lambda_max {l}"))?;
        notes.push(format!("{name} {l:.4}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let c: Vec<f64> = (0..4).map(|_| rng.random_range(-0.4..0.4)).collect();
    let clifford = entry("clifford_torus", "");
    let mut hs = Vec::new();
    let mut rs = Vec::new();
    for n in DYADIC {
        let Realized::Immersion(imm) = clifford.realize(n, &RealizeConfig::default()).map_err(|e| e.to_string())? else {
            unreachable!()
        };
        let data = second_fundamental_form(&imm).map_err(|e| e.to_string())?;
        let op = JacobiOperator::new(&imm, &data).map_err(|e| e.to_string())?;
        let u = TensorField::scalar(imm.grid(), |x| {
            2.0 + c[0] * x[0].sin() + c[1] * x[1].cos() + c[2] * (x[0] + x[1]).sin() + c[3] * (2.0 * x[0] - x[1]).cos()
        });
        rs.push(superharmonic_check(&op, &u, 1e-10).map_err(|e| e.to_string())?.identity_residual);
        hs.push(imm.grid().max_spacing());
    }
    let p = fitted_order(&hs, &rs).unwrap_or(f64::NAN);
    order_two(p, "product rule identity")?;
    notes.push(format!("product rule order {p:.2}"));
    Ok(notes.join(", "))
}

fn criterion_10(suite_start: Instant) -> Outcome {
    let schemas = catalog::list();
    for s in &schemas {
        let e = entry(&s.name, "");
        let r = check("symmetry", &e, &at(e.default_resolution))?;
        ensure(r.verdict == Verdict::Pass, format!("{}: symmetry {:e}", s.name, value(&r, "symmetry_max")))?;
    }
    let run = |threads: usize| -> Result<Vec<String>, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| {
            let study_cfg = CheckConfig { resolutions: vec![16, 32, 64], ..grid_study() };
            let s = study("weitzenboeck", &entry("identity_map", ""), &study_cfg)?;
            let st = check("stability", &entry("equator", ""), &at(32))?;
            let d = check("decomposition", &entry("graph_hypersurface", ""), &at(32))?;
            let csv = s.to_csv().map_err(|e| e.to_string())?;
            Ok(vec![s.to_json(), csv, st.to_json(), d.to_json()])
        })
    };
    let first = run(1)?;
    ensure(first == run(4)?, "reports differ between 1 and 4 threads")?;
    ensure(first == run(1)?, "reports differ between repeated runs")?;
    let secs = suite_start.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("acceptance run took {secs:.0} s"))?;
    Ok(format!("{} entries, reports byte-identical, acceptance in {secs:.0} s", schemas.len()))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let criteria: [(&str, &dyn Fn() -> Outcome); 9] = [
        ("Weitzenboeck identity", &criterion_1),
        ("Q-bound chain", &criterion_2),
        ("hypothesis checker", &criterion_3),
        ("Simons identity", &criterion_4),
        ("generalized Clifford constants", &criterion_5),
        ("Codazzi and divergence identities", &criterion_6),
        ("TT decomposition", &criterion_7),
        ("integral formula", &criterion_8),
        ("stability", &criterion_9),
    ];
    let mut failed = 0;
    let mut report = |i: usize, title: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("criterion {i}: pass  {title} ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {i}: FAIL  {title} ({detail})");
            }
        }
    };
    for (i, (title, f)) in criteria.iter().enumerate() {
        report(i + 1, title, f());
    }
    report(10, "infrastructure", criterion_10(start));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
