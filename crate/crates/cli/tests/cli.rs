use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bochner-lab"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("BOCHNER_LAB_THREADS", n.to_string()),
        None => cmd.env_remove("BOCHNER_LAB_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

/// Enough of JSON Schema for the published report schema: type, enum,
/// required, properties, additionalProperties, items and minimum.
fn validate(schema: &Value, v: &Value, path: &str) -> Result<(), String> {
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => vec![],
        };
        let ok = types.iter().any(|t| match *t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => false,
        });
        if !ok {
            return Err(format!("{path}: {v} is not {types:?}"));
        }
    }
    if let Some(Value::Array(options)) = schema.get("enum") {
        if !options.contains(v) {
            return Err(format!("{path}: {v} not in enum"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            return Err(format!("{path}: {x} below {min}"));
        }
    }
    if let Some(obj) = v.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = key.as_str().unwrap();
            if !obj.contains_key(key) {
                return Err(format!("{path}: missing {key}"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => validate(s, child, &format!("{path}.{k}"))?,
                None => match schema.get("additionalProperties") {
                    Some(Value::Bool(false)) => return Err(format!("{path}: unexpected key {k}")),
                    Some(s @ Value::Object(_)) => validate(s, child, &format!("{path}.{k}"))?,
                    _ => {}
                },
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            validate(items, child, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/verification_report.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn catalog_list_names_every_entry() {
    let out = lab(&["catalog", "list"], None);
    assert!(out.status.success());
    let names: Vec<String> = json(&out).as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap().to_string()).collect();
    for want in ["flat_torus", "round_sphere", "clifford_torus", "equator", "graph_hypersurface", "linear_torus_map"] {
        assert!(names.iter().any(|n| n == want), "{want}");
    }
}

#[test]
fn catalog_show_prints_references_with_full_precision() {
    let out = lab(&["catalog", "show", "linear_torus_map"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"value\": 2.5000000000000000e0"), "{text}");
    assert_eq!(lab(&["catalog", "show", "klein_bottle"], None).status.code(), Some(1));
}

#[test]
fn passing_check_exits_zero_and_matches_the_schema() {
    let out = lab(&["check", "pinching", "--geometry", "clifford_torus", "--resolution", "32"], None);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    validate(&schema(), &report, "$").unwrap();
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["flags"]["equality_case"], true);
    assert_eq!(report["values"]["bound"].as_f64(), Some(2.0));
}

#[test]
fn failing_check_exits_two() {
    let out = lab(&["check", "hypotheses_2_3", "--geometry", "identity_map", "--resolution", "16", "--strict"], None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["verdict"], "fail");
    let relaxed = lab(&["check", "hypotheses_2_3", "--geometry", "identity_map", "--resolution", "16"], None);
    assert_eq!(relaxed.status.code(), Some(0));
}

#[test]
fn module_errors_exit_three_with_the_error_in_the_report() {
    let out = lab(&["check", "decomposition", "--geometry", "equator", "--resolution", "16"], None);
    assert_eq!(out.status.code(), Some(3));
    let report = json(&out);
    validate(&schema(), &report, "$").unwrap();
    assert!(report["error"].as_str().unwrap().contains("closed manifold"));
}

#[test]
fn input_errors_exit_one() {
    assert_eq!(lab(&["check", "curl", "--geometry", "flat_torus"], None).status.code(), Some(1));
    assert_eq!(lab(&["check", "symmetry", "--geometry", "round_sphere", "--params", "r=-1"], None).status.code(), Some(1));
    assert_eq!(lab(&["check", "symmetry", "--geometry", "flat_torus", "--order", "3"], None).status.code(), Some(1));
    assert_eq!(lab(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(lab(&["config", "show"], Some(0)).status.code(), Some(1));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lab.json");
    std::fs::write(&path, r#"{"order": 4, "seed": 7, "tol": 0.5}"#).unwrap();
    let p = path.to_str().unwrap();
    let cfg = json(&lab(&["config", "show", "--config", p, "--order", "2"], None));
    assert_eq!(cfg["order"], 2);
    assert_eq!(cfg["seed"], 7);
    assert_eq!(cfg["tol"].as_f64(), Some(0.5));
    std::fs::write(&path, r#"{"colour": "red"}"#).unwrap();
    assert_eq!(lab(&["config", "show", "--config", p], None).status.code(), Some(1));
}

#[test]
fn reports_and_tables_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 4, 1] {
        let report = dir.path().join(format!("r{threads}.json"));
        let table = dir.path().join(format!("r{threads}.csv"));
        let out = lab(
            &[
                "study",
                "codazzi",
                "--geometry",
                "graph_hypersurface",
                "--resolutions",
                "16,32,64",
                "--out",
                report.to_str().unwrap(),
                "--csv",
                table.to_str().unwrap(),
            ],
            Some(threads),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((std::fs::read(&report).unwrap(), std::fs::read(&table).unwrap()));
        let spectrum = lab(&["check", "stability", "--geometry", "equator", "--resolution", "16"], Some(threads));
        outputs.push((spectrum.stdout, Vec::new()));
    }
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[1], outputs[3]);
    assert_eq!(outputs[0], outputs[4]);
    assert_eq!(outputs[1], outputs[5]);
    let report: Value = serde_json::from_slice(&outputs[0].0).unwrap();
    validate(&schema(), &report, "$").unwrap();
    assert_eq!(report["table"].as_array().unwrap().len(), 3);
}
