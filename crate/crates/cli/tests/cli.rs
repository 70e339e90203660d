use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlab")).args(args).output().expect("dlab runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

#[test]
fn solve_scalar_cubic() {
    let out = scratch("solve_scalar");
    let o = dlab(&["solve", "--config", &cfg("scalar_cubic.toml"), "--oracle", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out.join("solve.json"));
    let u = doc["result"]["solve"]["u"][0].as_f64().unwrap();
    assert!((u - 2.0).abs() <= 1e-10);
    assert!(doc["result"]["solve"]["residual_inf"].as_f64().unwrap() <= 1e-10);
    assert_eq!(doc["checks"]["scalar_oracle"], true);
    assert_eq!(doc["config"]["measure"]["atoms"], "0:12");
    assert!(doc.get("generated_unix").is_some());
}

#[test]
fn reduce_without_nonlinearity_keeps_measure() {
    let out = scratch("reduce_linear");
    let o = dlab(&[
        "reduce",
        "--override",
        "operator.n=6",
        "--override",
        "measure.atoms=1:0.5, 4:-1.25",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out.join("reduce.json"));
    let mu = doc["result"]["reduce"]["mu"].as_array().unwrap().clone();
    assert_eq!(doc["result"]["reduce"]["mu_star"].as_array().unwrap().len(), mu.len());
    assert!(doc["result"]["reduce"]["concentrated_defect"].as_f64().unwrap() <= 1e-8 * 1.75);
}

#[test]
fn malformed_config_is_an_operational_error() {
    let out = scratch("bad_config");
    let path = out.join("bad.toml");
    std::fs::write(&path, "operator.n = 4\n\n[solver]\nmax_iters = 3\n").unwrap();
    let o = dlab(&["solve", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("max_iters") && err.contains("line 4"), "{err}");
    assert!(!out.join("solve.json").exists());

    let o = dlab(&["solve", "--override", "operator.kind=hexagonal"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reports_are_byte_identical_without_timestamp() {
    let dir = scratch("determinism");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut bytes = Vec::new();
        for cmd in ["audit", "mc-check"] {
            let o = dlab(&[
                cmd,
                "--config",
                &cfg("grid_semilinear.toml"),
                "--paths",
                "2000",
                "--no-timestamp",
                "--out",
                dir.to_str().unwrap(),
            ]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            bytes.push(std::fs::read(dir.join(format!("{}.json", cmd.replace('-', "_")))).unwrap());
        }
        runs.push(bytes);
    }
    assert!(runs[0] == runs[1]);
    assert!(!String::from_utf8_lossy(&runs[0][1]).contains("generated_unix"));
}

#[test]
fn capacity_with_oracle() {
    let out = scratch("capacity");
    let o = dlab(&[
        "capacity",
        "--override",
        "operator.n=3",
        "--set",
        "0,2",
        "--p",
        "1.5",
        "--oracle",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out.join("capacity.json"));
    assert_eq!(doc["checks"]["brute_force_oracle"], true);
    assert_eq!(doc["result"]["set"], serde_json::json!([0, 2]));
    let cap = doc["result"]["capacity"].as_object().unwrap();
    let mut keys: Vec<&String> = cap.keys().collect();
    keys.sort();
    assert_eq!(keys, ["eta", "g", "gap", "value"]);
}

#[test]
fn kato_total_variation_bound_can_be_excluded() {
    let out = scratch("kato");
    let base = ["kato", "--config", &cfg("grid_semilinear.toml"), "--out", out.to_str().unwrap()];
    let o = dlab(&base);
    assert_eq!(o.status.code(), Some(2));
    let doc = read_json(&out.join("kato.json"));
    assert_eq!(doc["checks"]["discrete_kato[shifted_positive_part(c=0.05)]"], true);
    assert_eq!(doc["checks"]["convex_pairing[shifted_positive_part(c=0.05)]"], true);
    let mut args = base.to_vec();
    args.extend(["--override", "kato.total_variation_bound=false"]);
    assert_eq!(dlab(&args).status.code(), Some(0));
    let doc = read_json(&out.join("kato.json"));
    let entries = doc["result"]["kato"]["audit"].as_object().unwrap();
    for (name, entry) in entries {
        assert!(entry["reference"].as_str().is_some_and(|r| !r.is_empty()), "{name}");
    }
}

#[test]
fn short_collapse_study_writes_table_and_curves() {
    let out = scratch("collapse_short");
    let o = dlab(&[
        "collapse",
        "--override",
        "study.family.levels=[15, 31, 63]",
        "--override",
        "study.expect=\"persist\"",
        "--no-timestamp",
        "--out",
        out.to_str().unwrap(),
    ]);
    // p = 3 on this family is not persistent
    assert_eq!(o.status.code(), Some(2));
    let csv = std::fs::read_to_string(out.join("collapse.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "h,n,sup_u,probe_min,probe_max,absorbed,retained,cap,runtime_s");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.0625,15,"));
    assert!(lines[1].ends_with(",,0.0"));
    for column in ["probe_max", "retained", "sup_u"] {
        let dat = std::fs::read_to_string(out.join(format!("collapse_{column}.dat"))).unwrap();
        assert_eq!(dat.lines().count(), 4);
    }
    let doc = read_json(&out.join("collapse.json"));
    assert_eq!(doc["checks"]["mass_balance"], true);
    assert_eq!(doc["checks"]["expected_verdict"], false);
}

#[test]
fn cap_scaling_short_family() {
    let out = scratch("cap_short");
    let o = dlab(&[
        "cap-scaling",
        "--override",
        "study.family.levels=[15, 31, 63]",
        "--override",
        "study.target=whole-space",
        "--override",
        "output.formats=[\"json\", \"csv\"]",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out.join("cap_scaling.json"));
    assert_eq!(doc["result"]["verdict"], "positive-capacity-limit");
    assert_eq!(doc["result"]["study"]["p"], 1.5);
    assert!(out.join("cap_scaling.csv").exists());
    assert!(!out.join("cap_scaling_cap.dat").exists());
}
