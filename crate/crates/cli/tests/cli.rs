use std::path::Path;
use std::process::Command;

use covol_cli::config::RunConfig;
use serde_json::Value;

fn covol(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_covol")).args(args).output().expect("binary runs")
}

fn run(cmd: &str, dir: &Path, config: &str, extra: &[&str]) -> std::process::Output {
    let cfg = dir.join(format!("{cmd}.toml"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("out_{cmd}"));
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "1"];
    args.extend_from_slice(extra);
    covol(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn strip_timings(mut v: Value) -> Value {
    for r in v["results"].as_array_mut().unwrap() {
        r.as_object_mut().unwrap().remove("timings");
    }
    v
}

const SIMULATE: &str = r#"
seed = 5
[data]
source = "simulate"
datasets = 2
scenario = { kind = "cir", n = 200.0 }
"#;

#[test]
fn simulate_writes_datasets_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", dir.path(), SIMULATE, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out_simulate");
    for i in 0..2 {
        assert!(out.join(format!("dataset_{i:03}.csv")).exists());
        let side = json(&out.join(format!("dataset_{i:03}.json")));
        assert_eq!(side["simulation"]["seed"], 5 + i);
        assert_eq!(side["provenance"]["config_hash"].as_str().unwrap().len(), 64);
    }
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 5"));

    // --seed overrides the file and changes the data
    let o = run("simulate", dir.path(), SIMULATE, &["--seed", "6"]);
    assert!(o.status.success());
    let side = json(&out.join("dataset_000.json"));
    assert_eq!(side["simulation"]["seed"], 6);
}

const CIR_FIT: &str = r#"
seed = 11
[data]
source = "simulate"
datasets = 2
scenario = { kind = "cir", n = 2000.0 }

[fit]
model = { family = "cir" }
replications = 2
stages = [{ objective = "h", optimizer = { method = "golden_section", lo = 0.3, hi = 3.0, tol = 1e-5 } }]
"#;

#[test]
fn parametric_fit_recovers_sigma_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("fit", dir.path(), CIR_FIT, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out_fit");
    let report = json(&out.join("fit_report.json"));
    let results = report["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for r in results {
        let s = r["theta"][0].as_f64().unwrap();
        assert!((s - 1.0).abs() < 0.2, "σ̂ = {s}");
        assert!(r["mse"]["mse1"].as_f64().unwrap() >= 0.0);
        assert!(r["divergence"][0].as_f64().unwrap() >= 0.0);
        assert!(r["standard_errors"][0].as_f64().unwrap() > 0.0);
        assert!((r["v_hat"][0][0].as_f64().unwrap() - 0.005).abs() < 0.002);
    }
    let ckpt = std::fs::read_to_string(out.join("checkpoints.json")).unwrap();

    let o = run("fit", dir.path(), CIR_FIT, &[]);
    assert!(o.status.success());
    assert_eq!(strip_timings(report), strip_timings(json(&out.join("fit_report.json"))));
    assert_eq!(ckpt, std::fs::read_to_string(out.join("checkpoints.json")).unwrap());
}

#[test]
fn fit_from_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run("simulate", dir.path(), SIMULATE, &[]).status.success());
    let csv = dir.path().join("out_simulate/dataset_000.csv");
    let cfg = format!(
        r#"
[data]
source = "files"
paths = ["{}"]
horizon = 1.0

[fit]
model = {{ family = "constant", dim = 1 }}
stages = [{{ objective = "dot", optimizer = {{ method = "line_search", max_iter = 200, tol = 1e-10 }} }}]
"#,
        csv.display()
    );
    let o = run("fit", dir.path(), &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = &json(&dir.path().join("out_fit/fit_report.json"))["results"][0];
    assert!(r["mse"].is_null() && r["divergence"].is_null());
    assert!(r["theta"][0].as_f64().unwrap().abs() > 0.3);
}

#[test]
fn two_stage_network_fit_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let fit = r#"
seed = 3
[data]
source = "simulate"
datasets = 4
scenario = { kind = "cir", n = 500.0 }

[fit]
model = { family = "neural_net", dim = 1, input_dim = 2, hidden = [4, 4] }
replications = 2
checkpoints = [10, 30]
stages = [
  { objective = "dot", optimizer = { method = "adadelta", epochs = 30, rho = 0.95, eps = 1e-6, weight_decay = 0.005, lr = 1.0 } },
  { objective = "h", optimizer = { method = "adadelta", epochs = 30, rho = 0.95, eps = 1e-6, weight_decay = 0.005, lr = 1.0 } },
]
"#;
    let o = run("fit", dir.path(), fit, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = json(&dir.path().join("out_fit/checkpoints.json"));
    let c = ck["replications"][0]["checkpoints"].as_array().unwrap();
    assert_eq!(c.len(), 4);
    assert_eq!((c[2]["stage"].as_u64(), c[2]["epoch"].as_u64()), (Some(1), Some(10)));
    let report = json(&dir.path().join("out_fit/fit_report.json"));
    assert!(report["results"][0]["standard_errors"].is_null());
    assert_eq!(report["results"][0]["stages"][1]["values"].as_array().unwrap().len(), 30);

    let eval = format!(
        r#"
seed = 3
[data]
source = "simulate"
datasets = 2
scenario = {{ kind = "cir", n = 500.0 }}

[evaluate]
checkpoints = ["{}"]
reference = {{ model = {{ family = "cir" }}, theta = [1.0] }}
"#,
        dir.path().join("out_fit/checkpoints.json").display()
    );
    let o = run("evaluate", dir.path(), &eval, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out_evaluate");
    let mse = std::fs::read_to_string(out.join("mse_table.csv")).unwrap();
    // 4 checkpoints + final, two grids each
    assert_eq!(mse.lines().count(), 1 + 10);
    assert!(mse.lines().any(|l| l.starts_with("final,mse1,")));
    let curve = std::fs::read_to_string(out.join("quartile_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 21);
    let diff = std::fs::read_to_string(out.join("objective_diff.csv")).unwrap();
    assert_eq!(diff.lines().count(), 1 + 5);
}

#[test]
fn bench_reports_speedups() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[data]
source = "simulate"
scenario = { kind = "seasonal", n = 1000.0 }

[bench]
model = { family = "seasonal_cir" }
theta = [1.0, 0.8660254037844386, 0.5]
repetitions = 3
"#;
    let o = run("bench", dir.path(), cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b = json(&dir.path().join("out_bench/bench.json"));
    assert_eq!(b["dim"], 2);
    assert_eq!(b["timings"].as_array().unwrap().len(), 3);
    assert!(b["speedup_dot"].as_f64().unwrap() > 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // unknown key
    let o = run("simulate", dir.path(), "bogus = 1\n[data]\nsource = \"simulate\"\nscenario = { kind = \"cir\", n = 200.0 }\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    // missing config file
    let o = covol(&["fit", "--config", "/nonexistent/x.toml", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    // missing data file
    let cfg = "[data]\nsource = \"files\"\npaths = [\"/nonexistent/d.csv\"]\nhorizon = 1.0\n[fit]\nmodel = { family = \"cir\" }\nstages = [{ objective = \"h\", optimizer = { method = \"golden_section\", lo = 0.5, hi = 2.0, tol = 1e-3 } }]\n";
    assert_eq!(run("fit", dir.path(), cfg, &[]).status.code(), Some(4));
    // Σ = 0 with noiseless constant data makes every block singular
    let csv = dir.path().join("flat.csv");
    let rows: String = (0..=40).map(|i| format!("0,{i},{},1.0\n", i as f64 / 40.0)).collect();
    std::fs::write(&csv, format!("component,index,time,value\n{rows}")).unwrap();
    let cfg = format!(
        "n_blocks = 2\n[data]\nsource = \"files\"\npaths = [\"{}\"]\nhorizon = 1.0\n[fit]\nmodel = {{ family = \"constant\", dim = 1 }}\ninit = [0.0]\nstages = [{{ objective = \"h\", optimizer = {{ method = \"line_search\", max_iter = 5, tol = 1e-8 }} }}]\n",
        csv.display()
    );
    let o = run("fit", dir.path(), &cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_parse_and_tiny_preset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if let Err(e) = RunConfig::parse(&text) {
            panic!("{}: {e}", path.display());
        }
    }
    let o = run("fit", dir.path(), &std::fs::read_to_string(configs.join("tiny.toml")).unwrap(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
