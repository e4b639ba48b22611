use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_equiflow"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Required keys and primitive types from the in-repo schema, applied recursively.
fn conforms(value: &Value, schema: &Value) -> Result<(), String> {
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(|v| v.as_str()).collect(),
            _ => vec![],
        };
        let ok = types.iter().any(|t| match *t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_u64() || value.is_i64(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            _ => false,
        });
        if !ok {
            return Err(format!("{value} is not of type {t}"));
        }
    }
    if let Some(c) = schema.get("const") {
        if c != value {
            return Err(format!("{value} != {c}"));
        }
    }
    if let Some(Value::Array(options)) = schema.get("enum") {
        if !options.contains(value) {
            return Err(format!("{value} not in {options:?}"));
        }
    }
    if let Some(Value::Array(req)) = schema.get("required") {
        for k in req {
            let k = k.as_str().unwrap();
            if value.get(k).is_none() {
                return Err(format!("missing `{k}`"));
            }
        }
    }
    if let (Some(Value::Object(props)), Some(obj)) = (schema.get("properties"), value.as_object()) {
        for (k, sub) in props {
            if let Some(v) = obj.get(k) {
                conforms(v, sub).map_err(|e| format!("{k}: {e}"))?;
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for v in arr {
            conforms(v, items)?;
        }
    }
    Ok(())
}

fn check_schema(file: &Path, schema: &str) {
    let s = json(&repo(&format!("docs/formats/{schema}.schema.json")));
    if let Err(e) = conforms(&json(file), &s) {
        panic!("{} violates {schema}: {e}", file.display());
    }
}

#[test]
fn train_eval_sample_outputs_match_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let out = |n: &str| tmp.path().join(n).display().to_string();
    let cfg = repo("configs/tiny.toml").display().to_string();

    let o = run(&["gen-demos", "--config", &cfg, "--out", &out("d")]);
    assert!(o.status.success());
    check_schema(&tmp.path().join("d/demos.json"), "demos");
    check_schema(&tmp.path().join("d/manifest.json"), "manifest");

    let demos = tmp.path().join("d/demos.json").display().to_string();
    let o = run(&["train", "--config", &cfg, "--demos", &demos, "--out", &out("t")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = tmp.path().join("t/checkpoint.json");
    check_schema(&ck, "checkpoint");
    let m = json(&tmp.path().join("t/manifest.json"));
    assert_eq!(m["outputs"], serde_json::json!(["metrics.csv", "checkpoint.json"]));
    let metrics = std::fs::read_to_string(tmp.path().join("t/metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,cfm,fabo,total,eval_success,smoothness");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 6 && !l.ends_with(",")));

    let ck = ck.display().to_string();
    let o = run(&["eval", "--checkpoint", &ck, "--episodes", "1", "--nfe", "1", "--out", &out("e")]);
    assert!(o.status.success());
    assert!(o.stderr.is_empty(), "nfe = 1 must not warn");
    check_schema(&tmp.path().join("e/eval.json"), "eval");
    assert_eq!(json(&tmp.path().join("e/eval.json"))["episodes"], 1);
    assert!(json(&tmp.path().join("e/manifest.json"))["timing"]["mean_predict_ms"].is_number());

    let o = run(&["eval", "--checkpoint", &ck, "--episodes", "1", "--nfe", "4", "--out", &out("e4")]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));

    let o = run(&["sample", "--checkpoint", &ck, "--m", "2", "--out", &out("s")]);
    assert!(o.status.success());
    check_schema(&tmp.path().join("s/sample.json"), "sample");
    let traj = std::fs::read_to_string(tmp.path().join("s/trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,a0,a1\n"));
    let steps = json(&tmp.path().join("s/sample.json"))["steps"].as_u64().unwrap() as usize;
    assert_eq!(traj.lines().count(), steps + 1);
}

#[test]
fn zero_epochs_yield_an_untrained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "epochs = 0\ndemos = 1\nhidden = [4]\n").unwrap();
    let out = tmp.path().join("o");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics, "epoch,cfm,fabo,total,eval_success,smoothness\n");
    check_schema(&out.join("checkpoint.json"), "checkpoint");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = tmp.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.display().to_string()
    };
    let out = tmp.path().join("o").display().to_string();

    let o = run(&["verify", "--suite", "everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let bad = write("bad.toml", "n = 4\nn1 = 9\n");
    let o = run(&["train", "--config", &bad, "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`n1`"));

    let unknown = write("unknown.toml", "colour = 3\n");
    assert_eq!(run(&["train", "--config", &unknown, "--out", &out]).status.code(), Some(2));

    let nan = write("nan.toml", "epochs = 2\ndemos = 1\nhidden = [4]\nlr = 1e300\n");
    let o = run(&["train", "--config", &nan, "--out", &out]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let ok = write("ok.toml", "epochs = 1\ndemos = 1\nhidden = [4]\nn = 8\nn1 = 4\n");
    let trained = tmp.path().join("t");
    assert!(run(&["train", "--config", &ok, "--out", trained.to_str().unwrap()]).status.success());
    let ck = trained.join("checkpoint.json").display().to_string();
    let u4 = write("u4.toml", "u = 4\nn = 8\nn1 = 4\n");
    let o = run(&["eval", "--checkpoint", &ck, "--config", &u4, "--episodes", "1", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("group order"));
    let o = run(&["eval", "--checkpoint", &ck, "--env", "pose10d", "--episodes", "1", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["eval", "--checkpoint", &ck, "--env", "cartpole", "--episodes", "1", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));

    let mut ckj = json(&trained.join("checkpoint.json"));
    ckj["group_order"] = 6.into();
    let tampered = write("tampered.json", &ckj.to_string());
    assert_eq!(run(&["eval", "--checkpoint", &tampered, "--episodes", "1", "--out", &out]).status.code(), Some(2));
}

#[test]
fn output_directory_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = repo("configs/tiny.toml");
    let o = bin()
        .args(["gen-demos", "--config", cfg.to_str().unwrap()])
        .env("EQUIFLOW_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("gen-demos/demos.json").exists());
    assert!(tmp.path().join("gen-demos/manifest.json").exists());
}

#[test]
fn verify_reports_one_json_per_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = run(&["verify", "--suite", "equivariance", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let names = ["layer_equivariance", "rollout_equivariance_nfe1", "rollout_equivariance_nfe3", "rollout_equivariance_nfe5"];
    for n in names {
        let p = out.join(format!("{n}.json"));
        check_schema(&p, "check");
        assert_eq!(json(&p)["status"], "pass");
    }
    for g in 0..8 {
        check_schema(&out.join(format!("distributional_equivariance_g{g}.json")), "check");
    }

    // Too few samples for a verdict: inconclusive, which only passes with the flag.
    let o = run(&["verify", "--suite", "fabo", "--samples", "500", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let p = out.join("fabo_t0.5_dt0.05.json");
    check_schema(&p, "check");
    assert_eq!(json(&p)["status"], "inconclusive");
    let o = run(&["verify", "--suite", "sandwich", "--samples", "500", "--allow-inconclusive", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
}

#[test]
fn sweep_writes_comparison_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "epochs = 1\ndemos = 1\nhidden = [4]\nn = 8\nn1 = 4\n").unwrap();
    let out = tmp.path().join("s");
    let o = run(&["sweep-lambda", "--config", cfg.to_str().unwrap(), "--episodes", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "lambda_variant,final_cfm,final_fabo,final_total,success_rate,success_stderr,smoothness");
    let labels: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["0.5(1-t)^2", "1(1-t)^2", "2(1-t)^2", "0.5"]);
    for dir in ["lambda_0.5_1_t__2", "lambda_1_1_t__2", "lambda_2_1_t__2", "lambda_0.5"] {
        assert!(out.join(dir).join("metrics.csv").exists(), "{dir}");
        assert!(out.join(dir).join("checkpoint.json").exists(), "{dir}");
    }
}
