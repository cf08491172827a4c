use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dpcausal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpcausal"))
        .args(args)
        .current_dir(dir)
        .env_remove("DPCAUSAL_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_schema_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["generate", "--generator", "low_overlap", "-n", "100", "--seed", "5", "-o"];
    assert_eq!(code(&dpcausal(dir.path(), &[&args[..], &["a.csv"]].concat())), 0);
    assert_eq!(code(&dpcausal(dir.path(), &[&args[..], &["b.csv"]].concat())), 0);
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,a,y"));
    assert_eq!(lines.count(), 100);

    let bad = dpcausal(dir.path(), &["generate", "--generator", "nope", "-n", "10", "-o", "c.csv"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown generator"));
    assert_eq!(code(&dpcausal(dir.path(), &["generate", "--frobnicate"])), 2);
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpcausal(dir.path(), &["generate", "-g", "low_overlap", "-n", "10", "-o", "missing/dir/x.csv"]);
    assert_ne!(code(&out), 0);
}

#[test]
fn constant_outcome_gives_zero_g_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x0,a,y\n");
    for i in 0..40 {
        csv.push_str(&format!("{},{},0.3\n", i as f64 / 40.0, i % 2));
    }
    std::fs::write(dir.path().join("d.csv"), csv).unwrap();
    let out = dpcausal(
        dir.path(),
        &["estimate", "-d", "d.csv", "--kind", "g", "-k", "4", "--non-private", "--set", "learner_mu=constant", "-o", "r.json"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("r.json"));
    assert_eq!(report["tau_dp"], 0.0);
    assert_eq!(report["mu_total"], 0.0);
}

#[test]
fn estimate_is_reproducible_and_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "generator = good_overlap_binary\nn = 400\nkind = g\nk = 4\nseed = 9\n").unwrap();
    let run = |out: &str| dpcausal(dir.path(), &["estimate", "-c", "run.cfg", "-o", out]);
    assert_eq!(code(&run("r1.json")), 0);
    assert_eq!(code(&run("r2.json")), 0);
    let r1 = read_json(&dir.path().join("r1.json"));
    let mut r2 = read_json(&dir.path().join("r2.json"));
    assert_eq!(r1["seed"], 9);
    assert_eq!(r1["config"]["seed"], "9");
    assert_eq!(r1["config"]["kind"], "g");
    assert!(r1["epsilon_at_1e-5"].as_f64().unwrap() > 0.0);
    r2["config"]["out"] = r1["config"]["out"].clone();
    assert_eq!(r1, r2);

    // Replaying the embedded config reproduces the release.
    let cfg: String = r1["config"]
        .as_object()
        .unwrap()
        .iter()
        .filter(|(k, _)| *k != "out")
        .map(|(k, v)| format!("{k} = {}\n", v.as_str().unwrap()))
        .collect();
    std::fs::write(dir.path().join("replay.cfg"), cfg).unwrap();
    assert_eq!(code(&dpcausal(dir.path(), &["estimate", "-c", "replay.cfg", "-o", "r3.json"])), 0);
    assert_eq!(read_json(&dir.path().join("r3.json"))["tau_dp"], r1["tau_dp"]);
}

#[test]
fn generated_file_and_generator_agree() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ["-g", "low_overlap", "-n", "200", "--seed", "3"];
    assert_eq!(code(&dpcausal(dir.path(), &[&["generate"][..], &gen, &["-o", "d.csv"]].concat())), 0);
    let a = dpcausal(dir.path(), &[&["estimate"][..], &gen, &["-o", "a.json"]].concat());
    assert_eq!(code(&a), 0);
    let b = dpcausal(dir.path(), &["estimate", "-d", "d.csv", "--seed", "3", "-o", "b.json"]);
    assert_eq!(code(&b), 0);
    assert_eq!(read_json(&dir.path().join("a.json"))["tau_dp"], read_json(&dir.path().join("b.json"))["tau_dp"]);
}

#[test]
fn seed_precedence_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "generator = low_overlap\nn = 100\nk = 4\nseed = 1\n").unwrap();
    let with_env = |args: &[&str], env: &str| {
        Command::new(env!("CARGO_BIN_EXE_dpcausal")).args(args).current_dir(dir.path()).env("DPCAUSAL_SEED", env).output().unwrap()
    };
    assert_eq!(code(&with_env(&["estimate", "-c", "run.cfg", "-o", "e.json"], "7")), 0);
    assert_eq!(read_json(&dir.path().join("e.json"))["seed"], 7);
    assert_eq!(code(&with_env(&["estimate", "-c", "run.cfg", "--seed", "8", "-o", "f.json"], "7")), 0);
    assert_eq!(read_json(&dir.path().join("f.json"))["seed"], 8);
}

#[test]
fn estimate_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["estimate", "-g", "low_overlap", "-n", "50"];
    assert_eq!(code(&dpcausal(dir.path(), &[&base[..], &["--mu", "0"]].concat())), 4);
    assert_eq!(code(&dpcausal(dir.path(), &[&base[..], &["-k", "80"]].concat())), 2);
    assert_eq!(code(&dpcausal(dir.path(), &[&base[..], &["--set", "colour=red"]].concat())), 2);
    assert_eq!(code(&dpcausal(dir.path(), &["estimate", "-d", "absent.csv"])), 2);
    std::fs::write(dir.path().join("bad.csv"), "x0,a,y\n0.1,2,0.5\n0.2,0,0.1\n0.3,1,0.2\n").unwrap();
    let out = dpcausal(dir.path(), &["estimate", "-d", "bad.csv", "-k", "2"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bootstrap_ci_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpcausal(
        dir.path(),
        &["estimate", "-g", "good_overlap_binary", "-n", "300", "--kind", "g", "-k", "3", "--ci", "bootstrap", "--set", "r=20", "-o", "r.json"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("r.json"));
    let ci = &report["bootstrap_ci"];
    assert_eq!(ci["method"], "bootstrap");
    assert_eq!(ci["r"], 20);
    assert!((ci["mu_total"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    let all = report["mu_total_with_ci"].as_f64().unwrap();
    assert!((all - (1.5f64.powi(2) + 2.0).sqrt()).abs() < 1e-12);
}

#[test]
fn sweep_writes_one_table_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpcausal(
        dir.path(),
        &[
            "sweep", "-g", "low_overlap", "--reps", "2", "--out-dir", "sw", "--set", "ks=2,4", "--set", "mus=0,1", "--set", "ns=60",
            "--set", "kinds=g",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sw = dir.path().join("sw");
    let summary = std::fs::read_to_string(sw.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    let tables = std::fs::read_dir(&sw).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("g_")).count();
    assert_eq!(tables, 4);
    let table = std::fs::read_to_string(sw.join("g_n60_k2_mu0.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("rep,tau_dp,v_dp,ci_lo,ci_hi,covered,seed"));
    assert_eq!(read_json(&sw.join("sweep.json"))["config"]["ks"], "2,4");

    let empty = dpcausal(dir.path(), &["sweep", "-g", "low_overlap", "--out-dir", "sw2", "--set", "ks=2", "--set", "ns=60", "--set", "kinds=g"]);
    assert_eq!(code(&empty), 2);
}

#[test]
fn meta_combines_reports() {
    let dir = tempfile::tempdir().unwrap();
    let studies = dir.path().join("studies");
    std::fs::create_dir(&studies).unwrap();
    for (i, seed) in ["1", "2", "3"].iter().enumerate() {
        let out = dpcausal(
            dir.path(),
            &["estimate", "-g", "good_overlap_binary", "-n", "300", "-k", "3", "--seed", seed, "-o", &format!("studies/s{i}.json")],
        );
        assert_eq!(code(&out), 0);
    }
    let out = dpcausal(dir.path(), &["meta", "studies", "-o", "meta.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.path().join("meta.json"));
    assert_eq!(m["n_studies"], 3);
    let w: f64 = m["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((w - 1.0).abs() < 1e-12);

    let single = dpcausal(dir.path(), &["meta", "studies/s0.json"]);
    assert_eq!(code(&single), 2);
    let files = dpcausal(dir.path(), &["meta", "studies/s0.json", "studies/s1.json", "--weighting", "inverse_variance"]);
    assert_eq!(code(&files), 0);
    let v: Value = serde_json::from_slice(&files.stdout).unwrap();
    assert_eq!(v["weighting"], "inverse_variance");
}

#[test]
fn convert_privacy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpcausal(dir.path(), &["convert-privacy", "--mu", "1.5"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let eps = v["epsilon"].as_f64().unwrap();
    assert!((eps - 7.05).abs() < 0.01);
    let back = dpcausal(dir.path(), &["convert-privacy", "--mu", "1.5", "--epsilon", "7.05"]);
    let d = serde_json::from_slice::<Value>(&back.stdout).unwrap()["delta"].as_f64().unwrap();
    assert!((0.8e-5..=1.2e-5).contains(&d));
    assert_eq!(code(&dpcausal(dir.path(), &["convert-privacy", "--mu", "0"])), 4);
}
