use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pumc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pumc")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_triangle(dir: &Path) {
    fs::write(dir.join("train.txt"), "0\t1\n1\t2\n").unwrap();
    fs::write(dir.join("test.txt"), "0\t2\n").unwrap();
}

#[test]
fn synth_writes_metrics_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = pumc(&["synth", "--n", "40,60", "--k", "3", "--rank", "3", "--solver", "shift_relax", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("task,solver,n,k,rho,alpha,lambda,metric,value,sweeps,wall_clock"));
    assert_eq!(metrics.lines().filter(|l| l.contains(",mse,")).count(), 4);

    let again = dir.path().join("again");
    let o = pumc(&["replay", "--manifest", s(&out.join("report.json")), "--out", s(&again), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());
}

#[test]
fn link_then_eval_on_the_triangle() {
    let dir = tempfile::tempdir().unwrap();
    write_triangle(dir.path());
    let out = dir.path().join("link");
    let (train, test) = (dir.path().join("train.txt"), dir.path().join("test.txt"));
    let o = pumc(&[
        "link", "--train", s(&train), "--test", s(&test), "--solver", "bias_cd", "--rank", "2", "--rho", "0.5",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    let row = curve.lines().find(|l| l.starts_with("bias_cd,1,")).unwrap_or_else(|| panic!("{curve}"));
    let fnr: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(fnr, 0.0, "{curve}");

    let rescored = dir.path().join("eval");
    let o = pumc(&[
        "eval", "--model", s(&out.join("model.json")), "--train", s(&train), "--test", s(&test), "--out",
        s(&rescored),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rescored.join("metrics.csv").exists());
}

#[test]
fn config_file_runs_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "task = \"synth_det\"\nsolver = \"bias_cd\"\nseed = 3\n\n[params]\nrho = 0.8\nrank = 3\n\n[synth]\nsizes = [40]\nk = 3\nrho = 0.8\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = pumc(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.contains("synth_det,bias_cd,40,3,0.8,0.9,"), "{metrics}");

    let out = dir.path().join("override");
    let o = pumc(&["synth", "--config", s(&cfg), "--solver", "bias_prox", "--no-baselines", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.contains("synth_det,bias_prox,40,"), "{metrics}");
    assert!(!metrics.contains("plain_cd"), "{metrics}");
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let o = pumc(&["synth", "--n", "40", "--solver", "bias_imc", "--out", s(&dir.path().join("a"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "0\t1\nzero\tone\n").unwrap();
    let o = pumc(&["link", "--train", s(&bad), "--test", s(&bad), "--rho", "0.5", "--out", s(&dir.path().join("b"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.txt:2:"));

    let o = pumc(&["synth", "--solver", "no_such_solver"]);
    assert_eq!(o.status.code(), Some(2));
}
