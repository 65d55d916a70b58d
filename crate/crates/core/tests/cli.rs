use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_spdegal");

fn spdegal(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .args(extra)
        .output()
        .unwrap()
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

const HEAT: &str = r#"
command = "simulate"
seed = 3

[model]
kind = "cbf"
cutoff = 4
diffusivity = { u = 0.25 }

[initial]
kind = "waves"
waves = [{ field = "u", k = [1, 2], amplitude = 2.0, phase = 0.3, direction = [2.0, -1.0] }]

[integrator]
dt = 0.05
horizon = 1.0
save_every = 10
"#;

#[test]
fn heat_decay_csv_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let res = spdegal(dir.path(), HEAT, &["--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "t,H2,V2,A2,E_u,functional"));
    let lambda = 0.25 * 5.0;
    let data = rows(&csv);
    assert_eq!(data.len(), 21);
    let h0 = data[0][1];
    for r in &data {
        let exact = h0 * (-2.0 * lambda * r[0]).exp();
        assert!((r[1] - exact).abs() <= 1e-12 * exact, "{r:?}");
        assert!((r[2] - lambda * r[1]).abs() <= 1e-12 * r[2]);
    }
    // strided snapshots at t = 0, 0.5, 1 plus the final state
    for name in [
        "state_000000.snap",
        "state_000001.snap",
        "state_000002.snap",
        "final.snap",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn verify_passes_on_cbf() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "command = \"verify\"\n[model]\nkind = \"cbf\"\ncutoff = 3\nforchheimer = 1.0\n[noise]\nsigma = [0.3]\ngamma = [0.1]\n[study]\nsamples = 50\n";
    let res = spdegal(dir.path(), cfg, &["--out", dir.path().join("o").to_str().unwrap()]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("PASS antisymmetry"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn reruns_are_byte_identical_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
command = "simulate"
[model]
kind = "mhd"
cutoff = 3
[noise]
sigma = [0.3, 0.2]
gamma = [0.5, 0.0]
[integrator]
dt = 0.01
horizon = 0.2
"#;
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(spdegal(dir.path(), cfg, &args).status.success());
        (
            fs::read(out.join("trajectory.csv")).unwrap(),
            fs::read(out.join("final.snap")).unwrap(),
        )
    };
    let a = run("a", &[]);
    let b = run("b", &["--threads", "1"]);
    let c = run("c", &["--seed", "99"]);
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn invalid_configs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let res = spdegal(
        dir.path(),
        "command = \"simulate\"\n[model]\nkind = \"dynamo\"\ncoriolis = 1.0\nexponent = 3.5\n",
        &[],
    );
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("zero when d=2") && err.contains("r ∈ [2,3]"), "{err}");

    let res = spdegal(dir.path(), "command = \"simulate\"\n[model\n", &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));
}

#[test]
fn lenient_mode_tolerates_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{HEAT}\n[ensemble]\nreplicates = 2\nworkers = 4\n");
    let out = dir.path().join("o");
    let strict = spdegal(dir.path(), &cfg, &["--strict", "--out", out.to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(2));
    let lenient = spdegal(dir.path(), &cfg, &["--lenient", "--out", out.to_str().unwrap()]);
    assert!(lenient.status.success());
    assert!(String::from_utf8_lossy(&lenient.stderr).contains("ensemble.workers: unknown key"));
}

#[test]
fn divergence_exits_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
command = "simulate"
[model]
kind = "cbf"
cutoff = 2
forchheimer = 1.0
[initial]
kind = "waves"
waves = [{ k = [0, 1], amplitude = 1e3 }]
[integrator]
scheme = "euler_maruyama"
dt = 0.01
horizon = 1.0
"#;
    let out = dir.path().join("o");
    let res = spdegal(dir.path(), cfg, &["--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("outcome = diverged"));
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn snapshot_restart_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert!(spdegal(dir.path(), HEAT, &["--out", first.to_str().unwrap()])
        .status
        .success());
    let snap = first.join("final.snap");
    let restart = HEAT.replace(
        "kind = \"waves\"\nwaves = [{ field = \"u\", k = [1, 2], amplitude = 2.0, phase = 0.3, direction = [2.0, -1.0] }]",
        &format!("kind = \"snapshot\"\npath = {:?}", snap.to_str().unwrap()),
    );
    let second = dir.path().join("second");
    let res = spdegal(dir.path(), &restart, &["--out", second.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let a = rows(&fs::read_to_string(first.join("trajectory.csv")).unwrap());
    let b = rows(&fs::read_to_string(second.join("trajectory.csv")).unwrap());
    assert_eq!(b[0][1], a[a.len() - 1][1]);

    let missing = restart.replace(snap.to_str().unwrap(), "/nonexistent/x.snap");
    let res = spdegal(dir.path(), &missing, &[]);
    assert_eq!(res.status.code(), Some(5));
}
