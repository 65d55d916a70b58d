//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Experiments run through the same path as the command line tool (config
//! file → `run::run` → CSV), using the pinned configs in `benchmarks/`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spdegal::analysis::{check_conditions, oracle_equivalence};
use spdegal::config::{parse_config, RunConfig, Strictness};
use spdegal::models::{random_state, Model, ModelKind, ModelSpec};
use spdegal::noise::{sample_path, NoiseSpec};
use spdegal::run::run;
use spdegal::sde::{integrate, IntegratorConfig, Scheme};
use spdegal::spectral::{poincare_gap, GalerkinLevel, ModeIndex, SpectralBasis};
use spdegal::state::{wave, FieldName, StateVector};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn bench(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("benchmarks").join(name)
}

fn load(name: &str) -> RunConfig {
    let text = fs::read_to_string(bench(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    parse_config(&text, Strictness::Strict).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn value(summary: &str, key: &str) -> f64 {
    summary
        .lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix(" = "))
        .unwrap_or_else(|| panic!("{key} missing from summary:\n{summary}"))
        .parse()
        .unwrap()
}

fn values(summary: &str, prefix: &str) -> Vec<f64> {
    summary
        .lines()
        .filter(|l| l.starts_with(prefix))
        .map(|l| l.rsplit(" = ").next().unwrap().parse().unwrap())
        .collect()
}

/// Every experiment run, kept for the determinism rerun.
struct Runs {
    root: tempfile::TempDir,
    done: Vec<(String, RunConfig, PathBuf)>,
}

impl Runs {
    fn run(&mut self, label: &str, cfg: RunConfig) -> String {
        let dir = self.root.path().join(label);
        let out = run(&cfg, &dir).unwrap_or_else(|e| panic!("{label}: {e}"));
        self.done.push((label.to_string(), cfg, dir));
        out.summary
    }
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        if name.ends_with(".csv") || name.ends_with(".snap") {
            out.insert(name, fs::read(&p).unwrap());
        }
    }
    out
}

fn model(kind: ModelKind, dim: usize, cutoff: usize) -> Model {
    let mut spec = ModelSpec::new(kind, dim);
    match kind {
        ModelKind::Cbf | ModelKind::Boussinesq => {
            spec.darcy = 0.5;
            spec.forchheimer = 1.0;
        }
        ModelKind::Mhd => {
            spec.darcy = 0.5;
            spec.forchheimer = 1.0;
            spec.exponent = 2.5;
        }
        ModelKind::Dynamo if dim == 3 => spec.coriolis = 0.7,
        ModelKind::Micropolar => spec.elastic = 0.3,
        _ => {}
    }
    Model::new(spec, Arc::new(SpectralBasis::new(dim, cutoff).unwrap())).unwrap()
}

fn all_models() -> Vec<Model> {
    let mut out: Vec<Model> = ModelKind::ALL.iter().map(|&k| model(k, 2, 4)).collect();
    out.extend(ModelKind::ALL.iter().map(|&k| model(k, 3, 2)));
    out
}

fn label(m: &Model) -> String {
    format!("{}/{}d", m.spec().kind.as_str(), m.spec().dim)
}

fn condition_suite() -> Verdict {
    let mut failures = Vec::new();
    let mut worst_anti = 0.0f64;
    for m in all_models() {
        let noise = NoiseSpec::affine(&m, &[0.5, 0.3], &[0.2, 0.0], &[]).unwrap();
        let r = check_conditions(&m, &noise, 1000, 17).unwrap();
        worst_anti = worst_anti.max(r.property("antisymmetry").unwrap().worst);
        for p in r.properties.iter().filter(|p| p.hard && !p.passed) {
            failures.push(format!("{} {} {:e}", label(&m), p.name, p.worst));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "12 model/dim cases x 1000 samples, worst antisymmetry {worst_anti:.1e}{}",
            listed(&failures)
        ),
    )
}

fn oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut cases: Vec<Model> = ModelKind::ALL.iter().map(|&k| model(k, 2, 4)).collect();
    cases.extend(ModelKind::ALL.iter().map(|&k| model(k, 3, 2)));
    let mut failures = Vec::new();
    for m in &cases {
        let w = oracle_equivalence(m, 100, 23).unwrap();
        if w > 1e-11 {
            failures.push(label(m));
        }
        worst = worst.max(w);
    }
    verdict(
        failures.is_empty(),
        format!(
            "worst relative gap {worst:.1e} over 100 pairs per model{}",
            listed(&failures)
        ),
    )
}

fn exactness() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    // single-mode heat decay, exponential scheme, several step sizes
    let nu = 0.3;
    let m = {
        let mut spec = ModelSpec::new(ModelKind::Cbf, 2);
        spec.diffusivity = vec![nu];
        Model::new(spec, Arc::new(SpectralBasis::new(2, 4).unwrap())).unwrap()
    };
    let k = ModeIndex([1, 2, 0]);
    let mu = k.norm_sq() as f64;
    let phi0 = StateVector::new(vec![
        wave(m.basis(), FieldName::U, k, 1.3, 0.4, &[2.0, -1.0], true).unwrap()
    ]);
    let mut heat = 0.0f64;
    for dt in [1e-3, 0.05, 0.25, 1.0] {
        let cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, dt, 2.0, GalerkinLevel::full(m.basis()));
        let path = sample_path(0, dt, cfg.steps().unwrap(), 0).unwrap();
        let traj = integrate(&m, &NoiseSpec::none(), &phi0, &cfg, &path).unwrap();
        let exact = phi0.scaled((-nu * mu * 2.0).exp());
        let rel = traj.final_state.sub(&exact).norm_sq().sqrt() / exact.norm_sq().sqrt();
        heat = heat.max(rel);
    }
    ok &= heat <= 1e-13;
    notes.push(format!("heat {heat:.1e}"));

    // Poincaré: tail in the weaker norm bounded by the stronger one
    let basis = SpectralBasis::new(2, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut poincare_ok = true;
    for _ in 0..10_000 {
        let v: Vec<spdegal::C64> = (0..basis.len())
            .map(|_| spdegal::C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let n = rng.gen_range(1..=basis.len());
        let a1 = rng.gen_range(0.0..1.0);
        let a2 = a1 + rng.gen_range(0.1..1.0);
        let (lhs, rhs) = poincare_gap(&basis, &v, GalerkinLevel::new(n, &basis).unwrap(), a1, a2, 0.7).unwrap();
        poincare_ok &= lhs <= rhs * (1.0 + 1e-12);
    }
    ok &= poincare_ok;
    notes.push(format!("poincare {}", if poincare_ok { "ok" } else { "violated" }));

    // Taylor–Green vortex and the aligned MHD state
    let tg_model = model(ModelKind::Cbf, 2, 4);
    let sin = |k: [i32; 3], dir: &[f64]| {
        wave(tg_model.basis(), FieldName::U, ModeIndex(k), 1.0, -FRAC_PI_2, dir, true).unwrap()
    };
    let mut u = sin([1, 1, 0], &[0.5, -0.5]);
    u.axpy(1.0, &sin([1, -1, 0], &[0.5, 0.5]));
    let tg = StateVector::new(vec![u]);
    let tg_b = tg_model.apply_b(&tg, &tg).unwrap().norm_sq().sqrt();

    let mhd = model(ModelKind::Mhd, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let u = random_state(&mhd, 1.0, None, &mut rng).fields[0].clone();
    let mut b = u.clone();
    b.name = FieldName::B;
    let aligned = StateVector::new(vec![u, b]);
    let mhd_b = mhd.apply_b(&aligned, &aligned).unwrap().norm_sq().sqrt() / aligned.norm_sq();
    ok &= tg_b <= 1e-11 && mhd_b <= 1e-11;
    notes.push(format!("taylor-green {tg_b:.1e}, u=B {mhd_b:.1e}"));
    verdict(ok, notes.join(", "))
}

fn strong_order(runs: &mut Runs) -> Verdict {
    let add = value(&runs.run("order_additive", load("order_additive.toml")), "order");
    let mul = value(
        &runs.run("order_multiplicative", load("order_multiplicative.toml")),
        "order",
    );
    verdict(
        (0.8..=1.1).contains(&add) && (0.4..=0.6).contains(&mul),
        format!("additive {add:.3} in [0.8,1.1], multiplicative {mul:.3} in [0.4,0.6]"),
    )
}

fn cauchy(runs: &mut Runs) -> Verdict {
    let s = runs.run("cauchy_2d", load("cauchy_2d.toml"));
    let errs = values(&s, "error[");
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let truncated = s.contains("truncated_at");
    verdict(
        errs.len() == 3 && !truncated && ratios.iter().all(|r| *r >= 2.0),
        format!(
            "errors [{}], step ratios {ratios:.1?} (need >= 2)",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn moments(runs: &mut Runs) -> Verdict {
    let base = load("moments_2d.toml");
    let s1 = runs.run("moments_2d", base.clone());
    let doubled = RunConfig {
        replicates: 2 * base.replicates,
        ..base
    };
    let s2 = runs.run("moments_2d_doubled", doubled);
    let (e1, e2) = (value(&s1, "estimate"), value(&s2, "estimate"));
    let drift = (e2 - e1).abs() / e1;

    let lin = load("moments_linear.toml");
    let c1 = value(&runs.run("moments_linear", lin.clone()), "c_hat");
    let mut scaled = lin;
    scaled.initial.scale = 2.0;
    let c2 = value(&runs.run("moments_linear_scaled", scaled), "c_hat");
    let c_drift = (c2 - c1).abs() / c1;
    verdict(
        e1.is_finite() && drift < 0.1 && c_drift < 0.2,
        format!(
            "estimate {e1:.4} -> {e2:.4} (drift {:.2}%), C_p {c1:.4} -> {c2:.4} (drift {:.2}%)",
            100.0 * drift,
            100.0 * c_drift
        ),
    )
}

fn globality(runs: &mut Runs) -> Verdict {
    let s2 = runs.run("globality_2d", load("globality_2d.toml"));
    let f2 = value(&s2, "blowup_fraction");
    let s3 = runs.run("globality_3d", load("globality_3d.toml"));
    let f3 = value(&s3, "blowup_fraction");
    verdict(
        f2 == 0.0 && s3.contains("status = ok"),
        format!("2D fraction {f2} over 200 replicates; 3D completed with fraction {f3} (reported)"),
    )
}

fn stability(runs: &mut Runs) -> Verdict {
    let cfg = load("stability_2d.toml");
    let deltas = cfg.study.deltas.clone();
    let dir = runs.root.path().join("stability_2d");
    let s = runs.run("stability_2d", cfg);
    let series = fs::read_to_string(dir.join("stability_series.csv")).unwrap();
    let zero_rows: Vec<&str> = series
        .lines()
        .filter(|l| !l.starts_with('#') && l.starts_with("0e0,"))
        .collect();
    let bitwise_zero = !zero_rows.is_empty() && zero_rows.iter().all(|l| l.ends_with(",0e0"));
    let sups: Vec<f64> = deltas
        .iter()
        .filter(|d| **d > 0.0)
        .map(|d| value(&s, &format!("sup_psi[{}]", spdegal::io::fmt_f64(*d))))
        .collect();
    let ratios: Vec<f64> = sups.windows(2).map(|w| w[0] / w[1]).collect();
    let linear = ratios.iter().all(|r| (r / 2.0 - 1.0).abs() <= 0.25);
    verdict(
        bitwise_zero && linear && !ratios.is_empty(),
        format!(
            "delta=0 gives {} zero rows ({}); halving ratios {ratios:.4?}",
            zero_rows.len(),
            if bitwise_zero { "bitwise zero" } else { "NONZERO" }
        ),
    )
}

fn listed(names: &[String]) -> String {
    if names.is_empty() {
        String::new()
    } else {
        format!("; failing: {}", names.join(", "))
    }
}

fn verify_run(runs: &mut Runs) {
    runs.run("verify_cbf", load("verify_cbf.toml"));
}

fn determinism(runs: &Runs) -> Verdict {
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (label, cfg, dir) in &runs.done {
        let again = runs.root.path().join(format!("{label}.rerun"));
        run(cfg, &again).unwrap_or_else(|e| panic!("{label} rerun: {e}"));
        let a = artifacts(dir);
        let b = artifacts(&again);
        files += a.len();
        if a.is_empty() || a != b {
            mismatched.push(label.clone());
        }
    }
    verdict(
        mismatched.is_empty(),
        format!(
            "{} experiments, {files} CSV/snapshot files compared byte for byte{}",
            runs.done.len(),
            listed(&mismatched)
        ),
    )
}

fn main() {
    let mut runs = Runs {
        root: tempfile::tempdir().unwrap(),
        done: Vec::new(),
    };
    let mut results: Vec<(u32, &str, Verdict, Duration)> = Vec::new();
    let mut record = |id, name, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let elapsed = t.elapsed();
        println!(
            "{} {id} {name}: {} [{:.1}s]",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
        results.push((id, name, v, elapsed));
    };
    record(1, "condition suite", &mut condition_suite);
    record(2, "oracle equivalence", &mut oracle);
    record(3, "exactness anchors", &mut exactness);
    record(4, "strong order", &mut || strong_order(&mut runs));
    record(5, "galerkin cauchy", &mut || cauchy(&mut runs));
    record(6, "moment bound", &mut || moments(&mut runs));
    record(7, "2D globality", &mut || globality(&mut runs));
    record(8, "stability", &mut || stability(&mut runs));
    verify_run(&mut runs);
    record(9, "determinism", &mut || determinism(&runs));
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
