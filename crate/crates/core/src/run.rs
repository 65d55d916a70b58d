//! Command dispatch: turns a [`RunConfig`] into CSV files, snapshots and a
//! plain-text summary in the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{
    check_conditions, galerkin_cauchy_study, globality_experiment, moment_estimate, oracle_equivalence,
    small_time_probability, stability_study, strong_order_study, EnsembleSpec, PropertyResult,
};
use crate::config::{Command, Prepared, RunConfig};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_snapshot, Csv};
use crate::models::BRUTE_FORCE_MAX_MODES;
use crate::noise::sample_path;
use crate::sde::{self, track_stopping, Outcome};

/// Relative tolerance of the pseudo-spectral versus convolution check in `verify`.
pub const ORACLE_TOL: f64 = 1e-11;
const ORACLE_SAMPLES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Sink<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
    meta: Vec<(&'static str, String)>,
}

impl Sink<'_> {
    fn csv(&self, columns: &[&str]) -> Csv {
        let meta: Vec<(&str, String)> = self.meta.iter().map(|(k, v)| (*k, v.clone())).collect();
        Csv::new(columns, &meta)
    }

    fn save(&mut self, name: &str, csv: &Csv) -> Result<()> {
        let p = self.dir.join(name);
        csv.write(&p)?;
        self.files.push(p);
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        self.files.push(p);
        Ok(())
    }
}

/// Runs the configured command, writing artifacts into `out_dir`.
///
/// Artifacts are written before a divergence or property failure is
/// returned as an error.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    let prep = config.prepare()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let spec = prep.model.spec();
    let mut sink = Sink {
        dir: out_dir,
        files: Vec::new(),
        meta: vec![
            ("command", config.command.as_str().to_string()),
            ("seed", config.seed.to_string()),
            (
                "model",
                format!("{} d={} cutoff={}", spec.kind.as_str(), spec.dim, config.cutoff),
            ),
            (
                "integrator",
                format!(
                    "{} dt={} T={} level={}",
                    prep.cfg.scheme.as_str(),
                    fmt_f64(prep.cfg.dt),
                    fmt_f64(prep.cfg.horizon),
                    prep.cfg.level.get()
                ),
            ),
            ("noise", format!("K={}", prep.noise.k())),
        ],
    };
    let mut summary = String::new();
    for (k, v) in &sink.meta {
        let _ = writeln!(summary, "{k} = {v}");
    }
    let status = match config.command {
        Command::Simulate => simulate(config, &prep, &mut sink, &mut summary),
        Command::Verify => verify(config, &prep, &mut sink, &mut summary),
        Command::Converge => converge(config, &prep, &mut sink, &mut summary),
        Command::Moments => moments(config, &prep, &mut sink, &mut summary),
        Command::Stability => stability(config, &prep, &mut sink, &mut summary),
        Command::Order => order(config, &prep, &mut sink, &mut summary),
        Command::Globality => globality(config, &prep, &mut sink, &mut summary),
    };
    let status_line = match &status {
        Ok(()) => "status = ok".to_string(),
        Err(e) => format!("status = error (exit {}): {e}", e.exit_code()),
    };
    let _ = writeln!(summary, "{status_line}");
    sink.text("summary.txt", &summary)?;
    status.map(|_| RunOutput {
        files: sink.files,
        summary,
    })
}

fn simulate(config: &RunConfig, p: &Prepared, sink: &mut Sink, summary: &mut String) -> Result<()> {
    let steps = p.cfg.steps()?;
    let path = sample_path(config.seed, p.cfg.dt, steps, p.noise.k())?;
    let traj = sde::run(&p.model, &p.noise, &p.phi0, &p.cfg, &path)?;
    let mut cols: Vec<String> = ["t", "H2", "V2", "A2"].iter().map(|s| s.to_string()).collect();
    cols.extend(p.model.roster().iter().map(|s| format!("E_{}", s.name)));
    cols.push("functional".into());
    let col_refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut csv = sink.csv(&col_refs);
    for i in 0..traj.times.len() {
        let mut row = vec![traj.times[i], traj.h2[i], traj.v2[i], traj.a2[i]];
        row.extend(traj.field_energy.iter().map(|e| e[i]));
        row.push(traj.functional[i]);
        csv.num_row(&row);
    }
    sink.save("trajectory.csv", &csv)?;

    if !config.study.thresholds.is_empty() {
        let st = track_stopping(&traj, &config.study.thresholds, config.study.m, p.cfg.horizon)?;
        let mut csv = sink.csv(&["threshold", "tau"]);
        for (n, tau) in st.thresholds.iter().zip(&st.tau) {
            csv.num_row(&[*n, tau.unwrap_or(f64::INFINITY)]);
        }
        sink.save("stopping.csv", &csv)?;
        let _ = writeln!(summary, "stopping_member = {} (M = {})", st.member, fmt_f64(st.m));
    }

    if config.output.snapshots {
        let kind = p.model.spec().kind;
        for (i, (t, s)) in traj.states.iter().enumerate() {
            let file = sink.dir.join(format!("state_{i:06}.snap"));
            write_snapshot(&file, kind, p.model.basis(), s, *t)?;
            sink.files.push(file);
        }
        let file = sink.dir.join("final.snap");
        write_snapshot(&file, kind, p.model.basis(), &traj.final_state, traj.final_time())?;
        sink.files.push(file);
    }

    let last = traj.times.len() - 1;
    let _ = writeln!(summary, "final_time = {}", fmt_f64(traj.final_time()));
    let _ = writeln!(summary, "final_H2 = {}", fmt_f64(traj.h2[last]));
    let _ = writeln!(summary, "final_functional = {}", fmt_f64(traj.functional[last]));
    match traj.outcome {
        Outcome::Completed => {
            let _ = writeln!(summary, "outcome = completed");
            Ok(())
        }
        Outcome::Capped { time } => {
            let _ = writeln!(summary, "outcome = capped at t = {}", fmt_f64(time));
            Ok(())
        }
        Outcome::Diverged { last_finite_time } => {
            let _ = writeln!(summary, "outcome = diverged after t = {}", fmt_f64(last_finite_time));
            Err(Error::Divergence { last_finite_time })
        }
    }
}

fn verify(config: &RunConfig, p: &Prepared, sink: &mut Sink, summary: &mut String) -> Result<()> {
    let mut report = check_conditions(&p.model, &p.noise, config.study.samples, config.seed)?;
    if p.model.basis().len() <= BRUTE_FORCE_MAX_MODES {
        let worst = oracle_equivalence(&p.model, ORACLE_SAMPLES.min(config.study.samples), config.seed)?;
        report.properties.push(PropertyResult {
            name: "oracle_equivalence".into(),
            hard: true,
            passed: worst <= ORACLE_TOL,
            worst,
            tolerance: ORACLE_TOL,
        });
    }
    let mut csv = sink.csv(&["property", "hard", "passed", "worst", "tolerance"]);
    for prop in &report.properties {
        csv.row(&[
            prop.name.clone(),
            prop.hard.to_string(),
            prop.passed.to_string(),
            fmt_f64(prop.worst),
            fmt_f64(prop.tolerance),
        ]);
    }
    for (name, r) in &report.ratios {
        csv.row(&[
            format!("\"ratio {name}\""),
            "false".into(),
            "true".into(),
            fmt_f64(*r),
            fmt_f64(f64::INFINITY),
        ]);
    }
    sink.save("conditions.csv", &csv)?;
    summary.push_str(&report.to_text());
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .properties
            .iter()
            .filter(|p| p.hard && !p.passed)
            .map(|p| p.name.as_str())
            .collect();
        Err(Error::Property(failed.join(", ")))
    }
}

fn converge(config: &RunConfig, p: &Prepared, sink: &mut Sink, summary: &mut String) -> Result<()> {
    let basis = p.model.basis();
    let levels = config
        .study
        .radii
        .iter()
        .map(|&r| basis.level_for_radius(r))
        .collect::<Result<Vec<_>>>()?;
    let path = sample_path(config.seed, p.cfg.dt, p.cfg.steps()?, p.noise.k())?;
    let study = galerkin_cauchy_study(&p.model, &p.noise, &p.phi0, &levels, &p.cfg, &path)?;
    let mut csv = sink.csv(&[
        "radius_n",
        "radius_m",
        "modes_n",
        "modes_m",
        "error_sup",
        "error_int",
        "error",
    ]);
    let mut series = sink.csv(&["modes_n", "modes_m", "t", "sup", "int"]);
    for (w, r) in config.study.radii.windows(2).zip(&study.reports) {
        csv.num_row(&[
            w[0],
            w[1],
            r.levels.0 as f64,
            r.levels.1 as f64,
            r.error_sup,
            r.error_int,
            r.error(),
        ]);
        for i in 0..r.times.len() {
            series.num_row(&[
                r.levels.0 as f64,
                r.levels.1 as f64,
                r.times[i],
                r.sup_series[i],
                r.int_series[i],
            ]);
        }
        let _ = writeln!(
            summary,
            "error[{}->{}] = {}",
            r.levels.0,
            r.levels.1,
            fmt_f64(r.error())
        );
    }
    for w in study.reports.windows(2) {
        let _ = writeln!(
            summary,
            "ratio[{}->{}] = {}",
            w[0].levels.1,
            w[1].levels.1,
            fmt_f64(w[0].error() / w[1].error())
        );
    }
    if let Some(t) = study.truncated_at {
        let _ = writeln!(summary, "truncated_at = {}", fmt_f64(t));
    }
    sink.save("cauchy.csv", &csv)?;
    sink.save("cauchy_series.csv", &series)
}

fn ensemble(config: &RunConfig, p: &Prepared) -> EnsembleSpec {
    EnsembleSpec {
        model: p.model.clone(),
        noise: p.noise.clone(),
        phi0: p.phi0.clone(),
        cfg: p.cfg,
        replicates: config.replicates,
        seed: config.seed,
    }
}

fn moments(config: &RunConfig, p: &Prepared, sink: &mut Sink, summary: &mut String) -> Result<()> {
    let ens = ensemble(config, p);
    let est = moment_estimate(&ens, config.study.p)?;
    let mut csv = sink.csv(&["replicate", "sample"]);
    for (i, s) in est.samples.iter().enumerate() {
        csv.row(&[i.to_string(), fmt_f64(*s)]);
    }
    sink.save("moments.csv", &csv)?;
    let _ = writeln!(summary, "p = {}", est.p);
    let _ = writeln!(summary, "replicates = {}", est.replicates);
    let _ = writeln!(summary, "estimate = {}", fmt_f64(est.estimate));
    let _ = writeln!(summary, "stderr = {}", fmt_f64(est.stderr));
    let _ = writeln!(summary, "initial_norm = {}", fmt_f64(est.initial_norm));
    let _ = writeln!(summary, "c_hat = {}", fmt_f64(est.c_hat));
    let _ = writeln!(summary, "stopped = {}", est.stopped);
    if let Some(m) = config.study.probability_m {
        let probs = small_time_probability(&ens, m, &config.study.probability_s)?;
        let mut csv = sink.csv(&["S", "probability", "stderr"]);
        for (s, q, se) in probs {
            csv.num_row(&[s, q, se]);
        }
        sink.save("probability.csv", &csv)?;
    }
    Ok(())
}

fn stability(config: &RunConfig, p: &Prepared, sink: &mut Sink, summary: &mut String) -> Result<()> {
    let path = sample_path(config.seed, p.cfg.dt, p.cfg.steps()?, p.noise.k())?;
    let mut csv = sink.csv(&["delta", "sup_psi2", "sup_psi", "gronwall_budget", "truncated_at"]);
    let mut series = sink.csv(&["delta", "t", "psi2"]);
    let mut sups = Vec::new();
    for &delta in &config.study.deltas {
        let r = stability_study(&p.model, &p.noise, &p.phi0, delta, None, &p.cfg, &path)?;
        csv.num_row(&[
            delta,
            r.sup_psi2,
            r.sup_psi2.sqrt(),
            r.gronwall_budget,
            r.truncated_at.unwrap_or(f64::INFINITY),
        ]);
        for (t, v) in r.times.iter().zip(&r.psi2) {
            series.num_row(&[delta, *t, *v]);
        }
        let _ = writeln!(summary, "sup_psi[{}] = {}", fmt_f64(delta), fmt_f64(r.sup_psi2.sqrt()));
        if delta > 0.0 {
            sups.push(r.sup_psi2.sqrt());
        }
    }
    for w in sups.windows(2) {
        let _ = writeln!(summary, "ratio = {}", fmt_f64(w[0] / w[1]));
    }
    sink.save("stability.csv", &csv)?;
    sink.save("stability_series.csv", &series)
}

fn order(config: &RunConfig, p: &Prepared, sink: &mut Sink, summary: &mut String) -> Result<()> {
    let r = strong_order_study(
        &p.model,
        &p.noise,
        &p.phi0,
        &p.cfg,
        config.study.refinements,
        config.study.paths,
        config.seed,
    )?;
    let mut csv = sink.csv(&["dt", "error", "stderr"]);
    for i in 0..r.dts.len() {
        csv.num_row(&[r.dts[i], r.errors[i], r.stderrs[i]]);
    }
    sink.save("order.csv", &csv)?;
    let _ = writeln!(summary, "order = {}", fmt_f64(r.order));
    let _ = writeln!(summary, "reference_dt = {}", fmt_f64(r.reference_dt));
    let _ = writeln!(summary, "paths = {}", r.paths);
    if !r.monotone {
        let _ = writeln!(summary, "warning = error ladder is not monotone");
        eprintln!("warning: strong-order error ladder is not monotone");
    }
    Ok(())
}

fn globality(config: &RunConfig, p: &Prepared, sink: &mut Sink, summary: &mut String) -> Result<()> {
    let ens = ensemble(config, p);
    let r = globality_experiment(&ens, config.study.cap)?;
    let mut csv = sink.csv(&["replicate", "terminal_functional"]);
    for (i, f) in r.terminal.iter().enumerate() {
        csv.row(&[i.to_string(), fmt_f64(*f)]);
    }
    sink.save("globality.csv", &csv)?;
    let _ = writeln!(summary, "dim = {}", r.dim);
    let _ = writeln!(summary, "replicates = {}", r.replicates);
    let _ = writeln!(summary, "cap = {}", fmt_f64(r.cap));
    let _ = writeln!(summary, "blowup_fraction = {}", fmt_f64(r.blowup_fraction));
    let _ = writeln!(summary, "diverged = {}", r.diverged);
    for (q, v) in &r.quantiles {
        let _ = writeln!(summary, "quantile[{q}] = {}", fmt_f64(*v));
    }
    Ok(())
}
