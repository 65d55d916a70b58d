//! Experiments on the Galerkin system: structural-condition checks, the
//! Galerkin Cauchy study, moment estimates, stability, strong order and
//! the globality ensemble.
//!
//! Ensembles run one replicate per task (in parallel with the `parallel`
//! feature) and merge results in replicate order, so every figure is a
//! deterministic function of the inputs and the base seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{random_state, Model};
use crate::noise::{
    default_shape, eval_g, g_distance, lipschitz_report, masked, refine_path, sample_replicate_path, NoiseSpec,
    WienerPath,
};
use crate::sde::{run, step, IntegratorConfig, Outcome};
use crate::spectral::GalerkinLevel;
use crate::state::StateVector;

/// Tolerance of the energy-neutrality and antisymmetry checks, relative to
/// `‖Φ₁‖‖Φ₂‖‖Φ₃‖`.
pub const ANTISYMMETRY_TOL: f64 = 1e-10;
/// Allowed negative part of `⟨𝒮(Φ), Φ⟩` relative to `|𝒮(Φ)||Φ|`.
pub const POSITIVITY_TOL: f64 = 1e-12;
/// Closed-form versus sampled Lipschitz constants.
pub const LIPSCHITZ_TOL: f64 = 1e-10;

pub(crate) fn map_replicates<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n as u64).map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    /// `true` for properties that decide pass/fail.
    pub hard: bool,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub model: String,
    pub dim: usize,
    pub cutoff: usize,
    pub samples: usize,
    pub properties: Vec<PropertyResult>,
    /// Largest sampled `LHS / RHS` of each estimate with an unspecified constant.
    pub ratios: Vec<(String, f64)>,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed || !p.hard)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    /// One line per property followed by the ratio table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "model {} d={} cutoff={} samples={}\n",
            self.model, self.dim, self.cutoff, self.samples
        );
        for p in &self.properties {
            s.push_str(&format!(
                "{} {} worst={:e} tol={:e}{}\n",
                if p.passed { "PASS" } else { "FAIL" },
                p.name,
                p.worst,
                p.tolerance,
                if p.hard { "" } else { " (reported)" }
            ));
        }
        for (name, r) in &self.ratios {
            s.push_str(&format!("ratio {name} max={r:e}\n"));
        }
        s
    }
}

type BFn<'a> = dyn Fn(&StateVector, &StateVector) -> Result<StateVector> + 'a;

/// Samples the structural conditions on random states.
pub fn check_conditions(model: &Model, nspec: &NoiseSpec, samples: usize, seed: u64) -> Result<ConditionReport> {
    check_conditions_with(model, nspec, samples, seed, &|a, b| model.apply_b(a, b))
}

/// [`check_conditions`] with the bilinear map replaced, e.g. by a corrupted
/// variant for negative controls.
pub fn check_conditions_with(
    model: &Model,
    nspec: &NoiseSpec,
    samples: usize,
    seed: u64,
    b: &BFn<'_>,
) -> Result<ConditionReport> {
    if samples == 0 {
        return Err(Error::Argument("samples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = model.spec().dim;
    let v = |x: &StateVector| model.norm(x, 0.5);
    let h = |x: &StateVector| model.norm(x, 0.0);
    let a = |x: &StateVector| model.norm(x, 1.0);
    let a8 = |x: &StateVector| model.norm(x, 0.125);
    let inner = |x: &StateVector, y: &StateVector| model.inner(x, y, 0.0);

    let mut neutral = 0.0f64;
    let mut antisym = 0.0f64;
    let mut positivity = 0.0f64;
    let mut split = 0.0f64;
    let mut ratios = vec![0.0f64; 9];
    for _ in 0..samples {
        let p1 = random_state(model, 0.5, None, &mut rng);
        let p2 = random_state(model, 0.5, None, &mut rng);
        let p3 = random_state(model, 0.5, None, &mut rng);
        let (n1, n2, n3) = (v(&p1), v(&p2), v(&p3));
        let b12 = b(&p1, &p2)?;
        let b13 = b(&p1, &p3)?;
        neutral = neutral.max(inner(&b12, &p2)?.abs() / (n1 * n2 * n2));
        let anti = inner(&b12, &p3)? + inner(&b13, &p2)?;
        antisym = antisym.max(anti.abs() / (n1 * n2 * n3));

        let (s, f) = model.split_r(&p1)?;
        let r = model.apply_r(&p1)?;
        let scale = h(&s) * h(&p1);
        if scale > 0.0 {
            positivity = positivity.max(-inner(&s, &p1)? / scale);
        }
        split = split.max(r.sub(&s.add(&f)).norm_sq().sqrt() / h(&r).max(f64::MIN_POSITIVE));

        ratios[0] = ratios[0].max(h(&f) / (1.0 + n1));
        ratios[1] = ratios[1].max(inner(&b12, &p3)?.abs() / (n1 * n2 * (h(&p3) * n3).sqrt()));
        let with_a = if dim == 2 {
            (h(&p1) * n1 * n2 * a(&p2)).sqrt() * h(&p3)
        } else {
            n1 * (n2 * a(&p2)).sqrt() * h(&p3)
        };
        ratios[2] = ratios[2].max(inner(&b12, &p3)?.abs() / with_a);
        let bvv = b(&p1, &p1)?;
        ratios[3] = ratios[3].max(h(&bvv).powi(2) / (n1.powi(3) * a(&p1)));
        ratios[4] = ratios[4].max(a8(&bvv).powi(2) / (n1 * n1 * a(&p1).powi(2)));
        let growth = if dim == 2 {
            1.0 + h(&p1).powf(1.5) * a(&p1).sqrt()
        } else {
            1.0 + h(&p1).sqrt() * n1 * a(&p1).sqrt()
        };
        ratios[5] = ratios[5].max(inner(&r, &p2)?.abs() / (growth * n1 * h(&p2)));
        let r2 = model.apply_r(&p2)?;
        let lip = (1.0 + n1 * n1 + n2 * n2) * v(&p1.sub(&p2)) * h(&p3);
        ratios[6] = ratios[6].max(inner(&r.sub(&r2), &p3)?.abs() / lip);
        ratios[7] = ratios[7].max(h(&r).powi(2) / ((1.0 + n1.powi(4)) * n1 * n1));
        ratios[8] = ratios[8].max(a8(&r).powi(2) / ((1.0 + n1.powi(4)) * n1 * a(&p1)));
    }
    let names = [
        "F_growth |F(v)|/(1+‖v‖)",
        "B_trilinear |<B(v1,v2),v3>|/(‖v1‖‖v2‖|v3|^½‖v3‖^½)",
        "B_with_A |<B(v1,v2),v3>|/(interpolated bound)",
        "B_H |B(v)|²/(‖v‖³|Av|)",
        "B_A18 |B(v)|²_{A^⅛}/(‖v‖²|Av|²)",
        "R_pairing |<R(v1),v2>|/(growth·‖v1‖|v2|)",
        "R_lipschitz |<R(v1)-R(v2),v3>|/((1+‖v1‖²+‖v2‖²)‖v1-v2‖|v3|)",
        "R_H |R(v)|²/((1+‖v‖⁴)‖v‖²)",
        "R_A18 |R(v)|²_{A^⅛}/((1+‖v‖⁴)‖v‖|Av|)",
    ];
    let mut properties = vec![
        hard("energy_neutrality", neutral, ANTISYMMETRY_TOL),
        hard("antisymmetry", antisym, ANTISYMMETRY_TOL),
        hard("s_positivity", positivity, POSITIVITY_TOL),
        hard("r_split", split, 1e-14),
    ];
    properties.extend(noise_properties(model, nspec, samples, &mut rng)?);
    Ok(ConditionReport {
        model: model.spec().kind.as_str().into(),
        dim,
        cutoff: model.basis().cutoff(),
        samples,
        properties,
        ratios: names.iter().map(|s| s.to_string()).zip(ratios).collect(),
    })
}

/// Worst relative gap `|ℬ_ps − ℬ_conv| / |ℬ_conv|` between the pseudo-spectral
/// product and the direct convolution over `samples` random pairs.
pub fn oracle_equivalence(model: &Model, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let p1 = random_state(model, 0.5, None, &mut rng);
        let p2 = random_state(model, 0.5, None, &mut rng);
        let fast = model.apply_b(&p1, &p2)?;
        let slow = model.brute_force_b(&p1, &p2)?;
        let scale = slow.norm_sq().sqrt();
        let err = fast.sub(&slow).norm_sq().sqrt();
        worst = worst.max(if scale > 0.0 { err / scale } else { err });
    }
    Ok(worst)
}

fn hard(name: &str, worst: f64, tolerance: f64) -> PropertyResult {
    PropertyResult {
        name: name.into(),
        hard: true,
        passed: worst <= tolerance,
        worst,
        tolerance,
    }
}

fn noise_properties(
    model: &Model,
    nspec: &NoiseSpec,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PropertyResult>> {
    let scales = [("H", 0.0), ("V", 0.5), ("DA", 1.0)];
    let closed = match nspec {
        NoiseSpec::Affine { .. } => {
            let r = lipschitz_report(nspec, model)?;
            Some([(r.l_h, r.growth_h), (r.l_v, r.growth_v), (r.l_da, r.growth_da)])
        }
        NoiseSpec::Custom { .. } => None,
    };
    let mut out = Vec::new();
    for (i, (label, alpha)) in scales.iter().enumerate() {
        let mut sup_lip = 0.0f64;
        let mut sup_growth = 0.0f64;
        for _ in 0..samples {
            let a = random_state(model, 0.5, None, rng);
            let d = masked(nspec, &random_state(model, 0.5, None, rng));
            let b = a.add(&d);
            let dn = model.norm(&d, *alpha);
            if dn > 0.0 && nspec.k() > 0 {
                sup_lip = sup_lip.max(g_distance(model, nspec, &a, &b, *alpha)? / dn);
            }
            let ga: f64 = eval_g(nspec, &a)?
                .iter()
                .map(|g| model.norm(g, *alpha).powi(2))
                .sum::<f64>()
                .sqrt();
            sup_growth = sup_growth.max(ga / (1.0 + model.norm(&a, *alpha)));
        }
        match closed {
            Some(c) => {
                let (l, g) = c[i];
                out.push(hard(&format!("lipschitz_{label}"), (sup_lip - l).abs(), LIPSCHITZ_TOL));
                out.push(hard(
                    &format!("growth_{label}"),
                    (sup_growth - g).max(0.0),
                    LIPSCHITZ_TOL * g.max(1.0),
                ));
            }
            None => {
                for (name, val) in [("lipschitz", sup_lip), ("growth", sup_growth)] {
                    out.push(PropertyResult {
                        name: format!("{name}_{label}"),
                        hard: false,
                        passed: val.is_finite(),
                        worst: val,
                        tolerance: f64::INFINITY,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// How an experiment over several coupled runs ended.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LockstepEnd {
    pub final_time: f64,
    /// Earliest cap crossing or divergence among the runs.
    pub stopped_at: Option<f64>,
}

/// Integrates several initial states (each at its own level) on one path,
/// calling `visit(t, states)` at every grid time. All runs stop together at
/// the first cap crossing or divergence of any of them.
pub fn lockstep(
    model: &Model,
    nspec: &NoiseSpec,
    runs: &[(StateVector, GalerkinLevel)],
    cfg: &IntegratorConfig,
    path: &WienerPath,
    mut visit: impl FnMut(f64, &[StateVector]) -> Result<()>,
) -> Result<LockstepEnd> {
    let mut steps = 0;
    for (phi, level) in runs {
        model.check_state(phi)?;
        let c = IntegratorConfig { level: *level, ..*cfg };
        steps = c.validate(model)?;
    }
    if nspec.k() > 0
        && (path.directions() != nspec.k() || path.steps < steps || (path.dt - cfg.dt).abs() > 1e-12 * cfg.dt)
    {
        return Err(Error::Argument(format!(
            "path ({} directions, {} steps of {}) does not cover {} steps of {} with {} directions",
            path.directions(),
            path.steps,
            path.dt,
            steps,
            cfg.dt,
            nspec.k()
        )));
    }
    let mut states: Vec<StateVector> = runs
        .iter()
        .map(|(phi, level)| {
            let mut p = phi.clone();
            p.project(*level);
            p
        })
        .collect();
    let functional = |s: &StateVector| (model.norm(s, 0.5).powi(2), model.norm(s, 1.0).powi(2));
    let mut sup: Vec<f64> = Vec::with_capacity(runs.len());
    let mut int = vec![0.0; runs.len()];
    let mut a_prev: Vec<f64> = Vec::with_capacity(runs.len());
    for s in &states {
        let (v2, a2) = functional(s);
        sup.push(v2);
        a_prev.push(a2);
    }
    let over = |sup: &[f64], int: &[f64]| cfg.cap.is_some_and(|c| sup.iter().zip(int).any(|(s, i)| s + i > c));
    visit(0.0, &states)?;
    if over(&sup, &int) {
        return Ok(LockstepEnd {
            final_time: 0.0,
            stopped_at: Some(0.0),
        });
    }
    let mut dw = vec![0.0; nspec.k()];
    for s in 0..steps {
        for (w, inc) in dw.iter_mut().zip(&path.increments) {
            *w = inc[s];
        }
        let t = (s + 1) as f64 * cfg.dt;
        let mut next = Vec::with_capacity(states.len());
        for (phi, (_, level)) in states.iter().zip(runs) {
            next.push(step(cfg.scheme, model, nspec, phi, cfg.dt, &dw, *level)?);
        }
        if next.iter().any(|p| !p.is_finite()) {
            return Ok(LockstepEnd {
                final_time: s as f64 * cfg.dt,
                stopped_at: Some(s as f64 * cfg.dt),
            });
        }
        for (i, p) in next.iter().enumerate() {
            let (v2, a2) = functional(p);
            sup[i] = sup[i].max(v2);
            int[i] += 0.5 * cfg.dt * (a_prev[i] + a2);
            a_prev[i] = a2;
        }
        states = next;
        visit(t, &states)?;
        if over(&sup, &int) {
            return Ok(LockstepEnd {
                final_time: t,
                stopped_at: Some(t),
            });
        }
    }
    Ok(LockstepEnd {
        final_time: steps as f64 * cfg.dt,
        stopped_at: None,
    })
}

/// Difference functional between two Galerkin levels on one path.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceReport {
    /// Coarse and fine levels (mode counts).
    pub levels: (usize, usize),
    /// `sup_t ‖Φᵐ − Φⁿ‖²`.
    pub error_sup: f64,
    /// `∫ |𝒜(Φᵐ − Φⁿ)|² dt` (trapezoid).
    pub error_int: f64,
    pub times: Vec<f64>,
    /// `‖Φᵐ(t) − Φⁿ(t)‖²`.
    pub sup_series: Vec<f64>,
    /// `|𝒜(Φᵐ(t) − Φⁿ(t))|²`.
    pub int_series: Vec<f64>,
}

impl DifferenceReport {
    pub fn error(&self) -> f64 {
        self.error_sup + self.error_int
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CauchyStudy {
    pub reports: Vec<DifferenceReport>,
    /// Common stopping time when a member crossed the cap or diverged.
    pub truncated_at: Option<f64>,
}

/// Integrates every level on the same path and compares consecutive levels.
pub fn galerkin_cauchy_study(
    model: &Model,
    nspec: &NoiseSpec,
    phi0: &StateVector,
    levels: &[GalerkinLevel],
    cfg: &IntegratorConfig,
    path: &WienerPath,
) -> Result<CauchyStudy> {
    if levels.len() < 2 {
        return Err(Error::Argument("a Cauchy study needs at least two levels".into()));
    }
    if levels.windows(2).any(|w| w[0].get() > w[1].get()) {
        return Err(Error::Argument("levels must be ascending".into()));
    }
    let runs: Vec<(StateVector, GalerkinLevel)> = levels.iter().map(|&l| (phi0.clone(), l)).collect();
    let pairs = levels.len() - 1;
    let mut reports: Vec<DifferenceReport> = levels
        .windows(2)
        .map(|w| DifferenceReport {
            levels: (w[0].get(), w[1].get()),
            error_sup: 0.0,
            error_int: 0.0,
            times: Vec::new(),
            sup_series: Vec::new(),
            int_series: Vec::new(),
        })
        .collect();
    let end = lockstep(model, nspec, &runs, cfg, path, |t, states| {
        for i in 0..pairs {
            let d = states[i + 1].sub(&states[i]);
            let r = &mut reports[i];
            let v2 = model.norm(&d, 0.5).powi(2);
            let a2 = model.norm(&d, 1.0).powi(2);
            if let (Some(&tp), Some(&ap)) = (r.times.last(), r.int_series.last()) {
                r.error_int += 0.5 * (t - tp) * (ap + a2);
            }
            r.error_sup = r.error_sup.max(v2);
            r.times.push(t);
            r.sup_series.push(v2);
            r.int_series.push(a2);
        }
        Ok(())
    })?;
    Ok(CauchyStudy {
        reports,
        truncated_at: end.stopped_at,
    })
}

/// Ensemble of independent replicates sharing model, noise and initial data.
#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    pub model: Model,
    pub noise: NoiseSpec,
    pub phi0: StateVector,
    pub cfg: IntegratorConfig,
    pub replicates: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn path(&self, replicate: u64) -> Result<WienerPath> {
        sample_replicate_path(self.seed, replicate, self.cfg.dt, self.cfg.steps()?, self.noise.k())
    }

    fn check(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("ensemble.replicates: must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub p: u32,
    pub replicates: usize,
    /// Monte Carlo mean of `sup |Φ|^p + ∫ ‖Φ‖² |Φ|^{p-2}` up to `τ ∧ T`.
    pub estimate: f64,
    pub stderr: f64,
    /// `estimate / (1 + |Φ₀ⁿ|^p)`.
    pub c_hat: f64,
    pub initial_norm: f64,
    /// Replicates stopped by the cap before `T`.
    pub stopped: usize,
    pub samples: Vec<f64>,
}

pub fn moment_estimate(ens: &EnsembleSpec, p: u32) -> Result<MomentEstimate> {
    if ![4, 6, 8].contains(&p) {
        return Err(Error::Argument(format!("p must be 4, 6 or 8, got {p}")));
    }
    ens.check()?;
    let pf = p as f64;
    let per = map_replicates(ens.replicates, |r| {
        let traj = run(&ens.model, &ens.noise, &ens.phi0, &ens.cfg, &ens.path(r)?)?;
        let hp: Vec<f64> = traj.h2.iter().map(|h| h.powf(0.5 * pf)).collect();
        let sup = hp.iter().copied().fold(0.0, f64::max);
        let integrand: Vec<f64> = traj
            .v2
            .iter()
            .zip(&traj.h2)
            .map(|(v, h)| v * h.powf(0.5 * pf - 1.0))
            .collect();
        let int: f64 = traj
            .times
            .windows(2)
            .zip(integrand.windows(2))
            .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
            .sum();
        let stopped_at_zero = traj.final_time() == 0.0 && !matches!(traj.outcome, Outcome::Completed);
        Ok((sup + int, traj.outcome, stopped_at_zero, traj.h2[0]))
    })?;
    if per.iter().all(|x| x.2) {
        return Err(Error::Degenerate("every replicate stopped at t = 0".into()));
    }
    let samples: Vec<f64> = per.iter().map(|x| x.0).collect();
    let (mean, se) = mean_stderr(&samples);
    let h0 = per[0].3.sqrt();
    Ok(MomentEstimate {
        p,
        replicates: ens.replicates,
        estimate: mean,
        stderr: se,
        c_hat: mean / (1.0 + h0.powf(pf)),
        initial_norm: h0,
        stopped: per.iter().filter(|x| !matches!(x.1, Outcome::Completed)).count(),
        samples,
    })
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub delta: f64,
    /// `sup_t |Ψ(t)|²` with `Ψ = Φ⁽¹⁾ − Φ⁽²⁾`.
    pub sup_psi2: f64,
    /// `∫ (1 + ‖Φ⁽¹⁾‖⁴ + ‖Φ⁽²⁾‖⁴) dt`.
    pub gronwall_budget: f64,
    pub times: Vec<f64>,
    pub psi2: Vec<f64>,
    pub truncated_at: Option<f64>,
}

/// Runs `Φ₀` and `Φ₀ + δ·direction` on one path. The default direction is
/// the first noise shape on all fields (unit `ℋ`-norm).
pub fn stability_study(
    model: &Model,
    nspec: &NoiseSpec,
    phi0: &StateVector,
    delta: f64,
    direction: Option<&StateVector>,
    cfg: &IntegratorConfig,
    path: &WienerPath,
) -> Result<StabilityReport> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Argument(format!("delta must be nonnegative, got {delta}")));
    }
    let dir = match direction {
        Some(d) => {
            model.check_state(d)?;
            let n = d.norm_sq().sqrt();
            if n == 0.0 {
                return Err(Error::Argument("perturbation direction is zero".into()));
            }
            d.scaled(1.0 / n)
        }
        None => {
            let all: Vec<_> = model.roster().iter().map(|s| s.name).collect();
            default_shape(model, 0, &all)?
        }
    };
    let mut perturbed = phi0.clone();
    perturbed.axpy(delta, &dir);
    let runs = [(phi0.clone(), cfg.level), (perturbed, cfg.level)];
    let mut times = Vec::new();
    let mut psi2 = Vec::new();
    let mut budget = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    let end = lockstep(model, nspec, &runs, cfg, path, |t, s| {
        times.push(t);
        psi2.push(s[1].sub(&s[0]).norm_sq());
        let g = 1.0 + model.norm(&s[0], 0.5).powi(4) + model.norm(&s[1], 0.5).powi(4);
        if let Some((tp, gp)) = prev {
            budget += 0.5 * (t - tp) * (gp + g);
        }
        prev = Some((t, g));
        Ok(())
    })?;
    Ok(StabilityReport {
        delta,
        sup_psi2: psi2.iter().copied().fold(0.0, f64::max),
        gronwall_budget: budget,
        times,
        psi2,
        truncated_at: end.stopped_at,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderReport {
    pub dts: Vec<f64>,
    /// Mean `ℋ`-norm endpoint error against the reference at each `dt`.
    pub errors: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Least-squares slope of `log error` against `log dt`.
    pub order: f64,
    pub reference_dt: f64,
    pub monotone: bool,
    pub paths: usize,
}

/// Strong order of `cfg.scheme` on `paths` independent paths. The reference
/// uses the same scheme on the path refined `refinements` times; the ladder
/// is `cfg.dt · 2^{-j}` for `j ≤ refinements - 3` (`≤ refinements - 2` when
/// `refinements < 5`), so the reference is at least 8 (4) times finer than
/// every rung. A closer reference shares most of its error with the finest
/// rungs and inflates the fitted slope.
pub fn strong_order_study(
    model: &Model,
    nspec: &NoiseSpec,
    phi0: &StateVector,
    cfg: &IntegratorConfig,
    refinements: u32,
    paths: usize,
    seed: u64,
) -> Result<OrderReport> {
    if refinements < 3 {
        return Err(Error::Argument(format!(
            "refinements must be at least 3, got {refinements}"
        )));
    }
    if paths == 0 {
        return Err(Error::Argument("paths must be at least 1".into()));
    }
    let steps = cfg.steps()?;
    let gap = if refinements >= 5 { 3 } else { 2 };
    let last = refinements - gap;
    let ladder: Vec<u32> = (0..=last).collect();
    let with_dt = |j: u32| IntegratorConfig {
        dt: cfg.dt / (1u64 << j) as f64,
        save_every: 0,
        cap: None,
        ..*cfg
    };
    for &j in ladder.iter().chain([refinements].iter()) {
        with_dt(j).validate(model)?;
    }
    let per_path = map_replicates(paths, |r| {
        let mut path = sample_replicate_path(seed, r, cfg.dt, steps, nspec.k())?;
        let mut finals = Vec::with_capacity(ladder.len());
        for j in 0..=refinements {
            if j > 0 {
                path = refine_path(&path);
            }
            if j <= last || j == refinements {
                let traj = crate::sde::integrate(model, nspec, phi0, &with_dt(j), &path)?;
                finals.push(traj.final_state);
            }
        }
        let reference = finals.pop().expect("reference run");
        Ok(finals
            .iter()
            .map(|f| f.sub(&reference).norm_sq().sqrt())
            .collect::<Vec<f64>>())
    })?;
    let mut errors = Vec::with_capacity(ladder.len());
    let mut stderrs = Vec::with_capacity(ladder.len());
    for i in 0..ladder.len() {
        let col: Vec<f64> = per_path.iter().map(|e| e[i]).collect();
        let (m, se) = mean_stderr(&col);
        errors.push(m);
        stderrs.push(se);
    }
    let dts: Vec<f64> = ladder.iter().map(|&j| with_dt(j).dt).collect();
    let order = ls_slope(
        &dts.iter().map(|d| d.ln()).collect::<Vec<_>>(),
        &errors.iter().map(|e| e.ln()).collect::<Vec<_>>(),
    );
    Ok(OrderReport {
        monotone: errors.windows(2).all(|w| w[1] < w[0]),
        dts,
        errors,
        stderrs,
        order,
        reference_dt: with_dt(refinements).dt,
        paths,
    })
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalityReport {
    pub dim: usize,
    pub replicates: usize,
    pub cap: f64,
    pub blowup_fraction: f64,
    /// Replicates that produced non-finite values (included in the fraction).
    pub diverged: usize,
    /// `(q, value)` quantiles of the terminal functional.
    pub quantiles: Vec<(f64, f64)>,
    pub terminal: Vec<f64>,
}

pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Fraction of replicates whose blow-up functional crosses `cap` before `T`.
pub fn globality_experiment(ens: &EnsembleSpec, cap: f64) -> Result<GlobalityReport> {
    ens.check()?;
    if !(cap > 0.0) {
        return Err(Error::Argument(format!("cap must be positive, got {cap}")));
    }
    let cfg = IntegratorConfig {
        cap: cap.is_finite().then_some(cap),
        save_every: 0,
        ..ens.cfg
    };
    let per = map_replicates(ens.replicates, |r| {
        let traj = run(&ens.model, &ens.noise, &ens.phi0, &cfg, &ens.path(r)?)?;
        Ok((*traj.functional.last().expect("initial time"), traj.outcome))
    })?;
    let crossed = per.iter().filter(|(_, o)| !matches!(o, Outcome::Completed)).count();
    let diverged = per
        .iter()
        .filter(|(_, o)| matches!(o, Outcome::Diverged { .. }))
        .count();
    let terminal: Vec<f64> = per
        .iter()
        .map(|(f, o)| match o {
            Outcome::Diverged { .. } => f64::INFINITY,
            _ => *f,
        })
        .collect();
    Ok(GlobalityReport {
        dim: ens.model.spec().dim,
        replicates: ens.replicates,
        cap,
        blowup_fraction: crossed as f64 / ens.replicates as f64,
        diverged,
        quantiles: QUANTILES.iter().map(|&q| (q, quantile(&terminal, q))).collect(),
        terminal,
    })
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || v[hi] == v[lo] {
        return v[lo];
    }
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Estimates `ℙ[Aₙ(τ, S)]` for each `S`, with `τ` the exit time of
/// `(sup ‖Φ‖² + ∫|𝒜Φ|²)^{1/2} ≤ M + ‖Φ₀ⁿ‖` capped at `T`.
pub fn small_time_probability(ens: &EnsembleSpec, m: f64, s_values: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    ens.check()?;
    if !(m > 1.0) {
        return Err(Error::Argument(format!("M must exceed 1, got {m}")));
    }
    let cfg = IntegratorConfig { cap: None, ..ens.cfg };
    let per = map_replicates(ens.replicates, |r| {
        let traj = run(&ens.model, &ens.noise, &ens.phi0, &cfg, &ens.path(r)?)?;
        let v0 = traj.v2[0];
        let bound = (m + v0.sqrt()).powi(2);
        let level = v0 + (m - 1.0).powi(2);
        let tau = traj
            .times
            .iter()
            .zip(&traj.functional)
            .find(|(_, &f)| f > bound)
            .map_or(traj.final_time(), |(&t, _)| t);
        Ok(s_values
            .iter()
            .map(|&s| {
                let stop = tau.min(s);
                // functional at the last grid time not after τ ∧ S
                let idx = traj.times.partition_point(|&t| t <= stop * (1.0 + 1e-12));
                let f = traj.functional[idx.max(1) - 1];
                f > level
            })
            .collect::<Vec<bool>>())
    })?;
    let n = ens.replicates as f64;
    Ok(s_values
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let p = per.iter().filter(|hits| hits[i]).count() as f64 / n;
            (s, p, (p * (1.0 - p) / n).sqrt())
        })
        .collect())
}
