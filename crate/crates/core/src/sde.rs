//! Time stepping of the Galerkin system
//! `dΦⁿ + (𝒜Φⁿ + Pₙℬ(Φⁿ) + Pₙℛ(Φⁿ)) dt = Σ Pₙ g_k(Φⁿ) dβ_k`
//! and the blow-up functional `sup ‖Φ‖² + ∫ |𝒜Φ|²`.

use crate::error::{Error, Result};
use crate::models::Model;
use crate::noise::{eval_g, NoiseSpec, WienerPath};
use crate::spectral::GalerkinLevel;
use crate::state::StateVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    EulerMaruyama,
    ExpEulerMaruyama,
    SemiImplicit,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "euler_maruyama",
            Scheme::ExpEulerMaruyama => "exp_euler_maruyama",
            Scheme::SemiImplicit => "semi_implicit",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        [Scheme::EulerMaruyama, Scheme::ExpEulerMaruyama, Scheme::SemiImplicit]
            .into_iter()
            .find(|x| x.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// Horizon `T`, an integer multiple of `dt`.
    pub horizon: f64,
    pub level: GalerkinLevel,
    /// Keep every `save_every`-th state (0 keeps only the final state).
    pub save_every: usize,
    /// Stop once the blow-up functional exceeds this value.
    pub cap: Option<f64>,
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, dt: f64, horizon: f64, level: GalerkinLevel) -> IntegratorConfig {
        IntegratorConfig {
            scheme,
            dt,
            horizon,
            level,
            save_every: 0,
            cap: None,
        }
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "integrator.dt: must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "integrator.horizon: T = {} must be at least dt = {}",
                self.horizon, self.dt
            )));
        }
        let n = (self.horizon / self.dt).round();
        if (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Config(format!(
                "integrator.horizon: T = {} is not a multiple of dt = {}",
                self.horizon, self.dt
            )));
        }
        Ok(n as usize)
    }

    /// Checks the step size against the scheme and the level.
    pub fn validate(&self, model: &Model) -> Result<usize> {
        let steps = self.steps()?;
        if !model.basis().is_symmetric_level(self.level) {
            return Err(Error::Config(format!(
                "integrator.level: level {} splits a ±k pair; use a level closed under k → -k",
                self.level.get()
            )));
        }
        if self.scheme == Scheme::EulerMaruyama {
            let lmax = model.lambda_max(self.level);
            if self.dt >= 2.0 / lmax {
                return Err(Error::Config(format!(
                    "integrator.dt: euler_maruyama needs dt < 2/λ_max = {:e}, got {}",
                    2.0 / lmax,
                    self.dt
                )));
            }
        }
        if let Some(cap) = self.cap {
            if !(cap > 0.0) {
                return Err(Error::Config(format!("integrator.cap: must be positive, got {cap}")));
            }
        }
        Ok(steps)
    }
}

/// Drift `Pₙ(ℬ(Φ,Φ) + ℛ(Φ))` without the linear part.
pub fn nonlinear_drift(model: &Model, phi: &StateVector, level: GalerkinLevel) -> Result<StateVector> {
    let mut n = model.apply_b(phi, phi)?;
    n.axpy(1.0, &model.apply_r(phi)?);
    n.project(level);
    Ok(n)
}

/// `Σ_k Pₙ g_k(Φ) ΔW_k`.
pub fn noise_increment(
    model: &Model,
    nspec: &NoiseSpec,
    phi: &StateVector,
    dw: &[f64],
    level: GalerkinLevel,
) -> Result<StateVector> {
    if dw.len() != nspec.k() {
        return Err(Error::Shape {
            expected: nspec.k(),
            found: dw.len(),
        });
    }
    let mut out = model.zero_state();
    if dw.is_empty() {
        return Ok(out);
    }
    for (g, &w) in eval_g(nspec, phi)?.iter().zip(dw) {
        out.axpy(w, g);
    }
    out.project(level);
    Ok(out)
}

/// One step of the chosen recursion.
pub fn step(
    scheme: Scheme,
    model: &Model,
    nspec: &NoiseSpec,
    phi: &StateVector,
    dt: f64,
    dw: &[f64],
    level: GalerkinLevel,
) -> Result<StateVector> {
    Ok(step_parts(scheme, model, nspec, phi, dt, dw, level)?.0)
}

fn step_parts(
    scheme: Scheme,
    model: &Model,
    nspec: &NoiseSpec,
    phi: &StateVector,
    dt: f64,
    dw: &[f64],
    level: GalerkinLevel,
) -> Result<(StateVector, f64)> {
    let noise = noise_increment(model, nspec, phi, dw, level)?;
    let audit = noise.norm_sq();
    let mut rhs = phi.clone();
    rhs.axpy(-dt, &nonlinear_drift(model, phi, level)?);
    rhs.axpy(1.0, &noise);
    let next = match scheme {
        Scheme::EulerMaruyama => {
            rhs.axpy(-dt, &model.apply_a(phi)?);
            rhs
        }
        Scheme::ExpEulerMaruyama => model.linear_fn(&rhs, |l| (-l * dt).exp()),
        Scheme::SemiImplicit => model.linear_fn(&rhs, |l| 1.0 / (1.0 + l * dt)),
    };
    Ok((next, audit))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    Completed,
    /// The functional crossed the cap; the trajectory is frozen there.
    Capped {
        time: f64,
    },
    /// A non-finite value appeared after `last_finite_time`.
    Diverged {
        last_finite_time: f64,
    },
}

/// Diagnostic channels, one entry per grid time actually reached.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `|Φ|²`.
    pub h2: Vec<f64>,
    /// `‖Φ‖² = ⟨𝒜Φ, Φ⟩`.
    pub v2: Vec<f64>,
    /// `|𝒜Φ|²`.
    pub a2: Vec<f64>,
    /// `field_energy[field][step]`.
    pub field_energy: Vec<Vec<f64>>,
    /// Running `sup ‖Φ‖² + ∫ |𝒜Φ|²`.
    pub functional: Vec<f64>,
    /// `|Σ Pₙ g_k ΔW_k|²` of the step ending at each time (0 at `t = 0`).
    pub noise_audit: Vec<f64>,
    /// Strided `(time, state)` pairs.
    pub states: Vec<(f64, StateVector)>,
    pub final_state: StateVector,
    pub outcome: Outcome,
    sup_v2: f64,
    integral_a2: f64,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has the initial time")
    }

    fn record(&mut self, model: &Model, t: f64, phi: &StateVector, audit: f64) {
        let h2 = phi.norm_sq();
        let v2 = model.norm(phi, 0.5).powi(2);
        let a2 = model.norm(phi, 1.0).powi(2);
        if let (Some(&t_prev), Some(&a_prev)) = (self.times.last(), self.a2.last()) {
            self.integral_a2 += 0.5 * (t - t_prev) * (a_prev + a2);
        }
        self.sup_v2 = self.sup_v2.max(v2);
        let f = self.sup_v2 + self.integral_a2;
        self.times.push(t);
        self.h2.push(h2);
        self.v2.push(v2);
        self.a2.push(a2);
        for (ch, fl) in self.field_energy.iter_mut().zip(&phi.fields) {
            ch.push(fl.norm_sq());
        }
        self.functional.push(f);
        self.noise_audit.push(audit);
    }

    fn pop(&mut self, (sup, integral): (f64, f64)) {
        self.times.pop();
        self.h2.pop();
        self.v2.pop();
        self.a2.pop();
        for ch in &mut self.field_energy {
            ch.pop();
        }
        self.functional.pop();
        self.noise_audit.pop();
        self.sup_v2 = sup;
        self.integral_a2 = integral;
    }
}

/// Integrates from `PₙΦ₀`; divergence is reported in the outcome rather
/// than as an error so that ensembles can record it.
pub fn run(
    model: &Model,
    nspec: &NoiseSpec,
    phi0: &StateVector,
    cfg: &IntegratorConfig,
    path: &WienerPath,
) -> Result<Trajectory> {
    model.check_state(phi0)?;
    let steps = cfg.validate(model)?;
    if path.directions() != nspec.k() {
        return Err(Error::Shape {
            expected: nspec.k(),
            found: path.directions(),
        });
    }
    if nspec.k() > 0 {
        if (path.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
            return Err(Error::Argument(format!(
                "path dt {} differs from integrator dt {}",
                path.dt, cfg.dt
            )));
        }
        if path.steps < steps {
            return Err(Error::Argument(format!(
                "path has {} steps, the horizon needs {steps}",
                path.steps
            )));
        }
    }
    let mut phi = phi0.clone();
    phi.project(cfg.level);
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        h2: Vec::with_capacity(steps + 1),
        v2: Vec::with_capacity(steps + 1),
        a2: Vec::with_capacity(steps + 1),
        field_energy: vec![Vec::with_capacity(steps + 1); phi.fields.len()],
        functional: Vec::with_capacity(steps + 1),
        noise_audit: Vec::with_capacity(steps + 1),
        states: Vec::new(),
        final_state: phi.clone(),
        outcome: Outcome::Completed,
        sup_v2: 0.0,
        integral_a2: 0.0,
    };
    traj.record(model, 0.0, &phi, 0.0);
    if cfg.save_every > 0 {
        traj.states.push((0.0, phi.clone()));
    }
    let capped = |f: f64| cfg.cap.is_some_and(|c| f > c);
    if capped(traj.functional[0]) {
        traj.outcome = Outcome::Capped { time: 0.0 };
        return Ok(traj);
    }
    let mut dw = vec![0.0; nspec.k()];
    for s in 0..steps {
        for (w, inc) in dw.iter_mut().zip(&path.increments) {
            *w = inc[s];
        }
        let (next, audit) = step_parts(cfg.scheme, model, nspec, &phi, cfg.dt, &dw, cfg.level)?;
        let t = (s + 1) as f64 * cfg.dt;
        if !next.is_finite() {
            traj.outcome = Outcome::Diverged {
                last_finite_time: s as f64 * cfg.dt,
            };
            break;
        }
        let saved = (traj.sup_v2, traj.integral_a2);
        traj.record(model, t, &next, audit);
        if !traj.functional.last().expect("recorded").is_finite() {
            traj.pop(saved);
            traj.outcome = Outcome::Diverged {
                last_finite_time: s as f64 * cfg.dt,
            };
            break;
        }
        phi = next;
        if cfg.save_every > 0 && (s + 1) % cfg.save_every == 0 {
            traj.states.push((t, phi.clone()));
        }
        if capped(*traj.functional.last().expect("recorded")) {
            traj.outcome = Outcome::Capped { time: t };
            break;
        }
    }
    traj.final_state = phi;
    Ok(traj)
}

/// Like [`run`], but a non-finite state is a divergence error.
pub fn integrate(
    model: &Model,
    nspec: &NoiseSpec,
    phi0: &StateVector,
    cfg: &IntegratorConfig,
    path: &WienerPath,
) -> Result<Trajectory> {
    let traj = run(model, nspec, phi0, cfg, path)?;
    if let Outcome::Diverged { last_finite_time } = traj.outcome {
        return Err(Error::Divergence { last_finite_time });
    }
    Ok(traj)
}

/// First-passage times of the blow-up functional.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppingTracker {
    pub times: Vec<f64>,
    pub functional: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// `τ_n`, `None` when the level is not reached.
    pub tau: Vec<Option<f64>>,
    pub m: f64,
    pub horizon: f64,
    /// Whether `T ∈ 𝒯ₙ^{M,T}`: the functional stays below `(M + ‖Φ₀ⁿ‖)²`
    /// on `[0, T]`.
    pub member: bool,
}

pub fn track_stopping(traj: &Trajectory, thresholds: &[f64], m: f64, horizon: f64) -> Result<StoppingTracker> {
    if traj.v2.is_empty() || traj.a2.len() != traj.v2.len() || traj.times.len() != traj.v2.len() {
        return Err(Error::Argument("trajectory lacks the ‖Φ‖² and |𝒜Φ|² channels".into()));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut functional = Vec::with_capacity(traj.times.len());
    let mut sup = 0.0f64;
    let mut int = 0.0;
    for i in 0..traj.times.len() {
        sup = sup.max(traj.v2[i]);
        if i > 0 {
            int += 0.5 * (traj.times[i] - traj.times[i - 1]) * (traj.a2[i - 1] + traj.a2[i]);
        }
        functional.push(sup + int);
    }
    let tau = sorted
        .iter()
        .map(|&n| {
            traj.times
                .iter()
                .zip(&functional)
                .find(|(_, &f)| f > n)
                .map(|(&t, _)| t)
        })
        .collect();
    let bound = (m + traj.v2[0].sqrt()).powi(2);
    let reached_horizon = traj.final_time() >= horizon * (1.0 - 1e-12);
    let member = reached_horizon
        && traj
            .times
            .iter()
            .zip(&functional)
            .filter(|(&t, _)| t <= horizon * (1.0 + 1e-12))
            .all(|(_, &f)| f <= bound);
    Ok(StoppingTracker {
        times: traj.times.clone(),
        functional,
        thresholds: sorted,
        tau,
        m,
        horizon,
        member,
    })
}

/// First time the functional exceeds `cap`, or the last finite time of a
/// diverged run.
pub fn blowup_flag(traj: &Trajectory, cap: f64) -> Option<f64> {
    let crossed = traj
        .times
        .iter()
        .zip(&traj.functional)
        .find(|(_, &f)| f > cap)
        .map(|(&t, _)| t);
    match (crossed, traj.outcome) {
        (Some(t), _) => Some(t),
        (None, Outcome::Diverged { last_finite_time }) => Some(last_finite_time),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{random_state, ModelKind, ModelSpec};
    use crate::noise::{refine_path, sample_path, sample_replicate_path, NoiseDirection};
    use crate::spectral::{ModeIndex, SpectralBasis};
    use crate::state::{wave, FieldName};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cbf(cutoff: usize, nu: f64, darcy: f64, forch: f64) -> Model {
        let mut spec = ModelSpec::new(ModelKind::Cbf, 2);
        spec.diffusivity = vec![nu];
        spec.darcy = darcy;
        spec.forchheimer = forch;
        Model::new(spec, Arc::new(SpectralBasis::new(2, cutoff).unwrap())).unwrap()
    }

    fn shear(m: &Model, k: [i32; 3], amp: f64) -> StateVector {
        let dir = if k[0] == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
        StateVector::new(vec![
            wave(m.basis(), FieldName::U, ModeIndex(k), amp, 0.3, &dir, true).unwrap()
        ])
    }

    fn full(m: &Model) -> GalerkinLevel {
        GalerkinLevel::full(m.basis())
    }

    fn no_path(dt: f64, steps: usize) -> WienerPath {
        sample_path(0, dt, steps, 0).unwrap()
    }

    #[test]
    fn exponential_scheme_is_exact_on_heat_decay() {
        let m = cbf(4, 0.7, 0.0, 0.0);
        let phi0 = shear(&m, [0, 2, 0], 1.3);
        let lam = 0.7 * 4.0;
        for dt in [0.5, 0.1, 0.013] {
            let horizon = dt * 20.0;
            let cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, dt, horizon, full(&m));
            let traj = integrate(&m, &NoiseSpec::none(), &phi0, &cfg, &no_path(dt, 20)).unwrap();
            let h0 = traj.h2[0].sqrt();
            for (t, h) in traj.times.iter().zip(&traj.h2) {
                let want = (-lam * t).exp() * h0;
                assert!((h.sqrt() - want).abs() <= 1e-13 * h0, "dt {dt} t {t}");
            }
        }
    }

    #[test]
    fn semi_implicit_resolvent() {
        let m = cbf(3, 1.5, 0.0, 0.0);
        let phi = shear(&m, [1, 0, 0], 2.0);
        let dt = 0.2;
        let next = step(Scheme::SemiImplicit, &m, &NoiseSpec::none(), &phi, dt, &[], full(&m)).unwrap();
        let want = phi.scaled(1.0 / (1.0 + 1.5 * dt));
        assert!(next.sub(&want).norm_sq().sqrt() < 1e-15);
    }

    #[test]
    fn zero_is_an_equilibrium_of_pure_multiplicative_noise() {
        let m = cbf(3, 1.0, 0.5, 0.5);
        let zero = m.zero_state();
        let ns = NoiseSpec::Affine {
            directions: vec![
                NoiseDirection {
                    sigma: 1.0,
                    gamma: 2.0,
                    shape: zero.clone()
                };
                3
            ],
            mask: vec![FieldName::U],
        };
        let path = sample_path(1, 0.01, 100, 3).unwrap();
        let cfg = IntegratorConfig::new(Scheme::EulerMaruyama, 0.01, 1.0, full(&m));
        let traj = integrate(&m, &ns, &zero, &cfg, &path).unwrap();
        assert_eq!(traj.final_state, zero);
        assert!(traj.h2.iter().all(|&h| h == 0.0));
    }

    fn energy_residual(m: &Model, phi: &StateVector, dt: f64) -> f64 {
        let next = step(Scheme::ExpEulerMaruyama, m, &NoiseSpec::none(), phi, dt, &[], full(m)).unwrap();
        let v2 = m.inner(&m.apply_a(phi).unwrap(), phi, 0.0).unwrap();
        let rr = m.inner(&m.apply_r(phi).unwrap(), phi, 0.0).unwrap();
        next.norm_sq() - phi.norm_sq() + 2.0 * dt * (v2 + rr)
    }

    #[test]
    fn discrete_energy_law_is_second_order_per_step() {
        let m = cbf(4, 0.5, 0.3, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random_state(&m, 1.0, None, &mut rng);
        let r1 = energy_residual(&m, &phi, 1e-3);
        let r2 = energy_residual(&m, &phi, 5e-4);
        let ratio = r1 / r2;
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn one_step_consistency_is_first_order() {
        let m = cbf(4, 0.5, 0.3, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = random_state(&m, 1.0, None, &mut rng);
        let mut drift = m.apply_a(&phi).unwrap();
        drift.axpy(1.0, &m.apply_b(&phi, &phi).unwrap());
        drift.axpy(1.0, &m.apply_r(&phi).unwrap());
        for scheme in [Scheme::EulerMaruyama, Scheme::ExpEulerMaruyama, Scheme::SemiImplicit] {
            let err = |dt: f64| {
                let next = step(scheme, &m, &NoiseSpec::none(), &phi, dt, &[], full(&m)).unwrap();
                let mut fd = next.sub(&phi);
                fd.scale(1.0 / dt);
                fd.add(&drift).norm_sq().sqrt()
            };
            let (e1, e2) = (err(1e-3), err(5e-4));
            if scheme == Scheme::EulerMaruyama {
                assert!(e1 < 1e-10, "{e1}");
            } else {
                let order = (e1 / e2).log2();
                assert!((0.9..1.1).contains(&order), "{scheme:?} {order}");
            }
        }
    }

    #[test]
    fn schemes_agree_to_second_order() {
        let m = cbf(4, 0.5, 0.3, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = random_state(&m, 1.0, None, &mut rng);
        let gap = |dt: f64, a: Scheme, b: Scheme| {
            let x = step(a, &m, &NoiseSpec::none(), &phi, dt, &[], full(&m)).unwrap();
            let y = step(b, &m, &NoiseSpec::none(), &phi, dt, &[], full(&m)).unwrap();
            x.sub(&y).norm_sq().sqrt()
        };
        for (a, b) in [
            (Scheme::EulerMaruyama, Scheme::ExpEulerMaruyama),
            (Scheme::EulerMaruyama, Scheme::SemiImplicit),
            (Scheme::ExpEulerMaruyama, Scheme::SemiImplicit),
        ] {
            let ratio = gap(2e-3, a, b) / gap(1e-3, a, b);
            assert!((3.6..4.4).contains(&ratio), "{a:?} {b:?} {ratio}");
        }
    }

    #[test]
    fn galerkin_levels_agree_on_invariant_subspace() {
        let m = cbf(4, 1.0, 0.0, 0.0);
        let phi0 = shear(&m, [1, 0, 0], 1.0);
        let small = m.basis().level_for_radius(1.5).unwrap();
        let path = sample_path(2, 0.05, 20, 0).unwrap();
        let run_at = |level| {
            let cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, 0.05, 1.0, level);
            integrate(&m, &NoiseSpec::none(), &phi0, &cfg, &path).unwrap()
        };
        let a = run_at(small);
        let b = run_at(full(&m));
        for (x, y) in a.h2.iter().zip(&b.h2) {
            assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
        }
        assert!(a.final_state.sub(&b.final_state).norm_sq().sqrt() < 1e-14);
    }

    #[test]
    fn initial_state_is_projected() {
        let m = cbf(3, 1.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi0 = random_state(&m, 0.0, None, &mut rng);
        let level = m.basis().level_for_radius(1.0).unwrap();
        let cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, 0.1, 0.1, level);
        let traj = integrate(&m, &NoiseSpec::none(), &phi0, &cfg, &no_path(0.1, 1)).unwrap();
        let mut p = phi0.clone();
        p.project(level);
        assert_eq!(traj.h2[0], p.norm_sq());
    }

    #[test]
    fn ito_isometry_for_additive_linear_mode() {
        let m = cbf(1, 1.0, 0.0, 0.0);
        let sigma = 0.8;
        let ns = NoiseSpec::affine(&m, &[sigma], &[0.0], &[]).unwrap();
        let NoiseSpec::Affine { directions, .. } = &ns else {
            unreachable!()
        };
        let psi = directions[0].shape.clone();
        let (dt, horizon, n) = (0.002, 0.5, 10_000);
        let cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, dt, horizon, full(&m));
        let zero = m.zero_state();
        let xs: Vec<f64> = (0..n)
            .map(|r| {
                let path = sample_replicate_path(77, r, dt, 250, 1).unwrap();
                let traj = integrate(&m, &ns, &zero, &cfg, &path).unwrap();
                m.inner(&traj.final_state, &psi, 0.0).unwrap()
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let lam = 1.0;
        let want = sigma * sigma * (1.0 - (-2.0 * lam * horizon).exp()) / (2.0 * lam);
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let se = ((m4 - var * var) / n as f64).sqrt();
        assert!((var - want).abs() < 3.0 * se, "{var} vs {want} (se {se})");
    }

    #[test]
    fn divergence_is_reported_with_last_finite_time() {
        let m = cbf(2, 1.0, 0.0, 1.0);
        let phi0 = shear(&m, [1, 0, 0], 1e3);
        let cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, 0.1, 5.0, full(&m));
        let path = no_path(0.1, 50);
        let err = integrate(&m, &NoiseSpec::none(), &phi0, &cfg, &path).unwrap_err();
        let Error::Divergence { last_finite_time } = err else {
            panic!("{err:?}")
        };
        let traj = run(&m, &NoiseSpec::none(), &phi0, &cfg, &path).unwrap();
        assert_eq!(traj.outcome, Outcome::Diverged { last_finite_time });
        assert_eq!(traj.final_time(), last_finite_time);
        assert_eq!(blowup_flag(&traj, f64::INFINITY), Some(last_finite_time));
    }

    #[test]
    fn euler_guard_and_config_errors() {
        let m = cbf(4, 1.0, 0.0, 0.0);
        let lmax = m.lambda_max(full(&m));
        let phi = m.zero_state();
        let bad = IntegratorConfig::new(Scheme::EulerMaruyama, 2.0 / lmax, 1.0, full(&m));
        assert!(matches!(
            run(&m, &NoiseSpec::none(), &phi, &bad, &no_path(1.0, 1)),
            Err(Error::Config(_))
        ));
        let odd = IntegratorConfig::new(Scheme::ExpEulerMaruyama, 0.3, 1.0, full(&m));
        assert!(odd.steps().is_err());
        let split = GalerkinLevel::new(1, m.basis()).unwrap();
        let cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, 0.5, 1.0, split);
        assert!(matches!(cfg.validate(&m), Err(Error::Config(_))));
        let ns = NoiseSpec::affine(&m, &[1.0], &[0.0], &[]).unwrap();
        let ok = IntegratorConfig::new(Scheme::ExpEulerMaruyama, 0.1, 1.0, full(&m));
        let short = sample_path(1, 0.1, 5, 1).unwrap();
        assert!(matches!(run(&m, &ns, &phi, &ok, &short), Err(Error::Argument(_))));
    }

    fn noisy_run(cap: Option<f64>) -> Trajectory {
        let m = cbf(3, 0.2, 0.0, 0.0);
        let ns = NoiseSpec::affine(&m, &[1.0, 1.0], &[0.5, 0.5], &[]).unwrap();
        let mut cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, 0.01, 2.0, full(&m));
        cfg.cap = cap;
        cfg.save_every = 50;
        let path = sample_path(12, 0.01, 200, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi0 = random_state(&m, 1.0, None, &mut rng);
        run(&m, &ns, &phi0, &cfg, &path).unwrap()
    }

    #[test]
    fn stopping_functional_and_first_passage() {
        let traj = noisy_run(None);
        assert_eq!(traj.states.len(), 5);
        assert_eq!(traj.times.len(), 201);
        // independent recomputation of the functional
        let sup = traj.v2.iter().copied().fold(0.0, f64::max);
        let int: f64 = traj.a2.windows(2).map(|w| 0.005 * (w[0] + w[1])).sum();
        let f_end = *traj.functional.last().unwrap();
        assert!((f_end - (sup + int)).abs() <= 1e-12 * f_end);
        assert!(traj.functional.windows(2).all(|w| w[1] >= w[0]));

        let f0 = traj.functional[0];
        let thresholds = [f0 * 1.5, f0 * 1.1, f0 * 3.0];
        let st = track_stopping(&traj, &thresholds, 1.0, 2.0).unwrap();
        assert_eq!(st.functional, traj.functional);
        let taus: Vec<f64> = st.tau.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
        assert!(taus.windows(2).all(|w| w[0] <= w[1]));

        let high = track_stopping(&traj, &[f_end * 10.0], 1e6, 2.0).unwrap();
        assert_eq!(high.tau, vec![None]);
        assert!(high.member);
        let low = track_stopping(&traj, &[], 0.0, 2.0).unwrap();
        assert!(!low.member || f_end <= traj.v2[0]);
    }

    #[test]
    fn cap_freezes_and_flags_monotonically() {
        let free = noisy_run(None);
        let f = &free.functional;
        let cap = 0.5 * (f[0] + f[f.len() - 1]);
        let capped = noisy_run(Some(cap));
        let Outcome::Capped { time } = capped.outcome else {
            panic!("{:?}", capped.outcome)
        };
        assert_eq!(blowup_flag(&free, cap), Some(time));
        assert_eq!(capped.final_time(), time);
        assert_eq!(blowup_flag(&free, 1e-300), Some(0.0));
        let mut last = 0.0;
        for c in [f[0] * 1.01, f[0] * 1.1, cap, f[f.len() - 1] * 0.999] {
            let t = blowup_flag(&free, c).unwrap();
            assert!(t >= last);
            last = t;
        }
        assert_eq!(blowup_flag(&free, f64::INFINITY), None);
    }

    #[test]
    fn runs_are_deterministic() {
        assert_eq!(noisy_run(None), noisy_run(None));
    }

    #[test]
    fn refined_paths_drive_finer_steps() {
        let m = cbf(3, 0.5, 0.0, 0.0);
        let ns = NoiseSpec::affine(&m, &[0.5], &[0.0], &[]).unwrap();
        let coarse = sample_path(3, 0.1, 10, 1).unwrap();
        let fine = refine_path(&coarse);
        let cfg = IntegratorConfig::new(Scheme::ExpEulerMaruyama, 0.05, 1.0, full(&m));
        let traj = integrate(&m, &ns, &m.zero_state(), &cfg, &fine).unwrap();
        assert_eq!(traj.times.len(), 21);
    }
}
