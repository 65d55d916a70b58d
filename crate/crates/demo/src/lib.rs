//! Browser bindings: a live 2D simulation, the structural condition checks
//! and a strong-order study, all driven by the same TOML configs as the CLI.

use spdegal::analysis::{check_conditions, strong_order_study};
use spdegal::config::{parse_config, Prepared, RunConfig, Strictness};
use spdegal::noise::sample_replicate_path;
use spdegal::sde::step;
use spdegal::state::{differential, DiffKind, StateVector};
use spdegal::C64;
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn load(text: &str) -> Res<(RunConfig, Prepared)> {
    let cfg = parse_config(text, Strictness::Lenient).map_err(|e| e.to_string())?;
    let prep = cfg.prepare().map_err(|e| e.to_string())?;
    Ok((cfg, prep))
}

#[wasm_bindgen]
pub struct Simulation {
    prep: Prepared,
    phi: StateVector,
    seed: u64,
    chunk: u64,
    time: f64,
}

impl Simulation {
    fn build(config: &str) -> Res<Simulation> {
        let (cfg, prep) = load(config)?;
        if prep.model.spec().dim != 2 {
            return Err("the live view needs model.dim = 2".into());
        }
        let mut phi = prep.phi0.clone();
        phi.project(prep.cfg.level);
        Ok(Simulation {
            phi,
            prep,
            seed: cfg.seed,
            chunk: 0,
            time: 0.0,
        })
    }

    fn step_many(&mut self, steps: usize) -> Res<()> {
        let Prepared { model, noise, cfg, .. } = &self.prep;
        let path = sample_replicate_path(self.seed, self.chunk, cfg.dt, steps, noise.k()).map_err(|e| e.to_string())?;
        self.chunk += 1;
        for n in 0..steps {
            let next =
                step(cfg.scheme, model, noise, &self.phi, cfg.dt, &path.at(n), cfg.level).map_err(|e| e.to_string())?;
            if !next.is_finite() {
                return Err(format!("non-finite state after t = {}", self.time));
            }
            self.phi = next;
            self.time += cfg.dt;
        }
        Ok(())
    }

    fn field_values(&self) -> Res<Vec<f64>> {
        let model = &self.prep.model;
        let first = &self.phi.fields[0];
        let scalar = if first.is_scalar() {
            first.clone()
        } else {
            differential(model.basis(), first, DiffKind::Curl).map_err(|e| e.to_string())?
        };
        let coeffs: &[C64] = &scalar.components[0];
        model.grid().to_physical(coeffs).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl Simulation {
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str) -> Result<Simulation, JsError> {
        Simulation::build(config).map_err(js)
    }

    /// Advances `steps` steps; each call draws a fresh Wiener chunk.
    pub fn advance(&mut self, steps: usize) -> Result<(), JsError> {
        self.step_many(steps).map_err(js)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// `|Φ|²`.
    pub fn energy(&self) -> f64 {
        self.phi.norm_sq()
    }

    /// `⟨𝒜Φ, Φ⟩`.
    pub fn enstrophy(&self) -> f64 {
        self.prep.model.norm(&self.phi, 0.5).powi(2)
    }

    pub fn side(&self) -> usize {
        self.prep.model.grid().side()
    }

    /// Vorticity of the first field (or the field itself when scalar) on
    /// the collocation grid, row-major.
    pub fn picture(&self) -> Result<Vec<f64>, JsError> {
        self.field_values().map_err(js)
    }
}

fn conditions_text(config: &str, samples: usize) -> Res<String> {
    let (cfg, prep) = load(config)?;
    let report = check_conditions(&prep.model, &prep.noise, samples, cfg.seed).map_err(|e| e.to_string())?;
    Ok(report.to_text())
}

fn order_curve(config: &str, refinements: u32, paths: usize) -> Res<Vec<f64>> {
    let (cfg, prep) = load(config)?;
    let r = strong_order_study(
        &prep.model,
        &prep.noise,
        &prep.phi0,
        &prep.cfg,
        refinements,
        paths,
        cfg.seed,
    )
    .map_err(|e| e.to_string())?;
    let mut out = vec![r.order];
    for (dt, e) in r.dts.iter().zip(&r.errors) {
        out.extend([*dt, *e]);
    }
    Ok(out)
}

/// Runs every structural check on the configured model and noise.
#[wasm_bindgen]
pub fn conditions(config: &str, samples: usize) -> Result<String, JsError> {
    conditions_text(config, samples).map_err(js)
}

/// Strong-order study; returns `[order, dt₀, err₀, dt₁, err₁, ...]`.
#[wasm_bindgen]
pub fn strong_order(config: &str, refinements: u32, paths: usize) -> Result<Vec<f64>, JsError> {
    order_curve(config, refinements, paths).map_err(js)
}
