//! Run configuration: a TOML document with a fixed set of sections and keys.
//!
//! ```toml
//! command = "simulate"   # simulate | verify | converge | moments | stability | order | globality
//! seed = 1
//!
//! [model]
//! kind = "cbf"           # cbf | mhd | boussinesq | dynamo | micropolar | tropical
//! dim = 2
//! cutoff = 8
//! diffusivity = { u = 0.1 }
//! forchheimer = 1.0
//!
//! [initial]
//! kind = "random"        # zero | waves | random | snapshot
//! radius = 2.0
//!
//! [noise]
//! sigma = [0.2]
//! gamma = [0.5]
//!
//! [integrator]
//! scheme = "exp_euler_maruyama"
//! dt = 0.01
//! horizon = 1.0
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Every key and its default is listed in the README. Parsing collects all
//! semantic errors, each prefixed with its key path.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::models::{random_state, Model, ModelKind, ModelSpec, Wave};
use crate::noise::NoiseSpec;
use crate::sde::{IntegratorConfig, Scheme};
use crate::spectral::{GalerkinLevel, ModeIndex, SpectralBasis};
use crate::state::{wave, FieldName, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Verify,
    Converge,
    Moments,
    Stability,
    Order,
    Globality,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Verify,
        Command::Converge,
        Command::Moments,
        Command::Stability,
        Command::Order,
        Command::Globality,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Converge => "converge",
            Command::Moments => "moments",
            Command::Stability => "stability",
            Command::Order => "order",
            Command::Globality => "globality",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Keys accepted in `[study]`.
    fn study_keys(&self) -> &'static [&'static str] {
        match self {
            Command::Simulate => &["thresholds", "m"],
            Command::Verify => &["samples"],
            Command::Converge => &["radii"],
            Command::Moments => &["p", "probability_m", "probability_s"],
            Command::Stability => &["deltas"],
            Command::Order => &["refinements", "paths"],
            Command::Globality => &["cap"],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strictness {
    Strict,
    Lenient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveInit {
    pub field: FieldName,
    pub k: [i32; 3],
    pub amplitude: f64,
    pub phase: f64,
    pub direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialKind {
    Zero,
    Waves(Vec<WaveInit>),
    /// Random smooth state band-limited to `|k| ≤ radius`, optionally
    /// rescaled to `|Φ₀| = norm`.
    Random {
        radius: f64,
        decay: f64,
        seed: u64,
        norm: Option<f64>,
    },
    Snapshot(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialConfig {
    pub kind: InitialKind,
    /// Multiplies the initial state after construction.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct NoiseConfig {
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Fields carrying noise; empty means all.
    pub fields: Vec<FieldName>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LevelChoice {
    Full,
    Modes(usize),
    Radius(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorBlock {
    pub scheme: Scheme,
    pub dt: f64,
    pub horizon: f64,
    pub level: LevelChoice,
    pub save_every: usize,
    pub cap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub thresholds: Vec<f64>,
    pub m: f64,
    pub samples: usize,
    pub radii: Vec<f64>,
    pub p: u32,
    pub probability_m: Option<f64>,
    pub probability_s: Vec<f64>,
    pub deltas: Vec<f64>,
    pub refinements: u32,
    pub paths: usize,
    pub cap: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            thresholds: Vec::new(),
            m: 2.0,
            samples: 1000,
            radii: vec![2.0, 4.0, 8.0, 16.0],
            p: 4,
            probability_m: None,
            probability_s: vec![0.05, 0.1, 0.2, 0.4],
            deltas: vec![1e-2, 5e-3, 2.5e-3],
            refinements: 7,
            paths: 64,
            cap: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write the final state (and strided states) as snapshots.
    pub snapshots: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub model: ModelSpec,
    pub cutoff: usize,
    pub initial: InitialConfig,
    pub noise: NoiseConfig,
    pub integrator: IntegratorBlock,
    pub replicates: usize,
    pub study: StudyConfig,
    pub output: OutputConfig,
    /// Unknown keys tolerated in lenient mode.
    pub warnings: Vec<String>,
}

/// Model, noise, initial state and integrator built from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: Model,
    pub noise: NoiseSpec,
    pub phi0: StateVector,
    pub cfg: IntegratorConfig,
}

const TOP_KEYS: &[&str] = &[
    "command",
    "seed",
    "model",
    "initial",
    "noise",
    "integrator",
    "ensemble",
    "study",
    "output",
];
const MODEL_KEYS: &[&str] = &[
    "kind",
    "dim",
    "cutoff",
    "diffusivity",
    "darcy",
    "forchheimer",
    "exponent",
    "coriolis",
    "chi",
    "elastic",
    "buoyancy",
    "background",
];
const WAVE_KEYS: &[&str] = &["k", "amplitude", "phase"];
const INITIAL_KEYS: &[&str] = &["kind", "scale", "waves", "radius", "decay", "seed", "norm", "path"];
const INITIAL_WAVE_KEYS: &[&str] = &["field", "k", "amplitude", "phase", "direction"];
const NOISE_KEYS: &[&str] = &["sigma", "gamma", "fields"];
const INTEGRATOR_KEYS: &[&str] = &["scheme", "dt", "horizon", "level", "level_radius", "save_every", "cap"];
const ENSEMBLE_KEYS: &[&str] = &["replicates"];
const OUTPUT_KEYS: &[&str] = &["dir", "snapshots"];

/// Every key path the grammar accepts, for documentation and fuzzing.
pub fn known_keys() -> Vec<String> {
    let mut out: Vec<String> = TOP_KEYS.iter().map(|k| k.to_string()).collect();
    for (section, keys) in [
        ("model", MODEL_KEYS),
        ("initial", INITIAL_KEYS),
        ("noise", NOISE_KEYS),
        ("integrator", INTEGRATOR_KEYS),
        ("ensemble", ENSEMBLE_KEYS),
        ("output", OUTPUT_KEYS),
    ] {
        out.extend(keys.iter().map(|k| format!("{section}.{k}")));
    }
    let study: BTreeSet<&str> = Command::ALL
        .iter()
        .flat_map(|c| c.study_keys().iter().copied())
        .collect();
    out.extend(study.iter().map(|k| format!("study.{k}")));
    out
}

struct Ctx {
    errors: Vec<String>,
    warnings: Vec<String>,
    strictness: Strictness,
}

impl Ctx {
    fn err(&mut self, path: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    fn unknown(&mut self, table: &Table, prefix: &str, allowed: &[&str], hint: Option<&str>) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                let path = join(prefix, key);
                let msg = match hint {
                    Some(h) => format!("{path}: unknown key ({h})"),
                    None => format!("{path}: unknown key"),
                };
                match self.strictness {
                    Strictness::Strict => self.errors.push(msg),
                    Strictness::Lenient => self.warnings.push(msg),
                }
            }
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn type_name(v: &Value) -> &'static str {
    v.type_str()
}

fn get_f64(ctx: &mut Ctx, t: &Table, prefix: &str, key: &str, default: f64) -> f64 {
    match t.get(key) {
        None => default,
        Some(Value::Float(x)) => *x,
        Some(Value::Integer(i)) => *i as f64,
        Some(v) => {
            ctx.err(&join(prefix, key), format!("expected a number, found {}", type_name(v)));
            default
        }
    }
}

fn get_opt_f64(ctx: &mut Ctx, t: &Table, prefix: &str, key: &str) -> Option<f64> {
    t.contains_key(key).then(|| get_f64(ctx, t, prefix, key, f64::NAN))
}

fn get_uint(ctx: &mut Ctx, t: &Table, prefix: &str, key: &str, default: u64) -> u64 {
    match t.get(key) {
        None => default,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(Value::Integer(i)) => {
            ctx.err(&join(prefix, key), format!("must be nonnegative, got {i}"));
            default
        }
        Some(v) => {
            ctx.err(
                &join(prefix, key),
                format!("expected an integer, found {}", type_name(v)),
            );
            default
        }
    }
}

fn get_bool(ctx: &mut Ctx, t: &Table, prefix: &str, key: &str, default: bool) -> bool {
    match t.get(key) {
        None => default,
        Some(Value::Boolean(b)) => *b,
        Some(v) => {
            ctx.err(
                &join(prefix, key),
                format!("expected a boolean, found {}", type_name(v)),
            );
            default
        }
    }
}

fn get_str<'a>(ctx: &mut Ctx, t: &'a Table, prefix: &str, key: &str) -> Option<&'a str> {
    match t.get(key) {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(v) => {
            ctx.err(&join(prefix, key), format!("expected a string, found {}", type_name(v)));
            None
        }
    }
}

fn get_array<'a>(ctx: &mut Ctx, t: &'a Table, prefix: &str, key: &str) -> Option<&'a Vec<Value>> {
    match t.get(key) {
        None => None,
        Some(Value::Array(a)) => Some(a),
        Some(v) => {
            ctx.err(&join(prefix, key), format!("expected an array, found {}", type_name(v)));
            None
        }
    }
}

fn get_f64_list(ctx: &mut Ctx, t: &Table, prefix: &str, key: &str) -> Option<Vec<f64>> {
    let arr = get_array(ctx, t, prefix, key)?;
    let mut out = Vec::with_capacity(arr.len());
    for (i, v) in arr.iter().enumerate() {
        match v {
            Value::Float(x) => out.push(*x),
            Value::Integer(x) => out.push(*x as f64),
            other => {
                ctx.err(
                    &format!("{}[{i}]", join(prefix, key)),
                    format!("expected a number, found {}", type_name(other)),
                );
                return None;
            }
        }
    }
    Some(out)
}

fn get_k(ctx: &mut Ctx, t: &Table, prefix: &str, dim: usize) -> Option<[i32; 3]> {
    let path = join(prefix, "k");
    let Some(arr) = get_array(ctx, t, prefix, "k") else {
        ctx.err(&path, "missing wavevector");
        return None;
    };
    if arr.len() != dim {
        ctx.err(&path, format!("expected {dim} integers, got {}", arr.len()));
        return None;
    }
    let mut k = [0i32; 3];
    for (slot, v) in k.iter_mut().zip(arr) {
        match v {
            Value::Integer(i) if i32::try_from(*i).is_ok() => *slot = *i as i32,
            _ => {
                ctx.err(&path, "entries must be integers");
                return None;
            }
        }
    }
    Some(k)
}

fn get_section<'a>(ctx: &mut Ctx, t: &'a Table, key: &str) -> Option<&'a Table> {
    match t.get(key) {
        None => None,
        Some(Value::Table(s)) => Some(s),
        Some(v) => {
            ctx.err(key, format!("expected a table, found {}", type_name(v)));
            None
        }
    }
}

fn get_table_array<'a>(ctx: &mut Ctx, t: &'a Table, prefix: &str, key: &str) -> Vec<(String, &'a Table)> {
    let Some(arr) = get_array(ctx, t, prefix, key) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, v) in arr.iter().enumerate() {
        let path = format!("{}[{i}]", join(prefix, key));
        match v {
            Value::Table(tt) => out.push((path, tt)),
            other => ctx.err(&path, format!("expected a table, found {}", type_name(other))),
        }
    }
    out
}

/// Converts a byte offset into 1-based line and column (in characters).
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

pub fn parse_config(text: &str, strictness: Strictness) -> Result<RunConfig> {
    let root: Table = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        Error::Syntax {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    let mut ctx = Ctx {
        errors: Vec::new(),
        warnings: Vec::new(),
        strictness,
    };
    ctx.unknown(&root, "", TOP_KEYS, None);

    let command = match get_str(&mut ctx, &root, "", "command") {
        Some(s) => Command::parse(s).or_else(|| {
            ctx.err(
                "command",
                format!(
                    "unknown command {s:?}; expected one of {}",
                    Command::ALL.map(|c| c.as_str()).join(", ")
                ),
            );
            None
        }),
        None => {
            if !root.contains_key("command") {
                ctx.err("command", "missing");
            }
            None
        }
    };
    let seed = get_uint(&mut ctx, &root, "", "seed", 1);

    let empty = Table::new();
    let model_t = get_section(&mut ctx, &root, "model").unwrap_or(&empty);
    let (model, cutoff) = parse_model(&mut ctx, model_t);
    let initial_t = get_section(&mut ctx, &root, "initial").unwrap_or(&empty);
    let initial = parse_initial(&mut ctx, initial_t, model.dim);
    let noise_t = get_section(&mut ctx, &root, "noise").unwrap_or(&empty);
    let noise = parse_noise(&mut ctx, noise_t);
    let integ_t = get_section(&mut ctx, &root, "integrator").unwrap_or(&empty);
    let integrator = parse_integrator(&mut ctx, integ_t);

    let ens_t = get_section(&mut ctx, &root, "ensemble").unwrap_or(&empty);
    ctx.unknown(ens_t, "ensemble", ENSEMBLE_KEYS, None);
    let replicates = get_uint(&mut ctx, ens_t, "ensemble", "replicates", 100) as usize;
    if replicates == 0 {
        ctx.err("ensemble.replicates", "must be at least 1");
    }

    let study_t = get_section(&mut ctx, &root, "study").unwrap_or(&empty);
    let study = parse_study(&mut ctx, study_t, command);

    let out_t = get_section(&mut ctx, &root, "output").unwrap_or(&empty);
    ctx.unknown(out_t, "output", OUTPUT_KEYS, None);
    let output = OutputConfig {
        dir: PathBuf::from(get_str(&mut ctx, out_t, "output", "dir").unwrap_or("out")),
        snapshots: get_bool(&mut ctx, out_t, "output", "snapshots", true),
    };

    let Some(command) = command else {
        return Err(Error::Validation(ctx.errors));
    };
    let cfg = RunConfig {
        command,
        seed,
        model,
        cutoff,
        initial,
        noise,
        integrator,
        replicates,
        study,
        output,
        warnings: Vec::new(),
    };
    if ctx.errors.is_empty() {
        // semantic checks that need the assembled model
        if let Err(e) = cfg.prepare_with(None) {
            match e {
                Error::Validation(v) => ctx.errors.extend(v),
                other => ctx.errors.push(other.to_string()),
            }
        }
    }
    if !ctx.errors.is_empty() {
        return Err(Error::Validation(ctx.errors));
    }
    Ok(RunConfig {
        warnings: ctx.warnings,
        ..cfg
    })
}

fn parse_model(ctx: &mut Ctx, t: &Table) -> (ModelSpec, usize) {
    ctx.unknown(t, "model", MODEL_KEYS, None);
    let kind = match get_str(ctx, t, "model", "kind") {
        Some(s) => ModelKind::parse(s).unwrap_or_else(|| {
            ctx.err(
                "model.kind",
                format!(
                    "unknown model {s:?}; expected one of {}",
                    ModelKind::ALL.map(|k| k.as_str()).join(", ")
                ),
            );
            ModelKind::Cbf
        }),
        None => {
            if !t.contains_key("kind") {
                ctx.err("model.kind", "missing");
            }
            ModelKind::Cbf
        }
    };
    let dim = get_uint(ctx, t, "model", "dim", 2) as usize;
    if dim != 2 && dim != 3 {
        ctx.err("model.dim", format!("must be 2 or 3, got {dim}"));
    }
    let dim = dim.clamp(2, 3);
    let cutoff = get_uint(ctx, t, "model", "cutoff", 8) as usize;
    if cutoff == 0 {
        ctx.err("model.cutoff", "must be at least 1");
    }
    let mut spec = ModelSpec::new(kind, dim);
    let roster = spec.roster();
    if let Some(v) = t.get("diffusivity") {
        match v {
            Value::Table(d) => {
                let names: Vec<&str> = roster.iter().map(|s| s.name.as_str()).collect();
                ctx.unknown(d, "model.diffusivity", &names, Some("not a field of this model"));
                for (slot, nu) in roster.iter().zip(spec.diffusivity.iter_mut()) {
                    *nu = get_f64(ctx, d, "model.diffusivity", slot.name.as_str(), *nu);
                }
            }
            other => ctx.err(
                "model.diffusivity",
                format!("expected a table keyed by field name, found {}", type_name(other)),
            ),
        }
    }
    spec.darcy = get_f64(ctx, t, "model", "darcy", spec.darcy);
    spec.forchheimer = get_f64(ctx, t, "model", "forchheimer", spec.forchheimer);
    spec.exponent = get_f64(ctx, t, "model", "exponent", spec.exponent);
    spec.coriolis = get_f64(ctx, t, "model", "coriolis", spec.coriolis);
    spec.chi = get_f64(ctx, t, "model", "chi", spec.chi);
    spec.elastic = get_f64(ctx, t, "model", "elastic", spec.elastic);
    if let Some(e) = get_f64_list(ctx, t, "model", "buoyancy") {
        spec.buoyancy = e;
    }
    if t.contains_key("background") {
        let mut waves = Vec::new();
        for (path, w) in get_table_array(ctx, t, "model", "background") {
            ctx.unknown(w, &path, WAVE_KEYS, None);
            if let Some(k) = get_k(ctx, w, &path, dim) {
                waves.push(Wave {
                    k,
                    amplitude: get_f64(ctx, w, &path, "amplitude", 1.0),
                    phase: get_f64(ctx, w, &path, "phase", 0.0),
                });
            }
        }
        spec.background = waves;
    }
    if (2..=3).contains(&dim) {
        ctx.errors.extend(spec.validate());
    }
    (spec, cutoff)
}

fn parse_initial(ctx: &mut Ctx, t: &Table, dim: usize) -> InitialConfig {
    ctx.unknown(t, "initial", INITIAL_KEYS, None);
    let scale = get_f64(ctx, t, "initial", "scale", 1.0);
    if !scale.is_finite() {
        ctx.err("initial.scale", "must be finite");
    }
    let kind_s = get_str(ctx, t, "initial", "kind").unwrap_or("random");
    let used: &[&str] = match kind_s {
        "zero" => &["kind", "scale"],
        "waves" => &["kind", "scale", "waves"],
        "random" => &["kind", "scale", "radius", "decay", "seed", "norm"],
        "snapshot" => &["kind", "scale", "path"],
        _ => &[],
    };
    for key in t.keys() {
        if INITIAL_KEYS.contains(&key.as_str()) && !used.is_empty() && !used.contains(&key.as_str()) {
            ctx.err(
                &format!("initial.{key}"),
                format!("not used by initial kind {kind_s:?}"),
            );
        }
    }
    let kind = match kind_s {
        "zero" => InitialKind::Zero,
        "waves" => {
            let mut waves = Vec::new();
            for (path, w) in get_table_array(ctx, t, "initial", "waves") {
                ctx.unknown(w, &path, INITIAL_WAVE_KEYS, None);
                let f = get_str(ctx, w, &path, "field").unwrap_or("u");
                let field = FieldName::parse(f).unwrap_or_else(|| {
                    ctx.err(&join(&path, "field"), format!("unknown field {f:?}"));
                    FieldName::U
                });
                let k = get_k(ctx, w, &path, dim);
                let direction = get_f64_list(ctx, w, &path, "direction").unwrap_or_else(|| {
                    if field == FieldName::Theta || (field == FieldName::W && dim == 2) {
                        vec![1.0]
                    } else {
                        let mut d = vec![0.0; dim];
                        d[0] = 1.0;
                        d
                    }
                });
                if let Some(k) = k {
                    waves.push(WaveInit {
                        field,
                        k,
                        amplitude: get_f64(ctx, w, &path, "amplitude", 1.0),
                        phase: get_f64(ctx, w, &path, "phase", 0.0),
                        direction,
                    });
                }
            }
            if waves.is_empty() && ctx.errors.is_empty() {
                ctx.err("initial.waves", "at least one wave is required");
            }
            InitialKind::Waves(waves)
        }
        "random" => {
            let radius = get_f64(ctx, t, "initial", "radius", 2.0);
            if !(radius >= 1.0 && radius.is_finite()) {
                ctx.err("initial.radius", format!("must be at least 1, got {radius}"));
            }
            let decay = get_f64(ctx, t, "initial", "decay", 1.0);
            if !(decay >= 0.0 && decay.is_finite()) {
                ctx.err("initial.decay", format!("must be nonnegative, got {decay}"));
            }
            let norm = get_opt_f64(ctx, t, "initial", "norm").or(Some(1.0));
            if let Some(n) = norm {
                if !(n >= 0.0 && n.is_finite()) {
                    ctx.err("initial.norm", format!("must be nonnegative, got {n}"));
                }
            }
            InitialKind::Random {
                radius,
                decay,
                seed: get_uint(ctx, t, "initial", "seed", 1),
                norm,
            }
        }
        "snapshot" => match get_str(ctx, t, "initial", "path") {
            Some(p) => InitialKind::Snapshot(PathBuf::from(p)),
            None => {
                ctx.err("initial.path", "required for kind \"snapshot\"");
                InitialKind::Zero
            }
        },
        other => {
            ctx.err(
                "initial.kind",
                format!("unknown initial kind {other:?}; expected zero, waves, random or snapshot"),
            );
            InitialKind::Zero
        }
    };
    InitialConfig { kind, scale }
}

fn parse_noise(ctx: &mut Ctx, t: &Table) -> NoiseConfig {
    ctx.unknown(t, "noise", NOISE_KEYS, None);
    let sigma = get_f64_list(ctx, t, "noise", "sigma").unwrap_or_default();
    let gamma = get_f64_list(ctx, t, "noise", "gamma").unwrap_or_else(|| vec![0.0; sigma.len()]);
    if sigma.len() != gamma.len() {
        ctx.err(
            "noise.gamma",
            format!("has {} entries but noise.sigma has {}", gamma.len(), sigma.len()),
        );
    }
    for (i, s) in sigma.iter().enumerate() {
        if !(*s > 0.0 && s.is_finite()) {
            ctx.err(&format!("noise.sigma[{i}]"), format!("must be positive, got {s}"));
        }
    }
    for (i, g) in gamma.iter().enumerate() {
        if !(*g >= 0.0 && g.is_finite()) {
            ctx.err(&format!("noise.gamma[{i}]"), format!("must be nonnegative, got {g}"));
        }
    }
    let mut fields = Vec::new();
    if let Some(arr) = get_array(ctx, t, "noise", "fields") {
        for (i, v) in arr.iter().enumerate() {
            match v.as_str().and_then(FieldName::parse) {
                Some(f) => fields.push(f),
                None => ctx.err(&format!("noise.fields[{i}]"), format!("not a field name: {v}")),
            }
        }
    }
    NoiseConfig { sigma, gamma, fields }
}

fn parse_integrator(ctx: &mut Ctx, t: &Table) -> IntegratorBlock {
    ctx.unknown(t, "integrator", INTEGRATOR_KEYS, None);
    let scheme = match get_str(ctx, t, "integrator", "scheme") {
        Some(s) => Scheme::parse(s).unwrap_or_else(|| {
            ctx.err(
                "integrator.scheme",
                format!("unknown scheme {s:?}; expected euler_maruyama, exp_euler_maruyama or semi_implicit"),
            );
            Scheme::ExpEulerMaruyama
        }),
        None => Scheme::ExpEulerMaruyama,
    };
    let level = match (t.contains_key("level"), t.contains_key("level_radius")) {
        (true, true) => {
            ctx.err("integrator.level", "give either level or level_radius, not both");
            LevelChoice::Full
        }
        (true, false) => LevelChoice::Modes(get_uint(ctx, t, "integrator", "level", 0) as usize),
        (false, true) => LevelChoice::Radius(get_f64(ctx, t, "integrator", "level_radius", 0.0)),
        (false, false) => LevelChoice::Full,
    };
    let cap = get_opt_f64(ctx, t, "integrator", "cap");
    IntegratorBlock {
        scheme,
        dt: get_f64(ctx, t, "integrator", "dt", 0.01),
        horizon: get_f64(ctx, t, "integrator", "horizon", 1.0),
        level,
        save_every: get_uint(ctx, t, "integrator", "save_every", 0) as usize,
        cap,
    }
}

fn parse_study(ctx: &mut Ctx, t: &Table, command: Option<Command>) -> StudyConfig {
    let mut s = StudyConfig::default();
    let Some(command) = command else {
        return s;
    };
    let hint = format!("not used by command {}", command.as_str());
    ctx.unknown(t, "study", command.study_keys(), Some(&hint));
    let p = "study";
    if let Some(v) = get_f64_list(ctx, t, p, "thresholds") {
        s.thresholds = v;
    }
    s.m = get_f64(ctx, t, p, "m", s.m);
    if !(s.m > 1.0) {
        ctx.err("study.m", format!("M must exceed 1, got {}", s.m));
    }
    s.samples = get_uint(ctx, t, p, "samples", s.samples as u64) as usize;
    if s.samples == 0 {
        ctx.err("study.samples", "must be at least 1");
    }
    if let Some(v) = get_f64_list(ctx, t, p, "radii") {
        s.radii = v;
    }
    if s.radii.len() < 2 || s.radii.windows(2).any(|w| w[1] <= w[0]) || s.radii.iter().any(|r| !(*r >= 1.0)) {
        ctx.err(
            "study.radii",
            "need at least two strictly ascending radii, each at least 1",
        );
    }
    s.p = get_uint(ctx, t, p, "p", s.p as u64) as u32;
    if ![4, 6, 8].contains(&s.p) {
        ctx.err("study.p", format!("must be 4, 6 or 8, got {}", s.p));
    }
    s.probability_m = get_opt_f64(ctx, t, p, "probability_m");
    if let Some(m) = s.probability_m {
        if !(m > 1.0) {
            ctx.err("study.probability_m", format!("M must exceed 1, got {m}"));
        }
    }
    if let Some(v) = get_f64_list(ctx, t, p, "probability_s") {
        s.probability_s = v;
    }
    if s.probability_s.iter().any(|x| !(*x > 0.0)) {
        ctx.err("study.probability_s", "times must be positive");
    }
    if let Some(v) = get_f64_list(ctx, t, p, "deltas") {
        s.deltas = v;
    }
    if s.deltas.is_empty() || s.deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
        ctx.err("study.deltas", "need at least one nonnegative perturbation size");
    }
    s.refinements = get_uint(ctx, t, p, "refinements", s.refinements as u64) as u32;
    if !(3..=16).contains(&s.refinements) {
        ctx.err(
            "study.refinements",
            format!("must be between 3 and 16, got {}", s.refinements),
        );
    }
    s.paths = get_uint(ctx, t, p, "paths", s.paths as u64) as usize;
    if s.paths == 0 {
        ctx.err("study.paths", "must be at least 1");
    }
    s.cap = get_f64(ctx, t, p, "cap", s.cap);
    if !(s.cap > 0.0) {
        ctx.err("study.cap", format!("must be positive, got {}", s.cap));
    }
    s
}

impl RunConfig {
    pub fn basis(&self) -> Result<SpectralBasis> {
        SpectralBasis::new(self.model.dim, self.cutoff)
    }

    fn level(&self, basis: &SpectralBasis) -> Result<GalerkinLevel> {
        match self.integrator.level {
            LevelChoice::Full => Ok(GalerkinLevel::full(basis)),
            LevelChoice::Modes(n) => {
                GalerkinLevel::new(n, basis).map_err(|e| Error::Config(format!("integrator.level: {e}")))
            }
            LevelChoice::Radius(r) => basis
                .level_for_radius(r)
                .map_err(|e| Error::Config(format!("integrator.level_radius: {e}"))),
        }
    }

    /// Builds the model, noise, initial state and integrator settings.
    pub fn prepare(&self) -> Result<Prepared> {
        self.prepare_with(Some(&|p| {
            crate::io::read_snapshot(p).map(|s| (s.kind, s.dim, s.cutoff, s.state))
        }))
    }

    #[allow(clippy::type_complexity)]
    fn prepare_with(
        &self,
        load: Option<&dyn Fn(&std::path::Path) -> Result<(ModelKind, usize, usize, StateVector)>>,
    ) -> Result<Prepared> {
        let mut errors = Vec::new();
        let basis = Arc::new(self.basis()?);
        let model = Model::new(self.model.clone(), basis.clone())?;
        let noise = NoiseSpec::affine(&model, &self.noise.sigma, &self.noise.gamma, &self.noise.fields);
        let noise = match noise {
            Ok(n) => Some(n),
            Err(e) => {
                errors.push(e.to_string().trim_start_matches("configuration error: ").to_string());
                None
            }
        };
        let phi0 = match self.initial_state(&model, load) {
            Ok(p) => Some(p),
            Err(e @ (Error::Io(_) | Error::Format(_))) => return Err(e),
            Err(e) => {
                errors.push(e.to_string().trim_start_matches("configuration error: ").to_string());
                None
            }
        };
        let cfg = match self.level(&basis) {
            Ok(level) => {
                let mut cfg = IntegratorConfig::new(
                    self.integrator.scheme,
                    self.integrator.dt,
                    self.integrator.horizon,
                    level,
                );
                cfg.save_every = self.integrator.save_every;
                cfg.cap = self.integrator.cap;
                match cfg.validate(&model) {
                    Ok(_) => Some(cfg),
                    Err(e) => {
                        errors.push(e.to_string().trim_start_matches("configuration error: ").to_string());
                        None
                    }
                }
            }
            Err(e) => {
                errors.push(e.to_string().trim_start_matches("configuration error: ").to_string());
                None
            }
        };
        if self.command == Command::Converge {
            for (i, r) in self.study.radii.iter().enumerate() {
                if let Err(e) = basis.level_for_radius(*r) {
                    errors.push(format!("study.radii[{i}]: {e}"));
                }
            }
        }
        match (noise, phi0, cfg) {
            (Some(noise), Some(phi0), Some(cfg)) if errors.is_empty() => Ok(Prepared {
                model,
                noise,
                phi0,
                cfg,
            }),
            _ => Err(Error::Validation(errors)),
        }
    }

    #[allow(clippy::type_complexity)]
    fn initial_state(
        &self,
        model: &Model,
        load: Option<&dyn Fn(&std::path::Path) -> Result<(ModelKind, usize, usize, StateVector)>>,
    ) -> Result<StateVector> {
        let mut phi = match &self.initial.kind {
            InitialKind::Zero => model.zero_state(),
            InitialKind::Waves(waves) => {
                let mut phi = model.zero_state();
                for (i, w) in waves.iter().enumerate() {
                    let path = format!("initial.waves[{i}]");
                    let slot = model.roster().iter().find(|s| s.name == w.field).ok_or_else(|| {
                        Error::Config(format!("{path}.field: {} is not a field of this model", w.field))
                    })?;
                    if w.direction.len() != slot.ncomp {
                        return Err(Error::Config(format!(
                            "{path}.direction: expected {} components, got {}",
                            slot.ncomp,
                            w.direction.len()
                        )));
                    }
                    let f = wave(
                        model.basis(),
                        w.field,
                        ModeIndex(w.k),
                        w.amplitude,
                        w.phase,
                        &w.direction,
                        slot.solenoidal,
                    )
                    .map_err(|_| Error::Config(format!("{path}.k: mode {:?} outside the cutoff", w.k)))?;
                    phi.field_mut(w.field).expect("roster field").axpy(1.0, &f);
                }
                phi
            }
            InitialKind::Random {
                radius,
                decay,
                seed,
                norm,
            } => {
                let level = model
                    .basis()
                    .level_for_radius(*radius)
                    .map_err(|e| Error::Config(format!("initial.radius: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut phi = random_state(model, *decay, Some(level), &mut rng);
                if let Some(n) = norm {
                    let h = phi.norm_sq().sqrt();
                    if h > 0.0 {
                        phi.scale(n / h);
                    }
                }
                phi
            }
            InitialKind::Snapshot(path) => match load {
                None => return Ok(model.zero_state()),
                Some(load) => {
                    let (kind, dim, cutoff, state) = load(path)?;
                    let spec = model.spec();
                    if kind != spec.kind || dim != spec.dim || cutoff != model.basis().cutoff() {
                        return Err(Error::Config(format!(
                            "initial.path: snapshot holds {} d={dim} cutoff={cutoff}, config wants {} d={} cutoff={}",
                            kind.as_str(),
                            spec.kind.as_str(),
                            spec.dim,
                            model.basis().cutoff()
                        )));
                    }
                    state
                }
            },
        };
        phi.scale(self.initial.scale);
        model.check_state(&phi)?;
        Ok(phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "command = \"simulate\"\n[model]\nkind = \"cbf\"\n";

    fn errors(text: &str) -> Vec<String> {
        match parse_config(text, Strictness::Strict) {
            Err(Error::Validation(v)) => v,
            other => panic!("expected validation errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL, Strictness::Strict).unwrap();
        assert_eq!(c.command, Command::Simulate);
        assert_eq!(c.seed, 1);
        assert_eq!((c.model.dim, c.cutoff), (2, 8));
        assert_eq!(c.model.diffusivity, vec![1.0]);
        assert_eq!(c.integrator.scheme, Scheme::ExpEulerMaruyama);
        assert_eq!((c.integrator.dt, c.integrator.horizon), (0.01, 1.0));
        assert_eq!(c.integrator.level, LevelChoice::Full);
        assert_eq!(c.replicates, 100);
        assert_eq!(c.noise, NoiseConfig::default());
        assert_eq!(c.output.dir, PathBuf::from("out"));
        assert!(matches!(c.initial.kind, InitialKind::Random { norm: Some(n), .. } if n == 1.0));
        let p = c.prepare().unwrap();
        assert!((p.phi0.norm_sq().sqrt() - 1.0).abs() < 1e-14);
        assert_eq!(p.noise.k(), 0);
    }

    #[test]
    fn exponent_out_of_range_is_rejected() {
        let e = errors(&format!("{MINIMAL}exponent = 3.5\n"));
        assert!(
            e.iter()
                .any(|m| m.starts_with("model.exponent") && m.contains("r ∈ [2,3]")),
            "{e:?}"
        );
    }

    #[test]
    fn coriolis_in_two_dimensions_is_rejected() {
        let e = errors("command = \"simulate\"\n[model]\nkind = \"dynamo\"\ndim = 2\ncoriolis = 0.5\n");
        assert!(e.iter().any(|m| m.contains("zero when d=2")), "{e:?}");
    }

    #[test]
    fn all_errors_are_reported_with_key_paths() {
        let text = r#"
command = "moments"
[model]
kind = "cbf"
exponent = 1.5
diffusivity = { u = -1.0 }
[noise]
sigma = [0.1, -0.2]
gamma = [0.0]
[integrator]
dt = -0.1
[study]
p = 5
"#;
        let e = errors(text);
        for key in [
            "model.exponent",
            "model.diffusivity.u",
            "noise.sigma[1]",
            "noise.gamma",
            "study.p",
        ] {
            assert!(e.iter().any(|m| m.starts_with(key)), "{key} missing from {e:?}");
        }
    }

    #[test]
    fn semantic_errors_after_assembly() {
        let e = errors(&format!(
            "{MINIMAL}[integrator]\nscheme = \"euler_maruyama\"\ndt = 0.5\n"
        ));
        assert!(
            e.iter()
                .any(|m| m.starts_with("integrator.dt") && m.contains("2/λ_max")),
            "{e:?}"
        );
        let e = errors(&format!("{MINIMAL}[integrator]\nlevel = 3\n"));
        assert!(e.iter().any(|m| m.starts_with("integrator.level")), "{e:?}");
        let e = errors(&format!(
            "{MINIMAL}[initial]\nkind = \"waves\"\nwaves = [{{ k = [9, 0] }}]\n"
        ));
        assert!(e.iter().any(|m| m.starts_with("initial.waves[0].k")), "{e:?}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_config("command = \"simulate\"\n[model]\nkind = = 3\n", Strictness::Strict) {
            Err(Error::Syntax { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_fail_strict_and_warn_lenient() {
        let text = format!("{MINIMAL}viscosity = 1.0\n");
        let e = errors(&text);
        assert_eq!(e, vec!["model.viscosity: unknown key".to_string()]);
        let c = parse_config(&text, Strictness::Lenient).unwrap();
        assert_eq!(c.warnings, vec!["model.viscosity: unknown key".to_string()]);
    }

    #[test]
    fn study_keys_depend_on_the_command() {
        let e = errors(&format!("{MINIMAL}[study]\npaths = 3\n"));
        assert!(e[0].contains("not used by command simulate"), "{e:?}");
        let ok = "command = \"order\"\n[model]\nkind = \"cbf\"\n[study]\npaths = 3\n";
        assert_eq!(parse_config(ok, Strictness::Strict).unwrap().study.paths, 3);
    }

    #[test]
    fn waves_build_the_requested_state() {
        let text = r#"
command = "simulate"
[model]
kind = "boussinesq"
cutoff = 3
[initial]
kind = "waves"
scale = 2.0
waves = [
  { field = "u", k = [0, 1], amplitude = 1.0, direction = [1.0, 0.0] },
  { field = "theta", k = [1, 1], amplitude = 0.5 },
]
"#;
        let p = parse_config(text, Strictness::Strict).unwrap().prepare().unwrap();
        // |Φ|² = 2·(a/2)² per wave, doubled amplitude
        let expected = 2.0 * 1.0f64.powi(2) / 4.0 * 4.0 + 2.0 * 0.25f64.powi(2) * 4.0;
        assert!((p.phi0.norm_sq() - expected).abs() < 1e-14);
    }

    #[test]
    fn known_keys_cover_the_grammar() {
        let keys = known_keys();
        assert!(keys.contains(&"integrator.level_radius".to_string()));
        assert!(keys.contains(&"study.refinements".to_string()));
    }

    proptest! {
        #[test]
        fn fuzzed_unknown_keys_are_rejected(
            section in prop::sample::select(vec!["", "model", "noise", "integrator", "ensemble", "output", "initial"]),
            key in "[a-z][a-z_]{0,12}",
        ) {
            let known = known_keys();
            let path = join(section, &key);
            prop_assume!(!known.contains(&path));
            prop_assume!(!(section.is_empty() && TOP_KEYS.contains(&key.as_str())));
            let mut text = String::from("command = \"simulate\"\n");
            if section.is_empty() {
                text.push_str(&format!("{key} = 1\n[model]\nkind = \"cbf\"\n"));
            } else {
                if section != "model" {
                    text.push_str("[model]\nkind = \"cbf\"\n");
                }
                text.push_str(&format!("[{section}]\n"));
                if section == "model" {
                    text.push_str("kind = \"cbf\"\n");
                }
                text.push_str(&format!("{key} = 1\n"));
            }
            match parse_config(&text, Strictness::Strict) {
                Err(Error::Validation(v)) => prop_assert!(v.iter().any(|m| m.starts_with(&format!("{path}: unknown key")) || m.starts_with(&format!("{path}: not used"))), "{:?}", v),
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }
}
