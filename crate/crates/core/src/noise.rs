//! Affine multiplicative noise `g_k(Φ) = σ_k (ψ_k + γ_k Φ)` and reproducible
//! Wiener increments.
//!
//! Increments come from ChaCha20 (`rand_chacha` 0.3) used as a counter-based
//! generator: the 64-bit seed is expanded into the key, the stream id
//! encodes `(replicate, direction)` and the word position encodes
//! `(refinement level, index)`. Uniforms `(x >> 11 + 1/2) · 2⁻⁵³` are mapped
//! to standard normals through the inverse CDF `-√2 · erfc⁻¹(2u)`.

use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::models::Model;
use crate::spectral::SpectralBasis;
use crate::state::{leray_in_place, Field, FieldName, StateVector};
use crate::C64;

/// Generator identification written into every output header.
pub const GENERATOR: &str = "chacha20/rand_chacha-0.3 counter streams; normals by inverse CDF (erfc_inv); v1";

const DIRECTION_BITS: u32 = 20;
const LEVEL_SHIFT: u32 = 60;

/// Standard normal draws at positions `start..start+count` of one substream.
pub fn normals(seed: u64, replicate: u64, direction: usize, level: u32, start: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((replicate << DIRECTION_BITS) | direction as u64);
    rng.set_word_pos(((level as u128) << LEVEL_SHIFT) + 2 * start as u128);
    (0..count)
        .map(|_| {
            let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
        })
        .collect()
}

/// Brownian increments `ΔW_k` for `K` directions over a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    pub seed: u64,
    pub replicate: u64,
    pub dt: f64,
    pub steps: usize,
    /// Number of bridge refinements applied since sampling.
    pub level: u32,
    /// `increments[k][step]`.
    pub increments: Vec<Vec<f64>>,
}

impl WienerPath {
    pub fn directions(&self) -> usize {
        self.increments.len()
    }

    /// Increments of all directions at one step.
    pub fn at(&self, step: usize) -> Vec<f64> {
        self.increments.iter().map(|w| w[step]).collect()
    }

    /// Pairwise sums of consecutive increments (inverse of [`refine_path`]).
    pub fn coarsen(&self) -> Result<WienerPath> {
        if !self.steps.is_multiple_of(2) || self.level == 0 {
            return Err(Error::Argument(
                "only refined paths with an even step count can be coarsened".into(),
            ));
        }
        Ok(WienerPath {
            seed: self.seed,
            replicate: self.replicate,
            dt: self.dt * 2.0,
            steps: self.steps / 2,
            level: self.level - 1,
            increments: self
                .increments
                .iter()
                .map(|w| w.chunks_exact(2).map(|p| p[0] + p[1]).collect())
                .collect(),
        })
    }
}

/// Increments for replicate 0.
pub fn sample_path(seed: u64, dt: f64, steps: usize, k: usize) -> Result<WienerPath> {
    sample_replicate_path(seed, 0, dt, steps, k)
}

/// Increments for one ensemble member; replicates use disjoint substreams.
pub fn sample_replicate_path(seed: u64, replicate: u64, dt: f64, steps: usize, k: usize) -> Result<WienerPath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Argument(format!("dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::Argument("steps must be at least 1".into()));
    }
    if k >= 1 << DIRECTION_BITS || replicate >= 1 << (64 - DIRECTION_BITS) {
        return Err(Error::Argument("direction or replicate id out of range".into()));
    }
    let sd = dt.sqrt();
    let increments = (0..k)
        .map(|dir| {
            normals(seed, replicate, dir, 0, 0, steps)
                .into_iter()
                .map(|z| z * sd)
                .collect()
        })
        .collect();
    Ok(WienerPath {
        seed,
        replicate,
        dt,
        steps,
        level: 0,
        increments,
    })
}

/// Brownian-bridge midpoint insertion: halves `dt`, doubles the step count,
/// and keeps every pair of fine increments summing to the coarse one.
pub fn refine_path(path: &WienerPath) -> WienerPath {
    let level = path.level + 1;
    let half_sd = 0.5 * path.dt.sqrt();
    let increments = path
        .increments
        .iter()
        .enumerate()
        .map(|(dir, coarse)| {
            let z = normals(path.seed, path.replicate, dir, level, 0, coarse.len());
            let mut fine = Vec::with_capacity(2 * coarse.len());
            for (dw, zj) in coarse.iter().zip(z) {
                let mid = 0.5 * dw;
                let dev = half_sd * zj;
                fine.push(mid + dev);
                fine.push(mid - dev);
            }
            fine
        })
        .collect();
    WienerPath {
        seed: path.seed,
        replicate: path.replicate,
        dt: 0.5 * path.dt,
        steps: 2 * path.steps,
        level,
        increments,
    }
}

/// One noise direction `σ (ψ + γ Φ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDirection {
    pub sigma: f64,
    pub gamma: f64,
    pub shape: StateVector,
}

/// A user-defined noise coefficient returning the `K` directions `g_k(Φ)`.
pub type NoiseFn = Arc<dyn Fn(&StateVector) -> Vec<StateVector> + Send + Sync>;

#[derive(Clone)]
pub enum NoiseSpec {
    Affine {
        directions: Vec<NoiseDirection>,
        /// Fields the noise acts on; the multiplicative part is masked too.
        mask: Vec<FieldName>,
    },
    Custom {
        k: usize,
        g: NoiseFn,
    },
}

impl std::fmt::Debug for NoiseSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseSpec::Affine { directions, mask } => f
                .debug_struct("Affine")
                .field("k", &directions.len())
                .field("sigma", &directions.iter().map(|d| d.sigma).collect::<Vec<_>>())
                .field("gamma", &directions.iter().map(|d| d.gamma).collect::<Vec<_>>())
                .field("mask", mask)
                .finish(),
            NoiseSpec::Custom { k, .. } => f.debug_struct("Custom").field("k", k).finish(),
        }
    }
}

/// Mode positions of the first `count` `±k` pairs in basis order.
fn lowest_pairs(basis: &SpectralBasis, count: usize) -> Vec<usize> {
    (0..basis.len())
        .filter(|&i| basis.conj_index(i) > i)
        .take(count)
        .collect()
}

/// Unit direction perpendicular to `k`, deterministic in `k`.
fn transverse(k: [f64; 3], dim: usize) -> Vec<f64> {
    if dim == 2 {
        let n = (k[0] * k[0] + k[1] * k[1]).sqrt();
        return vec![-k[1] / n, k[0] / n];
    }
    let axis = (0..3)
        .min_by(|&a, &b| k[a].abs().partial_cmp(&k[b].abs()).expect("finite"))
        .expect("three axes");
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let kk: f64 = k.iter().map(|x| x * x).sum();
    let dot = k[axis];
    let v: Vec<f64> = (0..3).map(|a| e[a] - k[a] * dot / kk).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Default shape `ψ_k`: the `k`-th lowest `±k` pair on each masked field as a
/// real cosine (transverse for vector fields), normalized to `|ψ_k| = 1`.
pub fn default_shape(model: &Model, index: usize, mask: &[FieldName]) -> Result<StateVector> {
    let basis = model.basis();
    let pairs = lowest_pairs(basis, index + 1);
    let Some(&i) = pairs.get(index) else {
        return Err(Error::Config(format!(
            "noise direction {} needs more modes than the basis has",
            index + 1
        )));
    };
    let j = basis.conj_index(i);
    let kf = basis.mode(i).as_f64();
    let mut shape = model.zero_state();
    for f in shape.fields.iter_mut().filter(|f| mask.contains(&f.name)) {
        let dir = if f.is_scalar() {
            vec![1.0]
        } else {
            transverse(kf, basis.dim())
        };
        for (c, e) in f.components.iter_mut().zip(&dir) {
            c[i] = C64::new(0.5 * e, 0.0);
            c[j] = C64::new(0.5 * e, 0.0);
        }
        if f.solenoidal {
            leray_in_place(basis, &mut f.components);
        }
    }
    let norm = shape.norm_sq().sqrt();
    if norm == 0.0 {
        return Err(Error::Config("noise mask selects no field of the model".into()));
    }
    shape.scale(1.0 / norm);
    Ok(shape)
}

impl NoiseSpec {
    /// No noise (`K = 0`).
    pub fn none() -> NoiseSpec {
        NoiseSpec::Affine {
            directions: Vec::new(),
            mask: Vec::new(),
        }
    }

    /// Affine noise with default shapes on the masked fields (all fields
    /// when `mask` is empty).
    pub fn affine(model: &Model, sigma: &[f64], gamma: &[f64], mask: &[FieldName]) -> Result<NoiseSpec> {
        if sigma.len() != gamma.len() {
            return Err(Error::Config(format!(
                "noise: sigma has {} entries but gamma has {}",
                sigma.len(),
                gamma.len()
            )));
        }
        let mask: Vec<FieldName> = if mask.is_empty() {
            model.roster().iter().map(|s| s.name).collect()
        } else {
            mask.to_vec()
        };
        for name in &mask {
            if !model.roster().iter().any(|s| s.name == *name) {
                return Err(Error::Config(format!(
                    "noise.fields: {name} is not a field of the {} model",
                    model.spec().kind.as_str()
                )));
            }
        }
        let mut directions = Vec::with_capacity(sigma.len());
        for (idx, (&s, &g)) in sigma.iter().zip(gamma).enumerate() {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("noise.sigma[{idx}]: must be positive, got {s}")));
            }
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!(
                    "noise.gamma[{idx}]: must be nonnegative, got {g}"
                )));
            }
            directions.push(NoiseDirection {
                sigma: s,
                gamma: g,
                shape: default_shape(model, idx, &mask)?,
            });
        }
        Ok(NoiseSpec::Affine { directions, mask })
    }

    pub fn k(&self) -> usize {
        match self {
            NoiseSpec::Affine { directions, .. } => directions.len(),
            NoiseSpec::Custom { k, .. } => *k,
        }
    }

    pub fn is_additive(&self) -> bool {
        match self {
            NoiseSpec::Affine { directions, .. } => directions.iter().all(|d| d.gamma == 0.0),
            NoiseSpec::Custom { .. } => false,
        }
    }

    /// Same directions with every `σ_k` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> NoiseSpec {
        match self {
            NoiseSpec::Affine { directions, mask } => NoiseSpec::Affine {
                directions: directions
                    .iter()
                    .map(|d| NoiseDirection {
                        sigma: d.sigma * factor,
                        ..d.clone()
                    })
                    .collect(),
                mask: mask.clone(),
            },
            NoiseSpec::Custom { k, g } => {
                let g = g.clone();
                NoiseSpec::Custom {
                    k: *k,
                    g: Arc::new(move |phi| g(phi).into_iter().map(|s| s.scaled(factor)).collect()),
                }
            }
        }
    }
}

/// `[g_1(Φ), …, g_K(Φ)]`.
pub fn eval_g(nspec: &NoiseSpec, phi: &StateVector) -> Result<Vec<StateVector>> {
    match nspec {
        NoiseSpec::Affine { directions, mask } => directions
            .iter()
            .map(|d| {
                d.shape.check_roster(phi)?;
                let mut out = d.shape.clone();
                if d.gamma != 0.0 {
                    for (o, f) in out.fields.iter_mut().zip(&phi.fields) {
                        if mask.contains(&f.name) {
                            o.axpy(d.gamma, f);
                        }
                    }
                }
                out.scale(d.sigma);
                Ok(out)
            })
            .collect(),
        NoiseSpec::Custom { k, g } => {
            let out = g(phi);
            if out.len() != *k {
                return Err(Error::Type(format!(
                    "custom noise returned {} directions, expected {k}",
                    out.len()
                )));
            }
            for o in &out {
                o.check_roster(phi)?;
            }
            Ok(out)
        }
    }
}

/// Closed-form Lipschitz and growth constants of affine noise in the
/// `ℋ`, `𝒱` and `D(𝒜)` scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzReport {
    pub l_h: f64,
    pub l_v: f64,
    pub l_da: f64,
    pub growth_h: f64,
    pub growth_v: f64,
    pub growth_da: f64,
}

pub fn lipschitz_report(nspec: &NoiseSpec, model: &Model) -> Result<LipschitzReport> {
    let NoiseSpec::Affine { directions, .. } = nspec else {
        return Err(Error::Argument(
            "closed-form constants exist only for affine noise".into(),
        ));
    };
    let l = directions
        .iter()
        .map(|d| (d.sigma * d.gamma).powi(2))
        .sum::<f64>()
        .sqrt();
    let shape_norm = |alpha: f64| -> f64 {
        directions
            .iter()
            .map(|d| (d.sigma * model.norm(&d.shape, alpha)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    Ok(LipschitzReport {
        l_h: l,
        l_v: l,
        l_da: l,
        growth_h: l + shape_norm(0.0),
        growth_v: l + shape_norm(0.5),
        growth_da: l + shape_norm(1.0),
    })
}

/// `|g(a) - g(b)|_{ℓ²(D(𝒜^α))}`.
pub fn g_distance(model: &Model, nspec: &NoiseSpec, a: &StateVector, b: &StateVector, alpha: f64) -> Result<f64> {
    let ga = eval_g(nspec, a)?;
    let gb = eval_g(nspec, b)?;
    Ok(ga
        .iter()
        .zip(&gb)
        .map(|(x, y)| model.norm(&x.sub(y), alpha).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Restricts `phi` to the noise mask (zeroing other fields).
pub fn masked(nspec: &NoiseSpec, phi: &StateVector) -> StateVector {
    match nspec {
        NoiseSpec::Affine { mask, .. } => {
            let mut out = phi.clone();
            for f in out.fields.iter_mut() {
                if !mask.contains(&f.name) {
                    *f = Field::zeros(f.name, f.ncomp(), f.components[0].len(), f.solenoidal);
                }
            }
            out
        }
        NoiseSpec::Custom { .. } => phi.clone(),
    }
}
