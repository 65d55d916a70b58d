//! The six thermo-magneto-fluid systems written as
//! `dΦ + (𝒜Φ + ℬ(Φ,Φ) + ℛ(Φ)) dt = g(Φ) dW` on the periodic torus.
//!
//! Nonlinear terms are evaluated pseudo-spectrally. Quadratic products use a
//! 3/2-padded grid and the Forchheimer term a 2-padded grid, so for integer
//! exponents the truncation back to the basis is an exact Galerkin
//! projection. [`Model::brute_force_b`] computes the convective form by
//! direct convolution and serves as the independent check on that path.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::{GalerkinLevel, ModeIndex, SpectralBasis};
use crate::state::{differential, leray_in_place, wave, DiffKind, Field, FieldName, StateVector};
use crate::transform::{Grid, Pad};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Largest basis accepted by the direct-convolution oracle.
pub const BRUTE_FORCE_MAX_MODES: usize = 400;

/// Relative tolerance for the divergence-free precondition of [`Model::apply_b`].
pub const SOLENOIDAL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Convective Brinkman–Forchheimer (damped Navier–Stokes).
    Cbf,
    Mhd,
    /// Boussinesq approximation for Bénard convection.
    Boussinesq,
    /// Convective dynamo.
    Dynamo,
    /// Magneto-micropolar fluid.
    Micropolar,
    /// Diffusive tropical climate model.
    Tropical,
}

/// Roster entry: field name, component count and divergence constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldSlot {
    pub name: FieldName,
    pub ncomp: usize,
    pub solenoidal: bool,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Cbf,
        ModelKind::Mhd,
        ModelKind::Boussinesq,
        ModelKind::Dynamo,
        ModelKind::Micropolar,
        ModelKind::Tropical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Cbf => "cbf",
            ModelKind::Mhd => "mhd",
            ModelKind::Boussinesq => "boussinesq",
            ModelKind::Dynamo => "dynamo",
            ModelKind::Micropolar => "micropolar",
            ModelKind::Tropical => "tropical",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Byte code used in snapshot headers.
    pub fn code(&self) -> u8 {
        match self {
            ModelKind::Cbf => 0,
            ModelKind::Mhd => 1,
            ModelKind::Boussinesq => 2,
            ModelKind::Dynamo => 3,
            ModelKind::Micropolar => 4,
            ModelKind::Tropical => 5,
        }
    }

    pub fn from_code(c: u8) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|k| k.code() == c)
    }

    pub fn roster(&self, dim: usize) -> Vec<FieldSlot> {
        let vec = |name, solenoidal| FieldSlot {
            name,
            ncomp: dim,
            solenoidal,
        };
        let scalar = |name| FieldSlot {
            name,
            ncomp: 1,
            solenoidal: false,
        };
        let u = vec(FieldName::U, true);
        let b = vec(FieldName::B, true);
        let theta = scalar(FieldName::Theta);
        match self {
            ModelKind::Cbf => vec![u],
            ModelKind::Mhd => vec![u, b],
            ModelKind::Boussinesq => vec![u, theta],
            ModelKind::Dynamo => vec![u, b, theta],
            ModelKind::Micropolar => {
                let w = if dim == 2 {
                    scalar(FieldName::W)
                } else {
                    vec(FieldName::W, false)
                };
                vec![u, w, b]
            }
            ModelKind::Tropical => vec![u, vec(FieldName::V, false), theta],
        }
    }

    fn has_damping(&self) -> bool {
        matches!(self, ModelKind::Cbf | ModelKind::Mhd | ModelKind::Boussinesq)
    }
}

/// One term `amplitude · cos(k·x + phase)` of a band-limited scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub k: [i32; 3],
    pub amplitude: f64,
    pub phase: f64,
}

/// Model selection and physical coefficients.
///
/// `diffusivity` holds one entry per roster field: `(ν)` for cbf, `(ν, κ)`
/// for mhd and boussinesq, `(ν₁, ν₂, ν₃)` for dynamo and tropical, and
/// `(μ+χ, γ, ν)` for micropolar.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub diffusivity: Vec<f64>,
    /// Darcy coefficient `α`.
    pub darcy: f64,
    /// Forchheimer coefficient `β`.
    pub forchheimer: f64,
    /// Forchheimer exponent `r`.
    pub exponent: f64,
    /// Coriolis parameter `σ` (dynamo, `d = 3` only).
    pub coriolis: f64,
    /// Micro-rotation viscosity `χ`.
    pub chi: f64,
    /// Micropolar `α + β` multiplying `∇ div w`.
    pub elastic: f64,
    /// Buoyancy direction `e` (boussinesq).
    pub buoyancy: Vec<f64>,
    /// Background temperature `φ` (boussinesq).
    pub background: Vec<Wave>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, dim: usize) -> ModelSpec {
        let nfields = kind.roster(dim.clamp(2, 3)).len();
        let mut diffusivity = vec![1.0; nfields];
        let mut chi = 0.0;
        if kind == ModelKind::Micropolar {
            chi = 0.5;
            diffusivity[0] = 1.5;
        }
        let mut e = vec![0.0; dim];
        if let Some(last) = e.last_mut() {
            *last = 1.0;
        }
        let mut k = [0; 3];
        if (2..=3).contains(&dim) {
            k[dim - 1] = 1;
        }
        ModelSpec {
            kind,
            dim,
            diffusivity,
            darcy: 0.0,
            forchheimer: 0.0,
            exponent: 3.0,
            coriolis: 0.0,
            chi,
            elastic: 0.0,
            buoyancy: e,
            background: vec![Wave {
                k,
                amplitude: 1.0,
                phase: 0.0,
            }],
        }
    }

    pub fn roster(&self) -> Vec<FieldSlot> {
        self.kind.roster(self.dim)
    }

    /// All violated invariants, each prefixed with its configuration key.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.dim != 2 && self.dim != 3 {
            errs.push(format!("model.dim: must be 2 or 3, got {}", self.dim));
            return errs;
        }
        let roster = self.roster();
        if self.diffusivity.len() != roster.len() {
            errs.push(format!(
                "model.diffusivity: expected {} entries ({}), got {}",
                roster.len(),
                roster.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", "),
                self.diffusivity.len()
            ));
        }
        for (slot, nu) in roster.iter().zip(&self.diffusivity) {
            if !(nu.is_finite() && *nu > 0.0) {
                errs.push(format!(
                    "model.diffusivity.{}: must be strictly positive, got {nu}",
                    slot.name
                ));
            }
        }
        if !(2.0..=3.0).contains(&self.exponent) {
            errs.push(format!("model.exponent: r = {} violates r ∈ [2,3]", self.exponent));
        }
        for (key, v) in [("darcy", self.darcy), ("forchheimer", self.forchheimer)] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("model.{key}: must be nonnegative, got {v}"));
            } else if v != 0.0 && !self.kind.has_damping() {
                errs.push(format!(
                    "model.{key}: damping is only defined for cbf, mhd and boussinesq"
                ));
            }
        }
        if self.coriolis != 0.0 {
            if self.kind != ModelKind::Dynamo {
                errs.push("model.coriolis: only the dynamo model has a Coriolis term".into());
            } else if self.dim == 2 {
                errs.push("model.coriolis: the Coriolis parameter must be zero when d=2".into());
            }
        }
        if !self.coriolis.is_finite() {
            errs.push("model.coriolis: must be finite".into());
        }
        if self.kind == ModelKind::Micropolar {
            if !(self.chi.is_finite() && self.chi >= 0.0) {
                errs.push(format!("model.chi: must be nonnegative, got {}", self.chi));
            }
            if let Some(&nu_u) = self.diffusivity.first() {
                if nu_u - self.chi <= 0.0 {
                    errs.push(format!(
                        "model.diffusivity.u: μ + χ = {nu_u} must exceed χ = {} so that μ > 0",
                        self.chi
                    ));
                }
            }
            if let Some(&gamma) = self.diffusivity.get(1) {
                if !(gamma + self.elastic > 0.0) {
                    errs.push(format!(
                        "model.elastic: α + β + γ = {} must be positive",
                        gamma + self.elastic
                    ));
                }
            }
        } else {
            if self.chi != 0.0 {
                errs.push("model.chi: only the micropolar model uses χ".into());
            }
            if self.elastic != 0.0 {
                errs.push("model.elastic: only the micropolar model uses α + β".into());
            }
        }
        if self.kind == ModelKind::Boussinesq {
            if self.buoyancy.len() != self.dim {
                errs.push(format!(
                    "model.buoyancy: expected {} components, got {}",
                    self.dim,
                    self.buoyancy.len()
                ));
            } else {
                let n: f64 = self.buoyancy.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-12 {
                    errs.push(format!("model.buoyancy: must be a unit vector, |e| = {n}"));
                }
            }
            for (i, w) in self.background.iter().enumerate() {
                if w.k.iter().all(|&c| c == 0) {
                    errs.push(format!("model.background[{i}]: k = 0 is not a mean-zero mode"));
                }
                if self.dim == 2 && w.k[2] != 0 {
                    errs.push(format!("model.background[{i}]: third wavenumber must be 0 in 2D"));
                }
                if !w.amplitude.is_finite() || !w.phase.is_finite() {
                    errs.push(format!("model.background[{i}]: non-finite coefficient"));
                }
            }
        }
        errs
    }
}

/// The operators `𝒜`, `ℬ`, `ℛ = 𝒮 + ℱ` of one model bound to a basis.
///
/// Immutable after construction and safe to share across threads.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    roster: Vec<FieldSlot>,
    basis: Arc<SpectralBasis>,
    quad: Grid,
    cubic: Grid,
    background: Option<Field>,
}

type Phys = Vec<Vec<f64>>;

impl Model {
    pub fn new(spec: ModelSpec, basis: Arc<SpectralBasis>) -> Result<Model> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        if basis.dim() != spec.dim {
            return Err(Error::Config(format!(
                "basis dimension {} does not match model dimension {}",
                basis.dim(),
                spec.dim
            )));
        }
        let background = if spec.kind == ModelKind::Boussinesq {
            let mut phi = Field::zeros(FieldName::Theta, 1, basis.len(), false);
            for w in &spec.background {
                let term = wave(
                    &basis,
                    FieldName::Theta,
                    ModeIndex(w.k),
                    w.amplitude,
                    w.phase,
                    &[1.0],
                    false,
                )
                .map_err(|_| {
                    Error::Config(format!(
                        "model.background: mode {:?} outside cutoff {}",
                        w.k,
                        basis.cutoff()
                    ))
                })?;
                phi.axpy(1.0, &term);
            }
            Some(phi)
        } else {
            None
        };
        Ok(Model {
            roster: spec.roster(),
            quad: Grid::new(&basis, Pad::ThreeHalves),
            cubic: Grid::new(&basis, Pad::Two),
            spec,
            basis,
            background,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn basis_arc(&self) -> Arc<SpectralBasis> {
        self.basis.clone()
    }

    pub fn roster(&self) -> &[FieldSlot] {
        &self.roster
    }

    pub fn diffusivities(&self) -> &[f64] {
        &self.spec.diffusivity
    }

    /// The quadratic-product grid (pad 3/2).
    pub fn grid(&self) -> &Grid {
        &self.quad
    }

    pub fn zero_state(&self) -> StateVector {
        StateVector::new(
            self.roster
                .iter()
                .map(|s| Field::zeros(s.name, s.ncomp, self.basis.len(), s.solenoidal))
                .collect(),
        )
    }

    pub fn check_state(&self, phi: &StateVector) -> Result<()> {
        let ok = phi.fields.len() == self.roster.len()
            && phi
                .fields
                .iter()
                .zip(&self.roster)
                .all(|(f, s)| f.name == s.name && f.ncomp() == s.ncomp && f.solenoidal == s.solenoidal);
        if !ok {
            return Err(Error::Type(format!(
                "state roster {:?} does not match {} roster {:?}",
                phi.names(),
                self.spec.kind.as_str(),
                self.roster.iter().map(|s| s.name).collect::<Vec<_>>()
            )));
        }
        for f in &phi.fields {
            for c in &f.components {
                self.basis.check_len(c.len())?;
            }
        }
        Ok(())
    }

    fn is_micropolar_vector_w(&self, name: FieldName) -> bool {
        self.spec.kind == ModelKind::Micropolar && name == FieldName::W && self.spec.dim == 3
    }

    /// `f(𝒜)` applied through the eigen-decomposition of `𝒜`.
    ///
    /// Every field is diagonal with eigenvalue `ν_i μ_k`, except the 3D
    /// micro-rotation whose longitudinal part carries `(γ + α + β) μ_k`.
    pub fn linear_fn(&self, phi: &StateVector, f: impl Fn(f64) -> f64) -> StateVector {
        let mu = self.basis.mu();
        let mut out = phi.clone();
        for (field, &nu) in out.fields.iter_mut().zip(&self.spec.diffusivity) {
            if self.is_micropolar_vector_w(field.name) {
                let long = nu + self.spec.elastic;
                for (i, k) in self.basis.modes().iter().enumerate() {
                    let kf = k.as_f64();
                    let mut dot = ZERO;
                    for a in 0..3 {
                        dot += field.components[a][i] * kf[a];
                    }
                    let s = dot / mu[i];
                    let ft = f(nu * mu[i]);
                    let fl = f(long * mu[i]);
                    for a in 0..3 {
                        let l = s * kf[a];
                        let t = field.components[a][i] - l;
                        field.components[a][i] = t * ft + l * fl;
                    }
                }
            } else {
                let factors: Vec<f64> = mu.iter().map(|m| f(nu * m)).collect();
                for c in &mut field.components {
                    for (z, w) in c.iter_mut().zip(&factors) {
                        *z *= *w;
                    }
                }
            }
        }
        out
    }

    pub fn apply_a(&self, phi: &StateVector) -> Result<StateVector> {
        self.check_state(phi)?;
        Ok(self.linear_fn(phi, |l| l))
    }

    /// `⟨𝒜^α a, 𝒜^α b⟩`.
    pub fn inner(&self, a: &StateVector, b: &StateVector, alpha: f64) -> Result<f64> {
        self.check_state(a)?;
        self.check_state(b)?;
        if alpha == 0.0 {
            return Ok(raw_inner(a, b));
        }
        let aa = self.linear_fn(a, |l| l.powf(alpha));
        let bb = self.linear_fn(b, |l| l.powf(alpha));
        Ok(raw_inner(&aa, &bb))
    }

    /// `|𝒜^α Φ|`.
    pub fn norm(&self, phi: &StateVector, alpha: f64) -> f64 {
        if alpha == 0.0 {
            return phi.norm_sq().sqrt();
        }
        self.linear_fn(phi, |l| l.powf(alpha)).norm_sq().sqrt()
    }

    /// Largest eigenvalue of `𝒜` restricted to the level.
    pub fn lambda_max(&self, level: GalerkinLevel) -> f64 {
        let mu = self.basis.mu()[level.get() - 1];
        self.roster
            .iter()
            .zip(&self.spec.diffusivity)
            .map(|(s, &nu)| {
                if self.is_micropolar_vector_w(s.name) {
                    nu.max(nu + self.spec.elastic) * mu
                } else {
                    nu * mu
                }
            })
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of `𝒜`.
    pub fn lambda_min(&self) -> f64 {
        let mu = self.basis.mu()[0];
        self.roster
            .iter()
            .zip(&self.spec.diffusivity)
            .map(|(s, &nu)| {
                if self.is_micropolar_vector_w(s.name) {
                    nu.min(nu + self.spec.elastic) * mu
                } else {
                    nu * mu
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn phys(&self, grid: &Grid, f: &Field) -> Result<Phys> {
        let refs: Vec<&[C64]> = f.components.iter().map(|c| c.as_slice()).collect();
        grid.to_physical_many(&refs)
    }

    /// `[component][axis]` physical values of `∂_axis f_component`.
    fn grad_phys(&self, f: &Field) -> Result<Vec<Phys>> {
        let d = self.spec.dim;
        let mut derivs = Vec::with_capacity(f.ncomp() * d);
        for c in &f.components {
            for a in 0..d {
                derivs.push(
                    c.iter()
                        .zip(self.basis.modes())
                        .map(|(z, k)| z * C64::new(0.0, k.0[a] as f64))
                        .collect::<Vec<C64>>(),
                );
            }
        }
        let refs: Vec<&[C64]> = derivs.iter().map(|c| c.as_slice()).collect();
        let mut flat = self.quad.to_physical_many(&refs)?.into_iter();
        Ok((0..f.ncomp()).map(|_| flat.by_ref().take(d).collect()).collect())
    }

    fn spectral(&self, grid: &Grid, values: &Phys) -> Result<Vec<Vec<C64>>> {
        let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
        grid.to_spectral_many(&refs)
    }

    fn field_of<'a>(&self, phi: &'a StateVector, name: FieldName) -> &'a Field {
        phi.field(name).expect("roster checked")
    }

    /// `ℬ(Φ₁, Φ₂)` evaluated on the 3/2-padded grid.
    pub fn apply_b(&self, phi1: &StateVector, phi2: &StateVector) -> Result<StateVector> {
        self.check_state(phi1)?;
        self.check_state(phi2)?;
        phi1.check_solenoidal(&self.basis, SOLENOIDAL_TOL)?;
        phi2.check_solenoidal(&self.basis, SOLENOIDAL_TOL)?;
        let n = self.quad.len();
        let u1 = self.phys(&self.quad, self.field_of(phi1, FieldName::U))?;
        let mut rows: Vec<(FieldName, Phys)> = Vec::new();
        let kind = self.spec.kind;

        let gu2 = self.grad_phys(self.field_of(phi2, FieldName::U))?;
        let mut u_row = advect(&u1, &gu2, n);

        let magnetic = matches!(kind, ModelKind::Mhd | ModelKind::Dynamo | ModelKind::Micropolar);
        let mut b_row = None;
        if magnetic {
            let b1 = self.phys(&self.quad, self.field_of(phi1, FieldName::B))?;
            let gb2 = self.grad_phys(self.field_of(phi2, FieldName::B))?;
            sub_assign(&mut u_row, &advect(&b1, &gb2, n));
            let mut row = advect(&u1, &gb2, n);
            sub_assign(&mut row, &advect(&b1, &gu2, n));
            b_row = Some(row);
        }
        let mut tropical_v = None;
        let mut div_outer = None;
        if kind == ModelKind::Tropical {
            let v1 = self.phys(&self.quad, self.field_of(phi1, FieldName::V))?;
            let v2 = self.phys(&self.quad, self.field_of(phi2, FieldName::V))?;
            let gv2 = self.grad_phys(self.field_of(phi2, FieldName::V))?;
            let mut row = advect(&u1, &gv2, n);
            add_assign(&mut row, &advect(&v1, &gu2, n));
            tropical_v = Some(row);
            // div(v₁ ⊗ v₂)_i = Σ_j ∂_j (v₁_j v₂_i)
            let mut products = Vec::with_capacity(v2.len() * v1.len());
            for v2i in &v2 {
                for v1j in &v1 {
                    products.push(v1j.iter().zip(v2i).map(|(a, b)| a * b).collect::<Vec<f64>>());
                }
            }
            let spectra = self.spectral(&self.quad, &products)?;
            let mut acc = vec![vec![ZERO; self.basis.len()]; self.spec.dim];
            for (i, acc_i) in acc.iter_mut().enumerate() {
                for j in 0..v1.len() {
                    let spec = &spectra[i * v1.len() + j];
                    for (m, (z, k)) in spec.iter().zip(self.basis.modes()).enumerate() {
                        acc_i[m] += z * C64::new(0.0, k.0[j] as f64);
                    }
                }
            }
            div_outer = Some(acc);
        }

        for slot in &self.roster {
            match slot.name {
                FieldName::U => {}
                FieldName::B => rows.push((FieldName::B, b_row.take().expect("magnetic row"))),
                FieldName::V => rows.push((FieldName::V, tropical_v.take().expect("tropical row"))),
                name @ (FieldName::Theta | FieldName::W) => {
                    let g2 = self.grad_phys(self.field_of(phi2, name))?;
                    rows.push((name, advect(&u1, &g2, n)));
                }
            }
        }

        let mut out = self.zero_state();
        {
            let mut comps = self.spectral(&self.quad, &u_row)?;
            if let Some(acc) = div_outer {
                for (c, a) in comps.iter_mut().zip(acc) {
                    for (z, w) in c.iter_mut().zip(a) {
                        *z += w;
                    }
                }
            }
            leray_in_place(&self.basis, &mut comps);
            out.fields[0].components = comps;
        }
        for (name, row) in rows {
            let mut comps = self.spectral(&self.quad, &row)?;
            let field = out.field_mut(name).expect("roster");
            if field.solenoidal {
                leray_in_place(&self.basis, &mut comps);
            }
            field.components = comps;
        }
        Ok(out)
    }

    /// `ℛ(Φ) = 𝒮(Φ) + ℱ(Φ)`.
    pub fn apply_r(&self, phi: &StateVector) -> Result<StateVector> {
        let (s, f) = self.split_r(phi)?;
        Ok(s.add(&f))
    }

    /// The splitting `(𝒮(Φ), ℱ(Φ))` with `⟨𝒮(Φ), Φ⟩ ≥ 0` and `ℱ` of linear growth.
    pub fn split_r(&self, phi: &StateVector) -> Result<(StateVector, StateVector)> {
        self.check_state(phi)?;
        let mut s = self.zero_state();
        let mut f = self.zero_state();
        let d = self.spec.dim;
        let u = self.field_of(phi, FieldName::U);
        match self.spec.kind {
            ModelKind::Cbf | ModelKind::Mhd | ModelKind::Boussinesq => {
                let damp = self.damping(u)?;
                s.fields[0].components = damp;
                if self.spec.kind == ModelKind::Boussinesq {
                    let theta = self.field_of(phi, FieldName::Theta);
                    let mut buoy = vec![vec![ZERO; self.basis.len()]; d];
                    for (c, &e) in buoy.iter_mut().zip(&self.spec.buoyancy) {
                        for (z, t) in c.iter_mut().zip(&theta.components[0]) {
                            *z = t * e;
                        }
                    }
                    leray_in_place(&self.basis, &mut buoy);
                    f.fields[0].components = buoy;
                    // (u·∇)φ
                    let bg = self.background.as_ref().expect("boussinesq background");
                    let up = self.phys(&self.quad, u)?;
                    let gphi = self.grad_phys(bg)?;
                    let row = advect(&up, &gphi, self.quad.len());
                    f.fields[1].components = self.spectral(&self.quad, &row)?;
                }
            }
            ModelKind::Dynamo => {
                if self.spec.coriolis != 0.0 && d == 3 {
                    // σ P[e_3 × u] = σ P(-u₂, u₁, 0)
                    let sigma = self.spec.coriolis;
                    let mut cor = vec![vec![ZERO; self.basis.len()]; 3];
                    for i in 0..self.basis.len() {
                        cor[0][i] = -u.components[1][i] * sigma;
                        cor[1][i] = u.components[0][i] * sigma;
                    }
                    leray_in_place(&self.basis, &mut cor);
                    s.fields[0].components = cor;
                }
                let theta = self.field_of(phi, FieldName::Theta);
                let mut buoy = vec![vec![ZERO; self.basis.len()]; d];
                buoy[d - 1] = theta.components[0].clone();
                leray_in_place(&self.basis, &mut buoy);
                f.fields[0].components = buoy;
                f.fields[2].components[0] = u.components[d - 1].clone();
            }
            ModelKind::Micropolar => {
                let chi = self.spec.chi;
                let w = self.field_of(phi, FieldName::W);
                let mut sw = w.clone();
                sw.scale(2.0 * chi);
                s.fields[1].components = sw.components;
                let mut cw = differential(&self.basis, w, DiffKind::Curl)?;
                cw.scale(-chi);
                leray_in_place(&self.basis, &mut cw.components);
                f.fields[0].components = cw.components;
                let mut cu = differential(&self.basis, u, DiffKind::Curl)?;
                cu.scale(-chi);
                f.fields[1].components = cu.components;
            }
            ModelKind::Tropical => {
                let theta = self.field_of(phi, FieldName::Theta);
                let v = self.field_of(phi, FieldName::V);
                f.fields[1].components = differential(&self.basis, theta, DiffKind::Gradient)?.components;
                f.fields[2].components = differential(&self.basis, v, DiffKind::Divergence)?.components;
            }
        }
        Ok((s, f))
    }

    /// `α u + β P[|u|^{r-1} u]` on the 2-padded grid.
    fn damping(&self, u: &Field) -> Result<Vec<Vec<C64>>> {
        let mut out = u.components.clone();
        for c in &mut out {
            for z in c.iter_mut() {
                *z *= self.spec.darcy;
            }
        }
        let beta = self.spec.forchheimer;
        if beta != 0.0 {
            let up = self.phys(&self.cubic, u)?;
            let r = self.spec.exponent;
            let npts = self.cubic.len();
            let mut mag = vec![0.0; npts];
            for c in &up {
                for (m, x) in mag.iter_mut().zip(c) {
                    *m += x * x;
                }
            }
            let factor: Vec<f64> = if r == 3.0 {
                mag
            } else {
                mag.iter().map(|m| m.powf(0.5 * (r - 1.0))).collect()
            };
            let prods: Phys = up
                .iter()
                .map(|c| c.iter().zip(&factor).map(|(x, f)| x * f).collect())
                .collect();
            let mut forch = self.spectral(&self.cubic, &prods)?;
            leray_in_place(&self.basis, &mut forch);
            for (c, fc) in out.iter_mut().zip(&forch) {
                for (z, w) in c.iter_mut().zip(fc) {
                    *z += w * beta;
                }
            }
        }
        Ok(out)
    }

    /// `ℬ(Φ₁, Φ₂)` by direct convolution over mode pairs, with no transforms.
    pub fn brute_force_b(&self, phi1: &StateVector, phi2: &StateVector) -> Result<StateVector> {
        self.check_state(phi1)?;
        self.check_state(phi2)?;
        if self.basis.len() > BRUTE_FORCE_MAX_MODES {
            return Err(Error::Resource(format!(
                "direct convolution limited to {BRUTE_FORCE_MAX_MODES} modes, basis has {}",
                self.basis.len()
            )));
        }
        let f1 = |n| self.field_of(phi1, n);
        let f2 = |n| self.field_of(phi2, n);
        let kind = self.spec.kind;
        let mut out = self.zero_state();
        let mut u_row = self.conv_advect(f1(FieldName::U), f2(FieldName::U));
        if matches!(kind, ModelKind::Mhd | ModelKind::Dynamo | ModelKind::Micropolar) {
            let bb = self.conv_advect(f1(FieldName::B), f2(FieldName::B));
            sub_assign_c(&mut u_row, &bb);
            let mut b_row = self.conv_advect(f1(FieldName::U), f2(FieldName::B));
            sub_assign_c(&mut b_row, &self.conv_advect(f1(FieldName::B), f2(FieldName::U)));
            leray_in_place(&self.basis, &mut b_row);
            out.field_mut(FieldName::B).expect("roster").components = b_row;
        }
        if kind == ModelKind::Tropical {
            let dv = self.conv_div_outer(f1(FieldName::V), f2(FieldName::V));
            add_assign_c(&mut u_row, &dv);
            let mut v_row = self.conv_advect(f1(FieldName::U), f2(FieldName::V));
            add_assign_c(&mut v_row, &self.conv_advect(f1(FieldName::V), f2(FieldName::U)));
            out.field_mut(FieldName::V).expect("roster").components = v_row;
        }
        for name in [FieldName::Theta, FieldName::W] {
            if phi2.field(name).is_some() {
                let row = self.conv_advect(f1(FieldName::U), f2(name));
                out.field_mut(name).expect("roster").components = row;
            }
        }
        leray_in_place(&self.basis, &mut u_row);
        out.fields[0].components = u_row;
        Ok(out)
    }

    /// `((a·∇) f)` at every basis mode: `Σ_{k+q=p} (a(k)·iq) f(q)`.
    fn conv_advect(&self, a: &Field, f: &Field) -> Vec<Vec<C64>> {
        let modes = self.basis.modes();
        let n = modes.len();
        let d = self.spec.dim;
        let mut out = vec![vec![ZERO; n]; f.ncomp()];
        for (ik, k) in modes.iter().enumerate() {
            for (iq, q) in modes.iter().enumerate() {
                let p = ModeIndex([k.0[0] + q.0[0], k.0[1] + q.0[1], k.0[2] + q.0[2]]);
                let Some(ip) = self.basis.index_of(p) else {
                    continue;
                };
                let mut adot = ZERO;
                for ax in 0..d {
                    adot += a.components[ax][ik] * C64::new(0.0, q.0[ax] as f64);
                }
                for (c, fc) in out.iter_mut().zip(&f.components) {
                    c[ip] += adot * fc[iq];
                }
            }
        }
        out
    }

    /// `div(a ⊗ b)_i = Σ_j ∂_j (a_j b_i)` by direct convolution.
    fn conv_div_outer(&self, a: &Field, b: &Field) -> Vec<Vec<C64>> {
        let modes = self.basis.modes();
        let n = modes.len();
        let d = self.spec.dim;
        let mut out = vec![vec![ZERO; n]; b.ncomp()];
        for (ik, k) in modes.iter().enumerate() {
            for (iq, q) in modes.iter().enumerate() {
                let p = ModeIndex([k.0[0] + q.0[0], k.0[1] + q.0[1], k.0[2] + q.0[2]]);
                let Some(ip) = self.basis.index_of(p) else {
                    continue;
                };
                let mut adot = ZERO;
                for ax in 0..d {
                    adot += a.components[ax][ik] * C64::new(0.0, p.0[ax] as f64);
                }
                for (c, bc) in out.iter_mut().zip(&b.components) {
                    c[ip] += adot * bc[iq];
                }
            }
        }
        out
    }
}

fn raw_inner(a: &StateVector, b: &StateVector) -> f64 {
    let mut s = 0.0;
    for (fa, fb) in a.fields.iter().zip(&b.fields) {
        for (ca, cb) in fa.components.iter().zip(&fb.components) {
            for (x, y) in ca.iter().zip(cb) {
                s += x.re * y.re + x.im * y.im;
            }
        }
    }
    s
}

/// `(a·∇) f` in physical space from `a` and the gradient table of `f`.
fn advect(a: &Phys, grad: &[Phys], n: usize) -> Phys {
    grad.iter()
        .map(|per_axis| {
            let mut out = vec![0.0; n];
            for (ax, g) in a.iter().zip(per_axis) {
                for ((o, x), y) in out.iter_mut().zip(ax).zip(g) {
                    *o += x * y;
                }
            }
            out
        })
        .collect()
}

fn sub_assign(a: &mut Phys, b: &Phys) {
    for (x, y) in a.iter_mut().zip(b) {
        for (p, q) in x.iter_mut().zip(y) {
            *p -= q;
        }
    }
}

fn add_assign(a: &mut Phys, b: &Phys) {
    for (x, y) in a.iter_mut().zip(b) {
        for (p, q) in x.iter_mut().zip(y) {
            *p += q;
        }
    }
}

fn sub_assign_c(a: &mut [Vec<C64>], b: &[Vec<C64>]) {
    for (x, y) in a.iter_mut().zip(b) {
        for (p, q) in x.iter_mut().zip(y) {
            *p -= q;
        }
    }
}

fn add_assign_c(a: &mut [Vec<C64>], b: &[Vec<C64>]) {
    for (x, y) in a.iter_mut().zip(b) {
        for (p, q) in x.iter_mut().zip(y) {
            *p += q;
        }
    }
}

/// A random state on the model's roster with smooth decaying spectrum.
pub fn random_state<R: rand::Rng + ?Sized>(
    model: &Model,
    decay: f64,
    level: Option<GalerkinLevel>,
    rng: &mut R,
) -> StateVector {
    StateVector::new(
        model
            .roster()
            .iter()
            .map(|s| crate::state::random_field(model.basis(), s.name, s.ncomp, s.solenoidal, decay, level, rng))
            .collect(),
    )
}
