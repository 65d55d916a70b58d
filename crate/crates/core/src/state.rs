//! State vectors as collections of named fields in truncated Fourier form.
//!
//! Coefficients are stored on the full lattice (both `k` and `-k`), one
//! array per component, in basis order. A real physical field satisfies
//! `c(-k) = conj(c(k))`; every operation here preserves that symmetry.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::spectral::{GalerkinLevel, SpectralBasis};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldName {
    /// Velocity (barotropic mode in the tropical model).
    U,
    /// Magnetic flux density.
    B,
    /// Temperature.
    Theta,
    /// Micro-rotation.
    W,
    /// First baroclinic mode.
    V,
}

impl FieldName {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldName::U => "u",
            FieldName::B => "B",
            FieldName::Theta => "theta",
            FieldName::W => "w",
            FieldName::V => "v",
        }
    }

    pub fn parse(s: &str) -> Option<FieldName> {
        match s {
            "u" => Some(FieldName::U),
            "B" => Some(FieldName::B),
            "theta" => Some(FieldName::Theta),
            "w" => Some(FieldName::W),
            "v" => Some(FieldName::V),
            _ => None,
        }
    }
}

impl fmt::Display for FieldName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One physical field: `components.len()` is 1 for scalars and `d` for vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub name: FieldName,
    pub components: Vec<Vec<C64>>,
    pub solenoidal: bool,
}

impl Field {
    pub fn zeros(name: FieldName, ncomp: usize, len: usize, solenoidal: bool) -> Field {
        Field {
            name,
            components: vec![vec![ZERO; len]; ncomp],
            solenoidal,
        }
    }

    pub fn ncomp(&self) -> usize {
        self.components.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.components.len() == 1
    }

    pub fn norm_sq(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.iter())
            .map(|z| z.norm_sqr())
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.components {
            for z in c.iter_mut() {
                *z *= a;
            }
        }
    }

    pub fn axpy(&mut self, a: f64, x: &Field) {
        for (c, xc) in self.components.iter_mut().zip(&x.components) {
            for (z, xz) in c.iter_mut().zip(xc) {
                *z += xz * a;
            }
        }
    }

    /// Largest `|c(-k) - conj(c(k))|` over modes and components.
    pub fn hermitian_defect(&self, basis: &SpectralBasis) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.components {
            for (i, z) in c.iter().enumerate() {
                worst = worst.max((c[basis.conj_index(i)] - z.conj()).norm());
            }
        }
        worst
    }

    /// Largest `|k · c(k)| / |k|` over modes.
    pub fn divergence_defect(&self, basis: &SpectralBasis) -> f64 {
        if self.ncomp() != basis.dim() {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for (i, (k, mu)) in basis.modes().iter().zip(basis.mu()).enumerate() {
            let kf = k.as_f64();
            let mut s = ZERO;
            for (a, c) in self.components.iter().enumerate() {
                s += c[i] * kf[a];
            }
            worst = worst.max(s.norm() / mu.sqrt());
        }
        worst
    }
}

/// The state `Φ`: an ordered roster of fields sharing one basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub fields: Vec<Field>,
}

impl StateVector {
    pub fn new(fields: Vec<Field>) -> Self {
        StateVector { fields }
    }

    pub fn zeros_like(&self) -> Self {
        StateVector {
            fields: self
                .fields
                .iter()
                .map(|f| Field::zeros(f.name, f.ncomp(), f.components[0].len(), f.solenoidal))
                .collect(),
        }
    }

    pub fn field(&self, name: FieldName) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_mut(&mut self, name: FieldName) -> Option<&mut Field> {
        self.fields.iter_mut().find(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<FieldName> {
        self.fields.iter().map(|f| f.name).collect()
    }

    pub fn same_roster(&self, other: &StateVector) -> bool {
        self.fields.len() == other.fields.len()
            && self
                .fields
                .iter()
                .zip(&other.fields)
                .all(|(a, b)| a.name == b.name && a.ncomp() == b.ncomp())
    }

    pub fn check_roster(&self, other: &StateVector) -> Result<()> {
        if self.same_roster(other) {
            Ok(())
        } else {
            Err(Error::Type(format!(
                "roster mismatch: {:?} vs {:?}",
                self.names(),
                other.names()
            )))
        }
    }

    /// `|Φ|²`, the unweighted sum of squared coefficient magnitudes.
    pub fn norm_sq(&self) -> f64 {
        self.fields.iter().map(Field::norm_sq).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.fields
            .iter()
            .flat_map(|f| f.components.iter().flat_map(|c| c.iter()))
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        self.fields.iter_mut().for_each(|f| f.scale(a));
    }

    pub fn scaled(&self, a: f64) -> StateVector {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn axpy(&mut self, a: f64, x: &StateVector) {
        for (f, xf) in self.fields.iter_mut().zip(&x.fields) {
            f.axpy(a, xf);
        }
    }

    pub fn sub(&self, x: &StateVector) -> StateVector {
        let mut out = self.clone();
        out.axpy(-1.0, x);
        out
    }

    pub fn add(&self, x: &StateVector) -> StateVector {
        let mut out = self.clone();
        out.axpy(1.0, x);
        out
    }

    /// Applies `P_n` to every component in place.
    pub fn project(&mut self, level: GalerkinLevel) {
        for f in &mut self.fields {
            for c in &mut f.components {
                c[level.get()..].fill(ZERO);
            }
        }
    }

    pub fn hermitian_defect(&self, basis: &SpectralBasis) -> f64 {
        self.fields
            .iter()
            .map(|f| f.hermitian_defect(basis))
            .fold(0.0, f64::max)
    }

    /// Checks every solenoidal field for `k · c(k) = 0` relative to its size.
    pub fn check_solenoidal(&self, basis: &SpectralBasis, rel_tol: f64) -> Result<()> {
        for f in self.fields.iter().filter(|f| f.solenoidal) {
            let defect = f.divergence_defect(basis);
            if defect > rel_tol * f.max_abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Integrity(format!(
                    "field {} violates div = 0 (defect {defect:e})",
                    f.name
                )));
            }
        }
        Ok(())
    }
}

/// Per-mode `I - k kᵀ / |k|²` applied to a vector field.
pub fn leray_project(basis: &SpectralBasis, f: &Field) -> Result<Field> {
    if f.ncomp() != basis.dim() {
        return Err(Error::Type(format!(
            "Leray projection needs a {}-component field, {} has {}",
            basis.dim(),
            f.name,
            f.ncomp()
        )));
    }
    basis.check_len(f.components[0].len())?;
    let mut out = f.clone();
    leray_in_place(basis, &mut out.components);
    Ok(out)
}

pub(crate) fn leray_in_place(basis: &SpectralBasis, comps: &mut [Vec<C64>]) {
    let d = comps.len();
    for (i, (k, mu)) in basis.modes().iter().zip(basis.mu()).enumerate() {
        let kf = k.as_f64();
        let mut dot = ZERO;
        for (a, c) in comps.iter().enumerate() {
            dot += c[i] * kf[a];
        }
        let s = dot / *mu;
        for (a, c) in comps.iter_mut().enumerate().take(d) {
            c[i] -= s * kf[a];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffKind {
    Gradient,
    Divergence,
    Curl,
    Laplacian,
}

/// Exact spectral differentiation.
///
/// `Curl` maps vectors to vectors when `d = 3`; when `d = 2` it maps a
/// vector to the scalar `∂₁f₂ - ∂₂f₁` and a scalar `ψ` to `(∂₂ψ, -∂₁ψ)`.
pub fn differential(basis: &SpectralBasis, f: &Field, kind: DiffKind) -> Result<Field> {
    let d = basis.dim();
    let n = basis.len();
    basis.check_len(f.components[0].len())?;
    let ik = |i: usize, a: usize| -> C64 { C64::new(0.0, basis.mode(i).0[a] as f64) };
    let bad = || {
        Err(Error::Type(format!(
            "{kind:?} undefined for {}-component field {} in d = {d}",
            f.ncomp(),
            f.name
        )))
    };
    let mut comps: Vec<Vec<C64>>;
    let mut solenoidal = false;
    match kind {
        DiffKind::Gradient => {
            if !f.is_scalar() {
                return bad();
            }
            comps = (0..d)
                .map(|a| (0..n).map(|i| ik(i, a) * f.components[0][i]).collect())
                .collect();
        }
        DiffKind::Divergence => {
            if f.ncomp() != d {
                return bad();
            }
            comps = vec![vec![ZERO; n]];
            for a in 0..d {
                for i in 0..n {
                    comps[0][i] += ik(i, a) * f.components[a][i];
                }
            }
        }
        DiffKind::Laplacian => {
            comps = f.components.clone();
            for c in &mut comps {
                for (z, mu) in c.iter_mut().zip(basis.mu()) {
                    *z *= -mu;
                }
            }
            solenoidal = f.solenoidal;
        }
        DiffKind::Curl => {
            let c = &f.components;
            match (d, f.ncomp()) {
                (3, 3) => {
                    comps = vec![vec![ZERO; n]; 3];
                    for i in 0..n {
                        comps[0][i] = ik(i, 1) * c[2][i] - ik(i, 2) * c[1][i];
                        comps[1][i] = ik(i, 2) * c[0][i] - ik(i, 0) * c[2][i];
                        comps[2][i] = ik(i, 0) * c[1][i] - ik(i, 1) * c[0][i];
                    }
                    solenoidal = true;
                }
                (2, 2) => {
                    comps = vec![(0..n).map(|i| ik(i, 0) * c[1][i] - ik(i, 1) * c[0][i]).collect()];
                }
                (2, 1) => {
                    comps = vec![
                        (0..n).map(|i| ik(i, 1) * c[0][i]).collect(),
                        (0..n).map(|i| -ik(i, 0) * c[0][i]).collect(),
                    ];
                    solenoidal = true;
                }
                _ => return bad(),
            }
        }
    }
    Ok(Field {
        name: f.name,
        components: comps,
        solenoidal,
    })
}

/// `⟨a, b⟩_α = Σ_fields Σ_modes (ν_i μ_k)^{2α} Re(conj(â) b̂)` with one
/// diffusivity per roster entry.
pub fn inner_product(
    basis: &SpectralBasis,
    a: &StateVector,
    b: &StateVector,
    alpha: f64,
    diffusivities: &[f64],
) -> Result<f64> {
    a.check_roster(b)?;
    if diffusivities.len() != a.fields.len() {
        return Err(Error::Shape {
            expected: a.fields.len(),
            found: diffusivities.len(),
        });
    }
    let mut total = 0.0;
    for ((fa, fb), &nu) in a.fields.iter().zip(&b.fields).zip(diffusivities) {
        for (ca, cb) in fa.components.iter().zip(&fb.components) {
            basis.check_len(ca.len())?;
            for i in 0..ca.len() {
                let w = if alpha == 0.0 {
                    1.0
                } else {
                    (nu * basis.mu()[i]).powf(2.0 * alpha)
                };
                total += w * (ca[i].conj() * cb[i]).re;
            }
        }
    }
    Ok(total)
}

/// Diagnostic variant of [`inner_product`] with every diffusivity set to one.
pub fn inner_product_unweighted(basis: &SpectralBasis, a: &StateVector, b: &StateVector, alpha: f64) -> Result<f64> {
    inner_product(basis, a, b, alpha, &vec![1.0; a.fields.len()])
}

/// A random real-valued field whose coefficient amplitudes decay like
/// `(1 + |k|²)^{-decay}`; solenoidal fields are Leray-projected.
pub fn random_field<R: Rng + ?Sized>(
    basis: &SpectralBasis,
    name: FieldName,
    ncomp: usize,
    solenoidal: bool,
    decay: f64,
    level: Option<GalerkinLevel>,
    rng: &mut R,
) -> Field {
    let n = basis.len();
    let keep = level.map_or(n, |l| l.get());
    let mut f = Field::zeros(name, ncomp, n, solenoidal);
    for c in &mut f.components {
        for i in 0..keep {
            let j = basis.conj_index(i);
            if j < i || j >= keep {
                continue;
            }
            let amp = (1.0 + basis.mu()[i]).powf(-decay);
            let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amp;
            c[i] = z;
            c[j] = z.conj();
        }
    }
    if solenoidal {
        leray_in_place(basis, &mut f.components);
    }
    f
}

/// Real field `amplitude · cos(k·x + phase) · direction` on mode `k` and `-k`.
pub fn wave(
    basis: &SpectralBasis,
    name: FieldName,
    k: crate::spectral::ModeIndex,
    amplitude: f64,
    phase: f64,
    direction: &[f64],
    solenoidal: bool,
) -> Result<Field> {
    let i = basis
        .index_of(k)
        .ok_or_else(|| Error::Config(format!("mode {:?} not in the basis", k.0)))?;
    let j = basis.conj_index(i);
    let mut f = Field::zeros(name, direction.len(), basis.len(), solenoidal);
    let half = C64::from_polar(0.5 * amplitude, phase);
    for (c, &e) in f.components.iter_mut().zip(direction) {
        c[i] += half * e;
        c[j] += half.conj() * e;
    }
    if solenoidal {
        leray_in_place(basis, &mut f.components);
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ModeIndex;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis2() -> SpectralBasis {
        SpectralBasis::new(2, 3).unwrap()
    }

    #[test]
    fn leray_annihilates_gradients() {
        let b = basis2();
        // φ = cos(x + y)
        let phi = wave(&b, FieldName::Theta, ModeIndex([1, 1, 0]), 1.0, 0.0, &[1.0], false).unwrap();
        let g = differential(&b, &phi, DiffKind::Gradient).unwrap();
        let p = leray_project(&b, &g).unwrap();
        assert!(p.max_abs() < 1e-15);
    }

    #[test]
    fn leray_fixes_shear_and_single_mode_example() {
        let b = basis2();
        // sin(y) e1
        let shear = wave(
            &b,
            FieldName::U,
            ModeIndex([0, 1, 0]),
            1.0,
            -std::f64::consts::FRAC_PI_2,
            &[1.0, 0.0],
            false,
        )
        .unwrap();
        assert_eq!(leray_project(&b, &shear).unwrap().components, shear.components);

        let mut f = Field::zeros(FieldName::U, 2, b.len(), false);
        let i = b.index_of(ModeIndex([1, 0, 0])).unwrap();
        f.components[0][i] = C64::new(1.0, 0.0);
        f.components[1][i] = C64::new(1.0, 0.0);
        let p = leray_project(&b, &f).unwrap();
        assert_eq!(p.components[0][i], C64::new(0.0, 0.0));
        assert_eq!(p.components[1][i], C64::new(1.0, 0.0));

        let s = Field::zeros(FieldName::Theta, 1, b.len(), false);
        assert!(matches!(leray_project(&b, &s), Err(Error::Type(_))));
    }

    #[test]
    fn differential_identities() {
        let b = basis2();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let th = random_field(&b, FieldName::Theta, 1, false, 0.0, None, &mut rng);
        let lap = differential(&b, &th, DiffKind::Laplacian).unwrap();
        let dg = differential(
            &b,
            &differential(&b, &th, DiffKind::Gradient).unwrap(),
            DiffKind::Divergence,
        )
        .unwrap();
        for i in 0..b.len() {
            assert!((lap.components[0][i] - dg.components[0][i]).norm() < 1e-13);
        }
        let cg = differential(&b, &differential(&b, &th, DiffKind::Gradient).unwrap(), DiffKind::Curl).unwrap();
        assert_eq!(cg.max_abs(), 0.0);

        // gradient of cos x is -sin x e1
        let c = wave(&b, FieldName::Theta, ModeIndex([1, 0, 0]), 1.0, 0.0, &[1.0], false).unwrap();
        let g = differential(&b, &c, DiffKind::Gradient).unwrap();
        let s = wave(
            &b,
            FieldName::Theta,
            ModeIndex([1, 0, 0]),
            -1.0,
            -std::f64::consts::FRAC_PI_2,
            &[1.0, 0.0],
            false,
        )
        .unwrap();
        for a in 0..2 {
            for i in 0..b.len() {
                assert!((g.components[a][i] - s.components[a][i]).norm() < 1e-15);
            }
        }
        assert!(differential(&b, &g, DiffKind::Gradient).is_err());
    }

    #[test]
    fn div_curl_vanishes_in_3d() {
        let b = SpectralBasis::new(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(&b, FieldName::W, 3, false, 0.0, None, &mut rng);
        let c = differential(&b, &f, DiffKind::Curl).unwrap();
        let dc = differential(&b, &c, DiffKind::Divergence).unwrap();
        assert!(dc.max_abs() < 1e-13);
        assert!(c.hermitian_defect(&b) < 1e-15);
    }

    #[test]
    fn inner_product_examples() {
        let b = basis2();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = StateVector::new(vec![
            random_field(&b, FieldName::U, 2, true, 0.5, None, &mut rng),
            random_field(&b, FieldName::Theta, 1, false, 0.5, None, &mut rng),
        ]);
        let c = StateVector::new(vec![
            random_field(&b, FieldName::U, 2, true, 0.5, None, &mut rng),
            random_field(&b, FieldName::Theta, 1, false, 0.5, None, &mut rng),
        ]);
        let nu = [0.3, 2.0];
        let aa = inner_product(&b, &a, &a, 0.0, &nu).unwrap();
        assert!((aa - a.norm_sq()).abs() < 1e-14 * aa);
        // brute-force weighted sum
        let mut direct = 0.0;
        for (fi, (fa, fc)) in a.fields.iter().zip(&c.fields).enumerate() {
            for (ca, cc) in fa.components.iter().zip(&fc.components) {
                for (i, k) in b.modes().iter().enumerate() {
                    let lam = nu[fi] * k.norm_sq() as f64;
                    direct += lam * (ca[i].re * cc[i].re + ca[i].im * cc[i].im);
                }
            }
        }
        let ip = inner_product(&b, &a, &c, 0.5, &nu).unwrap();
        assert!((ip - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        let ip2 = inner_product(&b, &c, &a, 0.5, &nu).unwrap();
        assert!((ip - ip2).abs() <= 1e-14 * ip.abs().max(1.0));

        let e1 = StateVector::new(vec![wave(
            &b,
            FieldName::Theta,
            ModeIndex([1, 0, 0]),
            1.0,
            0.0,
            &[1.0],
            false,
        )
        .unwrap()]);
        let e2 = StateVector::new(vec![wave(
            &b,
            FieldName::Theta,
            ModeIndex([0, 2, 0]),
            1.0,
            0.0,
            &[1.0],
            false,
        )
        .unwrap()]);
        assert_eq!(inner_product_unweighted(&b, &e1, &e2, 0.0).unwrap(), 0.0);
        assert!(inner_product(&b, &a, &e1, 0.0, &nu).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn leray_is_idempotent_and_orthogonal_to_gradients(seed in any::<u64>()) {
            let b = basis2();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(&b, FieldName::U, 2, false, 0.0, None, &mut rng);
            let p = leray_project(&b, &f).unwrap();
            let pp = leray_project(&b, &p).unwrap();
            for a in 0..2 {
                for i in 0..b.len() {
                    prop_assert!((p.components[a][i] - pp.components[a][i]).norm() <= 1e-12);
                }
            }
            prop_assert!(p.divergence_defect(&b) <= 1e-13);
            prop_assert!(p.hermitian_defect(&b) == 0.0);
            let th = random_field(&b, FieldName::Theta, 1, false, 0.0, None, &mut rng);
            let mut g = differential(&b, &th, DiffKind::Gradient).unwrap();
            g.name = FieldName::U;
            let sp = StateVector::new(vec![p]);
            let sg = StateVector::new(vec![g]);
            let ip = inner_product_unweighted(&b, &sp, &sg, 0.0).unwrap();
            prop_assert!(ip.abs() <= 1e-11);
        }
    }
}
