//! Fourier mode bookkeeping on the torus `[0, 2π)^d`.
//!
//! Modes are the nonzero integer wavevectors `k` with `|k_i| <= cutoff`,
//! ordered by `|k|²` and then lexicographically. The first `n` modes of that
//! ordering span the Galerkin space of order `n`; [`project_pn`] and
//! [`project_qn`] realize the complementary projections onto it and its tail.

use crate::error::{Error, Result};
use crate::C64;

/// A nonzero integer wavevector. Unused trailing components are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeIndex(pub [i32; 3]);

impl ModeIndex {
    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    pub fn neg(&self) -> ModeIndex {
        ModeIndex([-self.0[0], -self.0[1], -self.0[2]])
    }

    pub fn as_f64(&self) -> [f64; 3] {
        [self.0[0] as f64, self.0[1] as f64, self.0[2] as f64]
    }
}

/// Ordered mode lattice with diffusivity-free Laplacian eigenvalues `μ_k = |k|²`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    dim: usize,
    cutoff: usize,
    modes: Vec<ModeIndex>,
    mu: Vec<f64>,
    // cube position -> mode index (usize::MAX for the origin)
    lookup: Vec<usize>,
    conj: Vec<usize>,
}

/// Number of retained modes per scalar field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GalerkinLevel(usize);

impl GalerkinLevel {
    pub fn new(n: usize, basis: &SpectralBasis) -> Result<Self> {
        if n == 0 || n > basis.len() {
            return Err(Error::Config(format!("Galerkin level {n} outside 1..={}", basis.len())));
        }
        Ok(GalerkinLevel(n))
    }

    /// The identity level: every mode of the basis is retained.
    pub fn full(basis: &SpectralBasis) -> Self {
        GalerkinLevel(basis.len())
    }

    pub fn get(&self) -> usize {
        self.0
    }
}

/// All nonzero `k` with `|k_i| <= cutoff`, sorted by `(|k|², k)`.
pub fn enumerate_modes(dim: usize, cutoff: usize) -> Result<Vec<ModeIndex>> {
    if dim != 2 && dim != 3 {
        return Err(Error::Config(format!("dimension must be 2 or 3, got {dim}")));
    }
    if cutoff == 0 {
        return Err(Error::Config("cutoff must be at least 1".into()));
    }
    let c = cutoff as i32;
    let zrange = if dim == 3 { -c..=c } else { 0..=0 };
    let mut modes = Vec::with_capacity((2 * cutoff + 1).pow(dim as u32) - 1);
    for x in -c..=c {
        for y in -c..=c {
            for z in zrange.clone() {
                if x != 0 || y != 0 || z != 0 {
                    modes.push(ModeIndex([x, y, z]));
                }
            }
        }
    }
    modes.sort_by(|a, b| a.norm_sq().cmp(&b.norm_sq()).then(a.cmp(b)));
    Ok(modes)
}

impl SpectralBasis {
    pub fn new(dim: usize, cutoff: usize) -> Result<Self> {
        let modes = enumerate_modes(dim, cutoff)?;
        let side = 2 * cutoff + 1;
        let mut lookup = vec![usize::MAX; side.pow(dim as u32)];
        let cube_pos = |k: &ModeIndex| -> usize {
            let mut pos = 0usize;
            for axis in 0..dim {
                pos = pos * side + (k.0[axis] + cutoff as i32) as usize;
            }
            pos
        };
        for (i, k) in modes.iter().enumerate() {
            lookup[cube_pos(k)] = i;
        }
        let conj = modes.iter().map(|k| lookup[cube_pos(&k.neg())]).collect();
        let mu = modes.iter().map(|k| k.norm_sq() as f64).collect();
        Ok(SpectralBasis {
            dim,
            cutoff,
            modes,
            mu,
            lookup,
            conj,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> ModeIndex {
        self.modes[i]
    }

    /// Base eigenvalues `μ_k = |k|²` in basis order.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Position of `-k` for the mode at position `i`.
    pub fn conj_index(&self, i: usize) -> usize {
        self.conj[i]
    }

    pub fn index_of(&self, k: ModeIndex) -> Option<usize> {
        let c = self.cutoff as i32;
        let side = 2 * self.cutoff + 1;
        let mut pos = 0usize;
        for axis in 0..3 {
            let v = k.0[axis];
            if axis >= self.dim {
                if v != 0 {
                    return None;
                }
                continue;
            }
            if v.abs() > c {
                return None;
            }
            pos = pos * side + (v + c) as usize;
        }
        match self.lookup[pos] {
            usize::MAX => None,
            i => Some(i),
        }
    }

    /// Largest level whose modes all satisfy `|k|² <= radius²`.
    pub fn level_for_radius(&self, radius: f64) -> Result<GalerkinLevel> {
        let r2 = radius * radius;
        let n = self.mu.partition_point(|&m| m <= r2 + 1e-9);
        GalerkinLevel::new(n, self)
    }

    /// True when the first `n` modes are closed under `k -> -k`, which is
    /// what a real-valued Galerkin system needs.
    pub fn is_symmetric_level(&self, level: GalerkinLevel) -> bool {
        (0..level.get()).all(|i| self.conj[i] < level.get())
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                found: len,
            });
        }
        Ok(())
    }
}

/// `(Σ_k (ν μ_k)^{2α} |v̂_k|²)^{1/2}`.
pub fn sobolev_seminorm(basis: &SpectralBasis, v: &[C64], alpha: f64, diffusivity: f64) -> Result<f64> {
    basis.check_len(v.len())?;
    if !alpha.is_finite() {
        return Err(Error::Argument("alpha must be finite".into()));
    }
    Ok(weighted_sq(basis, v, 0, alpha, diffusivity).sqrt())
}

fn weighted_sq(basis: &SpectralBasis, v: &[C64], from: usize, alpha: f64, nu: f64) -> f64 {
    v.iter()
        .zip(basis.mu())
        .skip(from)
        .map(|(c, &m)| {
            let w = if alpha == 0.0 { 1.0 } else { (nu * m).powf(2.0 * alpha) };
            w * c.norm_sqr()
        })
        .sum()
}

/// `P_n v`: keeps the first `n` modes in basis order.
pub fn project_pn(basis: &SpectralBasis, v: &[C64], level: GalerkinLevel) -> Result<Vec<C64>> {
    basis.check_len(v.len())?;
    GalerkinLevel::new(level.get(), basis)?;
    let mut out = v.to_vec();
    out[level.get()..].fill(C64::new(0.0, 0.0));
    Ok(out)
}

/// `Q_n v = v - P_n v`.
pub fn project_qn(basis: &SpectralBasis, v: &[C64], level: GalerkinLevel) -> Result<Vec<C64>> {
    basis.check_len(v.len())?;
    GalerkinLevel::new(level.get(), basis)?;
    let mut out = v.to_vec();
    out[..level.get()].fill(C64::new(0.0, 0.0));
    Ok(out)
}

/// Returns `(|Q_n v|_{a1}, λ_n^{a1-a2} |Q_n v|_{a2})` where `λ_n` is the
/// scaled eigenvalue of the `n`-th retained mode. The first never exceeds the
/// second.
pub fn poincare_gap(
    basis: &SpectralBasis,
    v: &[C64],
    level: GalerkinLevel,
    a1: f64,
    a2: f64,
    diffusivity: f64,
) -> Result<(f64, f64)> {
    if a1.partial_cmp(&a2) != Some(std::cmp::Ordering::Less) {
        return Err(Error::Argument(format!("need a1 < a2, got {a1} >= {a2}")));
    }
    basis.check_len(v.len())?;
    let n = GalerkinLevel::new(level.get(), basis)?.get();
    let lambda_n = diffusivity * basis.mu()[n - 1];
    let lhs = weighted_sq(basis, v, n, a1, diffusivity).sqrt();
    let tail_a2 = weighted_sq(basis, v, n, a2, diffusivity).sqrt();
    Ok((lhs, lambda_n.powf(a1 - a2) * tail_a2))
}
