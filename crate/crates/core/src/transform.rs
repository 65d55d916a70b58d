//! Zero-padded transforms between basis coefficients and collocation grids.
//!
//! Grid points are `x_j = 2π j / m` per axis and a field is evaluated as
//! `f(x) = Σ_k c_k e^{i k·x}`. Truncating a grid transform back to the basis
//! is the dealiasing step.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::spectral::SpectralBasis;
use crate::C64;

/// Supported padding factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pad {
    One,
    ThreeHalves,
    Two,
}

impl Pad {
    pub fn from_f64(p: f64) -> Result<Pad> {
        if p == 1.0 {
            Ok(Pad::One)
        } else if p == 1.5 {
            Ok(Pad::ThreeHalves)
        } else if p == 2.0 {
            Ok(Pad::Two)
        } else {
            Err(Error::Config(format!("unsupported pad {p}; use 1, 1.5 or 2")))
        }
    }

    fn ratio(&self) -> (usize, usize) {
        match self {
            Pad::One => (1, 1),
            Pad::ThreeHalves => (3, 2),
            Pad::Two => (2, 1),
        }
    }

    /// Smallest even integer `>= pad · (2·cutoff + 1)`.
    pub fn grid_size(&self, cutoff: usize) -> usize {
        let (num, den) = self.ratio();
        let m = (num * (2 * cutoff + 1)).div_ceil(den);
        m + m % 2
    }
}

/// A collocation grid bound to one basis.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    m: usize,
    pad: Pad,
    nmodes: usize,
    slots: Vec<usize>,
    conj: Vec<usize>,
    /// Grid indices `0..=cutoff` and `m-cutoff..m` holding basis wavenumbers.
    kept: Vec<usize>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("m", &self.m)
            .field("pad", &self.pad)
            .finish()
    }
}

impl Grid {
    pub fn new(basis: &SpectralBasis, pad: Pad) -> Grid {
        let dim = basis.dim();
        let m = pad.grid_size(basis.cutoff());
        let slots = basis
            .modes()
            .iter()
            .map(|k| {
                let mut pos = 0usize;
                for axis in 0..dim {
                    pos = pos * m + k.0[axis].rem_euclid(m as i32) as usize;
                }
                pos
            })
            .collect();
        let mut planner = FftPlanner::new();
        Grid {
            dim,
            m,
            pad,
            nmodes: basis.len(),
            slots,
            conj: (0..basis.len()).map(|i| basis.conj_index(i)).collect(),
            kept: (0..=basis.cutoff()).chain(m - basis.cutoff()..m).collect(),
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    /// Points per axis.
    pub fn side(&self) -> usize {
        self.m
    }

    pub fn pad(&self) -> Pad {
        self.pad
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical coordinates of grid point `flat`, row-major over axes.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let h = 2.0 * std::f64::consts::PI / self.m as f64;
        let mut x = [0.0; 3];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            x[axis] = (rest % self.m) as f64 * h;
            rest /= self.m;
        }
        x
    }

    /// Multi-dimensional FFT. Lines along axis `a` are transformed only where
    /// every earlier axis index is a basis wavenumber: for the inverse those
    /// lines hold the only nonzero data, for the forward transform they hold
    /// the only outputs that are read back.
    fn transform(&self, buf: &mut [C64], fft: &Arc<dyn Fft<f64>>, inverse: bool) {
        let m = self.m;
        let d = self.dim;
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let axes: Vec<usize> = if inverse {
            (0..d).rev().collect()
        } else {
            (0..d).collect()
        };
        let mut lines: Vec<C64> = Vec::new();
        for a in axes {
            let stride = m.pow((d - 1 - a) as u32);
            let block = stride * m;
            // prefixes over the restricted earlier axes
            let mut prefixes = vec![0usize];
            for _ in 0..a {
                prefixes = prefixes
                    .iter()
                    .flat_map(|&p| self.kept.iter().map(move |&k| p * m + k))
                    .collect();
            }
            if stride == 1 {
                for &p in &prefixes {
                    fft.process_with_scratch(&mut buf[p * m..(p + 1) * m], &mut scratch);
                }
                continue;
            }
            lines.resize(prefixes.len() * block, C64::new(0.0, 0.0));
            for (b, &p) in prefixes.iter().enumerate() {
                let src = &buf[p * block..(p + 1) * block];
                let dst = &mut lines[b * block..(b + 1) * block];
                for j in 0..m {
                    for off in 0..stride {
                        dst[off * m + j] = src[j * stride + off];
                    }
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            for (b, &p) in prefixes.iter().enumerate() {
                let src = &lines[b * block..(b + 1) * block];
                let dst = &mut buf[p * block..(p + 1) * block];
                for j in 0..m {
                    for off in 0..stride {
                        dst[j * stride + off] = src[off * m + j];
                    }
                }
            }
        }
    }

    /// Complex grid values of one coefficient array.
    pub fn to_physical_complex(&self, coeffs: &[C64]) -> Result<Vec<C64>> {
        if coeffs.len() != self.nmodes {
            return Err(Error::Shape {
                expected: self.nmodes,
                found: coeffs.len(),
            });
        }
        let mut buf = vec![C64::new(0.0, 0.0); self.len()];
        for (&s, &c) in self.slots.iter().zip(coeffs) {
            buf[s] = c;
        }
        self.transform(&mut buf, &self.inverse, true);
        Ok(buf)
    }

    /// Real grid values of one coefficient array; the imaginary residue of a
    /// Hermitian-symmetric input is discarded.
    pub fn to_physical(&self, coeffs: &[C64]) -> Result<Vec<f64>> {
        Ok(self.to_physical_complex(coeffs)?.into_iter().map(|z| z.re).collect())
    }

    /// Real grid values of several coefficient arrays, transforming two
    /// Hermitian inputs per complex FFT as `f + i g`.
    pub fn to_physical_many(&self, coeffs: &[&[C64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(coeffs.len());
        for pair in coeffs.chunks(2) {
            if pair.len() == 1 {
                out.push(self.to_physical(pair[0])?);
                continue;
            }
            for c in pair {
                if c.len() != self.nmodes {
                    return Err(Error::Shape {
                        expected: self.nmodes,
                        found: c.len(),
                    });
                }
            }
            let mut buf = vec![C64::new(0.0, 0.0); self.len()];
            let i = C64::new(0.0, 1.0);
            for ((&s, &a), &b) in self.slots.iter().zip(pair[0]).zip(pair[1]) {
                buf[s] = a + i * b;
            }
            self.transform(&mut buf, &self.inverse, true);
            out.push(buf.iter().map(|z| z.re).collect());
            out.push(buf.iter().map(|z| z.im).collect());
        }
        Ok(out)
    }

    /// Forward transforms of several real grids, two per complex FFT.
    pub fn to_spectral_many(&self, values: &[&[f64]]) -> Result<Vec<Vec<C64>>> {
        let mut out = Vec::with_capacity(values.len());
        for pair in values.chunks(2) {
            if pair.len() == 1 {
                out.push(self.to_spectral(pair[0])?);
                continue;
            }
            for v in pair {
                if v.len() != self.len() {
                    return Err(Error::Shape {
                        expected: self.len(),
                        found: v.len(),
                    });
                }
            }
            let mut buf: Vec<C64> = pair[0].iter().zip(pair[1]).map(|(&a, &b)| C64::new(a, b)).collect();
            self.transform(&mut buf, &self.forward, false);
            let norm = 0.5 / self.len() as f64;
            let mut a = Vec::with_capacity(self.nmodes);
            let mut b = Vec::with_capacity(self.nmodes);
            for (&s, &j) in self.slots.iter().zip(&self.conj) {
                let z = buf[s];
                let zc = buf[self.slots[j]].conj();
                a.push((z + zc) * norm);
                b.push((z - zc) * C64::new(0.0, -norm));
            }
            out.push(a);
            out.push(b);
        }
        Ok(out)
    }

    /// Forward transform truncated to the basis modes.
    pub fn to_spectral(&self, values: &[f64]) -> Result<Vec<C64>> {
        if values.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                found: values.len(),
            });
        }
        let mut buf: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward, false);
        let norm = 1.0 / self.len() as f64;
        let mut out: Vec<C64> = self.slots.iter().map(|&s| buf[s] * norm).collect();
        // the transform of real data is Hermitian only up to rounding
        for (i, &j) in self.conj.iter().enumerate() {
            if i < j {
                let avg = (out[i] + out[j].conj()) * 0.5;
                out[i] = avg;
                out[j] = avg.conj();
            }
        }
        Ok(out)
    }
}
