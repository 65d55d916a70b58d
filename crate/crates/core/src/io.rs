//! Binary snapshots and CSV output.
//!
//! Snapshot layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "SPDEGAL1"
//! version    u32      1
//! dimension  u8
//! model      u8       ModelKind::code
//! fields     u16
//! cutoff     u32
//! modes      u64
//! time       f64
//! per field:
//!   name length u16, name (UTF-8)
//!   components  u8
//!   components × modes × (re f64, im f64) in basis order
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::noise::GENERATOR;
use crate::spectral::SpectralBasis;
use crate::state::{Field, FieldName, StateVector};
use crate::C64;

pub const MAGIC: &[u8; 8] = b"SPDEGAL1";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const ENGINE_VERSION: &str = concat!("spdegal ", env!("CARGO_PKG_VERSION"));
pub const CSV_SCHEMA: u32 = 1;

/// Norm and time conventions written into every CSV header.
pub const CONVENTIONS: &str = "norms are coefficient sums over k and -k (|Φ|² = Σ|c_k|²); \
V2 = <AΦ,Φ>; A2 = |AΦ|²; functional = running sup V2 + trapezoid ∫A2; \
runs stop at the first grid time past the cap";

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub kind: ModelKind,
    pub cutoff: usize,
    pub modes: u64,
    pub time: f64,
    pub state: StateVector,
}

pub fn encode_snapshot(kind: ModelKind, basis: &SpectralBasis, state: &StateVector, time: f64) -> Result<Vec<u8>> {
    let n = basis.len();
    let mut out = Vec::with_capacity(40 + state.fields.len() * 3 * n * 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.push(basis.dim() as u8);
    out.push(kind.code());
    out.extend_from_slice(&(state.fields.len() as u16).to_le_bytes());
    out.extend_from_slice(&(basis.cutoff() as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&time.to_le_bytes());
    for f in &state.fields {
        let name = f.name.as_str().as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(f.ncomp() as u8);
        for c in &f.components {
            if c.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    found: c.len(),
                });
            }
            for z in c {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated payload: {what} needs {n} bytes at offset {}, {} left",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a snapshot file".into()));
    }
    let version = cur.u32("version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!(
            "unsupported snapshot version {version} (expected {SNAPSHOT_VERSION})"
        )));
    }
    let dim = cur.u8("dimension")? as usize;
    if dim != 2 && dim != 3 {
        return Err(Error::Format(format!("dimension {dim} is not 2 or 3")));
    }
    let code = cur.u8("model kind")?;
    let kind = ModelKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown model code {code}")))?;
    let nfields = cur.u16("field count")? as usize;
    let cutoff = cur.u32("cutoff")? as usize;
    let modes = cur.u64("mode count")?;
    let expected = (2 * cutoff as u64 + 1).pow(dim as u32) - 1;
    if modes != expected {
        return Err(Error::Format(format!(
            "mode count {modes} does not match cutoff {cutoff} in {dim}D ({expected})"
        )));
    }
    let time = cur.f64("time")?;
    let roster = kind.roster(dim);
    if nfields != roster.len() {
        return Err(Error::Format(format!(
            "{} expects {} fields, snapshot has {nfields}",
            kind.as_str(),
            roster.len()
        )));
    }
    let n = modes as usize;
    let mut fields = Vec::with_capacity(nfields);
    for slot in &roster {
        let len = cur.u16("field name length")? as usize;
        let raw = cur.take(len, "field name")?;
        let name = std::str::from_utf8(raw)
            .ok()
            .and_then(FieldName::parse)
            .ok_or_else(|| Error::Format(format!("bad field name {:?}", String::from_utf8_lossy(raw))))?;
        if name != slot.name {
            return Err(Error::Format(format!("expected field {}, found {name}", slot.name)));
        }
        let ncomp = cur.u8("component count")? as usize;
        if ncomp != slot.ncomp {
            return Err(Error::Format(format!(
                "field {name} has {ncomp} components, expected {}",
                slot.ncomp
            )));
        }
        let mut components = Vec::with_capacity(ncomp);
        for _ in 0..ncomp {
            let raw = cur.take(n * 16, "coefficients")?;
            components.push(
                raw.chunks_exact(16)
                    .map(|c| {
                        C64::new(
                            f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                            f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                        )
                    })
                    .collect(),
            );
        }
        fields.push(Field {
            name,
            components,
            solenoidal: slot.solenoidal,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(Snapshot {
        dim,
        kind,
        cutoff,
        modes,
        time,
        state: StateVector::new(fields),
    })
}

pub fn write_snapshot(
    path: &Path,
    kind: ModelKind,
    basis: &SpectralBasis,
    state: &StateVector,
    time: f64,
) -> Result<()> {
    let bytes = encode_snapshot(kind, basis, state, time)?;
    fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_snapshot(&bytes)
}

/// Shortest round-trip scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

/// A CSV document with the standard comment header.
#[derive(Clone, Debug)]
pub struct Csv {
    text: String,
    ncols: usize,
}

impl Csv {
    /// `meta` lines are appended to the header as `# key: value`.
    pub fn new(columns: &[&str], meta: &[(&str, String)]) -> Csv {
        let mut text = String::new();
        let _ = writeln!(text, "# {ENGINE_VERSION}");
        let _ = writeln!(text, "# schema: {CSV_SCHEMA}");
        let _ = writeln!(text, "# generator: {GENERATOR}");
        let _ = writeln!(text, "# conventions: {CONVENTIONS}");
        for (k, v) in meta {
            let _ = writeln!(text, "# {k}: {v}");
        }
        text.push_str(&columns.join(","));
        text.push('\n');
        Csv {
            text,
            ncols: columns.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.ncols);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn num_row(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.row(&cells);
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{random_state, Model, ModelSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn model(kind: ModelKind, dim: usize, cutoff: usize) -> Model {
        let spec = ModelSpec::new(kind, dim);
        Model::new(spec, Arc::new(SpectralBasis::new(dim, cutoff).unwrap())).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        for kind in ModelKind::ALL {
            for (dim, cutoff) in [(2, 3), (3, 2)] {
                let m = model(kind, dim, cutoff);
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                let phi = random_state(&m, 0.5, None, &mut rng);
                let bytes = encode_snapshot(kind, m.basis(), &phi, 0.125).unwrap();
                let back = decode_snapshot(&bytes).unwrap();
                assert_eq!(back.state, phi);
                assert_eq!(back.time.to_bits(), 0.125f64.to_bits());
                assert_eq!((back.dim, back.kind, back.cutoff), (dim, kind, cutoff));
            }
        }
    }

    #[test]
    fn header_of_cbf_at_cutoff_four() {
        let m = model(ModelKind::Cbf, 2, 4);
        let bytes = encode_snapshot(ModelKind::Cbf, m.basis(), &m.zero_state(), 0.0).unwrap();
        assert_eq!(&bytes[..8], b"SPDEGAL1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes[12], 2);
        assert_eq!(bytes[13], 0);
        assert_eq!(u16::from_le_bytes(bytes[14..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 80);
        // name "u", 2 components, 80 modes of 16 bytes each
        assert_eq!(bytes.len(), 36 + 2 + 1 + 1 + 2 * 80 * 16);
    }

    #[test]
    fn rejects_corruption() {
        let m = model(ModelKind::Mhd, 2, 2);
        let good = encode_snapshot(ModelKind::Mhd, m.basis(), &m.zero_state(), 1.0).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_snapshot(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = good.clone();
        bad[8] = 2;
        assert!(matches!(decode_snapshot(&bad), Err(Error::Format(m)) if m.contains("version")));
        for cut in [10, 30, good.len() - 1] {
            assert!(matches!(decode_snapshot(&good[..cut]), Err(Error::Format(m)) if m.contains("truncated")));
        }
        let mut long = good.clone();
        long.push(0);
        assert!(decode_snapshot(&long).is_err());
        let mut bad = good;
        bad[13] = 9;
        assert!(decode_snapshot(&bad).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.snap");
        let m = model(ModelKind::Boussinesq, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random_state(&m, 1.0, None, &mut rng);
        write_snapshot(&p, ModelKind::Boussinesq, m.basis(), &phi, 2.5).unwrap();
        assert_eq!(read_snapshot(&p).unwrap().state, phi);
        assert!(matches!(read_snapshot(&dir.path().join("missing")), Err(Error::Io(_))));
    }

    #[test]
    fn csv_header_and_rows() {
        let mut c = Csv::new(&["t", "H2"], &[("command", "simulate".into())]);
        c.num_row(&[0.0, 0.1]);
        c.num_row(&[f64::INFINITY, 1e-300]);
        let s = c.as_str();
        assert!(s.starts_with("# spdegal "));
        assert!(s.contains(GENERATOR));
        assert!(s.contains("# command: simulate\nt,H2\n0e0,1e-1\ninf,1e-300\n"));
    }

    proptest! {
        #[test]
        fn formatted_floats_roundtrip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = fmt_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
