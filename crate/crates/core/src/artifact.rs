//! Versioned binary container for the precomputed family and tables.
//!
//! Layout (little endian): magic, format version, header `{N, M, delta_v}`,
//! the 32-byte fingerprint of the grid and constraints the tables were built
//! from, the stoppable sets, bands, `tau` and `rho` per stopping stage, and
//! a SHA-256 of everything before it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::constraint::StageConstraint;
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::path::PathGrid;
use crate::reach::{Precomputed, ReachTables, StoppableSetFamily};

pub const MAGIC: [u8; 8] = *b"SSMTTR\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Identifies the discretized path and constraint rows.
pub fn fingerprint(grid: &PathGrid, constraints: &[StageConstraint]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((grid.n() as u64).to_le_bytes());
    h.update((grid.dof() as u64).to_le_bytes());
    for v in grid.stages.iter().chain(&grid.deltas) {
        h.update(v.to_le_bytes());
    }
    for c in constraints {
        h.update(c.x_max.to_le_bytes());
        h.update((c.rows.len() as u64).to_le_bytes());
        for r in &c.rows {
            for v in [r.a, r.b, r.c] {
                h.update(v.to_le_bytes());
            }
        }
        for &(b, c) in &c.x_rows {
            h.update(b.to_le_bytes());
            h.update(c.to_le_bytes());
        }
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub fingerprint: [u8; 32],
    pub family: StoppableSetFamily,
    pub tables: ReachTables,
}

/// Hashes every byte that passes through.
struct Hashing<W> {
    inner: W,
    hash: Sha256,
}

impl<W: Write> Write for Hashing<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

impl<R: Read> Read for Hashing<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }
}

impl Artifact {
    pub fn new(grid: &PathGrid, constraints: &[StageConstraint], pre: &Precomputed) -> Self {
        Self {
            fingerprint: fingerprint(grid, constraints),
            family: pre.family.clone(),
            tables: pre.tables.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Hashing {
            inner: out,
            hash: Sha256::new(),
        };
        let t = &self.tables;
        w.write_all(&MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        w.write_u64::<LE>(t.n() as u64)?;
        w.write_u64::<LE>(t.m() as u64)?;
        w.write_f64::<LE>(t.delta_v())?;
        w.write_all(&self.fingerprint)?;
        for set in self.family.sets() {
            match set {
                Some(k) => {
                    w.write_u8(1)?;
                    w.write_f64::<LE>(k.lo)?;
                    w.write_f64::<LE>(k.hi)?;
                }
                None => w.write_u8(0)?,
            }
        }
        let (band, tau, rho) = t.raw_parts();
        for b in band {
            match b {
                Some((l, h)) => {
                    w.write_u8(1)?;
                    w.write_u32::<LE>(*l)?;
                    w.write_u32::<LE>(*h)?;
                }
                None => w.write_u8(0)?,
            }
        }
        for (tau_j, rho_j) in tau.iter().zip(rho) {
            for &v in tau_j {
                w.write_f64::<LE>(v)?;
            }
            for &r in rho_j {
                w.write_u32::<LE>(r)?;
            }
        }
        let digest = w.hash.finalize();
        w.inner.write_all(&digest)?;
        w.inner.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Hashing {
            inner: input,
            hash: Sha256::new(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Artifact("not a tables artifact (bad magic)".into()));
        }
        let version = r.read_u32::<LE>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let n = read_len(&mut r, 1 << 20, "N")?;
        let m = read_len(&mut r, 1 << 20, "M")?;
        let delta_v = r.read_f64::<LE>()?;
        if !(delta_v.is_finite() && delta_v >= 0.0) {
            return Err(Error::Artifact(format!("invalid delta_v {delta_v}")));
        }
        let mut fp = [0u8; 32];
        r.read_exact(&mut fp)?;

        let count = n * (n + 1) / 2 + n + 1;
        let mut sets = Vec::with_capacity(count);
        for _ in 0..count {
            sets.push(match r.read_u8()? {
                0 => None,
                1 => {
                    let lo = r.read_f64::<LE>()?;
                    let hi = r.read_f64::<LE>()?;
                    Some(Interval::new(lo, hi).ok_or_else(|| Error::Artifact("inverted interval".into()))?)
                }
                f => return Err(Error::Artifact(format!("bad set flag {f}"))),
            });
        }
        let mut band = Vec::with_capacity(count);
        for _ in 0..count {
            band.push(match r.read_u8()? {
                0 => None,
                1 => Some((r.read_u32::<LE>()?, r.read_u32::<LE>()?)),
                f => return Err(Error::Artifact(format!("bad band flag {f}"))),
            });
        }
        let mut tau = Vec::with_capacity(n + 1);
        let mut rho = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let len = (j + 1) * (m + 1);
            let mut tau_j = vec![0.0; len];
            r.read_f64_into::<LE>(&mut tau_j)?;
            let mut rho_j = vec![0u32; len];
            r.read_u32_into::<LE>(&mut rho_j)?;
            tau.push(tau_j);
            rho.push(rho_j);
        }
        let expected = r.hash.finalize();
        let mut stored = [0u8; 32];
        r.inner.read_exact(&mut stored)?;
        if stored[..] != expected[..] {
            return Err(Error::Artifact("checksum mismatch".into()));
        }
        Ok(Self {
            fingerprint: fp,
            family: StoppableSetFamily::from_sets(n, sets)?,
            tables: ReachTables::from_raw_parts(n, m, delta_v, band, tau, rho)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Refuses tables built for a different path or different limits.
    pub fn check_matches(&self, grid: &PathGrid, constraints: &[StageConstraint]) -> Result<()> {
        if self.fingerprint != fingerprint(grid, constraints) {
            return Err(Error::Artifact(
                "artifact was built for a different path, grid or limits".into(),
            ));
        }
        Ok(())
    }
}

fn read_len(r: &mut impl Read, max: u64, what: &str) -> Result<usize> {
    let v = r.read_u64::<LE>()?;
    if v > max {
        return Err(Error::Artifact(format!("{what} = {v} is implausibly large")));
    }
    Ok(v as usize)
}
