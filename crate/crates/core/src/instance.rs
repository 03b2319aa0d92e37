//! Random sparse-recovery instances and their binary file format.
//!
//! File layout (little-endian): magic `DCPX`, version byte `0x01`, then
//! `u64` fields `m, n, p, seed`, then `f64` arrays `A` (column-major,
//! `m·n` entries), `b` (`m`) and `xhat` (`n`).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{DcError, Result};
use crate::rng::InstanceRng;

pub const MAGIC: &[u8; 4] = b"DCPX";
pub const FORMAT_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 4 * 8;
pub const DEFAULT_NOISE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub xhat: DVector<f64>,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

/// Draws `A` with unit-norm Gaussian columns, a `p`-sparse Gaussian `xhat`
/// on a uniformly chosen support, and `b = A·xhat + noise·u`.
///
/// Draw order: the entries of `A` column by column, the support (partial
/// Fisher–Yates), the nonzeros of `xhat` in increasing index order, then `u`.
pub fn generate_instance(m: usize, n: usize, p: usize, noise: f64, seed: u64) -> Result<ProblemInstance> {
    if m == 0 || n == 0 || p == 0 {
        return Err(DcError::InvalidParameter(
            "m, n and p must all be at least 1".into(),
        ));
    }
    if p > n {
        return Err(DcError::PExceedsN { p, n });
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(DcError::InvalidParameter(format!(
            "noise level must be finite and non-negative, got {noise}"
        )));
    }
    let mut rng = InstanceRng::new(seed);

    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        for i in 0..m {
            a[(i, j)] = rng.gaussian();
        }
    }
    for mut col in a.column_iter_mut() {
        let nrm = col.norm();
        col /= nrm;
    }

    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..p {
        let j = i + rng.below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut support = idx[..p].to_vec();
    support.sort_unstable();
    let mut xhat = DVector::zeros(n);
    for &j in &support {
        // A zero draw has probability zero but would break the sparsity count.
        let mut v = rng.gaussian();
        while v == 0.0 {
            v = rng.gaussian();
        }
        xhat[j] = v;
    }

    let mut b = &a * &xhat;
    if noise > 0.0 {
        for bi in b.iter_mut() {
            *bi += noise * rng.gaussian();
        }
    }

    Ok(ProblemInstance {
        a,
        b,
        xhat,
        m,
        n,
        p,
        seed,
    })
}

impl ProblemInstance {
    pub fn encoded_len(m: usize, n: usize) -> usize {
        HEADER_LEN + 8 * (m * n + m + n)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.m, self.n));
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        for v in [self.m as u64, self.n as u64, self.p as u64, self.seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.a.iter().chain(self.b.iter()).chain(self.xhat.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(DcError::Format("truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(DcError::Format("magic mismatch".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(DcError::Format(format!("unsupported version {}", bytes[4])));
        }
        let word = |k: usize| {
            let off = 5 + 8 * k;
            u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
        };
        let (m, n, p, seed) = (word(0), word(1), word(2), word(3));
        let dims_ok = m >= 1 && n >= 1 && p >= 1 && p <= n;
        let expected = (m as u128)
            .checked_mul(n as u128)
            .map(|mn| HEADER_LEN as u128 + 8 * (mn + m as u128 + n as u128));
        if !dims_ok || expected != Some(bytes.len() as u128) {
            return Err(DcError::Format(format!(
                "dimensions m={m} n={n} p={p} inconsistent with {} bytes",
                bytes.len()
            )));
        }
        let (m, n, p) = (m as usize, n as usize, p as usize);
        let mut vals = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let a = DMatrix::from_iterator(m, n, vals.by_ref().take(m * n));
        let b = DVector::from_iterator(m, vals.by_ref().take(m));
        let xhat = DVector::from_iterator(n, vals.by_ref().take(n));
        Ok(Self {
            a,
            b,
            xhat,
            m,
            n,
            p,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Hex SHA-256 of the encoded file contents.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
