//! DAFT-spread AFDM synthesis.
//!
//! The transmit chain is
//!
//! ```text
//! s = A(c1,N)^H F_N^H A(c2,N)^H Γ A(λ1,M) F_M A(λ2,M) x  =:  U x
//! ```
//!
//! with unitary DFT matrices and diagonal chirps `A(α,L) = diag(e^{-j2πα k²})`.
//! Turning spreading off drops the `A(λ1) F_M A(λ2)` block, which yields
//! plain AFDM (and OFDM when the chirps are zero as well).

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard interval inserted ahead of each block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Prefix {
    Cp { len: usize },
    Zp { len: usize },
    None,
}

impl Prefix {
    pub fn len(&self) -> usize {
        match *self {
            Prefix::Cp { len } | Prefix::Zp { len } => len,
            Prefix::None => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn default_true() -> bool {
    true
}

fn default_prefix() -> Prefix {
    Prefix::Cp { len: 2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformConfig {
    /// Block length N.
    pub n: usize,
    /// Active symbols M.
    pub m: usize,
    /// Subcarrier stride S (1 for L-FDMA, N/M for I-FDMA).
    pub s: usize,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
    /// Chirp applied after the M-point DFT in the spreading stage.
    #[serde(default)]
    pub lambda1: f64,
    /// Chirp applied before the M-point DFT in the spreading stage.
    #[serde(default)]
    pub lambda2: f64,
    /// DAFT spreading on (DAFT-s-AFDM / DFT-s-OFDM) or off (AFDM / OFDM).
    #[serde(default = "default_true")]
    pub spreading: bool,
    #[serde(default = "default_prefix")]
    pub prefix: Prefix,
}

impl WaveformConfig {
    /// DAFT-s-AFDM with zero spreading chirps and a CP of length 2.
    pub fn new(n: usize, m: usize, s: usize, c1: f64) -> Self {
        Self {
            n,
            m,
            s,
            c1,
            c2: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
            spreading: true,
            prefix: default_prefix(),
        }
    }

    pub fn with_chirps(mut self, c2: f64, lambda1: f64, lambda2: f64) -> Self {
        self.c2 = c2;
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self
    }

    pub fn with_spreading(mut self, spreading: bool) -> Self {
        self.spreading = spreading;
        self
    }

    pub fn with_prefix(mut self, prefix: Prefix) -> Self {
        self.prefix = prefix;
        self
    }

    /// Quadratic phase coefficient of the spread-symbol index inside each
    /// subcarrier kernel: `c2 S² - λ1`.
    pub fn delta_lambda(&self) -> f64 {
        self.c2 * (self.s * self.s) as f64 - self.lambda1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 || self.m == 0 || self.s == 0 {
            return bad("N, M and S must be positive".into());
        }
        if self.m > self.n {
            return bad(format!("M = {} exceeds N = {}", self.m, self.n));
        }
        if self.m * self.s > self.n {
            return bad(format!("M·S = {} exceeds N = {}", self.m * self.s, self.n));
        }
        if self.s != 1 && self.m * self.s != self.n {
            return bad(format!("stride S = {} must be 1 or N/M", self.s));
        }
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} is not finite"));
            }
        }
        if let Prefix::Cp { len } = self.prefix {
            let k = 2.0 * self.n as f64 * self.c1;
            if (k - k.round()).abs() > 1e-9 {
                return bad(format!("cyclic prefix needs 2·N·c1 integer, got {k}"));
            }
            if len >= self.n {
                return bad(format!("prefix length {len} must be below N = {}", self.n));
            }
        }
        Ok(())
    }
}

#[inline]
fn cis_turns(turns: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * turns.rem_euclid(1.0))
}

/// Diagonal of the chirp matrix `A(α, size)`.
pub fn chirp_diagonal(alpha: f64, size: usize) -> DVector<Complex64> {
    DVector::from_fn(size, |k, _| {
        // reduce α k² modulo 1 before scaling by 2π
        let k2 = (k * k) as f64;
        cis_turns(-(alpha * k2))
    })
}

/// `diag(e^{-j2πα k²})`, k = 0..size-1.
pub fn chirp_matrix(alpha: f64, size: usize) -> DMatrix<Complex64> {
    DMatrix::from_diagonal(&chirp_diagonal(alpha, size))
}

/// Unitary DFT matrix `F[k][n] = e^{-j2πkn/size} / √size`.
pub fn dft_matrix(size: usize) -> DMatrix<Complex64> {
    let norm = (size as f64).sqrt().recip();
    DMatrix::from_fn(size, size, |k, n| {
        cis_turns(-(((k * n) % size) as f64) / size as f64) * norm
    })
}

/// N×M 0/1 subcarrier mapping: column `m` has its one at row `m·S`.
pub fn mapping_matrix(cfg: &WaveformConfig) -> Result<DMatrix<f64>> {
    if cfg.m * cfg.s > cfg.n {
        return Err(Error::InvalidConfig(format!(
            "M·S = {} exceeds N = {}",
            cfg.m * cfg.s,
            cfg.n
        )));
    }
    let mut g = DMatrix::zeros(cfg.n, cfg.m);
    for m in 0..cfg.m {
        g[(m * cfg.s, m)] = 1.0;
    }
    Ok(g)
}

/// The N×M modulation matrix `U`.
pub fn modulation_matrix(cfg: &WaveformConfig) -> Result<DMatrix<Complex64>> {
    cfg.validate()?;
    let (n, m) = (cfg.n, cfg.m);
    // IDAFT: A(c1)^H F_N^H A(c2)^H, built by scaling rows/columns of F_N^H.
    let outer = chirp_diagonal(cfg.c1, n).map(|z| z.conj());
    let inner = chirp_diagonal(cfg.c2, n).map(|z| z.conj());
    let f_n_h = dft_matrix(n).adjoint();
    let idaft = DMatrix::from_fn(n, n, |r, c| outer[r] * f_n_h[(r, c)] * inner[c]);

    // Columns of the IDAFT selected by the mapping.
    let selected = DMatrix::from_fn(n, m, |r, c| idaft[(r, c * cfg.s)]);
    if !cfg.spreading {
        return Ok(selected);
    }
    let a1 = chirp_diagonal(cfg.lambda1, m);
    let a2 = chirp_diagonal(cfg.lambda2, m);
    let f_m = dft_matrix(m);
    let spread = DMatrix::from_fn(m, m, |r, c| a1[r] * f_m[(r, c)] * a2[c]);
    Ok(selected * spread)
}

/// Caches `U` for repeated modulation.
#[derive(Debug, Clone)]
pub struct Modulator {
    cfg: WaveformConfig,
    u: DMatrix<Complex64>,
}

impl Modulator {
    pub fn new(cfg: &WaveformConfig) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            u: modulation_matrix(cfg)?,
        })
    }

    pub fn config(&self) -> &WaveformConfig {
        &self.cfg
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.u
    }

    /// Prefix-free N-sample block `U x`.
    pub fn modulate(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cfg.m {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.m,
                actual: x.len(),
            });
        }
        let n = self.cfg.n;
        let mut s = vec![Complex64::new(0.0, 0.0); n];
        for (c, &xc) in x.iter().enumerate() {
            if xc == Complex64::new(0.0, 0.0) {
                continue;
            }
            let col = self.u.column(c);
            for (acc, u) in s.iter_mut().zip(col.iter()) {
                *acc += u * xc;
            }
        }
        Ok(s)
    }

    /// Matched demodulation `U^H s`.
    pub fn demodulate(&self, s: &[Complex64]) -> Result<Vec<Complex64>> {
        if s.len() != self.cfg.n {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.n,
                actual: s.len(),
            });
        }
        Ok((0..self.cfg.m)
            .map(|c| self.u.column(c).iter().zip(s).map(|(u, v)| u.conj() * v).sum())
            .collect())
    }

    /// Block with the configured guard interval prepended.
    pub fn transmit(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let s = self.modulate(x)?;
        Ok(add_prefix(&self.cfg.prefix, &s))
    }
}

/// Convenience wrapper around [`Modulator`].
pub fn modulate(cfg: &WaveformConfig, x: &[Complex64]) -> Result<Vec<Complex64>> {
    Modulator::new(cfg)?.modulate(x)
}

/// Prepend the guard interval: a copy of the last `len` samples for CP,
/// zeros for ZP.
pub fn add_prefix(prefix: &Prefix, s: &[Complex64]) -> Vec<Complex64> {
    let n = s.len();
    match *prefix {
        Prefix::Cp { len } => s[n - len..].iter().chain(s).copied().collect(),
        Prefix::Zp { len } => std::iter::repeat_n(Complex64::new(0.0, 0.0), len)
            .chain(s.iter().copied())
            .collect(),
        Prefix::None => s.to_vec(),
    }
}

/// Closed-form column `g_m` of `U`, evaluated element-wise.
///
/// With spreading,
/// `g_m[n] = e^{j2π(c1 n² - λ2 m²)}/√(NM) Σ_l e^{j2π[Δλ l² + (S n/N - m/M) l]}`
/// with `Δλ = c2 S² - λ1`; without spreading the column is a single chirp
/// subcarrier.
pub fn subcarrier_basis(cfg: &WaveformConfig, m: usize) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    if m >= cfg.m {
        return Err(Error::IndexOutOfRange { index: m, limit: cfg.m });
    }
    let (nn, mm, s) = (cfg.n as f64, cfg.m as f64, cfg.s as f64);
    let mf = m as f64;
    if !cfg.spreading {
        let q = (m * cfg.s) as f64;
        let norm = nn.sqrt().recip();
        return Ok((0..cfg.n)
            .map(|n| {
                let nf = n as f64;
                cis_turns(cfg.c1 * nf * nf + cfg.c2 * q * q + nf * q / nn) * norm
            })
            .collect());
    }
    let dl = cfg.delta_lambda();
    let norm = (nn * mm).sqrt().recip();
    Ok((0..cfg.n)
        .map(|n| {
            let nf = n as f64;
            let lin = s * nf / nn - mf / mm;
            let inner: Complex64 = (0..cfg.m)
                .map(|l| {
                    let lf = l as f64;
                    cis_turns(dl * lf * lf + lin * lf)
                })
                .sum();
            cis_turns(cfg.c1 * nf * nf - cfg.lambda2 * mf * mf) * inner * norm
        })
        .collect())
}

/// Write a signal as CSV `index,re,im`.
pub fn write_signal_csv<W: Write>(w: W, s: &[Complex64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "re", "im"])?;
    for (i, v) in s.iter().enumerate() {
        out.write_record([i.to_string(), v.re.to_string(), v.im.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
