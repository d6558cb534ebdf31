//! Discrete ambiguity functions: empirical evaluation, Monte Carlo expectation
//! over random symbols, and the closed-form expectation
//!
//! ```text
//! E|χ(τ,ν)|² = σ⁴ (T1 + T2 + (μ4 - 2) T3)
//! ```
//!
//! for DAFT-spread blocks built from i.i.d. zero-mean, circularly symmetric
//! symbols.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::constellation::{Constellation, Pmf};
use crate::error::{Error, Result};
use crate::rng::{trial_chunks, trial_rng};
use crate::waveform::{Modulator, WaveformConfig};

/// Periodic (circular shift) or aperiodic (linear overlap) correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AfMode {
    Periodic,
    Aperiodic,
}

impl AfMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AfMode::Periodic => "periodic",
            AfMode::Aperiodic => "aperiodic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfQuery {
    pub tau: i64,
    pub nu: f64,
    pub mode: AfMode,
}

impl AfQuery {
    pub fn new(tau: i64, nu: f64, mode: AfMode) -> Self {
        Self { tau, nu, mode }
    }

    pub fn periodic(tau: i64, nu: f64) -> Self {
        Self::new(tau, nu, AfMode::Periodic)
    }

    pub fn aperiodic(tau: i64, nu: f64) -> Self {
        Self::new(tau, nu, AfMode::Aperiodic)
    }
}

/// Number of summands `L_τ`: N (periodic) or N - |τ| (aperiodic).
pub fn overlap_len(n: usize, tau: i64, mode: AfMode) -> usize {
    match mode {
        AfMode::Periodic => n,
        AfMode::Aperiodic => n.saturating_sub(tau.unsigned_abs() as usize),
    }
}

/// Dirichlet kernel `S_L(x) = sin(πLx) / sin(πx)`, with the limit
/// `L (-1)^{k(L-1)}` at integer `x = k`.
pub fn dirichlet(l: usize, x: f64) -> f64 {
    let s = (PI * x).sin();
    if s.abs() < 1e-12 {
        let k = x.round() as i64;
        let odd = (k.rem_euclid(2) == 1) && (l % 2 != 1);
        return if odd { -(l as f64) } else { l as f64 };
    }
    (PI * l as f64 * x).sin() / s
}

/// `D_L(x) = S_L(x)²`.
pub fn dirichlet_sq(l: usize, x: f64) -> f64 {
    let v = dirichlet(l, x);
    v * v
}

/// `χ(τ,ν) = Σ_n s[n] s*[n-τ] e^{-j2πνn/N}` over the periodic or aperiodic
/// index set. Aperiodic queries with |τ| ≥ N return 0.
pub fn empirical_af(s: &[Complex64], q: &AfQuery) -> Complex64 {
    let n = s.len();
    let w = -2.0 * PI * q.nu / n as f64;
    let term = |i: usize, j: usize| s[i] * s[j].conj() * Complex64::from_polar(1.0, w * i as f64);
    match q.mode {
        AfMode::Periodic => {
            let t = q.tau.rem_euclid(n as i64) as usize;
            (0..n).map(|i| term(i, (i + n - t) % n)).sum()
        }
        AfMode::Aperiodic => {
            let t = q.tau.unsigned_abs() as usize;
            if t >= n {
                return Complex64::new(0.0, 0.0);
            }
            if q.tau >= 0 {
                (t..n).map(|i| term(i, i - t)).sum()
            } else {
                (0..n - t).map(|i| term(i, i + t)).sum()
            }
        }
    }
}

/// Closed-form components at one cell, for unit symbol power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AfTerms {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl AfTerms {
    /// `σ⁴ (T1 + T2 + (μ4 - 2) T3)`, clamped at zero.
    pub fn total(&self, mu4: f64, sigma2: f64) -> f64 {
        (sigma2 * sigma2 * (self.t1 + self.t2 + (mu4 - 2.0) * self.t3)).max(0.0)
    }
}

/// Result of [`expected_af_closed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedAf {
    pub total: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

fn require_spreading(cfg: &WaveformConfig) -> Result<()> {
    cfg.validate()?;
    if !cfg.spreading {
        return Err(Error::InvalidConfig(
            "the closed-form expected AF assumes DAFT spreading".into(),
        ));
    }
    Ok(())
}

/// T1, T2, T3 at one cell. `cfg` must have spreading enabled.
pub fn af_terms(cfg: &WaveformConfig, q: &AfQuery) -> AfTerms {
    let (n, m, s) = (cfg.n, cfg.m, cfg.s);
    let (nf, mf, sf) = (n as f64, m as f64, s as f64);
    let tau = q.tau as f64;
    let lt = overlap_len(n, q.tau, q.mode);
    if lt == 0 {
        return AfTerms {
            t1: 0.0,
            t2: 0.0,
            t3: 0.0,
        };
    }
    let dl = cfg.delta_lambda();
    let a = 2.0 * nf * cfg.c1 * tau;
    let phi = a - q.nu;
    let n2 = nf * nf;

    let t1 = dirichlet_sq(m, sf * tau / nf) * dirichlet_sq(lt, phi / nf) / n2;

    let mut t2 = 0.0;
    for k in -(lt as i64 - 1)..=(lt as i64 - 1) {
        let kf = k as f64;
        t2 += (lt as f64 - kf.abs()) * dirichlet_sq(m, sf * kf / nf) * (2.0 * PI * kf * phi / nf).cos();
    }
    t2 /= n2;

    let xi = |k: i64| (a + sf * k as f64 - q.nu) / nf;
    let eta = |k: i64| sf * tau / nf + 2.0 * k as f64 * dl;
    let psi = match q.mode {
        AfMode::Periodic => PI * sf * mf * (nf - 1.0 - tau) / nf,
        AfMode::Aperiodic => PI * sf * mf * (nf - 1.0) / nf,
    } + 2.0 * PI * mf * (mf - 1.0) * dl;
    let mut acc = 0.0;
    for k in -(m as i64 - 1)..=(m as i64 - 1) {
        acc += dirichlet_sq(lt, xi(k)) * dirichlet_sq(m - k.unsigned_abs() as usize, eta(k));
    }
    let cos_psi = psi.cos();
    let mut cross = 0.0;
    for k in 1..m as i64 {
        cross += dirichlet(lt, xi(k))
            * dirichlet(lt, xi(k - m as i64))
            * dirichlet(m - k as usize, eta(k))
            * dirichlet(k as usize, eta(k - m as i64));
    }
    acc += 2.0 * cross * cos_psi;
    let t3 = acc / (n2 * mf);
    AfTerms { t1, t2, t3 }
}

/// Closed-form expected squared AF for unit-power symbols with normalized
/// kurtosis `mu4`.
pub fn expected_af_closed(cfg: &WaveformConfig, mu4: f64, q: &AfQuery) -> Result<ClosedAf> {
    require_spreading(cfg)?;
    let t = af_terms(cfg, q);
    Ok(ClosedAf {
        total: t.total(mu4, 1.0),
        t1: t.t1,
        t2: t.t2,
        t3: t.t3,
    })
}

/// What a surface holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    EmpiricalMc,
    ClosedForm,
    TermT1,
    TermT2,
    TermT3,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::EmpiricalMc => "empirical_mc",
            Provenance::ClosedForm => "closed_form",
            Provenance::TermT1 => "t1",
            Provenance::TermT2 => "t2",
            Provenance::TermT3 => "t3",
        }
    }
}

/// Integer delays τ ∈ (-N, N) and Doppler bins ν = q/oversample,
/// q = 0..oversample·N-1.
#[derive(Debug, Clone, PartialEq)]
pub struct AfGrid {
    pub taus: Vec<i64>,
    pub nus: Vec<f64>,
    pub oversample: usize,
}

impl AfGrid {
    pub fn full(n: usize, oversample: usize) -> Self {
        let os = oversample.max(1);
        Self {
            taus: (-(n as i64 - 1)..n as i64).collect(),
            nus: (0..n * os).map(|q| q as f64 / os as f64).collect(),
            oversample: os,
        }
    }

    pub fn len(&self) -> usize {
        self.taus.len() * self.nus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Real, nonnegative (or signed for T3) values over a delay-Doppler grid,
/// row-major in τ.
#[derive(Debug, Clone, PartialEq)]
pub struct AfSurface {
    pub taus: Vec<i64>,
    pub nus: Vec<f64>,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    pub mode: AfMode,
    pub mc_trials: Option<usize>,
}

/// Serializable description of a surface, without the values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AfSurfaceMeta {
    pub provenance: Provenance,
    pub mode: AfMode,
    pub mc_trials: Option<usize>,
    pub tau_min: i64,
    pub tau_max: i64,
    pub nu_count: usize,
    pub nu_step: f64,
}

impl AfSurface {
    pub fn at(&self, ti: usize, ni: usize) -> f64 {
        self.values[ti * self.nus.len() + ni]
    }

    pub fn row(&self, ti: usize) -> &[f64] {
        let w = self.nus.len();
        &self.values[ti * w..(ti + 1) * w]
    }

    pub fn tau_index(&self, tau: i64) -> Option<usize> {
        self.taus.iter().position(|&t| t == tau)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    pub fn meta(&self) -> AfSurfaceMeta {
        AfSurfaceMeta {
            provenance: self.provenance,
            mode: self.mode,
            mc_trials: self.mc_trials,
            tau_min: *self.taus.first().unwrap_or(&0),
            tau_max: *self.taus.last().unwrap_or(&0),
            nu_count: self.nus.len(),
            nu_step: if self.nus.len() > 1 {
                self.nus[1] - self.nus[0]
            } else {
                1.0
            },
        }
    }

    /// Append rows `tau,nu,value,term` (no header).
    pub fn write_rows<W: Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        let term = self.provenance.as_str();
        for (ti, &tau) in self.taus.iter().enumerate() {
            for (ni, &nu) in self.nus.iter().enumerate() {
                out.write_record([
                    tau.to_string(),
                    nu.to_string(),
                    self.at(ti, ni).to_string(),
                    term.to_string(),
                ])?;
            }
        }
        Ok(())
    }

    /// Write the surface as CSV with header `tau,nu,value,term`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_surfaces_csv(w, &[self])
    }
}

/// Several surfaces stacked in one CSV, distinguished by the `term` column.
pub fn write_surfaces_csv<W: Write>(w: W, surfaces: &[&AfSurface]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["tau", "nu", "value", "term"])?;
    for s in surfaces {
        s.write_rows(&mut out)?;
    }
    out.flush()?;
    Ok(())
}

/// Closed-form total and its three terms over a grid.
#[derive(Debug, Clone)]
pub struct ClosedSurfaces {
    pub total: AfSurface,
    pub t1: AfSurface,
    pub t2: AfSurface,
    pub t3: AfSurface,
}

/// Evaluate the closed form on every cell of `grid`. `sigma2` scales the
/// total by σ⁴; the terms are reported for unit power.
pub fn closed_form_surfaces(
    cfg: &WaveformConfig,
    mu4: f64,
    sigma2: f64,
    mode: AfMode,
    grid: &AfGrid,
) -> Result<ClosedSurfaces> {
    require_spreading(cfg)?;
    let rows: Vec<Vec<AfTerms>> = grid
        .taus
        .par_iter()
        .map(|&tau| {
            grid.nus
                .iter()
                .map(|&nu| af_terms(cfg, &AfQuery::new(tau, nu, mode)))
                .collect()
        })
        .collect();
    let flat: Vec<AfTerms> = rows.into_iter().flatten().collect();
    let make = |prov: Provenance, f: &dyn Fn(&AfTerms) -> f64| AfSurface {
        taus: grid.taus.clone(),
        nus: grid.nus.clone(),
        values: flat.iter().map(f).collect(),
        provenance: prov,
        mode,
        mc_trials: None,
    };
    Ok(ClosedSurfaces {
        total: make(Provenance::ClosedForm, &|t| t.total(mu4, sigma2)),
        t1: make(Provenance::TermT1, &|t| t.t1),
        t2: make(Provenance::TermT2, &|t| t.t2),
        t3: make(Provenance::TermT3, &|t| t.t3),
    })
}

/// Chunk size for Monte Carlo reductions. Fixed so that results do not
/// depend on the number of worker threads.
const MC_CHUNK: usize = 32;

fn draw_block(
    md: &Modulator,
    c: &Constellation,
    sampler: &crate::constellation::PmfSampler,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    let idx = sampler.sample_block(rng, md.config().m);
    let x: Vec<Complex64> = idx.iter().map(|&i| c.points()[i]).collect();
    md.modulate(&x)
}

/// Monte Carlo mean of `|χ(τ,ν)|²` at one cell over `trials` random blocks.
pub fn expected_af_mc(
    cfg: &WaveformConfig,
    c: &Constellation,
    pmf: &Pmf,
    q: &AfQuery,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    pmf.check_matches(c)?;
    let md = Modulator::new(cfg)?;
    let sampler = pmf.sampler()?;
    let partials: Vec<Result<f64>> = trial_chunks(trials, MC_CHUNK)
        .into_par_iter()
        .map(|range| {
            let mut acc = 0.0;
            for t in range {
                let s = draw_block(&md, c, &sampler, &mut trial_rng(seed, t as u64))?;
                acc += empirical_af(&s, q).norm_sqr();
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total / trials as f64)
}

/// Monte Carlo mean of `|χ|²` over a full grid, one FFT per delay.
pub fn expected_af_mc_grid(
    cfg: &WaveformConfig,
    c: &Constellation,
    pmf: &Pmf,
    mode: AfMode,
    grid: &AfGrid,
    trials: usize,
    seed: u64,
) -> Result<AfSurface> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    pmf.check_matches(c)?;
    let n = cfg.n;
    let fft_len = n * grid.oversample;
    if grid.nus.len() != fft_len {
        return Err(Error::DimensionMismatch {
            expected: fft_len,
            actual: grid.nus.len(),
        });
    }
    let md = Modulator::new(cfg)?;
    let sampler = pmf.sampler()?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_len);
    let cells = grid.len();
    let partials: Vec<Result<Vec<f64>>> = trial_chunks(trials, MC_CHUNK)
        .into_par_iter()
        .map(|range| {
            let mut acc = vec![0.0; cells];
            let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            for t in range {
                let s = draw_block(&md, c, &sampler, &mut trial_rng(seed, t as u64))?;
                for (ti, &tau) in grid.taus.iter().enumerate() {
                    lag_product(&s, tau, mode, &mut buf);
                    fft.process_with_scratch(&mut buf, &mut scratch);
                    let row = &mut acc[ti * fft_len..(ti + 1) * fft_len];
                    for (a, v) in row.iter_mut().zip(&buf) {
                        *a += v.norm_sqr();
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; cells];
    for p in partials {
        for (a, v) in total.iter_mut().zip(p?) {
            *a += v;
        }
    }
    let inv = 1.0 / trials as f64;
    Ok(AfSurface {
        taus: grid.taus.clone(),
        nus: grid.nus.clone(),
        values: total.into_iter().map(|v| v * inv).collect(),
        provenance: Provenance::EmpiricalMc,
        mode,
        mc_trials: Some(trials),
    })
}

/// Fill `buf` (length ≥ N, zero padded) with `s[n] s*[n-τ]` on the index set.
fn lag_product(s: &[Complex64], tau: i64, mode: AfMode, buf: &mut [Complex64]) {
    let n = s.len();
    buf.fill(Complex64::new(0.0, 0.0));
    match mode {
        AfMode::Periodic => {
            let t = tau.rem_euclid(n as i64) as usize;
            for i in 0..n {
                buf[i] = s[i] * s[(i + n - t) % n].conj();
            }
        }
        AfMode::Aperiodic => {
            let t = tau.unsigned_abs() as usize;
            if t >= n {
                return;
            }
            if tau >= 0 {
                for i in t..n {
                    buf[i] = s[i] * s[i - t].conj();
                }
            } else {
                for i in 0..n - t {
                    buf[i] = s[i] * s[i + t].conj();
                }
            }
        }
    }
}

/// Empirical `|χ|²` of one signal over a grid (used by plots and sensing
/// consistency checks).
pub fn empirical_af_surface(s: &[Complex64], mode: AfMode, grid: &AfGrid) -> Result<AfSurface> {
    let fft_len = s.len() * grid.oversample;
    if grid.nus.len() != fft_len {
        return Err(Error::DimensionMismatch {
            expected: fft_len,
            actual: grid.nus.len(),
        });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_len);
    let mut values = Vec::with_capacity(grid.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    for &tau in &grid.taus {
        lag_product(s, tau, mode, &mut buf);
        fft.process(&mut buf);
        values.extend(buf.iter().map(|v| v.norm_sqr()));
    }
    Ok(AfSurface {
        taus: grid.taus.clone(),
        nus: grid.nus.clone(),
        values,
        provenance: Provenance::EmpiricalMc,
        mode,
        mc_trials: Some(1),
    })
}

/// `sqrt(Σ (a - b)²) / sqrt(Σ b²)`, with `b` the reference.
pub fn relative_rms(a: &AfSurface, reference: &AfSurface) -> Result<f64> {
    if a.values.len() != reference.values.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.values.len(),
            actual: a.values.len(),
        });
    }
    let num: f64 = a
        .values
        .iter()
        .zip(&reference.values)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let den: f64 = reference.values.iter().map(|y| y * y).sum();
    if den <= 0.0 {
        return Err(Error::Numerical("reference surface is identically zero".into()));
    }
    Ok((num / den).sqrt())
}

/// Scale factor that maps the closed-form origin value onto the Monte Carlo
/// origin value.
pub fn origin_calibration(closed: &AfSurface, mc: &AfSurface) -> Result<f64> {
    let at_origin = |s: &AfSurface| -> Result<f64> {
        let ti = s
            .tau_index(0)
            .ok_or_else(|| Error::InvalidArgument("grid does not contain τ = 0".into()))?;
        Ok(s.at(ti, 0))
    };
    let c = at_origin(closed)?;
    if c <= 0.0 {
        return Err(Error::Numerical("closed-form origin value is not positive".into()));
    }
    Ok(at_origin(mc)? / c)
}

/// Minimal circular distance of τ to the nearest multiple of `period`.
fn slice_distance(tau: i64, period: i64) -> i64 {
    let r = tau.rem_euclid(period);
    r.min(period - r)
}

/// Outcome of the μ4-sensitivity concentration check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceSensitivityReport {
    pub delta_lambda: f64,
    /// Whether Δλ is a half-integer, the hypothesis of the property.
    pub condition_met: bool,
    /// Delay half-width around each τ ≡ 0 (mod N/S) slice that still counts
    /// as "near"; one delay resolution cell, ceil(N / (M S)).
    pub window: usize,
    pub on_slice_max: f64,
    pub off_slice_max: f64,
    pub ratio: f64,
    pub fraction: f64,
    /// `None` when the hypothesis is not met.
    pub passed: Option<bool>,
}

impl SliceSensitivityReport {
    pub fn status(&self) -> &'static str {
        match self.passed {
            None => "condition unmet",
            Some(true) => "pass",
            Some(false) => "fail",
        }
    }
}

/// μ4 sensitivity of the expected AF, which is `|Δμ4| |T3|`, compared between
/// cells near the τ ≡ 0 (mod N/S) slices and cells far from them.
pub fn check_slice_sensitivity(cfg: &WaveformConfig, mode: AfMode, fraction: f64) -> Result<SliceSensitivityReport> {
    require_spreading(cfg)?;
    let grid = AfGrid::full(cfg.n, 1);
    let surf = closed_form_surfaces(cfg, 1.0, 1.0, mode, &grid)?;
    let period = (cfg.n / cfg.s) as i64;
    let window = cfg.n.div_ceil(cfg.m * cfg.s);
    let mut on = 0.0f64;
    let mut off = 0.0f64;
    for (ti, &tau) in grid.taus.iter().enumerate() {
        let d = slice_distance(tau, period);
        let row_max = surf.t3.row(ti).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if d == 0 {
            on = on.max(row_max);
        } else if d as usize > window {
            off = off.max(row_max);
        }
    }
    let dl = cfg.delta_lambda();
    let condition_met = ((2.0 * dl) - (2.0 * dl).round()).abs() < 1e-9;
    let ratio = if on > 0.0 { off / on } else { f64::INFINITY };
    Ok(SliceSensitivityReport {
        delta_lambda: dl,
        condition_met,
        window,
        on_slice_max: on,
        off_slice_max: off,
        ratio,
        fraction,
        passed: condition_met.then_some(ratio <= fraction),
    })
}

/// Predicted T1 maxima `(m N / S, 2 N² c1 m / S - k N)` with τ ∈ (-N, N) and ν
/// reduced into [0, N).
pub fn t1_peak_locations(cfg: &WaveformConfig) -> Result<Vec<(i64, f64)>> {
    cfg.validate()?;
    let (n, s) = (cfg.n as i64, cfg.s as i64);
    let step = n / s;
    let mut out = Vec::new();
    let m_max = (n - 1) / step;
    for m in -m_max..=m_max {
        let tau = m * step;
        let nu = (2.0 * (n * n) as f64 * cfg.c1 * m as f64 / s as f64).rem_euclid(n as f64);
        // fold values that round to N back to 0
        let nu = if (n as f64 - nu).abs() < 1e-9 { 0.0 } else { nu };
        out.push((tau, nu));
    }
    Ok(out)
}

/// Cells of a T1 surface attaining its global maximum. On the integer grid
/// each ridge point is isolated, so the maxima are exactly the peak set.
pub fn locate_t1_maxima(t1: &AfSurface) -> Vec<(i64, f64)> {
    let max = t1.max();
    let thr = max * (1.0 - 1e-9);
    let mut out = Vec::new();
    for (ti, &tau) in t1.taus.iter().enumerate() {
        for (ni, &nu) in t1.nus.iter().enumerate() {
            if t1.at(ti, ni) >= thr {
                out.push((tau, nu));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakLocationReport {
    pub predicted: Vec<(i64, f64)>,
    pub located: Vec<(i64, f64)>,
    /// Largest mismatch in Doppler cells (circular) between matched peaks.
    pub max_nu_offset: f64,
    pub exact: bool,
    pub passed: bool,
}

/// Compare the predicted T1 peak set with the located maxima of the periodic
/// T1 surface on the integer grid.
pub fn check_peak_locations(cfg: &WaveformConfig) -> Result<PeakLocationReport> {
    require_spreading(cfg)?;
    let grid = AfGrid::full(cfg.n, 1);
    let surf = closed_form_surfaces(cfg, 1.0, 1.0, AfMode::Periodic, &grid)?;
    let predicted = t1_peak_locations(cfg)?;
    let located = locate_t1_maxima(&surf.t1);
    let n = cfg.n as f64;
    let circ = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(n);
        d.min(n - d)
    };
    let nearest = |p: &(i64, f64), set: &[(i64, f64)]| {
        set.iter()
            .filter(|q| q.0 == p.0)
            .map(|q| circ(p.1, q.1))
            .fold(f64::INFINITY, f64::min)
    };
    let mut worst = 0.0f64;
    for p in &predicted {
        worst = worst.max(nearest(p, &located));
    }
    for p in &located {
        worst = worst.max(nearest(p, &predicted));
    }
    let exact = worst < 1e-9 && predicted.len() == located.len();
    Ok(PeakLocationReport {
        passed: worst <= 1.0,
        exact,
        max_nu_offset: worst,
        predicted,
        located,
    })
}

/// Sidelobe flatness: std / mean of the closed-form total over cells away
/// from the τ ≡ 0 (mod N/S) slices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessReport {
    pub cells: usize,
    pub mean: f64,
    pub std: f64,
    pub ratio: f64,
}

pub fn sidelobe_flatness(cfg: &WaveformConfig, mu4: f64, mode: AfMode) -> Result<FlatnessReport> {
    require_spreading(cfg)?;
    let grid = AfGrid::full(cfg.n, 1);
    let surf = closed_form_surfaces(cfg, mu4, 1.0, mode, &grid)?;
    let period = (cfg.n / cfg.s) as i64;
    let peaks = locate_t1_maxima(&surf.t1);
    let mut vals = Vec::new();
    for (ti, &tau) in grid.taus.iter().enumerate() {
        if slice_distance(tau, period) == 0 {
            continue;
        }
        for (ni, &nu) in grid.nus.iter().enumerate() {
            if peaks.contains(&(tau, nu)) {
                continue;
            }
            vals.push(surf.total.at(ti, ni));
        }
    }
    if vals.is_empty() {
        return Err(Error::InvalidArgument(
            "no sidelobe cells for this configuration".into(),
        ));
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k).sqrt();
    Ok(FlatnessReport {
        cells: vals.len(),
        mean,
        std,
        ratio: if mean > 0.0 { std / mean } else { f64::INFINITY },
    })
}

/// Comb structure: share of sidelobe energy that falls off the ridge lines
/// `2 N c1 τ - ν ≡ 0 (mod S)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombReport {
    pub ridge_energy: f64,
    pub off_ridge_energy: f64,
    pub off_ridge_fraction: f64,
}

pub fn comb_concentration(cfg: &WaveformConfig, mu4: f64, mode: AfMode) -> Result<CombReport> {
    require_spreading(cfg)?;
    let grid = AfGrid::full(cfg.n, 1);
    let surf = closed_form_surfaces(cfg, mu4, 1.0, mode, &grid)?;
    let peaks = locate_t1_maxima(&surf.t1);
    let s = cfg.s as f64;
    let mut ridge = 0.0;
    let mut off = 0.0;
    for (ti, &tau) in grid.taus.iter().enumerate() {
        for (ni, &nu) in grid.nus.iter().enumerate() {
            if peaks.contains(&(tau, nu)) {
                continue;
            }
            let phi = 2.0 * cfg.n as f64 * cfg.c1 * tau as f64 - nu;
            let r = phi.rem_euclid(s);
            let on_ridge = r.min(s - r) < 1e-9;
            let v = surf.total.at(ti, ni);
            if on_ridge {
                ridge += v;
            } else {
                off += v;
            }
        }
    }
    let total = ridge + off;
    Ok(CombReport {
        ridge_energy: ridge,
        off_ridge_energy: off,
        off_ridge_fraction: if total > 0.0 { off / total } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{build_qam, pmf_moments};
    use crate::rng::complex_gaussian_vec;
    use crate::waveform::modulation_matrix;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn dirichlet_examples() {
        assert_eq!(dirichlet(5, 0.0), 5.0);
        assert_eq!(dirichlet_sq(5, 0.0), 25.0);
        assert_abs_diff_eq!(dirichlet(4, 0.25), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dirichlet(3, 0.5), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dirichlet_sq(3, 0.5), 1.0, epsilon = 1e-12);
        // limits at integers
        assert_eq!(dirichlet(4, 1.0), -4.0);
        assert_eq!(dirichlet(4, 2.0), 4.0);
        assert_eq!(dirichlet(3, 1.0), 3.0);
        assert_eq!(dirichlet(4, -1.0), -4.0);
        // continuity across the singularity
        assert_abs_diff_eq!(dirichlet(4, 1.0 + 1e-7), -4.0, epsilon = 1e-5);
    }

    #[test]
    fn empirical_examples() {
        let s = complex_gaussian_vec(&mut trial_rng(1, 0), 16, 1.0);
        let e: f64 = s.iter().map(|v| v.norm_sqr()).sum();
        for mode in [AfMode::Periodic, AfMode::Aperiodic] {
            let v = empirical_af(&s, &AfQuery::new(0, 0.0, mode));
            assert_abs_diff_eq!(v.re, e, epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-12);
        }
        let ones = vec![Complex64::new(1.0, 0.0); 16];
        assert_abs_diff_eq!(
            empirical_af(&ones, &AfQuery::periodic(3, 0.0)).norm(),
            16.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            empirical_af(&ones, &AfQuery::periodic(3, 16.0)).norm(),
            16.0,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            empirical_af(&ones, &AfQuery::periodic(3, 5.0)).norm(),
            0.0,
            epsilon = 1e-12
        );
        let v = empirical_af(&s, &AfQuery::aperiodic(15, 2.0));
        let expected = s[15] * s[0].conj() * Complex64::from_polar(1.0, -2.0 * PI * 2.0 * 15.0 / 16.0);
        assert_abs_diff_eq!((v - expected).norm(), 0.0, epsilon = 1e-12);
        assert_eq!(empirical_af(&s, &AfQuery::aperiodic(16, 0.0)), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn fft_grid_matches_direct_sum() {
        let s = complex_gaussian_vec(&mut trial_rng(2, 0), 16, 1.0);
        for mode in [AfMode::Periodic, AfMode::Aperiodic] {
            let grid = AfGrid::full(16, 2);
            let surf = empirical_af_surface(&s, mode, &grid).unwrap();
            for (ti, &tau) in grid.taus.iter().enumerate().step_by(3) {
                for (ni, &nu) in grid.nus.iter().enumerate().step_by(5) {
                    let d = empirical_af(&s, &AfQuery::new(tau, nu, mode)).norm_sqr();
                    assert_abs_diff_eq!(surf.at(ti, ni), d, epsilon = 1e-9);
                }
            }
        }
    }

    /// T-terms straight from the basis: with `A_mp = Σ_n g_m[n] g_p*[n'] e^{-j2πνn/N}`,
    /// T1 = |Σ_m A_mm|², T2 = Σ |A_mp|², T3 = Σ |A_mm|².
    fn basis_terms(u: &DMatrix<Complex64>, q: &AfQuery) -> (f64, f64, f64) {
        let (n, m) = (u.nrows(), u.ncols());
        let mut a = DMatrix::<Complex64>::zeros(m, m);
        let idx: Vec<(usize, usize)> = match q.mode {
            AfMode::Periodic => {
                let t = q.tau.rem_euclid(n as i64) as usize;
                (0..n).map(|i| (i, (i + n - t) % n)).collect()
            }
            AfMode::Aperiodic => {
                let t = q.tau.unsigned_abs() as usize;
                if q.tau >= 0 {
                    (t..n).map(|i| (i, i - t)).collect()
                } else {
                    (0..n - t).map(|i| (i, i + t)).collect()
                }
            }
        };
        for (i, j) in idx {
            let ph = Complex64::from_polar(1.0, -2.0 * PI * q.nu * i as f64 / n as f64);
            for r in 0..m {
                for c in 0..m {
                    a[(r, c)] += u[(i, r)] * u[(j, c)].conj() * ph;
                }
            }
        }
        let t1 = a.trace().norm_sqr();
        let t2 = a.iter().map(|v| v.norm_sqr()).sum();
        let t3 = (0..m).map(|k| a[(k, k)].norm_sqr()).sum();
        (t1, t2, t3)
    }

    #[test]
    fn closed_form_matches_basis_oracle() {
        let cfgs = [
            WaveformConfig::new(16, 16, 1, 5.0 / 32.0),
            WaveformConfig::new(16, 8, 1, 5.0 / 32.0).with_chirps(0.1, 0.3, 0.2),
            WaveformConfig::new(16, 8, 2, 5.0 / 32.0).with_chirps(0.25, 0.1, 0.5),
            WaveformConfig::new(16, 4, 4, 3.0 / 32.0).with_chirps(0.0, PI / 2.0, 0.0),
            WaveformConfig::new(16, 8, 1, 1.0 / 32.0).with_chirps(0.0, -0.5, 0.7),
        ];
        for cfg in cfgs {
            let u = modulation_matrix(&cfg).unwrap();
            for mode in [AfMode::Periodic, AfMode::Aperiodic] {
                for tau in -15..16 {
                    for nu in [0.0, 1.0, 2.5, 7.0, 11.25] {
                        let q = AfQuery::new(tau, nu, mode);
                        let (o1, o2, o3) = basis_terms(&u, &q);
                        let t = af_terms(&cfg, &q);
                        let tol = 1e-9;
                        assert!((t.t1 - o1).abs() < tol, "{cfg:?} {q:?} t1 {} vs {o1}", t.t1);
                        assert!((t.t2 - o2).abs() < tol, "{cfg:?} {q:?} t2 {} vs {o2}", t.t2);
                        assert!((t.t3 - o3).abs() < tol, "{cfg:?} {q:?} t3 {} vs {o3}", t.t3);
                    }
                }
            }
        }
    }

    #[test]
    fn origin_value_and_mu4_two() {
        let cfg = WaveformConfig::new(64, 32, 1, 5.0 / 128.0);
        let t = expected_af_closed(&cfg, 1.381, &AfQuery::periodic(0, 0.0)).unwrap();
        assert_abs_diff_eq!(t.t1, 32.0 * 32.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.total, 32.0 * 32.0 + 0.381 * 32.0, epsilon = 1e-9);
        let q = AfQuery::periodic(5, 3.0);
        let t = expected_af_closed(&cfg, 2.0, &q).unwrap();
        assert_abs_diff_eq!(t.total, (t.t1 + t.t2).max(0.0), epsilon = 1e-12);
    }

    #[test]
    fn closed_form_rejects_unspread() {
        let cfg = WaveformConfig::new(16, 8, 1, 0.0).with_spreading(false);
        assert!(expected_af_closed(&cfg, 1.0, &AfQuery::periodic(0, 0.0)).is_err());
    }

    #[test]
    fn mc_origin_qpsk_is_deterministic_m_squared() {
        let cfg = WaveformConfig::new(32, 16, 1, 5.0 / 64.0);
        let c = build_qam(4).unwrap();
        let p = Pmf::uniform(&c);
        let v = expected_af_mc(&cfg, &c, &p, &AfQuery::periodic(0, 0.0), 50, 3).unwrap();
        assert_abs_diff_eq!(v, 256.0, epsilon = 1e-9);
    }

    #[test]
    fn mc_is_periodic_in_nu_and_reproducible() {
        let cfg = WaveformConfig::new(16, 8, 1, 5.0 / 32.0);
        let c = build_qam(16).unwrap();
        let p = Pmf::uniform(&c);
        let a = expected_af_mc(&cfg, &c, &p, &AfQuery::periodic(3, 2.0), 200, 9).unwrap();
        let b = expected_af_mc(&cfg, &c, &p, &AfQuery::periodic(3, 18.0), 200, 9).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9 * a.max(1.0));
        let grid = AfGrid::full(16, 1);
        let s1 = expected_af_mc_grid(&cfg, &c, &p, AfMode::Periodic, &grid, 100, 4).unwrap();
        let s2 = expected_af_mc_grid(&cfg, &c, &p, AfMode::Periodic, &grid, 100, 4).unwrap();
        assert_eq!(s1.values, s2.values);
        let ti = s1.tau_index(3).unwrap();
        let direct = expected_af_mc(&cfg, &c, &p, &AfQuery::periodic(3, 2.0), 100, 4).unwrap();
        assert_abs_diff_eq!(s1.at(ti, 2), direct, epsilon = 1e-9 * direct.max(1.0));
    }

    #[test]
    fn mc_agrees_with_closed_form_small() {
        let cfg = WaveformConfig::new(16, 8, 2, 5.0 / 32.0);
        let c = build_qam(64).unwrap();
        let p = Pmf::uniform(&c);
        let mu4 = pmf_moments(&c, &p).unwrap().mu4;
        let grid = AfGrid::full(16, 1);
        for mode in [AfMode::Periodic, AfMode::Aperiodic] {
            let mc = expected_af_mc_grid(&cfg, &c, &p, mode, &grid, 4000, 1).unwrap();
            let cf = closed_form_surfaces(&cfg, mu4, 1.0, mode, &grid).unwrap();
            let k = origin_calibration(&cf.total, &mc).unwrap();
            assert!((k - 1.0).abs() < 0.02, "calibration {k}");
            let err = relative_rms(&cf.total.scaled(k), &mc).unwrap();
            assert!(err < 0.05, "{mode:?}: {err}");
        }
    }

    #[test]
    fn slice_sensitivity_window_and_condition() {
        let base = WaveformConfig::new(64, 32, 1, 5.0 / 128.0);
        let r = check_slice_sensitivity(&base, AfMode::Periodic, 0.05).unwrap();
        assert_eq!(r.window, 2);
        assert_eq!(r.passed, Some(true), "{r:?}");
        let r = check_slice_sensitivity(&base.clone().with_chirps(0.0, -0.5, 0.0), AfMode::Periodic, 0.05).unwrap();
        assert_abs_diff_eq!(r.delta_lambda, 0.5);
        assert_eq!(r.passed, Some(true), "{r:?}");
        let r = check_slice_sensitivity(&base.with_chirps(0.0, -PI / 2.0, 0.0), AfMode::Periodic, 0.05).unwrap();
        assert!(!r.condition_met);
        assert_eq!(r.status(), "condition unmet");
        assert!(r.ratio > 0.5);
    }

    #[test]
    fn peak_locations_single_peak_when_s_is_one() {
        let cfg = WaveformConfig::new(32, 16, 1, 5.0 / 64.0);
        assert_eq!(t1_peak_locations(&cfg).unwrap(), vec![(0, 0.0)]);
        let r = check_peak_locations(&cfg).unwrap();
        assert!(r.exact, "{r:?}");
    }

    #[test]
    fn peak_locations_interleaved_peaks() {
        let cfg = WaveformConfig::new(64, 32, 2, 5.0 / 128.0);
        let peaks = t1_peak_locations(&cfg).unwrap();
        assert_eq!(peaks, vec![(-32, 32.0), (0, 0.0), (32, 32.0)]);
        let r = check_peak_locations(&cfg).unwrap();
        assert!(r.exact, "{r:?}");
    }

    #[test]
    fn peak_locations_zero_chirp_peaks_on_zero_doppler() {
        let cfg = WaveformConfig::new(64, 16, 4, 0.0);
        let peaks = t1_peak_locations(&cfg).unwrap();
        assert_eq!(peaks.len(), 7);
        assert!(peaks.iter().all(|p| p.1 == 0.0));
        assert!(check_peak_locations(&cfg).unwrap().exact);
    }

    #[test]
    fn rooftop_decay_of_pedestal() {
        let cfg = WaveformConfig::new(32, 16, 1, 5.0 / 64.0);
        let grid = AfGrid::full(32, 1);
        let per = closed_form_surfaces(&cfg, 1.381, 1.0, AfMode::Periodic, &grid).unwrap();
        let ap = closed_form_surfaces(&cfg, 1.381, 1.0, AfMode::Aperiodic, &grid).unwrap();
        for (ti, &tau) in grid.taus.iter().enumerate() {
            let mp: f64 = per.t2.row(ti).iter().sum::<f64>() / 32.0;
            let ma: f64 = ap.t2.row(ti).iter().sum::<f64>() / 32.0;
            assert!(ma <= mp + 1e-9);
            let lt = 32.0 - tau.abs() as f64;
            assert_abs_diff_eq!(ma / mp, lt / 32.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn csv_layout() {
        let cfg = WaveformConfig::new(8, 4, 2, 5.0 / 16.0);
        let grid = AfGrid::full(8, 1);
        let s = closed_form_surfaces(&cfg, 1.0, 1.0, AfMode::Periodic, &grid).unwrap();
        let mut buf = Vec::new();
        write_surfaces_csv(&mut buf, &[&s.total, &s.t3]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tau,nu,value,term"));
        assert_eq!(text.lines().count(), 1 + 2 * 15 * 8);
        assert!(text.contains(",t3\n"));
    }
}
