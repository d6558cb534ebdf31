//! Linear equalization, MAP detection with a symbol prior, closed-form BER
//! and a Monte Carlo link simulator.

use std::f64::consts::SQRT_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel_with, db_to_linear, effective_channel_matrix, DelayDopplerChannel};
use crate::constellation::{hamming_matrix, pmf_moments, Constellation, Pmf};
use crate::error::{Error, Result};
use crate::rng::{trial_chunks, trial_rng};
use crate::waveform::{Modulator, WaveformConfig};

/// Gaussian tail probability.
pub fn q_func(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EqualizerKind {
    Zf,
    #[default]
    Mmse,
}

#[derive(Debug, Clone)]
pub struct EqualizerOutput {
    /// M×N equalizer.
    pub w: DMatrix<Complex64>,
    /// `G = W H_eff`, M×M.
    pub g: DMatrix<Complex64>,
    pub alpha: Vec<Complex64>,
    /// `N0 ‖w_k‖² + Es Σ_{l≠k} |G_kl|²`.
    pub sigma2: Vec<f64>,
}

/// Per-symbol quantities that do not depend on the symbol power when the
/// SNR `Es/N0` is held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub alpha: Vec<Complex64>,
    /// `‖w_k‖²`
    pub w_norm2: Vec<f64>,
    /// `Σ_{l≠k} |G_kl|²`
    pub interference: Vec<f64>,
    /// Linear `Es / N0`.
    pub snr: f64,
}

impl ChannelStats {
    /// Equalize `h_eff` at linear SNR `snr` and keep the per-symbol statistics.
    pub fn from_channel(h_eff: &DMatrix<Complex64>, snr: f64, kind: EqualizerKind) -> Result<Self> {
        if !(snr > 0.0) {
            return Err(Error::InvalidArgument(format!("SNR must be positive, got {snr}")));
        }
        let eq = equalize(h_eff, 1.0 / snr, 1.0, kind)?;
        let w_norm2 = eq.w.row_iter().map(|r| r.norm_squared()).collect();
        let m = eq.g.nrows();
        let interference = (0..m)
            .map(|k| (0..m).filter(|&l| l != k).map(|l| eq.g[(k, l)].norm_sqr()).sum())
            .collect();
        Ok(Self {
            alpha: eq.alpha,
            w_norm2,
            interference,
            snr,
        })
    }

    /// Flat AWGN with unit gain on every symbol.
    pub fn awgn(m: usize, snr: f64) -> Self {
        Self {
            alpha: vec![Complex64::new(1.0, 0.0); m],
            w_norm2: vec![1.0; m],
            interference: vec![0.0; m],
            snr,
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Post-equalization noise variance of symbol `k` for symbol power
    /// `sigma_x2`: `σx² (‖w_k‖²/SNR + I_k)`.
    pub fn sigma2_k(&self, k: usize, sigma_x2: f64) -> f64 {
        sigma_x2 * (self.w_norm2[k] / self.snr + self.interference[k])
    }
}

fn solve_normal(h: &DMatrix<Complex64>, reg: f64) -> Result<DMatrix<Complex64>> {
    let m = h.ncols();
    let hh = h.adjoint();
    let gram = &hh * h + DMatrix::<Complex64>::identity(m, m) * Complex64::new(reg, 0.0);
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    Ok(chol.solve(&hh))
}

/// Linear ZF or MMSE equalizer for `y = H_eff x + w`.
pub fn equalize(h_eff: &DMatrix<Complex64>, n0: f64, es: f64, kind: EqualizerKind) -> Result<EqualizerOutput> {
    if n0 < 0.0 || !(es > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need n0 ≥ 0 and es > 0, got {n0}, {es}"
        )));
    }
    let w = match kind {
        EqualizerKind::Zf => {
            let sv = h_eff.clone().singular_values();
            let smax = sv.max();
            let smin = sv.min();
            if smax <= 0.0 || smin <= smax * 1e-10 {
                return Err(Error::RankDeficient);
            }
            solve_normal(h_eff, 0.0)?
        }
        EqualizerKind::Mmse => solve_normal(h_eff, n0 / es)?,
    };
    let g = &w * h_eff;
    let m = g.nrows();
    let alpha: Vec<Complex64> = (0..m).map(|k| g[(k, k)]).collect();
    let sigma2 = (0..m)
        .map(|k| {
            let wn: f64 = w.row(k).norm_squared();
            let inter: f64 = (0..m).filter(|&l| l != k).map(|l| g[(k, l)].norm_sqr()).sum();
            n0 * wn + es * inter
        })
        .collect();
    Ok(EqualizerOutput { w, g, alpha, sigma2 })
}

/// Prior-aware minimum-metric detector over the points with nonzero mass.
#[derive(Debug, Clone)]
pub struct MapDetector {
    support: Vec<usize>,
    log_p: Vec<f64>,
    points: Vec<Complex64>,
}

impl MapDetector {
    pub fn new(c: &Constellation, p: &Pmf) -> Result<Self> {
        p.check_matches(c)?;
        let support: Vec<usize> = (0..c.order()).filter(|&i| p.probs()[i] > 0.0).collect();
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        Ok(Self {
            log_p: support.iter().map(|&i| p.probs()[i].ln()).collect(),
            points: support.iter().map(|&i| c.points()[i]).collect(),
            support,
        })
    }

    /// `argmin_x |r - α x|²/σ² - ln P(x)`, ties to the lowest index.
    pub fn detect(&self, r: Complex64, alpha: Complex64, sigma2: f64) -> usize {
        let inv = 1.0 / sigma2;
        let mut best = f64::INFINITY;
        let mut arg = self.support[0];
        for ((&idx, &x), &lp) in self.support.iter().zip(&self.points).zip(&self.log_p) {
            let metric = (r - alpha * x).norm_sqr() * inv - lp;
            if metric < best {
                best = metric;
                arg = idx;
            }
        }
        arg
    }
}

/// One-shot MAP decision.
pub fn map_detect(r: Complex64, alpha: Complex64, sigma2: f64, c: &Constellation, p: &Pmf) -> Result<usize> {
    if !(sigma2 > 0.0) {
        return Err(Error::NonPositiveVariance(sigma2));
    }
    Ok(MapDetector::new(c, p)?.detect(r, alpha, sigma2))
}

#[inline]
fn pep(dist2: f64, sigma2: f64, log_ratio: f64) -> f64 {
    q_func((dist2 + sigma2 * log_ratio) / ((2.0 * sigma2).sqrt() * dist2.sqrt()))
}

/// Full pairwise union bound on the bit error rate.
pub fn ber_union_bound(c: &Constellation, p: &Pmf, alpha: Complex64, sigma2: f64) -> Result<f64> {
    ber_union_impl(c, p, alpha, sigma2, false)
}

/// Union bound restricted to nearest-neighbour pairs.
pub fn ber_union_bound_nn(c: &Constellation, p: &Pmf, alpha: Complex64, sigma2: f64) -> Result<f64> {
    ber_union_impl(c, p, alpha, sigma2, true)
}

fn ber_union_impl(c: &Constellation, p: &Pmf, alpha: Complex64, sigma2: f64, nn_only: bool) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::NonPositiveVariance(sigma2));
    }
    p.check_matches(c)?;
    let a2 = alpha.norm_sqr();
    let probs = p.probs();
    let mut total = 0.0;
    for i in 0..c.order() {
        if probs[i] <= 0.0 {
            continue;
        }
        for j in 0..c.order() {
            if i == j || probs[j] <= 0.0 || (nn_only && !c.are_neighbors(i, j)) {
                continue;
            }
            let d2 = a2 * (c.points()[i] - c.points()[j]).norm_sqr();
            total += probs[i] * c.hamming(i, j) as f64 * pep(d2, sigma2, (probs[i] / probs[j]).ln());
        }
    }
    Ok(total / c.bits_per_symbol() as f64)
}

/// Ring-grouped nearest-neighbour BER, O(K²) for a ring-symmetric PMF.
pub fn ber_ring_approx(c: &Constellation, p: &Pmf, alpha: Complex64, sigma2: f64) -> Result<f64> {
    let ring_p = p.ring_point_probs(c)?;
    RingBer::new(c).eval(&ring_p, alpha, sigma2)
}

/// Precomputed Hamming-weight matrix for repeated ring-BER evaluation.
#[derive(Debug, Clone)]
pub struct RingBer {
    weights: DMatrix<u32>,
    d_min2: f64,
    bits: f64,
}

impl RingBer {
    pub fn new(c: &Constellation) -> Self {
        Self {
            weights: hamming_matrix(c),
            d_min2: c.d_min() * c.d_min(),
            bits: c.bits_per_symbol() as f64,
        }
    }

    /// `ring_p[r]` is the per-point probability on ring r.
    pub fn eval(&self, ring_p: &[f64], alpha: Complex64, sigma2: f64) -> Result<f64> {
        if !(sigma2 > 0.0) {
            return Err(Error::NonPositiveVariance(sigma2));
        }
        let k = self.weights.nrows();
        if ring_p.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: ring_p.len(),
            });
        }
        let d2 = alpha.norm_sqr() * self.d_min2;
        let mut total = 0.0;
        for r in 0..k {
            if ring_p[r] <= 0.0 {
                continue;
            }
            for s in 0..k {
                let w = self.weights[(r, s)];
                if w == 0 || ring_p[s] <= 0.0 {
                    continue;
                }
                total += ring_p[r] * w as f64 * pep(d2, sigma2, (ring_p[r] / ring_p[s]).ln());
            }
        }
        Ok(total / self.bits)
    }

    /// BER averaged over the symbol slots described by `stats`.
    pub fn eval_avg(&self, ring_p: &[f64], stats: &ChannelStats, sigma_x2: f64) -> Result<f64> {
        let mut acc = 0.0;
        for k in 0..stats.len() {
            acc += self.eval(ring_p, stats.alpha[k], stats.sigma2_k(k, sigma_x2))?;
        }
        Ok(acc / stats.len() as f64)
    }
}

/// `H(P) (1 - clamp(P_b, 0, 1))` using the ring-grouped BER.
pub fn effective_throughput(c: &Constellation, p: &Pmf, alpha: Complex64, sigma2: f64) -> Result<f64> {
    let h = pmf_moments(c, p)?.entropy_bits;
    let pb = ber_ring_approx(c, p, alpha, sigma2)?;
    Ok(throughput_from(h, pb))
}

pub fn throughput_from(entropy_bits: f64, ber: f64) -> f64 {
    entropy_bits * (1.0 - ber.clamp(0.0, 1.0))
}

/// Theoretical BER averaged over symbol slots, ring form and full union bound.
pub fn theory_ber(c: &Constellation, p: &Pmf, stats: &ChannelStats) -> Result<(f64, f64)> {
    let sx2 = pmf_moments(c, p)?.sigma2;
    let ring_p = p.ring_point_probs(c)?;
    let rb = RingBer::new(c);
    let ring = rb.eval_avg(&ring_p, stats, sx2)?;
    let mut union = 0.0;
    for k in 0..stats.len() {
        union += ber_union_bound(c, p, stats.alpha[k], stats.sigma2_k(k, sx2))?;
    }
    Ok((ring, union / stats.len() as f64))
}

/// Everything a link simulation needs, built once.
#[derive(Debug, Clone)]
pub struct Link {
    md: Modulator,
    ch: DelayDopplerChannel,
    eq: EqualizerOutput,
    detector: MapDetector,
    constellation: Constellation,
    pmf: Pmf,
}

impl Link {
    /// MMSE link at `snr_db` (Es/N0 with Es the PMF's mean energy).
    pub fn new(
        cfg: &WaveformConfig,
        ch: &DelayDopplerChannel,
        c: &Constellation,
        p: &Pmf,
        snr_db: f64,
    ) -> Result<Self> {
        Self::with_equalizer(cfg, ch, c, p, snr_db, EqualizerKind::Mmse)
    }

    pub fn with_equalizer(
        cfg: &WaveformConfig,
        ch: &DelayDopplerChannel,
        c: &Constellation,
        p: &Pmf,
        snr_db: f64,
        kind: EqualizerKind,
    ) -> Result<Self> {
        let es = pmf_moments(c, p)?.sigma2;
        let n0 = es / db_to_linear(snr_db);
        let mut ch = ch.clone();
        ch.noise_var = n0;
        let h_eff = effective_channel_matrix(&ch, cfg)?;
        let eq = equalize(&h_eff, n0, es, kind)?;
        Ok(Self {
            md: Modulator::new(cfg)?,
            ch,
            eq,
            detector: MapDetector::new(c, p)?,
            constellation: c.clone(),
            pmf: p.clone(),
        })
    }

    pub fn equalizer(&self) -> &EqualizerOutput {
        &self.eq
    }

    pub fn bits_per_frame(&self) -> u64 {
        (self.md.config().m as u64) * self.constellation.bits_per_symbol() as u64
    }

    /// Transmit one random frame; returns (sent indices, equalizer output).
    fn frame(
        &self,
        sampler: &crate::constellation::PmfSampler,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<(Vec<usize>, DVector<Complex64>)> {
        let m = self.md.config().m;
        let idx = sampler.sample_block(rng, m);
        let x: Vec<Complex64> = idx.iter().map(|&i| self.constellation.points()[i]).collect();
        let s = self.md.modulate(&x)?;
        let y = apply_channel_with(&self.ch, &s, rng)?;
        let r = &self.eq.w * DVector::from_vec(y);
        Ok((idx, r))
    }

    /// Bit errors over frames `range`, each seeded by `(seed, frame)`.
    fn count_errors(&self, range: std::ops::Range<usize>, seed: u64) -> Result<u64> {
        let sampler = self.pmf.sampler()?;
        let mut errors = 0u64;
        for f in range {
            let mut rng = trial_rng(seed, f as u64);
            let (idx, r) = self.frame(&sampler, &mut rng)?;
            for (k, &sent) in idx.iter().enumerate() {
                let det = self
                    .detector
                    .detect(r[k], self.eq.alpha[k], self.eq.sigma2[k].max(f64::MIN_POSITIVE));
                errors += self.constellation.hamming(det, sent) as u64;
            }
        }
        Ok(errors)
    }

    /// Run `frames` frames starting at frame index `start`.
    fn run(&self, start: usize, frames: usize, seed: u64) -> Result<u64> {
        let parts: Vec<Result<u64>> = trial_chunks(frames, FRAME_CHUNK)
            .into_par_iter()
            .map(|r| self.count_errors(start + r.start..start + r.end, seed))
            .collect();
        let mut total = 0;
        for p in parts {
            total += p?;
        }
        Ok(total)
    }

    /// Measured mean error power `E|r_k - α_k x_k|²` per symbol slot.
    pub fn measure_noise(&self, frames: usize, seed: u64) -> Result<Vec<f64>> {
        let sampler = self.pmf.sampler()?;
        let m = self.md.config().m;
        let mut acc = vec![0.0; m];
        for f in 0..frames {
            let mut rng = trial_rng(seed, f as u64);
            let (idx, r) = self.frame(&sampler, &mut rng)?;
            for k in 0..m {
                let x = self.constellation.points()[idx[k]];
                acc[k] += (r[k] - self.eq.alpha[k] * x).norm_sqr();
            }
        }
        Ok(acc.into_iter().map(|v| v / frames as f64).collect())
    }

    /// Frame-level effective throughput estimate by simulation.
    pub fn mc_throughput(&self, frames: usize, seed: u64) -> Result<f64> {
        let errors = self.run(0, frames, seed)?;
        let ber = errors as f64 / (frames as u64 * self.bits_per_frame()) as f64;
        Ok(throughput_from(
            pmf_moments(&self.constellation, &self.pmf)?.entropy_bits,
            ber,
        ))
    }
}

const FRAME_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerEstimate {
    pub ber: f64,
    pub n_errors: u64,
    pub n_bits: u64,
}

/// End-to-end BER with at least `n_bits` simulated bits.
pub fn simulate_ber(
    cfg: &WaveformConfig,
    ch: &DelayDopplerChannel,
    c: &Constellation,
    p: &Pmf,
    snr_db: f64,
    n_bits: u64,
    seed: u64,
) -> Result<BerEstimate> {
    let link = Link::new(cfg, ch, c, p, snr_db)?;
    if n_bits < c.bits_per_symbol() as u64 {
        return Err(Error::InvalidArgument("n_bits smaller than one symbol".into()));
    }
    let frames = n_bits.div_ceil(link.bits_per_frame()) as usize;
    let errors = link.run(0, frames, seed)?;
    let bits = frames as u64 * link.bits_per_frame();
    Ok(BerEstimate {
        ber: errors as f64 / bits as f64,
        n_errors: errors,
        n_bits: bits,
    })
}

/// Simulate in rounds of `round_bits` until `min_errors` errors or
/// `max_bits` bits. Rounds are fixed in size, so the stopping point does not
/// depend on the thread count.
pub fn simulate_ber_until(
    link: &Link,
    min_errors: u64,
    round_bits: u64,
    max_bits: u64,
    seed: u64,
) -> Result<BerEstimate> {
    let per_frame = link.bits_per_frame();
    let round = round_bits.div_ceil(per_frame).max(1) as usize;
    let mut frames = 0usize;
    let mut errors = 0u64;
    loop {
        errors += link.run(frames, round, seed)?;
        frames += round;
        let bits = frames as u64 * per_frame;
        if errors >= min_errors || bits >= max_bits {
            return Ok(BerEstimate {
                ber: errors as f64 / bits as f64,
                n_errors: errors,
                n_bits: bits,
            });
        }
    }
}

/// One row of a BER sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub ber_theory_ring: f64,
    pub ber_theory_union: f64,
    pub ber_sim: f64,
    pub n_errors: u64,
    pub n_bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepBudget {
    pub min_errors: u64,
    pub round_bits: u64,
    pub max_bits: u64,
}

impl Default for SweepBudget {
    fn default() -> Self {
        Self {
            min_errors: 100,
            round_bits: 20_000,
            max_bits: 4_000_000,
        }
    }
}

/// Theory and simulation over a list of SNRs. Each SNR uses an independent
/// seed stream derived from `seed` and its position.
pub fn ber_sweep(
    cfg: &WaveformConfig,
    ch: &DelayDopplerChannel,
    c: &Constellation,
    p: &Pmf,
    snrs_db: &[f64],
    budget: SweepBudget,
    seed: u64,
) -> Result<Vec<BerPoint>> {
    let h_eff = effective_channel_matrix(ch, cfg)?;
    snrs_db
        .iter()
        .enumerate()
        .map(|(i, &snr_db)| {
            let stats = ChannelStats::from_channel(&h_eff, db_to_linear(snr_db), EqualizerKind::Mmse)?;
            let (ring, union) = theory_ber(c, p, &stats)?;
            let link = Link::new(cfg, ch, c, p, snr_db)?;
            let est = simulate_ber_until(
                &link,
                budget.min_errors,
                budget.round_bits,
                budget.max_bits,
                seed.wrapping_add(i as u64 * 0x9E37_79B9),
            )?;
            Ok(BerPoint {
                snr_db,
                ber_theory_ring: ring,
                ber_theory_union: union,
                ber_sim: est.ber,
                n_errors: est.n_errors,
                n_bits: est.n_bits,
            })
        })
        .collect()
}

/// SNR at which a BER curve crosses `target`, by linear interpolation of
/// log10(BER) against SNR in dB. `None` if the curve never crosses.
pub fn snr_at_ber(snrs_db: &[f64], ber: &[f64], target: f64) -> Option<f64> {
    let lt = target.log10();
    for i in 1..snrs_db.len().min(ber.len()) {
        let (b0, b1) = (ber[i - 1], ber[i]);
        if b0 <= 0.0 || b1 <= 0.0 {
            continue;
        }
        let (l0, l1) = (b0.log10(), b1.log10());
        if (l0 - lt) * (l1 - lt) <= 0.0 && l0 != l1 {
            let t = (lt - l0) / (l1 - l0);
            return Some(snrs_db[i - 1] + t * (snrs_db[i] - snrs_db[i - 1]));
        }
    }
    None
}

/// CSV `snr_db,ber_theory_ring,ber_theory_union,ber_sim,n_errors`.
pub fn write_ber_csv<W: Write>(w: W, points: &[BerPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "snr_db",
        "ber_theory_ring",
        "ber_theory_union",
        "ber_sim",
        "n_errors",
        "n_bits",
    ])?;
    for p in points {
        out.write_record([
            p.snr_db.to_string(),
            p.ber_theory_ring.to_string(),
            p.ber_theory_union.to_string(),
            p.ber_sim.to_string(),
            p.n_errors.to_string(),
            p.n_bits.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
