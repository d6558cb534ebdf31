//! Monostatic sensing: matched-filter range-Doppler maps, 2-D CA-CFAR, and
//! cyclic cross-correlation followed by MUSIC for slow-time velocity
//! estimation.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::constellation::{Constellation, Pmf, PmfSampler};
use crate::error::{Error, Result};
use crate::rng::{complex_gaussian, trial_chunks, trial_rng};
use crate::waveform::{add_prefix, Modulator, Prefix, WaveformConfig};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// `|Σ_n r[n] s*[(n-τ)_N] e^{-j2πνn/N}|²` for τ, ν = 0..N-1, row-major in τ.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    pub n: usize,
    pub values: Vec<f64>,
}

impl RangeDopplerMap {
    pub fn at(&self, tau: usize, nu: usize) -> f64 {
        self.values[tau * self.n + nu]
    }

    /// Cell of the largest value, ties to the first.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.n, best % self.n)
    }
}

/// Reusable FFT plan for range-Doppler processing of length-N blocks.
pub struct RdProcessor {
    n: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl RdProcessor {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            fft: FftPlanner::new().plan_fft_forward(n),
        }
    }

    pub fn map(&self, s_tx: &[Complex64], r_rx: &[Complex64]) -> Result<RangeDopplerMap> {
        let n = self.n;
        if s_tx.len() != n || r_rx.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: if s_tx.len() != n { s_tx.len() } else { r_rx.len() },
            });
        }
        let mut values = Vec::with_capacity(n * n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for tau in 0..n {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = r_rx[i] * s_tx[(i + n - tau) % n].conj();
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            values.extend(buf.iter().map(|v| v.norm_sqr()));
        }
        Ok(RangeDopplerMap { n, values })
    }
}

pub fn range_doppler_map(s_tx: &[Complex64], r_rx: &[Complex64]) -> Result<RangeDopplerMap> {
    RdProcessor::new(s_tx.len()).map(s_tx, r_rx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfarConfig {
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_guard")]
    pub n_guard: usize,
    #[serde(default = "default_pfa")]
    pub pfa: f64,
}

fn default_train() -> usize {
    8
}
fn default_guard() -> usize {
    2
}
fn default_pfa() -> f64 {
    1e-3
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            n_train: default_train(),
            n_guard: default_guard(),
            pfa: default_pfa(),
        }
    }
}

impl CfarConfig {
    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "CFAR needs n_train ≥ 1 and 0 < pfa < 1, got {} and {}",
                self.n_train, self.pfa
            )));
        }
        Ok(())
    }

    pub fn half_width(&self) -> usize {
        self.n_train + self.n_guard
    }

    /// Number of training cells in the square annulus.
    pub fn training_cells(&self) -> usize {
        let outer = 2 * self.half_width() + 1;
        let inner = 2 * self.n_guard + 1;
        outer * outer - inner * inner
    }

    /// `α = N_t (P_fa^{-1/N_t} - 1)`.
    pub fn alpha(&self) -> f64 {
        let nt = self.training_cells() as f64;
        nt * (self.pfa.powf(-1.0 / nt) - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub tau: usize,
    pub nu: usize,
    pub value: f64,
}

/// 2-D cell-averaging CFAR with wraparound on both axes.
pub fn ca_cfar(map: &RangeDopplerMap, cfg: &CfarConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let n = map.n;
    let h = cfg.half_width();
    if 2 * h + 1 > n {
        return Err(Error::WindowTooLarge {
            half_width: h,
            rows: n,
            cols: n,
        });
    }
    // summed-area table of the periodically extended map
    let w = n + 2 * h;
    let mut sat = vec![0.0f64; (w + 1) * (w + 1)];
    for i in 0..w {
        let ti = (i + n - h) % n;
        let mut row = 0.0;
        for j in 0..w {
            let tj = (j + n - h) % n;
            row += map.values[ti * n + tj];
            sat[(i + 1) * (w + 1) + j + 1] = sat[i * (w + 1) + j + 1] + row;
        }
    }
    // sum over extended rows [r0, r1) and cols [c0, c1)
    let rect = |r0: usize, r1: usize, c0: usize, c1: usize| {
        sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0] + sat[r0 * (w + 1) + c0]
    };
    let g = cfg.n_guard;
    let nt = cfg.training_cells() as f64;
    let alpha = cfg.alpha();
    let mut out = Vec::new();
    for tau in 0..n {
        for nu in 0..n {
            // the cell sits at extended index (tau + h, nu + h)
            let outer = rect(tau, tau + 2 * h + 1, nu, nu + 2 * h + 1);
            let inner = rect(tau + h - g, tau + h + g + 1, nu + h - g, nu + h + g + 1);
            let mean = (outer - inner) / nt;
            let v = map.at(tau, nu);
            if v > alpha * mean {
                out.push(Detection { tau, nu, value: v });
            }
        }
    }
    Ok(out)
}

/// Empirical false-alarm rate of [`ca_cfar`] on maps of i.i.d. unit
/// exponential cells (square-law detected complex Gaussian noise).
pub fn cfar_false_alarm_rate(cfg: &CfarConfig, n: usize, maps: usize, seed: u64) -> Result<(f64, usize)> {
    let counts: Vec<Result<usize>> = (0..maps)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let values = (0..n * n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            Ok(ca_cfar(&RangeDopplerMap { n, values }, cfg)?.len())
        })
        .collect();
    let mut total = 0;
    for c in counts {
        total += c?;
    }
    let cells = maps * n * n;
    Ok((total as f64 / cells as f64, cells))
}

/// A point target with integer delay and Doppler taps. `power` is relative to
/// the primary target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub delay: usize,
    pub doppler: i64,
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_power() -> f64 {
    1.0
}

/// Waveform family members realized by switching chirps and spreading.
pub fn comparison_variants(n: usize, m: usize, s: usize, c1: f64) -> Vec<(String, WaveformConfig)> {
    let base = WaveformConfig::new(n, m, s, c1).with_prefix(Prefix::None);
    vec![
        ("daft-s-afdm".into(), base.clone()),
        ("afdm".into(), base.clone().with_spreading(false)),
        (
            "dft-s-ofdm".into(),
            WaveformConfig {
                c1: 0.0,
                ..base.clone()
            },
        ),
        ("ofdm".into(), WaveformConfig { c1: 0.0, ..base }.with_spreading(false)),
    ]
}

fn circ_dist(a: usize, b: usize, n: usize) -> usize {
    let d = (a + n - b) % n;
    d.min(n - d)
}

/// Per-trial pass/fail rule for detection sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRule {
    /// Tolerance in cells, per axis, for matching a detection to a target.
    #[serde(default = "default_tolerance")]
    pub tolerance: usize,
    /// Spurious detections allowed above the expected count, in standard
    /// deviations of the Poisson false-alarm count.
    #[serde(default = "default_excess_sigma")]
    pub excess_sigma: f64,
}

fn default_tolerance() -> usize {
    1
}
fn default_excess_sigma() -> f64 {
    3.0
}

impl Default for DetectionRule {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            excess_sigma: default_excess_sigma(),
        }
    }
}

/// Outcome of one detection trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub all_detected: bool,
    pub spurious: usize,
    pub budget: f64,
}

impl TrialOutcome {
    pub fn success(&self) -> bool {
        self.all_detected && (self.spurious as f64) <= self.budget
    }
}

/// Classify detections against the true targets.
pub fn score_detections(
    dets: &[Detection],
    targets: &[Target],
    n: usize,
    cfar: &CfarConfig,
    rule: &DetectionRule,
) -> TrialOutcome {
    let near = |d: &Detection, t: &Target| {
        let tn = t.doppler.rem_euclid(n as i64) as usize;
        circ_dist(d.tau, t.delay, n) <= rule.tolerance && circ_dist(d.nu, tn, n) <= rule.tolerance
    };
    let all_detected = targets.iter().all(|t| dets.iter().any(|d| near(d, t)));
    let spurious = dets.iter().filter(|d| !targets.iter().any(|t| near(d, t))).count();
    let side = 2 * rule.tolerance + 1;
    let cells = (n * n).saturating_sub(targets.len() * side * side) as f64;
    let expected = cfar.pfa * cells;
    TrialOutcome {
        all_detected,
        spurious,
        budget: expected + rule.excess_sigma * expected.sqrt(),
    }
}

/// Everything fixed across trials of one detection experiment.
pub struct DetectionSetup<'a> {
    pub cfg: &'a WaveformConfig,
    pub constellation: &'a Constellation,
    pub pmf: &'a Pmf,
    pub targets: &'a [Target],
    pub cfar: CfarConfig,
    pub rule: DetectionRule,
}

/// Echo of `s` from `targets` with random phases, plus CN(0, σ²) noise.
/// Powers are relative; the primary target has unit amplitude.
pub fn synthesize_echo<R: Rng + ?Sized>(
    s: &[Complex64],
    targets: &[Target],
    noise_var: f64,
    rng: &mut R,
) -> Vec<Complex64> {
    let n = s.len();
    let mut r = vec![Complex64::new(0.0, 0.0); n];
    for t in targets {
        let h = Complex64::from_polar(t.power.sqrt(), 2.0 * PI * rng.random::<f64>());
        for (i, out) in r.iter_mut().enumerate() {
            let turns = (t.doppler * i as i64).rem_euclid(n as i64) as f64 / n as f64;
            *out += h * s[(i + n - t.delay) % n] * Complex64::from_polar(1.0, 2.0 * PI * turns);
        }
    }
    if noise_var > 0.0 {
        for v in &mut r {
            *v += complex_gaussian(rng, noise_var);
        }
    }
    r
}

fn random_block(md: &Modulator, c: &Constellation, sampler: &PmfSampler, rng: &mut impl Rng) -> Result<Vec<Complex64>> {
    let x: Vec<Complex64> = sampler
        .sample_block(rng, md.config().m)
        .iter()
        .map(|&i| c.points()[i])
        .collect();
    md.modulate(&x)
}

/// Fraction of successful trials at one SNR. The SNR is the primary echo's
/// mean per-sample power over the noise variance.
pub fn detection_probability(setup: &DetectionSetup, snr_db: f64, trials: usize, seed: u64) -> Result<f64> {
    let cfg = setup.cfg;
    if let Some(t) = setup.targets.iter().find(|t| t.delay >= cfg.n) {
        return Err(Error::DelayOutOfRange {
            tap: t.delay,
            len: cfg.n,
        });
    }
    let md = Modulator::new(cfg)?;
    let sampler = setup.pmf.sampler()?;
    let sigma_x2 = crate::constellation::pmf_moments(setup.constellation, setup.pmf)?.sigma2;
    let per_sample = sigma_x2 * cfg.m as f64 / cfg.n as f64;
    let noise_var = per_sample / 10f64.powf(snr_db / 10.0);
    let rd = RdProcessor::new(cfg.n);
    let parts: Vec<Result<usize>> = trial_chunks(trials, 8)
        .into_par_iter()
        .map(|range| {
            let mut ok = 0;
            for t in range {
                let mut rng = trial_rng(seed, t as u64);
                let s = random_block(&md, setup.constellation, &sampler, &mut rng)?;
                let r = synthesize_echo(&s, setup.targets, noise_var, &mut rng);
                let map = rd.map(&s, &r)?;
                let dets = ca_cfar(&map, &setup.cfar)?;
                if score_detections(&dets, setup.targets, cfg.n, &setup.cfar, &setup.rule).success() {
                    ok += 1;
                }
            }
            Ok(ok)
        })
        .collect();
    let mut ok = 0;
    for p in parts {
        ok += p?;
    }
    Ok(ok as f64 / trials as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdRow {
    pub variant: String,
    pub snr_db: f64,
    pub pd: f64,
    pub trials: usize,
}

/// Detection probability for each variant and SNR. Every (variant, SNR)
/// cell uses the same trial seeds, so variants see identical noise draws up
/// to their differing waveforms.
#[allow(clippy::too_many_arguments)]
pub fn detection_probability_sweep(
    variants: &[(String, WaveformConfig)],
    c: &Constellation,
    pmf: &Pmf,
    targets: &[Target],
    cfar: CfarConfig,
    rule: DetectionRule,
    snrs_db: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<PdRow>> {
    let mut rows = Vec::new();
    for (name, cfg) in variants {
        let setup = DetectionSetup {
            cfg,
            constellation: c,
            pmf,
            targets,
            cfar,
            rule,
        };
        for &snr in snrs_db {
            rows.push(PdRow {
                variant: name.clone(),
                snr_db: snr,
                pd: detection_probability(&setup, snr, trials, seed)?,
                trials,
            });
        }
    }
    Ok(rows)
}

/// CSV `variant,snr_db,pd,trials`.
pub fn write_pd_csv<W: Write>(w: W, rows: &[PdRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["variant", "snr_db", "pd", "trials"])?;
    for r in rows {
        out.write_record([
            r.variant.clone(),
            r.snr_db.to_string(),
            r.pd.to_string(),
            r.trials.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Physical-to-grid conversions for a monostatic radar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarGeometry {
    /// Carrier frequency in Hz.
    pub fc: f64,
    /// Sample rate in Hz.
    pub fs: f64,
}

impl RadarGeometry {
    /// Round-trip delay in samples.
    pub fn range_to_tap(&self, range_m: f64) -> usize {
        (2.0 * range_m / SPEED_OF_LIGHT * self.fs).round() as usize
    }

    /// Doppler shift in units of the subcarrier spacing `fs / N`.
    pub fn velocity_to_bins(&self, v: f64, n: usize) -> f64 {
        2.0 * v * self.fc / SPEED_OF_LIGHT * n as f64 / self.fs
    }

    /// Slow-time phase advance per frame of `frame_len` samples.
    pub fn velocity_to_phase(&self, v: f64, frame_len: usize) -> f64 {
        2.0 * PI * 2.0 * v * self.fc / SPEED_OF_LIGHT * frame_len as f64 / self.fs
    }

    pub fn phase_to_velocity(&self, theta: f64, frame_len: usize) -> f64 {
        theta * SPEED_OF_LIGHT * self.fs / (4.0 * PI * self.fc * frame_len as f64)
    }
}

/// Cross-correlation of one frame against its transmitted block at integer
/// Doppler bin `k`: `(1/N) Σ_n r[n] s*[n] e^{-j2πkn/N}`, where `r` is the
/// received window already aligned to the range cell.
pub fn ccc_snapshot(r: &[Complex64], s: &[Complex64], k: i64) -> Complex64 {
    let n = s.len();
    let sum: Complex64 = (0..n)
        .map(|i| {
            let turns = (k * i as i64).rem_euclid(n as i64) as f64 / n as f64;
            r[i] * s[i].conj() * Complex64::from_polar(1.0, -2.0 * PI * turns)
        })
        .sum();
    sum / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicConfig {
    /// Forward-smoothing subarray length; 0 means half the snapshot count.
    #[serde(default)]
    pub subarray: usize,
    #[serde(default = "default_order")]
    pub model_order: usize,
    #[serde(default = "default_scan")]
    pub scan_points: usize,
}

fn default_order() -> usize {
    1
}
fn default_scan() -> usize {
    1024
}

impl Default for MusicConfig {
    fn default() -> Self {
        Self {
            subarray: 0,
            model_order: default_order(),
            scan_points: default_scan(),
        }
    }
}

/// Slow-time phase scan grid over [-π, π).
pub fn phase_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| -PI + 2.0 * PI * i as f64 / points as f64).collect()
}

/// MUSIC pseudo-spectrum `1 / ‖E_nᴴ a(θ)‖²` of a slow-time snapshot
/// sequence in dB relative to its peak.
pub fn music_spectrum(snapshots: &[Complex64], cfg: &MusicConfig, thetas: &[f64]) -> Result<Vec<f64>> {
    let f = snapshots.len();
    if f < 2 {
        return Err(Error::InvalidArgument("MUSIC needs at least two snapshots".into()));
    }
    let l = if cfg.subarray == 0 { f / 2 } else { cfg.subarray };
    if l < 2 || l > f || cfg.model_order == 0 || cfg.model_order >= l {
        return Err(Error::InvalidArgument(format!(
            "subarray {l} and model order {} do not fit {f} snapshots",
            cfg.model_order
        )));
    }
    let windows = f - l + 1;
    let mut r = DMatrix::<Complex64>::zeros(l, l);
    for start in 0..windows {
        let v = DVector::from_column_slice(&snapshots[start..start + l]);
        r += &v * v.adjoint();
    }
    r /= Complex64::new(windows as f64, 0.0);
    let eig = r.symmetric_eigen();
    let vals = &eig.eigenvalues;
    let vmax = vals.iter().copied().fold(0.0f64, f64::max);
    let rank = vals.iter().filter(|&&v| v > vmax * 1e-12).count();
    if vmax <= 0.0 || rank < cfg.model_order {
        return Err(Error::RankBelowModelOrder {
            rank,
            order: cfg.model_order,
        });
    }
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let noise: Vec<usize> = order[..l - cfg.model_order].to_vec();
    let en = DMatrix::from_fn(l, noise.len(), |i, j| eig.eigenvectors[(i, noise[j])]);
    let proj = &en * en.adjoint();
    let pseudo = |th: f64| {
        let a = DVector::from_fn(l, |i, _| Complex64::from_polar(1.0, th * i as f64));
        let q = (a.adjoint() * &proj * &a)[(0, 0)].re.max(f64::MIN_POSITIVE);
        1.0 / q
    };
    let mut spec: Vec<f64> = thetas.iter().map(|&th| pseudo(th)).collect();
    // Normalize to the continuous maximum near the best grid point, so the
    // level does not depend on where the truth falls between grid points.
    let mut best = 0;
    for (i, v) in spec.iter().enumerate() {
        if *v > spec[best] {
            best = i;
        }
    }
    let mut peak = spec[best];
    if thetas.len() > 1 {
        let step = if best + 1 < thetas.len() {
            thetas[best + 1] - thetas[best]
        } else {
            thetas[best] - thetas[best - 1]
        };
        let (mut lo, mut hi) = (thetas[best] - step, thetas[best] + step);
        for _ in 0..60 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if pseudo(m1) < pseudo(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        peak = peak.max(pseudo(0.5 * (lo + hi)));
    }
    for v in &mut spec {
        *v = 10.0 * (*v / peak).log10();
    }
    Ok(spec)
}

/// Index of the maximum and the mean dB level outside the null-to-null
/// mainlobe (the grid is treated as circular).
pub fn sidelobe_level(spec_db: &[f64]) -> (usize, f64) {
    let n = spec_db.len();
    let mut peak = 0;
    for (i, v) in spec_db.iter().enumerate() {
        if *v > spec_db[peak] {
            peak = i;
        }
    }
    let mut right = 0;
    while right + 1 < n && spec_db[(peak + right + 1) % n] < spec_db[(peak + right) % n] {
        right += 1;
    }
    let mut left = 0;
    while left + 1 < n && spec_db[(peak + n - left - 1) % n] < spec_db[(peak + n - left) % n] {
        left += 1;
    }
    let excluded = (left + right + 1).min(n);
    if excluded >= n {
        return (peak, f64::NEG_INFINITY);
    }
    let mut sum = 0.0;
    let mut count = 0;
    for off in (right + 1)..(n - left) {
        sum += spec_db[(peak + off) % n];
        count += 1;
    }
    (peak, sum / count as f64)
}

/// Slow-time velocity experiment: one target, a train of CP frames with
/// fresh data each frame, CCC at the known range cell, MUSIC over the phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicScenario {
    pub delay: usize,
    /// Doppler in subcarrier-spacing units; may be fractional.
    pub doppler: f64,
    pub cp_len: usize,
    pub frames: usize,
    /// Per-sample echo SNR in dB; `None` for a noise-free run.
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MusicResult {
    pub thetas: Vec<f64>,
    pub spectrum_db: Vec<f64>,
    pub true_theta: f64,
    pub peak_theta: f64,
    pub sidelobe_db: f64,
}

/// Generate the frame train, form one CCC snapshot per frame and run MUSIC.
pub fn music_velocity(
    cfg: &WaveformConfig,
    c: &Constellation,
    pmf: &Pmf,
    scn: &MusicScenario,
    music: &MusicConfig,
    seed: u64,
) -> Result<MusicResult> {
    let n = cfg.n;
    if scn.frames < 2 || scn.delay > scn.cp_len || scn.cp_len >= n {
        return Err(Error::InvalidArgument(format!(
            "need at least two frames and delay {} within the prefix {} (< N)",
            scn.delay, scn.cp_len
        )));
    }
    let frame_len = n + scn.cp_len;
    let md = Modulator::new(&WaveformConfig {
        prefix: Prefix::None,
        ..cfg.clone()
    })?;
    let sampler = pmf.sampler()?;
    let mut rng = trial_rng(seed, 0);
    // one trailing block so the last frame's window can run into its successor's prefix
    let blocks: Vec<Vec<Complex64>> = (0..=scn.frames)
        .map(|_| random_block(&md, c, &sampler, &mut rng))
        .collect::<Result<_>>()?;
    let stream: Vec<Complex64> = blocks
        .iter()
        .flat_map(|b| add_prefix(&Prefix::Cp { len: scn.cp_len }, b))
        .collect();
    let sigma_x2 = crate::constellation::pmf_moments(c, pmf)?.sigma2;
    let noise_var = scn
        .snr_db
        .map(|snr| sigma_x2 * cfg.m as f64 / n as f64 / 10f64.powf(snr / 10.0))
        .unwrap_or(0.0);
    let gain = Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>());
    let k_hat = scn.doppler.round() as i64;
    // Window for frame f starts `delay` samples after its prefix, so it holds
    // the echo of exactly s_f with no circular wrap (the next prefix repeats
    // the tail of s_f).
    let snapshots: Vec<Complex64> = blocks[..scn.frames]
        .iter()
        .enumerate()
        .map(|(f, s)| {
            let start = f * frame_len + scn.cp_len + scn.delay;
            let window: Vec<Complex64> = (start..start + n)
                .map(|t| {
                    let doppler = Complex64::from_polar(1.0, 2.0 * PI * scn.doppler * t as f64 / n as f64);
                    let mut v = gain * stream[t - scn.delay] * doppler;
                    if noise_var > 0.0 {
                        v += complex_gaussian(&mut rng, noise_var);
                    }
                    v
                })
                .collect();
            ccc_snapshot(&window, s, k_hat)
        })
        .collect();
    let thetas = phase_grid(music.scan_points);
    let spectrum_db = music_spectrum(&snapshots, music, &thetas)?;
    let (peak, sidelobe_db) = sidelobe_level(&spectrum_db);
    let true_theta = (2.0 * PI * scn.doppler * frame_len as f64 / n as f64 + PI).rem_euclid(2.0 * PI) - PI;
    Ok(MusicResult {
        peak_theta: thetas[peak],
        thetas,
        spectrum_db,
        true_theta,
        sidelobe_db,
    })
}

/// Mean and sample standard deviation of the sidelobe level over `repeats`
/// independent runs (run `i` uses trial stream `i` of `seed`).
pub fn music_sidelobe_stats(
    cfg: &WaveformConfig,
    c: &Constellation,
    pmf: &Pmf,
    scn: &MusicScenario,
    music: &MusicConfig,
    repeats: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if repeats < 2 {
        return Err(Error::InvalidArgument("need at least two repeats".into()));
    }
    let levels: Vec<f64> = (0..repeats)
        .into_par_iter()
        .map(|i| music_velocity(cfg, c, pmf, scn, music, trial_seed(seed, i)).map(|r| r.sidelobe_db))
        .collect::<Result<_>>()?;
    let mean = levels.iter().sum::<f64>() / repeats as f64;
    let var = levels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
    Ok((mean, var.sqrt()))
}

fn trial_seed(seed: u64, i: usize) -> u64 {
    trial_rng(seed, i as u64).random()
}

/// CSV `velocity,power_db`.
pub fn write_music_csv<W: Write>(w: W, velocities: &[f64], spectrum_db: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["velocity", "power_db"])?;
    for (v, p) in velocities.iter().zip(spectrum_db) {
        out.write_record([v.to_string(), p.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
