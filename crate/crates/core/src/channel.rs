//! Integer-tap delay-Doppler channel with a circular (CP) delay model.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{complex_gaussian, trial_rng};
use crate::waveform::{modulation_matrix, WaveformConfig};

/// One propagation path. The gain is stored as `(re, im)` so configs stay
/// plain key-value tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Path {
    pub re: f64,
    pub im: f64,
    pub delay: usize,
    pub doppler: i64,
}

impl Path {
    pub fn new(gain: Complex64, delay: usize, doppler: i64) -> Self {
        Self {
            re: gain.re,
            im: gain.im,
            delay,
            doppler,
        }
    }

    pub fn gain(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayDopplerChannel {
    pub paths: Vec<Path>,
    #[serde(default)]
    pub noise_var: f64,
}

impl DelayDopplerChannel {
    pub fn new(paths: Vec<Path>, noise_var: f64) -> Self {
        Self { paths, noise_var }
    }

    /// Noise-free single path with unit gain.
    pub fn identity() -> Self {
        Self::new(vec![Path::new(Complex64::new(1.0, 0.0), 0, 0)], 0.0)
    }

    /// Three paths at delays 0, 1, 2 with Doppler taps drawn uniformly from
    /// {-1, 0, 1} and complex Gaussian gains rescaled to unit total power.
    pub fn three_path(seed: u64) -> Self {
        let mut rng = trial_rng(seed, u64::MAX);
        let mut paths: Vec<Path> = (0..3)
            .map(|l| {
                let g = complex_gaussian(&mut rng, 1.0 / 3.0);
                let k = rng.random_range(-1i64..=1);
                Path::new(g, l, k)
            })
            .collect();
        let total: f64 = paths.iter().map(|p| p.gain().norm_sqr()).sum();
        let scale = total.sqrt().recip();
        for p in &mut paths {
            p.re *= scale;
            p.im *= scale;
        }
        Self::new(paths, 0.0)
    }

    /// Set the noise variance for `SNR = signal_power / σ²` given in dB.
    pub fn with_snr_db(mut self, snr_db: f64, signal_power: f64) -> Self {
        self.noise_var = signal_power / db_to_linear(snr_db);
        self
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain().norm_sqr()).sum()
    }

    pub fn max_delay(&self) -> usize {
        self.paths.iter().map(|p| p.delay).max().unwrap_or(0)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::InvalidArgument("channel needs at least one path".into()));
        }
        if let Some(p) = self.paths.iter().find(|p| p.delay >= n) {
            return Err(Error::DelayOutOfRange { tap: p.delay, len: n });
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance {} is negative",
                self.noise_var
            )));
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
fn doppler_phase(k: i64, n: usize, len: usize) -> Complex64 {
    let turns = ((k * n as i64).rem_euclid(len as i64)) as f64 / len as f64;
    Complex64::from_polar(1.0, 2.0 * PI * turns)
}

/// Noise-free `Σ h_i s[(n - l_i)_N] e^{j2π k_i n/N}`.
pub fn apply_paths(ch: &DelayDopplerChannel, s: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = s.len();
    ch.validate(n)?;
    let mut r = vec![Complex64::new(0.0, 0.0); n];
    for p in &ch.paths {
        let h = p.gain();
        for (i, out) in r.iter_mut().enumerate() {
            *out += h * s[(i + n - p.delay) % n] * doppler_phase(p.doppler, i, n);
        }
    }
    Ok(r)
}

/// Channel output with CN(0, σ²) noise drawn from `rng`.
pub fn apply_channel_with<R: Rng + ?Sized>(
    ch: &DelayDopplerChannel,
    s: &[Complex64],
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let mut r = apply_paths(ch, s)?;
    if ch.noise_var > 0.0 {
        for v in &mut r {
            *v += complex_gaussian(rng, ch.noise_var);
        }
    }
    Ok(r)
}

/// Channel output with noise generated deterministically from `seed`.
pub fn apply_channel(ch: &DelayDopplerChannel, s: &[Complex64], seed: u64) -> Result<Vec<Complex64>> {
    apply_channel_with(ch, s, &mut trial_rng(seed, 0))
}

/// N×N matrix `H = Σ h_i Δ(k_i) Π(l_i)`.
pub fn channel_matrix(ch: &DelayDopplerChannel, n: usize) -> Result<DMatrix<Complex64>> {
    ch.validate(n)?;
    let mut h = DMatrix::zeros(n, n);
    for p in &ch.paths {
        let g = p.gain();
        for row in 0..n {
            h[(row, (row + n - p.delay) % n)] += g * doppler_phase(p.doppler, row, n);
        }
    }
    Ok(h)
}

/// `H_eff = H U`, N×M.
pub fn effective_channel_matrix(ch: &DelayDopplerChannel, cfg: &WaveformConfig) -> Result<DMatrix<Complex64>> {
    let u = modulation_matrix(cfg)?;
    Ok(channel_matrix(ch, cfg.n)? * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::complex_gaussian_vec;
    use crate::waveform::modulate;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn signal(n: usize, seed: u64) -> Vec<Complex64> {
        complex_gaussian_vec(&mut trial_rng(seed, 0), n, 1.0)
    }

    #[test]
    fn identity_and_shift() {
        let s = signal(16, 1);
        let r = apply_channel(&DelayDopplerChannel::identity(), &s, 0).unwrap();
        assert_eq!(r, s);
        let ch = DelayDopplerChannel::new(vec![Path::new(Complex64::new(1.0, 0.0), 2, 0)], 0.0);
        let r = apply_channel(&ch, &s, 0).unwrap();
        for i in 0..16 {
            assert_eq!(r[i], s[(i + 14) % 16]);
        }
    }

    #[test]
    fn doppler_rotation_preserves_norm() {
        let s = signal(16, 2);
        let ch = DelayDopplerChannel::new(vec![Path::new(Complex64::new(1.0, 0.0), 0, 1)], 0.0);
        let r = apply_channel(&ch, &s, 0).unwrap();
        for (i, (a, b)) in r.iter().zip(&s).enumerate() {
            let expected = b * Complex64::from_polar(1.0, 2.0 * PI * i as f64 / 16.0);
            assert!((a - expected).norm() < 1e-14);
        }
        let ns: f64 = s.iter().map(|v| v.norm_sqr()).sum();
        let nr: f64 = r.iter().map(|v| v.norm_sqr()).sum();
        assert_abs_diff_eq!(ns, nr, epsilon = 1e-12);
    }

    #[test]
    fn delay_out_of_range() {
        let ch = DelayDopplerChannel::new(vec![Path::new(Complex64::new(1.0, 0.0), 16, 0)], 0.0);
        assert!(matches!(
            apply_channel(&ch, &signal(16, 0), 0),
            Err(Error::DelayOutOfRange { tap: 16, len: 16 })
        ));
    }

    #[test]
    fn identity_effective_matrix_is_u() {
        let cfg = WaveformConfig::new(16, 8, 1, 5.0 / 32.0);
        let h = effective_channel_matrix(&DelayDopplerChannel::identity(), &cfg).unwrap();
        let u = modulation_matrix(&cfg).unwrap();
        assert!((h - u).norm() < 1e-14);
    }

    #[test]
    fn matrix_path_equals_signal_path() {
        for (seed, cfg) in [
            (1, WaveformConfig::new(64, 32, 1, 5.0 / 128.0)),
            (
                2,
                WaveformConfig::new(64, 32, 2, 5.0 / 128.0).with_chirps(0.1, 0.2, 0.3),
            ),
            (3, WaveformConfig::new(32, 32, 1, 5.0 / 64.0)),
        ] {
            let ch = DelayDopplerChannel::three_path(seed);
            let x = signal(cfg.m, seed + 10);
            let h = effective_channel_matrix(&ch, &cfg).unwrap();
            let via_matrix = &h * DVector::from_vec(x.clone());
            let via_signal = apply_paths(&ch, &modulate(&cfg, &x).unwrap()).unwrap();
            for (a, b) in via_matrix.iter().zip(&via_signal) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn single_unit_path_is_isometric() {
        let cfg = WaveformConfig::new(32, 16, 2, 5.0 / 64.0);
        let g = Complex64::from_polar(1.0, 0.7);
        let ch = DelayDopplerChannel::new(vec![Path::new(g, 3, -2)], 0.0);
        let h = effective_channel_matrix(&ch, &cfg).unwrap();
        let x = DVector::from_vec(signal(16, 4));
        assert_abs_diff_eq!((&h * &x).norm(), x.norm(), epsilon = 1e-10);
    }

    #[test]
    fn three_path_profile() {
        let ch = DelayDopplerChannel::three_path(7);
        assert_eq!(ch.paths.len(), 3);
        assert_abs_diff_eq!(ch.total_power(), 1.0, epsilon = 1e-12);
        for (l, p) in ch.paths.iter().enumerate() {
            assert_eq!(p.delay, l);
            assert!((-1..=1).contains(&p.doppler));
        }
        assert_eq!(ch, DelayDopplerChannel::three_path(7));
    }

    #[test]
    fn noise_is_reproducible_with_configured_variance() {
        let n = 100_000;
        let zero = vec![Complex64::new(0.0, 0.0); n];
        let ch = DelayDopplerChannel::identity().with_snr_db(6.0, 1.0);
        let a = apply_channel(&ch, &zero, 42).unwrap();
        let b = apply_channel(&ch, &zero, 42).unwrap();
        assert_eq!(a, b);
        let p: f64 = a.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        let sigma = ch.noise_var / (n as f64).sqrt();
        assert!((p - ch.noise_var).abs() < 3.0 * sigma);
    }

    #[test]
    fn toml_round_trip() {
        let ch = DelayDopplerChannel::three_path(3);
        let text = toml::to_string(&ch).unwrap();
        let back: DelayDopplerChannel = toml::from_str(&text).unwrap();
        assert_eq!(ch, back);
    }
}
