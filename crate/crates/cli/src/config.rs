//! Experiment configuration: one TOML tree per run, every field defaulted.

use std::path::{Path as FsPath, PathBuf};

use anyhow::Context;
use dafts_core::comm::SweepBudget;
use dafts_core::sensing::{CfarConfig, DetectionRule, MusicConfig, RadarGeometry, Target};
use dafts_core::{
    build_qam, AfMode, Constellation, DelayDopplerChannel, OptimizerConfig, Path, Pmf, Prefix, WaveformConfig,
};
use serde::{Deserialize, Serialize};

/// Input the user can fix by editing the config or command line.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_waveform")]
    pub waveform: WaveformConfig,
    #[serde(default)]
    pub constellation: ConstellationSpec,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub af: AfBlock,
    #[serde(default)]
    pub slices: SlicesBlock,
    #[serde(default)]
    pub ber: BerBlock,
    #[serde(default)]
    pub pcs: PcsBlock,
    #[serde(default)]
    pub cfar: CfarBlock,
    #[serde(default)]
    pub music: MusicBlock,
    #[serde(default)]
    pub runtime: RuntimeBlock,
}

fn default_seed() -> u64 {
    1
}

fn default_waveform() -> WaveformConfig {
    WaveformConfig::new(64, 32, 1, 5.0 / 128.0)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSpec {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub pmf: PmfSpec,
}

fn default_order() -> usize {
    64
}

impl Default for ConstellationSpec {
    fn default() -> Self {
        Self {
            order: default_order(),
            pmf: PmfSpec::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PmfSpec {
    #[default]
    Uniform,
    Mb {
        lam1: f64,
        #[serde(default)]
        lam2: f64,
    },
    /// CSV as written by the pcs experiment (`point_index,re,im,label_bits,ring_index,probability`).
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    /// Three unit-power paths at delays 0, 1, 2 with random gains and
    /// Doppler taps in {-1, 0, 1}.
    ThreePath {
        seed: u64,
    },
    Paths {
        paths: Vec<Path>,
    },
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec::ThreePath { seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AfBlock {
    pub trials: usize,
    pub mode: AfMode,
    pub oversample: usize,
    /// Tolerated off-slice/on-slice ratio for the μ4-sensitivity check.
    pub slice_fraction: f64,
}

impl Default for AfBlock {
    fn default() -> Self {
        Self {
            trials: 2000,
            mode: AfMode::Periodic,
            oversample: 1,
            slice_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicesBlock {
    pub trials: usize,
    pub doppler_oversample: usize,
}

impl Default for SlicesBlock {
    fn default() -> Self {
        Self {
            trials: 500,
            doppler_oversample: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BerBlock {
    pub snrs_db: Vec<f64>,
    /// One curve per entry; 0 is the uniform PMF.
    pub lambda1: Vec<f64>,
    pub lambda2: f64,
    pub budget: SweepBudget,
    pub target_ber: f64,
}

impl Default for BerBlock {
    fn default() -> Self {
        Self {
            snrs_db: (0..=16).map(|i| 2.0 * i as f64).collect(),
            lambda1: vec![0.0, -0.57, -1.28, -2.37],
            lambda2: 0.0,
            budget: SweepBudget::default(),
            target_ber: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcsBlock {
    pub snr_db: f64,
    pub omegas: Vec<f64>,
    /// Operating points whose PMFs are written out.
    pub representative: Vec<f64>,
    pub optimizer: OptimizerConfig,
}

impl Default for PcsBlock {
    fn default() -> Self {
        Self {
            snr_db: 12.0,
            omegas: (0..=20).map(|i| i as f64 / 20.0).collect(),
            representative: vec![1.0, 0.5, 0.0],
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfarBlock {
    pub waveform: WaveformConfig,
    pub detector: CfarConfig,
    pub rule: DetectionRule,
    pub snrs_db: Vec<f64>,
    pub trials: usize,
    pub single: Vec<Target>,
    pub dual: Vec<Target>,
    /// c1 values for the dual-target sweep, in units of 1/(2N).
    pub c1_sweep: Vec<f64>,
    /// Pure-noise maps for the false-alarm check.
    pub noise_maps: usize,
}

impl Default for CfarBlock {
    fn default() -> Self {
        let waveform = WaveformConfig::new(128, 64, 1, 5.0 / 256.0).with_prefix(Prefix::None);
        Self {
            waveform,
            detector: CfarConfig::default(),
            rule: DetectionRule::default(),
            snrs_db: (0..=8).map(|i| -20.0 + 5.0 * i as f64).collect(),
            trials: 1000,
            single: vec![Target {
                delay: 20,
                doppler: 10,
                power: 1.0,
            }],
            dual: vec![
                Target {
                    delay: 20,
                    doppler: 10,
                    power: 1.0,
                },
                Target {
                    delay: 45,
                    doppler: 10,
                    power: 0.5,
                },
            ],
            c1_sweep: vec![0.0, 1.0, 5.0],
            noise_maps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MusicBlock {
    pub waveform: WaveformConfig,
    pub geometry: RadarGeometry,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub cp_len: usize,
    pub frames: usize,
    pub snr_db: f64,
    pub music: MusicConfig,
    /// Independent runs averaged into the sidelobe statistics.
    pub repeats: usize,
    /// Pareto operating points (solved at `pcs.snr_db`) whose PMFs are compared.
    pub omegas: Vec<f64>,
}

impl Default for MusicBlock {
    fn default() -> Self {
        Self {
            waveform: WaveformConfig::new(128, 64, 1, 5.0 / 256.0),
            geometry: RadarGeometry { fc: 77e9, fs: 20e6 },
            range_m: 500.0,
            velocity_mps: 20.0,
            cp_len: 72,
            frames: 64,
            snr_db: 20.0,
            music: MusicConfig::default(),
            repeats: 128,
            omegas: vec![1.0, 0.5, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeBlock {
    pub repetitions: usize,
    pub mc_frames: usize,
    pub snr_db: f64,
    pub omega: f64,
    pub sigma_x2: f64,
}

impl Default for RuntimeBlock {
    fn default() -> Self {
        Self {
            repetitions: 20,
            mc_frames: 3000,
            snr_db: 12.0,
            omega: 0.5,
            sigma_x2: 1.0,
        }
    }
}

/// Parsed config plus the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_str(text: &str, base_dir: PathBuf) -> anyhow::Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        let loaded = Self { config, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn from_file(path: &FsPath) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(FsPath::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base).with_context(|| format!("in {}", path.display()))
    }

    fn validate(&self) -> anyhow::Result<()> {
        let c = &self.config;
        for (name, w) in [
            ("waveform", &c.waveform),
            ("cfar.waveform", &c.cfar.waveform),
            ("music.waveform", &c.music.waveform),
        ] {
            if let Err(e) = w.validate() {
                return bad(format!("{name}: {e}"));
            }
        }
        if c.af.trials == 0 || c.slices.trials == 0 || c.cfar.trials == 0 {
            return bad("trial counts must be positive");
        }
        if c.runtime.repetitions == 0 || c.runtime.mc_frames == 0 {
            return bad("runtime repetitions and frames must be positive");
        }
        if c.music.repeats < 2 {
            return bad("music.repeats must be at least 2");
        }
        if c.ber.snrs_db.is_empty() || c.cfar.snrs_db.is_empty() || c.pcs.omegas.is_empty() {
            return bad("SNR and ω lists must be nonempty");
        }
        if c.pcs
            .omegas
            .iter()
            .chain(&c.pcs.representative)
            .chain(&c.music.omegas)
            .any(|w| !(0.0..=1.0).contains(w))
        {
            return bad("ω values must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn constellation(&self) -> anyhow::Result<Constellation> {
        build_qam(self.config.constellation.order).map_err(|e| ConfigError(e.to_string()).into())
    }

    pub fn pmf(&self, c: &Constellation) -> anyhow::Result<Pmf> {
        let pmf = match &self.config.constellation.pmf {
            PmfSpec::Uniform => Pmf::uniform(c),
            PmfSpec::Mb { lam1, lam2 } => dafts_core::pcs::mb_pmf(c, *lam1, *lam2)?.0,
            PmfSpec::File { path } => {
                let full = self.base_dir.join(path);
                let f = std::fs::File::open(&full)
                    .map_err(|e| ConfigError(format!("cannot open PMF file {}: {e}", full.display())))?;
                dafts_core::constellation::read_pmf_csv(f, c)
                    .map_err(|e| ConfigError(format!("{}: {e}", full.display())))?
            }
        };
        Ok(pmf)
    }

    pub fn channel(&self) -> anyhow::Result<DelayDopplerChannel> {
        let ch = match &self.config.channel {
            ChannelSpec::ThreePath { seed } => DelayDopplerChannel::three_path(*seed),
            ChannelSpec::Paths { paths } => DelayDopplerChannel::new(paths.clone(), 0.0),
        };
        if let Err(e) = ch.validate(self.config.waveform.n) {
            return bad(format!("channel: {e}"));
        }
        Ok(ch)
    }
}
