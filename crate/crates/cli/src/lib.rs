//! Experiment driver behind the `dafts` binary: config loading, the named
//! experiments, artifact writing and exit-code classification.

pub mod config;
pub mod experiments;
pub mod output;
pub mod selftest;

use std::path::{Path, PathBuf};

use config::{ConfigError, LoadedConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    Af,
    Slices,
    Ber,
    Pcs,
    Cfar,
    Music,
    Runtime,
    Selftest,
}

/// Exit code for an error: 2 for bad input, 3 for numerical failure, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<dafts_core::Error>() {
            if e.is_numerical() {
                return EXIT_NUMERICAL;
            }
            if e.is_input() {
                return EXIT_CONFIG;
            }
        }
    }
    EXIT_FAILURE
}

/// Load the config (defaults when `path` is `None`) and apply a seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<LoadedConfig> {
    let mut l = match path {
        Some(p) => LoadedConfig::from_file(p)?,
        None => LoadedConfig::from_str("", PathBuf::from("."))?,
    };
    if let Some(s) = seed {
        l.config.seed = s;
    }
    Ok(l)
}

/// Run one experiment and write its artifacts. Returns the manifest path
/// and whether the run succeeded (only the self-test can report failure
/// without an error).
pub fn run_experiment(exp: Experiment, l: &LoadedConfig, out: &Path) -> anyhow::Result<(PathBuf, bool)> {
    let (run, ok) = match exp {
        Experiment::Af => (experiments::run_af(l)?, true),
        Experiment::Slices => (experiments::run_slices(l)?, true),
        Experiment::Ber => (experiments::run_ber(l)?, true),
        Experiment::Pcs => (experiments::run_pcs(l)?, true),
        Experiment::Cfar => (experiments::run_cfar(l)?, true),
        Experiment::Music => (experiments::run_music(l)?, true),
        Experiment::Runtime => (experiments::run_runtime(l)?, true),
        Experiment::Selftest => selftest::run_selftest(l.config.seed)?,
    };
    Ok((output::write_run(out, &run, &l.config)?, ok))
}
