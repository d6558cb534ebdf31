//! Quick internal consistency checks. Each takes well under a second in a
//! release build; a failed check makes the binary exit nonzero.

use dafts_core::ambiguity::{empirical_af, empirical_af_surface, expected_af_closed, expected_af_mc_grid, AfQuery};
use dafts_core::channel::apply_paths;
use dafts_core::comm::{ber_union_bound, ber_union_bound_nn, q_func};
use dafts_core::pcs::{mb_pmf, pareto_sweep, solve_lambda1};
use dafts_core::rng::{complex_gaussian_vec, trial_rng};
use dafts_core::sensing::{ca_cfar, music_velocity, range_doppler_map, CfarConfig, MusicScenario, RangeDopplerMap};
use dafts_core::waveform::modulation_matrix;
use dafts_core::{
    build_qam, pmf_moments, AfGrid, AfMode, Complex64, DelayDopplerChannel, MusicConfig, OptimizerConfig, Path,
    PcsProblem, Pmf, Prefix, WaveformConfig,
};
use serde_json::json;

use crate::output::{col, Artifact, Column, RunOutput};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn(u64) -> anyhow::Result<(bool, String)>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("unitary_modulation", unitary),
    ("af_origin_law", origin_law),
    ("qpsk_union_bound", qpsk_union_bound),
    ("mb_pmf_normalized", mb_normalized),
    ("lambda1_root", lambda1_root),
    ("cfar_flat_map_silent", cfar_flat),
    ("cfar_spike_detected", cfar_spike),
    ("rd_map_matches_af", rd_vs_af),
    ("music_noise_free_peak", music_noise_free),
    ("mc_af_reproducible", mc_reproducible),
    ("pareto_monotone", pareto_monotone),
];

fn small_cfg() -> WaveformConfig {
    WaveformConfig::new(32, 16, 1, 5.0 / 64.0).with_chirps(0.01, 0.02, 0.03)
}

fn unitary(_: u64) -> anyhow::Result<(bool, String)> {
    let mut worst = 0.0f64;
    for spreading in [true, false] {
        let cfg = small_cfg().with_spreading(spreading).with_prefix(Prefix::None);
        let u = modulation_matrix(&cfg)?;
        let g = u.adjoint() * &u;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - Complex64::new(want, 0.0)).norm());
            }
        }
    }
    Ok((worst < 1e-10, format!("max |U^H U - I| = {worst:.2e}")))
}

fn origin_law(seed: u64) -> anyhow::Result<(bool, String)> {
    // constant-modulus symbols make the origin value deterministic
    let cfg = small_cfg();
    let c = build_qam(4)?;
    let p = Pmf::uniform(&c);
    let sampler = p.sampler()?;
    let x: Vec<_> = sampler
        .sample_block(&mut trial_rng(seed, 0), cfg.m)
        .iter()
        .map(|&i| c.points()[i])
        .collect();
    let s = dafts_core::Modulator::new(&cfg)?.modulate(&x)?;
    let got = empirical_af(&s, &AfQuery::periodic(0, 0.0)).norm_sqr();
    let law = expected_af_closed(&cfg, 1.0, &AfQuery::periodic(0, 0.0))?.total;
    let m2 = (cfg.m * cfg.m) as f64;
    let ok = (got - m2).abs() < 1e-9 * m2 && (law - m2).abs() < 1e-9 * m2;
    Ok((ok, format!("single block {got:.6}, closed form {law:.6}, M^2 = {m2}")))
}

fn qpsk_union_bound(_: u64) -> anyhow::Result<(bool, String)> {
    let c = build_qam(4)?;
    let p = Pmf::uniform(&c);
    let one = Complex64::new(1.0, 0.0);
    let mut worst = 0.0f64;
    for s2 in [1.0, 0.1, 0.01] {
        let q1 = q_func((1.0f64 / s2).sqrt());
        let q2 = q_func((2.0f64 / s2).sqrt());
        worst = worst.max((ber_union_bound_nn(&c, &p, one, s2)? - q1).abs());
        worst = worst.max((ber_union_bound(&c, &p, one, s2)? - q1 - q2).abs());
    }
    Ok((worst < 1e-12, format!("max deviation {worst:.2e}")))
}

fn mb_normalized(_: u64) -> anyhow::Result<(bool, String)> {
    let c = build_qam(64)?;
    let mut worst = 0.0f64;
    let mut symmetric = true;
    for (l1, l2) in [(0.0, 0.0), (-1.28, 0.0), (-0.5, -0.35), (0.4, -0.2)] {
        let (p, _) = mb_pmf(&c, l1, l2)?;
        worst = worst.max((p.probs().iter().sum::<f64>() - 1.0).abs());
        symmetric &= p.is_ring_symmetric(&c);
    }
    Ok((
        worst < 1e-12 && symmetric,
        format!("max |sum - 1| = {worst:.2e}, ring symmetric {symmetric}"),
    ))
}

fn lambda1_root(_: u64) -> anyhow::Result<(bool, String)> {
    let c = build_qam(64)?;
    let mut worst = 0.0f64;
    for (lam2, target) in [(0.0, 0.6), (-0.3, 1.0), (-0.7, 1.1)] {
        let l1 = solve_lambda1(&c, lam2, target)?;
        let (p, _) = mb_pmf(&c, l1, lam2)?;
        worst = worst.max((pmf_moments(&c, &p)?.sigma2 - target).abs());
    }
    Ok((worst < 1e-9, format!("max |E|x|^2 - target| = {worst:.2e}")))
}

fn cfar_flat(_: u64) -> anyhow::Result<(bool, String)> {
    let map = RangeDopplerMap {
        n: 32,
        values: vec![1.0; 32 * 32],
    };
    let d = ca_cfar(&map, &CfarConfig::default())?;
    Ok((d.is_empty(), format!("{} detections on a constant map", d.len())))
}

fn cfar_spike(_: u64) -> anyhow::Result<(bool, String)> {
    let mut values = vec![1.0; 32 * 32];
    values[5 * 32 + 30] = 1e4;
    let d = ca_cfar(&RangeDopplerMap { n: 32, values }, &CfarConfig::default())?;
    let ok = d.len() == 1 && d[0].tau == 5 && d[0].nu == 30;
    Ok((
        ok,
        format!("detections {:?}", d.iter().map(|x| (x.tau, x.nu)).collect::<Vec<_>>()),
    ))
}

fn rd_vs_af(seed: u64) -> anyhow::Result<(bool, String)> {
    let s = complex_gaussian_vec(&mut trial_rng(seed, 1), 32, 1.0);
    let ch = DelayDopplerChannel::new(vec![Path::new(Complex64::new(1.0, 0.0), 3, 2)], 0.0);
    let map = range_doppler_map(&s, &apply_paths(&ch, &s)?)?;
    let a = (map.at(3, 2) - empirical_af(&s, &AfQuery::periodic(0, 0.0)).norm_sqr()).abs();
    let b = (map.at(1, 1) - empirical_af(&s, &AfQuery::periodic(-2, -1.0)).norm_sqr()).abs();
    let err = a.max(b);
    Ok((err < 1e-9, format!("max deviation {err:.2e}")))
}

fn music_noise_free(seed: u64) -> anyhow::Result<(bool, String)> {
    let cfg = WaveformConfig::new(64, 32, 1, 5.0 / 128.0);
    let c = build_qam(64)?;
    let scn = MusicScenario {
        delay: 9,
        doppler: 0.37,
        cp_len: 12,
        frames: 32,
        snr_db: None,
    };
    let music = MusicConfig::default();
    let r = music_velocity(&cfg, &c, &Pmf::uniform(&c), &scn, &music, seed)?;
    let cells = (r.peak_theta - r.true_theta).abs() / (2.0 * std::f64::consts::PI / music.scan_points as f64);
    Ok((cells <= 1.0, format!("peak {cells:.3} grid cells from truth")))
}

fn mc_reproducible(seed: u64) -> anyhow::Result<(bool, String)> {
    let cfg = small_cfg();
    let c = build_qam(16)?;
    let p = Pmf::uniform(&c);
    let grid = AfGrid::full(cfg.n, 1);
    let a = expected_af_mc_grid(&cfg, &c, &p, AfMode::Periodic, &grid, 64, seed)?;
    let b = expected_af_mc_grid(&cfg, &c, &p, AfMode::Periodic, &grid, 64, seed)?;
    let same = a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits());
    let s = dafts_core::Modulator::new(&cfg)?.modulate(&vec![c.points()[0]; cfg.m])?;
    let single = empirical_af_surface(&s, AfMode::Periodic, &grid)?;
    let finite = single.values.iter().chain(&a.values).all(|v| v.is_finite());
    Ok((same && finite, format!("bitwise equal {same}, finite {finite}")))
}

fn pareto_monotone(_: u64) -> anyhow::Result<(bool, String)> {
    let c = build_qam(16)?;
    let problem = PcsProblem::new(&c, dafts_core::comm::ChannelStats::awgn(16, 10f64.powf(1.2)));
    let pts = pareto_sweep(&problem, &[0.0, 0.5, 1.0], &OptimizerConfig::default())?;
    let tp: Vec<f64> = pts.iter().map(|p| p.throughput).collect();
    let mu: Vec<f64> = pts.iter().map(|p| p.mu4).collect();
    let ok = tp.windows(2).all(|w| w[1] >= w[0] - 1e-9) && mu.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    Ok((ok, format!("throughput {tp:.4?}, mu4 {mu:.4?}")))
}

pub fn run_checks(seed: u64) -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match f(seed) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e:#}")),
            };
            Check { name, passed, detail }
        })
        .collect()
}

/// Run every check; the artifact lists them all, failed or not.
pub fn run_selftest(seed: u64) -> anyhow::Result<(RunOutput, bool)> {
    const COLS: &[Column] = &[
        col("check", "check name"),
        col("passed", "true | false"),
        col("detail", "measured quantity behind the verdict"),
    ];
    let checks = run_checks(seed);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLS.iter().map(|c| c.name))?;
    for c in &checks {
        w.write_record([c.name, if c.passed { "true" } else { "false" }, &c.detail])?;
    }
    let body = w.into_inner().map_err(|e| anyhow::anyhow!("csv flush: {e}"))?;
    let all = checks.iter().all(|c| c.passed);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    Ok((
        RunOutput {
            experiment: "selftest",
            artifacts: vec![Artifact::new("checks", COLS, body)],
            summary: json!({ "checks": checks.len(), "failed": failed }),
            deterministic: true,
        },
        all,
    ))
}
