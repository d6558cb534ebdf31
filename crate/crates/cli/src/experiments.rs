//! The named experiments. Each returns its artifacts and a JSON summary;
//! writing them out is left to [`crate::output::write_run`].

use std::time::Instant;

use anyhow::Context;
use dafts_core::ambiguity::{
    check_peak_locations, check_slice_sensitivity, closed_form_surfaces, comb_concentration, empirical_af_surface,
    expected_af_mc_grid, origin_calibration, relative_rms, sidelobe_flatness, write_surfaces_csv,
};
use dafts_core::channel::{db_to_linear, effective_channel_matrix};
use dafts_core::comm::{ber_sweep, snr_at_ber, ChannelStats};
use dafts_core::constellation::write_pmf_csv;
use dafts_core::pcs::{mb_pmf, pareto_filter, pareto_sweep, write_pareto_csv};
use dafts_core::rng::trial_rng;
use dafts_core::sensing::{
    cfar_false_alarm_rate, comparison_variants, detection_probability_sweep, music_sidelobe_stats, music_velocity,
    write_music_csv, write_pd_csv, MusicScenario, PdRow,
};
use dafts_core::{
    pmf_moments, AfGrid, AfMode, AfSurface, Constellation, EqualizerKind, Link, Modulator, ParetoPoint, PcsProblem,
    Pmf, WaveformConfig,
};
use serde_json::json;

use crate::config::LoadedConfig;
use crate::output::{col, Artifact, Column, RunOutput};

const SURFACE_COLS: &[Column] = &[
    col("tau", "integer delay offset in samples"),
    col("nu", "Doppler offset in subcarrier spacings"),
    col("value", "squared ambiguity magnitude, or the term value"),
    col("term", "empirical_mc | closed_form | t1 | t2 | t3"),
];

const SUMMARY_COLS: &[Column] = &[col("metric", "metric name"), col("value", "metric value")];

fn csv_body(f: impl FnOnce(&mut Vec<u8>) -> dafts_core::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn records(header: &[Column], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(|c| c.name))?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("csv flush: {e}"))
}

fn summary_artifact(pairs: &[(&str, f64)]) -> anyhow::Result<Artifact> {
    let body = records(
        SUMMARY_COLS,
        pairs.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]),
    )?;
    Ok(Artifact::new("summary", SUMMARY_COLS, body))
}

fn channel_stats(l: &LoadedConfig, snr_db: f64) -> anyhow::Result<ChannelStats> {
    let h = effective_channel_matrix(&l.channel()?, &l.config.waveform)?;
    Ok(ChannelStats::from_channel(
        &h,
        db_to_linear(snr_db),
        EqualizerKind::Mmse,
    )?)
}

/// The weighted-sum problem at `snr_db` on the configured waveform and channel.
pub fn pcs_problem(l: &LoadedConfig, c: &Constellation, snr_db: f64) -> anyhow::Result<PcsProblem> {
    Ok(PcsProblem::new(c, channel_stats(l, snr_db)?))
}

fn omega_label(w: f64) -> String {
    format!("w{w}")
}

/// Expected AF by Monte Carlo and in closed form, with the structural checks.
pub fn run_af(l: &LoadedConfig) -> anyhow::Result<RunOutput> {
    let cfg = &l.config.waveform;
    let blk = &l.config.af;
    let c = l.constellation()?;
    let pmf = l.pmf(&c)?;
    let mom = pmf_moments(&c, &pmf)?;
    let grid = AfGrid::full(cfg.n, blk.oversample);
    let mc = expected_af_mc_grid(cfg, &c, &pmf, blk.mode, &grid, blk.trials, l.config.seed)?;
    let closed = closed_form_surfaces(cfg, mom.mu4, mom.sigma2, blk.mode, &grid)?;
    let k = origin_calibration(&closed.total, &mc)?;
    let calibrated = closed.total.scaled(k);
    let rrms = relative_rms(&mc, &calibrated)?;
    let peak = calibrated.max();
    let max_rel = mc
        .values
        .iter()
        .zip(&calibrated.values)
        .map(|(a, b)| (a - b).abs() / peak)
        .fold(0.0f64, f64::max);

    let md = Modulator::new(cfg)?;
    let sampler = pmf.sampler()?;
    let mut rng = trial_rng(l.config.seed, u64::MAX);
    let x: Vec<_> = sampler
        .sample_block(&mut rng, cfg.m)
        .iter()
        .map(|&i| c.points()[i])
        .collect();
    let single = empirical_af_surface(&md.modulate(&x)?, blk.mode, &grid)?;

    let p1 = check_slice_sensitivity(cfg, blk.mode, blk.slice_fraction)?;
    let p4 = check_peak_locations(cfg)?;
    let flat = sidelobe_flatness(cfg, mom.mu4, AfMode::Periodic)?;
    let comb = comb_concentration(cfg, mom.mu4, AfMode::Periodic)?;
    let origin = mc.tau_index(0).map(|ti| mc.at(ti, 0)).unwrap_or(f64::NAN);
    let m = cfg.m as f64;

    let artifacts = vec![
        Artifact::new("mc", SURFACE_COLS, csv_body(|w| write_surfaces_csv(w, &[&mc]))?),
        Artifact::new(
            "closed",
            SURFACE_COLS,
            csv_body(|w| write_surfaces_csv(w, &[&calibrated, &closed.t1, &closed.t2, &closed.t3]))?,
        ),
        Artifact::new("single", SURFACE_COLS, csv_body(|w| write_surfaces_csv(w, &[&single]))?),
        summary_artifact(&[
            ("mu4", mom.mu4),
            ("sigma2", mom.sigma2),
            ("calibration", k),
            ("relative_rms", rrms),
            ("max_relative_error", max_rel),
            ("origin_mc", origin),
            ("origin_law", mom.sigma2.powi(2) * (m * m + (mom.mu4 - 1.0) * m)),
            ("slice_sensitivity_ratio", p1.ratio),
            ("peak_locations_exact", p4.exact as u8 as f64),
            ("flatness_ratio", flat.ratio),
            ("comb_off_ridge_fraction", comb.off_ridge_fraction),
        ])?,
    ];
    Ok(RunOutput {
        experiment: "af",
        artifacts,
        summary: json!({
            "trials": blk.trials,
            "mode": blk.mode,
            "mu4": mom.mu4,
            "calibration": k,
            "relative_rms": rrms,
            "max_relative_error": max_rel,
            "slice_sensitivity": { "status": p1.status(), "report": p1 },
            "peak_locations": p4,
            "flatness": flat,
            "comb": comb,
        }),
        deterministic: true,
    })
}

/// Single-ring PMF with energy closest to the mean constellation energy.
fn unit_ring_pmf(c: &Constellation) -> anyhow::Result<Pmf> {
    let rings = c.rings();
    let mut best = 0;
    for (i, r) in rings.iter().enumerate() {
        if (r.energy - 1.0).abs() < (rings[best].energy - 1.0).abs() {
            best = i;
        }
    }
    let mut masses = vec![0.0; rings.len()];
    masses[best] = 1.0;
    Ok(Pmf::from_ring_masses(c, &masses)?)
}

/// Zero-Doppler and zero-delay cuts for the four waveform variants.
pub fn run_slices(l: &LoadedConfig) -> anyhow::Result<RunOutput> {
    const COLS: &[Column] = &[
        col("variant", "waveform variant"),
        col("pmf", "uniform | ring (single ring, unit fourth-moment ratio)"),
        col("axis", "delay (zero-Doppler cut) | doppler (zero-delay cut)"),
        col("offset", "delay in samples or Doppler in subcarrier spacings"),
        col("value", "expected squared AF normalized to its origin value"),
        col("source", "empirical_mc | closed_form"),
    ];
    let w = &l.config.waveform;
    let blk = &l.config.slices;
    let c = l.constellation()?;
    let pmfs = [("uniform", Pmf::uniform(&c)), ("ring", unit_ring_pmf(&c)?)];
    let delay_grid = AfGrid::full(w.n, 1);
    let doppler_grid = AfGrid {
        taus: vec![0],
        ..AfGrid::full(w.n, blk.doppler_oversample)
    };
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<Vec<String>>, v: &str, p: &str, s: &AfSurface, src: &str| {
        let ti0 = s.tau_index(0).expect("grid holds τ = 0");
        let norm = s.at(ti0, 0);
        if s.taus.len() > 1 {
            for (ti, tau) in s.taus.iter().enumerate() {
                rows.push(vec![
                    v.into(),
                    p.into(),
                    "delay".into(),
                    tau.to_string(),
                    (s.at(ti, 0) / norm).to_string(),
                    src.into(),
                ]);
            }
        } else {
            for (ni, nu) in s.nus.iter().enumerate() {
                rows.push(vec![
                    v.into(),
                    p.into(),
                    "doppler".into(),
                    nu.to_string(),
                    (s.at(0, ni) / norm).to_string(),
                    src.into(),
                ]);
            }
        }
    };
    let mut mu4s = serde_json::Map::new();
    for (name, cfg) in comparison_variants(w.n, w.m, w.s, w.c1) {
        for (pname, pmf) in &pmfs {
            let mom = pmf_moments(&c, pmf)?;
            mu4s.insert((*pname).into(), json!(mom.mu4));
            for grid in [&delay_grid, &doppler_grid] {
                let mc = expected_af_mc_grid(&cfg, &c, pmf, AfMode::Periodic, grid, blk.trials, l.config.seed)?;
                push(&mut rows, &name, pname, &mc, "empirical_mc");
                if cfg.spreading {
                    let closed = closed_form_surfaces(&cfg, mom.mu4, mom.sigma2, AfMode::Periodic, grid)?;
                    push(&mut rows, &name, pname, &closed.total, "closed_form");
                }
            }
        }
    }
    Ok(RunOutput {
        experiment: "slices",
        artifacts: vec![Artifact::new("cuts", COLS, records(COLS, rows)?)],
        summary: json!({ "trials": blk.trials, "mu4": mu4s }),
        deterministic: true,
    })
}

/// Theory and simulated BER for a family of MB PMFs.
pub fn run_ber(l: &LoadedConfig) -> anyhow::Result<RunOutput> {
    const COLS: &[Column] = &[
        col("lam1", "MB multiplier on |x|^2"),
        col("lam2", "MB multiplier on |x|^4"),
        col("snr_db", "SNR E|x|^2 / N0 in dB"),
        col("ber_theory_ring", "energy-ring union-bound BER"),
        col("ber_theory_union", "full pairwise union-bound BER"),
        col("ber_sim", "simulated BER with MMSE equalization and MAP detection"),
        col("n_errors", "simulated bit errors"),
        col("n_bits", "simulated bits"),
    ];
    let blk = &l.config.ber;
    let c = l.constellation()?;
    let ch = l.channel()?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (i, &lam1) in blk.lambda1.iter().enumerate() {
        let (pmf, _) = mb_pmf(&c, lam1, blk.lambda2)?;
        let mom = pmf_moments(&c, &pmf)?;
        let seed = l.config.seed.wrapping_add(1_000_003 * i as u64);
        let pts = ber_sweep(&l.config.waveform, &ch, &c, &pmf, &blk.snrs_db, blk.budget, seed)?;
        for p in &pts {
            rows.push(vec![
                lam1.to_string(),
                blk.lambda2.to_string(),
                p.snr_db.to_string(),
                p.ber_theory_ring.to_string(),
                p.ber_theory_union.to_string(),
                p.ber_sim.to_string(),
                p.n_errors.to_string(),
                p.n_bits.to_string(),
            ]);
        }
        let snrs: Vec<f64> = pts.iter().map(|p| p.snr_db).collect();
        let theory: Vec<f64> = pts.iter().map(|p| p.ber_theory_ring).collect();
        let sim: Vec<f64> = pts.iter().map(|p| p.ber_sim).collect();
        let at_theory = snr_at_ber(&snrs, &theory, blk.target_ber);
        let at_sim = snr_at_ber(&snrs, &sim, blk.target_ber);
        curves.push(json!({
            "lam1": lam1,
            "mu4": mom.mu4,
            "sigma2": mom.sigma2,
            "entropy_bits": mom.entropy_bits,
            "snr_at_target_theory_db": at_theory,
            "snr_at_target_sim_db": at_sim,
            "gap_db": at_theory.zip(at_sim).map(|(a, b)| (a - b).abs()),
        }));
    }
    Ok(RunOutput {
        experiment: "ber",
        artifacts: vec![Artifact::new("curves", COLS, records(COLS, rows)?)],
        summary: json!({ "target_ber": blk.target_ber, "curves": curves }),
        deterministic: true,
    })
}

const PMF_COLS: &[Column] = &[
    col("point_index", "constellation point index"),
    col("re", "in-phase coordinate (unit average energy)"),
    col("im", "quadrature coordinate"),
    col("label_bits", "Gray label, most significant bit first"),
    col("ring_index", "energy ring, ascending energy"),
    col("probability", "probability of the point"),
];

const PARETO_COLS: &[Column] = &[
    col("omega", "communication weight"),
    col("sigma_x2", "average symbol energy"),
    col("lam1", "MB multiplier on |x|^2 (empty at omega = 0)"),
    col("lam2", "MB multiplier on |x|^4 (empty at omega = 0)"),
    col("entropy", "PMF entropy in bits"),
    col("mu4", "fourth-moment ratio E|x|^4 / (E|x|^2)^2"),
    col("ber", "ring-form BER averaged over subcarriers"),
    col("throughput", "effective throughput in bits per symbol"),
    col("objective", "weighted-sum objective"),
];

fn pareto_points(l: &LoadedConfig, c: &Constellation, omegas: &[f64]) -> anyhow::Result<Vec<ParetoPoint>> {
    let problem = pcs_problem(l, c, l.config.pcs.snr_db)?;
    Ok(pareto_sweep(&problem, omegas, &l.config.pcs.optimizer)?)
}

/// Pareto sweep and the representative PMFs.
pub fn run_pcs(l: &LoadedConfig) -> anyhow::Result<RunOutput> {
    let blk = &l.config.pcs;
    let c = l.constellation()?;
    let pts = pareto_points(l, &c, &blk.omegas)?;
    let front = pareto_filter(&pts);
    let mut artifacts = vec![
        Artifact::new("sweep", PARETO_COLS, csv_body(|w| write_pareto_csv(w, &pts))?),
        Artifact::new("front", PARETO_COLS, csv_body(|w| write_pareto_csv(w, &front))?),
    ];
    let reps = pareto_points(l, &c, &blk.representative)?;
    let mut rep_summary = Vec::new();
    for p in &reps {
        artifacts.push(Artifact::new(
            format!("pmf_{}", omega_label(p.omega)),
            PMF_COLS,
            csv_body(|w| write_pmf_csv(w, &c, &p.pmf))?,
        ));
        rep_summary.push(json!({
            "omega": p.omega,
            "mu4": p.mu4,
            "throughput": p.throughput,
            "entropy": p.entropy,
            "sigma_x2": p.sigma_x2,
        }));
    }
    Ok(RunOutput {
        experiment: "pcs",
        artifacts,
        summary: json!({
            "snr_db": blk.snr_db,
            "points": pts.len(),
            "front_points": front.len(),
            "representative": rep_summary,
        }),
        deterministic: true,
    })
}

const PD_COLS: &[Column] = &[
    col("variant", "waveform variant"),
    col("snr_db", "per-sample echo SNR of the primary target in dB"),
    col(
        "pd",
        "fraction of trials with every target found and spurious detections within budget",
    ),
    col("trials", "Monte Carlo trials"),
];

/// False-alarm calibration and detection-probability sweeps.
pub fn run_cfar(l: &LoadedConfig) -> anyhow::Result<RunOutput> {
    let blk = &l.config.cfar;
    let w = &blk.waveform;
    let c = l.constellation()?;
    let pmf = l.pmf(&c)?;
    let seed = l.config.seed;
    let (rate, cells) = cfar_false_alarm_rate(&blk.detector, w.n, blk.noise_maps, seed)?;
    let sigma = (blk.detector.pfa * (1.0 - blk.detector.pfa) / cells as f64).sqrt();
    let variants = comparison_variants(w.n, w.m, w.s, w.c1);
    let sweep = |targets, variants: &[(String, WaveformConfig)]| -> anyhow::Result<Vec<PdRow>> {
        Ok(detection_probability_sweep(
            variants,
            &c,
            &pmf,
            targets,
            blk.detector,
            blk.rule,
            &blk.snrs_db,
            blk.trials,
            seed,
        )?)
    };
    let single = sweep(&blk.single, &variants)?;
    let dual = sweep(&blk.dual, &variants)?;
    let c1_variants: Vec<(String, WaveformConfig)> = blk
        .c1_sweep
        .iter()
        .map(|k| {
            let cfg = WaveformConfig {
                c1: k / (2.0 * w.n as f64),
                ..w.clone()
            };
            (format!("c1={k}/2N"), cfg)
        })
        .collect();
    let c1 = sweep(&blk.dual, &c1_variants)?;
    let artifacts = vec![
        Artifact::new("single", PD_COLS, csv_body(|b| write_pd_csv(b, &single))?),
        Artifact::new("dual", PD_COLS, csv_body(|b| write_pd_csv(b, &dual))?),
        Artifact::new("c1_sweep", PD_COLS, csv_body(|b| write_pd_csv(b, &c1))?),
        summary_artifact(&[
            ("pfa_configured", blk.detector.pfa),
            ("pfa_empirical", rate),
            ("pfa_sigma", sigma),
            ("cells", cells as f64),
            ("alpha", blk.detector.alpha()),
            ("training_cells", blk.detector.training_cells() as f64),
        ])?,
    ];
    Ok(RunOutput {
        experiment: "cfar",
        artifacts,
        summary: json!({
            "pfa_configured": blk.detector.pfa,
            "pfa_empirical": rate,
            "pfa_within_3sigma": (rate - blk.detector.pfa).abs() <= 3.0 * sigma,
            "trials": blk.trials,
        }),
        deterministic: true,
    })
}

/// Scenario derived from the physical range and velocity.
pub fn music_scenario(l: &LoadedConfig) -> MusicScenario {
    let b = &l.config.music;
    MusicScenario {
        delay: b.geometry.range_to_tap(b.range_m),
        doppler: b.geometry.velocity_to_bins(b.velocity_mps, b.waveform.n),
        cp_len: b.cp_len,
        frames: b.frames,
        snr_db: Some(b.snr_db),
    }
}

/// MUSIC velocity spectra and sidelobe statistics for Pareto PMFs.
pub fn run_music(l: &LoadedConfig) -> anyhow::Result<RunOutput> {
    const SPEC_COLS: &[Column] = &[
        col("velocity", "radial velocity in m/s"),
        col("power_db", "MUSIC pseudo-spectrum relative to its peak in dB"),
    ];
    const SL_COLS: &[Column] = &[
        col("omega", "communication weight of the PMF"),
        col("mu4", "fourth-moment ratio of the PMF"),
        col(
            "sidelobe_mean_db",
            "mean over runs of the average level outside the mainlobe",
        ),
        col("sidelobe_std_db", "sample standard deviation over runs"),
        col("repeats", "independent runs"),
    ];
    let b = &l.config.music;
    let c = l.constellation()?;
    let scn = music_scenario(l);
    let frame_len = b.waveform.n + b.cp_len;
    let pts = pareto_points(l, &c, &b.omegas)?;
    let noise_free = MusicScenario { snr_db: None, ..scn };
    let truth = music_velocity(&b.waveform, &c, &pts[0].pmf, &noise_free, &b.music, l.config.seed)
        .context("noise-free MUSIC run")?;
    let cell = 2.0 * std::f64::consts::PI / b.music.scan_points as f64;
    let mut artifacts = Vec::new();
    let mut sl_rows = Vec::new();
    let mut levels = Vec::new();
    for p in &pts {
        let r = music_velocity(&b.waveform, &c, &p.pmf, &scn, &b.music, l.config.seed)?;
        let velocities: Vec<f64> = r
            .thetas
            .iter()
            .map(|&t| b.geometry.phase_to_velocity(t, frame_len))
            .collect();
        artifacts.push(Artifact::new(
            format!("spectrum_{}", omega_label(p.omega)),
            SPEC_COLS,
            csv_body(|w| write_music_csv(w, &velocities, &r.spectrum_db))?,
        ));
        let (mean, sd) = music_sidelobe_stats(&b.waveform, &c, &p.pmf, &scn, &b.music, b.repeats, l.config.seed)?;
        sl_rows.push(vec![
            p.omega.to_string(),
            p.mu4.to_string(),
            mean.to_string(),
            sd.to_string(),
            b.repeats.to_string(),
        ]);
        levels.push(json!({ "omega": p.omega, "mu4": p.mu4, "sidelobe_mean_db": mean, "sidelobe_std_db": sd }));
    }
    artifacts.push(Artifact::new("sidelobes", SL_COLS, records(SL_COLS, sl_rows)?));
    Ok(RunOutput {
        experiment: "music",
        artifacts,
        summary: json!({
            "delay_taps": scn.delay,
            "doppler_bins": scn.doppler,
            "true_velocity": b.velocity_mps,
            "noise_free_peak_error_cells": (truth.peak_theta - truth.true_theta).abs() / cell,
            "levels": levels,
        }),
        deterministic: true,
    })
}

/// Timing of one closed-form objective evaluation and one simulated
/// throughput evaluation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RuntimeReport {
    pub closed_form_s: Vec<f64>,
    pub monte_carlo_s: Vec<f64>,
    pub closed_form_median_s: f64,
    pub monte_carlo_median_s: f64,
    pub speedup: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn measure_runtime(l: &LoadedConfig) -> anyhow::Result<RuntimeReport> {
    let b = &l.config.runtime;
    let c = l.constellation()?;
    let problem = pcs_problem(l, &c, b.snr_db)?;
    let point = problem.evaluate(b.omega, b.sigma_x2)?;
    let link = Link::new(&l.config.waveform, &l.channel()?, &c, &point.pmf, b.snr_db)?;
    let mut cf = Vec::with_capacity(b.repetitions);
    let mut mc = Vec::with_capacity(b.repetitions);
    for r in 0..b.repetitions {
        let t = Instant::now();
        std::hint::black_box(problem.evaluate(std::hint::black_box(b.omega), b.sigma_x2)?);
        cf.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        std::hint::black_box(link.mc_throughput(b.mc_frames, l.config.seed.wrapping_add(r as u64))?);
        mc.push(t.elapsed().as_secs_f64());
    }
    let (a, m) = (median(&cf), median(&mc));
    Ok(RuntimeReport {
        speedup: m / a,
        closed_form_median_s: a,
        monte_carlo_median_s: m,
        closed_form_s: cf,
        monte_carlo_s: mc,
    })
}

/// Runtime table. Timings vary between runs by nature.
pub fn run_runtime(l: &LoadedConfig) -> anyhow::Result<RunOutput> {
    const COLS: &[Column] = &[
        col("method", "closed_form_objective | monte_carlo_throughput"),
        col("median_s", "median wall time of one evaluation in seconds"),
        col("min_s", "fastest repetition in seconds"),
        col("max_s", "slowest repetition in seconds"),
        col("repetitions", "timed repetitions"),
        col("frames", "simulated frames per evaluation (0 for closed form)"),
    ];
    let b = &l.config.runtime;
    let r = measure_runtime(l)?;
    let row = |name: &str, v: &[f64], med: f64, frames: usize| {
        vec![
            name.to_string(),
            med.to_string(),
            v.iter().copied().fold(f64::INFINITY, f64::min).to_string(),
            v.iter().copied().fold(0.0, f64::max).to_string(),
            v.len().to_string(),
            frames.to_string(),
        ]
    };
    let body = records(
        COLS,
        [
            row("closed_form_objective", &r.closed_form_s, r.closed_form_median_s, 0),
            row(
                "monte_carlo_throughput",
                &r.monte_carlo_s,
                r.monte_carlo_median_s,
                b.mc_frames,
            ),
        ],
    )?;
    Ok(RunOutput {
        experiment: "runtime",
        artifacts: vec![Artifact::new("table", COLS, body)],
        summary: json!({
            "closed_form_median_s": r.closed_form_median_s,
            "monte_carlo_median_s": r.monte_carlo_median_s,
            "speedup": r.speedup,
            "threads": rayon::current_num_threads(),
        }),
        deterministic: false,
    })
}
