//! Acceptance suite. Every test prints one `criterion N ...: PASS|FAIL` line
//! to stderr before asserting, so the test log doubles as a report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;

use dafts_cli::config::LoadedConfig;
use dafts_cli::experiments::{measure_runtime, music_scenario};
use dafts_core::ambiguity::{
    check_peak_locations, check_slice_sensitivity, closed_form_surfaces, comb_concentration, expected_af_mc_grid,
    origin_calibration, relative_rms, sidelobe_flatness,
};
use dafts_core::comm::{
    ber_ring_approx, ber_sweep, ber_union_bound, ber_union_bound_nn, q_func, simulate_ber, snr_at_ber, ChannelStats,
    SweepBudget,
};
use dafts_core::pcs::{mb_pmf, optimize_hybrid, pareto_filter, pareto_sweep};
use dafts_core::rng::trial_rng;
use dafts_core::sensing::{
    cfar_false_alarm_rate, comparison_variants, detection_probability_sweep, music_sidelobe_stats, music_velocity,
    DetectionRule, MusicScenario, PdRow,
};
use dafts_core::{
    build_qam, pmf_moments, AfGrid, AfMode, CfarConfig, Complex64, DelayDopplerChannel, Modulator, MusicConfig,
    OptimizerConfig, PcsProblem, Pmf, Target, WaveformConfig,
};

/// Written to the stderr handle directly so the line shows without
/// `--nocapture` (the harness only captures the print macros).
fn report(id: &str, what: &str, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id} {what}: {verdict} ({})\n", detail.as_ref());
    std::io::stderr().lock().write_all(line.as_bytes()).unwrap();
}

fn configs() -> [(&'static str, WaveformConfig); 3] {
    let c1 = 5.0 / 128.0;
    [
        ("a", WaveformConfig::new(64, 64, 1, c1)),
        ("b", WaveformConfig::new(64, 32, 1, c1)),
        ("c", WaveformConfig::new(64, 32, 2, c1)),
    ]
}

fn defaults() -> LoadedConfig {
    LoadedConfig::from_str("", ".".into()).unwrap()
}

#[test]
fn criterion_01_closed_form_matches_monte_carlo() {
    let c = build_qam(64).unwrap();
    let p = Pmf::uniform(&c);
    let mom = pmf_moments(&c, &p).unwrap();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, cfg) in configs() {
        let grid = AfGrid::full(cfg.n, 1);
        let mc = expected_af_mc_grid(&cfg, &c, &p, AfMode::Periodic, &grid, 2000, 11).unwrap();
        let closed = closed_form_surfaces(&cfg, mom.mu4, mom.sigma2, AfMode::Periodic, &grid).unwrap();
        let k = origin_calibration(&closed.total, &mc).unwrap();
        let rrms = relative_rms(&mc, &closed.total.scaled(k)).unwrap();
        worst = worst.max(rrms);
        parts.push(format!("{name}: rrms {:.2}%", 100.0 * rrms));
    }
    let pass = worst <= 0.05;
    report("1", "closed-form AF vs 2000-trial MC", pass, parts.join(", "));
    assert!(pass);
}

#[test]
fn criterion_02_origin_law() {
    let cfg = WaveformConfig::new(64, 32, 1, 5.0 / 128.0);
    let md = Modulator::new(&cfg).unwrap();
    let origin = |order: usize, trial: u64| {
        let c = build_qam(order).unwrap();
        let s = Pmf::uniform(&c).sampler().unwrap();
        let x: Vec<Complex64> = s
            .sample_block(&mut trial_rng(21, trial), cfg.m)
            .iter()
            .map(|&i| c.points()[i])
            .collect();
        let e: f64 = md.modulate(&x).unwrap().iter().map(|v| v.norm_sqr()).sum();
        e * e
    };
    let m = cfg.m as f64;
    let qpsk_exact = (0..64).all(|t| (origin(4, t) - m * m).abs() <= 1e-9 * m * m);
    let trials = 10_000;
    let vals: Vec<f64> = (0..trials).map(|t| origin(64, t)).collect();
    let mean = vals.iter().sum::<f64>() / trials as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let sigma = (var / trials as f64).sqrt();
    let law = m * m + 0.3810 * m;
    let pass = qpsk_exact && (mean - law).abs() <= 3.0 * sigma;
    report(
        "2",
        "origin law",
        pass,
        format!(
            "QPSK exact {qpsk_exact}; 64-QAM mean {mean:.2} vs {law:.2}, 3 sigma {:.2}",
            3.0 * sigma
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_delay_slice_sensitivity() {
    let base = WaveformConfig::new(64, 32, 1, 5.0 / 128.0);
    let mut statuses = Vec::new();
    for dl in [0.0, 0.5, std::f64::consts::FRAC_PI_2] {
        let r = check_slice_sensitivity(&base.clone().with_chirps(0.0, -dl, 0.0), AfMode::Periodic, 0.05).unwrap();
        statuses.push((dl, r.status(), r.ratio));
    }
    let pass = statuses[0].1 == "pass" && statuses[1].1 == "pass" && statuses[2].1 == "condition unmet";
    let detail: Vec<String> = statuses
        .iter()
        .map(|(d, s, r)| format!("dl={d:.3}: {s}, ratio {r:.3}"))
        .collect();
    report("3", "mu4 sensitivity confined to delay slices", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_04_peak_locations() {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, cfg) in configs() {
        let r = check_peak_locations(&cfg).unwrap();
        pass &= r.exact && r.passed;
        parts.push(format!("{name}: {} peaks, exact {}", r.predicted.len(), r.exact));
    }
    report("4", "T1 maxima on the enumerated set", pass, parts.join(", "));
    assert!(pass);
}

#[test]
fn criterion_05_flat_pedestal_and_comb() {
    let mu4 = 1.380952380952381;
    let [(_, a), _, (_, c)] = configs();
    let flat = sidelobe_flatness(&a, mu4, AfMode::Periodic).unwrap();
    let comb = comb_concentration(&c, mu4, AfMode::Periodic).unwrap();
    let pass = flat.ratio <= 0.02 && comb.off_ridge_fraction <= 0.05;
    report(
        "5",
        "flat pedestal (a) and comb (c)",
        pass,
        format!(
            "std/mean {:.4} over {} cells; off-ridge energy fraction {:.4}",
            flat.ratio, flat.cells, comb.off_ridge_fraction
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06a_qpsk_union_bound_identity() {
    let c = build_qam(4).unwrap();
    let p = Pmf::uniform(&c);
    let one = Complex64::new(1.0, 0.0);
    let mut worst = 0.0f64;
    for ebn0_db in [0.0, 4.0, 8.0, 12.0] {
        // Es = 2 Eb for QPSK, so N0 = 1 / (2 Eb/N0) at unit symbol energy
        let ebn0 = 10f64.powf(ebn0_db / 10.0);
        let n0 = 1.0 / (2.0 * ebn0);
        let got = ber_union_bound_nn(&c, &p, one, n0).unwrap();
        worst = worst.max((got - q_func((2.0 * ebn0).sqrt())).abs());
    }
    let pass = worst <= 1e-12;
    report(
        "6a",
        "QPSK union bound equals Q(sqrt(2Eb/N0))",
        pass,
        format!("max deviation {worst:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06b_ring_form_vs_full_union_bound_at_20db() {
    let c = build_qam(64).unwrap();
    let p = Pmf::uniform(&c);
    let one = Complex64::new(1.0, 0.0);
    let n0 = 10f64.powf(-2.0);
    let ring = ber_ring_approx(&c, &p, one, n0).unwrap();
    let full = ber_union_bound(&c, &p, one, n0).unwrap();
    let rel = (ring - full).abs() / full;
    let pass = rel <= 0.02;
    report(
        "6b",
        "64-QAM ring form within 2% of full union bound at 20 dB",
        pass,
        format!("ring {ring:.4e}, full {full:.4e}, relative gap {:.1}%", 100.0 * rel),
    );
    assert!(pass);
}

#[test]
fn criterion_06c_simulated_vs_theory_horizontal_gap() {
    let l = defaults();
    let c = build_qam(64).unwrap();
    let ch = l.channel().unwrap();
    let snrs: Vec<f64> = (0..=16).map(|i| 2.0 * i as f64).collect();
    let budget = SweepBudget::default();
    let mut parts = Vec::new();
    let mut pass = true;
    for lam1 in [0.0, -0.57, -1.28, -2.37] {
        let (p, _) = mb_pmf(&c, lam1, 0.0).unwrap();
        let pts = ber_sweep(&l.config.waveform, &ch, &c, &p, &snrs, budget, 31).unwrap();
        let theory: Vec<f64> = pts.iter().map(|x| x.ber_theory_ring).collect();
        let sim: Vec<f64> = pts.iter().map(|x| x.ber_sim).collect();
        let gap = snr_at_ber(&snrs, &theory, 1e-3)
            .zip(snr_at_ber(&snrs, &sim, 1e-3))
            .map(|(a, b)| (a - b).abs());
        // the two simulated points bracketing 1e-3 must each carry 100 errors
        let bracket = sim.windows(2).position(|w| w[0] >= 1e-3 && w[1] < 1e-3);
        let enough = bracket.is_some_and(|i| pts[i].n_errors >= 100 && pts[i + 1].n_errors >= 100);
        pass &= gap.is_some_and(|g| g <= 0.5) && enough;
        parts.push(format!(
            "lam1 {lam1}: gap {:.3} dB, errors ok {enough}",
            gap.unwrap_or(f64::NAN)
        ));
    }
    report("6c", "simulated vs ring-theory gap at BER 1e-3", pass, parts.join("; "));
    assert!(pass);
}

#[test]
fn criterion_07_shaping_orders_simulated_ber() {
    let l = defaults();
    let c = build_qam(64).unwrap();
    let ch = l.channel().unwrap();
    let bits = 100_000 * c.bits_per_symbol() as u64;
    let snr_db = 16.0;
    let bers: Vec<f64> = [0.0, -0.57, -1.28, -2.37]
        .iter()
        .map(|&lam1| {
            let (p, _) = mb_pmf(&c, lam1, 0.0).unwrap();
            simulate_ber(&l.config.waveform, &ch, &c, &p, snr_db, bits, 41)
                .unwrap()
                .ber
        })
        .collect();
    let pass = bers.windows(2).all(|w| w[1] < w[0]);
    report(
        "7",
        "BER strictly decreasing in |lambda1| at 16 dB",
        pass,
        bers.iter().map(|b| format!("{b:.4e}")).collect::<Vec<_>>().join(" > "),
    );
    assert!(pass);
}

#[test]
fn criterion_08_optimizer_contract() {
    let l = defaults();
    let c = build_qam(64).unwrap();
    let opts = OptimizerConfig::default();
    let mut stage_ok = true;
    for seed in 1..=5 {
        let ch = DelayDopplerChannel::three_path(seed);
        let h = dafts_core::channel::effective_channel_matrix(&ch, &l.config.waveform).unwrap();
        let stats = ChannelStats::from_channel(&h, 10f64.powf(1.2), dafts_core::EqualizerKind::Mmse).unwrap();
        let res = optimize_hybrid(&PcsProblem::new(&c, stats), &opts).unwrap();
        stage_ok &= res.refined.objective <= res.grid_best.objective;
    }
    let problem = dafts_cli::experiments::pcs_problem(&l, &c, 12.0).unwrap();
    let comm = pareto_sweep(&problem, &[1.0], &opts).unwrap();
    let uniform = problem.evaluate(1.0, 1.0).unwrap();
    let comm_ok = comm[0].throughput >= uniform.throughput;
    let omegas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let sweep = pareto_sweep(&problem, &omegas, &opts).unwrap();
    let ring_min = 1.0;
    let endpoint_ok = (sweep[0].mu4 - ring_min).abs() <= 1e-6;
    let mut front = pareto_filter(&sweep);
    front.sort_by(|a, b| b.throughput.total_cmp(&a.throughput));
    let front_ok = !front.is_empty() && front.windows(2).all(|w| w[1].mu4 <= w[0].mu4);
    let pass = stage_ok && comm_ok && endpoint_ok && front_ok;
    report(
        "8",
        "optimizer contract",
        pass,
        format!(
            "refine <= grid on 5 channels {stage_ok}; omega=1 {:.4} >= uniform {:.4}; omega=0 mu4 {:.8}; front of {} monotone {front_ok}",
            comm[0].throughput,
            uniform.throughput,
            sweep[0].mu4,
            front.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_closed_form_objective_is_fast() {
    let l = defaults();
    let r = measure_runtime(&l).unwrap();
    let pass = r.speedup >= 10.0;
    report(
        "9",
        "objective at least 10x faster than 3000-frame MC",
        pass,
        format!(
            "median {:.3e} s vs {:.3e} s, speedup {:.0}x",
            r.closed_form_median_s, r.monte_carlo_median_s, r.speedup
        ),
    );
    assert!(pass);
}

fn cfar_sweep(variants: &[(String, WaveformConfig)], targets: &[Target], snrs: &[f64], seed: u64) -> Vec<PdRow> {
    let c = build_qam(64).unwrap();
    let p = Pmf::uniform(&c);
    detection_probability_sweep(
        variants,
        &c,
        &p,
        targets,
        CfarConfig::default(),
        DetectionRule::default(),
        snrs,
        1000,
        seed,
    )
    .unwrap()
}

fn cfar_snrs() -> Vec<f64> {
    (0..=8).map(|i| -20.0 + 5.0 * i as f64).collect()
}

fn dual_targets() -> [Target; 2] {
    [
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
    ]
}

/// Chirp variant Pd at least its unchirped counterpart's, less three
/// standard deviations of the difference, at every SNR.
fn chirp_ordering(rows: &[PdRow]) -> (bool, String) {
    let by: BTreeMap<(String, i64), f64> = rows
        .iter()
        .map(|r| ((r.variant.clone(), r.snr_db as i64), r.pd))
        .collect();
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for (chirp, plain) in [("daft-s-afdm", "dft-s-ofdm"), ("afdm", "ofdm")] {
        for snr in cfar_snrs() {
            let k = snr as i64;
            let (a, b) = (by[&(chirp.to_string(), k)], by[&(plain.to_string(), k)]);
            let sd = ((a * (1.0 - a) + b * (1.0 - b)) / 1000.0).sqrt().max(1.0 / 1000.0);
            let margin = (a - b) / sd;
            worst = worst.min(margin);
            ok &= a >= b - 3.0 * sd;
        }
    }
    (ok, format!("worst (chirp - plain) / sd = {worst:.2}"))
}

fn pd_table(rows: &[PdRow]) -> String {
    let mut by: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for r in rows {
        by.entry(&r.variant).or_default().push(format!("{:.3}", r.pd));
    }
    by.iter()
        .map(|(k, v)| format!("{k} [{}]", v.join(" ")))
        .collect::<Vec<_>>()
        .join("; ")
}

#[test]
fn criterion_10a_cfar_false_alarm_rate() {
    let cfg = CfarConfig::default();
    let (rate, cells) = cfar_false_alarm_rate(&cfg, 128, 10, 51).unwrap();
    let sigma = (cfg.pfa * (1.0 - cfg.pfa) / cells as f64).sqrt();
    let pass = (rate - cfg.pfa).abs() <= 3.0 * sigma;
    report(
        "10a",
        "CFAR false-alarm rate on noise",
        pass,
        format!(
            "{rate:.5} vs {} over {cells} cells, 3 sigma {:.5}",
            cfg.pfa,
            3.0 * sigma
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10b_single_target_detection() {
    let variants: Vec<_> = comparison_variants(128, 128, 1, 5.0 / 256.0)
        .into_iter()
        .take(1)
        .collect();
    let target = [Target {
        delay: 20,
        doppler: 10,
        power: 1.0,
    }];
    let rows = cfar_sweep(&variants, &target, &cfar_snrs(), 61);
    let pd: Vec<f64> = rows.iter().map(|r| r.pd).collect();
    let monotone = pd.windows(2).all(|w| w[1] >= w[0]);
    let top = *pd.last().unwrap();
    let pass = monotone && top >= 0.99;
    report(
        "10b",
        "single-target Pd monotone and >= 0.99 at top SNR",
        pass,
        format!("SNR -20..20 dB step 5: {pd:.3?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10c_dual_target_ordering_full_allocation() {
    let rows = cfar_sweep(
        &comparison_variants(128, 128, 1, 5.0 / 256.0),
        &dual_targets(),
        &cfar_snrs(),
        71,
    );
    let (pass, detail) = chirp_ordering(&rows);
    report(
        "10c",
        "dual-target chirp >= non-chirp, M = N = 128",
        pass,
        format!("{detail}; {}", pd_table(&rows)),
    );
    assert!(pass);
}

#[test]
fn criterion_10d_dual_target_ordering_partial_allocation() {
    let snrs = cfar_snrs();
    let rows = cfar_sweep(
        &comparison_variants(128, 64, 1, 5.0 / 256.0),
        &dual_targets(),
        &snrs,
        81,
    );
    let (pass, detail) = chirp_ordering(&rows);
    let sweep: Vec<(String, WaveformConfig)> = [0.0, 1.0, 5.0]
        .iter()
        .map(|k| {
            (
                format!("c1={k}/2N"),
                WaveformConfig::new(128, 64, 1, k / 256.0).with_prefix(dafts_core::Prefix::None),
            )
        })
        .collect();
    let c1_rows = cfar_sweep(&sweep, &dual_targets(), &[0.0], 82);
    let c1 = c1_rows
        .iter()
        .map(|r| format!("{} Pd {:.3}", r.variant, r.pd))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        "10d",
        "dual-target chirp >= non-chirp, N = 128, M = 64",
        pass,
        format!("{detail}; {}; c1 sweep at 0 dB: {c1}", pd_table(&rows)),
    );
    assert!(pass);
}

#[test]
fn criterion_11_music_sidelobes() {
    let l = defaults();
    let b = &l.config.music;
    let c = l.constellation().unwrap();
    let scn = music_scenario(&l);
    let problem = dafts_cli::experiments::pcs_problem(&l, &c, l.config.pcs.snr_db).unwrap();
    let pts = pareto_sweep(&problem, &[1.0, 0.5, 0.0], &l.config.pcs.optimizer).unwrap();
    let music = MusicConfig::default();
    let cell = 2.0 * std::f64::consts::PI / music.scan_points as f64;
    let free = MusicScenario { snr_db: None, ..scn };
    let r = music_velocity(&b.waveform, &c, &pts[0].pmf, &free, &music, 91).unwrap();
    let peak_cells = (r.peak_theta - r.true_theta).abs() / cell;
    let noisy = MusicScenario {
        snr_db: Some(20.0),
        ..scn
    };
    let mut levels: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| {
            (
                p.mu4,
                music_sidelobe_stats(&b.waveform, &c, &p.pmf, &noisy, &music, 128, 92)
                    .unwrap()
                    .0,
            )
        })
        .collect();
    // pts is ordered by omega: 0 (sensing-centric), 0.5, 1 (comm-centric)
    let gap = levels[2].1 - levels[0].1;
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ordered = levels.windows(2).all(|w| w[1].1 >= w[0].1);
    let pass = peak_cells <= 1.0 && gap >= 1.5 && ordered;
    report(
        "11",
        "MUSIC peak and sidelobe ordering",
        pass,
        format!(
            "noise-free error {peak_cells:.3} cells; sensing-centric {gap:.1} dB lower; (mu4, dB) {:.2?}",
            levels
        ),
    );
    assert!(pass);
}

fn run_cli(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dafts"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

const SMALL: &str = r#"
seed = 7
[af]
trials = 100
[slices]
trials = 40
[ber]
snrs_db = [10.0, 20.0]
lambda1 = [0.0, -1.28]
budget = { min_errors = 20, round_bits = 4000, max_bits = 40000 }
[pcs]
omegas = [0.0, 0.5, 1.0]
[cfar]
snrs_db = [-5.0, 5.0]
trials = 20
noise_maps = 2
[music]
repeats = 4
frames = 16
"#;

#[test]
fn criterion_12_selftest_and_byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let self_ok = run_cli(&["selftest"], &dir.path().join("self")).status.success();
    let mut identical = true;
    let mut files = 0;
    for exp in ["af", "slices", "ber", "pcs", "cfar", "music"] {
        let a = dir.path().join(format!("{exp}-1"));
        let b = dir.path().join(format!("{exp}-2"));
        let ra = run_cli(&[exp, "--config", cfg, "--threads", "1"], &a);
        let rb = run_cli(&[exp, "--config", cfg, "--threads", "3"], &b);
        assert!(ra.status.success(), "{exp}: {}", String::from_utf8_lossy(&ra.stderr));
        assert!(rb.status.success(), "{exp}: {}", String::from_utf8_lossy(&rb.stderr));
        let (x, y) = (csv_bytes(&a), csv_bytes(&b));
        files += x.len();
        identical &= !x.is_empty() && x == y;
    }
    let pass = self_ok && identical;
    report(
        "12",
        "selftest green and reruns byte-identical",
        pass,
        format!("selftest ok {self_ok}; {files} CSVs identical across runs with 1 and 3 threads: {identical}"),
    );
    assert!(pass);
}
