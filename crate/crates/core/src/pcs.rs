//! Generalized Maxwell-Boltzmann shaping and the weighted-sum ISAC optimizer.
//!
//! The PMF family is `p(x) ∝ exp(λ1 |x|² + λ2 |x|⁴)`. The optimizer maps a
//! weight ω to `λ2 = -(1-ω) ln2 / ω`, fixes λ1 by the power constraint and
//! minimizes `J = -ω I + (1-ω) μ4` over (ω, σx²): first on a grid, then by
//! Nelder-Mead from the best grid point.

use std::f64::consts::LN_2;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comm::{throughput_from, ChannelStats, RingBer};
use crate::constellation::{pmf_moments, Constellation, Pmf};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MbParams {
    pub lam1: f64,
    pub lam2: f64,
    /// `ln Z`; Z itself can overflow for extreme multipliers.
    pub log_z: f64,
}

/// Ring-level exponents `λ1 E + λ2 E²`, shifted so the maximum is 0, and the
/// shift.
fn ring_log_weights(c: &Constellation, lam1: f64, lam2: f64) -> (Vec<f64>, f64) {
    let e: Vec<f64> = c
        .rings()
        .iter()
        .map(|r| lam1 * r.energy + lam2 * r.energy * r.energy)
        .collect();
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (e.into_iter().map(|v| v - max).collect(), max)
}

/// `exp(λ1|x|² + λ2|x|⁴) / Z`, computed with max-exponent subtraction.
pub fn mb_pmf(c: &Constellation, lam1: f64, lam2: f64) -> Result<(Pmf, MbParams)> {
    if !lam1.is_finite() || !lam2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite multipliers ({lam1}, {lam2})"
        )));
    }
    let (lw, shift) = ring_log_weights(c, lam1, lam2);
    let w: Vec<f64> = lw.iter().map(|v| v.exp()).collect();
    let sum: f64 = c.rings().iter().zip(&w).map(|(r, w)| r.members.len() as f64 * w).sum();
    let mut probs = vec![0.0; c.order()];
    for (r, wr) in c.rings().iter().zip(&w) {
        for &i in &r.members {
            probs[i] = wr / sum;
        }
    }
    let pmf = Pmf::from_weights(&probs)?;
    Ok((
        pmf,
        MbParams {
            lam1,
            lam2,
            log_z: shift + sum.ln(),
        },
    ))
}

/// Mean and variance of |x|² under the family member `(λ1, λ2)`.
fn power_and_var(c: &Constellation, lam1: f64, lam2: f64) -> (f64, f64) {
    let (lw, _) = ring_log_weights(c, lam1, lam2);
    let mut z = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (r, l) in c.rings().iter().zip(&lw) {
        let w = r.members.len() as f64 * l.exp();
        z += w;
        m1 += w * r.energy;
        m2 += w * r.energy * r.energy;
    }
    let mean = m1 / z;
    (mean, (m2 / z - mean * mean).max(0.0))
}

/// λ1 such that `E|x|² = target` for the given λ2. Safeguarded Newton
/// (the derivative is Var|x|²) inside an expanding bisection bracket.
pub fn solve_lambda1(c: &Constellation, lam2: f64, target: f64) -> Result<f64> {
    let (emin, emax) = c.energy_range();
    if !(target > emin && target < emax) || !lam2.is_finite() {
        return Err(Error::InfeasiblePower {
            target,
            min: emin,
            max: emax,
        });
    }
    let f = |l: f64| power_and_var(c, l, lam2);
    // bracket: f(lo) < target < f(hi); E|x|² is increasing in λ1
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut guard = 0;
    while f(lo).0 >= target {
        lo *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Numerical("could not bracket λ1 from below".into()));
        }
    }
    while f(hi).0 <= target {
        hi *= 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::Numerical("could not bracket λ1 from above".into()));
        }
    }
    // lo < 0 < hi by construction
    let mut x = 0.0;
    for _ in 0..500 {
        let (p, v) = f(x);
        let r = p - target;
        if r.abs() <= 1e-13 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = if v > 0.0 { x - r / v } else { f64::NAN };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    let r = f(x).0 - target;
    if r.abs() <= 1e-10 {
        Ok(x)
    } else {
        Err(Error::Numerical(format!("λ1 root residual {r:e} above 1e-10")))
    }
}

/// `λ2 = -(1-ω) ln2 / ω`; the sign makes the fourth moment shrink as the
/// sensing weight `1-ω` grows.
pub fn lambda2_from_omega(omega: f64) -> f64 {
    -(1.0 - omega) * LN_2 / omega
}

/// `J = -ω I + (1-ω) μ4`.
pub fn objective_j(throughput: f64, mu4: f64, omega: f64) -> f64 {
    -omega * throughput + (1.0 - omega) * mu4
}

/// One evaluated operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub omega: f64,
    pub sigma_x2: f64,
    /// `None` for the ω = 0 limit, which lies outside the parametric family.
    pub params: Option<MbParams>,
    pub entropy: f64,
    pub mu4: f64,
    pub ber: f64,
    pub throughput: f64,
    pub objective: f64,
    #[serde(skip)]
    pub pmf: Pmf,
}

/// Search settings for [`optimize_hybrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_w_grid")]
    pub w_grid: Vec<f64>,
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
}

fn default_w_grid() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}
fn default_p_grid() -> Vec<f64> {
    vec![0.7, 0.85, 1.0, 1.15]
}
fn default_tol() -> f64 {
    1e-4
}
fn default_max_evals() -> usize {
    200
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            w_grid: default_w_grid(),
            p_grid: default_p_grid(),
            tol: default_tol(),
            max_evals: default_max_evals(),
        }
    }
}

/// Closed-form objective machinery for one constellation and channel.
#[derive(Debug, Clone)]
pub struct PcsProblem {
    c: Constellation,
    ring_ber: RingBer,
    stats: ChannelStats,
}

pub const OMEGA_MIN: f64 = 1e-3;

impl PcsProblem {
    pub fn new(c: &Constellation, stats: ChannelStats) -> Self {
        Self {
            ring_ber: RingBer::new(c),
            c: c.clone(),
            stats,
        }
    }

    pub fn constellation(&self) -> &Constellation {
        &self.c
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    /// Interior of the achievable power interval, shrunk by a small margin.
    pub fn power_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.c.energy_range();
        let m = 1e-6 * (hi - lo);
        (lo + m, hi - m)
    }

    /// Score an arbitrary PMF with weight ω.
    pub fn score(&self, pmf: &Pmf, omega: f64, params: Option<MbParams>) -> Result<ParetoPoint> {
        let mom = pmf_moments(&self.c, pmf)?;
        let ring_p = pmf.ring_point_probs(&self.c)?;
        let ber = self.ring_ber.eval_avg(&ring_p, &self.stats, mom.sigma2)?;
        let throughput = throughput_from(mom.entropy_bits, ber);
        Ok(ParetoPoint {
            omega,
            sigma_x2: mom.sigma2,
            params,
            entropy: mom.entropy_bits,
            mu4: mom.mu4,
            ber,
            throughput,
            objective: objective_j(throughput, mom.mu4, omega),
            pmf: pmf.clone(),
        })
    }

    /// Family member for shape weight ω at power σx², scored with the same ω.
    pub fn evaluate(&self, omega: f64, sigma_x2: f64) -> Result<ParetoPoint> {
        let lam2 = lambda2_from_omega(omega);
        let lam1 = solve_lambda1(&self.c, lam2, sigma_x2)?;
        let (pmf, params) = mb_pmf(&self.c, lam1, lam2)?;
        self.score(&pmf, omega, Some(params))
    }

    fn project(&self, omega: f64, sigma_x2: f64) -> (f64, f64) {
        let (lo, hi) = self.power_bounds();
        (omega.clamp(OMEGA_MIN, 1.0), sigma_x2.clamp(lo, hi))
    }

    /// ω = 0: constant-modulus limit. Among single-ring PMFs whose energy lies
    /// in `[p_lo, p_hi]` (or, if none does, the ring nearest that interval),
    /// keep the one with the highest throughput.
    pub fn sensing_limit(&self, p_lo: f64, p_hi: f64) -> Result<ParetoPoint> {
        let rings = self.c.rings();
        let dist = |e: f64| {
            if e < p_lo {
                p_lo - e
            } else if e > p_hi {
                e - p_hi
            } else {
                0.0
            }
        };
        let best_d = rings.iter().map(|r| dist(r.energy)).fold(f64::INFINITY, f64::min);
        let mut best: Option<ParetoPoint> = None;
        for (ri, r) in rings.iter().enumerate() {
            if dist(r.energy) > best_d + 1e-12 {
                continue;
            }
            let mut masses = vec![0.0; rings.len()];
            masses[ri] = 1.0;
            let pmf = Pmf::from_ring_masses(&self.c, &masses)?;
            let pt = self.score(&pmf, 0.0, None)?;
            if best.as_ref().is_none_or(|b| pt.throughput > b.throughput) {
                best = Some(pt);
            }
        }
        best.ok_or(Error::EmptySupport)
    }
}

/// Output of [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead with reflection 1, expansion 2, contraction 0.5 and shrink 0.5.
/// Stops when the simplex diameter drops below `tol` or after `max_evals`
/// function evaluations. The first vertex is `x0`; the others step along
/// each axis by `steps[i]`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], tol: f64, max_evals: usize) -> Result<NmResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = f(x)?;
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)?));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let fx = eval(&x, &mut evals)?;
        simplex.push((x, fx));
    }
    let diameter = |s: &[(Vec<f64>, f64)]| {
        let mut d = 0.0f64;
        for a in s {
            for b in s {
                let dist = a.0.iter().zip(&b.0).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                d = d.max(dist);
            }
        }
        d
    };
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    let mut converged = false;
    loop {
        // stable sort keeps the earlier vertex first on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < tol {
            converged = true;
            break;
        }
        if evals >= max_evals {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v.0[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let xr = lerp(&centroid, &worst.0, -1.0);
        let fr = eval(&xr, &mut evals)?;
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &worst.0, -2.0);
            let fe = eval(&xe, &mut evals)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // contraction, outside if the reflection improved on the worst point
        let (xc, fc) = if fr < worst.1 {
            let xc = lerp(&centroid, &xr, 0.5);
            let fc = eval(&xc, &mut evals)?;
            (xc, fc)
        } else {
            let xc = lerp(&centroid, &worst.0, 0.5);
            let fc = eval(&xc, &mut evals)?;
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x = lerp(&best, &v.0, 0.5);
            let fx = eval(&x, &mut evals)?;
            *v = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Ok(NmResult {
        x,
        fx,
        evals,
        converged,
    })
}

/// Both stages of the hybrid optimizer.
#[derive(Debug, Clone)]
pub struct HybridResult {
    pub grid_best: ParetoPoint,
    pub refined: ParetoPoint,
    pub grid_evals: usize,
    pub nm_evals: usize,
    pub skipped: usize,
}

/// Grid search over `w_grid × p_grid` followed by Nelder-Mead over (ω, σx²).
/// A single-valued ω grid pins ω and the refinement runs over σx² alone.
/// Infeasible power values are skipped. ω = 0 in the grid is the
/// constant-modulus limit.
pub fn optimize_hybrid(problem: &PcsProblem, opts: &OptimizerConfig) -> Result<HybridResult> {
    if opts.w_grid.is_empty() || opts.p_grid.is_empty() {
        return Err(Error::InvalidArgument("optimizer grids must be nonempty".into()));
    }
    if opts.w_grid.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::InvalidArgument("ω grid must lie in [0, 1]".into()));
    }
    let (emin, emax) = problem.constellation().energy_range();
    let cells: Vec<(f64, f64)> = opts
        .w_grid
        .iter()
        .flat_map(|&w| opts.p_grid.iter().map(move |&p| (w, p)))
        .collect();
    let results: Vec<Option<Result<ParetoPoint>>> = cells
        .par_iter()
        .map(|&(w, p)| {
            if !(p > emin && p < emax) {
                return None;
            }
            Some(if w == 0.0 {
                problem.sensing_limit(p, p)
            } else {
                problem.evaluate(w, p)
            })
        })
        .collect();
    let mut skipped = 0;
    let mut best: Option<ParetoPoint> = None;
    for r in results {
        match r {
            None => skipped += 1,
            Some(r) => {
                let pt = r?;
                if best.as_ref().is_none_or(|b| pt.objective < b.objective) {
                    best = Some(pt);
                }
            }
        }
    }
    let grid_best = best.ok_or_else(|| Error::InvalidArgument("every power grid value is infeasible".into()))?;
    let grid_evals = cells.len() - skipped;
    if grid_best.omega == 0.0 {
        // the limit point has no continuous neighbourhood in the family
        return Ok(HybridResult {
            refined: grid_best.clone(),
            grid_best,
            grid_evals,
            nm_evals: 0,
            skipped,
        });
    }
    let pinned = opts.w_grid.len() == 1;
    let p_span = {
        let lo = opts.p_grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = opts.p_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (hi - lo) / 4.0
        } else {
            0.05
        }
    };
    let w0 = grid_best.omega;
    let p0 = grid_best.sigma_x2;
    let objective = |x: &[f64]| -> Result<f64> {
        let (w, p) = if pinned {
            problem.project(w0, x[0])
        } else {
            problem.project(x[0], x[1])
        };
        Ok(problem.evaluate(w, p)?.objective)
    };
    let nm = if pinned {
        nelder_mead(objective, &[p0], &[p_span], opts.tol, opts.max_evals)?
    } else {
        // step towards the interior so the first simplex is not degenerate at a bound
        let ws = if w0 > 0.5 { -0.1 } else { 0.1 };
        nelder_mead(objective, &[w0, p0], &[ws, p_span], opts.tol, opts.max_evals)?
    };
    let (w, p) = if pinned {
        problem.project(w0, nm.x[0])
    } else {
        problem.project(nm.x[0], nm.x[1])
    };
    let refined = problem.evaluate(w, p)?;
    // Nelder-Mead starts from the grid optimum and never loses its best vertex
    let refined = if refined.objective <= grid_best.objective {
        refined
    } else {
        grid_best.clone()
    };
    Ok(HybridResult {
        grid_best,
        refined,
        grid_evals,
        nm_evals: nm.evals,
        skipped,
    })
}

/// One pinned optimization per ω (sorted ascending in the output).
pub fn pareto_sweep(problem: &PcsProblem, omegas: &[f64], opts: &OptimizerConfig) -> Result<Vec<ParetoPoint>> {
    let mut ws = omegas.to_vec();
    ws.sort_by(f64::total_cmp);
    ws.dedup();
    ws.iter()
        .map(|&w| {
            let o = OptimizerConfig {
                w_grid: vec![w],
                ..opts.clone()
            };
            if w == 0.0 {
                let lo = opts.p_grid.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = opts.p_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                problem.sensing_limit(lo, hi)
            } else {
                Ok(optimize_hybrid(problem, &o)?.refined)
            }
        })
        .collect()
}

/// Keep the points not dominated in (higher throughput, lower μ4).
pub fn pareto_filter(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    points
        .iter()
        .filter(|p| {
            !points.iter().any(|q| {
                q.throughput >= p.throughput && q.mu4 <= p.mu4 && (q.throughput > p.throughput || q.mu4 < p.mu4)
            })
        })
        .cloned()
        .collect()
}

/// CSV `omega,sigma_x2,lam1,lam2,entropy,mu4,ber,throughput,objective`; the
/// multipliers are empty for the ω = 0 limit.
pub fn write_pareto_csv<W: Write>(w: W, points: &[ParetoPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "omega",
        "sigma_x2",
        "lam1",
        "lam2",
        "entropy",
        "mu4",
        "ber",
        "throughput",
        "objective",
    ])?;
    for p in points {
        let (l1, l2) = match p.params {
            Some(m) => (m.lam1.to_string(), m.lam2.to_string()),
            None => (String::new(), String::new()),
        };
        out.write_record([
            p.omega.to_string(),
            p.sigma_x2.to_string(),
            l1,
            l2,
            p.entropy.to_string(),
            p.mu4.to_string(),
            p.ber.to_string(),
            p.throughput.to_string(),
            p.objective.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
