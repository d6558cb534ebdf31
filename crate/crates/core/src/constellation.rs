//! Square QAM alphabets with Gray labels, energy rings and PMFs.
//!
//! Points are indexed `i * side + q`, where `i` and `q` enumerate the in-phase
//! and quadrature levels in ascending order. Labels are the reflected Gray
//! code of `i` followed by the reflected Gray code of `q`, MSB first.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

/// Squared moduli closer than this belong to the same ring.
pub const RING_TOL: f64 = 1e-9;

/// Tolerance used for nearest-neighbour distance matching.
const DIST_TOL: f64 = 1e-9;

const PMF_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    /// Common squared modulus of the ring members.
    pub energy: f64,
    /// Point indices on this ring, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Constellation {
    order: usize,
    bits_per_symbol: u32,
    points: Vec<Complex64>,
    labels: Vec<u32>,
    rings: Vec<Ring>,
    ring_of: Vec<usize>,
    d_min: f64,
}

fn gray(n: u32) -> u32 {
    n ^ (n >> 1)
}

/// Build a Gray-labelled square QAM alphabet with unit average energy.
pub fn build_qam(order: usize) -> Result<Constellation> {
    let side = match order {
        4 => 2,
        16 => 4,
        64 => 8,
        256 => 16,
        _ => return Err(Error::UnsupportedOrder(order)),
    };
    let axis_bits = (side as u32).trailing_zeros();
    // E|a + jb|^2 over the odd-integer grid is 2 (side^2 - 1) / 3.
    let scale = (2.0 * (side * side - 1) as f64 / 3.0).sqrt().recip();
    let level = |k: usize| (2 * k as i64 - (side as i64 - 1)) as f64 * scale;

    let mut points = Vec::with_capacity(order);
    let mut labels = Vec::with_capacity(order);
    for i in 0..side {
        for q in 0..side {
            points.push(Complex64::new(level(i), level(q)));
            labels.push((gray(i as u32) << axis_bits) | gray(q as u32));
        }
    }

    let mut by_energy: Vec<usize> = (0..order).collect();
    by_energy.sort_by(|&a, &b| points[a].norm_sqr().total_cmp(&points[b].norm_sqr()).then(a.cmp(&b)));
    let mut rings: Vec<Ring> = Vec::new();
    for idx in by_energy {
        let e = points[idx].norm_sqr();
        match rings.last_mut() {
            Some(r) if (e - r.energy).abs() < RING_TOL => r.members.push(idx),
            _ => rings.push(Ring {
                energy: e,
                members: vec![idx],
            }),
        }
    }
    let mut ring_of = vec![0; order];
    for (r, ring) in rings.iter_mut().enumerate() {
        ring.members.sort_unstable();
        for &m in &ring.members {
            ring_of[m] = r;
        }
    }

    Ok(Constellation {
        order,
        bits_per_symbol: 2 * axis_bits,
        points,
        labels,
        rings,
        ring_of,
        d_min: 2.0 * scale,
    })
}

impl Constellation {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    pub fn ring_count(&self) -> usize {
        self.rings.len()
    }

    /// Ring index of point `idx`.
    pub fn ring_of(&self, idx: usize) -> usize {
        self.ring_of[idx]
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    /// Label of point `idx` rendered MSB first.
    pub fn label_string(&self, idx: usize) -> String {
        format!("{:0width$b}", self.labels[idx], width = self.bits_per_symbol as usize)
    }

    pub fn hamming(&self, a: usize, b: usize) -> u32 {
        (self.labels[a] ^ self.labels[b]).count_ones()
    }

    /// Whether `a` and `b` are distinct points at distance `d_min`.
    pub fn are_neighbors(&self, a: usize, b: usize) -> bool {
        a != b && ((self.points[a] - self.points[b]).norm() - self.d_min).abs() < DIST_TOL
    }

    /// Nearest neighbours of point `idx`.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.order).filter(move |&j| self.are_neighbors(idx, j))
    }

    /// Smallest and largest ring energies.
    pub fn energy_range(&self) -> (f64, f64) {
        (self.rings[0].energy, self.rings[self.rings.len() - 1].energy)
    }
}

/// Point-wise probability mass function over a constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    /// Validate an explicit probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidPmf(format!("probability {p} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidPmf(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalize nonnegative weights into a PMF.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidPmf(
                "weights must be nonnegative with a positive sum".into(),
            ));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(c: &Constellation) -> Self {
        Self {
            probs: vec![1.0 / c.order() as f64; c.order()],
        }
    }

    /// Expand per-ring total masses into a point-wise PMF with equal split.
    pub fn from_ring_masses(c: &Constellation, masses: &[f64]) -> Result<Self> {
        if masses.len() != c.ring_count() {
            return Err(Error::DimensionMismatch {
                expected: c.ring_count(),
                actual: masses.len(),
            });
        }
        let mut w = vec![0.0; c.order()];
        for (ring, &mass) in c.rings().iter().zip(masses) {
            for &m in &ring.members {
                w[m] = mass / ring.members.len() as f64;
            }
        }
        Self::from_weights(&w)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn check_matches(&self, c: &Constellation) -> Result<()> {
        if self.probs.len() != c.order() {
            return Err(Error::DimensionMismatch {
                expected: c.order(),
                actual: self.probs.len(),
            });
        }
        Ok(())
    }

    pub fn is_ring_symmetric(&self, c: &Constellation) -> bool {
        c.rings().iter().all(|ring| {
            let p0 = self.probs[ring.members[0]];
            ring.members.iter().all(|&m| (self.probs[m] - p0).abs() <= 1e-12)
        })
    }

    /// Per-point probability of each ring, `P(E_r)`.
    pub fn ring_point_probs(&self, c: &Constellation) -> Result<Vec<f64>> {
        self.check_matches(c)?;
        if !self.is_ring_symmetric(c) {
            return Err(Error::NotRingSymmetric);
        }
        Ok(c.rings()
            .iter()
            .map(|r| r.members.iter().map(|&m| self.probs[m]).sum::<f64>() / r.members.len() as f64)
            .collect())
    }

    /// Sampler for i.i.d. symbol indices.
    pub fn sampler(&self) -> Result<PmfSampler> {
        let dist = WeightedIndex::new(&self.probs).map_err(|e| Error::InvalidPmf(e.to_string()))?;
        Ok(PmfSampler { dist })
    }
}

/// Draws i.i.d. point indices from a PMF.
#[derive(Debug, Clone)]
pub struct PmfSampler {
    dist: WeightedIndex<f64>,
}

impl PmfSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }

    pub fn sample_block<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Vec<usize> {
        (0..len).map(|_| self.dist.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmfMoments {
    /// E|x|^2
    pub sigma2: f64,
    /// E|x|^4
    pub e4: f64,
    /// E|x|^4 / (E|x|^2)^2
    pub mu4: f64,
    pub entropy_bits: f64,
}

pub fn pmf_moments(c: &Constellation, p: &Pmf) -> Result<PmfMoments> {
    p.check_matches(c)?;
    let mut sigma2 = 0.0;
    let mut e4 = 0.0;
    let mut entropy = 0.0;
    for (x, &px) in c.points().iter().zip(p.probs()) {
        let e = x.norm_sqr();
        sigma2 += px * e;
        e4 += px * e * e;
        if px > 0.0 {
            entropy -= px * px.log2();
        }
    }
    Ok(PmfMoments {
        sigma2,
        e4,
        mu4: e4 / (sigma2 * sigma2),
        entropy_bits: entropy,
    })
}

/// `C[r][s]`: total Hamming distance from ring-`r` points to their nearest
/// neighbours on ring `s`.
pub fn hamming_matrix(c: &Constellation) -> DMatrix<u32> {
    let k = c.ring_count();
    let mut m = DMatrix::<u32>::zeros(k, k);
    for i in 0..c.order() {
        for j in c.neighbors(i) {
            m[(c.ring_of(i), c.ring_of(j))] += c.hamming(i, j);
        }
    }
    m
}

/// Write a PMF as CSV with columns
/// `point_index,re,im,label_bits,ring_index,probability`.
pub fn write_pmf_csv<W: Write>(w: W, c: &Constellation, p: &Pmf) -> Result<()> {
    p.check_matches(c)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["point_index", "re", "im", "label_bits", "ring_index", "probability"])?;
    for (i, x) in c.points().iter().enumerate() {
        out.write_record([
            i.to_string(),
            x.re.to_string(),
            x.im.to_string(),
            c.label_string(i),
            c.ring_of(i).to_string(),
            p.probs()[i].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Read a PMF written by [`write_pmf_csv`]. Points and labels must match `c`.
/// The probabilities are renormalized to absorb decimal rounding.
pub fn read_pmf_csv<R: Read>(r: R, c: &Constellation) -> Result<Pmf> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidPmf(format!("missing column {name}")))
    };
    let (ci, cre, cim, cp) = (col("point_index")?, col("re")?, col("im")?, col("probability")?);
    let mut probs = vec![f64::NAN; c.order()];
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidPmf(format!("bad number {:?}: {e}", &rec[k])))
        };
        let idx: usize = rec[ci]
            .trim()
            .parse()
            .map_err(|e| Error::InvalidPmf(format!("bad point index: {e}")))?;
        if idx >= c.order() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                limit: c.order(),
            });
        }
        let x = Complex64::new(parse(cre)?, parse(cim)?);
        if (x - c.points()[idx]).norm() > 1e-9 {
            return Err(Error::InvalidPmf(format!(
                "point {idx} does not match the constellation"
            )));
        }
        probs[idx] = parse(cp)?;
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::InvalidPmf("missing rows".into()));
    }
    Pmf::from_weights(&probs)
}
