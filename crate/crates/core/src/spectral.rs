//! Dirichlet heat-kernel traces `φ_D(β) = Σ_n exp(-β λ_n / 2)`.
//!
//! Closed-form eigenvalue sums for the interval, the disk and boxes serve as
//! oracles; [`phi_mc`] estimates the same trace from loop containment.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel;
use crate::error::{require_positive, Error, Result};
use crate::geometry::{Region, Vec3};
use crate::loops::{coarse_to_fine, LoopSource, UnitLoop};
use crate::rng::{self, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    /// A series stops at the first term below `cutoff * (|sum| + 1)`.
    pub cutoff: f64,
    pub max_terms: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            cutoff: 1e-16,
            max_terms: 1_000_000,
        }
    }
}

impl TruncationPolicy {
    pub fn new(cutoff: f64, max_terms: usize) -> Result<Self> {
        require_positive("cutoff", cutoff)?;
        Ok(Self { cutoff, max_terms })
    }

    /// Sums `term(first), term(first + 1), ...`; terms must eventually
    /// decrease monotonically in magnitude. The leading term is always
    /// kept so that tiny traces keep their relative accuracy.
    fn sum(&self, first: usize, term: impl Fn(usize) -> f64) -> Result<f64> {
        let mut acc: f64 = 0.0;
        for (count, n) in (first..).enumerate() {
            if count >= self.max_terms {
                return Err(Error::InvalidArgument(format!(
                    "series not converged after {} terms",
                    self.max_terms
                )));
            }
            let t = term(n);
            if count > 0 && t.abs() < self.cutoff * (acc.abs() + 1.0) {
                break;
            }
            acc += t;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

fn check_args(s: f64, beta: f64) -> Result<()> {
    require_positive("length", s)?;
    require_positive("beta", beta)
}

/// `Σ_{n≥1} exp(-β π² n² / (2 s²))` for the interval `[0, s]`.
pub fn phi_interval_eigsum(s: f64, beta: f64) -> Result<f64> {
    check_args(s, beta)?;
    let c = beta * PI * PI / (2.0 * s * s);
    TruncationPolicy::default().sum(1, |n| (-c * (n * n) as f64).exp())
}

/// Resummed form `s/√(2πβ) (1 + 2 Σ_{n≥1} exp(-2 s² n² / β))`.
///
/// This exceeds [`phi_interval_eigsum`] by exactly 1/2 (Jacobi theta
/// inversion); only its s-derivatives are used downstream.
pub fn phi_interval_poisson(s: f64, beta: f64) -> Result<f64> {
    check_args(s, beta)?;
    let c = 2.0 * s * s / beta;
    let tail = TruncationPolicy::default().sum(1, |n| (-c * (n * n) as f64).exp())?;
    Ok(s / (2.0 * PI * beta).sqrt() * (1.0 + 2.0 * tail))
}

/// `d²φ_[0,s](β) / ds²`, from whichever series converges faster.
pub fn d2phi_interval_ds2(s: f64, beta: f64) -> Result<f64> {
    check_args(s, beta)?;
    if s * s >= beta {
        d2phi_poisson_form(s, beta)
    } else {
        d2phi_eigen_form(s, beta)
    }
}

/// Term-by-term derivative of the resummed series:
/// `d²/ds² [s e^{-c s²}] = 2 c s e^{-c s²} (2 c s² - 3)`, `c = 2n²/β`.
pub fn d2phi_poisson_form(s: f64, beta: f64) -> Result<f64> {
    check_args(s, beta)?;
    let pref = 2.0 / (2.0 * PI * beta).sqrt();
    let sum = TruncationPolicy::default().sum(1, |n| {
        let c = 2.0 * (n * n) as f64 / beta;
        2.0 * c * s * (-c * s * s).exp() * (2.0 * c * s * s - 3.0)
    })?;
    Ok(pref * sum)
}

/// Term-by-term derivative of the eigenvalue sum: with `A = βπ²n²/2`,
/// `d²/ds² e^{-A/s²} = e^{-A/s²} (A/s⁴) (4A/s² - 6)`.
pub fn d2phi_eigen_form(s: f64, beta: f64) -> Result<f64> {
    check_args(s, beta)?;
    TruncationPolicy::default().sum(1, |n| {
        let a = beta * PI * PI * (n * n) as f64 / 2.0;
        let q = a / (s * s);
        (-q).exp() * q / (s * s) * (4.0 * q - 6.0)
    })
}

/// Disk of radius `r`: `Σ_{m,k} mult(m) exp(-β j_{m,k}² / (2 r²))` with
/// multiplicity 1 for `m = 0` and 2 otherwise.
pub fn phi_disk_eigsum(r: f64, beta: f64) -> Result<f64> {
    check_args(r, beta)?;
    let policy = TruncationPolicy::default();
    let c = beta / (2.0 * r * r);
    // every omitted term is below exp(-40) < cutoff
    let limit = (40.0 / c).sqrt() + 1.0;
    if limit > 5000.0 {
        return Err(Error::InvalidArgument(format!(
            "beta / r^2 = {} too small for the disk eigenvalue sum",
            beta / (r * r)
        )));
    }
    let table = bessel::zeros_up_to(limit);
    policy.sum(0, |i| match table.zeros.get(i) {
        Some(&(m, j)) => (if m == 0 { 1.0 } else { 2.0 }) * (-c * j * j).exp(),
        None => 0.0,
    })
}

pub fn phi_box_eigsum(lx: f64, ly: f64, lz: f64, beta: f64) -> Result<f64> {
    Ok(phi_interval_eigsum(lx, beta)?
        * phi_interval_eigsum(ly, beta)?
        * phi_interval_eigsum(lz, beta)?)
}

/// True iff every point of `x + √β ω` lies in `d`; no allocation.
#[inline]
pub(crate) fn realized_in(lp: &UnitLoop, sqrt_beta: f64, x: Vec3, d: &Region) -> bool {
    let pts = lp.points();
    coarse_to_fine(pts.len()).all(|i| d.contains(x + pts[i] * sqrt_beta))
}

const CHUNK: usize = 2048;

fn check_mc_inputs(domain: &Region, beta: f64, sampling_box: &Region) -> Result<f64> {
    require_positive("beta", beta)?;
    let vol = sampling_box.sampling_volume()?;
    if let (
        Region::AxisBox { min, max },
        Region::AxisBox {
            min: bmin,
            max: bmax,
        },
    ) = (domain, sampling_box)
    {
        if min.x < bmin.x
            || min.y < bmin.y
            || min.z < bmin.z
            || max.x > bmax.x
            || max.y > bmax.y
            || max.z > bmax.z
        {
            return Err(Error::InvalidArgument(
                "sampling box does not cover the domain".into(),
            ));
        }
    }
    Ok(vol)
}

fn sample_point(seed: u64, i: usize, region: &Region) -> Vec3 {
    let mut g = CounterRng::from_path(seed, &[rng::tag::SPECTRAL, i as u64]);
    region
        .uniform_point([g.uniform(), g.uniform(), g.uniform()])
        .expect("sampling region checked")
}

fn estimate(hits: u64, n: usize, vol: f64, beta: f64) -> SpectralEstimate {
    let p = hits as f64 / n as f64;
    let scale = vol / (2.0 * PI * beta).powf(1.5);
    SpectralEstimate {
        value: scale * p,
        std_error: scale * (p * (1.0 - p) / n as f64).sqrt(),
        n_samples: n,
    }
}

/// Monte Carlo trace: `V/(2πβ)^{3/2}` times the fraction of samples whose
/// loop (loop `i mod len`, base point uniform in `sampling_box`) stays in
/// `domain`.
pub fn phi_mc<S: LoopSource + ?Sized>(
    domain: &Region,
    beta: f64,
    source: &S,
    sampling_box: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<SpectralEstimate> {
    if source.is_empty() || n_samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let vol = check_mc_inputs(domain, beta, sampling_box)?;
    let sb = beta.sqrt();
    let hits: u64 = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            (c * CHUNK..((c + 1) * CHUNK).min(n_samples))
                .filter(|&i| {
                    let x = sample_point(seed, i, sampling_box);
                    realized_in(&source.get(i % source.len()), sb, x, domain)
                })
                .count() as u64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(estimate(hits, n_samples, vol, beta))
}

/// Paired estimates from two ensembles (typically `N` and `2N` points of
/// the same loops) sharing base points, for discretization studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub coarse: SpectralEstimate,
    pub fine: SpectralEstimate,
    /// `coarse - fine` with its paired standard error.
    pub difference: SpectralEstimate,
    /// Both estimates combined to cancel a containment bias proportional
    /// to `N^{-1/2}`.
    pub extrapolated: SpectralEstimate,
}

pub fn phi_mc_refinement<A: LoopSource + ?Sized, B: LoopSource + ?Sized>(
    domain: &Region,
    beta: f64,
    coarse: &A,
    fine: &B,
    sampling_box: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<RefinementStudy> {
    if coarse.is_empty() || fine.is_empty() || n_samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if fine.n_points() <= coarse.n_points() {
        return Err(Error::InvalidArgument(
            "fine ensemble needs more points than the coarse one".into(),
        ));
    }
    let vol = check_mc_inputs(domain, beta, sampling_box)?;
    let sb = beta.sqrt();
    // (coarse hits, fine hits, joint hits)
    let tallies: Vec<(u64, u64, u64)> = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut t = (0u64, 0u64, 0u64);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                let x = sample_point(seed, i, sampling_box);
                let a = realized_in(&coarse.get(i % coarse.len()), sb, x, domain);
                let b = realized_in(&fine.get(i % fine.len()), sb, x, domain);
                t.0 += a as u64;
                t.1 += b as u64;
                t.2 += (a && b) as u64;
            }
            t
        })
        .collect();
    let (hc, hf, h11) = tallies
        .into_iter()
        .fold((0, 0, 0), |a, t| (a.0 + t.0, a.1 + t.1, a.2 + t.2));
    let n = n_samples as f64;
    let scale = vol / (2.0 * PI * beta).powf(1.5);
    let paired = |sum: f64, sum_sq: f64| {
        let mean = sum / n;
        SpectralEstimate {
            value: scale * mean,
            std_error: scale * ((sum_sq / n - mean * mean).max(0.0) / n).sqrt(),
            n_samples,
        }
    };
    let (hc, hf, h11) = (hc as f64, hf as f64, h11 as f64);
    // per sample t = (k b - a) / (k - 1) with k = sqrt(N_fine / N_coarse)
    let k = (fine.n_points() as f64 / coarse.n_points() as f64).sqrt();
    let extrapolated = paired(
        (k * hf - hc) / (k - 1.0),
        (k * k * hf + hc - 2.0 * k * h11) / (k - 1.0).powi(2),
    );
    Ok(RefinementStudy {
        coarse: estimate(hc as u64, n_samples, vol, beta),
        fine: estimate(hf as u64, n_samples, vol, beta),
        difference: paired(hc - hf, hc + hf - 2.0 * h11),
        extrapolated,
    })
}
