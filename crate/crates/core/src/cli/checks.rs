//! Oracle checks run by `casimir validate`.

use rayon::prelude::*;

use crate::geometry::{
    build_domains, subtraction_check, weyl_a0, weyl_a1, DomainKind, FlaskSystem, Region, Vec3,
};
use crate::interaction::{force_scan, GridPolicy, Sampling};
use crate::loops::{sample_unit_loop, split, LazyEnsemble, LoopSource, LoopStream};
use crate::rng::{self, CounterRng};
use crate::spectral::{
    phi_box_eigsum, phi_disk_eigsum, phi_interval_eigsum, phi_interval_poisson, phi_mc_refinement,
};
use crate::Result;

/// Statistical checks need at least this many loops to resolve 3σ.
pub const MIN_LOOPS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

fn underpowered(name: &'static str, n: usize) -> CheckOutcome {
    outcome(
        name,
        false,
        format!("only {n} loops; set mc.n_loops >= {MIN_LOOPS} for a meaningful 3-sigma test"),
    )
}

/// Mean and standard error of a sample.
pub fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `Cov(B_1/4, B_3/4)` and `Var(B_1/2)` from `n` four-point loops, pooling
/// the three axes; returns ((cov, se), (var, se)).
pub fn bridge_moments(seed: u64, n: usize) -> Result<((f64, f64), (f64, f64))> {
    let loops = (0..n)
        .into_par_iter()
        .map(|i| {
            sample_unit_loop(
                4,
                LoopStream {
                    seed,
                    index: i as u64,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cov = Vec::with_capacity(3 * n);
    let mut var = Vec::with_capacity(3 * n);
    for lp in &loops {
        let p = lp.points();
        for (q, h, t) in [
            (p[1].x, p[2].x, p[3].x),
            (p[1].y, p[2].y, p[3].y),
            (p[1].z, p[2].z, p[3].z),
        ] {
            cov.push(q * t);
            var.push(h * h);
        }
    }
    Ok((mean_and_error(&cov), mean_and_error(&var)))
}

pub fn check_bridge(seed: u64, n: usize) -> Result<CheckOutcome> {
    const NAME: &str = "bridge covariance";
    if n < MIN_LOOPS {
        return Ok(underpowered(NAME, n));
    }
    let ((c, cs), (v, vs)) = bridge_moments(seed, n)?;
    let ok = (c - 0.0625).abs() <= 3.0 * cs && (v - 0.25).abs() <= 3.0 * vs;
    Ok(outcome(
        NAME,
        ok,
        format!("cov {c:.5} ± {cs:.5} (0.0625), var {v:.5} ± {vs:.5} (0.25)"),
    ))
}

/// Largest deviation of `poisson - eigsum` from 1/2 on a 10x10 log grid.
pub fn theta_deviation() -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let s = 10f64.powf(-1.0 + 2.0 * i as f64 / 9.0);
            let beta = 10f64.powf(-2.0 + 4.0 * j as f64 / 9.0);
            let d = phi_interval_poisson(s, beta)? - phi_interval_eigsum(s, beta)?;
            worst = worst.max((d - 0.5).abs());
        }
    }
    Ok(worst)
}

pub fn check_theta() -> Result<CheckOutcome> {
    let worst = theta_deviation()?;
    Ok(outcome(
        "theta relation",
        worst <= 1e-10,
        format!("max |poisson - eigsum - 1/2| = {worst:.2e}"),
    ))
}

pub fn check_disk_bound() -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for r in [0.1, 0.5, 1.0, 3.0] {
        for k in 0..12 {
            let beta = r * r * 10f64.powf(-2.0 + 4.0 * k as f64 / 11.0);
            worst = worst.max(phi_disk_eigsum(r, beta)? / (r * r / (2.0 * beta)));
        }
    }
    Ok(outcome(
        "disk bound",
        worst < 1.0,
        format!("max phi_disk / (r^2/2beta) = {worst:.4}"),
    ))
}

pub fn check_box_mc(seed: u64, n_points: usize, n: usize) -> Result<CheckOutcome> {
    const NAME: &str = "box Monte Carlo";
    if n < MIN_LOOPS {
        return Ok(underpowered(NAME, n));
    }
    let cube = Region::cuboid(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0))?;
    let coarse = LazyEnsemble::new(seed, n_points / 2, n)?;
    let fine = LazyEnsemble::new(seed, n_points, n)?;
    let beta = 0.1;
    let study = phi_mc_refinement(&cube, beta, &coarse, &fine, &cube, n, seed)?;
    let oracle = phi_box_eigsum(1.0, 1.0, 1.0, beta)?;
    let e = study.extrapolated;
    let ok = (e.value - oracle).abs() <= 3.0 * e.std_error && study.difference.value >= 0.0;
    Ok(outcome(
        NAME,
        ok,
        format!(
            "unit cube beta=0.1: extrapolated {:.5} ± {:.5}, N={} {:.5}, oracle {oracle:.5}",
            e.value, e.std_error, n_points, study.fine.value
        ),
    ))
}

/// Largest relative alternating-sum residual of a0 and a1 over random flasks.
pub fn weyl_residual(seed: u64, count: usize) -> Result<f64> {
    let mut g = CounterRng::from_path(seed, &[rng::tag::VALIDATE, 1]);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let big_r = 0.2 + 2.0 * g.uniform();
        let r = big_r * (0.05 + 0.95 * g.uniform());
        // long enough for the cylinder to reach below the bulb
        let l = big_r * (2.05 + 3.0 * g.uniform());
        let a = l * (0.02 + 0.96 * g.uniform());
        let ds = build_domains(&FlaskSystem::new(big_r, r, l, a)?)?;
        let (s0, s1) = subtraction_check(&ds)?;
        let (mut v, mut s) = (0.0f64, 0.0f64);
        for d in &ds.domains {
            v = v.max(weyl_a0(d)?.abs());
            s = s.max(weyl_a1(d)?.abs());
        }
        worst = worst.max(s0.abs() / v).max(s1.abs() / s);
    }
    Ok(worst)
}

pub fn check_weyl(seed: u64) -> Result<CheckOutcome> {
    let worst = weyl_residual(seed, 100)?;
    Ok(outcome(
        "Weyl cancellation",
        worst <= 1e-12,
        format!("max relative residual {worst:.2e} over 100 flasks"),
    ))
}

/// Joint vs product containment for the cylinder of radius 1 and length 4
/// at beta = 1 with the base point at its centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factorization {
    pub joint: f64,
    pub transverse: f64,
    pub longitudinal: f64,
    /// Delta-method standard error of `joint - transverse * longitudinal`.
    pub std_error: f64,
}

pub fn factorization<S: LoopSource + ?Sized>(source: &S) -> Factorization {
    let cyl = Region::cylinder(1.0, -2.0, 2.0).expect("valid cylinder");
    let flags: Vec<(bool, bool, bool)> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let lp = source.get(i);
            let (t, l) = split(&lp);
            let joint = lp.points().iter().all(|p| cyl.contains(*p));
            (
                joint,
                t.in_disk([0.0, 0.0], 1.0, 1.0),
                l.in_interval(0.0, 1.0, -2.0, 2.0),
            )
        })
        .collect();
    let n = flags.len() as f64;
    let pj = flags.iter().filter(|f| f.0).count() as f64 / n;
    let pt = flags.iter().filter(|f| f.1).count() as f64 / n;
    let pl = flags.iter().filter(|f| f.2).count() as f64 / n;
    let infl: Vec<f64> = flags
        .iter()
        .map(|&(j, t, l)| j as u8 as f64 - pl * t as u8 as f64 - pt * l as u8 as f64)
        .collect();
    let (_, se) = mean_and_error(&infl);
    Factorization {
        joint: pj,
        transverse: pt,
        longitudinal: pl,
        std_error: se,
    }
}

pub fn check_factorization(seed: u64, n_points: usize, n: usize) -> Result<CheckOutcome> {
    const NAME: &str = "factorization";
    if n < MIN_LOOPS {
        return Ok(underpowered(NAME, n));
    }
    let f = factorization(&LazyEnsemble::new(
        rng::stream_key(seed, &[rng::tag::VALIDATE, 2]),
        n_points,
        n,
    )?);
    let diff = f.joint - f.transverse * f.longitudinal;
    Ok(outcome(
        NAME,
        diff.abs() <= 3.0 * f.std_error,
        format!(
            "joint {:.5} vs product {:.5} (± {:.5})",
            f.joint,
            f.transverse * f.longitudinal,
            f.std_error
        ),
    ))
}

pub fn check_hemisphere(
    seed: u64,
    n_points: usize,
    n: usize,
    x_per_loop: usize,
) -> Result<CheckOutcome> {
    const NAME: &str = "hemisphere exclusion";
    if n < MIN_LOOPS {
        return Ok(underpowered(NAME, n));
    }
    let sys = FlaskSystem::new(1.0, 1.0, 2.5, 0.2)?;
    let heights = [0.2, 0.5, 1.0];
    let grid = GridPolicy::default().grid(1.0, 0.2, 1.0)?;
    let source = LazyEnsemble::new(seed, n_points, n)?;
    let scan = force_scan(
        &sys,
        DomainKind::Flask,
        &heights,
        &grid,
        &source,
        Sampling { seed, x_per_loop },
    )?;
    let n_plus: u64 = scan.estimates.iter().map(|e| e.n_plus).sum();
    let classified =
        scan.estimates[0].n_plus + scan.estimates[0].n_minus + scan.estimates[0].n_null;
    let negative = scan.estimates.iter().all(|e| e.value <= 2.0 * e.std_error);
    Ok(outcome(
        NAME,
        n_plus == 0 && negative,
        format!(
            "{n_plus} (+) loops among {classified} samples per height; E(a=0.5) = {:.3e}",
            scan.estimates[1].value
        ),
    ))
}
