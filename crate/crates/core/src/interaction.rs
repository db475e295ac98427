//! Interaction energy of the piston, its (+)/(-) channels, the parallel
//! plate bound, the asymptotic (-) estimate and force scans.
//!
//! The weight of a sample only depends on the piston height through the top
//! of the loop: for `max_z <= a` all four containment bits pair up and
//! cancel, while for `max_z > a` neither lower domain can hold the loop and
//! `w = b3 - b2`. Neither `D2` nor `D3` depends on `a`, so one geometry
//! evaluation per sample serves every height of a scan.

use std::cell::RefCell;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::require_positive;
use crate::geometry::{
    build_domains_of_kind, classify_loop, DomainKind, DomainSet, FlaskSystem, Vec3,
};
use crate::loops::{realize, LoopSource, UnitLoop};
use crate::rng::{self, CounterRng};
use crate::spectral::{d2phi_interval_ds2, phi_disk_eigsum, realized_in};
use crate::{Error, Result};

/// Log-spaced proper-time nodes with trapezoid weights in `ln β`, so that
/// `∫ f dβ ≈ Σ_j weights[j] f(nodes[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BetaGrid {
    pub fn log_spaced(beta_min: f64, beta_max: f64, n: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_max > beta_min && beta_max.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "need 0 < beta_min < beta_max, got [{beta_min}, {beta_max}]"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes, got {n}"
            )));
        }
        let (u0, u1) = (beta_min.ln(), beta_max.ln());
        let du = (u1 - u0) / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|j| (u0 + j as f64 * du).exp()).collect();
        let weights = nodes
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                if j == 0 || j == n - 1 {
                    0.5 * b * du
                } else {
                    b * du
                }
            })
            .collect();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.len() < 2 || self.nodes.len() != self.weights.len() {
            return Err(Error::InvalidGrid(
                "grid needs >= 2 nodes and one weight per node".into(),
            ));
        }
        if !(self.nodes[0] > 0.0) || self.nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid(
                "nodes must be positive and strictly increasing".into(),
            ));
        }
        if self.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidGrid("weights must be positive".into()));
        }
        Ok(())
    }
}

/// How grids are derived from a system: `β_min = min_factor · a_min²`,
/// `β_max = max_factor · (2R + a_max)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub n_beta: usize,
    pub beta_min_factor: f64,
    pub beta_max_factor: f64,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self {
            n_beta: 48,
            beta_min_factor: 1.0 / 16.0,
            beta_max_factor: 64.0,
        }
    }
}

impl GridPolicy {
    pub fn grid(&self, bulb_radius: f64, a_min: f64, a_max: f64) -> Result<BetaGrid> {
        require_positive("beta_min_factor", self.beta_min_factor)?;
        require_positive("beta_max_factor", self.beta_max_factor)?;
        BetaGrid::log_spaced(
            self.beta_min_factor * a_min * a_min,
            self.beta_max_factor * (2.0 * bulb_radius + a_max).powi(2),
            self.n_beta,
        )
    }

    pub fn grid_for(&self, sys: &FlaskSystem) -> Result<BetaGrid> {
        self.grid(sys.bulb_radius, sys.piston_height, sys.piston_height)
    }
}

/// Base points per loop at every β node and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub seed: u64,
    pub x_per_loop: usize,
}

impl Sampling {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            x_per_loop: 1,
        }
    }
}

/// Weight of a single sample, straight from the four containment bits.
pub fn sample_weight(x: Vec3, beta: f64, lp: &UnitLoop, ds: &DomainSet) -> Result<i32> {
    Ok(classify_loop(&realize(lp, beta, x)?, ds).weight())
}

/// Per-height weights of one sample: `w(a_k) = [max_z > a_k] · c`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SampleOutcome {
    c: i32,
    top: f64,
    bottom: f64,
}

#[inline]
fn evaluate(
    x: Vec3,
    sqrt_beta: f64,
    lp: &UnitLoop,
    ds: &DomainSet,
    lowest_height: f64,
) -> Option<SampleOutcome> {
    let (zmin, zmax) = lp.z_range();
    let top = x.z + zmax * sqrt_beta;
    let bottom = x.z + zmin * sqrt_beta;
    if top <= lowest_height || bottom >= ds.lower_cut() {
        return None;
    }
    let (cyl, flask) = (ds.whole_cylinder(), ds.whole_flask());
    let in_cyl = cyl.contains(x);
    let in_flask = flask.contains(x);
    if !in_cyl && !in_flask {
        return None;
    }
    let b2 = in_cyl && realized_in(lp, sqrt_beta, x, cyl);
    let b3 = in_flask && realized_in(lp, sqrt_beta, x, flask);
    let c = b3 as i32 - b2 as i32;
    if c == 0 {
        return None;
    }
    Some(SampleOutcome { c, top, bottom })
}

/// Fast weight of one sample at height `ds.system.piston_height`; agrees
/// with [`sample_weight`] on every input.
pub fn sample_weight_fast(x: Vec3, beta: f64, lp: &UnitLoop, ds: &DomainSet) -> Result<i32> {
    require_positive("beta", beta)?;
    let a = ds.system.piston_height;
    Ok(match evaluate(x, beta.sqrt(), lp, ds, a) {
        Some(o) if o.top > a => o.c,
        _ => 0,
    })
}

/// Integer tallies at one β node for every scan height.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct NodeTally {
    n_samples: u64,
    plus: Vec<u64>,
    minus: Vec<u64>,
    /// `Σ d` and `Σ d²` of `d = w(a_{k+1}) - w(a_k)`.
    diff_sum: Vec<i64>,
    diff_sq: Vec<u64>,
}

impl NodeTally {
    fn new(n_heights: usize) -> Self {
        Self {
            n_samples: 0,
            plus: vec![0; n_heights],
            minus: vec![0; n_heights],
            diff_sum: vec![0; n_heights.saturating_sub(1)],
            diff_sq: vec![0; n_heights.saturating_sub(1)],
        }
    }

    fn merge(&mut self, o: &NodeTally) {
        self.n_samples += o.n_samples;
        for (a, b) in self.plus.iter_mut().zip(&o.plus) {
            *a += b;
        }
        for (a, b) in self.minus.iter_mut().zip(&o.minus) {
            *a += b;
        }
        for (a, b) in self.diff_sum.iter_mut().zip(&o.diff_sum) {
            *a += b;
        }
        for (a, b) in self.diff_sq.iter_mut().zip(&o.diff_sq) {
            *a += b;
        }
    }

    fn record(&mut self, o: SampleOutcome, heights: &[f64]) {
        let active = heights.partition_point(|&a| a < o.top);
        if active > 0 {
            assert!(
                o.top - o.bottom >= heights[active - 1],
                "contributing loop shorter than the piston height"
            );
        }
        for k in 0..active {
            if o.c > 0 {
                self.plus[k] += 1;
            } else {
                self.minus[k] += 1;
            }
        }
        // w switches off between heights active-1 and active
        if active > 0 && active < heights.len() {
            self.diff_sum[active - 1] -= o.c as i64;
            self.diff_sq[active - 1] += 1;
        }
    }
}

const LOOP_BATCH: usize = 32;

/// Walks every (loop, node, repeat) sample once; strata are loop batches
/// and their integer tallies are reduced in batch order.
fn run_tallies<S: LoopSource + ?Sized>(
    ds: &DomainSet,
    heights: &[f64],
    betas: &[f64],
    source: &S,
    sampling: Sampling,
) -> Result<Vec<NodeTally>> {
    if source.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if sampling.x_per_loop == 0 {
        return Err(Error::InvalidArgument("x_per_loop must be >= 1".into()));
    }
    let lowest = heights[0];
    let sqrt_betas: Vec<f64> = betas.iter().map(|b| b.sqrt()).collect();
    let region = &ds.sampling_region;
    let base_key = rng::stream_key(sampling.seed, &[rng::tag::X_DRAW]);

    let partials: Vec<Vec<NodeTally>> = (0..source.len().div_ceil(LOOP_BATCH))
        .into_par_iter()
        .map(|batch| {
            let mut tallies = vec![NodeTally::new(heights.len()); betas.len()];
            for li in batch * LOOP_BATCH..((batch + 1) * LOOP_BATCH).min(source.len()) {
                let lp = source.get(li);
                for (j, &sb) in sqrt_betas.iter().enumerate() {
                    let node_key = rng::subkey(rng::subkey(base_key, j as u64), li as u64);
                    let t = &mut tallies[j];
                    for rep in 0..sampling.x_per_loop {
                        let mut g = CounterRng::new(rng::subkey(node_key, rep as u64));
                        let x = region
                            .uniform_point([g.uniform(), g.uniform(), g.uniform()])
                            .expect("sampling region is a cylinder");
                        t.n_samples += 1;
                        if let Some(o) = evaluate(x, sb, &lp, ds, lowest) {
                            t.record(o, heights);
                        }
                    }
                }
            }
            tallies
        })
        .collect();

    let mut total = vec![NodeTally::new(heights.len()); betas.len()];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(total)
}

/// Integrand value and channel counts at one proper time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub weight: f64,
    pub integrand: f64,
    pub std_error: f64,
    pub n_plus: u64,
    pub n_minus: u64,
    pub n_null: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub piston_height: f64,
    pub value: f64,
    pub std_error: f64,
    pub plus_component: f64,
    pub minus_component: f64,
    pub n_plus: u64,
    pub n_minus: u64,
    pub n_null: u64,
    pub per_beta: Vec<BetaRow>,
    /// First or last grid cell carries too much of the integral.
    pub tail_warning: bool,
}

fn integrand_scale(ds: &DomainSet, beta: f64) -> f64 {
    ds.sampling_volume / (8.0 * PI * PI * beta.powi(3))
}

fn row_from(ds: &DomainSet, beta: f64, weight: f64, t: &NodeTally, k: usize) -> BetaRow {
    let m = t.n_samples as f64;
    let (p, n) = (t.plus[k], t.minus[k]);
    let mean = (p as f64 - n as f64) / m;
    let var = ((p + n) as f64 / m - mean * mean).max(0.0);
    let s = integrand_scale(ds, beta);
    BetaRow {
        beta,
        weight,
        integrand: s * mean,
        std_error: s * (var / m).sqrt(),
        n_plus: p,
        n_minus: n,
        n_null: t.n_samples - p - n,
    }
}

fn assemble(
    ds: &DomainSet,
    grid: &BetaGrid,
    tallies: &[NodeTally],
    k: usize,
    height: f64,
) -> EnergyEstimate {
    let rows: Vec<BetaRow> = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .zip(tallies)
        .map(|((&b, &w), t)| row_from(ds, b, w, t, k))
        .collect();
    let mut est = EnergyEstimate {
        piston_height: height,
        value: 0.0,
        std_error: 0.0,
        plus_component: 0.0,
        minus_component: 0.0,
        n_plus: 0,
        n_minus: 0,
        n_null: 0,
        per_beta: Vec::new(),
        tail_warning: false,
    };
    let mut var = 0.0;
    for (row, t) in rows.iter().zip(tallies) {
        let ws = row.weight * integrand_scale(ds, row.beta) / t.n_samples as f64;
        est.plus_component += ws * row.n_plus as f64;
        est.minus_component -= ws * row.n_minus as f64;
        var += (row.weight * row.std_error).powi(2);
        est.n_plus += row.n_plus;
        est.n_minus += row.n_minus;
        est.n_null += row.n_null;
    }
    est.value = est.plus_component + est.minus_component;
    est.std_error = var.sqrt();
    let limit = (0.05 * est.std_error).max(1e-3 * est.value.abs());
    let cell = |r: &BetaRow| (r.weight * r.integrand).abs();
    est.tail_warning = cell(&rows[0]) > limit || cell(&rows[rows.len() - 1]) > limit;
    est.per_beta = rows;
    est
}

/// `I(β) = V_s / (8π² β³) · mean(w)` with its standard error and counts.
pub fn integrand<S: LoopSource + ?Sized>(
    beta: f64,
    ds: &DomainSet,
    source: &S,
    sampling: Sampling,
) -> Result<BetaRow> {
    require_positive("beta", beta)?;
    let a = ds.system.piston_height;
    let t = run_tallies(ds, &[a], &[beta], source, sampling)?;
    Ok(row_from(ds, beta, 1.0, &t[0], 0))
}

pub fn estimate_energy<S: LoopSource + ?Sized>(
    sys: &FlaskSystem,
    kind: DomainKind,
    grid: &BetaGrid,
    source: &S,
    sampling: Sampling,
) -> Result<EnergyEstimate> {
    grid.validate()?;
    let ds = build_domains_of_kind(sys, kind)?;
    let a = sys.piston_height;
    let t = run_tallies(&ds, &[a], &grid.nodes, source, sampling)?;
    let est = assemble(&ds, grid, &t, 0, a);
    if est.tail_warning {
        log::warn!("beta grid tails are not negligible at a={a}");
    }
    Ok(est)
}

/// Parallel-plate bound `-π³ r² / (1440 d³)` on the (-) channel.
pub fn plate_bound(r: f64, d: f64) -> Result<f64> {
    require_positive("r", r)?;
    require_positive("d", d)?;
    Ok(-PI.powi(3) * r * r / (1440.0 * d.powi(3)))
}

/// Force between neighbouring heights, `F = -(E(a_hi) - E(a_lo)) / (a_hi - a_lo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcePoint {
    pub a_lo: f64,
    pub a_hi: f64,
    pub a_mid: f64,
    pub force: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    /// Midpoints of the two forces of opposite sign.
    pub bracket: (f64, f64),
    pub estimate: f64,
    pub forces: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub grid: BetaGrid,
    pub estimates: Vec<EnergyEstimate>,
    pub forces: Vec<ForcePoint>,
    pub equilibrium: Option<Equilibrium>,
}

/// Energies at every height from a single pass over the samples; all
/// heights share loops, base points and β nodes.
pub fn force_scan<S: LoopSource + ?Sized>(
    template: &FlaskSystem,
    kind: DomainKind,
    a_values: &[f64],
    grid: &BetaGrid,
    source: &S,
    sampling: Sampling,
) -> Result<ScanResult> {
    if a_values.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 heights, got {}",
            a_values.len()
        )));
    }
    if a_values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "heights must be strictly increasing".into(),
        ));
    }
    for &a in a_values {
        template.with_height(a)?;
    }
    grid.validate()?;
    let ds = build_domains_of_kind(&template.with_height(a_values[0])?, kind)?;
    let tallies = run_tallies(&ds, a_values, &grid.nodes, source, sampling)?;

    let estimates: Vec<EnergyEstimate> = a_values
        .iter()
        .enumerate()
        .map(|(k, &a)| assemble(&ds, grid, &tallies, k, a))
        .collect();
    if estimates.iter().any(|e| e.tail_warning) {
        log::warn!("beta grid tails are not negligible for part of the scan");
    }

    let forces: Vec<ForcePoint> = (0..a_values.len() - 1)
        .map(|k| {
            let (lo, hi) = (a_values[k], a_values[k + 1]);
            let h = hi - lo;
            let mut var = 0.0;
            for ((&b, &w), t) in grid.nodes.iter().zip(&grid.weights).zip(&tallies) {
                let m = t.n_samples as f64;
                let mean = t.diff_sum[k] as f64 / m;
                let v = (t.diff_sq[k] as f64 / m - mean * mean).max(0.0);
                var += (w * integrand_scale(&ds, b)).powi(2) * v / m;
            }
            ForcePoint {
                a_lo: lo,
                a_hi: hi,
                a_mid: 0.5 * (lo + hi),
                // `+ 0.0` turns a -0.0 from equal energies into 0.0
                force: -(estimates[k + 1].value - estimates[k].value) / h + 0.0,
                std_error: var.sqrt() / h,
            }
        })
        .collect();

    let equilibrium = forces.windows(2).find_map(|w| {
        let (f0, f1) = (&w[0], &w[1]);
        let opposite = (f0.force > 0.0 && f1.force < 0.0) || (f0.force < 0.0 && f1.force > 0.0);
        let resolved = f0.force.abs() > f0.std_error && f1.force.abs() > f1.std_error;
        (opposite && resolved).then_some(Equilibrium {
            bracket: (f0.a_mid, f1.a_mid),
            estimate: 0.5 * (f0.a_mid + f1.a_mid),
            forces: (f0.force, f1.force),
        })
    });

    Ok(ScanResult {
        grid: grid.clone(),
        estimates,
        forces,
        equilibrium,
    })
}

// ---------------------------------------------------------------------------
// Asymptotic (-) channel for a long thin neck.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticMinus {
    pub value: f64,
    /// Absolute error estimate of the outer quadrature.
    pub error_estimate: f64,
    /// False unless `L ≫ R ≫ r` holds loosely (`r <= R/4`, `L >= 4R`).
    pub in_regime: bool,
}

const REL_FLOOR: f64 = 1e-16;
const QUAD_TOL: f64 = 1e-10;
const PANELS: usize = 16;
const UNDERFLOW_GUARD: f64 = 1e-250;

fn inner_s_integral(d: f64, beta: f64) -> Result<f64> {
    let f = |s: f64| -> Result<f64> { Ok((s - d) * d2phi_interval_ds2(s, beta)?) };
    // decay length of exp(-2 s² / β) just above s = d
    let step = 0.25 * beta.sqrt().min(beta / d);
    let mut peak = 0.0f64;
    let mut s_max;
    let mut k = 1;
    loop {
        let s = d + k as f64 * step;
        let v = f(s)?.abs();
        peak = peak.max(v);
        s_max = s;
        // below this the tail underflows before it decays smoothly
        if peak < UNDERFLOW_GUARD && k > 8 {
            return Ok(0.0);
        }
        if (v <= REL_FLOOR * peak && k > 8) || k > 20_000 {
            break;
        }
        k += 1;
    }
    Ok(panel_integrate(f, d, s_max, peak)?.0)
}

/// Double-exponential quadrature of `f` on equal panels of `[a, b]`, with
/// the tolerance taken relative to `scale`; returns (integral, error).
fn panel_integrate<F: Fn(f64) -> Result<f64>>(
    f: F,
    a: f64,
    b: f64,
    scale: f64,
) -> Result<(f64, f64)> {
    let failed = RefCell::new(None);
    let g = |x: f64| {
        f(x).unwrap_or_else(|e| {
            *failed.borrow_mut() = Some(e);
            0.0
        }) / scale
    };
    let h = (b - a) / PANELS as f64;
    let (mut total, mut err) = (0.0, 0.0);
    for p in 0..PANELS {
        let out = quadrature::double_exponential::integrate(
            g,
            a + p as f64 * h,
            a + (p + 1) as f64 * h,
            QUAD_TOL,
        );
        total += out.integral;
        err += out.error_estimate;
    }
    if let Some(e) = failed.into_inner() {
        return Err(e);
    }
    if err > 1e3 * QUAD_TOL * (1.0 + total.abs()) {
        return Err(Error::Quadrature {
            achieved: err * scale,
            requested: QUAD_TOL * scale,
        });
    }
    Ok((total * scale, err * scale))
}

/// `β`-integrand of the asymptotic (-) energy, without the outer minus sign.
fn minus_density(r: f64, d: f64, beta: f64) -> Result<f64> {
    let inner = inner_s_integral(d, beta)?;
    if inner == 0.0 {
        return Ok(0.0);
    }
    Ok(phi_disk_eigsum(r, beta)? * inner / (2.0 * (2.0 * PI).sqrt() * beta.powf(1.5)))
}

/// Integrates `g(β) dβ = g(e^u) e^u du` over the region where the integrand
/// is within `REL_FLOOR` of its peak.
fn integrate_log_beta<F: Fn(f64) -> Result<f64>>(g: F, u_lo: f64, u_hi: f64) -> Result<(f64, f64)> {
    let n = 400;
    let du = (u_hi - u_lo) / n as f64;
    let vals: Vec<f64> = (0..=n)
        .map(|i| {
            let u = u_lo + i as f64 * du;
            Ok(g(u.exp())? * u.exp())
        })
        .collect::<Result<_>>()?;
    let peak = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok((0.0, 0.0));
    }
    let first = vals
        .iter()
        .position(|v| v.abs() > REL_FLOOR * peak)
        .unwrap();
    let last = vals
        .iter()
        .rposition(|v| v.abs() > REL_FLOOR * peak)
        .unwrap();
    if first == 0 || last == n {
        return Err(Error::Quadrature {
            achieved: f64::INFINITY,
            requested: QUAD_TOL,
        });
    }
    let (a, b) = (
        u_lo + (first - 1) as f64 * du,
        u_lo + (last + 1) as f64 * du,
    );
    panel_integrate(|u| Ok(g(u.exp())? * u.exp()), a, b, peak)
}

fn beta_window(r: f64, d: f64) -> (f64, f64) {
    let scale = r.min(d);
    ((scale * scale * 1e-4).ln(), ((r.max(d)).powi(2) * 1e3).ln())
}

/// Asymptotic (-) channel energy: transverse disk trace times the
/// longitudinal room a one-dimensional loop has beyond `d = 2R + a`.
pub fn asymptotic_minus(sys: &FlaskSystem) -> Result<AsymptoticMinus> {
    sys.validate()?;
    asymptotic_minus_for(
        sys.neck_radius,
        sys.bulb_radius,
        sys.piston_height,
        Some(sys.neck_length),
    )
}

/// [`asymptotic_minus`] from the radii and height alone; the neck length
/// only enters the regime flag.
pub fn asymptotic_minus_for(
    r: f64,
    bulb_radius: f64,
    a: f64,
    neck_length: Option<f64>,
) -> Result<AsymptoticMinus> {
    require_positive("r", r)?;
    require_positive("R", bulb_radius)?;
    require_positive("a", a)?;
    let d = 2.0 * bulb_radius + a;
    let in_regime = r <= 0.25 * bulb_radius && neck_length.is_none_or(|l| l >= 4.0 * bulb_radius);
    if !in_regime {
        log::warn!("asymptotic (-) estimate used outside L >> R >> r (r={r}, R={bulb_radius}, L={neck_length:?})");
    }
    let (u_lo, u_hi) = beta_window(r, d);
    let (value, err) = integrate_log_beta(|b| minus_density(r, d, b), u_lo, u_hi)?;
    Ok(AsymptoticMinus {
        value: -value,
        error_estimate: err,
        in_regime,
    })
}

/// Same quantity with the `s` integral done in closed form:
/// `∫_d^∞ (s-d) φ'' ds = 2d/√(2πβ) Σ_n exp(-2 d² n² / β)`.
pub fn asymptotic_minus_closed_form(r: f64, d: f64) -> Result<f64> {
    require_positive("r", r)?;
    require_positive("d", d)?;
    let density = |beta: f64| -> Result<f64> {
        let mut sum = 0.0;
        for n in 1.. {
            let t = (-2.0 * d * d * (n * n) as f64 / beta).exp();
            sum += t;
            if t <= REL_FLOOR * sum || t == 0.0 {
                break;
            }
        }
        if sum == 0.0 {
            return Ok(0.0);
        }
        Ok(phi_disk_eigsum(r, beta)? * d * sum / (2.0 * PI * beta * beta))
    };
    let (u_lo, u_hi) = beta_window(r, d);
    Ok(-integrate_log_beta(density, u_lo, u_hi)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domains, LoopClass};
    use crate::loops::{sample_unit_loop, LoopEnsemble, LoopStream};
    use approx::assert_relative_eq;

    #[test]
    fn grid_integrates_power_law() {
        let g = BetaGrid::log_spaced(1e-3, 1e3, 400).unwrap();
        let v: f64 = g
            .nodes
            .iter()
            .zip(&g.weights)
            .map(|(b, w)| w * b.powi(-2) * (-1.0 / b).exp())
            .sum();
        // ∫ β^-2 e^{-1/β} dβ over (0, ∞) = 1
        assert_relative_eq!(v, 1.0, max_relative = 1e-3);
        assert!(BetaGrid::log_spaced(0.0, 1.0, 4).is_err());
        assert!(BetaGrid::log_spaced(1.0, 2.0, 1).is_err());
    }

    #[test]
    fn default_grid_matches_policy() {
        let sys = FlaskSystem::new(1.0, 0.2, 8.0, 0.5).unwrap();
        let g = GridPolicy::default().grid_for(&sys).unwrap();
        assert_eq!(g.len(), 48);
        assert_relative_eq!(g.nodes[0], 0.25 / 16.0, max_relative = 1e-12);
        assert_relative_eq!(g.nodes[47], 64.0 * 2.5 * 2.5, max_relative = 1e-12);
    }

    #[test]
    fn fast_weight_agrees_with_classification() {
        let loops = LoopEnsemble::generate(9, 256, 60).unwrap();
        let mut g = CounterRng::from_path(4, &[rng::tag::VALIDATE]);
        let mut nonzero = 0;
        for sys in [
            FlaskSystem::new(1.0, 0.5, 3.0, 0.3).unwrap(),
            FlaskSystem::new(1.0, 1.0, 2.5, 0.5).unwrap(),
            FlaskSystem::new(1.0, 0.9, 2.5, 0.1).unwrap(),
        ] {
            let ds = build_domains(&sys).unwrap();
            for lp in &loops.loops {
                for _ in 0..300 {
                    // base points around the neck opening, where contributions live
                    let x = Vec3::new(
                        g.uniform() - 0.5,
                        g.uniform() - 0.5,
                        -2.2 + 2.6 * g.uniform(),
                    );
                    let beta = (g.uniform() * 4.0 - 3.0).exp();
                    let slow = sample_weight(x, beta, lp, &ds).unwrap();
                    assert_eq!(slow, sample_weight_fast(x, beta, lp, &ds).unwrap());
                    nonzero += (slow != 0) as usize;
                }
            }
        }
        assert!(nonzero > 20, "only {nonzero} contributing samples");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]
        #[test]
        fn fast_weight_matches_on_random_systems(
            r_frac in 0.05f64..1.0,
            l_extra in 0.0f64..3.0,
            a_frac in 0.02f64..0.98,
            index in 0u64..1000,
            xy in proptest::array::uniform2(-0.6f64..0.6),
            z in -2.5f64..1.0,
            log_beta in -4.0f64..1.0,
        ) {
            let l = 2.05 + l_extra;
            let sys = FlaskSystem::new(1.0, r_frac, l, a_frac * l).unwrap();
            let ds = build_domains(&sys).unwrap();
            let lp = crate::loops::sample_unit_loop(128, crate::loops::LoopStream { seed: 2, index }).unwrap();
            let x = Vec3::new(xy[0], xy[1], z);
            let beta = log_beta.exp();
            proptest::prop_assert_eq!(
                sample_weight(x, beta, &lp, &ds).unwrap(),
                sample_weight_fast(x, beta, &lp, &ds).unwrap()
            );
        }
    }

    #[test]
    fn weight_is_zero_outside_all_domains() {
        let sys = FlaskSystem::new(1.0, 0.3, 3.0, 0.5).unwrap();
        let ds = build_domains(&sys).unwrap();
        let lp = sample_unit_loop(64, LoopStream { seed: 1, index: 0 }).unwrap();
        assert_eq!(
            sample_weight_fast(Vec3::new(0.9, 0.0, 1.0), 0.3, &lp, &ds).unwrap(),
            0
        );
        let cyl = build_domains_of_kind(&sys, DomainKind::Cylinder).unwrap();
        assert_eq!(
            sample_weight(Vec3::new(0.0, 0.0, 0.4), 2.0, &lp, &cyl).unwrap(),
            0
        );
    }

    #[test]
    fn degenerate_flask_gives_exact_zero() {
        let sys = FlaskSystem::new(1.0, 0.5, 3.0, 0.5).unwrap();
        let ens = LoopEnsemble::generate(3, 128, 200).unwrap();
        let grid = GridPolicy {
            n_beta: 12,
            ..Default::default()
        }
        .grid_for(&sys)
        .unwrap();
        let e = estimate_energy(&sys, DomainKind::Cylinder, &grid, &ens, Sampling::new(1)).unwrap();
        assert_eq!(
            (e.value, e.std_error, e.n_plus, e.n_minus),
            (0.0, 0.0, 0, 0)
        );
        assert!(!e.tail_warning);
        let s = force_scan(
            &sys,
            DomainKind::Cylinder,
            &[0.2, 0.4, 0.6],
            &grid,
            &ens,
            Sampling::new(1),
        )
        .unwrap();
        assert!(s
            .forces
            .iter()
            .all(|f| f.force == 0.0 && f.std_error == 0.0));
        assert!(s.equilibrium.is_none());
    }

    #[test]
    fn channels_have_fixed_signs_and_add_up() {
        let sys = FlaskSystem::new(1.0, 0.9, 2.5, 0.1).unwrap();
        let ens = LoopEnsemble::generate(5, 64, 500).unwrap();
        let grid = GridPolicy {
            n_beta: 16,
            ..Default::default()
        }
        .grid_for(&sys)
        .unwrap();
        let e = estimate_energy(
            &sys,
            DomainKind::Flask,
            &grid,
            &ens,
            Sampling {
                seed: 2,
                x_per_loop: 40,
            },
        )
        .unwrap();
        assert!(e.plus_component >= 0.0 && e.minus_component <= 0.0);
        assert_relative_eq!(
            e.value,
            e.plus_component + e.minus_component,
            max_relative = 1e-14
        );
        assert_eq!(e.n_plus + e.n_minus + e.n_null, 16 * 500 * 40);
        assert!(e.n_plus > 0 && e.n_minus > 0, "{} {}", e.n_plus, e.n_minus);
    }

    #[test]
    fn scan_matches_single_height_runs() {
        let sys = FlaskSystem::new(1.0, 0.6, 3.0, 0.2).unwrap();
        let ens = LoopEnsemble::generate(8, 128, 300).unwrap();
        let grid = GridPolicy {
            n_beta: 10,
            ..Default::default()
        }
        .grid(1.0, 0.2, 0.8)
        .unwrap();
        let heights = [0.2, 0.5, 0.8];
        let scan = force_scan(
            &sys,
            DomainKind::Flask,
            &heights,
            &grid,
            &ens,
            Sampling::new(3),
        )
        .unwrap();
        for (k, &a) in heights.iter().enumerate() {
            let single = estimate_energy(
                &sys.with_height(a).unwrap(),
                DomainKind::Flask,
                &grid,
                &ens,
                Sampling::new(3),
            )
            .unwrap();
            assert_eq!(single, scan.estimates[k]);
        }
        // w(a) is non-increasing in |w| along a for every sample
        for w in scan.estimates.windows(2) {
            assert!(w[1].n_plus <= w[0].n_plus && w[1].n_minus <= w[0].n_minus);
        }
    }

    #[test]
    fn integrand_vanishes_for_tiny_beta() {
        let sys = FlaskSystem::new(1.0, 0.5, 3.0, 0.5).unwrap();
        let ds = build_domains(&sys).unwrap();
        let ens = LoopEnsemble::generate(2, 128, 500).unwrap();
        let row = integrand(
            0.5 * 0.5 / 40.0,
            &ds,
            &ens,
            Sampling {
                seed: 1,
                x_per_loop: 20,
            },
        )
        .unwrap();
        assert_eq!(row.n_plus + row.n_minus, 0);
    }

    #[test]
    fn hemisphere_has_no_plus_loops() {
        let sys = FlaskSystem::new(1.0, 1.0, 2.5, 0.5).unwrap();
        let ds = build_domains(&sys).unwrap();
        let ens = LoopEnsemble::generate(4, 128, 300).unwrap();
        for beta in [0.05, 0.3, 1.0, 3.0] {
            let row = integrand(
                beta,
                &ds,
                &ens,
                Sampling {
                    seed: 5,
                    x_per_loop: 10,
                },
            )
            .unwrap();
            assert_eq!(row.n_plus, 0);
            assert!(row.integrand <= 0.0);
        }
        let lp = sample_unit_loop(64, LoopStream { seed: 1, index: 3 }).unwrap();
        assert_ne!(
            LoopClass::from_weight(
                sample_weight(Vec3::new(0.0, 0.0, -1.0), 0.5, &lp, &ds).unwrap()
            ),
            LoopClass::Plus
        );
    }

    #[test]
    fn energy_scales_inversely_with_length() {
        let sys = FlaskSystem::new(1.0, 0.6, 3.0, 0.3).unwrap();
        let big = sys.scaled(2.0).unwrap();
        let ens = LoopEnsemble::generate(6, 128, 200).unwrap();
        let policy = GridPolicy {
            n_beta: 12,
            ..Default::default()
        };
        let s = Sampling::new(4);
        let e1 = estimate_energy(
            &sys,
            DomainKind::Flask,
            &policy.grid_for(&sys).unwrap(),
            &ens,
            s,
        )
        .unwrap();
        let e2 = estimate_energy(
            &big,
            DomainKind::Flask,
            &policy.grid_for(&big).unwrap(),
            &ens,
            s,
        )
        .unwrap();
        assert_eq!(e1.n_plus, e2.n_plus);
        assert_relative_eq!(e2.value, e1.value / 2.0, max_relative = 1e-9);
        assert_relative_eq!(
            plate_bound(2.0, 4.0).unwrap(),
            plate_bound(1.0, 2.0).unwrap() / 2.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn plate_bound_closed_form() {
        assert_relative_eq!(
            plate_bound(1.0, 2.0).unwrap(),
            -PI.powi(3) / 11520.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            plate_bound(1.0, 2.0).unwrap(),
            -2.6916e-3,
            max_relative = 1e-4
        );
        assert!(plate_bound(1e-8, 2.0).unwrap().abs() < 1e-18);
        assert!(plate_bound(0.0, 1.0).is_err());
    }

    #[test]
    fn inner_integral_matches_closed_form() {
        for (d, beta) in [(2.05, 0.5), (1.0, 1.0), (2.0, 4.0), (0.5, 0.05)] {
            let numeric = inner_s_integral(d, beta).unwrap();
            let n1: f64 = (1..50)
                .map(|n| (-2.0 * d * d * (n * n) as f64 / beta).exp())
                .sum();
            let exact = 2.0 * d / (2.0 * PI * beta).sqrt() * n1;
            assert_relative_eq!(numeric, exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn asymptotic_minus_routes_agree_and_respect_bound() {
        for (r, big_r, a) in [(0.1, 1.0, 0.05), (0.3, 1.0, 0.5), (1.0, 0.5, 1.0)] {
            let d = 2.0 * big_r + a;
            let nested = asymptotic_minus_for(r, big_r, a, None).unwrap();
            let closed = asymptotic_minus_closed_form(r, d).unwrap();
            assert_relative_eq!(nested.value, closed, max_relative = 1e-7);
            assert!(nested.value < 0.0 && nested.value > plate_bound(r, d).unwrap());
        }
    }

    #[test]
    fn asymptotic_minus_trends() {
        let at = |r: f64, a: f64| {
            asymptotic_minus(&FlaskSystem::new(1.0, r, 8.0, a).unwrap())
                .unwrap()
                .value
        };
        assert!(at(0.3, 0.2).abs() > at(0.3, 0.6).abs());
        let mut last = 0.0;
        for r in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let v = at(r, 0.2);
            assert!(v < last && v > plate_bound(r, 2.2).unwrap());
            last = v;
        }
    }

    #[test]
    fn scan_rejects_bad_heights() {
        let sys = FlaskSystem::new(1.0, 0.5, 3.0, 0.5).unwrap();
        let ens = LoopEnsemble::generate(1, 16, 4).unwrap();
        let grid = GridPolicy::default().grid_for(&sys).unwrap();
        let s = Sampling::new(1);
        assert!(force_scan(&sys, DomainKind::Flask, &[0.1, 0.2], &grid, &ens, s).is_err());
        assert!(force_scan(&sys, DomainKind::Flask, &[0.1, 0.3, 0.2], &grid, &ens, s).is_err());
        assert!(force_scan(&sys, DomainKind::Flask, &[0.1, 0.2, 3.5], &grid, &ens, s).is_err());
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let sys = FlaskSystem::new(1.0, 0.6, 3.0, 0.3).unwrap();
        let ens = LoopEnsemble::generate(6, 128, 150).unwrap();
        let grid = GridPolicy {
            n_beta: 8,
            ..Default::default()
        }
        .grid(1.0, 0.2, 0.6)
        .unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    force_scan(
                        &sys,
                        DomainKind::Flask,
                        &[0.2, 0.4, 0.6],
                        &grid,
                        &ens,
                        Sampling::new(9),
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }
}
