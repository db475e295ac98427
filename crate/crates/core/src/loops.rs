//! Unit Brownian bridges ("unit loops") and their ensembles.
//!
//! A unit loop is a 3-d standard Brownian bridge on proper time `[0, 1]`,
//! pinned to the origin at both ends and sampled at `τ_i = i / N`. It is
//! mapped to any base point `x` and proper time `β` by `x + √β · ω`.
//!
//! Loops are built by midpoint bisection. The Gaussian used for the point
//! at dyadic time `k / 2^l` is keyed by `(seed, loop index, l, k)`, so a
//! loop with `2N` points refines the `N`-point loop of the same index: the
//! even-indexed points coincide exactly.

use std::borrow::Cow;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::{self, CounterRng};

/// Visits `0..n` so that coarse sample times come first: 0, then the odd
/// multiples of the largest power-of-two stride, then of half of it, ...
pub fn coarse_to_fine(n: usize) -> impl Iterator<Item = usize> {
    let top = n.next_power_of_two().max(2);
    let first = (n > 0).then_some(0);
    let strides = std::iter::successors(Some(top / 2), |&s| (s > 1).then_some(s / 2));
    first
        .into_iter()
        .chain(strides.flat_map(move |s| (s..n).step_by(2 * s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitLoop {
    points: Vec<Vec3>,
    z_min: f64,
    z_max: f64,
}

impl UnitLoop {
    pub fn from_points(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(
                "a loop needs at least 2 points".into(),
            ));
        }
        if points[0] != Vec3::ZERO {
            return Err(Error::InvalidArgument(
                "a unit loop starts at the origin".into(),
            ));
        }
        let ext = extent(&points, Axis::Z);
        Ok(Self {
            points,
            z_min: ext.min,
            z_max: ext.max,
        })
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Lowest and highest z over the sample points.
    pub fn z_range(&self) -> (f64, f64) {
        (self.z_min, self.z_max)
    }
}

/// Identifies the random stream of one loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopStream {
    pub seed: u64,
    pub index: u64,
}

/// Key for the point at index `m` of an `n`-point loop. Power-of-two
/// loops key by the reduced dyadic time so refinements share points.
fn node_key(m: usize, n: usize) -> u64 {
    if n.is_power_of_two() {
        let tz = m.trailing_zeros();
        let k = (m >> tz) as u64;
        let level = (n >> tz).trailing_zeros();
        (1u64 << (level - 1)) + (k - 1) / 2
    } else {
        (1u64 << 63) | ((n as u64) << 32) | m as u64
    }
}

pub fn sample_unit_loop(n_points: usize, stream: LoopStream) -> Result<UnitLoop> {
    if n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_points must be >= 2, got {n_points}"
        )));
    }
    if n_points as u64 >= 1 << 31 {
        return Err(Error::InvalidArgument("n_points too large".into()));
    }
    let n = n_points;
    let loop_key = rng::stream_key(stream.seed, &[rng::tag::LOOP, stream.index]);
    // index n is the closure point; both ends stay at the origin
    let mut pts = vec![Vec3::ZERO; n + 1];
    let mut stack = vec![(0usize, n)];
    while let Some((lo, hi)) = stack.pop() {
        if hi - lo < 2 {
            continue;
        }
        let m = (lo + hi) / 2;
        let (t_lo, t_m, t_hi) = (
            lo as f64 / n as f64,
            m as f64 / n as f64,
            hi as f64 / n as f64,
        );
        let frac = (t_m - t_lo) / (t_hi - t_lo);
        let sd = ((t_m - t_lo) * (t_hi - t_m) / (t_hi - t_lo)).sqrt();
        let mut g = CounterRng::new(rng::subkey(loop_key, node_key(m, n)));
        let mean = pts[lo] + (pts[hi] - pts[lo]) * frac;
        pts[m] = mean + Vec3::new(g.normal(), g.normal(), g.normal()) * sd;
        stack.push((m, hi));
        stack.push((lo, m));
    }
    pts.truncate(n);
    UnitLoop::from_points(pts)
}

/// Points `x + √β ω_i` of the loop over proper time `beta` based at `x`.
pub fn realize(lp: &UnitLoop, beta: f64, x: Vec3) -> Result<Vec<Vec3>> {
    crate::error::require_positive("beta", beta)?;
    let s = beta.sqrt();
    Ok(lp.points.iter().map(|&w| x + w * s).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    #[inline]
    fn of(self, p: Vec3) -> f64 {
        match self {
            Axis::X => p.x,
            Axis::Y => p.y,
            Axis::Z => p.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent1D {
    pub min: f64,
    pub max: f64,
}

impl Extent1D {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

pub fn extent(points: &[Vec3], axis: Axis) -> Extent1D {
    assert!(!points.is_empty(), "extent of an empty point list");
    points.iter().fold(
        Extent1D {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        },
        |e, &p| {
            let v = axis.of(p);
            Extent1D {
                min: e.min.min(v),
                max: e.max.max(v),
            }
        },
    )
}

/// Projection of a loop onto the plane transverse to the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseLoop(pub Vec<[f64; 2]>);

/// Projection of a loop onto the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalLoop(pub Vec<f64>);

impl TransverseLoop {
    /// True iff every point of `base + √β ω` lies in the closed disk of radius `r`.
    pub fn in_disk(&self, base: [f64; 2], beta: f64, r: f64) -> bool {
        let s = beta.sqrt();
        self.0.iter().all(|p| {
            let (x, y) = (base[0] + s * p[0], base[1] + s * p[1]);
            x * x + y * y <= r * r
        })
    }
}

impl LongitudinalLoop {
    pub fn in_interval(&self, base: f64, beta: f64, lo: f64, hi: f64) -> bool {
        let s = beta.sqrt();
        self.0.iter().all(|&z| {
            let v = base + s * z;
            v >= lo && v <= hi
        })
    }
}

pub fn split(lp: &UnitLoop) -> (TransverseLoop, LongitudinalLoop) {
    let t = lp.points.iter().map(|p| [p.x, p.y]).collect();
    let l = lp.points.iter().map(|p| p.z).collect();
    (TransverseLoop(t), LongitudinalLoop(l))
}

pub fn recombine(t: &TransverseLoop, l: &LongitudinalLoop) -> Result<UnitLoop> {
    if t.0.len() != l.0.len() {
        return Err(Error::InvalidArgument(
            "transverse and longitudinal lengths differ".into(),
        ));
    }
    UnitLoop::from_points(
        t.0.iter()
            .zip(&l.0)
            .map(|(p, &z)| Vec3::new(p[0], p[1], z))
            .collect(),
    )
}

/// Anything that can hand out unit loops by index.
pub trait LoopSource: Sync {
    fn len(&self) -> usize;
    fn n_points(&self) -> usize;
    fn seed(&self) -> u64;
    fn get(&self, index: usize) -> Cow<'_, UnitLoop>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A materialized ensemble of unit loops.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopEnsemble {
    pub seed: u64,
    pub n_points: usize,
    pub loops: Vec<UnitLoop>,
}

impl LoopEnsemble {
    /// Samples `count` loops in parallel; the result does not depend on the
    /// number of worker threads.
    pub fn generate(seed: u64, n_points: usize, count: usize) -> Result<Self> {
        let loops = (0..count)
            .into_par_iter()
            .map(|i| {
                sample_unit_loop(
                    n_points,
                    LoopStream {
                        seed,
                        index: i as u64,
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed,
            n_points,
            loops,
        })
    }

    const MAGIC: [u8; 8] = *b"CASMLOOP";
    const VERSION: u32 = 1;

    /// Binary cache: magic, version (u32), seed, n_points, count (u64), then
    /// `count * n_points` little-endian f64 triples in loop-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.n_points as u64).to_le_bytes())?;
        w.write_all(&(self.loops.len() as u64).to_le_bytes())?;
        for lp in &self.loops {
            for p in &lp.points {
                for v in [p.x, p.y, p.z] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Cache(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if magic != Self::MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8).map_err(io)?;
            Ok(u64::from_le_bytes(b8))
        };
        let seed = read_u64(&mut r)?;
        let n_points = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut loops = Vec::with_capacity(count);
        let mut buf = vec![0u8; n_points * 24];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(io)?;
            let pts = buf
                .chunks_exact(24)
                .map(|c| {
                    let f = |o: usize| f64::from_le_bytes(c[o..o + 8].try_into().unwrap());
                    Vec3::new(f(0), f(8), f(16))
                })
                .collect();
            loops.push(UnitLoop::from_points(pts)?);
        }
        Ok(Self {
            seed,
            n_points,
            loops,
        })
    }
}

impl LoopSource for LoopEnsemble {
    fn len(&self) -> usize {
        self.loops.len()
    }
    fn n_points(&self) -> usize {
        self.n_points
    }
    fn seed(&self) -> u64 {
        self.seed
    }
    fn get(&self, index: usize) -> Cow<'_, UnitLoop> {
        Cow::Borrowed(&self.loops[index])
    }
}

/// An ensemble that regenerates each loop from its stream on request;
/// memory stays flat for large `count * n_points`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LazyEnsemble {
    pub seed: u64,
    pub n_points: usize,
    pub count: usize,
}

impl LazyEnsemble {
    pub fn new(seed: u64, n_points: usize, count: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_points must be >= 2, got {n_points}"
            )));
        }
        Ok(Self {
            seed,
            n_points,
            count,
        })
    }

    pub fn materialize(&self) -> Result<LoopEnsemble> {
        LoopEnsemble::generate(self.seed, self.n_points, self.count)
    }
}

impl LoopSource for LazyEnsemble {
    fn len(&self) -> usize {
        self.count
    }
    fn n_points(&self) -> usize {
        self.n_points
    }
    fn seed(&self) -> u64 {
        self.seed
    }
    fn get(&self, index: usize) -> Cow<'_, UnitLoop> {
        Cow::Owned(
            sample_unit_loop(
                self.n_points,
                LoopStream {
                    seed: self.seed,
                    index: index as u64,
                },
            )
            .expect("n_points validated at construction"),
        )
    }
}
