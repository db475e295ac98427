//! Closed regions, the flask/cylinder domain set and loop classification.
//!
//! Frame: the z-axis runs along the neck, the bulb is a ball centred at
//! `(0, 0, -R)` so its top sits at `z = 0`, and the piston is the plane
//! `z = a`. All regions are closed: a point on a wall is inside.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loops::coarse_to_fine;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    /// Squared distance from the z-axis.
    #[inline]
    pub fn radial_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn scale(self, s: f64) -> Self {
        self * s
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// A closed subset of 3-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Ball {
        center: Vec3,
        radius: f64,
    },
    /// Solid cylinder around the z-axis.
    AxialCylinder {
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
    /// Axis-aligned box `[min, max]`.
    AxisBox {
        min: Vec3,
        max: Vec3,
    },
    Union(Vec<Region>),
}

impl Region {
    pub fn ball(center: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !center.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "ball needs a finite center and radius > 0, got radius {radius}"
            )));
        }
        Ok(Region::Ball { center, radius })
    }

    pub fn cylinder(radius: f64, z_min: f64, z_max: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "cylinder radius must be > 0, got {radius}"
            )));
        }
        if !(z_min < z_max) || !z_min.is_finite() || !z_max.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "cylinder needs z_min < z_max, got [{z_min}, {z_max}]"
            )));
        }
        Ok(Region::AxialCylinder {
            radius,
            z_min,
            z_max,
        })
    }

    pub fn cuboid(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z)
            || !min.is_finite()
            || !max.is_finite()
        {
            return Err(Error::InvalidGeometry(format!(
                "box needs min < max componentwise, got {min:?} .. {max:?}"
            )));
        }
        Ok(Region::AxisBox { min, max })
    }

    pub fn union(parts: Vec<Region>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidGeometry("empty union".into()));
        }
        Ok(Region::Union(parts))
    }

    #[inline]
    pub fn contains(&self, p: Vec3) -> bool {
        match self {
            Region::Ball { center, radius } => (p - *center).norm_sq() <= radius * radius,
            Region::AxialCylinder {
                radius,
                z_min,
                z_max,
            } => p.z >= *z_min && p.z <= *z_max && p.radial_sq() <= radius * radius,
            Region::AxisBox { min, max } => {
                p.x >= min.x
                    && p.x <= max.x
                    && p.y >= min.y
                    && p.y <= max.y
                    && p.z >= min.z
                    && p.z <= max.z
            }
            Region::Union(parts) => parts.iter().any(|r| r.contains(p)),
        }
    }

    /// Maps three uniforms in `[0, 1)` to a uniformly distributed point.
    /// Only boxes and axial cylinders can be sampled directly.
    #[inline]
    pub fn uniform_point(&self, u: [f64; 3]) -> Result<Vec3> {
        match self {
            Region::AxisBox { min, max } => Ok(Vec3::new(
                min.x + (max.x - min.x) * u[0],
                min.y + (max.y - min.y) * u[1],
                min.z + (max.z - min.z) * u[2],
            )),
            Region::AxialCylinder {
                radius,
                z_min,
                z_max,
            } => {
                let rho = radius * u[0].sqrt();
                let (s, c) = (2.0 * PI * u[1]).sin_cos();
                Ok(Vec3::new(rho * c, rho * s, z_min + (z_max - z_min) * u[2]))
            }
            _ => Err(Error::UnsupportedRegion(
                "only boxes and axial cylinders can be sampled".into(),
            )),
        }
    }

    /// Volume of a directly sampleable region.
    pub fn sampling_volume(&self) -> Result<f64> {
        match self {
            Region::AxisBox { .. } | Region::AxialCylinder { .. } => weyl_a0(self),
            _ => Err(Error::UnsupportedRegion(
                "only boxes and axial cylinders can be sampled".into(),
            )),
        }
    }

    /// Translated copy.
    pub fn translated(&self, by: Vec3) -> Result<Region> {
        match self {
            Region::Ball { center, radius } => Region::ball(*center + by, *radius),
            Region::AxisBox { min, max } => Region::cuboid(*min + by, *max + by),
            Region::AxialCylinder {
                radius,
                z_min,
                z_max,
            } => {
                if by.x != 0.0 || by.y != 0.0 {
                    return Err(Error::UnsupportedRegion(
                        "axial cylinders can only be shifted along z".into(),
                    ));
                }
                Region::cylinder(*radius, z_min + by.z, z_max + by.z)
            }
            Region::Union(parts) => Region::union(
                parts
                    .iter()
                    .map(|r| r.translated(by))
                    .collect::<Result<_>>()?,
            ),
        }
    }
}

/// Parameters of the flask: bulb radius `R`, neck radius `r`, neck length
/// `L` and piston height `a` above the top of the bulb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlaskSystem {
    pub bulb_radius: f64,
    pub neck_radius: f64,
    pub neck_length: f64,
    pub piston_height: f64,
}

impl FlaskSystem {
    pub fn new(
        bulb_radius: f64,
        neck_radius: f64,
        neck_length: f64,
        piston_height: f64,
    ) -> Result<Self> {
        let sys = Self {
            bulb_radius,
            neck_radius,
            neck_length,
            piston_height,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let (big_r, r, l, a) = (
            self.bulb_radius,
            self.neck_radius,
            self.neck_length,
            self.piston_height,
        );
        if ![big_r, r, l, a].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite flask parameter".into()));
        }
        if !(r > 0.0 && r <= big_r) {
            return Err(Error::InvalidGeometry(format!(
                "need 0 < r <= R, got r={r}, R={big_r}"
            )));
        }
        if !(a > 0.0 && a < l) {
            return Err(Error::InvalidGeometry(format!(
                "need 0 < a < L, got a={a}, L={l}"
            )));
        }
        if !(big_r < l) {
            return Err(Error::InvalidGeometry(format!(
                "need R < L, got R={big_r}, L={l}"
            )));
        }
        Ok(())
    }

    pub fn with_height(&self, piston_height: f64) -> Result<Self> {
        Self::new(
            self.bulb_radius,
            self.neck_radius,
            self.neck_length,
            piston_height,
        )
    }

    /// Every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.bulb_radius * factor,
            self.neck_radius * factor,
            self.neck_length * factor,
            self.piston_height * factor,
        )
    }

    /// Height where the neck wall meets the bulb sphere.
    pub fn junction_z(&self) -> f64 {
        let (big_r, r) = (self.bulb_radius, self.neck_radius);
        -big_r + (big_r * big_r - r * r).max(0.0).sqrt()
    }

    /// Lowest point of the bulb at distance `r` from the axis; loops that
    /// leave the flask inside the comparison cylinder have to get below it.
    pub fn bulb_floor_at_neck_radius(&self) -> f64 {
        let (big_r, r) = (self.bulb_radius, self.neck_radius);
        -big_r - (big_r * big_r - r * r).max(0.0).sqrt()
    }
}

/// Whether the flask is the real flask or the comparison cylinder itself
/// (a null configuration in which every contribution cancels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    #[default]
    Flask,
    Cylinder,
}

/// The four domains of the alternating sum. `domains[k]` is `D_k`:
/// flask below piston, cylinder below piston, whole cylinder, whole flask.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSet {
    pub system: FlaskSystem,
    pub kind: DomainKind,
    pub domains: [Region; 4],
    pub sampling_region: Region,
    pub sampling_volume: f64,
    /// Below this height the whole cylinder and whole flask can differ.
    lower_cut: f64,
}

pub fn build_domains(sys: &FlaskSystem) -> Result<DomainSet> {
    build_domains_of_kind(sys, DomainKind::Flask)
}

pub fn build_domains_of_kind(sys: &FlaskSystem, kind: DomainKind) -> Result<DomainSet> {
    sys.validate()?;
    let (big_r, r, l, a) = (
        sys.bulb_radius,
        sys.neck_radius,
        sys.neck_length,
        sys.piston_height,
    );

    let cyl_below = Region::cylinder(r, -l, a)?;
    let cyl_whole = Region::cylinder(r, -l, l)?;
    let (flask_below, flask_whole, lower_cut) = match kind {
        DomainKind::Flask => {
            if l <= -sys.bulb_floor_at_neck_radius() {
                log::warn!(
                    "L={l} does not reach below the bulb (needs L > {}); no (-) loops can occur",
                    -sys.bulb_floor_at_neck_radius()
                );
            }
            let bulb = Region::ball(Vec3::new(0.0, 0.0, -big_r), big_r)?;
            (
                Region::union(vec![bulb.clone(), Region::cylinder(r, -big_r, a)?])?,
                Region::union(vec![bulb, Region::cylinder(r, -big_r, l)?])?,
                sys.junction_z(),
            )
        }
        DomainKind::Cylinder => (cyl_below.clone(), cyl_whole.clone(), f64::NEG_INFINITY),
    };

    let z_low = -(l.max(2.0 * big_r));
    let sampling_region = Region::cylinder(big_r.max(r), z_low, l)?;
    let sampling_volume = PI * big_r.max(r).powi(2) * (l - z_low);

    Ok(DomainSet {
        system: *sys,
        kind,
        domains: [flask_below, cyl_below, cyl_whole, flask_whole],
        sampling_region,
        sampling_volume,
        lower_cut,
    })
}

impl DomainSet {
    pub fn flask_below(&self) -> &Region {
        &self.domains[0]
    }
    pub fn cylinder_below(&self) -> &Region {
        &self.domains[1]
    }
    pub fn whole_cylinder(&self) -> &Region {
        &self.domains[2]
    }
    pub fn whole_flask(&self) -> &Region {
        &self.domains[3]
    }

    /// A loop whose lowest point is at or above this height is contained in
    /// the whole cylinder exactly when it is contained in the whole flask.
    pub fn lower_cut(&self) -> f64 {
        self.lower_cut
    }
}

/// Contribution type of a loop and its weight in the interaction energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoopClass {
    /// Inside the whole flask only.
    Plus,
    /// Inside the whole cylinder only.
    Minus,
    Null,
}

impl LoopClass {
    pub fn weight(self) -> i32 {
        match self {
            LoopClass::Plus => 1,
            LoopClass::Minus => -1,
            LoopClass::Null => 0,
        }
    }

    pub fn from_weight(w: i32) -> Self {
        match w {
            1 => LoopClass::Plus,
            -1 => LoopClass::Minus,
            0 => LoopClass::Null,
            _ => panic!("loop weight {w} outside {{-1, 0, 1}}"),
        }
    }
}

/// Discretized containment: every sample point must lie in `d`.
pub fn loop_in_domain(points: &[Vec3], d: &Region) -> bool {
    debug_assert!(!points.is_empty());
    // Visiting far-apart points first finds escapes sooner.
    coarse_to_fine(points.len()).all(|i| d.contains(points[i]))
}

/// Containment bits `b_k` for the four domains.
pub fn containment_bits(points: &[Vec3], ds: &DomainSet) -> [bool; 4] {
    let bits = [
        loop_in_domain(points, &ds.domains[0]),
        loop_in_domain(points, &ds.domains[1]),
        loop_in_domain(points, &ds.domains[2]),
        loop_in_domain(points, &ds.domains[3]),
    ];
    assert!(!bits[0] || bits[3], "loop in D0 but not in D3");
    assert!(!bits[1] || bits[2], "loop in D1 but not in D2");
    bits
}

pub fn classify_loop(points: &[Vec3], ds: &DomainSet) -> LoopClass {
    let b = containment_bits(points, ds).map(i32::from);
    let w = -b[0] + b[1] - b[2] + b[3];
    let class = LoopClass::from_weight(w);
    match class {
        LoopClass::Plus => assert_eq!(b, [0, 0, 0, 1]),
        LoopClass::Minus => assert_eq!(b, [0, 0, 1, 0]),
        LoopClass::Null => {}
    }
    class
}

// ---------------------------------------------------------------------------
// Heat-kernel (Weyl) coefficients a0 = volume, a1 = -area / 4.

pub fn weyl_a0(d: &Region) -> Result<f64> {
    volume_and_area(d).map(|(v, _)| v)
}

pub fn weyl_a1(d: &Region) -> Result<f64> {
    volume_and_area(d).map(|(_, s)| -s / 4.0)
}

/// Alternating sums `sum_k (-1)^k a_n(D_k)` for n = 0 and 1.
pub fn subtraction_check(ds: &DomainSet) -> Result<(f64, f64)> {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for (k, d) in ds.domains.iter().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s0 += sign * weyl_a0(d)?;
        s1 += sign * weyl_a1(d)?;
    }
    Ok((s0, s1))
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

fn volume_and_area(d: &Region) -> Result<(f64, f64)> {
    match d {
        Region::Ball { radius, .. } => {
            Ok((4.0 / 3.0 * PI * radius.powi(3), 4.0 * PI * radius * radius))
        }
        Region::AxialCylinder {
            radius,
            z_min,
            z_max,
        } => {
            let h = z_max - z_min;
            Ok((
                PI * radius * radius * h,
                2.0 * PI * radius * h + 2.0 * PI * radius * radius,
            ))
        }
        Region::AxisBox { min, max } => {
            let (a, b, c) = (max.x - min.x, max.y - min.y, max.z - min.z);
            Ok((a * b * c, 2.0 * (a * b + b * c + a * c)))
        }
        Region::Union(parts) => match parts.as_slice() {
            [single] => volume_and_area(single),
            [Region::Ball { center, radius }, Region::AxialCylinder {
                radius: r,
                z_min,
                z_max,
            }]
            | [Region::AxialCylinder {
                radius: r,
                z_min,
                z_max,
            }, Region::Ball { center, radius }] => {
                ball_cylinder_union(*center, *radius, *r, *z_min, *z_max)
            }
            _ => Err(Error::UnsupportedRegion(format!(
                "union of {} parts; only a ball joined to a coaxial cylinder is supported",
                parts.len()
            ))),
        },
    }
}

/// Volume and surface area of `Ball(c, R) ∪ AxialCylinder(r, [z1, z2])`
/// with the ball centred on the axis and `r <= R`.
fn ball_cylinder_union(center: Vec3, big_r: f64, r: f64, z1: f64, z2: f64) -> Result<(f64, f64)> {
    if center.x != 0.0 || center.y != 0.0 {
        return Err(Error::UnsupportedRegion(
            "ball centre off the cylinder axis".into(),
        ));
    }
    if r > big_r {
        return Err(Error::UnsupportedRegion(
            "cylinder wider than the ball".into(),
        ));
    }
    let c = center.z;
    // |z - c| <= w is where the ball's cross-section covers the whole disk.
    let w = (big_r * big_r - r * r).sqrt();
    let span = (z1, z2);
    let core = (c - w, c + w);
    let upper = (c + w, c + big_r);
    let lower = (c - big_r, c - w);

    // Integral of pi (R^2 - u^2) over the part of [lo, hi] inside the span.
    let cap_volume = |zone: (f64, f64)| {
        let lo = zone.0.max(span.0);
        let hi = zone.1.min(span.1);
        if hi <= lo {
            return 0.0;
        }
        let f = |z: f64| {
            let u = z - c;
            big_r * big_r * u - u * u * u / 3.0
        };
        PI * (f(hi) - f(lo))
    };
    let v_intersection = PI * r * r * overlap(span, core) + cap_volume(upper) + cap_volume(lower);
    let volume = 4.0 / 3.0 * PI * big_r.powi(3) + PI * r * r * (z2 - z1) - v_intersection;

    let sphere_inside_cyl = 2.0 * PI * big_r * (overlap(span, upper) + overlap(span, lower));
    let lateral_outside_ball = 2.0 * PI * r * ((z2 - z1) - overlap(span, core));
    let end_cap = |z_end: f64| {
        let u = z_end - c;
        if u.abs() >= big_r {
            PI * r * r
        } else {
            let rho_sq = big_r * big_r - u * u;
            PI * (r * r - rho_sq).max(0.0)
        }
    };
    let area = 4.0 * PI * big_r * big_r - sphere_inside_cyl
        + lateral_outside_ball
        + end_cap(z1)
        + end_cap(z2);
    Ok((volume, area))
}
