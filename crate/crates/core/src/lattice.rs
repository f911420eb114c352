//! Geometry of the integer lattice: sites, Euclidean balls, the unit-ball
//! volume and the hyperoctahedral symmetry group.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{IdlaError, Result};

/// Slack added to `r^2` in ball membership tests.
pub const BALL_TIE_EPS: f64 = 1e-12;

/// Largest dimension supported by the growth engines.
pub const MAX_DIM: usize = 8;

/// A point of `Z^d`.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(Vec<i32>);

impl Site {
    pub fn new(coords: Vec<i32>) -> Self {
        Site(coords)
    }

    pub fn origin(d: usize) -> Self {
        Site(vec![0; d])
    }

    /// `scale * e_axis`.
    pub fn axis(d: usize, axis: usize, scale: i32) -> Self {
        let mut c = vec![0; d];
        c[axis] = scale;
        Site(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i32] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<i32> {
        self.0
    }

    pub fn norm2(&self) -> i64 {
        norm2(&self.0)
    }

    pub fn norm(&self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn offset(&self, delta: &[i32]) -> Site {
        Site(self.0.iter().zip(delta).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Site) -> Site {
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// The `2d` nearest neighbours, ordered `+e_0, -e_0, +e_1, ...`.
    pub fn neighbors(&self) -> impl Iterator<Item = Site> + '_ {
        (0..2 * self.dim()).map(move |dir| {
            let mut c = self.0.clone();
            c[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
            Site(c)
        })
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<i32>> for Site {
    fn from(v: Vec<i32>) -> Self {
        Site(v)
    }
}

pub fn norm2(coords: &[i32]) -> i64 {
    coords.iter().map(|&c| (c as i64) * (c as i64)).sum()
}

/// Volume of the unit ball in `R^d`, `pi^(d/2) / Gamma(d/2 + 1)`.
pub fn omega(d: i64) -> Result<f64> {
    if d <= 0 {
        return Err(IdlaError::InvalidDimension(d));
    }
    // omega_d = 2 pi / d * omega_{d-2}, seeded by omega_0 = 1 and omega_1 = 2.
    let mut w = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        w *= 2.0 * PI / k as f64;
        k += 2;
    }
    Ok(w)
}

/// Fixed dimension together with its unit-ball volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    d: usize,
    omega_d: f64,
}

impl LatticeGeometry {
    pub fn new(d: usize) -> Result<Self> {
        if d < 3 {
            return Err(IdlaError::InvalidDimension(d as i64));
        }
        Ok(LatticeGeometry {
            d,
            omega_d: omega(d as i64)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn omega(&self) -> f64 {
        self.omega_d
    }

    /// Radius of the Euclidean ball of volume `t`.
    pub fn radius_for_volume(&self, t: f64) -> f64 {
        (t.max(0.0) / self.omega_d).powf(1.0 / self.d as f64)
    }

    /// Volume `omega_d * r^d` of the ball of radius `r` (zero for `r <= 0`).
    pub fn volume(&self, r: f64) -> f64 {
        if r <= 0.0 {
            0.0
        } else {
            self.omega_d * r.powi(self.d as i32)
        }
    }

    /// `|x| - (t / omega_d)^(1/d)`: how far `x` lies beyond the sphere that
    /// `t` particles would fill.
    pub fn radial_deviation(&self, x: &Site, t: f64) -> f64 {
        x.norm() - self.radius_for_volume(t)
    }
}

/// Closed Euclidean ball around a lattice site.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Site,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Site, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn contains(&self, x: &Site) -> bool {
        in_ball(x.sub(&self.center).norm2(), self.radius)
    }

    pub fn sites(&self) -> Vec<Site> {
        discrete_ball(&self.center, self.radius)
    }
}

/// Membership of a point with squared norm `n2` in the closed ball of radius `r`.
#[inline]
pub fn in_ball(n2: i64, r: f64) -> bool {
    r >= 0.0 && (n2 as f64) <= r * r + BALL_TIE_EPS
}

/// Largest squared norm admitted by [`in_ball`] at radius `r`, or `None` if
/// the ball is empty.
pub fn max_norm2(r: f64) -> Option<i64> {
    if !(r >= 0.0) || !r.is_finite() {
        return None;
    }
    let mut n = (r * r).floor() as i64;
    while in_ball(n + 1, r) {
        n += 1;
    }
    while n >= 0 && !in_ball(n, r) {
        n -= 1;
    }
    (n >= 0).then_some(n)
}

/// Lattice points within distance `r` of `center`, in lexicographic order.
pub fn discrete_ball(center: &Site, r: f64) -> Vec<Site> {
    ball_offsets(center.dim(), r)
        .into_iter()
        .map(|off| center.offset(&off))
        .collect()
}

/// Offsets `x` with `|x| <= r`, lexicographically ordered.
pub fn ball_offsets(d: usize, r: f64) -> Vec<Vec<i32>> {
    let Some(n_max) = max_norm2(r) else {
        return Vec::new();
    };
    let h = (n_max as f64).sqrt().floor() as i32 + 1;
    let mut out = Vec::new();
    let mut cur = vec![-h; d];
    loop {
        if norm2(&cur) <= n_max {
            out.push(cur.clone());
        }
        // odometer increment, last coordinate fastest
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < h {
                cur[i] += 1;
                break;
            }
            cur[i] = -h;
        }
    }
}

/// `r_d(n)`: number of lattice points with `|x|^2 = n`, for `n = 0..=n_max`.
pub fn shell_sizes(d: usize, n_max: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_max + 1];
    counts[0] = 1;
    for _ in 0..d {
        let mut next = vec![0u64; n_max + 1];
        for (n, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let mut a = 0usize;
            while n + a * a <= n_max {
                let mult = if a == 0 { 1 } else { 2 };
                next[n + a * a] += c * mult;
                a += 1;
            }
        }
        counts = next;
    }
    counts
}

/// Canonical representative of the orbit of `x` under coordinate
/// permutations and sign flips: absolute values sorted ascending.
pub fn canonical(x: &[i32]) -> Vec<i32> {
    let mut c: Vec<i32> = x.iter().map(|v| v.abs()).collect();
    c.sort_unstable();
    c
}

/// Number of lattice points in the orbit of a canonical representative.
pub fn orbit_size(canon: &[i32]) -> u64 {
    let d = canon.len();
    let nonzero = canon.iter().filter(|&&c| c != 0).count();
    let mut size = factorial(d) << nonzero;
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && canon[j] == canon[i] {
            j += 1;
        }
        size /= factorial(j - i);
        i = j;
    }
    size
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// All points of the orbit of `x`, sorted lexicographically.
pub fn orbit(x: &[i32]) -> Vec<Vec<i32>> {
    let canon = canonical(x);
    let d = canon.len();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut out = Vec::new();
    permutations(&mut perm, 0, &mut |p| {
        for signs in 0u32..(1 << d) {
            let v: Vec<i32> = (0..d)
                .map(|i| {
                    let c = canon[p[i]];
                    if signs >> i & 1 == 1 {
                        -c
                    } else {
                        c
                    }
                })
                .collect();
            out.push(v);
        }
    });
    out.sort_unstable();
    out.dedup();
    out
}

fn permutations(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, f);
        p.swap(k, i);
    }
}
