//! Divisible sandpile: mass `omega_d r^d` starts at the origin and every site
//! holding more than 1 keeps 1 and splits the excess evenly among its `2d`
//! neighbours. The limit `w_r` averages discrete harmonic functions exactly:
//! `sum w_r (u - u(0)) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{IdlaError, Result};
use crate::field::{GridFunction, LatticeFunction};
use crate::lattice::{in_ball, norm2, omega, Site};
use crate::snapshot::lex_next;

pub const TOPPLE_TOLERANCE: f64 = 1e-12;
/// Sites within this of 1 count as full.
pub const FULL_TOLERANCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepOrder {
    #[default]
    Forward,
    Reverse,
}

#[derive(Clone, Debug)]
pub struct SandpileWeight {
    pub d: usize,
    pub r: f64,
    pub mass: f64,
    /// Final mass, capped at 1.
    pub w: GridFunction,
    /// Total mass emitted by each site.
    pub odometer: GridFunction,
    /// Largest excess over 1 left when toppling stopped.
    pub max_excess: f64,
    /// `r - |x|` for the nearest site that is not full.
    pub c_inner: f64,
    pub sweeps: usize,
}

pub fn divisible_sandpile(d: usize, r: f64) -> Result<SandpileWeight> {
    divisible_sandpile_with(d, r, SweepOrder::Forward, TOPPLE_TOLERANCE)
}

pub fn divisible_sandpile_with(d: usize, r: f64, order: SweepOrder, tol: f64) -> Result<SandpileWeight> {
    if d < 3 {
        return Err(IdlaError::InvalidDimension(d as i64));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(IdlaError::InvalidParameter(format!("radius {r} must be positive")));
    }
    let mass = omega(d as i64)? * r.powi(d as i32);
    let half = r.ceil() as i32 + 2;
    let side = 2 * half as usize + 1;
    let cells = side
        .checked_pow(d as u32)
        .filter(|&c| c <= 1 << 30)
        .ok_or_else(|| IdlaError::Resource(format!("sandpile radius {r} too large")))?;
    let mut strides = vec![1usize; d];
    for i in (0..d - 1).rev() {
        strides[i] = strides[i + 1] * side;
    }
    let center: usize = strides.iter().map(|s| s * half as usize).sum();
    // cells on the box faces never topple; hitting them means the box is too small
    let lo = vec![-half; d];
    let hi = vec![half; d];
    let mut interior = Vec::new();
    let mut cur = lo.clone();
    for idx in 0..cells {
        if cur.iter().all(|c| c.abs() < half) {
            interior.push(idx);
        }
        lex_next(&mut cur, &lo, &hi);
    }
    if order == SweepOrder::Reverse {
        interior.reverse();
    }

    let mut m = vec![0.0f64; cells];
    let mut odo = vec![0.0f64; cells];
    m[center] = mass;
    let share = 1.0 / (2 * d) as f64;
    let mut sweeps = 0;
    let mut max_excess = (mass - 1.0).max(0.0);
    while max_excess >= tol {
        if sweeps >= MAX_SWEEPS {
            return Err(IdlaError::NonConvergence {
                iterations: sweeps,
                residual: max_excess,
            });
        }
        for &idx in &interior {
            let e = m[idx] - 1.0;
            if e > 0.0 {
                m[idx] = 1.0;
                odo[idx] += e;
                let part = e * share;
                for &s in &strides {
                    m[idx + s] += part;
                    m[idx - s] += part;
                }
            }
        }
        sweeps += 1;
        max_excess = interior.iter().map(|&i| m[i] - 1.0).fold(0.0, f64::max);
    }

    let mut w = GridFunction::cube(d, half)?;
    let mut odometer = GridFunction::cube(d, half)?;
    let mut min_unfilled = i64::MAX;
    let mut cur = lo.clone();
    for idx in 0..cells {
        if cur.iter().any(|c| c.abs() == half) && m[idx] > 0.0 {
            return Err(IdlaError::Resource("sandpile reached the edge of its box".into()));
        }
        w.set(&cur, m[idx].min(1.0))?;
        odometer.set(&cur, odo[idx])?;
        if m[idx] < 1.0 - FULL_TOLERANCE {
            min_unfilled = min_unfilled.min(norm2(&cur));
        }
        lex_next(&mut cur, &lo, &hi);
    }
    Ok(SandpileWeight {
        d,
        r,
        mass,
        w,
        odometer,
        max_excess,
        c_inner: r - (min_unfilled as f64).sqrt(),
        sweeps,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanValueResidual {
    /// `sum w (u - u(0))`.
    pub value: f64,
    /// Bound on `|value|` from the toppling remainder and the failure of
    /// `u` to be harmonic where mass was toppled.
    pub bound: f64,
}

/// `sum w (u - u(0))`, which vanishes when `u` is discrete harmonic on the
/// sites that toppled.
pub fn mean_value_residual(sw: &SandpileWeight, u: &impl LatticeFunction) -> Result<MeanValueResidual> {
    if u.dim() != sw.d {
        return Err(IdlaError::Contract("function and sandpile dimensions differ".into()));
    }
    let u0 = u.value(&vec![0; sw.d])?;
    let mut value = 0.0;
    let mut spread = 0.0;
    for (x, w) in sw.w.iter() {
        if w > 0.0 {
            let du = u.value(x.coords())? - u0;
            value += w * du;
            spread += du.abs();
        }
    }
    let mut defect = 0.0;
    for (x, o) in sw.odometer.iter() {
        if o > 0.0 {
            let ux = u.value(x.coords())?;
            let mut avg = 0.0;
            for n in x.neighbors() {
                avg += u.value(n.coords())?;
            }
            avg /= (2 * sw.d) as f64;
            defect += o * (avg - ux).abs();
        }
    }
    Ok(MeanValueResidual {
        value,
        bound: defect + sw.max_excess * spread,
    })
}

impl SandpileWeight {
    pub fn total(&self) -> f64 {
        self.w.sum()
    }

    pub fn get(&self, x: &[i32]) -> f64 {
        self.w.get(x).unwrap_or(0.0)
    }

    /// Sites with positive weight.
    pub fn support(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.w.iter().filter(|(_, v)| *v > 0.0)
    }

    /// `true` when all weight lies in the lattice ball of radius `rho`.
    pub fn supported_in(&self, rho: f64) -> bool {
        self.support().all(|(x, _)| in_ball(x.norm2(), rho))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Everywhere;

    #[test]
    fn below_threshold_no_toppling() {
        let r = 0.5;
        let sw = divisible_sandpile(3, r).unwrap();
        assert_eq!(sw.sweeps, 0);
        assert!((sw.get(&[0, 0, 0]) - sw.mass).abs() < 1e-15);
        assert_eq!(sw.support().count(), 1);
        assert!(divisible_sandpile(3, 0.0).is_err());
        assert!(divisible_sandpile(2, 3.0).is_err());
    }

    #[test]
    fn mass_and_shape() {
        let sw = divisible_sandpile(3, 4.0).unwrap();
        assert!((sw.total() - sw.mass).abs() < 1e-9);
        assert!(sw.max_excess < TOPPLE_TOLERANCE);
        assert!(sw.supported_in(5.5));
        assert!(sw.c_inner <= 2.0 && sw.c_inner > 0.0, "c = {}", sw.c_inner);
        for (_, v) in sw.w.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn linear_and_quadratic_harmonics() {
        let sw = divisible_sandpile(3, 3.0).unwrap();
        let lin = Everywhere { d: 3, f: |x: &[i32]| x[0] as f64 };
        let quad = Everywhere { d: 3, f: |x: &[i32]| (x[0] * x[0] - x[1] * x[1]) as f64 };
        let a = mean_value_residual(&sw, &lin).unwrap();
        assert!(a.value.abs() <= a.bound + 1e-13, "{a:?}");
        let b = mean_value_residual(&sw, &quad).unwrap();
        assert!(b.value.abs() < 1e-8, "{b:?}");
        // |x|^2 is not harmonic: the identity picks up sum of the odometer
        let sq = Everywhere { d: 3, f: |x: &[i32]| norm2(x) as f64 };
        let c = mean_value_residual(&sw, &sq).unwrap();
        assert!(c.value > 1.0);
        let odo: f64 = sw.odometer.iter().map(|(_, o)| o).sum();
        assert!((c.value - odo).abs() < 1e-6 * odo);
    }

    #[test]
    fn orders_agree() {
        let a = divisible_sandpile_with(3, 3.0, SweepOrder::Forward, TOPPLE_TOLERANCE).unwrap();
        let b = divisible_sandpile_with(3, 3.0, SweepOrder::Reverse, TOPPLE_TOLERANCE).unwrap();
        for ((_, x), (_, y)) in a.w.iter().zip(b.w.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
