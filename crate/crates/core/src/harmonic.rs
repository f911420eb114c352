//! The hitting probability `P(x)`: the chance that simple random walk from
//! `x` reaches `y` before leaving `B_{s+k}`, `s = |y|`, and audits of the
//! bounds it satisfies, reported as empirical constants.

use std::io::Write;

use serde::Serialize;

use crate::engine::{StoppedDomain, INTERIOR, MARKED, OUTER};
use crate::error::{IdlaError, Result};
use crate::field::{write_field_csv, LatticeFunction};
use crate::lattice::Site;
use crate::sandpile::{divisible_sandpile, mean_value_residual, MeanValueResidual};

pub const HARMONIC_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 500_000;
const CHECK_EVERY: usize = 20;

#[derive(Clone, Debug)]
pub struct HarmonicField {
    domain: StoppedDomain,
    values: Vec<f64>,
    residual: f64,
    sweeps: usize,
}

/// Dirichlet solve with `P(y) = 1` and `P = 0` on the outer boundary.
pub fn solve_p(y: &Site, k: u32) -> Result<HarmonicField> {
    solve_p_with_tolerance(y, k, HARMONIC_TOLERANCE)
}

pub fn solve_p_with_tolerance(y: &Site, k: u32, tol: f64) -> Result<HarmonicField> {
    let d = y.dim();
    if d < 3 {
        return Err(IdlaError::InvalidDimension(d as i64));
    }
    let domain = StoppedDomain::new(d, y.clone(), k)?;
    let mut values = vec![0.0; domain.cells()];
    let mut colours: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, x) in domain.cells_with_sites() {
        match domain.class_at(i) {
            INTERIOR => {
                let parity = x.iter().map(|c| c.rem_euclid(2)).sum::<i32>() & 1;
                colours[parity as usize].push(i);
            }
            MARKED => values[i] = 1.0,
            _ => {}
        }
    }
    // Jacobi spectral radius of a ball of radius rho is about 1 - (pi/rho)^2 / 2d
    let rho = domain.radius() + 1.0;
    let jacobi = 1.0 - (std::f64::consts::PI / rho).powi(2) / (2 * d) as f64;
    let w = 2.0 / (1.0 + (1.0 - jacobi * jacobi).sqrt());
    let strides = domain.strides().to_vec();
    let inv = 1.0 / (2 * d) as f64;
    let avg = |values: &[f64], i: usize| -> f64 {
        let mut s = 0.0;
        for &st in &strides {
            s += values[i + st] + values[i - st];
        }
        s * inv
    };
    let mut sweeps = 0;
    loop {
        for _ in 0..CHECK_EVERY {
            for colour in &colours {
                for &i in colour {
                    let target = avg(&values, i);
                    values[i] += w * (target - values[i]);
                }
            }
        }
        sweeps += CHECK_EVERY;
        let residual = colours
            .iter()
            .flatten()
            .map(|&i| (values[i] - avg(&values, i)).abs())
            .fold(0.0, f64::max);
        if residual < tol {
            return Ok(HarmonicField {
                domain,
                values,
                residual,
                sweeps,
            });
        }
        if sweeps >= MAX_SWEEPS || !residual.is_finite() {
            return Err(IdlaError::NonConvergence {
                iterations: sweeps,
                residual,
            });
        }
    }
}

impl HarmonicField {
    pub fn domain(&self) -> &StoppedDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn y(&self) -> &Site {
        self.domain.y()
    }

    pub fn s(&self) -> f64 {
        self.domain.s()
    }

    pub fn k(&self) -> u32 {
        self.domain.k()
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// `P(x)` on the interior, at `y`, and on the outer boundary.
    #[inline]
    pub fn get(&self, x: &[i32]) -> Option<f64> {
        let i = self.domain.index(x)?;
        match self.domain.class_at(i) {
            INTERIOR | MARKED | OUTER => Some(self.values[i]),
            _ => None,
        }
    }

    pub fn p0(&self) -> f64 {
        self.values[self.domain.index(&vec![0; self.dim()]).unwrap()]
    }

    /// Lattice sites of `B_{s+k}` (the interior and `y`) with their values.
    pub fn ball_values(&self) -> Vec<(Site, f64)> {
        self.domain
            .cells_with_sites()
            .filter(|(i, _)| matches!(self.domain.class_at(*i), INTERIOR | MARKED))
            .map(|(i, x)| (Site::new(x), self.values[i]))
            .collect()
    }

    /// CSV of `P` on the interior, `y` and the outer boundary.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let rows = self
            .domain
            .cells_with_sites()
            .filter(|(i, _)| matches!(self.domain.class_at(*i), INTERIOR | MARKED | OUTER))
            .map(|(i, x)| (Site::new(x), self.values[i]));
        write_field_csv(self.dim(), rows, w)
    }
}

impl LatticeFunction for HarmonicField {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn value(&self, x: &[i32]) -> Result<f64> {
        self.get(x).ok_or_else(|| IdlaError::OutsideDomain(x.to_vec()))
    }
}

/// Smallest constants for which each upper bound holds on the solved field.
#[derive(Clone, Debug, Serialize)]
pub struct UpperConstants {
    /// `P(x) <= C / (1 + |x-y|^{d-2})`.
    pub c_a: f64,
    /// `P(x) <= C k (s+k+1-|x|) / |x-y|^d` over `|x-y| >= k/2`.
    pub c_b: f64,
    /// The same over `|x-y| >= 2k`.
    pub c_b_far: f64,
    /// `max over B_r of P <= C k / (s-r-k)^{d-1}` for `r < s-2k`; absent
    /// when `s <= 2k`.
    pub c_c: Option<f64>,
}

pub fn audit_upper(hf: &HarmonicField) -> UpperConstants {
    let d = hf.dim() as i32;
    let s = hf.s();
    let k = hf.k() as f64;
    let y = hf.y().coords().to_vec();
    let dist = |x: &Site| -> f64 {
        x.coords()
            .iter()
            .zip(&y)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut c_a = 0.0f64;
    let mut c_b = 0.0f64;
    let mut c_b_far = 0.0f64;
    let mut by_norm: Vec<(i64, f64)> = Vec::new();
    for (x, p) in hf.ball_values() {
        by_norm.push((x.norm2(), p));
        if x.coords() == y.as_slice() {
            continue;
        }
        let r = dist(&x);
        c_a = c_a.max(p * (1.0 + r.powi(d - 2)));
        let b = p * r.powi(d) / (k * (s + k + 1.0 - x.norm()));
        if r >= k / 2.0 {
            c_b = c_b.max(b);
        }
        if r >= 2.0 * k {
            c_b_far = c_b_far.max(b);
        }
    }
    by_norm.sort_by_key(|a| a.0);
    // the ratio is largest at a radius where the ball just gained a site
    let mut c_c: Option<f64> = None;
    let mut running = 0.0f64;
    let mut i = 0;
    while i < by_norm.len() {
        let n = by_norm[i].0;
        while i < by_norm.len() && by_norm[i].0 == n {
            running = running.max(by_norm[i].1);
            i += 1;
        }
        let r = (n as f64).sqrt();
        if r < s - 2.0 * k {
            let v = running * (s - r - k).powi(d - 1) / k;
            c_c = Some(c_c.map_or(v, |c| c.max(v)));
        }
    }
    UpperConstants { c_a, c_b, c_b_far, c_c }
}

/// Largest constants for which each lower bound holds.
#[derive(Clone, Debug, Serialize)]
pub struct LowerConstants {
    /// `P(0) >= c k / s^{d-1}`.
    pub c_a: f64,
    /// `min over B(z, m) of P >= c / m^{d-1}` with `z = (1 - 2m/s) y`.
    pub c_b: Option<f64>,
    pub m: Option<u32>,
}

pub fn audit_lower(hf: &HarmonicField, m: Option<u32>) -> Result<LowerConstants> {
    let d = hf.dim() as i32;
    let s = hf.s();
    let c_a = hf.p0() * s.powi(d - 1) / hf.k() as f64;
    let c_b = match m {
        None => None,
        Some(m) => {
            if hf.k() != 1 {
                return Err(IdlaError::Contract(format!(
                    "the ball bound needs k = 1, not {}",
                    hf.k()
                )));
            }
            if m < 1 || 4.0 * m as f64 >= s {
                return Err(IdlaError::Contract(format!("need 1 <= m and 4m < s, got m = {m}, s = {s}")));
            }
            let mf = m as f64;
            let z: Vec<f64> = hf.y().coords().iter().map(|&c| (1.0 - 2.0 * mf / s) * c as f64).collect();
            let mut worst = f64::INFINITY;
            for (x, p) in hf.ball_values() {
                let r2: f64 = x.coords().iter().zip(&z).map(|(&a, b)| (a as f64 - b).powi(2)).sum();
                if r2 <= mf * mf + 1e-9 {
                    worst = worst.min(p);
                }
            }
            Some(worst * mf.powi(d - 1))
        }
    };
    Ok(LowerConstants { c_a, c_b, m })
}

/// Normalized shell and ball sums of `P`.
#[derive(Clone, Debug, Serialize)]
pub struct ShellSums {
    /// Max over `r <= s+k` of the sum over `r < |x| <= r+1`, divided by `k`.
    pub shell: f64,
    /// Max over `r <= s` of `|sum over B_r of (P - P(0))|`, divided by `k`.
    pub centered_ball: f64,
    /// `|sum over B_{s+k} of (P - P(0))|`, divided by `k^2`.
    pub full_ball: f64,
    /// Radius used for the sandpile-weighted sum.
    pub sandpile_radius: f64,
    /// `sum w_r (P - P(0))`, zero up to the reported bound.
    pub sandpile_weighted: MeanValueResidual,
}

pub fn shell_sums(hf: &HarmonicField) -> Result<ShellSums> {
    let s = hf.s();
    let k = hf.k() as f64;
    let p0 = hf.p0();
    let mut by_norm: Vec<(i64, f64)> = hf.ball_values().into_iter().map(|(x, p)| (x.norm2(), p)).collect();
    by_norm.sort_by_key(|a| a.0);
    // distinct norms with prefix sums of P and of P - P(0)
    let mut norms: Vec<f64> = Vec::new();
    let mut pre_p = vec![0.0];
    let mut pre_c = vec![0.0];
    for (n, p) in by_norm {
        if norms.last() != Some(&(n as f64).sqrt()) {
            norms.push((n as f64).sqrt());
            pre_p.push(*pre_p.last().unwrap());
            pre_c.push(*pre_c.last().unwrap());
        }
        *pre_p.last_mut().unwrap() += p;
        *pre_c.last_mut().unwrap() += p - p0;
    }
    // number of distinct norms <= r
    let upto = |r: f64| norms.partition_point(|&v| v <= r + 1e-12);
    let top = s + k;
    let mut shell = 0.0f64;
    let mut candidates = vec![0.0];
    for &v in &norms {
        candidates.push(v);
        candidates.push(v - 1.0);
    }
    for r in candidates {
        if (0.0..=top).contains(&r) {
            let sum = pre_p[upto(r + 1.0)] - pre_p[upto(r)];
            shell = shell.max(sum);
        }
    }
    let mut centered_ball = 0.0f64;
    for (j, &v) in norms.iter().enumerate() {
        if v <= s {
            centered_ball = centered_ball.max(pre_c[j + 1].abs());
        }
    }
    let full_ball = pre_c.last().unwrap().abs();
    let sandpile_radius = s / 2.0;
    let sw = divisible_sandpile(hf.dim(), sandpile_radius)?;
    let sandpile_weighted = mean_value_residual(&sw, hf)?;
    Ok(ShellSums {
        shell: shell / k,
        centered_ball: centered_ball / k,
        full_ball: full_ball / (k * k),
        sandpile_radius,
        sandpile_weighted,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub d: usize,
    pub s: f64,
    pub k: u32,
    pub y: Vec<i32>,
    pub p0: f64,
    pub residual: f64,
    pub upper: UpperConstants,
    pub lower: LowerConstants,
    pub shells: ShellSums,
}

/// Every audit of one solved field. The ball lower bound is included when
/// `m` is given.
pub fn audit(hf: &HarmonicField, m: Option<u32>) -> Result<AuditReport> {
    Ok(AuditReport {
        d: hf.dim(),
        s: hf.s(),
        k: hf.k(),
        y: hf.y().coords().to_vec(),
        p0: hf.p0(),
        residual: hf.residual(),
        upper: audit_upper(hf),
        lower: audit_lower(hf, m)?,
        shells: shell_sums(hf)?,
    })
}
