//! Green function of simple random walk on `Z^d`: `g(x)` is the expected
//! number of visits to `x` by a walk started at the origin.
//!
//! `g` solves `g(x) - mean of g over neighbours = [x = 0]` and decays like
//! `a_d |x|^{2-d}` with `a_d = 2 / ((d-2) omega_d)`. The solver works on the
//! box `[-R, R]^d` with the asymptotic value imposed on the box shell, stored
//! on the nonnegative orthant only; negative coordinates reflect. Lookups go
//! through the sorted absolute coordinates, so the field is exactly
//! invariant under signed permutations.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{IdlaError, Result};
use crate::field::{write_field_csv, GridFunction, LatticeFunction};
use crate::lattice::{canonical, norm2, omega, Site, MAX_DIM};
use crate::snapshot::{lex_next, seal, unseal, Reader};

pub const GREEN_MAGIC: &[u8; 4] = b"IDLG";
const GREEN_VERSION: u16 = 1;

/// Residual target of the default solve.
pub const GREEN_TOLERANCE: f64 = 1e-13;
const MAX_SWEEPS: usize = 200_000;
const CHECK_EVERY: usize = 25;

/// Relative gap below which a level is taken to hit a lattice value.
pub const LEVEL_EPS: f64 = 1e-12;

/// `a_d = 2 / ((d - 2) omega_d)`.
pub fn green_constant(d: usize) -> Result<f64> {
    if d < 3 {
        return Err(IdlaError::InvalidDimension(d as i64));
    }
    Ok(2.0 / ((d as f64 - 2.0) * omega(d as i64)?))
}

#[derive(Clone, Debug)]
pub struct GreenField {
    d: usize,
    radius: i32,
    a_d: f64,
    strides: Vec<usize>,
    /// Values on `[0, R]^d`.
    values: Vec<f64>,
    residual: f64,
}

/// `g` on `[-R, R]^d` to residual `GREEN_TOLERANCE`.
pub fn compute_green(d: usize, radius: i32) -> Result<GreenField> {
    compute_green_with_tolerance(d, radius, GREEN_TOLERANCE)
}

pub fn compute_green_with_tolerance(d: usize, radius: i32, tol: f64) -> Result<GreenField> {
    let a_d = green_constant(d)?;
    if d > MAX_DIM {
        return Err(IdlaError::InvalidDimension(d as i64));
    }
    if radius < 4 {
        return Err(IdlaError::InvalidParameter(format!("box radius {radius} below 4")));
    }
    let side = radius as usize + 1;
    let cells = side
        .checked_pow(d as u32)
        .filter(|&c| c <= 1 << 31)
        .ok_or_else(|| IdlaError::Resource(format!("box radius {radius} too large in d={d}")))?;
    let mut strides = vec![1usize; d];
    for i in (0..d - 1).rev() {
        strides[i] = strides[i + 1] * side;
    }
    let mut values = vec![0.0; cells];
    let mut cur = vec![0i32; d];
    let lo = vec![0i32; d];
    let hi = vec![radius; d];
    for v in values.iter_mut() {
        let n2 = norm2(&cur);
        *v = if n2 == 0 { 1.5 } else { a_d * (n2 as f64).powf((2.0 - d as f64) / 2.0) };
        lex_next(&mut cur, &lo, &hi);
    }
    let mut gf = GreenField {
        d,
        radius,
        a_d,
        strides,
        values,
        residual: f64::INFINITY,
    };
    let h = std::f64::consts::PI / (2.0 * radius as f64);
    let w = 2.0 / (1.0 + h.sin());
    let mut sweeps = 0;
    loop {
        for _ in 0..CHECK_EVERY {
            gf.sweep(0, w);
            gf.sweep(1, w);
        }
        sweeps += CHECK_EVERY;
        gf.residual = gf.max_residual();
        if gf.residual < tol {
            return Ok(gf);
        }
        if sweeps >= MAX_SWEEPS || !gf.residual.is_finite() {
            return Err(IdlaError::NonConvergence {
                iterations: sweeps,
                residual: gf.residual,
            });
        }
    }
}

impl GreenField {
    /// Visits every interior orthant site of one colour, calling `f` with the
    /// site's index and the sum of its neighbours (reflected at zero).
    #[inline]
    fn for_each_interior(&self, colour: Option<usize>, mut f: impl FnMut(usize, f64, bool)) {
        let d = self.d;
        let r = self.radius;
        let last = self.strides[d - 1];
        debug_assert_eq!(last, 1);
        let mut prefix = vec![0i32; d - 1];
        let plo = vec![0i32; d - 1];
        let phi = vec![r - 1; d - 1];
        loop {
            let base: usize = prefix.iter().zip(&self.strides).map(|(&c, &s)| c as usize * s).sum();
            let parity = prefix.iter().map(|&c| c as usize).sum::<usize>() & 1;
            let (start, step) = match colour {
                Some(c) => ((c + parity) & 1, 2),
                None => (0, 1),
            };
            let mut j = start;
            while j < r as usize {
                let idx = base + j;
                let mut sum = 0.0;
                for (i, &c) in prefix.iter().enumerate() {
                    let s = self.strides[i];
                    let up = self.values[idx + s];
                    sum += up + if c == 0 { up } else { self.values[idx - s] };
                }
                let up = self.values[idx + 1];
                sum += up + if j == 0 { up } else { self.values[idx - 1] };
                f(idx, sum, idx == 0);
                j += step;
            }
            if !lex_next(&mut prefix, &plo, &phi) {
                break;
            }
        }
    }

    fn sweep(&mut self, colour: usize, w: f64) {
        let inv = 1.0 / (2 * self.d) as f64;
        let mut updates: Vec<(usize, f64)> = Vec::new();
        // same-colour sites are never neighbours, so deferring writes within a
        // colour changes nothing
        self.for_each_interior(Some(colour), |idx, sum, origin| {
            updates.push((idx, sum * inv + if origin { 1.0 } else { 0.0 }));
        });
        for (idx, target) in updates {
            let v = &mut self.values[idx];
            *v += w * (target - *v);
        }
    }

    fn max_residual(&self) -> f64 {
        let inv = 1.0 / (2 * self.d) as f64;
        let mut worst = 0.0f64;
        self.for_each_interior(None, |idx, sum, origin| {
            let r = self.values[idx] - sum * inv - if origin { 1.0 } else { 0.0 };
            worst = worst.max(r.abs());
        });
        worst
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Half-width `R` of the solved box.
    pub fn radius(&self) -> i32 {
        self.radius
    }

    pub fn a_d(&self) -> f64 {
        self.a_d
    }

    /// Largest residual of the defining equation at the end of the solve.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn g0(&self) -> f64 {
        self.values[0]
    }

    /// `g(x)` for `|x|_inf <= R`.
    pub fn get(&self, x: &[i32]) -> Option<f64> {
        if x.len() != self.d || x.iter().any(|c| c.abs() > self.radius) {
            return None;
        }
        let c = canonical(x);
        Some(self.values[c.iter().zip(&self.strides).map(|(&v, &s)| v as usize * s).sum::<usize>()])
    }

    /// Orthant sites `x >= 0` with their weight `2^(nonzero coords)`, the
    /// number of lattice sites they stand for.
    fn orthant(&self) -> impl Iterator<Item = (Vec<i32>, f64, f64)> + '_ {
        let lo = vec![0i32; self.d];
        let hi = vec![self.radius; self.d];
        let mut cur = lo.clone();
        let mut idx = 0usize;
        let mut done = false;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let x = cur.clone();
            let v = self.values[idx];
            idx += 1;
            done = !lex_next(&mut cur, &lo, &hi);
            let weight = (1u64 << x.iter().filter(|&&c| c != 0).count()) as f64;
            Some((x, v, weight))
        })
    }

    fn annulus_check(&self, r_min: f64, r_max: f64) -> Result<()> {
        if !(r_min <= r_max) || r_min < 0.0 {
            return Err(IdlaError::InvalidRange(format!("[{r_min}, {r_max}]")));
        }
        if r_max > self.radius as f64 / 2.0 {
            return Err(IdlaError::InvalidRange(format!(
                "r_max {r_max} beyond half the box radius {}",
                self.radius
            )));
        }
        Ok(())
    }

    /// Least-squares `a` in `g(x) ~ a |x|^{2-d}` over lattice sites with
    /// `r_min <= |x| <= r_max`.
    pub fn fit_a_d(&self, r_min: f64, r_max: f64) -> Result<f64> {
        self.annulus_check(r_min, r_max)?;
        let (mut num, mut den) = (0.0, 0.0);
        for (x, v, w) in self.orthant() {
            let r = (norm2(&x) as f64).sqrt();
            if r >= r_min && r <= r_max && r > 0.0 {
                let phi = r.powf(2.0 - self.d as f64);
                num += w * v * phi;
                den += w * phi * phi;
            }
        }
        if den == 0.0 {
            return Err(IdlaError::InvalidRange(format!("no lattice site in [{r_min}, {r_max}]")));
        }
        Ok(num / den)
    }

    /// Values of `g` on the lattice cube `[-half, half]^d`.
    pub fn to_grid_function(&self, half: i32) -> Result<GridFunction> {
        if half > self.radius {
            return Err(IdlaError::InvalidRange(format!("half-width {half} beyond {}", self.radius)));
        }
        let mut gfun = GridFunction::cube(self.d, half)?;
        let lo = vec![-half; self.d];
        let hi = vec![half; self.d];
        let mut cur = lo.clone();
        loop {
            gfun.set(&cur, self.get(&cur).unwrap())?;
            if !lex_next(&mut cur, &lo, &hi) {
                break;
            }
        }
        Ok(gfun)
    }

    /// CSV of `g` on the fundamental wedge `0 <= x1 <= .. <= xd <= R`;
    /// every other value follows by symmetry.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let rows = self
            .orthant()
            .filter(|(x, _, _)| x.windows(2).all(|p| p[0] <= p[1]))
            .map(|(x, v, _)| (Site::new(x), v));
        write_field_csv(self.d, rows, w)
    }

    /// A level near `a_d r^{2-d}` whose set `{g > level}` approximates the
    /// ball of radius `r`, moved off any lattice value of `g`.
    pub fn level_for_radius(&self, r: f64) -> f64 {
        let mut level = self.a_d * r.powf(2.0 - self.d as f64);
        while self.values.iter().any(|&v| ((v - level) / level).abs() < 1e3 * LEVEL_EPS) {
            level *= 1.0 + 1e-7;
        }
        level
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.values.len());
        out.extend_from_slice(GREEN_MAGIC);
        out.extend_from_slice(&GREEN_VERSION.to_le_bytes());
        out.push(self.d as u8);
        out.push(0);
        out.extend_from_slice(&(self.radius as u32).to_le_bytes());
        out.extend_from_slice(&self.residual.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        seal(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(unseal(bytes, GREEN_MAGIC)?);
        if r.u16()? != GREEN_VERSION {
            return Err(IdlaError::CorruptSnapshot("unsupported green cache version".into()));
        }
        let d = r.u8()? as usize;
        let _flags = r.u8()?;
        let radius = r.u32()?;
        let residual = r.f64()?;
        if !(3..=MAX_DIM).contains(&d) || !(4..=1 << 20).contains(&radius) {
            return Err(IdlaError::CorruptSnapshot("bad green cache header".into()));
        }
        let side = radius as usize + 1;
        let cells = side
            .checked_pow(d as u32)
            .ok_or_else(|| IdlaError::CorruptSnapshot("green cache too large".into()))?;
        let raw = r.take(cells.checked_mul(8).ok_or_else(|| IdlaError::CorruptSnapshot("overflow".into()))?)?;
        if !r.is_done() {
            return Err(IdlaError::CorruptSnapshot("trailing bytes".into()));
        }
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut strides = vec![1usize; d];
        for i in (0..d - 1).rev() {
            strides[i] = strides[i + 1] * side;
        }
        Ok(GreenField {
            d,
            radius: radius as i32,
            a_d: green_constant(d)?,
            strides,
            values,
            residual,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        GreenField::from_bytes(&std::fs::read(path)?)
    }
}

impl LatticeFunction for GreenField {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[i32]) -> Result<f64> {
        self.get(x).ok_or_else(|| IdlaError::OutsideDomain(x.to_vec()))
    }
}

/// Largest `|g(x) - a_d |x|^{2-d}| |x|^d` over `r_min <= |x| <= r_max`.
pub fn asymptotic_residual(gf: &GreenField, r_min: f64, r_max: f64) -> Result<f64> {
    gf.annulus_check(r_min, r_max)?;
    let d = gf.d as f64;
    let mut worst: Option<f64> = None;
    for (x, v, _) in gf.orthant() {
        let r = (norm2(&x) as f64).sqrt();
        if r >= r_min && r <= r_max && r > 0.0 {
            let e = (v - gf.a_d * r.powf(2.0 - d)).abs() * r.powf(d);
            worst = Some(worst.map_or(e, |w: f64| w.max(e)));
        }
    }
    worst.ok_or_else(|| IdlaError::InvalidRange(format!("no lattice site in [{r_min}, {r_max}]")))
}

/// A directed lattice edge from a site of the level set to one outside it,
/// crossed by the boundary at `inside + fraction (outside - inside)`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryEdge {
    pub inside: Site,
    pub outside: Site,
    pub fraction: f64,
    pub p: f64,
}

impl BoundaryEdge {
    pub fn point(&self) -> Vec<f64> {
        self.inside
            .coords()
            .iter()
            .zip(self.outside.coords())
            .map(|(&a, &b)| a as f64 + self.fraction * (b - a) as f64)
            .collect()
    }

    /// Key shared exactly by the edges of one symmetry orbit: the sorted
    /// absolute coordinates of `inside + outside`.
    pub fn orbit_key(&self) -> Vec<i32> {
        let s: Vec<i32> = self
            .inside
            .coords()
            .iter()
            .zip(self.outside.coords())
            .map(|(a, b)| a + b)
            .collect();
        canonical(&s)
    }
}

/// Exit distribution from `U = {g > alpha}` for Brownian motion on the grid
/// started at the origin.
#[derive(Clone, Debug, Serialize)]
pub struct HarmonicMeasure {
    pub alpha: f64,
    /// Lattice sites of the component of `U` containing the origin.
    pub interior: Vec<Site>,
    pub boundary: Vec<BoundaryEdge>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrbitMass {
    pub key: Vec<i32>,
    pub edges: usize,
    pub p: f64,
}

impl HarmonicMeasure {
    pub fn p(&self) -> Vec<f64> {
        self.boundary.iter().map(|e| e.p).collect()
    }

    pub fn total(&self) -> f64 {
        self.boundary.iter().map(|e| e.p).sum()
    }

    /// Total mass per edge orbit, ordered by key.
    pub fn orbit_masses(&self) -> Vec<OrbitMass> {
        let mut m: BTreeMap<Vec<i32>, (usize, f64)> = BTreeMap::new();
        for e in &self.boundary {
            let entry = m.entry(e.orbit_key()).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += e.p;
        }
        m.into_iter().map(|(key, (edges, p))| OrbitMass { key, edges, p }).collect()
    }
}

/// Boundary edges of the level set with the mass each carries: the drop of
/// `g / 2d` along the edge.
pub fn harmonic_measure_levelset(gf: &GreenField, alpha: f64) -> Result<HarmonicMeasure> {
    let d = gf.d;
    if !(alpha > 0.0) {
        return Err(IdlaError::InvalidLevel(format!("level {alpha} must be positive")));
    }
    if gf.g0() <= alpha {
        return Err(IdlaError::InvalidLevel(format!("level {alpha} is not below g(0)")));
    }
    let hits = |v: f64| ((v - alpha) / alpha).abs() < LEVEL_EPS;
    let origin = Site::origin(d);
    let mut seen = std::collections::HashSet::new();
    seen.insert(origin.clone());
    let mut queue = VecDeque::from([origin]);
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    while let Some(u) = queue.pop_front() {
        if u.coords().iter().any(|c| c.abs() >= gf.radius) {
            return Err(IdlaError::InvalidLevel(format!(
                "level {alpha} reaches the edge of the solved box"
            )));
        }
        let gu = gf.get(u.coords()).unwrap();
        for v in u.neighbors() {
            let gv = gf.get(v.coords()).unwrap();
            if hits(gv) {
                return Err(IdlaError::HypothesisViolation(format!(
                    "level {alpha} equals g at lattice site {v:?}"
                )));
            }
            if gv > alpha {
                if seen.insert(v.clone()) {
                    queue.push_back(v);
                }
            } else {
                boundary.push(BoundaryEdge {
                    inside: u.clone(),
                    outside: v,
                    fraction: (gu - alpha) / (gu - gv),
                    p: (gu - gv) / (2 * d) as f64,
                });
            }
        }
        interior.push(u);
    }
    interior.sort();
    boundary.sort_by(|a, b| (&a.inside, &a.outside).cmp(&(&b.inside, &b.outside)));
    Ok(HarmonicMeasure {
        alpha,
        interior,
        boundary,
    })
}
