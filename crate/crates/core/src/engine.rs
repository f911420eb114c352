//! Growth drivers: free internal DLA from the origin, and the stopped
//! variant in which walkers are absorbed at a marked site `y` or on leaving
//! the ball of radius `|y| + k`.

use std::collections::BTreeMap;

use crate::cluster::Cluster;
use crate::error::{IdlaError, Result};
use crate::lattice::{in_ball, norm2, LatticeGeometry, Site, MAX_DIM};
use crate::rng::{DirectionSampler, RngStream};
use crate::snapshot::lex_next;
use crate::walk::KernelSet;

/// Grows an internal DLA cluster of `t` particles from the origin.
pub fn grow(geometry: LatticeGeometry, t: u64, rng: &mut RngStream, accel: Option<&KernelSet>) -> Cluster {
    let mut c = Cluster::new(geometry);
    c.add_particles(t, rng, accel);
    c
}

/// How a walker of the stopped process ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Settled at an unoccupied site of the domain.
    Settled(Site),
    /// Reached the marked site `y`.
    AbsorbedAtY,
    /// Left the ball; the first outside site reached.
    Stopped(Site),
}

/// Sees every lattice step of the active walker.
pub trait StepObserver {
    fn on_launch(&mut self) {}
    fn on_step(&mut self, from: &[i32], to: &[i32]);
    fn on_finish(&mut self, _outcome: &Outcome) {}
}

impl StepObserver for () {
    #[inline]
    fn on_step(&mut self, _: &[i32], _: &[i32]) {}
}

pub(crate) const OUTSIDE: u8 = 0;
pub(crate) const INTERIOR: u8 = 1;
pub(crate) const MARKED: u8 = 2;
pub(crate) const OUTER: u8 = 3;

/// Lattice sites of `B_{s+k}` other than `y`, with `s = |y|`, together with
/// the absorbing sites around them: `y` itself and the sites outside the
/// ball adjacent to it.
#[derive(Clone, Debug)]
pub struct StoppedDomain {
    y: Site,
    k: u32,
    radius: f64,
    half: i32,
    strides: [usize; MAX_DIM],
    class: Vec<u8>,
}

impl StoppedDomain {
    pub fn new(d: usize, y: Site, k: u32) -> Result<Self> {
        if y.dim() != d {
            return Err(IdlaError::InvalidDomain(format!("y = {y:?} is not in Z^{d}")));
        }
        if d > MAX_DIM {
            return Err(IdlaError::InvalidDimension(d as i64));
        }
        if y.is_origin() {
            return Err(IdlaError::InvalidDomain("y must differ from the origin".into()));
        }
        if k < 1 {
            return Err(IdlaError::InvalidDomain("k must be at least 1".into()));
        }
        let radius = y.norm() + k as f64;
        let half = radius.floor() as i32 + 1;
        let side = 2 * half as usize + 1;
        let mut strides = [0usize; MAX_DIM];
        for (i, s) in strides.iter_mut().enumerate().take(d) {
            *s = side.pow((d - 1 - i) as u32);
        }
        let cells = side
            .checked_pow(d as u32)
            .filter(|&c| c <= 1 << 31)
            .ok_or_else(|| IdlaError::Resource(format!("domain of radius {radius} too large")))?;
        let mut class = vec![OUTSIDE; cells];
        let lo = vec![-half; d];
        let hi = vec![half; d];
        let mut cur = lo.clone();
        for c in class.iter_mut() {
            if in_ball(norm2(&cur), radius) {
                *c = INTERIOR;
            }
            lex_next(&mut cur, &lo, &hi);
        }
        let mut dom = StoppedDomain {
            y,
            k,
            radius,
            half,
            strides,
            class,
        };
        let yi = dom.index(dom.y.coords()).unwrap();
        dom.class[yi] = MARKED;
        for cell in 0..cells {
            if dom.class[cell] == INTERIOR {
                for &st in &dom.strides[..d] {
                    for j in [cell + st, cell - st] {
                        if dom.class[j] == OUTSIDE {
                            dom.class[j] = OUTER;
                        }
                    }
                }
            }
        }
        Ok(dom)
    }

    pub fn dim(&self) -> usize {
        self.y.dim()
    }

    pub fn y(&self) -> &Site {
        &self.y
    }

    /// `|y|`.
    pub fn s(&self) -> f64 {
        self.y.norm()
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// `s + k`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Half-width of the enclosing box `[-half, half]^d`.
    pub fn half(&self) -> i32 {
        self.half
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides[..self.dim()]
    }

    pub fn cells(&self) -> usize {
        self.class.len()
    }

    /// Box index of `x`, if inside the box.
    #[inline]
    pub fn index(&self, x: &[i32]) -> Option<usize> {
        if x.iter().any(|c| c.abs() > self.half) {
            return None;
        }
        Some(
            x.iter()
                .enumerate()
                .map(|(i, &c)| (c + self.half) as usize * self.strides[i])
                .sum(),
        )
    }

    #[inline]
    fn class_of(&self, x: &[i32]) -> u8 {
        self.index(x).map_or(OUTSIDE, |i| self.class[i])
    }

    #[inline]
    pub(crate) fn class_at(&self, idx: usize) -> u8 {
        self.class[idx]
    }

    /// `true` for lattice sites of `B_{s+k}` other than `y`.
    pub fn is_interior(&self, x: &[i32]) -> bool {
        self.class_of(x) == INTERIOR
    }

    /// `true` for sites outside the ball adjacent to it.
    pub fn is_outer(&self, x: &[i32]) -> bool {
        self.class_of(x) == OUTER
    }

    /// Box cells in lexicographic order with their sites.
    pub(crate) fn cells_with_sites(&self) -> impl Iterator<Item = (usize, Vec<i32>)> + '_ {
        let d = self.dim();
        let lo = vec![-self.half; d];
        let hi = vec![self.half; d];
        let mut cur = lo.clone();
        (0..self.cells()).map(move |i| {
            let x = cur.clone();
            lex_next(&mut cur, &lo, &hi);
            (i, x)
        })
    }

    /// Interior sites, lexicographic.
    pub fn interior_sites(&self) -> Vec<Site> {
        self.cells_with_sites()
            .filter(|(i, _)| self.class[*i] == INTERIOR)
            .map(|(_, x)| Site::new(x))
            .collect()
    }

    /// Outer absorbing sites, lexicographic.
    pub fn outer_sites(&self) -> Vec<Site> {
        self.cells_with_sites()
            .filter(|(i, _)| self.class[*i] == OUTER)
            .map(|(_, x)| Site::new(x))
            .collect()
    }
}

/// Internal DLA in the domain `B_{s+k} \ {y}`, viewed as a multiset: settled
/// interior sites, plus absorption counts at `y` and on the outer boundary.
#[derive(Clone, Debug)]
pub struct StoppedCluster {
    inner: Cluster,
    boundary: BTreeMap<Site, u64>,
    absorbed_at_y: u64,
    domain: StoppedDomain,
}

impl StoppedCluster {
    pub fn new(geometry: LatticeGeometry, y: Site, k: u32) -> Result<Self> {
        let domain = StoppedDomain::new(geometry.dim(), y, k)?;
        Ok(StoppedCluster {
            inner: Cluster::new(geometry),
            boundary: BTreeMap::new(),
            absorbed_at_y: 0,
            domain,
        })
    }

    pub fn domain(&self) -> &StoppedDomain {
        &self.domain
    }

    pub fn inner(&self) -> &Cluster {
        &self.inner
    }

    pub fn boundary(&self) -> &BTreeMap<Site, u64> {
        &self.boundary
    }

    pub fn absorbed_at_y(&self) -> u64 {
        self.absorbed_at_y
    }

    pub fn y(&self) -> &Site {
        self.domain.y()
    }

    pub fn k(&self) -> u32 {
        self.domain.k()
    }

    /// `s + k`.
    pub fn radius(&self) -> f64 {
        self.domain.radius()
    }

    pub fn boundary_mass(&self) -> u64 {
        self.boundary.values().sum()
    }

    /// Particles accounted for. Walkers run to completion inside
    /// `add_particle`, so this equals the number launched.
    pub fn total_mass(&self) -> u64 {
        self.inner.count() + self.boundary_mass() + self.absorbed_at_y
    }

    pub fn is_interior(&self, x: &[i32]) -> bool {
        self.domain.is_interior(x)
    }

    pub fn is_outer(&self, x: &[i32]) -> bool {
        self.domain.is_outer(x)
    }

    /// Runs one walker from the origin to its end.
    pub fn add_particle(&mut self, rng: &mut RngStream, observer: &mut impl StepObserver) -> Outcome {
        let d = self.inner.dim();
        let mut pos = [0i32; MAX_DIM];
        let mut prev = [0i32; MAX_DIM];
        let mut sampler = DirectionSampler::new(d);
        observer.on_launch();
        let outcome = loop {
            match self.domain.class_of(&pos[..d]) {
                INTERIOR => {
                    if !self.inner.contains(&pos[..d]) {
                        self.inner.settle(&pos[..d]);
                        break Outcome::Settled(Site::new(pos[..d].to_vec()));
                    }
                }
                MARKED => {
                    self.absorbed_at_y += 1;
                    break Outcome::AbsorbedAtY;
                }
                OUTER => {
                    let s = Site::new(pos[..d].to_vec());
                    *self.boundary.entry(s.clone()).or_insert(0) += 1;
                    break Outcome::Stopped(s);
                }
                _ => unreachable!("walker escaped the outer boundary"),
            }
            prev[..d].copy_from_slice(&pos[..d]);
            let dir = sampler.next(rng);
            pos[dir >> 1] += if dir & 1 == 0 { 1 } else { -1 };
            observer.on_step(&prev[..d], &pos[..d]);
        };
        observer.on_finish(&outcome);
        outcome
    }
}

/// Runs `t` walkers of the stopped process around `y` with margin `k`.
pub fn grow_stopped(
    geometry: LatticeGeometry,
    y: Site,
    k: u32,
    t: u64,
    rng: &mut RngStream,
    observer: &mut impl StepObserver,
) -> Result<StoppedCluster> {
    let mut sc = StoppedCluster::new(geometry, y, k)?;
    for _ in 0..t {
        sc.add_particle(rng, observer);
    }
    Ok(sc)
}
