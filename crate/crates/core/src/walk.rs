//! Simple random walk stepping and exact long jumps.
//!
//! A [`JumpKernel`] of radius `h` is the exit distribution of the simple
//! random walk started at the centre of the discrete ball of radius `h`.
//! When every site of that ball (translated to the walker) is occupied, the
//! walker cannot settle before leaving it, so replacing the whole excursion
//! with one draw from the kernel leaves the law of the first exit from the
//! occupied set unchanged.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{IdlaError, Result};
use crate::lattice::{ball_offsets, canonical, max_norm2, norm2, orbit_size, Site, MAX_DIM};
use crate::rng::{DirectionSampler, RngStream};

/// Default cap on the number of sites a kernel solve may allocate.
pub const DEFAULT_KERNEL_SITE_BUDGET: usize = 20_000_000;

/// Default kernel radii.
pub const DEFAULT_KERNEL_RADII: [u32; 4] = [2, 4, 8, 16];

#[derive(Clone, Debug)]
pub struct WalkState {
    pub position: Site,
    /// Number of moves made (a kernel jump counts as one move).
    pub steps_taken: u64,
    sampler: DirectionSampler,
}

impl WalkState {
    pub fn new(position: Site) -> Self {
        let d = position.dim();
        WalkState {
            position,
            steps_taken: 0,
            sampler: DirectionSampler::new(d),
        }
    }

    /// One nearest-neighbour step, each of the `2d` directions with
    /// probability `1/(2d)`.
    pub fn step(&mut self, rng: &mut RngStream) {
        let dir = self.sampler.next(rng);
        let mut c = std::mem::take(&mut self.position).into_coords();
        c[dir >> 1] += if dir & 1 == 0 { 1 } else { -1 };
        self.position = Site::new(c);
        self.steps_taken += 1;
    }
}

/// Free-function form of [`WalkState::step`].
pub fn step(w: &mut WalkState, rng: &mut RngStream) {
    w.step(rng)
}

/// Exit distribution of the walk from `B_h`, stored per symmetry orbit.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpKernel {
    d: usize,
    h: u32,
    /// Canonical orbit representatives (sorted absolute coordinates).
    orbits: Vec<Vec<i32>>,
    /// Total exit probability of each orbit.
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
    group_order: u64,
}

impl JumpKernel {
    fn from_orbits(d: usize, h: u32, orbits: Vec<Vec<i32>>, probabilities: Vec<f64>) -> Result<Self> {
        if orbits.len() != probabilities.len() || orbits.is_empty() {
            return Err(IdlaError::Contract("kernel orbit/probability tables disagree".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-10 || probabilities.iter().any(|&p| !(p >= 0.0)) {
            return Err(IdlaError::Contract(format!("kernel probabilities sum to {total}")));
        }
        let mut cumulative = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for p in &probabilities {
            acc += p / total;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        let group_order = (1..=d as u64).product::<u64>() << d;
        Ok(JumpKernel {
            d,
            h,
            orbits,
            probabilities,
            cumulative,
            group_order,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> u32 {
        self.h
    }

    pub fn orbits(&self) -> &[Vec<i32>] {
        &self.orbits
    }

    pub fn orbit_probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Expanded support with per-site probabilities, lexicographic order.
    pub fn support(&self) -> Vec<(Site, f64)> {
        let mut out = Vec::new();
        for (canon, &p) in self.orbits.iter().zip(&self.probabilities) {
            let members = crate::lattice::orbit(canon);
            let each = p / members.len() as f64;
            out.extend(members.into_iter().map(|m| (Site::new(m), each)));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Draws an exit offset into `out` (length `d`).
    #[inline]
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [i32]) {
        let u = rng.uniform();
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.orbits.len() - 1);
        let rep = &self.orbits[k];
        // one uniform element of the signed permutation group
        let g = rng.below(self.group_order);
        let mut signs = g & ((1u64 << self.d) - 1);
        let mut lehmer = g >> self.d;
        let mut avail = [0usize; MAX_DIM];
        for (i, a) in avail.iter_mut().enumerate().take(self.d) {
            *a = i;
        }
        let mut n_avail = self.d;
        for slot in out.iter_mut().take(self.d) {
            let pick = (lehmer % n_avail as u64) as usize;
            lehmer /= n_avail as u64;
            let src = avail[pick];
            avail[pick] = avail[n_avail - 1];
            n_avail -= 1;
            let v = rep[src];
            *slot = if signs & 1 == 1 { -v } else { v };
            signs >>= 1;
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Site {
        let mut out = vec![0; self.d];
        self.sample_into(rng, &mut out);
        Site::new(out)
    }

    /// Binary cache layout: `"IDLK"`, version `u16`, `d: u8`, `h: u32`,
    /// orbit count `u32`, orbit table (`d` x `i32` per orbit), probability
    /// table (`f64` per orbit). All integers and floats little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(KERNEL_MAGIC)?;
        w.write_all(&KERNEL_VERSION.to_le_bytes())?;
        w.write_all(&[self.d as u8])?;
        w.write_all(&self.h.to_le_bytes())?;
        w.write_all(&(self.orbits.len() as u32).to_le_bytes())?;
        for o in &self.orbits {
            for c in o {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        for p in &self.probabilities {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let corrupt = |m: &str| IdlaError::CorruptSnapshot(format!("kernel cache: {m}"));
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < 15 || &buf[..4] != KERNEL_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != KERNEL_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let d = buf[6] as usize;
        let h = u32::from_le_bytes(buf[7..11].try_into().unwrap());
        let n = u32::from_le_bytes(buf[11..15].try_into().unwrap()) as usize;
        if !(1..=MAX_DIM).contains(&d) || buf.len() != 15 + n * d * 4 + n * 8 {
            return Err(corrupt("truncated or oversized"));
        }
        let mut pos = 15;
        let mut orbits = Vec::with_capacity(n);
        for _ in 0..n {
            let o: Vec<i32> = (0..d)
                .map(|i| i32::from_le_bytes(buf[pos + 4 * i..pos + 4 * i + 4].try_into().unwrap()))
                .collect();
            pos += 4 * d;
            orbits.push(o);
        }
        let probabilities: Vec<f64> = (0..n)
            .map(|i| f64::from_le_bytes(buf[pos + 8 * i..pos + 8 * i + 8].try_into().unwrap()))
            .collect();
        JumpKernel::from_orbits(d, h, orbits, probabilities).map_err(|e| corrupt(&e.to_string()))
    }
}

const KERNEL_MAGIC: &[u8; 4] = b"IDLK";
const KERNEL_VERSION: u16 = 1;

/// Exact exit distribution of the simple random walk from `B_h`.
///
/// Solves `(I - P) G = delta_0` on the ball by conjugate gradients, where
/// `P` is the walk's transition matrix restricted to the ball; `G(x)` is
/// the expected number of visits to `x`. The exit probability at an
/// exterior site `z` is the sum of `G(x) / 2d` over ball neighbours `x`.
pub fn build_jump_kernel(d: usize, h: u32) -> Result<JumpKernel> {
    build_jump_kernel_with_budget(d, h, DEFAULT_KERNEL_SITE_BUDGET)
}

fn kernel_cells(d: usize, h: u32, site_budget: usize) -> Result<usize> {
    let cells = ((2 * h as usize + 3) as f64).powi(d as i32);
    if cells > site_budget as f64 {
        return Err(IdlaError::Resource(format!(
            "kernel radius {h} in d={d} needs {cells:.3e} cells (budget {site_budget})"
        )));
    }
    Ok(cells as usize)
}

pub fn build_jump_kernel_with_budget(d: usize, h: u32, site_budget: usize) -> Result<JumpKernel> {
    if !(1..=MAX_DIM).contains(&d) {
        return Err(IdlaError::InvalidDimension(d as i64));
    }
    if h < 1 {
        return Err(IdlaError::InvalidParameter("kernel radius must be >= 1".into()));
    }
    let cells = kernel_cells(d, h, site_budget)?;
    let side = 2 * h as usize + 3;
    let n_max = max_norm2(h as f64).unwrap();
    let half = h as i32 + 1;
    let strides: Vec<usize> = (0..d).map(|i| side.pow((d - 1 - i) as u32)).collect();
    let index_of = |c: &[i32]| -> usize {
        c.iter()
            .zip(&strides)
            .map(|(&v, &s)| (v + half) as usize * s)
            .sum()
    };

    // interior numbering in lexicographic order
    let interior = ball_offsets(d, h as f64);
    let mut slot = vec![u32::MAX; cells];
    for (i, x) in interior.iter().enumerate() {
        slot[index_of(x)] = i as u32;
    }
    let n = interior.len();
    let mut nbr = vec![u32::MAX; n * 2 * d];
    for (i, x) in interior.iter().enumerate() {
        let base = index_of(x);
        for axis in 0..d {
            for (k, delta) in [(0usize, strides[axis] as isize), (1, -(strides[axis] as isize))] {
                nbr[i * 2 * d + 2 * axis + k] = slot[(base as isize + delta) as usize];
            }
        }
    }
    let inv = 1.0 / (2 * d) as f64;
    let apply = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut s = 0.0;
            for &j in &nbr[i * 2 * d..(i + 1) * 2 * d] {
                if j != u32::MAX {
                    s += v[j as usize];
                }
            }
            out[i] = v[i] - inv * s;
        }
    };

    let origin = slot[index_of(&vec![0; d])] as usize;
    let mut rhs = vec![0.0; n];
    rhs[origin] = 1.0;
    let green = conjugate_gradient(n, &apply, &rhs, 1e-14, 20 * n + 100)?;

    let mut by_orbit: BTreeMap<Vec<i32>, f64> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    let mut z = vec![0i32; d];
    for (i, x) in interior.iter().enumerate() {
        for axis in 0..d {
            for sgn in [1, -1] {
                z.copy_from_slice(x);
                z[axis] += sgn;
                if norm2(&z) > n_max {
                    let p = green[i] * inv;
                    *by_orbit.entry(canonical(&z)).or_insert(0.0) += p;
                    seen.insert(z.clone());
                }
            }
        }
    }
    debug_assert_eq!(
        seen.len() as u64,
        by_orbit.keys().map(|k| orbit_size(k)).sum::<u64>()
    );
    let (orbits, probabilities): (Vec<_>, Vec<_>) = by_orbit.into_iter().unzip();
    JumpKernel::from_orbits(d, h, orbits, probabilities)
}

/// Conjugate gradients for a symmetric positive definite operator; stops
/// when the max-norm of the residual drops below `tol`.
pub(crate) fn conjugate_gradient(
    n: usize,
    apply: &dyn Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for it in 0..max_iter {
        let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rmax < tol {
            // confirm against the true residual, not the recurrence
            apply(&x, &mut ap);
            let true_max = ap
                .iter()
                .zip(rhs)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if true_max < tol * 10.0 {
                return Ok(x);
            }
            for i in 0..n {
                r[i] = rhs[i] - ap[i];
            }
            p.copy_from_slice(&r);
            rr = r.iter().map(|v| v * v).sum();
            if it + 1 == max_iter {
                break;
            }
            continue;
        }
        apply(&p, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(IdlaError::NonConvergence {
        iterations: max_iter,
        residual: r.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    })
}

/// Kernels of increasing radius, with their ball offsets for brute-force
/// occupancy checks.
#[derive(Clone, Debug)]
pub struct KernelSet {
    kernels: Vec<JumpKernel>,
    balls: Vec<Vec<Vec<i32>>>,
}

impl KernelSet {
    pub fn build(d: usize, radii: &[u32]) -> Result<Self> {
        for &h in radii {
            kernel_cells(d, h, DEFAULT_KERNEL_SITE_BUDGET)?;
        }
        let kernels = radii
            .iter()
            .map(|&h| build_jump_kernel(d, h))
            .collect::<Result<Vec<_>>>()?;
        Self::from_kernels(kernels)
    }

    /// Powers of two `2, 4, ...` up to `cap`.
    pub fn powers_of_two(d: usize, cap: u32) -> Result<Self> {
        let radii: Vec<u32> = (1..32).map(|k| 1u32 << k).take_while(|&h| h <= cap).collect();
        Self::build(d, &radii)
    }

    pub fn from_kernels(mut kernels: Vec<JumpKernel>) -> Result<Self> {
        kernels.sort_by_key(|k| k.radius());
        kernels.dedup_by_key(|k| k.radius());
        if kernels.windows(2).any(|w| w[0].dim() != w[1].dim()) {
            return Err(IdlaError::Contract("kernels of mixed dimension".into()));
        }
        let balls = kernels
            .iter()
            .map(|k| ball_offsets(k.dim(), k.radius() as f64))
            .collect();
        Ok(KernelSet { kernels, balls })
    }

    pub fn dim(&self) -> Option<usize> {
        self.kernels.first().map(|k| k.dim())
    }

    /// Kernels in ascending radius.
    pub fn kernels(&self) -> &[JumpKernel] {
        &self.kernels
    }

    pub fn radii(&self) -> Vec<u32> {
        self.kernels.iter().map(|k| k.radius()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub(crate) fn ball(&self, i: usize) -> &[Vec<i32>] {
        &self.balls[i]
    }
}

/// Membership oracle for the set a walker moves through freely.
pub trait Occupancy {
    fn is_occupied(&self, x: &[i32]) -> bool;

    /// Index into `kernels` of a kernel whose ball around `x` is certainly
    /// fully occupied, preferring the largest. The default checks every
    /// ball site; implementors may answer from cheaper bounds as long as
    /// the answer depends only on `x` and the occupied set.
    fn certified_kernel(&self, x: &[i32], kernels: &KernelSet) -> Option<usize> {
        let mut y = [0i32; MAX_DIM];
        let d = x.len();
        (0..kernels.kernels.len()).rev().find(|&i| {
            kernels.ball(i).iter().all(|off| {
                for j in 0..d {
                    y[j] = x[j] + off[j];
                }
                self.is_occupied(&y[..d])
            })
        })
    }
}

impl<F: Fn(&[i32]) -> bool> Occupancy for F {
    fn is_occupied(&self, x: &[i32]) -> bool {
        self(x)
    }
}

/// One move of a walker through an occupied set: a kernel jump when the
/// occupancy oracle certifies a full ball around the walker, otherwise a
/// plain step. Returns the radius used for a jump.
pub fn accelerated_step(
    w: &mut WalkState,
    occupied: &(impl Occupancy + ?Sized),
    kernels: &KernelSet,
    rng: &mut RngStream,
) -> Option<u32> {
    match occupied.certified_kernel(w.position.coords(), kernels) {
        Some(i) => {
            let k = &kernels.kernels[i];
            let mut off = [0i32; MAX_DIM];
            let d = w.position.dim();
            k.sample_into(rng, &mut off[..d]);
            w.position = w.position.offset(&off[..d]);
            w.steps_taken += 1;
            Some(k.radius())
        }
        None => {
            w.step(rng);
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_one_kernel_by_hand() {
        // From 0 the walk moves to some e_i, then returns (1/6) or exits (5/6).
        // G(0) = 6/5, G(e_i) = 1/5; exit at 2e_i has 1/30, at e_i +- e_j 1/15.
        let k = build_jump_kernel(3, 1).unwrap();
        assert_eq!(k.orbits(), &[vec![0, 0, 2], vec![0, 1, 1]]);
        assert!((k.orbit_probabilities()[0] - 6.0 / 30.0).abs() < 1e-13);
        assert!((k.orbit_probabilities()[1] - 12.0 / 15.0).abs() < 1e-13);
    }

    #[test]
    fn support_lies_just_outside() {
        for h in [2, 3, 5] {
            let k = build_jump_kernel(3, h).unwrap();
            let n_max = max_norm2(h as f64).unwrap();
            let support = k.support();
            let total: f64 = support.iter().map(|s| s.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (z, _) in &support {
                assert!(z.norm2() > n_max);
                assert!(z.neighbors().any(|n| n.norm2() <= n_max));
            }
        }
    }

    #[test]
    fn samples_stay_on_support() {
        let k = build_jump_kernel(3, 4).unwrap();
        let support: std::collections::HashSet<Site> = k.support().into_iter().map(|s| s.0).collect();
        let mut rng = RngStream::new(1, 1);
        for _ in 0..10_000 {
            assert!(support.contains(&k.sample(&mut rng)));
        }
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(
            build_jump_kernel_with_budget(3, 64, 1000),
            Err(IdlaError::Resource(_))
        ));
        assert!(build_jump_kernel(3, 0).is_err());
    }

    #[test]
    fn cache_round_trip_and_truncation() {
        let k = build_jump_kernel(4, 2).unwrap();
        let mut buf = Vec::new();
        k.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"IDLK");
        let back = JumpKernel::read_from(&buf[..]).unwrap();
        assert_eq!(back, k);
        assert!(JumpKernel::read_from(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn plain_step_properties() {
        let mut rng = RngStream::new(11, 0);
        let mut w = WalkState::new(Site::origin(3));
        let mut counts = [0u64; 6];
        let n = 1_000_000;
        for _ in 0..n {
            let before = w.position.clone();
            let parity = before.coords().iter().sum::<i32>().rem_euclid(2);
            w.step(&mut rng);
            let delta = w.position.sub(&before);
            let axis = delta.coords().iter().position(|&c| c != 0).unwrap();
            counts[2 * axis + (delta.coords()[axis] < 0) as usize] += 1;
            assert_eq!(w.position.coords().iter().sum::<i32>().rem_euclid(2), 1 - parity);
        }
        assert_eq!(w.steps_taken, n);
        let p = 1.0 / 6.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn seeded_paths_repeat() {
        let run = || {
            let mut rng = RngStream::new(77, 3);
            let mut w = WalkState::new(Site::origin(3));
            (0..1000)
                .map(|_| {
                    w.step(&mut rng);
                    w.position.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_occupancy_is_plain_step() {
        let kernels = KernelSet::build(3, &[2]).unwrap();
        let nothing = |_: &[i32]| false;
        let mut a = WalkState::new(Site::origin(3));
        let mut b = WalkState::new(Site::origin(3));
        let mut ra = RngStream::new(5, 5);
        let mut rb = RngStream::new(5, 5);
        for _ in 0..500 {
            assert_eq!(accelerated_step(&mut a, &nothing, &kernels, &mut ra), None);
            b.step(&mut rb);
            assert_eq!(a.position, b.position);
        }
    }

    #[test]
    fn full_ball_jumps_to_exterior() {
        let kernels = KernelSet::build(3, &[2, 8]).unwrap();
        let center = [4, -3, 7];
        let occupied = move |x: &[i32]| {
            let y: Vec<i32> = x.iter().zip(center).map(|(a, b)| a - b).collect();
            norm2(&y) <= 64
        };
        let mut rng = RngStream::new(9, 0);
        for _ in 0..100 {
            let mut w = WalkState::new(Site::new(center.to_vec()));
            assert_eq!(accelerated_step(&mut w, &occupied, &kernels, &mut rng), Some(8));
            let off: Vec<i32> = w.position.coords().iter().zip(center).map(|(a, b)| a - b).collect();
            assert!(norm2(&off) > 64);
        }
    }
}
