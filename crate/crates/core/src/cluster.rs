//! Occupied set of an internal DLA run with first-occupation times.
//!
//! Sites live in a symmetric box `[-half, half]^d` that grows by half its
//! size whenever the cluster comes within three sites of the edge. The
//! box keeps a membership bitmap for the walk loop and a dense `u32`
//! arrival array; the arrival order is kept separately for scans.
//!
//! The cluster also tracks `inner_n2`, the smallest squared norm of an
//! unoccupied site. Every site of squared norm below it is occupied, which
//! certifies kernel jumps in O(1): the ball of radius `h` around `x` is full
//! whenever `(|x| + h)^2 < inner_n2`.

use crate::error::{IdlaError, Result};
use crate::lattice::{in_ball, norm2, shell_sizes, LatticeGeometry, Site, MAX_DIM};
use crate::rng::{DirectionSampler, RngStream};
use crate::walk::{KernelSet, Occupancy};

const INITIAL_HALF: i32 = 8;
const EDGE_MARGIN: i32 = 3;

#[derive(Clone, Debug)]
pub struct Cluster {
    geometry: LatticeGeometry,
    half: i32,
    side: usize,
    strides: [usize; MAX_DIM],
    bits: Vec<u64>,
    arrival: Vec<u32>,
    order: Vec<i32>,
    count: u64,
    max_abs: i32,
    shell_size: Vec<u64>,
    shell_occ: Vec<u64>,
    inner_n2: i64,
}

impl Cluster {
    pub fn new(geometry: LatticeGeometry) -> Self {
        let d = geometry.dim();
        assert!(d <= MAX_DIM, "dimension above {MAX_DIM}");
        let mut c = Cluster {
            geometry,
            half: 0,
            side: 0,
            strides: [0; MAX_DIM],
            bits: Vec::new(),
            arrival: Vec::new(),
            order: Vec::new(),
            count: 0,
            max_abs: 0,
            shell_size: Vec::new(),
            shell_occ: Vec::new(),
            inner_n2: 0,
        };
        c.allocate(INITIAL_HALF);
        c
    }

    /// Cluster whose `i`-th site arrived at time `i + 1`. Sites must be
    /// distinct; adjacency is not required, so hand-built fixtures work.
    pub fn from_sites(geometry: LatticeGeometry, sites: &[Site]) -> Result<Self> {
        let mut c = Cluster::new(geometry);
        for s in sites {
            if s.dim() != geometry.dim() {
                return Err(IdlaError::Contract(format!("site {s:?} has wrong dimension")));
            }
            if c.contains(s.coords()) {
                return Err(IdlaError::Contract(format!("site {s:?} listed twice")));
            }
            c.settle(s.coords());
        }
        Ok(c)
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    /// Number of particles `t`; equals the number of occupied sites.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Largest absolute coordinate among occupied sites.
    pub fn max_abs_coord(&self) -> i32 {
        self.max_abs
    }

    /// Smallest squared norm of an unoccupied site.
    pub fn inner_norm2(&self) -> i64 {
        self.inner_n2
    }

    #[inline]
    fn index(&self, x: &[i32]) -> usize {
        let mut idx = 0usize;
        for (i, &c) in x.iter().enumerate() {
            idx += (c + self.half) as usize * self.strides[i];
        }
        idx
    }

    #[inline]
    fn in_box(&self, x: &[i32]) -> bool {
        x.iter().all(|c| c.abs() <= self.half)
    }

    #[inline]
    fn bit(&self, idx: usize) -> bool {
        self.bits[idx >> 6] >> (idx & 63) & 1 == 1
    }

    pub fn contains(&self, x: &[i32]) -> bool {
        self.in_box(x) && self.bit(self.index(x))
    }

    /// First-occupation time `T(x)`.
    pub fn arrival(&self, x: &[i32]) -> Option<u64> {
        if !self.in_box(x) {
            return None;
        }
        match self.arrival[self.index(x)] {
            0 => None,
            t => Some(t as u64),
        }
    }

    /// Occupied sites in order of arrival; the `i`-th arrived at `i + 1`.
    pub fn sites_by_arrival(&self) -> impl ExactSizeIterator<Item = &[i32]> + '_ {
        self.order.chunks_exact(self.dim())
    }

    /// Occupied sites with their arrival times, lexicographic order.
    pub fn sites_lexicographic(&self) -> Vec<(Site, u64)> {
        let mut v: Vec<(Site, u64)> = self
            .sites_by_arrival()
            .enumerate()
            .map(|(i, s)| (Site::new(s.to_vec()), i as u64 + 1))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Tight bounding box `(lo, hi)` of the occupied sites.
    pub fn bounding_box(&self) -> Option<(Vec<i32>, Vec<i32>)> {
        let d = self.dim();
        let mut it = self.sites_by_arrival();
        let first = it.next()?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for s in it {
            for i in 0..d {
                lo[i] = lo[i].min(s[i]);
                hi[i] = hi[i].max(s[i]);
            }
        }
        Some((lo, hi))
    }

    fn allocate(&mut self, half: i32) {
        let d = self.dim();
        let side = 2 * half as usize + 1;
        let cells = side.pow(d as u32);
        self.half = half;
        self.side = side;
        for i in 0..d {
            self.strides[i] = side.pow((d - 1 - i) as u32);
        }
        self.bits = vec![0u64; cells.div_ceil(64)];
        self.arrival = vec![0u32; cells];
        let cap = (half as usize) * (half as usize);
        self.shell_size = shell_sizes(d, cap);
        self.shell_occ = vec![0u64; cap + 1];
        let order = std::mem::take(&mut self.order);
        for (i, s) in order.chunks_exact(d).enumerate() {
            let idx = self.index(s);
            self.bits[idx >> 6] |= 1 << (idx & 63);
            self.arrival[idx] = i as u32 + 1;
            let n2 = norm2(s) as usize;
            if n2 <= cap {
                self.shell_occ[n2] += 1;
            }
        }
        self.order = order;
        self.inner_n2 = 0;
        self.advance_inner();
    }

    fn advance_inner(&mut self) {
        let cap = self.shell_occ.len() as i64 - 1;
        while self.inner_n2 <= cap
            && self.shell_occ[self.inner_n2 as usize] == self.shell_size[self.inner_n2 as usize]
        {
            self.inner_n2 += 1;
        }
    }

    /// Marks `x` occupied at time `count + 1`. `x` must be unoccupied.
    pub(crate) fn settle(&mut self, x: &[i32]) {
        let m = x.iter().map(|c| c.abs()).max().unwrap_or(0);
        if m + EDGE_MARGIN > self.half {
            let mut half = self.half;
            while m + EDGE_MARGIN > half {
                half += (half / 2).max(4);
            }
            self.allocate(half);
        }
        self.max_abs = self.max_abs.max(m);
        let idx = self.index(x);
        debug_assert!(!self.bit(idx));
        assert!(self.count < u32::MAX as u64, "arrival times are stored as u32");
        self.count += 1;
        self.bits[idx >> 6] |= 1 << (idx & 63);
        self.arrival[idx] = self.count as u32;
        self.order.extend_from_slice(x);
        let n2 = norm2(x);
        if (n2 as usize) < self.shell_occ.len() {
            self.shell_occ[n2 as usize] += 1;
            if n2 == self.inner_n2 {
                self.advance_inner();
            }
        }
    }

    /// Releases one walker from the origin and settles it at the first
    /// unoccupied site it hits. Returns the settlement site.
    pub fn add_particle(&mut self, rng: &mut RngStream, accel: Option<&KernelSet>) -> Site {
        let mut tables = accel.map(|k| JumpTables::new(k, self));
        let mut pos = [0i32; MAX_DIM];
        self.walk_and_settle(rng, tables.as_mut(), &mut pos);
        Site::new(pos[..self.dim()].to_vec())
    }

    /// Adds `n` particles.
    pub fn add_particles(&mut self, n: u64, rng: &mut RngStream, accel: Option<&KernelSet>) {
        let mut tables = accel.map(|k| JumpTables::new(k, self));
        let mut pos = [0i32; MAX_DIM];
        for _ in 0..n {
            self.walk_and_settle(rng, tables.as_mut(), &mut pos);
        }
    }

    fn walk_and_settle(&mut self, rng: &mut RngStream, mut tables: Option<&mut JumpTables<'_>>, pos: &mut [i32; MAX_DIM]) {
        let d = self.dim();
        if let Some(t) = tables.as_deref_mut() {
            t.refresh(self.inner_n2);
        }
        *pos = [0; MAX_DIM];
        let mut idx = self.index(&pos[..d]);
        let mut n2: i64 = 0;
        let mut sampler = DirectionSampler::new(d);
        let strides = self.strides;
        let mut off = [0i32; MAX_DIM];
        loop {
            if !self.bit(idx) {
                break;
            }
            if let Some(t) = tables.as_deref() {
                if n2 <= t.loosest {
                    // largest kernel whose threshold admits n2
                    let mut k = t.thresholds.len() - 1;
                    while t.thresholds[k] < n2 {
                        k -= 1;
                    }
                    t.set.kernels()[k].sample_into(rng, &mut off[..d]);
                    n2 = 0;
                    for i in 0..d {
                        pos[i] += off[i];
                        n2 += pos[i] as i64 * pos[i] as i64;
                    }
                    idx = self.index(&pos[..d]);
                    continue;
                }
            }
            let dir = sampler.next(rng);
            let axis = dir >> 1;
            if dir & 1 == 0 {
                n2 += 2 * pos[axis] as i64 + 1;
                pos[axis] += 1;
                idx += strides[axis];
            } else {
                n2 -= 2 * pos[axis] as i64 - 1;
                pos[axis] -= 1;
                idx -= strides[axis];
            }
        }
        let x = *pos;
        self.settle(&x[..d]);
    }

    /// Squared radii under which each kernel's ball is certified full.
    fn kernel_admits(inner_n2: i64, h: u32, q: i64) -> bool {
        // (sqrt(q) + h)^2 < inner_n2  <=>  2h sqrt(q) < inner_n2 - q - h^2
        let h = h as i128;
        let rhs = inner_n2 as i128 - q as i128 - h * h;
        rhs > 0 && 4 * h * h * (q as i128) < rhs * rhs
    }

    fn kernel_threshold(inner_n2: i64, h: u32) -> i64 {
        let root = (inner_n2 as f64).sqrt() - h as f64;
        if root <= 0.0 {
            return -1;
        }
        let mut q = (root * root).floor() as i64;
        while Self::kernel_admits(inner_n2, h, q + 1) {
            q += 1;
        }
        while q >= 0 && !Self::kernel_admits(inner_n2, h, q) {
            q -= 1;
        }
        q
    }

    /// Connectivity of the occupied set under nearest-neighbour adjacency.
    pub fn is_connected(&self) -> bool {
        let d = self.dim();
        if self.count == 0 {
            return true;
        }
        let mut seen = vec![false; self.arrival.len()];
        let first: Vec<i32> = self.order[..d].to_vec();
        let mut stack = vec![first];
        seen[self.index(&stack[0])] = true;
        let mut reached = 1u64;
        while let Some(s) = stack.pop() {
            for axis in 0..d {
                for sgn in [1, -1] {
                    let mut n = s.clone();
                    n[axis] += sgn;
                    if self.contains(&n) {
                        let i = self.index(&n);
                        if !seen[i] {
                            seen[i] = true;
                            reached += 1;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        reached == self.count
    }

    /// Structural equality: same dimension, sites and arrival times.
    pub fn same_as(&self, other: &Cluster) -> bool {
        self.dim() == other.dim() && self.count == other.count && self.order == other.order
    }

    /// `true` if every occupied site lies in the closed ball of radius `r`.
    pub fn within_ball(&self, r: f64) -> bool {
        self.sites_by_arrival().all(|s| in_ball(norm2(s), r))
    }
}

struct JumpTables<'k> {
    set: &'k KernelSet,
    for_inner: i64,
    thresholds: Vec<i64>,
    loosest: i64,
}

impl<'k> JumpTables<'k> {
    fn new(set: &'k KernelSet, c: &Cluster) -> Self {
        assert_eq!(set.dim(), Some(c.dim()), "kernel dimension mismatch");
        let mut t = JumpTables {
            set,
            for_inner: -1,
            thresholds: vec![-1; set.kernels().len()],
            loosest: -1,
        };
        t.refresh(c.inner_n2);
        t
    }

    fn refresh(&mut self, inner_n2: i64) {
        if inner_n2 == self.for_inner {
            return;
        }
        self.for_inner = inner_n2;
        for (t, k) in self.thresholds.iter_mut().zip(self.set.kernels()) {
            *t = Cluster::kernel_threshold(inner_n2, k.radius());
        }
        self.loosest = self.thresholds.first().copied().unwrap_or(-1);
    }
}

impl Occupancy for Cluster {
    fn is_occupied(&self, x: &[i32]) -> bool {
        self.contains(x)
    }

    fn certified_kernel(&self, x: &[i32], kernels: &KernelSet) -> Option<usize> {
        let n2 = norm2(x);
        (0..kernels.kernels().len())
            .rev()
            .find(|&i| Self::kernel_admits(self.inner_n2, kernels.kernels()[i].radius(), n2))
    }
}
