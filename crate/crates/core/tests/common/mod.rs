//! Independent Monte Carlo estimators shared by the oracle and acceptance
//! tests. Each one simulates the plain walk directly and shares no solver
//! code with the quantity it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use idla::cluster::Cluster;
use idla::engine::StoppedDomain;
use idla::green::GreenField;
use idla::lattice::{canonical, Site};
use idla::rng::{DirectionSampler, RngStream};
use idla::walk::{accelerated_step, KernelSet, Occupancy, WalkState};

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Every site except the origin counts as occupied, so kernel jumps are
/// allowed whenever the ball misses the origin.
struct AllButOrigin;

impl Occupancy for AllButOrigin {
    fn is_occupied(&self, x: &[i32]) -> bool {
        x.iter().any(|&v| v != 0)
    }

    fn certified_kernel(&self, x: &[i32], kernels: &KernelSet) -> Option<usize> {
        let n2: i64 = x.iter().map(|&v| v as i64 * v as i64).sum();
        kernels
            .kernels()
            .iter()
            .rposition(|k| n2 > (k.radius() as i64 + 1).pow(2))
    }
}

/// `G(0)`, the expected number of visits to the origin, from `n` walks
/// killed on leaving the ball of radius `kill`. Visits after the kill are
/// added from the asymptotic `a_d |x|^{2-d}`, whose error at the kill
/// radius is far below the sampling error.
pub fn green_origin_mc(d: usize, a_d: f64, n: usize, kill: f64, seed: u64) -> (f64, f64) {
    let kernels = KernelSet::powers_of_two(d, 32).unwrap();
    let kill2 = kill * kill;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = RngStream::new(seed, i as u64);
        let mut w = WalkState::new(Site::origin(d));
        let mut visits = 1.0;
        loop {
            accelerated_step(&mut w, &AllButOrigin, &kernels, &mut rng);
            let n2 = w.position.norm2() as f64;
            if n2 == 0.0 {
                visits += 1.0;
            } else if n2 >= kill2 {
                visits += a_d * n2.sqrt().powf(2.0 - d as f64);
                break;
            }
        }
        samples.push(visits);
    }
    mean_se(&samples)
}

/// Probability that the plain walk from the origin reaches `y` before the
/// outer boundary of the stopped-process domain.
pub fn hitting_mc(y: &Site, k: u32, n: usize, seed: u64) -> (f64, f64) {
    let dom = StoppedDomain::new(y.dim(), y.clone(), k).unwrap();
    let d = y.dim();
    let mut rng = RngStream::new(seed, 0);
    let mut hits = 0usize;
    let mut x = vec![0i32; d];
    for _ in 0..n {
        x.iter_mut().for_each(|v| *v = 0);
        let mut dir = DirectionSampler::new(d);
        loop {
            let m = dir.next(&mut rng);
            x[m / 2] += if m.is_multiple_of(2) { 1 } else { -1 };
            if x == y.coords() {
                hits += 1;
                break;
            }
            if dom.is_outer(&x) {
                break;
            }
        }
    }
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Exit counts per edge orbit for Brownian motion on the grid started at
/// the origin and stopped on `{g = alpha}`. At a site every edge is chosen
/// with weight one over its length to the first level crossing, and a
/// crossing edge ends the walk.
pub fn level_exit_mc(gf: &GreenField, alpha: f64, n: usize, seed: u64) -> BTreeMap<Vec<i32>, u64> {
    let d = gf.dim();
    let mut rng = RngStream::new(seed, 0);
    let mut counts = BTreeMap::new();
    let mut cache: BTreeMap<Vec<i32>, Vec<(f64, bool)>> = BTreeMap::new();
    for _ in 0..n {
        let mut u = vec![0i32; d];
        loop {
            let weights = cache
                .entry(u.clone())
                .or_insert_with(|| {
                    let gu = gf.get(&u).unwrap();
                    (0..2 * d)
                        .map(|m| {
                            let mut v = u.clone();
                            v[m / 2] += if m % 2 == 0 { 1 } else { -1 };
                            let gv = gf.get(&v).unwrap();
                            if gv > alpha {
                                (1.0, false)
                            } else {
                                (1.0 / ((gu - alpha) / (gu - gv)), true)
                            }
                        })
                        .collect()
                })
                .clone();
            let total: f64 = weights.iter().map(|w| w.0).sum();
            let mut pick = rng.uniform() * total;
            let mut m = 0;
            while m + 1 < weights.len() && pick >= weights[m].0 {
                pick -= weights[m].0;
                m += 1;
            }
            let mut v = u.clone();
            v[m / 2] += if m % 2 == 0 { 1 } else { -1 };
            if weights[m].1 {
                let s: Vec<i32> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
                *counts.entry(canonical(&s)).or_insert(0) += 1;
                break;
            }
            u = v;
        }
    }
    counts
}

/// The fixed 99-site cluster: the lattice ball of radius sqrt(8) plus the
/// six axis points at distance 3.
pub fn fixture_99() -> Cluster {
    let mut sites = idla::lattice::discrete_ball(&Site::origin(3), 8f64.sqrt());
    for axis in 0..3 {
        sites.push(Site::axis(3, axis, 3));
        sites.push(Site::axis(3, axis, -3));
    }
    let g = idla::lattice::LatticeGeometry::new(3).unwrap();
    Cluster::from_sites(g, &sites).unwrap()
}

/// Where one extra particle settles, `n` times, counted per site.
pub fn settle_counts(c: &Cluster, kernels: Option<&KernelSet>, n: usize, seed: u64) -> BTreeMap<Site, u64> {
    let mut rng = RngStream::new(seed, 0);
    let mut counts = BTreeMap::new();
    for _ in 0..n {
        let mut c = c.clone();
        *counts.entry(c.add_particle(&mut rng, kernels)).or_insert(0) += 1;
    }
    counts
}

/// Aligns two count maps on the union of their keys.
pub fn aligned<K: Ord + Clone>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> (Vec<u64>, Vec<u64>) {
    let keys: std::collections::BTreeSet<&K> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .map(|k| (a.get(k).copied().unwrap_or(0), b.get(k).copied().unwrap_or(0)))
        .unzip()
}
