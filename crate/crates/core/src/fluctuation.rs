//! Early and late points of a grown cluster, thin-tentacle volumes, and the
//! iteration schedule that bounds fluctuations.
//!
//! With `rho(t) = (t / omega_d)^{1/d}`, a site `x` that arrived at time
//! `T(x)` deviates early by `|x| - rho(T(x))` and late by `rho(T(x)) - |x|`.
//! Unoccupied sites inside `B_{rho(T)}` are late by `rho(T) - |x|`, the most
//! that can be seen by time `T`.

use serde::Serialize;

use crate::cluster::Cluster;
use crate::error::{IdlaError, Result};
use crate::lattice::{ball_offsets, discrete_ball, Site};

#[derive(Clone, Debug, Serialize)]
pub struct FluctuationReport {
    pub d: usize,
    /// `rho(T)`.
    pub r: f64,
    pub t: u64,
    pub seed: Option<u64>,
    /// Largest early deviation, at least 0.
    pub mt: f64,
    /// Largest late deviation, at least 0.
    pub lt: f64,
    pub mt_site: Option<Site>,
    pub lt_site: Option<Site>,
    /// `(m, number of m-early sites)` for `m = 1, 2, ..`.
    pub early_counts: Vec<(u32, u64)>,
    /// `(l, number of l-late sites)` for `l = 1, 2, ..`.
    pub late_counts: Vec<(u32, u64)>,
    pub runtime_s: f64,
}

/// `T(x) <= ceil(omega (|x| - m)^d)`.
pub fn is_early(c: &Cluster, x: &[i32], m: f64) -> bool {
    let g = c.geometry();
    let n = (crate::lattice::norm2(x) as f64).sqrt();
    match c.arrival(x) {
        Some(t) => n >= m && t as f64 <= g.volume(n - m).ceil(),
        None => false,
    }
}

/// `x` is not occupied at time `floor(omega (|x| + l)^d)`, which must not
/// exceed the cluster's size.
pub fn is_late(c: &Cluster, x: &[i32], l: f64) -> bool {
    let g = c.geometry();
    let n = (crate::lattice::norm2(x) as f64).sqrt();
    let horizon = g.volume(n + l).floor();
    if horizon > c.count() as f64 {
        return false;
    }
    match c.arrival(x) {
        Some(t) => t as f64 > horizon,
        None => true,
    }
}

pub fn early_late_scan(c: &Cluster) -> Result<FluctuationReport> {
    let g = c.geometry();
    let d = g.dim();
    let t = c.count();
    if t == 0 {
        return Err(IdlaError::Contract("empty cluster has no arrival data".into()));
    }
    let rho = g.radius_for_volume(t as f64);
    let mut early_dev = Vec::with_capacity(t as usize);
    let mut mt = 0.0f64;
    let mut mt_site = None;
    for (i, x) in c.sites_by_arrival().enumerate() {
        let e = (crate::lattice::norm2(x) as f64).sqrt() - g.radius_for_volume((i + 1) as f64);
        early_dev.push(e);
        if e > mt {
            mt = e;
            mt_site = Some(Site::new(x.to_vec()));
        }
    }
    let mut late_dev = Vec::new();
    let mut lt = 0.0f64;
    let mut lt_site = None;
    for x in discrete_ball(&Site::origin(d), rho) {
        let n = x.norm();
        let l = match c.arrival(x.coords()) {
            Some(tx) => g.radius_for_volume(tx as f64) - n,
            None => rho - n,
        };
        late_dev.push(l);
        if l > lt {
            lt = l;
            lt_site = Some(x);
        }
    }
    let histogram = |devs: &[f64], top: f64| -> Vec<(u32, u64)> {
        (1..=top.floor() as u32)
            .map(|m| (m, devs.iter().filter(|&&e| e >= m as f64).count() as u64))
            .collect()
    };
    Ok(FluctuationReport {
        d,
        r: rho,
        t,
        seed: None,
        mt,
        lt,
        mt_site,
        lt_site,
        early_counts: histogram(&early_dev, mt),
        late_counts: histogram(&late_dev, lt),
        runtime_s: 0.0,
    })
}

/// `#(A(t) ∩ B(z, m)) / m^d`.
pub fn local_volume_fraction(c: &Cluster, z: &Site, m: u32, t: u64) -> f64 {
    let offsets = ball_offsets(z.dim(), m as f64);
    let count = offsets
        .iter()
        .filter(|off| c.arrival(z.offset(off).coords()).is_some_and(|a| a <= t))
        .count();
    count as f64 / (m as f64).powi(z.dim() as i32)
}

#[derive(Clone, Debug, Serialize)]
pub struct TentacleReport {
    pub m: u32,
    /// Sites that were `m`-early when they arrived.
    pub early_sites: usize,
    pub min_fraction: Option<f64>,
    pub argmin: Option<Site>,
    pub arrival_at_min: Option<u64>,
}

/// For every site `z` that was `m`-early on arrival at `t_z`, the share of
/// `B(z, m)` already occupied at `t_z`; reports the smallest.
pub fn tentacle_scan(c: &Cluster, m: u32) -> Result<TentacleReport> {
    if m < 2 {
        return Err(IdlaError::InvalidParameter(format!("m = {m}, need m >= 2")));
    }
    let mut rep = TentacleReport {
        m,
        early_sites: 0,
        min_fraction: None,
        argmin: None,
        arrival_at_min: None,
    };
    for (i, x) in c.sites_by_arrival().enumerate() {
        if is_early(c, x, m as f64) {
            rep.early_sites += 1;
            let z = Site::new(x.to_vec());
            let f = local_volume_fraction(c, &z, m, i as u64 + 1);
            if rep.min_fraction.is_none_or(|best| f < best) {
                rep.min_fraction = Some(f);
                rep.argmin = Some(z);
                rep.arrival_at_min = Some(i as u64 + 1);
            }
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationSchedule {
    pub t: f64,
    pub c: f64,
    /// `C^4 log T`.
    pub k: f64,
    /// `ceil(log T)`.
    pub j: usize,
    /// `m_0 .. m_J`.
    pub m: Vec<f64>,
    /// `l_0 .. l_J`.
    pub l: Vec<f64>,
    /// Majorant `l'_0 .. l'_J`.
    pub l_majorant: Vec<f64>,
    /// `l_j <= l'_j` for every `j`.
    pub majorant_holds: bool,
    /// `2 sqrt(K)`.
    pub terminal_bound: f64,
}

/// `m_0 = T`, `l_j = max(C (m_j log T)^{1/3}, C sqrt(log T))`,
/// `m_{j+1} = C l_j`, for `j <= J = ceil(log T)`.
pub fn iteration_schedule(t: f64, c: f64) -> Result<IterationSchedule> {
    if !(t > std::f64::consts::E) {
        return Err(IdlaError::InvalidParameter(format!("T = {t} must exceed e")));
    }
    if !(c >= 1.0) {
        return Err(IdlaError::InvalidParameter(format!("C = {c} must be at least 1")));
    }
    let log_t = t.ln();
    let k = c.powi(4) * log_t;
    let j = log_t.ceil() as usize;
    let mut m = vec![t];
    let mut l = Vec::new();
    let mut lm = vec![(k * t).cbrt()];
    for i in 0..=j {
        let li = (c * (log_t * m[i]).cbrt()).max(c * log_t.sqrt());
        l.push(li);
        if i < j {
            m.push(c * li);
            lm.push((k * lm[i]).cbrt().max(k.sqrt()));
        }
    }
    let majorant_holds = l.iter().zip(&lm).all(|(a, b)| *a <= *b * (1.0 + 1e-12));
    Ok(IterationSchedule {
        t,
        c,
        k,
        j,
        m,
        l,
        l_majorant: lm,
        majorant_holds,
        terminal_bound: 2.0 * k.sqrt(),
    })
}

impl IterationSchedule {
    pub fn l_final(&self) -> f64 {
        *self.l.last().unwrap()
    }
}
