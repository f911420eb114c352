//! The growth martingale `M(t) = sum over A_{y,k}(t) of (P(x) - P(0))`,
//! counted with multiplicity and including the active walker, and its
//! discrete quadratic variation: the sum over lattice steps of the squared
//! change of `P` at the walker.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Outcome, StepObserver, StoppedCluster};
use crate::error::{IdlaError, Result};
use crate::harmonic::HarmonicField;
use crate::lattice::{omega, LatticeGeometry};
use crate::rng::RngStream;
use crate::stats::{median, quantile};

#[derive(Clone, Debug, Default, Serialize)]
pub struct MartingaleTrace {
    /// Total lattice steps taken when each particle stopped.
    pub particle_times: Vec<u64>,
    /// `M` after each particle stopped.
    pub m: Vec<f64>,
    /// Quadratic variation after each particle stopped.
    pub shat: Vec<f64>,
    pub steps_total: u64,
    pub absorbed_at_y: u64,
    pub boundary_mass: u64,
}

impl MartingaleTrace {
    pub fn terminal_m(&self) -> f64 {
        self.m.last().copied().unwrap_or(0.0)
    }

    pub fn terminal_shat(&self) -> f64 {
        self.shat.last().copied().unwrap_or(0.0)
    }

    /// `M / sqrt(Shat)` at the end of the run.
    pub fn normalized_terminal(&self) -> f64 {
        self.terminal_m() / self.terminal_shat().sqrt()
    }

    /// CSV with header `particle_index,t,M,Shat`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "particle_index,t,M,Shat")?;
        for i in 0..self.m.len() {
            writeln!(w, "{},{},{:e},{:e}", i + 1, self.particle_times[i], self.m[i], self.shat[i])?;
        }
        Ok(())
    }
}

struct Tracker<'a> {
    hf: &'a HarmonicField,
    m: f64,
    shat: f64,
    steps: u64,
    trace: MartingaleTrace,
}

impl StepObserver for Tracker<'_> {
    #[inline]
    fn on_step(&mut self, from: &[i32], to: &[i32]) {
        let dm = self.hf.get(to).unwrap() - self.hf.get(from).unwrap();
        self.m += dm;
        self.shat += dm * dm;
        self.steps += 1;
    }

    fn on_finish(&mut self, _: &Outcome) {
        self.trace.particle_times.push(self.steps);
        self.trace.m.push(self.m);
        self.trace.shat.push(self.shat);
    }
}

/// Runs `t` walkers of the stopped process for the field's `(y, k)`.
pub fn run_martingale(hf: &HarmonicField, t: u64, rng: &mut RngStream) -> Result<MartingaleTrace> {
    let geometry = LatticeGeometry::new(hf.dim())?;
    let mut sc = StoppedCluster::new(geometry, hf.y().clone(), hf.k())?;
    run_martingale_on(&mut sc, hf, t, rng)
}

/// Continues a stopped cluster by `t` walkers, tracking `M` from zero.
pub fn run_martingale_on(
    sc: &mut StoppedCluster,
    hf: &HarmonicField,
    t: u64,
    rng: &mut RngStream,
) -> Result<MartingaleTrace> {
    if sc.y() != hf.y() || sc.k() != hf.k() {
        return Err(IdlaError::Contract(format!(
            "cluster is for y = {:?}, k = {} but the field is for y = {:?}, k = {}",
            sc.y(),
            sc.k(),
            hf.y(),
            hf.k()
        )));
    }
    let mut tr = Tracker {
        hf,
        m: terminal_value(sc, hf),
        shat: 0.0,
        steps: 0,
        trace: MartingaleTrace::default(),
    };
    for _ in 0..t {
        sc.add_particle(rng, &mut tr);
    }
    let mut trace = tr.trace;
    trace.steps_total = tr.steps;
    trace.absorbed_at_y = sc.absorbed_at_y();
    trace.boundary_mass = sc.boundary_mass();
    Ok(trace)
}

/// `M` recomputed from the multiset: settled sites, `y` with value 1 and
/// stopped particles with value 0, each less `P(0)`.
pub fn terminal_value(sc: &StoppedCluster, hf: &HarmonicField) -> f64 {
    let p0 = hf.p0();
    let interior: f64 = sc
        .inner()
        .sites_by_arrival()
        .map(|x| hf.get(x).unwrap() - p0)
        .sum();
    interior + sc.boundary_mass() as f64 * (0.0 - p0) + sc.absorbed_at_y() as f64 * (1.0 - p0)
}

/// `runs` independent traces; run `i` uses stream `i` of `master_seed`.
pub fn run_martingales(hf: &HarmonicField, t: u64, runs: usize, master_seed: u64) -> Result<Vec<MartingaleTrace>> {
    (0..runs)
        .into_par_iter()
        .map(|i| run_martingale(hf, t, &mut RngStream::new(master_seed, i as u64)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleCase {
    /// Early-point schedule, `T_1 = ceil(omega (r - m)^d)`.
    Early,
    /// Late-point schedule with `s <= 2k`.
    Near,
    /// Late-point schedule with `s > 2k`.
    Far,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// A site at distance `r` from the origin, early by `m`.
    EarlyPoint { r: f64, m: f64 },
    /// A site at distance `s`, late by `l`, with margin `k` and scale `m`.
    LatePoint { s: f64, k: f64, l: f64, m: f64 },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DiagnosticSchedule {
    pub t0: u64,
    pub t1: u64,
    /// `T_1 P(0)`.
    pub q: f64,
    pub case: ScheduleCase,
}

pub fn schedule(kind: ScheduleKind, d: usize, p0: f64) -> Result<DiagnosticSchedule> {
    let w = omega(d as i64)?;
    let pow = |x: f64| w * x.max(0.0).powi(d as i32);
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(IdlaError::InvalidParameter(format!("{name} = {v} must be positive")))
        }
    };
    if !(p0 >= 0.0) {
        return Err(IdlaError::InvalidParameter(format!("P(0) = {p0}")));
    }
    let (t0, t1, case) = match kind {
        ScheduleKind::EarlyPoint { r, m } => {
            positive("r", r)?;
            positive("m", m)?;
            (0, pow(r - m).ceil() as u64, ScheduleCase::Early)
        }
        ScheduleKind::LatePoint { s, k, l, m } => {
            positive("s", s)?;
            positive("k", k)?;
            positive("l", l)?;
            positive("m", m)?;
            let t1 = pow(s + l).floor() as u64;
            if s <= 2.0 * k {
                (0, t1, ScheduleCase::Near)
            } else {
                let base = s + k - 3.0 * m;
                let t0 = if base <= 0.0 { 0 } else { pow(base).floor() as u64 };
                (t0.min(t1), t1, ScheduleCase::Far)
            }
        }
    };
    Ok(DiagnosticSchedule {
        t0,
        t1,
        q: t1 as f64 * p0,
        case,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct QvRow {
    pub s: f64,
    pub runs: usize,
    pub median: f64,
    pub p95: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct QvSummary {
    pub rows: Vec<QvRow>,
    /// Median ratios between consecutive radii.
    pub ratios: Vec<f64>,
    /// Set when there are at least three radii: `true` if the medians rise
    /// at every step.
    pub growing: Option<bool>,
}

pub const QV_MIN_RUNS: usize = 30;

/// Terminal quadratic variation per radius. `groups` pairs each `s` with its
/// traces and should be sorted by `s`.
pub fn qv_summary(groups: &[(f64, Vec<MartingaleTrace>)]) -> Result<QvSummary> {
    if groups.is_empty() {
        return Err(IdlaError::Contract("no traces".into()));
    }
    let mut rows = Vec::new();
    for (s, traces) in groups {
        if traces.len() < QV_MIN_RUNS {
            return Err(IdlaError::Contract(format!(
                "{} traces at s = {s}, need at least {QV_MIN_RUNS}",
                traces.len()
            )));
        }
        let v: Vec<f64> = traces.iter().map(|t| t.terminal_shat()).collect();
        rows.push(QvRow {
            s: *s,
            runs: v.len(),
            median: median(&v),
            p95: quantile(&v, 0.95),
        });
    }
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].median / w[0].median).collect();
    let growing = (rows.len() >= 3).then(|| ratios.iter().all(|&r| r > 1.0));
    Ok(QvSummary { rows, ratios, growing })
}
