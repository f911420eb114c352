//! Seeds-by-radii growth sweeps and the sub-logarithmic fluctuation fit.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::grow;
use crate::error::{IdlaError, Result};
use crate::fluctuation::early_late_scan;
use crate::lattice::LatticeGeometry;
use crate::rng::RngStream;
use crate::stats::{linear_fit, median, quantile};
use crate::walk::KernelSet;

type Curve = fn(f64) -> f64;

/// Env var capping the sweep's worker threads.
pub const THREADS_ENV: &str = "IDLA_THREADS";

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
    #[serde(default)]
    pub plot: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub radii: Vec<f64>,
    /// Seeds per radius.
    pub seeds: usize,
    #[serde(default = "yes")]
    pub accel: bool,
    /// Largest jump kernel radius; kernels are the powers of two up to it.
    #[serde(default = "default_cap")]
    pub kernel_cap: u32,
    #[serde(default)]
    pub output: OutputPaths,
    pub master_seed: u64,
}

fn yes() -> bool {
    true
}

fn default_cap() -> u32 {
    16
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        LatticeGeometry::new(self.d)?;
        if self.radii.is_empty() {
            return Err(IdlaError::InvalidParameter("no radii".into()));
        }
        if let Some(r) = self.radii.iter().find(|r| !(**r >= 2.0) || !r.is_finite()) {
            return Err(IdlaError::InvalidParameter(format!("radius {r} < 2")));
        }
        if self.seeds < 1 {
            return Err(IdlaError::InvalidParameter("seeds must be at least 1".into()));
        }
        if self.accel && self.kernel_cap < 2 {
            return Err(IdlaError::InvalidParameter(format!("kernel cap {} < 2", self.kernel_cap)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRow {
    pub radius: f64,
    pub seed_index: usize,
    pub stream: u64,
    pub t: u64,
    pub mt: f64,
    pub lt: f64,
    pub runtime_s: f64,
}

impl RunRow {
    pub fn deviation(&self) -> f64 {
        self.mt.max(self.lt)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunFailure {
    pub radius: f64,
    pub seed_index: usize,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RadiusSummary {
    pub radius: f64,
    pub runs: usize,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    /// `max / sqrt(log r)`.
    pub a_max: f64,
    /// `p95 / sqrt(log r)`.
    pub a_p95: f64,
    /// `median / sqrt(log r)`.
    pub a_median: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub d: usize,
    pub master_seed: u64,
    pub radii: Vec<RadiusSummary>,
    pub a_hat_max: f64,
    pub a_hat_p95: f64,
    /// Slope of `ln(median deviation)` against `ln(ln r)`.
    pub exponent_median: Option<f64>,
    /// Slope of `ln(max deviation)` against `ln(ln r)`.
    pub exponent_max: Option<f64>,
    /// `a_max` at the largest radius over the next largest.
    pub top_octave_ratio: Option<f64>,
    /// Ratios of `a_median` between consecutive radii.
    pub median_ratios: Vec<f64>,
    pub failures: Vec<RunFailure>,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub rows: Vec<RunRow>,
    pub summary: SweepSummary,
}

fn run_one(
    geometry: &LatticeGeometry,
    radius: f64,
    stream: u64,
    master_seed: u64,
    kernels: Option<&KernelSet>,
) -> Result<RunRow> {
    let start = Instant::now();
    let t = geometry.volume(radius).floor() as u64;
    let mut rng = RngStream::new(master_seed, stream);
    let c = grow(*geometry, t, &mut rng, kernels);
    let rep = early_late_scan(&c)?;
    Ok(RunRow {
        radius,
        seed_index: 0,
        stream,
        t,
        mt: rep.mt,
        lt: rep.lt,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every (radius, seed) job. Run `(i, j)` uses stream `i * seeds + j`.
/// Failed runs are reported in the summary and left out of the fit.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let start = Instant::now();
    let geometry = LatticeGeometry::new(cfg.d)?;
    let kernels = if cfg.accel {
        Some(KernelSet::powers_of_two(cfg.d, cfg.kernel_cap)?)
    } else {
        None
    };
    let jobs: Vec<(usize, usize)> = (0..cfg.radii.len())
        .flat_map(|i| (0..cfg.seeds).map(move |j| (i, j)))
        .collect();
    let work = || -> Vec<std::result::Result<RunRow, RunFailure>> {
        jobs.par_iter()
            .map(|&(i, j)| {
                let radius = cfg.radii[i];
                let stream = (i * cfg.seeds + j) as u64;
                let res = catch_unwind(AssertUnwindSafe(|| {
                    run_one(&geometry, radius, stream, cfg.master_seed, kernels.as_ref())
                }));
                let fail = |message: String| RunFailure {
                    radius,
                    seed_index: j,
                    message,
                };
                match res {
                    Ok(Ok(mut row)) => {
                        row.seed_index = j;
                        Ok(row)
                    }
                    Ok(Err(e)) => Err(fail(e.to_string())),
                    Err(p) => Err(fail(
                        p.downcast_ref::<String>()
                            .cloned()
                            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "run panicked".into()),
                    )),
                }
            })
            .collect()
    };
    let outcomes = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| IdlaError::Resource(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(cfg, &rows, failures, start.elapsed().as_secs_f64());
    Ok(SweepResult { rows, summary })
}

fn summarize(cfg: &ExperimentConfig, rows: &[RunRow], failures: Vec<RunFailure>, runtime_s: f64) -> SweepSummary {
    let mut radii = Vec::new();
    for &r in &cfg.radii {
        let devs: Vec<f64> = rows.iter().filter(|row| row.radius == r).map(RunRow::deviation).collect();
        if devs.is_empty() {
            continue;
        }
        let scale = r.ln().sqrt();
        let med = median(&devs);
        let p95 = quantile(&devs, 0.95);
        let max = devs.iter().copied().fold(f64::MIN, f64::max);
        radii.push(RadiusSummary {
            radius: r,
            runs: devs.len(),
            median: med,
            p95,
            max,
            a_max: max / scale,
            a_p95: p95 / scale,
            a_median: med / scale,
        });
    }
    let mut sorted = radii.clone();
    sorted.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    let exponent = |pick: fn(&RadiusSummary) -> f64| {
        let pts: Vec<(f64, f64)> = sorted
            .iter()
            .filter(|s| pick(s) > 0.0 && s.radius > std::f64::consts::E)
            .map(|s| (s.radius.ln().ln(), pick(s).ln()))
            .collect();
        (pts.len() >= 2).then(|| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            linear_fit(&xs, &ys).1
        })
    };
    let top_octave_ratio = (sorted.len() >= 2).then(|| {
        let n = sorted.len();
        sorted[n - 1].a_max / sorted[n - 2].a_max
    });
    SweepSummary {
        d: cfg.d,
        master_seed: cfg.master_seed,
        a_hat_max: radii.iter().map(|s| s.a_max).fold(0.0, f64::max),
        a_hat_p95: radii.iter().map(|s| s.a_p95).fold(0.0, f64::max),
        exponent_median: exponent(|s| s.median),
        exponent_max: exponent(|s| s.max),
        top_octave_ratio,
        median_ratios: sorted.windows(2).map(|w| w[1].a_median / w[0].a_median).collect(),
        radii,
        failures,
        runtime_s,
    }
}

impl SweepResult {
    /// CSV with header `radius,seed_index,stream,T,mT,lT,deviation`. Rows are
    /// in (radius, seed) order and carry no timing, so equal seeds give equal
    /// bytes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,seed_index,stream,T,mT,lT,deviation\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.radius,
                r.seed_index,
                r.stream,
                r.t,
                r.mt,
                r.lt,
                r.deviation()
            );
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }

    /// Scatter of deviation against radius with `sqrt(log r)` and `log r`
    /// reference curves, both scaled to the median at the smallest radius.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 420.0, 50.0);
        let rmin = self.rows.iter().map(|r| r.radius).fold(f64::MAX, f64::min);
        let rmax = self.rows.iter().map(|r| r.radius).fold(f64::MIN, f64::max);
        let dmax = self.rows.iter().map(RunRow::deviation).fold(1.0, f64::max) * 1.1;
        let (lo, hi) = (rmin.ln(), rmax.ln().max(rmin.ln() + 1e-9));
        let px = |r: f64| pad + (r.ln() - lo) / (hi - lo) * (w - 2.0 * pad);
        let py = |v: f64| h - pad - v / dmax * (h - 2.0 * pad);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
            h - pad,
            w - pad
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="steelblue" fill-opacity="0.5"/>"#,
                px(r.radius),
                py(r.deviation())
            );
        }
        if let Some(base) = self.summary.radii.iter().find(|x| x.radius == rmin) {
            let curves: [(&str, Curve); 2] = [("crimson", |r| r.ln().sqrt()), ("darkgreen", f64::ln)];
            for (color, f) in curves {
                let k = base.median / f(rmin.max(2.0));
                let pts: Vec<String> = (0..=40)
                    .map(|i| {
                        let r = (lo + (hi - lo) * i as f64 / 40.0).exp();
                        format!("{:.2},{:.2}", px(r), py(k * f(r)))
                    })
                    .collect();
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, pts.join(" "));
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{pad}" y="20" font-size="12">deviation vs r (log scale); red: sqrt(log r), green: log r</text>"#
        );
        s.push_str("</svg>\n");
        s
    }

    /// Writes whichever outputs the config names.
    pub fn write_outputs(&self, out: &OutputPaths) -> Result<()> {
        if let Some(p) = &out.csv {
            std::fs::write(p, self.to_csv())?;
        }
        if let Some(p) = &out.summary {
            std::fs::write(p, self.summary_json()?)?;
        }
        if let Some(p) = &out.plot {
            std::fs::write(p, self.to_svg())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(radii: Vec<f64>, seeds: usize) -> ExperimentConfig {
        ExperimentConfig {
            d: 3,
            radii,
            seeds,
            accel: true,
            kernel_cap: 4,
            output: OutputPaths::default(),
            master_seed: 11,
        }
    }

    #[test]
    fn single_run_table() {
        let res = sweep(&cfg(vec![4.0], 1)).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.rows[0].t, LatticeGeometry::new(3).unwrap().volume(4.0).floor() as u64);
        assert_eq!(res.to_csv().lines().count(), 2);
        assert!(res.summary.exponent_max.is_none());
        assert!(res.to_svg().contains("<circle"));
    }

    #[test]
    fn deterministic_csv() {
        let c = cfg(vec![3.0, 5.0], 3);
        let a = sweep(&c).unwrap();
        let b = sweep(&c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows[4].stream, 4);
        assert_eq!(a.rows[4].seed_index, 1);
        assert!(a.summary.exponent_median.is_some());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(vec![1.0], 1).validate().is_err());
        assert!(cfg(vec![4.0], 0).validate().is_err());
        assert!(cfg(vec![], 1).validate().is_err());
        let c = ExperimentConfig::from_json(r#"{"d":3,"radii":[8],"seeds":2,"master_seed":1}"#).unwrap();
        assert!(c.accel && c.kernel_cap == 16);
        assert!(ExperimentConfig::from_json(r#"{"d":2,"radii":[8],"seeds":2,"master_seed":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"d":3,"radii":[8],"seeds":2,"master_seed":1,"x":0}"#).is_err());
    }
}
