use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use idla::engine::grow;
use idla::error::{IdlaError, Result};
use idla::field::Translated;
use idla::fluctuation::{early_late_scan, is_late, iteration_schedule, tentacle_scan};
use idla::green::compute_green;
use idla::harmonic::{audit, solve_p};
use idla::lattice::{discrete_ball, LatticeGeometry, Site};
use idla::martingale::{run_martingales, schedule, ScheduleKind};
use idla::rng::RngStream;
use idla::sandpile::{divisible_sandpile, mean_value_residual};
use idla::snapshot::{restore, snapshot};
use idla::stats::{ks_p_value, ks_statistic, median, normal_cdf, quantile, z_p_value};
use idla::sweep::{sweep, ExperimentConfig, THREADS_ENV};
use idla::walk::KernelSet;

/// Internal DLA simulation and discrete potential theory on Z^d.
#[derive(Parser)]
#[command(name = "idla", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grow a cluster from the origin.
    Grow {
        #[arg(long, default_value_t = 3)]
        d: usize,
        /// Target radius; the particle count defaults to floor(omega_d r^d).
        #[arg(long)]
        r: Option<f64>,
        /// Number of particles.
        #[arg(long)]
        t: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use jump kernels for walks that are deep inside the cluster.
        #[arg(long)]
        accel: bool,
        #[arg(long, default_value_t = 16)]
        kernel_cap: u32,
        #[arg(long)]
        snapshot_out: Option<PathBuf>,
        /// CSV of sites with columns x1..xd,arrival.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Early/late statistics of a saved cluster.
    Scan {
        #[arg(long)]
        snapshot: PathBuf,
        /// Tentacle scale for the local volume scan.
        #[arg(long)]
        m: Option<u32>,
        /// Count the sites that are late by this much.
        #[arg(long)]
        l: Option<f64>,
    },
    /// Solve for the Green function on a cube.
    Green {
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long = "R", default_value_t = 40)]
        radius: i32,
        /// `.idlg` writes the binary cache, anything else a CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the stopped-process hitting probability of y.
    Harmonic {
        /// Comma-separated target site, e.g. 8,0,0.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<i32>,
        #[arg(long, default_value_t = 1)]
        k: u32,
        /// Report the upper, lower and shell-sum constants.
        #[arg(long)]
        audit: bool,
        /// Scale for the ball lower bound in the audit.
        #[arg(long)]
        m: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Divisible sandpile started from mass omega_d r^d at the origin.
    Sandpile {
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long)]
        r: f64,
        /// Check the mean value identity against a Green function centred
        /// outside the support.
        #[arg(long)]
        check_mvp: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Martingale runs of the stopped process.
    Martingale {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<i32>,
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// A particle count, `early[:r=..,m=..]` or `late:l=..,m=..`.
        #[arg(long, default_value = "early")]
        schedule: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV trace of the first run.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// The fluctuation bound iteration for given T and C.
    Schedule {
        #[arg(long = "T")]
        t: f64,
        #[arg(long = "C", default_value_t = 2.0)]
        c: f64,
    },
    /// Seeds-by-radii growth sweep from a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli.cmd) {
        Ok(v) => {
            use std::io::Write;
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&v).unwrap());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cmd: Cmd) -> Result<Value> {
    match cmd {
        Cmd::Grow {
            d,
            r,
            t,
            seed,
            accel,
            kernel_cap,
            snapshot_out,
            csv_out,
        } => {
            let g = LatticeGeometry::new(d)?;
            let t = match (t, r) {
                (Some(t), _) => t,
                (None, Some(r)) if r > 0.0 => g.volume(r).floor() as u64,
                _ => return Err(IdlaError::InvalidParameter("give --t or a positive --r".into())),
            };
            let kernels = if accel {
                Some(KernelSet::powers_of_two(d, kernel_cap)?)
            } else {
                None
            };
            let start = Instant::now();
            let mut rng = RngStream::new(seed, 0);
            let c = grow(g, t, &mut rng, kernels.as_ref());
            let runtime = start.elapsed().as_secs_f64();
            if let Some(p) = &snapshot_out {
                snapshot(&c, Some(&rng), p)?;
            }
            if let Some(p) = &csv_out {
                use std::io::Write;
                let mut w = create(p)?;
                let cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
                writeln!(w, "{},arrival", cols.join(","))?;
                for (x, a) in c.sites_lexicographic() {
                    let xs: Vec<String> = x.coords().iter().map(i32::to_string).collect();
                    writeln!(w, "{},{a}", xs.join(","))?;
                }
            }
            let mut rep = early_late_scan(&c)?;
            rep.seed = Some(seed);
            rep.runtime_s = runtime;
            Ok(serde_json::to_value(rep)?)
        }
        Cmd::Scan { snapshot, m, l } => {
            let (c, _) = restore(&snapshot)?;
            let rep = early_late_scan(&c)?;
            let tentacle = m.map(|m| tentacle_scan(&c, m)).transpose()?;
            let late = l.map(|l| {
                let rho = c.geometry().radius_for_volume(c.count() as f64);
                discrete_ball(&Site::origin(c.dim()), rho)
                    .iter()
                    .filter(|x| is_late(&c, x.coords(), l))
                    .count()
            });
            Ok(json!({ "report": rep, "tentacle": tentacle, "late_sites": late }))
        }
        Cmd::Green { d, radius, out } => {
            let start = Instant::now();
            let gf = compute_green(d, radius)?;
            if let Some(p) = &out {
                if p.extension().is_some_and(|e| e == "idlg") {
                    gf.save(p)?;
                } else {
                    gf.write_csv(create(p)?)?;
                }
            }
            let fit = gf.fit_a_d((radius as f64 / 8.0).max(2.0), radius as f64 / 2.0).ok();
            Ok(json!({
                "d": d,
                "R": radius,
                "g0": gf.g0(),
                "a_d": gf.a_d(),
                "a_d_fit": fit,
                "residual": gf.residual(),
                "runtime_s": start.elapsed().as_secs_f64(),
            }))
        }
        Cmd::Harmonic { y, k, audit: full, m, out } => {
            let hf = solve_p(&Site::new(y), k)?;
            if let Some(p) = &out {
                hf.write_csv(create(p)?)?;
            }
            if full {
                Ok(serde_json::to_value(audit(&hf, m)?)?)
            } else {
                Ok(json!({
                    "y": hf.y().coords(),
                    "k": k,
                    "s": hf.s(),
                    "p0": hf.p0(),
                    "residual": hf.residual(),
                    "sweeps": hf.sweeps(),
                }))
            }
        }
        Cmd::Sandpile { d, r, check_mvp, out } => {
            let sw = divisible_sandpile(d, r)?;
            if let Some(p) = &out {
                sw.w.write_csv(create(p)?)?;
            }
            let mvp = if check_mvp {
                let pole = r.ceil() as i32 + 3;
                let gf = compute_green(d, 2 * pole + 2)?;
                let u = Translated {
                    inner: &gf,
                    shift: Site::axis(d, 0, pole).coords().to_vec(),
                };
                Some(mean_value_residual(&sw, &u)?)
            } else {
                None
            };
            Ok(json!({
                "d": d,
                "r": r,
                "mass": sw.mass,
                "total": sw.total(),
                "c_inner": sw.c_inner,
                "max_excess": sw.max_excess,
                "sweeps": sw.sweeps,
                "mean_value_residual": mvp,
            }))
        }
        Cmd::Martingale {
            y,
            k,
            runs,
            schedule: spec,
            seed,
            trace_out,
        } => {
            let hf = solve_p(&Site::new(y), k)?;
            let (t1, sched) = parse_schedule(&spec, hf.s(), k, hf.dim(), hf.p0())?;
            let traces = run_martingales(&hf, t1, runs, seed)?;
            if let (Some(p), Some(tr)) = (&trace_out, traces.first()) {
                tr.write_csv(create(p)?)?;
            }
            let m_sum: f64 = traces.iter().map(|t| t.terminal_m()).sum();
            let s_sum: f64 = traces.iter().map(|t| t.terminal_shat()).sum();
            let z = m_sum / s_sum.sqrt();
            let norm: Vec<f64> = traces
                .iter()
                .map(|t| t.normalized_terminal())
                .filter(|v| v.is_finite())
                .collect();
            let ks = (!norm.is_empty()).then(|| {
                let dist = ks_statistic(&norm, normal_cdf);
                json!({ "statistic": dist, "p_value": ks_p_value(dist, norm.len()), "n": norm.len() })
            });
            let shat: Vec<f64> = traces.iter().map(|t| t.terminal_shat()).collect();
            Ok(json!({
                "p0": hf.p0(),
                "t1": t1,
                "schedule": sched,
                "runs": runs,
                "mean_zero": { "z": z, "p_value": z_p_value(z) },
                "ks_normal": ks,
                "shat_median": (!shat.is_empty()).then(|| median(&shat)),
                "shat_p95": (!shat.is_empty()).then(|| quantile(&shat, 0.95)),
                "absorbed_at_y": traces.iter().map(|t| t.absorbed_at_y).sum::<u64>(),
            }))
        }
        Cmd::Schedule { t, c } => {
            let s = iteration_schedule(t, c)?;
            let ok = s.l_final() <= s.terminal_bound * 1.01;
            Ok(json!({ "schedule": s, "l_final": s.l_final(), "terminal_bound_holds": ok }))
        }
        Cmd::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let res = sweep(&cfg)?;
            res.write_outputs(&cfg.output)?;
            Ok(serde_json::to_value(&res.summary)?)
        }
    }
}

/// A plain particle count, `early[:r=..,m=..]` or `late:l=..,m=..`. The
/// early defaults are `m = s/4` and `r = s - 2m`.
fn parse_schedule(spec: &str, s: f64, k: u32, d: usize, p0: f64) -> Result<(u64, Value)> {
    if let Ok(t) = spec.trim().parse::<u64>() {
        return Ok((t, json!({ "t1": t })));
    }
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut r = None;
    let mut m = None;
    let mut l = None;
    for kv in rest.split(',').filter(|p| !p.is_empty()) {
        let (key, val) = kv
            .split_once('=')
            .ok_or_else(|| IdlaError::InvalidParameter(format!("bad schedule field {kv:?}")))?;
        let v: f64 = val
            .parse()
            .map_err(|_| IdlaError::InvalidParameter(format!("bad number {val:?}")))?;
        match key.trim() {
            "r" => r = Some(v),
            "m" => m = Some(v),
            "l" => l = Some(v),
            other => return Err(IdlaError::InvalidParameter(format!("unknown schedule field {other:?}"))),
        }
    }
    let kind = match name.trim() {
        "early" => {
            let m = m.unwrap_or(s / 4.0);
            ScheduleKind::EarlyPoint { r: r.unwrap_or(s - 2.0 * m), m }
        }
        "late" => ScheduleKind::LatePoint {
            s,
            k: k as f64,
            l: l.unwrap_or(1.0),
            m: m.unwrap_or(1.0),
        },
        other => return Err(IdlaError::InvalidParameter(format!("unknown schedule {other:?}"))),
    };
    let sched = schedule(kind, d, p0)?;
    Ok((sched.t1, json!({ "kind": kind, "diagnostic": sched })))
}
