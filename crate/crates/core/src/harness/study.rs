//! Monte-Carlo MISE studies over a sweep of grid sizes.

use super::{Experiment, ExperimentConfig};
use crate::error::{invalid, Error, Result};
use crate::estimator::{build_h_hat, pi_bar, RegularizationParams};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

pub const MISE_HEADER: &str = "n,t,mise,stderr,beta,rho,q,theory_order";
pub const SLOPES_HEADER: &str = "t,slope,slope_se,theory_exponent";
const SCHEMA: &str = "v1";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StudyOptions {
    /// Run replicates one after another on the calling thread.
    pub sequential: bool,
    /// Worker cap for the parallel mode.
    pub threads: Option<usize>,
}

impl StudyOptions {
    /// Parallel mode, capped by `BACKPAR_THREADS` when set.
    pub fn from_env() -> Self {
        let threads = std::env::var("BACKPAR_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&k| k > 0);
        Self {
            sequential: false,
            threads,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiseEntry {
    /// `prod n_k`.
    pub n: usize,
    pub sizes: Vec<usize>,
    pub t: f64,
    pub mise: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub failures: usize,
    pub beta: f64,
    pub rho: f64,
    pub q: f64,
    pub theory_order: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiseReport {
    pub entries: Vec<MiseEntry>,
    pub estimator_only: bool,
    pub seed: u64,
    /// Oracle tail mass outside the resolved span (see `ForwardSolution`).
    pub oracle_tail: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeEntry {
    pub t: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub theory_exponent: f64,
}

/// Order-of-magnitude prediction for the error at time `t` on grid `sizes`
/// (constants dropped).
pub fn theory_order(
    cfg: &ExperimentConfig,
    params: &RegularizationParams,
    sizes: &[usize],
    t: f64,
) -> f64 {
    let d = sizes.len() as f64;
    let big_n: f64 = sizes.iter().map(|&n| n as f64).product();
    let a0 = cfg.tuning.alpha0;
    let horizon = cfg.horizon;
    if cfg.estimator_only {
        let first: f64 = sizes
            .iter()
            .zip(cfg.smoothness.mu.iter().cycle())
            .map(|(&n, &mu)| (n as f64).powf(-4.0 * mu))
            .product::<f64>()
            * params.beta_n.powf(d / 2.0);
        return first.max(params.beta_n.powf(-cfg.smoothness.mu0));
    }
    let decay = big_n.powf(-4.0 * a0 * t / (4.0 * horizon * a0 + d * horizon));
    match params.pi_bar {
        Some(pi) => {
            let e = 1.0 - (1.0 - params.delta0) * (horizon - t) / horizon;
            pi.powf(e) * decay
        }
        None => pi_bar(sizes, horizon, &cfg.smoothness, a0) * decay,
    }
}

/// Runs the study configured by `cfg` with options from the environment.
pub fn mise_study(cfg: &ExperimentConfig) -> Result<MiseReport> {
    mise_study_with(cfg, &StudyOptions::from_env())
}

pub fn mise_study_with(cfg: &ExperimentConfig, opts: &StudyOptions) -> Result<MiseReport> {
    let run = || -> Result<MiseReport> {
        let exp = Experiment::new(cfg.clone())?;
        run_study(&exp, opts.sequential)
    };
    if opts.sequential {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Numerical(e.to_string()))?;
        pool.install(run)
    } else if let Some(k) = opts.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Numerical(e.to_string()))?;
        pool.install(run)
    } else {
        run()
    }
}

/// Squared errors of one replicate at each report time.
fn replicate(
    exp: &Experiment,
    n: usize,
    n_index: usize,
    r: usize,
    params: &RegularizationParams,
    times: &[f64],
) -> Result<Vec<f64>> {
    let obs = exp.observe(n, exp.replicate_seed(n_index, r))?;
    if exp.cfg.estimator_only {
        let h_hat = build_h_hat(&obs, params.beta_n)?;
        return Ok(vec![h_hat.distance_sq(exp.oracle.terminal())]);
    }
    let rec = exp.reconstruct(&obs, params)?;
    let traj = rec.trajectory();
    times
        .iter()
        .map(|&t| {
            let est = traj
                .at(t, 1e-9 * (1.0 + t))
                .ok_or_else(|| invalid(format!("time {t} missing from the reconstruction")))?;
            Ok(est.distance_sq(exp.oracle.at(t)?))
        })
        .collect()
}

fn run_study(exp: &Experiment, sequential: bool) -> Result<MiseReport> {
    let cfg = &exp.cfg;
    let times = if cfg.estimator_only {
        vec![cfg.horizon]
    } else {
        cfg.report_times()
    };
    let mut entries = Vec::new();
    for (n_index, &n) in cfg.grid_sizes.iter().enumerate() {
        let sizes = cfg.sizes(n);
        let params = exp.parameters(n)?;
        log::info!(
            "n = {n}: beta = {:.4}, rho = {:.4}, q = {}",
            params.beta_n,
            params.rho_n,
            params.q_n
        );
        let job = |r: usize| replicate(exp, n, n_index, r, &params, &times);
        let results: Vec<Result<Vec<f64>>> = if sequential {
            (0..cfg.replicates).map(job).collect()
        } else {
            (0..cfg.replicates).into_par_iter().map(job).collect()
        };
        let mut ok = Vec::with_capacity(results.len());
        let mut first_error = None;
        for res in results {
            match res {
                Ok(v) => ok.push(v),
                Err(e) => {
                    log::warn!("replicate failed at n = {n}: {e}");
                    first_error.get_or_insert(e);
                }
            }
        }
        let failures = cfg.replicates - ok.len();
        if failures * 5 > cfg.replicates || ok.is_empty() {
            return Err(Error::Numerical(format!(
                "{failures} of {} replicates failed at n = {n}; first error: {}",
                cfg.replicates,
                first_error.map(|e| e.to_string()).unwrap_or_default()
            )));
        }
        let k = ok.len() as f64;
        for (ti, &t) in times.iter().enumerate() {
            // sequential sums in replicate order keep the result independent
            // of the thread count
            let mean = ok.iter().map(|v| v[ti]).sum::<f64>() / k;
            let var = if ok.len() > 1 {
                ok.iter().map(|v| (v[ti] - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            entries.push(MiseEntry {
                n: sizes.iter().product(),
                sizes: sizes.clone(),
                t,
                mise: mean,
                stderr: (var / k).sqrt(),
                replicates: ok.len(),
                failures,
                beta: params.beta_n,
                rho: params.rho_n,
                q: params.q_n,
                theory_order: theory_order(cfg, &params, &sizes, t),
            });
        }
    }
    entries.sort_by(|a, b| a.n.cmp(&b.n).then(a.t.total_cmp(&b.t)));
    Ok(MiseReport {
        entries,
        estimator_only: cfg.estimator_only,
        seed: cfg.seed,
        oracle_tail: exp.oracle.tail,
    })
}

/// Least-squares slope and its standard error.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = if x.len() > 2 {
        (ssr / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, se)
}

/// Per report time, the log-log slope of MISE against `prod n_k` and the
/// slope of the theoretical order.
pub fn convergence_slopes(report: &MiseReport) -> Result<Vec<SlopeEntry>> {
    let mut times: Vec<f64> = Vec::new();
    for e in &report.entries {
        if !times.contains(&e.t) {
            times.push(e.t);
        }
    }
    times.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for t in times {
        let rows: Vec<&MiseEntry> = report.entries.iter().filter(|e| e.t == t).collect();
        if rows.len() < 3 {
            return Err(invalid(format!(
                "slope at t = {t} needs at least 3 grid sizes, got {}",
                rows.len()
            )));
        }
        let x: Vec<f64> = rows.iter().map(|e| (e.n as f64).ln()).collect();
        let (slope, slope_se) = if rows.iter().all(|e| e.mise > 0.0) {
            let y: Vec<f64> = rows.iter().map(|e| e.mise.ln()).collect();
            ols(&x, &y)
        } else {
            (f64::NAN, f64::NAN)
        };
        let theory: Vec<f64> = rows.iter().map(|e| e.theory_order.ln()).collect();
        out.push(SlopeEntry {
            t,
            slope,
            slope_se,
            theory_exponent: ols(&x, &theory).0,
        });
    }
    Ok(out)
}

impl MiseReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# backpar mise.csv schema {SCHEMA}")?;
        writeln!(w, "{MISE_HEADER}")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                e.n, e.t, e.mise, e.stderr, e.beta, e.rho, e.q, e.theory_order
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

pub fn write_slopes_csv<W: Write>(slopes: &[SlopeEntry], mut w: W) -> Result<()> {
    writeln!(w, "# backpar slopes.csv schema {SCHEMA}")?;
    writeln!(w, "{SLOPES_HEADER}")?;
    for s in slopes {
        writeln!(
            w,
            "{},{},{},{}",
            s.t, s.slope, s.slope_se, s.theory_exponent
        )?;
    }
    Ok(())
}

/// Writes `mise.csv`, `slopes.csv` (when at least three sizes were run) and
/// `report.json` into `dir`.
pub fn write_study_outputs(report: &MiseReport, dir: &Path) -> Result<Option<Vec<SlopeEntry>>> {
    std::fs::create_dir_all(dir)?;
    report.write_csv(std::fs::File::create(dir.join("mise.csv"))?)?;
    let slopes = convergence_slopes(report).ok();
    if let Some(s) = &slopes {
        write_slopes_csv(s, std::fs::File::create(dir.join("slopes.csv"))?)?;
    }
    let json = serde_json::json!({ "report": report, "slopes": slopes });
    serde_json::to_writer_pretty(std::fs::File::create(dir.join("report.json"))?, &json)?;
    Ok(slopes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(n: usize, t: f64, mise: f64) -> MiseEntry {
        MiseEntry {
            n,
            sizes: vec![n],
            t,
            mise,
            stderr: 0.0,
            replicates: 1,
            failures: 0,
            beta: 1.0,
            rho: 1.0,
            q: f64::INFINITY,
            theory_order: (n as f64).powf(-0.5),
        }
    }

    fn report(f: impl Fn(usize) -> f64) -> MiseReport {
        MiseReport {
            entries: [8, 16, 32, 64]
                .iter()
                .map(|&n| entry(n, 0.0, f(n)))
                .collect(),
            estimator_only: false,
            seed: 0,
            oracle_tail: 0.0,
        }
    }

    #[test]
    fn exact_power_law() {
        let s = convergence_slopes(&report(|n| 3.0 / n as f64)).unwrap();
        assert!((s[0].slope + 1.0).abs() < 1e-12);
        assert!(s[0].slope_se < 1e-12);
        assert!((s[0].theory_exponent + 0.5).abs() < 1e-12);
        let flat = convergence_slopes(&report(|_| 0.2)).unwrap();
        assert!(flat[0].slope.abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let mut r = report(|n| 1.0 / n as f64);
        r.entries.truncate(2);
        assert!(matches!(
            convergence_slopes(&r),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn ols_standard_error() {
        // y = 2x + noise with known residuals
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.1, 1.9, 4.1, 5.9];
        let (b, se) = ols(&x, &y);
        assert!((b - 1.96).abs() < 1e-12);
        let a = 3.0 - 1.5 * b;
        let ssr: f64 = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| (yi - a - b * xi).powi(2))
            .sum();
        assert!((se - (ssr / 2.0 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let r = report(|n| 1.0 / n as f64);
        let text = r.csv_string();
        let mut lines = text.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("# backpar mise.csv schema"));
        assert_eq!(lines.next().unwrap(), MISE_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            format!("8,0,0.125,0,1,1,inf,{}", 8f64.powf(-0.5))
        );
    }
}
