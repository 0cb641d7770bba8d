//! Penalty sweeps, rate fits and report files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bsde::{backward_pass, RegressionBasis, Scenario};
use crate::error::{Error, Result};
use crate::penalty::{CauchyAccumulator, MetricsAccumulator, PenaltyLevel, PenaltyMetrics};
use crate::stats::{mean, std_dev, Estimate};

pub const SCHEMA_VERSION: u32 = 1;
/// Points closer to zero than this many standard errors are not fitted.
pub const FLOOR_FACTOR: f64 = 10.0;
pub const MIN_REPLICATIONS: usize = 3;

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub scenario: Scenario,
    pub basis: RegressionBasis,
    pub n_list: Vec<PenaltyLevel>,
    pub paths: usize,
    pub replications: usize,
    pub seed_base: u64,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "penalty levels must be strictly increasing".into(),
            ));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::Config(format!(
                "a sweep needs at least {MIN_REPLICATIONS} replications, got {}",
                self.replications
            )));
        }
        if self.paths == 0 {
            return Err(Error::Config("a sweep needs at least one path".into()));
        }
        Ok(())
    }

    /// Seed of replication `r`.
    pub fn seed(&self, r: usize) -> u64 {
        self.seed_base.wrapping_add(r as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub n: u64,
    pub sup_dist_sq: Estimate,
    pub int_dist_sq: Estimate,
    pub tv_lambda: Estimate,
    pub sup_y_sq: Estimate,
}

/// Paired gap `E[sup_k |Y^n_k - Y^m_k|^2]` between consecutive levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    pub n: u64,
    pub m: u64,
    pub cauchy_sq: Estimate,
}

/// Log-log least-squares fit `ln v = intercept + slope ln n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Twice the standard error of the slope.
    pub half_width: f64,
    /// The `n` values that entered the fit.
    pub used: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub schema_version: u32,
    pub scenario: String,
    pub steps: usize,
    pub horizon: f64,
    pub paths: usize,
    pub replications: usize,
    pub seed_base: u64,
    pub basis: RegressionBasis,
    pub n_list: Vec<u64>,
    pub levels: Vec<LevelReport>,
    pub cauchy: Vec<CauchyReport>,
    pub slope_sup: Option<RateFit>,
    pub slope_int: Option<RateFit>,
    pub slope_cauchy: Option<RateFit>,
    pub complete: bool,
    pub failure: Option<String>,
}

/// A sweep that stopped early; `partial` holds what finished.
#[derive(Debug)]
pub struct SweepError {
    pub partial: Box<RateReport>,
    pub source: Error,
}

impl std::fmt::Display for SweepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sweep aborted: {}", self.source)
    }
}

impl std::error::Error for SweepError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

struct Replicate {
    levels: Vec<PenaltyMetrics>,
    cauchy: Vec<Estimate>,
}

fn run_replicate(plan: &SweepPlan, seed: u64) -> Result<Replicate> {
    let sc = &plan.scenario;
    let (m, d) = (plan.paths, sc.dim());
    let bundle = sc.simulate(m, seed)?;
    let penalties: Vec<Option<f64>> = plan.n_list.iter().map(|n| Some(n.as_f64())).collect();
    let levels = penalties.len();
    let mut metrics: Vec<MetricsAccumulator> = (0..levels)
        .map(|_| MetricsAccumulator::new(m, d, sc.grid.dt()))
        .collect();
    let mut cauchy: Vec<CauchyAccumulator> =
        (1..levels).map(|_| CauchyAccumulator::new(m, d)).collect();
    let mut prev = vec![0.0; m * d];
    backward_pass(sc, &bundle, plan.basis, &penalties, |l, view| {
        metrics[l].observe(&sc.tube, view)?;
        if l > 0 {
            cauchy[l - 1].observe(&prev, view.y);
        }
        prev.copy_from_slice(view.y);
        Ok(())
    })?;
    Ok(Replicate {
        levels: metrics.iter().map(MetricsAccumulator::finish).collect(),
        cauchy: cauchy.iter().map(CauchyAccumulator::finish).collect(),
    })
}

/// Mean of replicate means, with the spread of replicate means as error bar.
fn pool(values: &[Estimate]) -> Estimate {
    let means: Vec<f64> = values.iter().map(|e| e.estimate).collect();
    match means.len() {
        0 => Estimate::default(),
        1 => values[0],
        r => Estimate {
            estimate: mean(&means),
            stderr: std_dev(&means) / (r as f64).sqrt(),
        },
    }
}

fn assemble(plan: &SweepPlan, reps: &[Replicate]) -> RateReport {
    let n_list: Vec<u64> = plan.n_list.iter().map(|n| n.get()).collect();
    let mut levels = Vec::new();
    let mut cauchy = Vec::new();
    if !reps.is_empty() {
        for (l, &n) in n_list.iter().enumerate() {
            let pick = |f: fn(&PenaltyMetrics) -> Estimate| {
                pool(&reps.iter().map(|r| f(&r.levels[l])).collect::<Vec<_>>())
            };
            levels.push(LevelReport {
                n,
                sup_dist_sq: pick(|m| m.sup_dist_sq),
                int_dist_sq: pick(|m| m.int_dist_sq),
                tv_lambda: pick(|m| m.tv_lambda),
                sup_y_sq: pick(|m| m.sup_y_sq),
            });
        }
        for l in 1..n_list.len() {
            cauchy.push(CauchyReport {
                n: n_list[l - 1],
                m: n_list[l],
                cauchy_sq: pool(&reps.iter().map(|r| r.cauchy[l - 1]).collect::<Vec<_>>()),
            });
        }
    }
    let series = |f: &dyn Fn(&LevelReport) -> Estimate| {
        levels
            .iter()
            .map(|lv| (lv.n as f64, f(lv)))
            .collect::<Vec<_>>()
    };
    let slope_sup = fit_rate_above_floor(&series(&|lv| lv.sup_dist_sq));
    let slope_int = fit_rate_above_floor(&series(&|lv| lv.int_dist_sq));
    let slope_cauchy = fit_rate_above_floor(
        &cauchy
            .iter()
            .map(|c| (c.n as f64, c.cauchy_sq))
            .collect::<Vec<_>>(),
    );
    RateReport {
        schema_version: SCHEMA_VERSION,
        scenario: plan.scenario.name.clone(),
        steps: plan.scenario.grid.steps(),
        horizon: plan.scenario.grid.horizon(),
        paths: plan.paths,
        replications: plan.replications,
        seed_base: plan.seed_base,
        basis: plan.basis,
        n_list,
        levels,
        cauchy,
        slope_sup,
        slope_int,
        slope_cauchy,
        complete: reps.len() == plan.replications,
        failure: None,
    }
}

/// Solves every penalty level on the same bundles (one per replication) and
/// fits the decay rates of the error functionals.
pub fn run_sweep(plan: &SweepPlan) -> std::result::Result<RateReport, SweepError> {
    let fail = |reps: &[Replicate], e: Error| {
        let mut partial = assemble(plan, reps);
        partial.complete = false;
        partial.failure = Some(e.to_string());
        SweepError {
            partial: Box::new(partial),
            source: e,
        }
    };
    if let Err(e) = plan.validate() {
        return Err(fail(&[], e));
    }
    let mut reps = Vec::with_capacity(plan.replications);
    for r in 0..plan.replications {
        match run_replicate(plan, plan.seed(r)) {
            Ok(rep) => reps.push(rep),
            Err(e) => return Err(fail(&reps, e)),
        }
    }
    Ok(assemble(plan, &reps))
}

/// Ordinary least squares on `(ln n, ln value)` over all points; `None`
/// with fewer than three positive finite points.
pub fn fit_rate(points: &[(f64, f64)]) -> Option<RateFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, v)| *n > 0.0 && *v > 0.0 && v.is_finite())
        .map(|&(n, v)| (n.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = (rss / (k - 2.0) / sxx).sqrt();
    Some(RateFit {
        slope,
        intercept,
        half_width: 2.0 * se,
        used: points
            .iter()
            .filter(|(n, v)| *n > 0.0 && *v > 0.0 && v.is_finite())
            .map(|p| p.0)
            .collect(),
    })
}

/// [`fit_rate`] over the longest run of consecutive points whose value
/// exceeds `FLOOR_FACTOR` standard errors (earliest run on ties).
pub fn fit_rate_above_floor(points: &[(f64, Estimate)]) -> Option<RateFit> {
    let usable = |e: &Estimate| e.estimate > 0.0 && e.estimate > FLOOR_FACTOR * e.stderr;
    let (mut best, mut start) = ((0, 0), 0);
    for i in 0..=points.len() {
        if i == points.len() || !usable(&points[i].1) {
            if i - start > best.1 - best.0 {
                best = (start, i);
            }
            start = i + 1;
        }
    }
    let run: Vec<(f64, f64)> = points[best.0..best.1]
        .iter()
        .map(|(n, e)| (*n, e.estimate))
        .collect();
    fit_rate(&run)
}

const METRICS: [&str; 4] = ["sup_dist_sq", "int_dist_sq", "tv_lambda", "sup_y_sq"];

fn metric(level: &LevelReport, name: &str) -> Estimate {
    match name {
        "sup_dist_sq" => level.sup_dist_sq,
        "int_dist_sq" => level.int_dist_sq,
        "tv_lambda" => level.tv_lambda,
        _ => level.sup_y_sq,
    }
}

/// Writes `report.json`, `metrics.csv` and `plotdata/<metric>.dat` into `out_dir`.
pub fn emit_report(report: &RateReport, out_dir: &Path) -> Result<()> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(&p, e)
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let json_path = out_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    fs::write(&json_path, json).map_err(io(&json_path))?;

    let csv_path = out_dir.join("metrics.csv");
    let mut csv = String::from("n,metric,estimate,stderr\n");
    for lv in &report.levels {
        for name in METRICS {
            let e = metric(lv, name);
            csv.push_str(&format!("{},{name},{},{}\n", lv.n, e.estimate, e.stderr));
        }
    }
    fs::write(&csv_path, csv).map_err(io(&csv_path))?;

    let plot_dir = out_dir.join("plotdata");
    fs::create_dir_all(&plot_dir).map_err(io(&plot_dir))?;
    let mut series: Vec<(&str, Vec<(f64, f64)>)> = METRICS
        .iter()
        .map(|&name| {
            let pts = report
                .levels
                .iter()
                .map(|lv| (lv.n as f64, metric(lv, name).estimate))
                .collect();
            (name, pts)
        })
        .collect();
    series.push((
        "cauchy_sq",
        report
            .cauchy
            .iter()
            .map(|c| (c.n as f64, c.cauchy_sq.estimate))
            .collect(),
    ));
    for (name, pts) in series {
        let path = plot_dir.join(format!("{name}.dat"));
        let mut f = fs::File::create(&path).map_err(io(&path))?;
        writeln!(f, "# log10(n) log10({name})").map_err(io(&path))?;
        for (n, v) in pts.into_iter().filter(|(_, v)| *v > 0.0) {
            writeln!(f, "{} {}", n.log10(), v.log10()).map_err(io(&path))?;
        }
    }
    Ok(())
}
