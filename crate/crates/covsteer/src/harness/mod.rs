//! Multi-seed, multi-method experiment runner: coverage curves,
//! tests-to-goal tables with savings versus random selection, and
//! net-savings estimates.

mod stats;
mod svg;

pub use stats::{iqr, mean, median, sign_test_p, tests_to_goal_interpolated};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duvsim::DuvParams;
use crate::seloop::{self, LoopConfig, LoopError, RunHistory};
use crate::selectors::Method;
use crate::stimgen::{self, ProfileName, StimgenError, Test};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Stimgen(#[from] StimgenError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// How the shared corpus is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_tests: usize,
    pub mix: BTreeMap<ProfileName, f64>,
    pub len_range: (usize, usize),
}

impl Default for CorpusSpec {
    fn default() -> Self {
        let mut mix = BTreeMap::new();
        mix.insert(ProfileName::Uniform, 0.78);
        mix.insert(ProfileName::Bursty, 0.11);
        mix.insert(ProfileName::SparsePacing, 0.11);
        CorpusSpec { seed: 1, n_tests: 2000, mix, len_range: (60, 100) }
    }
}

/// Everything one experiment needs: methods, paired seeds, corpus and DUV
/// parameters, loop knobs, and the per-test simulation cost used for the
/// net-savings estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub base_seed: u64,
    /// Explicit seed list; overrides `base_seed..base_seed+repeats`.
    pub seeds: Option<Vec<u64>>,
    pub corpus: CorpusSpec,
    pub duv: DuvParams,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub per_test_sim_minutes: f64,
    /// Worker threads; None uses all cores. 1 guarantees byte-reproducible
    /// output ordering (runs are deterministic either way).
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: Method::ALL.to_vec(),
            repeats: 10,
            base_seed: 42,
            seeds: None,
            corpus: CorpusSpec::default(),
            duv: DuvParams::default(),
            loop_config: LoopConfig::default(),
            per_test_sim_minutes: 12.0,
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.repeats as u64).map(|i| self.base_seed + i).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.methods.is_empty() {
            return Err(HarnessError::Config("methods list is empty".into()));
        }
        if self.repeats < 1 {
            return Err(HarnessError::Config("repeats must be >= 1".into()));
        }
        if self.seeds().is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        if self.per_test_sim_minutes < 0.0 {
            return Err(HarnessError::Config("per_test_sim_minutes must be >= 0".into()));
        }
        self.loop_config.validate()?;
        Ok(())
    }
}

/// Net saved hours: simulation time freed by skipping tests minus the
/// selector's own compute.
pub fn net_savings(saved_tests: f64, per_test_minutes: f64, selector_hours: f64) -> f64 {
    saved_tests * per_test_minutes / 60.0 - selector_hours
}

/// One aggregated row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub method: Method,
    pub goal: f64,
    /// Seeds that reached the goal / seeds that did not.
    pub reached: usize,
    pub not_reached: usize,
    /// Mean over reached seeds of the raw checkpoint count.
    pub mean_raw: Option<f64>,
    /// Mean/median/IQR over reached seeds of the interpolated count.
    pub mean_interp: Option<f64>,
    pub median_interp: Option<f64>,
    pub iqr_interp: Option<f64>,
    /// Versus RD mean (interpolated): absolute tests saved and percent.
    pub savings_abs: Option<f64>,
    pub savings_pct: Option<f64>,
    /// Paired-seed wins vs RD and the one-sided sign-test p-value.
    pub sign_wins: Option<usize>,
    pub sign_pairs: Option<usize>,
    pub sign_p: Option<f64>,
    /// Mean wall-clock selector hours up to the goal (measured, excluded
    /// from the deterministic table file).
    pub selector_hours: f64,
    pub net_savings_hours: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub goals: Vec<f64>,
    pub rows: Vec<TableRow>,
}

/// Outputs of one experiment run.
pub struct ExperimentOutputs {
    pub table: ResultTable,
    pub histories: Vec<RunHistory>,
    pub out_dir: PathBuf,
}

fn selector_hours_at_goal(history: &RunHistory, goal: f64) -> Option<f64> {
    history
        .iterations
        .iter()
        .find(|it| it.coverage_percent >= goal)
        .map(|it| it.selector_seconds_cum / 3600.0)
}

/// Aggregates run histories into the per-method, per-goal comparison table.
pub fn build_table(
    histories: &[RunHistory],
    goals: &[f64],
    per_test_minutes: f64,
) -> ResultTable {
    let mut by_method: BTreeMap<Method, Vec<&RunHistory>> = BTreeMap::new();
    for h in histories {
        by_method.entry(h.method).or_default().push(h);
    }
    for runs in by_method.values_mut() {
        runs.sort_by_key(|h| h.seed);
    }

    let interp = |h: &RunHistory, goal: f64| h.interpolated_tests_to_goal(goal);
    let raw = |h: &RunHistory, goal: f64| {
        h.iterations
            .iter()
            .find(|it| it.coverage_percent >= goal)
            .map(|it| it.tests_simulated as f64)
    };

    let mut rows = Vec::new();
    for goal in goals {
        let rd_runs = by_method.get(&Method::Rd);
        let rd_interp: Vec<Option<f64>> = rd_runs
            .map(|runs| runs.iter().map(|h| interp(h, *goal)).collect())
            .unwrap_or_default();
        let rd_reached: Vec<f64> = rd_interp.iter().flatten().copied().collect();
        let rd_mean = if rd_reached.is_empty() { None } else { Some(mean(&rd_reached)) };

        for (method, runs) in &by_method {
            let interps: Vec<Option<f64>> = runs.iter().map(|h| interp(h, *goal)).collect();
            let reached_vals: Vec<f64> = interps.iter().flatten().copied().collect();
            let raws: Vec<f64> = runs.iter().filter_map(|h| raw(h, *goal)).collect();
            let hours: Vec<f64> =
                runs.iter().filter_map(|h| selector_hours_at_goal(h, *goal)).collect();
            let selector_hours = if hours.is_empty() { 0.0 } else { mean(&hours) };

            let mean_interp = if reached_vals.is_empty() { None } else { Some(mean(&reached_vals)) };
            let (savings_abs, savings_pct, net) = match (*method, rd_mean, mean_interp) {
                (Method::Rd, Some(rdm), Some(_)) => {
                    let _ = rdm;
                    (Some(0.0), Some(0.0), Some(net_savings(0.0, per_test_minutes, selector_hours)))
                }
                (_, Some(rdm), Some(m)) => {
                    let abs = rdm - m;
                    (
                        Some(abs),
                        Some(100.0 * abs / rdm),
                        Some(net_savings(abs, per_test_minutes, selector_hours)),
                    )
                }
                _ => (None, None, None),
            };

            // Paired sign test vs RD: not-reached counts as +infinity; pairs
            // where both sides failed are dropped as ties.
            let (sign_wins, sign_pairs, sign_p) = match (rd_runs, *method) {
                (Some(_), m) if m != Method::Rd => {
                    let mut wins = 0usize;
                    let mut pairs = 0usize;
                    for (mi, ri) in interps.iter().zip(&rd_interp) {
                        match (mi, ri) {
                            (Some(mv), Some(rv)) => {
                                pairs += 1;
                                if mv < rv {
                                    wins += 1;
                                }
                            }
                            (Some(_), None) => {
                                pairs += 1;
                                wins += 1;
                            }
                            (None, Some(_)) => {
                                pairs += 1;
                            }
                            (None, None) => {}
                        }
                    }
                    (Some(wins), Some(pairs), Some(sign_test_p(wins, pairs)))
                }
                _ => (None, None, None),
            };

            rows.push(TableRow {
                method: *method,
                goal: *goal,
                reached: reached_vals.len(),
                not_reached: runs.len() - reached_vals.len(),
                mean_raw: if raws.is_empty() { None } else { Some(mean(&raws)) },
                mean_interp,
                median_interp: if reached_vals.is_empty() { None } else { Some(median(&reached_vals)) },
                iqr_interp: if reached_vals.is_empty() { None } else { Some(iqr(&reached_vals)) },
                savings_abs,
                savings_pct,
                sign_wins,
                sign_pairs,
                sign_p,
                selector_hours,
                net_savings_hours: net,
            });
        }
    }
    ResultTable { goals: goals.to_vec(), rows }
}

/// Mean coverage curve per method over the union checkpoint grid, carrying
/// each finished run's final coverage forward.
pub fn mean_curves(histories: &[RunHistory]) -> BTreeMap<Method, Vec<(u64, f64)>> {
    let mut by_method: BTreeMap<Method, Vec<&RunHistory>> = BTreeMap::new();
    for h in histories {
        by_method.entry(h.method).or_default().push(h);
    }
    let mut out = BTreeMap::new();
    for (method, runs) in by_method {
        let mut grid: Vec<u64> = runs
            .iter()
            .flat_map(|h| h.iterations.iter().map(|it| it.tests_simulated))
            .collect();
        grid.sort_unstable();
        grid.dedup();
        let curve: Vec<(u64, f64)> = grid
            .into_iter()
            .map(|x| {
                let vals: Vec<f64> = runs
                    .iter()
                    .map(|h| {
                        let mut cov = h.iterations.first().map_or(0.0, |it| it.coverage_percent);
                        for it in &h.iterations {
                            if it.tests_simulated <= x {
                                cov = it.coverage_percent;
                            }
                        }
                        cov
                    })
                    .collect();
                (x, mean(&vals))
            })
            .collect();
        out.insert(method, curve);
    }
    out
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) => format!("{x:.prec$}"),
        None => "".to_string(),
    }
}

/// Runs the full experiment and writes all artifacts under `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    verbose: bool,
) -> Result<ExperimentOutputs, HarnessError> {
    config.validate()?;
    fs::create_dir_all(out_dir.join("runs"))?;

    let corpus: Vec<Test> = stimgen::gen_corpus(
        config.corpus.seed,
        config.corpus.n_tests,
        &config.corpus.mix,
        &config.duv,
        config.corpus.len_range,
    )?;

    let seeds = config.seeds();
    let mut jobs_pairs: Vec<(Method, u64)> = Vec::new();
    for seed in &seeds {
        for method in &config.methods {
            jobs_pairs.push((*method, *seed));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;

    let results: Result<Vec<RunHistory>, LoopError> = pool.install(|| {
        jobs_pairs
            .par_iter()
            .map(|(method, seed)| {
                let progress = |iteration: usize, tests: u64, cov: f64| {
                    if verbose {
                        println!(
                            "[{} seed={seed}] iter {iteration}: {tests} tests, {cov:.2}% coverage",
                            method.as_str()
                        );
                    }
                };
                let (history, _) = seloop::run(
                    &corpus,
                    *method,
                    &config.duv,
                    &config.loop_config,
                    *seed,
                    progress,
                )?;
                Ok(history)
            })
            .collect()
    });
    let mut histories = results?;
    histories.sort_by(|a, b| a.method.cmp(&b.method).then(a.seed.cmp(&b.seed)));

    let table = build_table(&histories, &config.loop_config.goals, config.per_test_sim_minutes);
    write_outputs(config, &histories, &table, out_dir)?;

    Ok(ExperimentOutputs { table, histories, out_dir: out_dir.to_path_buf() })
}

fn write_outputs(
    config: &ExperimentConfig,
    histories: &[RunHistory],
    table: &ResultTable,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    // Resolved config echo.
    let mut resolved = config.clone();
    resolved.seeds = Some(config.seeds());
    fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(&resolved).unwrap())?;

    // Per-run histories, one iteration per line.
    for h in histories {
        let path = out_dir.join("runs").join(format!("{}_{}.jsonl", h.method.as_str(), h.seed));
        let mut f = fs::File::create(path)?;
        for it in &h.iterations {
            writeln!(f, "{}", serde_json::to_string(it).unwrap())?;
        }
    }

    // curves.csv: raw per-run checkpoints.
    let mut w = csv::Writer::from_path(out_dir.join("curves.csv"))?;
    w.write_record(["method", "seed", "tests", "coverage"])?;
    for h in histories {
        for it in &h.iterations {
            w.write_record([
                h.method.as_str().to_string(),
                h.seed.to_string(),
                it.tests_simulated.to_string(),
                format!("{:.6}", it.coverage_percent),
            ])?;
        }
    }
    w.flush()?;

    // table.csv: deterministic aggregate columns only.
    let mut w = csv::Writer::from_path(out_dir.join("table.csv"))?;
    w.write_record([
        "method",
        "goal",
        "reached",
        "not_reached",
        "mean_raw",
        "mean_interp",
        "median_interp",
        "iqr_interp",
        "savings_abs",
        "savings_pct",
        "sign_wins",
        "sign_pairs",
        "sign_p",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.method.as_str().to_string(),
            format!("{:.2}", r.goal),
            r.reached.to_string(),
            r.not_reached.to_string(),
            fmt_opt(r.mean_raw, 2),
            fmt_opt(r.mean_interp, 2),
            fmt_opt(r.median_interp, 2),
            fmt_opt(r.iqr_interp, 2),
            fmt_opt(r.savings_abs, 2),
            fmt_opt(r.savings_pct, 2),
            r.sign_wins.map(|v| v.to_string()).unwrap_or_default(),
            r.sign_pairs.map(|v| v.to_string()).unwrap_or_default(),
            fmt_opt(r.sign_p, 6),
        ])?;
    }
    w.flush()?;

    // timings.csv: wall-clock dependent columns.
    let mut w = csv::Writer::from_path(out_dir.join("timings.csv"))?;
    w.write_record(["method", "goal", "selector_hours", "net_savings_hours"])?;
    for r in &table.rows {
        w.write_record([
            r.method.as_str().to_string(),
            format!("{:.2}", r.goal),
            format!("{:.4}", r.selector_hours),
            fmt_opt(r.net_savings_hours, 2),
        ])?;
    }
    w.flush()?;

    // Chart and summary.
    let curves = mean_curves(histories);
    fs::write(
        out_dir.join("curves.svg"),
        svg::render_curves(&curves, "Coverage progress vs simulated tests"),
    )?;
    fs::write(out_dir.join("summary.md"), render_summary(config, table))?;
    Ok(())
}

fn render_summary(config: &ExperimentConfig, table: &ResultTable) -> String {
    let mut out = String::new();
    out.push_str("# Experiment summary\n\n");
    out.push_str(&format!(
        "- corpus: {} tests, seed {}, lengths {}..={}\n",
        config.corpus.n_tests, config.corpus.seed, config.corpus.len_range.0, config.corpus.len_range.1
    ));
    out.push_str(&format!(
        "- methods: {}; seeds: {:?}\n",
        config.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", "),
        config.seeds()
    ));
    out.push_str(&format!(
        "- warmup {}, batch {}, goals {:?}\n\n",
        config.loop_config.warmup, config.loop_config.batch, config.loop_config.goals
    ));
    out.push_str("Tests to reach each coverage goal (mean over seeds, interpolated; savings vs RD).\n");
    out.push_str("Not-reached runs are excluded from means and counted separately.\n\n");
    out.push_str(
        "| goal | method | reached | mean tests | median | IQR | savings | savings % | sign test p |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in &table.rows {
        out.push_str(&format!(
            "| {:.1} | {} | {}/{} | {} | {} | {} | {} | {} | {} |\n",
            r.goal,
            r.method.as_str(),
            r.reached,
            r.reached + r.not_reached,
            fmt_opt(r.mean_interp, 1),
            fmt_opt(r.median_interp, 1),
            fmt_opt(r.iqr_interp, 1),
            fmt_opt(r.savings_abs, 1),
            fmt_opt(r.savings_pct, 2),
            fmt_opt(r.sign_p, 4),
        ));
    }
    out.push_str("\nSelector compute time and net savings (wall-clock, see timings.csv):\n\n");
    out.push_str("| goal | method | selector hours | net savings hours |\n|---|---|---|---|\n");
    for r in &table.rows {
        out.push_str(&format!(
            "| {:.1} | {} | {:.4} | {} |\n",
            r.goal,
            r.method.as_str(),
            r.selector_hours,
            fmt_opt(r.net_savings_hours, 2),
        ));
    }
    out
}

/// Reads a curves.csv back into per-(method, seed) checkpoint lists.
pub fn read_curves(path: &Path) -> Result<BTreeMap<(Method, u64), Vec<(u64, f64)>>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<(Method, u64), Vec<(u64, f64)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let method: Method = record
            .get(0)
            .unwrap_or_default()
            .parse()
            .map_err(|e| HarnessError::Config(format!("curves.csv: {e}")))?;
        let seed: u64 = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e| HarnessError::Config(format!("curves.csv seed: {e}")))?;
        let tests: u64 = record
            .get(2)
            .unwrap_or_default()
            .parse()
            .map_err(|e| HarnessError::Config(format!("curves.csv tests: {e}")))?;
        let cov: f64 = record
            .get(3)
            .unwrap_or_default()
            .parse()
            .map_err(|e| HarnessError::Config(format!("curves.csv coverage: {e}")))?;
        out.entry((method, seed)).or_default().push((tests, cov));
    }
    Ok(out)
}

/// Recomputes mean interpolated tests-to-goal per method from a results
/// directory's curves.csv.
pub fn report_tests_to_goal(
    results_dir: &Path,
    goal: f64,
) -> Result<Vec<(Method, usize, Option<f64>)>, HarnessError> {
    let curves = read_curves(&results_dir.join("curves.csv"))?;
    let mut by_method: BTreeMap<Method, Vec<Option<f64>>> = BTreeMap::new();
    for ((method, _), points) in &curves {
        by_method
            .entry(*method)
            .or_default()
            .push(tests_to_goal_interpolated(points, goal));
    }
    Ok(by_method
        .into_iter()
        .map(|(m, vals)| {
            let reached: Vec<f64> = vals.iter().flatten().copied().collect();
            let mean_val = if reached.is_empty() { None } else { Some(mean(&reached)) };
            (m, reached.len(), mean_val)
        })
        .collect())
}
