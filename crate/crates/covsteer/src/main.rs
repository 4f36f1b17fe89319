//! `covsteer`: generate stimulus corpora, simulate them through the MiniSRI
//! crossbar model, run novelty-driven selection experiments, and report
//! coverage results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use covsteer::duvsim::{self, DuvParams};
use covsteer::encode;
use covsteer::harness::{self, ExperimentConfig};
use covsteer::selectors::{aggregate_test, build_selector, rank_random, rank_tests, Method};
use covsteer::seloop::warmup_draw;
use covsteer::stimgen::{self, ProfileName};

#[derive(Parser)]
#[command(
    name = "covsteer",
    version,
    about = "Novelty-driven test selection workbench for coverage closure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DuvArgs {
    /// Master count
    #[arg(long, default_value_t = 4)]
    masters: u8,
    /// Slave count
    #[arg(long, default_value_t = 4)]
    slaves: u8,
    /// Per-slave pipeline depth
    #[arg(long, default_value_t = 3)]
    depth: u8,
    /// Maximum per-beat wait cycles
    #[arg(long, default_value_t = 3)]
    max_wait: u8,
    /// Maximum burst length
    #[arg(long, default_value_t = 8)]
    max_burst: u8,
}

impl DuvArgs {
    fn params(&self) -> DuvParams {
        DuvParams {
            masters: self.masters,
            slaves: self.slaves,
            pipeline_depth: self.depth,
            max_wait: self.max_wait,
            max_burst: self.max_burst,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reproducible stimulus corpus (JSONL, one test per line)
    Gen {
        /// Corpus seed
        #[arg(long)]
        seed: u64,
        /// Number of tests
        #[arg(long)]
        n: usize,
        /// Profile mix, e.g. uniform=0.78,bursty=0.11,sparse=0.11
        #[arg(long, default_value = "uniform=0.78,bursty=0.11,sparse=0.11")]
        mix: String,
        /// Transactions per test as lo,hi
        #[arg(long, default_value = "60,100")]
        len_range: String,
        /// Output corpus path
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        duv: DuvArgs,
    },
    /// Simulate a corpus and emit coverage events per test
    Sim {
        /// Input corpus (JSONL)
        #[arg(long)]
        corpus: PathBuf,
        /// Output events file (JSONL)
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        duv: DuvArgs,
    },
    /// One selection round: train on simulated tests, rank the rest
    Select {
        /// Input corpus (JSONL)
        #[arg(long)]
        corpus: PathBuf,
        /// Selection method: RD, AE, IF, TE or LSTM
        #[arg(long)]
        method: String,
        /// JSON file with the already-simulated test ids
        #[arg(long, conflicts_with = "warmup")]
        simulated: Option<PathBuf>,
        /// Draw this many warm-up tests instead of reading --simulated
        #[arg(long)]
        warmup: Option<usize>,
        /// Batch size to select
        #[arg(long, default_value_t = 100)]
        batch: usize,
        /// Run seed
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output JSON with the ranked selection
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        duv: DuvArgs,
    },
    /// Run a multi-seed, multi-method experiment from a config file
    Exp {
        /// Experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (1 = byte-reproducible output, default all cores)
        #[arg(long)]
        jobs: Option<usize>,
        /// Suppress per-iteration progress lines
        #[arg(long)]
        quiet: bool,
    },
    /// Recompute tests-to-goal per method from a results directory
    Report {
        /// Results directory written by `exp`
        #[arg(long)]
        runs: PathBuf,
        /// Coverage goal in percent
        #[arg(long)]
        goal: f64,
    },
}

fn parse_mix(s: &str) -> Result<BTreeMap<ProfileName, f64>, String> {
    let mut mix = BTreeMap::new();
    for part in s.split(',') {
        let (name, frac) = part
            .split_once('=')
            .ok_or_else(|| format!("bad mix entry '{part}', expected name=fraction"))?;
        let profile: ProfileName = name.trim().parse().map_err(|e| format!("{e}"))?;
        let frac: f64 = frac.trim().parse().map_err(|e| format!("bad fraction '{frac}': {e}"))?;
        mix.insert(profile, frac);
    }
    Ok(mix)
}

fn parse_len_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("bad len range '{s}', expected lo,hi"))?;
    let lo = lo.trim().parse().map_err(|e| format!("bad length '{lo}': {e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("bad length '{hi}': {e}"))?;
    Ok((lo, hi))
}

/// Errors classified by exit code: usage errors exit 1, runtime errors 2.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> CliError {
        CliError::Usage(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

fn cmd_gen(
    seed: u64,
    n: usize,
    mix: &str,
    len_range: &str,
    out: &Path,
    params: &DuvParams,
) -> Result<(), CliError> {
    let mix = parse_mix(mix).map_err(CliError::Usage)?;
    let len_range = parse_len_range(len_range).map_err(CliError::Usage)?;
    let corpus = stimgen::gen_corpus(seed, n, &mix, params, len_range).map_err(CliError::usage)?;
    stimgen::save_corpus(&corpus, out).map_err(CliError::runtime)?;
    println!("wrote {} tests to {}", corpus.len(), out.display());
    Ok(())
}

fn cmd_sim(corpus_path: &Path, out: &Path, params: &DuvParams) -> Result<(), CliError> {
    let corpus = stimgen::load_corpus(corpus_path).map_err(CliError::usage)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(out).map_err(CliError::runtime)?);
    use std::io::Write;
    for test in &corpus {
        let trace = duvsim::simulate(test, params).map_err(CliError::runtime)?;
        let events: Vec<String> = duvsim::coverage_events(&trace, test, params)
            .iter()
            .map(|e| e.to_string())
            .collect();
        let line = serde_json::json!({"test_id": test.test_id, "events": events});
        writeln!(file, "{line}").map_err(CliError::runtime)?;
    }
    file.flush().map_err(CliError::runtime)?;
    println!("wrote events for {} tests to {}", corpus.len(), out.display());
    Ok(())
}

fn cmd_select(
    corpus_path: &Path,
    method: &str,
    simulated: Option<&Path>,
    warmup: Option<usize>,
    batch: usize,
    seed: u64,
    out: &Path,
    params: &DuvParams,
) -> Result<(), CliError> {
    let method: Method = method.parse().map_err(CliError::usage)?;
    let corpus = stimgen::load_corpus(corpus_path).map_err(CliError::usage)?;
    let simulated_ids: Vec<u64> = match (simulated, warmup) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad simulated-id list: {e}")))?
        }
        (None, Some(n)) => warmup_draw(&corpus, n.min(corpus.len()), seed),
        (None, None) => {
            return Err(CliError::Usage("select requires --simulated or --warmup".into()));
        }
    };
    let simulated_set: std::collections::BTreeSet<u64> = simulated_ids.iter().copied().collect();
    let remaining: Vec<&stimgen::Test> =
        corpus.iter().filter(|t| !simulated_set.contains(&t.test_id)).collect();
    if remaining.is_empty() {
        return Err(CliError::Usage("no unsimulated tests left to rank".into()));
    }

    let mut tie_rng = {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(covsteer::derive_seed(seed, "ties", 0))
    };
    let hyper = covsteer::selectors::ModelHyper::default();
    let (selected, scored) = match build_selector(method, &hyper) {
        None => {
            let ids: Vec<u64> = remaining.iter().map(|t| t.test_id).collect();
            (rank_random(&ids, batch.min(ids.len()), &mut tie_rng), serde_json::Value::Null)
        }
        Some(mut selector) => {
            let train: Vec<&stimgen::Test> =
                corpus.iter().filter(|t| simulated_set.contains(&t.test_id)).collect();
            if train.is_empty() {
                return Err(CliError::Usage("simulated set is empty; nothing to train on".into()));
            }
            let standardizer = encode::fit_standardizer(&train).map_err(CliError::runtime)?;
            let schema = encode::FeatureSchema::from_params(params);
            let window_len = params.pipeline_depth as usize;
            let mut train_windows = Vec::new();
            for test in &train {
                train_windows.extend(
                    encode::windows_for_test(test, &schema, &standardizer, window_len, window_len)
                        .map_err(CliError::runtime)?,
                );
            }
            selector.fit(&train_windows, seed).map_err(CliError::runtime)?;
            let mut scores = Vec::new();
            for test in &remaining {
                let windows =
                    encode::windows_for_test(test, &schema, &standardizer, window_len, window_len)
                        .map_err(CliError::runtime)?;
                let ws = selector.score_windows(&windows).map_err(CliError::runtime)?;
                scores.push(aggregate_test(test.test_id, ws).map_err(CliError::runtime)?);
            }
            let ranked = rank_tests(&scores, batch.min(scores.len()), &mut tie_rng);
            let score_map: BTreeMap<u64, f64> =
                scores.iter().map(|s| (s.test_id, s.s_test)).collect();
            (ranked, serde_json::to_value(score_map).unwrap())
        }
    };

    let payload = serde_json::json!({
        "method": method.as_str(),
        "seed": seed,
        "simulated": simulated_ids,
        "selected": selected,
        "scores": scored,
    });
    std::fs::write(out, serde_json::to_string_pretty(&payload).unwrap())
        .map_err(CliError::runtime)?;
    println!("selected {} tests with {} -> {}", selected_len(&payload), method.as_str(), out.display());
    Ok(())
}

fn selected_len(payload: &serde_json::Value) -> usize {
    payload["selected"].as_array().map_or(0, |a| a.len())
}

fn cmd_exp(config_path: &Path, out: &Path, jobs: Option<usize>, quiet: bool) -> Result<(), CliError> {
    if !config_path.exists() {
        return Err(CliError::Usage(format!("config not found: {}", config_path.display())));
    }
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    if let Some(jobs) = jobs {
        config.jobs = Some(jobs);
    }
    if let Ok(seed) = std::env::var("COVSTEER_SEED") {
        let seed: u64 = seed
            .parse()
            .map_err(|e| CliError::Usage(format!("bad COVSTEER_SEED '{seed}': {e}")))?;
        config.base_seed = seed;
        config.seeds = None;
    }
    let outputs = harness::run_experiment(&config, out, !quiet).map_err(CliError::runtime)?;
    println!("experiment complete: {} runs -> {}", outputs.histories.len(), out.display());
    for row in &outputs.table.rows {
        if let (Some(m), Some(pct)) = (row.mean_interp, row.savings_pct) {
            println!(
                "  goal {:>5.1}% {:>4}: mean {:8.1} tests, savings {:6.2}%",
                row.goal,
                row.method.as_str(),
                m,
                pct
            );
        }
    }
    Ok(())
}

fn cmd_report(runs: &Path, goal: f64) -> Result<(), CliError> {
    if !runs.join("curves.csv").exists() {
        return Err(CliError::Usage(format!("no curves.csv under {}", runs.display())));
    }
    let rows = harness::report_tests_to_goal(runs, goal).map_err(CliError::runtime)?;
    println!("tests to reach {goal:.1}% coverage (mean over seeds):");
    for (method, reached, mean_val) in rows {
        match mean_val {
            Some(m) => println!("  {:>4}: {:.1} ({} runs reached)", method.as_str(), m, reached),
            None => println!("  {:>4}: not reached in any run", method.as_str()),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { seed, n, mix, len_range, out, duv } => {
            cmd_gen(seed, n, &mix, &len_range, &out, &duv.params())
        }
        Command::Sim { corpus, out, duv } => cmd_sim(&corpus, &out, &duv.params()),
        Command::Select { corpus, method, simulated, warmup, batch, seed, out, duv } => cmd_select(
            &corpus,
            &method,
            simulated.as_deref(),
            warmup,
            batch,
            seed,
            &out,
            &duv.params(),
        ),
        Command::Exp { config, out, jobs, quiet } => cmd_exp(&config, &out, jobs, quiet),
        Command::Report { runs, goal } => cmd_report(&runs, goal),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
