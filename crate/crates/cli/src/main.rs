//! fluidrpm command line: generate, render, solve, and run experiments.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, bad config), 2 on
//! runtime failures (unreadable files, diverged runs). Experiment outcomes
//! (a wrong answer, a low success rate) never affect the exit code.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fluidrpm::config::{parse_config_file, resolve_config, ConfigOverrides, RunConfig};
use fluidrpm::error::Error;
use fluidrpm::experiments::{
    condition_matrix, mean_rate_by_distractor_count, run_extensive, run_naive_condition,
    ExtensiveConfig,
};
use fluidrpm::io::{self, RunManifest};
use fluidrpm::model::{ModelParams, PARAMS};
use fluidrpm::solver::{solve_naive, SolveConfig, SOLVE_SEED_TAG};
use fluidrpm::testgen::{generate_test, FeatureName, FeatureRoles, RpmTest, RuleDirection, SeqSpec};
use fluidrpm::Result;

#[derive(Parser)]
#[command(
    name = "fluidrpm",
    version,
    about = "Sequential visual matrix tests: generation and latent-prediction solving"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; unset values fall back to the config
/// file, then the FLUIDRPM_SEED environment variable (seed only), then the
/// built-in defaults.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Flat key=value config file (# comments allowed).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Tiles per sequence (≥ 2).
    #[arg(long)]
    t: Option<usize>,
    /// Answer options per test (≥ 2).
    #[arg(long)]
    n: Option<usize>,
    /// Optimization steps per solve.
    #[arg(long)]
    steps: Option<u32>,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dissimilarity-loss length scale σ.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lr_pred: Option<f64>,
    #[arg(long)]
    lr_dis: Option<f64>,
    #[arg(long)]
    lr_bound: Option<f64>,
    /// RMSprop decay ρ.
    #[arg(long)]
    rho: Option<f64>,
    /// RMSprop stabilizer ε.
    #[arg(long)]
    eps: Option<f64>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Usage(format!("cannot read config file {}: {e}", path.display()))
                })?;
                parse_config_file(&text)?
            }
            None => ConfigOverrides::default(),
        };
        let env_seed = match std::env::var("FLUIDRPM_SEED") {
            Ok(raw) => Some(raw.parse().map_err(|_| {
                Error::Usage(format!("FLUIDRPM_SEED must be an unsigned integer, got {raw:?}"))
            })?),
            Err(_) => None,
        };
        let flags = ConfigOverrides {
            t: self.t,
            n: self.n,
            steps: self.steps,
            seed: self.seed,
            sigma: self.sigma,
            lr_pred: self.lr_pred,
            lr_dis: self.lr_dis,
            lr_bound: self.lr_bound,
            rho: self.rho,
            eps: self.eps,
        };
        resolve_config(&file, env_seed, &flags)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate one test and save it as a directory of PGM tiles.
    Gen {
        #[command(flatten)]
        config: ConfigFlags,
        /// Rule feature (color or size).
        #[arg(long)]
        rule: String,
        /// Comma-separated distractor features, or "all" for every non-rule
        /// feature. Default: none (an easy test).
        #[arg(long, default_value = "")]
        distractors: String,
        /// Rule direction: increasing or decreasing.
        #[arg(long, default_value = "increasing")]
        direction: String,
        /// Omit the correct option index (and the seed) from the export.
        #[arg(long)]
        hide_answer: bool,
        /// Output test directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a saved test's tiles and options to PGM files.
    Render {
        /// Test directory (as written by gen).
        #[arg(long)]
        test: PathBuf,
        /// Output directory for the rendered images.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a saved test with a fresh network trained on its tiles.
    Solve {
        #[command(flatten)]
        config: ConfigFlags,
        /// Test directory (as written by gen).
        #[arg(long)]
        test: PathBuf,
        /// Write per-step option errors and losses to this CSV.
        #[arg(long, value_name = "FILE")]
        traces_out: Option<PathBuf>,
    },
    /// Run naive (untrained-network) solving over every distractor subset.
    NaiveGrid {
        #[command(flatten)]
        config: ConfigFlags,
        /// Rule feature (color or size).
        #[arg(long)]
        rule: String,
        /// Tests per condition.
        #[arg(long, default_value_t = 25)]
        tests: usize,
        /// Output directory for results.csv and the run manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network on a stream of easy sequences, tracking accuracy on
    /// frozen difficult tests.
    TrainExtensive {
        #[command(flatten)]
        config: ConfigFlags,
        /// Rule feature (color or size).
        #[arg(long)]
        rule: String,
        /// Easy training sequences to consume.
        #[arg(long, default_value_t = 2000)]
        sequences: usize,
        /// Optimization steps per training sequence.
        #[arg(long, default_value_t = 2)]
        steps_per_seq: u32,
        /// Evaluate every this many sequences.
        #[arg(long, default_value_t = 100)]
        eval_every: usize,
        /// Size of the frozen difficult-test evaluation set.
        #[arg(long, default_value_t = 100)]
        eval_size: usize,
        /// Output directory for curve.csv and the run manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary of a saved test or a model checkpoint.
    Inspect {
        /// Test directory to describe.
        #[arg(long, conflicts_with = "model")]
        test: Option<PathBuf>,
        /// Model checkpoint to describe.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run gradient checks, generator invariants, loss closed forms, and a
    /// short deterministic solve trace.
    Selftest {
        #[command(flatten)]
        config: ConfigFlags,
        /// Output directory for trace.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_rule(name: &str) -> Result<FeatureName> {
    FeatureName::from_name(&name.to_lowercase())
        .ok_or_else(|| Error::Usage(format!("unknown feature {name}")))
}

fn parse_distractors(raw: &str, rule: FeatureName) -> Result<Vec<FeatureName>> {
    if raw.trim() == "all" {
        return Ok(FeatureName::ALL.iter().copied().filter(|&f| f != rule).collect());
    }
    let mut out = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let f = parse_rule(part)?;
        if f == rule {
            return Err(Error::Usage(format!("{} is the rule feature, not a distractor", f.name())));
        }
        if !out.contains(&f) {
            out.push(f);
        }
    }
    Ok(out)
}

fn stamp_config(manifest: &mut RunManifest, config: &RunConfig) {
    for (key, value) in config.manifest_entries() {
        manifest.set(key, value);
    }
}

fn describe_choice(test: &RpmTest, result: &fluidrpm::solver::SolveResult) -> String {
    let verdict = match result.correct {
        Some(true) => "correct",
        Some(false) => "incorrect",
        None => "unknown (answer hidden)",
    };
    format!("chose option {} of {} ({verdict})", result.choice, test.options.len())
}

fn cmd_gen(
    config: &ConfigFlags,
    rule: &str,
    distractors: &str,
    direction: &str,
    hide_answer: bool,
    out: &Path,
) -> Result<()> {
    let config = config.resolve()?;
    let rule = parse_rule(rule)?;
    let distractors = parse_distractors(distractors, rule)?;
    let direction = match direction {
        "increasing" => RuleDirection::Increasing,
        "decreasing" => RuleDirection::Decreasing,
        other => return Err(Error::Usage(format!("unknown direction {other}"))),
    };

    let mut spec =
        SeqSpec::new(config.t, config.n, FeatureRoles::new(rule, &distractors), config.seed);
    spec.direction = direction;
    let test = generate_test(&spec)?;
    io::save_test(&test, out, hide_answer)?;

    let mut manifest = RunManifest::new("gen");
    stamp_config(&mut manifest, &config);
    manifest.set("rule", rule.name());
    manifest.set("distractors", distractors.iter().map(|f| f.name()).collect::<Vec<_>>().join(","));
    manifest.set("direction", direction_name(direction));
    manifest.set("hide_answer", if hide_answer { "1" } else { "0" });
    manifest.add_file("manifest", &out.join("manifest.txt"))?;
    manifest.write(&out.join("run_manifest.txt"))?;

    let answer = match (hide_answer, test.correct) {
        (false, Some(c)) => format!("correct option {c}"),
        _ => "answer hidden".to_string(),
    };
    println!(
        "wrote test to {} (rule {}, {} distractors, {})",
        out.display(),
        rule.name(),
        distractors.len(),
        answer
    );
    Ok(())
}

fn direction_name(direction: RuleDirection) -> &'static str {
    match direction {
        RuleDirection::Increasing => "increasing",
        RuleDirection::Decreasing => "decreasing",
    }
}

fn cmd_render(test_dir: &Path, out: &Path) -> Result<()> {
    let test = io::load_test(test_dir)?;
    let written = io::render_test_to(&test, out)?;

    let mut manifest = RunManifest::new("render");
    manifest.set("source", test_dir.display().to_string());
    for rel in &written {
        manifest.add_file(&rel.display().to_string(), &out.join(rel))?;
    }
    manifest.write(&out.join("run_manifest.txt"))?;
    println!("rendered {} images to {}", written.len(), out.display());
    Ok(())
}

fn cmd_solve(config: &ConfigFlags, test_dir: &Path, traces_out: Option<&Path>) -> Result<()> {
    let config = config.resolve()?;
    let test = io::load_test(test_dir)?;

    let mut solve = SolveConfig::new(config.seed ^ SOLVE_SEED_TAG);
    solve.steps = config.steps;
    solve.record_traces = traces_out.is_some();
    solve.optim = config.optim.clone();

    let result = solve_naive::<f32>(&test, &solve)?;

    if let Some(path) = traces_out {
        io::write_trace_csv(path, &result)?;
        let mut manifest = RunManifest::new("solve");
        stamp_config(&mut manifest, &config);
        manifest.set("test_dir", test_dir.display().to_string());
        manifest.set("model_seed", solve.seed.to_string());
        manifest.add_file("traces", path)?;
        let manifest_path = path.with_extension("manifest.txt");
        manifest.write(&manifest_path)?;
    }

    if let Some(reason) = &result.failure {
        println!("training aborted: {reason}");
    }
    println!("{}", describe_choice(&test, &result));
    if let Some(sep) = result.first_separation_step {
        println!("first separation at step {sep}");
    }
    Ok(())
}

fn cmd_naive_grid(config: &ConfigFlags, rule: &str, tests: usize, out: &Path) -> Result<()> {
    let config = config.resolve()?;
    let rule = parse_rule(rule)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;

    let mut template = SolveConfig::new(0);
    template.steps = config.steps;
    template.optim = config.optim.clone();

    let conditions = condition_matrix(rule, config.t, config.n)?;
    let mut results = Vec::with_capacity(conditions.len());
    for (ci, condition) in conditions.iter().enumerate() {
        let base_seed = config.seed.wrapping_add((ci as u64) << 32);
        let result = run_naive_condition::<f32>(condition, tests, base_seed, &template)?;
        println!(
            "condition {ci:2} ({} distractors): {}/{} correct",
            condition.distractors.len(),
            result.successes,
            result.num_tests
        );
        results.push(result);
    }

    io::write_results(&out.join("results.csv"), &results)?;
    let mut manifest = RunManifest::new("naive-grid");
    stamp_config(&mut manifest, &config);
    manifest.set("rule", rule.name());
    manifest.set("tests_per_condition", tests.to_string());
    manifest.add_file("results", &out.join("results.csv"))?;
    manifest.write(&out.join("run_manifest.txt"))?;

    for (count, rate) in mean_rate_by_distractor_count(&results) {
        println!("{count} distractors: mean success rate {:.3}", rate);
    }
    println!("wrote {}", out.join("results.csv").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_extensive(
    config: &ConfigFlags,
    rule: &str,
    sequences: usize,
    steps_per_seq: u32,
    eval_every: usize,
    eval_size: usize,
    out: &Path,
) -> Result<()> {
    let config = config.resolve()?;
    let rule = parse_rule(rule)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;

    let mut extensive = ExtensiveConfig::new(rule, config.seed);
    extensive.num_sequences = sequences;
    extensive.steps_per_sequence = steps_per_seq as usize;
    extensive.eval_every = eval_every;
    extensive.test_set_size = eval_size;
    extensive.t = config.t;
    extensive.n = config.n;
    extensive.optim = config.optim.clone();

    let curve = run_extensive::<f32>(&extensive)?;
    io::write_curve(&out.join("curve.csv"), &curve)?;

    let mut manifest = RunManifest::new("train-extensive");
    stamp_config(&mut manifest, &config);
    manifest.set("rule", rule.name());
    manifest.set("sequences", sequences.to_string());
    manifest.set("steps_per_seq", steps_per_seq.to_string());
    manifest.set("eval_every", eval_every.to_string());
    manifest.set("eval_size", eval_size.to_string());
    manifest.add_file("curve", &out.join("curve.csv"))?;
    manifest.write(&out.join("run_manifest.txt"))?;

    let first = curve.points.first().map(|p| p.accuracy).unwrap_or(f64::NAN);
    let last = curve.points.last().map(|p| p.accuracy).unwrap_or(f64::NAN);
    println!(
        "accuracy on {} frozen difficult tests: {:.3} untrained, {:.3} after {} sequences",
        curve.test_set_size, first, last, sequences
    );
    println!("wrote {}", out.join("curve.csv").display());
    Ok(())
}

fn cmd_inspect(test: Option<&Path>, model: Option<&Path>) -> Result<()> {
    match (test, model) {
        (Some(dir), None) => {
            let test = io::load_test(dir)?;
            let roles = &test.spec.roles;
            let rule = roles.rule_feature().map(|f| f.name()).unwrap_or("none");
            let distractors: Vec<&str> = roles.distractors().iter().map(|f| f.name()).collect();
            println!("test at {}", dir.display());
            println!("  t={} n={} seed={}", test.spec.t, test.spec.n, test.spec.seed);
            println!(
                "  rule {rule} ({}), distractors: {}",
                direction_name(test.spec.direction),
                if distractors.is_empty() { "none".to_string() } else { distractors.join(", ") }
            );
            match test.correct {
                Some(c) => println!("  correct option: {c}"),
                None => println!("  correct option: hidden"),
            }
            for (i, tile) in test.tiles.iter().enumerate() {
                println!(
                    "  tile {i}: color {:.4}, size {:.1}, {} x{}",
                    tile.color,
                    tile.size,
                    tile.shape.name(),
                    tile.number
                );
            }
            for (k, option) in test.options.iter().enumerate() {
                println!(
                    "  option {k}: color {:.4}, size {:.1}, {} x{}",
                    option.color,
                    option.size,
                    option.shape.name(),
                    option.number
                );
            }
            Ok(())
        }
        (None, Some(path)) => {
            let model: ModelParams<f32> = ModelParams::load(path)?;
            println!("checkpoint at {}", path.display());
            println!("  {} tensors, {} parameters", PARAMS.len(), model.num_params());
            for (meta, tensor) in PARAMS.iter().zip(model.tensors()) {
                let rms = (tensor.values().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
                    / tensor.len() as f64)
                    .sqrt();
                println!("  {:<14} {:?} rms {:.4e}", meta.name, meta.shape, rms);
            }
            Ok(())
        }
        _ => Err(Error::Usage("inspect needs exactly one of --test or --model".into())),
    }
}

fn cmd_selftest(config: &ConfigFlags, out: &Path) -> Result<()> {
    let config = config.resolve()?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
    let report = fluidrpm::selftest::run_selftest(config.seed, out)?;
    for line in &report.lines {
        println!("{line}");
    }
    println!("trace written to {}", out.join("trace.csv").display());
    if !report.passed {
        return Err(Error::Generation("selftest failed".into()));
    }
    println!("selftest passed");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen { config, rule, distractors, direction, hide_answer, out } => {
            cmd_gen(config, rule, distractors, direction, *hide_answer, out)
        }
        Command::Render { test, out } => cmd_render(test, out),
        Command::Solve { config, test, traces_out } => {
            cmd_solve(config, test, traces_out.as_deref())
        }
        Command::NaiveGrid { config, rule, tests, out } => {
            cmd_naive_grid(config, rule, *tests, out)
        }
        Command::TrainExtensive {
            config,
            rule,
            sequences,
            steps_per_seq,
            eval_every,
            eval_size,
            out,
        } => cmd_train_extensive(
            config,
            rule,
            *sequences,
            *steps_per_seq,
            *eval_every,
            *eval_size,
            out,
        ),
        Command::Inspect { test, model } => cmd_inspect(test.as_deref(), model.as_deref()),
        Command::Selftest { config, out } => cmd_selftest(config, out),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Parameter(_) => 1,
        _ => 2,
    }
}

/// Dying quietly on a closed pipe (`fluidrpm inspect ... | head`) is the
/// expected unix behavior; Rust's default turns it into a panic.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; anything else is a
            // usage error and must exit 1, not clap's default 2.
            let benign = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
