use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use didp_rl::bench::{
    build_guidance, default_output_dir, export_results, load_results, report, resolve_instance, run_search_experiment,
    sample_solve, sort_records, ExperimentConfig, ExportFormat, DEFAULT_SAMPLE_COUNT,
};
use didp_rl::domains::{DomainTag, GeneratorParams, Instance};
use didp_rl::guidance::GuidanceKind;
use didp_rl::learning::io::save_params;
use didp_rl::learning::train::{train_dqn, train_ppo, Algorithm as TrainAlgorithm, InstanceSource, TrainConfig};
use didp_rl::search::{solve, Algorithm, Limits, SearchOptions};

#[derive(Parser)]
#[command(name = "didp-rl", version, about = "Guided dynamic-programming search for routing and packing problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances and write them as JSON.
    Generate(GenerateArgs),
    /// Solve one instance, or run an experiment described by a config file.
    Solve(SolveArgs),
    /// Train a DQN or PPO network.
    Train(TrainArgs),
    /// Solve by sampling rollouts guided by a heuristic.
    Sample(SampleArgs),
    /// Summarize a results file.
    Report(ReportArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Problem domain: tsp, tsptw, knapsack or portfolio.
    #[arg(long)]
    domain: Option<DomainTag>,
    /// Instance size for generated instances.
    #[arg(long)]
    n: Option<usize>,
    /// Fixture name (fix-tsp3, fix-tsptw3, fix-kp2, fix-pf2) or instance file.
    #[arg(long)]
    instance: Option<String>,
    /// Generator seed, used when no instance is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl InstanceArgs {
    fn load(&self) -> Result<(String, Instance)> {
        match &self.instance {
            Some(spec) => {
                let inst = resolve_instance(spec).with_context(|| format!("cannot load instance {spec}"))?;
                if let Some(d) = self.domain {
                    if d != inst.tag() {
                        bail!("instance {spec} is {}, not {d}", inst.tag());
                    }
                }
                Ok((spec.clone(), inst))
            }
            None => {
                let (Some(domain), Some(n)) = (self.domain, self.n) else {
                    bail!("give --instance, or --domain and --n to generate one");
                };
                let inst = Instance::generate(domain, n, self.seed, &GeneratorParams::default())?;
                Ok((format!("{domain}-n{n}-s{}", self.seed), inst))
            }
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    domain: DomainTag,
    #[arg(long)]
    n: usize,
    /// First seed; instances use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Output directory (defaults to $DIDP_OUTPUT_DIR or ./results).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Experiment config (TOML); other flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value = "cabs")]
    algo: Algorithm,
    #[arg(long, default_value = "dual")]
    guidance: GuidanceKind,
    /// Weight file for dqn or ppo guidance.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    max_expansions: Option<u64>,
    /// Time limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Reward scaling for dqn guidance.
    #[arg(long)]
    beta: Option<f64>,
    /// Result file (.csv or .json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    domain: DomainTag,
    /// Size of the generated training instances.
    #[arg(long)]
    n: usize,
    /// Train on this fixed instance instead of random ones.
    #[arg(long)]
    instance: Option<String>,
    #[arg(long)]
    algo: TrainAlgorithm,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training config (TOML) replacing the per-domain defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Stop training after this many seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Weight file; PPO also writes the critic next to it with a `.critic` suffix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value = "dual")]
    guidance: GuidanceKind,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_COUNT)]
    count: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    beta: Option<f64>,
    /// Seed of the sampler.
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON results file written by `solve`.
    #[arg(long)]
    input: PathBuf,
    /// Also write the summary here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn export_format(path: &Path) -> ExportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => ExportFormat::Csv,
        _ => ExportFormat::Json,
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let dir = args.out_dir.unwrap_or_else(default_output_dir);
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for seed in args.seed..args.seed + args.count {
        let inst = Instance::generate(args.domain, args.n, seed, &GeneratorParams::default())?;
        let path = dir.join(format!("{}-n{}-s{seed}.json", args.domain, args.n));
        inst.save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn run_config(path: &Path) -> Result<()> {
    let config = ExperimentConfig::load(path)?;
    let mut records = run_search_experiment(&config)?;
    sort_records(&mut records);
    print!("{}", report(&records));
    let json = config
        .output
        .clone()
        .unwrap_or_else(|| default_output_dir().join("results.json"));
    export_results(&records, &json, ExportFormat::Json)?;
    let csv = json.with_extension("csv");
    export_results(&records, &csv, ExportFormat::Csv)?;
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

fn solve_one(args: SolveArgs) -> Result<()> {
    if let Some(path) = &args.config {
        return run_config(path);
    }
    let (id, inst) = args.instance.load()?;
    let domain = inst.tag();
    let config = ExperimentConfig {
        domain,
        n: inst.n(),
        instances: vec![id.clone()],
        algorithms: vec![args.algo],
        guidance: vec![args.guidance],
        dqn_weights: args.weights.clone().filter(|_| args.guidance == GuidanceKind::Dqn),
        ppo_weights: args.weights.clone().filter(|_| args.guidance == GuidanceKind::Ppo),
        max_expansions: args.max_expansions,
        time_limit_secs: args.time_limit,
        beta: args.beta,
        ..ExperimentConfig::default()
    };
    config.validate()?;
    let inst = Arc::new(inst);
    let model = Arc::new(inst.build_model()?);
    let guidance = build_guidance(args.guidance, &inst, &model, args.weights.as_deref(), args.beta)?;
    let limits = Limits {
        max_expansions: args.max_expansions,
        time_limit: args.time_limit.map(Duration::from_secs_f64),
    };
    let result = solve(args.algo, &model, &guidance, limits, SearchOptions::default())?;
    println!("instance {id}");
    println!("method {}-{}", args.algo, args.guidance);
    match &result.best {
        Some(best) => {
            println!("cost {}", best.cost);
            let labels: Vec<String> = best.sequence.iter().map(|&t| model.transition_label(t)).collect();
            println!("solution {}", labels.join(" "));
        }
        None => println!("cost none"),
    }
    println!("proved_optimal {}", result.proved_optimal);
    println!("expansions {}", result.expansions);
    println!("generated {}", result.generated);
    if let Some(out) = &args.out {
        let records = run_search_experiment(&ExperimentConfig {
            instances: vec![id],
            ..config
        })?;
        export_results(&records, out, export_format(out))?;
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            toml::from_str::<TrainConfig>(&text).with_context(|| format!("invalid training config {}", path.display()))?
        }
        None => TrainConfig::for_domain(args.domain, args.algo, args.n),
    };
    config.seed = args.seed;
    if let Some(e) = args.episodes {
        config.episodes = e;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(b) = args.beta {
        config.beta = b;
    }
    if args.time_limit.is_some() {
        config.time_limit_secs = args.time_limit;
    }
    let source = match &args.instance {
        Some(spec) => {
            let inst = resolve_instance(spec)?;
            if inst.tag() != args.domain {
                bail!("instance {spec} is {}, not {}", inst.tag(), args.domain);
            }
            InstanceSource::Fixed(Arc::new(inst))
        }
        None => InstanceSource::Random {
            domain: args.domain,
            n: args.n,
            params: GeneratorParams::default(),
        },
    };
    let log = match args.algo {
        TrainAlgorithm::Dqn => {
            let out = train_dqn(&source, &config)?;
            save_params(&out.params, &args.out)?;
            out.log
        }
        TrainAlgorithm::Ppo => {
            let out = train_ppo(&source, &config)?;
            save_params(&out.actor, &args.out)?;
            let mut critic = args.out.clone().into_os_string();
            critic.push(".critic");
            save_params(&out.critic, Path::new(&critic))?;
            out.log
        }
    };
    let tail = &log.episode_returns[log.episode_returns.len().saturating_sub(100)..];
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    println!("episodes {}", log.episode_returns.len());
    println!("mean_return_last_{} {mean}", tail.len());
    println!("wrote {}", args.out.display());
    Ok(())
}

fn sample(args: SampleArgs) -> Result<()> {
    let (id, inst) = args.instance.load()?;
    let inst = Arc::new(inst);
    let model = Arc::new(inst.build_model()?);
    let guidance = build_guidance(args.guidance, &inst, &model, args.weights.as_deref(), args.beta)?;
    let out = sample_solve(&model, &guidance, args.count, args.temperature, args.sample_seed)?;
    println!("instance {id}");
    match out.best {
        Some(c) => println!("cost {c}"),
        None => println!("cost none"),
    }
    println!("feasible {}/{}", out.feasible, out.samples);
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<()> {
    let mut records = load_results(&args.input)?;
    sort_records(&mut records);
    let text = report(&records);
    print!("{text}");
    if let Some(out) = args.out {
        fs::write(&out, text).with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}

/// Parses the command line; argument errors also print the usage of the
/// subcommand involved.
fn parse() -> Cli {
    let args: Vec<String> = std::env::args().collect();
    Cli::try_parse_from(&args).unwrap_or_else(|e| {
        if e.use_stderr() {
            let mut cmd = Cli::command();
            cmd.build();
            let usage = match args.get(1).and_then(|name| cmd.find_subcommand_mut(name)) {
                Some(sub) => sub.render_usage(),
                None => cmd.render_usage(),
            };
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{usage}");
            }
            std::process::exit(2);
        }
        e.exit()
    })
}

fn main() -> ExitCode {
    let cli = parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve_one(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
