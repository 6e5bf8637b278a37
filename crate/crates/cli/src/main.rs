use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use treenas::arch::{self, BlockLibrary, NetworkFrame};
use treenas::engine::{self, EngineError, EvaluatorChoice, EvolutionConfig, RunReport};
use treenas::sexpr::{self, ParseErrorKind};

const USAGE: u8 = 1;
const RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "treenas", version, about = "Evolve tree-encoded CNN architectures")]
struct Cli {
    /// Log progress (repeat for more detail). RUST_LOG overrides this.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search from a config file; flags override its fields.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `surrogate` or `external:"<command>"`.
        #[arg(long)]
        evaluator: Option<EvaluatorChoice>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<u32>,
        #[arg(long)]
        mutation_rate: Option<f64>,
    },
    /// Continue a checkpointed run.
    Resume {
        #[arg(long)]
        run: PathBuf,
    },
    /// Lower a genome to its architecture descriptor.
    Compile {
        #[arg(long)]
        sexpr: String,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Config supplying the block library and network frame.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a genome against the feasibility rules.
    Validate {
        #[arg(long)]
        sexpr: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the per-individual statistics of a run as CSV.
    Stats {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: USAGE, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure { code: RUNTIME, message: message.into() }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        if e.is_config_error() {
            Failure::usage(e.to_string())
        } else {
            Failure::runtime(e.to_string())
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::runtime(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<EvolutionConfig, Failure> {
    Ok(match path {
        Some(path) => EvolutionConfig::load(path)?,
        None => EvolutionConfig::default(),
    })
}

fn print_report(report: &RunReport) {
    let best = &report.best;
    println!("best fitness  {}", best.fitness);
    println!("best genome   {}", best.sexpr);
    if let (Some(params), Some(layers)) = (best.param_count, best.conv_layers) {
        println!("parameters    {params}");
        println!("conv layers   {layers}");
    }
    let composition: Vec<String> = best.composition.iter().map(|(id, n)| format!("{id}={n}")).collect();
    println!("composition   {}", composition.join(" "));
    println!("evaluations   {}", report.total_evaluations);
    println!("run directory {}", report.config.run_dir.display());
}

fn parse_genome(text: &str, library: &BlockLibrary) -> Result<treenas::GenomeTree, Failure> {
    sexpr::parse(text, library).map_err(|e| match &e.kind {
        ParseErrorKind::Infeasible(_) => Failure::usage(format!("infeasible genome: {e}")),
        _ => Failure::usage(format!("cannot parse genome: {e}")),
    })
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, seed, out, evaluator, population, generations, mutation_rate } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(out) = out {
                config.run_dir = out;
            }
            if let Some(evaluator) = evaluator {
                config.evaluator = evaluator;
            }
            if let Some(n) = population {
                config.population_size = n;
            }
            if let Some(t) = generations {
                config.generations = t;
            }
            if let Some(mu) = mutation_rate {
                config.mutation_rate = mu;
            }
            print_report(&engine::run(config)?);
        }
        Command::Resume { run } => print_report(&engine::resume(&run)?),
        Command::Compile { sexpr: text, format, config } => {
            let config = load_config(config.as_deref())?;
            let library = config.library();
            let frame: NetworkFrame = config.frame();
            let tree = parse_genome(&text, &library)?;
            let d = arch::compile(&tree, &library, &frame).map_err(|e| Failure::usage(e.to_string()))?;
            match format {
                Format::Json => println!("{}", d.to_json()),
                Format::Text => {
                    for (i, b) in d.blocks.iter().enumerate() {
                        println!("{i:>3}  {}  filters {:>4}  stride {}", b.block_id, b.filters, b.stride);
                    }
                    println!("parameters {}", arch::param_count(&d, &library));
                    println!("conv layers {}", arch::conv_layer_count(&d, &library));
                }
            }
        }
        Command::Validate { sexpr: text, config } => {
            let library = load_config(config.as_deref())?.library();
            let tree = sexpr::parse_unchecked(&text, &library)
                .map_err(|e| Failure::usage(format!("cannot parse genome: {e}")))?;
            let violations = tree.validate();
            if !violations.is_empty() {
                let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
                return Err(Failure::usage(format!("infeasible genome:\n{}", lines.join("\n"))));
            }
            println!("feasible: {} nodes, {} str", tree.node_count(), tree.stride_count());
        }
        Command::Stats { run, out } => {
            let (stats, library) = engine::load_run_stats(&run)?;
            let file = File::create(&out).map_err(io_failure(&out))?;
            let mut writer = BufWriter::new(file);
            engine::write_stats_csv(&mut writer, &stats, &library)
                .map_err(|e| Failure::runtime(format!("{}: {e}", out.display())))?;
            writer.flush().map_err(io_failure(&out))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
