use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use reid_stream::pipeline::{
    config_keys, grid_run, parse_override, simulate_source, write_grid_outputs, write_run_outputs,
    CostModel, CostModelTrainer, ExternalTrainer, GridSpec, PipelineConfig, PipelineRun,
    StreamSource, Trainer,
};
use reid_stream::report::{
    best_per_x, emit, emit_to_path, group_summaries, parse_csv, series_table, summaries_table,
    Format, Table,
};
use reid_stream::stream::{synth_stream, write_stream, SynthSpec};
use reid_stream::{oracle, Scalar};

#[derive(Parser)]
#[command(
    name = "reid-stream",
    version,
    about = "Streaming re-identification pipeline simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write its outputs.
    Run(RunArgs),
    /// Simulate every configuration of a grid file.
    Grid(GridArgs),
    /// Summarize the CSVs written by `run` or `grid`.
    Report(ReportArgs),
    /// Cross-check the fast algorithms against brute-force references.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic stream to a JSON-lines file.
    Synth {
        #[arg(long, value_name = "SPEC")]
        synth: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// JSON-lines stream file.
    #[arg(long, value_name = "PATH", conflicts_with = "synth")]
    stream: Option<PathBuf>,
    /// Synthetic stream: a TOML file or inline `key=value,key=value`.
    #[arg(long, value_name = "SPEC")]
    synth: Option<String>,
    /// TOML file with cost-model coefficients.
    #[arg(long = "cost-model", value_name = "PATH")]
    cost_model: Option<PathBuf>,
    /// External training command; receives each job as JSON on stdin.
    #[arg(long, value_name = "CMD", num_args = 1.., allow_hyphen_values = true)]
    trainer: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Flat TOML config file; flags below override its keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set retention_minutes=40`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Segment length in minutes.
    #[arg(long)]
    tau: Option<u32>,
    /// Instances per identity.
    #[arg(short = 'K', long = "K")]
    k: Option<u64>,
    /// Epochs.
    #[arg(short = 'E', long = "E")]
    e: Option<u64>,
    /// Iterations.
    #[arg(short = 'I', long = "I")]
    i: Option<u64>,
    /// Memory mode; `--memory` alone means true.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    memory: Option<bool>,
    /// oracle or causal camera proportions.
    #[arg(long = "budget-mode")]
    budget_mode: Option<String>,
    /// euclidean or cosine.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "min-pts")]
    min_pts: Option<u64>,
    /// Config seed; also seeds a synthetic stream that sets none.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Grid file: axis keys take arrays, other keys set the base config.
    /// Without it the full 864-configuration grid runs.
    #[arg(long, value_name = "PATH")]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Where to write the summaries; defaults to the input directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Keep disqualified configurations in the summaries.
    #[arg(long)]
    include_disqualified: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

fn load_synth(arg: Option<&str>, seed: u64) -> Result<SynthSpec> {
    let mut table = match arg {
        None => toml::Table::new(),
        Some(a) if Path::new(a).is_file() => toml::from_str(&fs::read_to_string(a)?)
            .with_context(|| format!("reading synth spec {a}"))?,
        Some(a) => {
            let mut t = toml::Table::new();
            for pair in a.split(',').filter(|p| !p.trim().is_empty()) {
                let (k, v) = parse_override(pair)?;
                t.insert(k, v);
            }
            t
        }
    };
    let known = toml::Table::try_from(SynthSpec::default())?;
    if let Some(k) = table.keys().find(|k| !known.contains_key(*k)) {
        bail!("unknown synth key `{k}`");
    }
    table
        .entry("rng_seed")
        .or_insert(toml::Value::Integer(i64::try_from(seed)?));
    let spec: SynthSpec = table.try_into()?;
    spec.validate()?;
    Ok(spec)
}

fn source<T>(args: &SourceArgs, seed: u64) -> Result<StreamSource<T>> {
    Ok(match &args.stream {
        Some(path) => StreamSource::File(path.clone()),
        None => StreamSource::Synth(load_synth(args.synth.as_deref(), seed)?),
    })
}

fn cost_model(args: &SourceArgs) -> Result<CostModel> {
    match &args.cost_model {
        Some(p) => {
            CostModel::load(p).with_context(|| format!("reading cost model {}", p.display()))
        }
        None => Ok(CostModel::default()),
    }
}

fn trainer<T: Scalar>(args: &SourceArgs, cost: CostModel) -> Box<dyn Trainer<T>> {
    match &args.trainer {
        Some(cmd) => Box::new(ExternalTrainer {
            program: cmd[0].clone().into(),
            args: cmd[1..].to_vec(),
        }),
        None => Box::new(CostModelTrainer { cost }),
    }
}

fn run_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut overrides = toml::Table::new();
    for pair in &args.set {
        let (k, v) = parse_override(pair)?;
        overrides.insert(k, v);
    }
    let int = |v: u64| toml::Value::Integer(v as i64);
    let flags = [
        ("tau_minutes", args.tau.map(|v| int(v.into()))),
        ("K", args.k.map(int)),
        ("E", args.e.map(int)),
        ("I", args.i.map(int)),
        ("memory", args.memory.map(toml::Value::Boolean)),
        (
            "budget_mode",
            args.budget_mode.clone().map(toml::Value::String),
        ),
        ("metric", args.metric.clone().map(toml::Value::String)),
        ("eps", args.eps.map(toml::Value::Float)),
        ("min_pts", args.min_pts.map(int)),
        ("seed", args.seed.map(int)),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            overrides.insert(key.to_string(), v);
        }
    }
    let known = config_keys();
    if let Some(k) = overrides.keys().find(|k| !known.contains(k)) {
        bail!("unknown config key `{k}` (known: {})", known.join(", "));
    }
    Ok(PipelineConfig::load(args.config.as_deref(), overrides)?)
}

fn print_run(run: &PipelineRun, out: &Path) {
    let verdicts: Vec<&str> = run
        .verdict
        .per_segment
        .iter()
        .map(|&ok| if ok { "ok" } else { "late" })
        .collect();
    println!("segments: {} [{}]", run.segments.len(), verdicts.join(" "));
    println!("subset sizes: {:?}", run.subset_sizes());
    match run.latency {
        Some(l) => println!("latency: {} segments ({} min)", l.segments, l.minutes),
        None => println!("latency: none (disqualified)"),
    }
    println!("outputs: {}", out.display());
}

fn cmd_run<T: Scalar>(args: &RunArgs) -> Result<ExitCode> {
    let cfg = run_config(args)?;
    let src = source::<T>(&args.source, cfg.seed)?;
    let cost = cost_model(&args.source)?;
    let mut trainer = trainer::<T>(&args.source, cost);
    let run = simulate_source(&src, &cfg, &cost, trainer.as_mut())?;
    write_run_outputs(&run, &args.source.out)?;
    print_run(&run, &args.source.out);
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid<T: Scalar>(args: &GridArgs) -> Result<ExitCode> {
    let grid = match &args.grid {
        Some(p) => GridSpec::from_toml_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => GridSpec::standard(PipelineConfig::default()),
    };
    let src = source::<T>(&args.source, args.seed)?;
    let cost = cost_model(&args.source)?;
    let mut trainer = trainer::<T>(&args.source, cost);
    let runs = grid_run(&grid, &src, &cost, trainer.as_mut())?;
    write_grid_outputs(&runs, &args.source.out)?;
    let disq = runs.iter().filter(|r| r.disqualified()).count();
    println!("configurations: {}, disqualified: {disq}", runs.len());
    println!("outputs: {}", args.source.out.display());
    Ok(ExitCode::SUCCESS)
}

fn read_table(path: &Path) -> Result<Table> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(parse_csv(f)?)
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    let out = args.out.clone().unwrap_or_else(|| args.input.clone());
    fs::create_dir_all(&out)?;
    let format = Format::from(args.format);
    let ext = match args.format {
        FormatArg::Csv => "csv",
        FormatArg::Json => "json",
    };
    let segments = read_table(&args.input.join("segments.csv"))?;
    let experiments = read_table(&args.input.join("experiments.csv"))?;
    let keep = args.include_disqualified;

    let seg_keys = ["tau_minutes", "segment", "memory"];
    let by_segment = summaries_table(
        &seg_keys,
        &group_summaries(&segments, "purity", &seg_keys, keep)?,
    );
    emit_to_path(
        &by_segment,
        format,
        &out.join(format!("purity_by_segment.{ext}")),
    )?;

    let cfg_keys = ["tau_minutes", "memory"];
    let by_config = summaries_table(
        &cfg_keys,
        &group_summaries(&experiments, "mean_purity", &cfg_keys, keep)?,
    );
    emit_to_path(
        &by_config,
        format,
        &out.join(format!("purity_by_config.{ext}")),
    )?;

    let curves = best_per_x(&segments, "segment_end_min", "purity", &cfg_keys, keep)?;
    let series_dir = out.join("series");
    fs::create_dir_all(&series_dir)?;
    for (label, points) in &curves {
        emit_to_path(
            &series_table(points),
            format,
            &series_dir.join(format!("{label}.{ext}")),
        )?;
    }

    emit(&by_config, format, std::io::stdout().lock())?;
    if format == Format::Json {
        println!();
    }
    eprintln!(
        "{} summary rows, {} curves written to {}",
        by_segment.len() + by_config.len(),
        curves.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(seed: u64) -> ExitCode {
    let mut ok = true;
    for c in oracle::run_all(seed) {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!(
            "[{status}] {}: {} instances, {} violations, worst {:.4}",
            c.name, c.instances, c.violations, c.worst
        );
        ok &= c.passed();
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_synth(spec: Option<&str>, seed: u64, out: &Path) -> Result<ExitCode> {
    let spec = load_synth(spec, seed)?;
    let (header, records) = synth_stream::<f64>(&spec)?;
    let file = std::io::BufWriter::new(
        fs::File::create(out).with_context(|| format!("creating {}", out.display()))?,
    );
    write_stream(file, &header, &records)?;
    println!(
        "{} records over {} cameras written to {}",
        records.len(),
        header.num_cameras,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(a) => match a.source.precision {
            Precision::F32 => cmd_run::<f32>(&a),
            Precision::F64 => cmd_run::<f64>(&a),
        },
        Command::Grid(a) => match a.source.precision {
            Precision::F32 => cmd_grid::<f32>(&a),
            Precision::F64 => cmd_grid::<f64>(&a),
        },
        Command::Report(a) => cmd_report(&a),
        Command::Oracle { seed } => Ok(cmd_oracle(seed)),
        Command::Synth { synth, seed, out } => cmd_synth(synth.as_deref(), seed, &out),
    }
}

fn main() -> ExitCode {
    dispatch(Cli::parse()).unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
