//! `soi`: command-line front end for the training-dynamics toolkit.

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;
use soi_core::cartography::{self, build_map, render_map, Metric, RegionThresholds};
use soi_core::dynamics::{self, TrainingDynamics, LOG_FORMAT_VERSION};
use soi_core::selection::{export_subset, select_with, SelectOptions, Strategy};
use soi_core::soi::{classify_run, default_cutoff, SoiAssignment, SoiCategory};
use soi_core::toy::{generate_dataset, run_pipeline, train, ExperimentConfig, MultiHeadModel, SyntheticTaskSpec, TrainConfig};
use soi_core::transitions::build_heatmap_with;
use soi_core::Error;

#[derive(Debug, Parser)]
#[command(name = "soi", about = "Subsets-of-interest analysis of per-epoch training dynamics")]
struct Cli {
    /// Root for relative output paths.
    #[arg(long, global = true, env = "SOI_OUT_DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a JSONL dynamics log and summarise one run.
    Ingest(IngestArgs),
    /// Assign every example of a run to a subset of interest.
    Classify(ClassifyArgs),
    /// Confidence/variability map of a run.
    Carto(CartoArgs),
    /// Transition heatmap between two SOI tables.
    Heatmap(HeatmapArgs),
    /// Second-stage subset from two SOI tables.
    Select(SelectArgs),
    /// Train a synthetic task and write its dynamics log.
    Simulate(SimulateArgs),
    /// Run the full two-stage experiment from a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct LogInput {
    /// JSONL prediction log.
    #[arg(long)]
    log: PathBuf,
    /// Run to read; required when the log holds several.
    #[arg(long)]
    run: Option<String>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    input: LogInput,
    /// Write the run back out as canonical, sorted JSONL.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    input: LogInput,
    /// Last epoch counted as early learning [default: floor(E/2)].
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CartoArgs {
    #[command(flatten)]
    input: LogInput,
    #[arg(long)]
    cutoff: Option<usize>,
    /// Probability series: p_pred or p_true.
    #[arg(long, default_value = "p_pred", value_parser = parse_metric)]
    metric: Metric,
    #[arg(long, default_value_t = 0.2)]
    var_cutoff: f64,
    #[arg(long, default_value_t = 0.5)]
    conf_cutoff: f64,
    /// Coordinates CSV.
    #[arg(long)]
    out: PathBuf,
    /// Scatter plot.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PairArgs {
    /// Source (single-setting) SOI CSV.
    #[arg(long)]
    a: PathBuf,
    /// Target (multi-setting) SOI CSV.
    #[arg(long)]
    b: PathBuf,
    /// Run id of `--a` [default: file stem].
    #[arg(long)]
    a_run: Option<String>,
    /// Run id of `--b` [default: file stem].
    #[arg(long)]
    b_run: Option<String>,
    /// Restrict both tables to their shared examples instead of failing.
    #[arg(long)]
    intersect: bool,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// I to VI.
    #[arg(long, default_value = "III", value_parser = parse_strategy)]
    strategy: Strategy,
    #[command(flatten)]
    pair: PairArgs,
    /// Subset file; the manifest goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
    /// Count never-learned examples as forgettable (IV and V).
    #[arg(long)]
    include_une: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Task spec as JSON; overrides the blob flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    task_id: String,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.1)]
    label_noise: f64,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 16)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dynamics log to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
    config: Option<PathBuf>,
    /// Use the built-in two-task config instead of a file.
    #[arg(long)]
    reference: bool,
    /// Seed for `--reference`.
    #[arg(long, default_value_t = 0, requires = "reference")]
    seed: u64,
    /// Print the resolved config as JSON and exit without running.
    #[arg(long)]
    dump_config: bool,
    /// Output directory, replaced as a whole.
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: cartography::CartographyError| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: soi_core::SelectionError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let version: &'static str =
        Box::leak(format!("{} (log format {LOG_FORMAT_VERSION})", env!("CARGO_PKG_VERSION")).into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches come from the same command");
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::from(1)
        }
    }
}

/// Resolves output paths against `--out-dir`.
struct Outputs(Option<PathBuf>);

impl Outputs {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.0 {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let outs = Outputs(cli.out_dir);
    match cli.command {
        Command::Ingest(args) => ingest(args, &outs),
        Command::Classify(args) => classify(args, &outs),
        Command::Carto(args) => carto(args, &outs),
        Command::Heatmap(args) => heatmap(args, &outs),
        Command::Select(args) => select(args, &outs),
        Command::Simulate(args) => simulate(args, &outs),
        Command::Pipeline(args) => pipeline(args, &outs),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path).map(BufReader::new).map_err(Error::io(path))
}

fn require_inputs(paths: &[&Path]) -> Result<(), Error> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::io(*p)(io::Error::new(io::ErrorKind::NotFound, "input file not found")));
        }
    }
    Ok(())
}

/// Writes via a sibling temporary file and a rename, so readers never see
/// a half-written output.
fn write_output(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    soi_core::write_file(&tmp, bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path)(e)
    })
}

fn load_run(input: &LogInput) -> Result<TrainingDynamics, Error> {
    require_inputs(&[&input.log])?;
    let records = dynamics::parse_log(open(&input.log)?)?;
    Ok(dynamics::ingest_single(records, input.run.as_deref())?)
}

fn classify_with(d: &TrainingDynamics, cutoff: Option<usize>) -> Result<(SoiAssignment, usize), Error> {
    let tau = cutoff.unwrap_or_else(|| default_cutoff(d.num_epochs()));
    Ok((classify_run(d, tau)?, tau))
}

fn print_census(a: &SoiAssignment) {
    let census = a.census();
    for c in SoiCategory::ALL {
        println!("{:<10} {}", c.display_label(), census[c]);
    }
}

fn ingest(args: IngestArgs, outs: &Outputs) -> Result<(), Error> {
    let d = load_run(&args.input)?;
    let (assignment, tau) = classify_with(&d, None)?;
    println!(
        "run {}: {} examples, {} epochs, p_true {}",
        d.run_id(),
        d.len(),
        d.num_epochs(),
        if d.has_p_true() { "present" } else { "absent" }
    );
    println!("# cutoff {tau} (default)");
    print_census(&assignment);
    if let Some(out) = args.out {
        let out = outs.path(&out);
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).map_err(Error::io(&out))?;
        write_output(&out, &buf)?;
        info!("wrote {}", out.display());
    }
    Ok(())
}

fn classify(args: ClassifyArgs, outs: &Outputs) -> Result<(), Error> {
    let d = load_run(&args.input)?;
    let (assignment, tau) = classify_with(&d, args.cutoff)?;
    let out = outs.path(&args.out);
    let mut buf = Vec::new();
    assignment.write_csv(&mut buf)?;
    write_output(&out, &buf)?;
    println!(
        "# run {} epochs {} cutoff {tau}{}",
        d.run_id(),
        d.num_epochs(),
        if args.cutoff.is_none() { " (default)" } else { "" }
    );
    print_census(&assignment);
    println!("wrote {}", out.display());
    Ok(())
}

fn carto(args: CartoArgs, outs: &Outputs) -> Result<(), Error> {
    let thresholds = RegionThresholds::new(args.var_cutoff, args.conf_cutoff)?;
    let d = load_run(&args.input)?;
    let (assignment, tau) = classify_with(&d, args.cutoff)?;
    let points = build_map(&d, &assignment, &thresholds, args.metric)?;
    let svg = match &args.svg {
        Some(_) => Some(render_map(&points, &format!("{} ({})", d.run_id(), args.metric.label()))?),
        None => None,
    };
    let out = outs.path(&args.out);
    let mut buf = Vec::new();
    cartography::write_csv(&points, &mut buf).map_err(Error::io(&out))?;
    write_output(&out, &buf)?;
    println!(
        "# run {} metric {} cutoff {tau} var_cutoff {} conf_cutoff {}",
        d.run_id(),
        args.metric.label(),
        thresholds.var_cutoff(),
        thresholds.conf_cutoff()
    );
    println!("wrote {}", out.display());
    if let (Some(path), Some(svg)) = (args.svg, svg) {
        let path = outs.path(&path);
        write_output(&path, svg.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn load_pair(pair: &PairArgs) -> Result<(SoiAssignment, SoiAssignment), Error> {
    require_inputs(&[&pair.a, &pair.b])?;
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let a_run = pair.a_run.clone().unwrap_or_else(|| stem(&pair.a));
    let b_run = pair.b_run.clone().unwrap_or_else(|| stem(&pair.b));
    let a = SoiAssignment::read_csv(open(&pair.a)?, &a_run)?;
    let b = SoiAssignment::read_csv(open(&pair.b)?, &b_run)?;
    Ok((a, b))
}

fn heatmap(args: HeatmapArgs, outs: &Outputs) -> Result<(), Error> {
    let (a, b) = load_pair(&args.pair)?;
    let m = build_heatmap_with(&a, &b, args.pair.intersect)?;
    let out = outs.path(&args.out);
    let mut buf = Vec::new();
    m.write_csv(&mut buf).map_err(Error::io(&out))?;
    write_output(&out, &buf)?;
    println!("# {} -> {}: {} examples", m.source_run, m.target_run, m.total);
    io::stdout().write_all(&buf).map_err(Error::io("<stdout>"))?;
    println!("wrote {}", out.display());
    if let Some(svg) = args.svg {
        let svg = outs.path(&svg);
        write_output(&svg, m.render_svg().as_bytes())?;
        println!("wrote {}", svg.display());
    }
    Ok(())
}

fn select(args: SelectArgs, outs: &Outputs) -> Result<(), Error> {
    let (a, b) = load_pair(&args.pair)?;
    let opts = SelectOptions {
        include_une: args.include_une,
        intersect: args.pair.intersect,
    };
    let result = select_with(args.strategy, &a, &b, opts)?;
    let out = outs.path(&args.out);
    let manifest = export_subset(&result, &out)?;
    println!(
        "strategy {} ({} -> {}): {} of {} examples",
        result.strategy,
        result.source_run,
        result.target_run,
        result.len(),
        a.len().max(b.len())
    );
    println!("wrote {}", out.display());
    println!("wrote {}", manifest.display());
    Ok(())
}

fn simulate(args: SimulateArgs, outs: &Outputs) -> Result<(), Error> {
    let spec: SyntheticTaskSpec = match &args.spec {
        Some(path) => {
            require_inputs(&[path])?;
            serde_json::from_reader(open(path)?).map_err(|source| Error::Json { path: path.clone(), source })?
        }
        None => {
            let mut spec = SyntheticTaskSpec::blobs(&args.task_id, args.classes, args.dim, args.radius, args.seed);
            spec.label_noise_rate = args.label_noise;
            spec.n_train = args.n_train;
            spec
        }
    };
    let data = generate_dataset(&spec)?;
    let mut model = MultiHeadModel::new(
        data.input_dim,
        args.hidden_dim,
        &[(&data.task_id, data.num_classes)],
        args.seed,
    );
    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        batch_size: args.batch_size,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &[&data], &cfg, "sim")?;
    let d = &outcome.dynamics[0];
    let out = outs.path(&args.out);
    let mut buf = Vec::new();
    d.write_jsonl(&mut buf).map_err(Error::io(&out))?;
    write_output(&out, &buf)?;
    let losses = &outcome.epoch_losses[&data.task_id];
    println!(
        "run {}: {} examples x {} epochs, loss {:.4} -> {:.4}",
        d.run_id(),
        d.len(),
        d.num_epochs(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn pipeline(args: PipelineArgs, outs: &Outputs) -> Result<(), Error> {
    let config = match &args.config {
        Some(path) => {
            require_inputs(&[path])?;
            serde_json::from_reader(open(path)?).map_err(|source| Error::Json { path: path.clone(), source })?
        }
        None => ExperimentConfig::reference(args.seed),
    };
    if args.dump_config {
        let json = serde_json::to_string_pretty(&config).expect("config serializes");
        println!("{json}");
        return Ok(());
    }
    let out = outs.path(args.out.as_deref().expect("required by clap"));
    let report = run_pipeline(&config, &out)?;
    println!("# {} seed {} cutoff {}", report.config.name, report.config.seed, config.cutoff());
    for run in &report.runs {
        let counts: Vec<String> = SoiCategory::ALL
            .iter()
            .map(|&c| format!("{}={}", c.label(), run.census[c]))
            .collect();
        println!("{:<16} {}", run.run_id, counts.join(" "));
    }
    for acc in &report.accuracies {
        let multi = acc
            .multi_setting
            .map(|m| format!(" multi {:.3}/{:.3}", m.id, m.ood))
            .unwrap_or_default();
        println!(
            "{:<16} single {:.3}/{:.3}{multi} stage2 {:.3}/{:.3} (id/ood)",
            acc.task_id,
            acc.single_setting.id,
            acc.single_setting.ood,
            acc.second_stage.id,
            acc.second_stage.ood
        );
    }
    println!(
        "selection {}: {} examples",
        report.selection.strategy, report.selection.total
    );
    println!("wrote {}", out.display());
    Ok(())
}
