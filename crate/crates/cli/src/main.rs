use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use wetland_core::classifier::{gradient_check_suite, train, AblationMode};
use wetland_core::dataset::{prepare_pair, DatasetOptions, Region, RegionDataset};
use wetland_core::disentangle::Domain;
use wetland_core::eval::{
    ablation_suite, evaluate, export_latents, rank_candidates, transfer_gain_matrix,
    write_candidates_csv, write_latents_csv, write_metrics_csv,
};
use wetland_core::features::Split;
use wetland_core::grid::{Connectivity, GridGraph};
use wetland_core::io::{load_model, read_region, save_model, write_region, RunConfigFile};
use wetland_core::synth::{generate_pair, generate_region, homophily, Coefficients, SynthConfig};
use wetland_core::Error;

/// Wetland prioritization by knowledge transfer between raster regions.
#[derive(Parser, Debug)]
#[command(name = "wetland", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic region, optionally with a shifted target region.
    Synth(SynthArgs),
    /// Train on a source and target region and save the model.
    Train(TrainArgs),
    /// Print accuracy and recall of a saved model on one split of a region.
    Evaluate(EvaluateArgs),
    /// Train each ablation variant and write their target test metrics.
    Ablate(AblateArgs),
    /// Transfer gain for every ordered pair of regions.
    GainMatrix(GainMatrixArgs),
    /// Non-wetland cells ranked by predicted wetland probability.
    Rank(RankArgs),
    /// Write specific and shared latent vectors for sampled cells.
    ExportLatents(ExportLatentsArgs),
    /// Finite-difference check of the full model on a built-in toy pair.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long)]
    seed: u64,
    /// Output prefix; writes `<out>.manifest.json` and `<out>.cells.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Box-blur radius of the latent field.
    #[arg(long, default_value_t = 3)]
    scale: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    heterophily: f64,
    /// Comma-separated categorical cardinalities.
    #[arg(long, default_value = "4,6", value_delimiter = ',')]
    cardinalities: Vec<u32>,
    #[arg(long, default_value_t = 4)]
    continuous: usize,
    /// Also write a target region sharing the source's coefficients.
    #[arg(long)]
    target_out: Option<PathBuf>,
    #[arg(long)]
    target_density: Option<f64>,
    /// Defaults to `seed + 1`.
    #[arg(long)]
    target_seed: Option<u64>,
    /// Fraction of coefficients redrawn for the target.
    #[arg(long, default_value_t = 0.3)]
    shift: f64,
}

#[derive(Args, Debug)]
struct PairArgs {
    /// Source region (prefix, manifest or cell table path).
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `train.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Model JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    region: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Run configuration used for training; defines the split.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, default_value = "full,no-dd,no-ap")]
    modes: String,
    /// Metrics CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GainMatrixArgs {
    /// Comma-separated region paths.
    #[arg(long, value_delimiter = ',', required = true)]
    regions: Vec<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    region: PathBuf,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportLatentsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Cells sampled per region.
    #[arg(long, default_value_t = 500)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: max relative error {0:e}")]
    GradCheck(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::GradCheck(_) => 4,
            CliError::Io { .. } => 3,
            CliError::Core(e) if e.is_numeric_failure() => 4,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(Error::Config(_) | Error::Argument(_) | Error::Generation(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn load_pair(args: &PairArgs) -> CliResult<(RunConfigFile, RegionDataset, RegionDataset)> {
    let mut config = RunConfigFile::read(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    let source = read_region(&args.source)?;
    let target = read_region(&args.target)?;
    let (ds, dt) = prepare_pair(&source, &target, &config.dataset_options())?;
    Ok((config, ds, dt))
}

/// Regions are named after the file they are written to.
fn named(mut region: Region, prefix: &Path) -> Region {
    if let Some(stem) = prefix.file_name() {
        region.name = stem.to_string_lossy().into_owned();
    }
    region
}

fn print_region_stats(region: &Region, path: &Path) -> CliResult {
    let graph = GridGraph::build(region.width, region.height, Connectivity::Four)?;
    println!(
        "{}: {}×{} density {:.4} homophily {:.4}",
        path.display(),
        region.width,
        region.height,
        region.wetland_fraction(),
        homophily(&region.labels(), &graph)
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let mut source = SynthConfig::with_seed(a.seed);
    source.width = a.width;
    source.height = a.height;
    source.wetland_density = a.density;
    source.spatial_scale = a.scale;
    source.feature_noise = a.noise;
    source.heterophily = a.heterophily;
    source.categorical_cardinalities = a.cardinalities;
    source.n_continuous = a.continuous;
    let Some(target_out) = a.target_out else {
        source.validate()?;
        let coef = Coefficients::sample(
            source.categorical_cardinalities.len(),
            source.n_continuous,
            source.seed,
        );
        let region = named(generate_region(&source, Domain::Source, &coef)?, &a.out);
        write_region(&region, &a.out)?;
        return print_region_stats(&region, &a.out);
    };
    let mut target = source.clone();
    target.seed = a.target_seed.unwrap_or(a.seed.wrapping_add(1));
    target.wetland_density = a.target_density.unwrap_or(a.density);
    target.domain_shift = a.shift;
    let (rs, rt) = generate_pair(&source, &target)?;
    let (rs, rt) = (named(rs, &a.out), named(rt, &target_out));
    write_region(&rs, &a.out)?;
    write_region(&rt, &target_out)?;
    print_region_stats(&rs, &a.out)?;
    print_region_stats(&rt, &target_out)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let (config, ds, dt) = load_pair(&a.pair)?;
    let (model, report) = train(&ds, &dt, &config.train)?;
    save_model(&model, &a.out)?;
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(p, text + "\n").map_err(|source| CliError::Io {
            path: p.clone(),
            source,
        })?;
    }
    println!(
        "best epoch {} of {}; val accuracy {:.4}; test accuracy {:.4} recall {:.4}",
        report.best_epoch,
        report.last_epoch() + 1,
        report.best_val_accuracy,
        report.test_metrics.accuracy,
        report.test_metrics.recall
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    let split: Split = a
        .split
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let model = load_model(&a.model)?;
    let options = match &a.config {
        Some(p) => RunConfigFile::read(p)?.dataset_options(),
        None => DatasetOptions::with_seed(model.config.seed),
    };
    let region = read_region(&a.region)?;
    let data = RegionDataset::build(&region, &model.schema, &options)?;
    let m = evaluate(&model, &data, data.split.get(split))?;
    let recall = if m.recall_defined {
        format!("{:.6}", m.recall)
    } else {
        "undefined".into()
    };
    println!(
        "accuracy {:.6} recall {recall} tp {} fp {} tn {} fn {}",
        m.accuracy, m.tp, m.fp, m.tn, m.fn_
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> CliResult {
    let modes = AblationMode::parse_list(&a.modes).map_err(|e| CliError::Usage(e.to_string()))?;
    let (config, ds, dt) = load_pair(&a.pair)?;
    let rows: Vec<(String, _)> = ablation_suite(&ds, &dt, &config.train, &modes)?
        .into_iter()
        .map(|(m, metrics)| (m.to_string(), metrics))
        .collect();
    write_metrics_csv(output(a.out.as_deref())?, &rows)?;
    Ok(())
}

fn cmd_gain_matrix(a: GainMatrixArgs) -> CliResult {
    let config = RunConfigFile::read(&a.config)?;
    let regions = a
        .regions
        .iter()
        .map(|p| read_region(p))
        .collect::<Result<Vec<_>, _>>()?;
    let matrix =
        transfer_gain_matrix(&regions, &config.train, &config.dataset_options(), &a.seeds)?;
    for (s, row) in matrix.entries.iter().enumerate() {
        for (t, entry) in row.iter().enumerate() {
            for d in &entry.diagnostics {
                eprintln!("{} → {}: {d}", matrix.names[s], matrix.names[t]);
            }
        }
    }
    matrix.write_csv(output(a.out.as_deref())?)?;
    Ok(())
}

fn cmd_rank(a: RankArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let region = read_region(&a.region)?;
    let data = RegionDataset::build(
        &region,
        &model.schema,
        &DatasetOptions::with_seed(model.config.seed),
    )?;
    let cells = rank_candidates(&model, &data, a.top_k)?;
    write_candidates_csv(output(a.out.as_deref())?, &cells)?;
    Ok(())
}

fn cmd_export_latents(a: ExportLatentsArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let options = DatasetOptions::with_seed(model.config.seed);
    let source = RegionDataset::build(&read_region(&a.source)?, &model.schema, &options)?;
    let target = RegionDataset::build(&read_region(&a.target)?, &model.schema, &options)?;
    let rows = export_latents(&model, &source, &target, a.sample, a.seed)?;
    write_latents_csv(output(a.out.as_deref())?, &rows, model.config.hidden)?;
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    let reports = gradient_check_suite(a.hidden, a.seed)?;
    let mut worst = 0.0f64;
    for (name, r) in &reports {
        println!("{name:<14} max relative error {:.3e}", r.max_rel_error);
        worst = worst.max(r.max_rel_error);
    }
    if worst < a.tolerance {
        println!("ok: {} variants below {:e}", reports.len(), a.tolerance);
        Ok(())
    } else {
        Err(CliError::GradCheck(worst))
    }
}

fn run(cli: Cli) -> CliResult {
    info!("{:?}", cli.command);
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GainMatrix(a) => cmd_gain_matrix(a),
        Command::Rank(a) => cmd_rank(a),
        Command::ExportLatents(a) => cmd_export_latents(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
