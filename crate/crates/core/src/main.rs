use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pairperm::data::{filter_low_abundance, rarefy, CountTable};
use pairperm::importance::{ImportanceLoss, Method};
use pairperm::learners::LearnerSpec;
use pairperm::pipeline::{
    replay, with_workers, write_outputs, CorrelationScope, DataSource, ImportanceConfig, ImportanceReport, Manifest,
    ScalingScope,
};
use pairperm::toy::{generate_toy, CovarianceOverride, Scenario, ToyConfig, UniformTransform};
use pairperm::{Error, ErrorKind, Result};

const WORKERS_ENV: &str = "PAIRPERM_WORKERS";

#[derive(Parser)]
#[command(name = "pairperm", version, about = "Pairwise permute-and-relearn feature importance")]
struct Cli {
    /// Worker threads (default: $PAIRPERM_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic correlated-feature dataset as CSV.
    GenToy(GenToyArgs),
    /// Run an importance method over repeated stratified splits.
    Importance(ImportanceArgs),
    /// Rarefy a count table and drop low-abundance features.
    Preprocess(PreprocessArgs),
    /// Run one of the reference scenarios A_pair_ppa, B_pair_spi, C_irrelevant_ppa.
    Scenario(ScenarioArgs),
    /// Re-run from a manifest.json.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GenToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,
    /// Covariance override "i,j,rho" with 1-based feature indices; repeatable.
    #[arg(long = "cov", value_parser = parse_override, default_value = "1,2,0.9")]
    overrides: Vec<CovarianceOverride>,
    /// Ignore any --cov and use the identity covariance.
    #[arg(long)]
    independent: bool,
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    #[arg(long)]
    no_noise_feature: bool,
    #[arg(long, value_enum, default_value_t = UniformArg::NormalCdf)]
    uniform: UniformArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum UniformArg {
    NormalCdf,
    EmpiricalRank,
}

#[derive(Args)]
struct ImportanceArgs {
    /// CSV dataset with a header row.
    #[arg(long, conflicts_with = "toy")]
    data: Option<PathBuf>,
    /// Use a reference scenario's synthetic data instead of --data.
    #[arg(long)]
    toy: Option<String>,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Label value treated as class 1; otherwise labels must be 0/1.
    #[arg(long)]
    positive_label: Option<String>,
    #[arg(long, value_enum, default_value_t = MethodArg::Ppa)]
    method: MethodArg,
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    splits: usize,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, default_value = "gbt")]
    family: String,
    /// JSON file holding a list of learner specs to search instead of the default grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Logloss)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = CorrScopeArg::Train)]
    correlation_scope: CorrScopeArg,
    #[arg(long, value_enum, default_value_t = ScaleScopeArg::PerSplit)]
    scaling_scope: ScaleScopeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ppa,
    Spi,
    Fisher,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Logloss,
    OneMinusAuc,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrScopeArg {
    Train,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleScopeArg {
    PerSplit,
    Global,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Count CSV: sample id column followed by one integer column per feature.
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    depth: u64,
    #[arg(long, default_value_t = 6.0)]
    min_mean: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the number of splits (default 50).
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_override(s: &str) -> std::result::Result<CovarianceOverride, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [i, j, rho] = parts.as_slice() else {
        return Err(format!("expected i,j,rho but got '{s}'"));
    };
    Ok(CovarianceOverride {
        i: i.parse().map_err(|e| format!("bad index '{i}': {e}"))?,
        j: j.parse().map_err(|e| format!("bad index '{j}': {e}"))?,
        rho: rho.parse().map_err(|e| format!("bad rho '{rho}': {e}"))?,
    })
}

fn print_report(report: &ImportanceReport) {
    println!("{}", report.summary_line());
    println!("selected learner: {}", serde_json::to_string(&report.selected_spec).unwrap_or_default());
    let mut pair_sets: Vec<&Vec<(usize, usize)>> = report.realized_pairs.iter().collect();
    pair_sets.dedup();
    for pairs in pair_sets {
        if pairs.is_empty() {
            continue;
        }
        let named: Vec<String> = pairs
            .iter()
            .map(|&(i, j)| format!("({}, {})", report.feature_names[i], report.feature_names[j]))
            .collect();
        println!("correlated pairs above alpha: {}", named.join(" "));
    }
    print!("{}", report.top_table(15));
}

fn run_and_write(manifest: &Manifest, out: &Path, workers: Option<usize>) -> Result<ImportanceReport> {
    let report = with_workers(workers, || manifest.execute())??;
    write_outputs(out, manifest, &report)?;
    Ok(report)
}

fn importance_manifest(args: ImportanceArgs) -> Result<Manifest> {
    let source = match (args.data, args.toy) {
        (Some(path), None) => DataSource::Csv {
            path,
            label_column: args.label_column,
            positive_label: args.positive_label,
        },
        (None, Some(name)) => {
            let scenario: Scenario = name.parse()?;
            DataSource::Toy {
                scenario: Some(scenario.name().to_string()),
                config: scenario.toy_config(args.seed),
            }
        }
        _ => return Err(Error::InvalidConfig("exactly one of --data or --toy is required".into())),
    };
    let grid = match &args.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?;
            let specs: Vec<LearnerSpec> =
                serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?;
            Some(specs)
        }
        None => None,
    };
    let config = ImportanceConfig {
        method: match args.method {
            MethodArg::Ppa => Method::Ppa,
            MethodArg::Spi => Method::Spi,
            MethodArg::Fisher => Method::Fisher,
        },
        alpha: args.alpha,
        n_splits: args.splits,
        test_fraction: args.test_fraction,
        family: args.family,
        grid,
        cv_folds: args.cv_folds,
        loss: match args.loss {
            LossArg::Logloss => ImportanceLoss::Logloss,
            LossArg::OneMinusAuc => ImportanceLoss::OneMinusAuc,
        },
        correlation_scope: match args.correlation_scope {
            CorrScopeArg::Train => CorrelationScope::Train,
            CorrScopeArg::Full => CorrelationScope::Full,
        },
        scaling_scope: match args.scaling_scope {
            ScaleScopeArg::PerSplit => ScalingScope::PerSplit,
            ScaleScopeArg::Global => ScalingScope::Global,
        },
        seed: args.seed,
    };
    config.validate()?;
    Ok(Manifest::new(source, config))
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli
        .workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()));
    match cli.command {
        Command::GenToy(args) => {
            let config = ToyConfig {
                n_samples: args.n_samples,
                covariance_overrides: if args.independent { Vec::new() } else { args.overrides },
                noise_sd: args.noise_sd,
                add_noise_feature: !args.no_noise_feature,
                uniform_transform: match args.uniform {
                    UniformArg::NormalCdf => UniformTransform::NormalCdf,
                    UniformArg::EmpiricalRank => UniformTransform::EmpiricalRank,
                },
                seed: args.seed,
            };
            let table = generate_toy(&config)?;
            table.write_csv(&args.out)?;
            println!("wrote {} rows x {} feature columns + label to {}", table.n_rows(), table.n_features(), args.out.display());
        }
        Command::Importance(args) => {
            let out = args.out.clone();
            let manifest = importance_manifest(args)?;
            let report = run_and_write(&manifest, &out, workers)?;
            print_report(&report);
            println!("reports written to {}", out.display());
        }
        Command::Preprocess(args) => {
            let counts = CountTable::load_csv(&args.counts)?;
            let rarefied = rarefy(&counts, args.depth, args.seed)?;
            let filtered = filter_low_abundance(&rarefied, args.min_mean);
            filtered.write_csv(&args.out)?;
            println!(
                "{} samples rarefied to {} reads; kept {} of {} features with mean >= {}",
                filtered.sample_ids().len(),
                args.depth,
                filtered.feature_names().len(),
                counts.feature_names().len(),
                args.min_mean
            );
        }
        Command::Scenario(args) => {
            let scenario: Scenario = args.name.parse()?;
            let mut manifest = scenario.manifest(args.seed);
            if let Some(n) = args.splits {
                manifest.config.n_splits = n;
            }
            manifest.config.validate()?;
            let report = run_and_write(&manifest, &args.out, workers)?;
            print_report(&report);
            let summary = format!("{}: {}\n", scenario.name(), report.summary_line());
            let path = args.out.join("summary.txt");
            std::fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
            print!("{summary}");
        }
        Command::Replay { manifest, out } => {
            let report = with_workers(workers, || replay(&manifest, &out))??;
            print_report(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
