//! Command-line front end. Stages communicate only through files in the
//! dataset and output directories.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::charting::ChartModel;
use crate::dissimilarity::{load_matrix, save_matrix, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{compare_methods, render_table, write_ecdf_csv, write_report_csv};
use crate::io::{dataset_checksum, read_dataset, read_meta, read_positions_csv, sha256_hex, write_dataset, write_positions_csv};
use crate::likelihood::EstimateBundle;
use crate::model::{validate_dataset, Dataset, Scenario, Vec2};
use crate::pipeline::{self, PipelineConfig};
use crate::solver::{write_localization_csv, Method};

#[derive(Debug, Parser)]
#[command(name = "ccloc", version, about = "Classical and channel-charting localization on OFDM CSI")]
pub struct Cli {
    /// Pipeline configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Dataset directory, overrides the config.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate,
    /// Classical maximum-likelihood localization.
    Localize {
        #[arg(long, value_enum)]
        method: LocalizeMethod,
    },
    /// Train a channel chart.
    Chart {
        #[arg(long, value_enum)]
        mode: ChartMode,
    },
    /// Compare all available method outputs against the ground truth.
    Evaluate,
    /// Check a dataset directory for consistency.
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LocalizeMethod {
    Toa,
    Aoa,
    Joint,
}

impl LocalizeMethod {
    fn method(self) -> Method {
        match self {
            LocalizeMethod::Toa => Method::Toa,
            LocalizeMethod::Aoa => Method::Aoa,
            LocalizeMethod::Joint => Method::AoaToa,
        }
    }

    fn slug(self) -> &'static str {
        match self {
            LocalizeMethod::Toa => "toa",
            LocalizeMethod::Aoa => "aoa",
            LocalizeMethod::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChartMode {
    Siamese,
    Augmented,
}

/// `(slug, label, file)` of every method `evaluate` knows about.
pub const METHOD_OUTPUTS: [(&str, &str, &str); 5] = [
    ("toa", "ML:ToA", "estimates_toa.csv"),
    ("aoa", "ML:AoA", "estimates_aoa.csv"),
    ("joint", "ML:AoA/ToA", "estimates_joint.csv"),
    ("siamese", "CC: T_c∘C_θ", "chart_siamese.csv"),
    ("augmented", "CC: C_θ,aug", "chart_augmented.csv"),
];

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 2 for bad input, 1 for internal failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::format(path, e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(d) = &cli.dataset {
        config.dataset_dir = d.clone();
    }
    if let Some(o) = &cli.output {
        config.output_dir = o.clone();
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be positive"));
        }
        // Ignore the error when a pool already exists (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = load_config(cli)?;
    config.validate()?;
    info!("master seed {}", config.seed);
    match &cli.command {
        Command::Simulate => cmd_simulate(&config),
        Command::Localize { method } => cmd_localize(&config, *method),
        Command::Chart { mode } => cmd_chart(&config, *mode),
        Command::Evaluate => cmd_evaluate(&config),
        Command::Validate => cmd_validate(&config),
    }
}

fn cmd_simulate(config: &PipelineConfig) -> Result<()> {
    let (dataset, los) = pipeline::simulate(config)?;
    write_dataset(&config.dataset_dir, &config.scenario, &dataset)?;
    println!("wrote {} datapoints to {}", dataset.len(), config.dataset_dir.display());
    for (b, f) in los.iter().enumerate() {
        println!("array {b}: LoS fraction {f:.3}");
    }
    Ok(())
}

fn load_dataset(config: &PipelineConfig) -> Result<(Scenario, Dataset, String)> {
    let dir = &config.dataset_dir;
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("dataset directory {} not found", dir.display()))));
    }
    let (scenario, dataset) = read_dataset(dir)?;
    let report = validate_dataset(&dataset, &scenario);
    if !report.is_valid() {
        return Err(Error::invalid(format!("dataset {} has {} violations; run `ccloc validate`", dir.display(), report.violations.len())));
    }
    Ok((scenario, dataset, dataset_checksum(dir)?))
}

fn cache_dir(config: &PipelineConfig) -> Result<PathBuf> {
    let d = config.output_dir.join("cache");
    fs::create_dir_all(&d)?;
    Ok(d)
}

/// Estimate bundle, cached by dataset checksum and estimator settings.
fn bundle_for(config: &PipelineConfig, scenario: &Scenario, dataset: &Dataset, checksum: &str) -> Result<EstimateBundle> {
    let key = sha256_hex(&[b"bundle-v1", checksum.as_bytes(), &serde_json::to_vec(&config.toa)?, &serde_json::to_vec(&config.quality)?]);
    let path = cache_dir(config)?.join(format!("bundle-{key}.json"));
    if path.exists() {
        info!("cache hit: estimate bundle {}", path.display());
        let bundle: EstimateBundle = serde_json::from_slice(&fs::read(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
        bundle.validate()?;
        if bundle.len() != dataset.len() {
            return Err(Error::format(&path, "cached bundle does not match the dataset"));
        }
        return Ok(bundle);
    }
    info!("estimating ToA/AoA for {} datapoints", dataset.len());
    let est = pipeline::estimate(dataset, scenario, &config.toa, &config.quality)?;
    fs::write(&path, serde_json::to_vec(&est.bundle)?)?;
    Ok(est.bundle)
}

fn write_bundle_csvs(dir: &Path, bundle: &EstimateBundle) -> Result<()> {
    let mut toa = csv::Writer::from_path(dir.join("toa.csv"))?;
    toa.write_record(["index", "b", "tau_s", "delay_spread_s"])?;
    let mut aoa = csv::Writer::from_path(dir.join("aoa.csv"))?;
    aoa.write_record(["index", "b", "azimuth_rad"])?;
    for l in 0..bundle.len() {
        for b in 0..bundle.b_count() {
            toa.write_record([l.to_string(), b.to_string(), bundle.toa[l][b].to_string(), bundle.delay_spread[l][b].to_string()])?;
            aoa.write_record([l.to_string(), b.to_string(), bundle.aoa[l][b].to_string()])?;
        }
    }
    toa.flush()?;
    aoa.flush()?;
    Ok(())
}

fn mae_of(truth: &[Vec2], est: &[Option<Vec2>]) -> (f64, usize) {
    let errs: Vec<f64> = truth.iter().zip(est).filter_map(|(t, e)| e.map(|e| (t - e).norm())).collect();
    (errs.iter().sum::<f64>() / errs.len().max(1) as f64, est.len() - errs.len())
}

fn cmd_localize(config: &PipelineConfig, method: LocalizeMethod) -> Result<()> {
    let (scenario, dataset, checksum) = load_dataset(config)?;
    fs::create_dir_all(&config.output_dir)?;
    // ToA estimation always runs: AoA needs it for LoS extraction.
    let bundle = bundle_for(config, &scenario, &dataset, &checksum)?;
    write_bundle_csvs(&config.output_dir, &bundle)?;
    let results = pipeline::localize(&bundle, &scenario, method.method(), &config.solver)?;
    let path = config.output_dir.join(format!("estimates_{}.csv", method.slug()));
    write_localization_csv(fs::File::create(&path)?, &results)?;
    let est: Vec<Option<Vec2>> = results.iter().map(|r| r.position).collect();
    let (mae, failed) = mae_of(&dataset.positions_2d(), &est);
    eprintln!("{}: MAE {mae:.3} m over {} points ({failed} failed) -> {}", method.method().name(), est.len() - failed, path.display());
    Ok(())
}

fn joint_estimates(config: &PipelineConfig, n: usize) -> Result<Vec<Option<Vec2>>> {
    let path = config.output_dir.join("estimates_joint.csv");
    if !path.exists() {
        return Err(Error::invalid(format!("{} not found; run `ccloc localize --method joint` first", path.display())));
    }
    let est = read_positions_csv(&path)?;
    if est.len() != n {
        return Err(Error::format(&path, format!("{} rows for {n} datapoints", est.len())));
    }
    Ok(est)
}

/// Geodesic dissimilarities, cached by dataset checksum and settings. Values
/// are rounded to `f32` on both paths so hits and misses agree exactly.
fn geodesic_for(config: &PipelineConfig, dataset: &Dataset, checksum: &str) -> Result<DissimilarityMatrix> {
    let params = serde_json::to_value(&config.dissimilarity)?;
    let key = sha256_hex(&[b"geodesic-v1", checksum.as_bytes(), params.to_string().as_bytes()]);
    let path = cache_dir(config)?.join(format!("geodesic-{key}.bin"));
    if path.exists() {
        info!("cache hit: geodesic dissimilarities {}", path.display());
        let (d, _) = load_matrix(&path)?;
        if d.len() != dataset.len() {
            return Err(Error::format(&path, "cached matrix does not match the dataset"));
        }
        return Ok(d);
    }
    info!("computing {0}x{0} geodesic dissimilarities", dataset.len());
    let d = pipeline::geodesic_dissimilarity(dataset, &config.dissimilarity)?;
    save_matrix(&d, &path, params)?;
    let q = d.data().iter().map(|&v| v as f32 as f64).collect();
    DissimilarityMatrix::from_vec(d.stage, d.len(), q)
}

fn cmd_chart(config: &PipelineConfig, mode: ChartMode) -> Result<()> {
    let (scenario, dataset, checksum) = load_dataset(config)?;
    fs::create_dir_all(&config.output_dir)?;
    let ml = joint_estimates(config, dataset.len())?;
    let geodesic = geodesic_for(config, &dataset, &checksum)?;
    let (scaled, _) = pipeline::scale_dissimilarity(&geodesic, &ml, &config.dissimilarity, config.seeds().gamma)?;
    let train = config.train_config();
    let (model, positions, name) = match mode {
        ChartMode::Siamese => {
            let (m, p) = pipeline::chart_siamese(&dataset, &scaled, &ml, &config.features, &train)?;
            (m, p, "siamese")
        }
        ChartMode::Augmented => {
            let bundle = bundle_for(config, &scenario, &dataset, &checksum)?;
            let (m, p) = pipeline::chart_augmented(&dataset, &scaled, &bundle, &scenario, &config.features, &train)?;
            (m, p, "augmented")
        }
    };
    let model_path = config.output_dir.join(format!("model_{name}.ccm"));
    model.save(&model_path)?;
    // Report positions from the stored (f32) parameters.
    let stored = ChartModel::load(&model_path)?;
    let positions = if stored == model { positions } else { stored.predict_dataset(&dataset)? };
    let chart_path = config.output_dir.join(format!("chart_{name}.csv"));
    write_positions_csv(fs::File::create(&chart_path)?, &positions)?;
    let est: Vec<Option<Vec2>> = positions.iter().map(|p| Some(*p)).collect();
    let (mae, _) = mae_of(&dataset.positions_2d(), &est);
    eprintln!("chart ({name}): MAE {mae:.3} m -> {}", chart_path.display());
    Ok(())
}

fn cmd_evaluate(config: &PipelineConfig) -> Result<()> {
    let meta = read_meta(&config.dataset_dir)?;
    let truth: Vec<Vec2> = meta.iter().map(|(_, p)| Vec2::new(p[0], p[1])).collect();
    for m in &config.methods {
        if !METHOD_OUTPUTS.iter().any(|(slug, _, _)| slug == m) {
            return Err(Error::invalid(format!("unknown method {m:?}")));
        }
    }
    let mut outputs = Vec::new();
    let mut slugs = Vec::new();
    for (slug, label, file) in METHOD_OUTPUTS {
        let wanted = config.methods.is_empty() || config.methods.iter().any(|m| m == slug);
        let path = config.output_dir.join(file);
        if !wanted {
            continue;
        }
        if !path.exists() {
            if config.methods.is_empty() {
                continue;
            }
            return Err(Error::invalid(format!("missing output for method {slug}: {}", path.display())));
        }
        let est = read_positions_csv(&path)?;
        if est.len() != truth.len() {
            return Err(Error::format(&path, format!("{} rows for {} datapoints", est.len(), truth.len())));
        }
        let valid = pipeline::valid_estimates(&est);
        if valid.len() < est.len() {
            warn!("{label}: {} failed estimates excluded", est.len() - valid.len());
        }
        let t: Vec<Vec2> = valid.iter().map(|v| truth[v.0]).collect();
        let e: Vec<Vec2> = valid.iter().map(|v| v.1).collect();
        outputs.push((label.to_string(), e, t));
        slugs.push(slug);
    }
    if outputs.is_empty() {
        return Err(Error::invalid(format!("no method outputs found in {}", config.output_dir.display())));
    }
    let mut reports = Vec::new();
    for (label, e, t) in &outputs {
        reports.extend(compare_methods(t, &[(label.clone(), e.clone())], None)?);
    }
    write_report_csv(fs::File::create(config.output_dir.join("report.csv"))?, &reports)?;
    for (r, slug) in reports.iter().zip(&slugs) {
        write_ecdf_csv(fs::File::create(config.output_dir.join(format!("ecdf_{slug}.csv")))?, &r.ecdf)?;
    }
    print!("{}", render_table(&reports));
    Ok(())
}

fn cmd_validate(config: &PipelineConfig) -> Result<()> {
    let (scenario, dataset) = read_dataset(&config.dataset_dir)?;
    let report = validate_dataset(&dataset, &scenario);
    if report.is_valid() {
        println!("{}: {} datapoints, valid", config.dataset_dir.display(), dataset.len());
        return Ok(());
    }
    for v in &report.violations {
        println!("{v:?}");
    }
    Err(Error::invalid(format!("{} violations", report.violations.len())))
}
