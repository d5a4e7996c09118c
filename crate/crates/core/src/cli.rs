//! Command-line interface. [`run`] is the whole binary minus process exit,
//! so it can be driven in-process.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{RegularizedMode, RunConfig};
use crate::dataset::{make_split, read_targets, Dataset};
use crate::error::{Error, Result};
use crate::experiments::{
    correlate_metrics, evaluate, evaluate_trial, learning_curve, scatter_csv, EvaluationReport, EvaluationSetup,
    LearningCurveResult, LearningCurveSetup, MetricRow, PropertyTargets, SweepTargets, TruncationSweepResult,
};
use crate::kernels::{cross, gram, write_gram_cache, KernelMatrix};
use crate::spectral::{eigendecompose, spectrum_csv, SpectrumReport};

#[derive(Debug, Parser)]
#[command(
    name = "molkernel",
    version,
    about = "Molecular kernels, truncated KRR and spectral metrics"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root of the results tree.
    #[arg(long, global = true, default_value = "results")]
    pub out_dir: PathBuf,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Replace the configured trial seeds with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Validate the configuration and print the resolved grid only.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the Gram matrix; write its cache and eigenvalue spectrum.
    Gram,
    /// Tune, fit and score KRR per property over the configured trials.
    Krr,
    /// Truncated-KRR sweep over eigen-truncation levels.
    Truncate {
        #[arg(long)]
        regularized: Option<RegularizedMode>,
        /// Comma-separated truncation levels in percent.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Full and truncated spectral metrics of the Gram matrix.
    Metrics,
    /// Correlate truncated spectral metrics with average R².
    Correlate {
        /// `report.json` files written by `krr`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// CSV with columns `representation,group`.
        #[arg(long)]
        grouping: Option<PathBuf>,
    },
    /// Test MAE as a function of training-set size.
    LearningCurve {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
}

impl Command {
    fn experiment(&self) -> &'static str {
        match self {
            Command::Gram => "gram",
            Command::Krr => "krr",
            Command::Truncate { .. } => "truncate",
            Command::Metrics => "metrics",
            Command::Correlate { .. } => "correlate",
            Command::LearningCurve { .. } => "learning-curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrRunReport {
    pub representation: String,
    pub kernel: String,
    pub evaluation: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRunReport {
    pub representation: String,
    pub kernel: String,
    pub spectrum: SpectrumReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncateRunReport {
    pub representation: String,
    pub kernel: String,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub sweeps: Vec<TruncationSweepResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveRunReport {
    pub representation: String,
    pub curve: LearningCurveResult,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; messages go to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Command::Correlate { reports, grouping } = &cli.command {
        return cmd_correlate(cli, reports, grouping.as_deref());
    }
    let path = cli
        .global
        .config
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{} needs --config", cli.command.experiment())))?;
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(&mut cfg, cli);
    cfg.validate()?;
    let dir = cli.global.out_dir.join(cli.command.experiment()).join(format!(
        "{}__{}",
        cfg.representation_name(),
        cfg.kernel.label()
    ));
    if cli.global.dry_run {
        print!("{}", describe(cli, &cfg, &dir));
        return Ok(());
    }
    match &cli.command {
        Command::Gram => cmd_gram(&cfg, &dir),
        Command::Metrics => cmd_metrics(&cfg, &dir),
        Command::Krr => cmd_krr(&cfg, &dir),
        Command::Truncate { .. } => cmd_truncate(&cfg, &dir),
        Command::LearningCurve { .. } => cmd_learning_curve(&cfg, &dir),
        Command::Correlate { .. } => unreachable!(),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let (Some(seed), Some(split)) = (cli.global.seed, cfg.split.as_mut()) {
        split.seeds = vec![seed];
    }
    match &cli.command {
        Command::Truncate { regularized, levels } => {
            if let Some(r) = regularized {
                cfg.truncate.regularized = *r;
            }
            if let Some(l) = levels {
                cfg.truncate.levels = l.clone();
            }
        }
        Command::LearningCurve { sizes: Some(sizes) } => {
            if let Some(lc) = cfg.learning_curve.as_mut() {
                lc.sizes = sizes.clone();
            }
        }
        _ => {}
    }
}

fn describe(cli: &Cli, cfg: &RunConfig, dir: &Path) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", cli.command.experiment());
    let _ = writeln!(
        s,
        "representation: {} ({:?}, {})",
        cfg.representation_name(),
        cfg.representation.kind,
        cfg.representation.path.display()
    );
    let _ = writeln!(s, "kernel: {}", cfg.kernel.canonical());
    if !cfg.properties.is_empty() {
        let _ = writeln!(s, "properties: {}", cfg.properties.join(","));
    }
    if let Some(sp) = &cfg.split {
        let _ = writeln!(
            s,
            "split: n_train={} n_test={} seeds={:?}",
            sp.n_train, sp.n_test, sp.seeds
        );
    }
    let _ = writeln!(s, "lambda_grid: {:?} folds={}", cfg.krr.lambda_grid, cfg.krr.folds);
    match &cli.command {
        Command::Truncate { .. } => {
            let _ = writeln!(s, "levels: {:?}", cfg.truncate.levels);
            let _ = writeln!(s, "regularized: {:?}", cfg.truncate.regularized.flags());
        }
        Command::LearningCurve { .. } => {
            if let Some(lc) = &cfg.learning_curve {
                let _ = writeln!(s, "sizes: {:?} test_size={}", lc.sizes, lc.test_size);
            }
        }
        _ => {}
    }
    let _ = writeln!(s, "output: {}", dir.display());
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Molecules whose Gram matrix `gram` and `metrics` analyse: the first trial's
/// training set when a split is configured, otherwise everything.
fn analysed_subset(cfg: &RunConfig, dataset: Dataset) -> Result<Dataset> {
    match &cfg.split {
        Some(sp) => {
            let split = make_split(dataset.ids(), sp.n_train, sp.n_test, sp.seeds[0])?;
            dataset.select(&split.train_ids)
        }
        None => Ok(dataset),
    }
}

fn analysed_gram(cfg: &RunConfig) -> Result<KernelMatrix> {
    let dataset = analysed_subset(cfg, cfg.load_dataset()?)?;
    gram(&dataset, &cfg.kernel)
}

fn cmd_gram(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let k = analysed_gram(cfg)?;
    let eig = eigendecompose(&k)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_gram_cache(&dir.join("gram.ksgm"), &k)?;
    write_file(&dir.join("spectrum.csv"), &spectrum_csv(eig.mu.as_slice()))?;
    let mut ids = k.ids.join("\n");
    ids.push('\n');
    write_file(&dir.join("ids.txt"), &ids)?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_metrics(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let k = analysed_gram(cfg)?;
    let eig = eigendecompose(&k)?;
    let spectrum = SpectrumReport::from_eigen(&eig)?;
    let rep = cfg.representation_name();
    let kernel = cfg.kernel.label();
    let mut table = String::from("representation,kernel,variant,n,rank,alpha,sse,id,sr\n");
    for (variant, m) in [("full", spectrum.full), ("truncated", spectrum.truncated)] {
        let _ = writeln!(
            table,
            "{rep},{kernel},{variant},{},{},{},{},{},{}",
            spectrum.n, spectrum.rank, m.alpha, m.sse, m.id, m.sr
        );
    }
    write_file(&dir.join("table.csv"), &table)?;
    write_file(&dir.join("spectrum.csv"), &spectrum_csv(eig.mu.as_slice()))?;
    write_json(
        &dir.join("report.json"),
        &MetricsRunReport {
            representation: rep,
            kernel,
            spectrum,
        },
    )?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_krr(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let split = cfg.require_split()?;
    let targets = read_targets(cfg.require_targets()?)?;
    let dataset = cfg.load_dataset()?;
    let protocol = cfg.protocol();
    let evaluation = evaluate(&EvaluationSetup {
        dataset: &dataset,
        kernel: &cfg.kernel,
        targets: &targets,
        properties: &cfg.properties,
        n_train: split.n_train,
        n_test: split.n_test,
        seeds: &split.seeds,
        protocol: &protocol,
    })?;
    let rep = cfg.representation_name();
    let kernel = cfg.kernel.label();
    let mut table = String::from("representation,kernel,property,r2_mean,r2_std,mae_mean,mae_std\n");
    for p in &evaluation.properties {
        let _ = writeln!(
            table,
            "{rep},{kernel},{},{},{},{},{}",
            p.property, p.r2_mean, p.r2_std, p.mae_mean, p.mae_std
        );
    }
    let _ = writeln!(
        table,
        "{rep},{kernel},avg,{},{},,",
        evaluation.avg_r2_mean, evaluation.avg_r2_std
    );
    write_file(&dir.join("table.csv"), &table)?;
    write_json(
        &dir.join("report.json"),
        &KrrRunReport {
            representation: rep,
            kernel,
            evaluation,
        },
    )?;
    println!("{}", dir.display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn threshold_table(rep: &str, kernel: &str, sweep: &TruncationSweepResult) -> String {
    let mut out = String::from("representation,kernel,property,pct95,pct99\n");
    for (p, t) in &sweep.thresholds {
        let _ = writeln!(out, "{rep},{kernel},{p},{},{}", opt(t.pct95), opt(t.pct99));
    }
    out
}

fn cmd_truncate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let split_cfg = cfg.require_split()?;
    let targets = read_targets(cfg.require_targets()?)?;
    let dataset = cfg.load_dataset()?;
    let seed = split_cfg.seeds[0];
    let split = make_split(dataset.ids(), split_cfg.n_train, split_cfg.n_test, seed)?;
    let train = dataset.select(&split.train_ids)?;
    let test = dataset.select(&split.test_ids)?;
    let k = gram(&train, &cfg.kernel)?;
    let kx = cross(&train, &test, &cfg.kernel)?;
    let props = cfg
        .properties
        .iter()
        .map(|p| PropertyTargets::gather(&targets, p, &split.train_ids, &split.test_ids))
        .collect::<Result<Vec<_>>>()?;
    let protocol = cfg.protocol();
    let full = evaluate_trial(&k, &kx, &props, &protocol, seed)?;
    let reference: BTreeMap<String, f64> = full.fits.iter().map(|(p, f)| (p.clone(), f.r2)).collect();
    let eig = eigendecompose(&k)?;
    let sweep_targets: Vec<SweepTargets> = props
        .into_iter()
        .map(|p| SweepTargets {
            name: p.name,
            train: p.train,
            test: p.test,
        })
        .collect();
    let sweeps = cfg
        .truncate
        .regularized
        .flags()
        .into_iter()
        .map(|reg| {
            crate::experiments::truncation_sweep(
                &eig,
                &kx,
                &sweep_targets,
                &cfg.truncate.levels,
                reg,
                &protocol,
                seed,
                &reference,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let rep = cfg.representation_name();
    let kernel = cfg.kernel.label();
    let mut curves = String::from("property,regularized,level,rank,r2,lambda\n");
    for sweep in &sweeps {
        for (p, r2) in &sweep.r2_per_level {
            let lambdas = &sweep.lambda_per_level[p];
            for i in 0..sweep.levels.len() {
                let _ = writeln!(
                    curves,
                    "{p},{},{},{},{},{}",
                    sweep.regularized,
                    sweep.levels[i],
                    sweep.ranks[i],
                    opt(r2[i]),
                    opt(lambdas[i])
                );
            }
        }
    }
    write_file(&dir.join("curves.csv"), &curves)?;
    write_file(&dir.join("table.csv"), &threshold_table(&rep, &kernel, &sweeps[0]))?;
    if sweeps.len() > 1 {
        write_file(
            &dir.join("table_regularized.csv"),
            &threshold_table(&rep, &kernel, &sweeps[1]),
        )?;
    }
    write_file(&dir.join("spectrum.csv"), &spectrum_csv(eig.mu.as_slice()))?;
    write_json(
        &dir.join("report.json"),
        &TruncateRunReport {
            representation: rep,
            kernel,
            n_train: split_cfg.n_train,
            n_test: split_cfg.n_test,
            seed,
            sweeps,
        },
    )?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_learning_curve(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let lc = cfg
        .learning_curve
        .as_ref()
        .ok_or_else(|| Error::Config("a [learning_curve] section is required".into()))?;
    let targets = read_targets(cfg.require_targets()?)?;
    let dataset = cfg.load_dataset()?;
    let seeds = cfg.split.as_ref().map(|s| s.seeds.clone()).unwrap_or_else(|| vec![0]);
    let protocol = cfg.protocol();
    let curve = learning_curve(&LearningCurveSetup {
        dataset: &dataset,
        kernel: &cfg.kernel,
        targets: &targets,
        properties: &cfg.properties,
        sizes: &lc.sizes,
        test_size: lc.test_size,
        seeds: &seeds,
        protocol: &protocol,
    })?;
    write_file(&dir.join("table.csv"), &curve.table_csv())?;
    write_json(
        &dir.join("report.json"),
        &LearningCurveRunReport {
            representation: cfg.representation_name(),
            curve,
        },
    )?;
    println!("{}", dir.display());
    Ok(())
}

fn read_grouping(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, rec) in reader.deserialize::<(String, String)>().enumerate() {
        let (rep, group) = rec.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        out.insert(rep, group);
    }
    Ok(out)
}

/// The `metrics` report of the same representation/kernel, located next to
/// the `krr` results tree: `<root>/krr/<dir>/report.json` pairs with
/// `<root>/metrics/<dir>/report.json`.
fn sibling_metrics(report: &Path) -> Result<PathBuf> {
    let dir = report.parent().filter(|d| d.file_name().is_some());
    let root = dir.and_then(Path::parent).and_then(Path::parent);
    match (dir.and_then(Path::file_name), root) {
        (Some(name), Some(root)) => Ok(root.join("metrics").join(name).join("report.json")),
        _ => Err(Error::Config(format!(
            "cannot locate metrics report for {}",
            report.display()
        ))),
    }
}

fn cmd_correlate(cli: &Cli, reports: &[PathBuf], grouping: Option<&Path>) -> Result<()> {
    let groups = grouping.map(read_grouping).transpose()?;
    let dir = cli.global.out_dir.join("correlate");
    if cli.global.dry_run {
        println!("experiment: correlate");
        for r in reports {
            println!("report: {} + {}", r.display(), sibling_metrics(r)?.display());
        }
        println!("output: {}", dir.display());
        return Ok(());
    }
    let mut rows = Vec::with_capacity(reports.len());
    for path in reports {
        let krr: KrrRunReport = read_json(path)?;
        let metrics: MetricsRunReport = read_json(&sibling_metrics(path)?)?;
        let group = match &groups {
            Some(g) => g.get(&krr.representation).cloned().ok_or_else(|| {
                Error::Config(format!(
                    "representation {} missing from grouping file",
                    krr.representation
                ))
            })?,
            None => "all".to_string(),
        };
        rows.push(MetricRow {
            group,
            representation: krr.representation,
            kernel: krr.kernel,
            metrics: metrics.spectrum.truncated,
            avg_r2: krr.evaluation.avg_r2_mean,
        });
    }
    let report = correlate_metrics(&rows)?;
    for s in &report.skipped {
        eprintln!("warning: group {} skipped ({} rows, {})", s.group, s.rows, s.reason);
    }
    write_file(&dir.join("table.csv"), &report.table_csv())?;
    write_file(&dir.join("scatter.csv"), &scatter_csv(&rows))?;
    write_json(&dir.join("report.json"), &report)?;
    println!("{}", dir.display());
    Ok(())
}
