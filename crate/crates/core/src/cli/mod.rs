//! Command-line front end: `train`, `eval`, `infer`, `export`, `bench` and `selftest`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod config;

pub use config::{RunConfig, Source, Split};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bitpack::words_for;
use crate::bench::{reference_cases, reports_table, run_cases};
use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::metrics::ConfusionMatrix;
use crate::model::{Network, PackedModel, metrics_csv, train};
use crate::quantize::Rounding;

#[derive(Debug, Parser)]
#[command(name = "ternary-har", version, about = "Ternary sensor-window CNNs: training, packed inference and tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and write model.dftn, metrics.csv and config.ini.
    Train(TrainArgs),
    /// Score a saved model on a dataset split.
    Eval(EvalArgs),
    /// Write per-window predictions of a saved model.
    Infer(InferArgs),
    /// Build (optionally train) a network and write its packed model file.
    Export(ExportArgs),
    /// Time dense against popcount kernels and check they agree exactly.
    Bench(BenchArgs),
    /// Run built-in consistency checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args, Default)]
struct RunArgs {
    /// Key-value config file; flags override its settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use generated sensor windows.
    #[arg(long, conflicts_with = "csv")]
    synth: bool,
    /// Labeled sensor stream, one sample per row, label last.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Schema file describing the CSV columns and branches.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Built-in schema: opportunity, pamap2 or unimib.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    windows_per_class: Option<usize>,
    #[arg(long)]
    noise: Option<f32>,
    #[arg(long)]
    window_t: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    downsample: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Weight shift threshold.
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    kw: Option<u32>,
    #[arg(long)]
    ka: Option<u32>,
    /// half-away or half-even.
    #[arg(long)]
    rounding: Option<String>,
    /// early, late or dynamic.
    #[arg(long)]
    fusion: Option<String>,
    /// Comma-separated branches that get fusion masks.
    #[arg(long)]
    reduced: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed for inference-time fusion masks.
    #[arg(long)]
    phi_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Per-step learning-rate decay.
    #[arg(long)]
    lambda: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated ξ values; trains every strategy at each and writes xi_sweep.csv.
    #[arg(long)]
    xi_sweep: Option<String>,
    /// Strategies for the sweep: early, late, dynamic, periodic, sporadic.
    #[arg(long, default_value = "periodic,sporadic")]
    strategies: String,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    /// Print the report as CSV.
    #[arg(long, value_parser = ["csv"])]
    emit: Option<String>,
    /// Also write the CSV report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    /// Predictions file; stdout when absent.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Train for the configured epochs before exporting.
    #[arg(long)]
    train: bool,
    /// Model file; defaults to <out>/model.dftn.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Windows per batch; convolutions see 63 rows per window.
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 18)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            // A malformed config file is a usage error, not a data error.
            Some(p) => RunConfig::load(p).map_err(|e| match e {
                Error::Parse { .. } => Error::config(e.to_string()),
                e => e,
            })?,
            None => RunConfig::default(),
        };
        if self.synth {
            c.source = Source::Synth;
        }
        if let Some(p) = &self.csv {
            c.source = Source::Csv;
            c.csv = Some(p.clone());
        }
        if let Some(p) = &self.schema {
            c.schema = Some(p.clone());
        }
        if let Some(p) = &self.preset {
            c.preset = Some(p.clone());
        }
        if (self.schema.is_some() || self.preset.is_some()) && !self.synth {
            c.source = Source::Csv;
        }
        macro_rules! take {
            ($($f:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = self.$f.clone() { $dst = v; })*
            };
        }
        take!(
            classes => c.classes,
            windows_per_class => c.windows_per_class,
            noise => c.noise,
            window_t => c.window_t,
            stride => c.stride,
            downsample => c.downsample,
            val_fraction => c.val_fraction,
            xi => c.quant.xi,
            kw => c.quant.k_w,
            ka => c.quant.k_a,
            hidden => c.hidden,
            seed => c.seed,
            phi_seed => c.phi_seed,
            epochs => c.epochs,
            batch => c.batch,
            lambda => c.lambda,
            out => c.out,
        );
        if let Some(r) = &self.rounding {
            c.quant.rounding = Rounding::parse(r).map_err(|e| Error::config(e.to_string()))?;
        }
        if let Some(f) = &self.fusion {
            c.fusion = f.parse()?;
        }
        if let Some(r) = &self.reduced {
            c.set("fusion.reduced", r)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// A fusion configuration trained in a ξ sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub name: String,
    pub mode: FusionMode,
    pub reduced: Vec<String>,
}

impl Strategy {
    pub fn parse(name: &str, cfg: &RunConfig) -> Result<Self> {
        let (mode, reduced): (FusionMode, Vec<&str>) = match name {
            "early" => (FusionMode::Early, vec![]),
            "late" => (FusionMode::Late, vec![]),
            "dynamic" => (FusionMode::Dynamic, cfg.reduced.iter().map(String::as_str).collect()),
            "periodic" => (FusionMode::Dynamic, vec!["back"]),
            "sporadic" => (FusionMode::Dynamic, vec!["back", "ankle"]),
            o => return Err(Error::config(format!("unknown strategy '{o}'"))),
        };
        Ok(Self {
            name: name.to_string(),
            mode,
            reduced: reduced.into_iter().map(String::from).collect(),
        })
    }
}

/// Final validation weighted F1 per strategy (rows) and ξ (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub xis: Vec<f64>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy");
        for x in &self.xis {
            let _ = write!(s, ",{x:?}");
        }
        s.push('\n');
        for (name, vals) in &self.rows {
            s.push_str(name);
            for v in vals {
                let _ = write!(s, ",{v:.4}");
            }
            s.push('\n');
        }
        s
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::config(format!("empty {what} list")));
    }
    items
        .iter()
        .map(|s| s.parse().map_err(|_| Error::config(format!("bad {what} value '{s}'"))))
        .collect()
}

/// Trains every strategy at every ξ on the same data split.
pub fn xi_sweep(cfg: &RunConfig, xis: &[f64], strategies: &[Strategy]) -> Result<SweepTable> {
    let (tr, va) = cfg.datasets()?;
    let mut rows = Vec::with_capacity(strategies.len());
    for s in strategies {
        let mut vals = Vec::with_capacity(xis.len());
        for &xi in xis {
            let mut c = cfg.clone();
            c.quant.xi = xi;
            c.fusion = s.mode;
            c.reduced = s.reduced.clone();
            let state = train(c.network_config(tr.classes)?, &tr, &va, c.train_config())?;
            let f1 = state.history.last().map_or(f64::NAN, |m| m.val_weighted_f1);
            log::info!("sweep {} xi={xi}: weighted F1 {f1:.4}", s.name);
            vals.push(f1);
        }
        rows.push((s.name.clone(), vals));
    }
    Ok(SweepTable {
        xis: xis.to_vec(),
        rows,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    fs::create_dir_all(&cfg.out)?;
    write_file(&cfg.out.join("config.ini"), cfg.to_text())?;
    if let Some(list) = &a.xi_sweep {
        let xis: Vec<f64> = parse_list("xi", list)?;
        let strategies = a
            .strategies
            .split(',')
            .map(|s| Strategy::parse(s.trim(), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let table = xi_sweep(&cfg, &xis, &strategies)?;
        let path = cfg.out.join("xi_sweep.csv");
        write_file(&path, table.to_csv())?;
        print!("{}", table.to_csv());
        println!("wrote {}", path.display());
        return Ok(());
    }
    let (tr, va) = cfg.datasets()?;
    log::info!("{} training and {} validation windows, {} classes", tr.len(), va.len(), tr.classes);
    let state = train(cfg.network_config(tr.classes)?, &tr, &va, cfg.train_config())?;
    let model = PackedModel::from_network(&state.network)?;
    model.save(&cfg.out.join("model.dftn"))?;
    write_file(&cfg.out.join("metrics.csv"), metrics_csv(&state.history))?;
    match state.history.last() {
        Some(m) => println!("final validation weighted F1: {:.4}", m.val_weighted_f1),
        None => println!("no epochs run"),
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn eval_dataset(run: &RunArgs, split: &str, model: &PackedModel) -> Result<(RunConfig, WindowDataset)> {
    let cfg = run.resolve()?;
    let ds = cfg.dataset_split(split.parse()?)?;
    if ds.classes > model.classes {
        return Err(Error::config(format!(
            "dataset has {} classes but the model predicts {}",
            ds.classes, model.classes
        )));
    }
    if ds.channels != model.channels() || ds.window_t != model.window_t {
        return Err(Error::config(format!(
            "dataset windows are {}x{} but the model expects {}x{}",
            ds.channels,
            ds.window_t,
            model.channels(),
            model.window_t
        )));
    }
    if ds.is_empty() {
        return Err(Error::config(format!("the {split} split is empty")));
    }
    Ok((cfg, ds))
}

/// `class,precision,recall,f1,support` rows followed by summary rows.
pub fn report_csv(cm: &ConfusionMatrix) -> Result<String> {
    let mut s = String::from("class,precision,recall,f1,support\n");
    for (g, (p, r)) in cm.precision_recall().into_iter().enumerate() {
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let support: u64 = cm.counts[g].iter().sum();
        let _ = writeln!(s, "{g},{p:.6},{r:.6},{f1:.6},{support}");
    }
    let _ = writeln!(s, "accuracy,,,{:.6},{}", cm.accuracy(), cm.total());
    let _ = writeln!(s, "weighted_f1,,,{:.6},{}", cm.weighted_f1()?, cm.total());
    Ok(s)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = PackedModel::load(&a.model)?;
    let (cfg, ds) = eval_dataset(&a.run, &a.split, &model)?;
    let pred = model.predict_dataset(&ds, cfg.phi_seed, cfg.batch)?;
    let cm = ConfusionMatrix::new(&pred, &ds.labels, model.classes)?;
    let csv = report_csv(&cm)?;
    if let Some(p) = &a.report {
        write_file(p, &csv)?;
    }
    if a.emit.is_some() {
        print!("{csv}");
    } else {
        println!("windows: {}", cm.total());
        println!("accuracy: {:.4}", cm.accuracy());
        println!("weighted F1: {:.4}", cm.weighted_f1()?);
        println!("class  precision  recall");
        for (g, (p, r)) in cm.precision_recall().into_iter().enumerate() {
            println!("{g:>5}  {p:>9.4}  {r:>6.4}");
        }
    }
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let model = PackedModel::load(&a.model)?;
    let (cfg, ds) = eval_dataset(&a.run, &a.split, &model)?;
    let fusion = model.fusion_weights(cfg.phi_seed)?;
    let mut s = String::from("window,label,prediction");
    for g in 0..model.classes {
        let _ = write!(s, ",p{g}");
    }
    s.push('\n');
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(cfg.batch) {
        let x = crate::model::gather_windows(&ds, chunk)?;
        let out = model.infer(&x, &fusion)?;
        for (j, &i) in chunk.iter().enumerate() {
            let _ = write!(s, "{i},{},{}", ds.labels[i], out.predictions[j]);
            for g in 0..model.classes {
                let _ = write!(s, ",{:.6}", out.probabilities.data()[j * model.classes + g]);
            }
            s.push('\n');
        }
    }
    match &a.predictions {
        Some(p) => {
            write_file(p, &s)?;
            println!("wrote {} predictions to {}", ds.len(), p.display());
        }
        None => print!("{s}"),
    }
    Ok(())
}

/// Per-layer packed size against 32-bit storage, plus the whole file.
pub fn size_report(network: &Network, file_bytes: usize) -> Result<String> {
    let mut s = format!("{:<16} {:>10} {:>12} {:>12}\n", "layer", "weights", "packed_B", "f32_B");
    let mut total = 0;
    for l in network.config.param_counts()? {
        let packed = 16 * words_for(l.weights);
        total += l.weights;
        let _ = writeln!(s, "{:<16} {:>10} {:>12} {:>12}", l.name, l.weights, packed, 4 * l.weights);
    }
    let dense = 4 * total;
    let _ = writeln!(
        s,
        "model file {file_bytes} bytes, f32 weights {dense} bytes, ratio {:.2}x",
        dense as f64 / file_bytes as f64
    );
    Ok(s)
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let network = if a.train {
        let (tr, va) = cfg.datasets()?;
        train(cfg.network_config(tr.classes)?, &tr, &va, cfg.train_config())?.network
    } else {
        let classes = if cfg.classes == 0 { 4 } else { cfg.classes };
        Network::new(cfg.network_config(classes)?, cfg.seed)?
    };
    let model = PackedModel::from_network(&network)?;
    let path = a.model.clone().unwrap_or_else(|| cfg.out.join("model.dftn"));
    let bytes = model.to_bytes();
    write_file(&path, &bytes)?;
    print!("{}", size_report(&network, bytes.len())?);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<bool> {
    if a.batch == 0 {
        return Err(Error::config("bench batch must be positive"));
    }
    let reports = run_cases(&reference_cases(a.batch, a.classes), a.repeats, a.seed)?;
    print!("{}", reports_table(&reports));
    let exact = reports.iter().all(|r| r.exact);
    if !exact {
        eprintln!("packed and dense outputs differ");
    }
    Ok(exact)
}

fn cmd_selftest(a: &SelftestArgs) -> bool {
    let checks = crate::selftest::run_all(a.seed);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Infer(a) => cmd_infer(a).map(|_| true),
        Command::Export(a) => cmd_export(a).map(|_| true),
        Command::Bench(a) => cmd_bench(a),
        Command::Selftest(a) => Ok(cmd_selftest(a)),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
