//! `idf`: generate, inspect, fit, forecast and evaluate intermittent demand.
//!
//! Exit status is 0 on success, 1 for invalid input or configuration and 2
//! when a model fails at run time.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use idf_core::harness::{self, DataFormat, DatasetSource, ExperimentConfig, IngestOptions, MetricName, Split};
use idf_core::metrics::{evaluate, sbc_from_stats, sbc_stats, EvaluationInput, RmsseVariant, SbcThresholds};
use idf_core::models::{fit, sample_paths, ModelSpec, SampleConfig};
use idf_core::synthgen::{generate, write_generated, GeneratorKind, GeneratorSpec};
use idf_core::{DemandSeries, Error};

#[derive(Parser, Debug)]
#[command(name = "idf", version, about = "Renewal-process forecasting for intermittent demand")]
struct Cli {
    /// Default directory for outputs that are not given an explicit path.
    #[arg(long, global = true, env = "IDF_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset as long CSV plus a metadata sidecar.
    Generate(GenerateArgs),
    /// Print dataset statistics.
    Summarize(DataArgs),
    /// Fit a model on the training slice of every series.
    Fit(FitArgs),
    /// Forecast with a fitted model by parametric bootstrap.
    Forecast(ForecastArgs),
    /// Score a forecast file against the held-out periods of a dataset.
    Evaluate(EvaluateArgs),
    /// Run a full experiment.
    Run(RunArgs),
    /// Print the demand class of every item.
    Sbc(SbcArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Long,
    Wide,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Long => DataFormat::PeriodsCsv,
            Format::Wide => DataFormat::WideCsv,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "long")]
    format: Format,
    /// Drop items with fewer issue points.
    #[arg(long, default_value_t = 0)]
    min_issue_points: usize,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<Vec<DemandSeries>> {
        let opts = IngestOptions {
            min_issue_points: self.min_issue_points,
            ..IngestOptions::default()
        };
        let ingested = harness::ingest(&self.data, self.format.into(), &opts)
            .with_context(|| format!("reading {}", self.data.display()))?;
        Ok(ingested.strict()?)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Regime {
    Random,
    Periodic,
    Alternating,
    Model,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Regime,
    #[arg(long, default_value_t = 100)]
    n_series: usize,
    #[arg(long, default_value_t = idf_core::synthgen::DEFAULT_PERIODS)]
    n_periods: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = idf_core::synthgen::DEFAULT_RANDOM_MU_Q)]
    mu_q: f64,
    #[arg(long, default_value_t = idf_core::synthgen::DEFAULT_RANDOM_MU_M)]
    mu_m: f64,
    #[arg(long, default_value_t = 20)]
    period: u64,
    #[arg(long, default_value_t = 5.0)]
    size_mean: f64,
    /// Alternating interdemand times.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [4u64, 16])]
    alt_periods: Vec<u64>,
    /// Alternating constant size.
    #[arg(long, default_value_t = 10)]
    size: u64,
    #[arg(long)]
    phase_jitter: bool,
    /// Fitted model JSON for `--kind model`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output CSV; defaults to `<output-dir>/<kind>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model identifier such as `static-nb-nb` or `rnn-nb-nb`.
    #[arg(long)]
    model: String,
    /// Periods held out from the end of every series before fitting.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output JSON; defaults to `<output-dir>/<model>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HyperArgs {
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    ewma_alpha: Option<f64>,
    #[arg(long)]
    censor_tail: bool,
    /// Seed for weight initialisation.
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

impl HyperArgs {
    fn apply(&self, hp: &mut harness::Hyperparameters) {
        if let Some(v) = self.hidden_width {
            hp.rnn.hidden_width = v;
        }
        if let Some(v) = self.num_layers {
            hp.rnn.num_layers = v;
        }
        if let Some(v) = self.epochs {
            hp.rnn.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            hp.rnn.train.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            hp.rnn.train.weight_decay = v;
        }
        if let Some(v) = self.ewma_alpha {
            hp.ewma_alpha = v;
        }
        hp.censor_tail |= self.censor_tail;
        hp.rnn.train.seed = self.train_seed;
    }
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Forecast from `N − holdout` instead of the series end.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[arg(long, default_value_t = 6)]
    horizon: usize,
    #[arg(long, default_value_t = idf_core::models::DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = idf_core::models::DEFAULT_LEVELS.to_vec())]
    levels: Vec<f64>,
    /// Output CSV; defaults to `<output-dir>/forecast.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Forecast CSV written by `forecast`.
    #[arg(long)]
    forecast: PathBuf,
    #[arg(long, default_value_t = 6)]
    holdout: usize,
    #[arg(long, value_enum, default_value = "printed")]
    rmsse: RmsseArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RmsseArg {
    Printed,
    M5,
}

impl From<RmsseArg> for RmsseVariant {
    fn from(v: RmsseArg) -> Self {
        match v {
            RmsseArg::Printed => RmsseVariant::Printed,
            RmsseArg::M5 => RmsseVariant::M5,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment file; its values override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file; when absent a generator is used.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "long")]
    format: Format,
    /// Generator regime when no dataset file is given.
    #[arg(long, value_enum, default_value = "periodic")]
    generator: Regime,
    #[arg(long)]
    n_series: Option<usize>,
    #[arg(long)]
    n_periods: Option<usize>,
    #[arg(long, default_value_t = 6)]
    holdout: usize,
    /// Comma-separated model identifiers.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    #[arg(long, value_enum, default_value = "printed")]
    rmsse: RmsseArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long)]
    paths: Option<usize>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Results directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SbcArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = SbcThresholds::default().interval)]
    interval_cutoff: f64,
    #[arg(long, default_value_t = SbcThresholds::default().cv2)]
    cv2_cutoff: f64,
}

fn output_path(explicit: &Option<PathBuf>, dir: &Option<PathBuf>, default_name: &str) -> anyhow::Result<PathBuf> {
    let path = match (explicit, dir) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join(default_name),
        (None, None) => PathBuf::from(default_name),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(path)
}

fn generator_kind(args: &GenerateArgs) -> anyhow::Result<GeneratorKind> {
    Ok(match args.kind {
        Regime::Random => GeneratorKind::Random {
            mu_q: args.mu_q,
            mu_m: args.mu_m,
        },
        Regime::Periodic => GeneratorKind::Periodic {
            period: args.period,
            size_mean: args.size_mean,
        },
        Regime::Alternating => GeneratorKind::Alternating {
            periods: [args.alt_periods[0], args.alt_periods[1]],
            size: args.size,
            phase_jitter: args.phase_jitter,
        },
        Regime::Model => {
            let Some(path) = &args.model else {
                return Err(Error::InvalidConfig("--kind model needs --model".into()).into());
            };
            GeneratorKind::FromModel {
                model: Box::new(load_model(path)?),
                initial_means: None,
            }
        }
    })
}

fn load_model(path: &Path) -> anyhow::Result<ModelSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ModelSpec::from_json(&text)?)
}

fn cmd_generate(args: &GenerateArgs, dir: &Option<PathBuf>) -> anyhow::Result<()> {
    let spec = GeneratorSpec {
        kind: generator_kind(args)?,
        n_series: args.n_series,
        n_periods: args.n_periods,
        seed: args.seed,
    };
    let data = generate(&spec)?;
    let path = output_path(&args.out, dir, &format!("{}.csv", spec.kind.label()))?;
    write_generated(&path, &spec, &data)?;
    println!("wrote {} series to {}", data.len(), path.display());
    Ok(())
}

fn cmd_summarize(args: &DataArgs) -> anyhow::Result<()> {
    let data = args.load()?;
    let s = harness::summarize(&data, &SbcThresholds::default())?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

fn train_slices(data: &[DemandSeries], holdout: usize) -> anyhow::Result<Vec<DemandSeries>> {
    if holdout == 0 {
        return Ok(data.to_vec());
    }
    let Split { train, dropped, .. } = harness::split_dataset(data, holdout)?;
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} items without training issue points: {}",
            dropped.len(),
            dropped.join(", ")
        );
    }
    Ok(train)
}

fn cmd_fit(args: &FitArgs, dir: &Option<PathBuf>) -> anyhow::Result<()> {
    let data = args.data.load()?;
    let mut hp = harness::Hyperparameters::default();
    args.hyper.apply(&mut hp);
    let harness::ModelChoice::Renewal(template) = harness::ModelChoice::parse(&args.model, &hp)? else {
        return Err(Error::InvalidConfig(format!("`{}` has no parameters to fit", args.model)).into());
    };
    let train = train_slices(&data, args.holdout)?;
    let nonempty: Vec<DemandSeries> = train.into_iter().filter(|s| s.issue_count() > 0).collect();
    let model = fit(&template, &nonempty)?;
    let path = output_path(&args.out, dir, &format!("{}.json", template.slug()))?;
    std::fs::write(&path, model.to_json()? + "\n")?;
    println!(
        "fitted {} on {} series, wrote {}",
        model.name(),
        nonempty.len(),
        path.display()
    );
    Ok(())
}

fn cmd_forecast(args: &ForecastArgs, dir: &Option<PathBuf>) -> anyhow::Result<()> {
    let data = args.data.load()?;
    let model = load_model(&args.model)?;
    let history = train_slices(&data, args.holdout)?;
    let cfg = SampleConfig {
        levels: args.levels.clone(),
        ..SampleConfig::new(args.horizon, args.paths, args.seed)
    };
    let path = output_path(&args.out, dir, "forecast.csv")?;
    let mut w = BufWriter::new(File::create(&path)?);
    let mut levels = args.levels.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let header: Vec<String> = levels.iter().map(|l| format!("q{l}")).collect();
    writeln!(w, "item_id,period,mean,{}", header.join(","))?;
    for s in &history {
        let fc = sample_paths(&model, s, &cfg)?;
        for n in 0..args.horizon {
            let period = s.start_period() + (s.len() + n) as i64;
            let qs: Vec<String> = fc.quantiles.iter().map(|q| q.values[n].to_string()).collect();
            writeln!(
                w,
                "{},{period},{},{}",
                csv_field(s.item_id()),
                fc.mean_per_period[n],
                qs.join(",")
            )?;
        }
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Forecast table keyed by `(item, period)`.
struct ForecastTable {
    columns: Vec<String>,
    rows: std::collections::HashMap<(String, i64), Vec<f64>>,
}

fn read_forecast(path: &Path) -> anyhow::Result<ForecastTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::Parse("empty forecast file".into()).into());
    };
    let columns: Vec<String> = header.split(',').skip(2).map(str::to_string).collect();
    let mut rows = std::collections::HashMap::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.rsplitn(columns.len() + 2, ',').collect();
        if fields.len() != columns.len() + 2 {
            return Err(Error::Parse(format!("line {}: wrong field count", i + 1)).into());
        }
        let mut fields: Vec<&str> = fields.into_iter().rev().collect();
        let item = fields.remove(0).trim_matches('"').replace("\"\"", "\"");
        let bad = || Error::Parse(format!("line {}: malformed number", i + 1));
        let period: i64 = fields.remove(0).parse().map_err(|_| bad())?;
        let values = fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        rows.insert((item, period), values);
    }
    Ok(ForecastTable { columns, rows })
}

fn cmd_evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let data = args.data.load()?;
    let split = harness::split_dataset(&data, args.holdout)?;
    let table = read_forecast(&args.forecast)?;
    let col = |name: &str| table.columns.iter().position(|c| c == name);
    let mean_col = col("mean").ok_or_else(|| Error::Parse("forecast has no `mean` column".into()))?;
    let (q50, q90) = (col("q0.5"), col("q0.9"));
    let mut actuals = Vec::new();
    let mut point = Vec::new();
    let mut p50 = Vec::new();
    let mut p90 = Vec::new();
    for test in &split.holdout {
        let mut a = Vec::new();
        let (mut f, mut f50, mut f90) = (Vec::new(), Vec::new(), Vec::new());
        for (n, &v) in test.values().iter().enumerate() {
            let key = (test.item_id().to_string(), test.start_period() + n as i64);
            let row = table
                .rows
                .get(&key)
                .ok_or_else(|| Error::ShapeMismatch(format!("no forecast for item `{}` period {}", key.0, key.1)))?;
            a.push(v as f64);
            f.push(row[mean_col]);
            f50.push(q50.map_or(f64::NAN, |c| row[c]));
            f90.push(q90.map_or(f64::NAN, |c| row[c]));
        }
        actuals.push(a);
        point.push(f);
        p50.push(f50);
        p90.push(f90);
    }
    let in_sample: Vec<Vec<f64>> = split
        .train
        .iter()
        .map(|s| s.values().iter().map(|&v| v as f64).collect())
        .collect();
    let report = evaluate(&EvaluationInput {
        actuals: &actuals,
        point: &point,
        quantiles: q50.and(q90).map(|_| (p50.as_slice(), p90.as_slice())),
        in_sample: &in_sample,
        rmsse_variant: args.rmsse.into(),
    })?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn regime_kind(r: Regime) -> anyhow::Result<GeneratorKind> {
    Ok(match r {
        Regime::Random => GeneratorKind::random(),
        Regime::Periodic => GeneratorKind::periodic(),
        Regime::Alternating => GeneratorKind::alternating(),
        Regime::Model => return Err(Error::InvalidConfig("model generator needs a config file".into()).into()),
    })
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn run_config(args: &RunArgs, dir: &Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    let dataset = match &args.data {
        Some(path) => DatasetSource::Path {
            path: path.clone(),
            format: args.format.into(),
        },
        None => {
            let mut g = GeneratorSpec::new(regime_kind(args.generator)?, args.seed);
            if let Some(n) = args.n_series {
                g.n_series = n;
            }
            if let Some(n) = args.n_periods {
                g.n_periods = n;
            }
            DatasetSource::Generator(g)
        }
    };
    let mut cfg = ExperimentConfig::new(dataset);
    cfg.holdout = args.holdout;
    if !args.models.is_empty() {
        cfg.models = args.models.clone();
    }
    if !args.metrics.is_empty() {
        cfg.metrics = args
            .metrics
            .iter()
            .map(|m| MetricName::parse(m))
            .collect::<Result<_, _>>()?;
    }
    cfg.rmsse_variant = args.rmsse.into();
    cfg.seed = args.seed;
    cfg.repetitions = args.repetitions;
    if let Some(p) = args.paths {
        cfg.hyperparameters.n_paths = p;
    }
    args.hyper.apply(&mut cfg.hyperparameters);
    let mut out = args.out.clone().or_else(|| dir.clone());
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mut file = serde_json::to_value(file)?;
        if let Some(o) = file.as_object_mut().and_then(|m| m.remove("output_dir")) {
            let Some(s) = o.as_str() else {
                bail!(Error::InvalidConfig("output_dir must be a string".into()));
            };
            out = Some(PathBuf::from(s));
        }
        let mut base = serde_json::to_value(&cfg)?;
        merge(&mut base, file);
        cfg = serde_json::from_value(base).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    cfg.output_dir = Some(out.unwrap_or_else(|| PathBuf::from("results")));
    Ok(cfg)
}

fn cmd_run(args: &RunArgs, dir: &Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = run_config(args, dir)?;
    let results = harness::run_experiment(&cfg)?;
    let out = cfg.output_dir.as_deref().expect("set by run_config");
    let metrics: Vec<&str> = cfg.metrics.iter().map(|m| m.name()).collect();
    println!(
        "{:<16} {}",
        "model",
        metrics.iter().map(|m| format!("{m:>18}")).collect::<String>()
    );
    for r in &results.results {
        let cells: String = metrics
            .iter()
            .map(|m| match r.summary.get(*m) {
                Some(v) => format!("{:>18}", format!("{:.3} ± {:.3}", v.mean, v.std)),
                None => format!("{:>18}", "-"),
            })
            .collect();
        println!("{:<16} {cells}", r.name);
    }
    if !results.dropped_items.is_empty() {
        println!("dropped items: {}", results.dropped_items.join(", "));
    }
    println!("wrote {}", out.display());
    if let Some(r) = results.results.iter().find(|r| r.error.is_some()) {
        return Err(anyhow::Error::new(Error::Unfit {
            item: r.name.clone(),
            reason: r.error.clone().unwrap_or_default(),
        }));
    }
    Ok(())
}

fn cmd_sbc(args: &SbcArgs) -> anyhow::Result<()> {
    let data = args.data.load()?;
    let t = SbcThresholds {
        interval: args.interval_cutoff,
        cv2: args.cv2_cutoff,
    };
    let mut out = BufWriter::new(std::io::stdout().lock());
    writeln!(out, "item_id,mean_interval,size_cv2,class")?;
    for s in &data {
        if s.issue_count() == 0 {
            writeln!(out, "{},,,all_zero", csv_field(s.item_id()))?;
            continue;
        }
        let (p, cv2) = sbc_stats(s)?;
        writeln!(
            out,
            "{},{p},{cv2},{}",
            csv_field(s.item_id()),
            sbc_from_stats(p, cv2, &t).name()
        )?;
    }
    out.flush()?;
    Ok(())
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.downcast_ref::<std::io::Error>()
        .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Unfit { .. } | Error::Diverged { .. } | Error::SamplingCap { .. } | Error::UndefinedMetric(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let dir = &cli.output_dir;
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a, dir),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Fit(a) => cmd_fit(a, dir),
        Command::Forecast(a) => cmd_forecast(a, dir),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Run(a) => cmd_run(a, dir),
        Command::Sbc(a) => cmd_sbc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
