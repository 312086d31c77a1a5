//! Command-line front end: one subcommand per experiment.
//!
//! Settings are resolved in three layers, later ones winning: the defaults of
//! the subcommand, an optional config file (`--config`, flat `key = value`
//! lines or a JSON object) and explicit flags. Config keys are the flag names
//! without the leading dashes, with `-` written as `_`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::channel::{snr_to_variance, stream_rng, ChannelModel, CodewordSource, EVAL_STREAM_BASE};
use crate::codes::{SystematicEncoder, TannerGraph};
use crate::decoder::DecoderConfig;
use crate::error::Error;
use crate::eval::{self, EvalConfig, Receiver};
use crate::lloyd;
use crate::quantizer::{distinct_outputs, plateaus, QuantizerParams};
use crate::train::{self, Optimizer, Reduction, TrainConfig, TrainRecord};

/// Package version plus the `git describe` output of the build tree.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("NEUROQUANT_GIT"), ")");

const EXIT_CODES: &str = "Exit status: 0 success, 2 usage error, 3 invalid configuration, \
4 missing or unreadable file, 5 malformed input file, 6 numerical failure (NaN, no convergence).";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) => e.exit_code(),
            CliError::Config(_) => 3,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::LengthMismatch { .. } | Error::SolidTaping(_) => 3,
                Error::Io { .. } => 4,
                Error::Alist(_) | Error::Checkpoint(_) => 5,
                Error::NanInput(_) | Error::NanGradient { .. } | Error::NotConverged { .. } => 6,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(format!("unknown optimizer {s:?} (expected adam or sgd)")),
        }
    }
}

/// Every setting any subcommand understands. Unset fields are omitted when
/// serialized, so a resolved config lists exactly the keys its command uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "L")]
    pub levels: Option<usize>,
    pub u: Option<usize>,
    #[serde(rename = "T")]
    pub depth: Option<usize>,
    pub eta: Option<f64>,
    #[serde(rename = "K")]
    pub batch_size: Option<usize>,
    pub tmax: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub reduction: Option<Reduction>,
    pub temperature_floor: Option<f64>,
    pub snr: Option<f64>,
    pub iterations: Option<usize>,
    pub clip: Option<f64>,
    pub all_zero: Option<bool>,
    pub alist: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub snr_list: Option<Vec<f64>>,
    pub target_ber: Option<f64>,
    pub min_frames: Option<u64>,
    pub min_errors: Option<u64>,
    pub max_frames: Option<u64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub step: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

fn strip_nulls(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(mut m) => {
            m.retain(|_, v| !v.is_null());
            m
        }
        _ => Map::new(),
    }
}

fn from_map(map: Map<String, Value>) -> CliResult<ExperimentConfig> {
    // Decode key by key first so a type error names the offending key.
    for (k, v) in &map {
        let single = Map::from_iter([(k.clone(), v.clone())]);
        if let Err(e) = serde_json::from_value::<ExperimentConfig>(Value::Object(single)) {
            let msg = e.to_string();
            return Err(CliError::Config(if msg.starts_with("unknown field") {
                format!("unknown key `{k}`")
            } else {
                format!("key `{k}`: {msg}")
            }));
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))
}

impl ExperimentConfig {
    pub fn to_map(&self) -> Map<String, Value> {
        strip_nulls(serde_json::to_value(self).expect("config serializes"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.to_map())).expect("config serializes")
    }

    /// Flat `key = value` form, values written as JSON scalars or arrays.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        from_map(parse_config_map(text)?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn kv_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| kv_value(p.trim())).collect());
    }
    Value::String(raw.to_string())
}

/// Reads a JSON object or flat `key = value` lines (`#` starts a comment).
fn parse_config_map(text: &str) -> CliResult<Map<String, Value>> {
    if text.trim_start().starts_with('{') {
        return match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(m)) => Ok(m),
            Ok(_) => Err(CliError::Config("JSON config must be an object".into())),
            Err(e) => Err(CliError::Config(format!("invalid JSON: {e}"))),
        };
    }
    let mut map = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("line {}: expected `key = value`", i + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", i + 1)));
        }
        if map.insert(k.to_string(), kv_value(v.trim())).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(map)
}

#[derive(Debug, Parser)]
#[command(name = "neuroquant", version = VERSION, after_help = EXIT_CODES)]
#[command(about = "Neural channel quantizer trained through a sum-product LDPC decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
struct CommonFlags {
    /// Config file: `key = value` lines or a JSON object; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ModelFlags {
    /// Number of quantization levels
    #[arg(long = "L")]
    #[serde(rename = "L")]
    levels: Option<usize>,
    /// Hidden layer width
    #[arg(long)]
    u: Option<usize>,
    /// Number of affine layers
    #[arg(long = "T")]
    #[serde(rename = "T")]
    depth: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct TrainFlags {
    /// Cooling factor of the schedule sigma^2 = t^eta (negative)
    #[arg(long)]
    eta: Option<f64>,
    /// Mini-batch size
    #[arg(long = "K")]
    #[serde(rename = "K")]
    batch_size: Option<usize>,
    /// Number of mini-batches
    #[arg(long)]
    tmax: Option<usize>,
    /// adam or sgd
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Batch loss reduction: sum or mean
    #[arg(long)]
    reduction: Option<Reduction>,
    /// Lower bound on the annealed temperature
    #[arg(long)]
    temperature_floor: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct GaussianArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    #[serde(flatten)]
    train: TrainFlags,
    /// Monte-Carlo samples for the frozen distortion estimate
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct LdpcArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    #[serde(flatten)]
    train: TrainFlags,
    /// Parity-check matrix in alist format
    #[arg(long)]
    alist: Option<PathBuf>,
    /// Training Eb/N0 in dB
    #[arg(long)]
    snr: Option<f64>,
    /// Unrolled sum-product iterations
    #[arg(long)]
    iterations: Option<usize>,
    /// Clip applied to variable-to-check messages
    #[arg(long)]
    clip: Option<f64>,
    /// Train on the all-zero codeword
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    all_zero: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
    /// Parity-check matrix in alist format
    #[arg(long)]
    alist: Option<PathBuf>,
    /// Trained quantizer; omit to evaluate the unquantized baseline only
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated Eb/N0 grid in dB
    #[arg(long, value_delimiter = ',')]
    snr_list: Option<Vec<f64>>,
    /// BER at which the SNR gap is reported
    #[arg(long)]
    target_ber: Option<f64>,
    #[arg(long)]
    min_frames: Option<u64>,
    /// Minimum bit errors per point (subject to --max-frames)
    #[arg(long)]
    min_errors: Option<u64>,
    #[arg(long)]
    max_frames: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Transmit the all-zero codeword
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    all_zero: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
struct LloydArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
    /// Number of levels
    #[arg(long = "L")]
    #[serde(rename = "L")]
    levels: Option<usize>,
    /// Stop when no level moves by more than this
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct ExportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
    /// Trained quantizer
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    lo: Option<f64>,
    #[arg(long)]
    hi: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the quantizer on the transparent standard Gaussian source
    #[command(allow_negative_numbers = true)]
    TrainGaussian(GaussianArgs),
    /// Train the quantizer through the unrolled sum-product decoder
    #[command(allow_negative_numbers = true)]
    TrainLdpc(LdpcArgs),
    /// Monte-Carlo BER of the baseline and, given a checkpoint, the frozen quantizer
    #[command(allow_negative_numbers = true)]
    EvalBer(EvalArgs),
    /// Lloyd-Max quantizer for the standard Gaussian source
    Lloyd(LloydArgs),
    /// Tabulate a trained quantizer's input-output curve
    #[command(allow_negative_numbers = true)]
    ExportQuantizer(ExportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainGaussian(_) => "train-gaussian",
            Command::TrainLdpc(_) => "train-ldpc",
            Command::EvalBer(_) => "eval-ber",
            Command::Lloyd(_) => "lloyd",
            Command::ExportQuantizer(_) => "export-quantizer",
        }
    }

    fn flags(&self) -> (Option<&Path>, Map<String, Value>) {
        let (config, value) = match self {
            Command::TrainGaussian(a) => (&a.common.config, serde_json::to_value(a)),
            Command::TrainLdpc(a) => (&a.common.config, serde_json::to_value(a)),
            Command::EvalBer(a) => (&a.common.config, serde_json::to_value(a)),
            Command::Lloyd(a) => (&a.common.config, serde_json::to_value(a)),
            Command::ExportQuantizer(a) => (&a.common.config, serde_json::to_value(a)),
        };
        (config.as_deref(), strip_nulls(value.expect("flags serialize")))
    }
}

fn train_defaults(c: &mut ExperimentConfig) {
    c.u = Some(8);
    c.depth = Some(2);
    c.batch_size = Some(100);
    c.optimizer = Some(OptimizerKind::Adam);
    c.beta1 = Some(0.9);
    c.beta2 = Some(0.999);
    c.adam_eps = Some(1e-8);
    c.reduction = Some(Reduction::Sum);
    c.temperature_floor = Some(train::DEFAULT_TEMPERATURE_FLOOR);
}

/// Defaults of `command`, plus the keys it accepts without a default.
fn defaults(command: &str) -> (ExperimentConfig, &'static [&'static str]) {
    let mut c = ExperimentConfig {
        seed: Some(1),
        out: Some(PathBuf::from(".")),
        ..Default::default()
    };
    let optional: &'static [&'static str] = match command {
        "train-gaussian" => {
            train_defaults(&mut c);
            c.levels = Some(4);
            c.eta = Some(-0.75);
            c.tmax = Some(200);
            c.learning_rate = Some(0.01);
            c.samples = Some(1_000_000);
            &["threads"]
        }
        "train-ldpc" => {
            train_defaults(&mut c);
            c.levels = Some(8);
            c.eta = Some(-0.5);
            c.tmax = Some(500);
            c.learning_rate = Some(0.04);
            c.snr = Some(2.5);
            c.iterations = Some(crate::decoder::DEFAULT_ITERATIONS);
            c.clip = Some(crate::decoder::DEFAULT_CLIP);
            c.all_zero = Some(false);
            &["threads", "alist"]
        }
        "eval-ber" => {
            let e = EvalConfig::default();
            c.snr_list = Some(e.snr_db);
            c.target_ber = Some(1e-4);
            c.min_frames = Some(e.min_frames);
            c.min_errors = Some(e.min_bit_errors);
            c.max_frames = Some(e.max_frames);
            c.iterations = Some(e.iterations);
            c.all_zero = Some(false);
            &["threads", "alist", "checkpoint"]
        }
        "lloyd" => {
            c.levels = Some(4);
            c.tol = Some(lloyd::DEFAULT_TOL);
            c.max_iter = Some(lloyd::DEFAULT_MAX_ITER);
            &["threads"]
        }
        "export-quantizer" => {
            c.lo = Some(-4.0);
            c.hi = Some(4.0);
            c.step = Some(1e-3);
            &["threads", "checkpoint"]
        }
        _ => unreachable!("unknown command {command}"),
    };
    (c, optional)
}

/// Layers defaults, config file and flags into the resolved config of `command`.
/// File keys the command does not use are reported and dropped.
fn resolve(
    command: &str,
    file: Option<Map<String, Value>>,
    flags: Map<String, Value>,
) -> CliResult<ExperimentConfig> {
    let (base, optional) = defaults(command);
    let mut merged = base.to_map();
    let accepts = |k: &str, merged: &Map<String, Value>| {
        merged.contains_key(k) || optional.contains(&k)
    };
    if let Some(file) = file {
        // Reject typos before considering relevance.
        from_map(file.clone())?;
        for (k, v) in file {
            if accepts(&k, &merged) {
                merged.insert(k, v);
            } else {
                eprintln!("warning: config key `{k}` is not used by {command}; ignored");
            }
        }
    }
    merged.extend(flags);
    from_map(merged)
}

fn need<T: Clone>(value: &Option<T>, key: &str) -> CliResult<T> {
    value
        .clone()
        .ok_or_else(|| CliError::Config(format!("missing required setting `{key}` (--{})", key.replace('_', "-"))))
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    timestamp: String,
    config: Value,
    outputs: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Outputs {
            dir,
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.path(name);
        eval::write_file(&path, contents)?;
        Ok(())
    }

    fn finish(self, command: &str, cfg: &ExperimentConfig) -> CliResult<()> {
        let record = Provenance {
            command,
            version: VERSION,
            seed: cfg.seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config: Value::Object(cfg.to_map()),
            outputs: self.written,
        };
        let path = self.dir.join("provenance.json");
        let text = serde_json::to_string_pretty(&record).expect("provenance serializes");
        eval::write_file(&path, &format!("{text}\n"))?;
        Ok(())
    }
}

fn optimizer(cfg: &ExperimentConfig) -> CliResult<Optimizer> {
    let rate = need(&cfg.learning_rate, "learning_rate")?;
    Ok(match need(&cfg.optimizer, "optimizer")? {
        OptimizerKind::Sgd => Optimizer::sgd(rate),
        OptimizerKind::Adam => Optimizer::Adam {
            rate,
            beta1: need(&cfg.beta1, "beta1")?,
            beta2: need(&cfg.beta2, "beta2")?,
            eps: need(&cfg.adam_eps, "adam_eps")?,
        },
    })
}

fn init_params(cfg: &ExperimentConfig, seed: u64) -> CliResult<QuantizerParams> {
    Ok(QuantizerParams::init(
        need(&cfg.u, "u")?,
        need(&cfg.depth, "T")?,
        need(&cfg.levels, "L")?,
        seed,
    )?)
}

fn progress_printer(steps: usize) -> impl FnMut(&TrainRecord) {
    let every = (steps / 20).max(1);
    move |r: &TrainRecord| {
        if r.step.is_multiple_of(every) || r.step == steps {
            eprintln!(
                "step {}/{steps}  sigma2 {:.5}  loss {:.5}  {:.1}s",
                r.step, r.temperature, r.loss, r.seconds
            );
        }
    }
}

fn format_values(values: &[f64]) -> String {
    let parts: Vec<String> = values
        .iter()
        .map(|&v| format!("{:.4}", if v.abs() < 5e-5 { 0.0 } else { v }))
        .collect();
    format!("[{}]", parts.join(", "))
}

fn train_config(cfg: &ExperimentConfig, channel: ChannelModel, decoder: DecoderConfig) -> CliResult<TrainConfig> {
    let tc = TrainConfig {
        batch_size: need(&cfg.batch_size, "K")?,
        steps: need(&cfg.tmax, "tmax")?,
        cooling: need(&cfg.eta, "eta")?,
        optimizer: optimizer(cfg)?,
        channel,
        decoder,
        temperature_floor: need(&cfg.temperature_floor, "temperature_floor")?,
        reduction: need(&cfg.reduction, "reduction")?,
        seed: need(&cfg.seed, "seed")?,
    };
    tc.validate()?;
    Ok(tc)
}

fn train_gaussian(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<String> {
    let seed = need(&cfg.seed, "seed")?;
    let samples = need(&cfg.samples, "samples")?;
    if samples == 0 {
        return Err(invalid("samples must be >= 1"));
    }
    let tc = train_config(cfg, ChannelModel::GaussianSource { n: 1 }, DecoderConfig::default())?;
    let start = Instant::now();
    let (q, trace) = train::train_with_progress(&tc, init_params(cfg, seed)?, progress_printer(tc.steps))?;
    let distortion = eval::measure_distortion(&q, samples, &mut stream_rng(seed, EVAL_STREAM_BASE));
    q.save(&out.path("checkpoint.json"))?;
    trace.write_csv(&out.path("trace.csv"))?;
    let table = q.extract_table(-4.0, 4.0, 1e-3)?;
    let values: Vec<f64> = plateaus(&table).iter().map(|p| p.value).collect();
    Ok(format!(
        "train-gaussian: {} steps in {:.2}s, final solid distortion {distortion:.4}, plateaus {}",
        tc.steps,
        start.elapsed().as_secs_f64(),
        format_values(&values)
    ))
}

fn load_code(cfg: &ExperimentConfig) -> CliResult<(Arc<TannerGraph>, Arc<SystematicEncoder>)> {
    let path = need(&cfg.alist, "alist")?;
    let graph = TannerGraph::load_alist(&path)?;
    let encoder = SystematicEncoder::new(&graph);
    if encoder.k() == 0 {
        return Err(invalid(format!("{} has full rank: the code has no message bits", path.display())));
    }
    Ok((Arc::new(graph), Arc::new(encoder)))
}

fn train_ldpc(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<String> {
    let seed = need(&cfg.seed, "seed")?;
    let (graph, encoder) = load_code(cfg)?;
    let snr = need(&cfg.snr, "snr")?;
    let variance = snr_to_variance(snr, encoder.rate());
    let codewords = if need(&cfg.all_zero, "all_zero")? {
        CodewordSource::AllZero
    } else {
        CodewordSource::Random(encoder.clone())
    };
    let decoder = DecoderConfig {
        iterations: need(&cfg.iterations, "iterations")?,
        clip: need(&cfg.clip, "clip")?,
        early_stop: false,
    };
    if decoder.iterations == 0 || !(decoder.clip > 0.0) {
        return Err(invalid("iterations must be >= 1 and clip positive"));
    }
    let channel = ChannelModel::bpsk_awgn(graph.clone(), variance, Some(codewords))?;
    let tc = train_config(cfg, channel, decoder)?;
    let start = Instant::now();
    let (q, trace) = train::train_with_progress(&tc, init_params(cfg, seed)?, progress_printer(tc.steps))?;
    q.save(&out.path("checkpoint.json"))?;
    trace.write_csv(&out.path("trace.csv"))?;
    let last = trace.records.last().map_or(f64::NAN, |r| r.loss);
    Ok(format!(
        "train-ldpc: {} steps at {snr} dB (n = {}, rate {:.4}) in {:.1}s, final batch loss {last:.4}, alpha {:.4}",
        tc.steps,
        graph.n(),
        encoder.rate(),
        start.elapsed().as_secs_f64(),
        q.network.alpha
    ))
}

fn describe_crossing(snr: Option<f64>) -> String {
    snr.map_or_else(|| "not reached".to_string(), |s| format!("{s:.3} dB"))
}

fn eval_ber(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<String> {
    let (graph, encoder) = load_code(cfg)?;
    let quantizer = cfg
        .checkpoint
        .as_ref()
        .map(|p| QuantizerParams::load(p))
        .transpose()?;
    let snr_db = need(&cfg.snr_list, "snr_list")?;
    if snr_db.is_empty() || snr_db.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("snr_list must be a non-empty increasing list"));
    }
    let target = need(&cfg.target_ber, "target_ber")?;
    let ec = EvalConfig {
        snr_db,
        min_frames: need(&cfg.min_frames, "min_frames")?,
        min_bit_errors: need(&cfg.min_errors, "min_errors")?,
        max_frames: need(&cfg.max_frames, "max_frames")?,
        iterations: need(&cfg.iterations, "iterations")?,
        all_zero: need(&cfg.all_zero, "all_zero")?,
        seed: need(&cfg.seed, "seed")?,
        ..EvalConfig::default()
    };
    if ec.min_frames == 0 || ec.max_frames < ec.min_frames || ec.iterations == 0 {
        return Err(invalid("need 1 <= min_frames <= max_frames and iterations >= 1"));
    }
    let baseline = eval::measure_ber(&graph, &encoder, &Receiver::Baseline, &ec)?;
    eval::export_ber(&baseline, &out.path("ber_baseline.csv"))?;
    let base_snr = eval::snr_at_ber(&baseline, target);
    let mut summary = format!("eval-ber: baseline reaches BER {target:e} at {}", describe_crossing(base_snr));
    if let Some(q) = &quantizer {
        let neural = eval::measure_ber(&graph, &encoder, &Receiver::Neural(q), &ec)?;
        eval::export_ber(&neural, &out.path("ber_neural.csv"))?;
        let neural_snr = eval::snr_at_ber(&neural, target);
        write!(summary, ", quantizer at {}", describe_crossing(neural_snr)).unwrap();
        if let (Some(a), Some(b)) = (base_snr, neural_snr) {
            write!(summary, ", gap {:.3} dB", b - a).unwrap();
        }
    }
    Ok(summary)
}

#[derive(Serialize)]
struct LloydRecord {
    levels: Vec<f64>,
    thresholds: Vec<f64>,
    distortion: f64,
    iterations: usize,
}

fn run_lloyd(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<String> {
    let count = need(&cfg.levels, "L")?;
    let tol = need(&cfg.tol, "tol")?;
    if !(tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    let q = lloyd::design(count, tol, need(&cfg.max_iter, "max_iter")?)?;
    let record = LloydRecord {
        levels: q.levels.clone(),
        thresholds: q.thresholds.clone(),
        distortion: q.distortion,
        iterations: q.iterations,
    };
    let text = serde_json::to_string_pretty(&record).expect("record serializes");
    out.write("lloyd.json", &format!("{text}\n"))?;
    Ok(format!(
        "lloyd: L = {count}, levels {}, thresholds {}, distortion {:.6} after {} iterations",
        format_values(&q.levels),
        format_values(&q.thresholds),
        q.distortion,
        q.iterations
    ))
}

fn export_quantizer(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<String> {
    let q = QuantizerParams::load(&need(&cfg.checkpoint, "checkpoint")?)?;
    let table = q.extract_table(need(&cfg.lo, "lo")?, need(&cfg.hi, "hi")?, need(&cfg.step, "step")?)?;
    out.write("curve.csv", &eval::curve_csv("y", "q", &table))?;
    let values = distinct_outputs(&table);
    let segments = plateaus(&table);
    let edges: Vec<f64> = segments.windows(2).map(|w| 0.5 * (w[0].end + w[1].start)).collect();
    Ok(format!(
        "export-quantizer: {} points, {} distinct outputs {}, thresholds {}",
        table.len(),
        values.len(),
        format_values(&values),
        format_values(&edges)
    ))
}

fn execute(cli: Cli) -> CliResult<String> {
    let command = cli.command.name();
    let (config_path, flags) = cli.command.flags();
    let file = config_path
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config_map(&text)
        })
        .transpose()?;
    let cfg = resolve(command, file, flags)?;
    let threads = match cfg.threads {
        Some(0) => return Err(invalid("threads must be >= 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("cannot start {threads} threads: {e}")))?;
    let mut out = Outputs::new(need(&cfg.out, "out")?)?;
    let summary = pool.install(|| match &cli.command {
        Command::TrainGaussian(_) => train_gaussian(&cfg, &mut out),
        Command::TrainLdpc(_) => train_ldpc(&cfg, &mut out),
        Command::EvalBer(_) => eval_ber(&cfg, &mut out),
        Command::Lloyd(_) => run_lloyd(&cfg, &mut out),
        Command::ExportQuantizer(_) => export_quantizer(&cfg, &mut out),
    })?;
    out.finish(command, &cfg)?;
    Ok(summary)
}

/// Runs the command line `argv` (program name first) and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("neuroquant").chain(args.iter().copied())).unwrap()
    }

    fn resolved(args: &[&str], file: Option<&str>) -> CliResult<ExperimentConfig> {
        let c = cli(args);
        let (_, flags) = c.command.flags();
        resolve(c.command.name(), file.map(|t| parse_config_map(t).unwrap()), flags)
    }

    #[test]
    fn exemplified_flags_parse() {
        let cfg = resolved(
            &["train-gaussian", "--L", "4", "--u", "8", "--T", "2", "--eta", "-0.75", "--K", "100", "--tmax", "200", "--seed", "1"],
            None,
        )
        .unwrap();
        assert_eq!(cfg.levels, Some(4));
        assert_eq!(cfg.eta, Some(-0.75));
        assert_eq!(cfg.batch_size, Some(100));
        assert_eq!(cfg.tmax, Some(200));
        assert_eq!(cfg.alist, None);
    }

    #[test]
    fn ldpc_defaults() {
        let cfg = resolved(&["train-ldpc", "--alist", "h.alist"], None).unwrap();
        assert_eq!(cfg.levels, Some(8));
        assert_eq!(cfg.eta, Some(-0.5));
        assert_eq!(cfg.snr, Some(2.5));
        assert_eq!(cfg.iterations, Some(20));
        assert_eq!(cfg.learning_rate, Some(0.04));
        assert_eq!(cfg.tmax, Some(500));
        assert_eq!(cfg.optimizer, Some(OptimizerKind::Adam));
    }

    #[test]
    fn empty_file_plus_flags_is_flags_only() {
        let a = resolved(&["lloyd", "--L", "8"], Some("")).unwrap();
        let b = resolved(&["lloyd", "--L", "8"], None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flag_overrides_file() {
        let cfg = resolved(&["train-gaussian", "--eta", "-1.0"], Some("eta = -2.0\ntmax = 50\n")).unwrap();
        assert_eq!(cfg.eta, Some(-1.0));
        assert_eq!(cfg.tmax, Some(50));
        let cfg = resolved(&["train-gaussian"], Some(r#"{"eta": -2.0, "K": 10}"#)).unwrap();
        assert_eq!(cfg.eta, Some(-2.0));
        assert_eq!(cfg.batch_size, Some(10));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = resolved(&["train-gaussian"], Some("lerning_rate = 0.1\n")).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
        assert_eq!(err.exit_code(), 3);
        let err = resolved(&["train-gaussian"], Some("tmax = many\n")).unwrap_err();
        assert!(err.to_string().contains("`tmax`"), "{err}");
    }

    #[test]
    fn malformed_kv_lines() {
        assert!(parse_config_map("just words\n").is_err());
        assert!(parse_config_map("a = 1\na = 2\n").is_err());
        assert!(parse_config_map("[1, 2]").is_err());
        let m = parse_config_map("snr_list = 1.0, 1.5 # grid\nalist = data/h.alist\n").unwrap();
        assert_eq!(m["snr_list"], serde_json::json!([1.0, 1.5]));
        assert_eq!(m["alist"], serde_json::json!("data/h.alist"));
    }

    #[test]
    fn config_round_trips_through_both_formats() {
        let cfg = resolved(&["eval-ber", "--alist", "h.alist", "--snr-list", "1,1.25,1.5"], None).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn irrelevant_file_keys_are_dropped() {
        let cfg = resolved(&["lloyd"], Some("tmax = 5\n")).unwrap();
        assert_eq!(cfg.tmax, None);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let e = Cli::try_parse_from(["neuroquant", "lloyd", "--tmax", "3"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
