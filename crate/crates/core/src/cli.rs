//! The `nestquant` command line.
//!
//! Every verb builds one [`Output`] that renders as JSON (default), CSV or
//! plain text. Errors are reported on stderr prefixed by the verb, with a
//! nonzero exit code.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::nesting::{self, NestConfig};
use crate::refnet::{self, EvalMode, RefConfig, RefNet, SyntheticDataset};
use crate::resource;
use crate::rounding::RoundingStrategy;
use crate::store::{self, FloatModel};
use crate::switch::{self, Direction, SwitchState};
use crate::transfer::{self, What};

#[derive(Debug, Parser)]
#[command(name = "nestquant", version, about = "Integer-nesting quantization toolkit")]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads for layer-parallel nesting.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize an FP32 archive (.nqf) into a standalone n-bit model.
    Quantize(QuantizeArgs),
    /// Quantize and nest an FP32 archive into an INT(n|h) model.
    Nest(NestArgs),
    /// Show manifest, layers and size breakdown of a .nqt file.
    Inspect(ModelArg),
    /// Exhaustive decomposition error census.
    Census(CensusArgs),
    /// Suggest the critical nested bitwidth for a model size.
    Advise(AdviseArgs),
    /// Launch part-bit, then upgrade and downgrade, logging paged bytes.
    Switch(SwitchArgs),
    /// Storage and switching overhead arithmetic.
    Report(ReportArgs),
    /// Train the reference network and save its FP32 weights.
    TrainRef(TrainArgs),
    /// Accuracy of the reference network under a model's weights.
    Eval(EvalArgs),
    /// Receive pushed models into a directory.
    Serve(ServeArgs),
    /// Send a model (or part of it) to a server.
    Push(PushArgs),
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub bits: u8,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "adaptive")]
    pub rounding: RoundingStrategy,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct NestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub n: u8,
    #[arg(long)]
    pub h: u8,
    /// Rounding of the high part.
    #[arg(long, default_value = "adaptive")]
    pub strategy: RoundingStrategy,
    /// Rounding of the n-bit weights.
    #[arg(long, default_value = "adaptive")]
    pub base: RoundingStrategy,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct CensusArgs {
    #[arg(long)]
    pub n: u8,
    /// Defaults to every h in 3..n.
    #[arg(long)]
    pub h: Option<u8>,
    /// Defaults to every scalar strategy.
    #[arg(long)]
    pub strategy: Option<RoundingStrategy>,
    /// Store residuals with the extra bit (every error becomes zero).
    #[arg(long)]
    pub compensated: bool,
}

#[derive(Debug, Args)]
pub struct AdviseArgs {
    #[arg(long)]
    pub size_mb: f64,
    #[arg(long, default_value_t = 8)]
    pub n: u8,
}

#[derive(Debug, Args)]
pub struct SwitchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Upgrade/downgrade round trips to perform.
    #[arg(long, default_value_t = 1)]
    pub cycles: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub n: u8,
    #[arg(long)]
    pub h: u8,
    /// Nested model to measure an upgrade on.
    #[arg(long, requires_all = ["int_n", "int_h"])]
    pub model: Option<PathBuf>,
    /// Standalone INT-n model for the diverse-bitwidth baseline.
    #[arg(long)]
    pub int_n: Option<PathBuf>,
    /// Standalone INT-h model for the diverse-bitwidth baseline.
    #[arg(long)]
    pub int_h: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Defaults to the bundled configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Quantized weights; not needed for `--mode fp32`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    pub mode: EvalMode,
    /// Dataset, as `seed:S`.
    #[arg(long, default_value = "seed:7")]
    pub data: String,
    /// FP32 archive from `train-ref` (supplies biases).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub act_bits: u8,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: String,
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PushArgs {
    #[arg(long)]
    pub to: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "full")]
    pub what: What,
}

/// One verb's result in all three renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub json: Value,
    /// Header row first.
    pub csv: Vec<Vec<String>>,
    pub text: String,
}

impl Output {
    /// Flat record: CSV is one header and one row, text is `key=value` lines.
    pub fn record(value: &impl Serialize) -> Self {
        let json = serde_json::to_value(value).expect("serializable");
        let map = match &json {
            Value::Object(m) => m.clone(),
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other.clone());
                m
            }
        };
        let header: Vec<String> = map.keys().cloned().collect();
        let row: Vec<String> = map.values().map(cell).collect();
        let text = header
            .iter()
            .zip(&row)
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("\n");
        Self {
            json,
            csv: vec![header, row],
            text,
        }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(&self.json).expect("json"),
            Format::Csv => self
                .csv
                .iter()
                .map(|r| r.iter().map(|c| csv_escape(c)).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join("\n"),
            Format::Text => self.text.clone(),
        }
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Command {
    fn verb(&self) -> &'static str {
        match self {
            Command::Quantize(_) => "quantize",
            Command::Nest(_) => "nest",
            Command::Inspect(_) => "inspect",
            Command::Census(_) => "census",
            Command::Advise(_) => "advise",
            Command::Switch(_) => "switch",
            Command::Report(_) => "report",
            Command::TrainRef(_) => "train-ref",
            Command::Eval(_) => "eval",
            Command::Serve(_) => "serve",
            Command::Push(_) => "push",
        }
    }
}

/// Parses `argv` (including the program name), runs the verb and writes the
/// rendered output. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let verb = cli.command.verb();
    match execute(&cli) {
        Ok(output) => {
            let _ = writeln!(out, "{}", output.render(cli.format));
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {verb}: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Quantize(a) => quantize(a, cli.jobs),
        Command::Nest(a) => nest(a, cli.jobs),
        Command::Inspect(a) => inspect(a),
        Command::Census(a) => census(a),
        Command::Advise(a) => advise(a),
        Command::Switch(a) => switch_cmd(a),
        Command::Report(a) => report(a),
        Command::TrainRef(a) => train_ref(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => {
            transfer::serve(a.listen.as_str(), &a.dir)?;
            Ok(Output::record(&json!({ "listen": a.listen, "stopped": true })))
        }
        Command::Push(a) => Ok(Output::record(&transfer::push(&a.model, a.to.as_str(), a.what)?)),
    }
}

fn model_name(name: &Option<String>, path: &std::path::Path) -> String {
    name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    })
}

#[derive(Serialize)]
struct Written {
    out: String,
    n: u8,
    h: u8,
    layers: usize,
    params: u64,
    #[serde(flatten)]
    size: store::ModelSizeReport,
}

fn write_model(m: &store::NestedModel, out: &std::path::Path) -> Result<Output> {
    store::save(m, out)?;
    Ok(Output::record(&Written {
        out: out.display().to_string(),
        n: m.manifest.n,
        h: m.manifest.h,
        layers: m.layers.len(),
        params: m.param_count(),
        size: store::size_report(m),
    }))
}

fn quantize(a: &QuantizeArgs, jobs: usize) -> Result<Output> {
    let fp = FloatModel::load(&a.input)?;
    let mut cfg = NestConfig::standalone(a.bits);
    cfg.base_rounding = a.rounding;
    cfg.jobs = jobs;
    let m = nesting::nest_model(&fp, &model_name(&a.name, &a.out), &cfg)?;
    write_model(&m, &a.out)
}

fn nest(a: &NestArgs, jobs: usize) -> Result<Output> {
    let fp = FloatModel::load(&a.input)?;
    if fp.layers.is_empty() {
        return Err(Error::InvalidModel(format!("{} holds no tensors", a.input.display())));
    }
    let mut cfg = NestConfig::new(a.n, a.h, a.strategy);
    cfg.base_rounding = a.base;
    cfg.jobs = jobs;
    let m = nesting::nest_model(&fp, &model_name(&a.name, &a.out), &cfg)?;
    write_model(&m, &a.out)
}

fn inspect(a: &ModelArg) -> Result<Output> {
    let part = store::load_part_bit(&a.model)?;
    let part_only = part.manifest.is_nested() && !part.has_low_sections();
    let size = if part_only {
        None
    } else {
        Some(store::size_report(&store::load(&a.model)?))
    };
    let layers: Vec<Value> = part
        .layers
        .iter()
        .zip(&part.low_sections)
        .map(|(l, s)| {
            json!({
                "name": l.name,
                "shape": l.shape,
                "scale": l.scale,
                "high_bytes": l.high.byte_size(),
                "low_bytes": s.len,
            })
        })
        .collect();
    let json = json!({
        "manifest": part.manifest,
        "part_only": part_only,
        "size": size,
        "layers": layers,
    });
    let mut csv = vec![vec!["name", "shape", "scale", "high_bytes", "low_bytes"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()];
    let mut text = format!(
        "{} INT({}|{}) {} layers{}\n",
        part.manifest.name,
        part.manifest.n,
        part.manifest.h,
        part.manifest.layer_count,
        if part_only { " (part only)" } else { "" }
    );
    for (l, s) in part.layers.iter().zip(&part.low_sections) {
        let shape = l.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        csv.push(vec![
            l.name.clone(),
            shape.clone(),
            l.scale.to_string(),
            l.high.byte_size().to_string(),
            s.len.to_string(),
        ]);
        text.push_str(&format!(
            "  {:<32} {:>14} high {:>10} low {:>10}\n",
            l.name,
            shape,
            l.high.byte_size(),
            s.len
        ));
    }
    if let Some(s) = size {
        text.push_str(&format!("  total {} bytes", s.total_bytes));
    }
    Ok(Output {
        json,
        csv,
        text: text.trim_end().to_string(),
    })
}

fn census(a: &CensusArgs) -> Result<Output> {
    let hs: Vec<u8> = match a.h {
        Some(h) => vec![h],
        None => (3..a.n).collect(),
    };
    let strategies: Vec<RoundingStrategy> = match a.strategy {
        Some(s) => vec![s],
        None => RoundingStrategy::SCALAR.to_vec(),
    };
    let mut cells = Vec::new();
    for s in &strategies {
        for &h in &hs {
            cells.push(nesting::error_census_with(a.n, h, *s, a.compensated)?);
        }
    }
    let mut csv = vec![["strategy", "n", "h", "nonzero", "min", "max"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    let mut text = Vec::new();
    for c in &cells {
        csv.push(vec![
            c.strategy.name().to_string(),
            c.n.to_string(),
            c.h.to_string(),
            c.nonzero_count.to_string(),
            c.error_min.to_string(),
            c.error_max.to_string(),
        ]);
        text.push(format!(
            "{:<9} INT({}|{})  {:>3} non-zero  range [{}, {}]",
            c.strategy.name(),
            c.n,
            c.h,
            c.nonzero_count,
            c.error_min,
            c.error_max
        ));
    }
    let json = if cells.len() == 1 {
        serde_json::to_value(&cells[0])
    } else {
        serde_json::to_value(&cells)
    }
    .expect("json");
    Ok(Output {
        json,
        csv,
        text: text.join("\n"),
    })
}

fn advise(a: &AdviseArgs) -> Result<Output> {
    let h = nesting::advise_nested_bits(a.size_mb, a.n)?;
    let mut o = Output::record(&json!({ "size_mb": a.size_mb, "n": a.n, "h": h }));
    o.text = format!("h={h}");
    Ok(o)
}

#[derive(Serialize)]
struct SwitchReport<'a> {
    model: String,
    launch_bytes: u64,
    low_bytes: u64,
    transitions: &'a [switch::Transition],
    total_paged_in: u64,
    total_paged_out: u64,
}

fn switch_cmd(a: &SwitchArgs) -> Result<Output> {
    let mut state = SwitchState::launch_part_bit(&a.model)?;
    for _ in 0..a.cycles {
        state.upgrade()?;
        state.downgrade()?;
    }
    let (total_in, total_out) = state.totals();
    let report = SwitchReport {
        model: a.model.display().to_string(),
        launch_bytes: state.launch_bytes(),
        low_bytes: state.low_bytes(),
        transitions: state.log(),
        total_paged_in: total_in,
        total_paged_out: total_out,
    };
    let json = serde_json::to_value(&report).expect("json");
    let mut csv = vec![vec!["direction".to_string(), "paged_in".into(), "paged_out".into()]];
    let mut text = vec![format!("launch (part-bit): {} bytes", state.launch_bytes())];
    for t in state.log() {
        let dir = match t.direction {
            Direction::Upgrade => "upgrade",
            Direction::Downgrade => "downgrade",
        };
        csv.push(vec![dir.into(), t.bytes_paged_in.to_string(), t.bytes_paged_out.to_string()]);
        text.push(format!("{dir:<9} in {:>10}  out {:>10}", t.bytes_paged_in, t.bytes_paged_out));
    }
    Ok(Output {
        json,
        csv,
        text: text.join("\n"),
    })
}

fn report(a: &ReportArgs) -> Result<Output> {
    let ideal = resource::ideal_storage_reduction(a.n, a.h)?;
    let mut rec = Map::new();
    rec.insert("n".into(), json!(a.n));
    rec.insert("h".into(), json!(a.h));
    rec.insert("ideal_storage_reduction".into(), json!(resource::to_f64(ideal)));
    rec.insert("ideal_storage_reduction_pct".into(), json!(resource::percent(ideal, 1)));
    if let (Some(model), Some(int_n), Some(int_h)) = (&a.model, &a.int_n, &a.int_h) {
        let mut state = SwitchState::launch_part_bit(model)?;
        let nest = state.upgrade()?.clone();
        let diverse = switch::diverse_switch_baseline(int_n, int_h, Direction::Upgrade)?;
        let r = resource::OverheadReport::from_transitions(&nest, &diverse)?;
        let frac = resource::reduced_overhead(&nest, &diverse)?;
        rec.insert("nest_page_in".into(), json!(r.nest_page_in));
        rec.insert("nest_page_out".into(), json!(r.nest_page_out));
        rec.insert("diverse_page_in".into(), json!(r.diverse_page_in));
        rec.insert("diverse_page_out".into(), json!(r.diverse_page_out));
        rec.insert("reduced_overhead".into(), json!(r.reduced_fraction));
        rec.insert("reduced_overhead_pct".into(), json!(resource::percent(frac, 1)));
    }
    Ok(Output::record(&Value::Object(rec)))
}

fn train_ref(a: &TrainArgs) -> Result<Output> {
    let cfg = load_config(&a.config)?;
    let (net, data) = refnet::train_reference(&cfg, a.seed)?;
    let acc = net.evaluate(&data.test, EvalMode::Fp32, 8)?;
    let written = net.params.save(&a.out)?;
    Ok(Output::record(&json!({
        "out": a.out.display().to_string(),
        "seed": a.seed,
        "bytes": written,
        "params": net.params.param_count(),
        "fp32_accuracy": acc,
    })))
}

fn load_config(path: &Option<PathBuf>) -> Result<RefConfig> {
    match path {
        Some(p) => RefConfig::load(p),
        None => Ok(RefConfig::builtin()),
    }
}

fn parse_data_seed(spec: &str) -> Result<u64> {
    spec.strip_prefix("seed:")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("--data expects `seed:S`, got `{spec}`")))
}

fn eval(a: &EvalArgs) -> Result<Output> {
    let cfg = load_config(&a.config)?;
    let seed = parse_data_seed(&a.data)?;
    let data = SyntheticDataset::generate(&cfg.data, seed)?;
    let mut net = RefNet::new(cfg.model.clone(), FloatModel::load(&a.reference)?)?;
    if a.mode != EvalMode::Fp32 {
        let path = a
            .model
            .as_ref()
            .ok_or_else(|| Error::Mode(format!("{:?} mode needs --model", a.mode)))?;
        let part = store::load_part_bit(path)?;
        if part.manifest.is_nested() {
            let mut state = SwitchState::launch_part_bit(path)?;
            if a.mode == EvalMode::FullBit {
                state.upgrade()?;
            }
            net.overlay_switch(&state)?;
        } else {
            net.overlay_nested(&store::load(path)?)?;
        }
    }
    let acc = net.evaluate(&data.test, a.mode, a.act_bits)?;
    Ok(Output::record(&json!({
        "mode": a.mode,
        "data_seed": seed,
        "samples": data.test.len(),
        "accuracy": acc,
    })))
}
