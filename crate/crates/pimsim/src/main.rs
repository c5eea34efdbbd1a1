//! Command-line front end for the repdpim simulator.
//!
//! Every command prints one machine-parseable document (JSON, or CSV for
//! `simulate-macro`) on stdout and optionally writes artifact files under
//! `--out`. Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or
//! invalid input. `PIMSIM_THREADS` caps internal parallelism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use repdpim::analysis::{exhaustive_stats, histogram, MAX_EXHAUSTIVE_WIDTH};
use repdpim::array::{MacroConfig, MacroState};
use repdpim::cia2m::{cia2m_multiply, CiaMode, Operand};
use repdpim::cost::{macro_summary, throughput};
use repdpim::mapper::{apply_pruning, map_layer, LayerSpec, MappingPlan};
use repdpim::nn::{load_weights_csv, run_network};

#[derive(Parser)]
#[command(name = "pimsim", version, about = "Simulator front end for a reconfigurable PIM macro")]
struct Cli {
    /// Seed for commands that draw random choices (pruning masks).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory to write artifact files into, besides stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Macro overrides as JSON, e.g. '{"clock_mhz":166.5}'. Unknown keys
    /// are rejected.
    #[arg(long, global = true)]
    config: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Fc,
    Conv,
}

#[derive(Subcommand)]
enum Command {
    /// Exhaustive multiplier error analysis at one width and mode.
    AnalyzeMult {
        #[arg(long)]
        width: u32,
        #[arg(long, value_parser = parse_mode)]
        mode: CiaMode,
        #[arg(long, default_value_t = 64)]
        bins: usize,
    },
    /// Drive operand pairs through the macro datapath and cross-check
    /// each against the reference multiplier.
    SimulateMacro {
        /// CSV of `a,b` unsigned pairs, one per line.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_parser = parse_mode, default_value = "accurate")]
        mode: CiaMode,
    },
    /// Pack one layer onto the macro and print the mapping plan.
    Map {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Filter side length (conv only).
        #[arg(long, default_value_t = 1)]
        filter_width: usize,
        /// Input channels, or input features for fc.
        #[arg(long)]
        depth: usize,
        /// Filter count, or output features for fc.
        #[arg(long)]
        filters: usize,
        #[arg(long, default_value_t = 1)]
        input_height: usize,
        #[arg(long, default_value_t = 1)]
        input_width: usize,
        #[arg(long, default_value_t = 8)]
        weight_bits: u32,
        #[arg(long, default_value_t = 8)]
        act_bits: u32,
        #[arg(long, value_parser = parse_mode, default_value = "accurate")]
        mode: CiaMode,
        /// Fraction of weights zeroed by a seeded random mask.
        #[arg(long)]
        pruning: Option<f64>,
    },
    /// Cost reports: derived peak figures, or a workload summary.
    Cost {
        /// Mapping plan JSON (single plan or array) to summarize.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode, default_value = "accurate")]
        mode: CiaMode,
    },
    /// Quantized inference through the mapped macro.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        /// CSV of input batch elements, comma-separated reals per row.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long, value_parser = parse_mode, default_value = "accurate")]
        mode: CiaMode,
        #[arg(long, default_value_t = 0.0)]
        pruning: f64,
    },
}

fn parse_mode(s: &str) -> Result<CiaMode, String> {
    match s {
        "exact" => Ok(CiaMode::Exact),
        "accurate" => Ok(CiaMode::Accurate),
        "approx" | "approximate" => Ok(CiaMode::Approximate),
        other => other
            .parse::<u32>()
            .map(CiaMode::Custom)
            .map_err(|_| format!("expected exact|accurate|approx or a cycle count, got '{other}'")),
    }
}

/// Failure with its exit code: usage errors exit 2, runtime errors 1.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<repdpim::Error> for Failure {
    fn from(err: repdpim::Error) -> Self {
        match err {
            repdpim::Error::Io(_) => Failure::Runtime(err.to_string()),
            _ => Failure::Usage(err.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Runtime(err.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(err: serde_json::Error) -> Self {
        Failure::Usage(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("pimsim: {}", failure.message());
            failure.code()
        }
    }
}

/// Partial geometry overrides; unknown keys are a usage error.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigOverrides {
    rows: Option<usize>,
    cols: Option<usize>,
    weight_precision: Option<u32>,
    input_precision: Option<u32>,
    clock_mhz: Option<f64>,
}

fn resolve_config(raw: Option<&str>) -> Result<MacroConfig, Failure> {
    let overrides: ConfigOverrides = match raw {
        Some(text) => serde_json::from_str(text)?,
        None => ConfigOverrides::default(),
    };
    let mut config = MacroConfig::default();
    if let Some(v) = overrides.rows {
        config.rows = v;
    }
    if let Some(v) = overrides.cols {
        config.cols = v;
    }
    if let Some(v) = overrides.weight_precision {
        config.weight_precision = v;
    }
    if let Some(v) = overrides.input_precision {
        config.input_precision = v;
    }
    if let Some(v) = overrides.clock_mhz {
        config.clock_mhz = v;
    }
    config.validate()?;
    Ok(config)
}

fn cap_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("PIMSIM_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| Failure::Usage(format!("PIMSIM_THREADS must be a positive integer, got '{value}'")))?;
    if threads == 0 {
        return Err(Failure::Usage("PIMSIM_THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn write_artifact(out: Option<&Path>, name: &str, content: &str) -> Result<(), Failure> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), content)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    cap_threads()?;
    let config = resolve_config(cli.config.as_deref())?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::AnalyzeMult { width, mode, bins } => cmd_analyze_mult(width, mode, bins, out),
        Command::SimulateMacro { pairs, mode } => cmd_simulate(&config, &pairs, mode, out),
        Command::Map {
            kind,
            filter_width,
            depth,
            filters,
            input_height,
            input_width,
            weight_bits,
            act_bits,
            mode,
            pruning,
        } => {
            let layer = match kind {
                KindArg::Fc => LayerSpec::fc(depth, filters, weight_bits, act_bits),
                KindArg::Conv => LayerSpec::conv(
                    filter_width,
                    depth,
                    filters,
                    input_height,
                    input_width,
                    weight_bits,
                    act_bits,
                ),
            }?;
            cmd_map(&layer, &config, mode, pruning, cli.seed, out)
        }
        Command::Cost { plan, mode } => cmd_cost(&config, plan.as_deref(), mode, out),
        Command::Infer {
            weights,
            inputs,
            mode,
            pruning,
        } => cmd_infer(&config, &weights, &inputs, mode, pruning, out),
    }
}

fn cmd_analyze_mult(
    width: u32,
    mode: CiaMode,
    bins: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    if width > MAX_EXHAUSTIVE_WIDTH {
        return Err(Failure::Usage(format!(
            "width {width} exceeds the exhaustive limit of {MAX_EXHAUSTIVE_WIDTH}"
        )));
    }
    let stats = exhaustive_stats(width, mode)?;
    let hist = histogram(width, mode, bins)?;
    let document = serde_json::json!({ "stats": stats, "histogram": hist });
    println!("{}", serde_json::to_string_pretty(&document)?);
    write_artifact(out, "stats.json", &serde_json::to_string_pretty(&stats)?)?;
    let mut csv = Vec::new();
    hist.write_csv(&mut csv)?;
    write_artifact(out, "histogram.csv", std::str::from_utf8(&csv).expect("ascii csv"))?;
    Ok(())
}

fn cmd_simulate(
    config: &MacroConfig,
    pairs_path: &Path,
    mode: CiaMode,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let text = fs::read_to_string(pairs_path)?;
    let mut activations = Vec::new();
    let mut weights = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |tok: &str| {
            tok.trim().parse::<u64>().map_err(|_| {
                Failure::Usage(format!("pairs line {}: invalid value '{tok}'", index + 1))
            })
        };
        let mut fields = line.split(',');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Failure::Usage(format!(
                "pairs line {}: expected 'a,b'",
                index + 1
            )));
        };
        let a = parse(a)?;
        let b = parse(b)?;
        let build = |v: u64, width: u32, what: &str| {
            Operand::new(v, width).map_err(|e| {
                Failure::Usage(format!("pairs line {}: {what} {e}", index + 1))
            })
        };
        activations.push(build(a, config.input_precision, "activation")?);
        weights.push(build(b, config.weight_precision, "weight")?);
    }
    let mut csv = String::from("a,b,final_product,cycles_used,residual_error,matches_reference\n");
    if !activations.is_empty() {
        let mut macro_state = MacroState::new(*config)?;
        let traces = macro_state.bit_serial_mac(&activations, &weights, mode)?;
        for ((a, b), trace) in activations.iter().zip(&weights).zip(&traces) {
            let reference = cia2m_multiply(*a, *b, mode);
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.value(),
                b.value(),
                trace.final_product,
                trace.cycles_used,
                trace.residual_error,
                *trace == reference
            ));
        }
    }
    print!("{csv}");
    write_artifact(out, "trace.csv", &csv)
}

fn cmd_map(
    layer: &LayerSpec,
    config: &MacroConfig,
    mode: CiaMode,
    pruning: Option<f64>,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let mut plan = map_layer(layer, config, mode)?;
    if let Some(fraction) = pruning {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Failure::Usage(format!(
                "pruning fraction {fraction} outside [0, 1]"
            )));
        }
        let total = layer.total_weights();
        let zeroed = (fraction * total as f64).round() as usize;
        let mut indices: Vec<usize> = (0..total).collect();
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut mask = vec![false; total];
        for &i in indices.iter().take(zeroed) {
            mask[i] = true;
        }
        plan = apply_pruning(&plan, &mask)?;
    }
    let json = serde_json::to_string_pretty(&plan)?;
    println!("{json}");
    write_artifact(out, "plan.json", &json)
}

fn cmd_cost(
    config: &MacroConfig,
    plan_path: Option<&Path>,
    mode: CiaMode,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let document = match plan_path {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let plans: Vec<MappingPlan> = match serde_json::from_str(&text) {
                Ok(plans) => plans,
                Err(_) => vec![serde_json::from_str::<MappingPlan>(&text)?],
            };
            serde_json::to_value(macro_summary(config, &plans)?)?
        }
        None => {
            let peak_config = MacroConfig {
                weight_precision: 1,
                input_precision: 1,
                ..*config
            };
            serde_json::json!({
                "peak_one_cycle": throughput(&peak_config, CiaMode::Exact)?,
                "selected_mode": throughput(config, mode)?,
            })
        }
    };
    let json = serde_json::to_string_pretty(&document)?;
    println!("{json}");
    write_artifact(out, "report.json", &json)
}

fn cmd_infer(
    config: &MacroConfig,
    weights_path: &Path,
    inputs_path: &Path,
    mode: CiaMode,
    pruning: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let network = load_weights_csv(weights_path)?;
    let text = fs::read_to_string(inputs_path)?;
    let mut batch: Vec<Vec<f64>> = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Failure::Usage(format!("inputs line {}: invalid value '{tok}'", index + 1))
                })
            })
            .collect::<Result<_, _>>()?;
        batch.push(row);
    }
    let result = run_network(&network, &batch, mode, pruning, config)?;
    let document = serde_json::json!({
        "outputs": result.outputs,
        "report": result.report,
    });
    println!("{}", serde_json::to_string_pretty(&document)?);
    write_artifact(out, "outputs.json", &serde_json::to_string_pretty(&result.outputs)?)?;
    write_artifact(out, "qor.json", &serde_json::to_string_pretty(&result.report)?)
}
