use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use dcsynth::assets::{generate_synthetic_library, load_library, save_library, AssetLibrary};
use dcsynth::evolution::{
    benchmark, benchmark_csv, run, summarize_benchmark, BenchmarkConfig, Designer, Method, RunConfig,
};
use dcsynth::generation::{parse_candidate, GenerationError, Requirements, Scale};
use dcsynth::llm::{LlmEndpointConfig, LlmError, DEFAULT_TOKEN_ENV};
use dcsynth::evolution::EvolutionError;
use dcsynth::optimizer::{optimize_parameters, refine_scene, Normalization, OptimizationConfig};
use dcsynth::physics::{self, OperationalConditions, PhysicsConfig, SimMode};
use dcsynth::scene::{check_constraints, synthesize_scene, Scene, SceneExport};
use dcsynth::weather::{
    external_conditions, load_weather_csv, save_weather_csv, summarize, synthetic_series, Climate,
    WeatherRecord,
};

#[derive(Parser)]
#[command(name = "dcsynth", version, about = "Data-center design synthesis and simulation")]
#[command(args_override_self = true)]
struct Cli {
    /// JSON file whose keys supply flags of the chosen subcommand; flags on
    /// the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the evolutionary design loop.
    Design(DesignArgs),
    /// Simulate a scene and write its trajectory.
    Simulate(SimulateArgs),
    /// Optimize a scene's cooling assets and project them onto the library.
    Optimize(OptimizeArgs),
    /// Run the method comparison grid.
    Benchmark(BenchmarkArgs),
    /// Summarize or synthesize weather series.
    Weather(WeatherArgs),
    /// Write a seeded synthetic asset library.
    GenLibrary(GenLibraryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Llm,
    Heuristic,
    Random,
    Ea,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClimateArg {
    Tropical,
    Dry,
    Temperate,
}

impl From<ClimateArg> for Climate {
    fn from(c: ClimateArg) -> Self {
        match c {
            ClimateArg::Tropical => Climate::Tropical,
            ClimateArg::Dry => Climate::Dry,
            ClimateArg::Temperate => Climate::Temperate,
        }
    }
}

#[derive(Args)]
struct Inputs {
    /// Asset library JSON; a synthetic library when omitted.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Size per category of the synthetic library.
    #[arg(long, default_value_t = 20)]
    library_size: usize,
    /// Weather CSV (hour, dry_bulb_c, rh_pct, pressure_pa); synthetic when omitted.
    #[arg(long)]
    weather: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClimateArg::Temperate)]
    climate: ClimateArg,
    /// Hours of synthetic weather.
    #[arg(long, default_value_t = 48)]
    hours: usize,
    /// Operating conditions JSON {utilization, supply_air_c, flow_ratio}.
    #[arg(long)]
    ops: Option<PathBuf>,
    /// Randomized case-study operating profile instead of the diurnal one.
    #[arg(long)]
    random_ops: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Requirements JSON; the --scale preset when omitted.
    #[arg(long)]
    requirements: Option<PathBuf>,
    #[arg(long, default_value = "small-edge")]
    scale: String,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Heuristic)]
    generator: GeneratorArg,
    /// Method label or name, overriding --generator and the ablation flags.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    #[arg(long, default_value_t = 60)]
    optimizer_steps: usize,
    #[arg(long)]
    raw_distance: bool,
    #[arg(long)]
    no_design_llm: bool,
    #[arg(long)]
    no_reflect: bool,
    #[arg(long)]
    no_phy: bool,
    #[arg(long)]
    llm_base_url: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = DEFAULT_TOKEN_ENV)]
    token_env: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Scene JSON export or a response with <topology>/<layout> blocks.
    #[arg(long)]
    scene: PathBuf,
    /// Simulate even when the scene violates design constraints.
    #[arg(long)]
    allow_invalid: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long)]
    raw_distance: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Comma-separated method labels or names.
    #[arg(long, default_value = "Random,EA,Vanilla,ABL(w/o phy),Full")]
    methods: String,
    #[arg(long, default_value = "small-edge,medium-cluster,large-cloud")]
    scales: String,
    #[arg(long, default_value = "20")]
    library_sizes: String,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    #[arg(long, default_value_t = 48)]
    horizon: usize,
    #[arg(long, default_value_t = 24)]
    large_horizon: usize,
    #[arg(long, value_enum, default_value_t = ClimateArg::Temperate)]
    climate: ClimateArg,
    #[arg(long, default_value_t = 60)]
    optimizer_steps: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct WeatherArgs {
    /// Weather CSV to summarize.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print the psychrometric summary as JSON.
    #[arg(long)]
    summary: bool,
    /// Write a synthetic series to this path instead.
    #[arg(long)]
    synthesize: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClimateArg::Temperate)]
    climate: ClimateArg,
    #[arg(long, default_value_t = 168)]
    hours: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenLibraryArgs {
    #[arg(long, default_value_t = 20)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

macro_rules! emit {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }
}

macro_rules! from_error {
    ($t:ty, $kind:expr) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($kind, e)
            }
        }
    };
}

from_error!(std::io::Error, "io");
from_error!(dcsynth::assets::AssetError, "library");
from_error!(dcsynth::weather::WeatherError, "weather");
from_error!(dcsynth::physics::PhysicsError, "physics");
from_error!(dcsynth::scene::SceneError, "scene");
from_error!(dcsynth::optimizer::OptimizerError, "optimizer");
from_error!(serde_json::Error, "json");

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        let kind = match e {
            LlmError::Auth(_) => "auth",
            LlmError::Config(_) => "config",
            _ => "llm",
        };
        CliError::new(kind, e)
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Llm(e) => e.into(),
            GenerationError::Infeasible(_) => CliError::new("infeasible", e),
            _ => CliError::new("config", e),
        }
    }
}

impl From<EvolutionError> for CliError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::Llm(e) => e.into(),
            EvolutionError::Generation(e) => e.into(),
            EvolutionError::Weather(e) => e.into(),
            EvolutionError::Asset(e) => e.into(),
            _ => CliError::new("config", e),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write(path, &serde_json::to_string_pretty(value)?)
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

struct Loaded {
    library: AssetLibrary,
    weather: Vec<WeatherRecord>,
    conditions: OperationalConditions,
}

fn load_inputs(i: &Inputs) -> CliResult<Loaded> {
    let library = match &i.library {
        Some(p) => load_library(p)?,
        None => generate_synthetic_library(i.library_size.max(1), i.seed),
    };
    let weather = match &i.weather {
        Some(p) => load_weather_csv(p)?,
        None => synthetic_series(i.climate.into(), i.hours, i.seed),
    };
    let conditions = match &i.ops {
        Some(p) => serde_json::from_str(&read(p)?)
            .map_err(|e| CliError::new("config", format!("{}: {e}", p.display())))?,
        None if i.random_ops => OperationalConditions::randomized(weather.len(), i.seed),
        None => OperationalConditions::diurnal(weather.len()),
    };
    if conditions.len() != weather.len() {
        return Err(CliError::new(
            "config",
            format!(
                "weather has {} records but operating conditions {}",
                weather.len(),
                conditions.len()
            ),
        ));
    }
    Ok(Loaded {
        library,
        weather,
        conditions,
    })
}

fn load_scene(path: &Path, library: &AssetLibrary) -> CliResult<Scene> {
    let text = read(path)?;
    let export: SceneExport = if text.contains("<topology>") {
        let c = parse_candidate(&text);
        let (Some(topology), Some(layout)) = (c.topology, c.layout) else {
            return Err(CliError::new(
                "invalid_scene",
                c.parse_error.unwrap_or_else(|| "no design blocks".into()),
            ));
        };
        SceneExport {
            topology,
            layout,
            servers: Requirements::default().server_fill(library)?,
            rooms: Default::default(),
            geometry: Vec::new(),
        }
    } else {
        serde_json::from_str(&text)
            .map_err(|e| CliError::new("invalid_scene", format!("{}: {e}", path.display())))?
    };
    synthesize_scene(&export.topology, &export.layout, library, &export.servers)
        .map_err(|e| CliError::new("invalid_scene", e))
}

fn parse_list<T>(text: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> CliResult<Vec<T>> {
    let mut out = Vec::new();
    // labels such as "ABL(w/o reflect, phy)" contain commas inside parentheses
    let mut depth = 0;
    let mut cur = String::new();
    for ch in text.chars().chain(std::iter::once(',')) {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if ch == ',' && depth == 0 {
            let item = cur.trim();
            if !item.is_empty() {
                out.push(f(item).ok_or_else(|| CliError::new("config", format!("unknown {what} {item:?}")))?);
            }
            cur.clear();
        } else {
            cur.push(ch);
        }
    }
    Ok(out)
}

fn cmd_design(a: &DesignArgs) -> CliResult<()> {
    let inputs = load_inputs(&a.inputs)?;
    let requirements: Requirements = match &a.requirements {
        Some(p) => serde_json::from_str(&read(p)?)
            .map_err(|e| CliError::new("config", format!("{}: {e}", p.display())))?,
        None => Requirements::for_scale(
            Scale::parse(&a.scale).ok_or_else(|| CliError::new("config", format!("unknown scale {:?}", a.scale)))?,
        ),
    };
    let method = match &a.method {
        Some(m) => Method::parse(m).ok_or_else(|| CliError::new("config", format!("unknown method {m:?}")))?,
        None => match a.generator {
            GeneratorArg::Random => Method::Random,
            GeneratorArg::Ea => Method::Ea,
            GeneratorArg::Llm | GeneratorArg::Heuristic => {
                Method::from_switches(!a.no_design_llm, !a.no_reflect, !a.no_phy)
            }
        },
    };
    let designer = match a.generator {
        GeneratorArg::Llm => {
            let mut c = LlmEndpointConfig {
                samples: a.samples,
                token_env: a.token_env.clone(),
                top_p: a.top_p,
                ..LlmEndpointConfig::default()
            };
            if let Some(u) = &a.llm_base_url {
                c.base_url = u.clone();
            }
            if let Some(m) = &a.llm_model {
                c.model = m.clone();
            }
            if let Some(t) = a.temperature {
                c.temperature = t;
            }
            Designer::Llm(c)
        }
        _ => Designer::Heuristic,
    };
    let config = RunConfig {
        method,
        designer,
        iterations: a.iterations,
        samples: a.samples,
        top_k: a.topk,
        seed: a.inputs.seed,
        optimizer: OptimizationConfig {
            max_steps: a.optimizer_steps,
            ..OptimizationConfig::default()
        },
        normalization: if a.raw_distance {
            Normalization::Raw
        } else {
            Normalization::ZScore
        },
    };
    let report = run(&config, &inputs.library, &requirements, &inputs.weather, &inputs.conditions)?;
    std::fs::create_dir_all(&a.out)?;
    write(&a.out.join("report.json"), &report.to_json())?;
    write(&a.out.join("iterations.csv"), &report.iterations_csv())?;
    if let Some(best) = &report.best {
        write_json(&a.out.join("best_scene.json"), &best.scene)?;
    }
    emit!(
        "{}",
        json!({
            "method": report.method,
            "best_pue": report.best_pue(),
            "mean_gsr": report.mean_gsr(),
            "out": a.out.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let inputs = load_inputs(&a.inputs)?;
    let scene = load_scene(&a.scene, &inputs.library)?;
    let report = check_constraints(&scene, &inputs.library);
    if !report.is_valid() && !a.allow_invalid {
        eprintln!("{}", serde_json::to_string_pretty(&report.violations)?);
        return Err(CliError::new(
            "invalid_scene",
            format!("scene violates {} design constraints", report.violations.len()),
        ));
    }
    let weather = external_conditions(&inputs.weather)?;
    let result = physics::simulate(
        &scene,
        &weather,
        &inputs.conditions,
        &SimMode::Evaluate,
        &PhysicsConfig::default(),
    )?;
    std::fs::create_dir_all(&a.out)?;
    result.write_trajectory_csv(a.out.join("trajectory.csv"))?;
    let summary = physics::summarize(&result);
    let mut value = serde_json::to_value(&summary)?;
    value["constraints_valid"] = Value::Bool(report.is_valid());
    write_json(&a.out.join("summary.json"), &value)?;
    emit!("{}", serde_json::to_string(&value)?);
    Ok(())
}

fn cmd_optimize(a: &OptimizeArgs) -> CliResult<()> {
    let inputs = load_inputs(&a.inputs)?;
    let scene = load_scene(&a.scene, &inputs.library)?;
    let weather = external_conditions(&inputs.weather)?;
    let physics = PhysicsConfig::default();
    let config = OptimizationConfig {
        max_steps: a.steps,
        learning_rate: a.learning_rate,
        ..OptimizationConfig::default()
    };
    let ideal = optimize_parameters(&scene, &inputs.library, &weather, &inputs.conditions, &config, &physics)?;
    let norm = if a.raw_distance {
        Normalization::Raw
    } else {
        Normalization::ZScore
    };
    let refined = refine_scene(&scene, &ideal, &inputs.library, norm)?;
    let before = physics::simulate(&scene, &weather, &inputs.conditions, &SimMode::Evaluate, &physics)?;
    let after = physics::simulate(&refined, &weather, &inputs.conditions, &SimMode::Evaluate, &physics)?;
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("ideal_assets.json"), &ideal.assets)?;
    write(&a.out.join("optimizer_trace.csv"), &ideal.outcome.trace_csv())?;
    write_json(&a.out.join("refined_scene.json"), &refined.to_export())?;
    emit!(
        "{}",
        json!({
            "pue_before": before.pue,
            "ideal_objective": ideal.objective,
            "pue_after": after.pue,
            "steps": ideal.outcome.steps,
            "refined_valid": check_constraints(&refined, &inputs.library).is_valid(),
        })
    );
    Ok(())
}

fn cmd_benchmark(a: &BenchmarkArgs) -> CliResult<()> {
    let config = BenchmarkConfig {
        methods: parse_list(&a.methods, "method", Method::parse)?,
        scales: parse_list(&a.scales, "scale", Scale::parse)?,
        library_sizes: parse_list(&a.library_sizes, "library size", |s| s.parse().ok().filter(|n| *n > 0))?,
        seeds: (a.first_seed..a.first_seed + a.seeds).collect(),
        iterations: a.iterations,
        samples: a.samples,
        top_k: a.topk,
        horizon: a.horizon,
        large_horizon: a.large_horizon,
        climate: a.climate.into(),
        optimizer: OptimizationConfig {
            max_steps: a.optimizer_steps,
            ..OptimizationConfig::default()
        },
    };
    let rows = benchmark(&config)?;
    std::fs::create_dir_all(&a.out)?;
    write(&a.out.join("benchmark.csv"), &benchmark_csv(&rows))?;
    let summary = summarize_benchmark(&rows);
    let mut table = String::from("method,scale,library_size,runs,median_best_pue,mean_gsr\n");
    for s in &summary {
        table.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            s.method, s.scale, s.library_size, s.runs, s.median_best_pue, s.mean_gsr
        ));
    }
    write(&a.out.join("summary.csv"), &table)?;
    emit!("{}", table.trim_end());
    Ok(())
}

fn cmd_weather(a: &WeatherArgs) -> CliResult<()> {
    if let Some(path) = &a.synthesize {
        let series = synthetic_series(a.climate.into(), a.hours, a.seed);
        save_weather_csv(&series, path)?;
        emit!("{}", json!({"written": path.display().to_string(), "hours": series.len()}));
        return Ok(());
    }
    let path = a
        .csv
        .as_ref()
        .ok_or_else(|| CliError::new("config", "weather needs --csv or --synthesize"))?;
    let s = summarize(&load_weather_csv(path)?)?;
    if a.summary {
        emit!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        emit!("{}", s.describe());
    }
    Ok(())
}

fn cmd_gen_library(a: &GenLibraryArgs) -> CliResult<()> {
    if a.size == 0 {
        return Err(CliError::new("config", "--size must be >= 1"));
    }
    let lib = generate_synthetic_library(a.size, a.seed);
    save_library(&lib, &a.out)?;
    emit!("{}", json!({"written": a.out.display().to_string(), "assets": lib.len()}));
    Ok(())
}

/// Flags from a `--config` file, placed before the real arguments so that
/// command-line flags override them.
fn merged_args(raw: Vec<String>) -> CliResult<Vec<String>> {
    let Some(pos) = raw.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(raw);
    };
    let path = match raw[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => raw
            .get(pos + 1)
            .cloned()
            .ok_or_else(|| CliError::new("config", "--config needs a file"))?,
    };
    let value: Value = serde_json::from_str(&read(Path::new(&path))?)
        .map_err(|e| CliError::new("config", format!("{path}: {e}")))?;
    let Value::Object(map) = value else {
        return Err(CliError::new("config", format!("{path}: expected a JSON object")));
    };
    let mut flags = Vec::new();
    for (k, v) in map {
        let flag = format!("--{}", k.replace('_', "-"));
        match v {
            Value::Bool(true) => flags.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::String(s) => flags.extend([flag, s]),
            Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                    .collect();
                flags.extend([flag, parts.join(",")]);
            }
            other => flags.extend([flag, other.to_string()]),
        }
    }
    // subcommand name is the first non-flag argument after the program
    let sub = raw
        .iter()
        .enumerate()
        .skip(1)
        .find(|(i, a)| !a.starts_with('-') && (*i == 0 || !raw[i - 1].starts_with("--config")))
        .map(|(i, _)| i)
        .ok_or_else(|| CliError::new("config", "missing subcommand"))?;
    let mut out = raw[..=sub].to_vec();
    out.extend(flags);
    out.extend(raw[sub + 1..].iter().cloned());
    Ok(out)
}

fn dispatch(raw: Vec<String>) -> CliResult<()> {
    let args = merged_args(raw)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            emit!("{}", e.to_string().trim_end());
            return Ok(());
        }
        Err(e) => return Err(CliError::new("usage", e.to_string().trim_end())),
    };
    match &cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Weather(a) => cmd_weather(a),
        Command::GenLibrary(a) => cmd_gen_library(a),
    }
}

fn main() -> ExitCode {
    match dispatch(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind, "message": e.message}}));
            ExitCode::from(if e.kind == "usage" { 2 } else { 1 })
        }
    }
}
