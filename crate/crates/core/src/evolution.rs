//! The evolutionary design loop, its ranked archive and the benchmark harness.
//!
//! Each iteration builds a query from the archive's top `K` entries, samples
//! `N` candidates, synthesizes and checks them, optionally refines their
//! cooling assets with the gradient optimizer, reflects on the simulation and
//! appends admissible candidates to the archive.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{generate_synthetic_library, AssetError, AssetLibrary};
use crate::generation::{
    design_text, ea_mutate, guided_mutate, heuristic_design, llm_generate, random_generate, Candidate,
    DesignContext, DesignQuery, GenerationError, GeneratorKind, HistoryEntry, Requirements, Scale,
};
use crate::llm::{LlmClient, LlmEndpointConfig, LlmError};
use crate::optimizer::{optimize_parameters, refine_scene, Normalization, OptimizationConfig};
use crate::physics::{simulate, OperationalConditions, PhysicsConfig, SimMode, SimulationResult};
use crate::reflection::{
    contextualize, metrics_only, reflect, render_trajectories, ReflectMode, ReflectionOutput,
    ReflectionTargets,
};
use crate::scene::{check_constraints, synthesize_scene, ConstraintReport, Scene, SceneExport};
use crate::weather::{external_conditions, summarize, synthetic_series, Climate, ExternalConditions, WeatherError, WeatherRecord};

/// Entries kept by the archive.
pub const HEAP_CAPACITY: usize = 256;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("cannot compute GSR of an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Weather(#[from] WeatherError),
    #[error(transparent)]
    Asset(#[from] AssetError),
}

/// Archive ranked ascending by key; equal keys keep insertion order.
#[derive(Debug, Clone)]
pub struct EvolutionHeap<T> {
    entries: Vec<(f64, T)>,
    capacity: usize,
}

impl<T> Default for EvolutionHeap<T> {
    fn default() -> Self {
        Self::with_capacity(HEAP_CAPACITY)
    }
}

impl<T> EvolutionHeap<T> {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            entries: Vec::new(),
            capacity,
        }
    }

    /// Insert after every entry with key `<= key`; the worst entry is
    /// evicted beyond capacity. NaN keys are ignored.
    pub fn push(&mut self, key: f64, item: T) {
        if key.is_nan() {
            return;
        }
        let at = self.entries.partition_point(|(k, _)| *k <= key);
        self.entries.insert(at, (key, item));
        self.entries.truncate(self.capacity);
    }

    /// The `k` lowest-key entries.
    pub fn topk(&self, k: usize) -> &[(f64, T)] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn best(&self) -> Option<&(f64, T)> {
        self.entries.first()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> Vec<f64> {
        self.entries.iter().map(|(k, _)| *k).collect()
    }
}

/// Fraction of valid verdicts.
pub fn gsr(valid: &[bool]) -> Result<f64, EvolutionError> {
    if valid.is_empty() {
        return Err(EvolutionError::EmptyBatch);
    }
    Ok(valid.iter().filter(|v| **v).count() as f64 / valid.len() as f64)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of candidate `index` in `iteration` of a run seeded by `seed`.
pub fn sub_seed(seed: u64, iteration: usize, index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ iteration as u64) ^ index as u64)
}

/// Baselines, the full pipeline and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Random,
    Ea,
    Vanilla,
    Full,
    NoPhy,
    NoReflectPhy,
    NoDesignPhy,
    NoLlm,
    NoReflect,
    NoDesign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Random,
    Ea,
    Designer { history: bool },
    Guided,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Random,
        Method::Ea,
        Method::Vanilla,
        Method::Full,
        Method::NoPhy,
        Method::NoReflectPhy,
        Method::NoDesignPhy,
        Method::NoLlm,
        Method::NoReflect,
        Method::NoDesign,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::Ea => "EA",
            Method::Vanilla => "Vanilla",
            Method::Full => "Full",
            Method::NoPhy => "ABL(w/o phy)",
            Method::NoReflectPhy => "ABL(w/o reflect, phy)",
            Method::NoDesignPhy => "ABL(w/o design, phy)",
            Method::NoLlm => "ABL(w/o llm)",
            Method::NoReflect => "ABL(w/o reflect)",
            Method::NoDesign => "ABL(w/o design)",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        let key = s.to_ascii_lowercase();
        Method::ALL.into_iter().find(|m| {
            m.label().to_ascii_lowercase() == key || format!("{m:?}").to_ascii_lowercase() == key
        })
    }

    /// Method of the bi-level loop with the given stages switched on.
    pub fn from_switches(design: bool, reflect: bool, physics: bool) -> Method {
        match (design, reflect, physics) {
            (true, true, true) => Method::Full,
            (true, true, false) => Method::NoPhy,
            (true, false, false) => Method::NoReflectPhy,
            (false, true, false) => Method::NoDesignPhy,
            (false, false, true) => Method::NoLlm,
            (true, false, true) => Method::NoReflect,
            (false, true, true) => Method::NoDesign,
            (false, false, false) => Method::Ea,
        }
    }

    pub fn physics(self) -> bool {
        matches!(self, Method::Full | Method::NoLlm | Method::NoReflect | Method::NoDesign)
    }

    pub fn reflection(self) -> bool {
        matches!(
            self,
            Method::Full | Method::NoPhy | Method::NoDesignPhy | Method::NoDesign
        )
    }

    fn first(self) -> Source {
        match self {
            Method::Random | Method::Ea | Method::NoDesignPhy | Method::NoLlm | Method::NoDesign => {
                Source::Random
            }
            _ => Source::Designer { history: false },
        }
    }

    fn later(self) -> Source {
        match self {
            Method::Random => Source::Random,
            Method::Ea | Method::NoReflectPhy | Method::NoLlm | Method::NoReflect => Source::Ea,
            Method::Vanilla => Source::Designer { history: false },
            Method::Full | Method::NoPhy => Source::Designer { history: true },
            Method::NoDesignPhy | Method::NoDesign => Source::Guided,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Backend of the design and reflection stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum Designer {
    #[default]
    Heuristic,
    Llm(LlmEndpointConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: Method,
    pub designer: Designer,
    pub iterations: usize,
    pub samples: usize,
    pub top_k: usize,
    pub seed: u64,
    pub optimizer: OptimizationConfig,
    pub normalization: Normalization,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Full,
            designer: Designer::Heuristic,
            iterations: 5,
            samples: 5,
            top_k: 5,
            seed: 0,
            optimizer: OptimizationConfig {
                max_steps: 60,
                ..OptimizationConfig::default()
            },
            normalization: Normalization::ZScore,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        if self.iterations == 0 || self.samples == 0 {
            return Err(EvolutionError::Config(
                "iterations and samples must be >= 1".into(),
            ));
        }
        self.optimizer
            .validate()
            .map_err(|e| EvolutionError::Config(e.to_string()))?;
        if let Designer::Llm(c) = &self.designer {
            c.validate()?;
        }
        Ok(())
    }
}

/// Outcome of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub iteration: usize,
    pub index: usize,
    pub generator: GeneratorKind,
    pub seed: Option<u64>,
    pub parse_ok: bool,
    pub parse_error: Option<String>,
    pub syntax_valid: bool,
    /// Conjunction of the constraint report; counted by GSR.
    pub valid: bool,
    pub violations: Vec<String>,
    pub failure_events: usize,
    /// Mean PUE before refinement.
    pub initial_pue: Option<f64>,
    pub pue: Option<f64>,
    pub refined: bool,
    pub optimizer_steps: usize,
    pub optimizer_error: Option<String>,
    /// Entered the archive.
    pub admitted: bool,
    pub design: String,
    pub reflection: ReflectionOutput,
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub samples: usize,
    pub valid: usize,
    pub gsr: f64,
    pub admitted: usize,
    /// Best archived PUE so far.
    pub best_pue: Option<f64>,
    /// Mean PUE of this iteration's admitted candidates.
    pub mean_pue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestDesign {
    pub pue: f64,
    pub design: String,
    pub scene: SceneExport,
    pub reflection: ReflectionOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub config: RunConfig,
    pub requirements: Requirements,
    pub iterations: Vec<IterationMetrics>,
    pub best: Option<BestDesign>,
    pub candidates: Vec<CandidateRecord>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn iterations_csv(&self) -> String {
        let mut out = String::from("iteration,samples,valid,gsr,admitted,best_pue,mean_pue\n");
        for m in &self.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.iteration,
                m.samples,
                m.valid,
                m.gsr,
                m.admitted,
                opt_cell(m.best_pue),
                opt_cell(m.mean_pue)
            );
        }
        out
    }

    pub fn best_pue(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.pue)
    }

    pub fn best_trace(&self) -> Vec<Option<f64>> {
        self.iterations.iter().map(|m| m.best_pue).collect()
    }

    pub fn mean_gsr(&self) -> f64 {
        let n = self.iterations.len().max(1) as f64;
        self.iterations.iter().map(|m| m.gsr).sum::<f64>() / n
    }
}

/// What the archive keeps per admitted candidate.
#[derive(Debug, Clone)]
pub struct Archived {
    pub scene: Scene,
    pub history: HistoryEntry,
}

struct Evaluated {
    record: CandidateRecord,
    archived: Option<Archived>,
}

struct Shared<'a> {
    library: &'a AssetLibrary,
    requirements: &'a Requirements,
    requirements_text: String,
    weather: &'a [ExternalConditions],
    conditions: &'a OperationalConditions,
    physics: PhysicsConfig,
    targets: ReflectionTargets,
    optimizer: OptimizationConfig,
    normalization: Normalization,
    use_physics: bool,
    reflection: bool,
    client: Option<&'a LlmClient>,
}

struct Evaluation {
    scene: Scene,
    report: ConstraintReport,
    result: Option<SimulationResult>,
}

impl Evaluation {
    fn pue(&self) -> Option<f64> {
        self.result.as_ref().map(|r| r.pue).filter(|p| p.is_finite())
    }

    fn admissible(&self) -> bool {
        self.report.is_valid()
            && self.pue().is_some()
            && self.result.as_ref().is_some_and(|r| r.failures.is_empty())
    }

    /// Larger is better.
    fn rank(&self) -> (bool, bool, f64) {
        (
            self.admissible(),
            self.report.is_valid(),
            -self.pue().unwrap_or(f64::INFINITY),
        )
    }
}

fn evaluate_scene(scene: Scene, sh: &Shared) -> Evaluation {
    let report = check_constraints(&scene, sh.library);
    let result = simulate(&scene, sh.weather, sh.conditions, &SimMode::Evaluate, &sh.physics).ok();
    Evaluation { scene, report, result }
}

fn better(a: &Evaluation, b: &Evaluation) -> bool {
    let (ra, rb) = (a.rank(), b.rank());
    (ra.0, ra.1) > (rb.0, rb.1) || ((ra.0, ra.1) == (rb.0, rb.1) && ra.2 > rb.2)
}

fn evaluate(candidate: Candidate, iteration: usize, index: usize, sh: &Shared) -> Evaluated {
    let mut record = CandidateRecord {
        iteration,
        index,
        generator: candidate.provenance.kind,
        seed: candidate.provenance.seed,
        parse_ok: candidate.parse_ok,
        parse_error: candidate.parse_error.clone(),
        syntax_valid: false,
        valid: false,
        violations: Vec::new(),
        failure_events: 0,
        initial_pue: None,
        pue: None,
        refined: false,
        optimizer_steps: 0,
        optimizer_error: None,
        admitted: false,
        design: candidate.design_text(),
        reflection: ReflectionOutput {
            summary: String::new(),
            suggestions: String::new(),
            directives: Vec::new(),
            pue: f64::INFINITY,
            source: crate::reflection::ReflectionSource::RuleBased,
        },
        raw_response: candidate.provenance.raw.clone(),
    };
    let syntax_fail = |mut record: CandidateRecord, message: String| {
        let report = ConstraintReport::syntax_failure(message.clone());
        record.violations = report.violations.iter().map(|v| v.constraint.clone()).collect();
        record.reflection.summary = format!("Design rejected before simulation: {message}.");
        Evaluated {
            record,
            archived: None,
        }
    };
    let (Some(topology), Some(layout)) = (&candidate.topology, &candidate.layout) else {
        let msg = candidate.parse_error.clone().unwrap_or_else(|| "no design blocks".into());
        return syntax_fail(record, msg);
    };
    let fill = match sh.requirements.server_fill(sh.library) {
        Ok(f) => f,
        Err(e) => return syntax_fail(record, e.to_string()),
    };
    let scene = match synthesize_scene(topology, layout, sh.library, &fill) {
        Ok(s) => s,
        Err(e) => return syntax_fail(record, e.to_string()),
    };
    let mut eval = evaluate_scene(scene, sh);
    record.initial_pue = eval.pue();

    if sh.use_physics && eval.pue().is_some() {
        let refined = optimize_parameters(
            &eval.scene,
            sh.library,
            sh.weather,
            sh.conditions,
            &sh.optimizer,
            &sh.physics,
        )
        .and_then(|ideal| {
            record.optimizer_steps = ideal.outcome.steps;
            refine_scene(&eval.scene, &ideal, sh.library, sh.normalization)
        });
        match refined {
            Ok(scene) => {
                let next = evaluate_scene(scene, sh);
                if better(&next, &eval) {
                    eval = next;
                    record.refined = true;
                }
            }
            Err(e) => record.optimizer_error = Some(e.to_string()),
        }
    }

    record.syntax_valid = eval.report.syntax_valid;
    record.valid = eval.report.is_valid();
    record.violations = eval.report.violations.iter().map(|v| v.constraint.clone()).collect();
    record.pue = eval.pue();
    let effective = eval.scene.effective_topology();
    record.design = design_text(&effective, &eval.scene.layout);

    let Some(result) = &eval.result else {
        record.reflection.summary = "Simulation failed for this design.".into();
        return Evaluated {
            record,
            archived: None,
        };
    };
    record.failure_events = result.failures.len();
    let ctx = contextualize(result, Some(&eval.report), sh.physics.zone_max_c);
    record.reflection = if sh.reflection {
        let mode = match sh.client {
            Some(c) => ReflectMode::Llm(c),
            None => ReflectMode::RuleBased,
        };
        reflect(
            &eval.scene,
            &record.design,
            &sh.requirements_text,
            &ctx,
            Some(&eval.report),
            &sh.targets,
            mode,
        )
    } else {
        metrics_only(&ctx)
    };
    let archived = eval.admissible().then(|| {
        record.admitted = true;
        Archived {
            history: HistoryEntry {
                topology: effective,
                layout: eval.scene.layout.clone(),
                pue: record.pue.unwrap_or(f64::INFINITY),
                trajectory: render_trajectories(&ctx),
                reflection: record.reflection.clone(),
            },
            scene: eval.scene,
        }
    });
    Evaluated { record, archived }
}

fn parent_of(h: &HistoryEntry, seed: u64) -> Candidate {
    Candidate::new(h.topology.clone(), h.layout.clone(), GeneratorKind::Heuristic, seed)
}

/// Run the loop.
pub fn run(
    config: &RunConfig,
    library: &AssetLibrary,
    requirements: &Requirements,
    weather: &[WeatherRecord],
    conditions: &OperationalConditions,
) -> Result<RunReport, EvolutionError> {
    config.validate()?;
    library.ensure_usable()?;
    requirements.validate()?;
    conditions
        .validate()
        .map_err(|e| EvolutionError::Config(e.to_string()))?;
    if weather.len() != conditions.len() {
        return Err(EvolutionError::Config(format!(
            "weather has {} records but operating conditions {}",
            weather.len(),
            conditions.len()
        )));
    }
    let external = external_conditions(weather)?;
    let profile = summarize(weather)?.describe();
    let ctx = DesignContext::new(requirements, library, &external)?;
    let client = match &config.designer {
        Designer::Llm(c) => Some(LlmClient::new(c.clone())?),
        Designer::Heuristic => None,
    };
    let physics = PhysicsConfig {
        zone_max_c: requirements.zone_max_c,
        ..PhysicsConfig::default()
    };
    let method = config.method;
    let shared = Shared {
        library,
        requirements,
        requirements_text: requirements.describe(),
        weather: &external,
        conditions,
        physics,
        targets: ReflectionTargets {
            pue_target: requirements.pue_target,
            zone_max_c: requirements.zone_max_c,
        },
        optimizer: config.optimizer,
        normalization: config.normalization,
        use_physics: method.physics(),
        reflection: method.reflection(),
        client: client.as_ref(),
    };

    let mut heap: EvolutionHeap<Archived> = EvolutionHeap::default();
    let mut iterations = Vec::with_capacity(config.iterations);
    let mut candidates = Vec::new();
    for it in 0..config.iterations {
        let seeds: Vec<u64> = (0..config.samples).map(|i| sub_seed(config.seed, it, i)).collect();
        let history: Vec<HistoryEntry> = heap
            .topk(config.top_k)
            .iter()
            .map(|(_, a)| a.history.clone())
            .collect();
        let source = if it == 0 { method.first() } else { method.later() };
        let random = |s: u64| random_generate(&ctx, s, 1).map(|mut v| v.remove(0));
        let batch: Vec<Candidate> = match source {
            Source::Random => seeds.iter().map(|&s| random(s)).collect::<Result<_, _>>()?,
            Source::Ea | Source::Guided if history.is_empty() => {
                seeds.iter().map(|&s| random(s)).collect::<Result<_, _>>()?
            }
            Source::Ea => seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| ea_mutate(&parent_of(&history[i % history.len()], s), library, s))
                .collect::<Result<_, _>>()?,
            Source::Guided => seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let h = &history[i % history.len()];
                    guided_mutate(&ctx, &parent_of(h, s), &h.reflection.directives, s)
                })
                .collect::<Result<_, _>>()?,
            Source::Designer { history: use_history } => {
                let history = if use_history { history } else { Vec::new() };
                match &client {
                    Some(c) => {
                        let query = DesignQuery::new(library, profile.clone(), requirements, history)?;
                        llm_generate(c, &query, config.samples)?
                    }
                    None => heuristic_design(&ctx, &history, &seeds)?,
                }
            }
        };

        let evaluated: Vec<Evaluated> = batch
            .into_par_iter()
            .enumerate()
            .map(|(i, c)| evaluate(c, it, i, &shared))
            .collect();

        let valid: Vec<bool> = evaluated.iter().map(|e| e.record.valid).collect();
        let mut admitted_pues = Vec::new();
        for e in evaluated {
            if let Some(a) = e.archived {
                let pue = a.history.pue;
                admitted_pues.push(pue);
                heap.push(pue, a);
            }
            candidates.push(e.record);
        }
        iterations.push(IterationMetrics {
            iteration: it + 1,
            samples: valid.len(),
            valid: valid.iter().filter(|v| **v).count(),
            gsr: gsr(&valid)?,
            admitted: admitted_pues.len(),
            best_pue: heap.best().map(|(k, _)| *k),
            mean_pue: (!admitted_pues.is_empty())
                .then(|| admitted_pues.iter().sum::<f64>() / admitted_pues.len() as f64),
        });
    }

    let best = heap.best().map(|(pue, a)| BestDesign {
        pue: *pue,
        design: design_text(&a.history.topology, &a.history.layout),
        scene: a.scene.to_export(),
        reflection: a.history.reflection.clone(),
    });
    Ok(RunReport {
        method: method.label().to_string(),
        config: config.clone(),
        requirements: requirements.clone(),
        iterations,
        best,
        candidates,
    })
}

/// Benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub scales: Vec<Scale>,
    pub library_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub samples: usize,
    pub top_k: usize,
    /// Simulated hours for small and medium scales.
    pub horizon: usize,
    /// Simulated hours for the large scale.
    pub large_horizon: usize,
    pub climate: Climate,
    pub optimizer: OptimizationConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Random, Method::Ea, Method::Vanilla, Method::NoPhy, Method::Full],
            scales: Scale::ALL.to_vec(),
            library_sizes: vec![20],
            seeds: (0..5).collect(),
            iterations: 5,
            samples: 5,
            top_k: 5,
            horizon: 48,
            large_horizon: 24,
            climate: Climate::Temperate,
            optimizer: RunConfig::default().optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub scale: Scale,
    pub library_size: usize,
    pub seed: u64,
    pub best_pue: Option<f64>,
    pub mean_gsr: f64,
    pub best_trace: Vec<Option<f64>>,
}

/// Library used for one benchmark cell.
pub fn benchmark_library(library_size: usize, seed: u64) -> AssetLibrary {
    generate_synthetic_library(library_size, splitmix64(seed ^ ((library_size as u64) << 32)))
}

/// Run every (method, scale, library size, seed) cell. Methods share the
/// library, weather and operating conditions of a cell.
pub fn benchmark(config: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>, EvolutionError> {
    let mut cells = Vec::new();
    for &scale in &config.scales {
        for &size in &config.library_sizes {
            for &seed in &config.seeds {
                for &method in &config.methods {
                    cells.push((scale, size, seed, method));
                }
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(scale, size, seed, method)| {
            let hours = if scale == Scale::LargeCloud {
                config.large_horizon
            } else {
                config.horizon
            };
            let library = benchmark_library(size, seed);
            let weather = synthetic_series(config.climate, hours, seed);
            let conditions = OperationalConditions::diurnal(hours);
            let run_config = RunConfig {
                method,
                designer: Designer::Heuristic,
                iterations: config.iterations,
                samples: config.samples,
                top_k: config.top_k,
                seed,
                optimizer: config.optimizer,
                normalization: Normalization::ZScore,
            };
            let report = run(
                &run_config,
                &library,
                &Requirements::for_scale(scale),
                &weather,
                &conditions,
            )?;
            Ok(BenchmarkRow {
                method: method.label().to_string(),
                scale,
                library_size: size,
                seed,
                best_pue: report.best_pue(),
                mean_gsr: report.mean_gsr(),
                best_trace: report.best_trace(),
            })
        })
        .collect()
}

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from("method,scale,library_size,seed,best_pue,mean_gsr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "\"{}\",{},{},{},{},{}",
            r.method,
            r.scale,
            r.library_size,
            r.seed,
            opt_cell(r.best_pue),
            r.mean_gsr
        );
    }
    out
}

/// Per (method, scale, library size) aggregate of benchmark rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub scale: Scale,
    pub library_size: usize,
    pub runs: usize,
    /// Median best PUE; runs without an admissible design count as +∞.
    pub median_best_pue: f64,
    pub mean_gsr: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn summarize_benchmark(rows: &[BenchmarkRow]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(Scale, usize, String), Vec<&BenchmarkRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scale, r.library_size, r.method.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((scale, library_size, method), rs)| {
            let mut pues: Vec<f64> = rs.iter().map(|r| r.best_pue.unwrap_or(f64::INFINITY)).collect();
            MethodSummary {
                method,
                scale,
                library_size,
                runs: rs.len(),
                median_best_pue: median(&mut pues),
                mean_gsr: rs.iter().map(|r| r.mean_gsr).sum::<f64>() / rs.len() as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heap_orders_and_caps() {
        let mut h = EvolutionHeap::with_capacity(3);
        for (k, v) in [(1.3, 'a'), (1.1, 'b'), (1.3, 'c'), (1.2, 'd'), (1.5, 'e')] {
            h.push(k, v);
        }
        let items: Vec<char> = h.topk(10).iter().map(|(_, v)| *v).collect();
        assert_eq!(items, vec!['b', 'd', 'a']);
        assert_eq!(h.topk(0).len(), 0);
        h.push(f64::NAN, 'x');
        assert_eq!(h.len(), 3);
    }

    #[test]
    fn gsr_ratios() {
        assert_eq!(gsr(&[true, false, true, true, false]).unwrap(), 0.6);
        assert_eq!(gsr(&[false; 4]).unwrap(), 0.0);
        assert!(matches!(gsr(&[]), Err(EvolutionError::EmptyBatch)));
    }

    #[test]
    fn switches_map_to_labels() {
        assert_eq!(Method::from_switches(true, true, true).label(), "Full");
        assert_eq!(Method::from_switches(true, true, false).label(), "ABL(w/o phy)");
        assert_eq!(Method::from_switches(true, false, false).label(), "ABL(w/o reflect, phy)");
        assert_eq!(Method::from_switches(false, true, false).label(), "ABL(w/o design, phy)");
        assert_eq!(Method::from_switches(false, false, true).label(), "ABL(w/o llm)");
        assert_eq!(Method::parse("abl(w/o phy)"), Some(Method::NoPhy));
        assert_eq!(Method::parse("vanilla"), Some(Method::Vanilla));
    }

    #[test]
    fn sub_seeds_differ() {
        let a = sub_seed(1, 0, 0);
        assert_ne!(a, sub_seed(1, 0, 1));
        assert_ne!(a, sub_seed(1, 1, 0));
        assert_ne!(a, sub_seed(2, 0, 0));
        assert_eq!(a, sub_seed(1, 0, 0));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn minimal_random_run() {
        let lib = generate_synthetic_library(5, 3);
        let weather = synthetic_series(Climate::Temperate, 6, 1);
        let cond = OperationalConditions::diurnal(6);
        let config = RunConfig {
            method: Method::Random,
            iterations: 1,
            samples: 1,
            seed: 9,
            ..RunConfig::default()
        };
        let r = run(&config, &lib, &Requirements::default(), &weather, &cond).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.iterations.len(), 1);
        assert!(!r.candidates[0].reflection.summary.is_empty());
    }
}
