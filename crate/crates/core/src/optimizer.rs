//! Physics-informed asset optimization.
//!
//! [`optimize_parameters`] searches the continuous parameters of a scene's
//! cooling assets for the lowest mean PUE subject to the thermal and capacity
//! constraints, using projected gradient descent on the penalized objective
//! `J = PUE + lambda * penalty` in box-normalized coordinates. The resulting
//! ideal parameters are projected onto real library assets by
//! [`select_nearest`], and [`refine_scene`] swaps them into the scene while
//! keeping topology and layout untouched.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{AssetCategory, AssetError, AssetLibrary, AssetSpec};
use crate::dual::Scalar;
use crate::physics::{
    optimizable_handles, simulate, OperationalConditions, ParameterHandle, PhysicsConfig,
    PhysicsError, SimMode,
};
use crate::scene::{synthesize_with_assets, Scene, SceneError};
use crate::weather::ExternalConditions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("no {0} assets in the library")]
    EmptyCategory(AssetCategory),
    #[error("{category} parameter vector has {got} values, expected {expected}")]
    Dimension {
        category: AssetCategory,
        expected: usize,
        got: usize,
    },
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
}

impl From<AssetError> for OptimizerError {
    fn from(e: AssetError) -> Self {
        match e {
            AssetError::Dimension {
                category,
                expected,
                got,
            } => OptimizerError::Dimension {
                category,
                expected,
                got,
            },
            AssetError::EmptyCategory(c) => OptimizerError::EmptyCategory(c),
            other => OptimizerError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationConfig {
    pub max_steps: usize,
    /// Step length in normalized parameter units (max-norm).
    pub learning_rate: f64,
    pub penalty_weight: f64,
    pub penalty_growth: f64,
    /// Steps between penalty weight increases.
    pub growth_interval: usize,
    pub convergence_tol: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            max_steps: 200,
            learning_rate: 0.05,
            penalty_weight: 10.0,
            penalty_growth: 2.0,
            growth_interval: 50,
            convergence_tol: 1e-6,
            max_backtracks: 20,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(self.learning_rate > 0.0) {
            return Err(OptimizerError::Config("learning rate must be > 0".into()));
        }
        if !(self.penalty_weight >= 0.0) || !(self.penalty_growth >= 1.0) {
            return Err(OptimizerError::Config(
                "penalty weight must be >= 0 and growth >= 1".into(),
            ));
        }
        if self.max_steps == 0 || self.growth_interval == 0 {
            return Err(OptimizerError::Config(
                "max steps and growth interval must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn lambda_at(&self, step: usize) -> f64 {
        let k = (step.saturating_sub(1) / self.growth_interval) as i32;
        self.penalty_weight * self.penalty_growth.powi(k)
    }
}

/// Objective value and constraint penalty at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub objective: f64,
    pub penalty: f64,
}

/// Objective value, penalty and their gradients at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub value: ObjectiveValue,
    pub objective_grad: Vec<f64>,
    pub penalty_grad: Vec<f64>,
}

/// A box-constrained objective with a separate penalty term.
///
/// Implementations receive parameters in their own (physical) units; the
/// optimizer handles normalization.
pub trait Objective {
    fn bounds(&self) -> Vec<(f64, f64)>;

    fn names(&self) -> Vec<String> {
        (0..self.bounds().len()).map(|i| format!("x{i}")).collect()
    }

    fn evaluate(&self, x: &[f64]) -> Result<ObjectiveValue, OptimizerError>;

    fn gradient(&self, x: &[f64]) -> Result<ObjectiveGradient, OptimizerError>;
}

/// One accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub objective: f64,
    pub penalty: f64,
    pub lambda: f64,
    /// `objective + lambda * penalty` after the step.
    pub penalized: f64,
    /// Decrease of the penalized objective achieved by the step (same lambda).
    pub decrease: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub x: Vec<f64>,
    pub initial: Vec<f64>,
    pub objective: f64,
    pub penalty: f64,
    pub initial_objective: f64,
    pub initial_penalty: f64,
    pub steps: usize,
    pub converged: bool,
    /// The run ended worse than its start and the start was returned.
    pub reverted: bool,
    pub names: Vec<String>,
    pub trace: Vec<TraceRow>,
}

impl OptimizationOutcome {
    /// CSV with columns `step, objective, penalty, lambda, penalized,
    /// decrease` followed by one column per parameter.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,objective,penalty,lambda,penalized,decrease");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        let mut row = |step: usize, o: f64, p: f64, l: f64, j: f64, d: f64, v: &[f64]| {
            let _ = write!(out, "{step},{o},{p},{l},{j},{d}");
            for x in v {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        };
        let l0 = self.trace.first().map_or(0.0, |r| r.lambda);
        row(
            0,
            self.initial_objective,
            self.initial_penalty,
            l0,
            self.initial_objective + l0 * self.initial_penalty,
            0.0,
            &self.initial,
        );
        for r in &self.trace {
            row(r.step, r.objective, r.penalty, r.lambda, r.penalized, r.decrease, &r.values);
        }
        out
    }
}

fn to_unit(x: &[f64], b: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(b)
        .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

fn from_unit(y: &[f64], b: &[(f64, f64)]) -> Vec<f64> {
    y.iter().zip(b).map(|(t, (lo, hi))| lo + t * (hi - lo)).collect()
}

/// Projected gradient descent with a max-norm-normalized step and
/// backtracking; a step is accepted only if it lowers the penalized
/// objective at the current penalty weight.
pub fn minimize(
    objective: &dyn Objective,
    x0: &[f64],
    config: &OptimizationConfig,
) -> Result<OptimizationOutcome, OptimizerError> {
    config.validate()?;
    let bounds = objective.bounds();
    let names = objective.names();
    if bounds.len() != x0.len() {
        return Err(OptimizerError::Config(format!(
            "{} bounds for {} parameters",
            bounds.len(),
            x0.len()
        )));
    }
    if let Some((i, _)) = bounds
        .iter()
        .enumerate()
        .find(|(_, (lo, hi))| !(lo.is_finite() && hi.is_finite() && hi > lo))
    {
        return Err(OptimizerError::Config(format!("empty bounds for {}", names[i])));
    }
    let initial: Vec<f64> = x0
        .iter()
        .zip(&bounds)
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect();
    let first = objective.gradient(&initial)?;
    let start = first.value.clone();
    let mut y = to_unit(&initial, &bounds);
    let mut at = first;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut lambda = config.lambda_at(1);

    for step in 1..=config.max_steps {
        lambda = config.lambda_at(step);
        let j = at.value.objective + lambda * at.value.penalty;
        let mut g: Vec<f64> = at
            .objective_grad
            .iter()
            .zip(&at.penalty_grad)
            .zip(&bounds)
            .map(|((go, gp), (lo, hi))| (go + lambda * gp) * (hi - lo))
            .collect();
        for (i, gi) in g.iter_mut().enumerate() {
            if !gi.is_finite() {
                return Err(OptimizerError::NonFiniteGradient(names[i].clone()));
            }
            if (y[i] <= 0.0 && *gi > 0.0) || (y[i] >= 1.0 && *gi < 0.0) {
                *gi = 0.0;
            }
        }
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            converged = true;
            break;
        }
        let mut lr = config.learning_rate;
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let cand: Vec<f64> = y
                .iter()
                .zip(&g)
                .map(|(yi, gi)| (yi - lr * gi / gmax).clamp(0.0, 1.0))
                .collect();
            let v = objective.evaluate(&from_unit(&cand, &bounds))?;
            let jc = v.objective + lambda * v.penalty;
            if jc < j {
                accepted = Some((cand, jc));
                break;
            }
            lr *= 0.5;
        }
        let Some((cand, jc)) = accepted else {
            converged = true;
            break;
        };
        y = cand;
        let x = from_unit(&y, &bounds);
        at = objective.gradient(&x)?;
        trace.push(TraceRow {
            step,
            objective: at.value.objective,
            penalty: at.value.penalty,
            lambda,
            penalized: at.value.objective + lambda * at.value.penalty,
            decrease: j - jc,
            values: x,
        });
        if j - jc < config.convergence_tol {
            converged = true;
            break;
        }
    }

    let mut x = from_unit(&y, &bounds);
    let mut value = at.value;
    let j_end = value.objective + lambda * value.penalty;
    let j_start = start.objective + lambda * start.penalty;
    let reverted = j_end > j_start;
    if reverted {
        x = initial.clone();
        value = start.clone();
    }
    Ok(OptimizationOutcome {
        steps: trace.len(),
        x,
        initial,
        objective: value.objective,
        penalty: value.penalty,
        initial_objective: start.objective,
        initial_penalty: start.penalty,
        converged,
        reverted,
        names,
        trace,
    })
}

/// Mean PUE of a scene as a function of its cooling-asset parameters.
pub struct PhysicsObjective<'a> {
    scene: Scene,
    handles: Vec<ParameterHandle>,
    weather: &'a [ExternalConditions],
    conditions: &'a OperationalConditions,
    physics: PhysicsConfig,
}

impl<'a> PhysicsObjective<'a> {
    pub fn new(
        scene: &Scene,
        handles: Vec<ParameterHandle>,
        weather: &'a [ExternalConditions],
        conditions: &'a OperationalConditions,
        physics: PhysicsConfig,
    ) -> Self {
        // geometry plays no part in the energy model
        let scene = Scene {
            placed: Vec::new(),
            rooms: BTreeMap::new(),
            ..scene.clone()
        };
        Self {
            scene,
            handles,
            weather,
            conditions,
            physics,
        }
    }

    pub fn handles(&self) -> &[ParameterHandle] {
        &self.handles
    }

    /// Current values of the handled fields.
    pub fn current(&self) -> Vec<f64> {
        self.handles
            .iter()
            .map(|h| self.scene.assets[&h.slot].parameter_vector()[h.index])
            .collect()
    }

    fn with_values(&self, x: &[f64]) -> Result<Scene, OptimizerError> {
        Ok(apply_parameters(&self.scene, &self.handles, x)?)
    }
}

/// Copy of `scene` with the handled fields set to `values`.
pub fn apply_parameters(
    scene: &Scene,
    handles: &[ParameterHandle],
    values: &[f64],
) -> Result<Scene, AssetError> {
    let mut vectors: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (h, v) in handles.iter().zip(values) {
        let vec = vectors
            .entry(h.slot.as_str())
            .or_insert_with(|| scene.assets[&h.slot].parameter_vector());
        vec[h.index] = *v;
    }
    let mut out = scene.clone();
    for (slot, vec) in vectors {
        let spec = out.assets[slot].with_parameter_vector(&vec)?;
        out.assets.insert(slot.to_string(), spec);
    }
    Ok(out)
}

impl Objective for PhysicsObjective<'_> {
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.handles.iter().map(|h| (h.lower, h.upper)).collect()
    }

    fn names(&self) -> Vec<String> {
        self.handles.iter().map(ParameterHandle::name).collect()
    }

    fn evaluate(&self, x: &[f64]) -> Result<ObjectiveValue, OptimizerError> {
        let scene = self.with_values(x)?;
        match simulate(
            &scene,
            self.weather,
            self.conditions,
            &SimMode::EvaluateSmooth,
            &self.physics,
        ) {
            Ok(r) => Ok(ObjectiveValue {
                objective: r.pue,
                penalty: r.penalty,
            }),
            // a line-search probe that leaves the physical regime is simply
            // rejected
            Err(PhysicsError::NonPhysical { .. }) => Ok(ObjectiveValue {
                objective: f64::INFINITY,
                penalty: f64::INFINITY,
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn gradient(&self, x: &[f64]) -> Result<ObjectiveGradient, OptimizerError> {
        let scene = self.with_values(x)?;
        let r = simulate(
            &scene,
            self.weather,
            self.conditions,
            &SimMode::Differentiate(self.handles.clone()),
            &self.physics,
        )
        .map_err(|e| match e {
            PhysicsError::NonFiniteGradient(h) => OptimizerError::NonFiniteGradient(h),
            other => other.into(),
        })?;
        Ok(ObjectiveGradient {
            value: ObjectiveValue {
                objective: r.pue,
                penalty: r.penalty,
            },
            objective_grad: r.pue_gradient.unwrap_or_default(),
            penalty_grad: r.penalty_gradient.unwrap_or_default(),
        })
    }
}

/// Optimized parameter vector of one asset slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealAsset {
    pub category: AssetCategory,
    pub values: Vec<f64>,
}

/// Ideal parameters for every optimizable slot of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealAssetSet {
    pub assets: BTreeMap<String, IdealAsset>,
    /// Mean PUE (smoothed model) at the ideal parameters.
    pub objective: f64,
    pub penalty: f64,
    pub outcome: OptimizationOutcome,
}

impl IdealAssetSet {
    /// The set made of the scene's own parameters.
    pub fn identity(scene: &Scene) -> Self {
        let assets = scene
            .assets
            .iter()
            .filter(|(slot, a)| a.category().is_optimizable() && **slot != scene.servers.model)
            .map(|(slot, a)| {
                (
                    slot.clone(),
                    IdealAsset {
                        category: a.category(),
                        values: a.parameter_vector(),
                    },
                )
            })
            .collect();
        IdealAssetSet {
            assets,
            objective: f64::NAN,
            penalty: f64::NAN,
            outcome: OptimizationOutcome {
                x: vec![],
                initial: vec![],
                objective: f64::NAN,
                penalty: f64::NAN,
                initial_objective: f64::NAN,
                initial_penalty: f64::NAN,
                steps: 0,
                converged: true,
                reverted: false,
                names: vec![],
                trace: vec![],
            },
        }
    }
}

/// Gradient search for the ideal cooling-asset parameters of `scene`.
pub fn optimize_parameters(
    scene: &Scene,
    library: &AssetLibrary,
    weather: &[ExternalConditions],
    conditions: &OperationalConditions,
    config: &OptimizationConfig,
    physics: &PhysicsConfig,
) -> Result<IdealAssetSet, OptimizerError> {
    let handles = optimizable_handles(scene, library);
    let objective = PhysicsObjective::new(scene, handles, weather, conditions, *physics);
    let x0 = objective.current();
    let outcome = minimize(&objective, &x0, config)?;
    let mut set = IdealAssetSet::identity(scene);
    for (h, v) in objective.handles().iter().zip(&outcome.x) {
        if let Some(a) = set.assets.get_mut(&h.slot) {
            a.values[h.index] = *v;
        }
    }
    set.objective = outcome.objective;
    set.penalty = outcome.penalty;
    set.outcome = outcome;
    Ok(set)
}

/// Distance normalization for nearest-asset selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Normalization {
    /// Per-field z-score over the library category.
    #[default]
    ZScore,
    /// Raw parameter units.
    Raw,
}

/// Per-field (mean, std) of a set of vectors; a zero std becomes 1.
pub fn zscore_stats(vectors: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let Some(first) = vectors.first() else {
        return Vec::new();
    };
    let n = vectors.len() as f64;
    (0..first.len())
        .map(|k| {
            let mean = vectors.iter().map(|v| v[k]).sum::<f64>() / n;
            let var = vectors.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            (mean, if std > 0.0 { std } else { 1.0 })
        })
        .collect()
}

/// Index of the candidate closest to `target` in Euclidean distance after
/// dividing each field by `scales`; the first of equally distant candidates
/// wins.
pub fn nearest_index(target: &[f64], candidates: &[Vec<f64>], scales: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let d: f64 = c
            .iter()
            .zip(target)
            .zip(scales)
            .map(|((a, b), s)| ((a - b) / s).powi(2))
            .sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Library asset of `category` nearest to the ideal vector; ties go to the
/// lowest id.
pub fn select_nearest<'l>(
    ideal: &[f64],
    category: AssetCategory,
    library: &'l AssetLibrary,
    normalization: Normalization,
) -> Result<&'l AssetSpec, OptimizerError> {
    let assets: Vec<&AssetSpec> = library.category(category).collect();
    if assets.is_empty() {
        return Err(OptimizerError::EmptyCategory(category));
    }
    let expected = category.parameter_fields().len();
    if ideal.len() != expected {
        return Err(OptimizerError::Dimension {
            category,
            expected,
            got: ideal.len(),
        });
    }
    let vectors: Vec<Vec<f64>> = assets.iter().map(|a| a.parameter_vector()).collect();
    let scales: Vec<f64> = match normalization {
        Normalization::Raw => vec![1.0; expected],
        Normalization::ZScore => zscore_stats(&vectors).into_iter().map(|(_, s)| s).collect(),
    };
    // library iteration is in ascending id order, so first-wins is
    // lowest-id-wins
    let i = nearest_index(ideal, &vectors, &scales).expect("category is non-empty");
    Ok(assets[i])
}

/// Replace every optimized slot's asset by its nearest library match and
/// re-place the geometry. Topology and layout are carried over unchanged.
pub fn refine_scene(
    scene: &Scene,
    ideal: &IdealAssetSet,
    library: &AssetLibrary,
    normalization: Normalization,
) -> Result<Scene, OptimizerError> {
    let mut assets = scene.assets.clone();
    for (slot, a) in &ideal.assets {
        let nearest = select_nearest(&a.values, a.category, library, normalization)?;
        assets.insert(slot.clone(), nearest.clone());
    }
    Ok(synthesize_with_assets(
        &scene.topology,
        &scene.layout,
        assets,
        &scene.servers,
    )?)
}

/// Lightweight helper for tests and examples: evaluate any [`Scalar`]
/// function as an [`Objective`] with no penalty.
pub struct FnObjective<F> {
    pub bounds: Vec<(f64, f64)>,
    pub f: F,
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[crate::dual::Dual]) -> crate::dual::Dual,
{
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }

    fn evaluate(&self, x: &[f64]) -> Result<ObjectiveValue, OptimizerError> {
        let d: Vec<_> = x.iter().map(|v| crate::dual::Dual::constant(*v)).collect();
        Ok(ObjectiveValue {
            objective: (self.f)(&d).value,
            penalty: 0.0,
        })
    }

    fn gradient(&self, x: &[f64]) -> Result<ObjectiveGradient, OptimizerError> {
        let n = x.len();
        let d: Vec<_> = x
            .iter()
            .enumerate()
            .map(|(i, v)| crate::dual::Dual::variable(*v, i, n))
            .collect();
        let out = (self.f)(&d);
        Ok(ObjectiveGradient {
            value: ObjectiveValue {
                objective: out.value,
                penalty: 0.0,
            },
            objective_grad: (0..n).map(|i| out.partial(i)).collect(),
            penalty_grad: vec![0.0; n],
        })
    }
}
