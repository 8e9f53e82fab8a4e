//! Component-level data-center energy simulator.
//!
//! Every step (one hour) runs the air side of each room, then the chilled
//! water plant, then the condenser loop:
//!
//! - server power `P = idle + u (peak - idle)`, heat `h = heatFactor * P`;
//! - room air flow `m = sum(rho * phi_eff * designAirFlowRate)` with
//!   `phi_eff = min(phi, maximumFlowRate / designAirFlowRate)`, return air
//!   `T_ret = T_sup + Q_IT / (m c_p)`, removed heat `min(Q_IT, sum(capacity))`;
//! - ACU fan power `(phi * V) * (dp * phi^2) / eta_fan`;
//! - chillers share the evaporator load in proportion to rated capacity and
//!   run at `COP = carnotFraction * T_evap / (T_cond - T_evap)` where the
//!   condenser temperature follows the wet bulb plus tower approach plus the
//!   condenser range; pumps draw `ratedPumpFraction` of the served load;
//! - towers reject `Q_evap + P_chillers` in proportion to rated rejection with
//!   cubic fan power capped at the rated fan power.
//!
//! The model is written once against [`Scalar`]. With `f64` and hard minima it
//! gives evaluation verdicts; with [`Dual`] and smoothed minima it yields the
//! gradient of mean PUE (and of the constraint penalty) with respect to any
//! set of [`ParameterHandle`]s.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{AcuSpec, AssetCategory, AssetLibrary, AssetSpec, ChillerSpec, ServerSpec, TowerSpec};
use crate::dual::{hard_min, positive_part_squared, soft_min, Dual, Scalar};
use crate::scene::Scene;
use crate::weather::ExternalConditions;

const KELVIN: f64 = 273.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid operating conditions: {0}")]
    InvalidConditions(String),
    #[error("series length mismatch: {weather} weather steps, {conditions} operating steps")]
    LengthMismatch { weather: usize, conditions: usize },
    #[error("room {0} has no ACU")]
    NoAcu(String),
    #[error(
        "nonphysical regime at step {step}: chiller {chiller} condenser {t_cond_k:.2} K <= evaporator {t_evap_k:.2} K"
    )]
    NonPhysical {
        step: usize,
        chiller: String,
        t_cond_k: f64,
        t_evap_k: f64,
    },
    #[error("IT power is zero at step {0}")]
    ZeroItPower(usize),
    #[error("rooms without airflow, gradient undefined")]
    NoAirflow,
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
}

/// Physical constants and model switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    /// kg/m³
    pub air_density: f64,
    /// J/(kg K)
    pub air_cp: f64,
    pub fan_efficiency: f64,
    /// K
    pub condenser_range: f64,
    /// °C
    pub zone_max_c: f64,
    /// Sharpness of the smoothed minima.
    pub beta: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            air_density: 1.2,
            air_cp: 1005.0,
            fan_efficiency: 0.65,
            condenser_range: 5.0,
            zone_max_c: 30.0,
            beta: 50.0,
        }
    }
}

/// Minimum operator used by the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    Hard,
    Soft(f64),
}

impl Smoothing {
    fn min<S: Scalar>(self, a: S, b: S) -> S {
        match self {
            Smoothing::Hard => hard_min(a, b),
            Smoothing::Soft(beta) => soft_min(a, b, beta),
        }
    }
}

/// Per-step operating inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalConditions {
    pub utilization: Vec<f64>,
    pub supply_air_c: Vec<f64>,
    pub flow_ratio: Vec<f64>,
}

impl OperationalConditions {
    pub fn constant(steps: usize, utilization: f64, supply_air_c: f64, flow_ratio: f64) -> Self {
        Self {
            utilization: vec![utilization; steps],
            supply_air_c: vec![supply_air_c; steps],
            flow_ratio: vec![flow_ratio; steps],
        }
    }

    /// Office-hours load shape: utilization between 0.35 and 0.85 peaking in
    /// the afternoon, 18 °C supply air, fans at 85 % of design flow.
    pub fn diurnal(steps: usize) -> Self {
        let utilization = (0..steps)
            .map(|h| {
                let phase = 2.0 * std::f64::consts::PI * ((h % 24) as f64 - 9.0) / 24.0;
                0.6 + 0.25 * phase.sin()
            })
            .collect();
        Self {
            utilization,
            supply_air_c: vec![18.0; steps],
            flow_ratio: vec![0.85; steps],
        }
    }

    /// Case-study profile: hourly utilization uniform in [0.3, 0.9], supply
    /// air setpoint uniform in [12, 22] °C, fans at 85 % of design flow.
    pub fn randomized(steps: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut utilization = Vec::with_capacity(steps);
        let mut supply_air_c = Vec::with_capacity(steps);
        for _ in 0..steps {
            utilization.push(rng.random_range(0.3..=0.9));
            supply_air_c.push(rng.random_range(12.0..=22.0));
        }
        Self {
            utilization,
            supply_air_c,
            flow_ratio: vec![0.85; steps],
        }
    }

    pub fn len(&self) -> usize {
        self.utilization.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utilization.is_empty()
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let n = self.len();
        if self.supply_air_c.len() != n || self.flow_ratio.len() != n {
            return Err(PhysicsError::InvalidConditions(
                "utilization, supply air and flow ratio series differ in length".into(),
            ));
        }
        if n == 0 {
            return Err(PhysicsError::InvalidConditions("empty series".into()));
        }
        for (i, &u) in self.utilization.iter().enumerate() {
            if !(0.0..=1.0).contains(&u) {
                return Err(PhysicsError::InvalidConditions(format!(
                    "utilization {u} at step {i} outside [0, 1]"
                )));
            }
        }
        for (i, &p) in self.flow_ratio.iter().enumerate() {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(PhysicsError::InvalidConditions(format!(
                    "flow ratio {p} at step {i} must be >= 0"
                )));
            }
        }
        if let Some((i, t)) = self
            .supply_air_c
            .iter()
            .enumerate()
            .find(|(_, t)| !t.is_finite())
        {
            return Err(PhysicsError::InvalidConditions(format!(
                "supply air {t} at step {i} is not finite"
            )));
        }
        Ok(())
    }
}

/// One differentiable field of one asset slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterHandle {
    pub slot: String,
    pub category: AssetCategory,
    pub field: String,
    /// Position of the field in the category's parameter vector.
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

impl ParameterHandle {
    pub fn name(&self) -> String {
        format!("{}.{}", self.slot, self.field)
    }
}

/// Parameter-vector positions that enter the energy model: ACU capacity,
/// pressure rise and design airflow; every chiller and tower field.
pub fn active_fields(category: AssetCategory) -> &'static [usize] {
    match category {
        AssetCategory::Acu => &[0, 1, 2],
        AssetCategory::Chiller => &[0, 1, 2, 3],
        AssetCategory::CoolingTower => &[0, 1, 2],
        AssetCategory::Rack | AssetCategory::Server => &[],
    }
}

/// Handles for the active fields of every ACU, chiller and tower slot in the
/// scene, bounded by the library's per-category range.
///
/// A degenerate range (a category with one asset, or a constant field)
/// becomes ±50 % around the current value.
pub fn optimizable_handles(scene: &Scene, library: &AssetLibrary) -> Vec<ParameterHandle> {
    let mut out = Vec::new();
    for (slot, spec) in &scene.assets {
        let category = spec.category();
        if !category.is_optimizable() || *slot == scene.servers.model {
            continue;
        }
        let values = spec.parameter_vector();
        let ranges = library.parameter_ranges(category).unwrap_or_default();
        let fields = category.parameter_fields();
        for &index in active_fields(category) {
            let field = fields[index];
            let v = values[index];
            let (mut lo, mut hi) = ranges.get(index).copied().unwrap_or((v, v));
            lo = lo.min(v);
            hi = hi.max(v);
            if hi - lo <= 1e-12 * v.abs().max(1.0) {
                let half = 0.5 * v.abs().max(1e-6);
                lo = v - half;
                hi = v + half;
            }
            out.push(ParameterHandle {
                slot: slot.clone(),
                category,
                field: field.to_string(),
                index,
                lower: lo,
                upper: hi,
            });
        }
    }
    out
}

/// Which flavour of the model to run.
#[derive(Debug, Clone, PartialEq)]
pub enum SimMode {
    /// Hard minima; constraint verdicts.
    Evaluate,
    /// Smoothed minima in plain `f64`, the function the gradients describe.
    EvaluateSmooth,
    /// Smoothed minima with dual numbers over the given handles.
    Differentiate(Vec<ParameterHandle>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    Overheating,
    CoolingShortfall,
    ChillerOverload,
    TowerOverload,
    NoAirflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub step: usize,
    pub room: Option<String>,
    pub kind: FailureKind,
    /// Exceedance: K above the zone limit, or kW of unserved load.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomStep {
    pub t_return_c: f64,
    pub it_kw: f64,
    pub heat_kw: f64,
    pub removed_kw: f64,
    pub fans_kw: f64,
}

/// Facility-level quantities of one step, kW unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPowers {
    pub it_kw: f64,
    pub fans_kw: f64,
    pub chillers_kw: f64,
    pub towers_kw: f64,
    pub pumps_kw: f64,
    /// Σ heat removed by the rooms' ACUs (evaporator load).
    pub removed_kw: f64,
    /// Heat routed to the cooling towers.
    pub rejected_kw: f64,
    pub pue: f64,
}

impl StepPowers {
    pub fn cooling_kw(&self) -> f64 {
        self.fans_kw + self.chillers_kw + self.towers_kw + self.pumps_kw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub rooms: Vec<String>,
    /// `[step][room]`, same room order as `rooms`.
    pub room_steps: Vec<Vec<RoomStep>>,
    pub steps: Vec<StepPowers>,
    pub failures: Vec<FailureEvent>,
    /// Time-mean PUE; infinite when a room has no airflow.
    pub pue: f64,
    /// Constraint penalty (see [`simulate`]).
    pub penalty: f64,
    pub pue_gradient: Option<Vec<f64>>,
    pub penalty_gradient: Option<Vec<f64>>,
}

impl SimulationResult {
    pub fn overheating_events(&self) -> usize {
        self.failures
            .iter()
            .filter(|f| f.kind == FailureKind::Overheating)
            .count()
    }

    pub fn max_return_c(&self) -> f64 {
        self.room_steps
            .iter()
            .flatten()
            .map(|r| r.t_return_c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_cooling_kw(&self) -> f64 {
        self.steps.iter().map(StepPowers::cooling_kw).sum::<f64>() / self.steps.len() as f64
    }

    /// One row per (step, room). Plant power is attributed to rooms in
    /// proportion to the heat each room hands to the chilled water loop, so
    /// every power column sums over rooms to the facility total.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from(
            "step,room,T_return_c,p_it_kw,p_fans_kw,p_chillers_kw,p_towers_kw,p_pumps_kw,pue_step\n",
        );
        for (t, (rooms, s)) in self.room_steps.iter().zip(&self.steps).enumerate() {
            let n = rooms.len() as f64;
            for (name, r) in self.rooms.iter().zip(rooms) {
                let share = if s.removed_kw > 0.0 {
                    r.removed_kw / s.removed_kw
                } else {
                    1.0 / n
                };
                let _ = writeln!(
                    out,
                    "{t},{name},{},{},{},{},{},{},{}",
                    r.t_return_c,
                    r.it_kw,
                    r.fans_kw,
                    s.chillers_kw * share,
                    s.towers_kw * share,
                    s.pumps_kw * share,
                    s.pue
                );
            }
        }
        out
    }

    pub fn write_trajectory_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.trajectory_csv())
    }
}

/// Mean over steps of total power / IT power.
pub fn pue(result: &SimulationResult) -> Result<f64, PhysicsError> {
    if result.steps.is_empty() {
        return Err(PhysicsError::ZeroItPower(0));
    }
    let mut sum = 0.0;
    for (i, s) in result.steps.iter().enumerate() {
        if !(s.it_kw > 0.0) {
            return Err(PhysicsError::ZeroItPower(i));
        }
        sum += (s.it_kw + s.cooling_kw()) / s.it_kw;
    }
    Ok(sum / result.steps.len() as f64)
}

pub fn server_power(spec: &ServerSpec, u: f64) -> f64 {
    spec.idle_power + u * (spec.peak_power - spec.idle_power)
}

pub fn server_heat(spec: &ServerSpec, u: f64) -> f64 {
    spec.heat_factor * server_power(spec, u)
}

/// Fan power of one ACU at flow ratio `phi`, kW (no flow cap applied).
pub fn acu_fan_power(spec: &AcuSpec, phi: f64, config: &PhysicsConfig) -> f64 {
    fan_power(spec.design_air_flow_rate, spec.pressure_rise, phi, config)
}

fn fan_power<S: Scalar>(flow: S, dp: S, phi: S, config: &PhysicsConfig) -> S {
    (phi.clone() * flow) * (dp * phi.clone() * phi) / (config.fan_efficiency * 1000.0)
}

/// Air-side state of one room for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomState {
    pub t_return_c: f64,
    pub removed_kw: f64,
    pub fans_kw: f64,
}

struct AcuParams<S> {
    count: f64,
    capacity: S,
    pressure_rise: S,
    flow: S,
    max_flow: f64,
}

struct RoomOut<S> {
    t_return: S,
    removed: S,
    fans: S,
    capacity: S,
}

fn room_step<S: Scalar>(
    acus: &[AcuParams<S>],
    heat_kw: f64,
    t_sup: f64,
    phi: f64,
    sm: Smoothing,
    config: &PhysicsConfig,
) -> RoomOut<S> {
    let mut mdot = S::constant(0.0);
    let mut fans = S::constant(0.0);
    let mut capacity = S::constant(0.0);
    for a in acus {
        let ratio = S::constant(a.max_flow) / a.flow.clone();
        let phi_eff = sm.min(S::constant(phi), ratio);
        mdot = mdot + phi_eff.clone() * a.flow.clone() * (a.count * config.air_density);
        fans = fans
            + fan_power(a.flow.clone(), a.pressure_rise.clone(), phi_eff, config) * a.count;
        capacity = capacity + a.capacity.clone() * a.count;
    }
    let t_return = (S::constant(heat_kw * 1000.0) / (mdot * config.air_cp)) + t_sup;
    let removed = if heat_kw > 0.0 {
        sm.min(S::constant(heat_kw), capacity.clone())
    } else {
        S::constant(0.0)
    };
    RoomOut {
        t_return,
        removed,
        fans,
        capacity,
    }
}

/// Air-side balance of one room; `acus` pairs each ACU model with its count.
pub fn room_thermal_step(
    acus: &[(&AcuSpec, u32)],
    heat_kw: f64,
    t_sup: f64,
    phi: f64,
    smoothing: Smoothing,
    config: &PhysicsConfig,
) -> Result<RoomState, PhysicsError> {
    if acus.iter().all(|(_, n)| *n == 0) {
        return Err(PhysicsError::NoAcu("room".into()));
    }
    if !(phi > 0.0) {
        return Err(PhysicsError::InvalidConditions(format!(
            "flow ratio {phi} must be > 0"
        )));
    }
    let params: Vec<AcuParams<f64>> = acus
        .iter()
        .map(|(a, n)| AcuParams {
            count: f64::from(*n),
            capacity: a.cooling_capacity,
            pressure_rise: a.pressure_rise,
            flow: a.design_air_flow_rate,
            max_flow: a.maximum_flow_rate,
        })
        .collect();
    let out = room_step(&params, heat_kw, t_sup, phi, smoothing, config);
    Ok(RoomState {
        t_return_c: out.t_return,
        removed_kw: out.removed,
        fans_kw: out.fans,
    })
}

fn cop<S: Scalar>(carnot: S, setpoint: S, t_cond_k: S) -> (S, S) {
    let t_evap = setpoint + KELVIN;
    let lift = t_cond_k - t_evap.clone();
    (carnot * t_evap.clone() / lift, t_evap)
}

/// Condenser water temperature in K for a wet bulb and tower approach.
pub fn condenser_temperature_k(t_wb_c: f64, approach: f64, config: &PhysicsConfig) -> f64 {
    t_wb_c + approach + config.condenser_range + KELVIN
}

/// Chiller electric power and COP for an evaporator load served by a chiller
/// whose condenser is cooled by `tower`.
pub fn chiller_step(
    spec: &ChillerSpec,
    q_evap_kw: f64,
    t_wb_c: f64,
    tower: &TowerSpec,
    config: &PhysicsConfig,
) -> Result<(f64, f64), PhysicsError> {
    let t_cond = condenser_temperature_k(t_wb_c, tower.approach, config);
    let (c, t_evap) = cop(spec.carnot_fraction, spec.chw_supply_setpoint, t_cond);
    if t_cond <= t_evap {
        return Err(PhysicsError::NonPhysical {
            step: 0,
            chiller: spec.id.clone(),
            t_cond_k: t_cond,
            t_evap_k: t_evap,
        });
    }
    Ok((q_evap_kw / c, c))
}

/// Tower fan power for a rejected load, cubic in the load ratio and capped at
/// the rated fan power.
pub fn tower_fan_power(spec: &TowerSpec, q_reject_kw: f64, smoothing: Smoothing) -> f64 {
    let r = q_reject_kw / spec.rated_heat_rejection;
    if r <= 0.0 {
        return 0.0;
    }
    smoothing.min(spec.rated_fan_power * r * r * r, spec.rated_fan_power)
}

struct RoomPlan {
    name: String,
    servers: f64,
    acus: Vec<(String, f64)>,
}

struct Plan {
    rooms: Vec<RoomPlan>,
    chillers: Vec<(String, f64)>,
    towers: Vec<(String, f64)>,
    server: ServerSpec,
}

fn plan(scene: &Scene) -> Result<Plan, PhysicsError> {
    if scene.topology.rooms.is_empty() {
        return Err(PhysicsError::InvalidScene("scene has no rooms".into()));
    }
    let server = scene
        .assets
        .get(&scene.servers.model)
        .and_then(AssetSpec::as_server)
        .cloned()
        .ok_or_else(|| {
            PhysicsError::InvalidScene(format!("server model {} is not bound", scene.servers.model))
        })?;
    let check = |slot: &String, category: AssetCategory| match scene.assets.get(slot) {
        Some(a) if a.category() == category => Ok(()),
        _ => Err(PhysicsError::InvalidScene(format!(
            "{category} slot {slot} is not bound"
        ))),
    };
    let mut rooms = Vec::new();
    for (name, room) in &scene.topology.rooms {
        for slot in room.acus.keys() {
            check(slot, AssetCategory::Acu)?;
        }
        rooms.push(RoomPlan {
            name: name.clone(),
            servers: scene.room_servers(name) as f64,
            acus: room
                .acus
                .iter()
                .filter(|(_, &n)| n > 0)
                .map(|(s, &n)| (s.clone(), f64::from(n)))
                .collect(),
        });
    }
    let mut chillers = Vec::new();
    for (slot, &n) in scene.topology.chillers() {
        check(slot, AssetCategory::Chiller)?;
        if n > 0 {
            chillers.push((slot.clone(), f64::from(n)));
        }
    }
    let mut towers = Vec::new();
    for (slot, &n) in scene.topology.towers() {
        check(slot, AssetCategory::CoolingTower)?;
        if n > 0 {
            towers.push((slot.clone(), f64::from(n)));
        }
    }
    Ok(Plan {
        rooms,
        chillers,
        towers,
        server,
    })
}

/// Slot parameter vectors with the handled fields promoted to variables.
struct Params<S> {
    values: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Params<S> {
    fn new(scene: &Scene, handles: &[ParameterHandle]) -> Result<Self, PhysicsError> {
        let mut values: BTreeMap<String, Vec<S>> = scene
            .assets
            .iter()
            .map(|(slot, spec)| {
                (
                    slot.clone(),
                    spec.parameter_vector().into_iter().map(S::constant).collect(),
                )
            })
            .collect();
        let n = handles.len();
        for (i, h) in handles.iter().enumerate() {
            let v = values.get_mut(&h.slot).ok_or_else(|| {
                PhysicsError::InvalidScene(format!("handle {} names an unbound slot", h.name()))
            })?;
            let cell = v.get_mut(h.index).ok_or_else(|| {
                PhysicsError::InvalidScene(format!("handle {} has no such field", h.name()))
            })?;
            *cell = S::variable(cell.value(), i, n);
        }
        Ok(Self { values })
    }

    fn get(&self, slot: &str, index: usize) -> S {
        self.values[slot][index].clone()
    }
}

struct Trace<S> {
    room_steps: Vec<Vec<RoomStep>>,
    steps: Vec<StepPowers>,
    failures: Vec<FailureEvent>,
    pue: S,
    penalty: S,
    no_airflow: bool,
}

fn run<S: Scalar>(
    scene: &Scene,
    plan: &Plan,
    params: &Params<S>,
    weather: &[ExternalConditions],
    cond: &OperationalConditions,
    sm: Smoothing,
    config: &PhysicsConfig,
) -> Result<Trace<S>, PhysicsError> {
    let server = &plan.server;
    let acu_params = |room: &RoomPlan| -> Vec<AcuParams<S>> {
        room.acus
            .iter()
            .map(|(slot, n)| AcuParams {
                count: *n,
                capacity: params.get(slot, 0),
                pressure_rise: params.get(slot, 1),
                flow: params.get(slot, 2),
                max_flow: scene.assets[slot]
                    .as_acu()
                    .map_or(f64::INFINITY, |a| a.maximum_flow_rate),
            })
            .collect()
    };
    let room_acus: Vec<Vec<AcuParams<S>>> = plan.rooms.iter().map(acu_params).collect();

    let chiller_cap: Vec<S> = plan
        .chillers
        .iter()
        .map(|(s, n)| params.get(s, 0) * *n)
        .collect();
    let chiller_cap_total: S = chiller_cap.iter().cloned().sum();
    let tower_cap: Vec<S> = plan
        .towers
        .iter()
        .map(|(s, n)| params.get(s, 0) * *n)
        .collect();
    let tower_cap_total: S = tower_cap.iter().cloned().sum();
    let approach: S = if plan.towers.is_empty() {
        S::constant(0.0)
    } else {
        plan.towers
            .iter()
            .zip(&tower_cap)
            .map(|((s, _), cap)| cap.clone() * params.get(s, 2))
            .sum::<S>()
            / tower_cap_total.clone()
    };

    let steps_n = cond.len();
    let mut room_steps = Vec::with_capacity(steps_n);
    let mut steps = Vec::with_capacity(steps_n);
    let mut failures = Vec::new();
    let mut pue_sum = S::constant(0.0);
    let mut thermal = S::constant(0.0);
    let mut no_airflow = false;

    for t in 0..steps_n {
        let u = cond.utilization[t];
        let t_sup = cond.supply_air_c[t];
        let phi = cond.flow_ratio[t];
        let p_server = server_power(server, u);
        let mut it_total = 0.0;
        let mut fans_total = S::constant(0.0);
        let mut q_evap = S::constant(0.0);
        let mut rooms_out = Vec::with_capacity(plan.rooms.len());
        for (room, acus) in plan.rooms.iter().zip(&room_acus) {
            let it = room.servers * p_server;
            let heat = server.heat_factor * it;
            it_total += it;
            if acus.is_empty() || phi <= 0.0 {
                no_airflow = true;
                failures.push(FailureEvent {
                    step: t,
                    room: Some(room.name.clone()),
                    kind: FailureKind::NoAirflow,
                    magnitude: heat,
                });
                rooms_out.push(RoomStep {
                    t_return_c: f64::INFINITY,
                    it_kw: it,
                    heat_kw: heat,
                    removed_kw: 0.0,
                    fans_kw: 0.0,
                });
                continue;
            }
            let out = room_step(acus, heat, t_sup, phi, sm, config);
            let t_ret = out.t_return.value();
            if t_ret > config.zone_max_c {
                failures.push(FailureEvent {
                    step: t,
                    room: Some(room.name.clone()),
                    kind: FailureKind::Overheating,
                    magnitude: t_ret - config.zone_max_c,
                });
            }
            if heat > out.capacity.value() {
                failures.push(FailureEvent {
                    step: t,
                    room: Some(room.name.clone()),
                    kind: FailureKind::CoolingShortfall,
                    magnitude: heat - out.capacity.value(),
                });
            }
            thermal = thermal + positive_part_squared(out.t_return - config.zone_max_c);
            rooms_out.push(RoomStep {
                t_return_c: t_ret,
                it_kw: it,
                heat_kw: heat,
                removed_kw: out.removed.value(),
                fans_kw: out.fans.value(),
            });
            fans_total = fans_total + out.fans;
            q_evap = q_evap + out.removed;
        }

        // chilled water loop
        let t_cond = approach.clone() + (weather[t].wet_bulb_c + config.condenser_range + KELVIN);
        let mut chillers_total = S::constant(0.0);
        let mut pumps_total = S::constant(0.0);
        if plan.chillers.is_empty() {
            if q_evap.value() > 0.0 {
                failures.push(FailureEvent {
                    step: t,
                    room: None,
                    kind: FailureKind::ChillerOverload,
                    magnitude: q_evap.value(),
                });
            }
        } else {
            for ((slot, _), cap) in plan.chillers.iter().zip(&chiller_cap) {
                let share = q_evap.clone() * cap.clone() / chiller_cap_total.clone();
                if share.value() > cap.value() * (1.0 + 1e-12) {
                    failures.push(FailureEvent {
                        step: t,
                        room: None,
                        kind: FailureKind::ChillerOverload,
                        magnitude: share.value() - cap.value(),
                    });
                }
                let served = if share.value() > 0.0 {
                    sm.min(share, cap.clone())
                } else {
                    S::constant(0.0)
                };
                let (c, t_evap) = cop(params.get(slot, 1), params.get(slot, 2), t_cond.clone());
                if t_cond.value() <= t_evap.value() {
                    return Err(PhysicsError::NonPhysical {
                        step: t,
                        chiller: slot.clone(),
                        t_cond_k: t_cond.value(),
                        t_evap_k: t_evap.value(),
                    });
                }
                chillers_total = chillers_total + served.clone() / c;
                pumps_total = pumps_total + served * params.get(slot, 3);
            }
        }

        // condenser loop
        let q_reject = q_evap.clone() + chillers_total.clone();
        let mut towers_total = S::constant(0.0);
        if plan.towers.is_empty() {
            if q_reject.value() > 0.0 {
                failures.push(FailureEvent {
                    step: t,
                    room: None,
                    kind: FailureKind::TowerOverload,
                    magnitude: q_reject.value(),
                });
            }
        } else if q_reject.value() > 0.0 {
            for ((slot, n), cap) in plan.towers.iter().zip(&tower_cap) {
                let share = q_reject.clone() * cap.clone() / tower_cap_total.clone();
                let ratio = share / cap.clone();
                if ratio.value() > 1.0 + 1e-12 {
                    failures.push(FailureEvent {
                        step: t,
                        room: None,
                        kind: FailureKind::TowerOverload,
                        magnitude: (ratio.value() - 1.0) * cap.value(),
                    });
                }
                let rated_fan = params.get(slot, 1);
                let fan = sm.min(rated_fan.clone() * ratio.powi(3), rated_fan) * *n;
                towers_total = towers_total + fan;
            }
        }

        if !(it_total > 0.0) {
            return Err(PhysicsError::ZeroItPower(t));
        }
        let total = fans_total.clone()
            + chillers_total.clone()
            + towers_total.clone()
            + pumps_total.clone()
            + it_total;
        let pue_t = total / it_total;
        steps.push(StepPowers {
            it_kw: it_total,
            fans_kw: fans_total.value(),
            chillers_kw: chillers_total.value(),
            towers_kw: towers_total.value(),
            pumps_kw: pumps_total.value(),
            removed_kw: q_evap.value(),
            rejected_kw: q_reject.value(),
            pue: pue_t.value(),
        });
        room_steps.push(rooms_out);
        pue_sum = pue_sum + pue_t;
    }

    let n = steps_n as f64;
    let penalty = thermal / n + design_penalty(plan, params, weather, config, &chiller_cap_total, &tower_cap_total, &approach);
    Ok(Trace {
        room_steps,
        steps,
        failures,
        pue: pue_sum / n,
        penalty,
        no_airflow,
    })
}

/// Capacity terms at full utilization: room ACU capacity, chiller capacity
/// and tower capacity (at the hottest wet bulb of the series), each as a
/// squared relative shortfall.
fn design_penalty<S: Scalar>(
    plan: &Plan,
    params: &Params<S>,
    weather: &[ExternalConditions],
    config: &PhysicsConfig,
    chiller_cap_total: &S,
    tower_cap_total: &S,
    approach: &S,
) -> S {
    let peak_heat_per_server = plan.server.heat_factor * plan.server.peak_power;
    let mut total_heat = 0.0;
    let mut penalty = S::constant(0.0);
    for room in &plan.rooms {
        let heat = room.servers * peak_heat_per_server;
        total_heat += heat;
        if heat <= 0.0 {
            continue;
        }
        let cap: S = room
            .acus
            .iter()
            .map(|(slot, n)| params.get(slot, 0) * *n)
            .sum();
        penalty = penalty + positive_part_squared((S::constant(heat) - cap) / heat);
    }
    if total_heat <= 0.0 {
        return penalty;
    }
    penalty = penalty
        + positive_part_squared((S::constant(total_heat) - chiller_cap_total.clone()) / total_heat);

    let wb_max = weather
        .iter()
        .map(|w| w.wet_bulb_c)
        .fold(f64::NEG_INFINITY, f64::max);
    let t_cond = approach.clone() + (wb_max + config.condenser_range + KELVIN);
    let mut reject = S::constant(total_heat);
    if chiller_cap_total.value() > 0.0 {
        for (slot, n) in &plan.chillers {
            let cap = params.get(slot, 0) * *n;
            let (c, t_evap) = cop(params.get(slot, 1), params.get(slot, 2), t_cond.clone());
            if t_cond.value() <= t_evap.value() {
                continue;
            }
            let load = cap.clone() / chiller_cap_total.clone() * total_heat;
            reject = reject + load / c;
        }
    }
    let rv = reject.value();
    penalty + positive_part_squared((reject - tower_cap_total.clone()) / rv)
}

/// Simulate a scene over aligned weather and operating series.
///
/// The result's `penalty` is
/// `mean_t sum_rooms max(0, T_ret - T_max)^2` plus the squared relative
/// capacity shortfalls of ACUs (per room), chillers and towers at full
/// utilization. In [`SimMode::Differentiate`] the gradients of mean PUE and
/// of the penalty are returned in handle order.
pub fn simulate(
    scene: &Scene,
    weather: &[ExternalConditions],
    conditions: &OperationalConditions,
    mode: &SimMode,
    config: &PhysicsConfig,
) -> Result<SimulationResult, PhysicsError> {
    conditions.validate()?;
    if weather.len() != conditions.len() {
        return Err(PhysicsError::LengthMismatch {
            weather: weather.len(),
            conditions: conditions.len(),
        });
    }
    let plan = plan(scene)?;
    let rooms: Vec<String> = plan.rooms.iter().map(|r| r.name.clone()).collect();
    match mode {
        SimMode::Evaluate | SimMode::EvaluateSmooth => {
            let sm = if *mode == SimMode::Evaluate {
                Smoothing::Hard
            } else {
                Smoothing::Soft(config.beta)
            };
            let params = Params::<f64>::new(scene, &[])?;
            let tr = run(scene, &plan, &params, weather, conditions, sm, config)?;
            let mut result = SimulationResult {
                rooms,
                room_steps: tr.room_steps,
                steps: tr.steps,
                failures: tr.failures,
                pue: f64::INFINITY,
                penalty: tr.penalty,
                pue_gradient: None,
                penalty_gradient: None,
            };
            if !tr.no_airflow {
                result.pue = pue(&result)?;
            }
            Ok(result)
        }
        SimMode::Differentiate(handles) => {
            let params = Params::<Dual>::new(scene, handles)?;
            let tr = run(
                scene,
                &plan,
                &params,
                weather,
                conditions,
                Smoothing::Soft(config.beta),
                config,
            )?;
            if tr.no_airflow {
                return Err(PhysicsError::NoAirflow);
            }
            let grad = |d: &Dual| -> Result<Vec<f64>, PhysicsError> {
                let g: Vec<f64> = (0..handles.len()).map(|i| d.partial(i)).collect();
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(PhysicsError::NonFiniteGradient(handles[i].name()));
                }
                Ok(g)
            };
            let pue_gradient = grad(&tr.pue)?;
            let penalty_gradient = grad(&tr.penalty)?;
            Ok(SimulationResult {
                rooms,
                room_steps: tr.room_steps,
                steps: tr.steps,
                failures: tr.failures,
                pue: tr.pue.value,
                penalty: tr.penalty.value,
                pue_gradient: Some(pue_gradient),
                penalty_gradient: Some(penalty_gradient),
            })
        }
    }
}

/// Summary written next to a trajectory export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub steps: usize,
    pub mean_pue: f64,
    pub min_pue: f64,
    pub max_pue: f64,
    pub mean_it_kw: f64,
    pub mean_cooling_kw: f64,
    pub max_return_c: f64,
    pub failure_counts: BTreeMap<String, usize>,
}

pub fn summarize(result: &SimulationResult) -> SimulationSummary {
    let n = result.steps.len().max(1) as f64;
    let mut failure_counts = BTreeMap::new();
    for f in &result.failures {
        *failure_counts.entry(format!("{:?}", f.kind)).or_insert(0) += 1;
    }
    SimulationSummary {
        steps: result.steps.len(),
        mean_pue: result.pue,
        min_pue: result.steps.iter().map(|s| s.pue).fold(f64::INFINITY, f64::min),
        max_pue: result.steps.iter().map(|s| s.pue).fold(f64::NEG_INFINITY, f64::max),
        mean_it_kw: result.steps.iter().map(|s| s.it_kw).sum::<f64>() / n,
        mean_cooling_kw: result.mean_cooling_kw(),
        max_return_c: result.max_return_c(),
        failure_counts,
    }
}
