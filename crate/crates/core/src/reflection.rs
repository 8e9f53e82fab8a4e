//! Simulation feedback for the next design round.
//!
//! [`contextualize`] condenses a simulation into time series, failure events
//! and overall metrics; [`build_reflect_prompt`] renders them into the
//! reflection prompt; [`reflect`] produces the critique either through a chat
//! endpoint or through the frozen rule table below.
//!
//! | finding                                   | directive              |
//! |-------------------------------------------|------------------------|
//! | room cooling capacity below server heat   | `IncreaseAcuCount`     |
//! | rack power or slot limit exceeded         | `UpgradeRackModel`     |
//! | rack count not a multiple of 4 or < 16    | `FixRackCount`         |
//! | ACU count odd or < 2                      | `FixAcuCount`          |
//! | aisle narrower than the clearance         | `WidenAisle`           |
//! | negative gap, overlap, empty region       | `FixGaps`              |
//! | overheating events in a room              | `IncreaseAirflow`      |
//! | chiller overload                          | `AddChiller`           |
//! | tower overload                            | `AddTower`             |
//! | PUE above target, fans dominate cooling   | `ReduceFanPower`       |
//! | PUE above target, plant dominates cooling | `ImprovePlantEfficiency` |

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::llm::{ChatMessage, LlmClient};
use crate::physics::{pue, FailureEvent, FailureKind, SimulationResult};
use crate::scene::{ConstraintReport, Scene};

const REFLECT_TEMPLATE: &str = include_str!("templates/reflect_prompt.txt");

/// Maximum points per series handed to the reflection prompt.
pub const MAX_CONTEXT_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSeries {
    pub room: String,
    pub t_return_c: Vec<f64>,
    pub it_kw: Vec<f64>,
    pub fans_kw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub pue: f64,
    pub peak_return_c: f64,
    pub mean_it_kw: f64,
    pub mean_cooling_kw: f64,
    pub overheating_events: usize,
    /// Per-room cooling slack at full load, kW (empty without a report).
    pub cooling_slack_kw: BTreeMap<String, f64>,
    pub constraint_valid: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryContext {
    /// Step indices kept by downsampling.
    pub steps: Vec<usize>,
    pub rooms: Vec<RoomSeries>,
    pub pue: Vec<f64>,
    pub cooling_kw: Vec<f64>,
    pub failures: Vec<FailureEvent>,
    pub metrics: OverallMetrics,
    pub zone_max_c: f64,
}

/// `m` indices spread uniformly over `0..n`, first and last included.
pub fn downsample_indices(n: usize, m: usize) -> Vec<usize> {
    if n <= m {
        return (0..n).collect();
    }
    if m < 2 {
        return vec![0; m];
    }
    (0..m)
        .map(|i| ((i as f64) * (n - 1) as f64 / (m - 1) as f64).round() as usize)
        .collect()
}

pub fn contextualize(
    result: &SimulationResult,
    report: Option<&ConstraintReport>,
    zone_max_c: f64,
) -> TrajectoryContext {
    let steps = downsample_indices(result.steps.len(), MAX_CONTEXT_POINTS);
    let rooms = result
        .rooms
        .iter()
        .enumerate()
        .map(|(k, room)| RoomSeries {
            room: room.clone(),
            t_return_c: steps.iter().map(|&t| result.room_steps[t][k].t_return_c).collect(),
            it_kw: steps.iter().map(|&t| result.room_steps[t][k].it_kw).collect(),
            fans_kw: steps.iter().map(|&t| result.room_steps[t][k].fans_kw).collect(),
        })
        .collect();
    let n = result.steps.len().max(1) as f64;
    TrajectoryContext {
        pue: steps.iter().map(|&t| result.steps[t].pue).collect(),
        cooling_kw: steps.iter().map(|&t| result.steps[t].cooling_kw()).collect(),
        steps,
        rooms,
        failures: result.failures.clone(),
        metrics: OverallMetrics {
            pue: pue(result).unwrap_or(result.pue),
            peak_return_c: result.max_return_c(),
            mean_it_kw: result.steps.iter().map(|s| s.it_kw).sum::<f64>() / n,
            mean_cooling_kw: result.steps.iter().map(|s| s.cooling_kw()).sum::<f64>() / n,
            overheating_events: result.overheating_events(),
            cooling_slack_kw: report.map(|r| r.cooling_slack_kw.clone()).unwrap_or_default(),
            constraint_valid: report.map(ConstraintReport::is_valid),
        },
        zone_max_c,
    }
}

fn series(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Text form of a trajectory context as it appears in prompts and history.
pub fn render_trajectories(ctx: &TrajectoryContext) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Sampled steps (hours): {:?}", ctx.steps);
    for r in &ctx.rooms {
        let _ = writeln!(out, "{} return air temperature (C): {}", r.room, series(&r.t_return_c));
        let _ = writeln!(out, "{} IT power (kW): {}", r.room, series(&r.it_kw));
        let _ = writeln!(out, "{} ACU fan power (kW): {}", r.room, series(&r.fans_kw));
    }
    let _ = writeln!(out, "Facility PUE: {}", series(&ctx.pue));
    let _ = writeln!(out, "Facility cooling power (kW): {}", series(&ctx.cooling_kw));
    out.push_str("Failure events: ");
    if ctx.failures.is_empty() {
        out.push_str("none\n");
    } else {
        out.push('\n');
        for f in &ctx.failures {
            let _ = writeln!(
                out,
                "- step {} {} {:?} magnitude {:.3}",
                f.step,
                f.room.as_deref().unwrap_or("plant"),
                f.kind,
                f.magnitude
            );
        }
    }
    let m = &ctx.metrics;
    if m.overheating_events == 0 {
        let _ = writeln!(
            out,
            "No overheating events: every zone stayed under {:.1} C.",
            ctx.zone_max_c
        );
    } else {
        let _ = writeln!(
            out,
            "Overheating events: {} (zone limit {:.1} C).",
            m.overheating_events, ctx.zone_max_c
        );
    }
    let _ = writeln!(
        out,
        "Overall: PUE {:.4}; peak return air {:.2} C; mean IT power {:.1} kW; mean cooling power {:.1} kW",
        m.pue, m.peak_return_c, m.mean_it_kw, m.mean_cooling_kw
    );
    if !m.cooling_slack_kw.is_empty() {
        let slack: Vec<String> = m
            .cooling_slack_kw
            .iter()
            .map(|(k, v)| format!("{k} {v:.1} kW"))
            .collect();
        let _ = writeln!(out, "Cooling capacity slack at full load: {}", slack.join(", "));
    }
    if let Some(ok) = m.constraint_valid {
        let _ = writeln!(out, "Design constraints satisfied: {}", if ok { "yes" } else { "no" });
    }
    out
}

/// Render the reflection prompt for one evaluated design.
pub fn build_reflect_prompt(ctx: &TrajectoryContext, design: &str, requirements: &str) -> String {
    REFLECT_TEMPLATE
        .replace("{requirements}", requirements)
        .replace("{trajectories}", render_trajectories(ctx).trim_end())
        .replace("{design}", design)
}

/// Concrete edit suggested by the rule table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Directive {
    IncreaseAcuCount { room: String },
    UpgradeRackModel { room: String },
    FixRackCount { room: String },
    FixAcuCount { room: String },
    WidenAisle { room: String },
    FixGaps { room: String },
    IncreaseAirflow { room: String },
    AddChiller,
    AddTower,
    ReduceFanPower { room: String },
    ImprovePlantEfficiency,
}

impl Directive {
    pub fn describe(&self) -> String {
        match self {
            Directive::IncreaseAcuCount { room } => {
                format!("Increase the ACU count in {room} until cooling capacity covers the rack heat.")
            }
            Directive::UpgradeRackModel { room } => format!(
                "Select a rack model in {room} with enough power capacity and slots for its servers."
            ),
            Directive::FixRackCount { room } => {
                format!("Set the rack count in {room} to a multiple of 4 and at least 16.")
            }
            Directive::FixAcuCount { room } => {
                format!("Set the ACU count in {room} to an even number of at least 2.")
            }
            Directive::WidenAisle { room } => {
                format!("Widen the aisle gap in {room} to meet the clearance.")
            }
            Directive::FixGaps { room } => {
                format!("Use non-negative rack, ACU and wall gaps in {room} so assets do not overlap.")
            }
            Directive::IncreaseAirflow { room } => format!(
                "Raise the airflow in {room} with more ACUs or a model with higher design airflow."
            ),
            Directive::AddChiller => "Add chiller capacity to carry the full evaporator load.".into(),
            Directive::AddTower => "Add cooling tower capacity for the condenser heat.".into(),
            Directive::ReduceFanPower { room } => format!(
                "Reduce ACU fan power in {room} with a model of lower pressure rise per unit airflow."
            ),
            Directive::ImprovePlantEfficiency => {
                "Choose a chiller with a higher Carnot fraction or towers with a smaller approach.".into()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReflectionSource {
    RuleBased,
    Llm,
    /// The endpoint failed; the rule table answered instead.
    LlmFallback { error: String },
    /// Reflection disabled for this run; metrics only.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutput {
    pub summary: String,
    pub suggestions: String,
    pub directives: Vec<Directive>,
    /// Rank key: mean PUE.
    pub pue: f64,
    pub source: ReflectionSource,
}

/// What the rule table needs to know about the requirements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTargets {
    pub pue_target: f64,
    pub zone_max_c: f64,
}

impl Default for ReflectionTargets {
    fn default() -> Self {
        Self {
            pue_target: 1.3,
            zone_max_c: 30.0,
        }
    }
}

/// "meets target" when `pue <= target`, else "misses target".
pub fn efficiency_verdict(pue: f64, target: f64) -> &'static str {
    if pue <= target {
        "meets target"
    } else {
        "misses target"
    }
}

fn room_of(message: &str) -> Option<String> {
    let rest = message.strip_prefix("room ")?;
    Some(rest.split(':').next()?.trim().to_string())
}

/// Directives implied by a constraint report and a simulation context.
pub fn rule_directives(
    ctx: &TrajectoryContext,
    report: Option<&ConstraintReport>,
    targets: &ReflectionTargets,
    rack_rooms: &BTreeMap<String, Vec<String>>,
) -> Vec<Directive> {
    let mut out = Vec::new();
    if let Some(report) = report {
        for v in &report.violations {
            let room = room_of(&v.message);
            let d = match v.constraint.as_str() {
                "cooling" => room.map(|room| Directive::IncreaseAcuCount { room }),
                "layout.rack_multiple" | "layout.min_racks" => {
                    room.map(|room| Directive::FixRackCount { room })
                }
                "layout.acu_multiple" | "layout.min_acus" => {
                    room.map(|room| Directive::FixAcuCount { room })
                }
                "geometry.aisle_clearance" => room.map(|room| Directive::WidenAisle { room }),
                "geometry.negative_gap" | "geometry.region" => {
                    room.map(|room| Directive::FixGaps { room })
                }
                "geometry.overlap" | "geometry.containment" => v
                    .message
                    .split('/')
                    .next()
                    .map(|r| Directive::FixGaps { room: r.to_string() }),
                "power" | "power.slots" => {
                    // message: "rack <slot>: ..."
                    let slot = v
                        .message
                        .strip_prefix("rack ")
                        .and_then(|s| s.split(':').next())
                        .unwrap_or_default();
                    for room in rack_rooms.get(slot).into_iter().flatten() {
                        out.push(Directive::UpgradeRackModel { room: room.clone() });
                    }
                    None
                }
                _ => None,
            };
            out.extend(d);
        }
    }
    for f in &ctx.failures {
        let d = match (f.kind, &f.room) {
            (FailureKind::Overheating, Some(room)) => Some(Directive::IncreaseAirflow { room: room.clone() }),
            (FailureKind::CoolingShortfall, Some(room)) => {
                Some(Directive::IncreaseAcuCount { room: room.clone() })
            }
            (FailureKind::NoAirflow, Some(room)) => Some(Directive::FixAcuCount { room: room.clone() }),
            (FailureKind::ChillerOverload, _) => Some(Directive::AddChiller),
            (FailureKind::TowerOverload, _) => Some(Directive::AddTower),
            _ => None,
        };
        out.extend(d);
    }
    if out.is_empty() && ctx.metrics.pue > targets.pue_target {
        let fans: f64 = ctx.rooms.iter().map(|r| r.fans_kw.iter().sum::<f64>()).sum();
        let cooling: f64 = ctx.cooling_kw.iter().sum();
        if fans >= 0.5 * cooling {
            let busiest = ctx
                .rooms
                .iter()
                .max_by(|a, b| {
                    let fa: f64 = a.fans_kw.iter().sum();
                    let fb: f64 = b.fans_kw.iter().sum();
                    fa.total_cmp(&fb).then_with(|| b.room.cmp(&a.room))
                })
                .map(|r| r.room.clone());
            out.extend(busiest.map(|room| Directive::ReduceFanPower { room }));
        } else {
            out.push(Directive::ImprovePlantEfficiency);
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Deterministic reflection from the rule table.
pub fn reflect_rule_based(
    ctx: &TrajectoryContext,
    report: Option<&ConstraintReport>,
    targets: &ReflectionTargets,
    rack_rooms: &BTreeMap<String, Vec<String>>,
) -> ReflectionOutput {
    let m = &ctx.metrics;
    let mut summary = String::new();
    if m.overheating_events == 0 {
        let _ = write!(
            summary,
            "Overheating: none; peak return air {:.2} C stays under the {:.1} C limit. ",
            m.peak_return_c, targets.zone_max_c
        );
    } else {
        let mut rooms: Vec<&str> = ctx
            .failures
            .iter()
            .filter(|f| f.kind == FailureKind::Overheating)
            .filter_map(|f| f.room.as_deref())
            .collect();
        rooms.sort();
        rooms.dedup();
        let _ = write!(
            summary,
            "Overheating: yes, {} events in {}; peak return air {:.2} C exceeds the {:.1} C limit. ",
            m.overheating_events,
            rooms.join(", "),
            m.peak_return_c,
            targets.zone_max_c
        );
    }
    let _ = write!(
        summary,
        "Efficiency: PUE {:.4} {} {:.2}.",
        m.pue,
        efficiency_verdict(m.pue, targets.pue_target),
        targets.pue_target
    );
    if let Some(r) = report {
        if !r.is_valid() {
            let _ = write!(summary, " Constraint violations: {}.", r.violations.len());
        }
    }
    let directives = rule_directives(ctx, report, targets, rack_rooms);
    let suggestions = if directives.is_empty() {
        "Keep the topology and asset selection; explore small layout changes.".to_string()
    } else {
        directives
            .iter()
            .map(|d| format!("- {}", d.describe()))
            .collect::<Vec<_>>()
            .join("\n")
    };
    ReflectionOutput {
        summary,
        suggestions,
        directives,
        pue: m.pue,
        source: ReflectionSource::RuleBased,
    }
}

/// Reflection through a chat endpoint; endpoint errors fall back to the
/// rule table with the error recorded in the source.
pub fn reflect_llm(
    client: &LlmClient,
    prompt: &str,
    ctx: &TrajectoryContext,
    report: Option<&ConstraintReport>,
    targets: &ReflectionTargets,
    rack_rooms: &BTreeMap<String, Vec<String>>,
) -> ReflectionOutput {
    match client.complete(&[ChatMessage::user(prompt)]) {
        Ok(text) => ReflectionOutput {
            summary: text.clone(),
            suggestions: text,
            directives: Vec::new(),
            pue: ctx.metrics.pue,
            source: ReflectionSource::Llm,
        },
        Err(e) => {
            let mut out = reflect_rule_based(ctx, report, targets, rack_rooms);
            out.source = ReflectionSource::LlmFallback {
                error: e.to_string(),
            };
            out
        }
    }
}

/// Where a reflection comes from.
#[derive(Clone, Copy)]
pub enum ReflectMode<'c> {
    RuleBased,
    Llm(&'c LlmClient),
}

/// Rack slot → rooms that hold it.
pub fn rack_rooms(scene: &Scene) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (room, r) in &scene.topology.rooms {
        for slot in r.racks.keys() {
            out.entry(slot.clone()).or_default().push(room.clone());
        }
    }
    out
}

/// Critique of one evaluated scene.
pub fn reflect(
    scene: &Scene,
    design: &str,
    requirements: &str,
    ctx: &TrajectoryContext,
    report: Option<&ConstraintReport>,
    targets: &ReflectionTargets,
    mode: ReflectMode<'_>,
) -> ReflectionOutput {
    let racks = rack_rooms(scene);
    match mode {
        ReflectMode::RuleBased => reflect_rule_based(ctx, report, targets, &racks),
        ReflectMode::Llm(client) => {
            let prompt = build_reflect_prompt(ctx, design, requirements);
            reflect_llm(client, &prompt, ctx, report, targets, &racks)
        }
    }
}

/// Metrics-only record attached when reflection is switched off.
pub fn metrics_only(ctx: &TrajectoryContext) -> ReflectionOutput {
    ReflectionOutput {
        summary: format!(
            "PUE {:.4}; peak return air {:.2} C; overheating events {}.",
            ctx.metrics.pue, ctx.metrics.peak_return_c, ctx.metrics.overheating_events
        ),
        suggestions: String::new(),
        directives: Vec::new(),
        pue: ctx.metrics.pue,
        source: ReflectionSource::Disabled,
    }
}
