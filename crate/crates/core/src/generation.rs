//! Candidate generation.
//!
//! Design prompts are rendered from a [`DesignQuery`]; responses are parsed by
//! [`parse_candidate`]. Offline generators stand in for the design model:
//!
//! * [`heuristic_generate`] sizes racks, ACUs and plant from the requirements;
//! * [`random_generate`] draws counts, models and gaps without feasibility logic;
//! * [`ea_mutate`] changes exactly one gene of a parent;
//! * [`guided_mutate`] applies reflection directives to a parent.
//!
//! Every offline generator is a pure function of its inputs and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{AcuSpec, AssetCategory, AssetLibrary, AssetSpec, ChillerSpec, RackSpec, ServerSpec, TowerSpec};
use crate::llm::{LlmClient, LlmError};
use crate::physics::{acu_fan_power, condenser_temperature_k, PhysicsConfig};
use crate::reflection::{Directive, ReflectionOutput};
use crate::scene::{
    ChilledWaterLoop, CondenserWaterLoop, PlantTopology, RoomLayout, RoomTopology, SceneTopology,
    ServerFill, SpatialLayout, DEFAULT_MIN_AISLE,
};
use crate::weather::ExternalConditions;

const DESIGN_TEMPLATE: &str = include_str!("templates/design_prompt.txt");

/// Supply air temperature the heuristic sizes airflow for, °C.
pub const DESIGN_SUPPLY_AIR_C: f64 = 18.0;
/// Fan speed ratio the heuristic sizes airflow for.
pub const DESIGN_FLOW_RATIO: f64 = 0.85;
/// Return-air headroom kept below the zone limit, K.
pub const DESIGN_MARGIN_K: f64 = 2.0;
/// Upper bound on units of one chiller or tower model.
pub const MAX_PLANT_UNITS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("infeasible requirement: {0}")]
    Infeasible(String),
    #[error("invalid requirements: {0}")]
    Requirements(String),
    #[error("asset library has no {0} models")]
    EmptyCategory(AssetCategory),
    #[error("parent candidate did not parse")]
    UnparsedParent,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Capacity bands used by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scale {
    SmallEdge,
    MediumCluster,
    LargeCloud,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::SmallEdge, Scale::MediumCluster, Scale::LargeCloud];

    pub fn server_band(self) -> (u32, u32) {
        match self {
            Scale::SmallEdge => (50, 100),
            Scale::MediumCluster => (1000, 1500),
            Scale::LargeCloud => (10000, 12000),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scale::SmallEdge => "small-edge",
            Scale::MediumCluster => "medium-cluster",
            Scale::LargeCloud => "large-cloud",
        }
    }

    pub fn parse(s: &str) -> Option<Scale> {
        Scale::ALL.into_iter().find(|x| x.label() == s)
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Design requirements handed to generators and prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Requirements {
    pub name: String,
    pub servers_min: u32,
    pub servers_max: u32,
    pub servers_per_rack: u32,
    /// Server model id; the lowest server id in the library when unset.
    pub server_model: Option<String>,
    pub pue_target: f64,
    /// Maximum return air temperature, °C.
    pub zone_max_c: f64,
    pub max_racks_per_room: u32,
    pub max_acus_per_room: u32,
    pub notes: String,
}

impl Default for Requirements {
    fn default() -> Self {
        Requirements::for_scale(Scale::SmallEdge)
    }
}

impl Requirements {
    pub fn for_scale(scale: Scale) -> Self {
        let (lo, hi) = scale.server_band();
        Self {
            name: scale.label().to_string(),
            servers_min: lo,
            servers_max: hi,
            servers_per_rack: 8,
            server_model: None,
            pue_target: 1.3,
            zone_max_c: 30.0,
            max_racks_per_room: 400,
            max_acus_per_room: 48,
            notes: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: &str| Err(GenerationError::Requirements(m.to_string()));
        if self.servers_min == 0 || self.servers_min > self.servers_max {
            return bad("server band must satisfy 0 < servers_min <= servers_max");
        }
        if self.servers_per_rack == 0 {
            return bad("servers_per_rack must be >= 1");
        }
        if self.max_racks_per_room < 16 || self.max_acus_per_room < 2 {
            return bad("rooms must allow at least 16 racks and 2 ACUs");
        }
        if !(self.pue_target >= 1.0) {
            return bad("pue_target must be >= 1");
        }
        if !(self.zone_max_c > DESIGN_SUPPLY_AIR_C + DESIGN_MARGIN_K) {
            return bad("zone_max_c leaves no room above the design supply air temperature");
        }
        Ok(())
    }

    /// Server model bound to every rack.
    pub fn server_fill(&self, library: &AssetLibrary) -> Result<ServerFill, GenerationError> {
        let model = match &self.server_model {
            Some(m) => {
                if library.get_in(AssetCategory::Server, m).is_none() {
                    return Err(GenerationError::Requirements(format!(
                        "unknown server model {m}"
                    )));
                }
                m.clone()
            }
            None => library
                .ids(AssetCategory::Server)
                .into_iter()
                .next()
                .ok_or(GenerationError::EmptyCategory(AssetCategory::Server))?,
        };
        Ok(ServerFill {
            model,
            per_rack: self.servers_per_rack,
        })
    }

    pub fn describe(&self) -> String {
        let mut out = format!(
            "- Host between {} and {} servers, {} servers per rack.\n",
            self.servers_min, self.servers_max, self.servers_per_rack
        );
        if let Some(m) = &self.server_model {
            let _ = writeln!(out, "- Server model: {m}.");
        }
        let _ = writeln!(out, "- Target PUE: {:.2} or lower.", self.pue_target);
        let _ = writeln!(
            out,
            "- Return air temperature must stay below {:.1} C in every room.",
            self.zone_max_c
        );
        let _ = writeln!(
            out,
            "- At most {} racks and {} ACUs per room.",
            self.max_racks_per_room, self.max_acus_per_room
        );
        if !self.notes.is_empty() {
            let _ = writeln!(out, "- {}", self.notes);
        }
        out.trim_end().to_string()
    }
}

/// One ranked entry of the design history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub topology: SceneTopology,
    pub layout: SpatialLayout,
    pub pue: f64,
    /// Rendered trajectory context.
    pub trajectory: String,
    pub reflection: ReflectionOutput,
}

impl HistoryEntry {
    pub fn render(&self, rank: usize) -> String {
        let mut out = format!("Design {rank} (mean PUE {:.4}):\n", self.pue);
        out.push_str(&design_text(&self.topology, &self.layout));
        out.push_str("\nTrajectory summary:\n");
        out.push_str(self.trajectory.trim_end());
        out.push_str("\nReflection:\n");
        out.push_str(self.reflection.summary.trim_end());
        if !self.reflection.suggestions.is_empty() && self.reflection.suggestions != self.reflection.summary {
            out.push('\n');
            out.push_str(self.reflection.suggestions.trim_end());
        }
        out
    }
}

/// Inputs of one design prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignQuery {
    /// Serialized asset library.
    pub asset_context: String,
    /// Weather summary.
    pub factor_profile: String,
    pub requirements: String,
    /// Ranked best first.
    pub history: Vec<HistoryEntry>,
}

impl DesignQuery {
    pub fn new(
        library: &AssetLibrary,
        factor_profile: impl Into<String>,
        requirements: &Requirements,
        history: Vec<HistoryEntry>,
    ) -> Result<Self, GenerationError> {
        if library.is_empty() {
            return Err(GenerationError::Requirements("asset library is empty".into()));
        }
        Ok(Self {
            asset_context: library.to_json_string(),
            factor_profile: factor_profile.into(),
            requirements: requirements.describe(),
            history,
        })
    }
}

pub fn render_history(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        return "none".to_string();
    }
    history
        .iter()
        .enumerate()
        .map(|(i, h)| h.render(i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_design_prompt(query: &DesignQuery) -> String {
    DESIGN_TEMPLATE
        .replace("{assets_lib}", &query.asset_context)
        .replace("{external_inputs}", &query.factor_profile)
        .replace("{requirements}", &query.requirements)
        .replace("{history}", &render_history(&query.history))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    Llm,
    Heuristic,
    Random,
    EaMutation,
    Guided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: GeneratorKind,
    pub seed: Option<u64>,
    /// Raw response text for endpoint samples.
    pub raw: Option<String>,
}

/// A generated design before synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub topology: Option<SceneTopology>,
    pub layout: Option<SpatialLayout>,
    pub provenance: Provenance,
    pub parse_ok: bool,
    pub parse_error: Option<String>,
}

impl Candidate {
    pub fn new(topology: SceneTopology, layout: SpatialLayout, kind: GeneratorKind, seed: u64) -> Self {
        Self {
            topology: Some(topology),
            layout: Some(layout),
            provenance: Provenance {
                kind,
                seed: Some(seed),
                raw: None,
            },
            parse_ok: true,
            parse_error: None,
        }
    }

    /// Text of the design in response format; empty when it did not parse.
    pub fn design_text(&self) -> String {
        match (&self.topology, &self.layout) {
            (Some(t), Some(l)) => design_text(t, l),
            _ => String::new(),
        }
    }
}

/// `<topology>` and `<layout>` blocks as a design model is asked to write them.
pub fn design_text(topology: &SceneTopology, layout: &SpatialLayout) -> String {
    format!(
        "<topology>\n{}\n</topology>\n<layout>\n{}\n</layout>",
        serde_json::to_string_pretty(topology).expect("topology serializes"),
        serde_json::to_string_pretty(layout).expect("layout serializes")
    )
}

fn block<'a>(text: &'a str, tag: &str) -> Result<&'a str, String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text
        .find(&open)
        .ok_or_else(|| format!("missing <{tag}> block"))?
        + open.len();
    let len = text[start..]
        .find(&close)
        .ok_or_else(|| format!("missing </{tag}>"))?;
    Ok(&text[start..start + len])
}

/// Drop commas that directly follow `{`/`[` or precede `}`/`]` outside of
/// strings. The response template itself contains `"racks": {,`.
pub fn relax_json(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            ',' => {
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                let prev = out.chars().rev().find(|c| !c.is_whitespace());
                let dangling = matches!(next, Some('}') | Some(']'))
                    || matches!(prev, Some('{') | Some('['));
                if !dangling {
                    out.push(c);
                }
            }
            _ => out.push(c),
        }
    }
    out
}

/// Extract and parse the first `<topology>` and `<layout>` blocks.
pub fn parse_candidate(text: &str) -> Candidate {
    let parsed = (|| -> Result<(SceneTopology, SpatialLayout), String> {
        let t = block(text, "topology")?;
        let l = block(text, "layout")?;
        let topology: SceneTopology =
            serde_json::from_str(&relax_json(t)).map_err(|e| format!("topology: {e}"))?;
        let layout: SpatialLayout =
            serde_json::from_str(&relax_json(l)).map_err(|e| format!("layout: {e}"))?;
        Ok((topology, layout))
    })();
    let provenance = Provenance {
        kind: GeneratorKind::Llm,
        seed: None,
        raw: Some(text.to_string()),
    };
    match parsed {
        Ok((topology, layout)) => Candidate {
            topology: Some(topology),
            layout: Some(layout),
            provenance,
            parse_ok: true,
            parse_error: None,
        },
        Err(e) => Candidate {
            topology: None,
            layout: None,
            provenance,
            parse_ok: false,
            parse_error: Some(e),
        },
    }
}

/// `samples` completions of the design prompt, each parsed into a candidate.
/// Transport and auth errors abort the batch; unparseable responses do not.
pub fn llm_generate(
    client: &LlmClient,
    query: &DesignQuery,
    samples: usize,
) -> Result<Vec<Candidate>, GenerationError> {
    let prompt = build_design_prompt(query);
    client
        .complete_batch(&prompt, samples)
        .into_iter()
        .map(|r| r.map(|text| parse_candidate(&text)).map_err(GenerationError::from))
        .collect()
}

/// Requirements, library and sizing conditions shared by offline generators.
#[derive(Debug, Clone)]
pub struct DesignContext<'a> {
    pub requirements: &'a Requirements,
    pub library: &'a AssetLibrary,
    pub server: ServerSpec,
    /// Wet-bulb temperature the plant is sized for, °C.
    pub design_wet_bulb_c: f64,
    pub physics: PhysicsConfig,
}

impl<'a> DesignContext<'a> {
    pub fn new(
        requirements: &'a Requirements,
        library: &'a AssetLibrary,
        weather: &[ExternalConditions],
    ) -> Result<Self, GenerationError> {
        requirements.validate()?;
        let fill = requirements.server_fill(library)?;
        let server = library
            .get_in(AssetCategory::Server, &fill.model)
            .and_then(AssetSpec::as_server)
            .cloned()
            .ok_or(GenerationError::EmptyCategory(AssetCategory::Server))?;
        let design_wet_bulb_c = weather
            .iter()
            .map(|w| w.wet_bulb_c)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            requirements,
            library,
            server,
            design_wet_bulb_c: if design_wet_bulb_c.is_finite() {
                design_wet_bulb_c
            } else {
                25.0
            },
            physics: PhysicsConfig::default(),
        })
    }

    /// Heat of one fully loaded rack, kW.
    pub fn rack_heat_kw(&self) -> f64 {
        f64::from(self.requirements.servers_per_rack) * self.server.heat_factor * self.server.peak_power
    }

    fn rack_fits(&self, rack: &RackSpec) -> bool {
        let per_rack = self.requirements.servers_per_rack;
        rack.server_slots >= per_rack
            && rack.power_capacity >= f64::from(per_rack) * self.server.peak_power
    }

    /// Smallest even ACU count (≥ 2) covering `heat_kw` by capacity and by
    /// airflow at the design supply temperature and fan ratio.
    pub fn acus_needed(&self, acu: &AcuSpec, heat_kw: f64) -> u32 {
        let dt = self.requirements.zone_max_c - DESIGN_SUPPLY_AIR_C - DESIGN_MARGIN_K;
        let flow = (DESIGN_FLOW_RATIO * acu.design_air_flow_rate).min(acu.maximum_flow_rate);
        let per_unit_air = self.physics.air_density * flow * self.physics.air_cp * dt / 1000.0;
        let by_air = if per_unit_air > 0.0 { heat_kw / per_unit_air } else { f64::INFINITY };
        let by_cap = heat_kw / acu.cooling_capacity;
        let n = by_air.max(by_cap).max(2.0).ceil();
        if !n.is_finite() || n > f64::from(u32::MAX - 1) {
            return u32::MAX - 1;
        }
        round_up(n as u32, 2)
    }

    fn chiller_cop(&self, chiller: &ChillerSpec, approach: f64) -> f64 {
        let t_evap = chiller.chw_supply_setpoint + 273.15;
        let t_cond = condenser_temperature_k(self.design_wet_bulb_c, approach, &self.physics);
        if t_cond <= t_evap {
            return f64::INFINITY;
        }
        chiller.carnot_fraction * t_evap / (t_cond - t_evap)
    }

    /// ACU models that fit under the per-room limit for `heat_kw`, ranked by
    /// total fan power.
    fn ranked_acus(&self, heat_kw: f64) -> Vec<(String, u32)> {
        let mut out: Vec<(String, u32, f64)> = self
            .library
            .category(AssetCategory::Acu)
            .filter_map(|a| {
                let acu = a.as_acu()?;
                let n = self.acus_needed(acu, heat_kw);
                (n <= self.requirements.max_acus_per_room).then(|| {
                    let fan = f64::from(n) * acu_fan_power(acu, DESIGN_FLOW_RATIO, &self.physics);
                    (acu.id.clone(), n, fan)
                })
            })
            .collect();
        out.sort_by(|a, b| a.2.total_cmp(&b.2).then_with(|| a.0.cmp(&b.0)));
        out.into_iter().map(|(id, n, _)| (id, n)).collect()
    }

    fn ranked_towers(&self) -> Vec<&TowerSpec> {
        let mut t: Vec<&TowerSpec> = self
            .library
            .category(AssetCategory::CoolingTower)
            .filter_map(AssetSpec::as_tower)
            .collect();
        t.sort_by(|a, b| {
            let ka = a.rated_fan_power / a.rated_heat_rejection + 0.01 * a.approach;
            let kb = b.rated_fan_power / b.rated_heat_rejection + 0.01 * b.approach;
            ka.total_cmp(&kb).then_with(|| a.id.cmp(&b.id))
        });
        t
    }

    fn ranked_chillers(&self, approach: f64) -> Vec<&ChillerSpec> {
        let mut c: Vec<&ChillerSpec> = self
            .library
            .category(AssetCategory::Chiller)
            .filter_map(AssetSpec::as_chiller)
            .collect();
        c.sort_by(|a, b| {
            self.chiller_cop(b, approach)
                .total_cmp(&self.chiller_cop(a, approach))
                .then_with(|| a.id.cmp(&b.id))
        });
        c
    }

    /// Chiller and tower counts for `heat_kw` of room heat.
    pub fn plant_counts(&self, chiller: &ChillerSpec, tower: &TowerSpec, heat_kw: f64) -> (u32, u32) {
        let cop = self.chiller_cop(chiller, tower.approach);
        let n_ch = (1.1 * heat_kw / chiller.rated_capacity).ceil().max(1.0);
        let reject = 1.1 * heat_kw * (1.0 + 1.0 / cop.max(0.5));
        let n_t = (1.1 * reject / tower.rated_heat_rejection).ceil().max(1.0);
        (n_ch.min(f64::from(u32::MAX)) as u32, n_t.min(f64::from(u32::MAX)) as u32)
    }

    /// Racks per room for a server count.
    pub fn rack_plan(&self, servers: u32) -> Vec<u32> {
        let req = self.requirements;
        let racks = servers.div_ceil(req.servers_per_rack).max(1);
        let rooms = racks.div_ceil(req.max_racks_per_room).max(1);
        let per_room = round_up(racks.div_ceil(rooms), 4).max(16).min(req.max_racks_per_room / 4 * 4);
        vec![per_room; rooms as usize]
    }
}

fn round_up(n: u32, step: u32) -> u32 {
    n.div_ceil(step) * step
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn room_name(i: usize) -> String {
    format!("room_{}", i + 1)
}

/// Layout gaps drawn from the heuristic's ranges, rounded to centimeters.
pub fn sample_room_layout(rng: &mut ChaCha8Rng) -> RoomLayout {
    RoomLayout {
        margin: cents(uniform(rng, 0.5, 1.5)),
        padding: cents(uniform(rng, 0.2, 0.8)),
        aisle_gap: cents(uniform(rng, DEFAULT_MIN_AISLE, 2.4)),
        rack_gap: cents(uniform(rng, 0.0, 0.2)),
        acu_gap: Some(cents(uniform(rng, 0.3, 1.0))),
    }
}

fn pick<'v, T>(rng: &mut ChaCha8Rng, ranked: &'v [T], top: usize) -> Option<&'v T> {
    ranked[..ranked.len().min(top)].choose(rng)
}

fn heuristic_one(ctx: &DesignContext, rng: &mut ChaCha8Rng) -> Result<(SceneTopology, SpatialLayout), GenerationError> {
    let req = ctx.requirements;
    let servers = rng.random_range(req.servers_min..=req.servers_max);
    let plan = ctx.rack_plan(servers);

    let racks: Vec<&RackSpec> = ctx
        .library
        .category(AssetCategory::Rack)
        .filter_map(AssetSpec::as_rack)
        .filter(|r| ctx.rack_fits(r))
        .collect();
    let rack = *racks.choose(rng).ok_or_else(|| {
        GenerationError::Infeasible(format!(
            "no rack model holds {} servers of {}",
            req.servers_per_rack, ctx.server.id
        ))
    })?;

    let room_heat = f64::from(plan[0]) * ctx.rack_heat_kw();
    let acus = ctx.ranked_acus(room_heat);
    let (acu_id, acu_n) = pick(rng, &acus, 3).cloned().ok_or_else(|| {
        GenerationError::Infeasible(format!(
            "no ACU model covers {room_heat:.1} kW with at most {} units",
            req.max_acus_per_room
        ))
    })?;

    let total_heat: f64 = plan.iter().map(|&n| f64::from(n) * ctx.rack_heat_kw()).sum();
    let towers = ctx.ranked_towers();
    let tower = *pick(rng, &towers, 3).ok_or(GenerationError::EmptyCategory(AssetCategory::CoolingTower))?;
    let chillers: Vec<&ChillerSpec> = ctx
        .ranked_chillers(tower.approach)
        .into_iter()
        .filter(|c| ctx.plant_counts(c, tower, total_heat).0 <= MAX_PLANT_UNITS)
        .collect();
    let chiller = *pick(rng, &chillers, 3).ok_or_else(|| {
        GenerationError::Infeasible(format!(
            "no chiller model covers {total_heat:.0} kW with at most {MAX_PLANT_UNITS} units"
        ))
    })?;
    let (n_ch, n_t) = ctx.plant_counts(chiller, tower, total_heat);
    if n_t > MAX_PLANT_UNITS {
        return Err(GenerationError::Infeasible(format!(
            "cooling tower {} needs {n_t} units",
            tower.id
        )));
    }

    let mut topology = SceneTopology::default();
    let mut layout = SpatialLayout::default();
    for (i, &n) in plan.iter().enumerate() {
        topology.rooms.insert(
            room_name(i),
            RoomTopology {
                racks: BTreeMap::from([(rack.id.clone(), n)]),
                acus: BTreeMap::from([(acu_id.clone(), acu_n)]),
            },
        );
        layout.rooms.insert(room_name(i), sample_room_layout(rng));
    }
    topology.plant = PlantTopology {
        chilled_water_loop: ChilledWaterLoop {
            chillers: BTreeMap::from([(chiller.id.clone(), n_ch)]),
        },
        condenser_water_loop: CondenserWaterLoop {
            cooling_towers: BTreeMap::from([(tower.id.clone(), n_t)]),
        },
    };
    Ok((topology, layout))
}

/// `n` heuristic candidates; candidate `i` uses the stream seeded by
/// `seed + i`.
pub fn heuristic_generate(ctx: &DesignContext, seed: u64, n: usize) -> Result<Vec<Candidate>, GenerationError> {
    (0..n as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (t, l) = heuristic_one(ctx, &mut rng)?;
            Ok(Candidate::new(t, l, GeneratorKind::Heuristic, s))
        })
        .collect()
}

fn any_id(rng: &mut ChaCha8Rng, library: &AssetLibrary, category: AssetCategory) -> Result<String, GenerationError> {
    library
        .ids(category)
        .choose(rng)
        .cloned()
        .ok_or(GenerationError::EmptyCategory(category))
}

fn random_one(ctx: &DesignContext, rng: &mut ChaCha8Rng) -> Result<(SceneTopology, SpatialLayout), GenerationError> {
    let req = ctx.requirements;
    let lib = ctx.library;
    let plan = ctx.rack_plan(req.servers_max);
    let target = plan[0];
    let mut topology = SceneTopology::default();
    let mut layout = SpatialLayout::default();
    for i in 0..plan.len() {
        let racks = rng.random_range((target / 2).max(4)..=target * 3 / 2);
        let acus = rng.random_range(1..=(racks / 4).max(4));
        topology.rooms.insert(
            room_name(i),
            RoomTopology {
                racks: BTreeMap::from([(any_id(rng, lib, AssetCategory::Rack)?, racks)]),
                acus: BTreeMap::from([(any_id(rng, lib, AssetCategory::Acu)?, acus)]),
            },
        );
        layout.rooms.insert(
            room_name(i),
            RoomLayout {
                margin: cents(uniform(rng, 0.2, 2.0)),
                padding: cents(uniform(rng, 0.0, 1.0)),
                aisle_gap: cents(uniform(rng, 0.8, 2.4)),
                rack_gap: cents(uniform(rng, -0.05, 0.3)),
                acu_gap: Some(cents(uniform(rng, 0.2, 1.2))),
            },
        );
    }
    let units = 4 * plan.len() as u32;
    topology.plant = PlantTopology {
        chilled_water_loop: ChilledWaterLoop {
            chillers: BTreeMap::from([(any_id(rng, lib, AssetCategory::Chiller)?, rng.random_range(1..=units))]),
        },
        condenser_water_loop: CondenserWaterLoop {
            cooling_towers: BTreeMap::from([(
                any_id(rng, lib, AssetCategory::CoolingTower)?,
                rng.random_range(1..=units),
            )]),
        },
    };
    Ok((topology, layout))
}

/// `n` candidates with uniformly drawn models, counts and gaps. Room count
/// follows the requirement's server band; nothing else is checked.
pub fn random_generate(ctx: &DesignContext, seed: u64, n: usize) -> Result<Vec<Candidate>, GenerationError> {
    (0..n as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (t, l) = random_one(ctx, &mut rng)?;
            Ok(Candidate::new(t, l, GeneratorKind::Random, s))
        })
        .collect()
}

/// A count entry of the topology: room ACUs/racks or a plant loop.
#[derive(Debug, Clone, PartialEq, Eq)]
enum CountSite {
    Racks(String),
    Acus(String),
    Chillers,
    Towers,
}

impl CountSite {
    fn all(t: &SceneTopology) -> Vec<CountSite> {
        let mut out = Vec::new();
        for room in t.rooms.keys() {
            out.push(CountSite::Racks(room.clone()));
            out.push(CountSite::Acus(room.clone()));
        }
        out.push(CountSite::Chillers);
        out.push(CountSite::Towers);
        out
    }

    fn category(&self) -> AssetCategory {
        match self {
            CountSite::Racks(_) => AssetCategory::Rack,
            CountSite::Acus(_) => AssetCategory::Acu,
            CountSite::Chillers => AssetCategory::Chiller,
            CountSite::Towers => AssetCategory::CoolingTower,
        }
    }

    /// Multiplicity step of the site's counts.
    fn step(&self) -> u32 {
        match self {
            CountSite::Racks(_) => 4,
            CountSite::Acus(_) => 2,
            _ => 1,
        }
    }

    fn map<'t>(&self, t: &'t mut SceneTopology) -> Option<&'t mut BTreeMap<String, u32>> {
        match self {
            CountSite::Racks(r) => t.rooms.get_mut(r).map(|r| &mut r.racks),
            CountSite::Acus(r) => t.rooms.get_mut(r).map(|r| &mut r.acus),
            CountSite::Chillers => Some(&mut t.plant.chilled_water_loop.chillers),
            CountSite::Towers => Some(&mut t.plant.condenser_water_loop.cooling_towers),
        }
    }
}

const GAP_FIELDS: [&str; 5] = ["rack_gap", "padding", "margin", "aisle_gap", "acu_gap"];

fn gap_mut<'l>(l: &'l mut RoomLayout, field: &str) -> &'l mut f64 {
    match field {
        "rack_gap" => &mut l.rack_gap,
        "padding" => &mut l.padding,
        "margin" => &mut l.margin,
        "aisle_gap" => &mut l.aisle_gap,
        _ => l.acu_gap.get_or_insert(crate::scene::DEFAULT_ACU_GAP),
    }
}

fn mutate_model(t: &mut SceneTopology, lib: &AssetLibrary, rng: &mut ChaCha8Rng) -> bool {
    let mut sites = CountSite::all(t);
    while !sites.is_empty() {
        let site = sites.swap_remove(rng.random_range(0..sites.len()));
        let ids = lib.ids(site.category());
        let Some(map) = site.map(t) else { continue };
        let Some(old) = map.keys().cloned().collect::<Vec<_>>().choose(rng).cloned() else {
            continue;
        };
        let unused: Vec<String> = ids.into_iter().filter(|id| !map.contains_key(id)).collect();
        if let Some(new) = unused.choose(rng) {
            let n = map.remove(&old).unwrap_or(0);
            map.insert(new.clone(), n);
            return true;
        }
    }
    false
}

fn mutate_count(t: &mut SceneTopology, rng: &mut ChaCha8Rng) -> bool {
    let mut sites = CountSite::all(t);
    while !sites.is_empty() {
        let site = sites.swap_remove(rng.random_range(0..sites.len()));
        let step = site.step();
        let Some(map) = site.map(t) else { continue };
        let keys: Vec<String> = map.keys().cloned().collect();
        let Some(key) = keys.choose(rng) else { continue };
        let old = map[key];
        let base = round_up(old.max(step), step);
        let down = base >= 2 * step && rng.random::<bool>();
        let new = if down { base - step } else { base + step };
        map.insert(key.clone(), new);
        return true;
    }
    false
}

fn mutate_gap(l: &mut SpatialLayout, rng: &mut ChaCha8Rng) -> bool {
    let rooms: Vec<String> = l.rooms.keys().cloned().collect();
    let Some(room) = rooms.choose(rng) else { return false };
    let field = GAP_FIELDS[rng.random_range(0..GAP_FIELDS.len())];
    let v = gap_mut(l.rooms.get_mut(room).expect("room exists"), field);
    let delta = cents(uniform(rng, 0.05, 0.3));
    let up = *v - delta < 0.0 || rng.random::<bool>();
    *v = cents(if up { *v + delta } else { *v - delta });
    true
}

/// Change exactly one gene of `parent`: a model choice, a count (by its
/// multiplicity step, snapped to that step) or a layout gap, picked uniformly.
pub fn ea_mutate(parent: &Candidate, library: &AssetLibrary, seed: u64) -> Result<Candidate, GenerationError> {
    let (Some(t), Some(l)) = (&parent.topology, &parent.layout) else {
        return Err(GenerationError::UnparsedParent);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = t.clone();
    let mut l = l.clone();
    let mut genes = vec![0u8, 1, 2];
    while !genes.is_empty() {
        let g = genes.swap_remove(rng.random_range(0..genes.len()));
        let changed = match g {
            0 => mutate_model(&mut t, library, &mut rng),
            1 => mutate_count(&mut t, &mut rng),
            _ => mutate_gap(&mut l, &mut rng),
        };
        if changed {
            break;
        }
    }
    Ok(Candidate::new(t, l, GeneratorKind::EaMutation, seed))
}

fn room_heat(ctx: &DesignContext, t: &SceneTopology, room: &str) -> f64 {
    let racks: u32 = t.rooms.get(room).map(|r| r.racks.values().sum()).unwrap_or(0);
    f64::from(racks) * ctx.rack_heat_kw()
}

fn total_heat(ctx: &DesignContext, t: &SceneTopology) -> f64 {
    t.rooms.keys().map(|r| room_heat(ctx, t, r)).sum()
}

fn resize_acus(ctx: &DesignContext, t: &mut SceneTopology, room: &str, extra: u32) {
    let heat = room_heat(ctx, t, room);
    let Some(r) = t.rooms.get_mut(room) else { return };
    let lib = ctx.library;
    // keep the largest-capacity model, sized for the room
    let best = r
        .acus
        .keys()
        .filter_map(|id| lib.get_in(AssetCategory::Acu, id).and_then(AssetSpec::as_acu))
        .max_by(|a, b| a.cooling_capacity.total_cmp(&b.cooling_capacity));
    let Some(acu) = best.cloned() else { return };
    let current: u32 = r.acus.values().sum();
    let n = ctx.acus_needed(&acu, heat).max(round_up(current, 2) + extra);
    r.acus = BTreeMap::from([(acu.id.clone(), n)]);
}

fn apply_directive(ctx: &DesignContext, t: &mut SceneTopology, l: &mut SpatialLayout, d: &Directive) {
    let lib = ctx.library;
    match d {
        Directive::IncreaseAcuCount { room } => resize_acus(ctx, t, room, 0),
        Directive::IncreaseAirflow { room } => resize_acus(ctx, t, room, 2),
        Directive::FixAcuCount { room } => {
            if let Some(r) = t.rooms.get_mut(room) {
                for n in r.acus.values_mut() {
                    *n = round_up((*n).max(1), 2);
                }
                if r.acus.is_empty() {
                    if let Some(id) = lib.ids(AssetCategory::Acu).first() {
                        r.acus.insert(id.clone(), 2);
                    }
                }
            }
        }
        Directive::FixRackCount { room } => {
            if let Some(r) = t.rooms.get_mut(room) {
                for n in r.racks.values_mut() {
                    *n = round_up((*n).max(1), 4);
                }
                let total: u32 = r.racks.values().sum();
                if total < 16 {
                    if let Some(n) = r.racks.values_mut().next() {
                        *n += 16 - total;
                    }
                }
            }
        }
        Directive::UpgradeRackModel { room } => {
            let best = lib
                .category(AssetCategory::Rack)
                .filter_map(AssetSpec::as_rack)
                .filter(|r| ctx.rack_fits(r))
                .max_by(|a, b| a.power_capacity.total_cmp(&b.power_capacity).then_with(|| b.id.cmp(&a.id)));
            if let (Some(best), Some(r)) = (best, t.rooms.get_mut(room)) {
                let total: u32 = r.racks.values().sum();
                r.racks = BTreeMap::from([(best.id.clone(), total)]);
            }
        }
        Directive::WidenAisle { room } => {
            if let Some(r) = l.rooms.get_mut(room) {
                r.aisle_gap = cents(r.aisle_gap.max(DEFAULT_MIN_AISLE) + 0.2);
            }
        }
        Directive::FixGaps { room } => {
            if let Some(r) = l.rooms.get_mut(room) {
                for f in GAP_FIELDS {
                    let v = gap_mut(r, f);
                    *v = v.max(0.0);
                }
                r.margin = r.margin.max(0.5);
                r.aisle_gap = r.aisle_gap.max(DEFAULT_MIN_AISLE);
            }
        }
        Directive::AddChiller => {
            bump_largest(&mut t.plant.chilled_water_loop.chillers, lib, AssetCategory::Chiller);
        }
        Directive::AddTower => {
            bump_largest(&mut t.plant.condenser_water_loop.cooling_towers, lib, AssetCategory::CoolingTower);
        }
        Directive::ReduceFanPower { room } => {
            let heat = room_heat(ctx, t, room);
            let current: Option<f64> = t.rooms.get(room).map(|r| {
                r.acus
                    .iter()
                    .filter_map(|(id, &n)| {
                        let a = lib.get_in(AssetCategory::Acu, id)?.as_acu()?;
                        Some(f64::from(n) * acu_fan_power(a, DESIGN_FLOW_RATIO, &ctx.physics))
                    })
                    .sum()
            });
            let ranked = ctx.ranked_acus(heat);
            if let (Some((id, n)), Some(cur), Some(r)) = (ranked.first(), current, t.rooms.get_mut(room)) {
                let a = lib.get_in(AssetCategory::Acu, id).and_then(AssetSpec::as_acu);
                let fan = a.map(|a| f64::from(*n) * acu_fan_power(a, DESIGN_FLOW_RATIO, &ctx.physics));
                if fan.is_some_and(|f| f < cur) {
                    r.acus = BTreeMap::from([(id.clone(), *n)]);
                }
            }
        }
        Directive::ImprovePlantEfficiency => {
            let heat = total_heat(ctx, t);
            let towers = ctx.ranked_towers();
            let Some(tower) = towers.first() else { return };
            let Some(chiller) = ctx
                .ranked_chillers(tower.approach)
                .into_iter()
                .find(|c| ctx.plant_counts(c, tower, heat).0 <= MAX_PLANT_UNITS)
            else {
                return;
            };
            let (n_ch, n_t) = ctx.plant_counts(chiller, tower, heat);
            t.plant.chilled_water_loop.chillers = BTreeMap::from([(chiller.id.clone(), n_ch)]);
            t.plant.condenser_water_loop.cooling_towers =
                BTreeMap::from([(tower.id.clone(), n_t.min(MAX_PLANT_UNITS))]);
        }
    }
}

fn bump_largest(map: &mut BTreeMap<String, u32>, lib: &AssetLibrary, category: AssetCategory) {
    let rating = |id: &str| -> f64 {
        match lib.get_in(category, id) {
            Some(AssetSpec::Chiller(c)) => c.rated_capacity,
            Some(AssetSpec::CoolingTower(t)) => t.rated_heat_rejection,
            _ => 0.0,
        }
    };
    let key = map
        .keys()
        .max_by(|a, b| rating(a).total_cmp(&rating(b)).then_with(|| b.cmp(a)))
        .cloned();
    match key {
        Some(k) => *map.get_mut(&k).expect("key exists") += 1,
        None => {
            if let Some(id) = lib.ids(category).first() {
                map.insert(id.clone(), 1);
            }
        }
    }
}

/// Apply reflection directives to `parent`; with no directives this is
/// [`ea_mutate`].
pub fn guided_mutate(
    ctx: &DesignContext,
    parent: &Candidate,
    directives: &[Directive],
    seed: u64,
) -> Result<Candidate, GenerationError> {
    let (Some(t), Some(l)) = (&parent.topology, &parent.layout) else {
        return Err(GenerationError::UnparsedParent);
    };
    if directives.is_empty() {
        let mut c = ea_mutate(parent, ctx.library, seed)?;
        c.provenance.kind = GeneratorKind::Guided;
        return Ok(c);
    }
    let mut t = t.clone();
    let mut l = l.clone();
    for d in directives {
        apply_directive(ctx, &mut t, &mut l, d);
    }
    Ok(Candidate::new(t, l, GeneratorKind::Guided, seed))
}

/// Offline design-model stand-in. Without history it samples the heuristic;
/// with history, even sample indices refine ranked parents through their
/// reflections and odd indices stay fresh heuristic samples.
pub fn heuristic_design(
    ctx: &DesignContext,
    history: &[HistoryEntry],
    seeds: &[u64],
) -> Result<Vec<Candidate>, GenerationError> {
    seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if !history.is_empty() && i % 2 == 0 {
                let h = &history[(i / 2) % history.len()];
                let parent = Candidate::new(h.topology.clone(), h.layout.clone(), GeneratorKind::Heuristic, s);
                guided_mutate(ctx, &parent, &h.reflection.directives, s)
            } else {
                Ok(heuristic_generate(ctx, s, 1)?.remove(0))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::generate_synthetic_library;
    use crate::reflection::ReflectionSource;

    fn weather() -> Vec<ExternalConditions> {
        vec![ExternalConditions {
            dry_bulb_c: 25.0,
            wet_bulb_c: 20.0,
            humidity_ratio: 0.01,
            wet_bulb_out_of_range: false,
        }]
    }

    const ONE_ROOM: &str = r#"Here is my design.
<topology>
{
    "rooms":{
        "room_1":{
            "racks": {,
                "RACK_001": 16,
            },
            "acus": {
                "ACU_001": 2
            }
        }
    },
    "plant": {
        "chilled_water_loop": {"chillers": {"CH_001": 1}},
        "condenser_water_loop": {"cooling_towers": {"CT_001": 1}}
    }
}
</topology>
<layout>
{
    "rooms":{
        "room_1": {
            "rack_gap": 0.1,
            "padding": 0.5,
            "margin": 1.0,
            "aisle_gap": 1.5,
        }
    }
}
</layout>"#;

    #[test]
    fn parses_template_shaped_response() {
        let c = parse_candidate(ONE_ROOM);
        assert!(c.parse_ok, "{:?}", c.parse_error);
        let t = c.topology.unwrap();
        assert_eq!(t.rooms["room_1"].racks["RACK_001"], 16);
        assert_eq!(t.rooms["room_1"].acus["ACU_001"], 2);
        assert_eq!(t.chillers()["CH_001"], 1);
        let l = c.layout.unwrap();
        assert_eq!(l.rooms["room_1"].aisle_gap, 1.5);
        assert_eq!(c.provenance.raw.as_deref(), Some(ONE_ROOM));
    }

    #[test]
    fn malformed_responses_fail_to_parse() {
        let c = parse_candidate(&ONE_ROOM.replace("</layout>", ""));
        assert!(!c.parse_ok);
        assert!(c.topology.is_none() && c.layout.is_none());
        let c = parse_candidate(&ONE_ROOM.replace("\"margin\"", "\"colour\": 3, \"margin\""));
        assert!(!c.parse_ok);
        let c = parse_candidate(&ONE_ROOM.replace("\"rack_gap\": 0.1", "\"rack_gap\": -0.1"));
        assert!(c.parse_ok);
    }

    #[test]
    fn relaxed_json_keeps_strings() {
        assert_eq!(relax_json(r#"{"a,}": [1,2,],}"#), r#"{"a,}": [1,2]}"#);
    }

    #[test]
    fn design_text_round_trips() {
        let lib = generate_synthetic_library(5, 1);
        let req = Requirements::default();
        let ctx = DesignContext::new(&req, &lib, &weather()).unwrap();
        for c in heuristic_generate(&ctx, 3, 5).unwrap() {
            let back = parse_candidate(&c.design_text());
            assert_eq!(back.topology, c.topology);
            assert_eq!(back.layout, c.layout);
        }
    }

    #[test]
    fn small_edge_rack_counts() {
        let lib = generate_synthetic_library(10, 2);
        let req = Requirements::for_scale(Scale::SmallEdge);
        let ctx = DesignContext::new(&req, &lib, &weather()).unwrap();
        let batch = heuristic_generate(&ctx, 11, 20).unwrap();
        for c in &batch {
            let t = c.topology.as_ref().unwrap();
            assert_eq!(t.rooms.len(), 1);
            let racks: u32 = t.rooms["room_1"].racks.values().sum();
            assert!(racks >= 16 && racks % 4 == 0);
            let acus: u32 = t.rooms["room_1"].acus.values().sum();
            assert!(acus >= 2 && acus % 2 == 0);
        }
        assert_eq!(batch, heuristic_generate(&ctx, 11, 20).unwrap());
    }

    #[test]
    fn large_cloud_splits_rooms() {
        let lib = generate_synthetic_library(10, 2);
        let req = Requirements::for_scale(Scale::LargeCloud);
        let ctx = DesignContext::new(&req, &lib, &weather()).unwrap();
        assert_eq!(ctx.rack_plan(10000), vec![316; 4]);
        assert_eq!(ctx.rack_plan(50), vec![16]);
    }

    #[test]
    fn tiny_acus_make_the_requirement_infeasible() {
        let mut lib = generate_synthetic_library(3, 4).to_json_string();
        let v: serde_json::Value = serde_json::from_str(&lib).unwrap();
        let mut v = v;
        for (_, acu) in v["acus"].as_object_mut().unwrap() {
            acu["coolingCapacity"] = serde_json::json!(0.5);
        }
        lib = v.to_string();
        let lib = AssetLibrary::from_json_str(&lib).unwrap();
        let req = Requirements::for_scale(Scale::MediumCluster);
        let ctx = DesignContext::new(&req, &lib, &weather()).unwrap();
        assert!(matches!(heuristic_generate(&ctx, 0, 1), Err(GenerationError::Infeasible(_))));
    }

    #[test]
    fn empty_history_renders_none() {
        let lib = generate_synthetic_library(2, 1);
        let q = DesignQuery::new(&lib, "mean wet-bulb 20 C", &Requirements::default(), vec![]).unwrap();
        let p = build_design_prompt(&q);
        assert!(p.contains("Previous Generated Designs and metricss:\nnone\n"));
        assert!(p.contains("Number of selected ACUs should be multiple of 2 in a room"));
        assert!(p.contains("mean wet-bulb 20 C"));
    }

    #[test]
    fn history_order_changes_prompt() {
        let lib = generate_synthetic_library(3, 1);
        let req = Requirements::default();
        let ctx = DesignContext::new(&req, &lib, &weather()).unwrap();
        let cands = heuristic_generate(&ctx, 0, 2).unwrap();
        let entry = |c: &Candidate, pue: f64| HistoryEntry {
            topology: c.topology.clone().unwrap(),
            layout: c.layout.clone().unwrap(),
            pue,
            trajectory: "Failure events: none".into(),
            reflection: ReflectionOutput {
                summary: format!("PUE {pue}"),
                suggestions: String::new(),
                directives: vec![],
                pue,
                source: ReflectionSource::RuleBased,
            },
        };
        let a = entry(&cands[0], 1.2);
        let b = entry(&cands[1], 1.3);
        let p1 = build_design_prompt(&DesignQuery::new(&lib, "", &req, vec![a.clone(), b.clone()]).unwrap());
        let p2 = build_design_prompt(&DesignQuery::new(&lib, "", &req, vec![b, a]).unwrap());
        assert_ne!(p1, p2);
        let i1 = p1.find("Design 1 (mean PUE 1.2000)").unwrap();
        let i2 = p1.find("Design 2 (mean PUE 1.3000)").unwrap();
        assert!(i1 < i2);
    }

    #[test]
    fn random_is_reproducible() {
        let lib = generate_synthetic_library(5, 1);
        let req = Requirements::default();
        let ctx = DesignContext::new(&req, &lib, &weather()).unwrap();
        assert_eq!(random_generate(&ctx, 5, 4).unwrap(), random_generate(&ctx, 5, 4).unwrap());
        assert_ne!(random_generate(&ctx, 5, 1).unwrap(), random_generate(&ctx, 6, 1).unwrap());
    }

    #[test]
    fn directives_fix_cooling_shortfall() {
        let lib = generate_synthetic_library(5, 1);
        let req = Requirements::default();
        let ctx = DesignContext::new(&req, &lib, &weather()).unwrap();
        let mut parent = heuristic_generate(&ctx, 0, 1).unwrap().remove(0);
        let t = parent.topology.as_mut().unwrap();
        let room = t.rooms.get_mut("room_1").unwrap();
        let acu = room.acus.keys().next().unwrap().clone();
        room.acus.insert(acu, 1);
        let child = guided_mutate(
            &ctx,
            &parent,
            &[Directive::IncreaseAcuCount { room: "room_1".into() }],
            1,
        )
        .unwrap();
        let n: u32 = child.topology.unwrap().rooms["room_1"].acus.values().sum();
        assert!(n >= 2 && n % 2 == 0);
    }
}
