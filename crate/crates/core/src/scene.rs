//! Scene representation, deterministic placement and constraint checking.
//!
//! A scene is the tuple (topology, layout, asset combination) plus the
//! placed geometry derived from it. Topology keys name asset *slots*; the
//! asset combination binds every slot to a concrete spec. Synthesis binds
//! each slot to the library asset of the same id, and refinement may later
//! rebind a slot to a different library asset without touching the topology.
//!
//! Placement inside a room (local coordinates, meters):
//!
//! ```text
//!  y ^   margin + padding band
//!    |   +------------------------------+
//!    |   | [R][R][R][R]   rack row 3    |
//!    |   |       aisle_gap              |
//!    |   | [R][R][R][R]   rack row 2    |
//!    |   |       ...                    |
//!    |   |       aisle_gap              |
//!    |   | [A]  [A]       ACU strip     |
//!    |   +------------------------------+
//!    +-------------------------------------> x
//! ```
//!
//! Racks are separated by `rack_gap` inside a row, ACUs by `acu_gap` along the
//! strip. Rows alternate facing so that neighbouring rows share a cold or hot
//! aisle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{AssetCategory, AssetLibrary, AssetSpec, Size3};

/// Minimum aisle clearance, m.
pub const DEFAULT_MIN_AISLE: f64 = 1.2;
/// ACU spacing used when a layout does not state one, m.
pub const DEFAULT_ACU_GAP: f64 = 0.6;
/// Separation between a room's bounding box and the plant zone, m.
const PLANT_OFFSET: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown {category} model {id}")]
    UnknownModel { category: AssetCategory, id: String },
    #[error("room must contain assets ({0})")]
    EmptyRoom(String),
    #[error("room must contain assets (topology has no rooms)")]
    NoRooms,
    #[error("no layout given for room {0}")]
    MissingLayout(String),
    #[error("degenerate room: {0}")]
    DegenerateRoom(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomTopology {
    #[serde(default)]
    pub racks: BTreeMap<String, u32>,
    #[serde(default)]
    pub acus: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChilledWaterLoop {
    #[serde(default)]
    pub chillers: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondenserWaterLoop {
    #[serde(default)]
    pub cooling_towers: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantTopology {
    #[serde(default)]
    pub chilled_water_loop: ChilledWaterLoop,
    #[serde(default)]
    pub condenser_water_loop: CondenserWaterLoop,
}

/// Which assets exist, grouped by room and plant loop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTopology {
    pub rooms: BTreeMap<String, RoomTopology>,
    #[serde(default)]
    pub plant: PlantTopology,
}

impl SceneTopology {
    /// Every (category, slot id) referenced anywhere in the topology.
    pub fn slots(&self) -> Vec<(AssetCategory, String)> {
        let mut out: Vec<(AssetCategory, String)> = Vec::new();
        let mut push = |c: AssetCategory, id: &String| {
            if !out.iter().any(|(oc, oid)| *oc == c && oid == id) {
                out.push((c, id.clone()));
            }
        };
        for room in self.rooms.values() {
            room.racks.keys().for_each(|id| push(AssetCategory::Rack, id));
            room.acus.keys().for_each(|id| push(AssetCategory::Acu, id));
        }
        self.plant
            .chilled_water_loop
            .chillers
            .keys()
            .for_each(|id| push(AssetCategory::Chiller, id));
        self.plant
            .condenser_water_loop
            .cooling_towers
            .keys()
            .for_each(|id| push(AssetCategory::CoolingTower, id));
        out
    }

    pub fn chillers(&self) -> &BTreeMap<String, u32> {
        &self.plant.chilled_water_loop.chillers
    }

    pub fn towers(&self) -> &BTreeMap<String, u32> {
        &self.plant.condenser_water_loop.cooling_towers
    }

    pub fn total_racks(&self) -> u64 {
        self.rooms
            .values()
            .flat_map(|r| r.racks.values())
            .map(|&n| u64::from(n))
            .sum()
    }
}

/// Spatial parameters of one data hall, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomLayout {
    pub rack_gap: f64,
    pub padding: f64,
    pub margin: f64,
    pub aisle_gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acu_gap: Option<f64>,
}

impl RoomLayout {
    pub fn acu_gap(&self) -> f64 {
        self.acu_gap.unwrap_or(DEFAULT_ACU_GAP)
    }

    fn band(&self) -> f64 {
        self.margin + self.padding
    }

    fn values(&self) -> [(&'static str, f64); 5] {
        [
            ("rack_gap", self.rack_gap),
            ("padding", self.padding),
            ("margin", self.margin),
            ("aisle_gap", self.aisle_gap),
            ("acu_gap", self.acu_gap()),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialLayout {
    pub rooms: BTreeMap<String, RoomLayout>,
}

/// Homogeneous server population of every rack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerFill {
    pub model: String,
    pub per_rack: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

const GEOM_EPS: f64 = 1e-9;

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn depth(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn contains(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 - GEOM_EPS
            && other.y0 >= self.y0 - GEOM_EPS
            && other.x1 <= self.x1 + GEOM_EPS
            && other.y1 <= self.y1 + GEOM_EPS
    }
    /// Interiors intersect; shared edges do not count.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 - GEOM_EPS
            && other.x0 < self.x1 - GEOM_EPS
            && self.y0 < other.y1 - GEOM_EPS
            && other.y0 < self.y1 - GEOM_EPS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedAsset {
    /// Topology slot the instance belongs to.
    pub slot: String,
    pub category: AssetCategory,
    /// Instance name, e.g. `ACU_A_1`.
    pub name: String,
    /// `None` for plant-zone equipment.
    pub room: Option<String>,
    pub location: Point3,
    pub size: Size3,
    /// Degrees about z; rack rows alternate between 0 and 180.
    pub rotation: f64,
}

impl PlacedAsset {
    pub fn footprint(&self) -> Rect {
        Rect {
            x0: self.location.x,
            y0: self.location.y,
            x1: self.location.x + self.size.x,
            y1: self.location.y + self.size.y,
        }
    }
}

/// Allowed placement areas of one room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub room: Rect,
    pub interior: Rect,
    pub acu_strip: Rect,
    pub rack_rows: Vec<Rect>,
}

/// Rack and ACU slot sizes used to lay out rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprints {
    pub rack: (f64, f64),
    pub acu: (f64, f64),
}

/// Compute the feasible region of a room of `room_dims = (width, depth)`.
///
/// The margin + padding band is removed from every side; the ACU strip runs
/// along the low-y wall of the interior and rack rows of the rack depth
/// follow, each separated by the aisle gap.
pub fn feasible_region(
    layout: &RoomLayout,
    room_dims: (f64, f64),
    footprints: &Footprints,
) -> Result<FeasibleRegion, SceneError> {
    let (w, d) = room_dims;
    let band = layout.band();
    let interior = Rect {
        x0: band,
        y0: band,
        x1: w - band,
        y1: d - band,
    };
    if interior.width() <= 0.0 || interior.depth() <= 0.0 {
        return Err(SceneError::DegenerateRoom(format!(
            "margin and padding ({band:.2} m per side) leave no interior in a {w:.2} x {d:.2} m room"
        )));
    }
    let acu_strip = Rect {
        x0: interior.x0,
        y0: interior.y0,
        x1: interior.x1,
        y1: interior.y0 + footprints.acu.1,
    };
    let (_, rack_d) = footprints.rack;
    let pitch = rack_d + layout.aisle_gap;
    let mut rack_rows = Vec::new();
    if pitch > 0.0 {
        let mut y = acu_strip.y1 + layout.aisle_gap;
        while y + rack_d <= interior.y1 + GEOM_EPS {
            rack_rows.push(Rect {
                x0: interior.x0,
                y0: y,
                x1: interior.x1,
                y1: y + rack_d,
            });
            y += pitch;
        }
    }
    if rack_rows.is_empty() {
        return Err(SceneError::DegenerateRoom(
            "no rack row fits inside the interior".into(),
        ));
    }
    Ok(FeasibleRegion {
        room: Rect {
            x0: 0.0,
            y0: 0.0,
            x1: w,
            y1: d,
        },
        interior,
        acu_strip,
        rack_rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomGeometry {
    pub width: f64,
    pub depth: f64,
    /// `None` when the layout values make the region degenerate.
    pub region: Option<FeasibleRegion>,
    pub rack_rows: usize,
    pub racks_per_row: usize,
}

/// A synthesized scene: topology, layout, asset combination and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub topology: SceneTopology,
    pub layout: SpatialLayout,
    pub servers: ServerFill,
    /// Slot id → bound asset spec (servers keyed by their model id).
    pub assets: BTreeMap<String, AssetSpec>,
    pub rooms: BTreeMap<String, RoomGeometry>,
    pub placed: Vec<PlacedAsset>,
    /// Synthesis notes, e.g. degenerate regions.
    pub flags: Vec<String>,
}

impl Scene {
    pub fn server(&self) -> &crate::assets::ServerSpec {
        self.assets
            .get(&self.servers.model)
            .and_then(AssetSpec::as_server)
            .expect("scene always binds its server model")
    }

    pub fn asset(&self, slot: &str) -> Option<&AssetSpec> {
        self.assets.get(slot)
    }

    /// Servers hosted in a room.
    pub fn room_servers(&self, room: &str) -> u64 {
        self.topology.rooms.get(room).map_or(0, |r| {
            r.racks.values().map(|&n| u64::from(n)).sum::<u64>() * u64::from(self.servers.per_rack)
        })
    }

    /// Topology with slot ids replaced by the ids of the bound assets,
    /// merging counts when two slots bind the same asset.
    pub fn effective_topology(&self) -> SceneTopology {
        let bound = |slot: &String| {
            self.assets
                .get(slot)
                .map_or_else(|| slot.clone(), |a| a.id().to_string())
        };
        let remap = |m: &BTreeMap<String, u32>| {
            let mut out = BTreeMap::new();
            for (slot, n) in m {
                *out.entry(bound(slot)).or_insert(0) += n;
            }
            out
        };
        SceneTopology {
            rooms: self
                .topology
                .rooms
                .iter()
                .map(|(name, r)| {
                    (
                        name.clone(),
                        RoomTopology {
                            racks: remap(&r.racks),
                            acus: remap(&r.acus),
                        },
                    )
                })
                .collect(),
            plant: PlantTopology {
                chilled_water_loop: ChilledWaterLoop {
                    chillers: remap(self.topology.chillers()),
                },
                condenser_water_loop: CondenserWaterLoop {
                    cooling_towers: remap(self.topology.towers()),
                },
            },
        }
    }

    /// Export: effective topology, layout, server fill and one geometry
    /// block per placed instance.
    pub fn to_export(&self) -> SceneExport {
        SceneExport {
            topology: self.effective_topology(),
            layout: self.layout.clone(),
            servers: self.servers.clone(),
            rooms: self
                .rooms
                .iter()
                .map(|(k, g)| {
                    (
                        k.clone(),
                        RoomDims {
                            width: g.width,
                            depth: g.depth,
                        },
                    )
                })
                .collect(),
            geometry: self
                .placed
                .iter()
                .map(|p| {
                    let mut block = BTreeMap::new();
                    block.insert(
                        p.name.clone(),
                        GeometryBlock {
                            location: p.location,
                            size: p.size,
                        },
                    );
                    block
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryBlock {
    pub location: Point3,
    pub size: Size3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomDims {
    pub width: f64,
    pub depth: f64,
}

/// JSON scene file: topology and layout in the design-response schema plus
/// geometry blocks `{ "<name>": { "location": {x,y,z}, "size": {x,y,z} } }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneExport {
    pub topology: SceneTopology,
    pub layout: SpatialLayout,
    pub servers: ServerFill,
    #[serde(default)]
    pub rooms: BTreeMap<String, RoomDims>,
    #[serde(default)]
    pub geometry: Vec<BTreeMap<String, GeometryBlock>>,
}

fn resolve(
    library: &AssetLibrary,
    category: AssetCategory,
    id: &str,
) -> Result<AssetSpec, SceneError> {
    library
        .get_in(category, id)
        .cloned()
        .ok_or_else(|| SceneError::UnknownModel {
            category,
            id: id.to_string(),
        })
}

/// Bind every topology slot to the library asset with the same id and lay
/// out the scene.
pub fn synthesize_scene(
    topology: &SceneTopology,
    layout: &SpatialLayout,
    library: &AssetLibrary,
    servers: &ServerFill,
) -> Result<Scene, SceneError> {
    let mut assets = BTreeMap::new();
    for (category, id) in topology.slots() {
        assets.insert(id.clone(), resolve(library, category, &id)?);
    }
    assets.insert(
        servers.model.clone(),
        resolve(library, AssetCategory::Server, &servers.model)?,
    );
    synthesize_with_assets(topology, layout, assets, servers)
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b.max(1))
}

/// Row count for `n` racks: about square, even when there are at least two
/// racks so rows pair up around aisles.
fn row_plan(n: usize) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let mut rows = (n as f64).sqrt().ceil() as usize;
    if n >= 2 && rows % 2 == 1 {
        rows += 1;
    }
    let cols = ceil_div(n, rows);
    (ceil_div(n, cols), cols)
}

/// Lay out a scene whose slots are already bound to specs.
pub fn synthesize_with_assets(
    topology: &SceneTopology,
    layout: &SpatialLayout,
    assets: BTreeMap<String, AssetSpec>,
    servers: &ServerFill,
) -> Result<Scene, SceneError> {
    if topology.rooms.is_empty() {
        return Err(SceneError::NoRooms);
    }
    for (category, slot) in topology.slots() {
        match assets.get(&slot) {
            Some(a) if a.category() == category => {}
            _ => {
                return Err(SceneError::UnknownModel {
                    category,
                    id: slot,
                })
            }
        }
    }
    if !matches!(assets.get(&servers.model), Some(AssetSpec::Server(_))) {
        return Err(SceneError::UnknownModel {
            category: AssetCategory::Server,
            id: servers.model.clone(),
        });
    }

    let mut rooms = BTreeMap::new();
    let mut placed = Vec::new();
    let mut flags = Vec::new();
    let mut max_width: f64 = 0.0;

    for (name, room) in &topology.rooms {
        let n_racks: u32 = room.racks.values().sum();
        let n_acus: u32 = room.acus.values().sum();
        if n_racks == 0 && n_acus == 0 {
            return Err(SceneError::EmptyRoom(name.clone()));
        }
        let lay = layout
            .rooms
            .get(name)
            .ok_or_else(|| SceneError::MissingLayout(name.clone()))?;

        let size_of = |slot: &String| assets[slot].size();
        let rack_fp = room.racks.keys().map(size_of).fold((0.0_f64, 0.0_f64), |m, s| {
            (m.0.max(s.x), m.1.max(s.y))
        });
        let acu_fp = room.acus.keys().map(size_of).fold((0.0_f64, 0.0_f64), |m, s| {
            (m.0.max(s.x), m.1.max(s.y))
        });

        let (rows, cols) = row_plan(n_racks as usize);
        let band = lay.band();
        let row_len = if cols > 0 {
            cols as f64 * rack_fp.0 + (cols as f64 - 1.0) * lay.rack_gap
        } else {
            0.0
        };
        let strip_len = if n_acus > 0 {
            f64::from(n_acus) * acu_fp.0 + (f64::from(n_acus) - 1.0) * lay.acu_gap()
        } else {
            0.0
        };
        let width = 2.0 * band + row_len.max(strip_len).max(rack_fp.0).max(acu_fp.0);
        let depth = 2.0 * band
            + acu_fp.1
            + lay.aisle_gap
            + rows.max(1) as f64 * rack_fp.1
            + (rows.max(1) as f64 - 1.0) * lay.aisle_gap;
        max_width = max_width.max(width);

        let footprints = Footprints {
            rack: rack_fp,
            acu: acu_fp,
        };
        let region = match feasible_region(lay, (width, depth), &footprints) {
            Ok(r) => Some(r),
            Err(e) => {
                flags.push(format!("{name}: {e}"));
                None
            }
        };

        // Positions follow the row plan directly so that the geometry
        // reflects the layout values even when they are invalid.
        let x0 = band;
        let y0 = band;
        let mut idx = 0usize;
        for (slot, &count) in &room.acus {
            let s = assets[slot].size();
            for k in 0..count {
                placed.push(PlacedAsset {
                    slot: slot.clone(),
                    category: AssetCategory::Acu,
                    name: format!("{name}/{slot}_{}", k + 1),
                    room: Some(name.clone()),
                    location: Point3 {
                        x: x0 + idx as f64 * (acu_fp.0 + lay.acu_gap()),
                        y: y0,
                        z: 0.0,
                    },
                    size: s,
                    rotation: 0.0,
                });
                idx += 1;
            }
        }
        let first_row_y = y0 + acu_fp.1 + lay.aisle_gap;
        let mut j = 0usize;
        for (slot, &count) in &room.racks {
            let s = assets[slot].size();
            for k in 0..count {
                let row = j / cols.max(1);
                let col = j % cols.max(1);
                placed.push(PlacedAsset {
                    slot: slot.clone(),
                    category: AssetCategory::Rack,
                    name: format!("{name}/{slot}_{}", k + 1),
                    room: Some(name.clone()),
                    location: Point3 {
                        x: x0 + col as f64 * (rack_fp.0 + lay.rack_gap),
                        y: first_row_y + row as f64 * (rack_fp.1 + lay.aisle_gap),
                        z: 0.0,
                    },
                    size: s,
                    rotation: if row % 2 == 0 { 0.0 } else { 180.0 },
                });
                j += 1;
            }
        }
        rooms.insert(
            name.clone(),
            RoomGeometry {
                width,
                depth,
                region,
                rack_rows: rows,
                racks_per_row: cols,
            },
        );
    }

    // Plant zone: one line of equipment beside the widest room.
    let mut x = max_width + PLANT_OFFSET;
    let plant = topology
        .chillers()
        .iter()
        .map(|(s, n)| (AssetCategory::Chiller, s, *n))
        .chain(
            topology
                .towers()
                .iter()
                .map(|(s, n)| (AssetCategory::CoolingTower, s, *n)),
        );
    for (category, slot, count) in plant {
        let s = assets[slot].size();
        for k in 0..count {
            placed.push(PlacedAsset {
                slot: slot.clone(),
                category,
                name: format!("plant/{slot}_{}", k + 1),
                room: None,
                location: Point3 { x, y: 0.0, z: 0.0 },
                size: s,
                rotation: 0.0,
            });
            x += s.x + 1.0;
        }
    }

    Ok(Scene {
        topology: topology.clone(),
        layout: layout.clone(),
        servers: servers.clone(),
        assets,
        rooms,
        placed,
        flags,
    })
}

/// One failed clause of the design constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub message: String,
    /// Slack of the clause (negative when violated) in the clause's units.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub syntax_valid: bool,
    pub geometry_ok: bool,
    pub power_ok: bool,
    pub cooling_ok: bool,
    pub layout_rules_ok: bool,
    pub violations: Vec<Violation>,
    /// Per-room cooling slack Σ H_c − Σ h_s at full utilization, kW.
    pub cooling_slack_kw: BTreeMap<String, f64>,
}

impl ConstraintReport {
    pub fn is_valid(&self) -> bool {
        self.syntax_valid
            && self.geometry_ok
            && self.power_ok
            && self.cooling_ok
            && self.layout_rules_ok
    }

    /// Report for a candidate that never became a scene.
    pub fn syntax_failure(message: impl Into<String>) -> Self {
        ConstraintReport {
            syntax_valid: false,
            geometry_ok: false,
            power_ok: false,
            cooling_ok: false,
            layout_rules_ok: false,
            violations: vec![Violation {
                constraint: "syntax".into(),
                message: message.into(),
                magnitude: -1.0,
            }],
            cooling_slack_kw: BTreeMap::new(),
        }
    }
}

/// Options for [`check_constraints_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub min_aisle: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            min_aisle: DEFAULT_MIN_AISLE,
        }
    }
}

pub fn check_constraints(scene: &Scene, library: &AssetLibrary) -> ConstraintReport {
    check_constraints_with(scene, library, &CheckOptions::default())
}

/// Evaluate the geometry, rack power, room cooling and layout-multiplicity
/// rules at full utilization.
///
/// `library` is used to confirm that every bound asset still exists in the
/// catalogue (syntax validity); the physics comes from the scene's bindings.
pub fn check_constraints_with(
    scene: &Scene,
    library: &AssetLibrary,
    opts: &CheckOptions,
) -> ConstraintReport {
    let mut v: Vec<Violation> = Vec::new();
    let fail = |v: &mut Vec<Violation>, c: &str, m: String, mag: f64| {
        v.push(Violation {
            constraint: c.to_string(),
            message: m,
            magnitude: mag,
        })
    };

    // syntax: every room laid out, every binding resolvable in the catalogue
    let mut syntax_valid = true;
    for room in scene.topology.rooms.keys() {
        if !scene.layout.rooms.contains_key(room) {
            syntax_valid = false;
            fail(&mut v, "syntax", format!("room {room} has no layout"), -1.0);
        }
    }
    for spec in scene.assets.values() {
        if library.get_in(spec.category(), spec.id()).is_none() {
            syntax_valid = false;
            fail(
                &mut v,
                "syntax",
                format!("{} {} is not in the asset library", spec.category(), spec.id()),
                -1.0,
            );
        }
    }

    // geometry
    let mut geometry_ok = true;
    for (name, lay) in &scene.layout.rooms {
        if !scene.topology.rooms.contains_key(name) {
            continue;
        }
        for (field, value) in lay.values() {
            if !(value >= 0.0) {
                geometry_ok = false;
                fail(
                    &mut v,
                    "geometry.negative_gap",
                    format!("room {name}: {field} = {value} must be >= 0"),
                    value,
                );
            }
        }
        if lay.aisle_gap < opts.min_aisle {
            geometry_ok = false;
            fail(
                &mut v,
                "geometry.aisle_clearance",
                format!(
                    "room {name}: aisle_gap {:.2} m below the {:.2} m clearance",
                    lay.aisle_gap, opts.min_aisle
                ),
                lay.aisle_gap - opts.min_aisle,
            );
        }
    }
    let mut by_room: BTreeMap<&str, Vec<&PlacedAsset>> = BTreeMap::new();
    for p in &scene.placed {
        if let Some(room) = &p.room {
            by_room.entry(room.as_str()).or_default().push(p);
        }
    }
    for (room, items) in &by_room {
        let Some(geom) = scene.rooms.get(*room) else {
            continue;
        };
        let Some(region) = &geom.region else {
            geometry_ok = false;
            fail(
                &mut v,
                "geometry.region",
                format!("room {room}: feasible region is empty"),
                -1.0,
            );
            continue;
        };
        for p in items {
            let fp = p.footprint();
            let inside = region.room.contains(&fp)
                && region.interior.contains(&fp)
                && match p.category {
                    AssetCategory::Acu => region.acu_strip.contains(&fp),
                    _ => region.rack_rows.iter().any(|r| r.contains(&fp)),
                };
            if !inside {
                geometry_ok = false;
                fail(
                    &mut v,
                    "geometry.containment",
                    format!("{} lies outside the feasible region", p.name),
                    -1.0,
                );
            }
        }
        for (i, a) in items.iter().enumerate() {
            let fa = a.footprint();
            for b in &items[i + 1..] {
                if fa.overlaps(&b.footprint()) {
                    geometry_ok = false;
                    fail(
                        &mut v,
                        "geometry.overlap",
                        format!("{} overlaps {}", a.name, b.name),
                        -1.0,
                    );
                }
            }
        }
    }

    // rack power and slots at u = 1
    let mut power_ok = true;
    let server = scene.assets.get(&scene.servers.model).and_then(AssetSpec::as_server);
    let per_rack = scene.servers.per_rack;
    if let Some(server) = server {
        let demand = f64::from(per_rack) * server.peak_power;
        let mut seen = Vec::new();
        for room in scene.topology.rooms.values() {
            for slot in room.racks.keys() {
                if seen.contains(&slot) {
                    continue;
                }
                seen.push(slot);
                let Some(rack) = scene.assets.get(slot).and_then(AssetSpec::as_rack) else {
                    continue;
                };
                let slack = rack.power_capacity - demand;
                if slack < 0.0 {
                    power_ok = false;
                    fail(
                        &mut v,
                        "power",
                        format!(
                            "rack {slot}: {per_rack} servers draw {demand:.2} kW > capacity {:.2} kW",
                            rack.power_capacity
                        ),
                        slack,
                    );
                }
                if per_rack > rack.server_slots {
                    power_ok = false;
                    fail(
                        &mut v,
                        "power.slots",
                        format!(
                            "rack {slot}: {per_rack} servers exceed {} slots",
                            rack.server_slots
                        ),
                        f64::from(rack.server_slots) - f64::from(per_rack),
                    );
                }
            }
        }
    } else {
        power_ok = false;
        syntax_valid = false;
        fail(&mut v, "syntax", "server model is not bound".into(), -1.0);
    }

    // cooling per room at u = 1
    let mut cooling_ok = true;
    let mut cooling_slack_kw = BTreeMap::new();
    if let Some(server) = server {
        let heat_per_server = server.heat_factor * server.peak_power;
        for (name, room) in &scene.topology.rooms {
            let heat = scene.room_servers(name) as f64 * heat_per_server;
            let capacity: f64 = room
                .acus
                .iter()
                .filter_map(|(slot, &n)| {
                    scene
                        .assets
                        .get(slot)
                        .and_then(AssetSpec::as_acu)
                        .map(|a| f64::from(n) * a.cooling_capacity)
                })
                .sum();
            let slack = capacity - heat;
            cooling_slack_kw.insert(name.clone(), slack);
            if slack < 0.0 {
                cooling_ok = false;
                fail(
                    &mut v,
                    "cooling",
                    format!(
                        "room {name}: server heat {heat:.1} kW exceeds ACU capacity {capacity:.1} kW"
                    ),
                    slack,
                );
            }
        }
    }

    // multiplicity rules
    let mut layout_rules_ok = true;
    for (name, room) in &scene.topology.rooms {
        let racks: u32 = room.racks.values().sum();
        let acus: u32 = room.acus.values().sum();
        if acus % 2 != 0 {
            layout_rules_ok = false;
            fail(
                &mut v,
                "layout.acu_multiple",
                format!("room {name}: {acus} ACUs is not a multiple of 2"),
                -f64::from(acus % 2),
            );
        }
        if racks % 4 != 0 {
            layout_rules_ok = false;
            fail(
                &mut v,
                "layout.rack_multiple",
                format!("room {name}: {racks} racks is not a multiple of 4"),
                -f64::from(racks % 4),
            );
        }
        if racks < 16 {
            layout_rules_ok = false;
            fail(
                &mut v,
                "layout.min_racks",
                format!("room {name}: {racks} racks, at least 16 required"),
                f64::from(racks) - 16.0,
            );
        }
        if acus < 2 {
            layout_rules_ok = false;
            fail(
                &mut v,
                "layout.min_acus",
                format!("room {name}: {acus} ACUs, at least 2 required"),
                f64::from(acus) - 2.0,
            );
        }
    }

    ConstraintReport {
        syntax_valid,
        geometry_ok,
        power_ok,
        cooling_ok,
        layout_rules_ok,
        violations: v,
        cooling_slack_kw,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::assets::{AcuSpec, RackSpec, ServerSpec};

    pub(crate) fn acu_a() -> AssetSpec {
        AssetSpec::Acu(AcuSpec {
            id: "ACU_A".into(),
            cooling_capacity: 146.8,
            cooling_type: "DX".into(),
            pressure_rise: 460.4,
            design_water_flow_rate: 0.003097,
            design_air_flow_rate: 13.099,
            maximum_flow_rate: 12.381,
            design_inlet_water_temperature: 16.6,
            design_outlet_water_temperature: 23.6,
            design_inlet_air_temperature: 34.7,
            design_outlet_air_temperature: 25.1,
            design_water_temperature_difference: 7.9,
            size: Some(Size3::new(0.995, 2.23, 0.0)),
        })
    }

    pub(crate) fn small_library() -> AssetLibrary {
        AssetLibrary::from_assets([
            acu_a(),
            AssetSpec::Rack(RackSpec {
                id: "RACK_A".into(),
                power_capacity: 4.0,
                server_slots: 16,
                size: Some(Size3::new(0.6, 1.2, 2.0)),
            }),
            AssetSpec::Rack(RackSpec {
                id: "RACK_LOW".into(),
                power_capacity: 2.0,
                server_slots: 16,
                size: None,
            }),
            AssetSpec::Server(ServerSpec {
                id: "SRV_A".into(),
                idle_power: 0.1,
                peak_power: 0.3,
                computing_capacity: 1e13,
                heat_factor: 1.0,
                size: None,
            }),
        ])
        .unwrap()
    }

    pub(crate) fn one_room(racks: u32, acus: u32) -> (SceneTopology, SpatialLayout) {
        let mut topo = SceneTopology::default();
        let mut room = RoomTopology::default();
        room.racks.insert("RACK_A".into(), racks);
        room.acus.insert("ACU_A".into(), acus);
        topo.rooms.insert("room_1".into(), room);
        let mut layout = SpatialLayout::default();
        layout.rooms.insert(
            "room_1".into(),
            RoomLayout {
                rack_gap: 0.1,
                padding: 0.5,
                margin: 1.0,
                aisle_gap: 1.5,
                acu_gap: None,
            },
        );
        (topo, layout)
    }

    pub(crate) fn fill() -> ServerFill {
        ServerFill {
            model: "SRV_A".into(),
            per_rack: 8,
        }
    }

    #[test]
    fn interior_subtracts_band() {
        let lay = RoomLayout {
            rack_gap: 0.0,
            padding: 0.5,
            margin: 1.0,
            aisle_gap: 1.2,
            acu_gap: None,
        };
        let fp = Footprints {
            rack: (0.6, 1.2),
            acu: (1.0, 2.0),
        };
        let r = feasible_region(&lay, (10.0, 10.0), &fp).unwrap();
        assert_eq!(r.interior.width(), 7.0);
        assert_eq!(r.interior.depth(), 7.0);
        // rows at 1.5 + 2 + 1.2 = 4.7, then 4.7 + 1.2 + 1.2 = 7.1
        assert_eq!(r.rack_rows.len(), 2);
        assert!((r.rack_rows[1].y0 - r.rack_rows[0].y0 - (1.2 + 1.2)).abs() < 1e-12);
    }

    #[test]
    fn oversized_margin_is_degenerate() {
        let lay = RoomLayout {
            rack_gap: 0.0,
            padding: 1.0,
            margin: 5.0,
            aisle_gap: 1.2,
            acu_gap: None,
        };
        let fp = Footprints {
            rack: (0.6, 1.2),
            acu: (1.0, 2.0),
        };
        assert!(matches!(
            feasible_region(&lay, (10.0, 10.0), &fp),
            Err(SceneError::DegenerateRoom(_))
        ));
    }

    #[test]
    fn sixteen_rack_room_places_without_overlap() {
        let lib = small_library();
        let (topo, layout) = one_room(16, 2);
        let scene = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap();
        assert_eq!(scene.placed.len(), 18);
        let geom = &scene.rooms["room_1"];
        assert_eq!((geom.rack_rows, geom.racks_per_row), (4, 4));
        for (i, a) in scene.placed.iter().enumerate() {
            for b in &scene.placed[i + 1..] {
                assert!(!a.footprint().overlaps(&b.footprint()), "{} / {}", a.name, b.name);
            }
        }
        let again = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap();
        assert_eq!(scene, again);
        let report = check_constraints(&scene, &lib);
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn empty_topology_is_rejected() {
        let lib = small_library();
        let err = synthesize_scene(&SceneTopology::default(), &SpatialLayout::default(), &lib, &fill())
            .unwrap_err();
        assert!(err.to_string().contains("room must contain assets"));
        let (mut topo, layout) = one_room(0, 0);
        topo.rooms.get_mut("room_1").unwrap().racks.clear();
        let err = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap_err();
        assert!(err.to_string().contains("room must contain assets"));
    }

    #[test]
    fn unknown_model_is_rejected() {
        let lib = small_library();
        let (mut topo, layout) = one_room(16, 2);
        topo.rooms.get_mut("room_1").unwrap().acus.insert("ACU_Z".into(), 2);
        assert!(matches!(
            synthesize_scene(&topo, &layout, &lib, &fill()),
            Err(SceneError::UnknownModel { .. })
        ));
    }

    #[test]
    fn cooling_check_for_catalogue_acus() {
        // 16 racks x 8 servers x 0.3 kW = 38.4 kW against 2 x 146.8 kW
        let lib = small_library();
        let (topo, layout) = one_room(16, 2);
        let scene = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap();
        let r = check_constraints(&scene, &lib);
        assert!(r.cooling_ok);
        assert!((r.cooling_slack_kw["room_1"] - (293.6 - 38.4)).abs() < 1e-9);
    }

    #[test]
    fn fifteen_racks_break_two_rules() {
        let lib = small_library();
        let (topo, layout) = one_room(15, 2);
        let scene = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap();
        let r = check_constraints(&scene, &lib);
        assert!(!r.layout_rules_ok);
        let ids: Vec<_> = r.violations.iter().map(|v| v.constraint.as_str()).collect();
        assert!(ids.contains(&"layout.rack_multiple"));
        assert!(ids.contains(&"layout.min_racks"));
    }

    #[test]
    fn overloaded_rack_reports_power_slack() {
        let lib = small_library();
        let (mut topo, layout) = one_room(16, 2);
        let room = topo.rooms.get_mut("room_1").unwrap();
        room.racks.clear();
        room.racks.insert("RACK_LOW".into(), 16);
        let scene = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap();
        let r = check_constraints(&scene, &lib);
        assert!(!r.power_ok);
        let p = r.violations.iter().find(|v| v.constraint == "power").unwrap();
        assert!((p.magnitude - (2.0 - 2.4)).abs() < 1e-12);
    }

    #[test]
    fn negative_gap_fails_geometry_only() {
        let lib = small_library();
        let (topo, mut layout) = one_room(16, 2);
        layout.rooms.get_mut("room_1").unwrap().rack_gap = -0.3;
        let scene = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap();
        let r = check_constraints(&scene, &lib);
        assert!(!r.geometry_ok);
        assert!(r.power_ok && r.cooling_ok && r.layout_rules_ok);
        assert!(r.violations.iter().any(|v| v.constraint == "geometry.overlap"));
    }

    #[test]
    fn narrow_aisle_fails_clearance() {
        let lib = small_library();
        let (topo, mut layout) = one_room(16, 2);
        layout.rooms.get_mut("room_1").unwrap().aisle_gap = 0.8;
        let scene = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap();
        let r = check_constraints(&scene, &lib);
        assert!(!r.geometry_ok);
        assert!(r.violations.iter().any(|v| v.constraint == "geometry.aisle_clearance"));
    }

    #[test]
    fn effective_topology_follows_bindings() {
        let lib = small_library();
        let (topo, layout) = one_room(16, 2);
        let mut scene = synthesize_scene(&topo, &layout, &lib, &fill()).unwrap();
        let mut rebound = lib.get("RACK_LOW").unwrap().clone();
        if let AssetSpec::Rack(r) = &mut rebound {
            r.size = Some(Size3::new(0.6, 1.2, 2.0));
        }
        scene.assets.insert("RACK_A".into(), rebound);
        let eff = scene.effective_topology();
        assert_eq!(eff.rooms["room_1"].racks["RACK_LOW"], 16);
        assert_eq!(scene.topology, topo);
    }

    #[test]
    fn row_plan_shapes() {
        assert_eq!(row_plan(16), (4, 4));
        assert_eq!(row_plan(20), (5, 4));
        assert_eq!(row_plan(1), (1, 1));
        let (r, c) = row_plan(1252);
        assert!(r * c >= 1252 && (r - 1) * c < 1252);
    }
}
