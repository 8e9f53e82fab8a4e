//! SimReady asset types and the asset library.
//!
//! A library file is a JSON object with one section per category
//! (`acus`, `racks`, `servers`, `chillers`, `cooling_towers`); each section
//! maps an asset id to its attributes. ACU attributes use the catalogue field
//! names verbatim (`coolingCapacity`, `pressureRise`, ...). Every asset may
//! carry an optional `size` block `{x, y, z}` in meters.
//!
//! # Parameter vectors
//!
//! Nearest-asset selection compares assets of one category through a fixed
//! field order:
//!
//! | category        | fields                                                                 |
//! |-----------------|------------------------------------------------------------------------|
//! | ACU             | coolingCapacity, pressureRise, designAirFlowRate, designWaterFlowRate, designInletWaterTemperature, designOutletAirTemperature |
//! | rack            | powerCapacity, serverSlots, size.x, size.y                             |
//! | server          | idlePower, peakPower, computingCapacity, heatFactor                    |
//! | chiller         | ratedCapacity, carnotFraction, chwSupplySetpoint, ratedPumpFraction    |
//! | cooling tower   | ratedHeatRejection, ratedFanPower, approach                            |
//!
//! Categorical fields (`coolingType`) never enter a vector.
//!
//! # Synthetic libraries
//!
//! [`generate_synthetic_library`] draws every field uniformly from the ranges
//! below (ChaCha8 stream, so a seed reproduces the same library everywhere):
//!
//! - ACU: coolingCapacity 50..500 kW, pressureRise 200..800 Pa, airflow per
//!   kW of capacity 0.04..0.12 m³/s, maximumFlowRate 0.9..1.3 × design airflow,
//!   inlet water 7..14 °C, water ΔT 5..10 K, inlet air 30..38 °C, outlet air
//!   18..27 °C, water flow = capacity / (4186 ΔT) × 0.6..1.0 m³/s.
//! - Rack: powerCapacity 2..20 kW, serverSlots 8..42, footprint 0.6..0.8 × 1.0..1.2 m.
//! - Server: peakPower 0.2..0.8 kW, idle 0.3..0.6 × peak, computingCapacity
//!   1e12..1e14 FLOPS, heatFactor 0.9..1.0.
//! - Chiller: ratedCapacity 200..3000 kW, carnotFraction 0.35..0.65,
//!   chwSupplySetpoint 5..10 °C, ratedPumpFraction 0.01..0.04.
//! - Cooling tower: ratedHeatRejection 300..4000 kW, ratedFanPower
//!   0.005..0.02 × rated rejection, approach 2..6 K.
//!
//! The first asset of every category is redrawn from the upper part of its
//! capacity ranges so that each library can serve every experiment scale.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("cannot read asset library {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed asset library: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("asset {id}: {message}")]
    Validation { id: String, message: String },
    #[error("duplicate asset id {0}")]
    DuplicateId(String),
    #[error("unknown asset {0}")]
    Unknown(String),
    #[error("library has no {0} assets")]
    EmptyCategory(AssetCategory),
    #[error("parameter vector for {category} must have {expected} entries, got {got}")]
    Dimension {
        category: AssetCategory,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetCategory {
    Acu,
    Rack,
    Server,
    Chiller,
    CoolingTower,
}

impl AssetCategory {
    pub const ALL: [AssetCategory; 5] = [
        AssetCategory::Acu,
        AssetCategory::Rack,
        AssetCategory::Server,
        AssetCategory::Chiller,
        AssetCategory::CoolingTower,
    ];

    /// Section name in library files.
    pub fn section(self) -> &'static str {
        match self {
            AssetCategory::Acu => "acus",
            AssetCategory::Rack => "racks",
            AssetCategory::Server => "servers",
            AssetCategory::Chiller => "chillers",
            AssetCategory::CoolingTower => "cooling_towers",
        }
    }

    /// Field names of the parameter vector, in order.
    pub fn parameter_fields(self) -> &'static [&'static str] {
        match self {
            AssetCategory::Acu => &ACU_FIELDS,
            AssetCategory::Rack => &["powerCapacity", "serverSlots", "size.x", "size.y"],
            AssetCategory::Server => &["idlePower", "peakPower", "computingCapacity", "heatFactor"],
            AssetCategory::Chiller => &CHILLER_FIELDS,
            AssetCategory::CoolingTower => &TOWER_FIELDS,
        }
    }

    /// Categories whose parameters the asset optimizer adjusts.
    pub fn is_optimizable(self) -> bool {
        matches!(
            self,
            AssetCategory::Acu | AssetCategory::Chiller | AssetCategory::CoolingTower
        )
    }

    fn default_size(self) -> Size3 {
        match self {
            AssetCategory::Acu => Size3::new(0.995, 2.23, 2.0),
            AssetCategory::Rack => Size3::new(0.6, 1.2, 2.0),
            AssetCategory::Server => Size3::new(0.45, 0.7, 0.09),
            AssetCategory::Chiller => Size3::new(3.0, 1.5, 2.0),
            AssetCategory::CoolingTower => Size3::new(4.0, 4.0, 4.5),
        }
    }
}

impl fmt::Display for AssetCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AssetCategory::Acu => "ACU",
            AssetCategory::Rack => "rack",
            AssetCategory::Server => "server",
            AssetCategory::Chiller => "chiller",
            AssetCategory::CoolingTower => "cooling tower",
        };
        f.write_str(name)
    }
}

pub const ACU_FIELDS: [&str; 6] = [
    "coolingCapacity",
    "pressureRise",
    "designAirFlowRate",
    "designWaterFlowRate",
    "designInletWaterTemperature",
    "designOutletAirTemperature",
];
pub const CHILLER_FIELDS: [&str; 4] = [
    "ratedCapacity",
    "carnotFraction",
    "chwSupplySetpoint",
    "ratedPumpFraction",
];
pub const TOWER_FIELDS: [&str; 3] = ["ratedHeatRejection", "ratedFanPower", "approach"];

/// Axis-aligned extent in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Size3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Size3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AcuSpec {
    #[serde(skip)]
    pub id: String,
    /// kW
    pub cooling_capacity: f64,
    pub cooling_type: String,
    /// Pa
    pub pressure_rise: f64,
    /// m³/s
    pub design_water_flow_rate: f64,
    /// m³/s
    pub design_air_flow_rate: f64,
    /// m³/s
    pub maximum_flow_rate: f64,
    pub design_inlet_water_temperature: f64,
    pub design_outlet_water_temperature: f64,
    pub design_inlet_air_temperature: f64,
    pub design_outlet_air_temperature: f64,
    pub design_water_temperature_difference: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Size3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RackSpec {
    #[serde(skip)]
    pub id: String,
    /// kW
    pub power_capacity: f64,
    pub server_slots: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Size3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServerSpec {
    #[serde(skip)]
    pub id: String,
    /// kW at zero utilization
    pub idle_power: f64,
    /// kW at full utilization
    pub peak_power: f64,
    /// FLOPS
    pub computing_capacity: f64,
    /// Fraction of electrical power emitted as heat.
    pub heat_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Size3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ChillerSpec {
    #[serde(skip)]
    pub id: String,
    /// kW of evaporator load
    pub rated_capacity: f64,
    /// Fraction of the Carnot COP actually achieved.
    pub carnot_fraction: f64,
    /// Chilled-water supply temperature, °C.
    pub chw_supply_setpoint: f64,
    /// Pump power per unit of evaporator load.
    pub rated_pump_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Size3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TowerSpec {
    #[serde(skip)]
    pub id: String,
    /// kW
    pub rated_heat_rejection: f64,
    /// kW at rated heat rejection
    pub rated_fan_power: f64,
    /// Condenser water leaving temperature above wet-bulb, K.
    pub approach: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Size3>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssetSpec {
    Acu(AcuSpec),
    Rack(RackSpec),
    Server(ServerSpec),
    Chiller(ChillerSpec),
    CoolingTower(TowerSpec),
}

fn check(id: &str, ok: bool, message: &str) -> Result<(), AssetError> {
    if ok {
        Ok(())
    } else {
        Err(AssetError::Validation {
            id: id.to_string(),
            message: message.to_string(),
        })
    }
}

fn check_size(id: &str, size: &Option<Size3>) -> Result<(), AssetError> {
    if let Some(s) = size {
        check(id, s.x > 0.0 && s.y > 0.0, "size.x and size.y must be > 0")?;
        check(id, s.z >= 0.0, "size.z must be >= 0")?;
    }
    Ok(())
}

impl AssetSpec {
    pub fn id(&self) -> &str {
        match self {
            AssetSpec::Acu(a) => &a.id,
            AssetSpec::Rack(a) => &a.id,
            AssetSpec::Server(a) => &a.id,
            AssetSpec::Chiller(a) => &a.id,
            AssetSpec::CoolingTower(a) => &a.id,
        }
    }

    pub fn category(&self) -> AssetCategory {
        match self {
            AssetSpec::Acu(_) => AssetCategory::Acu,
            AssetSpec::Rack(_) => AssetCategory::Rack,
            AssetSpec::Server(_) => AssetCategory::Server,
            AssetSpec::Chiller(_) => AssetCategory::Chiller,
            AssetSpec::CoolingTower(_) => AssetCategory::CoolingTower,
        }
    }

    /// Footprint and height, falling back to the category default.
    pub fn size(&self) -> Size3 {
        let explicit = match self {
            AssetSpec::Acu(a) => a.size,
            AssetSpec::Rack(a) => a.size,
            AssetSpec::Server(a) => a.size,
            AssetSpec::Chiller(a) => a.size,
            AssetSpec::CoolingTower(a) => a.size,
        };
        explicit.unwrap_or_else(|| self.category().default_size())
    }

    pub fn validate(&self) -> Result<(), AssetError> {
        let id = self.id();
        match self {
            AssetSpec::Acu(a) => {
                check(id, a.cooling_capacity > 0.0, "coolingCapacity must be > 0")?;
                check(id, a.pressure_rise >= 0.0, "pressureRise must be >= 0")?;
                check(id, a.design_water_flow_rate > 0.0, "designWaterFlowRate must be > 0")?;
                check(id, a.design_air_flow_rate > 0.0, "designAirFlowRate must be > 0")?;
                check(id, a.maximum_flow_rate > 0.0, "maximumFlowRate must be > 0")?;
                check(
                    id,
                    a.design_outlet_water_temperature > a.design_inlet_water_temperature,
                    "designOutletWaterTemperature must exceed designInletWaterTemperature",
                )?;
                check(
                    id,
                    a.design_inlet_air_temperature > a.design_outlet_air_temperature,
                    "designInletAirTemperature must exceed designOutletAirTemperature",
                )?;
                check(
                    id,
                    a.design_water_temperature_difference > 0.0,
                    "designWaterTemperatureDifference must be > 0",
                )?;
                check_size(id, &a.size)
            }
            AssetSpec::Rack(r) => {
                check(id, r.power_capacity > 0.0, "powerCapacity must be > 0")?;
                check(id, r.server_slots >= 1, "serverSlots must be >= 1")?;
                check_size(id, &r.size)
            }
            AssetSpec::Server(s) => {
                check(id, s.idle_power > 0.0, "idlePower must be > 0")?;
                check(id, s.idle_power <= s.peak_power, "idlePower must not exceed peakPower")?;
                check(id, s.computing_capacity >= 0.0, "computingCapacity must be >= 0")?;
                check(
                    id,
                    s.heat_factor > 0.0 && s.heat_factor <= 1.0,
                    "heatFactor must be in (0, 1]",
                )?;
                check_size(id, &s.size)
            }
            AssetSpec::Chiller(c) => {
                check(id, c.rated_capacity > 0.0, "ratedCapacity must be > 0")?;
                check(
                    id,
                    c.carnot_fraction > 0.0 && c.carnot_fraction < 1.0,
                    "carnotFraction must be in (0, 1)",
                )?;
                check(id, c.rated_pump_fraction >= 0.0, "ratedPumpFraction must be >= 0")?;
                check_size(id, &c.size)
            }
            AssetSpec::CoolingTower(t) => {
                check(id, t.rated_heat_rejection > 0.0, "ratedHeatRejection must be > 0")?;
                check(id, t.rated_fan_power >= 0.0, "ratedFanPower must be >= 0")?;
                check(id, t.approach > 0.0, "approach must be > 0")?;
                check_size(id, &t.size)
            }
        }
    }

    /// Continuous parameters in the documented per-category order.
    pub fn parameter_vector(&self) -> Vec<f64> {
        match self {
            AssetSpec::Acu(a) => vec![
                a.cooling_capacity,
                a.pressure_rise,
                a.design_air_flow_rate,
                a.design_water_flow_rate,
                a.design_inlet_water_temperature,
                a.design_outlet_air_temperature,
            ],
            AssetSpec::Rack(r) => {
                let s = self.size();
                vec![r.power_capacity, f64::from(r.server_slots), s.x, s.y]
            }
            AssetSpec::Server(s) => vec![
                s.idle_power,
                s.peak_power,
                s.computing_capacity,
                s.heat_factor,
            ],
            AssetSpec::Chiller(c) => vec![
                c.rated_capacity,
                c.carnot_fraction,
                c.chw_supply_setpoint,
                c.rated_pump_fraction,
            ],
            AssetSpec::CoolingTower(t) => {
                vec![t.rated_heat_rejection, t.rated_fan_power, t.approach]
            }
        }
    }

    /// A copy of this asset with its parameter vector replaced, i.e. the
    /// "ideal" variant of the asset. Fields outside the vector are kept.
    pub fn with_parameter_vector(&self, values: &[f64]) -> Result<AssetSpec, AssetError> {
        let expected = self.category().parameter_fields().len();
        if values.len() != expected {
            return Err(AssetError::Dimension {
                category: self.category(),
                expected,
                got: values.len(),
            });
        }
        let v = values;
        Ok(match self {
            AssetSpec::Acu(a) => AssetSpec::Acu(AcuSpec {
                cooling_capacity: v[0],
                pressure_rise: v[1],
                design_air_flow_rate: v[2],
                design_water_flow_rate: v[3],
                design_inlet_water_temperature: v[4],
                design_outlet_air_temperature: v[5],
                ..a.clone()
            }),
            AssetSpec::Rack(r) => {
                let s = self.size();
                AssetSpec::Rack(RackSpec {
                    power_capacity: v[0],
                    server_slots: v[1].round().max(1.0) as u32,
                    size: Some(Size3::new(v[2], v[3], s.z)),
                    ..r.clone()
                })
            }
            AssetSpec::Server(s) => AssetSpec::Server(ServerSpec {
                idle_power: v[0],
                peak_power: v[1],
                computing_capacity: v[2],
                heat_factor: v[3],
                ..s.clone()
            }),
            AssetSpec::Chiller(c) => AssetSpec::Chiller(ChillerSpec {
                rated_capacity: v[0],
                carnot_fraction: v[1],
                chw_supply_setpoint: v[2],
                rated_pump_fraction: v[3],
                ..c.clone()
            }),
            AssetSpec::CoolingTower(t) => AssetSpec::CoolingTower(TowerSpec {
                rated_heat_rejection: v[0],
                rated_fan_power: v[1],
                approach: v[2],
                ..t.clone()
            }),
        })
    }

    pub fn as_acu(&self) -> Option<&AcuSpec> {
        match self {
            AssetSpec::Acu(a) => Some(a),
            _ => None,
        }
    }
    pub fn as_rack(&self) -> Option<&RackSpec> {
        match self {
            AssetSpec::Rack(a) => Some(a),
            _ => None,
        }
    }
    pub fn as_server(&self) -> Option<&ServerSpec> {
        match self {
            AssetSpec::Server(a) => Some(a),
            _ => None,
        }
    }
    pub fn as_chiller(&self) -> Option<&ChillerSpec> {
        match self {
            AssetSpec::Chiller(a) => Some(a),
            _ => None,
        }
    }
    pub fn as_tower(&self) -> Option<&TowerSpec> {
        match self {
            AssetSpec::CoolingTower(a) => Some(a),
            _ => None,
        }
    }

    fn set_id(&mut self, id: &str) {
        let slot = match self {
            AssetSpec::Acu(a) => &mut a.id,
            AssetSpec::Rack(a) => &mut a.id,
            AssetSpec::Server(a) => &mut a.id,
            AssetSpec::Chiller(a) => &mut a.id,
            AssetSpec::CoolingTower(a) => &mut a.id,
        };
        *slot = id.to_string();
    }

    fn to_json(&self) -> serde_json::Value {
        let v = match self {
            AssetSpec::Acu(a) => serde_json::to_value(a),
            AssetSpec::Rack(a) => serde_json::to_value(a),
            AssetSpec::Server(a) => serde_json::to_value(a),
            AssetSpec::Chiller(a) => serde_json::to_value(a),
            AssetSpec::CoolingTower(a) => serde_json::to_value(a),
        };
        v.expect("asset specs always serialize")
    }

    fn from_json(
        category: AssetCategory,
        id: &str,
        value: serde_json::Value,
    ) -> Result<AssetSpec, AssetError> {
        let mut spec = match category {
            AssetCategory::Acu => AssetSpec::Acu(serde_json::from_value(value)?),
            AssetCategory::Rack => AssetSpec::Rack(serde_json::from_value(value)?),
            AssetCategory::Server => AssetSpec::Server(serde_json::from_value(value)?),
            AssetCategory::Chiller => AssetSpec::Chiller(serde_json::from_value(value)?),
            AssetCategory::CoolingTower => {
                AssetSpec::CoolingTower(serde_json::from_value(value)?)
            }
        };
        spec.set_id(id);
        Ok(spec)
    }
}

/// An immutable, validated set of assets grouped by category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssetLibrary {
    assets: BTreeMap<AssetCategory, BTreeMap<String, AssetSpec>>,
}

impl AssetLibrary {
    /// Build from a list of assets, validating each one and rejecting
    /// duplicate ids across categories.
    pub fn from_assets(assets: impl IntoIterator<Item = AssetSpec>) -> Result<Self, AssetError> {
        let mut lib = AssetLibrary::default();
        for asset in assets {
            asset.validate()?;
            if lib.get(asset.id()).is_some() {
                return Err(AssetError::DuplicateId(asset.id().to_string()));
            }
            lib.assets
                .entry(asset.category())
                .or_default()
                .insert(asset.id().to_string(), asset);
        }
        Ok(lib)
    }

    pub fn from_json_str(text: &str) -> Result<Self, AssetError> {
        let raw: BTreeMap<String, BTreeMap<String, serde_json::Value>> =
            serde_json::from_str(text)?;
        let mut assets = Vec::new();
        for (section, entries) in raw {
            let category = AssetCategory::ALL
                .into_iter()
                .find(|c| c.section() == section)
                .ok_or_else(|| AssetError::Validation {
                    id: section.clone(),
                    message: format!(
                        "unknown library section (expected one of {})",
                        AssetCategory::ALL.map(|c| c.section()).join(", ")
                    ),
                })?;
            for (id, value) in entries {
                let spec = AssetSpec::from_json(category, &id, value).map_err(|e| match e {
                    AssetError::Parse(err) => AssetError::Validation {
                        id: id.clone(),
                        message: err.to_string(),
                    },
                    other => other,
                })?;
                assets.push(spec);
            }
        }
        Self::from_assets(assets)
    }

    pub fn to_json_string(&self) -> String {
        let mut root = serde_json::Map::new();
        for (category, entries) in &self.assets {
            let mut section = serde_json::Map::new();
            for (id, spec) in entries {
                section.insert(id.clone(), spec.to_json());
            }
            root.insert(category.section().to_string(), section.into());
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(root))
            .expect("library always serializes")
    }

    pub fn len(&self) -> usize {
        self.assets.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every category has at least one asset.
    pub fn is_usable(&self) -> bool {
        AssetCategory::ALL
            .iter()
            .all(|c| self.assets.get(c).is_some_and(|m| !m.is_empty()))
    }

    pub fn ensure_usable(&self) -> Result<(), AssetError> {
        for c in AssetCategory::ALL {
            if self.category(c).next().is_none() {
                return Err(AssetError::EmptyCategory(c));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&AssetSpec> {
        self.assets.values().find_map(|m| m.get(id))
    }

    /// Look up an asset and require a category.
    pub fn get_in(&self, category: AssetCategory, id: &str) -> Option<&AssetSpec> {
        self.assets.get(&category).and_then(|m| m.get(id))
    }

    /// Assets of one category in ascending id order.
    pub fn category(&self, category: AssetCategory) -> impl Iterator<Item = &AssetSpec> {
        self.assets.get(&category).into_iter().flat_map(|m| m.values())
    }

    /// All assets, category by category.
    pub fn iter(&self) -> impl Iterator<Item = &AssetSpec> {
        self.assets.values().flat_map(|m| m.values())
    }

    pub fn ids(&self, category: AssetCategory) -> Vec<String> {
        self.category(category).map(|a| a.id().to_string()).collect()
    }

    pub fn count(&self, category: AssetCategory) -> usize {
        self.assets.get(&category).map_or(0, BTreeMap::len)
    }

    /// Per-field (min, max) of the parameter vectors of one category.
    pub fn parameter_ranges(&self, category: AssetCategory) -> Option<Vec<(f64, f64)>> {
        let mut ranges: Option<Vec<(f64, f64)>> = None;
        for asset in self.category(category) {
            let v = asset.parameter_vector();
            match &mut ranges {
                None => ranges = Some(v.iter().map(|&x| (x, x)).collect()),
                Some(r) => {
                    for (slot, x) in r.iter_mut().zip(v) {
                        slot.0 = slot.0.min(x);
                        slot.1 = slot.1.max(x);
                    }
                }
            }
        }
        ranges
    }
}

pub fn load_library(path: impl AsRef<Path>) -> Result<AssetLibrary, AssetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| AssetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    AssetLibrary::from_json_str(&text)
}

pub fn save_library(library: &AssetLibrary, path: impl AsRef<Path>) -> Result<(), AssetError> {
    let path = path.as_ref();
    std::fs::write(path, library.to_json_string()).map_err(|source| AssetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parameter_vector(asset: &AssetSpec) -> Vec<f64> {
    asset.parameter_vector()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn synth_acu(rng: &mut ChaCha8Rng, id: String, capacity: (f64, f64)) -> AssetSpec {
    let cooling_capacity = uniform(rng, capacity.0, capacity.1);
    let design_air_flow_rate = cooling_capacity * uniform(rng, 0.04, 0.12);
    let inlet_water = uniform(rng, 7.0, 14.0);
    let water_dt = uniform(rng, 5.0, 10.0);
    AssetSpec::Acu(AcuSpec {
        id,
        cooling_capacity,
        cooling_type: if rng.random::<bool>() { "CW" } else { "DX" }.to_string(),
        pressure_rise: uniform(rng, 200.0, 800.0),
        design_water_flow_rate: cooling_capacity / (4186.0 * water_dt) * uniform(rng, 0.6, 1.0),
        design_air_flow_rate,
        maximum_flow_rate: design_air_flow_rate * uniform(rng, 0.9, 1.3),
        design_inlet_water_temperature: inlet_water,
        design_outlet_water_temperature: inlet_water + water_dt,
        design_inlet_air_temperature: uniform(rng, 30.0, 38.0),
        design_outlet_air_temperature: uniform(rng, 18.0, 27.0),
        design_water_temperature_difference: water_dt,
        size: Some(Size3::new(
            uniform(rng, 0.8, 1.2),
            uniform(rng, 1.8, 2.4),
            2.0,
        )),
    })
}

fn synth_rack(rng: &mut ChaCha8Rng, id: String, power: (f64, f64)) -> AssetSpec {
    AssetSpec::Rack(RackSpec {
        id,
        power_capacity: uniform(rng, power.0, power.1),
        server_slots: rng.random_range(8..=42),
        size: Some(Size3::new(
            uniform(rng, 0.6, 0.8),
            uniform(rng, 1.0, 1.2),
            2.0,
        )),
    })
}

fn synth_server(rng: &mut ChaCha8Rng, id: String) -> AssetSpec {
    let peak_power = uniform(rng, 0.2, 0.8);
    AssetSpec::Server(ServerSpec {
        id,
        idle_power: peak_power * uniform(rng, 0.3, 0.6),
        peak_power,
        computing_capacity: uniform(rng, 1e12, 1e14),
        heat_factor: uniform(rng, 0.9, 1.0),
        size: None,
    })
}

fn synth_chiller(rng: &mut ChaCha8Rng, id: String, capacity: (f64, f64)) -> AssetSpec {
    AssetSpec::Chiller(ChillerSpec {
        id,
        rated_capacity: uniform(rng, capacity.0, capacity.1),
        carnot_fraction: uniform(rng, 0.35, 0.65),
        chw_supply_setpoint: uniform(rng, 5.0, 10.0),
        rated_pump_fraction: uniform(rng, 0.01, 0.04),
        size: None,
    })
}

fn synth_tower(rng: &mut ChaCha8Rng, id: String, capacity: (f64, f64)) -> AssetSpec {
    let rated_heat_rejection = uniform(rng, capacity.0, capacity.1);
    AssetSpec::CoolingTower(TowerSpec {
        id,
        rated_heat_rejection,
        rated_fan_power: rated_heat_rejection * uniform(rng, 0.005, 0.02),
        approach: uniform(rng, 2.0, 6.0),
        size: None,
    })
}

/// Seeded synthetic library with `n_per_type` assets in every category.
///
/// Ids are `ACU_001`, `RACK_001`, `SRV_001`, `CH_001`, `CT_001`, ... The
/// first asset of each category is drawn from the upper capacity band so a
/// feasible design exists at every scale regardless of the seed.
pub fn generate_synthetic_library(n_per_type: usize, seed: u64) -> AssetLibrary {
    assert!(n_per_type >= 1, "n_per_type must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assets = Vec::with_capacity(5 * n_per_type);
    for i in 0..n_per_type {
        let first = i == 0;
        let n = i + 1;
        assets.push(synth_acu(
            &mut rng,
            format!("ACU_{n:03}"),
            if first { (250.0, 500.0) } else { (50.0, 500.0) },
        ));
        assets.push(synth_rack(
            &mut rng,
            format!("RACK_{n:03}"),
            if first { (10.0, 20.0) } else { (2.0, 20.0) },
        ));
        assets.push(synth_server(&mut rng, format!("SRV_{n:03}")));
        assets.push(synth_chiller(
            &mut rng,
            format!("CH_{n:03}"),
            if first { (1500.0, 3000.0) } else { (200.0, 3000.0) },
        ));
        assets.push(synth_tower(
            &mut rng,
            format!("CT_{n:03}"),
            if first { (2000.0, 4000.0) } else { (300.0, 4000.0) },
        ));
    }
    if let Some(AssetSpec::Rack(r)) = assets.get_mut(1) {
        // one rack type always fits the default population of 8 servers
        r.server_slots = r.server_slots.max(16);
    }
    AssetLibrary::from_assets(assets).expect("synthetic assets satisfy every invariant")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ACU_A_JSON: &str = r#"{
    "acus": {
        "ACU_A": {
          "coolingCapacity": 146.8,
          "coolingType": "DX",
          "pressureRise": 460.4,
          "designWaterFlowRate": 0.003097,
          "designAirFlowRate": 13.099,
          "maximumFlowRate": 12.381,
          "designInletWaterTemperature": 16.6,
          "designOutletWaterTemperature": 23.6,
          "designInletAirTemperature": 34.7,
          "designOutletAirTemperature": 25.1,
          "designWaterTemperatureDifference": 7.9
        }
    }
}"#;

    #[test]
    fn loads_catalogue_acu() {
        let lib = AssetLibrary::from_json_str(ACU_A_JSON).unwrap();
        let acu = lib.get("ACU_A").unwrap().as_acu().unwrap().clone();
        assert_eq!(acu.cooling_capacity, 146.8);
        assert_eq!(acu.pressure_rise, 460.4);
        assert_eq!(acu.design_air_flow_rate, 13.099);
        assert_eq!(acu.cooling_type, "DX");
        assert!(!lib.is_usable());
    }

    #[test]
    fn acu_parameter_vector_order() {
        let lib = AssetLibrary::from_json_str(ACU_A_JSON).unwrap();
        let v = lib.get("ACU_A").unwrap().parameter_vector();
        assert_eq!(v, vec![146.8, 460.4, 13.099, 0.003097, 16.6, 25.1]);
    }

    #[test]
    fn empty_library_is_unusable() {
        let lib = AssetLibrary::from_json_str("{}").unwrap();
        assert!(lib.is_empty());
        assert!(!lib.is_usable());
        assert!(matches!(lib.ensure_usable(), Err(AssetError::EmptyCategory(_))));
    }

    #[test]
    fn negative_capacity_is_rejected() {
        let text = ACU_A_JSON.replace("146.8", "-5");
        let err = AssetLibrary::from_json_str(&text).unwrap_err();
        assert_eq!(err.to_string(), "asset ACU_A: coolingCapacity must be > 0");
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(
            AssetLibrary::from_json_str("{\"acus\": "),
            Err(AssetError::Parse(_))
        ));
    }

    #[test]
    fn unknown_fields_and_sections_are_rejected() {
        let text = ACU_A_JSON.replace("\"coolingType\"", "\"colour\": 1, \"coolingType\"");
        assert!(AssetLibrary::from_json_str(&text).is_err());
        assert!(AssetLibrary::from_json_str(r#"{"pumps": {}}"#).is_err());
    }

    #[test]
    fn duplicate_ids_across_categories_are_rejected() {
        let lib = generate_synthetic_library(1, 3);
        let mut assets: Vec<AssetSpec> = AssetCategory::ALL
            .iter()
            .flat_map(|c| lib.category(*c).cloned().collect::<Vec<_>>())
            .collect();
        let mut dup = assets[0].clone();
        if let AssetSpec::Acu(a) = &mut dup {
            a.cooling_capacity += 1.0;
        }
        assets.push(dup);
        assert!(matches!(
            AssetLibrary::from_assets(assets),
            Err(AssetError::DuplicateId(_))
        ));
    }

    #[test]
    fn synthetic_library_is_seeded_and_valid() {
        let a = generate_synthetic_library(10, 1);
        let b = generate_synthetic_library(10, 1);
        assert_eq!(a.to_json_string(), b.to_json_string());
        for c in AssetCategory::ALL {
            assert_eq!(a.count(c), 10);
        }
        let c = generate_synthetic_library(50, 7);
        for cat in AssetCategory::ALL {
            assert_eq!(c.count(cat), 50);
            for asset in c.category(cat) {
                asset.validate().unwrap();
                assert_eq!(asset.parameter_vector().len(), cat.parameter_fields().len());
            }
        }
        assert_ne!(a.to_json_string(), generate_synthetic_library(10, 2).to_json_string());
    }

    #[test]
    fn with_parameter_vector_round_trips() {
        let lib = generate_synthetic_library(3, 11);
        for asset in lib.category(AssetCategory::Chiller) {
            let v = asset.parameter_vector();
            assert_eq!(&asset.with_parameter_vector(&v).unwrap(), asset);
        }
        let acu = lib.category(AssetCategory::Acu).next().unwrap();
        assert!(matches!(
            acu.with_parameter_vector(&[1.0]),
            Err(AssetError::Dimension { expected: 6, .. })
        ));
    }

    #[test]
    fn parameter_ranges_cover_library() {
        let lib = generate_synthetic_library(10, 4);
        let r = lib.parameter_ranges(AssetCategory::Acu).unwrap();
        assert_eq!(r.len(), 6);
        for acu in lib.category(AssetCategory::Acu) {
            for (x, (lo, hi)) in acu.parameter_vector().iter().zip(&r) {
                assert!(lo <= x && x <= hi);
            }
        }
    }
}
