//! Deterministic desk-scale simulated worlds.
//!
//! Angle conventions: poses use degrees in (-180, 180], counterclockwise
//! positive. Camera bearings derived from image columns are positive to the
//! right of the optical axis.

pub mod blocks;
pub mod catch2d;
pub mod drone3d;
pub mod nav2d;

use std::any::Any;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsl::Value;
use crate::registry::{ApiFunction, ApiRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    Catch2d,
    Drone3d,
    Nav2d,
    Blocks,
}

impl WorldKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "catch2d" => Some(Self::Catch2d),
            "drone3d" => Some(Self::Drone3d),
            "nav2d" => Some(Self::Nav2d),
            "blocks" => Some(Self::Blocks),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Catch2d => "catch2d",
            Self::Drone3d => "drone3d",
            Self::Nav2d => "nav2d",
            Self::Blocks => "blocks",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("no ball has been spawned")]
    NotSpawned,
    #[error("drone is not airborne")]
    NotAirborne,
    #[error("target {0:?} is outside the arena")]
    OutOfBounds([f64; 3]),
    #[error("block `{0}` has something on top of it")]
    Blocked(String),
    #[error("gripper already holds `{0}`")]
    GripperFull(String),
    #[error("gripper is empty")]
    GripperEmpty,
    #[error("placement overlaps block `{0}`")]
    Overlap(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("detection `{0}` has no depth")]
    MissingDepth(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("bad argument: {0}")]
    BadArgument(String),
    #[error("world has no effect `{0}`")]
    UnknownEffect(String),
}

/// A simulated world exposing named effects to bound registries.
pub trait World: Send {
    fn kind(&self) -> WorldKind;

    /// Names of every effect `invoke` accepts.
    fn effect_names(&self) -> &'static [&'static str];

    fn invoke(&mut self, name: &str, args: &[Value]) -> Result<Value, WorldError>;

    /// Serializable state used for telemetry and hashing.
    fn snapshot(&self) -> serde_json::Value;

    fn state_hash(&self) -> String {
        hash_json(&self.snapshot())
    }

    /// Samples inside obstacles so far (worlds without obstacles report 0).
    fn collisions(&self) -> u32 {
        0
    }

    fn as_any(&self) -> &dyn Any;

    fn as_any_mut(&mut self) -> &mut dyn Any;
}

pub fn hash_json(value: &serde_json::Value) -> String {
    let text = serde_json::to_string(value).expect("snapshot serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Registry holding the prompt-facing descriptors of a world's effects.
pub fn default_registry(kind: WorldKind) -> ApiRegistry {
    let funcs: Vec<ApiFunction> = match kind {
        WorldKind::Catch2d => catch2d::api_functions(),
        WorldKind::Drone3d => drone3d::api_functions(),
        WorldKind::Nav2d => nav2d::api_functions(),
        WorldKind::Blocks => blocks::api_functions(),
    };
    funcs
        .into_iter()
        .try_fold(ApiRegistry::new(), |reg, f| reg.register(f))
        .expect("built-in descriptors are valid")
}

/// Normalizes degrees into (-180, 180].
pub fn normalize_deg(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_deg(theta),
        }
    }

    pub fn to_value(self) -> Value {
        Value::record([
            ("x", Value::Number(self.x)),
            ("y", Value::Number(self.y)),
            ("theta", Value::Number(self.theta)),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose3 {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: normalize_deg(yaw),
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn to_value(self) -> Value {
        Value::record([
            ("x", Value::Number(self.x)),
            ("y", Value::Number(self.y)),
            ("z", Value::Number(self.z)),
            ("yaw", Value::Number(self.yaw)),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub width_px: u32,
    pub height_px: u32,
    pub hfov_deg: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width_px: 640,
            height_px: 480,
            hfov_deg: 90.0,
        }
    }
}

impl CameraModel {
    pub fn new(width_px: u32, height_px: u32, hfov_deg: f64) -> Result<Self, WorldError> {
        let cam = Self {
            width_px,
            height_px,
            hfov_deg,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(WorldError::BadParams("camera size must be at least 1 px".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(WorldError::BadParams(format!(
                "hfov {} must lie in (0, 180)",
                self.hfov_deg
            )));
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        (self.width_px as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn cx(&self) -> f64 {
        self.width_px as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.height_px as f64 / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    /// (u_min, v_min, u_max, v_max) in pixels.
    pub bbox: [f64; 4],
    pub median_depth_m: Option<f64>,
}

impl Detection {
    pub fn u_center(&self) -> f64 {
        (self.bbox[0] + self.bbox[2]) / 2.0
    }

    pub fn to_value(&self) -> Value {
        Value::record([
            ("label", Value::Str(self.label.clone())),
            ("bbox", Value::numbers(&self.bbox)),
            (
                "depth",
                self.median_depth_m.map_or(Value::None, Value::Number),
            ),
        ])
    }

    pub fn from_value(value: &Value) -> Result<Self, WorldError> {
        let bad = || WorldError::BadArgument("expected a detection record".into());
        let map = value.as_record().ok_or_else(bad)?;
        let label = map.get("label").and_then(Value::as_str).ok_or_else(bad)?;
        let bbox = map.get("bbox").and_then(Value::as_list).ok_or_else(bad)?;
        if bbox.len() != 4 {
            return Err(bad());
        }
        let mut b = [0.0; 4];
        for (slot, v) in b.iter_mut().zip(bbox) {
            *slot = v.as_number().ok_or_else(bad)?;
        }
        let median_depth_m = map.get("depth").and_then(Value::as_number);
        Ok(Self {
            label: label.to_string(),
            bbox: b,
            median_depth_m,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub label: String,
    pub range_m: f64,
    pub bearing_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneDescription {
    pub entries: Vec<SceneEntry>,
}

impl SceneDescription {
    /// One line per visible object, nearest first.
    pub fn to_text(&self) -> String {
        if self.entries.is_empty() {
            return "No objects visible.".to_string();
        }
        let lines: Vec<String> = self
            .entries
            .iter()
            .map(|e| {
                format!(
                    "{}: range {:.1} m, bearing {:.0} deg",
                    e.label, e.range_m, e.bearing_deg
                )
            })
            .collect();
        lines.join("\n")
    }

    pub fn to_value(&self) -> Value {
        Value::List(
            self.entries
                .iter()
                .map(|e| {
                    Value::record([
                        ("label", Value::Str(e.label.clone())),
                        ("range", Value::Number(e.range_m)),
                        ("bearing", Value::Number(e.bearing_deg)),
                    ])
                })
                .collect(),
        )
    }
}

/// Argument helpers shared by the world effect tables.
pub(crate) mod args {
    use super::WorldError;
    use crate::dsl::Value;

    pub fn expect_len(name: &str, args: &[Value], n: usize) -> Result<(), WorldError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(WorldError::BadArgument(format!(
                "{name} takes {n} arguments, got {}",
                args.len()
            )))
        }
    }

    pub fn number(args: &[Value], i: usize) -> Result<f64, WorldError> {
        match args.get(i) {
            Some(Value::Number(n)) if n.is_finite() => Ok(*n),
            other => Err(WorldError::BadArgument(format!(
                "argument {} must be a finite number, got {other:?}",
                i + 1
            ))),
        }
    }

    pub fn string(args: &[Value], i: usize) -> Result<&str, WorldError> {
        args.get(i).and_then(Value::as_str).ok_or_else(|| {
            WorldError::BadArgument(format!("argument {} must be a string", i + 1))
        })
    }

    pub fn point3(value: &Value) -> Result<[f64; 3], WorldError> {
        let bad = || WorldError::BadArgument(format!("expected [x, y, z], got {value}"));
        if let Some(map) = value.as_record() {
            let get = |k: &str| map.get(k).and_then(Value::as_number).ok_or_else(bad);
            return Ok([get("x")?, get("y")?, get("z")?]);
        }
        let items = value.as_list().ok_or_else(bad)?;
        if items.len() < 3 {
            return Err(bad());
        }
        let mut out = [0.0; 3];
        for (slot, v) in out.iter_mut().zip(items) {
            *slot = v.as_number().filter(|n| n.is_finite()).ok_or_else(bad)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_deg(-190.0), 170.0);
        assert_eq!(normalize_deg(180.0), 180.0);
        assert_eq!(normalize_deg(-180.0), 180.0);
        assert_eq!(normalize_deg(540.0), 180.0);
        assert_eq!(normalize_deg(30.0), 30.0);
        assert_eq!(normalize_deg(-720.0), 0.0);
    }

    #[test]
    fn focal_length_from_fov() {
        let cam = CameraModel::default();
        assert!((cam.focal_px() - 320.0).abs() < 1e-9);
        assert!(CameraModel::new(640, 480, 180.0).is_err());
        assert!(CameraModel::new(0, 480, 90.0).is_err());
    }
}
