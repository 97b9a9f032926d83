//! Scenario files: world, registry, prompt context, adapter, limits, goal.
//!
//! Files are TOML and reject unknown keys at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsl::ExecLimits;
use crate::gateway::LiveConfig;
use crate::prompting::{ResponseDirective, TaskContext};
use crate::registry::{ApiRegistry, FunctionDescriptor};
use crate::worlds::blocks::{Blocks, Grid, LayoutTarget};
use crate::worlds::catch2d::{Catch2d, LaunchParams};
use crate::worlds::drone3d::{Aabb, Drone3d};
use crate::worlds::nav2d::{Nav2d, NavObject};
use crate::worlds::{default_registry, CameraModel, Pose2, Pose3, World, WorldKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("scenario error in `{field}`: {reason}")]
pub struct ScenarioError {
    pub field: String,
    pub reason: String,
}

impl ScenarioError {
    pub fn new(field: &str, reason: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Codegen,
    Feedback,
    Dialog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Live,
    Scripted,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSpec {
    pub adapter: AdapterKind,
    /// Transcript for scripted/replay adapters, relative to the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live: Option<LiveConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub predicate: String,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub auto_approve: bool,
    /// First user message; defaults to the goals joined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opening: Option<String>,
    /// Upper bound on model turns for non-interactive runs.
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    #[serde(default = "default_dialog_steps")]
    pub dialog_steps: u32,
    pub world: WorldSpec,
    /// Replaces the world's default registry when non-empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<FunctionDescriptor>,
    /// Composed functions added on top of the registry.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compose: Vec<FunctionDescriptor>,
    pub context: TaskContext,
    pub directive: ResponseDirective,
    pub llm: LlmSpec,
    #[serde(default)]
    pub limits: ExecLimits,
    pub goal: GoalSpec,
    /// Directory the scenario was loaded from; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_max_turns() -> u32 {
    8
}

fn default_dialog_steps() -> u32 {
    50
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("scenario")
                .to_string();
            ScenarioError::new(&field, e.message().to_string())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::new("path", format!("{}: {e}", path.display())))?;
        let mut s = Self::parse(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        s.check_files()?;
        Ok(s)
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.context
            .validate()
            .map_err(|e| ScenarioError::new("context", e.to_string()))?;
        self.directive
            .validate()
            .map_err(|e| ScenarioError::new("directive", e.to_string()))?;
        let kind = self.world_kind()?;
        build_world(&self.world)?;
        self.registry()?;
        Goal::from_spec(&self.goal, kind)?;
        if self.mode == Mode::Dialog && kind != WorldKind::Nav2d {
            return Err(ScenarioError::new("mode", "dialog mode needs a nav2d world"));
        }
        if matches!(self.llm.adapter, AdapterKind::Scripted | AdapterKind::Replay)
            && self.llm.path.is_none()
        {
            return Err(ScenarioError::new("llm.path", "scripted and replay adapters need a path"));
        }
        Ok(())
    }

    fn check_files(&self) -> Result<(), ScenarioError> {
        if let Some(p) = self.transcript_path() {
            if !p.is_file() {
                return Err(ScenarioError::new(
                    "llm.path",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        Ok(())
    }

    pub fn transcript_path(&self) -> Option<PathBuf> {
        self.llm.path.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn world_kind(&self) -> Result<WorldKind, ScenarioError> {
        WorldKind::parse(&self.world.kind).ok_or_else(|| {
            ScenarioError::new("world", format!("unknown world type `{}`", self.world.kind))
        })
    }

    pub fn build_world(&self) -> Result<Box<dyn World>, ScenarioError> {
        build_world(&self.world)
    }

    pub fn registry(&self) -> Result<ApiRegistry, ScenarioError> {
        let base = if self.functions.is_empty() {
            default_registry(self.world_kind()?)
        } else {
            ApiRegistry::from_descriptors(&self.functions)
                .map_err(|e| ScenarioError::new("functions", e.to_string()))?
        };
        self.compose.iter().try_fold(base, |reg, d| {
            if d.body.is_none() {
                return Err(ScenarioError::new("compose", format!("`{}` has no body", d.name)));
            }
            reg.add_descriptor(d)
                .map_err(|e| ScenarioError::new("compose", e.to_string()))
        })
    }

    pub fn goal(&self) -> Result<Goal, ScenarioError> {
        Goal::from_spec(&self.goal, self.world_kind()?)
    }

    pub fn opening_message(&self) -> String {
        self.opening
            .clone()
            .unwrap_or_else(|| self.context.goals.join("\n"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

fn params<T: serde::de::DeserializeOwned>(table: &toml::Table, field: &str) -> Result<T, ScenarioError> {
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| ScenarioError::new(field, e.message().to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DroneParams {
    #[serde(default)]
    start: [f64; 4],
    #[serde(default)]
    airborne: bool,
    #[serde(default)]
    obstacles: Vec<Aabb>,
    #[serde(default)]
    arena: Option<Aabb>,
    #[serde(default)]
    safety_margin_m: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatchParams {
    #[serde(default)]
    launch: Option<LaunchParams>,
    #[serde(default)]
    camera: Option<CameraModel>,
    #[serde(default)]
    spawn: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NavParams {
    #[serde(default)]
    start: [f64; 3],
    #[serde(default)]
    objects: Vec<NavObject>,
    /// Generates objects from the world seed instead of `objects`.
    #[serde(default)]
    generate: Option<NavGenerate>,
    #[serde(default)]
    camera: Option<CameraModel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NavGenerate {
    target: String,
    #[serde(default)]
    distractors: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockSpec {
    name: String,
    color: String,
    #[serde(default)]
    position: Option<[f64; 2]>,
    #[serde(default)]
    on: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlocksParams {
    #[serde(default)]
    grid: Option<Grid>,
    blocks: Vec<BlockSpec>,
}

/// Constructs the world described by `spec`.
pub fn build_world(spec: &WorldSpec) -> Result<Box<dyn World>, ScenarioError> {
    let kind = WorldKind::parse(&spec.kind)
        .ok_or_else(|| ScenarioError::new("world", format!("unknown world type `{}`", spec.kind)))?;
    let field = "world.params";
    Ok(match kind {
        WorldKind::Drone3d => {
            let p: DroneParams = params(&spec.params, field)?;
            let [x, y, z, yaw] = p.start;
            let mut w = Drone3d::new(Pose3::new(x, y, z, yaw), p.airborne, p.obstacles);
            if let Some(a) = p.arena {
                w = w.with_arena(a);
            }
            if let Some(m) = p.safety_margin_m {
                w.safety_margin_m = m;
            }
            Box::new(w)
        }
        WorldKind::Catch2d => {
            let p: CatchParams = params(&spec.params, field)?;
            let camera = p.camera.unwrap_or_default();
            camera
                .validate()
                .map_err(|e| ScenarioError::new("world.params.camera", e.to_string()))?;
            let mut w = Catch2d::new(camera, p.launch.unwrap_or_default());
            if p.spawn {
                w.spawn_ball(spec.seed);
            }
            Box::new(w)
        }
        WorldKind::Nav2d => {
            let p: NavParams = params(&spec.params, field)?;
            let mut w = match p.generate {
                Some(g) => Nav2d::seeded(spec.seed, &g.target, g.distractors),
                None => {
                    let [x, y, theta] = p.start;
                    Nav2d::new(Pose2::new(x, y, theta), p.objects)
                }
            };
            if let Some(c) = p.camera {
                c.validate()
                    .map_err(|e| ScenarioError::new("world.params.camera", e.to_string()))?;
                w.camera = c;
            }
            Box::new(w)
        }
        WorldKind::Blocks => {
            let p: BlocksParams = params(&spec.params, field)?;
            let mut w = Blocks::new(p.grid.unwrap_or_default());
            for b in p.blocks {
                let pos = b.position.unwrap_or_default();
                w.add_block(&b.name, &b.color, pos, b.on.as_deref())
                    .map_err(|e| ScenarioError::new("world.params.blocks", e.to_string()))?;
            }
            Box::new(w)
        }
    })
}

/// Goal predicate evaluated after each execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case", deny_unknown_fields)]
pub enum Goal {
    /// Every point is passed within `tolerance_m`, in order.
    VisitsWaypoints {
        points: Vec<[f64; 3]>,
        #[serde(default = "default_tolerance")]
        tolerance_m: f64,
    },
    ReachPose {
        position: [f64; 3],
        #[serde(default = "default_tolerance")]
        tolerance_m: f64,
    },
    LayoutMatches { targets: Vec<LayoutTarget> },
    NearObject {
        label: String,
        #[serde(default = "default_tolerance")]
        radius_m: f64,
    },
    BallCaught,
}

fn default_tolerance() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalStatus {
    pub reached: bool,
    pub metric: f64,
}

impl Goal {
    pub fn from_spec(spec: &GoalSpec, kind: WorldKind) -> Result<Self, ScenarioError> {
        let mut table = spec.params.clone();
        table.insert("predicate".into(), toml::Value::String(spec.predicate.clone()));
        let goal: Goal = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ScenarioError::new("goal", e.message().to_string()))?;
        let needed = match goal {
            Goal::VisitsWaypoints { .. } | Goal::ReachPose { .. } => WorldKind::Drone3d,
            Goal::LayoutMatches { .. } => WorldKind::Blocks,
            Goal::NearObject { .. } => WorldKind::Nav2d,
            Goal::BallCaught => WorldKind::Catch2d,
        };
        if needed != kind {
            return Err(ScenarioError::new(
                "goal",
                format!("predicate `{}` needs a {} world", spec.predicate, needed.as_str()),
            ));
        }
        Ok(goal)
    }

    pub fn evaluate(&self, world: &dyn World) -> GoalStatus {
        let any = world.as_any();
        match self {
            Goal::VisitsWaypoints { points, tolerance_m } => {
                let d = any.downcast_ref::<Drone3d>().expect("drone world");
                let (visited, worst) = waypoint_progress(&d.trajectory, points, *tolerance_m);
                GoalStatus {
                    reached: visited == points.len(),
                    metric: worst,
                }
            }
            Goal::ReachPose { position, tolerance_m } => {
                let d = any.downcast_ref::<Drone3d>().expect("drone world");
                let p = d.pose.position();
                let dist = ((p[0] - position[0]).powi(2)
                    + (p[1] - position[1]).powi(2)
                    + (p[2] - position[2]).powi(2))
                .sqrt();
                GoalStatus {
                    reached: dist <= *tolerance_m,
                    metric: dist,
                }
            }
            Goal::LayoutMatches { targets } => {
                let b = any.downcast_ref::<Blocks>().expect("blocks world");
                let misplaced = targets
                    .iter()
                    .filter(|t| !b.check_layout(std::slice::from_ref(t)).unwrap_or(false))
                    .count();
                GoalStatus {
                    reached: misplaced == 0,
                    metric: misplaced as f64,
                }
            }
            Goal::NearObject { label, radius_m } => {
                let n = any.downcast_ref::<Nav2d>().expect("nav world");
                let d = n.distance_to(label).unwrap_or(f64::INFINITY);
                GoalStatus {
                    reached: d <= *radius_m,
                    metric: d,
                }
            }
            Goal::BallCaught => {
                let c = any.downcast_ref::<Catch2d>().expect("catch world");
                match c.touchdown {
                    Some(t) => GoalStatus {
                        reached: t.caught,
                        metric: t.miss_m,
                    },
                    None => GoalStatus {
                        reached: false,
                        metric: f64::INFINITY,
                    },
                }
            }
        }
    }
}

/// Number of waypoints visited in order, and the largest closest-approach
/// distance over all waypoints.
fn waypoint_progress(trajectory: &[[f64; 3]], points: &[[f64; 3]], tol: f64) -> (usize, f64) {
    let dist = |a: &[f64; 3], b: &[f64; 3]| {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    let mut visited = 0;
    let mut cursor = 0;
    for p in points {
        match trajectory[cursor..].iter().position(|s| dist(s, p) <= tol) {
            Some(i) => {
                visited += 1;
                cursor += i;
            }
            None => break,
        }
    }
    let worst = points
        .iter()
        .map(|p| {
            trajectory
                .iter()
                .map(|s| dist(s, p))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    (visited, worst)
}
