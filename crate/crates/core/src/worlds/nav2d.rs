//! Planar embodied agent among named point objects.
//!
//! Scene bearings follow the pose convention (counterclockwise positive, so
//! `turn(bearing)` faces the object). Detection bearings from
//! [`estimate_angle`] are positive to the right, as in image coordinates.

use std::any::Any;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    args, normalize_deg, CameraModel, Detection, Pose2, SceneDescription, SceneEntry, World,
    WorldError, WorldKind,
};
use crate::dsl::Value;
use crate::registry::{ApiFunction, ParamKind, ParamSpec};

pub const OBJECT_RADIUS_M: f64 = 0.25;
pub const STOP_GAP_M: f64 = 0.1;
pub const MAX_RANGE_M: f64 = 10.0;
pub const GOAL_RADIUS_M: f64 = 0.5;

const EFFECTS: &[&str] = &[
    "forward",
    "turn",
    "get_pose",
    "describe_scene",
    "get_detections",
    "get_depth_for",
    "estimate_angle",
    "depth_mask",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavObject {
    pub label: String,
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    OBJECT_RADIUS_M
}

impl NavObject {
    pub fn new(label: &str, x: f64, y: f64) -> Self {
        Self {
            label: label.to_string(),
            x,
            y,
            radius: OBJECT_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nav2d {
    pub pose: Pose2,
    pub objects: Vec<NavObject>,
    pub camera: CameraModel,
    pub max_range_m: f64,
    pub trajectory: Vec<[f64; 2]>,
}

pub fn api_functions() -> Vec<ApiFunction> {
    vec![
        ApiFunction::primitive(
            "forward",
            vec![ParamSpec::number("d", "meters")],
            None,
            "moves forward along the heading, stopping short of objects",
        ),
        ApiFunction::primitive(
            "turn",
            vec![ParamSpec::number("delta", "degrees")],
            None,
            "rotates in place, counterclockwise positive",
        ),
        ApiFunction::primitive("get_pose", vec![], Some(ParamKind::Record), "returns {x, y, theta}"),
        ApiFunction::primitive(
            "describe_scene",
            vec![],
            Some(ParamKind::List),
            "lists visible objects as {label, range, bearing}, nearest first",
        ),
        ApiFunction::primitive(
            "get_detections",
            vec![],
            Some(ParamKind::List),
            "returns camera detections {label, bbox, depth}",
        ),
        ApiFunction::primitive(
            "get_depth_for",
            vec![ParamSpec::new("detection", ParamKind::Record)],
            Some(ParamKind::Number),
            "returns the median depth of a detection in meters",
        ),
        ApiFunction::primitive(
            "estimate_angle",
            vec![ParamSpec::new("detection", ParamKind::Record)],
            Some(ParamKind::Number),
            "returns the detection's bearing in degrees, positive to the right",
        ),
        ApiFunction::primitive(
            "depth_mask",
            vec![
                ParamSpec::new("detections", ParamKind::List),
                ParamSpec::number("near", "meters"),
                ParamSpec::number("far", "meters"),
            ],
            Some(ParamKind::List),
            "keeps detections whose depth lies within [near, far]",
        ),
    ]
}

impl Nav2d {
    pub fn new(pose: Pose2, objects: Vec<NavObject>) -> Self {
        Self {
            pose,
            objects,
            camera: CameraModel::default(),
            max_range_m: MAX_RANGE_M,
            trajectory: vec![[pose.x, pose.y]],
        }
    }

    /// A seeded scene: the agent at the origin with a random heading, one
    /// object labelled `target` 3-8 m away, and `distractors` other objects.
    pub fn seeded(seed: u64, target_label: &str, distractors: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heading = rng.gen_range(-180.0..180.0);
        let mut objects: Vec<NavObject> = Vec::new();
        let r = rng.gen_range(3.0..8.0);
        let a: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        objects.push(NavObject::new(target_label, r * a.cos(), r * a.sin()));
        let labels = ["chair", "table", "plant", "lamp", "box", "shelf"];
        let mut attempts = 0;
        while objects.len() < distractors + 1 && attempts < 1000 {
            attempts += 1;
            let x: f64 = rng.gen_range(-9.0..9.0);
            let y: f64 = rng.gen_range(-9.0..9.0);
            let far_from_agent = x.hypot(y) > 1.5;
            let spaced = objects.iter().all(|o| (o.x - x).hypot(o.y - y) > 1.5);
            if far_from_agent && spaced {
                let label = labels[(objects.len() - 1) % labels.len()];
                objects.push(NavObject::new(label, x, y));
            }
        }
        Self::new(Pose2::new(0.0, 0.0, heading), objects)
    }

    pub fn object(&self, label: &str) -> Option<&NavObject> {
        self.objects.iter().find(|o| o.label == label)
    }

    pub fn distance_to(&self, label: &str) -> Option<f64> {
        self.object(label)
            .map(|o| (o.x - self.pose.x).hypot(o.y - self.pose.y))
    }

    pub fn turn(&mut self, delta_deg: f64) {
        self.pose.theta = normalize_deg(self.pose.theta + delta_deg);
    }

    /// Moves up to `d` meters, stopping where the agent would come within
    /// `radius + 0.1` m of an object.
    pub fn forward(&mut self, d: f64) -> Result<f64, WorldError> {
        if !d.is_finite() || d < 0.0 {
            return Err(WorldError::BadArgument(format!("forward distance {d} must be >= 0")));
        }
        let h = self.pose.theta.to_radians();
        let dir = [h.cos(), h.sin()];
        let mut travel = d;
        for o in &self.objects {
            let stop = o.radius + STOP_GAP_M;
            let w = [self.pose.x - o.x, self.pose.y - o.y];
            let b = w[0] * dir[0] + w[1] * dir[1];
            let c = w[0] * w[0] + w[1] * w[1] - stop * stop;
            if c <= 1e-12 {
                // Already at the stop distance: only moving away is allowed.
                if b < 0.0 {
                    travel = 0.0;
                }
                continue;
            }
            let disc = b * b - c;
            if disc < 0.0 {
                continue;
            }
            let t = -b - disc.sqrt();
            if t >= 0.0 && t < travel {
                travel = t;
            }
        }
        self.pose.x += travel * dir[0];
        self.pose.y += travel * dir[1];
        self.trajectory.push([self.pose.x, self.pose.y]);
        Ok(travel)
    }

    /// True range and CCW bearing of an object in the agent frame.
    pub fn polar(&self, o: &NavObject) -> (f64, f64) {
        let dx = o.x - self.pose.x;
        let dy = o.y - self.pose.y;
        let range = dx.hypot(dy);
        let bearing = normalize_deg(dy.atan2(dx).to_degrees() - self.pose.theta);
        (range, bearing)
    }

    fn visible(&self) -> Vec<(&NavObject, f64, f64)> {
        let half = self.camera.hfov_deg / 2.0;
        let mut out: Vec<_> = self
            .objects
            .iter()
            .map(|o| {
                let (r, b) = self.polar(o);
                (o, r, b)
            })
            .filter(|(_, r, b)| *r <= self.max_range_m && b.abs() <= half + 1e-9)
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.label.cmp(&b.0.label)));
        out
    }

    /// Visible objects, ranges quantized to 0.1 m and bearings to 1°.
    pub fn describe_scene(&self) -> SceneDescription {
        let half = self.camera.hfov_deg / 2.0;
        SceneDescription {
            entries: self
                .visible()
                .into_iter()
                .map(|(o, r, b)| SceneEntry {
                    label: o.label.clone(),
                    range_m: ((r * 10.0).round() / 10.0).min(self.max_range_m),
                    bearing_deg: b.round().clamp(-half, half) + 0.0,
                })
                .collect(),
        }
    }

    /// Projects each visible object disk into the forward camera.
    pub fn get_detections(&self) -> Vec<Detection> {
        let cam = self.camera;
        let f = cam.focal_px();
        self.visible()
            .into_iter()
            .filter_map(|(o, r, b)| {
                let br = b.to_radians();
                let ahead = r * br.cos();
                if ahead <= 1e-6 {
                    return None;
                }
                let right = -r * br.sin();
                let uc = cam.cx() + f * right / ahead;
                let half = f * o.radius / ahead;
                let w = cam.width_px as f64;
                let h = cam.height_px as f64;
                Some(Detection {
                    label: o.label.clone(),
                    bbox: [
                        (uc - half).clamp(0.0, w),
                        (cam.cy() - half).clamp(0.0, h),
                        (uc + half).clamp(0.0, w),
                        (cam.cy() + half).clamp(0.0, h),
                    ],
                    median_depth_m: Some(r),
                })
            })
            .collect()
    }
}

/// Pinhole bearing of a detection's bbox center, degrees, positive right.
pub fn estimate_angle(d: &Detection, cam: &CameraModel) -> f64 {
    ((d.u_center() - cam.cx()) / cam.focal_px()).atan().to_degrees()
}

/// Keeps the detections whose median depth lies in `[near, far]`.
pub fn depth_mask(detections: &[Detection], near_m: f64, far_m: f64) -> Result<Vec<Detection>, WorldError> {
    if near_m.is_nan() || far_m.is_nan() || near_m >= far_m {
        return Err(WorldError::BadParams(format!("near {near_m} must be below far {far_m}")));
    }
    let mut out = Vec::new();
    for d in detections {
        let depth = d
            .median_depth_m
            .ok_or_else(|| WorldError::MissingDepth(d.label.clone()))?;
        if (near_m..=far_m).contains(&depth) {
            out.push(d.clone());
        }
    }
    Ok(out)
}

impl World for Nav2d {
    fn kind(&self) -> WorldKind {
        WorldKind::Nav2d
    }

    fn effect_names(&self) -> &'static [&'static str] {
        EFFECTS
    }

    fn invoke(&mut self, name: &str, a: &[Value]) -> Result<Value, WorldError> {
        match name {
            "forward" => {
                args::expect_len(name, a, 1)?;
                Ok(Value::Number(self.forward(args::number(a, 0)?)?))
            }
            "turn" => {
                args::expect_len(name, a, 1)?;
                self.turn(args::number(a, 0)?);
                Ok(Value::None)
            }
            "get_pose" => {
                args::expect_len(name, a, 0)?;
                Ok(self.pose.to_value())
            }
            "describe_scene" => {
                args::expect_len(name, a, 0)?;
                Ok(self.describe_scene().to_value())
            }
            "get_detections" => {
                args::expect_len(name, a, 0)?;
                Ok(Value::List(self.get_detections().iter().map(Detection::to_value).collect()))
            }
            "get_depth_for" => {
                args::expect_len(name, a, 1)?;
                let d = Detection::from_value(&a[0])?;
                d.median_depth_m
                    .map(Value::Number)
                    .ok_or(WorldError::MissingDepth(d.label))
            }
            "estimate_angle" => {
                args::expect_len(name, a, 1)?;
                let d = Detection::from_value(&a[0])?;
                Ok(Value::Number(estimate_angle(&d, &self.camera)))
            }
            "depth_mask" => {
                args::expect_len(name, a, 3)?;
                let list = a[0]
                    .as_list()
                    .ok_or_else(|| WorldError::BadArgument("depth_mask expects a list".into()))?;
                let dets = list.iter().map(Detection::from_value).collect::<Result<Vec<_>, _>>()?;
                let kept = depth_mask(&dets, args::number(a, 1)?, args::number(a, 2)?)?;
                Ok(Value::List(kept.iter().map(Detection::to_value).collect()))
            }
            other => Err(WorldError::UnknownEffect(other.to_string())),
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({
            "world": "nav2d",
            "pose": self.pose,
            "objects": self.objects,
            "moves": self.trajectory.len(),
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
