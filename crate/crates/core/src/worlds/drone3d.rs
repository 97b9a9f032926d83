//! Point-mass drone among axis-aligned box obstacles.
//!
//! Motion is straight-line at 2 m/s sampled every 0.1 s. Each sample is
//! appended to the trajectory and checked against the raw boxes (collision)
//! and the boxes inflated by the safety margin.

use std::any::Any;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{args, normalize_deg, Pose3, World, WorldError, WorldKind};
use crate::dsl::Value;
use crate::registry::{ApiFunction, ParamKind, ParamSpec};
use crate::report::ExecReport;

pub const SPEED_MPS: f64 = 2.0;
pub const DT: f64 = 0.1;
pub const SAMPLE_SPACING_M: f64 = SPEED_MPS * DT;
pub const SENSOR_MAX_M: f64 = 20.0;
pub const TAKEOFF_ALTITUDE_M: f64 = 1.0;
pub const DEFAULT_SAFETY_MARGIN_M: f64 = 1.0;

const EFFECTS: &[&str] = &[
    "takeoff",
    "land",
    "fly_to",
    "fly_path",
    "get_position",
    "set_yaw",
    "get_yaw",
    "turn",
    "get_distance_reading",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn inflated(&self, by: f64) -> Self {
        Self {
            min: [self.min[0] - by, self.min[1] - by, self.min[2] - by],
            max: [self.max[0] + by, self.max[1] + by, self.max[2] + by],
        }
    }

    /// Distance along a horizontal ray at height `p[2]` to the box surface,
    /// 0 when the origin is inside, `None` when the ray misses.
    pub fn ray_distance(&self, p: [f64; 3], dir: [f64; 2]) -> Option<f64> {
        if p[2] < self.min[2] || p[2] > self.max[2] {
            return None;
        }
        let mut t_near = 0.0_f64;
        let mut t_far = f64::INFINITY;
        for i in 0..2 {
            if dir[i].abs() < 1e-12 {
                if p[i] < self.min[i] || p[i] > self.max[i] {
                    return None;
                }
            } else {
                let t1 = (self.min[i] - p[i]) / dir[i];
                let t2 = (self.max[i] - p[i]) / dir[i];
                t_near = t_near.max(t1.min(t2));
                t_far = t_far.min(t1.max(t2));
            }
        }
        (t_near <= t_far).then_some(t_near)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum DroneAction {
    Takeoff,
    Land,
    Translate { to: [f64; 3] },
    Yaw { to: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drone3d {
    pub pose: Pose3,
    pub airborne: bool,
    pub arena: Aabb,
    pub obstacles: Vec<Aabb>,
    pub safety_margin_m: f64,
    pub trajectory: Vec<[f64; 3]>,
    pub actions: Vec<DroneAction>,
    pub collisions: u32,
    pub margin_violations: u32,
}

pub fn api_functions() -> Vec<ApiFunction> {
    vec![
        ApiFunction::primitive("takeoff", vec![], None, "takes off and hovers 1 m above the ground"),
        ApiFunction::primitive("land", vec![], None, "lands at the current x, y position"),
        ApiFunction::primitive(
            "fly_to",
            vec![
                ParamSpec::number("x", "meters"),
                ParamSpec::number("y", "meters"),
                ParamSpec::number("z", "meters"),
            ],
            None,
            "flies in a straight line to the given position",
        ),
        ApiFunction::primitive(
            "fly_path",
            vec![ParamSpec::new("waypoints", ParamKind::List)
                .with_description("list of [x, y, z] or [x, y, z, yaw]")],
            None,
            "flies through each waypoint in order",
        ),
        ApiFunction::primitive(
            "get_position",
            vec![],
            Some(ParamKind::Record),
            "returns the drone pose {x, y, z, yaw}",
        ),
        ApiFunction::primitive(
            "set_yaw",
            vec![ParamSpec::number("yaw", "degrees")],
            None,
            "sets the heading, counterclockwise from +x",
        ),
        ApiFunction::primitive("get_yaw", vec![], Some(ParamKind::Number), "returns the heading in degrees"),
        ApiFunction::primitive(
            "turn",
            vec![ParamSpec::number("delta", "degrees")],
            None,
            "rotates the heading by delta, counterclockwise positive",
        ),
        ApiFunction::primitive(
            "get_distance_reading",
            vec![],
            Some(ParamKind::Number),
            "returns the forward range to the nearest obstacle, at most 20 m",
        ),
    ]
}

impl Default for Drone3d {
    fn default() -> Self {
        Self::new(Pose3::new(0.0, 0.0, 0.0, 0.0), false, Vec::new())
    }
}

impl Drone3d {
    pub fn new(start: Pose3, airborne: bool, obstacles: Vec<Aabb>) -> Self {
        Self {
            pose: start,
            airborne,
            arena: Aabb::new([-50.0, -50.0, 0.0], [50.0, 50.0, 50.0]),
            obstacles,
            safety_margin_m: DEFAULT_SAFETY_MARGIN_M,
            trajectory: vec![start.position()],
            actions: Vec::new(),
            collisions: 0,
            margin_violations: 0,
        }
    }

    pub fn with_arena(mut self, arena: Aabb) -> Self {
        self.arena = arena;
        self
    }

    fn record_sample(&mut self, p: [f64; 3]) {
        if self.obstacles.iter().any(|b| b.contains(p)) {
            self.collisions += 1;
        }
        let margin = self.safety_margin_m;
        if self.obstacles.iter().any(|b| b.inflated(margin).contains(p)) {
            self.margin_violations += 1;
        }
        self.trajectory.push(p);
    }

    fn move_linear(&mut self, target: [f64; 3]) {
        let start = self.pose.position();
        let delta = [target[0] - start[0], target[1] - start[1], target[2] - start[2]];
        let dist = (delta[0].powi(2) + delta[1].powi(2) + delta[2].powi(2)).sqrt();
        if dist > 0.0 {
            let n = (dist / SAMPLE_SPACING_M - 1e-9).ceil().max(1.0) as usize;
            for k in 1..=n {
                let s = (k as f64 * SAMPLE_SPACING_M).min(dist) / dist;
                let p = if k == n {
                    target
                } else {
                    [
                        start[0] + delta[0] * s,
                        start[1] + delta[1] * s,
                        start[2] + delta[2] * s,
                    ]
                };
                self.record_sample(p);
            }
        }
        self.pose.x = target[0];
        self.pose.y = target[1];
        self.pose.z = target[2];
    }

    pub fn takeoff(&mut self) {
        if self.airborne {
            return;
        }
        self.airborne = true;
        self.actions.push(DroneAction::Takeoff);
        let p = self.pose;
        self.move_linear([p.x, p.y, p.z.max(TAKEOFF_ALTITUDE_M)]);
    }

    pub fn land(&mut self) -> Result<(), WorldError> {
        if !self.airborne {
            return Err(WorldError::NotAirborne);
        }
        self.actions.push(DroneAction::Land);
        let p = self.pose;
        self.move_linear([p.x, p.y, 0.0]);
        self.airborne = false;
        Ok(())
    }

    fn check_target(&self, target: [f64; 3]) -> Result<(), WorldError> {
        if !self.airborne {
            return Err(WorldError::NotAirborne);
        }
        if !self.arena.contains(target) {
            return Err(WorldError::OutOfBounds(target));
        }
        Ok(())
    }

    pub fn fly_to(&mut self, target: [f64; 3]) -> Result<(), WorldError> {
        self.check_target(target)?;
        self.actions.push(DroneAction::Translate { to: target });
        self.move_linear(target);
        Ok(())
    }

    /// Waypoints are `[x, y, z]` or `[x, y, z, yaw]`; a yaw is applied on
    /// arrival at that waypoint.
    pub fn fly_path(&mut self, waypoints: &[([f64; 3], Option<f64>)]) -> Result<(), WorldError> {
        for (p, _) in waypoints {
            self.check_target(*p)?;
        }
        for (p, yaw) in waypoints {
            self.fly_to(*p)?;
            if let Some(yaw) = yaw {
                self.set_yaw(*yaw);
            }
        }
        Ok(())
    }

    pub fn set_yaw(&mut self, yaw: f64) {
        let yaw = normalize_deg(yaw);
        if yaw != self.pose.yaw {
            self.pose.yaw = yaw;
            self.actions.push(DroneAction::Yaw { to: yaw });
        }
    }

    /// Horizontal ray along `heading_deg` against every obstacle.
    pub fn ray_distance(&self, heading_deg: f64) -> f64 {
        let h = heading_deg.to_radians();
        let dir = [h.cos(), h.sin()];
        let p = self.pose.position();
        self.obstacles
            .iter()
            .filter_map(|b| b.ray_distance(p, dir))
            .fold(SENSOR_MAX_M, f64::min)
    }

    pub fn get_distance_reading(&self) -> f64 {
        self.ray_distance(self.pose.yaw)
    }

    /// Total translated distance.
    pub fn path_length(&self) -> f64 {
        self.trajectory
            .windows(2)
            .map(|w| {
                let d: f64 = (0..3).map(|i| (w[1][i] - w[0][i]).powi(2)).sum();
                d.sqrt()
            })
            .sum()
    }

    /// Goal-reaching with a forward range sensor.
    ///
    /// Each iteration re-aims the heading at the goal. If the sensor (or a
    /// sweep of the same sensor either side of the heading) shows an
    /// obstacle inside the clearance corridor, the heading is rotated in
    /// widening, alternating steps until a clear direction is found and the
    /// drone advances 1 m; otherwise it advances up to 2 m toward the goal.
    pub fn run_reference_avoid(&mut self, goal: Pose3, cfg: AvoidConfig) -> Result<ExecReport, WorldError> {
        if !self.airborne {
            return Err(WorldError::NotAirborne);
        }
        let start_collisions = self.collisions;
        let start_margin = self.margin_violations;
        let dist0 = self.horizontal_distance(goal);
        let budget = 10 * ((dist0 / 2.0).ceil() as u64).max(1);
        let corridor = cfg.margin_m * std::f64::consts::SQRT_2 + 0.2;
        // Side of the current detour; kept until the direct heading clears
        // so the search does not flip between sides of one obstacle.
        let mut committed: Option<f64> = None;
        let mut iterations = 0;
        let mut reached = false;
        while iterations < budget {
            let remaining = self.horizontal_distance(goal);
            if remaining <= GOAL_TOLERANCE_M {
                reached = true;
                break;
            }
            iterations += 1;
            let aim = normalize_deg((goal.y - self.pose.y).atan2(goal.x - self.pose.x).to_degrees());
            self.set_yaw(aim);
            let advance = remaining.min(2.0);
            let needed = cfg.threshold_m.min(remaining + cfg.margin_m);
            if self.get_distance_reading() >= needed && self.corridor_clear(aim, advance, corridor) {
                committed = None;
                self.advance(advance, goal.z)?;
                continue;
            }
            let clear = |heading: f64| {
                self.ray_distance(heading) >= cfg.threshold_m
                    && self.corridor_clear(heading, 1.0, corridor)
            };
            let steps = (180.0 / cfg.rotate_step_deg).floor() as i32;
            let mut found = None;
            if let Some(side) = committed {
                found = (1..=steps)
                    .map(|k| (normalize_deg(aim + side * k as f64 * cfg.rotate_step_deg), side))
                    .find(|(h, _)| clear(*h));
            }
            if found.is_none() {
                'search: for k in 1..=steps {
                    for side in [1.0, -1.0] {
                        let heading = normalize_deg(aim + side * k as f64 * cfg.rotate_step_deg);
                        if clear(heading) {
                            found = Some((heading, side));
                            break 'search;
                        }
                    }
                }
            }
            let Some((heading, side)) = found else {
                break;
            };
            committed = Some(side);
            self.set_yaw(heading);
            self.advance(1.0, goal.z)?;
        }
        let remaining = self.horizontal_distance(goal);
        reached |= remaining <= GOAL_TOLERANCE_M;
        let collisions = self.collisions - start_collisions;
        let margin = self.margin_violations - start_margin;
        let mut report = ExecReport::new(reached, remaining, collisions, vec![], None, iterations);
        if margin > 0 {
            report = report.with_note(format!("{margin} samples inside the safety margin"));
        }
        Ok(report)
    }

    fn horizontal_distance(&self, goal: Pose3) -> f64 {
        (goal.x - self.pose.x).hypot(goal.y - self.pose.y)
    }

    fn advance(&mut self, d: f64, z: f64) -> Result<(), WorldError> {
        let h = self.pose.yaw.to_radians();
        let target = [self.pose.x + d * h.cos(), self.pose.y + d * h.sin(), z];
        self.fly_to(target)
    }

    /// Sweeps the range sensor across ±90° in 5° steps and checks that no
    /// ray hits inside the corridor of half-width `half_width` around a
    /// segment of length `length` along `heading`.
    fn corridor_clear(&self, heading: f64, length: f64, half_width: f64) -> bool {
        if self.ray_distance(heading) < length + half_width {
            return false;
        }
        (1..=18).all(|k| {
            let off = (k as f64 * 5.0).to_radians();
            let need = ((length + half_width) / off.cos()).min(half_width / off.sin());
            [1.0, -1.0].iter().all(|s| {
                self.ray_distance(heading + s * off.to_degrees()) >= need
            })
        })
    }
}

pub const GOAL_TOLERANCE_M: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvoidConfig {
    pub threshold_m: f64,
    pub rotate_step_deg: f64,
    pub margin_m: f64,
}

impl Default for AvoidConfig {
    fn default() -> Self {
        Self {
            threshold_m: 5.0,
            rotate_step_deg: 10.0,
            margin_m: 1.0,
        }
    }
}

/// Boustrophedon passes parallel to +x. The pass count is
/// `floor(width / spacing) + 1`; passes are `spacing` apart and the strip
/// left over is split evenly between the two long edges.
pub fn gen_lawnmower(
    origin: [f64; 2],
    length_m: f64,
    width_m: f64,
    spacing_m: f64,
    altitude_m: f64,
) -> Result<Vec<Pose3>, WorldError> {
    if !(spacing_m > 0.0 && length_m > 0.0 && width_m > 0.0) || !altitude_m.is_finite() {
        return Err(WorldError::BadParams(
            "length, width and spacing must be positive".into(),
        ));
    }
    let passes = (width_m / spacing_m + 1e-9).floor() as usize + 1;
    let inset = (width_m - (passes - 1) as f64 * spacing_m).max(0.0) / 2.0;
    let mut out = Vec::with_capacity(passes * 2);
    for i in 0..passes {
        let y = origin[1] + inset + i as f64 * spacing_m;
        let (x0, x1, yaw) = if i % 2 == 0 {
            (origin[0], origin[0] + length_m, 0.0)
        } else {
            (origin[0] + length_m, origin[0], 180.0)
        };
        out.push(Pose3::new(x0, y, altitude_m, yaw));
        out.push(Pose3::new(x1, y, altitude_m, yaw));
    }
    Ok(out)
}

/// Points on a circle at angles 2πk/n from +x. With `face_center` each yaw
/// points at the center; otherwise it follows the counterclockwise tangent.
pub fn gen_circle(
    center: [f64; 2],
    radius_m: f64,
    n_points: usize,
    altitude_m: f64,
    face_center: bool,
) -> Result<Vec<Pose3>, WorldError> {
    if n_points < 3 || radius_m.is_nan() || radius_m <= 0.0 {
        return Err(WorldError::BadParams(
            "need at least 3 points and a positive radius".into(),
        ));
    }
    Ok((0..n_points)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n_points as f64;
            let x = center[0] + radius_m * a.cos();
            let y = center[1] + radius_m * a.sin();
            let yaw = if face_center {
                (center[1] - y).atan2(center[0] - x).to_degrees()
            } else {
                a.to_degrees() + 90.0
            };
            Pose3::new(x, y, altitude_m, yaw)
        })
        .collect())
}

fn waypoint(value: &Value) -> Result<([f64; 3], Option<f64>), WorldError> {
    let p = args::point3(value)?;
    let yaw = match value {
        Value::List(items) => items.get(3).and_then(Value::as_number),
        Value::Record(map) => map.get("yaw").and_then(Value::as_number),
        _ => None,
    };
    Ok((p, yaw))
}

impl World for Drone3d {
    fn kind(&self) -> WorldKind {
        WorldKind::Drone3d
    }

    fn effect_names(&self) -> &'static [&'static str] {
        EFFECTS
    }

    fn invoke(&mut self, name: &str, a: &[Value]) -> Result<Value, WorldError> {
        match name {
            "takeoff" => {
                args::expect_len(name, a, 0)?;
                self.takeoff();
                Ok(Value::None)
            }
            "land" => {
                args::expect_len(name, a, 0)?;
                self.land()?;
                Ok(Value::None)
            }
            "fly_to" => {
                args::expect_len(name, a, 3)?;
                let target = [args::number(a, 0)?, args::number(a, 1)?, args::number(a, 2)?];
                self.fly_to(target)?;
                Ok(Value::None)
            }
            "fly_path" => {
                args::expect_len(name, a, 1)?;
                let list = a[0]
                    .as_list()
                    .ok_or_else(|| WorldError::BadArgument("fly_path expects a list".into()))?;
                let points = list.iter().map(waypoint).collect::<Result<Vec<_>, _>>()?;
                self.fly_path(&points)?;
                Ok(Value::None)
            }
            "get_position" => {
                args::expect_len(name, a, 0)?;
                Ok(self.pose.to_value())
            }
            "set_yaw" => {
                args::expect_len(name, a, 1)?;
                self.set_yaw(args::number(a, 0)?);
                Ok(Value::None)
            }
            "get_yaw" => {
                args::expect_len(name, a, 0)?;
                Ok(Value::Number(self.pose.yaw))
            }
            "turn" => {
                args::expect_len(name, a, 1)?;
                let yaw = self.pose.yaw + args::number(a, 0)?;
                self.set_yaw(yaw);
                Ok(Value::None)
            }
            "get_distance_reading" => {
                args::expect_len(name, a, 0)?;
                Ok(Value::Number(self.get_distance_reading()))
            }
            other => Err(WorldError::UnknownEffect(other.to_string())),
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({
            "world": "drone3d",
            "pose": self.pose,
            "airborne": self.airborne,
            "samples": self.trajectory.len(),
            "last_sample": self.trajectory.last(),
            "collisions": self.collisions,
            "margin_violations": self.margin_violations,
            "actions": self.actions.len(),
            "obstacles": self.obstacles,
        })
    }

    fn collisions(&self) -> u32 {
        self.collisions
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
