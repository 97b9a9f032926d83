//! Planar robot with an upward-facing camera catching a falling ball.
//!
//! The robot moves on the ground plane (x, y). The camera sits at the robot
//! position looking up; image `u` grows with +x and `v` with +y. The ball
//! flies ballistically under gravity and is integrated with velocity
//! Verlet, which is exact for constant acceleration.

use std::any::Any;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{args, CameraModel, World, WorldError, WorldKind};
use crate::dsl::Value;
use crate::registry::{ApiFunction, ParamKind, ParamSpec};
use crate::report::ExecReport;

pub const GRAVITY: f64 = 9.81;
pub const DT: f64 = 0.02;
pub const MAX_SPEED: f64 = 5.0;
pub const CATCH_RADIUS_M: f64 = 0.25;
pub const TOUCHDOWN_Z_M: f64 = 0.2;

const EFFECTS: &[&str] = &[
    "spawn_ball",
    "step",
    "detect_ball",
    "set_velocity",
    "get_robot_position",
    "ball_landed",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub pos: [f64; 3],
    pub vel: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Touchdown {
    pub miss_m: f64,
    pub caught: bool,
    pub step: u64,
}

/// Launch distribution for [`Catch2d::spawn_ball`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaunchParams {
    pub height_m: [f64; 2],
    pub vertical_speed: [f64; 2],
    pub horizontal_speed: f64,
    /// Fraction of the in-view horizontal extent used for the start offset.
    pub offset_fraction: f64,
}

impl Default for LaunchParams {
    fn default() -> Self {
        Self {
            height_m: [3.0, 6.0],
            vertical_speed: [1.0, 3.0],
            horizontal_speed: 1.0,
            offset_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catch2d {
    pub camera: CameraModel,
    pub launch: LaunchParams,
    pub robot: [f64; 2],
    pub command: [f64; 2],
    pub ball: Option<Ball>,
    pub touchdown: Option<Touchdown>,
    pub steps: u64,
}

pub fn api_functions() -> Vec<ApiFunction> {
    vec![
        ApiFunction::primitive(
            "spawn_ball",
            vec![ParamSpec::new("seed", ParamKind::Number)],
            None,
            "launches a ball from a seeded random start above the robot",
        ),
        ApiFunction::primitive("step", vec![], None, "advances the simulation by 0.02 s"),
        ApiFunction::primitive(
            "detect_ball",
            vec![],
            Some(ParamKind::Record),
            "returns the ball's pixel position {u, v} in the upward camera, or none when not visible",
        ),
        ApiFunction::primitive(
            "set_velocity",
            vec![ParamSpec::number("vx", "m/s"), ParamSpec::number("vy", "m/s")],
            None,
            "sets the robot's planar velocity, clamped to 5 m/s",
        ),
        ApiFunction::primitive(
            "get_robot_position",
            vec![],
            Some(ParamKind::ListOfNumber),
            "returns the robot position [x, y] in meters",
        ),
        ApiFunction::primitive(
            "ball_landed",
            vec![],
            Some(ParamKind::Boolean),
            "returns true once the ball has come down to catching height",
        ),
    ]
}

impl Default for Catch2d {
    fn default() -> Self {
        Self::new(CameraModel::default(), LaunchParams::default())
    }
}

impl Catch2d {
    pub fn new(camera: CameraModel, launch: LaunchParams) -> Self {
        Self {
            camera,
            launch,
            robot: [0.0, 0.0],
            command: [0.0, 0.0],
            ball: None,
            touchdown: None,
            steps: 0,
        }
    }

    /// Places a ball at an explicit state (tests and scripted scenes).
    pub fn place_ball(&mut self, pos: [f64; 3], vel: [f64; 3]) {
        self.ball = Some(Ball { pos, vel });
        self.touchdown = None;
    }

    pub fn spawn_ball(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = self.launch;
        let z = rng.gen_range(p.height_m[0]..=p.height_m[1]);
        let half_u = z * self.camera.cx() / self.camera.focal_px();
        let half_v = z * self.camera.cy() / self.camera.focal_px();
        let dx = rng.gen_range(-1.0..=1.0) * p.offset_fraction * half_u;
        let dy = rng.gen_range(-1.0..=1.0) * p.offset_fraction * half_v;
        let vx = rng.gen_range(-1.0..=1.0) * p.horizontal_speed;
        let vy = rng.gen_range(-1.0..=1.0) * p.horizontal_speed;
        let vz = rng.gen_range(p.vertical_speed[0]..=p.vertical_speed[1]);
        self.place_ball(
            [self.robot[0] + dx, self.robot[1] + dy, z],
            [vx, vy, vz],
        );
    }

    pub fn set_velocity(&mut self, vx: f64, vy: f64) {
        let speed = vx.hypot(vy);
        self.command = if speed > MAX_SPEED {
            [vx / speed * MAX_SPEED, vy / speed * MAX_SPEED]
        } else {
            [vx, vy]
        };
    }

    pub fn step(&mut self) -> Result<(), WorldError> {
        let ball = self.ball.as_mut().ok_or(WorldError::NotSpawned)?;
        self.steps += 1;
        self.robot[0] += self.command[0] * DT;
        self.robot[1] += self.command[1] * DT;
        if self.touchdown.is_some() {
            return Ok(());
        }
        let half_kick = 0.5 * GRAVITY * DT;
        ball.vel[2] -= half_kick;
        for i in 0..3 {
            ball.pos[i] += ball.vel[i] * DT;
        }
        ball.vel[2] -= half_kick;
        if ball.pos[2] <= TOUCHDOWN_Z_M {
            let miss = (ball.pos[0] - self.robot[0]).hypot(ball.pos[1] - self.robot[1]);
            self.touchdown = Some(Touchdown {
                miss_m: miss,
                caught: miss <= CATCH_RADIUS_M,
                step: self.steps,
            });
        }
        Ok(())
    }

    /// Pixel position of the ball center, if it is above the camera and
    /// inside the image.
    pub fn detect_ball(&self) -> Result<Option<[f64; 2]>, WorldError> {
        let ball = self.ball.as_ref().ok_or(WorldError::NotSpawned)?;
        Ok(self.project(ball.pos))
    }

    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let z = p[2];
        if z <= 0.0 {
            return None;
        }
        let f = self.camera.focal_px();
        let u = self.camera.cx() + f * (p[0] - self.robot[0]) / z;
        let v = self.camera.cy() + f * (p[1] - self.robot[1]) / z;
        let inside = (0.0..=self.camera.width_px as f64).contains(&u)
            && (0.0..=self.camera.height_px as f64).contains(&v);
        inside.then_some([u, v])
    }

    /// Proportional visual servo: velocity proportional to the normalized
    /// pixel error scaled by an assumed ball height; the last command is
    /// held while the ball is out of view.
    pub fn servo_command(&self, kp: f64, pixel: [f64; 2], assumed_height_m: f64) -> [f64; 2] {
        let f = self.camera.focal_px();
        [
            kp * (pixel[0] - self.camera.cx()) / f * assumed_height_m,
            kp * (pixel[1] - self.camera.cy()) / f * assumed_height_m,
        ]
    }

    /// Midpoint of the launch height range, used when no better estimate exists.
    pub fn nominal_height_m(&self) -> f64 {
        (self.launch.height_m[0] + self.launch.height_m[1]) / 2.0
    }

    pub fn run_reference_servo(&mut self, kp: f64, assumed_height_m: f64) -> Result<ExecReport, WorldError> {
        if self.ball.is_none() {
            return Err(WorldError::NotSpawned);
        }
        let start = self.steps;
        let max_steps = 2_000;
        while self.touchdown.is_none() && self.steps - start < max_steps {
            if let Some(pixel) = self.detect_ball()? {
                let cmd = self.servo_command(kp, pixel, assumed_height_m);
                self.set_velocity(cmd[0], cmd[1]);
            }
            self.step()?;
        }
        let (caught, miss) = match self.touchdown {
            Some(t) => (t.caught, t.miss_m),
            None => (false, f64::INFINITY),
        };
        Ok(ExecReport::new(caught, miss, 0, vec![], None, self.steps - start))
    }
}

impl World for Catch2d {
    fn kind(&self) -> WorldKind {
        WorldKind::Catch2d
    }

    fn effect_names(&self) -> &'static [&'static str] {
        EFFECTS
    }

    fn invoke(&mut self, name: &str, a: &[Value]) -> Result<Value, WorldError> {
        match name {
            "spawn_ball" => {
                args::expect_len(name, a, 1)?;
                let seed = args::number(a, 0)?;
                self.spawn_ball(seed.abs() as u64);
                Ok(Value::None)
            }
            "step" => {
                args::expect_len(name, a, 0)?;
                self.step()?;
                Ok(Value::None)
            }
            "detect_ball" => {
                args::expect_len(name, a, 0)?;
                Ok(match self.detect_ball()? {
                    Some([u, v]) => Value::record([("u", Value::Number(u)), ("v", Value::Number(v))]),
                    None => Value::None,
                })
            }
            "set_velocity" => {
                args::expect_len(name, a, 2)?;
                self.set_velocity(args::number(a, 0)?, args::number(a, 1)?);
                Ok(Value::None)
            }
            "get_robot_position" => {
                args::expect_len(name, a, 0)?;
                Ok(Value::numbers(&self.robot))
            }
            "ball_landed" => {
                args::expect_len(name, a, 0)?;
                Ok(Value::Bool(self.touchdown.is_some()))
            }
            other => Err(WorldError::UnknownEffect(other.to_string())),
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({
            "world": "catch2d",
            "robot": self.robot,
            "command": self.command,
            "ball": self.ball,
            "touchdown": self.touchdown,
            "steps": self.steps,
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overhead_ball_projects_to_center() {
        let mut w = Catch2d::default();
        w.place_ball([0.0, 0.0, 4.0], [0.0; 3]);
        assert_eq!(w.detect_ball().unwrap(), Some([320.0, 240.0]));
    }

    #[test]
    fn pinhole_offset() {
        let mut w = Catch2d::default();
        w.place_ball([2.0, 0.0, 4.0], [0.0; 3]);
        let [u, v] = w.detect_ball().unwrap().unwrap();
        assert!((u - 480.0).abs() < 1e-9);
        assert!((v - 240.0).abs() < 1e-9);
    }

    #[test]
    fn not_spawned() {
        let mut w = Catch2d::default();
        assert_eq!(w.step(), Err(WorldError::NotSpawned));
        assert_eq!(w.detect_ball(), Err(WorldError::NotSpawned));
    }

    #[test]
    fn ball_below_camera_is_not_detected() {
        let mut w = Catch2d::default();
        w.place_ball([0.0, 0.0, -0.1], [0.0; 3]);
        assert_eq!(w.detect_ball().unwrap(), None);
    }

    #[test]
    fn spawned_ball_starts_in_view() {
        let mut w = Catch2d::default();
        for seed in 0..200 {
            w.spawn_ball(seed);
            assert!(w.detect_ball().unwrap().is_some(), "seed {seed}");
        }
    }

    #[test]
    fn servo_is_proportional() {
        let w = Catch2d::default();
        assert_eq!(w.servo_command(2.0, [320.0, 240.0], 4.0), [0.0, 0.0]);
        let a = w.servo_command(2.0, [350.0, 250.0], 4.0);
        let b = w.servo_command(2.0, [380.0, 260.0], 4.0);
        assert!((b[0] - 2.0 * a[0]).abs() < 1e-12);
        assert!((b[1] - 2.0 * a[1]).abs() < 1e-12);
    }

    #[test]
    fn velocity_is_clamped() {
        let mut w = Catch2d::default();
        w.set_velocity(30.0, 40.0);
        assert!((w.command[0] - 3.0).abs() < 1e-12);
        assert!((w.command[1] - 4.0).abs() < 1e-12);
    }
}
