//! Tabletop blocks with a single gripper.
//!
//! Blocks are 0.1 m cubes. A block rests either on the table at (x, y) or
//! on exactly one other block; at most one block sits on any block, so the
//! support relation is a forest of towers.

use std::any::Any;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{args, World, WorldError, WorldKind};
use crate::dsl::Value;
use crate::registry::{ApiFunction, ParamKind, ParamSpec};

pub const HALF_EXTENT_M: f64 = 0.05;
const CELL_TOLERANCE_M: f64 = 1e-6;

const EFFECTS: &[&str] = &[
    "list_blocks",
    "pick_up",
    "place_on",
    "place_at",
    "gripper_state",
    "check_layout",
    "cell_position",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub color: String,
    /// Table position of the block (or of the tower base it sits on).
    pub position: Option<[f64; 2]>,
    pub on_top_of: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub origin: [f64; 2],
    pub pitch_m: f64,
    pub cols: u32,
    pub rows: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            origin: [0.3, 0.0],
            pitch_m: 0.12,
            cols: 4,
            rows: 4,
        }
    }
}

impl Grid {
    pub fn cell_center(&self, col: u32, row: u32) -> Option<[f64; 2]> {
        (col < self.cols && row < self.rows).then(|| {
            [
                self.origin[0] + col as f64 * self.pitch_m,
                self.origin[1] + row as f64 * self.pitch_m,
            ]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutTarget {
    pub name: String,
    pub cell: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blocks {
    pub blocks: Vec<Block>,
    pub holding: Option<String>,
    pub grid: Grid,
}

pub fn api_functions() -> Vec<ApiFunction> {
    vec![
        ApiFunction::primitive(
            "list_blocks",
            vec![],
            Some(ParamKind::List),
            "returns every block as {name, color, position, on_top_of}",
        ),
        ApiFunction::primitive(
            "pick_up",
            vec![ParamSpec::new("name", ParamKind::String)],
            None,
            "grasps a block that has nothing on top of it",
        ),
        ApiFunction::primitive(
            "place_on",
            vec![ParamSpec::new("name", ParamKind::String)],
            None,
            "puts the held block on top of the named block",
        ),
        ApiFunction::primitive(
            "place_at",
            vec![ParamSpec::number("x", "meters"), ParamSpec::number("y", "meters")],
            None,
            "puts the held block on the table at (x, y)",
        ),
        ApiFunction::primitive(
            "gripper_state",
            vec![],
            Some(ParamKind::String),
            "returns the name of the held block, or none",
        ),
        ApiFunction::primitive(
            "check_layout",
            vec![ParamSpec::new("target", ParamKind::List)
                .with_description("list of {name, cell: [col, row]}")],
            Some(ParamKind::Boolean),
            "returns true when every named block occupies its target cell",
        ),
        ApiFunction::primitive(
            "cell_position",
            vec![ParamSpec::new("col", ParamKind::Number), ParamSpec::new("row", ParamKind::Number)],
            Some(ParamKind::ListOfNumber),
            "returns the table position [x, y] of a layout grid cell",
        ),
    ]
}

impl Blocks {
    pub fn new(grid: Grid) -> Self {
        Self {
            blocks: Vec::new(),
            holding: None,
            grid,
        }
    }

    /// Adds a block on the table or, with `on`, on top of another block.
    pub fn add_block(
        &mut self,
        name: &str,
        color: &str,
        position: [f64; 2],
        on: Option<&str>,
    ) -> Result<(), WorldError> {
        if self.find(name).is_some() {
            return Err(WorldError::BadParams(format!("duplicate block `{name}`")));
        }
        let (position, on_top_of) = match on {
            Some(support) => {
                let base = self.find(support).ok_or_else(|| WorldError::UnknownObject(support.into()))?;
                if self.on_top(support).is_some() {
                    return Err(WorldError::Blocked(support.into()));
                }
                (base.position, Some(support.to_string()))
            }
            None => {
                self.check_table_clear(position)?;
                (Some(position), None)
            }
        };
        self.blocks.push(Block {
            name: name.to_string(),
            color: color.to_string(),
            position,
            on_top_of,
        });
        Ok(())
    }

    fn find(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    fn find_mut(&mut self, name: &str) -> Option<&mut Block> {
        self.blocks.iter_mut().find(|b| b.name == name)
    }

    fn on_top(&self, name: &str) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| b.on_top_of.as_deref() == Some(name))
    }

    /// Height level: 0 on the table, 1 on one block, ...
    pub fn level(&self, name: &str) -> Option<usize> {
        let mut level = 0;
        let mut current = self.find(name)?;
        while let Some(support) = &current.on_top_of {
            level += 1;
            current = self.find(support)?;
        }
        Some(level)
    }

    fn check_table_clear(&self, p: [f64; 2]) -> Result<(), WorldError> {
        let side = 2.0 * HALF_EXTENT_M;
        for b in &self.blocks {
            if b.on_top_of.is_some() {
                continue;
            }
            if let Some(q) = b.position {
                if (q[0] - p[0]).abs() < side - 1e-12 && (q[1] - p[1]).abs() < side - 1e-12 {
                    return Err(WorldError::Overlap(b.name.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn pick_up(&mut self, name: &str) -> Result<(), WorldError> {
        if self.find(name).is_none() {
            return Err(WorldError::UnknownObject(name.into()));
        }
        if let Some(held) = &self.holding {
            return Err(WorldError::GripperFull(held.clone()));
        }
        if self.on_top(name).is_some() {
            return Err(WorldError::Blocked(name.into()));
        }
        let block = self.find_mut(name).expect("checked above");
        block.position = None;
        block.on_top_of = None;
        self.holding = Some(name.to_string());
        Ok(())
    }

    pub fn place_on(&mut self, target: &str) -> Result<(), WorldError> {
        let held = self.holding.clone().ok_or(WorldError::GripperEmpty)?;
        let base = self
            .find(target)
            .filter(|_| target != held)
            .ok_or_else(|| WorldError::UnknownObject(target.into()))?;
        let position = base.position;
        if self.on_top(target).is_some() {
            return Err(WorldError::Blocked(target.into()));
        }
        let block = self.find_mut(&held).expect("held block exists");
        block.position = position;
        block.on_top_of = Some(target.to_string());
        self.holding = None;
        Ok(())
    }

    pub fn place_at(&mut self, x: f64, y: f64) -> Result<(), WorldError> {
        let held = self.holding.clone().ok_or(WorldError::GripperEmpty)?;
        self.check_table_clear([x, y])?;
        let block = self.find_mut(&held).expect("held block exists");
        block.position = Some([x, y]);
        block.on_top_of = None;
        self.holding = None;
        Ok(())
    }

    pub fn check_layout(&self, target: &[LayoutTarget]) -> Result<bool, WorldError> {
        for t in target {
            let block = self
                .find(&t.name)
                .ok_or_else(|| WorldError::UnknownObject(t.name.clone()))?;
            let cell = self
                .grid
                .cell_center(t.cell[0], t.cell[1])
                .ok_or_else(|| WorldError::BadArgument(format!("cell {:?} outside the grid", t.cell)))?;
            let Some(p) = block.position else {
                return Ok(false);
            };
            if (p[0] - cell[0]).abs() > CELL_TOLERANCE_M || (p[1] - cell[1]).abs() > CELL_TOLERANCE_M {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn block_value(&self, b: &Block) -> Value {
        let mut map = BTreeMap::new();
        map.insert("name".to_string(), Value::Str(b.name.clone()));
        map.insert("color".to_string(), Value::Str(b.color.clone()));
        let position = match (b.position, self.level(&b.name)) {
            (Some(p), Some(level)) => {
                Value::numbers(&[p[0], p[1], HALF_EXTENT_M + level as f64 * 2.0 * HALF_EXTENT_M])
            }
            _ => Value::None,
        };
        map.insert("position".to_string(), position);
        map.insert(
            "on_top_of".to_string(),
            Value::Str(b.on_top_of.clone().unwrap_or_default()),
        );
        Value::Record(map)
    }
}

fn layout_targets(value: &Value) -> Result<Vec<LayoutTarget>, WorldError> {
    let bad = || WorldError::BadArgument("expected a list of {name, cell: [col, row]}".into());
    let items = value.as_list().ok_or_else(bad)?;
    items
        .iter()
        .map(|item| {
            let map = item.as_record().ok_or_else(bad)?;
            let name = map.get("name").and_then(Value::as_str).ok_or_else(bad)?;
            let cell = map.get("cell").and_then(Value::as_list).ok_or_else(bad)?;
            let idx = |i: usize| {
                cell.get(i)
                    .and_then(Value::as_number)
                    .filter(|n| *n >= 0.0 && n.fract() == 0.0)
                    .map(|n| n as u32)
                    .ok_or_else(bad)
            };
            Ok(LayoutTarget {
                name: name.to_string(),
                cell: [idx(0)?, idx(1)?],
            })
        })
        .collect()
}

impl World for Blocks {
    fn kind(&self) -> WorldKind {
        WorldKind::Blocks
    }

    fn effect_names(&self) -> &'static [&'static str] {
        EFFECTS
    }

    fn invoke(&mut self, name: &str, a: &[Value]) -> Result<Value, WorldError> {
        match name {
            "list_blocks" => {
                args::expect_len(name, a, 0)?;
                Ok(Value::List(self.blocks.iter().map(|b| self.block_value(b)).collect()))
            }
            "pick_up" => {
                args::expect_len(name, a, 1)?;
                self.pick_up(args::string(a, 0)?)?;
                Ok(Value::None)
            }
            "place_on" => {
                args::expect_len(name, a, 1)?;
                self.place_on(args::string(a, 0)?)?;
                Ok(Value::None)
            }
            "place_at" => {
                args::expect_len(name, a, 2)?;
                self.place_at(args::number(a, 0)?, args::number(a, 1)?)?;
                Ok(Value::None)
            }
            "gripper_state" => {
                args::expect_len(name, a, 0)?;
                Ok(self.holding.clone().map_or(Value::None, Value::Str))
            }
            "check_layout" => {
                args::expect_len(name, a, 1)?;
                Ok(Value::Bool(self.check_layout(&layout_targets(&a[0])?)?))
            }
            "cell_position" => {
                args::expect_len(name, a, 2)?;
                let (c, r) = (args::number(a, 0)?, args::number(a, 1)?);
                if c < 0.0 || r < 0.0 || c.fract() != 0.0 || r.fract() != 0.0 {
                    return Err(WorldError::BadArgument(format!("cell ({c}, {r}) is not a grid index")));
                }
                let p = self
                    .grid
                    .cell_center(c as u32, r as u32)
                    .ok_or_else(|| WorldError::BadArgument(format!("cell ({c}, {r}) outside the grid")))?;
                Ok(Value::numbers(&p))
            }
            other => Err(WorldError::UnknownEffect(other.to_string())),
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({
            "world": "blocks",
            "blocks": self.blocks,
            "holding": self.holding,
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
