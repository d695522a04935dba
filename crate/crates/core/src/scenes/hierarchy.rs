use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::LabelMap;

/// One of the four nested annotation levels, coarse to fine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    /// background / vessel
    Vessel = 1,
    /// background / empty / filled
    Fill = 2,
    /// background / empty / liquid / solid
    SolidLiquid = 3,
    /// background, vessel and the eight exact material phases
    ExactPhase = 4,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Vessel, Level::Fill, Level::SolidLiquid, Level::ExactPhase];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Level::Vessel),
            2 => Ok(Level::Fill),
            3 => Ok(Level::SolidLiquid),
            4 => Ok(Level::ExactPhase),
            _ => Err(Error::InvalidArgument(format!("annotation level {n} not in 1..=4"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Vessel => "vessel",
            Level::Fill => "fill",
            Level::SolidLiquid => "solid-liquid",
            Level::ExactPhase => "phase",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Level::Vessel => "Vessel region",
            Level::Fill => "Fill level",
            Level::SolidLiquid => "Solid/Liquid",
            Level::ExactPhase => "Exact physical phase",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "vessel" => Ok(Level::Vessel),
            "2" | "fill" => Ok(Level::Fill),
            "3" | "solid-liquid" => Ok(Level::SolidLiquid),
            "4" | "phase" | "exact-phase" => Ok(Level::ExactPhase),
            other => Err(Error::InvalidArgument(format!("unknown level {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelClasses {
    pub level: u8,
    pub name: String,
    pub classes: Vec<String>,
}

/// Maps every class of level `from` to its parent class at level `from - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollapseMap {
    pub from: u8,
    pub to: u8,
    pub map: Vec<u8>,
}

/// The class taxonomy of all four levels plus the collapse maps between
/// adjacent levels. Serialized as the dataset's `hierarchy.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub levels: Vec<LevelClasses>,
    pub collapse: Vec<CollapseMap>,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl HierarchySpec {
    pub fn standard() -> Self {
        let level = |l: Level, classes: &[&str]| LevelClasses {
            level: l.number(),
            name: l.name().to_string(),
            classes: names(classes),
        };
        HierarchySpec {
            levels: vec![
                level(Level::Vessel, &["background", "vessel"]),
                level(Level::Fill, &["background", "empty", "filled"]),
                level(Level::SolidLiquid, &["background", "empty", "liquid", "solid"]),
                level(
                    Level::ExactPhase,
                    &[
                        "background",
                        "vessel",
                        "liquid",
                        "liquid-phase-two",
                        "suspension",
                        "foam",
                        "solid",
                        "powder",
                        "granular",
                        "bulk",
                    ],
                ),
            ],
            collapse: vec![
                CollapseMap {
                    from: 2,
                    to: 1,
                    map: vec![0, 1, 1],
                },
                CollapseMap {
                    from: 3,
                    to: 2,
                    map: vec![0, 1, 2, 2],
                },
                CollapseMap {
                    from: 4,
                    to: 3,
                    map: vec![0, 1, 2, 2, 2, 3, 3, 3, 3, 3],
                },
            ],
        }
    }

    /// Checks that there are four levels and every collapse map is a total
    /// function into the coarser level.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dataset(format!("invalid hierarchy: {m}")));
        if self.levels.len() != 4 {
            return bad(format!("{} levels, expected 4", self.levels.len()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.level as usize != i + 1 || l.classes.len() < 2 || l.classes.len() > 256 {
                return bad(format!("level entry {i} malformed"));
            }
        }
        for from in 2..=4u8 {
            let Some(c) = self.collapse.iter().find(|c| c.from == from) else {
                return bad(format!("no collapse map from level {from}"));
            };
            if c.to != from - 1 {
                return bad(format!("collapse from {from} targets {}", c.to));
            }
            if c.map.len() != self.classes(from).len() {
                return bad(format!("collapse map from level {from} is not total"));
            }
            let coarse = self.classes(from - 1).len();
            if c.map.iter().any(|&m| m as usize >= coarse) {
                return bad(format!("collapse map from level {from} leaves level {}", from - 1));
            }
        }
        Ok(())
    }

    pub fn classes(&self, level: u8) -> &[String] {
        &self.levels[level as usize - 1].classes
    }

    pub fn num_classes(&self, level: Level) -> usize {
        self.classes(level.number()).len()
    }

    pub fn class_names(&self, level: Level) -> &[String] {
        self.classes(level.number())
    }

    pub fn class_id(&self, level: Level, name: &str) -> Option<u8> {
        self.class_names(level).iter().position(|c| c == name).map(|i| i as u8)
    }

    /// Composed lookup table from level `from` down to level `to`.
    pub fn collapse_table(&self, from: Level, to: Level) -> Result<Vec<u8>> {
        if from <= to {
            return Err(Error::InvalidArgument(format!(
                "collapse must go from a finer to a coarser level, got {from} → {to}"
            )));
        }
        let mut table: Vec<u8> = (0..self.num_classes(from) as u8).collect();
        let mut level = from.number();
        while level > to.number() {
            let step = self
                .collapse
                .iter()
                .find(|c| c.from == level)
                .ok_or_else(|| Error::Dataset(format!("no collapse map from level {level}")))?;
            for t in &mut table {
                *t = step.map[*t as usize];
            }
            level -= 1;
        }
        Ok(table)
    }
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self::standard()
    }
}

/// Maps a label map pixelwise from a finer level to a coarser one.
pub fn collapse_labels(map: &LabelMap, from: Level, to: Level, hierarchy: &HierarchySpec) -> Result<LabelMap> {
    map.remap(&hierarchy.collapse_table(from, to)?)
}
