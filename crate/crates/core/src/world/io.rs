//! World definition files: JSON, or an ASCII map either standalone or
//! embedded in the JSON under `map`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cell, ObjectId, ObjectKind, Relocation, WorldError, WorldModel};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub height: Option<usize>,
    #[serde(default)]
    pub walls: Vec<[usize; 2]>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub slip_probability: f64,
    #[serde(default)]
    pub step_cost: f64,
    #[serde(default)]
    pub observation_confusion: f64,
    #[serde(default)]
    pub schedule: Vec<RelocationSpec>,
    #[serde(default)]
    pub start: Option<[usize; 2]>,
    /// ASCII rows; when present, `width`/`height`/`walls` come from the map.
    #[serde(default)]
    pub map: Option<Vec<String>>,
    #[serde(default = "one")]
    pub reward_magnitude: f64,
    #[serde(default = "one")]
    pub hazard_magnitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: u32,
    pub kind: ObjectKindName,
    pub magnitude: f64,
    #[serde(default)]
    pub consumable: bool,
    pub at: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKindName {
    Reward,
    Hazard,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelocationSpec {
    pub t: u64,
    pub object: u32,
    pub to: [usize; 2],
}

pub(super) struct AsciiSpec {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<Cell>,
    pub objects: Vec<(ObjectId, ObjectKind, Cell)>,
    pub start: Option<Cell>,
}

pub(super) fn parse_ascii(
    rows: &[&str],
    reward_magnitude: f64,
    hazard_magnitude: f64,
) -> Result<AsciiSpec, WorldError> {
    let rows: Vec<&str> = rows.iter().map(|r| r.trim_end()).filter(|r| !r.is_empty()).collect();
    if rows.is_empty() {
        return Err(WorldError::Config("empty map".into()));
    }
    let width = rows[0].chars().count();
    let mut spec = AsciiSpec { width, height: rows.len(), walls: Vec::new(), objects: Vec::new(), start: None };
    let mut next_id = 1;
    for (y, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(WorldError::Config(format!(
                "map row {} has length {}, expected {width}",
                y + 1,
                row.chars().count()
            )));
        }
        for (x, ch) in row.chars().enumerate() {
            let c = Cell::new(x, y);
            match ch {
                '#' => spec.walls.push(c),
                '.' => {}
                'S' => {
                    if spec.start.replace(c).is_some() {
                        return Err(WorldError::Config("map has more than one 'S'".into()));
                    }
                }
                'R' | 'H' => {
                    let kind = if ch == 'R' {
                        ObjectKind::Reward { magnitude: reward_magnitude, consumable: true }
                    } else {
                        ObjectKind::Hazard { magnitude: hazard_magnitude }
                    };
                    spec.objects.push((ObjectId(next_id), kind, c));
                    next_id += 1;
                }
                other => {
                    return Err(WorldError::Config(format!(
                        "map row {} column {}: unknown symbol '{other}'",
                        y + 1,
                        x + 1
                    )))
                }
            }
        }
    }
    Ok(spec)
}

impl WorldFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn build(&self) -> Result<WorldModel, WorldError> {
        let cell = |p: [usize; 2]| Cell::new(p[0], p[1]);
        let (width, height, mut walls, mut objects, mut start) = match &self.map {
            Some(rows) => {
                let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
                let a = parse_ascii(&rows, self.reward_magnitude, self.hazard_magnitude)?;
                (a.width, a.height, a.walls, a.objects, a.start)
            }
            None => {
                let width = self.width.ok_or_else(|| WorldError::Config("missing width".into()))?;
                let height = self.height.ok_or_else(|| WorldError::Config("missing height".into()))?;
                (width, height, Vec::new(), Vec::new(), None)
            }
        };
        walls.extend(self.walls.iter().copied().map(cell));
        for o in &self.objects {
            let kind = match o.kind {
                ObjectKindName::Reward => ObjectKind::Reward { magnitude: o.magnitude, consumable: o.consumable },
                ObjectKindName::Hazard => ObjectKind::Hazard { magnitude: o.magnitude },
            };
            objects.push((ObjectId(o.id), kind, cell(o.at)));
        }
        if let Some(s) = self.start {
            start = Some(cell(s));
        }
        let schedule: Vec<Relocation> =
            self.schedule.iter().map(|r| Relocation { t: r.t, object: ObjectId(r.object), to: cell(r.to) }).collect();
        WorldModel::new(
            width,
            height,
            &walls,
            &objects,
            start,
            self.slip_probability,
            self.step_cost,
            self.observation_confusion,
            &schedule,
        )
    }
}

/// Error while reading a world file, with the location when known.
#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Syntax { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {source}")]
    Invalid { path: String, source: WorldError },
}

impl WorldModel {
    /// Loads a `.json` world definition, or any other extension as a bare
    /// ASCII map with unit magnitudes.
    pub fn load(path: &Path) -> Result<WorldModel, LoadError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: p.clone(), source })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let file = WorldFile::from_json(&text).map_err(|e| LoadError::Syntax {
                path: p.clone(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
            file.build().map_err(|source| LoadError::Invalid { path: p, source })
        } else {
            let rows: Vec<&str> = text.lines().collect();
            WorldModel::from_ascii(&rows, 1.0, 1.0).map_err(|source| LoadError::Invalid { path: p, source })
        }
    }
}
