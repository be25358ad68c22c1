//! Object catalog: types, typical names, affordances and task templates.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::task::TaskType;
use crate::program::ObjType;

pub const CATALOG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Affordances {
    #[serde(default)]
    pub pickable: bool,
    #[serde(default)]
    pub openable: bool,
    #[serde(default)]
    pub toggleable: bool,
    #[serde(default)]
    pub receptacle: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTypeSpec {
    pub name: ObjType,
    pub typical_names: Vec<String>,
    #[serde(default)]
    pub affordances: Affordances,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSize {
    pub width: i32,
    pub height: i32,
}

/// Which types a task type may draw its targets, destination and fixtures from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub targets: Vec<ObjType>,
    pub destinations: Vec<ObjType>,
    #[serde(default)]
    pub containers: Vec<ObjType>,
    #[serde(default)]
    pub fixtures: Vec<ObjType>,
    /// Closed receptacle the target starts inside, if any.
    #[serde(default)]
    pub start_inside: Option<ObjType>,
    pub min_primitives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    pub grid: GridSize,
    pub object_types: Vec<ObjectTypeSpec>,
    #[serde(default)]
    pub distractors: Vec<ObjType>,
    pub tasks: BTreeMap<TaskType, TaskTemplate>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed catalog: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported catalog version {0}")]
    Version(u32),
    #[error("invalid catalog: {0}")]
    Invalid(String),
}

static BUILTIN: OnceLock<Catalog> = OnceLock::new();

impl Catalog {
    /// The catalog shipped with the crate.
    pub fn builtin() -> &'static Catalog {
        BUILTIN.get_or_init(|| {
            Catalog::from_json(include_str!("../../data/catalog.json"))
                .expect("bundled catalog is valid")
        })
    }

    pub fn from_json(text: &str) -> Result<Catalog, CatalogError> {
        let catalog: Catalog = serde_json::from_str(text)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Catalog, CatalogError> {
        Catalog::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        if self.version != CATALOG_VERSION {
            return Err(CatalogError::Version(self.version));
        }
        if self.grid.width < 3 || self.grid.height < 3 {
            return Err(CatalogError::Invalid("grid must be at least 3x3".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for spec in &self.object_types {
            if !seen.insert(&spec.name) {
                return Err(CatalogError::Invalid(format!(
                    "duplicate type {}",
                    spec.name
                )));
            }
            if spec.typical_names.is_empty() {
                return Err(CatalogError::Invalid(format!(
                    "{} has no typical names",
                    spec.name
                )));
            }
            for name in &spec.typical_names {
                if name.is_empty() || name.contains('<') || name.to_lowercase() != *name {
                    return Err(CatalogError::Invalid(format!("bad typical name `{name}`")));
                }
            }
        }
        let known = |t: &ObjType| -> Result<(), CatalogError> {
            if seen.contains(t) {
                Ok(())
            } else {
                Err(CatalogError::Invalid(format!("unknown type {t}")))
            }
        };
        for t in &self.distractors {
            known(t)?;
        }
        for task_type in TaskType::ALL {
            let template = self.tasks.get(&task_type).ok_or_else(|| {
                CatalogError::Invalid(format!("missing task template {task_type}"))
            })?;
            if template.targets.is_empty()
                || template.destinations.is_empty()
                || template.min_primitives == 0
            {
                return Err(CatalogError::Invalid(format!(
                    "incomplete task template {task_type}"
                )));
            }
            if task_type == TaskType::NestedPickAndPlace && template.containers.is_empty() {
                return Err(CatalogError::Invalid("nested task needs containers".into()));
            }
            for t in template
                .targets
                .iter()
                .chain(&template.destinations)
                .chain(&template.containers)
                .chain(&template.fixtures)
                .chain(template.start_inside.iter())
            {
                known(t)?;
            }
        }
        Ok(())
    }

    pub fn spec(&self, ty: &ObjType) -> Option<&ObjectTypeSpec> {
        self.object_types.iter().find(|s| &s.name == ty)
    }

    pub fn affordances(&self, ty: &ObjType) -> Affordances {
        self.spec(ty).map(|s| s.affordances).unwrap_or_default()
    }

    /// First typical name of a type; falls back to the lowercased type name.
    pub fn display_name(&self, ty: &ObjType) -> String {
        self.spec(ty)
            .map(|s| s.typical_names[0].clone())
            .unwrap_or_else(|| ty.as_str().to_lowercase())
    }

    pub fn template(&self, task_type: TaskType) -> &TaskTemplate {
        &self.tasks[&task_type]
    }

    /// Position of a type in catalog order, used as a deterministic tie-break.
    pub fn type_index(&self, ty: &ObjType) -> Option<usize> {
        self.object_types.iter().position(|s| &s.name == ty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_covers_all_tasks() {
        let c = Catalog::builtin();
        assert!(c.object_types.len() >= 25);
        for t in TaskType::ALL {
            assert!(c.tasks.contains_key(&t));
        }
        assert_eq!(c.template(TaskType::PickAndPlace).min_primitives, 4);
        assert!(c.template(TaskType::PickCoolPlace).min_primitives >= 12);
    }

    #[test]
    fn shared_names_are_allowed() {
        let c = Catalog::builtin();
        let with_table = c
            .object_types
            .iter()
            .filter(|s| s.typical_names.iter().any(|n| n == "table"))
            .count();
        assert_eq!(with_table, 3);
    }

    #[test]
    fn rejects_unknown_reference() {
        let mut c = Catalog::builtin().clone();
        c.distractors.push(ObjType::new("Unicorn"));
        let text = serde_json::to_string(&c).unwrap();
        assert!(matches!(
            Catalog::from_json(&text),
            Err(CatalogError::Invalid(_))
        ));
    }
}
