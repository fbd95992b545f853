//! JSON scenario files.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "budget": 30.0,
//!   "locations": [{"id": "1", "alpha": 6.591673732008658}],
//!   "local_resources": [{"id": "4", "beta": 3.0}],
//!   "central_resources": [{"id": "3", "beta": 1.0}],
//!   "allocations": {
//!     "plan": {"central": {"3": 15.0}, "local": {"1/4": 3.0}}
//!   }
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::error::Category;
use thiserror::Error;

use crate::model::{Allocation, AllocationKey, Location, ModelError, Resource, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Parse(serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid `{field}`: {source}")]
    Invariant { field: String, source: ModelError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub scenario: Scenario<f64>,
    /// Named allocations, sorted by name.
    pub allocations: BTreeMap<String, Allocation<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    schema_version: u32,
    budget: f64,
    locations: Vec<RawLocation>,
    #[serde(default)]
    local_resources: Vec<RawResource>,
    #[serde(default)]
    central_resources: Vec<RawResource>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    allocations: BTreeMap<String, RawAllocation>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLocation {
    id: String,
    alpha: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResource {
    id: String,
    beta: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAllocation {
    #[serde(default)]
    central: BTreeMap<String, f64>,
    #[serde(default)]
    local: BTreeMap<String, f64>,
}

fn scenario_field(e: &ModelError, raw: &RawFile) -> String {
    match e {
        ModelError::NoLocations => "locations".into(),
        ModelError::NoResources => "local_resources/central_resources".into(),
        ModelError::InvalidAlpha { id, .. } => format!("locations[{id}].alpha"),
        ModelError::InvalidBeta { id, .. } => {
            if raw.local_resources.iter().any(|r| &r.id == id) {
                format!("local_resources[{id}].beta")
            } else {
                format!("central_resources[{id}].beta")
            }
        }
        ModelError::InvalidBudget(_) => "budget".into(),
        _ => "id".into(),
    }
}

impl ScenarioFile {
    pub fn new(scenario: Scenario<f64>) -> Self {
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            scenario,
            allocations: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let raw: RawFile = serde_json::from_str(text).map_err(|e| match e.classify() {
            Category::Data => LoadError::Schema(e.to_string()),
            _ => LoadError::Parse(e),
        })?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(LoadError::Schema(format!(
                "schema_version must be {SCHEMA_VERSION}, got {}",
                raw.schema_version
            )));
        }
        let ids = raw
            .locations
            .iter()
            .map(|l| &l.id)
            .chain(raw.local_resources.iter().map(|r| &r.id))
            .chain(raw.central_resources.iter().map(|r| &r.id));
        for id in ids {
            if id.contains('/') {
                return Err(LoadError::Schema(format!(
                    "identifier `{id}` must not contain '/'"
                )));
            }
        }
        let scenario = Scenario::new(
            raw.locations
                .iter()
                .map(|l| Location::new(l.id.clone(), l.alpha))
                .collect(),
            raw.local_resources
                .iter()
                .map(|r| Resource::new(r.id.clone(), r.beta))
                .collect(),
            raw.central_resources
                .iter()
                .map(|r| Resource::new(r.id.clone(), r.beta))
                .collect(),
            raw.budget,
        )
        .map_err(|source| LoadError::Invariant {
            field: scenario_field(&source, &raw),
            source,
        })?;

        let mut allocations = BTreeMap::new();
        for (name, a) in &raw.allocations {
            let field = format!("allocations.{name}");
            let mut local = Vec::with_capacity(a.local.len());
            for (key, &v) in &a.local {
                let (loc, res) = key.split_once('/').ok_or_else(|| {
                    LoadError::Schema(format!(
                        "{field}.local key `{key}` must look like `location/resource`"
                    ))
                })?;
                local.push((loc, res, v));
            }
            let central = a.central.iter().map(|(k, &v)| (k.as_str(), v));
            let allocation = Allocation::from_keyed(&scenario, local, central)
                .and_then(|x| x.check_feasible(&scenario).map(|_| x))
                .map_err(|source| LoadError::Invariant {
                    field: field.clone(),
                    source,
                })?;
            allocations.insert(name.clone(), allocation);
        }
        Ok(ScenarioFile {
            schema_version: raw.schema_version,
            scenario,
            allocations,
        })
    }

    pub fn to_json(&self) -> String {
        let s = &self.scenario;
        let allocations = self
            .allocations
            .iter()
            .map(|(name, x)| {
                let mut raw = RawAllocation::default();
                for key in s.keys() {
                    let v = x.values()[s.flat_index(key)];
                    match key {
                        AllocationKey::Central { .. } => raw.central.insert(s.key_label(key), v),
                        AllocationKey::Local { .. } => raw.local.insert(s.key_label(key), v),
                    };
                }
                (name.clone(), raw)
            })
            .collect();
        let raw = RawFile {
            schema_version: self.schema_version,
            budget: s.budget(),
            locations: s
                .locations()
                .iter()
                .map(|l| RawLocation {
                    id: l.id.clone(),
                    alpha: l.alpha,
                })
                .collect(),
            local_resources: s
                .local_resources()
                .iter()
                .map(|r| RawResource {
                    id: r.id.clone(),
                    beta: r.beta,
                })
                .collect(),
            central_resources: s
                .central_resources()
                .iter()
                .map(|r| RawResource {
                    id: r.id.clone(),
                    beta: r.beta,
                })
                .collect(),
            allocations,
        };
        serde_json::to_string_pretty(&raw).expect("finite scenario serializes")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile, LoadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioFile::from_json(&text)
}

pub fn save_scenario(path: impl AsRef<Path>, file: &ScenarioFile) -> std::io::Result<()> {
    let mut text = file.to_json();
    text.push('\n');
    fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "budget": 3,
        "locations": [{"id": "1", "alpha": 0}, {"id": "2", "alpha": 0}],
        "local_resources": [{"id": "3", "beta": 4}],
        "allocations": {"even": {"local": {"1/3": 1, "2/3": 1}}}
    }"#;

    #[test]
    fn minimal_file_loads() {
        let f = ScenarioFile::from_json(MINIMAL).unwrap();
        assert_eq!(f.scenario.dimension(), 2);
        assert_eq!(f.allocations["even"].values(), &[1.0, 1.0]);
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert!(matches!(
            ScenarioFile::from_json("{ nope"),
            Err(LoadError::Parse(_))
        ));
        assert!(matches!(
            ScenarioFile::from_json(&MINIMAL.replace("\"budget\"", "\"budgett\"")),
            Err(LoadError::Schema(_))
        ));
        assert!(matches!(
            ScenarioFile::from_json(
                &MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2")
            ),
            Err(LoadError::Schema(_))
        ));
        match ScenarioFile::from_json(&MINIMAL.replace("\"beta\": 4", "\"beta\": 0")) {
            Err(LoadError::Invariant { field, source }) => {
                assert_eq!(field, "local_resources[3].beta");
                assert!(matches!(source, ModelError::InvalidBeta { .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_id_across_local_and_central_rejected() {
        let text = MINIMAL.replace(
            "\"allocations\"",
            "\"central_resources\": [{\"id\": \"3\", \"beta\": 1}], \"allocations\"",
        );
        match ScenarioFile::from_json(&text) {
            Err(LoadError::Invariant { source, .. }) => {
                assert_eq!(source, ModelError::DuplicateId("3".into()))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_allocations_name_their_field() {
        let missing = MINIMAL.replace(", \"2/3\": 1", "");
        match ScenarioFile::from_json(&missing) {
            Err(LoadError::Invariant { field, source }) => {
                assert_eq!(field, "allocations.even");
                assert_eq!(source, ModelError::MissingKey("2/3".into()));
            }
            other => panic!("{other:?}"),
        }
        let over = MINIMAL.replace("\"2/3\": 1", "\"2/3\": 5");
        assert!(matches!(
            ScenarioFile::from_json(&over),
            Err(LoadError::Invariant {
                source: ModelError::Infeasible { .. },
                ..
            })
        ));
        let badkey = MINIMAL.replace("\"2/3\"", "\"23\"");
        assert!(matches!(
            ScenarioFile::from_json(&badkey),
            Err(LoadError::Schema(_))
        ));
    }
}
