use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CandidateError, Knob};
use crate::SCHEMA_VERSION;

/// The set of active knobs plus a version stamped by the repair loop.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ConfigDoc", into = "ConfigDoc")]
pub struct CandidateConfig {
    pub active: BTreeSet<Knob>,
    pub version: u64,
}

/// On-disk form: every catalog knob listed with a boolean.
#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    schema_version: u32,
    version: u64,
    #[serde(default)]
    knobs: BTreeMap<String, bool>,
}

impl TryFrom<ConfigDoc> for CandidateConfig {
    type Error = CandidateError;

    fn try_from(doc: ConfigDoc) -> Result<Self, Self::Error> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(CandidateError::SchemaVersion(doc.schema_version));
        }
        let mut active = BTreeSet::new();
        for (name, on) in doc.knobs {
            let knob: Knob = name.parse()?;
            if on {
                active.insert(knob);
            }
        }
        Ok(CandidateConfig {
            active,
            version: doc.version,
        })
    }
}

impl From<CandidateConfig> for ConfigDoc {
    fn from(c: CandidateConfig) -> Self {
        ConfigDoc {
            schema_version: SCHEMA_VERSION,
            version: c.version,
            knobs: Knob::ALL
                .iter()
                .map(|k| (k.name().to_string(), c.active.contains(k)))
                .collect(),
        }
    }
}

impl CandidateConfig {
    /// Configuration with no defects: behaves exactly like the golden model.
    pub fn clean() -> Self {
        CandidateConfig::default()
    }

    pub fn with_knobs(knobs: impl IntoIterator<Item = Knob>) -> Self {
        CandidateConfig {
            active: knobs.into_iter().collect(),
            version: 0,
        }
    }

    /// Parses knob names, rejecting any outside the catalog.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, CandidateError> {
        let knobs = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<Knob>, _>>()?;
        Ok(CandidateConfig::with_knobs(knobs))
    }

    pub fn is_active(&self, knob: Knob) -> bool {
        self.active.contains(&knob)
    }

    pub fn is_clean(&self) -> bool {
        self.active.is_empty()
    }

    /// Same knobs with `knob` toggled; the version is left to the caller.
    pub fn flipped(&self, knob: Knob) -> Self {
        let mut next = self.clone();
        if !next.active.remove(&knob) {
            next.active.insert(knob);
        }
        next
    }

    pub fn same_knobs(&self, other: &CandidateConfig) -> bool {
        self.active == other.active
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, CandidateError> {
        let doc: ConfigDoc =
            toml::from_str(text).map_err(|e| CandidateError::Parse(e.message().to_string()))?;
        CandidateConfig::try_from(doc)
    }

    pub fn load(path: &Path) -> Result<Self, CandidateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CandidateError::Io(path.display().to_string(), e))?;
        CandidateConfig::from_toml(&text)
    }
}

impl fmt::Display for CandidateConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.active.is_empty() {
            return write!(f, "v{} {{}}", self.version);
        }
        let names: Vec<&str> = self.active.iter().map(|k| k.name()).collect();
        write!(f, "v{} {{{}}}", self.version, names.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = CandidateConfig::with_knobs([Knob::PcStep8, Knob::CmpSkipsNUpdate]);
        c.version = 3;
        let text = c.to_toml();
        assert!(text.contains("cmp_skips_n_update = true"));
        assert!(text.contains("carry_inverted = false"));
        assert_eq!(CandidateConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_knob_rejected() {
        let text = "schema_version = 1\nversion = 0\n[knobs]\nunknown = true\n";
        assert!(matches!(
            CandidateConfig::from_toml(text),
            Err(CandidateError::UnknownKnob(name)) if name == "unknown"
        ));
        assert!(matches!(
            CandidateConfig::from_names(&["unknown"]),
            Err(CandidateError::UnknownKnob(_))
        ));
    }

    #[test]
    fn json_form_lists_whole_catalog() {
        let c = CandidateConfig::with_knobs([Knob::CarryInverted]);
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        assert_eq!(v["knobs"].as_object().unwrap().len(), Knob::ALL.len());
        assert_eq!(v["knobs"]["carry_inverted"], true);
    }
}
