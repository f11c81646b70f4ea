//! Mapping from form answer places to columns of the FRA export.
//!
//! ```json
//! {
//!   "version": "form57-fra-v1",
//!   "entries": {
//!     "6/Time": { "column": "time", "semantics": "time" },
//!     "39/Gender": { "column": "sex", "values": { "M": "1", "F": "2" } }
//!   }
//! }
//! ```
//!
//! `semantics` says how to read the cell and how answers are judged against
//! it; `values` translates cell values to choice codes.

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::linkage::FraRecord;
use crate::schema::FormSchema;
use crate::values::{parse_clock, parse_date, parse_number, Meridiem};
use chrono::Datelike;

pub const FORM57_CROSSWALK_JSON: &str = include_str!("../fixtures/fra.crosswalk.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantics {
    /// Compared as-is under the answer type's rule.
    #[default]
    Plain,
    /// Time of day, judged within an hour.
    Time,
    /// Speed in mph, judged within 10.
    Speed,
    /// AM/PM half of a time cell.
    Meridiem,
    /// Month number of a date cell.
    Month,
    /// Day of month of a date cell.
    Day,
    /// Year of a date cell.
    Year,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosswalkEntry {
    pub column: String,
    #[serde(default)]
    pub semantics: Semantics,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crosswalk {
    pub version: String,
    pub entries: IndexMap<String, CrosswalkEntry>,
}

/// Ground truth for one answer place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldValue {
    pub column: String,
    /// The cell as written.
    pub raw: String,
    /// The cell after `semantics` and `values` were applied.
    pub value: String,
    pub semantics: Semantics,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GoldLookup {
    #[error("no crosswalk entry for {0}")]
    CrosswalkMissing(String),
    #[error("column `{0}` is blank or absent")]
    BlankCell(String),
    #[error("cannot read `{raw}` as {semantics:?}")]
    Unreadable { raw: String, semantics: Semantics },
}

#[derive(Debug, thiserror::Error)]
pub enum CrosswalkError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("crosswalk is not valid: {0}")]
    Format(#[from] serde_json::Error),
}

impl Crosswalk {
    /// Crosswalk for the bundled Form 57 schema and the documented FRA
    /// column subset.
    pub fn form57_default() -> Self {
        Self::from_json_str(FORM57_CROSSWALK_JSON).expect("bundled crosswalk is valid")
    }

    pub fn from_json_str(raw: &str) -> Result<Self, CrosswalkError> {
        Ok(serde_json::from_str(raw)?)
    }

    pub fn load(path: &Path) -> Result<Self, CrosswalkError> {
        let raw = std::fs::read_to_string(path).map_err(|source| CrosswalkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&raw)
    }

    pub fn entry(&self, key: &str) -> Option<&CrosswalkEntry> {
        self.entries.get(key)
    }

    pub fn semantics(&self, key: &str) -> Semantics {
        self.entry(key).map(|e| e.semantics).unwrap_or_default()
    }

    /// Keys that name no answer place of `schema`.
    pub fn unknown_keys(&self, schema: &FormSchema) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| schema.lookup_key(k).is_none())
            .cloned()
            .collect()
    }

    pub fn gold_for(&self, key: &str, record: &FraRecord) -> Result<GoldValue, GoldLookup> {
        let entry = self
            .entry(key)
            .ok_or_else(|| GoldLookup::CrosswalkMissing(key.to_string()))?;
        let raw = record
            .cell(&entry.column)
            .ok_or_else(|| GoldLookup::BlankCell(entry.column.clone()))?;
        let unreadable = || GoldLookup::Unreadable {
            raw: raw.to_string(),
            semantics: entry.semantics,
        };
        let derived = match entry.semantics {
            Semantics::Plain | Semantics::Time | Semantics::Speed => raw.to_string(),
            Semantics::Meridiem => match parse_clock(raw) {
                Some(t) => Meridiem::of(t).as_str().to_string(),
                None => {
                    let m = crate::values::minutes_of_day(
                        parse_number(raw).ok_or_else(unreadable)?,
                        None,
                    )
                    .ok_or_else(unreadable)?;
                    if m < 720 { "AM" } else { "PM" }.to_string()
                }
            },
            Semantics::Month | Semantics::Day | Semantics::Year => {
                let d = parse_date(raw).ok_or_else(unreadable)?;
                match entry.semantics {
                    Semantics::Month => d.month().to_string(),
                    Semantics::Day => d.day().to_string(),
                    _ => d.year().to_string(),
                }
            }
        };
        let value = entry
            .values
            .iter()
            .find(|(from, _)| from.trim().eq_ignore_ascii_case(derived.trim()))
            .map(|(_, to)| to.clone())
            .unwrap_or(derived);
        Ok(GoldValue {
            column: entry.column.clone(),
            raw: raw.to_string(),
            value,
            semantics: entry.semantics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linkage::read_fra_csv;

    fn record() -> FraRecord {
        let csv = "id,date,time,state,county,city,killed,injured,sex\nR1,2023-03-05,2:30 PM,IL,Cook,Chicago,0,1,F\n";
        read_fra_csv(csv.as_bytes()).unwrap().records.remove(0)
    }

    #[test]
    fn bundled_crosswalk_fits_the_bundled_schema() {
        let cw = Crosswalk::form57_default();
        assert!(cw.unknown_keys(&FormSchema::form57()).is_empty());
        assert_eq!(cw.semantics("6/Time"), Semantics::Time);
        assert_eq!(cw.semantics("14/Estimated mph at impact"), Semantics::Speed);
    }

    #[test]
    fn derived_values() {
        let cw = Crosswalk::form57_default();
        let r = record();
        let get = |k: &str| cw.gold_for(k, &r).map(|g| g.value);
        assert_eq!(get("5/Month").unwrap(), "3");
        assert_eq!(get("5/Year").unwrap(), "2023");
        assert_eq!(get("6/AM-PM").unwrap(), "PM");
        assert_eq!(get("6/Time").unwrap(), "2:30 PM");
        assert_eq!(get("39/Gender").unwrap(), "2");
        assert_eq!(
            get("12/Highway name"),
            Err(GoldLookup::BlankCell("highway".into()))
        );
        assert_eq!(
            get("54/Narrative"),
            Err(GoldLookup::CrosswalkMissing("54/Narrative".into()))
        );
    }
}
