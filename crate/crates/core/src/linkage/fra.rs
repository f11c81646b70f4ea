use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::Sex;
use crate::values::{parse_clock, parse_date, parse_number};

/// One row of the FRA grade-crossing incident export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraRecord {
    pub record_id: String,
    pub incident_date: NaiveDate,
    pub incident_time: Option<NaiveTime>,
    pub state: String,
    pub county: String,
    pub city: String,
    pub highway_name: Option<String>,
    pub user_sex: Option<Sex>,
    pub user_age: Option<u32>,
    pub killed: u32,
    pub injured: u32,
    /// Every cell of the row under its original header.
    pub raw_fields: IndexMap<String, String>,
}

impl FraRecord {
    /// Cell under `column`, matched loosely (case, spacing and punctuation
    /// are ignored). Blank cells count as absent.
    pub fn cell(&self, column: &str) -> Option<&str> {
        let want = fold_header(column);
        self.raw_fields
            .iter()
            .find(|(k, _)| fold_header(k) == want)
            .map(|(_, v)| v.trim())
            .filter(|v| !v.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Id,
    Date,
    Time,
    State,
    County,
    City,
    Highway,
    Sex,
    Age,
    Killed,
    Injured,
}

/// Accepted headers per column, in folded form.
const HEADERS: [(Column, &[&str]); 11] = [
    (
        Column::Id,
        &["id", "recordid", "incidentnumber", "reportkey"],
    ),
    (Column::Date, &["date", "incidentdate"]),
    (Column::Time, &["time", "incidenttime"]),
    (Column::State, &["state", "statename"]),
    (Column::County, &["county", "countyname"]),
    (Column::City, &["city", "cityname"]),
    (Column::Highway, &["highway", "highwayname"]),
    (Column::Sex, &["sex", "gender", "usergender", "usersex"]),
    (Column::Age, &["age", "userage"]),
    (Column::Killed, &["killed", "totalkilled"]),
    (Column::Injured, &["injured", "totalinjured"]),
];

const MANDATORY: [Column; 7] = [
    Column::Id,
    Column::Date,
    Column::State,
    Column::County,
    Column::City,
    Column::Killed,
    Column::Injured,
];

fn fold_header(h: &str) -> String {
    h.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn column_name(c: Column) -> &'static str {
    HEADERS
        .iter()
        .find(|(col, _)| *col == c)
        .map(|(_, names)| names[0])
        .unwrap()
}

#[derive(Debug, thiserror::Error)]
pub enum CsvFormatError {
    #[error("missing mandatory column(s): {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("cannot read CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A rejected row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowWarning {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct FraLoad {
    pub records: Vec<FraRecord>,
    pub warnings: Vec<RowWarning>,
}

pub fn load_fra_csv(path: &Path) -> Result<FraLoad, CsvFormatError> {
    let file = std::fs::File::open(path).map_err(|source| CsvFormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_fra_csv(file)
}

/// Reads the export. Rows with an unreadable mandatory cell are dropped with
/// a warning; unreadable optional cells are left empty.
pub fn read_fra_csv(reader: impl Read) -> Result<FraLoad, CsvFormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index_of = |c: Column| {
        let names = HEADERS.iter().find(|(col, _)| *col == c).unwrap().1;
        headers
            .iter()
            .position(|h| names.contains(&fold_header(h).as_str()))
    };
    let missing: Vec<String> = MANDATORY
        .iter()
        .filter(|c| index_of(**c).is_none())
        .map(|c| column_name(*c).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CsvFormatError::MissingColumns(missing));
    }
    let cols: IndexMap<&'static str, Option<usize>> = HEADERS
        .iter()
        .map(|(c, _)| (column_name(*c), index_of(*c)))
        .collect();

    let mut load = FraLoad::default();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |name: &str| {
            cols[name]
                .and_then(|i| row.get(i))
                .map(str::trim)
                .filter(|s| !s.is_empty())
        };
        let mut reject = |message: String| load.warnings.push(RowWarning { line, message });

        let Some(record_id) = get("id") else {
            reject("empty id".into());
            continue;
        };
        if !seen.insert(record_id.to_string()) {
            reject(format!("duplicate id `{record_id}`"));
            continue;
        }
        let Some(incident_date) = get("date").and_then(parse_date) else {
            reject(format!("unreadable date `{}`", get("date").unwrap_or("")));
            continue;
        };
        let mut spatial = Vec::new();
        for name in ["state", "county", "city"] {
            match get(name) {
                Some(v) => spatial.push(v.to_string()),
                None => break,
            }
        }
        if spatial.len() < 3 {
            reject(format!(
                "empty {}",
                ["state", "county", "city"][spatial.len()]
            ));
            continue;
        }
        let count = |name: &str| {
            get(name)
                .and_then(parse_number)
                .filter(|n| *n >= 0.0 && n.fract() == 0.0)
                .map(|n| n as u32)
        };
        let (Some(killed), Some(injured)) = (count("killed"), count("injured")) else {
            reject("killed and injured must be non-negative whole numbers".into());
            continue;
        };
        let [state, county, city]: [String; 3] = spatial.try_into().unwrap();
        load.records.push(FraRecord {
            record_id: record_id.to_string(),
            incident_date,
            incident_time: get("time").and_then(|t| {
                parse_clock(t).or_else(|| {
                    let minutes = crate::values::minutes_of_day(parse_number(t)?, None)?;
                    NaiveTime::from_hms_opt(minutes / 60, minutes % 60, 0)
                })
            }),
            state,
            county,
            city,
            highway_name: get("highway").map(str::to_string),
            user_sex: get("sex").and_then(Sex::parse),
            user_age: count("age"),
            killed,
            injured,
            raw_fields: headers
                .iter()
                .enumerate()
                .map(|(i, h)| (h.to_string(), row.get(i).unwrap_or("").to_string()))
                .collect(),
        });
    }
    Ok(load)
}
