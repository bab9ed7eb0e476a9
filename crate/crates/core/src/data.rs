//! Raw fleet records and the `ship_id,engine_type,age,failure_rate` CSV format.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::FleetData;

pub const CSV_HEADER: &str = "ship_id,engine_type,age,failure_rate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub ship_id: String,
    pub engine_type: String,
    pub age: usize,
    pub failure_rate: f64,
}

/// Observations on the original failure-rate scale.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FleetRecords {
    records: Vec<Record>,
}

impl FleetRecords {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut owner: std::collections::HashMap<&str, &str> = Default::default();
        for r in &records {
            if r.age == 0 {
                return Err(Error::Validation(format!(
                    "ship '{}' has age 0; ages start at 1",
                    r.ship_id
                )));
            }
            if !r.failure_rate.is_finite() || r.failure_rate < 0.0 {
                return Err(Error::Validation(format!(
                    "failure rate {} for ship '{}' must be a non-negative number",
                    r.failure_rate, r.ship_id
                )));
            }
            match owner.insert(&r.ship_id, &r.engine_type) {
                Some(prev) if prev != r.engine_type => {
                    return Err(Error::Validation(format!(
                        "ship '{}' listed under engine types '{prev}' and '{}'",
                        r.ship_id, r.engine_type
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_age(&self) -> usize {
        self.records.iter().map(|r| r.age).max().unwrap_or(0)
    }

    /// Ship ids in order of first appearance.
    pub fn ship_ids(&self) -> Vec<String> {
        first_appearance(self.records.iter().map(|r| r.ship_id.as_str()))
    }

    /// Engine types in order of first appearance.
    pub fn type_ids(&self) -> Vec<String> {
        first_appearance(self.records.iter().map(|r| r.engine_type.as_str()))
    }

    pub fn type_of(&self, ship_id: &str) -> Option<&str> {
        self.records
            .iter()
            .find(|r| r.ship_id == ship_id)
            .map(|r| r.engine_type.as_str())
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.failure_rate).collect()
    }

    pub fn filter(&self, keep: impl Fn(&Record) -> bool) -> Self {
        Self {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn without_ship(&self, ship_id: &str) -> Self {
        self.filter(|r| r.ship_id != ship_id)
    }

    pub fn only_ship(&self, ship_id: &str) -> Self {
        self.filter(|r| r.ship_id == ship_id)
    }

    pub fn concat(&self, other: &FleetRecords) -> Result<Self> {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Self::new(records)
    }

    /// Dense-indexed panel with each response passed through `f`.
    pub fn to_fleet_data(&self, n_ages: usize, f: impl Fn(f64) -> f64) -> Result<FleetData> {
        if self.records.is_empty() {
            return Err(Error::InsufficientData("no observations".into()));
        }
        let ships = self.ship_ids();
        let types = self.type_ids();
        let ship_index: std::collections::HashMap<&str, usize> =
            ships.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let type_index: std::collections::HashMap<&str, usize> =
            types.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut ship_to_type = vec![0; ships.len()];
        for r in &self.records {
            ship_to_type[ship_index[r.ship_id.as_str()]] = type_index[r.engine_type.as_str()];
        }
        let ship_of: Vec<usize> = self
            .records
            .iter()
            .map(|r| ship_index[r.ship_id.as_str()])
            .collect();
        drop(ship_index);
        drop(type_index);
        FleetData::new(
            n_ages,
            ships,
            types,
            ship_to_type,
            self.records.iter().map(|r| r.age).collect(),
            ship_of,
            self.records.iter().map(|r| f(r.failure_rate)).collect(),
        )
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected: Vec<&str> = CSV_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Validation(format!(
                "expected header '{CSV_HEADER}', found '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let r: Record = row.map_err(|e| Error::Validation(format!("bad CSV row: {e}")))?;
            records.push(r);
        }
        Self::new(records)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Validation(format!("cannot open {}: {e}", path.as_ref().display()))
        })?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    /// CSV text; floats use the shortest representation that round-trips.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(32 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&r.ship_id),
                csv_field(&r.engine_type),
                r.age,
                r.failure_rate
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    /// SHA-256 of the canonical CSV rendering.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }
}

fn first_appearance<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items
        .filter(|s| seen.insert(*s))
        .map(str::to_string)
        .collect()
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
