//! Per-subject feature tables (CSV).
//!
//! Header: `subject_id,cohort,age_years,gender_code,` followed by feature
//! columns. Tables written by extraction carry all twelve feature columns;
//! reference tables may carry any subset.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::features::{FeatureSet, FEATURE_COLUMNS};
use crate::testkit::Cohort;

pub const META_COLUMNS: [&str; 4] = ["subject_id", "cohort", "age_years", "gender_code"];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub subject_id: String,
    pub cohort: Cohort,
    pub age_years: f64,
    pub gender_code: u8,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn with_all_features() -> Self {
        Self::new(FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect())
    }

    pub fn push_features(
        &mut self,
        subject_id: &str,
        cohort: Cohort,
        age_years: f64,
        gender_code: u8,
        fs: &FeatureSet,
    ) {
        let values = self
            .columns
            .iter()
            .map(|c| fs.get(c).unwrap_or(f64::NAN))
            .collect();
        self.rows.push(FeatureRow {
            subject_id: subject_id.to_string(),
            cohort,
            age_years,
            gender_code,
            values,
        });
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }

    pub fn row(&self, subject_id: &str) -> Option<&FeatureRow> {
        self.rows.iter().find(|r| r.subject_id == subject_id)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = META_COLUMNS
            .iter()
            .copied()
            .chain(self.columns.iter().map(String::as_str))
            .collect();
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.subject_id.clone(),
                r.cohort.as_str().to_string(),
                r.age_years.to_string(),
                r.gender_code.to_string(),
            ];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| TableError::Schema(e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header.len() < META_COLUMNS.len() || header[..4] != META_COLUMNS {
            return Err(TableError::Schema(format!(
                "header must start with '{}'",
                META_COLUMNS.join(",")
            )));
        }
        let columns: Vec<String> = header[4..].to_vec();
        let mut seen = HashSet::new();
        if let Some(dup) = columns.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(TableError::Schema(format!("duplicate column '{dup}'")));
        }
        let mut table = Self::new(columns);
        let mut ids = HashSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| TableError::Row {
                row,
                message: e.to_string(),
            })?;
            let err = |message: String| TableError::Row { row, message };
            let subject_id = rec[0].trim().to_string();
            if !ids.insert(subject_id.clone()) {
                return Err(err(format!("duplicate subject id '{subject_id}'")));
            }
            let cohort = Cohort::parse(&rec[1]).ok_or_else(|| err(format!("unknown cohort '{}'", &rec[1])))?;
            let age_years: f64 = rec[2]
                .trim()
                .parse()
                .map_err(|_| err(format!("age '{}' is not a number", &rec[2])))?;
            let gender_code: u8 = rec[3]
                .trim()
                .parse()
                .ok()
                .filter(|g| *g <= 1)
                .ok_or_else(|| err(format!("gender code '{}' is not 0 or 1", &rec[3])))?;
            let values = (4..rec.len())
                .map(|k| {
                    rec[k]
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| err(format!("{} '{}' is not a number", table.columns[k - 4], &rec[k])))
                })
                .collect::<Result<Vec<_>, _>>()?;
            table.rows.push(FeatureRow {
                subject_id,
                cohort,
                age_years,
                gender_code,
                values,
            });
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self, TableError> {
        Self::from_csv(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), TableError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_header() {
        let mut t = FeatureTable::with_all_features();
        let fs = FeatureSet::from_array([1.5, 0.2, 0.4, 0.03, 5.0, 2.5, 90.0, 40.0, 300.0, 80.0, 120.0, 150.0]);
        t.push_features("s1", Cohort::Case, 44.0, 1, &fs);
        t.push_features("s2", Cohort::Control, 51.0, 0, &fs);
        let text = t.to_csv();
        assert!(text.starts_with(
            "subject_id,cohort,age_years,gender_code,speech_duration_s,silence_to_speech_ratio,"
        ));
        assert_eq!(FeatureTable::from_csv(&text).unwrap(), t);
    }

    #[test]
    fn bad_rows() {
        assert!(FeatureTable::from_csv("id,cohort,age,gender\n").is_err());
        let dup = "subject_id,cohort,age_years,gender_code,x\na,case,40,1,1\na,case,40,1,2\n";
        assert!(matches!(FeatureTable::from_csv(dup), Err(TableError::Row { row: 2, .. })));
        let g = "subject_id,cohort,age_years,gender_code,x\na,case,40,3,1\n";
        assert!(FeatureTable::from_csv(g).is_err());
        let c = "subject_id,cohort,age_years,gender_code,x\na,patient,40,1,1\n";
        assert!(FeatureTable::from_csv(c).is_err());
    }
}
