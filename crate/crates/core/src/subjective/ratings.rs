use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::SubjectiveError;
use crate::model::DisplayMode;

pub const RATINGS_HEADER: [&str; 5] = ["participant_id", "image_id", "mode", "score", "timestamp_iso8601"];
pub const MIN_SCORE: i64 = 1;
pub const MAX_SCORE: i64 = 10;

/// One raw score as collected by the study service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRecord {
    pub participant_id: String,
    pub image_id: String,
    pub mode: DisplayMode,
    pub score: u8,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    participant_id: String,
    image_id: String,
    mode: String,
    score: i64,
    timestamp_iso8601: String,
}

impl RatingRecord {
    pub fn new(
        participant_id: impl Into<String>,
        image_id: impl Into<String>,
        mode: DisplayMode,
        score: i64,
        timestamp: DateTime<Utc>,
    ) -> Result<Self, SubjectiveError> {
        if !(MIN_SCORE..=MAX_SCORE).contains(&score) {
            return Err(SubjectiveError::ScoreOutOfRange(score));
        }
        Ok(Self {
            participant_id: participant_id.into(),
            image_id: image_id.into(),
            mode,
            score: score as u8,
            timestamp,
        })
    }

    pub fn timestamp_text(&self) -> String {
        self.timestamp.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    /// The record as one CSV line without trailing newline.
    pub fn csv_line(&self) -> Result<String, SubjectiveError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record([
            self.participant_id.as_str(),
            self.image_id.as_str(),
            self.mode.as_str(),
            &self.score.to_string(),
            &self.timestamp_text(),
        ])?;
        let bytes = w.into_inner().map_err(|e| SubjectiveError::Io(e.into_error()))?;
        Ok(String::from_utf8_lossy(&bytes).trim_end().to_string())
    }
}

pub fn read_ratings<R: Read>(reader: R) -> Result<Vec<RatingRecord>, SubjectiveError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RATINGS_HEADER {
        return Err(SubjectiveError::Header(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row?;
        let mode = row
            .mode
            .parse()
            .map_err(|_| SubjectiveError::Parse { line, msg: format!("unknown mode `{}`", row.mode) })?;
        let timestamp = DateTime::parse_from_rfc3339(&row.timestamp_iso8601)
            .map_err(|e| SubjectiveError::Parse { line, msg: format!("timestamp: {e}") })?
            .with_timezone(&Utc);
        let rec = RatingRecord::new(row.participant_id, row.image_id, mode, row.score, timestamp)
            .map_err(|e| SubjectiveError::Parse { line, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_ratings<W: Write>(writer: W, records: &[RatingRecord]) -> Result<(), SubjectiveError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RATINGS_HEADER)?;
    for r in records {
        w.write_record([
            r.participant_id.as_str(),
            r.image_id.as_str(),
            r.mode.as_str(),
            &r.score.to_string(),
            &r.timestamp_text(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Complete participant × image score table for one display mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    pub mode: DisplayMode,
    pub participants: Vec<String>,
    pub images: Vec<String>,
    /// `scores[p][j]`: raw score of participant `p` for image `j`.
    pub scores: Vec<Vec<f64>>,
}

impl RatingMatrix {
    /// Collects the records of `mode`; every participant must rate every image once.
    pub fn from_records(records: &[RatingRecord], mode: DisplayMode) -> Result<Self, SubjectiveError> {
        let mut cells: BTreeMap<(&str, &str), u8> = BTreeMap::new();
        let mut participants = BTreeSet::new();
        let mut images = BTreeSet::new();
        for r in records.iter().filter(|r| r.mode == mode) {
            participants.insert(r.participant_id.as_str());
            images.insert(r.image_id.as_str());
            if cells.insert((&r.participant_id, &r.image_id), r.score).is_some() {
                return Err(SubjectiveError::Duplicate {
                    participant: r.participant_id.clone(),
                    image: r.image_id.clone(),
                    mode,
                });
            }
        }
        if cells.is_empty() {
            return Err(SubjectiveError::NoRecords(mode));
        }
        let mut missing = Vec::new();
        let mut scores = Vec::with_capacity(participants.len());
        for &p in &participants {
            let mut row = Vec::with_capacity(images.len());
            for &img in &images {
                match cells.get(&(p, img)) {
                    Some(&s) => row.push(s as f64),
                    None => {
                        missing.push((p.to_string(), img.to_string()));
                        row.push(f64::NAN);
                    }
                }
            }
            scores.push(row);
        }
        if !missing.is_empty() {
            return Err(SubjectiveError::Incomplete { mode, missing });
        }
        Ok(Self {
            mode,
            participants: participants.into_iter().map(String::from).collect(),
            images: images.into_iter().map(String::from).collect(),
            scores,
        })
    }

    /// Matrix restricted to the named participants, in the given order.
    pub fn select(&self, keep: &[String]) -> Self {
        let rows = keep
            .iter()
            .filter_map(|p| self.participants.iter().position(|q| q == p))
            .map(|i| self.scores[i].clone())
            .collect();
        Self { mode: self.mode, participants: keep.to_vec(), images: self.images.clone(), scores: rows }
    }

    pub fn image_column(&self, j: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[j]).collect()
    }
}
