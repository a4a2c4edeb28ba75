//! Z-score normalisation and mean opinion scores.

use std::io::Write;

use super::ratings::{RatingMatrix, RatingRecord};
use super::SubjectiveError;
use crate::model::DisplayMode;
use crate::stats::{mean, sample_std};

pub const MOS_HEADER: [&str; 6] = ["image_id", "mode", "mos", "std", "ci_halfwidth", "n_subjects"];
pub const Z95: f64 = 1.96;

/// `z′ = 100·(z + 3)/6`, clamped to `[0, 100]`.
pub fn rescale_z(z: f64) -> f64 {
    (100.0 * (z + 3.0) / 6.0).clamp(0.0, 100.0)
}

/// Normalised scores of the retained panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScoreTable {
    pub mode: DisplayMode,
    pub participants: Vec<String>,
    pub images: Vec<String>,
    /// `z[p][j]` before rescaling.
    pub z: Vec<Vec<f64>>,
    /// `z_prime[p][j]`, rescaled and clamped.
    pub z_prime: Vec<Vec<f64>>,
}

impl ZScoreTable {
    pub fn image_column(&self, j: usize) -> Vec<f64> {
        self.z_prime.iter().map(|row| row[j]).collect()
    }

    /// `(participant, image, z′)` triples.
    pub fn records(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.participants
            .iter()
            .zip(&self.z_prime)
            .flat_map(move |(p, row)| self.images.iter().zip(row).map(move |(i, &v)| (p.as_str(), i.as_str(), v)))
    }
}

pub fn zscore_matrix(m: &RatingMatrix) -> Result<ZScoreTable, SubjectiveError> {
    if m.participants.is_empty() {
        return Err(SubjectiveError::NoSubjects);
    }
    let mut z = Vec::with_capacity(m.scores.len());
    for (p, row) in m.participants.iter().zip(&m.scores) {
        let mu = mean(row);
        let sd = sample_std(row);
        if sd == 0.0 || !sd.is_finite() {
            return Err(SubjectiveError::ZeroVariance(p.clone()));
        }
        z.push(row.iter().map(|r| (r - mu) / sd).collect::<Vec<f64>>());
    }
    let z_prime = z.iter().map(|row| row.iter().map(|&v| rescale_z(v)).collect()).collect();
    Ok(ZScoreTable { mode: m.mode, participants: m.participants.clone(), images: m.images.clone(), z, z_prime })
}

/// Normalises the retained subjects' scores in `mode`, each against their own mean and sample deviation.
pub fn zscore_normalize(
    records: &[RatingRecord],
    retained: &[String],
    mode: DisplayMode,
) -> Result<ZScoreTable, SubjectiveError> {
    let m = RatingMatrix::from_records(records, mode)?;
    for p in retained {
        if !m.participants.contains(p) {
            return Err(SubjectiveError::UnknownParticipant(p.clone()));
        }
    }
    zscore_matrix(&m.select(retained))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosEntry {
    pub image_id: String,
    pub mode: DisplayMode,
    pub mos: f64,
    pub std: f64,
    pub ci_halfwidth: f64,
    pub n_subjects: usize,
    /// False when a single subject makes the interval undefined (reported as 0).
    pub ci_defined: bool,
}

pub fn compute_mos(table: &ZScoreTable) -> Result<Vec<MosEntry>, SubjectiveError> {
    let n = table.participants.len();
    if n == 0 {
        return Err(SubjectiveError::NoSubjects);
    }
    Ok(table
        .images
        .iter()
        .enumerate()
        .map(|(j, img)| {
            let col = table.image_column(j);
            let std = sample_std(&col);
            MosEntry {
                image_id: img.clone(),
                mode: table.mode,
                mos: mean(&col),
                std,
                ci_halfwidth: if n > 1 { Z95 * std / (n as f64).sqrt() } else { 0.0 },
                n_subjects: n,
                ci_defined: n > 1,
            }
        })
        .collect())
}

/// Screening, normalisation and MOS for one mode.
pub fn mos_pipeline(
    records: &[RatingRecord],
    mode: DisplayMode,
) -> Result<(super::ScreeningReport, Vec<MosEntry>), SubjectiveError> {
    let report = super::reject_outlier_subjects(records, mode)?;
    let table = zscore_normalize(records, &report.retained, mode)?;
    let mos = compute_mos(&table)?;
    Ok((report, mos))
}

pub fn write_mos<W: Write>(writer: W, entries: &[MosEntry]) -> Result<(), SubjectiveError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MOS_HEADER)?;
    for e in entries {
        w.write_record([
            e.image_id.clone(),
            e.mode.to_string(),
            format!("{:.6}", e.mos),
            format!("{:.6}", e.std),
            format!("{:.6}", e.ci_halfwidth),
            e.n_subjects.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mos<R: std::io::Read>(reader: R) -> Result<Vec<MosEntry>, SubjectiveError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MOS_HEADER {
        return Err(SubjectiveError::Header(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| SubjectiveError::Parse { line, msg };
        let num = |k: usize| -> Result<f64, SubjectiveError> {
            rec[k].parse::<f64>().map_err(|_| bad(format!("`{}` is not a number", &rec[k])))
        };
        let n_subjects: usize = rec[5].parse().map_err(|_| bad(format!("bad n_subjects `{}`", &rec[5])))?;
        out.push(MosEntry {
            image_id: rec[0].to_string(),
            mode: rec[1].parse().map_err(|_| bad(format!("unknown mode `{}`", &rec[1])))?,
            mos: num(2)?,
            std: num(3)?,
            ci_halfwidth: num(4)?,
            n_subjects,
            ci_defined: n_subjects > 1,
        });
    }
    Ok(out)
}
