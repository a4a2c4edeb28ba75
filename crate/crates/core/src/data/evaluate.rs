//! Test-set evaluation: predictions, correlations and ROC analyses.

use std::collections::BTreeMap;
use std::io::Write;

use super::split::Dataset;
use super::DataError;
use crate::metrics::{
    krcc, plcc, roc_better_vs_worse, roc_different_vs_similar, significant_pairs, srcc, MethodReport, RocResult,
    DEFAULT_ALPHA,
};
use crate::model::{Checkpoint, DisplayMode};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    /// On the MOS scale.
    pub predicted: f64,
    pub mos: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub report: MethodReport,
    pub roc_ds: Option<RocResult>,
    pub roc_bw: Option<RocResult>,
}

/// Scores the test set in eval mode and computes SRCC, KRCC and PLCC. When
/// per-subject scores (`raw[image_id]`) cover every test image, both ROC
/// analyses are added.
pub fn evaluate(
    test: &Dataset,
    ckpt: &Checkpoint,
    mode: DisplayMode,
    method: &str,
    raw: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<Evaluation, DataError> {
    if ckpt.config.mode != mode {
        return Err(DataError::ModeMismatch { trained: ckpt.config.mode, requested: mode });
    }
    if test.is_empty() {
        return Err(DataError::Empty("test"));
    }
    let scale: f64 = match ckpt.metadata.get("label_scale") {
        Some(s) => s.parse().map_err(|_| DataError::InvalidArgument(format!("bad label_scale `{s}`")))?,
        None => 100.0,
    };
    let model = ckpt.clone().into_model()?;
    let mut predictions = Vec::with_capacity(test.len());
    for s in &test.samples {
        let mos = s.mos.ok_or_else(|| DataError::MissingLabel { image: s.image_id.clone(), mode })?;
        let right = if mode.is_stereo() { s.right.as_ref() } else { None };
        let predicted = model.predict(&s.left, right)? * scale;
        predictions.push(Prediction { image_id: s.image_id.clone(), predicted, mos });
    }
    let y: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
    let m: Vec<f64> = predictions.iter().map(|p| p.mos).collect();
    let (mut roc_ds, mut roc_bw) = (None, None);
    if let Some(raw) = raw {
        let scores: Option<Vec<Vec<f64>>> = predictions.iter().map(|p| raw.get(&p.image_id).cloned()).collect();
        if let Some(scores) = scores {
            let pairs = significant_pairs(&scores, DEFAULT_ALPHA)?;
            roc_ds = roc_different_vs_similar(&pairs, &y).ok();
            roc_bw = roc_better_vs_worse(&pairs, &y).ok();
        }
    }
    let report = MethodReport {
        method: method.to_string(),
        mode,
        srcc: srcc(&y, &m)?,
        krcc: krcc(&y, &m)?,
        plcc: plcc(&y, &m)?,
        auc_ds: roc_ds.as_ref().map(|r| r.auc),
        auc_bw: roc_bw.as_ref().map(|r| r.auc),
    };
    Ok(Evaluation { predictions, report, roc_ds, roc_bw })
}

pub fn write_predictions<W: Write>(writer: W, predictions: &[Prediction]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["image_id", "predicted", "mos"])?;
    for p in predictions {
        w.write_record([p.image_id.clone(), format!("{:.6}", p.predicted), format!("{:.6}", p.mos)])?;
    }
    w.flush()?;
    Ok(())
}
