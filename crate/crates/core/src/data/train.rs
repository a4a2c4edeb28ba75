//! Supervised training of the quality regressor.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::split::Dataset;
use super::DataError;
use crate::model::config::parse_key_values;
use crate::model::{save_checkpoint, AdamW, AdamWConfig, Esiqanet, ForwardCtx, ModelConfig, ModelError};
use crate::tensor::{backward, no_grad, Tensor};

/// Training hyper-parameters. Labels are divided by `label_scale` so the
/// regressor works on roughly unit-range targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Only `mse` is supported.
    pub loss: String,
    pub seed: u64,
    pub freeze_backbone: bool,
    /// Cosine decay of the learning rate over all steps.
    pub cosine_decay: bool,
    pub label_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::micro(),
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            loss: "mse".into(),
            seed: 0,
            freeze_backbone: false,
            cosine_decay: true,
            label_scale: 100.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, DataError> {
    v.parse().map_err(|_| DataError::InvalidArgument(format!("invalid value `{v}` for `{key}`")))
}

impl TrainConfig {
    /// Key-value text; training keys are read here, everything else configures the model.
    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let map = parse_key_values(text)?;
        let mut cfg = TrainConfig { model: ModelConfig::from_map(&map)?, ..Default::default() };
        for (k, v) in &map {
            match k.as_str() {
                "epochs" => cfg.epochs = parse(k, v)?,
                "batch_size" => cfg.batch_size = parse(k, v)?,
                "learning_rate" => cfg.learning_rate = parse(k, v)?,
                "weight_decay" => cfg.weight_decay = parse(k, v)?,
                "loss" => cfg.loss = v.clone(),
                "seed" => cfg.seed = parse(k, v)?,
                "freeze_backbone" => cfg.freeze_backbone = parse(k, v)?,
                "cosine_decay" => cfg.cosine_decay = parse(k, v)?,
                "label_scale" => cfg.label_scale = parse(k, v)?,
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        for (k, v) in [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("loss", self.loss.clone()),
            ("seed", self.seed.to_string()),
            ("freeze_backbone", self.freeze_backbone.to_string()),
            ("cosine_decay", self.cosine_decay.to_string()),
            ("label_scale", format!("{:?}", self.label_scale)),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidArgument(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if self.loss != "mse" {
            return bad(format!("unsupported loss `{}`", self.loss));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(self.label_scale > 0.0) {
            return bad(format!("label scale {}", self.label_scale));
        }
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation (or training) loss.
    pub model: Esiqanet,
    pub trace: Vec<LossPoint>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub checkpoint: Option<PathBuf>,
}

pub fn write_loss_trace<W: Write>(writer: W, trace: &[LossPoint]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "epoch", "loss"])?;
    for p in trace {
        w.write_record([p.step.to_string(), p.epoch.to_string(), format!("{:.10e}", p.loss)])?;
    }
    w.flush()?;
    Ok(())
}

fn targets(data: &Dataset, idx: &[usize], mode: crate::model::DisplayMode, scale: f64) -> Result<Tensor, DataError> {
    let t = idx
        .iter()
        .map(|&i| {
            let s = &data.samples[i];
            s.mos.map(|m| m / scale).ok_or_else(|| DataError::MissingLabel { image: s.image_id.clone(), mode })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(Tensor::from_slice(&t))
}

fn right_for<'a>(model: &Esiqanet, right: &'a Option<Tensor>) -> Option<&'a Tensor> {
    if model.config().mode.is_stereo() {
        right.as_ref()
    } else {
        None
    }
}

/// Mean squared error in label units divided by `scale`, eval mode.
fn dataset_loss(model: &Esiqanet, data: &Dataset, batch: usize, scale: f64) -> Result<f64, DataError> {
    let mode = model.config().mode;
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch) {
        let (l, r) = data.batch(chunk);
        let y = targets(data, chunk, mode, scale)?;
        let pred = no_grad(|| model.forward(&l, right_for(model, &r), &mut ForwardCtx::eval()))?;
        total += pred.data().iter().zip(y.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

fn dump_batch(
    dir: &Path,
    data: &Dataset,
    idx: &[usize],
    targets: &Tensor,
    pred: &Tensor,
    step: usize,
) -> Result<PathBuf, DataError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("nonfinite_step{step}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["image_id", "target", "prediction", "left_finite", "right_finite"])?;
    for (k, &i) in idx.iter().enumerate() {
        let s = &data.samples[i];
        let finite = |t: &Tensor| t.data().iter().all(|v| v.is_finite()).to_string();
        w.write_record([
            s.image_id.clone(),
            targets.data()[k].to_string(),
            pred.data()[k].to_string(),
            finite(&s.left),
            s.right.as_ref().map(finite).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(path)
}

/// Minimizes the MSE between predictions and scaled MOS with AdamW.
///
/// With `out_dir`, writes `best.ckpt` whenever the selection loss improves and
/// `loss_trace.csv` at the end. The 2d mode never touches right views.
pub fn train(
    train_set: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, DataError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(DataError::Empty("training"));
    }
    let mode = cfg.model.mode;
    for s in &train_set.samples {
        if s.mos.is_none() {
            return Err(DataError::MissingLabel { image: s.image_id.clone(), mode });
        }
        if mode.is_stereo() && s.right.is_none() {
            return Err(ModelError::MissingRightView.into());
        }
    }
    let mut model = Esiqanet::new(cfg.model.clone(), cfg.seed)?;
    if cfg.freeze_backbone {
        model.set_backbone_trainable(false);
    }
    let per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = per_epoch * cfg.epochs;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            total_steps: if cfg.cosine_decay { total_steps } else { 0 },
            ..Default::default()
        },
        model.params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = Vec::with_capacity(total_steps);
    let mut best: Option<(usize, f64, Esiqanet)> = None;
    let mut checkpoint = None;
    let dump_dir = out_dir.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            // batch content is a set; fixed order keeps the loss reduction reproducible
            let mut chunk = chunk.to_vec();
            chunk.sort_unstable();
            let chunk = chunk.as_slice();
            let (l, r) = train_set.batch(chunk);
            let y = targets(train_set, chunk, mode, cfg.label_scale)?;
            let mut ctx = ForwardCtx::train(cfg.seed.wrapping_add(step as u64));
            let pred = model.forward(&l, right_for(&model, &r), &mut ctx)?;
            let diff = pred.sub(&y).map_err(ModelError::from)?;
            let loss = diff.mul(&diff).map_err(ModelError::from)?.mean();
            let value = loss.item();
            if !value.is_finite() {
                let dump = dump_batch(&dump_dir, train_set, chunk, &y, &pred, step)?;
                return Err(DataError::NonFiniteLoss { step, dump });
            }
            let grads = backward(&loss).map_err(ModelError::from)?;
            opt.step(model.params_mut(), &grads);
            trace.push(LossPoint { step, epoch, loss: value });
            epoch_loss += value * chunk.len() as f64;
            step += 1;
        }
        let selection = match validation {
            Some(v) if !v.is_empty() => dataset_loss(&model, v, cfg.batch_size, cfg.label_scale)?,
            _ => epoch_loss / train_set.len() as f64,
        };
        log::info!("epoch {epoch}: selection loss {selection:.6e}");
        if best.as_ref().is_none_or(|b| selection < b.1) {
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("best.ckpt");
                let meta = BTreeMap::from([
                    ("seed".to_string(), cfg.seed.to_string()),
                    ("epoch".to_string(), epoch.to_string()),
                    ("loss".to_string(), format!("{selection:?}")),
                    ("label_scale".to_string(), format!("{:?}", cfg.label_scale)),
                ]);
                save_checkpoint(&path, &model, meta)?;
                checkpoint = Some(path);
            }
            best = Some((epoch, selection, model.clone()));
        }
    }
    if let Some(dir) = out_dir {
        let file = std::fs::File::create(dir.join("loss_trace.csv"))?;
        write_loss_trace(std::io::BufWriter::new(file), &trace)?;
    }
    let (best_epoch, best_loss, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, trace, best_epoch, best_loss, checkpoint })
}
