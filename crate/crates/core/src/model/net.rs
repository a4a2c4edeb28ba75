use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{CrossAttention, TransposedAttention};
use super::blocks::{MsaBlock, StageBlock, VssdBlock};
use super::config::ModelConfig;
use super::layers::{grid_to_tokens, tokens_to_grid, Conv2d, ForwardCtx, LayerNorm, Linear};
use super::params::{Init, ParamKind, ParamStore};
use super::ModelError;
use crate::tensor::{no_grad, Tensor};

/// Backbone output of one stage, tokens in `[B, H·W, C]` layout.
#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub stage: usize,
    pub side: usize,
    pub left: Tensor,
    pub right: Option<Tensor>,
}

impl StageFeatures {
    /// Left-view features as `[B, C, H·W]`.
    pub fn left_channel_major(&self) -> Result<Tensor, ModelError> {
        Ok(self.left.transpose(1, 2)?)
    }
}

#[derive(Debug, Clone)]
struct Downsample {
    conv: Conv2d,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
struct QualityHead {
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

/// Parameter counts grouped by role; diagnostics only.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub total: usize,
    pub by_kind: BTreeMap<ParamKind, usize>,
    pub trainable: usize,
}

impl ParamReport {
    pub fn kind(&self, k: ParamKind) -> usize {
        self.by_kind.get(&k).copied().unwrap_or(0)
    }
}

/// Stereo quality model: shared VSSD/MSA backbone per view, per-stage fusion,
/// channel attention, pooled multi-stage representation and an MLP regressor.
#[derive(Debug, Clone)]
pub struct Esiqanet {
    config: ModelConfig,
    params: ParamStore,
    stem: Conv2d,
    stem_norm: LayerNorm,
    stages: Vec<Vec<StageBlock>>,
    downsamples: Vec<Downsample>,
    cross: Vec<CrossAttention>,
    transposed: Vec<TransposedAttention>,
    head: QualityHead,
}

impl Esiqanet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let c = config.channels;
        let s = config.patch_stride;
        let stem = Conv2d::new(&mut init, "backbone.stem", 3, c[0], 2 * s - 1, s, s - 1);
        let stem_norm = LayerNorm::new(&mut init, "backbone.stem_norm", c[0]);
        let mut stages = Vec::new();
        let mut downsamples = Vec::new();
        for i in 0..4 {
            let mut blocks = Vec::new();
            for j in 0..config.blocks[i] {
                let name = format!("backbone.stage{}.block{}", i + 1, j);
                let block = if i == 3 && config.msa_stage {
                    StageBlock::Msa(MsaBlock::new(&mut init, &name, c[i], config.heads[i])?)
                } else {
                    StageBlock::Vssd(VssdBlock::new(&mut init, &name, c[i], config.heads[i]))
                };
                blocks.push(block);
            }
            stages.push(blocks);
            if i < 3 {
                let name = format!("backbone.down{}", i + 1);
                downsamples.push(Downsample {
                    conv: Conv2d::new(&mut init, &name, c[i], c[i + 1], 3, 2, 1),
                    norm: LayerNorm::new(&mut init, &format!("{name}.norm"), c[i + 1]),
                });
            }
        }
        let cross = if config.uses_cross_attention() {
            (0..4)
                .map(|i| CrossAttention::new(&mut init, &format!("fusion.cross{}", i + 1), c[i], config.heads[i]))
                .collect()
        } else {
            Vec::new()
        };
        let transposed = if config.transposed_attention {
            (0..4)
                .map(|i| {
                    TransposedAttention::new(
                        &mut init,
                        &format!("fusion.transposed{}", i + 1),
                        c[i],
                        config.transposed_heads,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let [h1, h2] = config.mlp_hidden;
        let ha = ParamKind::HeadAffine;
        let head = QualityHead {
            fc1: Linear::new(&mut init, "head.fc1", config.feature_len(), h1, ha),
            fc2: Linear::new(&mut init, "head.fc2", h1, h2, ha),
            fc3: Linear::new(&mut init, "head.fc3", h2, 1, ha),
        };
        Ok(Self { config, params: store, stem, stem_norm, stages, downsamples, cross, transposed, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_report(&self) -> ParamReport {
        ParamReport {
            total: self.params.num_params(),
            by_kind: self.params.count_by_kind(),
            trainable: self.params.entries().iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum(),
        }
    }

    /// Freezes or unfreezes every backbone parameter.
    pub fn set_backbone_trainable(&mut self, trainable: bool) {
        self.params.set_trainable("backbone.", trainable);
    }

    /// Zeroes the output projection of every cross-attention block.
    pub fn zero_cross_attention_outputs(&mut self) {
        for c in &self.cross {
            c.proj.zero(&mut self.params);
        }
    }

    pub fn zero_transposed_attention_outputs(&mut self) {
        for t in &self.transposed {
            t.proj.zero(&mut self.params);
        }
    }

    pub fn zero_block_outputs(&mut self) {
        for b in self.stages.iter().flatten() {
            b.zero_outputs(&mut self.params);
        }
    }

    fn check_view(&self, x: &Tensor) -> Result<usize, ModelError> {
        let e = x.extents();
        if e.len() != 4 || e[1] != 3 {
            return Err(ModelError::Input(format!("expected [B, 3, H, W] image batch, got {e:?}")));
        }
        if e[2] != e[3] {
            return Err(ModelError::Input(format!("non-square input {}×{}", e[2], e[3])));
        }
        if !e[2].is_multiple_of(self.config.cumulative_stride()) {
            return Err(ModelError::Input(format!(
                "input side {} not divisible by cumulative stride {}",
                e[2],
                self.config.cumulative_stride()
            )));
        }
        if e[2] != self.config.input_side {
            return Err(ModelError::Input(format!(
                "input side {} differs from configured {}",
                e[2], self.config.input_side
            )));
        }
        Ok(e[0])
    }

    /// Backbone features of one view, one entry per stage.
    pub fn backbone(&self, image: &Tensor, ctx: &mut ForwardCtx) -> Result<Vec<(usize, Tensor)>, ModelError> {
        self.check_view(image)?;
        let ps = &self.params;
        let sides = self.config.stage_sides();
        let mut x = self.stem_norm.forward(ps, &grid_to_tokens(&self.stem.forward(ps, image)?)?)?;
        let mut out = Vec::with_capacity(4);
        for i in 0..4 {
            for block in &self.stages[i] {
                x = block.forward(ps, &x, sides[i], ctx)?;
            }
            out.push((sides[i], x.clone()));
            if i < 3 {
                let d = &self.downsamples[i];
                let grid = d.conv.forward(ps, &tokens_to_grid(&x, sides[i])?)?;
                x = d.norm.forward(ps, &grid_to_tokens(&grid)?)?;
            }
        }
        Ok(out)
    }

    /// Per-stage features of both views.
    pub fn stage_features(
        &self,
        left: &Tensor,
        right: Option<&Tensor>,
        ctx: &mut ForwardCtx,
    ) -> Result<Vec<StageFeatures>, ModelError> {
        let lf = self.backbone(left, ctx)?;
        let rf = right.map(|r| self.backbone(r, ctx)).transpose()?;
        Ok(lf
            .into_iter()
            .enumerate()
            .map(|(i, (side, l))| StageFeatures {
                stage: i + 1,
                side,
                left: l,
                right: rf.as_ref().map(|r| r[i].1.clone()),
            })
            .collect())
    }

    /// Predicted quality for a batch: `left` and `right` are `[B, 3, S, S]`; returns `[B]`.
    pub fn forward(&self, left: &Tensor, right: Option<&Tensor>, ctx: &mut ForwardCtx) -> Result<Tensor, ModelError> {
        let batch = self.check_view(left)?;
        let right = if self.config.mode.is_stereo() {
            let r = right.ok_or(ModelError::MissingRightView)?;
            if r.extents() != left.extents() {
                return Err(ModelError::Input(format!(
                    "view extents differ: {:?} vs {:?}",
                    left.extents(),
                    r.extents()
                )));
            }
            self.config.uses_cross_attention().then_some(r)
        } else {
            None
        };
        let ps = &self.params;
        let features = self.stage_features(left, right, ctx)?;
        let mut pooled = Vec::with_capacity(4);
        for (i, sf) in features.iter().enumerate() {
            let fused = match &sf.right {
                Some(r) if self.config.symmetric_cross_attention => {
                    let lr = self.cross[i].forward(ps, &sf.left, r)?;
                    let rl = self.cross[i].forward(ps, r, &sf.left)?;
                    lr.add(&rl)?.scale(0.5)
                }
                Some(r) => self.cross[i].forward(ps, &sf.left, r)?,
                None => sf.left.clone(),
            };
            let enhanced =
                if self.config.transposed_attention { self.transposed[i].forward(ps, &fused)? } else { fused };
            pooled.push(enhanced.mean_axes(&[1])?);
        }
        let rep = Tensor::concat(&pooled, 1)?;
        let rate = self.config.dropout;
        let h = self.head.fc1.forward(ps, &rep)?.relu();
        let h = h.dropout(rate, ctx.train, &mut ctx.rng)?;
        let h = self.head.fc2.forward(ps, &h)?.relu();
        let h = h.dropout(rate, ctx.train, &mut ctx.rng)?;
        Ok(self.head.fc3.forward(ps, &h)?.reshape(&[batch])?)
    }

    /// Eval-mode score of a single image pair.
    pub fn predict(&self, left: &Tensor, right: Option<&Tensor>) -> Result<f64, ModelError> {
        let add_batch = |t: &Tensor| -> Result<Tensor, ModelError> {
            if t.rank() == 3 {
                let mut e = vec![1];
                e.extend_from_slice(t.extents());
                Ok(t.reshape(&e)?)
            } else {
                Ok(t.clone())
            }
        };
        let l = add_batch(left)?;
        let r = right.map(add_batch).transpose()?;
        let y = no_grad(|| self.forward(&l, r.as_ref(), &mut ForwardCtx::eval()))?;
        Ok(y.data()[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DisplayMode;

    #[test]
    fn reduced_model_runs() {
        let cfg = ModelConfig::reduced();
        let model = Esiqanet::new(cfg.clone(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Tensor::randn(&[2, 3, 32, 32], 1.0, &mut rng);
        let r = Tensor::randn(&[2, 3, 32, 32], 1.0, &mut rng);
        let y = no_grad(|| model.forward(&l, Some(&r), &mut ForwardCtx::eval())).unwrap();
        assert_eq!(y.extents(), &[2]);
        assert!(y.is_finite());
        let feats = model.stage_features(&l, Some(&r), &mut ForwardCtx::eval()).unwrap();
        let sides: Vec<usize> = feats.iter().map(|f| f.side).collect();
        assert_eq!(sides, vec![8, 4, 2, 1]);
    }

    #[test]
    fn input_errors() {
        let model = Esiqanet::new(ModelConfig::reduced(), 1).unwrap();
        let l = Tensor::zeros(&[1, 3, 32, 32]);
        assert!(matches!(model.forward(&l, None, &mut ForwardCtx::eval()), Err(ModelError::MissingRightView)));
        let ns = Tensor::zeros(&[1, 3, 32, 40]);
        assert!(matches!(model.forward(&ns, Some(&ns), &mut ForwardCtx::eval()), Err(ModelError::Input(_))));
        let odd = Tensor::zeros(&[1, 3, 36, 36]);
        assert!(matches!(model.forward(&odd, Some(&odd), &mut ForwardCtx::eval()), Err(ModelError::Input(_))));
        let flat = Esiqanet::new(ModelConfig::reduced().with_mode(DisplayMode::Flat), 1).unwrap();
        assert!(flat.forward(&l, None, &mut ForwardCtx::eval()).is_ok());
    }

    #[test]
    fn frozen_backbone_has_no_backbone_grads() {
        let mut model = Esiqanet::new(ModelConfig::reduced().with_mode(DisplayMode::Flat), 2).unwrap();
        model.set_backbone_trainable(false);
        let report = model.param_report();
        assert!(report.trainable < report.total);
        let l = Tensor::full(&[1, 3, 32, 32], 0.1);
        let y = model.forward(&l, None, &mut ForwardCtx::eval()).unwrap().sum();
        let g = crate::tensor::backward(&y).unwrap();
        for e in model.params().entries() {
            assert_eq!(g.get(&e.value).is_some(), !e.name.starts_with("backbone."), "{}", e.name);
        }
    }
}
