use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Presentation condition under which an image was rated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DisplayMode {
    #[serde(rename = "2d")]
    Flat,
    #[serde(rename = "3d_window")]
    Window,
    #[serde(rename = "3d_immersive")]
    Immersive,
}

impl DisplayMode {
    pub const ALL: [DisplayMode; 3] = [DisplayMode::Flat, DisplayMode::Window, DisplayMode::Immersive];

    pub fn as_str(self) -> &'static str {
        match self {
            DisplayMode::Flat => "2d",
            DisplayMode::Window => "3d_window",
            DisplayMode::Immersive => "3d_immersive",
        }
    }

    pub fn is_stereo(self) -> bool {
        self != DisplayMode::Flat
    }
}

impl fmt::Display for DisplayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DisplayMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.trim() {
            "2d" => Ok(DisplayMode::Flat),
            "3d_window" => Ok(DisplayMode::Window),
            "3d_immersive" => Ok(DisplayMode::Immersive),
            other => Err(ModelError::Config(format!("unknown display mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Micro,
    Tiny,
    Small,
    Base,
    Custom,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Micro => "micro",
            Variant::Tiny => "tiny",
            Variant::Small => "small",
            Variant::Base => "base",
            Variant::Custom => "custom",
        }
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "micro" | "m" => Ok(Variant::Micro),
            "tiny" | "t" => Ok(Variant::Tiny),
            "small" | "s" => Ok(Variant::Small),
            "base" | "b" => Ok(Variant::Base),
            "custom" => Ok(Variant::Custom),
            other => Err(ModelError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Architecture description plus ablation toggles.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub blocks: [usize; 4],
    pub channels: [usize; 4],
    pub heads: [usize; 4],
    pub patch_stride: usize,
    pub mlp_hidden: [usize; 2],
    pub mode: DisplayMode,
    pub cross_attention: bool,
    pub transposed_attention: bool,
    pub msa_stage: bool,
    /// Average left-queries-right and right-queries-left fusion.
    pub symmetric_cross_attention: bool,
    pub transposed_heads: usize,
    pub dropout: f64,
    pub input_side: usize,
}

pub const FFN_EXPANSION: usize = 4;
const DEFAULT_MLP: [usize; 2] = [512, 64];
const REFERENCE_WIDTH: usize = 48 + 96 + 192 + 384;

impl ModelConfig {
    pub fn variant(variant: Variant) -> Self {
        let (blocks, channels, heads) = match variant {
            Variant::Micro => ([2, 2, 8, 4], [48, 96, 192, 384], [2, 4, 8, 16]),
            Variant::Tiny => ([2, 4, 12, 4], [64, 128, 256, 512], [2, 4, 8, 16]),
            Variant::Small => ([3, 4, 21, 5], [64, 128, 256, 512], [2, 4, 8, 16]),
            Variant::Base => ([3, 4, 21, 5], [96, 192, 384, 768], [3, 6, 12, 24]),
            Variant::Custom => ([1, 1, 1, 1], [8, 16, 32, 64], [1, 2, 4, 8]),
        };
        let mut cfg = ModelConfig {
            variant,
            blocks,
            channels,
            heads,
            patch_stride: 4,
            mlp_hidden: DEFAULT_MLP,
            mode: DisplayMode::Window,
            cross_attention: true,
            transposed_attention: true,
            msa_stage: true,
            symmetric_cross_attention: false,
            transposed_heads: 1,
            dropout: 0.1,
            input_side: 224,
        };
        if variant == Variant::Custom {
            cfg.mlp_hidden = Self::scaled_mlp(&channels);
            cfg.input_side = 32;
        }
        cfg
    }

    pub fn micro() -> Self {
        Self::variant(Variant::Micro)
    }

    /// Desk-scale configuration: channels `[8,16,32,64]`, one block per stage, 32×32 input.
    pub fn reduced() -> Self {
        Self::variant(Variant::Custom)
    }

    /// Custom widths; MLP hidden sizes scale with the total pooled width.
    pub fn custom(blocks: [usize; 4], channels: [usize; 4], heads: [usize; 4]) -> Self {
        let mut cfg = Self::variant(Variant::Custom);
        cfg.blocks = blocks;
        cfg.channels = channels;
        cfg.heads = heads;
        cfg.mlp_hidden = Self::scaled_mlp(&channels);
        cfg
    }

    fn scaled_mlp(channels: &[usize; 4]) -> [usize; 2] {
        let total: usize = channels.iter().sum();
        let scale = |d: usize| ((d * total) as f64 / REFERENCE_WIDTH as f64).round().max(2.0) as usize;
        [scale(DEFAULT_MLP[0]), scale(DEFAULT_MLP[1])]
    }

    /// Sets the display mode; 2d disables cross attention.
    pub fn with_mode(mut self, mode: DisplayMode) -> Self {
        self.mode = mode;
        if mode == DisplayMode::Flat {
            self.cross_attention = false;
        }
        self
    }

    pub fn cumulative_stride(&self) -> usize {
        self.patch_stride * 8
    }

    /// Token grid side at each stage.
    pub fn stage_sides(&self) -> [usize; 4] {
        let s1 = self.input_side / self.patch_stride;
        [s1, s1 / 2, s1 / 4, s1 / 8]
    }

    /// Length of the concatenated pooled representation fed to the regressor.
    pub fn feature_len(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn uses_cross_attention(&self) -> bool {
        self.cross_attention && self.mode.is_stereo()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.blocks.contains(&0) || self.channels.contains(&0) || self.heads.contains(&0) {
            return err("blocks, channels and heads must be positive".into());
        }
        for i in 0..4 {
            if !self.channels[i].is_multiple_of(self.heads[i]) {
                return err(format!(
                    "stage {} channels {} not divisible by heads {}",
                    i + 1,
                    self.channels[i],
                    self.heads[i]
                ));
            }
            if self.transposed_attention && !self.channels[i].is_multiple_of(self.transposed_heads) {
                return err(format!("stage {} channels not divisible by transposed heads", i + 1));
            }
        }
        if self.variant != Variant::Custom {
            for i in 0..3 {
                if self.channels[i + 1] != 2 * self.channels[i] {
                    return err("named variants double channels between stages".into());
                }
            }
        }
        if self.patch_stride == 0 || self.transposed_heads == 0 {
            return err("patch stride and transposed heads must be positive".into());
        }
        if self.mlp_hidden.contains(&0) {
            return err("mlp hidden dims must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.mode == DisplayMode::Flat && self.cross_attention {
            return err("2d mode cannot enable cross attention".into());
        }
        if self.input_side == 0 || !self.input_side.is_multiple_of(self.cumulative_stride()) {
            return err(format!(
                "input side {} not divisible by cumulative stride {}",
                self.input_side,
                self.cumulative_stride()
            ));
        }
        Ok(())
    }

    /// UTF-8 `key = value` lines.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("variant", self.variant.as_str().into());
        kv("blocks", list(&self.blocks));
        kv("channels", list(&self.channels));
        kv("heads", list(&self.heads));
        kv("patch_stride", self.patch_stride.to_string());
        kv("mlp_hidden", list(&self.mlp_hidden));
        kv("mode", self.mode.to_string());
        kv("cross_attention", self.cross_attention.to_string());
        kv("transposed_attention", self.transposed_attention.to_string());
        kv("msa_stage", self.msa_stage.to_string());
        kv("symmetric_cross_attention", self.symmetric_cross_attention.to_string());
        kv("transposed_heads", self.transposed_heads.to_string());
        kv("dropout", format!("{:?}", self.dropout));
        kv("input_side", self.input_side.to_string());
        s
    }

    /// Parses `key = value` text. Starts from the named `variant` (micro if absent)
    /// and overrides whatever keys are present.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let map = parse_key_values(text)?;
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        let variant = map.get("variant").map(|v| v.parse()).transpose()?.unwrap_or(Variant::Micro);
        let mut cfg = Self::variant(variant);
        let mut mlp_set = false;
        for (k, v) in map {
            match k.as_str() {
                "variant" => {}
                "blocks" => cfg.blocks = parse_array(k, v)?,
                "channels" => cfg.channels = parse_array(k, v)?,
                "heads" => cfg.heads = parse_array(k, v)?,
                "patch_stride" => cfg.patch_stride = parse_num(k, v)?,
                "mlp_hidden" => {
                    cfg.mlp_hidden = parse_array(k, v)?;
                    mlp_set = true;
                }
                "mode" => cfg.mode = v.parse()?,
                "cross_attention" => cfg.cross_attention = parse_num(k, v)?,
                "transposed_attention" => cfg.transposed_attention = parse_num(k, v)?,
                "msa_stage" => cfg.msa_stage = parse_num(k, v)?,
                "symmetric_cross_attention" => cfg.symmetric_cross_attention = parse_num(k, v)?,
                "transposed_heads" => cfg.transposed_heads = parse_num(k, v)?,
                "dropout" => cfg.dropout = parse_num(k, v)?,
                "input_side" => cfg.input_side = parse_num(k, v)?,
                _ => {}
            }
        }
        if variant == Variant::Custom && !mlp_set {
            cfg.mlp_hidden = Self::scaled_mlp(&cfg.channels);
        }
        if cfg.mode == DisplayMode::Flat && !map.contains_key("cross_attention") {
            cfg.cross_attention = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, ModelError> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ModelError> {
    v.trim().parse().map_err(|_| ModelError::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_array<const N: usize>(key: &str, v: &str) -> Result<[usize; N], ModelError> {
    let items: Vec<usize> =
        v.trim_matches(|c| c == '[' || c == ']').split(',').map(|s| parse_num(key, s)).collect::<Result<_, _>>()?;
    items.try_into().map_err(|_| ModelError::Config(format!("`{key}` needs {N} comma-separated values")))
}
