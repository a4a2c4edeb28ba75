use super::ModelError;
use crate::tensor::Tensor;

/// Spatial activation map in `[0, 1]`, row-major `side × side`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }
}

/// Channel mean per position of `v` (`[C, H·W]`), min-max normalized.
/// A constant map yields all zeros.
pub fn stage_heatmap(v: &Tensor) -> Result<Heatmap, ModelError> {
    let e = v.extents();
    if e.len() != 2 || e[0] == 0 || e[1] == 0 {
        return Err(ModelError::Extents(format!("expected [C, H·W], got {e:?}")));
    }
    let (c, l) = (e[0], e[1]);
    let side = (l as f64).sqrt().round() as usize;
    if side * side != l {
        return Err(ModelError::Extents(format!("{l} positions do not form a square grid")));
    }
    let data = v.data();
    let mut mean = vec![0.0; l];
    for ch in 0..c {
        for (m, x) in mean.iter_mut().zip(&data[ch * l..(ch + 1) * l]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let values =
        if range > 0.0 && range.is_finite() { mean.iter().map(|m| (m - lo) / range).collect() } else { vec![0.0; l] };
    Ok(Heatmap { side, values })
}
