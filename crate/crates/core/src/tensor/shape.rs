//! Index bookkeeping for broadcasting, reductions and axis permutations.

use super::{numel_of, Result, TensorError};

pub(crate) fn strides(extents: &[usize]) -> Vec<usize> {
    let mut s = vec![1; extents.len()];
    for i in (0..extents.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * extents[i + 1];
    }
    s
}

/// Numpy-style broadcast of two extent lists.
pub(crate) fn broadcast_extents(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(TensorError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }),
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index of `src` it reads under broadcasting.
pub(crate) fn broadcast_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = numel_of(out);
    let rank = out.len();
    let offset = rank - src.len();
    let src_strides = strides(src);
    let mut eff = vec![0usize; rank];
    for i in 0..src.len() {
        eff[offset + i] = if src[i] == 1 { 0 } else { src_strides[i] };
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// Extents after removing `axes`, plus the output flat index for every input index.
pub(crate) fn reduce_index_map(extents: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = (0..extents.len()).filter(|a| !axes.contains(a)).collect();
    let mut out_ext: Vec<usize> = kept.iter().map(|&a| extents[a]).collect();
    if out_ext.is_empty() {
        out_ext.push(1);
    }
    let out_strides = strides(&out_ext);
    let mut eff = vec![0usize; extents.len()];
    if kept.is_empty() {
        // everything reduces into the single output element
    } else {
        for (k, &a) in kept.iter().enumerate() {
            eff[a] = out_strides[k];
        }
    }
    let n = numel_of(extents);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; extents.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..extents.len()).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < extents[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out_ext, map)
}

/// For every flat output index of the permuted tensor, the flat input index it reads.
pub(crate) fn permute_index_map(extents: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let in_strides = strides(extents);
    let out_ext: Vec<usize> = perm.iter().map(|&p| extents[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel_of(extents);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; perm.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..perm.len()).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < out_ext[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out_ext, map)
}

/// Product of extents before `axis`, the axis length, and the product after it.
pub(crate) fn split_at_axis(extents: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = extents[..axis].iter().product();
    let inner = extents[axis + 1..].iter().product();
    (outer, extents[axis], inner)
}
