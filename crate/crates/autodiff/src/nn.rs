use crate::error::{AutodiffError, Result};
use crate::float::Float;
use crate::tape::{Tape, Var};

/// Boolean `[queries × keys]` mask; `true` marks a position that may be attended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n).flat_map(|i| (0..n).map(move |j| j <= i)).collect();
        AttentionMask {
            rows: n,
            cols: n,
            allowed,
        }
    }

    /// Every query sees exactly the keys flagged in `valid_keys`.
    pub fn key_padding(rows: usize, valid_keys: &[bool]) -> Self {
        let allowed = (0..rows).flat_map(|_| valid_keys.iter().copied()).collect();
        AttentionMask {
            rows,
            cols: valid_keys.len(),
            allowed,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        AttentionMask { rows, cols, allowed }
    }

    /// Positions allowed by both masks.
    pub fn and(&self, other: &AttentionMask) -> Result<AttentionMask> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(AutodiffError::ShapeMismatch {
                op: "mask_and",
                lhs: vec![self.rows, self.cols],
                rhs: vec![other.rows, other.cols],
            });
        }
        let allowed = self.allowed.iter().zip(&other.allowed).map(|(&a, &b)| a && b).collect();
        Ok(AttentionMask {
            rows: self.rows,
            cols: self.cols,
            allowed,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

/// Scaled dot-product attention split across `heads` column groups.
///
/// `queries: [tq,d]`, `keys`/`values: [tk,d]`; output is `[tq,d]`. Masked
/// positions get exactly zero weight.
pub fn multi_head_attention<F: Float>(
    tape: &mut Tape<'_, F>,
    queries: Var,
    keys: Var,
    values: Var,
    mask: Option<&AttentionMask>,
    heads: usize,
) -> Result<Var> {
    let (tq, d) = tape.value(queries).dims2("attention")?;
    let (tk, dk) = tape.value(keys).dims2("attention")?;
    let (tv, dv) = tape.value(values).dims2("attention")?;
    if dk != d || dv != d || tv != tk {
        return Err(AutodiffError::ShapeMismatch {
            op: "attention",
            lhs: vec![tq, d],
            rhs: vec![tk, dk],
        });
    }
    if heads == 0 || d % heads != 0 {
        return Err(AutodiffError::invalid(
            "attention",
            format!("model dim {d} not divisible into {heads} heads"),
        ));
    }
    if let Some(m) = mask {
        if m.shape() != (tq, tk) {
            return Err(AutodiffError::ShapeMismatch {
                op: "attention",
                lhs: vec![tq, tk],
                rhs: vec![m.rows, m.cols],
            });
        }
    }
    let head_dim = d / heads;
    let scale = F::one() / F::of(head_dim as f64).sqrt();
    let allowed = mask.map(AttentionMask::as_slice);
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (q, k, v) = if heads == 1 {
            (queries, keys, values)
        } else {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            (
                tape.slice_cols(queries, lo, hi)?,
                tape.slice_cols(keys, lo, hi)?,
                tape.slice_cols(values, lo, hi)?,
            )
        };
        let scores = tape.matmul_t(q, k)?;
        let scores = tape.scale(scores, scale)?;
        let weights = tape.masked_softmax(scores, allowed)?;
        outputs.push(tape.matmul(weights, v)?);
    }
    if outputs.len() == 1 {
        Ok(outputs[0])
    } else {
        tape.concat_cols(&outputs)
    }
}
