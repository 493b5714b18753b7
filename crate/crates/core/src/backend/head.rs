//! Forward pass of the fault-localization attention head.
//!
//! Given the decoder hidden states `H = [h_0 .. h_{n-1}]` of a candidate script,
//! the last state acts as the query:
//!
//! ```text
//! Q = ReLU(W_q h_{n-1})      K_i = ReLU(W_k h_i)
//! P = softmax(Q . K_i)       l   = argmax P   (lowest index on ties)
//! ```
//!
//! The weights are whatever a trained model supplies; this is the reference
//! arithmetic a backend is expected to reproduce.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeadError {
    #[error("no hidden states")]
    Empty,
    #[error("weight matrices disagree: W_q is {q_rows}x{q_cols}, W_k is {k_rows}x{k_cols}")]
    WeightShape {
        q_rows: usize,
        q_cols: usize,
        k_rows: usize,
        k_cols: usize,
    },
    #[error("hidden state {index} has size {got}, expected {expected}")]
    HiddenSize { index: usize, got: usize, expected: usize },
}

/// Two `d_out x d_hidden` projection matrices, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    w_q: Vec<Vec<f64>>,
    w_k: Vec<Vec<f64>>,
    d_hidden: usize,
}

impl AttentionHead {
    pub fn new(w_q: Vec<Vec<f64>>, w_k: Vec<Vec<f64>>) -> Result<Self, HeadError> {
        let shape = |m: &Vec<Vec<f64>>| (m.len(), m.first().map_or(0, Vec::len));
        let (q_rows, q_cols) = shape(&w_q);
        let (k_rows, k_cols) = shape(&w_k);
        let ragged = w_q.iter().any(|r| r.len() != q_cols) || w_k.iter().any(|r| r.len() != k_cols);
        if q_rows == 0 || q_cols == 0 || (q_rows, q_cols) != (k_rows, k_cols) || ragged {
            return Err(HeadError::WeightShape {
                q_rows,
                q_cols,
                k_rows,
                k_cols,
            });
        }
        Ok(AttentionHead {
            w_q,
            w_k,
            d_hidden: q_cols,
        })
    }

    pub fn d_hidden(&self) -> usize {
        self.d_hidden
    }

    pub fn d_out(&self) -> usize {
        self.w_q.len()
    }
}

fn project_relu(w: &[Vec<f64>], h: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>().max(0.0))
        .collect()
}

/// Attention distribution over token positions and the selected fault index.
pub fn fl_head_forward(hidden: &[Vec<f64>], head: &AttentionHead) -> Result<(Vec<f64>, usize), HeadError> {
    let last = hidden.last().ok_or(HeadError::Empty)?;
    for (index, h) in hidden.iter().enumerate() {
        if h.len() != head.d_hidden {
            return Err(HeadError::HiddenSize {
                index,
                got: h.len(),
                expected: head.d_hidden,
            });
        }
    }
    let q = project_relu(&head.w_q, last);
    let logits: Vec<f64> = hidden
        .iter()
        .map(|h| {
            let k = project_relu(&head.w_k, h);
            q.iter().zip(&k).map(|(a, b)| a * b).sum()
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.into_iter().map(|e| e / total).collect();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((probs, best))
}
