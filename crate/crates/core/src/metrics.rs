//! Recognition metrics: pixel-exact match, column edit score and BLEU-4.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::imagediff::{self, DiffError};
use crate::raster::PixelGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "match")]
    pub matched: bool,
    pub edit_score: f64,
    /// Absent when no reference source was supplied.
    pub bleu4: Option<f64>,
    pub distance: usize,
}

/// Same dimensions and every pixel equal.
pub fn exact_match(gt: &PixelGrid, rendered: &PixelGrid) -> bool {
    gt == rendered
}

/// `1 - distance / max(W_gt, W_rendered)`, clamped to [0, 1].
pub fn edit_score(gt: &PixelGrid, rendered: &PixelGrid) -> Result<f64, DiffError> {
    let script = imagediff::wagner_fischer_star(gt, rendered)?;
    Ok(score_from_distance(script.distance, gt.width(), rendered.width()))
}

pub(crate) fn score_from_distance(distance: usize, gt_width: usize, rendered_width: usize) -> f64 {
    let denom = gt_width.max(rendered_width) as f64;
    (1.0 - distance as f64 / denom).clamp(0.0, 1.0)
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence-level BLEU with uniform 1..4-gram weights, brevity penalty and no
/// smoothing. Any zero n-gram precision makes the score 0.
pub fn bleu4<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let total = candidate.len().saturating_sub(n - 1);
        if total == 0 {
            return 0.0;
        }
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let clipped: usize = cand
            .iter()
            .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / 4.0).exp()
}

/// Scores one rendered candidate against its ground-truth image.
pub fn evaluate<T: Eq + Hash>(
    gt: &PixelGrid,
    rendered: &PixelGrid,
    candidate_tokens: &[T],
    reference_tokens: Option<&[T]>,
) -> Result<EvalReport, DiffError> {
    let script = imagediff::wagner_fischer_star(gt, rendered)?;
    Ok(EvalReport {
        matched: exact_match(gt, rendered),
        edit_score: score_from_distance(script.distance, gt.width(), rendered.width()),
        bleu4: reference_tokens.map(|r| bleu4(candidate_tokens, r)),
        distance: script.distance,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub samples: usize,
    pub match_rate: f64,
    pub mean_edit_score: f64,
    /// Mean over the samples that carried a reference source.
    pub mean_bleu4: Option<f64>,
    pub render_failures: usize,
}

impl AggregateReport {
    pub fn from_reports(reports: &[EvalReport], render_failures: usize) -> Self {
        let n = reports.len();
        if n == 0 {
            return AggregateReport {
                render_failures,
                ..Default::default()
            };
        }
        let matches = reports.iter().filter(|r| r.matched).count();
        let edit: f64 = reports.iter().map(|r| r.edit_score).sum();
        let bleus: Vec<f64> = reports.iter().filter_map(|r| r.bleu4).collect();
        AggregateReport {
            samples: n,
            match_rate: matches as f64 / n as f64,
            mean_edit_score: edit / n as f64,
            mean_bleu4: (!bleus.is_empty()).then(|| bleus.iter().sum::<f64>() / bleus.len() as f64),
            render_failures,
        }
    }
}
