//! Column-sequence edit distance between two rasters and the delta-view
//! annotation built on top of it.
//!
//! An image is treated as a list of pixel columns. The edit script transforms
//! the rendered image into the ground truth: `Delete` removes a rendered-only
//! column, `Insert` adds a ground-truth-only column, `Substitute` swaps one
//! column for another and `Copy` keeps an identical column.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Pixel, PixelGrid};

pub const LIGHT_RED: Pixel = Pixel::new(255, 200, 200);
pub const LIGHT_BLUE: Pixel = Pixel::new(200, 200, 255);
pub const RED: Pixel = Pixel::new(255, 0, 0);
pub const BLUE: Pixel = Pixel::new(0, 0, 255);
pub const DIVIDER: Pixel = Pixel::new(128, 128, 128);
pub const DIVIDER_ROWS: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("column heights differ: ground truth {gt}, rendered {rendered}")]
    HeightMismatch { gt: usize, rendered: usize },
    #[error("row comparison needs equal widths: ground truth {gt}, rendered {rendered}")]
    WidthMismatch { gt: usize, rendered: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Copy,
    Substitute,
    Delete,
    Insert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Copy { gt: usize, rendered: usize },
    Substitute { gt: usize, rendered: usize },
    Delete { rendered: usize },
    Insert { gt: usize },
}

impl EditOp {
    pub fn kind(&self) -> OpKind {
        match self {
            EditOp::Copy { .. } => OpKind::Copy,
            EditOp::Substitute { .. } => OpKind::Substitute,
            EditOp::Delete { .. } => OpKind::Delete,
            EditOp::Insert { .. } => OpKind::Insert,
        }
    }

    pub fn gt_index(&self) -> Option<usize> {
        match *self {
            EditOp::Copy { gt, .. } | EditOp::Substitute { gt, .. } | EditOp::Insert { gt } => Some(gt),
            EditOp::Delete { .. } => None,
        }
    }

    pub fn rendered_index(&self) -> Option<usize> {
        match *self {
            EditOp::Copy { rendered, .. }
            | EditOp::Substitute { rendered, .. }
            | EditOp::Delete { rendered } => Some(rendered),
            EditOp::Insert { .. } => None,
        }
    }
}

/// Per-kind counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTally {
    pub copy: usize,
    pub substitute: usize,
    pub delete: usize,
    pub insert: usize,
}

impl OpTally {
    fn bump(&mut self, kind: OpKind) {
        match kind {
            OpKind::Copy => self.copy += 1,
            OpKind::Substitute => self.substitute += 1,
            OpKind::Delete => self.delete += 1,
            OpKind::Insert => self.insert += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript {
    /// Left-to-right in image order.
    pub ops: Vec<EditOp>,
    /// Number of non-copy operations.
    pub distance: usize,
}

impl EditScript {
    pub fn counts(&self) -> OpTally {
        let mut tally = OpTally::default();
        for op in &self.ops {
            tally.bump(op.kind());
        }
        tally
    }

    /// Number of maximal runs of consecutive operations of each kind.
    pub fn runs(&self) -> OpTally {
        let mut tally = OpTally::default();
        let mut prev = None;
        for op in &self.ops {
            let kind = op.kind();
            if prev != Some(kind) {
                tally.bump(kind);
            }
            prev = Some(kind);
        }
        tally
    }
}

// DP cell operation codes.
const OP_COPY: u8 = 0;
const OP_SUB: u8 = 1;
const OP_DEL: u8 = 2;
const OP_INS: u8 = 3;

/// Minimal unit-cost edit script turning `rendered` into `gt`.
///
/// Ties are resolved Insert first, then Copy/Substitute, then Delete, both when
/// filling the table and (implicitly) when backtracking from the stored choices.
pub fn edit_script<T: Eq>(gt: &[T], rendered: &[T]) -> EditScript {
    let (nr, ng) = (rendered.len(), gt.len());
    let stride = ng + 1;
    // Rows index rendered columns, table columns index gt columns.
    let mut choice = vec![OP_INS; (nr + 1) * stride];
    let mut prev: Vec<u32> = (0..=ng as u32).collect();
    let mut cur = vec![0u32; stride];

    for i in 1..=nr {
        cur[0] = i as u32;
        choice[i * stride] = OP_DEL;
        let r = &rendered[i - 1];
        for j in 1..=ng {
            let same = gt[j - 1] == *r;
            let sub = prev[j - 1] + u32::from(!same);
            let del = prev[j] + 1;
            let ins = cur[j - 1] + 1;
            let min = sub.min(del).min(ins);
            let op = if ins == min {
                OP_INS
            } else if sub == min {
                if same {
                    OP_COPY
                } else {
                    OP_SUB
                }
            } else {
                OP_DEL
            };
            cur[j] = min;
            choice[i * stride + j] = op;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let distance = prev[ng] as usize;

    let mut ops = Vec::with_capacity(nr.max(ng));
    let (mut i, mut j) = (nr, ng);
    while i > 0 && j > 0 {
        match choice[i * stride + j] {
            OP_COPY => {
                ops.push(EditOp::Copy { gt: j - 1, rendered: i - 1 });
                i -= 1;
                j -= 1;
            }
            OP_SUB => {
                ops.push(EditOp::Substitute { gt: j - 1, rendered: i - 1 });
                i -= 1;
                j -= 1;
            }
            OP_DEL => {
                ops.push(EditOp::Delete { rendered: i - 1 });
                i -= 1;
            }
            _ => {
                ops.push(EditOp::Insert { gt: j - 1 });
                j -= 1;
            }
        }
    }
    while i > 0 {
        ops.push(EditOp::Delete { rendered: i - 1 });
        i -= 1;
    }
    while j > 0 {
        ops.push(EditOp::Insert { gt: j - 1 });
        j -= 1;
    }
    ops.reverse();
    EditScript { ops, distance }
}

/// Maps every distinct pixel column of both images to a small integer id.
pub fn intern_columns(gt: &PixelGrid, rendered: &PixelGrid) -> (Vec<u32>, Vec<u32>) {
    let gt_cols = gt.columns();
    let r_cols = rendered.columns();
    let mut table: HashMap<&[Pixel], u32> = HashMap::with_capacity(gt_cols.len() + r_cols.len());
    let mut ids = [Vec::with_capacity(gt_cols.len()), Vec::with_capacity(r_cols.len())];
    for (cols, out) in [&gt_cols, &r_cols].into_iter().zip(ids.iter_mut()) {
        for c in cols {
            let next = table.len() as u32;
            out.push(*table.entry(c.as_slice()).or_insert(next));
        }
    }
    let [g, r] = ids;
    (g, r)
}

fn check_heights(gt: &PixelGrid, rendered: &PixelGrid) -> Result<(), DiffError> {
    if gt.height() != rendered.height() {
        return Err(DiffError::HeightMismatch {
            gt: gt.height(),
            rendered: rendered.height(),
        });
    }
    Ok(())
}

/// Column edit script between two images of equal height.
pub fn wagner_fischer_star(gt: &PixelGrid, rendered: &PixelGrid) -> Result<EditScript, DiffError> {
    check_heights(gt, rendered)?;
    let (g, r) = intern_columns(gt, rendered);
    Ok(edit_script(&g, &r))
}

/// Annotates one ground-truth/rendered column pair.
///
/// All masks are taken from the original pixels before any recoloring:
/// white ground-truth pixels turn light red, white rendered pixels light blue,
/// ground-truth ink facing white turns red, rendered ink facing white turns blue.
/// Anything else keeps its value.
pub fn show_diff(gt_col: &[Pixel], rendered_col: &[Pixel]) -> Result<(Vec<Pixel>, Vec<Pixel>), DiffError> {
    if gt_col.len() != rendered_col.len() {
        return Err(DiffError::HeightMismatch {
            gt: gt_col.len(),
            rendered: rendered_col.len(),
        });
    }
    let pairs = gt_col.iter().zip(rendered_col);
    let mut gt_out = Vec::with_capacity(gt_col.len());
    let mut r_out = Vec::with_capacity(rendered_col.len());
    for (&g, &r) in pairs {
        let differ = g != r;
        gt_out.push(if g.is_white() {
            LIGHT_RED
        } else if differ && r.is_white() {
            RED
        } else {
            g
        });
        r_out.push(if r.is_white() {
            LIGHT_BLUE
        } else if differ && g.is_white() {
            BLUE
        } else {
            r
        });
    }
    Ok((gt_out, r_out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Column,
    Row,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaView {
    pub gt_annotated: PixelGrid,
    pub rendered_annotated: PixelGrid,
    pub orientation: Orientation,
    pub distance: usize,
    /// `distance` over the ground truth's length along the compared axis.
    pub edit_percentage: f64,
    pub script: EditScript,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditSummary {
    pub distance: usize,
    pub edit_percentage: f64,
    pub orientation: Orientation,
    pub op_counts: OpTally,
    pub op_runs: OpTally,
}

impl DeltaView {
    pub fn summary(&self) -> EditSummary {
        EditSummary {
            distance: self.distance,
            edit_percentage: self.edit_percentage,
            orientation: self.orientation,
            op_counts: self.script.counts(),
            op_runs: self.script.runs(),
        }
    }
}

/// Column-wise delta view.
pub fn image_edit(gt: &PixelGrid, rendered: &PixelGrid) -> Result<DeltaView, DiffError> {
    check_heights(gt, rendered)?;
    let script = wagner_fischer_star(gt, rendered)?;
    let blank = vec![Pixel::WHITE; gt.height()];
    let mut gt_out = gt.clone();
    let mut r_out = rendered.clone();
    for op in &script.ops {
        match *op {
            EditOp::Copy { .. } => {}
            EditOp::Delete { rendered: ri } => {
                let (_, r) = show_diff(&blank, &rendered.column(ri))?;
                r_out.set_column(ri, &r);
            }
            EditOp::Insert { gt: gi } => {
                let (g, _) = show_diff(&gt.column(gi), &blank)?;
                gt_out.set_column(gi, &g);
            }
            EditOp::Substitute { gt: gi, rendered: ri } => {
                let (g, r) = show_diff(&gt.column(gi), &rendered.column(ri))?;
                gt_out.set_column(gi, &g);
                r_out.set_column(ri, &r);
            }
        }
    }
    Ok(DeltaView {
        gt_annotated: gt_out,
        rendered_annotated: r_out,
        orientation: Orientation::Column,
        distance: script.distance,
        edit_percentage: script.distance as f64 / gt.width() as f64,
        script,
    })
}

/// Row-wise delta view: the column algorithm on transposed images, transposed back.
pub fn image_edit_rows(gt: &PixelGrid, rendered: &PixelGrid) -> Result<DeltaView, DiffError> {
    if gt.width() != rendered.width() {
        return Err(DiffError::WidthMismatch {
            gt: gt.width(),
            rendered: rendered.width(),
        });
    }
    let dv = image_edit(&gt.transpose(), &rendered.transpose())?;
    Ok(DeltaView {
        gt_annotated: dv.gt_annotated.transpose(),
        rendered_annotated: dv.rendered_annotated.transpose(),
        orientation: Orientation::Row,
        ..dv
    })
}

/// Computes both orientations and keeps the one with the smaller edit
/// percentage; ties go to the column view.
pub fn delta_view(gt: &PixelGrid, rendered: &PixelGrid) -> Result<DeltaView, DiffError> {
    let (cols, rows) = crate::par::join(|| image_edit(gt, rendered), || image_edit_rows(gt, rendered));
    let (cols, rows) = (cols?, rows?);
    Ok(if rows.edit_percentage < cols.edit_percentage {
        rows
    } else {
        cols
    })
}

/// Packs a delta view into one image: ground truth on top, a gray divider band,
/// then the rendered image. The narrower half is right-padded with white.
pub fn compose_model_view(dv: &DeltaView) -> PixelGrid {
    let top = &dv.gt_annotated;
    let bottom = &dv.rendered_annotated;
    let width = top.width().max(bottom.width());
    let height = top.height() + DIVIDER_ROWS + bottom.height();
    let mut out = PixelGrid::white(height, width).expect("non-empty halves");
    out.blit(top, 0, 0);
    for y in top.height()..top.height() + DIVIDER_ROWS {
        for x in 0..width {
            out.set(y, x, DIVIDER);
        }
    }
    out.blit(bottom, top.height() + DIVIDER_ROWS, 0);
    out
}
