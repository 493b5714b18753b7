//! Iterative-refinement LaTeX image recognition: rasters, image diffs,
//! metrics, rendering, model backends and the refinement loop.

pub mod backend;
pub mod corpus;
pub mod imagediff;
pub mod metrics;
pub mod orchestrator;
pub mod par;
pub mod raster;
pub mod render;

pub use imagediff::{delta_view, edit_script, DeltaView, EditOp, EditScript, Orientation};
pub use metrics::{evaluate, EvalReport};
pub use raster::{NormalizationSpec, Pixel, PixelGrid};
pub use render::{RenderKind, Renderer};
