//! Extended IoU (EIoU) for bounding-box regression.
//!
//! * [`geometry`]: boxes, standard/extended/generalized IoU, overlap classes
//!   and the square-root-area anchor encoding.
//! * [`losses`]: the convexification transform, Smooth-EIoU, Smooth-ℓ1 and
//!   the KL loss for IoU-score prediction.
//! * [`gradients`]: analytic derivatives and a finite-difference oracle.
//! * [`optimizer`]: plain and steady (U_e-scaled) gradient descent with
//!   full traces.
//! * [`nms`]: greedy NMS ranked by classification or predicted IoU.
//! * [`scenario`] and [`experiments`]: bundled convergence setups, sweeps
//!   and counterexample searches behind the `eiou` command line tool.

pub mod error;
pub mod experiments;
pub mod format;
pub mod geometry;
pub mod gradients;
pub mod losses;
pub mod nms;
pub mod optimizer;
pub mod sampling;
pub mod scenario;

pub use error::{Error, Result};
pub use geometry::{
    classify_overlap, decode, eiou, encode, extended_geometry, giou, siou, AnchorEncoding, BBox,
    ExtendedGeometry, OverlapClass,
};
pub use gradients::{
    finite_diff_grad, grad_ie, grad_loss, grad_smooth_eiou, grad_ue, gradcheck_report, Grad4,
    GradcheckReport,
};
pub use losses::{
    convexify, focal_weight, kl_iou_loss, smooth_eiou_loss, smooth_l1_loss, IoUScorePair,
    LossBase, LossSpec,
};
pub use nms::{evaluate_selection, nms, synth_clusters, ClusterSpec, Detection, ScoreSource};
pub use optimizer::{
    run, step_plain, step_sot, theorem1_check, OptimConfig, Trace, TraceRecord, UpdateMode,
};
