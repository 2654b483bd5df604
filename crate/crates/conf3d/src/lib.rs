//! Evaluation and learned-confidence rescoring for KITTI-format monocular
//! 3D object detection.
//!
//! The toolkit covers five jobs that usually end up scattered across ad-hoc
//! scripts:
//!
//! 1. **Metrics.** Official-style 3D and bird's-eye-view average precision
//!    (40-point and legacy 11-point interpolation) over KITTI label and
//!    detection files, with difficulty buckets and ignore handling
//!    ([`detection_eval`], [`box_geometry`], [`kitti_io`]).
//! 2. **3D confidence.** Training targets, stochastic pair sampling, and a
//!    small from-scratch MLP scorer that learns how trustworthy a 3D box is
//!    from per-detection features, then folds that confidence back into the
//!    detection score ([`confidence`]).
//! 3. **Split hygiene.** Geographic overlap audits and a distance-based
//!    filter that builds training splits guaranteed to stay away from
//!    validation scenes ([`geo_split`]).
//! 4. **Error attribution.** Oracle substitution of ground-truth components
//!    (depth, ground position, shape, heading) into predicted boxes to rank
//!    which error source costs the most AP ([`oracle_analysis`]).
//! 5. **Synthetic benchmarks.** A deterministic corpus generator with
//!    controllable per-component noise so every pipeline stage can be tested
//!    end to end without real data ([`synth_bench`]).
//!
//! The `conf3d` binary exposes each stage as a subcommand; the `examples/`
//! directory holds one runnable walkthrough per capability. Every entry
//! point takes an explicit seed and produces byte-identical output on rerun.

pub mod box_geometry;
pub mod cli;
pub mod confidence;
pub mod detection_eval;
pub mod error;
pub mod geo_split;
pub mod kitti_io;
pub mod oracle_analysis;
pub mod synth_bench;

pub use error::{Error, Result};
