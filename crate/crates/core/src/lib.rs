//! Region-of-interest prediction and alias-free field-of-view prescription
//! for MRI localizer stacks.

pub mod alias;
pub mod data;
pub mod error;
pub mod fov;
pub mod geometry;
pub mod masking;
pub mod models;
pub mod nn;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{boundary_error, box_union, iou, BBox, Interval, LocalizerStack, PhaseAxis};
