//! Synthetic phantoms, augmentation, and dataset persistence.

pub mod augment;
pub mod dataset;
pub mod phantom;
pub mod pnm;

pub use augment::{cyclic_shift, flip_horizontal, ShiftSets, Shifted};
pub use dataset::{assign_splits, Dataset, DatasetRecord, Provenance, Split};
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
