//! Grid types, MVOL file I/O and the deterministic PRNG.

mod grid;
pub mod mvol;
mod rng;

pub use grid::{BinaryMask3D, Dims, Spacing, Volume3D};
pub use mvol::{read_mask, read_mvol, read_volume, write_mvol, Dtype, Grid};
pub use rng::{stream_label, Rng};
