//! Feature quantization and oblivious regression trees.

mod binarize;
mod ensemble;
mod oblivious;

pub use binarize::{compute_borders, BinnedMatrix, FeatureBinarization, DEFAULT_MAX_BORDERS};
pub use ensemble::{Ensemble, Stage};
pub use oblivious::{fit_oblivious_tree, ObliviousTree, Split};
