//! Synthetic datasets, dataset files, and checkpoint persistence.

mod checkpoint;
mod dataset;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, load_checkpoint_bytes, save_checkpoint};
pub use dataset::{load_csv_dataset, make_mixture, save_csv_dataset, Dataset, Split};
