//! MNIST loading, source splits and the source correlation analysis.

mod correlation;
mod mnist;
mod split;

pub use correlation::{off_diagonal_variance, pearson, pearson_matrix, source_means};
pub use mnist::{
    default_data_dir, load_mnist, mnist_checksums, parse_idx_images, parse_idx_labels, sha256_hex,
    DataSplit, Dataset, DATA_DIR_ENV,
};
pub use split::{
    make_split, split_by_label, split_random, SourceSplit, SplitStrategy, NUM_CLASSES,
};
