//! CIFAR ingestion, preprocessing, batching and a synthetic dataset.

mod batch;
mod cifar;
mod preprocess;
mod synth;

pub use batch::{batch_iter, batch_order, make_batch, Batch, BatchIter};
pub use cifar::{
    load_cifar_dir, parse_cifar100_bin, parse_cifar10_bin, parse_cifar_bytes, serialize_cifar, CifarKind, ImageRecord,
    CIFAR100_RECORD, CIFAR10_RECORD, IMAGE_SIDE, PIXEL_BYTES,
};
pub use preprocess::{preprocess, resize_bilinear, AugmentConfig, CIFAR_MEAN, CIFAR_STD};
pub use synth::{class_color, synth_dataset, synth_dataset_with_noise, SYNTH_NOISE};
