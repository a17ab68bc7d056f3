//! Corpus plumbing: tensor and image files, clip manifests, shot
//! segmentation and k-means sub-domain assignment.

mod kmeans;
mod manifest;
mod shots;
mod tensor;

pub use kmeans::{kmeans_assign, KMeansResult};
pub use manifest::{parse_embeddings, parse_manifest, read_embeddings, read_manifest, write_manifest, ClipManifest, EmbeddingRecord};
pub use shots::{detect_shots, frame_histogram, shot_ranges, HISTOGRAM_BINS};
pub use tensor::{
    decode_tensor, encode_tensor, is_prediction_dir, load_depth, load_png, read_prediction, read_tensor, save_depth, save_png, write_prediction, write_tensor,
    Tensor,
};
