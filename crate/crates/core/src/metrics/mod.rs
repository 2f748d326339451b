//! Retrieval and distribution metrics over a learned joint embedding.

mod embedder;
mod retrieval;
mod stats;

pub use embedder::{
    motion_batch, text_batch, train_joint_embedder, EmbedderConfig, JointEmbedder, Separation,
};
pub use retrieval::{diversity, mm_dist, multimodality, r_precision, rank_of, POOL_SIZE};
pub use stats::{fid, GaussianStats, PSD_TOLERANCE};
