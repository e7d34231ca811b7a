//! Keyed perceptual image encryption for privacy-preserving semantic
//! segmentation.
//!
//! Every image is encrypted with its own key: pixels are shuffled inside
//! each `M_s × M_s` sub-block of every `M × M` block (one permutation per
//! color channel), then the channel order of the sub-block is permuted.
//! Keys are either derived from a master seed and the image id, so nobody
//! has to store or exchange them, or drawn fresh from system entropy.
//!
//! * [`keyschedule`]: key derivation, permutation sampling, key manifests
//! * [`blockcipher`]: the block/sub-block transform and its inverse
//! * [`datapipe`]: dataset-scale encryption and verification
//! * [`segmetrics`]: aAcc / mIoU / mAcc from a confusion matrix
//! * [`privanalysis`]: sum leak, adjacent correlation, keyspace, known-plaintext attack

pub mod blockcipher;
pub mod datapipe;
pub mod imageio;
pub mod keyschedule;
pub mod privanalysis;
pub mod segmetrics;

pub use blockcipher::{
    decrypt_image, encrypt_image, partition_geometry, BlockGrid, CipherError, GeometryError,
    RgbImage,
};
pub use keyschedule::{
    derive_subblock_key, ImageId, KeyProvider, KeyScope, KeyTable, MasterSeed, Permutation,
    SeededKeys, SubBlockKey,
};
