//! Permutation key material.
//!
//! Keys are either derived from a 32-byte [`MasterSeed`] (seeded mode) or
//! drawn from system entropy and stored explicitly (explicit mode). In both
//! cases every `(image, block, sub-block, purpose)` tuple gets its own
//! SHA-256 counter-mode keystream, and permutations are sampled from it with
//! a fixed Fisher–Yates / rejection-sampling procedure so that any
//! implementation following the same byte layout produces identical keys.
//!
//! Stream seed layout:
//!
//! ```text
//! SHA-256( "PPSS-v1" 0x00 master[32] 0x00 image_id 0x00 block:u32be sub:u32be purpose:u8 )
//! ```
//!
//! Keystream chunk `k` is `SHA-256(stream_seed ‖ k:u64be)`.

mod manifest;
mod permutation;

use std::borrow::Cow;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blockcipher::BlockGrid;

pub use manifest::{
    parse_manifest, serialize_manifest, ImageKeyManifest, KeyMaterial, ManifestError,
};
pub use permutation::{Permutation, PermutationError};

/// Version tag used for domain separation and in every manifest.
pub const VERSION_TAG: &str = "PPSS-v1";

/// Number of color channels handled by the cipher.
pub const CHANNELS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("image id must not contain NUL bytes")]
    NulInImageId,
    #[error("master seed must be exactly 32 bytes (got {0})")]
    SeedLength(usize),
    #[error("master seed file is neither 32 raw bytes nor 64 hex characters")]
    SeedFormat,
    #[error("failed to read seed file {path}: {source}")]
    SeedIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("entropy source unavailable: {0}")]
    Entropy(String),
}

/// 32-byte secret from which all per-image keys derive.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterSeed([u8; 32]);

impl MasterSeed {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, KeyError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| KeyError::SeedLength(bytes.len()))?;
        Ok(Self(arr))
    }

    pub fn from_hex(text: &str) -> Result<Self, KeyError> {
        let bytes = hex::decode(text.trim()).map_err(|_| KeyError::SeedFormat)?;
        Self::from_slice(&bytes)
    }

    /// Reads a seed file holding either 32 raw bytes or 64 hex digits.
    pub fn from_file(path: &Path) -> Result<Self, KeyError> {
        let raw = std::fs::read(path).map_err(|source| KeyError::SeedIo {
            path: path.display().to_string(),
            source,
        })?;
        if raw.len() == 32 {
            return Self::from_slice(&raw);
        }
        let text = std::str::from_utf8(&raw).map_err(|_| KeyError::SeedFormat)?;
        Self::from_hex(text)
    }

    pub fn generate(entropy: &mut dyn EntropySource) -> Result<Self, KeyError> {
        let mut bytes = [0u8; 32];
        entropy.fill(&mut bytes)?;
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Hex SHA-256 of the seed; safe to publish.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.0))
    }
}

impl fmt::Debug for MasterSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MasterSeed(fingerprint={})", &self.fingerprint()[..16])
    }
}

/// UTF-8 image identifier without embedded NUL bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageId(String);

impl ImageId {
    pub fn new(id: impl Into<String>) -> Result<Self, KeyError> {
        let id = id.into();
        if id.contains('\0') {
            return Err(KeyError::NulInImageId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What a keystream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Pixel shuffle for the given source channel (0, 1 or 2).
    Pixels(u8),
    Channels,
}

impl Purpose {
    pub fn byte(self) -> u8 {
        match self {
            Purpose::Pixels(c) => {
                assert!((c as usize) < CHANNELS, "channel out of range");
                c
            }
            Purpose::Channels => 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KeyDerivationContext<'a> {
    pub image_id: &'a ImageId,
    pub block_index: u32,
    pub subblock_index: u32,
    pub purpose: Purpose,
}

pub fn derive_stream_seed(master: &MasterSeed, ctx: &KeyDerivationContext<'_>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(VERSION_TAG.as_bytes());
    h.update([0u8]);
    h.update(master.0);
    h.update([0u8]);
    h.update(ctx.image_id.as_str().as_bytes());
    h.update([0u8]);
    h.update(ctx.block_index.to_be_bytes());
    h.update(ctx.subblock_index.to_be_bytes());
    h.update([ctx.purpose.byte()]);
    h.finalize().into()
}

/// Chunk `counter` of the keystream rooted at `stream_seed`.
pub fn stream_bytes(stream_seed: &[u8; 32], counter: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(stream_seed);
    h.update(counter.to_be_bytes());
    h.finalize().into()
}

/// Source of big-endian 32-bit words for permutation sampling.
pub trait WordSource {
    fn next_word(&mut self) -> u32;
}

/// Counter-mode SHA-256 keystream.
pub struct Keystream {
    seed: [u8; 32],
    counter: u64,
    chunk: [u8; 32],
    pos: usize,
}

impl Keystream {
    pub fn new(seed: [u8; 32]) -> Self {
        Self {
            seed,
            counter: 0,
            chunk: [0; 32],
            pos: 32,
        }
    }
}

impl WordSource for Keystream {
    fn next_word(&mut self) -> u32 {
        if self.pos == 32 {
            self.chunk = stream_bytes(&self.seed, self.counter);
            self.counter += 1;
            self.pos = 0;
        }
        let w = u32::from_be_bytes(self.chunk[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        w
    }
}

/// Fisher–Yates from the top index down, with 32-bit rejection sampling.
pub fn sample_permutation(words: &mut impl WordSource, n: usize) -> Permutation {
    assert!(n >= 1, "permutation length must be positive");
    assert!(n as u64 <= u32::MAX as u64, "permutation too long");
    let mut map: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let bound = i as u64 + 1;
        let limit = ((1u64 << 32) / bound) * bound;
        let j = loop {
            let w = words.next_word() as u64;
            if w < limit {
                break (w % bound) as usize;
            }
        };
        map.swap(i, j);
    }
    Permutation::from_vec_unchecked(map)
}

/// Key for one `M_s × M_s` sub-block: a pixel shuffle per source channel and
/// a channel reordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubBlockKey {
    pub pixel_perms: [Permutation; CHANNELS],
    pub channel_perm: Permutation,
}

impl SubBlockKey {
    pub fn new(
        pixel_perms: [Permutation; CHANNELS],
        channel_perm: Permutation,
    ) -> Result<Self, KeyShapeError> {
        let n = pixel_perms[0].len();
        if pixel_perms.iter().any(|p| p.len() != n) {
            return Err(KeyShapeError::UnequalPixelPerms);
        }
        if channel_perm.len() != CHANNELS {
            return Err(KeyShapeError::ChannelPermLength(channel_perm.len()));
        }
        Ok(Self {
            pixel_perms,
            channel_perm,
        })
    }

    pub fn identity(sub_block_size: usize) -> Self {
        let p = Permutation::identity(sub_block_size * sub_block_size);
        Self {
            pixel_perms: [p.clone(), p.clone(), p],
            channel_perm: Permutation::identity(CHANNELS),
        }
    }

    /// Number of pixels per channel this key acts on (`M_s²`).
    pub fn pixel_count(&self) -> usize {
        self.pixel_perms[0].len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyShapeError {
    #[error("pixel permutations differ in length")]
    UnequalPixelPerms,
    #[error("channel permutation must have length 3 (got {0})")]
    ChannelPermLength(usize),
}

pub fn derive_subblock_key(
    master: &MasterSeed,
    image_id: &ImageId,
    block_index: u32,
    subblock_index: u32,
    sub_block_size: usize,
) -> SubBlockKey {
    assert!(sub_block_size >= 1, "sub-block size must be positive");
    let stream = |purpose| {
        Keystream::new(derive_stream_seed(
            master,
            &KeyDerivationContext {
                image_id,
                block_index,
                subblock_index,
                purpose,
            },
        ))
    };
    let n = sub_block_size * sub_block_size;
    let pixel_perms = [0u8, 1, 2].map(|c| sample_permutation(&mut stream(Purpose::Pixels(c)), n));
    let channel_perm = sample_permutation(&mut stream(Purpose::Channels), CHANNELS);
    SubBlockKey {
        pixel_perms,
        channel_perm,
    }
}

/// Yields the key for each `(block_index, subblock_index)` of an image.
pub trait KeyProvider: Sync {
    fn sub_block_size(&self) -> usize;
    fn key(&self, block_index: u32, subblock_index: u32) -> Option<Cow<'_, SubBlockKey>>;
}

/// How widely one derived key is reused within an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyScope {
    /// Every sub-block gets its own key.
    #[default]
    SubBlock,
    /// The key of block 0, sub-block 0 is applied to every sub-block.
    Image,
}

impl KeyScope {
    pub fn is_default(&self) -> bool {
        *self == KeyScope::SubBlock
    }

    fn resolve(self, block_index: u32, subblock_index: u32) -> (u32, u32) {
        match self {
            KeyScope::SubBlock => (block_index, subblock_index),
            KeyScope::Image => (0, 0),
        }
    }
}

/// Keys derived on demand from a master seed and image id.
#[derive(Debug, Clone)]
pub struct SeededKeys {
    master: MasterSeed,
    image_id: ImageId,
    sub_block_size: usize,
    scope: KeyScope,
}

impl SeededKeys {
    pub fn new(master: MasterSeed, image_id: ImageId, sub_block_size: usize) -> Self {
        assert!(sub_block_size >= 1, "sub-block size must be positive");
        Self {
            master,
            image_id,
            sub_block_size,
            scope: KeyScope::SubBlock,
        }
    }

    pub fn with_scope(mut self, scope: KeyScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn image_id(&self) -> &ImageId {
        &self.image_id
    }

    pub fn scope(&self) -> KeyScope {
        self.scope
    }

    /// Materializes every key of `grid` into an explicit table.
    pub fn to_table(&self, grid: &BlockGrid) -> KeyTable {
        let keys = match self.scope {
            KeyScope::SubBlock => (0..grid.subblock_count())
                .into_par_iter()
                .map(|flat| {
                    let (b, s) = grid.split_flat_index(flat);
                    derive_subblock_key(&self.master, &self.image_id, b, s, self.sub_block_size)
                })
                .collect(),
            KeyScope::Image => {
                let key =
                    derive_subblock_key(&self.master, &self.image_id, 0, 0, self.sub_block_size);
                vec![key; grid.subblock_count()]
            }
        };
        KeyTable {
            subs_per_block: grid.subs_per_block(),
            sub_block_size: self.sub_block_size,
            keys,
        }
    }
}

impl KeyProvider for SeededKeys {
    fn sub_block_size(&self) -> usize {
        self.sub_block_size
    }

    fn key(&self, block_index: u32, subblock_index: u32) -> Option<Cow<'_, SubBlockKey>> {
        let (b, s) = self.scope.resolve(block_index, subblock_index);
        Some(Cow::Owned(derive_subblock_key(
            &self.master,
            &self.image_id,
            b,
            s,
            self.sub_block_size,
        )))
    }
}

/// Explicit per-sub-block key table, ordered by block index then sub-block
/// index (both row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyTable {
    subs_per_block: usize,
    sub_block_size: usize,
    keys: Vec<SubBlockKey>,
}

impl KeyTable {
    pub fn new(grid: &BlockGrid, keys: Vec<SubBlockKey>) -> Result<Self, KeyTableError> {
        if keys.len() != grid.subblock_count() {
            return Err(KeyTableError::Count {
                expected: grid.subblock_count(),
                found: keys.len(),
            });
        }
        let n = grid.sub_block_size() * grid.sub_block_size();
        if let Some(i) = keys.iter().position(|k| k.pixel_count() != n) {
            return Err(KeyTableError::PixelLength {
                index: i,
                expected: n,
                found: keys[i].pixel_count(),
            });
        }
        Ok(Self {
            subs_per_block: grid.subs_per_block(),
            sub_block_size: grid.sub_block_size(),
            keys,
        })
    }

    pub fn identity(grid: &BlockGrid) -> Self {
        Self {
            subs_per_block: grid.subs_per_block(),
            sub_block_size: grid.sub_block_size(),
            keys: vec![SubBlockKey::identity(grid.sub_block_size()); grid.subblock_count()],
        }
    }

    pub fn keys(&self) -> &[SubBlockKey] {
        &self.keys
    }

    pub fn into_keys(self) -> Vec<SubBlockKey> {
        self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl KeyProvider for KeyTable {
    fn sub_block_size(&self) -> usize {
        self.sub_block_size
    }

    fn key(&self, block_index: u32, subblock_index: u32) -> Option<Cow<'_, SubBlockKey>> {
        if subblock_index as usize >= self.subs_per_block {
            return None;
        }
        let flat = block_index as usize * self.subs_per_block + subblock_index as usize;
        self.keys.get(flat).map(Cow::Borrowed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyTableError {
    #[error("key table has {found} entries, grid needs {expected}")]
    Count { expected: usize, found: usize },
    #[error("key {index} has pixel permutations of length {found}, expected {expected}")]
    PixelLength {
        index: usize,
        expected: usize,
        found: usize,
    },
}

/// Cryptographic randomness for explicit-mode keys.
pub trait EntropySource {
    fn fill(&mut self, buf: &mut [u8]) -> Result<(), KeyError>;
}

/// The operating system's CSPRNG.
#[derive(Debug, Default, Clone, Copy)]
pub struct OsEntropy;

impl EntropySource for OsEntropy {
    fn fill(&mut self, buf: &mut [u8]) -> Result<(), KeyError> {
        getrandom::fill(buf).map_err(|e| KeyError::Entropy(e.to_string()))
    }
}

/// Draws a fresh, self-contained key table for one image. A 32-byte root is
/// pulled from `entropy`, expanded through the same per-sub-block streams as
/// seeded mode, and discarded.
pub fn generate_random_image_key(
    entropy: &mut dyn EntropySource,
    grid: &BlockGrid,
) -> Result<KeyTable, KeyError> {
    generate_scoped_image_key(entropy, grid, KeyScope::SubBlock)
}

pub fn generate_scoped_image_key(
    entropy: &mut dyn EntropySource,
    grid: &BlockGrid,
    scope: KeyScope,
) -> Result<KeyTable, KeyError> {
    let root = MasterSeed::generate(entropy)?;
    let anonymous = ImageId(String::new());
    Ok(SeededKeys::new(root, anonymous, grid.sub_block_size())
        .with_scope(scope)
        .to_table(grid))
}
