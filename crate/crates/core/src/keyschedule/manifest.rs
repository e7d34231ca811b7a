//! Per-image key manifest (JSON).
//!
//! ```json
//! {"version":"PPSS-v1","image_id":"a.png","width":32,"height":32,
//!  "block_size":16,"sub_block_size":4,"mode":"seeded","seed_fingerprint":"…"}
//! ```
//!
//! Explicit mode replaces the fingerprint with `"keys"`: one
//! `[pixel_perm_0, pixel_perm_1, pixel_perm_2, channel_perm]` entry per
//! sub-block, in block-major then sub-block-major (both row-major) order.

use serde::{Deserialize, Serialize};

use super::{
    ImageId, KeyScope, KeyTable, MasterSeed, Permutation, PermutationError, SubBlockKey,
    VERSION_TAG,
};
use crate::blockcipher::{BlockGrid, GeometryError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyMaterial {
    Seeded {
        seed_fingerprint: String,
        /// Present only when the seed was explicitly exported.
        master_seed: Option<MasterSeed>,
        key_scope: KeyScope,
    },
    Explicit(KeyTable),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageKeyManifest {
    pub image_id: ImageId,
    pub grid: BlockGrid,
    pub material: KeyMaterial,
}

impl ImageKeyManifest {
    pub fn seeded(
        image_id: ImageId,
        grid: BlockGrid,
        seed: &MasterSeed,
        export_seed: bool,
    ) -> Self {
        Self {
            image_id,
            grid,
            material: KeyMaterial::Seeded {
                seed_fingerprint: seed.fingerprint(),
                master_seed: export_seed.then(|| seed.clone()),
                key_scope: KeyScope::SubBlock,
            },
        }
    }

    /// Sets the key scope of a seeded manifest; explicit tables carry their
    /// scope in the keys themselves.
    pub fn with_scope(mut self, scope: KeyScope) -> Self {
        if let KeyMaterial::Seeded { key_scope, .. } = &mut self.material {
            *key_scope = scope;
        }
        self
    }

    pub fn explicit(image_id: ImageId, grid: BlockGrid, keys: KeyTable) -> Self {
        Self {
            image_id,
            grid,
            material: KeyMaterial::Explicit(keys),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown manifest version {0:?}")]
    UnknownVersion(String),
    #[error("unknown key mode {0:?}")]
    UnknownMode(String),
    #[error("manifest field {0:?} is missing")]
    MissingField(&'static str),
    #[error("invalid image id in manifest: {0}")]
    ImageId(String),
    #[error("manifest geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("manifest holds {found} sub-block keys, geometry needs {expected}")]
    KeyCount { expected: usize, found: usize },
    #[error("key {index}: expected 4 permutation arrays, found {found}")]
    KeyArity { index: usize, found: usize },
    #[error("key {index}, array {array}: length {found}, expected {expected}")]
    KeyLength {
        index: usize,
        array: usize,
        expected: usize,
        found: usize,
    },
    #[error("key {index}, array {array}: {source}")]
    Permutation {
        index: usize,
        array: usize,
        #[source]
        source: PermutationError,
    },
    #[error("exported master seed is invalid: {0}")]
    Seed(String),
    #[error("exported master seed does not match its fingerprint")]
    FingerprintMismatch,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    version: String,
    image_id: String,
    width: u32,
    height: u32,
    block_size: u32,
    sub_block_size: u32,
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    master_seed: Option<String>,
    #[serde(default, skip_serializing_if = "KeyScope::is_default")]
    key_scope: KeyScope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keys: Option<Vec<Vec<Vec<u32>>>>,
}

pub fn serialize_manifest(manifest: &ImageKeyManifest) -> Vec<u8> {
    let g = &manifest.grid;
    let mut wire = Wire {
        version: VERSION_TAG.to_string(),
        image_id: manifest.image_id.as_str().to_string(),
        width: g.width(),
        height: g.height(),
        block_size: g.block_size() as u32,
        sub_block_size: g.sub_block_size() as u32,
        mode: String::new(),
        seed_fingerprint: None,
        master_seed: None,
        key_scope: KeyScope::SubBlock,
        keys: None,
    };
    match &manifest.material {
        KeyMaterial::Seeded {
            seed_fingerprint,
            master_seed,
            key_scope,
        } => {
            wire.mode = "seeded".into();
            wire.key_scope = *key_scope;
            wire.seed_fingerprint = Some(seed_fingerprint.clone());
            wire.master_seed = master_seed.as_ref().map(MasterSeed::to_hex);
        }
        KeyMaterial::Explicit(table) => {
            wire.mode = "explicit".into();
            wire.keys = Some(
                table
                    .keys()
                    .iter()
                    .map(|k| {
                        k.pixel_perms
                            .iter()
                            .chain([&k.channel_perm])
                            .map(|p| p.as_slice().to_vec())
                            .collect()
                    })
                    .collect(),
            );
        }
    }
    let mut out = serde_json::to_vec(&wire).expect("manifest serialization cannot fail");
    out.push(b'\n');
    out
}

pub fn parse_manifest(bytes: &[u8]) -> Result<ImageKeyManifest, ManifestError> {
    let wire: Wire = serde_json::from_slice(bytes)?;
    if wire.version != VERSION_TAG {
        return Err(ManifestError::UnknownVersion(wire.version));
    }
    let image_id =
        ImageId::new(wire.image_id).map_err(|e| ManifestError::ImageId(e.to_string()))?;
    let grid = BlockGrid::new(
        wire.width,
        wire.height,
        wire.block_size as usize,
        wire.sub_block_size as usize,
    )?;
    let material = match wire.mode.as_str() {
        "seeded" => {
            let seed_fingerprint = wire
                .seed_fingerprint
                .ok_or(ManifestError::MissingField("seed_fingerprint"))?;
            let master_seed = match wire.master_seed {
                Some(h) => {
                    let seed =
                        MasterSeed::from_hex(&h).map_err(|e| ManifestError::Seed(e.to_string()))?;
                    if seed.fingerprint() != seed_fingerprint {
                        return Err(ManifestError::FingerprintMismatch);
                    }
                    Some(seed)
                }
                None => None,
            };
            KeyMaterial::Seeded {
                seed_fingerprint,
                master_seed,
                key_scope: wire.key_scope,
            }
        }
        "explicit" => {
            let raw = wire.keys.ok_or(ManifestError::MissingField("keys"))?;
            KeyMaterial::Explicit(parse_keys(raw, &grid)?)
        }
        other => return Err(ManifestError::UnknownMode(other.to_string())),
    };
    Ok(ImageKeyManifest {
        image_id,
        grid,
        material,
    })
}

fn parse_keys(raw: Vec<Vec<Vec<u32>>>, grid: &BlockGrid) -> Result<KeyTable, ManifestError> {
    if raw.len() != grid.subblock_count() {
        return Err(ManifestError::KeyCount {
            expected: grid.subblock_count(),
            found: raw.len(),
        });
    }
    let n = grid.sub_block_size() * grid.sub_block_size();
    let mut keys = Vec::with_capacity(raw.len());
    for (index, arrays) in raw.into_iter().enumerate() {
        if arrays.len() != 4 {
            return Err(ManifestError::KeyArity {
                index,
                found: arrays.len(),
            });
        }
        let mut perms = Vec::with_capacity(4);
        for (array, map) in arrays.into_iter().enumerate() {
            let expected = if array < 3 { n } else { 3 };
            if map.len() != expected {
                return Err(ManifestError::KeyLength {
                    index,
                    array,
                    expected,
                    found: map.len(),
                });
            }
            perms.push(
                Permutation::new(map).map_err(|source| ManifestError::Permutation {
                    index,
                    array,
                    source,
                })?,
            );
        }
        let channel_perm = perms.pop().unwrap();
        let pixel_perms: [Permutation; 3] = perms.try_into().unwrap();
        keys.push(SubBlockKey {
            pixel_perms,
            channel_perm,
        });
    }
    Ok(KeyTable::new(grid, keys).expect("shape checked above"))
}
