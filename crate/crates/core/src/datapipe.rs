//! Dataset-scale encryption: every image under an input tree gets its own
//! key, label maps are carried over untouched, and a manifest records what
//! was done.
//!
//! Output layout mirrors the input. Images are written as PNG with the same
//! relative path (extension replaced by `.png`); labels go under the same
//! labels subdirectory; `manifest.json` sits at the output root. Explicit
//! mode additionally writes one key manifest per image under `keys/`.
//!
//! Image hashes in the manifest are SHA-256 over the raw interleaved RGB
//! bytes (row-major), not over the PNG file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::blockcipher::{decrypt_image, encrypt_image, BlockGrid, GeometryError, RgbImage};
use crate::imageio::{self, ImageIoError};
use crate::keyschedule::{
    generate_scoped_image_key, parse_manifest, serialize_manifest, ImageId, ImageKeyManifest,
    KeyError, KeyMaterial, KeyProvider, KeyScope, MasterSeed, OsEntropy, SeededKeys, VERSION_TAG,
};
use crate::segmetrics::LabelMap;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const KEYS_DIR: &str = "keys";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "ppm"];

#[derive(Debug, Clone)]
pub enum DatasetMode {
    Seeded { seed: MasterSeed },
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnError {
    Skip,
    #[default]
    Abort,
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub block_size: usize,
    pub sub_block_size: usize,
    pub mode: DatasetMode,
    /// Target `(width, height)`; images are resized bilinearly, labels with
    /// nearest neighbour.
    pub resize: Option<(u32, u32)>,
    pub labels_subdir: Option<String>,
    pub on_error: OnError,
    pub key_scope: KeyScope,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("walking {path}: {source}")]
    Walk {
        path: String,
        #[source]
        source: walkdir::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("{path}: {source}")]
    Geometry {
        path: String,
        #[source]
        source: GeometryError,
    },
    #[error("{path}: {message}")]
    Processing { path: String, message: String },
    #[error("{first} and {second} would both be written to {output}")]
    OutputCollision {
        first: String,
        second: String,
        output: String,
    },
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("dataset manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported dataset manifest version {0:?}")]
    Version(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyRef {
    /// Re-derivable from the master seed and the record's image id.
    Derived { image_id: String },
    /// Explicit key manifest, relative to the dataset root.
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Output image, relative to the dataset root.
    pub path: String,
    /// Input image, relative to the input root.
    pub source: String,
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub plain_sha256: String,
    pub cipher_sha256: String,
    pub key_ref: KeyRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub block_size: usize,
    pub sub_block_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<[u32; 2]>,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_subdir: Option<String>,
    #[serde(default, skip_serializing_if = "KeyScope::is_default")]
    pub key_scope: KeyScope,
    pub records: Vec<ImageRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedFile>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let m: Self = serde_json::from_slice(&bytes)?;
        if m.version != VERSION_TAG {
            return Err(DatasetError::Version(m.version));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serialization cannot fail");
        v.push(b'\n');
        v
    }
}

fn rel_string(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files under `root` as sorted relative paths, skipping `exclude`.
fn list_images(root: &Path, exclude: Option<&Path>) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter();
    for entry in walker.filter_entry(|e| exclude.is_none_or(|x| e.path() != x)) {
        let entry = entry.map_err(|source| DatasetError::Walk {
            path: root.display().to_string(),
            source,
        })?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            out.push(entry.path().strip_prefix(root).unwrap().to_path_buf());
        }
    }
    out.sort();
    Ok(out)
}

fn resize_rgb(img: RgbImage, (w, h): (u32, u32)) -> RgbImage {
    if img.width() == w && img.height() == h {
        return img;
    }
    let buf = image::RgbImage::from_raw(img.width(), img.height(), img.into_bytes()).unwrap();
    let out = imageops::resize(&buf, w, h, FilterType::Triangle);
    RgbImage::from_raw(w, h, out.into_raw()).unwrap()
}

fn resize_labels(labels: LabelMap, (w, h): (u32, u32)) -> LabelMap {
    if labels.width() == w && labels.height() == h {
        return labels;
    }
    let buf =
        image::GrayImage::from_raw(labels.width(), labels.height(), labels.as_slice().to_vec())
            .unwrap();
    let out = imageops::resize(&buf, w, h, FilterType::Nearest);
    LabelMap::new(w, h, out.into_raw()).unwrap()
}

fn with_png_ext(rel: &Path) -> PathBuf {
    rel.with_extension("png")
}

enum ImageFailure {
    /// Honours `OnError`.
    Recoverable(String),
    Fatal(DatasetError),
}

fn process_image(
    in_dir: &Path,
    out_dir: &Path,
    rel: &Path,
    config: &DatasetConfig,
) -> Result<ImageRecord, ImageFailure> {
    let source = rel_string(rel);
    let img = imageio::load_rgb(&in_dir.join(rel))
        .map_err(|e| ImageFailure::Recoverable(e.to_string()))?;
    let img = match config.resize {
        Some(size) => resize_rgb(img, size),
        None => img,
    };
    let grid = BlockGrid::new(
        img.width(),
        img.height(),
        config.block_size,
        config.sub_block_size,
    )
    .map_err(|e| {
        ImageFailure::Fatal(DatasetError::Geometry {
            path: source.clone(),
            source: e,
        })
    })?;
    let image_id =
        ImageId::new(source.clone()).map_err(|e| ImageFailure::Recoverable(e.to_string()))?;
    let out_rel = with_png_ext(rel);
    let out_rel_s = rel_string(&out_rel);
    let fatal = |message: String| {
        ImageFailure::Fatal(DatasetError::Processing {
            path: source.clone(),
            message,
        })
    };

    let (cipher, key_ref) = match &config.mode {
        DatasetMode::Seeded { seed } => {
            let keys = SeededKeys::new(seed.clone(), image_id.clone(), config.sub_block_size)
                .with_scope(config.key_scope);
            let cipher = encrypt_image(&img, &keys, &grid).map_err(|e| fatal(e.to_string()))?;
            (
                cipher,
                KeyRef::Derived {
                    image_id: source.clone(),
                },
            )
        }
        DatasetMode::Explicit => {
            let table = generate_scoped_image_key(&mut OsEntropy, &grid, config.key_scope)
                .map_err(|e| fatal(e.to_string()))?;
            let cipher = encrypt_image(&img, &table, &grid).map_err(|e| fatal(e.to_string()))?;
            let key_rel = format!("{KEYS_DIR}/{out_rel_s}.json");
            let manifest = ImageKeyManifest::explicit(image_id.clone(), grid, table);
            let key_path = out_dir.join(&key_rel);
            imageio::write_atomic(&key_path, &serialize_manifest(&manifest))
                .map_err(|e| fatal(format!("{}: {e}", key_path.display())))?;
            (cipher, KeyRef::File { path: key_rel })
        }
    };

    imageio::save_rgb_png(&out_dir.join(&out_rel), &cipher)
        .map_err(|e| ImageFailure::Fatal(e.into()))?;

    Ok(ImageRecord {
        path: out_rel_s,
        source,
        image_id: image_id.as_str().to_string(),
        width: img.width(),
        height: img.height(),
        plain_sha256: imageio::sha256_hex(img.as_bytes()),
        cipher_sha256: imageio::sha256_hex(cipher.as_bytes()),
        key_ref,
        label: None,
    })
}

/// Copies (and optionally resizes) every label map. Returns output paths
/// relative to the dataset root, keyed by the label's path relative to the
/// labels directory with a `.png` extension.
fn copy_labels(
    labels_in: &Path,
    labels_out: &Path,
    subdir: &str,
    config: &DatasetConfig,
    skipped: &mut Vec<SkippedFile>,
) -> Result<BTreeMap<String, String>, DatasetError> {
    let mut written = BTreeMap::new();
    if !labels_in.is_dir() {
        return Ok(written);
    }
    let rels = list_images(labels_in, None)?;
    let results: Vec<(PathBuf, Result<PathBuf, String>)> = rels
        .par_iter()
        .map(|rel| {
            let src = labels_in.join(rel);
            let res = match config.resize {
                None => {
                    let dst = rel.clone();
                    std::fs::read(&src)
                        .and_then(|b| imageio::write_atomic(&labels_out.join(&dst), &b))
                        .map(|_| dst)
                        .map_err(|e| format!("{}: {e}", src.display()))
                }
                Some(size) => {
                    let dst = with_png_ext(rel);
                    imageio::load_labels(&src)
                        .map(|l| resize_labels(l, size))
                        .and_then(|l| imageio::save_labels_png(&labels_out.join(&dst), &l))
                        .map(|_| dst)
                        .map_err(|e| e.to_string())
                }
            };
            (rel.clone(), res)
        })
        .collect();
    for (rel, res) in results {
        match res {
            Ok(dst) => {
                written.insert(
                    rel_string(&with_png_ext(&rel)),
                    format!("{subdir}/{}", rel_string(&dst)),
                );
            }
            Err(error) => match config.on_error {
                OnError::Skip => skipped.push(SkippedFile {
                    path: format!("{subdir}/{}", rel_string(&rel)),
                    error,
                }),
                OnError::Abort => {
                    return Err(DatasetError::Processing {
                        path: rel_string(&rel),
                        message: error,
                    })
                }
            },
        }
    }
    Ok(written)
}

/// Encrypts every image under `in_dir` into `out_dir` and writes the dataset
/// manifest. Seeded runs are reproducible byte for byte.
pub fn encrypt_dataset(
    in_dir: &Path,
    out_dir: &Path,
    config: &DatasetConfig,
) -> Result<DatasetManifest, DatasetError> {
    BlockGrid::new(
        config.block_size as u32,
        config.block_size as u32,
        config.block_size,
        config.sub_block_size,
    )
    .map_err(|source| DatasetError::Geometry {
        path: "configuration".into(),
        source,
    })?;
    let labels_in = config.labels_subdir.as_ref().map(|s| in_dir.join(s));
    let images = list_images(in_dir, labels_in.as_deref())?;

    let mut outputs: BTreeMap<PathBuf, &PathBuf> = BTreeMap::new();
    for rel in &images {
        if let Some(first) = outputs.insert(with_png_ext(rel), rel) {
            return Err(DatasetError::OutputCollision {
                first: rel_string(first),
                second: rel_string(rel),
                output: rel_string(&with_png_ext(rel)),
            });
        }
    }

    std::fs::create_dir_all(out_dir).map_err(|source| DatasetError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let results: Vec<(PathBuf, Result<ImageRecord, ImageFailure>)> = images
        .par_iter()
        .map(|rel| (rel.clone(), process_image(in_dir, out_dir, rel, config)))
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (rel, res) in results {
        match res {
            Ok(r) => records.push(r),
            Err(ImageFailure::Fatal(e)) => return Err(e),
            Err(ImageFailure::Recoverable(error)) => match config.on_error {
                OnError::Skip => skipped.push(SkippedFile {
                    path: rel_string(&rel),
                    error,
                }),
                OnError::Abort => {
                    return Err(DatasetError::Processing {
                        path: rel_string(&rel),
                        message: error,
                    })
                }
            },
        }
    }

    if let (Some(subdir), Some(labels_in)) = (&config.labels_subdir, &labels_in) {
        let written = copy_labels(
            labels_in,
            &out_dir.join(subdir),
            subdir,
            config,
            &mut skipped,
        )?;
        for r in &mut records {
            r.label = written.get(&r.path).cloned();
        }
    }

    records.sort_by(|a, b| a.path.cmp(&b.path));
    debug_assert_eq!(
        records
            .iter()
            .map(|r| &r.image_id)
            .collect::<BTreeSet<_>>()
            .len(),
        records.len()
    );
    let (mode, seed_fingerprint) = match &config.mode {
        DatasetMode::Seeded { seed } => ("seeded", Some(seed.fingerprint())),
        DatasetMode::Explicit => ("explicit", None),
    };
    let manifest = DatasetManifest {
        version: VERSION_TAG.to_string(),
        block_size: config.block_size,
        sub_block_size: config.sub_block_size,
        resize: config.resize.map(|(w, h)| [w, h]),
        mode: mode.to_string(),
        seed_fingerprint,
        labels_subdir: config.labels_subdir.clone(),
        key_scope: config.key_scope,
        records,
        skipped,
    };
    let path = out_dir.join(MANIFEST_FILE);
    imageio::write_atomic(&path, &manifest.to_json()).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordCheck {
    pub path: String,
    /// Ciphertext on disk matches the recorded hash.
    pub cipher_ok: bool,
    /// Decrypted ciphertext matches the recorded plaintext hash; `None` when
    /// no key material was available.
    pub decrypt_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl RecordCheck {
    pub fn passed(&self) -> bool {
        self.cipher_ok && self.decrypt_ok != Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    /// Whether the supplied seed matches the manifest fingerprint.
    pub seed_fingerprint_ok: Option<bool>,
    pub records: Vec<RecordCheck>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &RecordCheck> {
        self.records.iter().filter(|r| !r.passed())
    }

    pub fn all_passed(&self) -> bool {
        self.seed_fingerprint_ok != Some(false) && self.failures().next().is_none()
    }
}

fn check_record(
    out_dir: &Path,
    manifest: &DatasetManifest,
    record: &ImageRecord,
    seed: Option<&MasterSeed>,
) -> RecordCheck {
    let mut check = RecordCheck {
        path: record.path.clone(),
        cipher_ok: false,
        decrypt_ok: None,
        detail: None,
    };
    let cipher = match imageio::load_rgb(&out_dir.join(&record.path)) {
        Ok(c) => c,
        Err(e) => {
            check.detail = Some(e.to_string());
            return check;
        }
    };
    check.cipher_ok = imageio::sha256_hex(cipher.as_bytes()) == record.cipher_sha256;
    if !check.cipher_ok {
        check.detail = Some("ciphertext hash mismatch".into());
    }

    let grid = match BlockGrid::new(
        cipher.width(),
        cipher.height(),
        manifest.block_size,
        manifest.sub_block_size,
    ) {
        Ok(g) => g,
        Err(e) => {
            check.decrypt_ok = Some(false);
            check.detail = Some(e.to_string());
            return check;
        }
    };

    let provider: Box<dyn KeyProvider> = match (&record.key_ref, seed) {
        (KeyRef::Derived { image_id }, Some(seed)) => match ImageId::new(image_id.clone()) {
            Ok(id) => Box::new(
                SeededKeys::new(seed.clone(), id, manifest.sub_block_size)
                    .with_scope(manifest.key_scope),
            ),
            Err(e) => {
                check.decrypt_ok = Some(false);
                check.detail = Some(e.to_string());
                return check;
            }
        },
        (KeyRef::Derived { .. }, None) => return check,
        (KeyRef::File { path }, _) => {
            let parsed = std::fs::read(out_dir.join(path))
                .map_err(|e| e.to_string())
                .and_then(|b| parse_manifest(&b).map_err(|e| e.to_string()));
            match parsed {
                Ok(ImageKeyManifest {
                    material: KeyMaterial::Explicit(table),
                    grid: key_grid,
                    ..
                }) if key_grid == grid => Box::new(table),
                Ok(_) => {
                    check.decrypt_ok = Some(false);
                    check.detail = Some(format!("{path}: key manifest does not fit the image"));
                    return check;
                }
                Err(e) => {
                    check.decrypt_ok = Some(false);
                    check.detail = Some(format!("{path}: {e}"));
                    return check;
                }
            }
        }
    };
    let ok = decrypt_image(&cipher, provider.as_ref(), &grid)
        .map(|plain| imageio::sha256_hex(plain.as_bytes()) == record.plain_sha256)
        .unwrap_or(false);
    check.decrypt_ok = Some(ok);
    if !ok && check.detail.is_none() {
        check.detail = Some("decrypted plaintext hash mismatch".into());
    }
    check
}

/// Re-hashes every output image and, where key material is available,
/// decrypts it and checks the plaintext hash. Never fails; every finding is
/// in the report.
pub fn verify_dataset(
    out_dir: &Path,
    manifest: &DatasetManifest,
    seed: Option<&MasterSeed>,
) -> VerifyReport {
    let seed_fingerprint_ok = match (seed, &manifest.seed_fingerprint) {
        (Some(s), Some(fp)) => Some(&s.fingerprint() == fp),
        _ => None,
    };
    let records = manifest
        .records
        .par_iter()
        .map(|r| check_record(out_dir, manifest, r, seed))
        .collect();
    VerifyReport {
        seed_fingerprint_ok,
        records,
    }
}
