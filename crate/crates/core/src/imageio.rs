//! PNG loading/saving and atomic file writes.

use std::io::{self, Cursor, Write};
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use sha2::{Digest, Sha256};

use crate::blockcipher::RgbImage;
use crate::segmetrics::LabelMap;

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: expected 8-bit {expected}, found {found:?}")]
    Color {
        path: String,
        expected: &'static str,
        found: image::ColorType,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ImageIoError + '_ {
    move |source| ImageIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn decode(path: &Path) -> Result<DynamicImage, ImageIoError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    image::load_from_memory(&bytes).map_err(|source| ImageIoError::Decode {
        path: path.display().to_string(),
        source,
    })
}

/// Loads an 8-bit RGB image. Alpha, grayscale and 16-bit inputs are
/// rejected rather than converted.
pub fn load_rgb(path: &Path) -> Result<RgbImage, ImageIoError> {
    match decode(path)? {
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            Ok(RgbImage::from_raw(w, h, buf.into_raw())
                .expect("decoder returned consistent buffer"))
        }
        other => Err(ImageIoError::Color {
            path: path.display().to_string(),
            expected: "RGB",
            found: other.color(),
        }),
    }
}

pub fn encode_rgb_png(img: &RgbImage) -> Vec<u8> {
    let buf = image::RgbImage::from_raw(img.width(), img.height(), img.as_bytes().to_vec())
        .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<(), ImageIoError> {
    write_atomic(path, &encode_rgb_png(img)).map_err(io_err(path))
}

/// Loads a single-channel 8-bit label map.
pub fn load_labels(path: &Path) -> Result<LabelMap, ImageIoError> {
    match decode(path)? {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok(LabelMap::new(w, h, buf.into_raw()).expect("decoder returned consistent buffer"))
        }
        other => Err(ImageIoError::Color {
            path: path.display().to_string(),
            expected: "grayscale label map",
            found: other.color(),
        }),
    }
}

pub fn encode_labels_png(labels: &LabelMap) -> Vec<u8> {
    let buf =
        image::GrayImage::from_raw(labels.width(), labels.height(), labels.as_slice().to_vec())
            .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub fn save_labels_png(path: &Path, labels: &LabelMap) -> Result<(), ImageIoError> {
    write_atomic(path, &encode_labels_png(labels)).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
