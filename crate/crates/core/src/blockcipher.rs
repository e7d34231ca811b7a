//! Block / sub-block pixel shuffling with channel permutation.
//!
//! An image is cut into `M × M` blocks (aligned with the ViT patch grid) and
//! each block into `M_s × M_s` sub-blocks. Within a sub-block every source
//! channel is shuffled by its own pixel permutation, then the three channel
//! planes are reordered. Sub-blocks never move.
//!
//! For output channel `c` and row-major pixel slot `i`:
//!
//! ```text
//! out[c][i] = in[channel_perm[c]][pixel_perms[channel_perm[c]][i]]
//! ```

use rayon::prelude::*;

use crate::keyschedule::{KeyProvider, SubBlockKey, CHANNELS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeometryError {
    #[error("{name} must be positive")]
    Zero { name: &'static str },
    #[error("width {width} is not divisible by block size {block_size}")]
    Width { width: u32, block_size: usize },
    #[error("height {height} is not divisible by block size {block_size}")]
    Height { height: u32, block_size: usize },
    #[error("block size {block_size} is not divisible by sub-block size {sub_block_size}")]
    SubBlock {
        block_size: usize,
        sub_block_size: usize,
    },
    #[error("grid has too many sub-blocks to index with 32 bits")]
    TooLarge,
}

#[derive(Debug, thiserror::Error)]
pub enum CipherError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("image is {image_w}x{image_h} but the grid expects {grid_w}x{grid_h}")]
    ImageSize {
        image_w: u32,
        image_h: u32,
        grid_w: u32,
        grid_h: u32,
    },
    #[error("key provider is for sub-block size {provided}, grid uses {expected}")]
    KeySize { expected: usize, provided: usize },
    #[error("no key for block {block}, sub-block {sub}")]
    MissingKey { block: u32, sub: u32 },
    #[error("tile is {tile}x{tile} but the key acts on {key_pixels} pixels per channel")]
    TileMismatch { tile: usize, key_pixels: usize },
}

/// Validated partition of a `width × height` image into blocks and sub-blocks.
///
/// Block indices are row-major over the block grid; sub-block indices are
/// row-major within their block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGrid {
    width: u32,
    height: u32,
    block_size: usize,
    sub_block_size: usize,
}

impl BlockGrid {
    pub fn new(
        width: u32,
        height: u32,
        block_size: usize,
        sub_block_size: usize,
    ) -> Result<Self, GeometryError> {
        for (name, v) in [
            ("width", width as usize),
            ("height", height as usize),
            ("block size", block_size),
            ("sub-block size", sub_block_size),
        ] {
            if v == 0 {
                return Err(GeometryError::Zero { name });
            }
        }
        if !(width as usize).is_multiple_of(block_size) {
            return Err(GeometryError::Width { width, block_size });
        }
        if !(height as usize).is_multiple_of(block_size) {
            return Err(GeometryError::Height { height, block_size });
        }
        if !block_size.is_multiple_of(sub_block_size) {
            return Err(GeometryError::SubBlock {
                block_size,
                sub_block_size,
            });
        }
        let grid = Self {
            width,
            height,
            block_size,
            sub_block_size,
        };
        if u32::try_from(grid.block_count()).is_err()
            || u32::try_from(grid.subs_per_block()).is_err()
        {
            return Err(GeometryError::TooLarge);
        }
        Ok(grid)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn sub_block_size(&self) -> usize {
        self.sub_block_size
    }

    pub fn blocks_x(&self) -> usize {
        self.width as usize / self.block_size
    }

    pub fn blocks_y(&self) -> usize {
        self.height as usize / self.block_size
    }

    pub fn block_count(&self) -> usize {
        self.blocks_x() * self.blocks_y()
    }

    pub fn subs_per_side(&self) -> usize {
        self.block_size / self.sub_block_size
    }

    pub fn subs_per_block(&self) -> usize {
        self.subs_per_side() * self.subs_per_side()
    }

    pub fn subblock_count(&self) -> usize {
        self.block_count() * self.subs_per_block()
    }

    /// Inverse of `block * subs_per_block + sub`.
    pub fn split_flat_index(&self, flat: usize) -> (u32, u32) {
        let spb = self.subs_per_block();
        ((flat / spb) as u32, (flat % spb) as u32)
    }

    /// Top-left pixel of a sub-block.
    pub fn subblock_origin(&self, block: u32, sub: u32) -> (usize, usize) {
        let (b, s) = (block as usize, sub as usize);
        let side = self.subs_per_side();
        let x = (b % self.blocks_x()) * self.block_size + (s % side) * self.sub_block_size;
        let y = (b / self.blocks_x()) * self.block_size + (s / side) * self.sub_block_size;
        (x, y)
    }

    /// `(block, sub)` containing pixel `(x, y)`.
    pub fn locate(&self, x: usize, y: usize) -> (u32, u32) {
        let block = (y / self.block_size) * self.blocks_x() + x / self.block_size;
        let side = self.subs_per_side();
        let sub = ((y % self.block_size) / self.sub_block_size) * side
            + (x % self.block_size) / self.sub_block_size;
        (block as u32, sub as u32)
    }
}

/// Validates geometry and builds the grid.
pub fn partition_geometry(
    width: u32,
    height: u32,
    block_size: usize,
    sub_block_size: usize,
) -> Result<BlockGrid, GeometryError> {
    BlockGrid::new(width, height, block_size, sub_block_size)
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    /// Returns `None` when `data.len() != width * height * 3`.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * CHANNELS).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = (y as usize * self.width as usize + x as usize) * CHANNELS;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let o = (y as usize * self.width as usize + x as usize) * CHANNELS;
        self.data[o..o + 3].copy_from_slice(&px);
    }

    /// Copies out the `size × size` tile with top-left corner `(x0, y0)`.
    pub fn tile(&self, x0: usize, y0: usize, size: usize) -> Tile {
        let mut planes: [Vec<u8>; CHANNELS] = Default::default();
        for p in &mut planes {
            p.reserve(size * size);
        }
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                let o = (y * self.width as usize + x) * CHANNELS;
                for (c, p) in planes.iter_mut().enumerate() {
                    p.push(self.data[o + c]);
                }
            }
        }
        Tile { size, planes }
    }

    pub fn put_tile(&mut self, x0: usize, y0: usize, tile: &Tile) {
        let size = tile.size;
        for i in 0..size * size {
            let (x, y) = (x0 + i % size, y0 + i / size);
            let o = (y * self.width as usize + x) * CHANNELS;
            for c in 0..CHANNELS {
                self.data[o + c] = tile.planes[c][i];
            }
        }
    }

    fn check_grid(&self, grid: &BlockGrid) -> Result<(), CipherError> {
        if self.width != grid.width() || self.height != grid.height() {
            return Err(CipherError::ImageSize {
                image_w: self.width,
                image_h: self.height,
                grid_w: grid.width(),
                grid_h: grid.height(),
            });
        }
        Ok(())
    }
}

/// Planar `size × size × 3` sub-block; each plane is row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub size: usize,
    pub planes: [Vec<u8>; CHANNELS],
}

impl Tile {
    pub fn new(size: usize, planes: [Vec<u8>; CHANNELS]) -> Option<Self> {
        planes
            .iter()
            .all(|p| p.len() == size * size)
            .then_some(Self { size, planes })
    }

    fn check_key(&self, key: &SubBlockKey) -> Result<(), CipherError> {
        if key.pixel_count() != self.size * self.size {
            return Err(CipherError::TileMismatch {
                tile: self.size,
                key_pixels: key.pixel_count(),
            });
        }
        Ok(())
    }
}

pub fn apply_subblock(tile: &Tile, key: &SubBlockKey) -> Result<Tile, CipherError> {
    tile.check_key(key)?;
    let planes = [0, 1, 2].map(|c| {
        let src = key.channel_perm.get(c);
        key.pixel_perms[src].gather(&tile.planes[src])
    });
    Ok(Tile {
        size: tile.size,
        planes,
    })
}

/// Undoes the channel reordering, then each source channel's pixel shuffle.
pub fn invert_subblock(tile: &Tile, key: &SubBlockKey) -> Result<Tile, CipherError> {
    tile.check_key(key)?;
    let mut planes: [Vec<u8>; CHANNELS] = Default::default();
    for c in 0..CHANNELS {
        let src = key.channel_perm.get(c);
        planes[src] = key.pixel_perms[src].inverse().gather(&tile.planes[c]);
    }
    Ok(Tile {
        size: tile.size,
        planes,
    })
}

#[derive(Clone, Copy)]
enum Direction {
    Encrypt,
    Decrypt,
}

pub fn encrypt_image(
    img: &RgbImage,
    keys: &dyn KeyProvider,
    grid: &BlockGrid,
) -> Result<RgbImage, CipherError> {
    transform(img, keys, grid, Direction::Encrypt)
}

pub fn decrypt_image(
    img: &RgbImage,
    keys: &dyn KeyProvider,
    grid: &BlockGrid,
) -> Result<RgbImage, CipherError> {
    transform(img, keys, grid, Direction::Decrypt)
}

/// Works one band of `M` pixel rows at a time so bands can run in parallel.
fn transform(
    img: &RgbImage,
    keys: &dyn KeyProvider,
    grid: &BlockGrid,
    dir: Direction,
) -> Result<RgbImage, CipherError> {
    img.check_grid(grid)?;
    if keys.sub_block_size() != grid.sub_block_size() {
        return Err(CipherError::KeySize {
            expected: grid.sub_block_size(),
            provided: keys.sub_block_size(),
        });
    }
    let row_bytes = grid.width() as usize * CHANNELS;
    let band_bytes = row_bytes * grid.block_size();
    let mut out = vec![0u8; img.data.len()];
    let ms = grid.sub_block_size();
    let n = ms * ms;

    out.par_chunks_mut(band_bytes)
        .zip(img.data.par_chunks(band_bytes))
        .enumerate()
        .try_for_each(|(by, (dst, src))| -> Result<(), CipherError> {
            for bx in 0..grid.blocks_x() {
                let block = (by * grid.blocks_x() + bx) as u32;
                for sub in 0..grid.subs_per_block() as u32 {
                    let key = keys
                        .key(block, sub)
                        .ok_or(CipherError::MissingKey { block, sub })?;
                    if key.pixel_count() != n {
                        return Err(CipherError::TileMismatch {
                            tile: ms,
                            key_pixels: key.pixel_count(),
                        });
                    }
                    let (x0, y0) = grid.subblock_origin(block, sub);
                    let y0 = y0 - by * grid.block_size();
                    let at = |slot: usize, c: usize| {
                        (y0 + slot / ms) * row_bytes + (x0 + slot % ms) * CHANNELS + c
                    };
                    for c in 0..CHANNELS {
                        let source = key.channel_perm.get(c);
                        let perm = &key.pixel_perms[source];
                        for i in 0..n {
                            let j = perm.get(i);
                            match dir {
                                Direction::Encrypt => dst[at(i, c)] = src[at(j, source)],
                                Direction::Decrypt => dst[at(j, source)] = src[at(i, c)],
                            }
                        }
                    }
                }
            }
            Ok(())
        })?;

    Ok(RgbImage {
        width: img.width,
        height: img.height,
        data: out,
    })
}
