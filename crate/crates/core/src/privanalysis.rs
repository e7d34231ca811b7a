//! What the cipher hides and what it does not.
//!
//! * [`subblock_sum_leak`]: per-sub-block channel sums. Pixel shuffling
//!   cannot change them, so an attacker holding only ciphertext sees the
//!   image at sub-block resolution (up to a channel relabeling).
//! * [`adjacent_correlation`]: Pearson correlation of neighbouring pixels.
//! * [`keyspace_bits`]: exact key counts per sub-block, block and image.
//! * [`known_plaintext_attack`]: recovers a key consistent with one
//!   plaintext/ciphertext pair and counts how many keys are consistent.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use serde::Serialize;

use crate::blockcipher::{BlockGrid, CipherError, GeometryError, RgbImage};
use crate::keyschedule::{KeyProvider, KeyScope, KeyTable, Permutation, SubBlockKey, CHANNELS};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("image must be at least 2x2 (got {width}x{height})")]
    TooSmall { width: u32, height: u32 },
    #[error("plaintext is {plain_w}x{plain_h}, ciphertext is {cipher_w}x{cipher_h}")]
    SizeMismatch {
        plain_w: u32,
        plain_h: u32,
        cipher_w: u32,
        cipher_h: u32,
    },
    #[error("block {block}, sub-block {sub}: no key maps the plaintext onto the ciphertext")]
    Inconsistent { block: u32, sub: u32 },
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

/// Exact per-sub-block, per-channel sums at `(width / M_s) × (height / M_s)`
/// resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeakImage {
    pub cols: usize,
    pub rows: usize,
    pub sub_block_size: usize,
    /// Row-major cells, three channel sums per cell.
    pub sums: Vec<u32>,
}

impl LeakImage {
    pub fn get(&self, col: usize, row: usize, channel: usize) -> u32 {
        self.sums[(row * self.cols + col) * CHANNELS + channel]
    }

    /// Per-cell means as an 8-bit image. Lossy; for viewing only.
    pub fn to_visualization(&self) -> RgbImage {
        let area = (self.sub_block_size * self.sub_block_size) as u32;
        RgbImage::from_fn(self.cols as u32, self.rows as u32, |x, y| {
            let c = |ch| ((self.get(x as usize, y as usize, ch) + area / 2) / area).min(255) as u8;
            [c(0), c(1), c(2)]
        })
    }
}

pub fn subblock_sum_leak(
    img: &RgbImage,
    sub_block_size: usize,
) -> Result<LeakImage, AnalysisError> {
    BlockGrid::new(img.width(), img.height(), sub_block_size, sub_block_size)?;
    let ms = sub_block_size;
    let cols = img.width() as usize / ms;
    let rows = img.height() as usize / ms;
    let mut sums = vec![0u32; cols * rows * CHANNELS];
    for y in 0..img.height() {
        let row = y as usize / ms;
        for x in 0..img.width() {
            let cell = (row * cols + x as usize / ms) * CHANNELS;
            for (c, v) in img.pixel(x, y).into_iter().enumerate() {
                sums[cell + c] += v as u32;
            }
        }
    }
    Ok(LeakImage {
        cols,
        rows,
        sub_block_size,
        sums,
    })
}

/// Predicts the ciphertext leak from the plaintext leak: encrypted channel
/// `c` of each sub-block carries the sum of plain channel `channel_perm[c]`.
pub fn relabel_leak(
    plain: &LeakImage,
    keys: &dyn KeyProvider,
    grid: &BlockGrid,
) -> Result<LeakImage, AnalysisError> {
    if plain.sub_block_size != grid.sub_block_size()
        || plain.cols * plain.sub_block_size != grid.width() as usize
        || plain.rows * plain.sub_block_size != grid.height() as usize
    {
        return Err(AnalysisError::SizeMismatch {
            plain_w: (plain.cols * plain.sub_block_size) as u32,
            plain_h: (plain.rows * plain.sub_block_size) as u32,
            cipher_w: grid.width(),
            cipher_h: grid.height(),
        });
    }
    let ms = grid.sub_block_size();
    let mut sums = vec![0u32; plain.sums.len()];
    for row in 0..plain.rows {
        for col in 0..plain.cols {
            let (block, sub) = grid.locate(col * ms, row * ms);
            let key = keys
                .key(block, sub)
                .ok_or(CipherError::MissingKey { block, sub })?;
            for c in 0..CHANNELS {
                sums[(row * plain.cols + col) * CHANNELS + c] =
                    plain.get(col, row, key.channel_perm.get(c));
            }
        }
    }
    Ok(LeakImage {
        sums,
        ..plain.clone()
    })
}

/// Pearson coefficient per channel; `None` where a channel is constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub horizontal: [Option<f64>; CHANNELS],
    pub vertical: [Option<f64>; CHANNELS],
    pub diagonal: [Option<f64>; CHANNELS],
}

impl CorrelationReport {
    /// Mean of the absolute defined coefficients, or `None` if none is defined.
    pub fn mean_abs(&self) -> Option<f64> {
        let vals: Vec<f64> = [self.horizontal, self.vertical, self.diagonal]
            .iter()
            .flatten()
            .flatten()
            .map(|v| v.abs())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Exact integer moments, so a constant channel yields exactly zero variance.
fn pearson(pairs: impl Iterator<Item = (u8, u8)>) -> Option<f64> {
    let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) =
        (0i128, 0i128, 0i128, 0i128, 0i128, 0i128);
    for (x, y) in pairs {
        let (x, y) = (x as i128, y as i128);
        n += 1;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let cov = n * sxy - sx * sy;
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx == 0 || vy == 0 {
        return None;
    }
    Some((cov as f64 / ((vx as f64).sqrt() * (vy as f64).sqrt())).clamp(-1.0, 1.0))
}

pub fn adjacent_correlation(img: &RgbImage) -> Result<CorrelationReport, AnalysisError> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(AnalysisError::TooSmall {
            width: w,
            height: h,
        });
    }
    let direction = |dx: u32, dy: u32| {
        [0, 1, 2].map(|c| {
            pearson((0..h - dy).flat_map(|y| {
                (0..w - dx).map(move |x| (img.pixel(x, y)[c], img.pixel(x + dx, y + dy)[c]))
            }))
        })
    };
    Ok(CorrelationReport {
        horizontal: direction(1, 0),
        vertical: direction(0, 1),
        diagonal: direction(1, 1),
    })
}

/// How pixel permutations relate across the three channels of a sub-block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndependenceMode {
    /// One pixel permutation per channel.
    Independent,
    /// A single pixel permutation shared by all channels.
    SharedPixelPerm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageKeyspace {
    pub width: u32,
    pub height: u32,
    pub subblocks: usize,
    pub key_scope: KeyScope,
    pub bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyspaceReport {
    pub block_size: usize,
    pub sub_block_size: usize,
    pub channels: usize,
    pub mode: IndependenceMode,
    #[serde(serialize_with = "ser_big")]
    pub per_subblock_count: BigUint,
    pub per_subblock_bits: f64,
    pub subs_per_block: usize,
    #[serde(serialize_with = "ser_big")]
    pub per_block_count: BigUint,
    pub per_block_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageKeyspace>,
}

fn ser_big<S: serde::Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_str_radix(10))
}

pub fn factorial(n: u64) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, k| acc * k)
}

/// `log2(n)` accurate to well under 1e-9 bits for any size.
pub fn log2_big(n: &BigUint) -> f64 {
    let bits = n.bits();
    if bits <= 64 {
        return (n.to_u64().unwrap() as f64).log2();
    }
    let shift = bits - 64;
    let top = (n >> shift).to_u64().unwrap();
    (top as f64).log2() + shift as f64
}

pub fn keyspace_bits(
    block_size: usize,
    sub_block_size: usize,
    mode: IndependenceMode,
) -> Result<KeyspaceReport, AnalysisError> {
    // Validate M / M_s on a single block.
    let grid = BlockGrid::new(
        block_size as u32,
        block_size as u32,
        block_size,
        sub_block_size,
    )?;
    let n = (sub_block_size * sub_block_size) as u64;
    let pixel = factorial(n);
    let pixel_part = match mode {
        IndependenceMode::Independent => pixel.pow(CHANNELS as u32),
        IndependenceMode::SharedPixelPerm => pixel,
    };
    let per_sub = pixel_part * factorial(CHANNELS as u64);
    let subs = grid.subs_per_block();
    let per_block = per_sub.pow(subs as u32);
    Ok(KeyspaceReport {
        block_size,
        sub_block_size,
        channels: CHANNELS,
        mode,
        per_subblock_bits: log2_big(&per_sub),
        per_block_bits: log2_big(&per_block),
        per_subblock_count: per_sub,
        subs_per_block: subs,
        per_block_count: per_block,
        image: None,
    })
}

impl KeyspaceReport {
    /// Adds per-image totals for a `width × height` image. With
    /// [`KeyScope::Image`] one key covers the whole image.
    pub fn with_image(
        mut self,
        width: u32,
        height: u32,
        scope: KeyScope,
    ) -> Result<Self, AnalysisError> {
        let grid = BlockGrid::new(width, height, self.block_size, self.sub_block_size)?;
        let independent = match scope {
            KeyScope::SubBlock => grid.subblock_count(),
            KeyScope::Image => 1,
        };
        self.image = Some(ImageKeyspace {
            width,
            height,
            subblocks: grid.subblock_count(),
            key_scope: scope,
            bits: self.per_subblock_bits * independent as f64,
        });
        Ok(self)
    }

    pub fn format_text(&self) -> String {
        let mut s = format!(
            "block size {} / sub-block size {} / {} channels / {:?}\n\
             per sub-block: {} keys ({:.2} bits)\n\
             per block ({} sub-blocks): {:.2} bits\n",
            self.block_size,
            self.sub_block_size,
            self.channels,
            self.mode,
            self.per_subblock_count,
            self.per_subblock_bits,
            self.subs_per_block,
            self.per_block_bits,
        );
        if let Some(img) = &self.image {
            s.push_str(&format!(
                "per image {}x{} ({} sub-blocks, {}): {:.2} bits\n",
                img.width,
                img.height,
                img.subblocks,
                match img.key_scope {
                    KeyScope::SubBlock => "one key per sub-block",
                    KeyScope::Image => "one key per image",
                },
                img.bits
            ));
        }
        s
    }
}

/// Every permutation of `[0, n)` in lexicographic order. Only sensible for
/// tiny `n`.
pub fn enumerate_permutations(n: usize) -> Vec<Permutation> {
    fn rec(prefix: &mut Vec<u32>, used: &mut [bool], out: &mut Vec<Permutation>) {
        if prefix.len() == used.len() {
            out.push(Permutation::new(prefix.clone()).unwrap());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                prefix.push(v as u32);
                rec(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Result of a known-plaintext attack.
#[derive(Debug, Clone)]
pub struct KpaOutcome {
    /// One consistent key per sub-block.
    pub keys: KeyTable,
    /// Number of keys consistent with the pair, per sub-block.
    pub ambiguity: Vec<BigUint>,
}

impl KpaOutcome {
    pub fn unique_subblocks(&self) -> usize {
        self.ambiguity.iter().filter(|a| a.is_one()).count()
    }

    /// log2 of the number of whole-image keys consistent with the pair.
    pub fn residual_bits(&self) -> f64 {
        self.ambiguity.iter().map(log2_big).sum()
    }
}

fn histogram(values: &[u8]) -> [u32; 256] {
    let mut h = [0u32; 256];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

fn attack_subblock(
    plain: &crate::blockcipher::Tile,
    cipher: &crate::blockcipher::Tile,
    channel_perms: &[Permutation],
) -> Option<(SubBlockKey, BigUint)> {
    let ph = plain.planes.each_ref().map(|p| histogram(p));
    let ch = cipher.planes.each_ref().map(|p| histogram(p));
    let consistent: Vec<&Permutation> = channel_perms
        .iter()
        .filter(|cp| (0..CHANNELS).all(|c| ch[c] == ph[cp.get(c)]))
        .collect();
    let channel_perm = (*consistent.first()?).clone();

    let mut pixel_perms: [Permutation; CHANNELS] =
        std::array::from_fn(|_| Permutation::identity(plain.planes[0].len()));
    let mut ambiguity = BigUint::from(consistent.len());
    for (c, cipher_hist) in ch.iter().enumerate() {
        let src = channel_perm.get(c);
        // Plain positions of each value, consumed in order.
        let mut slots: Vec<Vec<u32>> = vec![Vec::new(); 256];
        for (i, &v) in plain.planes[src].iter().enumerate().rev() {
            slots[v as usize].push(i as u32);
        }
        let map: Vec<u32> = cipher.planes[c]
            .iter()
            .map(|&v| slots[v as usize].pop().expect("histograms match"))
            .collect();
        pixel_perms[src] = Permutation::new(map).expect("value matching yields a bijection");
        for &m in cipher_hist.iter().filter(|&&m| m > 1) {
            ambiguity *= factorial(m as u64);
        }
    }
    Some((
        SubBlockKey {
            pixel_perms,
            channel_perm,
        },
        ambiguity,
    ))
}

/// Recovers, per sub-block, a key mapping `plain` onto `cipher`, by histogram
/// matching for the channel order and value matching for pixel positions.
/// Re-encrypting `plain` with the returned keys reproduces `cipher` exactly.
pub fn known_plaintext_attack(
    plain: &RgbImage,
    cipher: &RgbImage,
    grid: &BlockGrid,
) -> Result<KpaOutcome, AnalysisError> {
    if plain.width() != cipher.width() || plain.height() != cipher.height() {
        return Err(AnalysisError::SizeMismatch {
            plain_w: plain.width(),
            plain_h: plain.height(),
            cipher_w: cipher.width(),
            cipher_h: cipher.height(),
        });
    }
    if plain.width() != grid.width() || plain.height() != grid.height() {
        return Err(CipherError::ImageSize {
            image_w: plain.width(),
            image_h: plain.height(),
            grid_w: grid.width(),
            grid_h: grid.height(),
        }
        .into());
    }
    let channel_perms = enumerate_permutations(CHANNELS);
    let ms = grid.sub_block_size();
    let results: Vec<(SubBlockKey, BigUint)> = (0..grid.subblock_count())
        .into_par_iter()
        .map(|flat| {
            let (block, sub) = grid.split_flat_index(flat);
            let (x, y) = grid.subblock_origin(block, sub);
            attack_subblock(
                &plain.tile(x, y, ms),
                &cipher.tile(x, y, ms),
                &channel_perms,
            )
            .ok_or(AnalysisError::Inconsistent { block, sub })
        })
        .collect::<Result<_, _>>()?;
    let (keys, ambiguity): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(KpaOutcome {
        keys: KeyTable::new(grid, keys).expect("one key per sub-block"),
        ambiguity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockcipher::{apply_subblock, encrypt_image, Tile};
    use crate::keyschedule::{ImageId, MasterSeed, SeededKeys};

    #[test]
    fn uniform_leak() {
        let img = RgbImage::from_fn(8, 4, |_, _| [9, 9, 9]);
        let leak = subblock_sum_leak(&img, 2).unwrap();
        assert_eq!((leak.cols, leak.rows), (4, 2));
        assert!(leak.sums.iter().all(|&s| s == 36));
        assert_eq!(leak.to_visualization().pixel(0, 0), [9, 9, 9]);
        assert!(subblock_sum_leak(&img, 3).is_err());
    }

    #[test]
    fn leak_survives_encryption_up_to_relabeling() {
        let grid = BlockGrid::new(16, 8, 8, 4).unwrap();
        let img = RgbImage::from_fn(16, 8, |x, y| {
            [(x * 13) as u8, (y * 29) as u8, (x * y) as u8]
        });
        let keys = SeededKeys::new(
            MasterSeed::from_bytes([4; 32]),
            ImageId::new("l").unwrap(),
            4,
        );
        let enc = encrypt_image(&img, &keys, &grid).unwrap();
        let plain = subblock_sum_leak(&img, 4).unwrap();
        let cipher = subblock_sum_leak(&enc, 4).unwrap();
        assert_eq!(relabel_leak(&plain, &keys, &grid).unwrap(), cipher);
    }

    #[test]
    fn correlation_examples() {
        let grad = RgbImage::from_fn(16, 16, |x, y| [(x * 8) as u8, (x * 8 + y) as u8, 5]);
        let r = adjacent_correlation(&grad).unwrap();
        assert!((r.horizontal[0].unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(r.horizontal[2], None);
        let checker = RgbImage::from_fn(
            8,
            8,
            |x, y| if (x + y) % 2 == 0 { [0; 3] } else { [255; 3] },
        );
        let r = adjacent_correlation(&checker).unwrap();
        for c in 0..3 {
            assert!((r.horizontal[c].unwrap() + 1.0).abs() < 1e-12);
            assert!((r.vertical[c].unwrap() + 1.0).abs() < 1e-12);
            assert!((r.diagonal[c].unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            adjacent_correlation(&RgbImage::from_fn(1, 5, |_, _| [0; 3])),
            Err(AnalysisError::TooSmall { .. })
        ));
    }

    #[test]
    fn keyspace_small_cases() {
        let r = keyspace_bits(4, 1, IndependenceMode::Independent).unwrap();
        assert_eq!(r.per_subblock_count, BigUint::from(6u32));
        assert!((r.per_subblock_bits - 6f64.log2()).abs() < 1e-12);
        let r = keyspace_bits(16, 2, IndependenceMode::Independent).unwrap();
        assert_eq!(r.per_subblock_count, BigUint::from(82944u32));
        assert!((r.per_subblock_bits - 16.34).abs() < 0.01);
        assert_eq!(r.per_block_count, BigUint::from(82944u32).pow(64));
        let shared = keyspace_bits(16, 2, IndependenceMode::SharedPixelPerm).unwrap();
        assert_eq!(shared.per_subblock_count, BigUint::from(144u32));
        assert!(keyspace_bits(16, 3, IndependenceMode::Independent).is_err());
        let img = r
            .clone()
            .with_image(32, 16, KeyScope::SubBlock)
            .unwrap()
            .image
            .unwrap();
        assert_eq!(img.subblocks, 128);
        assert!((img.bits - 128.0 * r.per_subblock_bits).abs() < 1e-6);
        let one = r
            .clone()
            .with_image(32, 16, KeyScope::Image)
            .unwrap()
            .image
            .unwrap();
        assert_eq!(one.bits, r.per_subblock_bits);
    }

    #[test]
    fn keyspace_monotone_in_subblock_size() {
        for mode in [
            IndependenceMode::Independent,
            IndependenceMode::SharedPixelPerm,
        ] {
            let bits: Vec<f64> = [1, 2, 4, 8, 16]
                .iter()
                .map(|&ms| keyspace_bits(16, ms, mode).unwrap().per_subblock_bits)
                .collect();
            assert!(bits.windows(2).all(|w| w[0] < w[1]), "{bits:?}");
        }
        for ms in [2, 4, 8, 16] {
            let i = keyspace_bits(16, ms, IndependenceMode::Independent).unwrap();
            let s = keyspace_bits(16, ms, IndependenceMode::SharedPixelPerm).unwrap();
            assert!(i.per_subblock_count > s.per_subblock_count);
        }
    }

    #[test]
    fn log2_big_matches_exact_powers() {
        assert_eq!(log2_big(&(BigUint::one() << 300u32)), 300.0);
        let f = factorial(256);
        // log2(256!) = 1683.996...
        let direct: f64 = (1..=256).map(|k| (k as f64).log2()).sum();
        assert!((log2_big(&f) - direct).abs() < 1e-9);
    }

    #[test]
    fn permutation_enumeration() {
        let all = enumerate_permutations(4);
        assert_eq!(all.len(), 24);
        let mut dedup = all.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 24);
        assert_eq!(enumerate_permutations(3)[0].as_slice(), &[0, 1, 2]);
    }

    #[test]
    fn kpa_on_distinct_tile_recovers_true_key() {
        let plain =
            Tile::new(2, [vec![1, 2, 3, 4], vec![5, 6, 7, 8], vec![9, 10, 11, 12]]).unwrap();
        let key = crate::derive_subblock_key(
            &MasterSeed::from_bytes([8; 32]),
            &ImageId::new("k").unwrap(),
            0,
            0,
            2,
        );
        let cipher = apply_subblock(&plain, &key).unwrap();
        let (found, amb) = attack_subblock(&plain, &cipher, &enumerate_permutations(3)).unwrap();
        assert_eq!(found, key);
        assert!(amb.is_one());
    }

    #[test]
    fn kpa_uniform_tile_reports_full_keyspace() {
        let plain = Tile::new(2, [vec![7; 4], vec![7; 4], vec![7; 4]]).unwrap();
        let (_, amb) = attack_subblock(&plain, &plain, &enumerate_permutations(3)).unwrap();
        assert_eq!(amb, BigUint::from(82944u32));
    }

    #[test]
    fn kpa_repeated_values_ambiguity() {
        // Red has a pair of equal values: 2! ways; other channels distinct.
        let plain =
            Tile::new(2, [vec![1, 1, 3, 4], vec![5, 6, 7, 8], vec![9, 10, 11, 12]]).unwrap();
        let (_, amb) = attack_subblock(&plain, &plain, &enumerate_permutations(3)).unwrap();
        assert_eq!(amb, BigUint::from(2u32));
        // Green equals blue as a multiset: two channel orders, each 1 way.
        let plain = Tile::new(2, [vec![1, 2, 3, 4], vec![5, 6, 7, 8], vec![8, 7, 6, 5]]).unwrap();
        let (_, amb) = attack_subblock(&plain, &plain, &enumerate_permutations(3)).unwrap();
        assert_eq!(amb, BigUint::from(2u32));
    }

    #[test]
    fn kpa_rejects_mismatched_pairs() {
        let grid = BlockGrid::new(8, 8, 8, 4).unwrap();
        let a = RgbImage::from_fn(8, 8, |x, y| [x as u8, y as u8, (x + y) as u8]);
        let b = RgbImage::from_fn(8, 8, |x, y| [x as u8 + 1, y as u8, (x + y) as u8]);
        assert!(matches!(
            known_plaintext_attack(&a, &b, &grid),
            Err(AnalysisError::Inconsistent { block: 0, sub: 0 })
        ));
        let c = RgbImage::from_fn(8, 4, |_, _| [0; 3]);
        assert!(matches!(
            known_plaintext_attack(&a, &c, &grid),
            Err(AnalysisError::SizeMismatch { .. })
        ));
    }
}
