//! Statistical properties of key sampling and derivation.

use std::collections::HashMap;

use ppss::keyschedule::{
    derive_subblock_key, generate_random_image_key, sample_permutation, ImageId, Keystream,
    MasterSeed, OsEntropy, SeededKeys,
};
use ppss::privanalysis::enumerate_permutations;
use ppss::{decrypt_image, encrypt_image, BlockGrid, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn fresh_seed(i: u64) -> [u8; 32] {
    Sha256::digest(i.to_be_bytes()).into()
}

#[test]
fn n3_permutations_are_uniform() {
    let trials = 100_000u64;
    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    for i in 0..trials {
        let p = sample_permutation(&mut Keystream::new(fresh_seed(i)), 3);
        *counts.entry(p.as_slice().to_vec()).or_default() += 1;
    }
    let all = enumerate_permutations(3);
    assert_eq!(counts.len(), all.len());
    for p in all {
        let f = counts[p.as_slice()] as f64 / trials as f64;
        assert!((f - 1.0 / 6.0).abs() <= 0.01, "{p:?}: {f}");
    }
}

#[test]
fn n4_chi_square() {
    let trials = 120_000u64;
    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    for i in 0..trials {
        let p = sample_permutation(&mut Keystream::new(fresh_seed(1 << 40 | i)), 4);
        *counts.entry(p.as_slice().to_vec()).or_default() += 1;
    }
    assert_eq!(counts.len(), 24);
    let expected = trials as f64 / 24.0;
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 23 degrees of freedom, p = 0.001.
    assert!(chi2 < 49.73, "chi2 = {chi2}");
}

#[test]
fn different_image_ids_give_different_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..1000 {
        let master = MasterSeed::from_bytes(rng.gen());
        let a = ImageId::new(format!("img-{}", rng.gen::<u32>())).unwrap();
        let b = ImageId::new(format!("{}#{case}", a)).unwrap();
        let (block, sub) = (rng.gen_range(0..2304), rng.gen_range(0..16));
        let ms = [2usize, 4, 8][case % 3];
        assert_ne!(
            derive_subblock_key(&master, &a, block, sub, ms),
            derive_subblock_key(&master, &b, block, sub, ms)
        );
    }
}

#[test]
fn random_tables_are_distinct() {
    let grid = BlockGrid::new(32, 32, 16, 4).unwrap();
    let tables: Vec<_> = (0..20)
        .map(|_| generate_random_image_key(&mut OsEntropy, &grid).unwrap())
        .collect();
    for i in 0..tables.len() {
        for j in i + 1..tables.len() {
            assert_ne!(tables[i], tables[j]);
        }
    }
}

#[test]
fn wrong_image_id_does_not_decrypt() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = BlockGrid::new(32, 32, 16, 4).unwrap();
    for trial in 0..100 {
        let img = RgbImage::from_fn(32, 32, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let master = MasterSeed::from_bytes(rng.gen());
        let right = SeededKeys::new(
            master.clone(),
            ImageId::new(format!("id{trial}")).unwrap(),
            4,
        );
        let wrong = SeededKeys::new(master, ImageId::new(format!("id{trial}x")).unwrap(), 4);
        let enc = encrypt_image(&img, &right, &grid).unwrap();
        assert_ne!(decrypt_image(&enc, &wrong, &grid).unwrap(), img);
        assert_eq!(decrypt_image(&enc, &right, &grid).unwrap(), img);
    }
}
