use std::path::{Path, PathBuf};

use ppss::datapipe::{
    encrypt_dataset, verify_dataset, DatasetConfig, DatasetError, DatasetManifest, DatasetMode,
    OnError, MANIFEST_FILE,
};
use ppss::imageio::{self, ImageIoError};
use ppss::keyschedule::{
    generate_scoped_image_key, parse_manifest, serialize_manifest, ImageKeyManifest, KeyMaterial,
    OsEntropy,
};
use ppss::privanalysis::{
    adjacent_correlation, keyspace_bits, known_plaintext_attack, subblock_sum_leak, AnalysisError,
    IndependenceMode,
};
use ppss::segmetrics::{compute_metrics, ConfusionMatrix, LabelMap, MetricsError};
use ppss::{
    decrypt_image, encrypt_image, BlockGrid, ImageId, KeyProvider, KeyScope, MasterSeed, RgbImage,
    SeededKeys,
};
use rayon::prelude::*;
use serde_json::json;
use walkdir::WalkDir;

use crate::{
    failed, invalid, AttackArgs, Classify, CliError, CorrelationArgs, DatasetEncryptArgs,
    DatasetVerifyArgs, DecryptArgs, EncryptArgs, ErrorPolicy, GeometryArgs, Independence,
    KeygenImageArgs, KeygenSeedArgs, KeyspaceArgs, LeakArgs, MetricsArgs, Mode, Scope, Ui,
};

type CliResult = Result<(), CliError>;

fn key_scope(s: Scope) -> KeyScope {
    match s {
        Scope::SubBlock => KeyScope::SubBlock,
        Scope::Image => KeyScope::Image,
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{what} {} does not exist or is not a file",
            path.display()
        )))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{what} {} does not exist or is not a directory",
            path.display()
        )))
    }
}

fn load_seed(seed_file: Option<&Path>) -> Result<MasterSeed, CliError> {
    let path = seed_file.ok_or_else(|| invalid("seeded mode needs --seed-file"))?;
    require_file(path, "seed file")?;
    MasterSeed::from_file(path).map_err(|e| invalid(format!("seed file {}: {e}", path.display())))
}

fn image_id(id: &str) -> Result<ImageId, CliError> {
    ImageId::new(id).map_err(|e| invalid(format!("--image-id: {e}")))
}

fn image_error(e: ImageIoError) -> CliError {
    match e {
        ImageIoError::Color { .. } => invalid(e),
        _ => failed(e),
    }
}

fn load_image(path: &Path) -> Result<RgbImage, CliError> {
    imageio::load_rgb(path).map_err(image_error)
}

fn grid_for(img: &RgbImage, path: &Path, g: &GeometryArgs) -> Result<BlockGrid, CliError> {
    BlockGrid::new(img.width(), img.height(), g.block_size, g.sub_block_size).map_err(|e| {
        invalid(format!(
            "{} is {}x{}: {e}",
            path.display(),
            img.width(),
            img.height()
        ))
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    imageio::write_atomic(path, bytes).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn save_png(path: &Path, img: &RgbImage) -> CliResult {
    imageio::save_rgb_png(path, img).map_err(failed)
}

fn default_image_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn encrypt(ui: &Ui, seed_file: Option<&Path>, a: EncryptArgs) -> CliResult {
    if a.mode == Mode::Explicit && a.key_out.is_none() {
        return Err(invalid("explicit mode needs --key-out, or the key is lost"));
    }
    if a.mode == Mode::Explicit && a.export_seed {
        return Err(invalid("--export-seed only applies to seeded mode"));
    }
    let id = image_id(
        &a.image_id
            .clone()
            .unwrap_or_else(|| default_image_id(&a.input)),
    )?;
    require_file(&a.input, "input image")?;
    let seed = match a.mode {
        Mode::Seeded => Some(load_seed(seed_file)?),
        Mode::Explicit => None,
    };
    let img = load_image(&a.input)?;
    let grid = grid_for(&img, &a.input, &a.geometry)?;
    let scope = key_scope(a.key_scope);

    let (cipher, manifest) = match seed {
        Some(seed) => {
            let keys =
                SeededKeys::new(seed.clone(), id.clone(), grid.sub_block_size()).with_scope(scope);
            let cipher = encrypt_image(&img, &keys, &grid).or_failed()?;
            let manifest =
                ImageKeyManifest::seeded(id.clone(), grid, &seed, a.export_seed).with_scope(scope);
            (cipher, manifest)
        }
        None => {
            let table = generate_scoped_image_key(&mut OsEntropy, &grid, scope).or_failed()?;
            let cipher = encrypt_image(&img, &table, &grid).or_failed()?;
            (cipher, ImageKeyManifest::explicit(id.clone(), grid, table))
        }
    };
    save_png(&a.output, &cipher)?;
    if let Some(key_out) = &a.key_out {
        write_file(key_out, &serialize_manifest(&manifest))?;
    }
    ui.emit(
        format!(
            "encrypted {} -> {} ({}x{}, block {}, sub-block {}, image id {:?})",
            a.input.display(),
            a.output.display(),
            img.width(),
            img.height(),
            grid.block_size(),
            grid.sub_block_size(),
            id.as_str()
        ),
        json!({
            "command": "encrypt",
            "input": a.input,
            "output": a.output,
            "image_id": id.as_str(),
            "mode": if a.mode == Mode::Seeded { "seeded" } else { "explicit" },
            "width": img.width(),
            "height": img.height(),
            "block_size": grid.block_size(),
            "sub_block_size": grid.sub_block_size(),
            "cipher_sha256": imageio::sha256_hex(cipher.as_bytes()),
            "key_out": a.key_out,
        }),
    );
    Ok(())
}

pub fn decrypt(ui: &Ui, seed_file: Option<&Path>, a: DecryptArgs) -> CliResult {
    let (keys, grid): (Box<dyn KeyProvider>, Option<BlockGrid>) = match &a.key {
        Some(path) => {
            require_file(path, "key manifest")?;
            let bytes =
                std::fs::read(path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
            let manifest = parse_manifest(&bytes)
                .map_err(|e| invalid(format!("key manifest {}: {e}", path.display())))?;
            let keys: Box<dyn KeyProvider> = match manifest.material {
                KeyMaterial::Explicit(table) => Box::new(table),
                KeyMaterial::Seeded {
                    seed_fingerprint,
                    master_seed,
                    key_scope,
                } => {
                    let seed = match (seed_file, master_seed) {
                        (Some(f), _) => load_seed(Some(f))?,
                        (None, Some(s)) => s,
                        (None, None) => {
                            return Err(invalid(
                                "manifest does not embed the seed; pass --seed-file",
                            ))
                        }
                    };
                    if seed.fingerprint() != seed_fingerprint {
                        return Err(invalid(
                            "seed file does not match the manifest's seed fingerprint",
                        ));
                    }
                    Box::new(
                        SeededKeys::new(seed, manifest.image_id, manifest.grid.sub_block_size())
                            .with_scope(key_scope),
                    )
                }
            };
            (keys, Some(manifest.grid))
        }
        None => {
            let ms = a
                .sub_block_size
                .ok_or_else(|| invalid("--sub-block-size is required without --key"))?;
            let id = a
                .image_id
                .as_deref()
                .ok_or_else(|| invalid("--image-id is required without --key"))?;
            let id = image_id(id)?;
            if ms == 0 {
                return Err(invalid("--sub-block-size must be positive"));
            }
            let seed = load_seed(seed_file)?;
            let keys = SeededKeys::new(seed, id, ms).with_scope(key_scope(a.key_scope));
            (Box::new(keys), None)
        }
    };
    require_file(&a.input, "input image")?;
    let img = load_image(&a.input)?;
    let grid = match grid {
        Some(g) => {
            if (g.width(), g.height()) != (img.width(), img.height()) {
                return Err(invalid(format!(
                    "{} is {}x{} but the key manifest is for {}x{}",
                    a.input.display(),
                    img.width(),
                    img.height(),
                    g.width(),
                    g.height()
                )));
            }
            g
        }
        None => grid_for(
            &img,
            &a.input,
            &GeometryArgs {
                block_size: a.block_size,
                sub_block_size: keys.sub_block_size(),
            },
        )?,
    };
    let plain = decrypt_image(&img, keys.as_ref(), &grid).or_failed()?;
    save_png(&a.output, &plain)?;
    ui.emit(
        format!("decrypted {} -> {}", a.input.display(), a.output.display()),
        json!({
            "command": "decrypt",
            "input": a.input,
            "output": a.output,
            "plain_sha256": imageio::sha256_hex(plain.as_bytes()),
        }),
    );
    Ok(())
}

fn dataset_error(e: DatasetError) -> CliError {
    match e {
        DatasetError::Geometry { .. }
        | DatasetError::OutputCollision { .. }
        | DatasetError::Key(_)
        | DatasetError::Manifest(_)
        | DatasetError::Version(_) => invalid(e),
        _ => failed(e),
    }
}

pub fn dataset_encrypt(ui: &Ui, seed_file: Option<&Path>, a: DatasetEncryptArgs) -> CliResult {
    BlockGrid::new(
        a.geometry.block_size as u32,
        a.geometry.block_size as u32,
        a.geometry.block_size,
        a.geometry.sub_block_size,
    )
    .or_invalid()?;
    require_dir(&a.input, "input directory")?;
    let mode = match a.mode {
        Mode::Seeded => DatasetMode::Seeded {
            seed: load_seed(seed_file)?,
        },
        Mode::Explicit => DatasetMode::Explicit,
    };
    let config = DatasetConfig {
        block_size: a.geometry.block_size,
        sub_block_size: a.geometry.sub_block_size,
        mode,
        resize: a.resize,
        labels_subdir: a.labels_subdir,
        on_error: match a.on_error {
            ErrorPolicy::Skip => OnError::Skip,
            ErrorPolicy::Abort => OnError::Abort,
        },
        key_scope: key_scope(a.key_scope),
    };
    ui.note(format!(
        "encrypting {} -> {}",
        a.input.display(),
        a.output.display()
    ));
    let manifest = encrypt_dataset(&a.input, &a.output, &config).map_err(dataset_error)?;
    for s in &manifest.skipped {
        ui.note(format!("skipped {}: {}", s.path, s.error));
    }
    let labelled = manifest
        .records
        .iter()
        .filter(|r| r.label.is_some())
        .count();
    ui.emit(
        format!(
            "encrypted {} images ({} with labels), skipped {}; manifest {}",
            manifest.records.len(),
            labelled,
            manifest.skipped.len(),
            a.output.join(MANIFEST_FILE).display()
        ),
        json!({
            "command": "dataset encrypt",
            "records": manifest.records.len(),
            "labelled": labelled,
            "skipped": manifest.skipped,
            "mode": manifest.mode,
            "manifest": a.output.join(MANIFEST_FILE),
        }),
    );
    Ok(())
}

pub fn dataset_verify(ui: &Ui, seed_file: Option<&Path>, a: DatasetVerifyArgs) -> CliResult {
    let path = a.dir.join(MANIFEST_FILE);
    require_file(&path, "dataset manifest")?;
    let manifest = DatasetManifest::load(&path).map_err(dataset_error)?;
    let seed = seed_file.map(|f| load_seed(Some(f))).transpose()?;
    if manifest.mode == "seeded" && seed.is_none() {
        ui.note("no --seed-file given: checking hashes only, not decryption");
    }
    let report = verify_dataset(&a.dir, &manifest, seed.as_ref());
    if report.seed_fingerprint_ok == Some(false) {
        return Err(invalid(
            "seed file does not match the dataset's seed fingerprint",
        ));
    }
    let failures: Vec<_> = report.failures().collect();
    match ui.format {
        crate::OutputFormat::Text => {
            for f in &failures {
                println!(
                    "FAIL {}: {}",
                    f.path,
                    f.detail.as_deref().unwrap_or("mismatch")
                );
            }
            println!(
                "verified {} records: {} passed, {} failed",
                report.records.len(),
                report.records.len() - failures.len(),
                failures.len()
            );
        }
        crate::OutputFormat::Machine => {
            for r in &report.records {
                println!("{}", json!({ "record": "check", "check": r }));
            }
            println!(
                "{}",
                json!({
                    "record": "summary",
                    "command": "dataset verify",
                    "records": report.records.len(),
                    "failed": failures.len(),
                    "seed_fingerprint_ok": report.seed_fingerprint_ok,
                })
            );
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failed(format!(
            "{} of {} records failed verification",
            failures.len(),
            report.records.len()
        )))
    }
}

pub fn keygen_seed(ui: &Ui, a: KeygenSeedArgs) -> CliResult {
    if a.output.exists() && !a.force {
        return Err(invalid(format!(
            "{} already exists; pass --force to replace it",
            a.output.display()
        )));
    }
    let seed = MasterSeed::generate(&mut OsEntropy).or_failed()?;
    write_file(&a.output, format!("{}\n", seed.to_hex()).as_bytes())?;
    ui.emit(
        format!(
            "wrote master seed to {} (fingerprint {})",
            a.output.display(),
            seed.fingerprint()
        ),
        json!({
            "command": "keygen seed",
            "path": a.output,
            "fingerprint": seed.fingerprint(),
        }),
    );
    Ok(())
}

pub fn keygen_image(ui: &Ui, seed_file: Option<&Path>, a: KeygenImageArgs) -> CliResult {
    if a.mode == Mode::Explicit && a.export_seed {
        return Err(invalid("--export-seed only applies to seeded mode"));
    }
    let grid = BlockGrid::new(
        a.width,
        a.height,
        a.geometry.block_size,
        a.geometry.sub_block_size,
    )
    .or_invalid()?;
    let id = image_id(&a.image_id)?;
    let scope = key_scope(a.key_scope);
    let manifest = match a.mode {
        Mode::Seeded => {
            let seed = load_seed(seed_file)?;
            ImageKeyManifest::seeded(id, grid, &seed, a.export_seed).with_scope(scope)
        }
        Mode::Explicit => {
            let table = generate_scoped_image_key(&mut OsEntropy, &grid, scope).or_failed()?;
            ImageKeyManifest::explicit(id, grid, table)
        }
    };
    write_file(&a.output, &serialize_manifest(&manifest))?;
    ui.emit(
        format!(
            "wrote key manifest for {}x{} to {}",
            a.width,
            a.height,
            a.output.display()
        ),
        json!({
            "command": "keygen image",
            "path": a.output,
            "subblocks": grid.subblock_count(),
        }),
    );
    Ok(())
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// `(prediction, ground truth)` pairs, matched by relative path.
fn metric_pairs(pred: &Path, gt: &Path) -> Result<Vec<(PathBuf, PathBuf)>, CliError> {
    if pred.is_file() && gt.is_file() {
        return Ok(vec![(pred.to_path_buf(), gt.to_path_buf())]);
    }
    require_dir(gt, "ground-truth directory")?;
    require_dir(pred, "prediction directory")?;
    let mut pairs = Vec::new();
    for entry in WalkDir::new(gt).sort_by_file_name() {
        let entry = entry.or_failed()?;
        if !entry.file_type().is_file() || !is_png(entry.path()) {
            continue;
        }
        let rel = entry.path().strip_prefix(gt).unwrap();
        let p = pred.join(rel);
        if !p.is_file() {
            return Err(invalid(format!(
                "no prediction {} for ground truth {}",
                p.display(),
                entry.path().display()
            )));
        }
        pairs.push((p, entry.path().to_path_buf()));
    }
    if pairs.is_empty() {
        return Err(invalid(format!("no PNG label maps under {}", gt.display())));
    }
    Ok(pairs)
}

fn load_labels(path: &Path) -> Result<LabelMap, CliError> {
    imageio::load_labels(path).map_err(image_error)
}

pub fn metrics(ui: &Ui, a: MetricsArgs) -> CliResult {
    let empty = ConfusionMatrix::new(a.num_classes, a.ignore_label).or_invalid()?;
    let report_paths = match &a.report_out {
        Some(p) => {
            let jsonl = p.with_extension("jsonl");
            if &jsonl == p {
                return Err(invalid(
                    "--report-out is the text report; its .jsonl twin is written alongside",
                ));
            }
            Some((p.clone(), jsonl))
        }
        None => None,
    };
    let pairs = metric_pairs(&a.pred, &a.gt)?;
    ui.note(format!("scoring {} label maps", pairs.len()));
    let partials: Vec<Result<ConfusionMatrix, CliError>> = pairs
        .par_iter()
        .map(|(p, g)| {
            let mut cm = empty.clone();
            cm.accumulate(&load_labels(p)?, &load_labels(g)?)
                .map_err(|e| invalid(format!("{} vs {}: {e}", p.display(), g.display())))?;
            Ok(cm)
        })
        .collect();
    let mut cm = empty;
    for part in partials {
        cm.merge(&part?).or_failed()?;
    }
    let report = compute_metrics(&cm).map_err(|e| match e {
        MetricsError::NoPixels => invalid("every ground-truth pixel carries the ignore label"),
        e => failed(e),
    })?;
    let table = report.format_table();
    let lines = report.to_json_lines();
    match ui.format {
        crate::OutputFormat::Text => print!("{table}"),
        crate::OutputFormat::Machine => print!("{lines}"),
    }
    if let Some((text_path, json_path)) = report_paths {
        write_file(&text_path, table.as_bytes())?;
        write_file(&json_path, lines.as_bytes())?;
    }
    Ok(())
}

fn analysis_error(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::Inconsistent { .. } | AnalysisError::Cipher(_) => failed(e),
        _ => invalid(e),
    }
}

pub fn keyspace(ui: &Ui, a: KeyspaceArgs) -> CliResult {
    let mode = match a.independence {
        Independence::Independent => IndependenceMode::Independent,
        Independence::Shared => IndependenceMode::SharedPixelPerm,
    };
    let mut report = keyspace_bits(a.block_size, a.sub_block_size, mode).map_err(analysis_error)?;
    if let Some((w, h)) = a.image_size {
        report = report
            .with_image(w, h, key_scope(a.key_scope))
            .map_err(analysis_error)?;
    }
    let mut record = serde_json::to_value(&report).or_failed()?;
    record["command"] = json!("analyze keyspace");
    ui.emit(report.format_text().trim_end(), record);
    Ok(())
}

pub fn leak(ui: &Ui, a: LeakArgs) -> CliResult {
    require_file(&a.input, "input image")?;
    let img = load_image(&a.input)?;
    let leak = subblock_sum_leak(&img, a.sub_block_size).map_err(analysis_error)?;
    if let Some(p) = &a.png_out {
        save_png(p, &leak.to_visualization())?;
    }
    if let Some(p) = &a.matrix_out {
        let mut bytes = serde_json::to_vec(&leak).or_failed()?;
        bytes.push(b'\n');
        write_file(p, &bytes)?;
    }
    ui.emit(
        format!(
            "leak of {}: {}x{} cells of {}x{} pixels, 3 channel sums each",
            a.input.display(),
            leak.cols,
            leak.rows,
            leak.sub_block_size,
            leak.sub_block_size
        ),
        json!({
            "command": "analyze leak",
            "cols": leak.cols,
            "rows": leak.rows,
            "sub_block_size": leak.sub_block_size,
            "png_out": a.png_out,
            "matrix_out": a.matrix_out,
        }),
    );
    Ok(())
}

fn fmt_coef(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:+.4}"))
}

pub fn correlation(ui: &Ui, a: CorrelationArgs) -> CliResult {
    require_file(&a.input, "input image")?;
    let img = load_image(&a.input)?;
    let r = adjacent_correlation(&img).map_err(analysis_error)?;
    let mut text = format!("{:<12} {:>8} {:>8} {:>8}\n", "direction", "R", "G", "B");
    for (name, row) in [
        ("horizontal", r.horizontal),
        ("vertical", r.vertical),
        ("diagonal", r.diagonal),
    ] {
        text.push_str(&format!(
            "{:<12} {:>8} {:>8} {:>8}\n",
            name,
            fmt_coef(row[0]),
            fmt_coef(row[1]),
            fmt_coef(row[2])
        ));
    }
    text.push_str(&format!(
        "mean |r|: {}",
        r.mean_abs()
            .map_or_else(|| "-".into(), |v| format!("{v:.4}"))
    ));
    let mut record = serde_json::to_value(&r).or_failed()?;
    record["command"] = json!("analyze correlation");
    record["mean_abs"] = json!(r.mean_abs());
    ui.emit(text, record);
    Ok(())
}

pub fn attack(ui: &Ui, a: AttackArgs) -> CliResult {
    let id = image_id(&a.image_id)?;
    require_file(&a.plain, "plaintext image")?;
    require_file(&a.cipher, "ciphertext image")?;
    let plain = load_image(&a.plain)?;
    let cipher = load_image(&a.cipher)?;
    let grid = grid_for(&plain, &a.plain, &a.geometry)?;
    let outcome = known_plaintext_attack(&plain, &cipher, &grid).map_err(analysis_error)?;
    let reproduced = encrypt_image(&plain, &outcome.keys, &grid).or_failed()? == cipher;
    let unique = outcome.unique_subblocks();
    let residual = outcome.residual_bits();
    if let Some(p) = &a.key_out {
        let manifest = ImageKeyManifest::explicit(id, grid, outcome.keys);
        write_file(p, &serialize_manifest(&manifest))?;
    }
    ui.emit(
        format!(
            "recovered keys for {} sub-blocks; {} uniquely determined; residual uncertainty {:.2} bits; re-encryption {}",
            grid.subblock_count(),
            unique,
            residual,
            if reproduced { "matches" } else { "DIFFERS" }
        ),
        json!({
            "command": "attack",
            "subblocks": grid.subblock_count(),
            "unique_subblocks": unique,
            "residual_bits": residual,
            "reencryption_matches": reproduced,
            "key_out": a.key_out,
        }),
    );
    if reproduced {
        Ok(())
    } else {
        Err(failed("recovered keys do not reproduce the ciphertext"))
    }
}
