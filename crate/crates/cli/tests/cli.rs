use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde_json::Value;

fn ppss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppss"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_rgb(path: &Path, w: u32, h: u32, salt: u32) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([
            (x * 13 + y * 7 + salt) as u8,
            (x * y + salt * 5) as u8,
            (x ^ (y * 3) ^ salt) as u8,
        ])
    })
    .save(path)
    .unwrap();
}

fn write_labels(path: &Path, w: u32, h: u32, salt: u32) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    GrayImage::from_fn(w, h, |x, y| {
        Luma([if (x + y) % 11 == 0 {
            255
        } else {
            ((x / 4 + y + salt) % 5) as u8
        }])
    })
    .save(path)
    .unwrap();
}

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Env {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(env.path("seed.hex"), format!("{}\n", "3c".repeat(32))).unwrap();
        env
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

#[test]
fn seeded_encrypt_then_decrypt_is_byte_identical() {
    let env = Env::new();
    let plain = env.path("img.png");
    write_rgb(&plain, 64, 32, 1);
    let enc = env.path("enc.png");
    let dec = env.path("dec.png");
    let seed = env.path("seed.hex");
    let out = ppss(&[
        "--seed-file",
        s(&seed),
        "encrypt",
        "--in",
        s(&plain),
        "--out",
        s(&enc),
        "--sub-block-size",
        "4",
        "--image-id",
        "frame-7",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_ne!(std::fs::read(&enc).unwrap(), std::fs::read(&plain).unwrap());

    let out = ppss(&[
        "--seed-file",
        s(&seed),
        "decrypt",
        "--in",
        s(&enc),
        "--out",
        s(&dec),
        "--sub-block-size",
        "4",
        "--image-id",
        "frame-7",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read(&dec).unwrap(), std::fs::read(&plain).unwrap());

    // A different image id does not decrypt.
    let wrong = env.path("wrong.png");
    ppss(&[
        "--seed-file",
        s(&seed),
        "decrypt",
        "--in",
        s(&enc),
        "--out",
        s(&wrong),
        "--sub-block-size",
        "4",
        "--image-id",
        "frame-8",
    ]);
    assert_ne!(
        std::fs::read(&wrong).unwrap(),
        std::fs::read(&plain).unwrap()
    );
}

#[test]
fn seeded_encryption_is_deterministic() {
    let env = Env::new();
    let plain = env.path("img.png");
    write_rgb(&plain, 32, 32, 2);
    let seed = env.path("seed.hex");
    for name in ["a.png", "b.png"] {
        let out = ppss(&[
            "--seed-file",
            s(&seed),
            "encrypt",
            "--in",
            s(&plain),
            "--out",
            s(&env.path(name)),
            "--sub-block-size",
            "8",
            "--block-size",
            "16",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(
        std::fs::read(env.path("a.png")).unwrap(),
        std::fs::read(env.path("b.png")).unwrap()
    );
}

#[test]
fn manifest_round_trips_in_both_modes() {
    let env = Env::new();
    let plain = env.path("img.png");
    write_rgb(&plain, 48, 16, 3);
    let seed = env.path("seed.hex");
    for (mode, extra) in [("explicit", vec![]), ("seeded", vec!["--export-seed"])] {
        let enc = env.path(&format!("{mode}.png"));
        let key = env.path(&format!("{mode}.json"));
        let dec = env.path(&format!("{mode}-dec.png"));
        let mut args = vec![
            "--seed-file",
            s(&seed),
            "encrypt",
            "--in",
            s(&plain),
            "--out",
            s(&enc),
            "--sub-block-size",
            "2",
            "--mode",
            mode,
            "--key-out",
            s(&key),
        ];
        args.extend(extra);
        let out = ppss(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        // The manifest alone is enough to decrypt.
        let out = ppss(&[
            "decrypt",
            "--in",
            s(&enc),
            "--out",
            s(&dec),
            "--key",
            s(&key),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert_eq!(std::fs::read(&dec).unwrap(), std::fs::read(&plain).unwrap());
    }
    let m: Value =
        serde_json::from_slice(&std::fs::read(env.path("explicit.json")).unwrap()).unwrap();
    assert_eq!(m["mode"], "explicit");
    assert_eq!(m["keys"].as_array().unwrap().len(), 48 * 16 / 4);
}

#[test]
fn seeded_manifest_without_seed_needs_matching_seed_file() {
    let env = Env::new();
    let plain = env.path("img.png");
    write_rgb(&plain, 16, 16, 4);
    let seed = env.path("seed.hex");
    let enc = env.path("enc.png");
    let key = env.path("key.json");
    let out = ppss(&[
        "--seed-file",
        s(&seed),
        "encrypt",
        "--in",
        s(&plain),
        "--out",
        s(&enc),
        "--sub-block-size",
        "4",
        "--key-out",
        s(&key),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&key).unwrap();
    assert!(
        !text.contains(&"3c".repeat(32)),
        "seed leaked into manifest"
    );

    let dec = env.path("dec.png");
    let out = ppss(&[
        "decrypt",
        "--in",
        s(&enc),
        "--out",
        s(&dec),
        "--key",
        s(&key),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--seed-file"));

    let other = env.path("other.hex");
    std::fs::write(&other, "11".repeat(32)).unwrap();
    let out = ppss(&[
        "--seed-file",
        s(&other),
        "decrypt",
        "--in",
        s(&enc),
        "--out",
        s(&dec),
        "--key",
        s(&key),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("fingerprint"));
    assert!(!dec.exists());
}

#[test]
fn metrics_on_identical_directories_are_perfect() {
    let env = Env::new();
    for (i, rel) in ["a.png", "sub/b.png", "sub/c.png"].iter().enumerate() {
        write_labels(&env.path("gt").join(rel), 32, 24, i as u32);
        write_labels(&env.path("pred").join(rel), 32, 24, i as u32);
    }
    let (pred, gt) = (env.path("pred"), env.path("gt"));
    let args = [
        "metrics",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--num-classes",
        "5",
    ];
    let out = ppss(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let summary: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(summary, ["100.00", "100.00", "100.00"]);

    let mut machine = vec!["--output-format", "machine"];
    machine.extend(args);
    let out = ppss(&machine);
    let first: Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(first["record"], "summary");
    for key in ["aAcc", "mIoU", "mAcc"] {
        assert_eq!(first[key], 100.0);
    }
}

#[test]
fn metrics_single_files_and_report_files() {
    let env = Env::new();
    write_labels(&env.path("gt.png"), 16, 16, 0);
    write_labels(&env.path("pred.png"), 16, 16, 1);
    let report = env.path("report.txt");
    let out = ppss(&[
        "metrics",
        "--pred",
        s(&env.path("pred.png")),
        "--gt",
        s(&env.path("gt.png")),
        "--num-classes",
        "5",
        "--report-out",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(&report).unwrap(), stdout(&out));
    let jsonl = std::fs::read_to_string(env.path("report.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 6);

    // Labels outside the class range are an input error.
    let out = ppss(&[
        "metrics",
        "--pred",
        s(&env.path("pred.png")),
        "--gt",
        s(&env.path("gt.png")),
        "--num-classes",
        "3",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn keyspace_report() {
    let out = ppss(&["analyze", "keyspace", "--M", "16", "--Ms", "2"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("16.34"), "{}", stdout(&out));
    assert!(stdout(&out).contains("82944"));

    let out = ppss(&[
        "--output-format",
        "machine",
        "analyze",
        "keyspace",
        "--M",
        "16",
        "--Ms",
        "2",
    ]);
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert!((v["per_subblock_bits"].as_f64().unwrap() - 16.34).abs() < 0.01);
    assert_eq!(v["per_subblock_count"], "82944");
}

#[test]
fn dataset_encrypt_and_verify() {
    let env = Env::new();
    let input = env.path("in");
    for (i, rel) in ["x.png", "city/y.png"].iter().enumerate() {
        write_rgb(&input.join(rel), 32, 32, i as u32);
        write_labels(&input.join("gtFine").join(rel), 32, 32, i as u32);
    }
    let out_dir = env.path("out");
    let seed = env.path("seed.hex");
    let out = ppss(&[
        "--master-seed-file",
        s(&seed),
        "--output-format",
        "machine",
        "dataset",
        "encrypt",
        "--in",
        s(&input),
        "--out",
        s(&out_dir),
        "--sub-block-size",
        "4",
        "--labels-subdir",
        "gtFine",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["records"], 2);
    assert_eq!(v["labelled"], 2);

    let out = ppss(&[
        "--seed-file",
        s(&seed),
        "dataset",
        "verify",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("2 passed, 0 failed"));

    // Tampering is a processing failure.
    write_rgb(&out_dir.join("x.png"), 32, 32, 9);
    let out = ppss(&[
        "--seed-file",
        s(&seed),
        "dataset",
        "verify",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("FAIL x.png"));
}

#[test]
fn attack_recovers_working_keys() {
    let env = Env::new();
    let plain = env.path("p.png");
    write_rgb(&plain, 16, 16, 5);
    let enc = env.path("c.png");
    let seed = env.path("seed.hex");
    ppss(&[
        "--seed-file",
        s(&seed),
        "encrypt",
        "--in",
        s(&plain),
        "--out",
        s(&enc),
        "--sub-block-size",
        "4",
    ]);
    let key = env.path("recovered.json");
    let out = ppss(&[
        "--output-format",
        "machine",
        "attack",
        "--plain",
        s(&plain),
        "--cipher",
        s(&enc),
        "--sub-block-size",
        "4",
        "--key-out",
        s(&key),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["reencryption_matches"], true);
    let dec = env.path("dec.png");
    let out = ppss(&[
        "decrypt",
        "--in",
        s(&enc),
        "--out",
        s(&dec),
        "--key",
        s(&key),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read(&dec).unwrap(), std::fs::read(&plain).unwrap());
}

#[test]
fn leak_and_correlation_outputs() {
    let env = Env::new();
    let img = env.path("i.png");
    write_rgb(&img, 32, 16, 6);
    let png = env.path("leak.png");
    let matrix = env.path("leak.json");
    let out = ppss(&[
        "analyze",
        "leak",
        "--in",
        s(&img),
        "--sub-block-size",
        "4",
        "--png-out",
        s(&png),
        "--matrix-out",
        s(&matrix),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let vis = image::open(&png).unwrap();
    assert_eq!((vis.width(), vis.height()), (8, 4));
    let m: Value = serde_json::from_slice(&std::fs::read(&matrix).unwrap()).unwrap();
    assert_eq!(m["sums"].as_array().unwrap().len(), 8 * 4 * 3);

    let out = ppss(&[
        "--output-format",
        "machine",
        "analyze",
        "correlation",
        "--in",
        s(&img),
    ]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["horizontal"].as_array().unwrap().len(), 3);
}

#[test]
fn keygen_never_prints_the_seed() {
    let env = Env::new();
    let path = env.path("new.hex");
    let out = ppss(&["keygen", "seed", "--out", s(&path)]);
    assert_eq!(code(&out), 0);
    let seed = std::fs::read_to_string(&path).unwrap();
    assert_eq!(seed.trim().len(), 64);
    assert!(!stdout(&out).contains(seed.trim()));
    assert_eq!(code(&ppss(&["keygen", "seed", "--out", s(&path)])), 1);
    assert_eq!(
        code(&ppss(&["keygen", "seed", "--out", s(&path), "--force"])),
        0
    );
    assert_ne!(std::fs::read_to_string(&path).unwrap(), seed);

    let key = env.path("k.json");
    let out = ppss(&[
        "keygen",
        "image",
        "--out",
        s(&key),
        "--width",
        "32",
        "--height",
        "16",
        "--sub-block-size",
        "8",
        "--image-id",
        "z",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m: Value = serde_json::from_slice(&std::fs::read(&key).unwrap()).unwrap();
    assert_eq!(m["keys"].as_array().unwrap().len(), 8);
}

#[test]
fn exit_codes() {
    let env = Env::new();
    let seed = env.path("seed.hex");
    let img = env.path("img.png");
    write_rgb(&img, 32, 32, 7);
    let out_png = env.path("out.png");

    assert_eq!(code(&ppss(&["--help"])), 0);
    assert_eq!(code(&ppss(&["--version"])), 0);
    assert_eq!(code(&ppss(&[])), 1);
    assert_eq!(code(&ppss(&["encrypt", "--bogus"])), 1);
    // --sub-block-size has no default.
    assert_eq!(
        code(&ppss(&[
            "--seed-file",
            s(&seed),
            "encrypt",
            "--in",
            s(&img),
            "--out",
            s(&out_png)
        ])),
        1
    );
    // Missing input.
    let out = ppss(&[
        "--seed-file",
        s(&seed),
        "encrypt",
        "--in",
        s(&env.path("nope.png")),
        "--out",
        s(&out_png),
        "--sub-block-size",
        "4",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(stderr(&out).lines().count(), 1);
    // Seeded mode without a seed.
    assert_eq!(
        code(&ppss(&[
            "encrypt",
            "--in",
            s(&img),
            "--out",
            s(&out_png),
            "--sub-block-size",
            "4"
        ])),
        1
    );
    // Explicit mode without somewhere to put the key.
    assert_eq!(
        code(&ppss(&[
            "encrypt",
            "--in",
            s(&img),
            "--out",
            s(&out_png),
            "--sub-block-size",
            "4",
            "--mode",
            "explicit",
        ])),
        1
    );
    // Conflicting key sources.
    assert_eq!(
        code(&ppss(&[
            "decrypt",
            "--in",
            s(&img),
            "--out",
            s(&out_png),
            "--key",
            "k.json",
            "--image-id",
            "x",
        ])),
        1
    );
    // Geometry that does not tile the image.
    let out = ppss(&[
        "--seed-file",
        s(&seed),
        "encrypt",
        "--in",
        s(&img),
        "--out",
        s(&out_png),
        "--block-size",
        "12",
        "--sub-block-size",
        "4",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("not divisible"));
    assert!(!out_png.exists(), "no output on validation failure");
    // Undecodable image data is a processing error.
    let junk = env.path("junk.png");
    std::fs::write(&junk, b"not a png at all").unwrap();
    let out = ppss(&[
        "--seed-file",
        s(&seed),
        "encrypt",
        "--in",
        s(&junk),
        "--out",
        s(&out_png),
        "--sub-block-size",
        "4",
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out_png.exists());
    // Malformed seed file.
    let bad_seed = env.path("bad.hex");
    std::fs::write(&bad_seed, "too short").unwrap();
    assert_eq!(
        code(&ppss(&[
            "--seed-file",
            s(&bad_seed),
            "encrypt",
            "--in",
            s(&img),
            "--out",
            s(&out_png),
            "--sub-block-size",
            "4",
        ])),
        1
    );
    assert_eq!(
        code(&ppss(&[
            "--threads",
            "0",
            "analyze",
            "keyspace",
            "--Ms",
            "2"
        ])),
        1
    );
    assert_eq!(
        code(&ppss(&[
            "--threads",
            "2",
            "-q",
            "analyze",
            "keyspace",
            "--Ms",
            "2"
        ])),
        0
    );
}
