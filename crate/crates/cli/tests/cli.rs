//! Integration coverage for the CLI surface the acceptance gate does not
//! already exercise: the remaining subcommands, output formats, and the
//! exit-code contract (0 success, 1 runtime failure, 2 usage error).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use waveguard::imagecore::{load_image, save_image};
use waveguard::synth::synth_image;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waveguard"))
        .args(args)
        .output()
        .unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "cli {:?} exited with {:?}: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn expect_exit(args: &[&str], code: i32) -> String {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "cli {:?}: expected exit {code}, got {:?}; stderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_corpus(dir: &Path, seed0: u64, n: usize, size: usize) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|k| {
            let path = dir.join(format!("im{k:03}.png"));
            save_image(&synth_image(seed0 + k as u64, size, size), &path).unwrap();
            path
        })
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

// ---------------------------------------------------------------------------
// make-target
// ---------------------------------------------------------------------------

#[test]
fn make_target_writes_checker_and_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("assets");
    run_ok(&["make-target", "--size", "64", "--cell", "16", "--out", out.to_str().unwrap()]);

    let target = load_image(out.join("target.png"), None).unwrap();
    assert_eq!(target.shape(), (3, 64, 64));
    // Checker corners: top-left cell bright, next cell across dark.
    assert!(target.at(0, 0, 0) > 0.9 && target.at(0, 0, 16) < 0.1);
    let mask = load_image(out.join("mask.png"), None).unwrap();
    assert_eq!(mask.shape(), (3, 64, 64));
    assert_eq!(manifest(&out)["command"], "make-target");

    expect_exit(
        &["make-target", "--size", "60", "--out", out.to_str().unwrap()],
        2,
    );
    expect_exit(
        &["make-target", "--size", "64", "--cell", "0", "--out", out.to_str().unwrap()],
        2,
    );
}

// ---------------------------------------------------------------------------
// eval fidelity
// ---------------------------------------------------------------------------

#[test]
fn eval_fidelity_reports_per_pair_and_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let clean_dir = tmp.path().join("clean");
    let clean = write_corpus(&clean_dir, 300, 3, 32);
    let prot_dir = tmp.path().join("protected");
    std::fs::create_dir_all(&prot_dir).unwrap();
    for path in &clean {
        let img = load_image(path, None).unwrap();
        let shifted = img.map(|v| (v + 0.01).min(1.0));
        save_image(&shifted, prot_dir.join(path.file_name().unwrap())).unwrap();
    }

    let out = tmp.path().join("report");
    let stdout = run_ok(&[
        "eval",
        "fidelity",
        "--clean",
        clean_dir.to_str().unwrap(),
        "--protected",
        prot_dir.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("fidelity over 3 pairs"), "stdout: {stdout}");

    let csv = std::fs::read_to_string(out.join("fidelity.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "name,psnr,ssim,linf,l2");
    // 3 pairs + mean row.
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("mean,"));
    for line in &lines[1..4] {
        let cells: Vec<&str> = line.split(',').collect();
        let psnr: f64 = cells[1].parse().unwrap();
        let linf: f64 = cells[3].parse().unwrap();
        // A uniform +0.01 shift: ~40 dB, linf ~0.01 after quantization.
        assert!(psnr > 35.0 && psnr < 45.0, "psnr {psnr}");
        assert!((linf - 0.01).abs() < 0.005, "linf {linf}");
    }
    let m = manifest(&out);
    assert_eq!(m["stats"]["pairs"], 3);
    assert!(m["stats"]["mean_psnr"].as_f64().unwrap() > 35.0);
}

// ---------------------------------------------------------------------------
// eval spectrum
// ---------------------------------------------------------------------------

#[test]
fn eval_spectrum_writes_maps_and_energy_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let clean_dir = tmp.path().join("clean");
    write_corpus(&clean_dir, 400, 1, 32);
    let prot_dir = tmp.path().join("protected");
    std::fs::create_dir_all(&prot_dir).unwrap();
    let img = load_image(clean_dir.join("im000.png"), None).unwrap();
    // High-frequency stripe perturbation so the detail subbands are hot.
    let mut stripped = img.clone();
    for y in 0..32 {
        for x in 0..32 {
            let s = if x % 2 == 0 { 0.02 } else { -0.02 };
            for c in 0..3 {
                let v = (stripped.at(c, y, x) + s).clamp(0.0, 1.0);
                *stripped.at_mut(c, y, x) = v;
            }
        }
    }
    save_image(&stripped, prot_dir.join("im000.png")).unwrap();

    let out = tmp.path().join("report");
    run_ok(&[
        "eval",
        "spectrum",
        "--clean",
        clean_dir.to_str().unwrap(),
        "--protected",
        prot_dir.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);

    for kind in ["fft", "ll", "lh", "hl", "hh"] {
        let map = out.join(format!("im000.{kind}.png"));
        assert!(map.exists(), "missing {}", map.display());
        let t = load_image(&map, None).unwrap();
        assert_eq!(t.shape().0, 3);
    }
    let csv = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "name,fft_min,fft_max,lh_energy,hl_energy,hh_energy");
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "im000");
    let lh: f64 = cells[3].parse().unwrap();
    let hl: f64 = cells[4].parse().unwrap();
    // The stripes alternate along x, so the horizontal-difference band
    // carries almost all of the perturbation energy.
    assert!(lh > 10.0 * hl, "lh {lh} should dominate hl {hl} for x-alternating stripes");
}

// ---------------------------------------------------------------------------
// pretrain-surrogate
// ---------------------------------------------------------------------------

#[test]
fn pretrain_surrogate_writes_checkpoint_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_corpus(&data, 500, 4, 32);
    let out = tmp.path().join("pre");
    run_ok(&[
        "pretrain-surrogate",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "2",
        "--size",
        "32",
    ]);

    assert!(out.join("surrogate.wgck").exists());
    let csv = std::fs::read_to_string(out.join("pretrain_report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let loss: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
    }
    let m = manifest(&out);
    assert_eq!(m["command"], "pretrain-surrogate");
    assert!(m["checkpoint_sha256"]
        .as_object()
        .unwrap()
        .keys()
        .any(|k| k.ends_with("surrogate.wgck")));

    // The written encoder is loadable by eval (smoke).
    let clean_dir = tmp.path().join("clean");
    write_corpus(&clean_dir, 600, 2, 32);
    let prot_dir = tmp.path().join("protected");
    std::fs::create_dir_all(&prot_dir).unwrap();
    for k in 0..2 {
        let name = format!("im{k:03}.png");
        let img = load_image(clean_dir.join(&name), None).unwrap();
        save_image(&img.map(|v| (v + 0.02).min(1.0)), prot_dir.join(&name)).unwrap();
    }
    let ls_out = tmp.path().join("ls");
    run_ok(&[
        "eval",
        "latent-shift",
        "--clean",
        clean_dir.to_str().unwrap(),
        "--protected",
        prot_dir.to_str().unwrap(),
        "--out",
        ls_out.to_str().unwrap(),
        "--surrogate",
        out.join("surrogate.wgck").to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(ls_out.join("latent_shift.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}

// ---------------------------------------------------------------------------
// exit-code contract
// ---------------------------------------------------------------------------

#[test]
fn usage_errors_exit_two_runtime_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_corpus(&data, 700, 2, 32);
    let out = tmp.path().join("out");

    // Unknown config key: usage error.
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"epohcs": 3}"#).unwrap();
    let stderr = expect_exit(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ],
        2,
    );
    assert!(stderr.contains("bad.json"), "stderr should name the file: {stderr}");

    // Invalid flag values: usage errors (clap and validation paths).
    expect_exit(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--epsilon",
            "2.0",
        ],
        2,
    );
    expect_exit(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--size",
            "60",
        ],
        2,
    );

    // Empty data directory: usage error.
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    expect_exit(
        &[
            "train",
            "--data",
            empty.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        2,
    );

    // Misaligned eval corpora: usage error naming the missing stem.
    let lonely = tmp.path().join("lonely");
    write_corpus(&lonely, 800, 1, 32);
    let stderr = expect_exit(
        &[
            "eval",
            "fidelity",
            "--clean",
            data.to_str().unwrap(),
            "--protected",
            lonely.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        2,
    );
    assert!(stderr.contains("misaligned"), "stderr: {stderr}");

    // Missing checkpoint file: runtime failure, not usage.
    expect_exit(
        &[
            "protect",
            "--ckpt",
            tmp.path().join("nope.wgck").to_str().unwrap(),
            "--input",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        1,
    );

    // Corrupt checkpoint: runtime failure.
    let bad_ckpt = tmp.path().join("corrupt.wgck");
    std::fs::write(&bad_ckpt, b"not a checkpoint").unwrap();
    expect_exit(
        &[
            "protect",
            "--ckpt",
            bad_ckpt.to_str().unwrap(),
            "--input",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        1,
    );

    // --batch 0: usage error.
    expect_exit(
        &[
            "protect",
            "--ckpt",
            bad_ckpt.to_str().unwrap(),
            "--input",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--batch",
            "0",
        ],
        2,
    );
}

// ---------------------------------------------------------------------------
// stem pairing across extensions
// ---------------------------------------------------------------------------

#[test]
fn eval_pairs_jpeg_clean_with_png_protected() {
    let tmp = tempfile::tempdir().unwrap();
    let clean_dir = tmp.path().join("clean");
    std::fs::create_dir_all(&clean_dir).unwrap();
    // Write the clean image as a real JPEG; protect always emits PNG, so
    // pairing must go by stem, not by full file name.
    let img = synth_image(900, 32, 32);
    let mut buf = image::RgbImage::new(32, 32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            p.0[c] = (img.at(c, y as usize, x as usize) * 255.0).round() as u8;
        }
    }
    buf.save(clean_dir.join("photo.jpg")).unwrap();

    let prot_dir = tmp.path().join("protected");
    std::fs::create_dir_all(&prot_dir).unwrap();
    let back = load_image(clean_dir.join("photo.jpg"), None).unwrap();
    save_image(&back, prot_dir.join("photo.png")).unwrap();

    let out = tmp.path().join("report");
    let stdout = run_ok(&[
        "eval",
        "fidelity",
        "--clean",
        clean_dir.to_str().unwrap(),
        "--protected",
        prot_dir.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("fidelity over 1 pairs"), "stdout: {stdout}");
    // Identical content round-tripped: PSNR is reported as inf.
    let csv = std::fs::read_to_string(out.join("fidelity.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("photo,inf"), "csv: {csv}");
}
