use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nlretinex::{load_image, save_image, BitDepth, ColorImage, NLGradWeights, NLWeights};
use nlretinex_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nlretinex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlretinex"))
        .args(args)
        .env_remove("NLRETINEX_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn filled(value: f64) -> ColorImage<f64> {
    ColorImage::filled(16, 16, 3, value)
}

fn dark_scene(seed: u64) -> ColorImage<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ColorImage::from_fn(16, 16, 3, |c, x, y| {
        let base = if (x / 4 + y / 4) % 2 == 0 { 0.2 } else { 0.1 };
        base + 0.02 * c as f64 + 0.01 * rng.random::<f64>()
    })
}

// small windows and few iterations keep the end-to-end runs fast
const FAST: [&str; 6] = ["--set", "weights.nu=2", "--set", "weights.nu_hat=2", "--max-iters", "15"];

/// Parses a CSV of `path,psnr_db,ssim` rows.
fn metric_rows(text: &str) -> Vec<(String, f64, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn metrics_of_a_directory_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    save_image(&dark_scene(1), dir.path().join("a.png"), BitDepth::Eight).unwrap();
    save_image(&dark_scene(2), dir.path().join("b.png"), BitDepth::Eight).unwrap();
    let out = nlretinex(&["metrics", s(dir.path()), s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = metric_rows(&stdout(&out));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].0, "mean");
    for (_, p, ss) in rows {
        assert_eq!(p, 99.0);
        assert!((ss - 1.0).abs() < 1e-12);
    }
}

#[test]
fn metrics_averages_two_constant_offsets() {
    let (enh, gt) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    // 8-bit codes so the files hold the values exactly
    save_image(&filled(100.0 / 255.0), enh.path().join("a.png"), BitDepth::Eight).unwrap();
    save_image(&filled(110.0 / 255.0), gt.path().join("a.png"), BitDepth::Eight).unwrap();
    save_image(&filled(100.0 / 255.0), enh.path().join("b.png"), BitDepth::Eight).unwrap();
    save_image(&filled(120.0 / 255.0), gt.path().join("b.png"), BitDepth::Eight).unwrap();
    // no counterpart: skipped with a warning
    save_image(&filled(0.5), enh.path().join("c.png"), BitDepth::Eight).unwrap();
    let csv = enh.path().join("m.csv");
    let out = nlretinex(&["metrics", s(enh.path()), s(gt.path()), "--out", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("c.png"));
    let rows = metric_rows(&fs::read_to_string(&csv).unwrap());
    let (pa, pb) = (20.0 * (255.0f64 / 10.0).log10(), 20.0 * (255.0f64 / 20.0).log10());
    assert_eq!(rows.len(), 3);
    assert!((rows[0].1 - pa).abs() < 1e-9);
    assert!((rows[1].1 - pb).abs() < 1e-9);
    assert!((rows[2].1 - (pa + pb) / 2.0).abs() < 1e-9);
    // constant images: the SSIM structure term is 1 and luminance decides
    assert!(rows[0].2 < 1.0 && rows[0].2 > rows[1].2);
}

#[test]
fn metrics_without_common_files_is_a_usage_error() {
    let (enh, gt) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_image(&filled(0.5), enh.path().join("a.png"), BitDepth::Eight).unwrap();
    save_image(&filled(0.5), gt.path().join("b.png"), BitDepth::Eight).unwrap();
    let out = nlretinex(&["metrics", s(enh.path()), s(gt.path())]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains(s(enh.path())) && err.contains(s(gt.path())), "{err}");
}

#[test]
fn invalid_parameters_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    save_image(&filled(0.3), &img, BitDepth::Eight).unwrap();
    let o = dir.path().join("out");
    for extra in [
        &["--alpha", "-1"][..],
        &["--set", "bogus=1"],
        &["--set", "output_bits=12"],
        &["--set", "weights.nu=0"],
    ] {
        let mut args = vec!["enhance", s(&img), "-o", s(&o)];
        args.extend_from_slice(extra);
        let out = nlretinex(&args);
        assert_eq!(code(&out), 2, "{extra:?}: {}", stderr(&out));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_nlretinex"))
        .args(["enhance", s(&img), "-o", s(&o)])
        .env("NLRETINEX_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out = nlretinex(&["enhance", "-o", s(&o)]);
    assert_eq!(code(&out), 2, "no inputs");
}

#[test]
fn unreadable_image_fails_the_batch_but_not_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("in");
    fs::create_dir(&inputs).unwrap();
    save_image(&dark_scene(3), inputs.join("good.png"), BitDepth::Eight).unwrap();
    fs::write(inputs.join("bad.png"), b"not an image").unwrap();
    let o = dir.path().join("out");
    let mut args = vec!["enhance", s(&inputs), "-o", s(&o)];
    args.extend_from_slice(&FAST);
    let out = nlretinex(&args);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(o.join("good.png").is_file());
    assert!(!o.join("bad.png").exists());
    let summary = fs::read_to_string(o.join("summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.contains("bad.png") && l.contains("error")));
    assert!(summary.lines().any(|l| l.contains("good.png") && l.contains(",ok,")));
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    save_image(&dark_scene(4), &img, BitDepth::Eight).unwrap();
    let first = dir.path().join("first");
    let mut args = vec!["enhance", s(&img), "-o", s(&first), "--alpha", "0.07", "--seed", "9"];
    args.extend_from_slice(&FAST);
    let out = nlretinex(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let effective = first.join("effective_config.toml");
    let cfg = RunConfig::from_toml_str(&fs::read_to_string(&effective).unwrap()).unwrap();
    assert_eq!(cfg.solver.alpha, 0.07);
    assert_eq!(cfg.solver.max_iters, 15);
    assert_eq!(cfg.weights.nu, 2);
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.solver.seed, 9);

    let second = dir.path().join("second");
    let out = nlretinex(&["enhance", "-c", s(&effective), "-o", s(&second)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut again = RunConfig::from_toml_str(&fs::read_to_string(second.join("effective_config.toml")).unwrap()).unwrap();
    again.output_dir = cfg.output_dir.clone();
    assert_eq!(again, cfg);
    assert_eq!(fs::read(first.join("a.png")).unwrap(), fs::read(second.join("a.png")).unwrap());
}

#[test]
fn constant_gray_stays_gray() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("gray.png");
    save_image(&filled(128.0 / 255.0), &img, BitDepth::Eight).unwrap();
    let o = dir.path().join("out");
    let mut args = vec!["enhance", s(&img), "-o", s(&o)];
    args.extend_from_slice(&FAST);
    let out = nlretinex(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let result: ColorImage<f64> = load_image(o.join("gray.png")).unwrap();
    let mean = result.as_slice().iter().sum::<f64>() / result.as_slice().len() as f64;
    assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    let spread = result.as_slice().iter().fold(0.0f64, |a, &v| a.max((v - mean).abs()));
    assert!(spread < 0.02);
}

#[test]
fn decompose_reconstructs_input_with_weak_priors() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("scene.png");
    let img = dark_scene(5);
    save_image(&img, &img_path, BitDepth::Sixteen).unwrap();
    let o = dir.path().join("out");
    let out = nlretinex(&[
        "decompose",
        s(&img_path),
        "-o",
        s(&o),
        "--no-color-correct",
        "--no-noise-term",
        "--gradient-fidelity",
        "off",
        "--alpha",
        "1e-5",
        "--beta",
        "1e-5",
        "--max-iters",
        "100",
        "--set",
        "weights.nu=2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for tag in ["R", "L", "N", "corrected", "guide"] {
        assert!(o.join(format!("scene_{tag}.png")).is_file(), "{tag}");
    }
    assert!(o.join("scene_diagnostics.csv").is_file());
    assert!(!o.join("scene.png").exists());

    let input: ColorImage<f64> = load_image(&img_path).unwrap();
    let r: ColorImage<f64> = load_image(o.join("scene_R.png")).unwrap();
    let l: ColorImage<f64> = load_image(o.join("scene_L.png")).unwrap();
    let rebuilt = ColorImage::from_fn(16, 16, 3, |c, x, y| r.at(c, x, y) * l.at(0, x, y));
    let db = nlretinex::psnr(&rebuilt, &input).unwrap();
    assert!(db > 30.0, "R∘L vs input: {db} dB");
}

#[test]
fn weights_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("w.png");
    save_image(&dark_scene(6), &img, BitDepth::Eight).unwrap();
    let o = dir.path().join("out");
    let out = nlretinex(&["weights-dump", s(&img), "-o", s(&o), "--set", "weights.nu=2", "--set", "weights.nu_hat=1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let w = NLWeights::<f64>::read_from(&mut fs::File::open(o.join("w_w.nlw")).unwrap()).unwrap();
    assert_eq!(w.dims(), (16, 16));
    assert_eq!(w.len(), 25);
    for i in 0..w.pixels() {
        let sum: f64 = w.row(i).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
    let wh = NLGradWeights::<f64>::read_from(&mut fs::File::open(o.join("w_w_hat.nlw")).unwrap()).unwrap();
    assert_eq!(wh.len(), 9);
    // each file holds exactly its own table
    assert!(NLGradWeights::<f64>::read_from(&mut fs::File::open(o.join("w_w.nlw")).unwrap()).is_err());
}

#[test]
fn ground_truth_dir_writes_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (low, high) = (dir.path().join("low"), dir.path().join("high"));
    fs::create_dir(&low).unwrap();
    fs::create_dir(&high).unwrap();
    save_image(&dark_scene(7), low.join("x.png"), BitDepth::Eight).unwrap();
    save_image(&filled(0.5), high.join("x.png"), BitDepth::Eight).unwrap();
    let o = dir.path().join("out");
    let mut args = vec!["enhance", s(&low), "--gt-dir", s(&high), "-o", s(&o), "--precision", "f32"];
    args.extend_from_slice(&FAST);
    let out = nlretinex(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = metric_rows(&fs::read_to_string(o.join("metrics.csv")).unwrap());
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].1, rows[1].1);
    assert!(stdout(&out).contains("mean: psnr="));
}
