use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rldiff::net::{load_params, NetConfig, NetworkParams};
use rldiff::pnm::{decode_pgm, decode_ppm, load_image};

fn rldiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rldiff"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rldiff(args);
    assert!(
        out.status.success(),
        "rldiff {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "gen-corpus",
        "--out",
        s(&out),
        "--count",
        &count.to_string(),
        "--height",
        "16",
        "--width",
        "20",
        "--seed",
        &seed.to_string(),
    ]);
    out
}

const TINY: &[&str] = &[
    "--trunk-layers",
    "2",
    "--trunk-channels",
    "3",
    "--batch-size",
    "2",
    "--patch-size",
    "12",
    "--steps",
    "3",
];

fn train(dir: &Path, corpus: &Path, tag: &str, extra: &[&str]) -> (PathBuf, PathBuf) {
    let ck = dir.join(format!("{tag}.ckpt"));
    let log = dir.join(format!("{tag}.csv"));
    let mut args = vec![
        "train",
        "--corpus",
        s(corpus),
        "--out",
        s(&ck),
        "--log",
        s(&log),
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args);
    (ck, log)
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "imgs", 3, 1);
    let flags = [
        "--noise",
        "gaussian",
        "--sigma",
        "25",
        "--episodes",
        "4",
        "--seed",
        "7",
    ];
    let (ck1, log1) = train(dir.path(), &c, "a", &flags);
    let (ck2, log2) = train(dir.path(), &c, "b", &flags);
    let l1 = fs::read_to_string(&log1).unwrap();
    assert_eq!(l1, fs::read_to_string(&log2).unwrap());
    assert_eq!(fs::read(&ck1).unwrap(), fs::read(&ck2).unwrap());
    assert!(l1.starts_with("episode,mean_reward,mean_return,value_loss,policy_obj,lr,wall_ms\n"));
    assert_eq!(l1.lines().count(), 5);
}

#[test]
fn zero_episodes_keep_initial_params() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "imgs", 2, 2);
    let (ck, _) = train(
        dir.path(),
        &c,
        "z",
        &["--episodes", "0", "--init-seed", "5"],
    );
    let init = NetworkParams::init(NetConfig {
        trunk_layers: 2,
        trunk_channels: 3,
        shared_trunk: true,
        init_seed: 5,
    })
    .unwrap();
    assert_eq!(load_params(&ck).unwrap(), init);
}

#[test]
fn stage_two_requires_checkpoint_then_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "imgs", 2, 3);
    let out = rldiff(&[
        "train",
        "--corpus",
        s(&c),
        "--stage",
        "2",
        "--out",
        s(&dir.path().join("x.ckpt")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage-1 checkpoint"));
    assert!(!dir.path().join("x.ckpt").exists());

    let (ck, _) = train(dir.path(), &c, "s1", &["--episodes", "2"]);
    let (ck2, log2) = train(
        dir.path(),
        &c,
        "s2",
        &["--episodes", "2", "--stage", "2", "--resume", s(&ck)],
    );
    assert!(ck2.exists());
    assert_eq!(fs::read_to_string(log2).unwrap().lines().count(), 3);

    // a network shape that contradicts the checkpoint is rejected
    let bad = rldiff(&[
        "train",
        "--corpus",
        s(&c),
        "--stage",
        "2",
        "--resume",
        s(&ck),
        "--trunk-channels",
        "9",
        "--out",
        s(&dir.path().join("bad.ckpt")),
    ]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("trunk_channels"));
}

#[test]
fn denoise_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "imgs", 2, 4);
    let (ck, _) = train(dir.path(), &c, "m", &["--episodes", "3"]);
    let clean = c.join("img0000.pgm");
    let noisy = dir.path().join("noisy.pgm");
    ok(&[
        "noise",
        "--input",
        s(&clean),
        "--output",
        s(&noisy),
        "--sigma",
        "25",
        "--seed",
        "1",
    ]);

    let outdir = dir.path().join("out");
    fs::create_dir(&outdir).unwrap();
    let den = outdir.join("den.pgm");
    let args = [
        "denoise",
        "--model",
        s(&ck),
        "--input",
        s(&noisy),
        "--output",
        s(&den),
        "--steps",
        "5",
        "--dump-actions",
        "--dump-kernels",
        "3,4;0,0",
        "--truth",
        s(&clean),
    ];
    ok(&args);
    let img = load_image(&den).unwrap();
    assert_eq!(img.shape(), load_image(&noisy).unwrap().shape());
    let mut ppms: Vec<_> = fs::read_dir(&outdir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().unwrap() == "ppm")
        .collect();
    ppms.sort();
    assert_eq!(ppms.len(), 5);
    for p in &ppms {
        let rgb = decode_ppm(&fs::read(p).unwrap()).unwrap();
        assert_eq!((rgb.height, rgb.width), (16, 20));
    }
    assert!(outdir.join("den.kernel_3_4.pgm").exists());
    assert!(outdir.join("den.kernel_0_0.pgm").exists());

    let first = fs::read(&den).unwrap();
    let first_actions = fs::read(&ppms[2]).unwrap();
    ok(&args);
    assert_eq!(fs::read(&den).unwrap(), first);
    assert_eq!(fs::read(&ppms[2]).unwrap(), first_actions);
}

#[test]
fn failed_denoise_leaves_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "imgs", 1, 5);
    let (ck, _) = train(dir.path(), &c, "m", &["--episodes", "0"]);
    let den = dir.path().join("den.pgm");
    let out = rldiff(&[
        "denoise",
        "--model",
        s(&ck),
        "--input",
        s(&c.join("img0000.pgm")),
        "--output",
        s(&den),
        "--dump-kernels",
        "99,99",
    ]);
    assert!(!out.status.success());
    assert!(!den.exists());

    let missing = rldiff(&[
        "denoise",
        "--model",
        s(&dir.path().join("nope")),
        "--input",
        "x.pgm",
        "--output",
        s(&den),
    ]);
    assert!(!missing.status.success());
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn evaluate_table() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = corpus(dir.path(), "train", 2, 6);
    let test_dir = corpus(dir.path(), "test", 3, 7);
    let (ck, _) = train(dir.path(), &train_dir, "m", &["--episodes", "2"]);
    let csv1 = dir.path().join("e1.csv");
    let csv2 = dir.path().join("e2.csv");
    for out in [&csv1, &csv2] {
        ok(&[
            "evaluate",
            "--model",
            s(&ck),
            "--corpus",
            s(&test_dir),
            "--seed",
            "100",
            "--baseline",
            "pm",
            "--output",
            s(out),
        ]);
    }
    let t1 = fs::read_to_string(&csv1).unwrap();
    assert_eq!(t1, fs::read_to_string(&csv2).unwrap());
    let rows = parse_csv(&t1);
    assert_eq!(rows[0], ["image", "noisy_psnr", "denoised_psnr", "pm_psnr"]);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[1][0], "img0000.pgm");
    let last = &rows[4];
    assert_eq!(last[0], "mean");
    for col in 1..4 {
        let vals: Vec<f64> = rows[1..4].iter().map(|r| r[col].parse().unwrap()).collect();
        let mean: f64 = last[col].parse().unwrap();
        assert!((vals.iter().sum::<f64>() / 3.0 - mean).abs() < 1e-9);
    }

    // seeds are base + manifest index
    let stdout = ok(&[
        "evaluate",
        "--model",
        s(&ck),
        "--corpus",
        s(&test_dir),
        "--seed",
        "101",
    ])
    .stdout;
    let shifted = parse_csv(&String::from_utf8(stdout).unwrap());
    assert_ne!(shifted[1][1], rows[1][1]);
}

#[test]
fn noise_command() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "imgs", 1, 8);
    let input = c.join("img0000.pgm");
    let out = dir.path().join("n.pgm");
    ok(&[
        "noise",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--kind",
        "gaussian",
        "--sigma",
        "0.0001",
    ]);
    let a = load_image(&input).unwrap();
    let b = load_image(&out).unwrap();
    let dev = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(dev < 2.0 / 255.0);

    ok(&[
        "noise",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--kind",
        "salt_pepper",
        "--density",
        "1.0",
    ]);
    let bytes = fs::read(&out).unwrap();
    let img = decode_pgm(&bytes).unwrap();
    assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let body = &bytes[bytes.len() - 16 * 20..];
    assert!(body.iter().all(|&b| b == 0 || b == 255));

    let out2 = dir.path().join("n2.pgm");
    ok(&[
        "noise",
        "--input",
        s(&input),
        "--output",
        s(&out2),
        "--kind",
        "salt_pepper",
        "--density",
        "1.0",
    ]);
    assert_eq!(bytes, fs::read(&out2).unwrap());

    let bad = rldiff(&[
        "noise",
        "--input",
        s(&input),
        "--output",
        s(&out2),
        "--kind",
        "salt_pepper",
        "--density",
        "2",
    ]);
    assert!(!bad.status.success());
}

#[test]
fn config_file_merging() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "imgs", 2, 9);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# tiny run\ncorpus = {}\nepisodes = 1\ntrunk-layers = 2\ntrunk_channels = 2\nbatch_size = 1\npatch_size = 8\nsteps = 2\n",
            c.display()
        ),
    )
    .unwrap();
    let ck = dir.path().join("c.ckpt");
    let out = ok(&[
        "train",
        "--config",
        s(&cfg),
        "--episodes",
        "2",
        "--out",
        s(&ck),
    ]);
    let _ = out;
    let log = fs::read_to_string(dir.path().join("c.csv")).unwrap();
    // the flag overrides the file
    assert_eq!(log.lines().count(), 3);

    // resolved settings are echoed
    let echoed = Command::new(env!("CARGO_BIN_EXE_rldiff"))
        .args(["train", "--config", s(&cfg), "--out", s(&ck)])
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    let err = String::from_utf8_lossy(&echoed.stderr);
    assert!(
        err.contains("episodes = 1") && err.contains("gamma = 0.95"),
        "{err}"
    );

    fs::write(&cfg, "corpus = x\nlearning_rate = 0.1\n").unwrap();
    let bad = rldiff(&["train", "--config", s(&cfg)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("learning_rate"));
}

#[test]
fn baseline_and_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "imgs", 1, 10);
    let out = dir.path().join("pm.pgm");
    ok(&[
        "baseline-pm",
        "--input",
        s(&c.join("img0000.pgm")),
        "--output",
        s(&out),
        "--kappa",
        "0.2",
        "--iterations",
        "5",
    ]);
    assert_eq!(load_image(&out).unwrap().shape(), (16, 20));
    let bad = rldiff(&[
        "baseline-pm",
        "--input",
        s(&c.join("img0000.pgm")),
        "--output",
        s(&out),
        "--kappa",
        "0.3",
    ]);
    assert!(!bad.status.success());

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let r = rldiff(&["train", "--corpus", s(&empty), "--episodes", "1"]);
    assert!(!r.status.success());
}
