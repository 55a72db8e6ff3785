use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use zsplat::cli::{run, Cli, RunConfig, CHECKPOINT_FILE, LOG_FILE, LOSS_PLOT_FILE};
use zsplat::dataset::{read_dataset, read_transient_csv};
use zsplat::dsp::{synth_chirp, write_wav, Waveform, SPEED_OF_SOUND_AIR};
use zsplat::image::read_png;
use zsplat::metrics::EvalReport;
use zsplat::render::render_camera;
use zsplat::scene::{read_checkpoint, write_checkpoint, GaussianCloud};

fn zsplat(args: &[&str]) -> zsplat::Result<()> {
    let mut full = vec!["zsplat"];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full).expect("arguments parse"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn count(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .map(|d| {
            d.filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == ext)
            })
            .count()
        })
        .unwrap_or(0)
}

fn simulate(out: &Path, modalities: &str) {
    zsplat(&[
        "simulate", "--scene", "sphere", "--arc", "2.3", "--views", "10", "--modalities", modalities,
        "--width", "24", "--height", "24", "--focal", "40", "--bins", "32", "--rows", "8", "--grid", "24",
        "--out", p(out),
    ])
    .unwrap();
}

fn all_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_one_file_per_view_and_modality() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    simulate(&out, "camera,echo");
    assert_eq!(count(&out.join("images"), "png"), 10);
    assert_eq!(count(&out.join("echo"), "csv"), 10);
    assert!(!out.join("fls").exists());
    assert!(out.join("gt_points.ply").exists());
    let d = read_dataset(&out).unwrap();
    assert_eq!(d.len(), 10);
    assert!(d.modalities().camera && d.modalities().echo);
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "camera,echo,fls");
    simulate(&b, "camera,echo,fls");
    assert_eq!(all_files(&a), all_files(&b));
}

#[test]
fn simulate_rejects_bad_specs_and_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    let base = ["simulate", "--width", "24", "--out", p(&out)];
    let with = |extra: &[&str]| {
        let mut v = base.to_vec();
        v.extend_from_slice(extra);
        zsplat(&v)
    };
    assert!(with(&["--views", "0"]).is_err());
    assert!(with(&["--rows", "0"]).is_err());
    assert!(with(&["--scene", "teapot"]).is_err());
    assert!(with(&["--modalities", "lidar"]).is_err());
    assert!(with(&["--modalities", "fls", "--height", "25"]).is_err());
    assert!(!out.exists());
}

fn train_args<'a>(data: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["train", "--data", p(data), "--out", p(out), "--iterations", "30", "--gaussians", "40"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn train_writes_checkpoint_log_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    simulate(&data, "camera,echo");
    let out = tmp.path().join("run");
    zsplat(&train_args(&data, &out, &["--weight", "1", "--sonar-kind", "echo"])).unwrap();
    let cloud = read_checkpoint(&out.join(CHECKPOINT_FILE)).unwrap();
    assert!(!cloud.is_empty());
    let log = zsplat::train::read_log_csv(&out.join(LOG_FILE)).unwrap();
    assert_eq!(log.len(), 30);
    assert!(log.iter().all(|r| r.sonar_loss > 0.0));
    let plot = read_png(&out.join(LOSS_PLOT_FILE)).unwrap();
    assert!(plot.width > 0);
}

#[test]
fn zero_weight_training_ignores_sonar_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (with, without) = (tmp.path().join("with"), tmp.path().join("without"));
    simulate(&with, "camera,echo");
    simulate(&without, "camera");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    zsplat(&train_args(&with, &a, &["--weight", "0"])).unwrap();
    zsplat(&train_args(&without, &b, &["--weight", "0"])).unwrap();
    assert_eq!(
        fs::read(a.join(CHECKPOINT_FILE)).unwrap(),
        fs::read(b.join(CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn echo_loss_without_echo_files_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    simulate(&data, "camera");
    let out = tmp.path().join("run");
    let err = zsplat(&train_args(&data, &out, &["--sonar-kind", "echo", "--weight", "1"])).unwrap_err();
    assert!(err.to_string().contains("echo"), "{err}");
    assert!(!out.exists());
}

#[test]
fn train_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    simulate(&data, "camera,echo");
    let run_with = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let mut args = train_args(&data, &out, &[]);
        args.extend_from_slice(&["--seed", seed]);
        zsplat(&args).unwrap();
        all_files(&out)
    };
    assert_eq!(run_with("a", "3"), run_with("b", "3"));
    assert_ne!(run_with("c", "3"), run_with("d", "4"));
}

#[test]
fn config_file_is_validated_and_merged() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    simulate(&data, "camera,echo");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"iterations": 5}, "colour": 1}"#).unwrap();
    assert!(RunConfig::load(&bad).is_err());
    let good = tmp.path().join("good.json");
    fs::write(
        &good,
        format!(
            r#"{{"dataset": {:?}, "seed": 9, "loss": {{"weight": 0.5, "sonar_kind": "echo"}}, "train": {{"iterations": 12, "init": {{"gaussians": 20}}}}}}"#,
            p(&data)
        ),
    )
    .unwrap();
    let out = tmp.path().join("run");
    zsplat(&["--config", p(&good), "train", "--out", p(&out)]).unwrap();
    let log = zsplat::train::read_log_csv(&out.join(LOG_FILE)).unwrap();
    assert_eq!(log.len(), 12);
    let effective = RunConfig::load(&out.join("run_config.json")).unwrap();
    assert_eq!(effective.seed, Some(9));
    assert_eq!(effective.loss.weight, 0.5);
}

#[test]
fn render_empty_checkpoint_is_black_and_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    simulate(&data, "camera,echo,fls");
    let empty = tmp.path().join("empty.zspl");
    write_checkpoint(&empty, &GaussianCloud::default()).unwrap();
    let out = tmp.path().join("r0");
    zsplat(&["render", "--checkpoint", p(&empty), "--data", p(&data), "--view", "0", "--out", p(&out)]).unwrap();
    let img = read_png(&out.join("camera_view_0000.png")).unwrap();
    assert!(img.pixels.iter().all(|px| *px == [0.0; 3]));

    let run = tmp.path().join("run");
    zsplat(&train_args(&data, &run, &[])).unwrap();
    let ckpt = run.join(CHECKPOINT_FILE);
    let out = tmp.path().join("r1");
    zsplat(&["render", "--checkpoint", p(&ckpt), "--data", p(&data), "--modalities", "all", "--out", p(&out)]).unwrap();
    assert_eq!(count(&out, "png"), 30);
    assert_eq!(count(&out, "csv"), 20);
    let d = read_dataset(&data).unwrap();
    let cloud = read_checkpoint(&ckpt).unwrap();
    let direct = zsplat::image::Image::from(&render_camera(&cloud, &d.observations[3].view));
    let from_disk = read_png(&out.join("camera_view_0003.png")).unwrap();
    assert_eq!(direct.to_rgb8(), from_disk.to_rgb8());
    let (_, rows, _) = read_transient_csv(&out.join("fls_view_0003.csv")).unwrap();
    assert_eq!(rows, d.sonar.rows);

    assert!(zsplat(&["render", "--checkpoint", p(&ckpt), "--data", p(&data), "--view", "99", "--out", p(&tmp.path().join("r2"))]).is_err());
    assert!(!tmp.path().join("r2").exists());
}

#[test]
fn eval_reports_are_stable_and_geometry_is_optional() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    simulate(&data, "camera");
    let run = tmp.path().join("run");
    zsplat(&train_args(&data, &run, &["--sonar-kind", "none"])).unwrap();
    let ckpt = run.join(CHECKPOINT_FILE);
    let eval = |out: &Path, extra: &[&str]| {
        let mut v = vec!["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(out), "--opacity-floor", "0"];
        v.extend_from_slice(extra);
        zsplat(&v).unwrap();
        let text = fs::read_to_string(out).unwrap();
        (text.clone(), serde_json::from_str::<EvalReport>(&text).unwrap())
    };
    let (t1, r1) = eval(&tmp.path().join("a.json"), &[]);
    let (t2, _) = eval(&tmp.path().join("b.json"), &[]);
    assert_eq!(t1, t2);
    assert_eq!(r1.views.len(), 10);
    assert!(r1.geometry.is_some());
    fs::remove_file(data.join("gt_points.ply")).unwrap();
    let (_, r3) = eval(&tmp.path().join("c.json"), &[]);
    assert!(r3.geometry.is_none());
    assert_eq!(r3.mean_psnr, r1.mean_psnr);
}

fn echo_wav(dir: &Path, range: f64) -> (PathBuf, PathBuf) {
    let fs_hz = 100_000.0;
    let chirp = synth_chirp(10_000.0, 30_000.0, 1e-3, fs_hz).unwrap();
    let mut rx = Waveform::new(vec![0.0; 4096], fs_hz).unwrap();
    let mut bg = rx.clone();
    let clutter = synth_chirp(12_000.0, 12_000.0, 5e-3, fs_hz).unwrap();
    rx.add_at(&clutter, 0, 0.2);
    bg.add_at(&clutter, 0, 0.2);
    rx.add_at(&chirp, (2.0 * range / SPEED_OF_SOUND_AIR * fs_hz).round() as usize, 0.5);
    let (a, b) = (dir.join("rx.wav"), dir.join("bg.wav"));
    write_wav(&a, &rx).unwrap();
    write_wav(&b, &bg).unwrap();
    (a, b)
}

#[test]
fn dsp_recovers_a_synthetic_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let (rx, bg) = echo_wav(tmp.path(), 2.2);
    let out = tmp.path().join("out").join("t.csv");
    zsplat(&["dsp", "--input", p(&rx), "--background", p(&bg), "--bins", "100", "--range-max", "5", "--out", p(&out)]).unwrap();
    let (bins, rows, values) = read_transient_csv(&out).unwrap();
    assert_eq!(rows, 1);
    let peak = (0..values.len()).fold(0, |b, i| if values[i] > values[b] { i } else { b });
    assert!((peak as i64 - bins.index_of(2.2).unwrap() as i64).abs() <= 1);
    assert!(out.with_extension("png").exists());

    let same = tmp.path().join("same.csv");
    zsplat(&["dsp", "--input", p(&rx), "--background", p(&rx), "--out", p(&same)]).unwrap();
    let (_, _, zeros) = read_transient_csv(&same).unwrap();
    assert!(zeros.iter().all(|v| *v == 0.0));

    let nobg = tmp.path().join("nobg.csv");
    zsplat(&["dsp", "--input", p(&rx), "--out", p(&nobg)]).unwrap();
    assert!(nobg.exists());
}
