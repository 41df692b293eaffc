use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spectropol::calib::load_calibration;
use spectropol::dataio::{load_cube, load_dataset, save_cube, StokesCube};
use spectropol::renderer::FrameConvention;
use spectropol::StokesVector;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spectropol"));
    c.env_remove("SPECTROPOL_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spectropol")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn scene() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/two_primitives.json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_small(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth", "--scene", s(&scene()).to_owned().leak(), "--views", "3", "--held-out", "1",
        "--width", "12", "--height", "10", "--subdivisions", "64", "--out", s(dir).to_owned().leak(),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_writes_a_loadable_dataset_and_noisy_copy() {
    let tmp = tempfile::tempdir().unwrap();
    let ds_dir = tmp.path().join("ds");
    synth_small(&ds_dir, &["--noise-std", "16", "--seed", "3"]);
    let ds = load_dataset(&ds_dir).unwrap();
    assert_eq!(ds.views.len(), 4);
    assert_eq!(ds.wavelengths, vec![450.0, 500.0, 550.0, 600.0, 650.0]);
    assert!(ds_dir.join("run.json").is_file());
    let noisy = load_dataset(&tmp.path().join("ds_noisy")).unwrap();
    assert!(noisy.views[0].cube.max_abs_diff(&ds.views[0].cube) > 0.0);
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_small(&a, &["--noise-std", "40", "--seed", "9", "--deterministic"]);
    synth_small(&b, &["--noise-std", "40", "--seed", "9", "--deterministic"]);
    for name in ["manifest.json", "views/train_000.bin", "views/test_000.bin"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name}");
        let x = std::fs::read(tmp.path().join("a_noisy").join(name)).unwrap();
        let y = std::fs::read(tmp.path().join("b_noisy").join(name)).unwrap();
        assert_eq!(x, y, "noisy {name}");
    }
}

#[test]
fn bad_scene_reports_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"bounds\": {\"min\": [-1,-1,-1], \"max\": [1,1,1]},\n  \"primitives\": [{\"type\": \"box\", \"min\": [0,0,0]}]\n}\n").unwrap();
    let out = run(&["synth", "--scene", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("max") && err.contains("line"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn calibration_round_trip_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["synth-calib", "--width", "4", "--height", "3", "--seed", "5", "--out", s(&sim)]);
    let cal = tmp.path().join("fit.nscl");
    let qe = sim.join("sensor_qe.csv");
    let filter = sim.join("filter.csv");
    ok(&[
        "calibrate", "--capture", s(&sim.join("calibration")), "--sensor-qe", s(&qe),
        "--filter", s(&filter), "--out", s(&cal),
    ]);
    let (fit, _) = load_calibration(&cal).unwrap();
    let (truth, _) = load_calibration(&sim.join("truth.nscl")).unwrap();
    let worst = fit
        .rows
        .iter()
        .zip(&truth.rows)
        .flat_map(|(a, b)| (0..4).map(move |c| (a[c] - b[c]).abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "row error {worst}");

    let cube_path = tmp.path().join("scene.bin");
    let stdout = ok(&[
        "reconstruct", "--capture", s(&sim.join("scene")), "--calibration", s(&cal),
        "--sensor-qe", s(&qe), "--filter", s(&filter), "--out", s(&cube_path),
    ]);
    assert!(stdout.contains("validity: 0 of"), "{stdout}");
    let (rec, conv) = load_cube(&cube_path).unwrap();
    assert_eq!(conv, FrameConvention::CameraLocal);
    let (truth_cube, _) = load_cube(&sim.join("scene_truth.bin")).unwrap();
    assert!(rec.max_abs_diff(&truth_cube) < 1e-5);
}

#[test]
fn missing_angle_file_lists_expected_angles() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["synth-calib", "--width", "2", "--height", "2", "--out", s(&sim)]);
    std::fs::remove_file(sim.join("calibration/angle_2.bin")).unwrap();
    let out = run(&["calibrate", "--capture", s(&sim.join("calibration")), "--out", s(&tmp.path().join("c.nscl"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("angle_2.bin") && err.contains("30"), "{err}");
    assert!(!tmp.path().join("c.nscl").exists());
}

#[test]
fn train_render_eval_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth_small(&ds, &[]);
    let ckpt = tmp.path().join("field.nspf");
    ok(&[
        "train", "--dataset", s(&ds), "--steps", "15", "--batch-rays", "32", "--samples", "8",
        "--out", s(&ckpt),
    ]);
    assert!(ckpt.is_file());
    let trace = std::fs::read_to_string(tmp.path().join("field.nspf.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 16);
    assert!(tmp.path().join("field.nspf.run.json").is_file());

    let renders = tmp.path().join("renders");
    ok(&[
        "render", "--checkpoint", s(&ckpt), "--dataset", s(&ds), "--split", "test",
        "--samples", "16", "--out", s(&renders),
    ]);
    assert!(renders.join("test_000.bin").is_file());

    let metrics = tmp.path().join("metrics.csv");
    let table = ok(&[
        "eval", "--dataset", s(&ds), "--rendered", s(&renders), "--out", s(&metrics),
    ]);
    assert!(table.contains("aggregate"));
    let csv = std::fs::read_to_string(&metrics).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("wavelength_nm,element,rmse,psnr"));
    assert_eq!(lines.count(), 5 * 4);

    // rendering inside eval gives the same numbers
    let direct = tmp.path().join("direct.csv");
    ok(&[
        "eval", "--dataset", s(&ds), "--checkpoint", s(&ckpt), "--samples", "16",
        "--out", s(&direct),
    ]);
    // rendered cubes are stored at single precision, so allow for rounding
    let direct = std::fs::read_to_string(&direct).unwrap();
    for (a, b) in csv.lines().zip(direct.lines()).skip(1) {
        let a: Vec<&str> = a.split(',').collect();
        let b: Vec<&str> = b.split(',').collect();
        assert_eq!(a[..2], b[..2]);
        let x: f64 = a[2].parse().unwrap();
        let y: f64 = b[2].parse().unwrap();
        assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "{a:?} vs {b:?}");
    }
}

fn read_png(path: &Path) -> (usize, usize, Vec<u8>) {
    let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path).unwrap()));
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info.width as usize, info.height as usize, buf)
}

#[test]
fn visualize_fully_polarized_horizontal_light() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cube = StokesCube::zeros(3, 4, vec![550.0]);
    for p in 0..12 {
        cube.set(p / 4, p % 4, 0, StokesVector::new(1.0, 1.0, 0.0, 0.0));
    }
    let path = tmp.path().join("c.bin");
    save_cube(&path, &cube, FrameConvention::Canonical).unwrap();
    let out = tmp.path().join("viz");
    ok(&["visualize", "--cube", s(&path), "--out", s(&out)]);
    let (w, h, dop) = read_png(&out.join("dop_550nm.png"));
    assert_eq!((w, h), (4, 3));
    assert!(dop.iter().all(|v| *v == 255));
    let (_, _, aolp) = read_png(&out.join("aolp_550nm.png"));
    assert!(aolp.chunks(3).all(|c| c == [255, 0, 0]));
    let (_, _, cop) = read_png(&out.join("cop_550nm.png"));
    assert!(cop.iter().all(|v| *v == 255));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("visualize.json")).unwrap()).unwrap();
    assert!(sidecar["colormaps"]["aolp"]["map"].as_str().unwrap().contains("cyclic"));
}

#[test]
fn separate_and_relight() {
    let tmp = tempfile::tempdir().unwrap();
    let wl: Vec<f64> = (0..21).map(|i| 450.0 + 10.0 * i as f64).collect();
    let mut cube = StokesCube::zeros(2, 2, wl.clone());
    for p in 0..4 {
        for (l, nm) in wl.iter().enumerate() {
            let e = 0.5 + (nm - 450.0) / 400.0;
            cube.set(p / 2, p % 2, l, StokesVector::new(e, 0.3 * e, 0.0, 0.1 * e));
        }
    }
    let path = tmp.path().join("c.bin");
    save_cube(&path, &cube, FrameConvention::Canonical).unwrap();

    let sep = tmp.path().join("sep");
    ok(&["separate", "--cube", s(&path), "--out", s(&sep)]);
    let (u, _) = load_cube(&sep.join("unpolarized.bin")).unwrap();
    let (p, _) = load_cube(&sep.join("polarized.bin")).unwrap();
    let mut sum = u.clone();
    for (a, b) in sum.data.iter_mut().zip(&p.data) {
        *a += b;
    }
    assert!(sum.max_abs_diff(&cube) < 1e-6);

    let flat = tmp.path().join("flat.csv");
    let mut text = String::from("wavelength_nm,value\n");
    for nm in &wl {
        text.push_str(&format!("{nm},1.0\n"));
    }
    std::fs::write(&flat, text).unwrap();
    let relit = tmp.path().join("relit.bin");
    ok(&["relight", "--cube", s(&path), "--target", s(&flat), "--white-pixel", "0,0", "--out", s(&relit)]);
    let (r, _) = load_cube(&relit).unwrap();
    // the white pixel's spectrum is linear, so the quartic fit is exact
    for l in 0..21 {
        assert!((r.get(0, 0, l).s0() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--dataset", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let ds = tmp.path().join("ds");
    synth_small(&ds, &[]);
    let junk = tmp.path().join("junk.nspf");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = run(&["render", "--checkpoint", s(&junk), "--dataset", s(&ds), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(4));

    let out = run(&["synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}
