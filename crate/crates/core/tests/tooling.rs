mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use lact::cli::full_geometry;
use lact::config::{GeometryConfig, RunConfig};
use lact::fbp::{fbp_reconstruct, FilterKind, FilterSpec};
use lact::geometry::forward_project;
use lact::hqs::{hqs_cg_run, HqsConfig};
use lact::io::{self, DType, TensorFile};
use lact::metrics::CSV_HEADER;
use lact::nn::{EpNet, ParamStore, Tensor};
use lact::simulate::{add_noise, make_dataset, make_phantom_item, NoiseModel, PhantomKind, PhantomSpec};
use lact::{Error, ScanMode};

fn lact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lact")).args(args).env("LACT_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = lact(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn cli_pipeline_matches_library_bitwise() {
    let dir = tempdir();
    let d = dir.path();
    ok(&["phantom", "--kind", "random-ellipses", "--size", "48", "--seed", "13", "-o", &p(d, "u.lt")]);
    let spec = PhantomSpec::random_ellipses(48, 1, 13);
    let u = make_phantom_item(&spec, 0).unwrap();
    assert_eq!(io::read_image(&d.join("u.lt")).unwrap(), u);

    ok(&["project", "-i", &p(d, "u.lt"), "--mode", "fan", "--views", "60", "--detectors", "72", "--seed", "4", "-o", &p(d, "y.lt")]);
    let g = full_geometry(ScanMode::Fan, 48, 60, 72, 1.0).unwrap();
    let nm = NoiseModel { seed: 4, ..NoiseModel::default() };
    let y = add_noise(&forward_project(&u, &g).unwrap(), &nm).unwrap();
    assert_eq!(io::read_sinogram(&d.join("y.lt")).unwrap(), y);

    ok(&["fbp", "-i", &p(d, "y.lt"), "--mode", "fan", "--size", "48", "--filter", "hann", "--cutoff", "0.8", "-o", &p(d, "r.lt")]);
    let f = FilterSpec { kind: FilterKind::HannWindowed, cutoff: 0.8 };
    let r = fbp_reconstruct(&y, &g, &f).unwrap();
    assert_eq!(io::read_image(&d.join("r.lt")).unwrap(), r);

    let csv = p(d, "m.csv");
    let gt = p(d, "u.lt");
    ok(&["eval", "--recon", &p(d, "r.lt"), "--gt", &gt, "--csv", &csv, "--method", "fbp", "--alpha-max", "60"]);
    ok(&["eval", "--recon", &gt, "--gt", &gt, "--csv", &csv, "--method", "gt"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("run,fbp,60,"));
    assert!(lines[2].starts_with("run,gt,0,inf,1.00000000,"));
}

#[test]
fn cli_hqscg_matches_library_bitwise() {
    let dir = tempdir();
    let d = dir.path();
    ok(&[
        "hqscg", "--size", "32", "--detectors", "48", "--alpha-max", "30", "--n-left", "3", "--n-right", "3",
        "--outer-iters", "2", "--cg-max-iters", "6", "--gamma", "0.5,1,2,1,1,1,1,3", "-o", &p(d, "h.lt"), "--pgm", &p(d, "h.pgm"),
    ]);
    let mut cfg = RunConfig::default();
    cfg.geometry = GeometryConfig { size: 32, detectors: 48, alpha_max: 30, n_left: 3, n_right: 3, ..GeometryConfig::default() };
    cfg.hqs = HqsConfig { outer_iters: 2, cg_max_iters: 6, gamma: vec![0.5, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 3.0], ..HqsConfig::default() };
    let setup = cfg.geometry.setup().unwrap();
    let u = make_phantom_item(&PhantomSpec::shepp_logan(32), 0).unwrap();
    let y = forward_project(&u, &setup.measured).unwrap();
    let (want, _) = hqs_cg_run(&y, &setup, &cfg.hqs, None).unwrap();
    assert_eq!(io::read_image(&d.join("h.lt")).unwrap(), want);
    assert!(std::fs::read(d.join("h.pgm")).unwrap().starts_with(b"P5"));
}

#[test]
fn phantom_stack_and_config_file() {
    let dir = tempdir();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "[phantom]\nkind = shepp-logan\ncount = 3\n[geometry]\nsize = 40\n").unwrap();
    ok(&["phantom", "--config", &p(d, "run.cfg"), "--seed", "1", "-o", &p(d, "s.lt"), "--pgm", &p(d, "s.pgm")]);
    let t = io::read_tensor(&d.join("s.lt")).unwrap();
    assert_eq!(t.dims, vec![3, 40, 40]);
    let spec = PhantomSpec { kind: PhantomKind::SheppLogan, count: 3, intensity_shift: 0.0, size: 40, seed: 1 };
    let second = make_phantom_item(&spec, 1).unwrap();
    assert_eq!(&t.data[1600..3200], second.as_slice());
}

#[test]
fn exit_codes() {
    assert_eq!(lact(&["bogus"]).status.code(), Some(2));
    assert_eq!(lact(&["phantom", "-o", "x.lt"]).status.code(), Some(2));
    assert_eq!(lact(&["fbp", "--filter", "nope", "-i", "a", "-o", "b"]).status.code(), Some(2));
    assert_eq!(lact(&["--help"]).status.code(), Some(0));
    let dir = tempdir();
    let out = lact(&["fbp", "-i", &p(dir.path(), "missing.lt"), "-o", &p(dir.path(), "o.lt")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("read failed"));
    std::fs::write(dir.path().join("bad.cfg"), "[hqs]\nlamda = 2\n").unwrap();
    let out = lact(&["hqscg", "--config", &p(dir.path(), "bad.cfg"), "-o", &p(dir.path(), "o.lt")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
}

#[test]
fn tensor_files_round_trip() {
    let dir = tempdir();
    let mut r = rng(3);
    let u = random_image(&mut r, 7, 5);
    io::write_image(&dir.path().join("a.lt"), &u).unwrap();
    assert_eq!(io::read_image(&dir.path().join("a.lt")).unwrap(), u);

    let y = random_sinogram(&mut r, 4, 9);
    io::write_sinogram(&dir.path().join("y.lt"), &y).unwrap();
    assert_eq!(io::read_sinogram(&dir.path().join("y.lt")).unwrap(), y);

    let narrow: Vec<f64> = u.as_slice().iter().map(|&v| v as f32 as f64).collect();
    let t = TensorFile::new(DType::F32, vec![1, 7, 5], narrow).unwrap();
    io::write_tensor(&dir.path().join("f.lt"), &t).unwrap();
    assert_eq!(io::read_tensor(&dir.path().join("f.lt")).unwrap(), t);

    std::fs::write(dir.path().join("junk.lt"), b"not a tensor").unwrap();
    assert!(io::read_tensor(&dir.path().join("junk.lt")).is_err());
    assert!(TensorFile::new(DType::F64, vec![2, 2], vec![0.0; 3]).is_err());
}

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.geometry = GeometryConfig {
        size: 32,
        detectors: 48,
        alpha_max: 30,
        n_left: 3,
        n_right: 3,
        pixel_spacing: 1.0 / 32.0,
        ..GeometryConfig::default()
    };
    cfg.hqs.outer_iters = 2;
    cfg.hqs.cg_max_iters = 4;
    cfg.seed = Some(2);
    cfg
}

fn perturbed_net(cfg: &RunConfig, seed: u64) -> EpNet {
    let mut net = EpNet::new(cfg.geometry.setup().unwrap(), cfg.epnet(seed).unwrap()).unwrap();
    let mut r = rng(seed);
    for e in net.params().entries().to_vec() {
        let mut v = e.value.clone();
        for x in v.data_mut() {
            *x += 0.01 * (rand::Rng::random::<f64>(&mut r) - 0.5);
        }
        net.params_mut().load_value(&e.name, v, e.name.starts_with("senet.")).unwrap();
    }
    net
}

#[test]
fn checkpoints_round_trip_and_load_partially() {
    let cfg = tiny();
    let dir = tempdir();
    let path = dir.path().join("net.ckpt");
    let net = perturbed_net(&cfg, 5);
    io::checkpoint_save(&path, net.params()).unwrap();

    let mut fresh = EpNet::new(cfg.geometry.setup().unwrap(), cfg.epnet(99).unwrap()).unwrap();
    io::checkpoint_load(&path, fresh.params_mut()).unwrap();
    assert_eq!(fresh.params(), net.params());
    let data = make_dataset(1, &cfg.phantom_spec(3), &cfg.geometry.setup().unwrap(), &cfg.noise).unwrap();
    let a = net.forward(&data[0].y_measured).unwrap();
    let b = fresh.forward(&data[0].y_measured).unwrap();
    assert_eq!(a.image, b.image);
    assert!(fresh.params().entries().iter().any(|e| e.frozen));

    let epl_path = dir.path().join("epl.ckpt");
    io::checkpoint_save_prefix(&epl_path, net.params(), "epl.").unwrap();
    let mut partial = EpNet::new(cfg.geometry.setup().unwrap(), cfg.epnet(99).unwrap()).unwrap();
    let untouched = partial.params().clone();
    let names = io::checkpoint_load(&epl_path, partial.params_mut()).unwrap();
    assert!(!names.is_empty() && names.iter().all(|n| n.starts_with("epl.")));
    for (e, old) in partial.params().entries().iter().zip(untouched.entries()) {
        let want = if e.name.starts_with("epl.") { &net.params().get(&e.name).unwrap().value } else { &old.value };
        assert_eq!(&e.value, want, "{}", e.name);
    }

    let mut wrong = ParamStore::new();
    wrong.insert("senet.1.bias", Tensor::zeros([1, 1, 3])).unwrap();
    let wrong_path = dir.path().join("wrong.ckpt");
    io::checkpoint_save(&wrong_path, &wrong).unwrap();
    let mut mismatched = EpNet::new(cfg.geometry.setup().unwrap(), cfg.epnet(1).unwrap()).unwrap();
    let before = mismatched.params().clone();
    match io::checkpoint_load(&wrong_path, mismatched.params_mut()) {
        Err(e @ Error::Checkpoint { .. }) => assert!(e.to_string().contains("senet.1.bias"), "{e}"),
        other => panic!("expected a checkpoint error, got {other:?}"),
    }
    assert_eq!(mismatched.params(), &before);
}

#[test]
fn untrained_network_reduces_to_plain_solver() {
    let cfg = tiny();
    let setup = cfg.geometry.setup().unwrap();
    let net = EpNet::new(setup.clone(), cfg.epnet(4).unwrap()).unwrap();
    let data = make_dataset(1, &cfg.phantom_spec(6), &setup, &cfg.noise).unwrap();
    let out = net.forward(&data[0].y_measured).unwrap();
    let (want, _) = hqs_cg_run(&data[0].y_measured, &setup, &cfg.hqs, None).unwrap();
    assert_eq!(out.image, want);
    for row in 0..setup.extended.sinogram_shape().0 {
        if !net.mask().is_extrapolated(row) {
            continue;
        }
        let (_, nd) = setup.extended.sinogram_shape();
        assert!(out.y_out.as_slice()[row * nd..(row + 1) * nd].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn train_epnet_and_shift_test_end_to_end() {
    let dir = tempdir();
    let d = dir.path();
    let geo = ["--size", "32", "--detectors", "48", "--alpha-max", "30", "--n-left", "3", "--n-right", "3", "--pixel-spacing", "0.03125"];
    let solver = ["--outer-iters", "2", "--cg-max-iters", "3"];
    let mut train = vec!["train", "--seed", "3", "--items", "2", "--steps", "2", "--epl-pretrain-steps", "1"];
    train.extend(geo);
    train.extend(solver);
    let (ck, curve) = (p(d, "a.ckpt"), p(d, "curve.csv"));
    train.extend(["-o", ck.as_str(), "--loss-curve", curve.as_str()]);
    ok(&train);
    let curve = std::fs::read_to_string(d.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 1 + 2);

    let mut epnet = vec!["epnet", "--checkpoint", ck.as_str()];
    epnet.extend(geo);
    epnet.extend(solver);
    let (out, pgm) = (p(d, "e.lt"), p(d, "e.pgm"));
    epnet.extend(["-o", out.as_str(), "--pgm", pgm.as_str()]);
    ok(&epnet);
    assert_eq!(io::read_image(&d.join("e.lt")).unwrap().shape(), (32, 32));

    let named = format!("toy={ck}");
    let mut shift = vec!["shift-test", "--checkpoint", named.as_str(), "--seed", "8", "--items", "2"];
    shift.extend(geo);
    shift.extend(solver);
    let report = p(d, "shift.csv");
    shift.extend(["-o", report.as_str()]);
    let o = lact(&shift);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.join("shift.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,psnr_base_db,psnr_shifted_db,delta_db");
    assert!(lines[1].starts_with("hqs-cg,") && lines[2].starts_with("toy,"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ordering by PSNR delta"));
}
