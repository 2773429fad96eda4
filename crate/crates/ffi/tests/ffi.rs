use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use polypseg::pedm::{ModelConfig, Pedm};
use polypseg::tensor::init::{rng, uniform};
use polypseg::trainer::save_model;
use polypseg::Shape;
use polypseg_ffi::*;

fn checkpoint(dir: &Path) -> Pedm {
    let cfg = ModelConfig {
        widths: [8, 8, 8, 8],
        ..ModelConfig::default()
    };
    let m = Pedm::new(&mut rng(11), cfg).unwrap();
    save_model(dir, &m, 0, 0).unwrap();
    m
}

fn load(dir: &Path) -> *mut PsModel {
    let p = CString::new(dir.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ps_model_load(p.as_ptr(), &mut h) }, PsStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = ps_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn inference_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let model = checkpoint(dir.path());
    let h = load(dir.path());
    let img = uniform(&mut rng(2), Shape::new(1, 3, 32, 32), 0.0, 1.0);
    let want = model.forward(&img, None).unwrap();

    let mut prob = vec![0.0; 32 * 32];
    let st = unsafe { ps_model_infer(h, img.to_vec().as_ptr(), 32, 32, prob.as_mut_ptr()) };
    assert_eq!(st, PsStatus::Ok);
    assert!(ps_last_error().is_null());
    assert_eq!(prob, want.prob.plane(0, 0));

    for level in 1..=4 {
        let (mut ah, mut aw) = (0, 0);
        let st = unsafe { ps_model_attention(h, img.to_vec().as_ptr(), 32, 32, level, ptr::null_mut(), 0, &mut ah, &mut aw) };
        assert_eq!(st, PsStatus::BufferTooSmall);
        assert_eq!((ah, aw), (32 >> level, 32 >> level));
        let mut buf = vec![0.0; ah * aw];
        let st = unsafe { ps_model_attention(h, img.to_vec().as_ptr(), 32, 32, level, buf.as_mut_ptr(), buf.len(), &mut ah, &mut aw) };
        assert_eq!(st, PsStatus::Ok);
        assert_eq!(buf, want.attn[level - 1].plane(0, 0));
    }
    let (mut ah, mut aw) = (0, 0);
    let st = unsafe { ps_model_attention(h, img.to_vec().as_ptr(), 32, 32, 5, ptr::null_mut(), 0, &mut ah, &mut aw) };
    assert_eq!(st, PsStatus::Invalid);
    unsafe { ps_model_free(h) };
}

#[test]
fn errors_map_to_codes_with_messages() {
    let missing = CString::new("/nonexistent/ckpt").unwrap();
    let mut h = ptr::null_mut();
    let st = unsafe { ps_model_load(missing.as_ptr(), &mut h) };
    assert_eq!(st, PsStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("nonexistent"));

    assert_eq!(unsafe { ps_model_load(ptr::null(), &mut h) }, PsStatus::NullArgument);
    assert_eq!(last_error(), "path is null");

    let dir = tempfile::tempdir().unwrap();
    checkpoint(dir.path());
    let h = load(dir.path());
    let img = vec![0.5; 3 * 20 * 20];
    let mut prob = vec![0.0; 400];
    assert_eq!(unsafe { ps_model_infer(h, img.as_ptr(), 20, 20, prob.as_mut_ptr()) }, PsStatus::Shape);
    assert_eq!(unsafe { ps_model_infer(h, img.as_ptr(), 0, 20, prob.as_mut_ptr()) }, PsStatus::Shape);
    assert_eq!(unsafe { ps_model_infer(ptr::null(), img.as_ptr(), 16, 16, prob.as_mut_ptr()) }, PsStatus::NullArgument);
    unsafe { ps_model_free(h) };
    unsafe { ps_model_free(ptr::null_mut()) };
}

#[test]
fn metrics_through_the_abi() {
    // 2x5 fixture: two gt positives; the fold region is the other eight
    // pixels, two of which are predicted positive.
    let gt: Vec<u8> = vec![1, 1, 0, 0, 0, 0, 0, 0, 0, 0];
    let pred: Vec<u8> = vec![1, 0, 1, 1, 0, 0, 0, 0, 0, 0];
    let mut r = PsRegionMetrics::default();
    assert_eq!(unsafe { ps_region_metrics(pred.as_ptr(), gt.as_ptr(), 2, 5, &mut r) }, PsStatus::Ok);
    assert_eq!(r.dice, 2.0 * 1.0 / (3.0 + 2.0));
    assert_eq!(r.iou, 1.0 / 4.0);
    assert_eq!((r.precision, r.recall), (1.0 / 3.0, 0.5));

    let hf: Vec<u8> = gt.iter().map(|&g| 1 - g).collect();
    let mut a = PsAnatomicalMetrics::default();
    assert_eq!(unsafe { ps_anatomical_metrics(pred.as_ptr(), gt.as_ptr(), hf.as_ptr(), 2, 5, &mut a) }, PsStatus::Ok);
    assert_eq!(a.hf_miss_pct, 2.0 / 8.0 * 100.0);
    assert_eq!(a.hf_region_empty, 0);

    let mut bf1 = 0.0;
    assert_eq!(unsafe { ps_boundary_f1(gt.as_ptr(), gt.as_ptr(), 2, 5, 2.0, &mut bf1) }, PsStatus::Ok);
    assert_eq!(bf1, 1.0);

    let bad: Vec<u8> = vec![2; 10];
    assert_eq!(unsafe { ps_region_metrics(bad.as_ptr(), gt.as_ptr(), 2, 5, &mut r) }, PsStatus::Invalid);
    assert!(last_error().contains("not binary"));
    assert_eq!(unsafe { ps_anatomical_metrics(pred.as_ptr(), gt.as_ptr(), gt.as_ptr(), 2, 5, &mut a) }, PsStatus::Invalid);
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test-binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libpolypseg_ffi.a");
    assert!(lib.is_file(), "{} missing", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("a C compiler is needed for this test");
    assert!(status.success());

    let ckpt = tmp.path().join("ckpt");
    let model = checkpoint(&ckpt);
    let out = Command::new(&exe).arg(&ckpt).arg("32").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{text}");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "load 0");

    let data: Vec<f64> = (0..3 * 32 * 32).map(|i| (i % 17) as f64 / 16.0).collect();
    let img = polypseg::Tensor::new(Shape::new(1, 3, 32, 32), data).unwrap();
    let prob = model.forward(&img, None).unwrap().prob;
    let mean = prob.plane(0, 0).iter().sum::<f64>() / (32.0 * 32.0);
    let got: f64 = lines[1].strip_prefix("infer 0 ").unwrap().parse().unwrap();
    assert!((got - mean).abs() <= 1e-15 * mean.abs().max(1.0), "{got} vs {mean}");

    assert_eq!(lines[2], "region 0 0.66666666666666663 0.5");
    assert!(lines[3].starts_with("bad 3 "));
    assert_eq!(lines[4], format!("version {}", env!("CARGO_PKG_VERSION")));
}
