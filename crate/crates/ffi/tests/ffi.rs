use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use embedplan::model::{save_checkpoint, Arch, TransitionModel};
use embedplan_ffi::*;

fn last_error() -> String {
    let p = ep_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn table_round_trip_through_the_c_api() {
    let tmp = tempfile::tempdir().unwrap();
    let file = cpath(&tmp.path().join("t.embt"));
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(ep_table_new(3, &mut t), EpStatus::Ok);
        let id = CString::new("state:1").unwrap();
        assert_eq!(ep_table_insert(t, id.as_ptr(), [3.0f32, 0.0, 4.0].as_ptr(), 3), EpStatus::Ok);
        assert_eq!(ep_table_insert(t, id.as_ptr(), [1.0f32, 0.0, 0.0].as_ptr(), 3), EpStatus::Format);
        assert!(last_error().contains("duplicate"));
        assert_eq!(ep_table_insert(t, id.as_ptr(), [1.0f32].as_ptr(), 1), EpStatus::DimensionMismatch);
        assert_eq!(ep_table_save(t, file.as_ptr()), EpStatus::Ok);
        ep_table_free(t);

        let mut back = ptr::null_mut();
        assert_eq!(ep_table_load(file.as_ptr(), &mut back), EpStatus::Ok);
        assert_eq!((ep_table_dim(back), ep_table_len(back)), (3, 1));
        let mut v = [0f32; 3];
        assert_eq!(ep_table_get(back, id.as_ptr(), v.as_mut_ptr(), 3), EpStatus::Ok);
        assert_eq!(v, [0.6, 0.0, 0.8]);
        assert_eq!(ep_table_get(back, id.as_ptr(), v.as_mut_ptr(), 2), EpStatus::BufferTooSmall);
        let missing = CString::new("state:2").unwrap();
        assert_eq!(ep_table_get(back, missing.as_ptr(), v.as_mut_ptr(), 3), EpStatus::NotFound);
        ep_table_free(back);
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    unsafe {
        let mut t = ptr::null_mut();
        let bad = CString::new("/nonexistent/x.embt").unwrap();
        assert_eq!(ep_table_load(bad.as_ptr(), &mut t), EpStatus::Io);
        assert!(t.is_null());
        assert_eq!(ep_table_load(ptr::null(), &mut t), EpStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert_eq!(ep_table_new(0, &mut t), EpStatus::InvalidArgument);
        assert_eq!(ep_table_dim(ptr::null()), 0);
        ep_table_free(ptr::null_mut());
        ep_model_free(ptr::null_mut());
        ep_encoder_free(ptr::null_mut());
    }
}

#[test]
fn encoder_matches_the_rust_encoder() {
    use embedplan::embed::{BuiltinEncoder, BuiltinEncoderSpec};
    let spec = BuiltinEncoderSpec {
        dim: 16,
        seed: 9,
        ..BuiltinEncoderSpec::default()
    };
    let want = BuiltinEncoder::new(spec).encode("the ferry is empty");
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(ep_encoder_new(16, 9, &mut e), EpStatus::Ok);
        assert_eq!(ep_encoder_dim(e), 16);
        let text = CString::new("the ferry is empty").unwrap();
        let mut got = [0f32; 16];
        assert_eq!(ep_encoder_encode(e, text.as_ptr(), got.as_mut_ptr(), 16), EpStatus::Ok);
        assert_eq!(got.to_vec(), want);
        ep_encoder_free(e);
    }
}

#[test]
fn model_predict_matches_forward() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    let m = TransitionModel::init(Arch::Hyper, 8, 8, 3).unwrap();
    save_checkpoint(&path, &m, 0, 0, "h").unwrap();
    let zs = [0.1f32, -0.2, 0.3, 0.0, 0.5, 0.1, -0.4, 0.2];
    let za = [0.3f32, 0.3, -0.1, 0.2, 0.0, 0.0, 0.1, -0.5];
    let (_, _, want) = m.forward(&zs, &za).unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(ep_model_load(cpath(&path).as_ptr(), &mut h), EpStatus::Ok);
        assert_eq!(ep_model_param_count(h), m.param_count());
        let mut out = vec![0f64; ep_latent_dim()];
        let st = ep_model_predict(h, zs.as_ptr(), 8, za.as_ptr(), 8, out.as_mut_ptr(), out.len());
        assert_eq!(st, EpStatus::Ok);
        assert_eq!(out, want);
        let st = ep_model_predict(h, zs.as_ptr(), 7, za.as_ptr(), 8, out.as_mut_ptr(), out.len());
        assert_eq!(st, EpStatus::DimensionMismatch);
        ep_model_free(h);
    }
}

#[test]
fn paired_t_reproduces_published_pairs() {
    let interp = [100.0, 98.2, 99.9, 99.4, 99.9, 98.6, 99.6, 99.7, 99.9];
    let gaps = [58.4, 73.4, 63.3, 44.2, 25.5, 35.9, 55.0, 50.5, 59.9];
    let extrap: Vec<f64> = interp.iter().zip(gaps).map(|(i, g)| i - g).collect();
    let (mut t, mut p, mut d) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(ep_stats_paired_t(interp.as_ptr(), extrap.as_ptr(), 9, &mut t, &mut p, &mut d), EpStatus::Ok);
        assert_eq!(
            ep_stats_paired_t(interp.as_ptr(), extrap.as_ptr(), 1, &mut t, ptr::null_mut(), ptr::null_mut()),
            EpStatus::InvalidArgument
        );
    }
    assert!((t - 10.5892).abs() < 1e-3 && (d - 5.2473).abs() < 1e-3 && p < 1e-5);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ep_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/embedplan.h")).unwrap()
}

#[test]
fn generated_header_declares_the_api() {
    let h = header();
    for decl in [
        "typedef struct EpTable EpTable;",
        "typedef struct EpModel EpModel;",
        "typedef struct EpEncoder EpEncoder;",
        "EP_STATUS_OK = 0",
        "EP_STATUS_INTERNAL = 8",
        "const char *ep_last_error(void);",
        "enum EpStatus ep_table_load(const char *path, struct EpTable **out);",
        "void ep_model_free(struct EpModel *model);",
        "enum EpStatus ep_stats_paired_t(",
    ] {
        assert!(h.contains(decl), "missing `{decl}`");
    }
    assert!(h.starts_with("#ifndef EMBEDPLAN_H"));
}

/// Directory holding the built static library (target/<profile>).
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_demo_compiles_and_runs() {
    let lib = lib_dir().join("libembedplan_ffi.a");
    if !lib.is_file() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("demo");
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new("cc")
        .arg(root.join("examples/demo.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());

    let ckpt = tmp.path().join("m.ckpt");
    let m = TransitionModel::init(Arch::Mlp, 256, 256, 42).unwrap();
    save_checkpoint(&ckpt, &m, 0, 0, "h").unwrap();
    let out = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("t=10.589"), "{text}");
    assert!(text.contains(&format!("params={}", m.param_count())), "{text}");
}
