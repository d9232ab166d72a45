use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use passgp::synthetic::blobs;
use passgp_ffi::*;

fn last_error() -> String {
    let p = passgp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn row_major(x: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

fn small_options() -> PassgpFitOptions {
    PassgpFitOptions {
        n_init: 20,
        n_sub: 4,
        n_pass: 1,
        sq_length: 2.0,
        ..passgp_fit_options_default()
    }
}

fn train() -> (*mut PassgpModel, Vec<f64>, Vec<f64>) {
    let ds = blobs(120, 5);
    let x = row_major(&ds.features);
    let y = ds.binary_labels().unwrap();
    let opts = small_options();
    let mut m = ptr::null_mut();
    let s = unsafe { passgp_fit(x.as_ptr(), ds.n(), 2, y.as_ptr(), &opts, &mut m) };
    assert_eq!(
        s,
        PassgpStatus::Ok,
        "{}",
        if s == PassgpStatus::Ok {
            String::new()
        } else {
            last_error()
        }
    );
    (m, x, y)
}

#[test]
fn fit_predict_save_load() {
    let (m, x, y) = train();
    unsafe {
        assert_eq!(passgp_model_dim(m), 2);
        let size = passgp_model_active_size(m);
        assert!((2..120).contains(&size));
        let n = y.len();
        let (mut mean, mut var, mut prob) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let s = passgp_predict(
            m,
            x.as_ptr(),
            n,
            2,
            mean.as_mut_ptr(),
            var.as_mut_ptr(),
            prob.as_mut_ptr(),
        );
        assert_eq!(s, PassgpStatus::Ok);
        let wrong = (0..n).filter(|&i| mean[i].signum() != y[i]).count();
        assert!(wrong <= 3, "{wrong} training errors");
        assert!(var.iter().all(|&v| v > 0.0));
        assert!(prob.iter().all(|&p| (0.0..=1.0).contains(&p)));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.passgp").to_str().unwrap()).unwrap();
        assert_eq!(passgp_model_save(m, path.as_ptr()), PassgpStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(
            passgp_model_load(path.as_ptr(), &mut back),
            PassgpStatus::Ok
        );
        let mut prob2 = vec![0.0; n];
        let s = passgp_predict(
            back,
            x.as_ptr(),
            n,
            2,
            ptr::null_mut(),
            ptr::null_mut(),
            prob2.as_mut_ptr(),
        );
        assert_eq!(s, PassgpStatus::Ok);
        assert_eq!(prob, prob2);
        passgp_model_free(back);
        passgp_model_free(m);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut m = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.passgp").unwrap();
        assert_eq!(
            passgp_model_load(missing.as_ptr(), &mut m),
            PassgpStatus::Io
        );
        assert!(m.is_null());
        assert!(last_error().contains("/nonexistent/model.passgp"));

        assert_eq!(
            passgp_model_load(ptr::null(), &mut m),
            PassgpStatus::NullPointer
        );

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.passgp");
        std::fs::write(&junk, b"not a model").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(
            passgp_model_load(junk.as_ptr(), &mut m),
            PassgpStatus::ModelFormat
        );

        let x = [0.0, 1.0];
        let y = [1.0, 0.5];
        let s = passgp_fit(x.as_ptr(), 2, 1, y.as_ptr(), ptr::null(), &mut m);
        assert_eq!(s, PassgpStatus::InvalidArgument);
        assert!(m.is_null());

        let (model, xs, _) = train();
        let mut out = [0.0; 1];
        let s = passgp_predict(
            model,
            xs.as_ptr(),
            1,
            3,
            out.as_mut_ptr(),
            ptr::null_mut(),
            ptr::null_mut(),
        );
        assert_eq!(s, PassgpStatus::InvalidArgument);
        assert!(last_error().contains("expects 2"));
        assert_eq!(
            passgp_predict(
                model,
                ptr::null(),
                0,
                2,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut()
            ),
            PassgpStatus::Ok
        );
        passgp_model_free(model);
    }
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        passgp_model_free(ptr::null_mut());
        assert_eq!(passgp_model_active_size(ptr::null()), 0);
        assert_eq!(passgp_model_dim(ptr::null()), 0);
    }
}

#[test]
fn header_declares_the_api() {
    let h =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/passgp.h")).unwrap();
    for name in [
        "passgp_fit",
        "passgp_predict",
        "passgp_model_load",
        "passgp_model_save",
        "passgp_model_free",
        "passgp_last_error",
        "PASSGP_STATUS_NUMERICAL",
        "typedef struct PassgpModel PassgpModel",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
    // Compile the header as C when a compiler is around.
    if let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-xc", "-std=c99", "-Wall", "-Werror"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/passgp.h"))
        .output()
    {
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
