use std::ffi::{CStr, CString};
use std::ptr;

use periocular_eval_ffi::*;

fn last_error() -> String {
    let p = pe_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_match_hand_values() {
    let x = [1.0, 0.0, 2.0];
    let y = [1.0, 1.0, 0.0];
    let mut out = f64::NAN;
    assert_eq!(
        unsafe { pe_cosine_similarity(x.as_ptr(), y.as_ptr(), 3, &mut out) },
        PeStatus::Ok
    );
    assert!((out - 1.0 / (5f64.sqrt() * 2f64.sqrt())).abs() < 1e-15);
    assert!(pe_last_error_message().is_null());

    // (0)^2/2 + 1/1 + 4/2
    assert_eq!(
        unsafe { pe_chi2_distance(x.as_ptr(), y.as_ptr(), 3, &mut out) },
        PeStatus::Ok
    );
    assert_eq!(out, 3.0);
}

#[test]
fn errors_set_codes_and_messages() {
    let zero = [0.0, 0.0];
    let one = [1.0, 0.0];
    let mut out = 0.0;
    let status = unsafe { pe_cosine_similarity(zero.as_ptr(), one.as_ptr(), 2, &mut out) };
    assert_eq!(status, PeStatus::Domain);
    assert!(!last_error().is_empty());

    let status = unsafe { pe_cosine_similarity(ptr::null(), one.as_ptr(), 2, &mut out) };
    assert_eq!(status, PeStatus::NullPointer);
    assert!(last_error().contains('x'));

    let status = unsafe { pe_relative_change(1.0, 0.0, &mut out) };
    assert_ne!(status, PeStatus::Ok);
}

#[test]
fn eer_and_relative_change() {
    let genuine = [0.9, 0.8, 0.7, 0.3];
    let impostor = [0.1, 0.2, 0.75, 0.4];
    let (mut eer, mut thr) = (0.0, 0.0);
    let status = unsafe {
        pe_compute_eer(
            genuine.as_ptr(),
            4,
            impostor.as_ptr(),
            4,
            &mut eer,
            &mut thr,
        )
    };
    assert_eq!(status, PeStatus::Ok);
    assert_eq!(eer, 0.25);
    assert_eq!(thr, 0.7);

    let mut change = 0.0;
    assert_eq!(
        unsafe { pe_relative_change(1.0, 2.0, &mut change) },
        PeStatus::Ok
    );
    assert_eq!(change, -50.0);
}

#[test]
fn jsd_bounds() {
    let p = [1.0, 0.0];
    let q = [0.0, 3.0];
    let mut out = 0.0;
    assert_eq!(
        unsafe { pe_jsd(p.as_ptr(), q.as_ptr(), 2, &mut out) },
        PeStatus::Ok
    );
    assert!((out - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(
        unsafe { pe_jsd(p.as_ptr(), p.as_ptr(), 2, &mut out) },
        PeStatus::Ok
    );
    assert_eq!(out, 0.0);
}

#[test]
fn protocol_counts_for_full_dataset() {
    let (mut g, mut i) = (0u64, 0u64);
    assert_eq!(
        unsafe { pe_protocol_counts(86, 5, &mut g, &mut i) },
        PeStatus::Ok
    );
    assert_eq!((g, i), (8600, 438600));
}

#[test]
fn template_handle_round_trip() {
    let manifest = CString::new(
        "name = t\nembedding_dim = 2\nnonnegative = true\ndistances = D1\nsystems = A\n",
    )
    .unwrap();
    let csv =
        CString::new("subject,session,eye,distance,e0,e1\na,1,L,1,1,0\na,2,L,1,1,1\nb,1,L,1,0,2\n")
            .unwrap();
    let mut set: *mut PeTemplateSet = ptr::null_mut();
    assert_eq!(
        unsafe { pe_templates_parse(manifest.as_ptr(), csv.as_ptr(), &mut set) },
        PeStatus::Ok
    );
    assert_eq!(unsafe { pe_templates_len(set) }, 3);

    let probe = CString::new("a_s1_L_d1").unwrap();
    let gallery = CString::new("a_s2_L_d1").unwrap();
    let mut out = 0.0;
    let status = unsafe {
        pe_templates_compare(
            set,
            probe.as_ptr(),
            gallery.as_ptr(),
            PeMetric::Chi2,
            &mut out,
        )
    };
    assert_eq!(status, PeStatus::Ok);
    assert_eq!(out, -1.0);

    let missing = CString::new("z_s1_L_d1").unwrap();
    let status = unsafe {
        pe_templates_compare(
            set,
            probe.as_ptr(),
            missing.as_ptr(),
            PeMetric::Cosine,
            &mut out,
        )
    };
    assert_eq!(status, PeStatus::Lookup);
    unsafe { pe_templates_free(set) };

    let bad = CString::new("subject,session,eye,distance,e0,e1\na,1,L,1,1\n").unwrap();
    let mut set: *mut PeTemplateSet = ptr::null_mut();
    let status = unsafe { pe_templates_parse(manifest.as_ptr(), bad.as_ptr(), &mut set) };
    assert_eq!(status, PeStatus::Dimension);
    assert!(set.is_null());
}

#[test]
fn fusion_handle_applies_affine_map() {
    let weights = [2.0, -1.0];
    let mut model: *mut PeFusionModel = ptr::null_mut();
    assert_eq!(
        unsafe { pe_fusion_model_new(0.5, weights.as_ptr(), 2, &mut model) },
        PeStatus::Ok
    );
    assert_eq!(unsafe { pe_fusion_model_systems(model) }, 2);
    let scores = [1.0, 1.0, 0.0, 2.0, 3.0, 0.5];
    let mut out = [0.0; 3];
    let status = unsafe { pe_fusion_model_apply(model, scores.as_ptr(), 3, 2, out.as_mut_ptr()) };
    assert_eq!(status, PeStatus::Ok);
    assert_eq!(out, [1.5, -1.5, 6.0]);
    let status = unsafe { pe_fusion_model_apply(model, scores.as_ptr(), 2, 3, out.as_mut_ptr()) };
    assert_eq!(status, PeStatus::Usage);
    unsafe { pe_fusion_model_free(model) };

    let text = CString::new("bias = 1\nweight.A = 0.5\n").unwrap();
    let mut model: *mut PeFusionModel = ptr::null_mut();
    assert_eq!(
        unsafe { pe_fusion_model_parse(text.as_ptr(), &mut model) },
        PeStatus::Ok
    );
    let mut fused = 0.0;
    let s = [4.0];
    assert_eq!(
        unsafe { pe_fusion_model_apply(model, s.as_ptr(), 1, 1, &mut fused) },
        PeStatus::Ok
    );
    assert_eq!(fused, 3.0);
    unsafe { pe_fusion_model_free(model) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(pe_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
