use std::ffi::{CStr, CString};
use std::ptr;

use wedgenet_ffi::*;

fn last_error() -> String {
    let p = wn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn geometry_calls() {
    let rows = [1.0, 2.0, 3.0, 4.0];
    let mut v = 0.0;
    assert_eq!(unsafe { wn_signed_volume(rows.as_ptr(), 2, &mut v) }, WnStatus::Ok);
    assert_eq!(v, -2.0);

    let e = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mut c = [0.0; 3];
    assert_eq!(unsafe { wn_cross(e.as_ptr(), 3, c.as_mut_ptr()) }, WnStatus::Ok);
    assert_eq!(c, [0.0, 0.0, 1.0]);

    // Opposite sides of the x-axis: one point is at distance 2, the other clipped.
    let basis = [1.0, 0.0];
    let mut above = 0.0;
    let mut below = 0.0;
    unsafe {
        assert_eq!(wn_dist_plus_to_span([0.3, 2.0].as_ptr(), basis.as_ptr(), 1, 2, &mut above), WnStatus::Ok);
        assert_eq!(wn_dist_plus_to_span([0.3, -2.0].as_ptr(), basis.as_ptr(), 1, 2, &mut below), WnStatus::Ok);
    }
    assert_eq!(above + below, 2.0);
    assert_eq!(above * below, 0.0);

    let pts = [0.0, 1.0, 1.0, 1.0];
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(wn_dist_plus_to_affine([5.0, 4.0].as_ptr(), pts.as_ptr(), 2, 2, &mut a), WnStatus::Ok);
        assert_eq!(wn_dist_plus_to_affine([5.0, -2.0].as_ptr(), pts.as_ptr(), 2, 2, &mut b), WnStatus::Ok);
    }
    assert_eq!(a + b, 3.0);
    assert_eq!(a * b, 0.0);
}

#[test]
fn errors_are_reported() {
    let mut v = 0.0;
    assert_eq!(unsafe { wn_signed_volume(ptr::null(), 2, &mut v) }, WnStatus::NullPointer);
    assert!(last_error().contains("rows"));

    let dup = [1.0, 2.0, 2.0, 4.0];
    let mut c = [0.0; 2];
    // A single vector in 2-D is fine; a zero-length one is still a valid call.
    assert_eq!(unsafe { wn_cross(dup.as_ptr(), 2, c.as_mut_ptr()) }, WnStatus::Ok);
    assert_eq!(unsafe { wn_cross(dup.as_ptr(), 1, c.as_mut_ptr()) }, WnStatus::InvalidArgument);

    let bad = CString::new("no-such-variant").unwrap();
    let x = [0.0, 1.0, 2.0];
    let y = [1.0, -1.0, 1.0];
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { wn_dataset_new(x.as_ptr(), 3, 1, y.as_ptr(), 1, &mut ds) }, WnStatus::Ok);
    let mut dict = ptr::null_mut();
    assert_eq!(
        unsafe { wn_dictionary_build(ds, bad.as_ptr(), 0, 1000, 0, &mut dict) },
        WnStatus::Variant
    );
    assert!(dict.is_null());
    unsafe { wn_dataset_free(ds) };
}

#[test]
fn train_reconstruct_polish_roundtrip() {
    let x = [-1.0, -0.6, -0.1, 0.3, 0.7, 1.0];
    let y = [0.5, -0.2, 0.4, 1.0, -0.3, 0.2];
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(wn_dataset_new(x.as_ptr(), 6, 1, y.as_ptr(), 1, &mut ds), WnStatus::Ok);
        let (mut n, mut d, mut c) = (0, 0, 0);
        assert_eq!(wn_dataset_shape(ds, &mut n, &mut d, &mut c), WnStatus::Ok);
        assert_eq!((n, d, c), (6, 1, 1));

        let variant = CString::new("1d").unwrap();
        let mut dict = ptr::null_mut();
        assert_eq!(wn_dictionary_build(ds, variant.as_ptr(), 0, 1000, 0, &mut dict), WnStatus::Ok);
        let mut p = 0;
        assert_eq!(wn_dictionary_shape(dict, ptr::null_mut(), &mut p), WnStatus::Ok);
        assert_eq!(p, 12);

        let mut sol = ptr::null_mut();
        assert_eq!(wn_solve(dict, ds, 0.05, WnLoss::Squared, 0, &mut sol), WnStatus::Ok);
        let mut obj = 0.0;
        assert_eq!(wn_solution_objective(sol, &mut obj), WnStatus::Ok);

        let mut net = ptr::null_mut();
        assert_eq!(wn_network_reconstruct(dict, sol, &mut net), WnStatus::Ok);
        let mut cost = 0.0;
        assert_eq!(wn_network_cost(net, ds, 0.05, 1, WnLoss::Squared, &mut cost), WnStatus::Ok);
        assert!((cost - obj).abs() <= 1e-8 * obj, "{cost} vs {obj}");

        let mut f = [0.0; 6];
        assert_eq!(wn_network_forward(net, x.as_ptr(), 6, 1, f.as_mut_ptr(), 6), WnStatus::Ok);
        assert_eq!(wn_network_forward(net, x.as_ptr(), 6, 1, f.as_mut_ptr(), 5), WnStatus::InvalidArgument);

        let mut json = ptr::null_mut();
        assert_eq!(wn_network_to_json(net, &mut json), WnStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(wn_network_from_json(json, &mut back), WnStatus::Ok);
        let mut g = [0.0; 6];
        assert_eq!(wn_network_forward(back, x.as_ptr(), 6, 1, g.as_mut_ptr(), 6), WnStatus::Ok);
        assert_eq!(f, g);
        wn_string_free(json);

        let mut sj = ptr::null_mut();
        assert_eq!(wn_solution_to_json(sol, &mut sj), WnStatus::Ok);
        assert!(CStr::from_ptr(sj).to_str().unwrap().contains("\"support\""));
        wn_string_free(sj);

        let mut polished = ptr::null_mut();
        let mut report = ptr::null_mut();
        let st = wn_polish(net, ds, 0.05, 1, &mut polished, &mut report);
        assert_eq!(st, WnStatus::Ok, "{}", last_error());
        assert!(CStr::from_ptr(report).to_str().unwrap().contains("post_objective"));
        wn_string_free(report);

        wn_network_free(polished);
        wn_network_free(back);
        wn_network_free(net);
        wn_solution_free(sol);
        wn_dictionary_free(dict);
        wn_dataset_free(ds);
        // NULL is accepted by every free function.
        wn_dataset_free(ptr::null_mut());
        wn_string_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/wedgenet.h");
    assert!(std::path::Path::new(header).exists());
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(status.success());
}
