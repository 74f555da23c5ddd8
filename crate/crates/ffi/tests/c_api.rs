use std::ffi::{CStr, CString};
use std::ptr;

use mpchorizon::gradients::{horizon_gradient, memory_estimate, MemoryMode, MemoryModel};
use mpchorizon::network::Network;
use mpchorizon::numerics::{Matrix, SeededRng};
use mpchorizon_ffi::*;

fn last_error() -> String {
    let p = mpch_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sample(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::new(seed);
    (0..rows * cols).map(|_| rng.standard_normal()).collect()
}

fn new_net(seed: u64) -> *mut MpchNetwork {
    let mut net = ptr::null_mut();
    let st = unsafe { mpch_network_res_mlp(3, 5, 2, 6, 0.3, seed, &mut net) };
    assert_eq!(st, MpchStatus::Ok);
    assert!(!net.is_null());
    net
}

#[test]
fn handle_lifecycle_and_shape() {
    let net = new_net(7);
    unsafe {
        assert_eq!(mpch_network_depth(net), 6);
        let mut rng = SeededRng::new(7);
        let reference = Network::res_mlp(3, 5, 2, 6, 0.3, &mut rng).unwrap();
        assert_eq!(mpch_network_param_count(net), reference.param_count());
        assert_eq!(mpch_network_depth(ptr::null()), 0);
        mpch_network_free(net);
        mpch_network_free(ptr::null_mut());
    }
}

#[test]
fn json_round_trip_through_handles() {
    let net = new_net(3);
    unsafe {
        let mut text = ptr::null_mut();
        assert_eq!(mpch_network_to_json(net, &mut text), MpchStatus::Ok);
        let mut copy = ptr::null_mut();
        assert_eq!(mpch_network_from_json(text, &mut copy), MpchStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(mpch_network_to_json(copy, &mut again), MpchStatus::Ok);
        assert_eq!(CStr::from_ptr(text), CStr::from_ptr(again));
        mpch_string_free(text);
        mpch_string_free(again);
        mpch_network_free(copy);
        mpch_network_free(net);
    }
}

#[test]
fn bad_json_reports_serialization_error() {
    let bad = CString::new("{\"format\":\"nope\"}").unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { mpch_network_from_json(bad.as_ptr(), &mut out) };
    assert_eq!(st, MpchStatus::Serialization);
    assert!(out.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn gradient_matches_engine() {
    let net = new_net(11);
    let (rows, h) = (4, 2);
    let x = sample(rows, 3, 1);
    let y = sample(rows, 2, 2);
    let count = unsafe { mpch_network_param_count(net) };
    let mut out = vec![0.0; count];
    let st = unsafe { mpch_horizon_gradient(net, x.as_ptr(), rows, 3, y.as_ptr(), 2, h, out.as_mut_ptr(), count) };
    assert_eq!(st, MpchStatus::Ok);
    assert!(mpch_last_error_message().is_null());

    let mut rng = SeededRng::new(11);
    let reference = Network::res_mlp(3, 5, 2, 6, 0.3, &mut rng).unwrap();
    let g = horizon_gradient(
        &reference,
        &Matrix::new(rows, 3, x.clone()).unwrap(),
        &Matrix::new(rows, 2, y.clone()).unwrap(),
        h,
    )
    .unwrap();
    assert_eq!(out, g.concatenated());

    let mut cos = 0.0;
    let st = unsafe { mpch_gradient_cosine(net, x.as_ptr(), rows, 3, y.as_ptr(), 2, 6, &mut cos) };
    assert_eq!(st, MpchStatus::Ok);
    assert!((cos - 1.0).abs() < 1e-12);
    unsafe { mpch_network_free(net) };
}

#[test]
fn gradient_error_codes() {
    let net = new_net(5);
    let x = sample(2, 3, 1);
    let y = sample(2, 2, 2);
    let count = unsafe { mpch_network_param_count(net) };
    let mut out = vec![0.0; count];
    unsafe {
        let st = mpch_horizon_gradient(net, x.as_ptr(), 2, 3, y.as_ptr(), 2, 1, out.as_mut_ptr(), count - 1);
        assert_eq!(st, MpchStatus::BufferTooSmall);
        let st = mpch_horizon_gradient(net, x.as_ptr(), 2, 3, y.as_ptr(), 2, 0, out.as_mut_ptr(), count);
        assert_ne!(st, MpchStatus::Ok);
        let st = mpch_horizon_gradient(net, x.as_ptr(), 1, 6, y.as_ptr(), 2, 1, out.as_mut_ptr(), count);
        assert_eq!(st, MpchStatus::DimensionMismatch);
        let st = mpch_horizon_gradient(ptr::null(), x.as_ptr(), 2, 3, y.as_ptr(), 2, 1, out.as_mut_ptr(), count);
        assert_eq!(st, MpchStatus::NullPointer);
        assert!(last_error().contains("null"));
        mpch_network_free(net);
    }
}

#[test]
fn memory_matches_engine() {
    let units = [2.0, 3.0, 1.0, 4.0];
    for (mode, core_mode) in [(MpchMemoryMode::Eager, MemoryMode::Eager), (MpchMemoryMode::Static, MemoryMode::Static)] {
        let model = MemoryModel::new(core_mode, units.to_vec(), 1.5).unwrap();
        for h in 1..=4 {
            let mut got = 0.0;
            let st = unsafe { mpch_memory_estimate(mode, units.as_ptr(), 4, 1.5, h, &mut got) };
            assert_eq!(st, MpchStatus::Ok);
            assert_eq!(got, memory_estimate(&model, h, 4).unwrap().units);
        }
    }
    let ones = [1.0; 4];
    let mut got = 0.0;
    let st = unsafe { mpch_memory_estimate(MpchMemoryMode::Static, ones.as_ptr(), 4, 0.0, 2, &mut got) };
    assert_eq!(st, MpchStatus::Ok);
    assert_eq!(got, 7.0);
}

#[test]
fn selection_through_c_api() {
    let depth = 10;
    let hs = [1usize, 3, 5, 8, 10];
    let cos: Vec<f64> = hs
        .iter()
        .map(|&h| (1.0 - 0.8 * (1.0 - h as f64 / depth as f64).powi(3)).sqrt())
        .collect();
    let mem: Vec<f64> = hs.iter().map(|&h| h as f64 + 2.0).collect();
    let mut sel = MpchSelection {
        horizon: 99,
        feasible: false,
        objective_value: 0.0,
    };
    let st = unsafe {
        mpch_select_horizon(
            depth,
            hs.as_ptr(),
            cos.as_ptr(),
            mem.as_ptr(),
            hs.len(),
            MpchObjectiveKind::AccuracyConstraint,
            0.05,
            MpchCostKind::Linear,
            1.0,
            1.0,
            &mut sel,
        )
    };
    assert_eq!(st, MpchStatus::Ok);
    assert!(sel.feasible);
    assert!(sel.horizon >= 1 && sel.horizon <= depth);

    // A flat cosine of 0.5 gives rate 0.25 everywhere, short of 0.9.
    let low = vec![0.5; hs.len()];
    let st = unsafe {
        mpch_select_horizon(
            depth,
            hs.as_ptr(),
            low.as_ptr(),
            mem.as_ptr(),
            hs.len(),
            MpchObjectiveKind::AccuracyConstraint,
            0.1,
            MpchCostKind::Ladder,
            1.0,
            4.0,
            &mut sel,
        )
    };
    assert_eq!(st, MpchStatus::Ok);
    assert!(!sel.feasible);
    assert_eq!(sel.horizon, 0);
    assert!(sel.objective_value.is_nan());

    let dup = [1usize, 1];
    let st = unsafe {
        mpch_select_horizon(
            depth,
            dup.as_ptr(),
            cos.as_ptr(),
            mem.as_ptr(),
            2,
            MpchObjectiveKind::Weighted,
            0.1,
            MpchCostKind::Linear,
            1.0,
            1.0,
            &mut sel,
        )
    };
    assert_eq!(st, MpchStatus::InvalidInput);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(mpch_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mpchorizon.h")).unwrap();
    for name in [
        "mpch_network_res_mlp",
        "mpch_network_free",
        "mpch_horizon_gradient",
        "mpch_gradient_cosine",
        "mpch_memory_estimate",
        "mpch_select_horizon",
        "mpch_last_error_message",
        "typedef struct MpchNetwork MpchNetwork",
        "MPCH_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include "mpchorizon.h"
int probe(void) {
    MpchNetwork *net = NULL;
    MpchStatus st = mpch_network_res_mlp(3, 5, 2, 6, 0.0, 1, &net);
    if (st != MPCH_STATUS_OK) return (int)st;
    size_t n = mpch_network_param_count(net);
    mpch_network_free(net);
    return n > 0 ? 0 : 1;
}
"#,
    )
    .unwrap();
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler available, skipping");
        return;
    };
    assert!(status.success());
}
