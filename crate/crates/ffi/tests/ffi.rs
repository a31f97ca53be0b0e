use mfkernel::potential::{PotentialFamily, PotentialSpec};
use mfkernel::sim::{simulate_ips, SimConfig};
use mfkernel_ffi::*;
use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

fn quadratic() -> MfkPotential {
    MfkPotential {
        kind: MfkPotentialKind::Quadratic,
        a: 1.0,
        depth: 0.0,
        r: 0.0,
        amplitude: 0.0,
        coeffs: ptr::null(),
        n_coeffs: 0,
    }
}

fn params(n: usize, horizon: f64, seed: u64) -> MfkSimParams {
    MfkSimParams {
        n_particles: n,
        horizon,
        h: 0.01,
        sigma: 1.0,
        seed,
        x0: 0.0,
        burn_in: 0.0,
        store_stride: 1,
        threads: 1,
    }
}

fn last_error() -> String {
    let p = mfk_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn simulation_matches_the_library() {
    let q = quadratic();
    let mut traj = ptr::null_mut();
    let status = unsafe { mfk_simulate(&params(20, 10.0, 9), &q, &q, &mut traj) };
    assert_eq!(status, MfkStatus::Ok);
    let n = unsafe { mfk_trajectory_len(traj) };
    assert_eq!(n, 1001);
    let mut buf = vec![0.0; n];
    assert_eq!(unsafe { mfk_trajectory_values(traj, buf.as_mut_ptr(), n) }, MfkStatus::Ok);

    let spec = PotentialSpec::confining(PotentialFamily::Quadratic { a: 1.0 });
    let direct = simulate_ips(
        &SimConfig::new(20, 10.0, 1.0, 9),
        &spec,
        &PotentialSpec::interaction(PotentialFamily::Quadratic { a: 1.0 }),
    )
    .unwrap();
    assert_eq!(buf, direct.values());
    unsafe { mfk_trajectory_free(traj) };
}

#[test]
fn polynomial_coefficients_are_read_from_c_memory() {
    // x^4/4 - x^2/2 given as coefficients behaves like the bistable family
    let coeffs = [0.0, 0.0, -0.5, 0.0, 0.25];
    let w = MfkPotential {
        kind: MfkPotentialKind::Polynomial,
        coeffs: coeffs.as_ptr(),
        n_coeffs: coeffs.len(),
        ..quadratic()
    };
    let b = MfkPotential {
        kind: MfkPotentialKind::Bistable,
        ..quadratic()
    };
    let q = quadratic();
    let run = |w: &MfkPotential| {
        let mut t = ptr::null_mut();
        assert_eq!(unsafe { mfk_simulate(&params(10, 5.0, 4), &q, w, &mut t) }, MfkStatus::Ok);
        let mut buf = vec![0.0; unsafe { mfk_trajectory_len(t) }];
        unsafe {
            mfk_trajectory_values(t, buf.as_mut_ptr(), buf.len());
            mfk_trajectory_free(t);
        }
        buf
    };
    let (a, c) = (run(&w), run(&b));
    for (x, y) in a.iter().zip(&c) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn estimate_and_basis_round_trip() {
    let q = quadratic();
    let mut traj = ptr::null_mut();
    unsafe { mfk_simulate(&params(100, 500.0, 1), &q, &q, &mut traj) };
    let mut est = ptr::null_mut();
    assert_eq!(
        unsafe { mfk_estimate(traj, &q, 2, 1.0, 100.0, false, &mut est) },
        MfkStatus::Ok
    );
    assert_eq!(unsafe { mfk_estimate_len(est) }, 3);
    let mut beta = [0.0; 3];
    assert_eq!(unsafe { mfk_estimate_coefficients(est, beta.as_mut_ptr(), 3) }, MfkStatus::Ok);
    assert!((beta[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.15);
    let mut short = [0.0; 2];
    assert_eq!(unsafe { mfk_estimate_coefficients(est, short.as_mut_ptr(), 2) }, MfkStatus::Config);

    let mut sigma = 0.0;
    assert_eq!(unsafe { mfk_quadratic_variation_sigma(traj, &mut sigma) }, MfkStatus::Ok);
    assert!((sigma - 1.0).abs() < 0.05);

    let mut basis = ptr::null_mut();
    assert_eq!(unsafe { mfk_basis_from_trajectory(traj, 3, false, &mut basis) }, MfkStatus::Ok);
    assert_eq!(unsafe { mfk_basis_order(basis) }, 3);
    let mut v = 0.0;
    assert_eq!(unsafe { mfk_basis_eval(basis, 0, 0.7, &mut v) }, MfkStatus::Ok);
    assert!((v - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { mfk_basis_eval(basis, 4, 0.7, &mut v) }, MfkStatus::Config);
    unsafe {
        mfk_basis_free(basis);
        mfk_estimate_free(est);
        mfk_trajectory_free(traj);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let q = quadratic();
    let mut traj = ptr::null_mut();
    let bad = params(0, 1.0, 1);
    assert_eq!(unsafe { mfk_simulate(&bad, &q, &q, &mut traj) }, MfkStatus::Config);
    assert!(last_error().contains("N"));

    let explode = MfkPotential { a: -5.0, ..q };
    assert_eq!(
        unsafe { mfk_simulate(&params(2, 100.0, 1), &explode, &q, &mut traj) },
        MfkStatus::Simulation
    );

    let flat = [0.3; 50];
    assert_eq!(
        unsafe { mfk_trajectory_from_samples(flat.as_ptr(), flat.len(), 0.1, &mut traj) },
        MfkStatus::Ok
    );
    let mut basis = ptr::null_mut();
    assert_eq!(unsafe { mfk_basis_from_trajectory(traj, 2, false, &mut basis) }, MfkStatus::Basis);
    assert!(last_error().contains("reduce K"));
    assert!(basis.is_null());

    assert_eq!(
        unsafe { mfk_simulate(ptr::null(), &q, &q, &mut traj) },
        MfkStatus::NullPointer
    );
    assert_eq!(unsafe { mfk_trajectory_len(ptr::null()) }, 0);
    unsafe {
        mfk_trajectory_free(traj);
        mfk_trajectory_free(ptr::null_mut());
    }
}

fn include_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(include_dir().join("mfkernel.h")).unwrap();
    for name in [
        "mfk_simulate",
        "mfk_estimate",
        "mfk_basis_from_gaussian",
        "mfk_last_error_message",
        "MFK_STATUS_SOLVE = 5",
        "typedef struct MfkTrajectory MfkTrajectory",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles and runs the C smoke program against the static library when a C
/// compiler is available.
#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libmfkernel_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("mfk_smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(include_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let run = Command::new(&out).output().unwrap();
    assert!(
        run.status.success(),
        "C smoke program failed: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
