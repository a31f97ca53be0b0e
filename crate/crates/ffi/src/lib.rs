//! C ABI over `mfkernel`.
//!
//! Objects cross the boundary as opaque handles created by `mfk_*` functions
//! and released with the matching `*_free`. Every fallible call returns an
//! [`MfkStatus`]; on failure `mfk_last_error_message` describes the error for
//! the calling thread. Panics are caught and reported as `MFK_STATUS_PANIC`.

use mfkernel::gmm::{estimate_interaction, AdmissibleSet, EstimatorConfig, KernelEstimate};
use mfkernel::moments::{analytic_moments, empirical_moments, quadratic_variation_sigma, GaussianMeasure, Sampling};
use mfkernel::orthopoly::{build_basis, OrthoBasis};
use mfkernel::potential::{PotentialFamily, PotentialSpec};
use mfkernel::sim::{simulate_ips, InitialCondition, SimConfig};
use mfkernel::{Error, Trajectory};
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Status codes; the nonzero values below 10 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfkStatus {
    Ok = 0,
    Config = 2,
    Simulation = 3,
    Basis = 4,
    Solve = 5,
    NullPointer = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfkPotentialKind {
    /// `a x^2 / 2`
    Quadratic,
    /// `x^4/4 - x^2/2`
    Bistable,
    Cosh,
    /// `depth (1 - exp(-a (x^2 - r^2)))^2`
    MorseLike,
    /// `-amplitude / sqrt(2 pi) exp(-x^2 / 2)`
    GaussianWell,
    /// `sum coeffs[j] x^j + amplitude cos(x)`
    PolyCos,
    /// `sum coeffs[j] x^j`
    Polynomial,
    Zero,
}

/// A potential. Fields a family does not use are ignored.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfkPotential {
    pub kind: MfkPotentialKind,
    pub a: f64,
    pub depth: f64,
    pub r: f64,
    pub amplitude: f64,
    pub coeffs: *const f64,
    pub n_coeffs: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfkSimParams {
    pub n_particles: usize,
    pub horizon: f64,
    pub h: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Common starting point of all particles.
    pub x0: f64,
    pub burn_in: f64,
    pub store_stride: usize,
    pub threads: usize,
}

pub struct MfkTrajectory(Trajectory);
pub struct MfkBasis(OrthoBasis);
pub struct MfkEstimate(KernelEstimate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MfkStatus {
    match err.exit_code() {
        3 => MfkStatus::Simulation,
        4 => MfkStatus::Basis,
        5 => MfkStatus::Solve,
        _ => MfkStatus::Config,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MfkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfkStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer passed for `{what}`"));
            MfkStatus::NullPointer
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            MfkStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn family(p: &MfkPotential) -> Result<PotentialFamily, Failure> {
    let coeffs = || -> Result<Vec<f64>, Failure> { Ok(slice(p.coeffs, p.n_coeffs, "coeffs")?.to_vec()) };
    Ok(match p.kind {
        MfkPotentialKind::Quadratic => PotentialFamily::Quadratic { a: p.a },
        MfkPotentialKind::Bistable => PotentialFamily::Bistable,
        MfkPotentialKind::Cosh => PotentialFamily::Cosh,
        MfkPotentialKind::MorseLike => PotentialFamily::MorseLike {
            depth: p.depth,
            a: p.a,
            r: p.r,
        },
        MfkPotentialKind::GaussianWell => PotentialFamily::GaussianWell {
            amplitude: p.amplitude,
        },
        MfkPotentialKind::PolyCos => PotentialFamily::PolyCos {
            coeffs: coeffs()?,
            cos_amplitude: p.amplitude,
        },
        MfkPotentialKind::Polynomial => PotentialFamily::Polynomial { coeffs: coeffs()? },
        MfkPotentialKind::Zero => PotentialFamily::Zero,
    })
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mfk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mfk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulates the particle system and returns the path of particle 1.
///
/// # Safety
/// Pointers must be valid for reads (inputs) or writes (`out`).
#[no_mangle]
pub unsafe extern "C" fn mfk_simulate(
    params: *const MfkSimParams,
    confining: *const MfkPotential,
    interaction: *const MfkPotential,
    out: *mut *mut MfkTrajectory,
) -> MfkStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let v = PotentialSpec::confining(family(deref(confining, "confining")?)?);
        let w = PotentialSpec::interaction(family(deref(interaction, "interaction")?)?);
        let cfg = SimConfig {
            n_particles: p.n_particles,
            horizon: p.horizon,
            h: p.h,
            sigma: p.sigma,
            seed: p.seed,
            init: InitialCondition::Deterministic { x0: p.x0 },
            burn_in: p.burn_in,
            store_stride: p.store_stride,
            threads: p.threads.max(1),
        };
        let traj = simulate_ips(&cfg, &v, &w)?;
        write_out(out, Box::into_raw(Box::new(MfkTrajectory(traj))), "out")
    })
}

/// Wraps equally spaced observations `values[0..len]` with spacing `delta`.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfk_trajectory_from_samples(
    values: *const f64,
    len: usize,
    delta: f64,
    out: *mut *mut MfkTrajectory,
) -> MfkStatus {
    guard(|| {
        let v = slice(values, len, "values")?.to_vec();
        let traj = Trajectory::from_samples(v, delta)?;
        write_out(out, Box::into_raw(Box::new(MfkTrajectory(traj))), "out")
    })
}

/// Number of stored samples, or 0 for NULL.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfk_trajectory_len(traj: *const MfkTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Copies up to `cap` samples into `buf`.
///
/// # Safety
/// `traj` must be a live handle and `buf` writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfk_trajectory_values(
    traj: *const MfkTrajectory,
    buf: *mut f64,
    cap: usize,
) -> MfkStatus {
    guard(|| {
        let t = deref(traj, "traj")?;
        let n = cap.min(t.0.len());
        if n > 0 {
            if buf.is_null() {
                return Err(Failure::Null("buf"));
            }
            ptr::copy_nonoverlapping(t.0.values().as_ptr(), buf, n);
        }
        Ok(())
    })
}

/// Quadratic-variation estimate of the diffusion coefficient.
///
/// # Safety
/// `traj` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfk_quadratic_variation_sigma(
    traj: *const MfkTrajectory,
    out: *mut f64,
) -> MfkStatus {
    guard(|| {
        let s = quadratic_variation_sigma(&deref(traj, "traj")?.0)?;
        write_out(out, s, "out")
    })
}

/// # Safety
/// `traj` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfk_trajectory_free(traj: *mut MfkTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

fn sampling(discrete: bool) -> Sampling {
    if discrete {
        Sampling::Discrete
    } else {
        Sampling::Continuous
    }
}

/// Orthonormal basis of degree `order` from the empirical moments of `traj`.
///
/// # Safety
/// `traj` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfk_basis_from_trajectory(
    traj: *const MfkTrajectory,
    order: usize,
    discrete: bool,
    out: *mut *mut MfkBasis,
) -> MfkStatus {
    guard(|| {
        let m = empirical_moments(&deref(traj, "traj")?.0, 2 * order, sampling(discrete))?;
        let basis = build_basis(&m, order)?;
        write_out(out, Box::into_raw(Box::new(MfkBasis(basis))), "out")
    })
}

/// Orthonormal basis of degree `order` for `N(mean, var)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfk_basis_from_gaussian(
    mean: f64,
    var: f64,
    order: usize,
    out: *mut *mut MfkBasis,
) -> MfkStatus {
    guard(|| {
        if !(var > 0.0) {
            return Err(Error::InvalidConfig("variance must be positive".into()).into());
        }
        let m = analytic_moments(GaussianMeasure::new(mean, var), 2 * order)?;
        let basis = build_basis(&m, order)?;
        write_out(out, Box::into_raw(Box::new(MfkBasis(basis))), "out")
    })
}

/// Highest degree in the basis, or 0 for NULL.
///
/// # Safety
/// `basis` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfk_basis_order(basis: *const MfkBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.order())
}

/// `psi_k(x)`.
///
/// # Safety
/// `basis` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfk_basis_eval(
    basis: *const MfkBasis,
    k: usize,
    x: f64,
    out: *mut f64,
) -> MfkStatus {
    guard(|| {
        let v = deref(basis, "basis")?.0.eval(k, x)?;
        write_out(out, v, "out")
    })
}

/// Monomial coefficients of `psi_k` (`k + 1` values) copied into `buf`.
///
/// # Safety
/// `basis` must be a live handle and `buf` writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfk_basis_coefficients(
    basis: *const MfkBasis,
    k: usize,
    buf: *mut f64,
    cap: usize,
) -> MfkStatus {
    guard(|| {
        let c = deref(basis, "basis")?.0.monomial_coeffs(k)?;
        if cap < c.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                got: cap,
            }
            .into());
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        ptr::copy_nonoverlapping(c.as_ptr(), buf, c.len());
        Ok(())
    })
}

/// # Safety
/// `basis` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfk_basis_free(basis: *mut MfkBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Estimates `W'` from `traj` with `order + 1` coefficients. A positive
/// `ball_radius` projects onto that Euclidean ball; zero or negative means
/// no projection.
///
/// # Safety
/// `traj` and `confining` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfk_estimate(
    traj: *const MfkTrajectory,
    confining: *const MfkPotential,
    order: usize,
    sigma: f64,
    ball_radius: f64,
    discrete: bool,
    out: *mut *mut MfkEstimate,
) -> MfkStatus {
    guard(|| {
        let t = deref(traj, "traj")?;
        let v = PotentialSpec::confining(family(deref(confining, "confining")?)?);
        let cfg = EstimatorConfig {
            order,
            sigma,
            admissible: if ball_radius > 0.0 {
                AdmissibleSet::EuclideanBall { radius: ball_radius }
            } else {
                AdmissibleSet::Unconstrained
            },
            sampling: sampling(discrete),
        };
        let run = estimate_interaction(&t.0, &v, &cfg)?;
        write_out(out, Box::into_raw(Box::new(MfkEstimate(run.estimate))), "out")
    })
}

/// `W'_hat(x)`.
///
/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfk_estimate_eval(est: *const MfkEstimate, x: f64, out: *mut f64) -> MfkStatus {
    guard(|| {
        let v = deref(est, "est")?.0.eval(x);
        write_out(out, v, "out")
    })
}

/// Number of coefficients (`K + 1`), or 0 for NULL.
///
/// # Safety
/// `est` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfk_estimate_len(est: *const MfkEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.0.beta_hat.len())
}

/// Copies the basis coefficients `beta_hat` into `buf`.
///
/// # Safety
/// `est` must be a live handle and `buf` writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfk_estimate_coefficients(
    est: *const MfkEstimate,
    buf: *mut f64,
    cap: usize,
) -> MfkStatus {
    guard(|| {
        let e = deref(est, "est")?;
        let n = e.0.beta_hat.len();
        if cap < n {
            return Err(Error::DimensionMismatch { expected: n, got: cap }.into());
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        ptr::copy_nonoverlapping(e.0.beta_hat.as_ptr(), buf, n);
        Ok(())
    })
}

/// # Safety
/// `est` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfk_estimate_free(est: *mut MfkEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}
