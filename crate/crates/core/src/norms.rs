//! Vector, matrix and induced system norms.
//!
//! System norms are induced ℓ∞→ℓ∞ gains of stable LTI systems. For a system
//! with impulse response `h(t)` the gain is the largest row-wise ℓ1 sum
//! `max_i Σ_t Σ_j |h_ij(t)|`. The infinite sum is truncated once a certified
//! geometric bound on the remainder drops below half the requested tolerance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::StateSpace;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const MAX_HORIZON: usize = 1_000_000;

/// Vector p-norm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PNorm {
    One,
    Two,
    Inf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormResult {
    pub value: f64,
    /// Number of impulse-response samples summed (0 for matrix/vector norms).
    pub truncation_horizon: usize,
    /// Upper bound on the discarded remainder.
    pub tail_bound: f64,
}

impl NormResult {
    pub fn exact(value: f64) -> Self {
        Self { value, truncation_horizon: 0, tail_bound: 0.0 }
    }
}

pub fn vector_norm(v: &[f64], p: PNorm) -> f64 {
    match p {
        PNorm::One => v.iter().map(|x| x.abs()).sum(),
        PNorm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        PNorm::Inf => v.iter().fold(0.0, |m, x| nan_max(m, x.abs())),
    }
}

/// `max` that propagates NaN, so a corrupted signal never reads as small.
pub(crate) fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Induced ∞→∞ matrix norm: largest absolute row sum.
pub fn matrix_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, nan_max)
}

fn vec_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| nan_max(m, x.abs()))
}

/// Upper bound on `Σ_{k≥0} ‖A^k‖_∞`, assuming `ρ(A) < 1`.
///
/// Finds the first `m = 2^j` with `‖A^m‖ ≤ 1/2` by repeated squaring and
/// bounds the series by `Σ_{k<m} ‖A^k‖ / (1 - ‖A^m‖)`.
fn power_series_bound(a: &DMatrix<f64>) -> Option<f64> {
    let n = a.nrows();
    if n == 0 {
        return Some(1.0);
    }
    let mut sq = a.clone();
    let mut m = 1usize;
    let contraction = loop {
        let norm = matrix_inf_norm(&sq);
        if norm <= 0.5 {
            break norm;
        }
        if m >= MAX_HORIZON {
            return None;
        }
        sq = &sq * &sq;
        m *= 2;
    };
    let mut pow = DMatrix::identity(n, n);
    let mut head = 0.0;
    for _ in 0..m {
        head += matrix_inf_norm(&pow);
        pow = a * pow;
    }
    Some(head / (1.0 - contraction))
}

/// Entry-wise ℓ1 norms of the impulse response, `Σ_t |h_ij(t)|`.
///
/// Returned alongside the horizon and a tail bound that holds for every row sum.
pub fn impulse_l1_gains(sys: &StateSpace, tol: f64) -> Result<(DMatrix<f64>, usize, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let rho = sys.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let mut gains = sys.d().map(f64::abs);
    if sys.n_states() == 0 {
        return Ok((gains, 1, 0.0));
    }
    let series = power_series_bound(sys.a()).ok_or(Error::Unstable(rho))?;
    let c_norm = matrix_inf_norm(sys.c());
    let mut akb = sys.b().clone();
    let mut horizon = 1;
    let mut tail = f64::INFINITY;
    while horizon < MAX_HORIZON {
        let h = sys.c() * &akb;
        gains.zip_apply(&h, |g, v| *g += v.abs());
        akb = sys.a() * akb;
        horizon += 1;
        // remainder Σ_{j≥0} C A^j (A^k B) is bounded by ‖C‖·Σ‖A^j‖·‖A^k B‖
        tail = c_norm * series * matrix_inf_norm(&akb);
        if tail < tol / 2.0 {
            break;
        }
    }
    Ok((gains, horizon, tail))
}

/// Induced ℓ∞→ℓ∞ norm of a stable LTI system.
pub fn induced_linf_norm(sys: &StateSpace, tol: f64) -> Result<NormResult> {
    let (gains, horizon, tail) = impulse_l1_gains(sys, tol)?;
    Ok(NormResult { value: matrix_inf_norm(&gains), truncation_horizon: horizon, tail_bound: tail })
}

/// `‖x‖_∞` over a vector-valued signal.
pub fn signal_inf_norm(signal: &[DVector<f64>]) -> f64 {
    signal.iter().map(vec_inf_norm).fold(0.0, nan_max)
}
