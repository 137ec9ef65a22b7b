//! Disturbance-action OCO controller.
//!
//! The control law is `u_t = -K x_t + Σ_{i<H} M_t^{[i]} ŵ_{t-i}`. The gains
//! `M_t` are stacked into one `n_u × n_x·H` matrix and learned by online
//! projected gradient descent on an "ideal" cost: the cost of an `H`-step
//! rollout of the nominal plant from a zero state, holding the gains fixed
//! and replaying the recorded disturbance estimates.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::StateSpace;
use crate::norms::matrix_inf_norm;

/// Stacked FIR coefficients `[M^{[0]} … M^{[H-1]}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirGains {
    m: DMatrix<f64>,
    horizon: usize,
}

impl FirGains {
    pub fn zeros(n_u: usize, n_x: usize, horizon: usize) -> Self {
        Self { m: DMatrix::zeros(n_u, n_x * horizon), horizon }
    }

    pub fn from_matrix(m: DMatrix<f64>, horizon: usize) -> Result<Self> {
        if horizon == 0 || !m.ncols().is_multiple_of(horizon) {
            return Err(Error::Dimension(format!(
                "gain matrix has {} columns, not a multiple of H = {horizon}",
                m.ncols()
            )));
        }
        Ok(Self { m, horizon })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn n_u(&self) -> usize {
        self.m.nrows()
    }
    pub fn n_x(&self) -> usize {
        self.m.ncols() / self.horizon
    }

    /// Block `M^{[i]}`.
    pub fn tap(&self, i: usize) -> DMatrix<f64> {
        let n_x = self.n_x();
        self.m.view((0, i * n_x), (self.n_u(), n_x)).into_owned()
    }

    pub fn inf_norm(&self) -> f64 {
        matrix_inf_norm(&self.m)
    }

    /// A unit ∞-norm stacked window `Ŵ` with `‖M Ŵ‖_∞ = ‖M‖_{∞→∞}`:
    /// the sign pattern of the row with the largest absolute sum.
    pub fn worst_case_window(&self) -> DVector<f64> {
        let row = (0..self.m.nrows())
            .max_by(|&i, &j| {
                let si: f64 = self.m.row(i).iter().map(|v| v.abs()).sum();
                let sj: f64 = self.m.row(j).iter().map(|v| v.abs()).sum();
                si.total_cmp(&sj)
            })
            .unwrap_or(0);
        DVector::from_fn(self.m.ncols(), |k, _| if self.m.nrows() == 0 || self.m[(row, k)] >= 0.0 { 1.0 } else { -1.0 })
    }
}

/// Recent disturbance estimates, newest first; entries before `t = 0` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceHistory {
    buf: VecDeque<DVector<f64>>,
    n_x: usize,
    recorded: usize,
}

impl DisturbanceHistory {
    pub fn new(n_x: usize, capacity: usize) -> Self {
        let buf = (0..capacity.max(1)).map(|_| DVector::zeros(n_x)).collect();
        Self { buf, n_x, recorded: 0 }
    }

    /// History long enough for the ideal-cost rollout of horizon `h`.
    pub fn for_horizon(n_x: usize, h: usize) -> Self {
        Self::new(n_x, 2 * h)
    }

    pub fn push(&mut self, w: DVector<f64>) {
        debug_assert_eq!(w.len(), self.n_x);
        self.buf.pop_back();
        self.buf.push_front(w);
        self.recorded += 1;
    }

    pub fn capacity(&self) -> usize {
        self.buf.len()
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    /// Number of estimates pushed so far.
    pub fn recorded(&self) -> usize {
        self.recorded
    }

    /// `ŵ_{t-lag}`.
    pub fn get(&self, lag: usize) -> &DVector<f64> {
        &self.buf[lag]
    }

    /// Stacked window `[ŵ_{t-lag}; …; ŵ_{t-lag-h+1}]`.
    pub fn stacked(&self, lag: usize, h: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_x * h);
        for i in 0..h {
            out.rows_mut(i * self.n_x, self.n_x).copy_from(&self.buf[lag + i]);
        }
        out
    }
}

/// Previous state and applied input for the one-step disturbance reconstructor.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorMemory {
    pub x_prev: DVector<f64>,
    pub u_prev: DVector<f64>,
}

impl EstimatorMemory {
    pub fn zeros(n_x: usize, n_u: usize) -> Self {
        Self { x_prev: DVector::zeros(n_x), u_prev: DVector::zeros(n_u) }
    }

    /// `ŵ_t = x_t - A x_{t-1} - B u_{t-1}`.
    pub fn estimate(&self, x: &DVector<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
        x - a * &self.x_prev - b * &self.u_prev
    }

    /// Store the current state and the input applied at this step.
    pub fn advance(&mut self, x: &DVector<f64>, u: &DVector<f64>) {
        self.x_prev.copy_from(x);
        self.u_prev.copy_from(u);
    }
}

/// The reconstructor written as a general LTI estimator with inputs `[x; u]` and output `ŵ`:
/// `A_e = 0`, `B_e = [-A, -B]`, `C_e = I`, `D_e = [I, 0]`.
pub fn reconstruction_estimator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<StateSpace> {
    let (n_x, n_u) = (a.nrows(), b.ncols());
    let mut be = DMatrix::zeros(n_x, n_x + n_u);
    be.view_mut((0, 0), (n_x, n_x)).copy_from(&(-a));
    be.view_mut((0, n_x), (n_x, n_u)).copy_from(&(-b));
    let mut de = DMatrix::zeros(n_x, n_x + n_u);
    de.view_mut((0, 0), (n_x, n_x)).fill_with_identity();
    StateSpace::new(DMatrix::zeros(n_x, n_x), be, DMatrix::identity(n_x, n_x), de)
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).iter().all(|v| v.abs() <= 1e-12)
}

/// Quadratic per-step cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !is_symmetric(&q) {
            return Err(Error::InvalidParameter("Q must be square and symmetric".into()));
        }
        if !is_symmetric(&r) {
            return Err(Error::InvalidParameter("R must be square and symmetric".into()));
        }
        let scale = |m: &DMatrix<f64>| 1e-12 * m.amax().max(1.0);
        if q.nrows() > 0 && q.clone().symmetric_eigenvalues().min() < -scale(&q) {
            return Err(Error::InvalidParameter("Q must be positive semidefinite".into()));
        }
        if r.nrows() == 0 || r.clone().symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::InvalidParameter("R must be positive definite".into()));
        }
        Ok(Self { q, r })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// `xᵀQx + uᵀRu`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }
}

/// Ideal states `x̃_τ` and inputs `ũ_τ` for `τ = t-H … t` (oldest first).
#[derive(Debug, Clone, PartialEq)]
pub struct IdealRollout {
    pub x_tilde: Vec<DVector<f64>>,
    pub u_tilde: Vec<DVector<f64>>,
}

/// Nominal plant, feedback gain and cost used by the ideal-cost rollout.
#[derive(Debug, Clone, Copy)]
pub struct RolloutModel<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub k: &'a DMatrix<f64>,
    pub weights: &'a CostWeights,
}

impl RolloutModel<'_> {
    fn check(&self, gains: &FirGains, hist: &DisturbanceHistory) -> Result<()> {
        let n_x = self.a.nrows();
        let n_u = self.b.ncols();
        if self.b.nrows() != n_x || self.k.shape() != (n_u, n_x) {
            return Err(Error::Dimension("plant or feedback gain dimensions inconsistent".into()));
        }
        if gains.n_u() != n_u || gains.n_x() != n_x || hist.n_x() != n_x {
            return Err(Error::Dimension("FIR gains or history do not match the plant".into()));
        }
        if self.weights.q().nrows() != n_x || self.weights.r().nrows() != n_u {
            return Err(Error::Dimension("cost weights do not match the plant".into()));
        }
        let needed = 2 * gains.horizon();
        if hist.capacity() < needed {
            return Err(Error::InsufficientHistory { needed, have: hist.capacity() });
        }
        Ok(())
    }
}

/// `u_oco = M Ŵ_t`.
pub fn fir_output(gains: &FirGains, hist: &DisturbanceHistory) -> Result<DVector<f64>> {
    if hist.n_x() != gains.n_x() || hist.capacity() < gains.horizon() {
        return Err(Error::Dimension("history does not match FIR gains".into()));
    }
    Ok(gains.matrix() * hist.stacked(0, gains.horizon()))
}

/// Ideal cost `g(M)` and the rollout that produced it.
pub fn ideal_cost(
    gains: &FirGains,
    hist: &DisturbanceHistory,
    model: &RolloutModel<'_>,
) -> Result<(f64, IdealRollout)> {
    model.check(gains, hist)?;
    let h = gains.horizon();
    let m = gains.matrix();
    let mut x = DVector::zeros(model.a.nrows());
    let mut u = m * hist.stacked(h, h);
    let mut rollout = IdealRollout { x_tilde: vec![x.clone()], u_tilde: vec![u.clone()] };
    for lag in (0..h).rev() {
        x = model.a * &x + model.b * &u + hist.get(lag + 1);
        u = -(model.k * &x) + m * hist.stacked(lag, h);
        rollout.x_tilde.push(x.clone());
        rollout.u_tilde.push(u.clone());
    }
    Ok((model.weights.stage_cost(&x, &u), rollout))
}

/// `∂(M W)/∂M` with parameters ordered row-major over `M`.
fn input_sensitivity(n_u: usize, window: &DVector<f64>) -> DMatrix<f64> {
    let cols = window.len();
    let mut s = DMatrix::zeros(n_u, n_u * cols);
    for a in 0..n_u {
        for (b, w) in window.iter().enumerate() {
            s[(a, a * cols + b)] = *w;
        }
    }
    s
}

/// Exact `∇_M g(M)` by forward sensitivity propagation through the rollout.
pub fn ideal_cost_gradient(
    gains: &FirGains,
    hist: &DisturbanceHistory,
    model: &RolloutModel<'_>,
) -> Result<DMatrix<f64>> {
    model.check(gains, hist)?;
    let h = gains.horizon();
    let m = gains.matrix();
    let (n_u, cols) = m.shape();
    let n_x = model.a.nrows();
    let params = n_u * cols;

    let mut x = DVector::zeros(n_x);
    let first = hist.stacked(h, h);
    let mut u = m * &first;
    let mut dx = DMatrix::zeros(n_x, params);
    let mut du = input_sensitivity(n_u, &first);
    for lag in (0..h).rev() {
        let window = hist.stacked(lag, h);
        x = model.a * &x + model.b * &u + hist.get(lag + 1);
        dx = model.a * &dx + model.b * &du;
        u = -(model.k * &x) + m * &window;
        du = -(model.k * &dx) + input_sensitivity(n_u, &window);
    }
    let qx = model.weights.q() * &x * 2.0;
    let ru = model.weights.r() * &u * 2.0;
    let flat = dx.transpose() * qx + du.transpose() * ru;
    Ok(DMatrix::from_fn(n_u, cols, |a, b| flat[a * cols + b]))
}

/// Projection onto `{M : ‖M‖_{∞→∞} ≤ β}` by radial scaling.
pub fn project_inf_ball(m: DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let norm = matrix_inf_norm(&m);
    if norm <= beta {
        m
    } else {
        m * (beta / norm)
    }
}

/// One OPGD step `Π(M - η ∇g)`; unconstrained when `beta` is `None`.
pub fn opgd_update(gains: &FirGains, grad: &DMatrix<f64>, eta: f64, beta: Option<f64>) -> Result<FirGains> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidParameter(format!("learning rate must be positive, got {eta}")));
    }
    if grad.shape() != gains.matrix().shape() {
        return Err(Error::Dimension("gradient shape differs from gain matrix".into()));
    }
    let step = gains.matrix() - grad * eta;
    let m = match beta {
        None => step,
        Some(b) if b >= 0.0 => project_inf_ball(step, b),
        Some(b) => return Err(Error::InvalidParameter(format!("gain bound must be nonnegative, got {b}"))),
    };
    Ok(FirGains { m, horizon: gains.horizon })
}

/// `sup_t ‖M_t‖_{∞→∞}` over a gain trace; the induced ℓ∞ gain of the LTV FIR filter.
pub fn mltv_norm(trace: &[FirGains]) -> f64 {
    trace.iter().map(FirGains::inf_norm).fold(0.0, crate::norms::nan_max)
}

/// Run the time-varying FIR filter `u_t = M_t Ŵ_t` over an input signal, zero pre-history.
pub fn apply_ltv(trace: &[FirGains], input: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let Some(first) = trace.first() else {
        return Ok(Vec::new());
    };
    if trace.len() != input.len() {
        return Err(Error::Dimension("gain trace and input lengths differ".into()));
    }
    let mut hist = DisturbanceHistory::new(first.n_x(), first.horizon());
    trace
        .iter()
        .zip(input)
        .map(|(g, w)| {
            hist.push(w.clone());
            fir_output(g, &hist)
        })
        .collect()
}
