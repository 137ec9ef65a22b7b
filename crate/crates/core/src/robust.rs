//! Robust stability of the OCO loop under input-multiplicative uncertainty.
//!
//! The closed loop is rearranged as an upper LFT `F_U(P, Γ)` with
//! `Γ = diag(Δ, M_LTV)`. `P` collects the plant, estimator and static
//! feedback; its inputs are `[q; u_oco; d]` and outputs `[p; ŵ; x]`.
//!
//! Given `‖Δ‖ ≤ δ` and `‖M_LTV‖ ≤ β`, the loop has finite ℓ∞ gain when some
//! positive scales `d1, d2` give
//!
//! ```text
//! ‖ diag(I/d1, I/d2) · P11 · diag(d1·δ·I, d2·β·I) ‖_{∞→∞} < 1
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{StateSpace, SystemState};
use crate::norms::{impulse_l1_gains, induced_linf_norm, DEFAULT_TOL};
use crate::oco::{DisturbanceHistory, FirGains};

/// Certification requires the optimal scaled norm to stay below `1 - STRICT_MARGIN`.
pub const STRICT_MARGIN: f64 = 1e-6;
pub const DEFAULT_BETA_CAP: f64 = 1e4;
pub const DEFAULT_BISECTION_TOL: f64 = 1e-3;

const LOG_SCALE_RANGE: (f64, f64) = (-6.0, 6.0);
const COARSE_GRID: usize = 25;

/// The LTI part of the LFT with its channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct InterconnectionP {
    sys: StateSpace,
    n_x: usize,
    n_u: usize,
    n_e: usize,
}

impl InterconnectionP {
    /// Assemble `P` from the nominal plant `(A, B)`, a static gain `K` and an
    /// estimator with inputs `[x; u]` and output `ŵ`.
    pub fn build(plant: &StateSpace, k: &DMatrix<f64>, estimator: &StateSpace) -> Result<Self> {
        let (a, b) = (plant.a(), plant.b());
        let (n_x, n_u) = (plant.n_states(), plant.n_inputs());
        if k.shape() != (n_u, n_x) {
            return Err(Error::Dimension(format!("K is {}x{}, expected {n_u}x{n_x}", k.nrows(), k.ncols())));
        }
        if estimator.n_inputs() != n_x + n_u || estimator.n_outputs() != n_x {
            return Err(Error::Dimension(format!(
                "estimator must map [x; u] ({} inputs) to ŵ ({n_x} outputs)",
                n_x + n_u
            )));
        }
        let n_e = estimator.n_states();
        let be1 = estimator.b().columns(0, n_x);
        let be2 = estimator.b().columns(n_x, n_u);
        let de1 = estimator.d().columns(0, n_x);
        let de2 = estimator.d().columns(n_x, n_u);

        let n = n_x + n_e;
        let mut ap = DMatrix::zeros(n, n);
        ap.view_mut((0, 0), (n_x, n_x)).copy_from(&(a - b * k));
        ap.view_mut((n_x, 0), (n_e, n_x)).copy_from(&(be1 - be2 * k));
        ap.view_mut((n_x, n_x), (n_e, n_e)).copy_from(estimator.a());

        let mut bp = DMatrix::zeros(n, 3 * n_u);
        for blk in 0..3 {
            bp.view_mut((0, blk * n_u), (n_x, n_u)).copy_from(b);
        }
        bp.view_mut((n_x, n_u), (n_e, n_u)).copy_from(&be2);

        let n_out = n_u + 2 * n_x;
        let mut cp = DMatrix::zeros(n_out, n);
        cp.view_mut((0, 0), (n_u, n_x)).copy_from(&(-k));
        cp.view_mut((n_u, 0), (n_x, n_x)).copy_from(&(de1 - de2 * k));
        cp.view_mut((n_u, n_x), (n_x, n_e)).copy_from(estimator.c());
        cp.view_mut((n_u + n_x, 0), (n_x, n_x)).fill_with_identity();

        let mut dp = DMatrix::zeros(n_out, 3 * n_u);
        dp.view_mut((0, n_u), (n_u, n_u)).fill_with_identity();
        dp.view_mut((0, 2 * n_u), (n_u, n_u)).fill_with_identity();
        dp.view_mut((n_u, n_u), (n_x, n_u)).copy_from(&de2);

        let sys = StateSpace::new(ap, bp, cp, dp)?;
        let rho = sys.spectral_radius();
        if rho >= 1.0 {
            return Err(Error::NotStabilizing(rho));
        }
        Ok(Self { sys, n_x, n_u, n_e })
    }

    pub fn system(&self) -> &StateSpace {
        &self.sys
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_u(&self) -> usize {
        self.n_u
    }
    pub fn n_e(&self) -> usize {
        self.n_e
    }

    /// Rows of `p̄ = [p; ŵ]`.
    fn pbar(&self) -> std::ops::Range<usize> {
        0..self.n_u + self.n_x
    }
    /// Columns of `q̄ = [q; u_oco]`.
    fn qbar(&self) -> std::ops::Range<usize> {
        0..2 * self.n_u
    }
    fn d_cols(&self) -> std::ops::Range<usize> {
        2 * self.n_u..3 * self.n_u
    }
    fn x_rows(&self) -> std::ops::Range<usize> {
        self.n_u + self.n_x..self.n_u + 2 * self.n_x
    }

    /// `[q; u_oco] → [p; ŵ]`.
    pub fn p11(&self) -> StateSpace {
        self.sys.select(self.pbar(), self.qbar()).expect("channel ranges are valid")
    }
    /// `d → [p; ŵ]`.
    pub fn p12(&self) -> StateSpace {
        self.sys.select(self.pbar(), self.d_cols()).expect("channel ranges are valid")
    }
    /// `[q; u_oco] → x`.
    pub fn p21(&self) -> StateSpace {
        self.sys.select(self.x_rows(), self.qbar()).expect("channel ranges are valid")
    }
    /// `d → x`.
    pub fn p22(&self) -> StateSpace {
        self.sys.select(self.x_rows(), self.d_cols()).expect("channel ranges are valid")
    }

    fn row_scales(&self, d1: f64, d2: f64) -> DVector<f64> {
        DVector::from_fn(self.n_u + self.n_x, |i, _| if i < self.n_u { 1.0 / d1 } else { 1.0 / d2 })
    }

    fn col_scales(&self, delta: f64, beta: f64, d1: f64, d2: f64) -> DVector<f64> {
        DVector::from_fn(2 * self.n_u, |j, _| if j < self.n_u { d1 * delta } else { d2 * beta })
    }

    /// `P̃11 = diag(I/d1, I/d2) P11 diag(d1 δ I, d2 β I)`.
    pub fn scaled_p11(&self, delta: f64, beta: f64, d1: f64, d2: f64) -> Result<StateSpace> {
        check_scales(delta, beta, d1, d2)?;
        self.p11().scale_io(&self.row_scales(d1, d2), &self.col_scales(delta, beta, d1, d2))
    }
}

fn check_scales(delta: f64, beta: f64, d1: f64, d2: f64) -> Result<()> {
    if !(d1 > 0.0 && d2 > 0.0 && d1.is_finite() && d2.is_finite()) {
        return Err(Error::InvalidParameter(format!("scales must be positive, got d1={d1}, d2={d2}")));
    }
    if !(delta >= 0.0 && beta >= 0.0) || !delta.is_finite() || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("bounds must be nonnegative, got δ={delta}, β={beta}")));
    }
    Ok(())
}

/// `‖P̃11‖_{∞→∞}` through the induced-norm routine on the scaled system.
pub fn scaled_norm(p: &InterconnectionP, delta: f64, beta: f64, d1: f64, d2: f64, tol: f64) -> Result<f64> {
    Ok(induced_linf_norm(&p.scaled_p11(delta, beta, d1, d2)?, tol)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSearchResult {
    pub d1: f64,
    pub d2: f64,
    pub scaled_norm: f64,
}

/// Entry-wise ℓ1 gains of `P11`, so that every scaled norm is a weighted row sum.
#[derive(Debug, Clone)]
pub struct ScaledGainModel {
    gains: DMatrix<f64>,
    n_u: usize,
}

impl ScaledGainModel {
    pub fn new(p: &InterconnectionP, tol: f64) -> Result<Self> {
        let (gains, _, _) = impulse_l1_gains(&p.p11(), tol)?;
        Ok(Self { gains, n_u: p.n_u })
    }

    /// Scaled norm with `d1 = 1` and `d2 = ratio`.
    pub fn evaluate(&self, delta: f64, beta: f64, ratio: f64) -> f64 {
        let n_u = self.n_u;
        self.gains
            .row_iter()
            .enumerate()
            .map(|(i, row)| {
                let weighted: f64 =
                    row.iter().enumerate().map(|(j, g)| g * if j < n_u { delta } else { ratio * beta }).sum();
                if i < n_u {
                    weighted
                } else {
                    weighted / ratio
                }
            })
            .fold(0.0, f64::max)
    }

    /// Coarse log-grid followed by golden-section refinement of `log10(d2)`.
    pub fn optimize(&self, delta: f64, beta: f64) -> ScaleSearchResult {
        let f = |log_r: f64| self.evaluate(delta, beta, 10f64.powf(log_r));
        let (lo, hi) = LOG_SCALE_RANGE;
        let step = (hi - lo) / (COARSE_GRID - 1) as f64;
        let grid: Vec<f64> = (0..COARSE_GRID).map(|i| lo + step * i as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&g| f(g)).collect();
        let best = (0..COARSE_GRID).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap_or(0);

        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(COARSE_GRID - 1)];
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..200 {
            if (b - a).abs() < 1e-10 {
                break;
            }
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }

        // Keep d2 = 1 unless another candidate is strictly better.
        let mut out = ScaleSearchResult { d1: 1.0, d2: 1.0, scaled_norm: f(0.0) };
        for (log_r, v) in [(grid[best], values[best]), (c, fc), (d, fd)] {
            if v < out.scaled_norm {
                out = ScaleSearchResult { d1: 1.0, d2: 10f64.powf(log_r), scaled_norm: v };
            }
        }
        out
    }
}

/// Minimize the scaled norm over `d2/d1` with `d1 = 1`.
pub fn optimize_scales(p: &InterconnectionP, delta: f64, beta: f64) -> Result<ScaleSearchResult> {
    check_scales(delta, beta, 1.0, 1.0)?;
    Ok(ScaledGainModel::new(p, DEFAULT_TOL)?.optimize(delta, beta))
}

/// Largest admissible FIR gain bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaBound {
    Finite(f64),
    /// The condition still holds at the search cap.
    Unbounded {
        cap: f64,
    },
}

impl BetaBound {
    /// Finite value, or the cap when unbounded.
    pub fn value(&self) -> f64 {
        match *self {
            BetaBound::Finite(b) => b,
            BetaBound::Unbounded { cap } => cap,
        }
    }
    pub fn is_unbounded(&self) -> bool {
        matches!(self, BetaBound::Unbounded { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionStep {
    pub beta: f64,
    pub scaled_norm: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub delta_bound: f64,
    pub beta_star: BetaBound,
    pub scales: ScaleSearchResult,
    pub certified: bool,
    pub trace: Vec<BisectionStep>,
}

/// Bracket-and-bisect for the largest `β ≤ beta_cap` passing the scaled small-gain test.
pub fn max_beta(p: &InterconnectionP, delta: f64, tol: f64, beta_cap: f64) -> Result<StabilityReport> {
    if !(tol > 0.0) || !(beta_cap > 0.0) {
        return Err(Error::InvalidParameter("tolerance and beta cap must be positive".into()));
    }
    check_scales(delta, 0.0, 1.0, 1.0)?;
    let model = ScaledGainModel::new(p, DEFAULT_TOL)?;
    let mut trace = Vec::new();
    let mut probe = |beta: f64| {
        let s = model.optimize(delta, beta);
        let feasible = s.scaled_norm <= 1.0 - STRICT_MARGIN;
        trace.push(BisectionStep { beta, scaled_norm: s.scaled_norm, feasible });
        (feasible, s)
    };

    let (ok0, s0) = probe(0.0);
    if !ok0 {
        return Ok(StabilityReport {
            delta_bound: delta,
            beta_star: BetaBound::Finite(0.0),
            scales: s0,
            certified: false,
            trace,
        });
    }
    let (mut lo, mut lo_scales) = (0.0, s0);
    let mut hi = 1f64.min(beta_cap);
    loop {
        let (ok, s) = probe(hi);
        if !ok {
            break;
        }
        lo = hi;
        lo_scales = s;
        if hi >= beta_cap {
            return Ok(StabilityReport {
                delta_bound: delta,
                beta_star: BetaBound::Unbounded { cap: beta_cap },
                scales: lo_scales,
                certified: true,
                trace,
            });
        }
        hi = (2.0 * hi).min(beta_cap);
    }
    while hi - lo > tol * hi && hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        let (ok, s) = probe(mid);
        if ok {
            lo = mid;
            lo_scales = s;
        } else {
            hi = mid;
        }
    }
    Ok(StabilityReport {
        delta_bound: delta,
        beta_star: BetaBound::Finite(lo),
        scales: lo_scales,
        certified: true,
        trace,
    })
}

/// Closed-form bound on `‖x‖_∞ / ‖d‖_∞` for the scaled loop, valid when `‖P̃11‖ < 1`:
///
/// `‖P22‖ + ‖P̃21‖ ‖P̃12‖ / (1 - ‖P̃11‖)`, using `‖Γ̃‖ ≤ 1`.
pub fn gain_bound(p: &InterconnectionP, delta: f64, beta: f64, d1: f64, d2: f64, tol: f64) -> Result<Option<f64>> {
    let p11 = scaled_norm(p, delta, beta, d1, d2, tol)?;
    if p11 >= 1.0 {
        return Ok(None);
    }
    let ones = |n: usize| DVector::from_element(n, 1.0);
    let p12 = p.p12().scale_io(&p.row_scales(d1, d2), &ones(p.n_u))?;
    let p21 = p.p21().scale_io(&ones(p.n_x), &p.col_scales(delta, beta, d1, d2))?;
    let n12 = induced_linf_norm(&p12, tol)?;
    let n21 = induced_linf_norm(&p21, tol)?;
    let n22 = induced_linf_norm(&p.p22(), tol)?;
    // round each norm up by its certified tail so the bound stays an upper bound
    let up = |r: crate::norms::NormResult| r.value + r.tail_bound;
    Ok(Some(up(n22) + up(n21) * up(n12) / (1.0 - p11 - tol)))
}

/// Signals recorded by [`simulate_lft`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LftTrajectory {
    pub x: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub w_hat: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    pub u_oco: Vec<DVector<f64>>,
}

/// Simulate `F_U(P, diag(Δ, M_LTV))` from zero initial conditions.
///
/// `gains_at(t)` supplies `M_t`. Feedthrough loops are solved exactly at each step.
pub fn simulate_lft<F>(
    p: &InterconnectionP,
    delta: &StateSpace,
    mut gains_at: F,
    d: &[DVector<f64>],
) -> Result<LftTrajectory>
where
    F: FnMut(usize) -> FirGains,
{
    let (n_u, n_x) = (p.n_u, p.n_x);
    if delta.n_inputs() != n_u || delta.n_outputs() != n_u {
        return Err(Error::Dimension("uncertainty must be square with n_u channels".into()));
    }
    let sys = &p.sys;
    let np = n_u + n_x;
    let c1 = sys.c().rows(0, np).into_owned();
    let d11 = sys.d().view((0, 0), (np, 2 * n_u)).into_owned();
    let d12 = sys.d().view((0, 2 * n_u), (np, n_u)).into_owned();
    let c2 = sys.c().rows(np, n_x).into_owned();
    let d21 = sys.d().view((np, 0), (n_x, 2 * n_u)).into_owned();
    let d22 = sys.d().view((np, 2 * n_u), (n_x, n_u)).into_owned();

    let mut z = DVector::zeros(sys.n_states());
    let mut xi = SystemState::zeros(delta.n_states());
    let mut hist: Option<DisturbanceHistory> = None;
    let mut out = LftTrajectory::default();

    for (t, dt) in d.iter().enumerate() {
        if dt.len() != n_u {
            return Err(Error::Dimension("disturbance sample has wrong length".into()));
        }
        let gains = gains_at(t);
        if gains.n_u() != n_u || gains.n_x() != n_x {
            return Err(Error::Dimension("FIR gains do not match the interconnection".into()));
        }
        let h = gains.horizon();
        let hist = hist.get_or_insert_with(|| DisturbanceHistory::new(n_x, h));

        // Γ = free response + feedthrough acting on the current p̄
        let mut g_free = DVector::zeros(2 * n_u);
        g_free.rows_mut(0, n_u).copy_from(&(delta.c() * &xi.x));
        let mut u_free = DVector::zeros(n_u);
        for i in 1..h {
            u_free += gains.tap(i) * hist.get(i - 1);
        }
        g_free.rows_mut(n_u, n_u).copy_from(&u_free);
        let mut g_d = DMatrix::zeros(2 * n_u, np);
        g_d.view_mut((0, 0), (n_u, n_u)).copy_from(delta.d());
        g_d.view_mut((n_u, n_u), (n_u, n_x)).copy_from(&gains.tap(0));

        let lhs = DMatrix::identity(np, np) - &d11 * &g_d;
        let rhs = &c1 * &z + &d11 * &g_free + &d12 * dt;
        let pbar = lhs.lu().solve(&rhs).ok_or(Error::IllPosed)?;
        let qbar = &g_d * &pbar + &g_free;
        let x = &c2 * &z + &d21 * &qbar + &d22 * dt;

        let mut input = DVector::zeros(3 * n_u);
        input.rows_mut(0, 2 * n_u).copy_from(&qbar);
        input.rows_mut(2 * n_u, n_u).copy_from(dt);
        z = sys.a() * &z + sys.b() * input;
        let p_sig = pbar.rows(0, n_u).into_owned();
        let (xi_next, _) = delta.step(&xi, &p_sig)?;
        xi = xi_next;
        let w_hat = pbar.rows(n_u, n_x).into_owned();
        hist.push(w_hat.clone());

        out.x.push(x);
        out.p.push(p_sig);
        out.w_hat.push(w_hat);
        out.q.push(qbar.rows(0, n_u).into_owned());
        out.u_oco.push(qbar.rows(n_u, n_u).into_owned());
    }
    Ok(out)
}

/// `‖Δ‖_{∞→∞}` for a realized uncertainty.
pub fn uncertainty_bound(delta: &StateSpace, tol: f64) -> Result<f64> {
    let r = induced_linf_norm(delta, tol)?;
    Ok(r.value + r.tail_bound)
}
