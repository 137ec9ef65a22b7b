//! Closed-loop simulation of the uncertain plant under OCO control.
//!
//! Signal chain per step `t`:
//!
//! ```text
//! ŵ_t  = x_t - A x_{t-1} - B u_{t-1}
//! M_t  ← Π(M - η ∇g(M))            (once t ≥ H and η > 0)
//! u_t  = -K x_t + M_t Ŵ_t
//! p_t  = u_t + d_t
//! q_t  = Δ p_t
//! v_t  = p_t + q_t
//! x_{t+1} = A x_t + B v_t
//! c_t  = x_tᵀ Q x_t + u_tᵀ R u_t
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{spectral_radius, StateSpace, SystemState};
use crate::norms::PNorm;
use crate::oco::{
    fir_output, ideal_cost_gradient, opgd_update, CostWeights, DisturbanceHistory, EstimatorMemory, FirGains,
    RolloutModel,
};

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e9;

/// Disturbance generator. Scalar kinds apply the same value to every input channel.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSpec {
    /// `amplitude` for `t ≤ switch_time`, `-amplitude` afterwards.
    Square {
        amplitude: f64,
        switch_time: usize,
    },
    Constant {
        amplitude: f64,
    },
    /// Explicit samples for `t = 0..=T`.
    Sequence(Vec<DVector<f64>>),
}

impl DisturbanceSpec {
    /// Samples `d_0 … d_T` for `n_u` channels.
    pub fn generate(&self, steps: usize, n_u: usize) -> Result<Vec<DVector<f64>>> {
        match self {
            DisturbanceSpec::Square { amplitude, switch_time } => {
                if *switch_time == 0 || *switch_time >= steps {
                    return Err(Error::InvalidParameter(format!(
                        "square disturbance needs 0 < switch_time < T, got switch_time={switch_time}, T={steps}"
                    )));
                }
                Ok((0..=steps)
                    .map(|t| DVector::from_element(n_u, if t <= *switch_time { *amplitude } else { -*amplitude }))
                    .collect())
            }
            DisturbanceSpec::Constant { amplitude } => Ok(vec![DVector::from_element(n_u, *amplitude); steps + 1]),
            DisturbanceSpec::Sequence(values) => {
                if values.len() < steps + 1 {
                    return Err(Error::InvalidParameter(format!(
                        "disturbance sequence has {} samples, need {}",
                        values.len(),
                        steps + 1
                    )));
                }
                if values.iter().any(|v| v.len() != n_u) {
                    return Err(Error::Dimension(format!("disturbance samples must have {n_u} entries")));
                }
                Ok(values[..=steps].to_vec())
            }
        }
    }
}

/// Scalar convenience wrapper around [`DisturbanceSpec::generate`].
pub fn generate_disturbance(spec: &DisturbanceSpec, steps: usize) -> Result<Vec<f64>> {
    Ok(spec.generate(steps, 1)?.into_iter().map(|v| v[0]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Nominal plant; only `A` and `B` are used, the full state is measured.
    pub plant: StateSpace,
    /// Input-multiplicative uncertainty `Δ`; `None` for a perfect model.
    pub uncertainty: Option<StateSpace>,
    pub k: DMatrix<f64>,
    pub horizon: usize,
    /// Learning rate; zero freezes the FIR gains at `initial_gains`.
    pub eta: f64,
    pub weights: CostWeights,
    /// FIR gain bound; `None` runs unconstrained.
    pub beta: Option<f64>,
    pub steps: usize,
    pub disturbance: DisturbanceSpec,
    pub divergence_threshold: f64,
    /// Gains at `t = 0`; zero when `None`.
    pub initial_gains: Option<FirGains>,
}

impl ExperimentConfig {
    pub fn n_x(&self) -> usize {
        self.plant.n_states()
    }
    pub fn n_u(&self) -> usize {
        self.plant.n_inputs()
    }

    pub fn validate(&self) -> Result<()> {
        let (n_x, n_u) = (self.n_x(), self.n_u());
        if self.steps < 1 {
            return Err(Error::InvalidParameter("T must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("learning horizon H must be at least 1".into()));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate must be nonnegative, got {}", self.eta)));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::InvalidParameter("divergence threshold must be positive".into()));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) {
                return Err(Error::InvalidParameter(format!("gain bound must be nonnegative, got {b}")));
            }
        }
        if self.k.shape() != (n_u, n_x) {
            return Err(Error::Dimension(format!("K must be {n_u}x{n_x}")));
        }
        if self.weights.q().nrows() != n_x || self.weights.r().nrows() != n_u {
            return Err(Error::Dimension("cost weights do not match the plant".into()));
        }
        if let Some(delta) = &self.uncertainty {
            if delta.n_inputs() != n_u || delta.n_outputs() != n_u {
                return Err(Error::Dimension(format!("uncertainty must be {n_u}x{n_u}")));
            }
        }
        if let Some(g) = &self.initial_gains {
            if g.n_u() != n_u || g.n_x() != n_x || g.horizon() != self.horizon {
                return Err(Error::Dimension("initial gains do not match the plant and horizon".into()));
            }
        }
        let closed = self.plant.a() - self.plant.b() * &self.k;
        let rho = spectral_radius(&closed);
        if rho >= 1.0 {
            return Err(Error::NotStabilizing(rho));
        }
        Ok(())
    }
}

/// Recorded trajectories of one closed-loop run. Index `t` is time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationResult {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub u_base: Vec<DVector<f64>>,
    pub u_oco: Vec<DVector<f64>>,
    pub w_hat: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub cost: Vec<f64>,
    /// `‖M_t‖_{∞→∞}` of the gains applied at each step.
    pub gain_trace: Vec<f64>,
    pub total_cost: f64,
    pub diverged: bool,
    pub t_div: Option<usize>,
}

impl SimulationResult {
    pub fn len(&self) -> usize {
        self.cost.len()
    }
    pub fn is_empty(&self) -> bool {
        self.cost.is_empty()
    }

    /// `J_T / T`, or `None` for a diverged run.
    pub fn average_cost(&self, steps: usize) -> Option<f64> {
        (!self.diverged).then(|| self.total_cost / steps as f64)
    }

    /// Mean stage cost over `t ∈ [from, to]`.
    pub fn window_mean_cost(&self, from: usize, to: usize) -> Option<f64> {
        let slice = self.cost.get(from..=to.min(self.cost.len().checked_sub(1)?))?;
        (!slice.is_empty()).then(|| slice.iter().sum::<f64>() / slice.len() as f64)
    }
}

pub fn simulate(config: &ExperimentConfig) -> Result<SimulationResult> {
    config.validate()?;
    let (n_x, n_u, h) = (config.n_x(), config.n_u(), config.horizon);
    let (a, b, k) = (config.plant.a(), config.plant.b(), &config.k);
    let model = RolloutModel { a, b, k, weights: &config.weights };
    let d = config.disturbance.generate(config.steps, n_u)?;

    let mut gains = config.initial_gains.clone().unwrap_or_else(|| FirGains::zeros(n_u, n_x, h));
    let mut hist = DisturbanceHistory::for_horizon(n_x, h);
    let mut mem = EstimatorMemory::zeros(n_x, n_u);
    let mut x = DVector::zeros(n_x);
    let mut xi = config.uncertainty.as_ref().map(|delta| SystemState::zeros(delta.n_states()));
    let mut out = SimulationResult::default();

    for (t, dt) in d.iter().enumerate() {
        let w_hat = mem.estimate(&x, a, b);
        hist.push(w_hat.clone());
        if t >= h && config.eta > 0.0 {
            let grad = ideal_cost_gradient(&gains, &hist, &model)?;
            gains = opgd_update(&gains, &grad, config.eta, config.beta)?;
        }
        let u_base = -(k * &x);
        let u_oco = fir_output(&gains, &hist)?;
        let u = &u_base + &u_oco;
        let p = &u + dt;
        let q = match (&config.uncertainty, xi.as_mut()) {
            (Some(delta), Some(state)) => {
                let (next, q) = delta.step(state, &p)?;
                *state = next;
                q
            }
            _ => DVector::zeros(n_u),
        };
        let v = &p + &q;
        let cost = config.weights.stage_cost(&x, &u);
        let x_next = a * &x + b * &v;
        mem.advance(&x, &u);

        let x_norm = crate::norms::vector_norm(x.as_slice(), PNorm::Inf);
        out.total_cost += cost;
        out.gain_trace.push(gains.inf_norm());
        out.x.push(std::mem::replace(&mut x, x_next));
        out.u.push(u);
        out.u_base.push(u_base);
        out.u_oco.push(u_oco);
        out.w_hat.push(w_hat);
        out.d.push(dt.clone());
        out.p.push(p);
        out.q.push(q);
        out.v.push(v);
        out.cost.push(cost);

        if !(x_norm <= config.divergence_threshold) {
            out.diverged = true;
            out.t_div = Some(t);
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    /// `J_T / T`; `None` when the run diverged.
    pub avg_cost: Option<f64>,
    pub diverged: bool,
}

/// Run `simulate` for each bound, in parallel. Rows follow the order of `betas`.
pub fn beta_sweep(config: &ExperimentConfig, betas: &[f64]) -> Result<Vec<SweepRow>> {
    if betas.is_empty() {
        return Err(Error::InvalidParameter("beta list is empty".into()));
    }
    if let Some(b) = betas.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::InvalidParameter(format!("beta values must be nonnegative, got {b}")));
    }
    config.validate()?;
    let results: Vec<Result<SweepRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = betas
            .iter()
            .map(|&beta| {
                scope.spawn(move || {
                    let cfg = ExperimentConfig { beta: Some(beta), ..config.clone() };
                    let res = simulate(&cfg)?;
                    Ok(SweepRow { beta, avg_cost: res.average_cost(cfg.steps), diverged: res.diverged })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.into_iter().collect()
}

/// Configurations of the first-order benchmark: `G(z) = 0.1/(z - 0.9)` with
/// unmodeled actuator dynamics `F(z) = (0.1185 z + 0.1145)/(z² - 1.672 z + 0.9048)`.
pub mod benchmark {
    use super::*;
    use crate::lti::TransferFunction;

    pub const STEPS: usize = 1000;
    pub const SWITCH_TIME: usize = 500;
    pub const AMPLITUDE: f64 = 100.0;

    pub fn plant() -> StateSpace {
        TransferFunction::new(vec![0.1], vec![1.0, -0.9]).expect("valid").to_state_space_observable()
    }

    pub fn actuator() -> TransferFunction {
        TransferFunction::new(vec![0.1185, 0.1145], vec![1.0, -1.672, 0.9048]).expect("valid")
    }

    /// `Δ = F - 1`.
    pub fn uncertainty() -> StateSpace {
        actuator().to_state_space().sub_identity(1.0).expect("SISO")
    }

    pub fn config(imperfect: bool, beta: Option<f64>) -> ExperimentConfig {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        ExperimentConfig {
            plant: plant(),
            uncertainty: imperfect.then(uncertainty),
            k: s(0.15),
            horizon: 1,
            eta: 5e-4,
            weights: CostWeights::new(s(1.0), s(0.1)).expect("valid weights"),
            beta,
            steps: STEPS,
            disturbance: DisturbanceSpec::Square { amplitude: AMPLITUDE, switch_time: SWITCH_TIME },
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            initial_gains: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_disturbance_switches_after_switch_time() {
        let spec = DisturbanceSpec::Square { amplitude: 100.0, switch_time: 500 };
        let d = generate_disturbance(&spec, 1000).unwrap();
        assert_eq!(d.len(), 1001);
        assert_eq!(d[0], 100.0);
        assert_eq!(d[500], 100.0);
        assert_eq!(d[501], -100.0);
        assert_eq!(d[1000], -100.0);
    }

    #[test]
    fn other_disturbance_kinds() {
        let zero = generate_disturbance(&DisturbanceSpec::Square { amplitude: 0.0, switch_time: 3 }, 10).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert_eq!(generate_disturbance(&DisturbanceSpec::Constant { amplitude: 5.0 }, 3).unwrap(), vec![5.0; 4]);
        let short = DisturbanceSpec::Sequence(vec![DVector::zeros(1); 3]);
        assert!(generate_disturbance(&short, 3).is_err());
        let bad = DisturbanceSpec::Square { amplitude: 1.0, switch_time: 10 };
        assert!(generate_disturbance(&bad, 10).is_err());
    }

    #[test]
    fn zero_disturbance_stays_at_rest() {
        let mut cfg = benchmark::config(true, None);
        cfg.disturbance = DisturbanceSpec::Constant { amplitude: 0.0 };
        let res = simulate(&cfg).unwrap();
        assert_eq!(res.total_cost, 0.0);
        assert!(res.x.iter().all(|x| x[0] == 0.0));
        assert!(!res.diverged);
        assert_eq!(res.len(), cfg.steps + 1);
    }

    #[test]
    fn perfect_model_reconstructs_disturbance() {
        let res = simulate(&benchmark::config(false, None)).unwrap();
        assert!(!res.diverged);
        for t in 1..res.len() {
            assert_abs_diff_eq!(res.w_hat[t][0], 0.1 * res.d[t - 1][0], epsilon = 1e-9);
        }
        assert!(res.cost.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn constrained_imperfect_run_stays_bounded() {
        let res = simulate(&benchmark::config(true, Some(1.5))).unwrap();
        assert!(!res.diverged);
        assert!(res.gain_trace.iter().all(|g| *g <= 1.5 + 1e-12));
    }

    #[test]
    fn signal_chain_is_consistent() {
        let res = simulate(&benchmark::config(true, Some(1.5))).unwrap();
        for t in 0..res.len() {
            assert_eq!(res.p[t], &res.u[t] + &res.d[t]);
            assert_eq!(res.v[t], &res.p[t] + &res.q[t]);
            assert_eq!(res.u[t], &res.u_base[t] + &res.u_oco[t]);
        }
        assert_abs_diff_eq!(res.total_cost, res.cost.iter().sum::<f64>(), epsilon = 1e-6);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = benchmark::config(true, Some(2.0));
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }

    #[test]
    fn zero_learning_rate_matches_state_feedback() {
        let mut frozen = benchmark::config(true, None);
        frozen.eta = 0.0;
        let res = simulate(&frozen).unwrap();
        assert!(res.u_oco.iter().all(|u| u[0] == 0.0));
        assert!(res.u.iter().zip(&res.u_base).all(|(u, b)| u == b));
        let zero_beta = simulate(&benchmark::config(true, Some(0.0))).unwrap();
        assert_eq!(zero_beta.total_cost, res.total_cost);
        assert_eq!(zero_beta.x, res.x);
    }

    #[test]
    fn divergence_is_detected() {
        // A frozen large gain destabilizes the imperfect loop.
        let mut cfg = benchmark::config(true, None);
        cfg.eta = 0.0;
        cfg.initial_gains = Some(FirGains::from_matrix(DMatrix::from_element(1, 1, -5.0), 1).unwrap());
        let res = simulate(&cfg).unwrap();
        assert!(res.diverged);
        let t_div = res.t_div.unwrap();
        assert_eq!(res.len(), t_div + 1);
        assert!(res.x[t_div][0].abs() > cfg.divergence_threshold);
        assert_eq!(res.average_cost(cfg.steps), None);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = benchmark::config(false, None);
        cfg.k = DMatrix::from_element(1, 1, -2.0);
        assert!(matches!(simulate(&cfg), Err(Error::NotStabilizing(_))));
        let mut cfg = benchmark::config(false, None);
        cfg.eta = -1.0;
        assert!(simulate(&cfg).is_err());
        let mut cfg = benchmark::config(false, None);
        cfg.horizon = 0;
        assert!(simulate(&cfg).is_err());
        let mut cfg = benchmark::config(false, None);
        cfg.divergence_threshold = 0.0;
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn sweep_rows_follow_input_order() {
        let rows = beta_sweep(&benchmark::config(false, None), &[1.0, 0.0, 0.5]).unwrap();
        assert_eq!(rows.iter().map(|r| r.beta).collect::<Vec<_>>(), vec![1.0, 0.0, 0.5]);
        assert!(rows.iter().all(|r| !r.diverged));
        assert!(beta_sweep(&benchmark::config(false, None), &[]).is_err());
        assert!(beta_sweep(&benchmark::config(false, None), &[-1.0]).is_err());
    }
}
