//! Discrete-time LTI state-space systems.
//!
//! A [`StateSpace`] holds a dense `(A, B, C, D)` realization:
//!
//! ```text
//! x[t+1] = A x[t] + B u[t]
//! y[t]   = C x[t] + D u[t]
//! ```
//!
//! Static gains are represented with zero states (`A` is `0x0`).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense realization of a discrete LTI system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

/// State vector owned by a single simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub x: DVector<f64>,
}

impl SystemState {
    pub fn zeros(n: usize) -> Self {
        Self { x: DVector::zeros(n) }
    }
}

fn check_finite(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}, must be square", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        check_finite(&a, "A")?;
        check_finite(&b, "B")?;
        check_finite(&c, "C")?;
        check_finite(&d, "D")?;
        Ok(Self { a, b, c, d })
    }

    /// Memoryless gain `y = D u`.
    pub fn static_gain(d: DMatrix<f64>) -> Result<Self> {
        let (p, m) = d.shape();
        Self::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, m), DMatrix::zeros(p, 0), d)
    }

    pub fn zero(n_out: usize, n_in: usize) -> Self {
        Self::static_gain(DMatrix::zeros(n_out, n_in)).expect("zero system is consistent")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// One step of the state equation. Returns the next state and the current output.
    pub fn step(&self, state: &SystemState, u: &DVector<f64>) -> Result<(SystemState, DVector<f64>)> {
        if state.x.len() != self.n_states() {
            return Err(Error::Dimension(format!(
                "state has length {}, system has {} states",
                state.x.len(),
                self.n_states()
            )));
        }
        if u.len() != self.n_inputs() {
            return Err(Error::Dimension(format!(
                "input has length {}, system has {} inputs",
                u.len(),
                self.n_inputs()
            )));
        }
        let next = &self.a * &state.x + &self.b * u;
        let y = &self.c * &state.x + &self.d * u;
        Ok((SystemState { x: next }, y))
    }

    /// Output-only evaluation `C x + D u`, without advancing the state.
    pub fn output(&self, state: &SystemState, u: &DVector<f64>) -> DVector<f64> {
        &self.c * &state.x + &self.d * u
    }

    /// Returns the system with transfer function `G(z) - gain * I`.
    pub fn sub_identity(&self, gain: f64) -> Result<Self> {
        if self.n_inputs() != self.n_outputs() {
            return Err(Error::Dimension(format!(
                "cannot subtract identity from a {}x{} system",
                self.n_outputs(),
                self.n_inputs()
            )));
        }
        let n = self.n_inputs();
        let d = &self.d - DMatrix::identity(n, n) * gain;
        Self::new(self.a.clone(), self.b.clone(), self.c.clone(), d)
    }

    /// Largest eigenvalue magnitude of `A`; zero for static systems.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Multiply the output by `c`.
    pub fn scale(&self, c: f64) -> Self {
        Self { a: self.a.clone(), b: self.b.clone(), c: &self.c * c, d: &self.d * c }
    }

    /// Static row/column scaling `diag(rows) * G * diag(cols)`.
    pub fn scale_io(&self, rows: &DVector<f64>, cols: &DVector<f64>) -> Result<Self> {
        if rows.len() != self.n_outputs() || cols.len() != self.n_inputs() {
            return Err(Error::Dimension("scaling vectors do not match system I/O".into()));
        }
        let left = DMatrix::from_diagonal(rows);
        let right = DMatrix::from_diagonal(cols);
        Self::new(self.a.clone(), &self.b * &right, &left * &self.c, &left * &self.d * &right)
    }

    /// Series connection: `self` followed by `next` (transfer function `next * self`).
    pub fn series(&self, next: &StateSpace) -> Result<Self> {
        if next.n_inputs() != self.n_outputs() {
            return Err(Error::Dimension("series connection: output/input sizes differ".into()));
        }
        let (n1, n2) = (self.n_states(), next.n_states());
        let n = n1 + n2;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        let mut b = DMatrix::zeros(n, self.n_inputs());
        b.view_mut((0, 0), (n1, self.n_inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.n_inputs())).copy_from(&(&next.b * &self.d));
        let mut c = DMatrix::zeros(next.n_outputs(), n);
        c.view_mut((0, 0), (next.n_outputs(), n1)).copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.n_outputs(), n2)).copy_from(&next.c);
        let d = &next.d * &self.d;
        Self::new(a, b, c, d)
    }

    /// Sub-system mapping the selected inputs to the selected outputs.
    pub fn select(&self, outputs: std::ops::Range<usize>, inputs: std::ops::Range<usize>) -> Result<Self> {
        if outputs.end > self.n_outputs() || inputs.end > self.n_inputs() {
            return Err(Error::Dimension("channel selection out of range".into()));
        }
        let n = self.n_states();
        let (no, ni) = (outputs.len(), inputs.len());
        Self::new(
            self.a.clone(),
            self.b.view((0, inputs.start), (n, ni)).into_owned(),
            self.c.view((outputs.start, 0), (no, n)).into_owned(),
            self.d.view((outputs.start, inputs.start), (no, ni)).into_owned(),
        )
    }

    /// First `len` Markov parameters `D, CB, CAB, ...`.
    pub fn impulse_response(&self, len: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        out.push(self.d.clone());
        let mut ab = self.b.clone();
        for _ in 1..len {
            out.push(&self.c * &ab);
            ab = &self.a * ab;
        }
        out
    }
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// SISO rational transfer function in descending powers of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

fn strip_leading_zeros(v: &[f64]) -> Vec<f64> {
    let first = v.iter().position(|&c| c != 0.0).unwrap_or(v.len().saturating_sub(1));
    v[first.min(v.len())..].to_vec()
}

impl TransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if num.is_empty() || den.is_empty() {
            return Err(Error::InvalidTransferFunction("empty coefficient list".into()));
        }
        if num.iter().chain(&den).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("transfer function coefficients"));
        }
        let num = strip_leading_zeros(&num);
        let den = strip_leading_zeros(&den);
        if den[0] == 0.0 {
            return Err(Error::InvalidTransferFunction("denominator is identically zero".into()));
        }
        if num.len() > den.len() {
            return Err(Error::Improper { num: num.len() - 1, den: den.len() - 1 });
        }
        Ok(Self { num, den })
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }
    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// Evaluate at a real point `z`.
    pub fn eval_real(&self, z: f64) -> f64 {
        let horner = |p: &[f64]| p.iter().fold(0.0, |acc, &c| acc * z + c);
        horner(&self.num) / horner(&self.den)
    }

    /// Normalized numerator padded to the denominator length, and the monic denominator.
    fn normalized(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.order();
        let lead = self.den[0];
        let den: Vec<f64> = self.den.iter().map(|c| c / lead).collect();
        let mut num = vec![0.0; n + 1];
        let off = n + 1 - self.num.len();
        for (i, c) in self.num.iter().enumerate() {
            num[off + i] = c / lead;
        }
        (num, den)
    }

    /// Controllable canonical realization.
    pub fn to_state_space(&self) -> StateSpace {
        let n = self.order();
        let (num, den) = self.normalized();
        let d0 = num[0];
        if n == 0 {
            return StateSpace::static_gain(DMatrix::from_element(1, 1, d0)).expect("finite gain");
        }
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = -den[n - j];
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let c = DMatrix::from_fn(1, n, |_, j| num[n - j] - d0 * den[n - j]);
        let d = DMatrix::from_element(1, 1, d0);
        StateSpace::new(a, b, c, d).expect("canonical realization is consistent")
    }

    /// Observable canonical realization (dual of the controllable form).
    ///
    /// For a first-order strictly proper `b/(z-a)` this yields `A=a, B=b, C=1`,
    /// so the state equals the output.
    pub fn to_state_space_observable(&self) -> StateSpace {
        let ctrb = self.to_state_space();
        if ctrb.n_states() == 0 {
            return ctrb;
        }
        let n = self.order();
        // Reverse the state ordering so the output reads the first state.
        let perm = DMatrix::from_fn(n, n, |i, j| if i + j == n - 1 { 1.0 } else { 0.0 });
        let a = &perm * ctrb.a().transpose() * &perm;
        let b = &perm * ctrb.c().transpose();
        let c = ctrb.b().transpose() * &perm;
        StateSpace::new(a, b, c, ctrb.d().clone()).expect("dual realization is consistent")
    }

    /// Impulse response by polynomial long division of `num/den` in powers of `z^{-1}`.
    pub fn long_division(&self, len: usize) -> Vec<f64> {
        let n = self.order();
        let (num, den) = self.normalized();
        let mut h = Vec::with_capacity(len);
        for k in 0..len {
            let mut v = if k <= n { num[k] } else { 0.0 };
            for j in 1..=n.min(k) {
                v -= den[j] * h[k - j];
            }
            h.push(v);
        }
        h
    }
}
