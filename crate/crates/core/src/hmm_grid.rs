//! Per-cell hidden Markov model over discretised terrain heights.
//!
//! Every grid cell carries a posterior over `n` height states spaced `delta`
//! apart starting at `h_min`. A scan contributes a diagonal Gaussian
//! likelihood which is fused with the prior through a shared, near-diagonal
//! transition matrix:
//!
//! ```text
//! x_k = eta * B_k * A * x_{k-1}
//! ```
//!
//! `A` has only two distinct values (`a_self` on the diagonal, `delta_off`
//! elsewhere) so the prediction step is evaluated in O(n).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Height discretisation and filter parameters shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig<T> {
    pub h_min: T,
    pub h_max: T,
    /// Shared resolution of voxels, grid cells and height states (metres).
    pub delta: T,
    /// Standard deviation of a single height observation (metres).
    pub sigma: T,
    /// Self-transition probability on the diagonal of the transition matrix.
    pub a_self: T,
    /// A cell only changes its reported state when its peak posterior exceeds this.
    pub p_min: T,
    /// Number of scans the map needs before it is considered initialised.
    pub m_init: usize,
}

impl<T: Scalar> Default for GridConfig<T> {
    /// 0..20 m at 0.25 m (81 states), sigma equal to the resolution.
    fn default() -> Self {
        Self {
            h_min: T::zero(),
            h_max: T::lit(20.0),
            delta: T::lit(0.25),
            sigma: T::lit(0.25),
            a_self: T::lit(0.99),
            p_min: T::lit(0.6),
            m_init: 1000,
        }
    }
}

impl<T: Scalar> GridConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.h_min, self.h_max, self.delta, self.sigma, self.a_self, self.p_min]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        if self.h_max <= self.h_min {
            return Err(Error::InvalidConfig(format!(
                "h_max ({}) must exceed h_min ({})",
                self.h_max, self.h_min
            )));
        }
        if self.delta <= T::zero() {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if self.sigma <= T::zero() {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.a_self > T::zero() && self.a_self < T::one()) {
            return Err(Error::InvalidConfig(format!("a_self must lie in (0, 1), got {}", self.a_self)));
        }
        if !(self.p_min > T::zero() && self.p_min < T::one()) {
            return Err(Error::InvalidConfig(format!("p_min must lie in (0, 1), got {}", self.p_min)));
        }
        if state_count_unchecked(self) < 2 {
            return Err(Error::InvalidConfig("height range must hold at least two states".into()));
        }
        Ok(())
    }

    /// Number of height states; see [`num_states`].
    pub fn n(&self) -> usize {
        state_count_unchecked(self)
    }
}

fn state_count_unchecked<T: Scalar>(cfg: &GridConfig<T>) -> usize {
    let ratio = (cfg.h_max - cfg.h_min) / cfg.delta;
    // absorb representation error so that e.g. 1.0 / 0.1 counts ten intervals
    let slack = ratio * T::epsilon() * T::lit(4.0);
    (ratio + slack).floor().to_usize().unwrap_or(0) + 1
}

/// `floor((h_max - h_min) / delta) + 1`.
pub fn num_states<T: Scalar>(cfg: &GridConfig<T>) -> Result<usize> {
    if !(cfg.h_max > cfg.h_min) {
        return Err(Error::InvalidConfig(format!(
            "h_max ({}) must exceed h_min ({})",
            cfg.h_max, cfg.h_min
        )));
    }
    if !(cfg.delta > T::zero()) || !cfg.delta.is_finite() {
        return Err(Error::InvalidConfig(format!("delta must be positive, got {}", cfg.delta)));
    }
    Ok(state_count_unchecked(cfg))
}

/// Height represented by state `l`: `h_min + l * delta`.
pub fn state_center<T: Scalar>(cfg: &GridConfig<T>, l: usize) -> Result<T> {
    let n = cfg.n();
    if l >= n {
        return Err(Error::IndexOutOfRange { index: l, n });
    }
    Ok(cfg.h_min + T::from_usize_lossy(l) * cfg.delta)
}

/// Index of the state centre nearest `h`, clamped to the valid range.
/// Exactly half-way heights resolve to the lower state.
pub fn nearest_state<T: Scalar>(cfg: &GridConfig<T>, h: T) -> usize {
    let n = cfg.n();
    let r = (h - cfg.h_min) / cfg.delta;
    let idx = (r - T::lit(0.5)).ceil();
    if !(idx > T::zero()) {
        0
    } else {
        idx.to_usize().unwrap_or(n - 1).min(n - 1)
    }
}

/// Probability distribution over the `n` height states of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T> {
    probs: Vec<T>,
}

impl<T: Scalar> StateVector<T> {
    pub fn one_hot(n: usize, l: usize) -> Result<Self> {
        if l >= n {
            return Err(Error::IndexOutOfRange { index: l, n });
        }
        let mut probs = vec![T::zero(); n];
        probs[l] = T::one();
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        let p = T::one() / T::from_usize_lossy(n);
        Self { probs: vec![p; n] }
    }

    /// Normalises `weights` into a distribution.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: T = weights.iter().copied().sum();
        if !(total > T::mass_floor()) {
            return Err(Error::DegenerateLikelihood(total.to_f64_lossy()));
        }
        Ok(Self { probs: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn sum(&self) -> T {
        self.probs.iter().copied().sum()
    }

    /// Index and value of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> (usize, T) {
        let mut best = (0, self.probs[0]);
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    pub fn max(&self) -> T {
        self.argmax().1
    }
}

/// The `n x n` transition matrix with `a_self` on the diagonal and
/// `(1 - a_self) / (n - 1)` everywhere else. Symmetric and doubly stochastic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix<T> {
    n: usize,
    a_self: T,
    delta_off: T,
}

impl<T: Scalar> TransitionMatrix<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a_self(&self) -> T {
        self.a_self
    }

    pub fn delta_off(&self) -> T {
        self.delta_off
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        if row == col {
            self.a_self
        } else {
            self.delta_off
        }
    }

    /// Writes `A * x` into `out` in O(n).
    pub fn predict_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        let total: T = x.iter().copied().sum();
        let diag_gain = self.a_self - self.delta_off;
        let floor = self.delta_off * total;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = diag_gain * xi + floor;
        }
    }

    /// Materialised rows, for inspection and tests.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.n).map(|r| (0..self.n).map(|c| self.get(r, c)).collect()).collect()
    }
}

pub fn build_transition_matrix<T: Scalar>(n: usize, a_self: T) -> Result<TransitionMatrix<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("transition matrix needs n >= 2, got {n}")));
    }
    if !(a_self > T::zero() && a_self < T::one()) {
        return Err(Error::InvalidArgument(format!("a_self must lie in (0, 1), got {a_self}")));
    }
    let delta_off = (T::one() - a_self) / T::from_usize_lossy(n - 1);
    Ok(TransitionMatrix { n, a_self, delta_off })
}

/// Diagonal of the observation likelihood matrix.
///
/// Entries are Gaussian densities up to one common positive factor: when the
/// peak density is representable the values are the true densities, otherwise
/// the log-densities are shifted so the peak is one. No entry is ever zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMatrix<T> {
    diag: Vec<T>,
}

impl<T: Scalar> LikelihoodMatrix<T> {
    pub fn from_diag(diag: Vec<T>) -> Result<Self> {
        if diag.is_empty() || diag.iter().any(|d| !d.is_finite() || *d < T::zero()) {
            return Err(Error::InvalidArgument("likelihood entries must be finite and non-negative".into()));
        }
        Ok(Self { diag })
    }

    pub fn diag(&self) -> &[T] {
        &self.diag
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &d) in self.diag.iter().enumerate().skip(1) {
            if d > self.diag[best] {
                best = i;
            }
        }
        best
    }
}

pub fn gaussian_likelihood<T: Scalar>(cfg: &GridConfig<T>, h: T) -> Result<LikelihoodMatrix<T>> {
    if !h.is_finite() {
        return Err(Error::NonFiniteInput("observed height"));
    }
    let n = cfg.n();
    let inv_sigma = T::one() / cfg.sigma;
    let log_norm = (cfg.sigma * (T::TAU()).sqrt()).ln();
    let half = T::lit(0.5);

    let mut diag: Vec<T> = (0..n)
        .map(|l| {
            let center = cfg.h_min + T::from_usize_lossy(l) * cfg.delta;
            let z = (h - center) * inv_sigma;
            -half * z * z - log_norm
        })
        .collect();

    let peak = diag.iter().copied().fold(T::neg_infinity(), T::max);
    // keep true densities unless the peak itself would leave the normal range
    let shift = if peak > T::min_positive_value().ln() + T::lit(16.0) { T::zero() } else { peak };
    let tiny = T::min_positive_value();
    for d in diag.iter_mut() {
        *d = (*d - shift).exp().max(tiny);
    }
    Ok(LikelihoodMatrix { diag })
}

fn check_dims<T: Scalar>(n: usize, a: &TransitionMatrix<T>, b: &LikelihoodMatrix<T>) -> Result<()> {
    if a.n != n || b.len() != n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: state {n}, transition {}, likelihood {}",
            a.n,
            b.len()
        )));
    }
    Ok(())
}

/// One recursive filter step, `eta * B * A * x_prev`, normalised to sum to one.
pub fn hmm_filter_update<T: Scalar>(
    x_prev: &StateVector<T>,
    a: &TransitionMatrix<T>,
    b: &LikelihoodMatrix<T>,
) -> Result<StateVector<T>> {
    let mut out = x_prev.clone();
    filter_in_place(&mut out.probs, a, b)?;
    Ok(out)
}

/// In-place variant of [`hmm_filter_update`]. On error `probs` is left untouched.
pub fn filter_in_place<T: Scalar>(
    probs: &mut [T],
    a: &TransitionMatrix<T>,
    b: &LikelihoodMatrix<T>,
) -> Result<T> {
    check_dims(probs.len(), a, b)?;
    let total: T = probs.iter().copied().sum();
    let diag_gain = a.a_self - a.delta_off;
    let floor = a.delta_off * total;

    let mut mass = T::zero();
    for (p, &lik) in probs.iter().zip(&b.diag) {
        mass += lik * (diag_gain * *p + floor);
    }
    if !(mass > T::mass_floor()) || !mass.is_finite() {
        return Err(Error::DegenerateLikelihood(mass.to_f64_lossy()));
    }
    let eta = T::one() / mass;
    for (p, &lik) in probs.iter_mut().zip(&b.diag) {
        *p = lik * (diag_gain * *p + floor) * eta;
    }
    Ok(eta)
}

/// Posterior and bookkeeping for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellHmm<T> {
    pub state: StateVector<T>,
    pub reported_state_index: usize,
    pub last_update_scan: u64,
    pub observation_count: u64,
}

impl<T: Scalar> CellHmm<T> {
    /// A cell created by its first observation: one-hot at state `l`, reported immediately.
    pub fn one_hot(n: usize, l: usize, scan: u64) -> Result<Self> {
        Ok(Self {
            state: StateVector::one_hot(n, l)?,
            reported_state_index: l,
            last_update_scan: scan,
            observation_count: 1,
        })
    }

    pub fn confidence(&self) -> T {
        self.state.max()
    }

    /// Fuses one likelihood into the posterior and refreshes the reported state.
    /// Returns whether the reported state changed.
    pub fn observe(
        &mut self,
        a: &TransitionMatrix<T>,
        b: &LikelihoodMatrix<T>,
        p_min: T,
        scan: u64,
    ) -> Result<bool> {
        filter_in_place(&mut self.state.probs, a, b)?;
        self.last_update_scan = scan;
        self.observation_count += 1;
        let before = self.reported_state_index;
        Ok(report_state(self, p_min) != before)
    }
}

/// Moves the reported state to the posterior's argmax only when its
/// probability exceeds `p_min`; otherwise the previous report is held.
pub fn report_state<T: Scalar>(cell: &mut CellHmm<T>, p_min: T) -> usize {
    let (idx, p) = cell.state.argmax();
    if p > p_min {
        cell.reported_state_index = idx;
    }
    cell.reported_state_index
}
