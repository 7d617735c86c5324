//! Worst-case reweighting of a finite sample inside a χ² ball.
//!
//! Solves `min_{p ∈ P} pᵀl` where `P = {p ∈ Δ_n : n‖p‖² ≤ 2ρ + 1}` is the
//! χ²-divergence ball of radius `ρ` around the uniform distribution.
//!
//! For a fixed multiplier `λ > 0` the stationarity conditions give
//! `λ n p_i = (−l_i − η)_+` with `η` pinned by `Σ p_i = 1`; the active set
//! `A = {i : l_i ≤ −η}` is found from the sorted prefix sums of `l`. The map
//! `λ ↦ n‖p(λ)‖²` is non-increasing, so the multiplier that makes the ball
//! constraint tight is found by bisection and then polished with the exact
//! closed form on the final active set.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Arithmetic mean. Shared by every code path that needs the uniform-weight
/// average so that reductions at `ρ = 0` are bit-identical.
#[inline]
pub fn empirical_mean(l: &[f64]) -> f64 {
    l.iter().sum::<f64>() / l.len() as f64
}

/// The ambiguity set over `n` fixed contexts with χ² radius `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareBall {
    n: usize,
    rho: f64,
}

impl ChiSquareBall {
    pub fn new(n: usize, rho: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("chi-square ball needs n >= 1".into()));
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::Contract(format!(
                "radius must be finite and non-negative, got {rho}"
            )));
        }
        Ok(Self { n, rho })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Right-hand side of the norm constraint, `2ρ + 1`.
    pub fn norm_budget(&self) -> f64 {
        2.0 * self.rho + 1.0
    }

    /// For `ρ ≥ (n−1)/2` the ball covers the whole simplex.
    pub fn covers_simplex(&self) -> bool {
        self.rho >= (self.n as f64 - 1.0) / 2.0
    }

    /// Membership test with absolute tolerance `tol` on both the simplex and the norm constraint.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.n
            && p.iter().all(|v| *v >= -tol)
            && (p.iter().sum::<f64>() - 1.0).abs() <= tol
            && scaled_sq_norm(p) <= self.norm_budget() + tol
    }
}

/// `n‖p‖²`.
#[inline]
pub fn scaled_sq_norm(p: &[f64]) -> f64 {
    p.len() as f64 * p.iter().map(|v| v * v).sum::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weights for a fixed multiplier, with the accompanying `η` and active set.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaWeights {
    pub p: Vec<f64>,
    pub eta: f64,
    /// Indices with `l_i ≤ −η`, ascending.
    pub active: Vec<usize>,
}

/// How [`solve`] arrived at its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `ρ = 0`: the ball is the single uniform distribution.
    Empirical,
    /// `ρ ≥ (n−1)/2`: all mass on the smallest loss.
    FullSimplex,
    /// All losses equal within `1e-12`.
    ConstantLoss,
    /// General case, multiplier found by bisection.
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustSolution {
    pub p: Vec<f64>,
    pub lam: f64,
    pub eta: f64,
    pub active: Vec<usize>,
    pub value: f64,
    pub regime: Regime,
    pub iterations: usize,
}

fn check_losses(l: &[f64], ball: &ChiSquareBall) -> Result<()> {
    if l.len() != ball.n {
        return Err(Error::DimensionMismatch {
            expected: ball.n,
            actual: l.len(),
            context: "loss vector vs ball size",
        });
    }
    if let Some(v) = l.iter().find(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "loss vector contains non-finite value {v}"
        )));
    }
    Ok(())
}

/// Weights `p(λ)` for a fixed `λ > 0` via the sorted prefix search.
pub fn weights_given_lambda(l: &[f64], ball: &ChiSquareBall, lam: f64) -> Result<LambdaWeights> {
    check_losses(l, ball)?;
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(Error::Contract(format!(
            "lambda must be positive and finite, got {lam}"
        )));
    }
    let n = l.len();
    let n_lam = n as f64 * lam;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| l[a].total_cmp(&l[b]).then(a.cmp(&b)));

    // The prefix condition l_(k) <= -eta_k holds for k = 1..K and fails
    // afterwards; K is the size of the active set. Ties at the boundary satisfy
    // it too, so A is closed under l_i = -eta.
    let mut prefix = 0.0;
    let mut eta = f64::NAN;
    for (k, &idx) in order.iter().enumerate() {
        prefix += l[idx];
        let eta_k = (-prefix - n_lam) / (k + 1) as f64;
        if l[idx] <= -eta_k {
            eta = eta_k;
        } else {
            break;
        }
    }
    if eta.is_nan() {
        return Err(Error::Numerical(
            "prefix search found no consistent active set".into(),
        ));
    }

    let mut p: Vec<f64> = l.iter().map(|li| (-li - eta).max(0.0)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        // Same as dividing by nλ in exact arithmetic, but immune to the
        // cancellation in -l_i - eta when λ is tiny.
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        // λ below the resolution of l: fall back to the minimizers.
        let lmin = l[order[0]];
        let ties: Vec<usize> = (0..n).filter(|&i| l[i] == lmin).collect();
        p.iter_mut().for_each(|v| *v = 0.0);
        for &i in &ties {
            p[i] = 1.0 / ties.len() as f64;
        }
    }
    let active = (0..n).filter(|&i| l[i] <= -eta).collect();
    Ok(LambdaWeights { p, eta, active })
}

/// Upper bound on the optimal multiplier, evaluated exactly as the closed form
/// `max{(−l_min + Σl)/(√(1+2ρ) − 1), (l_max − l_min)/√(1+2ρ)}`.
///
/// The first term is not translation invariant and can fall below the true
/// multiplier when `l` has negative entries; [`solve`] therefore brackets with
/// the larger of this and [`feasible_lambda`].
pub fn lambda_upper_bound(l: &[f64], ball: &ChiSquareBall) -> Result<f64> {
    check_losses(l, ball)?;
    if ball.rho <= 0.0 {
        return Err(Error::Contract("lambda_upper_bound requires rho > 0".into()));
    }
    let (lmin, lmax) = min_max(l);
    let sum: f64 = l.iter().sum();
    let root = (1.0 + 2.0 * ball.rho).sqrt();
    Ok(((-lmin + sum) / (root - 1.0)).max((lmax - lmin) / root))
}

/// A multiplier that is always feasible: at `λ ≥ max(l_max − l̄, s/√(2ρ))`
/// every index is active and `n‖p(λ)‖² = 1 + s²/λ² ≤ 2ρ + 1`.
pub fn feasible_lambda(l: &[f64], ball: &ChiSquareBall) -> f64 {
    let mean = empirical_mean(l);
    let (_, lmax) = min_max(l);
    let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l.len() as f64;
    (lmax - mean).max((var / (2.0 * ball.rho)).sqrt())
}

fn min_max(l: &[f64]) -> (f64, f64) {
    l.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn argmin_lowest(l: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in l.iter().enumerate() {
        if *v < l[best] {
            best = i;
        }
    }
    best
}

const MAX_BISECTION_STEPS: usize = 200;

/// Solve with the default bracket tolerance `1e-10 · (1 + bound)`.
pub fn solve(l: &[f64], ball: &ChiSquareBall) -> Result<RobustSolution> {
    solve_with_tolerance(l, ball, None)
}

pub fn solve_with_tolerance(l: &[f64], ball: &ChiSquareBall, eps: Option<f64>) -> Result<RobustSolution> {
    check_losses(l, ball)?;
    let n = l.len();

    if ball.rho == 0.0 {
        let mean = empirical_mean(l);
        return Ok(RobustSolution {
            p: vec![1.0 / n as f64; n],
            lam: 0.0,
            eta: -mean,
            active: (0..n).collect(),
            value: mean,
            regime: Regime::Empirical,
            iterations: 0,
        });
    }

    if ball.covers_simplex() {
        let best = argmin_lowest(l);
        let mut p = vec![0.0; n];
        p[best] = 1.0;
        let lmin = l[best];
        return Ok(RobustSolution {
            p,
            lam: 0.0,
            eta: -lmin,
            active: (0..n).filter(|&i| l[i] <= lmin).collect(),
            value: lmin,
            regime: Regime::FullSimplex,
            iterations: 0,
        });
    }

    let (lmin, lmax) = min_max(l);
    if lmax - lmin < 1e-12 {
        return Ok(RobustSolution {
            p: vec![1.0 / n as f64; n],
            lam: 0.0,
            eta: -l[0],
            active: (0..n).collect(),
            value: l[0],
            regime: Regime::ConstantLoss,
            iterations: 0,
        });
    }

    let bound = lambda_upper_bound(l, ball)?.max(feasible_lambda(l, ball));
    let eps = eps.unwrap_or(1e-10 * (1.0 + bound));
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Contract(format!(
            "bisection tolerance must be positive, got {eps}"
        )));
    }
    let budget = ball.norm_budget();
    let mut lo = 1e-12 * (1.0 + bound);
    let mut hi = bound;
    let mut iterations = 0;
    while hi - lo > eps {
        iterations += 1;
        if iterations > MAX_BISECTION_STEPS {
            return Err(Error::Numerical(format!(
                "bisection did not reach width {eps} within {MAX_BISECTION_STEPS} steps"
            )));
        }
        let mid = 0.5 * (lo + hi);
        let w = weights_given_lambda(l, ball, mid)?;
        if scaled_sq_norm(&w.p) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // hi is always on the feasible side.
    let mut lam = hi;
    let mut sol = weights_given_lambda(l, ball, lam)?;
    if let Some((lam_exact, polished)) = polish(l, ball, &sol.active) {
        if polished.active == sol.active && scaled_sq_norm(&polished.p) <= budget + 1e-12 {
            lam = lam_exact;
            sol = polished;
        }
    }
    let value = dot(&sol.p, l);
    Ok(RobustSolution {
        p: sol.p,
        lam,
        eta: sol.eta,
        active: sol.active,
        value,
        regime: Regime::Bisection,
        iterations,
    })
}

/// Exact multiplier on a fixed active set:
/// `n‖p‖² = n/|A| + S_A/(nλ²)` with `S_A = Σ_A (l_i − l̄_A)²`.
fn polish(l: &[f64], ball: &ChiSquareBall, active: &[usize]) -> Option<(f64, LambdaWeights)> {
    let n = l.len() as f64;
    let k = active.len() as f64;
    let slack = ball.norm_budget() - n / k;
    if active.is_empty() || slack <= 0.0 {
        return None;
    }
    let mean_a = active.iter().map(|&i| l[i]).sum::<f64>() / k;
    let spread: f64 = active.iter().map(|&i| (l[i] - mean_a).powi(2)).sum();
    if spread <= 0.0 {
        return None;
    }
    let lam = (spread / (n * slack)).sqrt();
    weights_given_lambda(l, ball, lam).ok().map(|w| (lam, w))
}

/// Gradient of the robust value with respect to the parameters of `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGradient {
    pub grad: Vec<f64>,
    /// `false` when the minimizing weights are not unique; `grad` is then one
    /// valid subgradient.
    pub unique: bool,
}

/// `∂/∂x min_{p∈P} pᵀl(x) = Σ_i p*_i ∂l_i/∂x` at the minimizer `p*`.
///
/// `dl_dx` is `n × d` with row `i` holding the gradient of `l_i`.
pub fn robust_value_gradient(l: &[f64], dl_dx: &DMatrix<f64>, ball: &ChiSquareBall) -> Result<ValueGradient> {
    if dl_dx.nrows() != l.len() {
        return Err(Error::DimensionMismatch {
            expected: l.len(),
            actual: dl_dx.nrows(),
            context: "jacobian rows vs loss length",
        });
    }
    let sol = solve(l, ball)?;
    let grad = (0..dl_dx.ncols())
        .map(|j| (0..l.len()).map(|i| sol.p[i] * dl_dx[(i, j)]).sum())
        .collect();
    let unique = match sol.regime {
        Regime::Empirical => true,
        Regime::ConstantLoss => l.len() == 1,
        Regime::FullSimplex => {
            let best = argmin_lowest(l);
            l.iter()
                .enumerate()
                .filter(|(i, _)| *i != best)
                .all(|(_, v)| v - l[best] > 1e-9)
        }
        Regime::Bisection => {
            let tight = (scaled_sq_norm(&sol.p) - ball.norm_budget()).abs() <= 1e-7;
            let support: Vec<f64> = sol.active.iter().map(|&i| l[i]).collect();
            let (a, b) = min_max(&support);
            tight && b - a > 1e-12
        }
    };
    Ok(ValueGradient { grad, unique })
}

/// Sandwich bounds on `mean(z) − min_{p∈P} pᵀz` for samples in `[m0, m1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBounds {
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
}

impl GapBounds {
    pub fn holds(&self, tol: f64) -> bool {
        self.lower - tol <= self.gap && self.gap <= self.upper + tol
    }
}

/// `max{√(2ρ s²) − 2Mρ, 0} ≤ mean(z) − robust(z) ≤ √(2ρ s²)` with `M = m1 − m0`
/// and `s²` the empirical (1/n) variance.
pub fn gap_bounds(z: &[f64], bounds: (f64, f64), ball: &ChiSquareBall) -> Result<GapBounds> {
    let (m0, m1) = bounds;
    if m0.is_nan() || m1.is_nan() || m0 > m1 {
        return Err(Error::Contract(format!("invalid sample range [{m0}, {m1}]")));
    }
    if let Some(v) = z.iter().find(|v| !(m0..=m1).contains(*v)) {
        return Err(Error::Contract(format!("sample {v} outside [{m0}, {m1}]")));
    }
    let mean = empirical_mean(z);
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
    let upper = (2.0 * ball.rho * var).sqrt();
    let lower = (upper - 2.0 * (m1 - m0) * ball.rho).max(0.0);
    let gap = mean - solve(z, ball)?.value;
    Ok(GapBounds { lower, upper, gap })
}

/// Independent reference minimizer for `n ≤ 4`, used by tests.
///
/// The first `n − 2` weights are enumerated on a lattice of spacing `step`;
/// the remaining mass is split between the last two weights by minimizing the
/// linear objective exactly over the feasible segment. The norm constraint is
/// relaxed by `n² step²` so that a lattice point always exists near the
/// uniform distribution.
pub fn brute_force_oracle(l: &[f64], ball: &ChiSquareBall, step: f64) -> Result<f64> {
    check_losses(l, ball)?;
    let n = l.len();
    if n > 4 {
        return Err(Error::Contract(format!("brute force oracle refuses n = {n} > 4")));
    }
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Contract(format!(
            "oracle step must be in (0, 1e-2], got {step}"
        )));
    }
    let budget = ball.norm_budget() + (n * n) as f64 * step * step;
    let sq_limit = budget / n as f64;
    if n == 1 {
        return Ok(l[0]);
    }
    let ticks = (1.0 / step).round() as usize;
    let mut best = f64::INFINITY;
    let mut prefix = vec![0.0; n - 2];
    enumerate(&mut prefix, 0, ticks, ticks, &mut |head| {
        let used: f64 = head.iter().sum();
        let rest = 1.0 - used;
        if rest < -1e-12 {
            return;
        }
        let rest = rest.max(0.0);
        let head_sq: f64 = head.iter().map(|v| v * v).sum();
        let head_val: f64 = head.iter().zip(l).map(|(p, v)| p * v).sum();
        // t² + (rest − t)² ≤ sq_limit − head_sq on t ∈ [0, rest]
        let room = sq_limit - head_sq;
        let disc = 2.0 * room - rest * rest;
        if disc < 0.0 {
            return;
        }
        let half = disc.sqrt() / 2.0;
        let t_lo = (rest / 2.0 - half).max(0.0);
        let t_hi = (rest / 2.0 + half).min(rest);
        if t_lo > t_hi {
            return;
        }
        let (a, b) = (l[n - 2], l[n - 1]);
        for t in [t_lo, t_hi] {
            let v = head_val + t * a + (rest - t) * b;
            if v < best {
                best = v;
            }
        }
    });
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Numerical("oracle found no feasible lattice point".into()))
    }
}

/// Visits every lattice point `k_i / ticks` with `Σ k_i ≤ ticks` in the first `buf.len()` slots.
fn enumerate(buf: &mut [f64], depth: usize, left: usize, ticks: usize, f: &mut impl FnMut(&[f64])) {
    if depth == buf.len() {
        f(buf);
        return;
    }
    for k in 0..=left {
        buf[depth] = k as f64 / ticks as f64;
        enumerate(buf, depth + 1, left - k, ticks, f);
    }
}
