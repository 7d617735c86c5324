//! Stationary covariance functions on the joint (decision, context) space.
//!
//! Both families have unit signal variance, so `k(a, a) = 1` and every value
//! lies in `[0, 1]`. Distances are measured with separate length scales for
//! the decision coordinates (`theta`) and the context coordinates (`psi`).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A point of the product space: decision vector `x` and context vector `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPoint {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl JointPoint {
    pub fn new(x: Vec<f64>, w: Vec<f64>) -> Self {
        Self { x, w }
    }
}

/// Per-dimension length scales for decision and context coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthScales {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl LengthScales {
    pub fn new(theta: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || psi.is_empty() {
            return Err(Error::Contract(
                "length scales need at least one decision and one context dimension".into(),
            ));
        }
        if let Some(bad) = theta
            .iter()
            .chain(psi.iter())
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Contract(format!(
                "length scales must be positive and finite, got {bad}"
            )));
        }
        Ok(Self { theta, psi })
    }

    /// The same scale on every axis.
    pub fn isotropic(d: usize, m: usize, theta: f64, psi: f64) -> Result<Self> {
        Self::new(vec![theta; d], vec![psi; m])
    }

    pub fn decision_dim(&self) -> usize {
        self.theta.len()
    }

    pub fn context_dim(&self) -> usize {
        self.psi.len()
    }
}

/// Kernel family. Matérn is restricted to the half-integer orders with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    SquaredExponential,
    Matern12,
    Matern32,
    Matern52,
}

impl KernelFamily {
    /// Matérn family for smoothness `nu`; only 1/2, 3/2 and 5/2 are supported.
    pub fn matern(nu: f64) -> Result<Self> {
        match nu {
            0.5 => Ok(Self::Matern12),
            1.5 => Ok(Self::Matern32),
            2.5 => Ok(Self::Matern52),
            other => Err(Error::Config(format!(
                "unsupported Matérn smoothness nu = {other} (supported: 0.5, 1.5, 2.5)"
            ))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "se" | "squared_exponential" | "rbf" => Ok(Self::SquaredExponential),
            "matern12" | "matern1/2" => Ok(Self::Matern12),
            "matern32" | "matern3/2" => Ok(Self::Matern32),
            "matern52" | "matern5/2" => Ok(Self::Matern52),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SquaredExponential => "se",
            Self::Matern12 => "matern12",
            Self::Matern32 => "matern32",
            Self::Matern52 => "matern52",
        }
    }

    /// Kernel value as a function of the scaled squared distance.
    fn profile(self, sq_dist: f64) -> f64 {
        match self {
            Self::SquaredExponential => (-sq_dist).exp(),
            Self::Matern12 => (-sq_dist.sqrt()).exp(),
            Self::Matern32 => {
                let r = (3.0 * sq_dist).sqrt();
                (1.0 + r) * (-r).exp()
            }
            Self::Matern52 => {
                let r = (5.0 * sq_dist).sqrt();
                (1.0 + r + r * r / 3.0) * (-r).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scales: LengthScales,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, scales: LengthScales) -> Self {
        Self { family, scales }
    }

    /// Squared exponential with isotropic scales, the default for normalized inputs.
    pub fn se_isotropic(d: usize, m: usize, scale: f64) -> Result<Self> {
        Ok(Self::new(
            KernelFamily::SquaredExponential,
            LengthScales::isotropic(d, m, scale, scale)?,
        ))
    }

    /// `true` when the kernel factorizes into a decision part times a context part.
    pub fn is_separable(&self) -> bool {
        self.family == KernelFamily::SquaredExponential
    }

    pub fn eval(&self, a: &JointPoint, b: &JointPoint) -> Result<f64> {
        kernel_eval(self, a, b)
    }

    /// Evaluation without dimension checks, for inner loops over validated points.
    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &JointPoint, b: &JointPoint) -> f64 {
        self.family.profile(sq_dist_unchecked(a, b, &self.scales))
    }
}

fn check_dims(p: &JointPoint, s: &LengthScales) -> Result<()> {
    if p.x.len() != s.theta.len() {
        return Err(Error::DimensionMismatch {
            expected: s.theta.len(),
            actual: p.x.len(),
            context: "decision vector vs theta",
        });
    }
    if p.w.len() != s.psi.len() {
        return Err(Error::DimensionMismatch {
            expected: s.psi.len(),
            actual: p.w.len(),
            context: "context vector vs psi",
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist_unchecked(a: &JointPoint, b: &JointPoint, s: &LengthScales) -> f64 {
    let dx: f64 =
        a.x.iter()
            .zip(&b.x)
            .zip(&s.theta)
            .map(|((u, v), t)| {
                let z = (u - v) / t;
                z * z
            })
            .sum();
    let dw: f64 =
        a.w.iter()
            .zip(&b.w)
            .zip(&s.psi)
            .map(|((u, v), t)| {
                let z = (u - v) / t;
                z * z
            })
            .sum();
    dx + dw
}

/// Squared distance with each coordinate divided by its length scale.
pub fn scaled_sq_dist(a: &JointPoint, b: &JointPoint, s: &LengthScales) -> Result<f64> {
    check_dims(a, s)?;
    check_dims(b, s)?;
    Ok(sq_dist_unchecked(a, b, s))
}

pub fn kernel_eval(spec: &KernelSpec, a: &JointPoint, b: &JointPoint) -> Result<f64> {
    let d2 = scaled_sq_dist(a, b, &spec.scales)?;
    Ok(spec.family.profile(d2))
}

/// Gram matrix `[k(p_i, p_j)]`; symmetric with unit diagonal.
pub fn kernel_matrix(spec: &KernelSpec, points: &[JointPoint]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::Contract("kernel_matrix needs at least one point".into()));
    }
    for p in points {
        check_dims(p, &spec.scales)?;
    }
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = spec.eval_unchecked(&points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cross-covariance `[k(a_i, b_j)]` between two point sets.
pub fn cross_matrix(spec: &KernelSpec, a: &[JointPoint], b: &[JointPoint]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| spec.eval_unchecked(&a[i], &b[j]))
}
