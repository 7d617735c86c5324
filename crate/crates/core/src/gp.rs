//! Exact Gaussian-process regression over joint (decision, context) points.
//!
//! The posterior keeps the Cholesky factor of `K + (σ² + jitter) I` and the
//! solved weights `α`. Observations can optionally be standardized; all
//! queries answer in the original output units.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::{cross_matrix, kernel_matrix, JointPoint, KernelFamily, KernelSpec, LengthScales};

/// Diagonal jitter levels tried in order before a factorization is declared
/// failed. The unjittered matrix is tried first.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Largest grid accepted by [`GpPosterior::sample_on_grid`].
pub const DEFAULT_GRID_CAP: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub point: JointPoint,
    pub y: f64,
}

impl Observation {
    pub fn new(point: JointPoint, y: f64) -> Self {
        Self { point, y }
    }
}

/// One joint draw of the posterior on a finite grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSample {
    pub grid: Vec<JointPoint>,
    pub values: Vec<f64>,
}

/// Cholesky factorization of `m + jitter·scale·I`, walking up [`JITTER_LADDER`].
pub(crate) fn cholesky_with_ladder(m: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    for &jitter in &JITTER_LADDER {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter * scale;
        }
        if let Some(c) = a.cholesky() {
            return Ok((c.unpack(), jitter));
        }
    }
    Err(Error::Cholesky {
        attempted: JITTER_LADDER.to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct GpPosterior {
    spec: KernelSpec,
    noise_var: f64,
    data: Vec<Observation>,
    y_offset: f64,
    y_scale: f64,
    /// Lower factor of `K + (σ² + jitter) I`, standardized units.
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpPosterior {
    /// Fit on raw outputs (zero prior mean, unit prior variance).
    pub fn fit(spec: KernelSpec, noise_var: f64, data: Vec<Observation>) -> Result<Self> {
        Self::fit_inner(spec, noise_var, data, false)
    }

    /// Fit after shifting and scaling the outputs to zero mean and unit variance.
    pub fn fit_standardized(spec: KernelSpec, noise_var: f64, data: Vec<Observation>) -> Result<Self> {
        Self::fit_inner(spec, noise_var, data, true)
    }

    fn fit_inner(
        spec: KernelSpec,
        noise_var: f64,
        data: Vec<Observation>,
        standardize: bool,
    ) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::Contract(format!(
                "noise variance must be >= 0, got {noise_var}"
            )));
        }
        for o in &data {
            if !o.y.is_finite() {
                return Err(Error::Contract(format!("observation y = {} is not finite", o.y)));
            }
            if o.point.x.len() != spec.scales.decision_dim() || o.point.w.len() != spec.scales.context_dim() {
                return Err(Error::DimensionMismatch {
                    expected: spec.scales.decision_dim() + spec.scales.context_dim(),
                    actual: o.point.x.len() + o.point.w.len(),
                    context: "observation point vs kernel scales",
                });
            }
        }
        let t = data.len();
        let (y_offset, y_scale) = if standardize && t > 0 {
            let mean = data.iter().map(|o| o.y).sum::<f64>() / t as f64;
            let var = data.iter().map(|o| (o.y - mean).powi(2)).sum::<f64>() / t as f64;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        } else {
            (0.0, 1.0)
        };

        if t == 0 {
            return Ok(Self {
                spec,
                noise_var,
                data,
                y_offset,
                y_scale,
                chol: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }

        let points: Vec<JointPoint> = data.iter().map(|o| o.point.clone()).collect();
        let mut k = kernel_matrix(&spec, &points)?;
        for i in 0..t {
            k[(i, i)] += noise_var;
        }
        let (chol, jitter) = cholesky_with_ladder(&k, 1.0)?;
        let y = DVector::from_iterator(t, data.iter().map(|o| (o.y - y_offset) / y_scale));
        let alpha = solve_cholesky(&chol, &y);
        Ok(Self {
            spec,
            noise_var,
            data,
            y_offset,
            y_scale,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn data(&self) -> &[Observation] {
        &self.data
    }

    /// Jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn output_offset(&self) -> f64 {
        self.y_offset
    }

    pub fn output_scale(&self) -> f64 {
        self.y_scale
    }

    /// Lower Cholesky factor of `K + (σ² + jitter) I` in standardized units.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    fn check_point(&self, p: &JointPoint) -> Result<()> {
        let s = &self.spec.scales;
        if p.x.len() != s.decision_dim() || p.w.len() != s.context_dim() {
            return Err(Error::DimensionMismatch {
                expected: s.decision_dim() + s.context_dim(),
                actual: p.x.len() + p.w.len(),
                context: "query point vs kernel scales",
            });
        }
        Ok(())
    }

    fn training_points(&self) -> Vec<JointPoint> {
        self.data.iter().map(|o| o.point.clone()).collect()
    }

    /// `k_t(p)` for every query point, as a `t × q` matrix.
    fn cross(&self, queries: &[JointPoint]) -> DMatrix<f64> {
        cross_matrix(&self.spec, &self.training_points(), queries)
    }

    /// Posterior means and full covariance at `queries`.
    pub fn mean_cov_batch(&self, queries: &[JointPoint]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        for q in queries {
            self.check_point(q)?;
        }
        let q = queries.len();
        let prior = if q == 0 {
            DMatrix::zeros(0, 0)
        } else {
            kernel_matrix(&self.spec, queries)?
        };
        if self.data.is_empty() {
            let mean = DVector::from_element(q, self.y_offset);
            return Ok((mean, prior * (self.y_scale * self.y_scale)));
        }
        let kq = self.cross(queries);
        let mean_std = kq.transpose() * &self.alpha;
        let v = self
            .chol
            .solve_lower_triangular(&kq)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let cov_std = prior - v.transpose() * v;
        let mean = mean_std.map(|m| self.y_offset + self.y_scale * m);
        Ok((mean, cov_std * (self.y_scale * self.y_scale)))
    }

    /// Posterior means only; cheaper than [`Self::mean_cov_batch`].
    pub fn mean_batch(&self, queries: &[JointPoint]) -> Result<DVector<f64>> {
        for q in queries {
            self.check_point(q)?;
        }
        if self.data.is_empty() {
            return Ok(DVector::from_element(queries.len(), self.y_offset));
        }
        let kq = self.cross(queries);
        Ok((kq.transpose() * &self.alpha).map(|m| self.y_offset + self.y_scale * m))
    }

    pub fn mean(&self, a: &JointPoint) -> Result<f64> {
        Ok(self.mean_batch(std::slice::from_ref(a))?[0])
    }

    /// Posterior mean at `a` and posterior covariance between `a` and `b`.
    pub fn posterior_mean_cov(&self, a: &JointPoint, b: &JointPoint) -> Result<(f64, f64)> {
        let (m, c) = self.mean_cov_batch(&[a.clone(), b.clone()])?;
        Ok((m[0], c[(0, 1)]))
    }

    pub fn variance(&self, a: &JointPoint) -> Result<f64> {
        let (_, c) = self.mean_cov_batch(std::slice::from_ref(a))?;
        Ok(c[(0, 0)].max(0.0))
    }

    /// One joint posterior draw on `grid` (at most [`DEFAULT_GRID_CAP`] points).
    pub fn sample_on_grid(&self, grid: &[JointPoint], seed: u64) -> Result<FunctionSample> {
        self.sample_on_grid_capped(grid, seed, DEFAULT_GRID_CAP)
    }

    pub fn sample_on_grid_capped(
        &self,
        grid: &[JointPoint],
        seed: u64,
        cap: usize,
    ) -> Result<FunctionSample> {
        if grid.is_empty() {
            return Err(Error::Contract("sample grid is empty".into()));
        }
        if grid.len() > cap {
            return Err(Error::Contract(format!(
                "sample grid has {} points, cap is {cap}",
                grid.len()
            )));
        }
        let (mean, cov) = self.mean_cov_batch(grid)?;
        let (l, _) = cholesky_with_ladder(&cov, self.y_scale * self.y_scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DVector::from_iterator(
            grid.len(),
            (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)),
        );
        let values = mean + l * z;
        Ok(FunctionSample {
            grid: grid.to_vec(),
            values: values.iter().copied().collect(),
        })
    }

    /// One joint posterior draw on the Cartesian product `xs × contexts`,
    /// row-major (`index = a · contexts.len() + b`).
    ///
    /// Uses the Kronecker structure of a separable kernel to draw the prior
    /// on the product grid (augmented with the training inputs) and then
    /// conditions the draw on the data with Matheron's update
    /// `f | y = f₀ + K(·, X)(K + σ²I)⁻¹(y − f₀(X) − ε)`.
    pub fn sample_on_product_grid(
        &self,
        xs: &[Vec<f64>],
        contexts: &[Vec<f64>],
        seed: u64,
    ) -> Result<FunctionSample> {
        if !self.spec.is_separable() {
            return Err(Error::Contract(format!(
                "product-grid sampling needs a separable kernel, got {}",
                self.spec.family.name()
            )));
        }
        if xs.is_empty() || contexts.is_empty() {
            return Err(Error::Contract("product grid has an empty axis".into()));
        }
        let s = &self.spec.scales;
        for x in xs {
            if x.len() != s.decision_dim() {
                return Err(Error::DimensionMismatch {
                    expected: s.decision_dim(),
                    actual: x.len(),
                    context: "grid decision vector",
                });
            }
        }
        for w in contexts {
            if w.len() != s.context_dim() {
                return Err(Error::DimensionMismatch {
                    expected: s.context_dim(),
                    actual: w.len(),
                    context: "grid context vector",
                });
            }
        }

        // Axis sets augmented with any training inputs not already present.
        let mut x_axis: Vec<Vec<f64>> = xs.to_vec();
        let mut w_axis: Vec<Vec<f64>> = contexts.to_vec();
        let mut x_index = index_of(&x_axis);
        let mut w_index = index_of(&w_axis);
        let mut data_idx = Vec::with_capacity(self.data.len());
        for o in &self.data {
            let ix = *x_index.entry(bits(&o.point.x)).or_insert_with(|| {
                x_axis.push(o.point.x.clone());
                x_axis.len() - 1
            });
            let iw = *w_index.entry(bits(&o.point.w)).or_insert_with(|| {
                w_axis.push(o.point.w.clone());
                w_axis.len() - 1
            });
            data_idx.push((ix, iw));
        }

        let kx = axis_gram(&x_axis, &s.theta);
        let kw = axis_gram(&w_axis, &s.psi);
        let (lx, _) = cholesky_with_ladder(&kx, 1.0)?;
        let (lw, _) = cholesky_with_ladder(&kw, 1.0)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cx, cw) = (x_axis.len(), w_axis.len());
        let z = DMatrix::from_fn(cx, cw, |_, _| StandardNormal.sample(&mut rng));
        let prior = &lx * z * lw.transpose();

        let (nx, nw) = (xs.len(), contexts.len());
        let mut values = Vec::with_capacity(nx * nw);
        if self.data.is_empty() {
            for a in 0..nx {
                for b in 0..nw {
                    values.push(self.y_offset + self.y_scale * prior[(a, b)]);
                }
            }
        } else {
            let sd = (self.noise_var + self.jitter).sqrt();
            let resid = DVector::from_iterator(
                self.data.len(),
                self.data.iter().zip(&data_idx).map(|(o, &(ix, iw))| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    (o.y - self.y_offset) / self.y_scale - prior[(ix, iw)] - sd * eps
                }),
            );
            let beta = solve_cholesky(&self.chol, &resid);
            for a in 0..nx {
                for b in 0..nw {
                    let update: f64 = data_idx
                        .iter()
                        .zip(beta.iter())
                        .map(|(&(ix, iw), bt)| kx[(a, ix)] * kw[(b, iw)] * bt)
                        .sum();
                    values.push(self.y_offset + self.y_scale * (prior[(a, b)] + update));
                }
            }
        }
        let grid = xs
            .iter()
            .flat_map(|x| {
                contexts
                    .iter()
                    .map(move |w| JointPoint::new(x.clone(), w.clone()))
            })
            .collect();
        Ok(FunctionSample { grid, values })
    }

    /// `Σ_i weights_i μ(x, w_i)`.
    pub fn quadrature_mean(&self, x: &[f64], weights: &[f64], contexts: &[Vec<f64>]) -> Result<f64> {
        check_simplex(weights, contexts.len())?;
        let pts = joint_row(x, contexts);
        let mu = self.mean_batch(&pts)?;
        Ok(weights.iter().zip(mu.iter()).map(|(p, m)| p * m).sum())
    }

    /// `Σ_ij weights_i weights_j C(x, w_i; x, w_j)`, clamped at zero.
    pub fn quadrature_variance(&self, x: &[f64], weights: &[f64], contexts: &[Vec<f64>]) -> Result<f64> {
        check_simplex(weights, contexts.len())?;
        let pts = joint_row(x, contexts);
        let (_, cov) = self.mean_cov_batch(&pts)?;
        let p = DVector::from_column_slice(weights);
        Ok((p.transpose() * cov * p)[(0, 0)].max(0.0))
    }

    /// Gaussian log evidence of the (possibly standardized) outputs.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let t = self.data.len();
        if t == 0 {
            return Err(Error::Contract(
                "log marginal likelihood needs at least one observation".into(),
            ));
        }
        let y = DVector::from_iterator(t, self.data.iter().map(|o| (o.y - self.y_offset) / self.y_scale));
        let fit = -0.5 * y.dot(&self.alpha);
        let log_det: f64 = (0..t).map(|i| self.chol[(i, i)].ln()).sum();
        Ok(fit - log_det - 0.5 * t as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Fit every isotropic `(theta, psi)` pair from `grid` and keep the one with
/// the highest log marginal likelihood (first wins on ties).
pub fn select_length_scales(
    family: KernelFamily,
    noise_var: f64,
    data: &[Observation],
    grid: &[f64],
    standardize: bool,
) -> Result<GpPosterior> {
    let first = data
        .first()
        .ok_or_else(|| Error::Contract("length-scale search needs data".into()))?;
    let (d, m) = (first.point.x.len(), first.point.w.len());
    let mut best: Option<(f64, GpPosterior)> = None;
    for &theta in grid {
        for &psi in grid {
            let spec = KernelSpec::new(family, LengthScales::isotropic(d, m, theta, psi)?);
            let gp = match GpPosterior::fit_inner(spec, noise_var, data.to_vec(), standardize) {
                Ok(gp) => gp,
                Err(Error::Cholesky { .. }) => continue,
                Err(e) => return Err(e),
            };
            let lml = gp.log_marginal_likelihood()?;
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, gp));
            }
        }
    }
    best.map(|(_, gp)| gp).ok_or(Error::Cholesky {
        attempted: JITTER_LADDER.to_vec(),
    })
}

fn solve_cholesky(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l.solve_lower_triangular(b).expect("non-singular factor");
    l.tr_solve_lower_triangular(&z).expect("non-singular factor")
}

fn check_simplex(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: weights.len(),
            context: "weights vs contexts",
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|v| *v < -1e-6 || !v.is_finite()) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "weights are off the simplex (sum = {sum})"
        )));
    }
    Ok(())
}

pub(crate) fn joint_row(x: &[f64], contexts: &[Vec<f64>]) -> Vec<JointPoint> {
    contexts
        .iter()
        .map(|w| JointPoint::new(x.to_vec(), w.clone()))
        .collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn index_of(axis: &[Vec<f64>]) -> HashMap<Vec<u64>, usize> {
    let mut map = HashMap::with_capacity(axis.len());
    for (i, v) in axis.iter().enumerate() {
        map.entry(bits(v)).or_insert(i);
    }
    map
}

/// Squared-exponential Gram matrix along one factor of the product space.
fn axis_gram(axis: &[Vec<f64>], scales: &[f64]) -> DMatrix<f64> {
    let n = axis.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let d2: f64 = axis[i]
                .iter()
                .zip(&axis[j])
                .zip(scales)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum();
            let v = (-d2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}
