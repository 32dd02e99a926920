//! Density scores on embeddings: Mahalanobis distance, relative MD against a
//! background fit, robust density estimation (PCA followed by a FastMCD
//! covariance) and the rank-interpolation hybrid.
//!
//! Covariances use the population convention (divide by N). MD is the
//! squared form `(h - mu)^T Sigma^-1 (h - mu)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_inverse, spd_log_det, symmetric_eigen, Matrix};
use crate::scalar::Real;

pub mod persist;

/// How much to add to the covariance diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Regularization {
    /// `reg * I`.
    Absolute(f64),
    /// `c * trace(Sigma) / dim * I`; falls back to `c * I` when the trace is zero.
    TraceRelative(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::TraceRelative(1e-6)
    }
}

impl Regularization {
    fn amount<T: Real>(self, cov: &Matrix<T>) -> Result<T> {
        let (c, relative) = match self {
            Regularization::Absolute(c) => (c, false),
            Regularization::TraceRelative(c) => (c, true),
        };
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Input(format!("regularization must be finite and >= 0, got {c}")));
        }
        let c = T::lit(c);
        if !relative {
            return Ok(c);
        }
        let per_dim = cov.trace() / T::count(cov.rows());
        Ok(if per_dim > T::zero() { c * per_dim } else { c })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit<T> {
    pub mu: Vec<T>,
    /// Regularized covariance.
    pub sigma: Matrix<T>,
    pub sigma_inv: Matrix<T>,
    pub dim: usize,
    /// The unregularized covariance was not positive definite.
    pub degenerate: bool,
}

fn check_points<T: Real>(points: &[Vec<T>], needed: usize) -> Result<usize> {
    if points.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: points.len(),
        });
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::Input("embeddings have zero dimension".into()));
    }
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Shape {
            expected: dim,
            got: bad.len(),
        });
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Input("embeddings contain non-finite values".into()));
    }
    Ok(dim)
}

fn mean_and_covariance<T: Real>(points: &[&[T]], dim: usize) -> (Vec<T>, Matrix<T>) {
    let n = T::count(points.len());
    let mut mu = vec![T::zero(); dim];
    for p in points {
        for (m, &x) in mu.iter_mut().zip(p.iter()) {
            *m = *m + x;
        }
    }
    mu.iter_mut().for_each(|m| *m = *m / n);
    let mut cov = Matrix::zeros(dim, dim);
    for p in points {
        for i in 0..dim {
            let di = p[i] - mu[i];
            for j in i..dim {
                cov[(i, j)] = cov[(i, j)] + di * (p[j] - mu[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mu, cov)
}

fn fit_from_subset<T: Real>(points: &[&[T]], dim: usize, reg: Regularization) -> Result<GaussianFit<T>> {
    let (mu, cov) = mean_and_covariance(points, dim);
    let degenerate = cholesky(&cov).is_none();
    let r = reg.amount(&cov)?;
    let mut sigma = cov;
    for i in 0..dim {
        sigma[(i, i)] = sigma[(i, i)] + r;
    }
    let sigma_inv = spd_inverse(&sigma).ok_or_else(|| {
        Error::Numeric(format!(
            "covariance is singular after regularization ({r}); increase the regularization"
        ))
    })?;
    Ok(GaussianFit {
        mu,
        sigma,
        sigma_inv,
        dim,
        degenerate,
    })
}

/// Sample mean and population covariance plus regularization.
pub fn fit_gaussian<T: Real>(embeddings: &[Vec<T>], reg: Regularization) -> Result<GaussianFit<T>> {
    let dim = check_points(embeddings, 2)?;
    let refs: Vec<&[T]> = embeddings.iter().map(Vec::as_slice).collect();
    fit_from_subset(&refs, dim, reg)
}

pub fn mahalanobis<T: Real>(fit: &GaussianFit<T>, h: &[T]) -> Result<T> {
    if h.len() != fit.dim {
        return Err(Error::Shape {
            expected: fit.dim,
            got: h.len(),
        });
    }
    let d: Vec<T> = h.iter().zip(&fit.mu).map(|(&a, &b)| a - b).collect();
    Ok(fit.sigma_inv.quadratic_form(&d)?.max(T::zero()))
}

/// `MD(fit, h) - MD(background, h)`.
pub fn relative_mahalanobis<T: Real>(fit: &GaussianFit<T>, background: &GaussianFit<T>, h: &[T]) -> Result<T> {
    if fit.dim != background.dim {
        return Err(Error::Shape {
            expected: fit.dim,
            got: background.dim,
        });
    }
    Ok(mahalanobis(fit, h)? - mahalanobis(background, h)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McdConfig {
    pub support_fraction: f64,
    pub restarts: usize,
    pub max_csteps: usize,
    pub seed: u64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self {
            support_fraction: 0.75,
            restarts: 50,
            max_csteps: 20,
            seed: 0,
        }
    }
}

/// FastMCD: random h-subsets refined by concentration steps (refit, keep the
/// h points of smallest MD) until the covariance determinant stops
/// decreasing. The subset with the smallest determinant wins. No
/// consistency correction is applied to the winning covariance.
pub fn fit_mcd<T: Real>(points: &[Vec<T>], cfg: &McdConfig, reg: Regularization) -> Result<GaussianFit<T>> {
    let dim = check_points(points, 2)?;
    if !(cfg.support_fraction > 0.0 && cfg.support_fraction <= 1.0) {
        return Err(Error::Input(format!(
            "support_fraction must be in (0, 1], got {}",
            cfg.support_fraction
        )));
    }
    let n = points.len();
    let h = ((cfg.support_fraction * n as f64).ceil() as usize).clamp((dim + 1).min(n), n);
    if h == n {
        return fit_gaussian(points, reg);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(T, Vec<usize>)> = None;
    for _ in 0..cfg.restarts.max(1) {
        let mut subset: Vec<usize> = sample(&mut rng, n, h).into_vec();
        subset.sort_unstable();
        let mut det = subset_log_det(points, &subset, dim, reg)?;
        for _ in 0..cfg.max_csteps {
            let next = concentrate(points, &subset, dim, h, reg)?;
            if next == subset {
                break;
            }
            let next_det = subset_log_det(points, &next, dim, reg)?;
            if next_det >= det {
                break;
            }
            subset = next;
            det = next_det;
        }
        if best.as_ref().is_none_or(|(d, _)| det < *d) {
            best = Some((det, subset));
        }
    }
    let (_, subset) = best.expect("at least one restart ran");
    let refs: Vec<&[T]> = subset.iter().map(|&i| points[i].as_slice()).collect();
    fit_from_subset(&refs, dim, reg)
}

fn subset_log_det<T: Real>(points: &[Vec<T>], subset: &[usize], dim: usize, reg: Regularization) -> Result<T> {
    let refs: Vec<&[T]> = subset.iter().map(|&i| points[i].as_slice()).collect();
    let fit = fit_from_subset(&refs, dim, reg)?;
    spd_log_det(&fit.sigma).ok_or_else(|| Error::Numeric("subset covariance not positive definite".into()))
}

fn concentrate<T: Real>(
    points: &[Vec<T>],
    subset: &[usize],
    dim: usize,
    h: usize,
    reg: Regularization,
) -> Result<Vec<usize>> {
    let refs: Vec<&[T]> = subset.iter().map(|&i| points[i].as_slice()).collect();
    let fit = fit_from_subset(&refs, dim, reg)?;
    let mut scored = points
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((mahalanobis(&fit, p)?, i)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut next: Vec<usize> = scored[..h].iter().map(|&(_, i)| i).collect();
    next.sort_unstable();
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdeFit<T> {
    pub center: Vec<T>,
    /// `dim x target_dim`, orthonormal columns ordered by decreasing variance.
    pub projection: Matrix<T>,
    pub reduced_fit: GaussianFit<T>,
    pub explained_variance: T,
}

impl<T: Real> RdeFit<T> {
    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn target_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn project(&self, h: &[T]) -> Result<Vec<T>> {
        if h.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: h.len(),
            });
        }
        let centered: Vec<T> = h.iter().zip(&self.center).map(|(&a, &b)| a - b).collect();
        self.projection.transpose().mat_vec(&centered)
    }

    pub fn reconstruct(&self, z: &[T]) -> Result<Vec<T>> {
        let back = self.projection.mat_vec(z)?;
        Ok(back.iter().zip(&self.center).map(|(&a, &b)| a + b).collect())
    }
}

/// PCA to `target_dim` components, then an MCD Gaussian in the reduced space.
pub fn fit_rde<T: Real>(
    embeddings: &[Vec<T>],
    target_dim: usize,
    mcd: &McdConfig,
    reg: Regularization,
) -> Result<RdeFit<T>> {
    let dim = check_points(embeddings, 2)?;
    if target_dim == 0 || target_dim >= dim {
        return Err(Error::Input(format!(
            "target_dim must be in 1..{dim}, got {target_dim}"
        )));
    }
    check_points(embeddings, target_dim + 2)?;
    let refs: Vec<&[T]> = embeddings.iter().map(Vec::as_slice).collect();
    let (center, cov) = mean_and_covariance(&refs, dim);
    let eig = symmetric_eigen(&cov)?;
    let total: T = eig.values.iter().map(|v| v.max(T::zero())).sum();
    // ascending eigenvalues: take the last target_dim columns, largest first
    let projection = Matrix::from_fn(dim, target_dim, |r, c| eig.vectors[(r, dim - 1 - c)]);
    let kept: T = eig.values[dim - target_dim..].iter().map(|v| v.max(T::zero())).sum();
    let explained_variance = if total > T::zero() { (kept / total).min(T::one()) } else { T::one() };
    let pt = projection.transpose();
    let reduced = embeddings
        .iter()
        .map(|h| {
            let c: Vec<T> = h.iter().zip(&center).map(|(&a, &b)| a - b).collect();
            pt.mat_vec(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let reduced_fit = fit_mcd(&reduced, mcd, reg)?;
    Ok(RdeFit {
        center,
        projection,
        reduced_fit,
        explained_variance,
    })
}

pub fn rde_score<T: Real>(fit: &RdeFit<T>, h: &[T]) -> Result<T> {
    mahalanobis(&fit.reduced_fit, &fit.project(h)?)
}

pub const HUQ_MIN_CALIBRATION: usize = 10;

/// Rank-quantile interpolation between a density score and an information
/// score. This is a stand-in for the hybrid scheme: each score is mapped to
/// its empirical rank within a calibration list and the ranks are blended.
#[derive(Debug, Clone, PartialEq)]
pub struct HuqConfig<T> {
    pub alpha: T,
    density_sorted: Vec<T>,
    info_sorted: Vec<T>,
}

fn sorted_finite<T: Real>(xs: &[T], what: &str) -> Result<Vec<T>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::Input(format!("{what} calibration scores contain NaN")));
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(v)
}

impl<T: Real> HuqConfig<T> {
    pub fn new(alpha: T, density_scores: &[T], info_scores: &[T]) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::Input(format!("alpha must be in [0, 1], got {alpha}")));
        }
        if density_scores.len() != info_scores.len() {
            return Err(Error::Shape {
                expected: density_scores.len(),
                got: info_scores.len(),
            });
        }
        if density_scores.len() < HUQ_MIN_CALIBRATION {
            return Err(Error::InsufficientData {
                needed: HUQ_MIN_CALIBRATION,
                got: density_scores.len(),
            });
        }
        Ok(Self {
            alpha,
            density_sorted: sorted_finite(density_scores, "density")?,
            info_sorted: sorted_finite(info_scores, "info")?,
        })
    }

    pub fn density_calibration(&self) -> &[T] {
        &self.density_sorted
    }

    pub fn info_calibration(&self) -> &[T] {
        &self.info_sorted
    }
}

/// Fraction of calibration values `<= score`.
pub fn empirical_rank<T: Real>(sorted: &[T], score: T) -> T {
    let below = sorted.partition_point(|&c| c <= score);
    T::count(below) / T::count(sorted.len())
}

pub fn huq_combine<T: Real>(cfg: &HuqConfig<T>, density_score: T, info_score: T) -> Result<T> {
    if density_score.is_nan() || info_score.is_nan() {
        return Err(Error::Input("HUQ scores must not be NaN".into()));
    }
    let rd = empirical_rank(&cfg.density_sorted, density_score);
    let ri = empirical_rank(&cfg.info_sorted, info_score);
    Ok(cfg.alpha * rd + (T::one() - cfg.alpha) * ri)
}

/// All fitted density artifacts a scorer may use.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensityModels {
    pub gaussian: Option<GaussianFit<f64>>,
    pub background: Option<GaussianFit<f64>>,
    pub rde: Option<RdeFit<f64>>,
    pub huq: Option<HuqConfig<f64>>,
}
