//! Gaussian mixture model: density, ancestral sampling and the
//! Dirichlet / Normal-Inverse-Wishart prior over its parameters.
//!
//! The mixture lives in the `d`-dimensional summary space shared by all
//! sites, never in a site's raw feature space.

use std::f64::consts::PI;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::samplers::{
    cholesky, sample_categorical, sample_dirichlet, sample_inverse_wishart,
    sample_mvn_with_factor, Matrix, RngStream,
};

const WEIGHT_TOL: f64 = 1e-9;
const MAX_COV_REDRAWS: usize = 100;

/// Mixture parameters `{π_k, μ_k, Σ_k}` for `k` components in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmParams {
    k: usize,
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Matrix>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGmmParams {
    k: usize,
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Matrix>,
}

impl<'de> Deserialize<'de> for GmmParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawGmmParams::deserialize(d)?;
        let params = GmmParams::new(raw.weights, raw.means, raw.covs).map_err(D::Error::custom)?;
        if params.k != raw.k || params.dim != raw.dim {
            return Err(D::Error::custom("k/dim disagree with the parameter arrays"));
        }
        Ok(params)
    }
}

impl GmmParams {
    /// Validates and builds a parameter set.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Matrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(dim_err("mixture needs at least one component"));
        }
        if means.len() != k || covs.len() != k {
            return Err(dim_err(format!(
                "{k} weights but {} means and {} covariances",
                means.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidWeights("mixture weight outside [0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidWeights(format!("mixture weights sum to {total}")));
        }
        let dim = means[0].len();
        for (m, c) in means.iter().zip(&covs) {
            if m.len() != dim || c.rows() != dim || c.cols() != dim {
                return Err(dim_err("component dimensions disagree"));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("component mean".into()));
            }
            cholesky(c)?;
        }
        Ok(Self {
            k,
            dim,
            weights,
            means,
            covs,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[Matrix] {
        &self.covs
    }

    /// Returns the same mixture with components permuted so that `order[i]`
    /// becomes component `i`.
    pub fn permuted(&self, order: &[usize]) -> GmmParams {
        GmmParams {
            k: self.k,
            dim: self.dim,
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            means: order.iter().map(|&i| self.means[i].clone()).collect(),
            covs: order.iter().map(|&i| self.covs[i].clone()).collect(),
        }
    }

    /// Components sorted by mean, lexicographically on the coordinates.
    pub fn canonical(&self) -> GmmParams {
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| {
            self.means[a]
                .iter()
                .zip(&self.means[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        self.permuted(&order)
    }

    fn components(&self) -> Result<Vec<Component<'_>>> {
        self.covs
            .iter()
            .zip(&self.means)
            .zip(&self.weights)
            .map(|((c, m), &w)| Component::new(w, m, c))
            .collect()
    }
}

/// Cached per-component quantities for log-density evaluation.
struct Component<'a> {
    log_weight: f64,
    mean: &'a [f64],
    factor: Matrix,
    log_norm: f64,
}

impl<'a> Component<'a> {
    fn new(weight: f64, mean: &'a [f64], cov: &Matrix) -> Result<Self> {
        let factor = cholesky(cov)?;
        let log_det: f64 = (0..factor.rows()).map(|i| factor[(i, i)].ln()).sum::<f64>() * 2.0;
        let d = mean.len() as f64;
        Ok(Self {
            log_weight: weight.ln(),
            mean,
            factor,
            log_norm: -0.5 * (d * (2.0 * PI).ln() + log_det),
        })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(self.mean).map(|(a, b)| a - b).collect();
        let y = self.factor.solve_lower(&diff);
        let maha: f64 = y.iter().map(|v| v * v).sum();
        self.log_weight + self.log_norm - 0.5 * maha
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log of the mixture density at `x`.
pub fn log_density(x: &[f64], params: &GmmParams) -> Result<f64> {
    if x.len() != params.dim {
        return Err(dim_err(format!("point has {} coordinates, mixture {}", x.len(), params.dim)));
    }
    let comps = params.components()?;
    Ok(log_sum_exp(comps.iter().map(|c| c.log_density(x))))
}

/// `Σ_k π_k N(x | μ_k, Σ_k)`.
pub fn density(x: &[f64], params: &GmmParams) -> Result<f64> {
    log_density(x, params).map(f64::exp)
}

/// Sum of row log-densities.
pub fn log_likelihood(data: &Matrix, params: &GmmParams) -> Result<f64> {
    if data.rows() == 0 {
        return Ok(0.0);
    }
    if data.cols() != params.dim {
        return Err(dim_err(format!("data has {} columns, mixture {}", data.cols(), params.dim)));
    }
    let comps = params.components()?;
    Ok(data
        .row_iter()
        .map(|r| log_sum_exp(comps.iter().map(|c| c.log_density(r))))
        .sum())
}

/// Draws `n` rows by ancestral sampling. The component assignments are
/// returned for diagnostics only.
pub fn sample(params: &GmmParams, n: usize, rng: &mut RngStream) -> Result<(Matrix, Vec<usize>)> {
    let factors = params
        .covs
        .iter()
        .map(cholesky)
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(n * params.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z = sample_categorical(&params.weights, rng)?;
        data.extend(sample_mvn_with_factor(&params.means[z], &factors[z], rng));
        labels.push(z);
    }
    Ok((Matrix::new(n, params.dim, data)?, labels))
}

/// Dirichlet and Normal-Inverse-Wishart hyperparameters `{α, ν, Ψ, m, κ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub alpha: Vec<f64>,
    pub nu: f64,
    pub psi: Matrix,
    pub m: Vec<f64>,
    pub kappa: f64,
}

impl PriorConfig {
    /// Weakly informative defaults: `α = 1`, `m = 0`, `κ = 0.1`, `ν = d + 2`
    /// and `Ψ = spread · I`.
    pub fn weakly_informative(k: usize, dim: usize, spread: f64) -> Self {
        Self {
            alpha: vec![1.0; k],
            nu: dim as f64 + 2.0,
            psi: Matrix::identity(dim).scale(spread),
            m: vec![0.0; dim],
            kappa: 0.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.m.len();
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidHyperparameter("alpha must be positive".into()));
        }
        if !(self.nu > d as f64 - 1.0) || !self.nu.is_finite() {
            return Err(Error::InvalidHyperparameter(format!("nu = {} must exceed d - 1", self.nu)));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidHyperparameter("kappa must be positive".into()));
        }
        if self.psi.rows() != d || self.psi.cols() != d {
            return Err(dim_err("psi must be d x d"));
        }
        if self.m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior location".into()));
        }
        cholesky(&self.psi)?;
        Ok(())
    }
}

/// One draw `θ ~ p(θ)`: `π ~ Dir(α)`, then per component
/// `Σ_k ~ IW(ν, Ψ)` and `μ_k ~ N(m, Σ_k / κ)`.
pub fn sample_prior(prior: &PriorConfig, k: usize, rng: &mut RngStream) -> Result<GmmParams> {
    prior.validate()?;
    if prior.alpha.len() != k {
        return Err(dim_err(format!("prior has {} concentrations, k = {k}", prior.alpha.len())));
    }
    let weights = sample_dirichlet(&prior.alpha, rng)?;
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for _ in 0..k {
        let (cov, scaled_factor) = draw_component_cov(prior, rng)?;
        means.push(sample_mvn_with_factor(&prior.m, &scaled_factor, rng));
        covs.push(cov);
    }
    Ok(GmmParams {
        k,
        dim: prior.dim(),
        weights,
        means,
        covs,
    })
}

// Redraws ill-conditioned inverse-Wishart samples.
fn draw_component_cov(prior: &PriorConfig, rng: &mut RngStream) -> Result<(Matrix, Matrix)> {
    let mut last_err = None;
    for _ in 0..MAX_COV_REDRAWS {
        let cov = sample_inverse_wishart(prior.nu, &prior.psi, rng)?;
        match (cholesky(&cov), cholesky(&cov.scale(1.0 / prior.kappa))) {
            (Ok(_), Ok(f)) => return Ok((cov, f)),
            (Err(e), _) | (_, Err(e)) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 }))
}
