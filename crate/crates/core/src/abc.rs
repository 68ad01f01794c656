//! Centralized ABC rejection sampling with top-`L` acceptance.
//!
//! Proposal `i` draws its parameters and its single generated sample from
//! its own child stream `root.split(i)`, where `root` is keyed by the first
//! draw of the caller's stream. Proposals are therefore a pure function of
//! `(seed, i)`, which is what lets the federated coordinator reproduce this
//! module's output bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::gmm::{self, GmmParams, PriorConfig};
use crate::samplers::{Matrix, RngStream};

const EIGEN_FLOOR: f64 = 1e-9;

/// Proposal budget `N`, acceptance count `L`, mixture size and prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcConfig {
    pub n_proposals: usize,
    pub n_accept: usize,
    pub k: usize,
    pub prior: PriorConfig,
    pub dim: usize,
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_accept == 0 {
            return Err(Error::Config("n_accept must be at least 1".into()));
        }
        if self.n_proposals < self.n_accept {
            return Err(Error::InsufficientProposals {
                n_proposals: self.n_proposals,
                n_accept: self.n_accept,
            });
        }
        if self.prior.k() != self.k {
            return Err(dim_err(format!("prior has {} components, k = {}", self.prior.k(), self.k)));
        }
        if self.prior.dim() != self.dim {
            return Err(dim_err(format!("prior has dimension {}, dim = {}", self.prior.dim(), self.dim)));
        }
        self.prior.validate()
    }
}

/// One accepted proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedDraw {
    pub index: u64,
    pub discrepancy: f64,
    pub params: GmmParams,
}

/// The `L` best proposals in ascending discrepancy order and the realized
/// threshold `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub epsilon: f64,
    pub accepted: Vec<AcceptedDraw>,
}

impl Posterior {
    pub fn indices(&self) -> Vec<u64> {
        self.accepted.iter().map(|a| a.index).collect()
    }

    pub fn discrepancies(&self) -> Vec<f64> {
        self.accepted.iter().map(|a| a.discrepancy).collect()
    }

    pub fn mean_discrepancy(&self) -> f64 {
        if self.accepted.is_empty() {
            return f64::NAN;
        }
        self.accepted.iter().map(|a| a.discrepancy).sum::<f64>() / self.accepted.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Squared Euclidean distance between positionally paired rows.
pub fn discrepancy_batch(enc: &Matrix, gen: &Matrix) -> Result<Vec<f64>> {
    if enc.shape() != gen.shape() {
        return Err(dim_err(format!(
            "discrepancy of {}x{} against {}x{}",
            enc.rows(),
            enc.cols(),
            gen.rows(),
            gen.cols()
        )));
    }
    Ok(enc
        .row_iter()
        .zip(gen.row_iter())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect())
}

/// A parameter proposal with its one generated summary-space sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub index: u64,
    pub params: GmmParams,
    pub sample: Vec<f64>,
}

/// Deterministic source of proposals, addressable by index.
#[derive(Debug, Clone)]
pub struct ProposalSource {
    root: RngStream,
    prior: PriorConfig,
    k: usize,
}

impl ProposalSource {
    /// Consumes one draw of `rng` to key the proposal streams.
    pub fn new(config: &AbcConfig, rng: &mut RngStream) -> Self {
        Self {
            root: RngStream::new(rng.next_u64()),
            prior: config.prior.clone(),
            k: config.k,
        }
    }

    pub fn propose(&self, index: u64) -> Result<Proposal> {
        let mut stream = self.root.split(index);
        let params = gmm::sample_prior(&self.prior, self.k, &mut stream)?;
        let (x, _) = gmm::sample(&params, 1, &mut stream)?;
        Ok(Proposal {
            index,
            params,
            sample: x.into_vec(),
        })
    }

    /// Proposals `start..start + count` with their samples stacked.
    pub fn propose_range(&self, start: u64, count: usize) -> Result<(Vec<GmmParams>, Matrix)> {
        let dim = self.prior.dim();
        let mut params = Vec::with_capacity(count);
        let mut rows = Vec::with_capacity(count * dim);
        for i in 0..count as u64 {
            let p = self.propose(start + i)?;
            rows.extend(p.sample);
            params.push(p.params);
        }
        Ok((params, Matrix::new(count, dim, rows)?))
    }
}

struct Candidate {
    discrepancy: f64,
    index: u64,
    params: GmmParams,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.discrepancy
            .total_cmp(&other.discrepancy)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Running top-`L` selection ordered by `(discrepancy, proposal index)`.
/// Tracks the smallest rejected discrepancy as it goes.
pub struct TopL {
    capacity: usize,
    heap: BinaryHeap<Candidate>,
    min_rejected: Option<f64>,
    seen: u64,
}

impl TopL {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            heap: BinaryHeap::with_capacity(capacity + 1),
            min_rejected: None,
            seen: 0,
        }
    }

    fn reject(&mut self, d: f64) {
        self.min_rejected = Some(self.min_rejected.map_or(d, |m| m.min(d)));
    }

    pub fn offer(&mut self, index: u64, discrepancy: f64, params: GmmParams) {
        self.seen += 1;
        let cand = Candidate {
            discrepancy,
            index,
            params,
        };
        if self.heap.len() < self.capacity {
            self.heap.push(cand);
            return;
        }
        let worse = self.heap.peek().is_some_and(|top| cand < *top);
        if worse {
            if let Some(evicted) = self.heap.pop() {
                self.reject(evicted.discrepancy);
            }
            self.heap.push(cand);
        } else {
            self.reject(cand.discrepancy);
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Accepted draws in ascending order. With nothing rejected, `ε` is the
    /// largest accepted discrepancy.
    pub fn finish(self) -> Posterior {
        let accepted: Vec<AcceptedDraw> = self
            .heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| AcceptedDraw {
                index: c.index,
                discrepancy: c.discrepancy,
                params: c.params,
            })
            .collect();
        let epsilon = self
            .min_rejected
            .unwrap_or_else(|| accepted.last().map_or(f64::NAN, |a| a.discrepancy));
        Posterior { epsilon, accepted }
    }
}

/// Centralized rejection sampling against `observed_enc` (`M × d`).
///
/// Rounds of `min(M, remaining)` proposals are paired positionally with the
/// observed rows in fixed order; after `N` proposals the `L` smallest
/// discrepancies are accepted.
pub fn rejection_sample(config: &AbcConfig, observed_enc: &Matrix, rng: &mut RngStream) -> Result<Posterior> {
    config.validate()?;
    let m = observed_enc.rows();
    if m == 0 {
        return Err(dim_err("observed summary matrix is empty"));
    }
    if observed_enc.cols() != config.dim {
        return Err(dim_err(format!(
            "observed summaries have {} columns, config dim {}",
            observed_enc.cols(),
            config.dim
        )));
    }
    let source = ProposalSource::new(config, rng);
    let mut top = TopL::new(config.n_accept);
    let mut start = 0usize;
    while start < config.n_proposals {
        let count = m.min(config.n_proposals - start);
        let (params, gen) = source.propose_range(start as u64, count)?;
        let deltas = discrepancy_batch(&observed_enc.slice_rows(0, count), &gen)?;
        for (i, (p, d)) in params.into_iter().zip(deltas).enumerate() {
            top.offer((start + i) as u64, d, p);
        }
        start += count;
    }
    Ok(top.finish())
}

/// Point estimate: each accepted draw is put in canonical component order,
/// then weights, means and covariances are averaged element-wise. Weights
/// are renormalized and covariances projected back to symmetric positive
/// definite.
pub fn summarize_posterior(p: &Posterior) -> Result<GmmParams> {
    let first = p.accepted.first().ok_or(Error::EmptyPosterior)?;
    let k = first.params.k();
    let dim = first.params.dim();
    let n = p.accepted.len() as f64;
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; dim]; k];
    let mut covs = vec![Matrix::zeros(dim, dim); k];
    for draw in &p.accepted {
        if draw.params.k() != k || draw.params.dim() != dim {
            return Err(dim_err("accepted draws disagree in shape"));
        }
        let c = draw.params.canonical();
        for j in 0..k {
            weights[j] += c.weights()[j] / n;
            for (acc, v) in means[j].iter_mut().zip(&c.means()[j]) {
                *acc += v / n;
            }
            for (acc, v) in covs[j].as_mut_slice().iter_mut().zip(c.covs()[j].as_slice()) {
                *acc += v / n;
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let covs = covs
        .iter()
        .map(|c| c.project_spd(EIGEN_FLOOR))
        .collect::<Result<Vec<_>>>()?;
    GmmParams::new(weights, means, covs)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// With `L = N` nothing is rejected and the accepted set is a prior sample.
/// Returns the KS statistic between the accepted first-component weights
/// and a fresh, independent prior sample of the same size.
pub fn prior_limit_check(config: &AbcConfig, observed_enc: &Matrix, rng: &mut RngStream) -> Result<f64> {
    if config.n_accept != config.n_proposals {
        return Err(Error::Config("prior-limit check requires L = N".into()));
    }
    let posterior = rejection_sample(config, observed_enc, rng)?;
    let accepted: Vec<f64> = posterior.accepted.iter().map(|a| a.params.weights()[0]).collect();
    let mut fresh = RngStream::new(rng.next_u64());
    let reference = (0..accepted.len())
        .map(|_| gmm::sample_prior(&config.prior, config.k, &mut fresh).map(|p| p.weights()[0]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ks_statistic(&accepted, &reference))
}
