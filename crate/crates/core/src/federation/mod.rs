//! Quasi-distributed ABC: a coordinator proposes parameters and dispatches
//! generated samples, sites answer with discrepancy scalars only.
//!
//! Proposals come from the same [`ProposalSource`] as
//! [`abc::rejection_sample`], and observed rows are paired with generated
//! rows in the order of the concatenated site data, so a federated run
//! reproduces the centralized posterior exactly.

mod site;
mod transport;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use site::{prepare_site, run_site, PreparedSite, SiteStats, SummaryMode};
pub use transport::{accept_sites, duplex, Capture, InProcessTransport, TcpTransport, Transport};
pub use wire::{DiscrepancyReport, Hello, ProposalBatch, WireMessage};

use crate::abc::{self, AbcConfig, Posterior, ProposalSource, TopL};
use crate::error::{dim_err, Error, Result};
use crate::samplers::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteDescriptor {
    pub site_id: u32,
    pub n_j: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationRunConfig {
    pub abc: AbcConfig,
    pub sites: Vec<SiteDescriptor>,
    pub seed: u64,
}

impl FederationRunConfig {
    pub fn total_rows(&self) -> usize {
        self.sites.iter().map(|s| s.n_j).sum()
    }

    pub fn iterations(&self) -> usize {
        self.abc.n_proposals.div_ceil(self.total_rows().max(1))
    }

    pub fn validate(&self) -> Result<()> {
        self.abc.validate()?;
        if self.sites.is_empty() || self.total_rows() == 0 {
            return Err(Error::Config("federation needs at least one observed row".into()));
        }
        for (i, s) in self.sites.iter().enumerate() {
            if s.n_j == 0 {
                return Err(Error::Config(format!("site {} has no rows", s.site_id)));
            }
            if s.dim != self.abc.dim {
                return Err(dim_err(format!(
                    "site {} has dim {}, run dim {}",
                    s.site_id, s.dim, self.abc.dim
                )));
            }
            if self.sites[..i].iter().any(|o| o.site_id == s.site_id) {
                return Err(Error::Config(format!("duplicate site id {}", s.site_id)));
            }
        }
        Ok(())
    }
}

/// Half-open row ranges of a `rows`-long generated batch, assigned greedily
/// in site order. Trailing sites get empty ranges on a short batch.
pub fn site_ranges(sites: &[SiteDescriptor], rows: usize) -> Vec<(usize, usize)> {
    let mut start = 0;
    sites
        .iter()
        .map(|s| {
            let lo = start.min(rows);
            let hi = (start + s.n_j).min(rows);
            start += s.n_j;
            (lo, hi)
        })
        .collect()
}

/// Contiguous partition of a full `Σ n_j`-row batch in site order.
pub fn split_proposals(gen: &Matrix, sites: &[SiteDescriptor]) -> Result<Vec<Matrix>> {
    let total: usize = sites.iter().map(|s| s.n_j).sum();
    if gen.rows() != total {
        return Err(dim_err(format!("{} generated rows for {} site rows", gen.rows(), total)));
    }
    Ok(site_ranges(sites, total)
        .into_iter()
        .map(|(lo, hi)| gen.slice_rows(lo, hi))
        .collect())
}

/// Discrepancies between a site's first `batch.len()` summaries and the
/// batch rows.
pub fn site_handle(local_enc: &Matrix, batch: &ProposalBatch) -> Result<DiscrepancyReport> {
    let r = batch.len();
    if r > local_enc.rows() {
        return Err(dim_err(format!(
            "batch of {r} rows for a site holding {}",
            local_enc.rows()
        )));
    }
    let values = if r == 0 {
        Vec::new()
    } else {
        let gen = Matrix::from_rows(&batch.rows)?;
        abc::discrepancy_batch(&local_enc.slice_rows(0, r), &gen)?
    };
    Ok(DiscrepancyReport {
        iteration: batch.iteration,
        values,
    })
}

/// Reassembles one iteration's reports, which may arrive in any order, into
/// proposal-index order.
pub struct IterationCollector {
    iteration: u64,
    ranges: Vec<(usize, usize)>,
    slots: Vec<Option<Vec<f64>>>,
}

impl IterationCollector {
    pub fn new(iteration: u64, ranges: Vec<(usize, usize)>) -> Self {
        let slots = vec![None; ranges.len()];
        Self {
            iteration,
            ranges,
            slots,
        }
    }

    pub fn accept(&mut self, site: usize, report: DiscrepancyReport) -> Result<()> {
        let (lo, hi) = *self
            .ranges
            .get(site)
            .ok_or_else(|| Error::Protocol(format!("report from unknown site slot {site}")))?;
        if report.iteration != self.iteration {
            return Err(Error::ReportShapeMismatch(format!(
                "site slot {site} answered iteration {} during {}",
                report.iteration, self.iteration
            )));
        }
        if report.values.len() != hi - lo {
            return Err(Error::ReportShapeMismatch(format!(
                "site slot {site} sent {} values for {} rows",
                report.values.len(),
                hi - lo
            )));
        }
        if report.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::ReportShapeMismatch(format!(
                "site slot {site} sent a negative or non-finite discrepancy"
            )));
        }
        if self.slots[site].replace(report.values).is_some() {
            return Err(Error::Protocol(format!("duplicate report from site slot {site}")));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (i, s) in self.slots.into_iter().enumerate() {
            out.extend(s.ok_or_else(|| Error::Protocol(format!("missing report from site slot {i}")))?);
        }
        Ok(out)
    }
}

/// Receives a Hello on every transport and returns, for each configured
/// site in order, the index of the transport that announced it.
fn handshake<T: Transport>(config: &FederationRunConfig, transports: &mut [T]) -> Result<Vec<usize>> {
    let mut slot_of = vec![None; config.sites.len()];
    for (t, tr) in transports.iter_mut().enumerate() {
        let hello = match tr.recv()? {
            WireMessage::Hello(h) => h,
            other => {
                return Err(Error::Protocol(format!(
                    "expected Hello, got {}",
                    other.name()
                )))
            }
        };
        let j = config
            .sites
            .iter()
            .position(|s| s.site_id == hello.site_id)
            .ok_or_else(|| Error::HandshakeMismatch(format!("unknown site id {}", hello.site_id)))?;
        let want = &config.sites[j];
        if hello.n_j != want.n_j || hello.dim != want.dim {
            return Err(Error::HandshakeMismatch(format!(
                "site {} announced n_j={} dim={}, expected n_j={} dim={}",
                hello.site_id, hello.n_j, hello.dim, want.n_j, want.dim
            )));
        }
        if slot_of[j].replace(t).is_some() {
            return Err(Error::HandshakeMismatch(format!("site {} connected twice", hello.site_id)));
        }
    }
    Ok(slot_of.into_iter().map(|s| s.unwrap_or(usize::MAX)).collect())
}

/// Coordinator loop. Transports may be given in any order; sites are
/// matched by the id in their Hello.
pub fn coordinate<T: Transport>(config: &FederationRunConfig, transports: &mut [T]) -> Result<Posterior> {
    config.validate()?;
    if transports.len() != config.sites.len() {
        return Err(Error::Config(format!(
            "{} transports for {} sites",
            transports.len(),
            config.sites.len()
        )));
    }
    let order = handshake(config, transports)?;
    let result = run_iterations(config, transports, &order);
    // Sites are released whatever happened; a dead peer is already gone.
    for t in transports.iter_mut() {
        let _ = t.send(&WireMessage::Terminate);
    }
    result
}

fn run_iterations<T: Transport>(
    config: &FederationRunConfig,
    transports: &mut [T],
    order: &[usize],
) -> Result<Posterior> {
    let mut rng = RngStream::new(config.seed);
    let source = ProposalSource::new(&config.abc, &mut rng);
    let m = config.total_rows();
    let n = config.abc.n_proposals;
    let mut top = TopL::new(config.abc.n_accept);
    for it in 0..config.iterations() {
        let start = it * m;
        let count = m.min(n - start);
        let (params, gen) = source.propose_range(start as u64, count)?;
        let ranges = site_ranges(&config.sites, count);
        for (j, &(lo, hi)) in ranges.iter().enumerate() {
            let batch = ProposalBatch::from_matrix(it as u64, &gen.slice_rows(lo, hi));
            transports[order[j]].send(&WireMessage::ProposalBatch(batch))?;
        }
        drop(gen);
        let mut collector = IterationCollector::new(it as u64, ranges);
        for (j, &t) in order.iter().enumerate() {
            match transports[t].recv()? {
                WireMessage::DiscrepancyReport(r) => collector.accept(j, r)?,
                other => {
                    return Err(Error::Protocol(format!(
                        "expected DiscrepancyReport, got {}",
                        other.name()
                    )))
                }
            }
        }
        for (i, (p, d)) in params.into_iter().zip(collector.finish()?).enumerate() {
            top.offer((start + i) as u64, d, p);
        }
    }
    Ok(top.finish())
}

/// Runs a whole federation in one process, one thread per site.
pub fn run_inprocess(config: &FederationRunConfig, sites: &[PreparedSite]) -> Result<(Posterior, Vec<SiteStats>)> {
    let mut ends = Vec::with_capacity(sites.len());
    let mut remote = Vec::with_capacity(sites.len());
    for _ in sites {
        let (c, s) = duplex();
        ends.push(c);
        remote.push(s);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = sites
            .iter()
            .zip(remote)
            .map(|(site, mut t)| scope.spawn(move || site.serve(&mut t)))
            .collect();
        let posterior = coordinate(config, &mut ends);
        drop(ends);
        let stats = handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Protocol("site thread panicked".into()))?)
            .collect::<Result<Vec<_>>>();
        let posterior = posterior?;
        Ok((posterior, stats?))
    })
}

/// Same as [`run_inprocess`] over loopback TCP. When `capture` is given it
/// receives every byte the sites sent.
pub fn run_loopback(
    config: &FederationRunConfig,
    sites: &[PreparedSite],
    capture: Option<Capture>,
) -> Result<(Posterior, Vec<SiteStats>)> {
    let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = sites
            .iter()
            .map(|site| {
                scope.spawn(move || {
                    let mut t = TcpTransport::connect(addr)?;
                    site.serve(&mut t)
                })
            })
            .collect();
        let posterior = accept_sites(&listener, sites.len()).and_then(|ts| {
            let mut ts: Vec<TcpTransport> = match &capture {
                Some(c) => ts.into_iter().map(|t| t.capture_inbound(c.clone())).collect(),
                None => ts,
            };
            coordinate(config, &mut ts)
        });
        let stats = handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Protocol("site thread panicked".into()))?)
            .collect::<Result<Vec<_>>>();
        let posterior = posterior?;
        Ok((posterior, stats?))
    })
}
