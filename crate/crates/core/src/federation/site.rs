use super::transport::Transport;
use super::wire::{Hello, WireMessage};
use super::{site_handle, SiteDescriptor};
use crate::error::{dim_err, Error, Result};
use crate::samplers::{Matrix, RngStream};
use crate::suffiae::{self, AeConfig, LabeledBatch, SuffiAEModel, TrainConfig};

/// How a site turns raw rows into the summaries it compares against.
#[derive(Debug, Clone, PartialEq)]
pub enum SummaryMode {
    /// Raw rows are the summaries.
    Identity,
    /// Train a local autoencoder and publish its (optionally noisy) codes.
    SuffiAE(AeConfig),
}

/// A site with frozen summaries, ready to serve a coordinator.
#[derive(Debug, Clone)]
pub struct PreparedSite {
    descriptor: SiteDescriptor,
    enc: Matrix,
    model: Option<SuffiAEModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SiteStats {
    pub batches: usize,
    pub rows: usize,
}

impl PreparedSite {
    pub fn from_summaries(site_id: u32, enc: Matrix) -> Result<Self> {
        if enc.rows() == 0 {
            return Err(Error::Config(format!("site {site_id} has no rows")));
        }
        Ok(Self {
            descriptor: SiteDescriptor {
                site_id,
                n_j: enc.rows(),
                dim: enc.cols(),
            },
            enc,
            model: None,
        })
    }

    pub fn descriptor(&self) -> SiteDescriptor {
        self.descriptor
    }

    pub fn summaries(&self) -> &Matrix {
        &self.enc
    }

    /// The locally trained autoencoder, if any. It never leaves the site.
    pub fn model(&self) -> Option<&SuffiAEModel> {
        self.model.as_ref()
    }

    /// Announces itself, then answers batches until Terminate.
    pub fn serve<T: Transport + ?Sized>(&self, transport: &mut T) -> Result<SiteStats> {
        let d = self.descriptor;
        transport.send(&WireMessage::Hello(Hello {
            site_id: d.site_id,
            n_j: d.n_j,
            dim: d.dim,
        }))?;
        let mut stats = SiteStats::default();
        loop {
            match transport.recv()? {
                WireMessage::ProposalBatch(batch) => {
                    let report = site_handle(&self.enc, &batch)?;
                    stats.batches += 1;
                    stats.rows += batch.len();
                    transport.send(&WireMessage::DiscrepancyReport(report))?;
                }
                WireMessage::Terminate => return Ok(stats),
                other => {
                    return Err(Error::Protocol(format!(
                        "site {} received {}",
                        d.site_id,
                        other.name()
                    )))
                }
            }
        }
    }
}

/// Builds a site's summaries. With [`SummaryMode::SuffiAE`] the autoencoder
/// is trained on all local rows; `publish_label` restricts the published
/// summaries to rows carrying that label.
pub fn prepare_site(
    site_id: u32,
    data: &LabeledBatch,
    mode: &SummaryMode,
    publish_label: Option<u8>,
    rng: &mut RngStream,
) -> Result<PreparedSite> {
    let published = match publish_label {
        Some(label) => {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.y()[i] == label).collect();
            data.select(&idx)
        }
        None => data.clone(),
    };
    match mode {
        SummaryMode::Identity => PreparedSite::from_summaries(site_id, published.x().clone()),
        SummaryMode::SuffiAE(cfg) => {
            let init = SuffiAEModel::from_config(data.x().cols(), cfg, rng)?;
            let model = suffiae::train(&init, data, TrainConfig::from(cfg), rng)?;
            let enc = if cfg.publish_noisy {
                suffiae::encode_noisy(&model, published.x(), rng)?
            } else {
                suffiae::encode(&model, published.x())?
            };
            let mut site = PreparedSite::from_summaries(site_id, enc)?;
            site.model = Some(model);
            Ok(site)
        }
    }
}

/// Trains, freezes summaries, then serves `transport` until Terminate.
pub fn run_site<T: Transport + ?Sized>(
    descriptor: SiteDescriptor,
    local_data: &LabeledBatch,
    mode: &SummaryMode,
    transport: &mut T,
    rng: &mut RngStream,
) -> Result<(PreparedSite, SiteStats)> {
    let site = prepare_site(descriptor.site_id, local_data, mode, None, rng)?;
    if site.descriptor() != descriptor {
        return Err(dim_err(format!(
            "site {} prepared n_j={} dim={}, descriptor says n_j={} dim={}",
            descriptor.site_id,
            site.descriptor().n_j,
            site.descriptor().dim,
            descriptor.n_j,
            descriptor.dim
        )));
    }
    let stats = site.serve(transport)?;
    Ok((site, stats))
}
