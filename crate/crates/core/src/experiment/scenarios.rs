use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use super::data::{generate_trimodal, ingest_csv, trimodal_truth, TwoClassGenerator};
use super::{federate, stack_rows, write_records, ExperimentConfig, Scenario, SyntheticSpec};
use crate::abc::{summarize_posterior, Posterior};
use crate::error::{Error, Result};
use crate::eval::{auc, f1_at_cutoff, fit_logistic, mean_sd, select_cutoff, EvalReport, LogisticModel};
use crate::federation::{FederationRunConfig, PreparedSite, SiteDescriptor};
use crate::gmm::{self, GmmParams};
use crate::samplers::{Matrix, RngStream};
use crate::suffiae::{self, LabeledBatch, SuffiAEModel, TrainConfig};

// Stream tags under the run seed.
const TAG_GENERATOR: u64 = 1;
const TAG_FEDERATION: u64 = 2;
const TAG_TRAIN_DATA: u64 = 100;
const TAG_TEST_DATA: u64 = 200;
const TAG_POOLED_AE: u64 = 299;
const TAG_SITE_AE: u64 = 300;
const TAG_CLASSIFIER: u64 = 400;
const TAG_AUGMENT: u64 = 100_000;

/// Per true component: its greedy match in the estimate and the errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentRecovery {
    pub true_component: usize,
    pub estimated_component: usize,
    pub true_mu: Vec<f64>,
    pub est_mu: Vec<f64>,
    pub mu_error: f64,
    pub true_pi: f64,
    pub est_pi: f64,
    pub pi_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub components: Vec<ComponentRecovery>,
    pub epsilon: f64,
    pub mean_accepted_discrepancy: f64,
}

impl RecoveryReport {
    pub fn max_mu_error(&self) -> f64 {
        self.components.iter().map(|c| c.mu_error).fold(0.0, f64::max)
    }

    pub fn max_pi_error(&self) -> f64 {
        self.components.iter().map(|c| c.pi_error).fold(0.0, f64::max)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Greedy nearest-mean assignment: repeatedly pairs the closest unmatched
/// (true, estimated) components.
pub fn match_components(truth: &GmmParams, estimate: &GmmParams) -> Result<Vec<ComponentRecovery>> {
    if truth.k() != estimate.k() || truth.dim() != estimate.dim() {
        return Err(Error::DimensionMismatch("truth and estimate differ in shape".into()));
    }
    let k = truth.k();
    let mut pairs: Vec<(f64, usize, usize)> = (0..k)
        .flat_map(|t| (0..k).map(move |e| (t, e)))
        .map(|(t, e)| (dist(&truth.means()[t], &estimate.means()[e]), t, e))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; k];
    let mut used_e = vec![false; k];
    let mut out = Vec::with_capacity(k);
    for (d, t, e) in pairs {
        if used_t[t] || used_e[e] {
            continue;
        }
        used_t[t] = true;
        used_e[e] = true;
        out.push(ComponentRecovery {
            true_component: t,
            estimated_component: e,
            true_mu: truth.means()[t].clone(),
            est_mu: estimate.means()[e].clone(),
            mu_error: d,
            true_pi: truth.weights()[t],
            est_pi: estimate.weights()[e],
            pi_error: (truth.weights()[t] - estimate.weights()[e]).abs(),
        });
    }
    out.sort_by_key(|c| c.true_component);
    Ok(out)
}

/// Everything a scenario produces.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub scenario: Scenario,
    pub posterior: Posterior,
    pub estimate: GmmParams,
    pub recovery: Option<RecoveryReport>,
    pub reports: Vec<EvalReport>,
    pub parameters: serde_json::Value,
    pub federation_seconds: f64,
}

#[derive(Serialize)]
struct RecoveryRow<'a> {
    scenario: &'a str,
    true_component: usize,
    estimated_component: usize,
    true_mu: String,
    est_mu: String,
    mu_error: f64,
    true_pi: f64,
    est_pi: f64,
    pi_error: f64,
    epsilon: f64,
}

#[derive(Serialize)]
struct EstimateRow<'a> {
    scenario: &'a str,
    component: usize,
    weight: f64,
    mean: String,
    epsilon: f64,
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

impl ScenarioOutput {
    pub(super) fn coordinator_only(config: &ExperimentConfig, posterior: Posterior, secs: f64) -> Result<Self> {
        let estimate = summarize_posterior(&posterior)?;
        let recovery = if config.scenario == Scenario::Trimodal {
            Some(recovery_report(&trimodal_truth(), &estimate, &posterior)?)
        } else {
            None
        };
        Ok(Self {
            scenario: config.scenario,
            posterior,
            estimate,
            recovery,
            reports: Vec::new(),
            parameters: scenario_parameters(config),
            federation_seconds: secs,
        })
    }

    pub fn posterior_document(&self) -> Result<serde_json::Value> {
        Ok(json!({
            "epsilon": self.posterior.epsilon,
            "accepted": serde_json::to_value(&self.posterior.accepted)?,
            "estimate": serde_json::to_value(&self.estimate)?,
        }))
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let name = self.scenario.name();
        if let Some(rec) = &self.recovery {
            let rows: Vec<RecoveryRow> = rec
                .components
                .iter()
                .map(|c| RecoveryRow {
                    scenario: name,
                    true_component: c.true_component,
                    estimated_component: c.estimated_component,
                    true_mu: join(&c.true_mu),
                    est_mu: join(&c.est_mu),
                    mu_error: c.mu_error,
                    true_pi: c.true_pi,
                    est_pi: c.est_pi,
                    pi_error: c.pi_error,
                    epsilon: rec.epsilon,
                })
                .collect();
            return write_records(path, &rows);
        }
        if !self.reports.is_empty() {
            return write_records(path, &self.reports);
        }
        let rows: Vec<EstimateRow> = (0..self.estimate.k())
            .map(|k| EstimateRow {
                scenario: name,
                component: k,
                weight: self.estimate.weights()[k],
                mean: join(&self.estimate.means()[k]),
                epsilon: self.posterior.epsilon,
            })
            .collect();
        write_records(path, &rows)
    }
}

fn recovery_report(truth: &GmmParams, estimate: &GmmParams, posterior: &Posterior) -> Result<RecoveryReport> {
    Ok(RecoveryReport {
        components: match_components(truth, estimate)?,
        epsilon: posterior.epsilon,
        mean_accepted_discrepancy: posterior.mean_discrepancy(),
    })
}

fn scenario_parameters(config: &ExperimentConfig) -> serde_json::Value {
    let sites: Vec<Option<usize>> = config.sites.iter().map(|s| s.n).collect();
    match (&config.synthetic, config.scenario) {
        (Some(s), Scenario::Imbalance | Scenario::Scarce) => json!({
            "sites": sites,
            "ratio": s.ratio,
            "repeats": s.repeats,
            "affected_sites": s.affected_sites,
            "retain_fraction": s.retain_fraction,
        }),
        _ => json!({ "sites": sites }),
    }
}

fn run_seed_stream(config: &ExperimentConfig) -> RngStream {
    RngStream::new(config.seed)
}

fn federation_seed(config: &ExperimentConfig) -> u64 {
    run_seed_stream(config).split(TAG_FEDERATION).next_u64()
}

fn trimodal_rows(config: &ExperimentConfig) -> Result<(Matrix, Vec<usize>)> {
    let sizes: Vec<usize> = config.sites.iter().map(|s| s.n.unwrap_or(0)).collect();
    let total: usize = sizes.iter().sum();
    let data = generate_trimodal(total.div_ceil(3), &mut run_seed_stream(config).split(TAG_GENERATOR))?;
    Ok((data.x.slice_rows(0, total), sizes))
}

/// Training counts `(label 0, label 1)` of synthetic site `j`, after loss.
fn synthetic_counts(config: &ExperimentConfig, spec: &SyntheticSpec, j: usize) -> (usize, usize) {
    let n = config.sites[j].n.unwrap_or(0);
    let n1 = ((n as f64) / (spec.ratio + 1.0)).round() as usize;
    let n0 = n - n1;
    let affected = config.scenario == Scenario::Scarce && j >= config.sites.len() - spec.affected_sites;
    let kept = if affected {
        (n1 as f64 * spec.retain_fraction).round() as usize
    } else {
        n1
    };
    (n0, kept)
}

fn test_counts(spec: &SyntheticSpec) -> (usize, usize) {
    let t1 = ((spec.test_n as f64) / (spec.ratio + 1.0)).round().max(1.0) as usize;
    (spec.test_n.saturating_sub(t1).max(1), t1)
}

/// The coordinator's view: one descriptor per site that publishes rows.
pub fn federation_config(config: &ExperimentConfig) -> Result<FederationRunConfig> {
    let (dim, counts): (usize, Vec<usize>) = match config.scenario {
        Scenario::Trimodal => (2, config.sites.iter().map(|s| s.n.unwrap_or(0)).collect()),
        Scenario::Imbalance | Scenario::Scarce => {
            let spec = config.synthetic_spec()?;
            (
                config.suffiae.d,
                (0..config.sites.len()).map(|j| synthetic_counts(config, spec, j).1).collect(),
            )
        }
        Scenario::Custom => {
            let mut dim = None;
            let mut counts = Vec::new();
            for j in 0..config.sites.len() {
                let ds = custom_dataset(config, j)?;
                let d = if config.uses_identity() { ds.x().cols() } else { config.suffiae.d };
                if *dim.get_or_insert(d) != d {
                    return Err(Error::Config("custom sites disagree on summary dimension".into()));
                }
                counts.push(ds.len());
            }
            (dim.unwrap_or(0), counts)
        }
    };
    let sites = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(j, &n)| SiteDescriptor {
            site_id: j as u32,
            n_j: n,
            dim,
        })
        .collect();
    Ok(FederationRunConfig {
        abc: config.abc_config(dim)?,
        sites,
        seed: federation_seed(config),
    })
}

fn custom_dataset(config: &ExperimentConfig, j: usize) -> Result<LabeledBatch> {
    let site = &config.sites[j];
    let path = site
        .path
        .as_ref()
        .ok_or_else(|| Error::Config(format!("site {j} needs a data path")))?;
    ingest_csv(path, site.label_column.as_deref().unwrap_or("label"))?.to_batch()
}

/// Local state of one synthetic site. Nothing here leaves the site except
/// through `published`.
struct SyntheticSite {
    train: LabeledBatch,
    test: LabeledBatch,
    model: SuffiAEModel,
    published: Option<PreparedSite>,
}

fn generator(config: &ExperimentConfig, spec: &SyntheticSpec) -> Result<TwoClassGenerator> {
    TwoClassGenerator::new(
        spec.raw_dim,
        spec.latent_dim,
        spec.separation,
        spec.noise_sd,
        &mut run_seed_stream(config).split(TAG_GENERATOR),
    )
}

fn site_shift(spec: &SyntheticSpec, j: usize) -> Vec<f64> {
    let mut s = vec![0.0; spec.latent_dim];
    if spec.latent_dim > 1 {
        s[1] = spec.site_shift * j as f64;
    } else {
        s[0] = spec.site_shift * j as f64;
    }
    s
}

fn train_suffiae(config: &ExperimentConfig, data: &LabeledBatch, rng: &mut RngStream) -> Result<SuffiAEModel> {
    let init = SuffiAEModel::from_config(data.x().cols(), &config.suffiae, rng)?;
    suffiae::train(&init, data, TrainConfig::from(&config.suffiae), rng)
}

fn synthetic_site(config: &ExperimentConfig, gen: &TwoClassGenerator, j: usize) -> Result<SyntheticSite> {
    let spec = config.synthetic_spec()?;
    let root = run_seed_stream(config);
    let shift = site_shift(spec, j);
    let (n0, n1) = synthetic_counts(config, spec, j);
    let train = gen.sample(n0, n1, &shift, &mut root.split(TAG_TRAIN_DATA + j as u64))?;
    let (t0, t1) = test_counts(spec);
    let test = gen.sample(t0, t1, &shift, &mut root.split(TAG_TEST_DATA + j as u64))?;
    let mut rng = root.split(TAG_SITE_AE + j as u64);
    let model = train_suffiae(config, &train, &mut rng)?;
    let minority = train.rows_with_label(1);
    let published = if minority.rows() == 0 {
        None
    } else {
        let enc = if config.suffiae.publish_noisy {
            suffiae::encode_noisy(&model, &minority, &mut rng)?
        } else {
            suffiae::encode(&model, &minority)?
        };
        Some(PreparedSite::from_summaries(j as u32, enc)?)
    };
    Ok(SyntheticSite {
        train,
        test,
        model,
        published,
    })
}

/// The published half of site `j`, exactly as an in-process run builds it.
pub fn build_site(config: &ExperimentConfig, j: usize) -> Result<Option<PreparedSite>> {
    match config.scenario {
        Scenario::Trimodal => {
            let (x, sizes) = trimodal_rows(config)?;
            let start: usize = sizes[..j].iter().sum();
            PreparedSite::from_summaries(j as u32, x.slice_rows(start, start + sizes[j])).map(Some)
        }
        Scenario::Imbalance | Scenario::Scarce => {
            let gen = generator(config, config.synthetic_spec()?)?;
            Ok(synthetic_site(config, &gen, j)?.published)
        }
        Scenario::Custom => custom_site(config, j).map(Some),
    }
}

fn custom_site(config: &ExperimentConfig, j: usize) -> Result<PreparedSite> {
    let data = custom_dataset(config, j)?;
    if config.uses_identity() {
        return PreparedSite::from_summaries(j as u32, data.x().clone());
    }
    let mut rng = run_seed_stream(config).split(TAG_SITE_AE + j as u64);
    let model = train_suffiae(config, &data, &mut rng)?;
    let enc = if config.suffiae.publish_noisy {
        suffiae::encode_noisy(&model, data.x(), &mut rng)?
    } else {
        suffiae::encode(&model, data.x())?
    };
    PreparedSite::from_summaries(j as u32, enc)
}

fn timed_federation(config: &ExperimentConfig, sites: &[PreparedSite]) -> Result<(Posterior, f64)> {
    let fed = federation_config(config)?;
    let started = Instant::now();
    let posterior = federate(&fed, sites, &config.transport)?;
    Ok((posterior, started.elapsed().as_secs_f64()))
}

pub fn run_trimodal(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    let sites = (0..config.sites.len())
        .map(|j| build_site(config, j)?.ok_or_else(|| Error::Config(format!("site {j} is empty"))))
        .collect::<Result<Vec<_>>>()?;
    let (posterior, secs) = timed_federation(config, &sites)?;
    let estimate = summarize_posterior(&posterior)?;
    let truth = trimodal_truth();
    let recovery = if estimate.k() == truth.k() {
        Some(recovery_report(&truth, &estimate, &posterior)?)
    } else {
        None
    };
    Ok(ScenarioOutput {
        scenario: Scenario::Trimodal,
        posterior,
        estimate,
        recovery,
        reports: Vec::new(),
        parameters: scenario_parameters(config),
        federation_seconds: secs,
    })
}

pub fn run_custom(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    let sites = (0..config.sites.len())
        .map(|j| custom_site(config, j))
        .collect::<Result<Vec<_>>>()?;
    let (posterior, secs) = timed_federation(config, &sites)?;
    let estimate = summarize_posterior(&posterior)?;
    Ok(ScenarioOutput {
        scenario: Scenario::Custom,
        posterior,
        estimate,
        recovery: None,
        reports: Vec::new(),
        parameters: scenario_parameters(config),
        federation_seconds: secs,
    })
}

struct Scored {
    auc: f64,
    f1: f64,
    cutoff: f64,
}

/// Fits on `train`, picks the cut-off on training scores and scores the
/// test set. With fewer than two label-1 rows no classifier can be fit and
/// the site falls back to predicting label 0 everywhere.
fn score_condition(
    config: &ExperimentConfig,
    train_x: &Matrix,
    train_y: &[u8],
    test_x: &Matrix,
    test_y: &[u8],
    rng: &mut RngStream,
) -> Result<Scored> {
    let n1 = train_y.iter().filter(|&&y| y == 1).count();
    let (model, cutoff) = if n1 < 2 {
        (LogisticModel::zeros(train_x.cols()), 0.5)
    } else {
        let m = fit_logistic(train_x, train_y, config.eval.epochs, config.eval.learning_rate, rng)?;
        let c = select_cutoff(&m.predict_proba(train_x)?, train_y)?;
        (m, c)
    };
    let scores = if n1 < 2 {
        vec![0.0; test_x.rows()]
    } else {
        model.predict_proba(test_x)?
    };
    Ok(Scored {
        auc: auc(&scores, test_y)?,
        f1: f1_at_cutoff(&scores, test_y, cutoff)?,
        cutoff,
    })
}

fn report(scenario: Scenario, site: String, condition: &str, runs: &[Scored], n_pos: usize, n_neg: usize) -> EvalReport {
    let aucs: Vec<f64> = runs.iter().map(|r| r.auc).collect();
    let (auc, auc_sd) = mean_sd(&aucs);
    let n = runs.len() as f64;
    EvalReport {
        scenario: scenario.name().into(),
        site,
        condition: condition.into(),
        auc,
        auc_sd,
        f1: runs.iter().map(|r| r.f1).sum::<f64>() / n,
        cutoff: runs.iter().map(|r| r.cutoff).sum::<f64>() / n,
        n_pos,
        n_neg,
    }
}

fn augment(train_x: &Matrix, train_y: &[u8], estimate: &GmmParams, rng: &mut RngStream) -> Result<(Matrix, Vec<u8>)> {
    let n1 = train_y.iter().filter(|&&y| y == 1).count();
    let n0 = train_y.len() - n1;
    let needed = n0.saturating_sub(n1);
    let (extra, _) = gmm::sample(estimate, needed, rng)?;
    let x = stack_rows(&[train_x, &extra])?;
    let mut y = train_y.to_vec();
    y.extend(std::iter::repeat_n(1u8, needed));
    Ok((x, y))
}

fn run_synthetic(config: &ExperimentConfig, with_pooled: bool) -> Result<ScenarioOutput> {
    let spec = config.synthetic_spec()?;
    let gen = generator(config, spec)?;
    let s = config.sites.len();
    let sites = (0..s).map(|j| synthetic_site(config, &gen, j)).collect::<Result<Vec<_>>>()?;
    if config.scenario == Scenario::Imbalance {
        if let Some((j, site)) = sites.iter().enumerate().find(|(_, site)| site.train.count(1) < 2) {
            return Err(Error::MinorityTooSmall {
                site: j,
                count: site.train.count(1),
            });
        }
    }
    let published: Vec<PreparedSite> = sites.iter().filter_map(|site| site.published.clone()).collect();
    if published.is_empty() {
        return Err(Error::MinorityTooSmall { site: 0, count: 0 });
    }
    let (posterior, secs) = timed_federation(config, &published)?;
    let estimate = summarize_posterior(&posterior)?;
    let root = run_seed_stream(config);
    let mut reports = Vec::new();

    if with_pooled {
        let train_x = stack_rows(&sites.iter().map(|s| s.train.x()).collect::<Vec<_>>())?;
        let train_y: Vec<u8> = sites.iter().flat_map(|s| s.train.y().iter().copied()).collect();
        let test_x = stack_rows(&sites.iter().map(|s| s.test.x()).collect::<Vec<_>>())?;
        let test_y: Vec<u8> = sites.iter().flat_map(|s| s.test.y().iter().copied()).collect();
        let pooled = LabeledBatch::new(train_x, train_y)?;
        let model = train_suffiae(config, &pooled, &mut root.split(TAG_POOLED_AE))?;
        let scored = score_condition(
            config,
            &suffiae::encode(&model, pooled.x())?,
            pooled.y(),
            &suffiae::encode(&model, &test_x)?,
            &test_y,
            &mut root.split(TAG_CLASSIFIER),
        )?;
        reports.push(report(config.scenario, "all".into(), "all", &[scored], pooled.count(1), pooled.count(0)));
    }

    let mut graffl_rows = Vec::new();
    for (j, site) in sites.iter().enumerate() {
        let tr_x = suffiae::encode(&site.model, site.train.x())?;
        let te_x = suffiae::encode(&site.model, site.test.x())?;
        let raw = score_condition(
            config,
            &tr_x,
            site.train.y(),
            &te_x,
            site.test.y(),
            &mut root.split(TAG_CLASSIFIER + 1 + j as u64),
        )?;
        reports.push(report(
            config.scenario,
            (j + 1).to_string(),
            "raw",
            &[raw],
            site.train.count(1),
            site.train.count(0),
        ));
        let mut runs = Vec::with_capacity(spec.repeats);
        let mut counts = (0, 0);
        for r in 0..spec.repeats {
            let mut rng = root.split(TAG_AUGMENT + (r * s + j) as u64);
            let (ax, ay) = augment(&tr_x, site.train.y(), &estimate, &mut rng)?;
            counts = (ay.iter().filter(|&&y| y == 1).count(), ay.iter().filter(|&&y| y == 0).count());
            runs.push(score_condition(config, &ax, &ay, &te_x, site.test.y(), &mut rng)?);
        }
        graffl_rows.push(report(config.scenario, (j + 1).to_string(), "graffl", &runs, counts.0, counts.1));
    }
    // Raw rows first, then the augmented ones.
    reports.extend(graffl_rows);
    Ok(ScenarioOutput {
        scenario: config.scenario,
        posterior,
        estimate,
        recovery: None,
        reports,
        parameters: scenario_parameters(config),
        federation_seconds: secs,
    })
}

pub fn run_imbalance(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    if config.scenario != Scenario::Imbalance {
        return Err(Error::Config("run_imbalance needs scenario = imbalance".into()));
    }
    run_synthetic(config, true)
}

pub fn run_scarce(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    if config.scenario != Scenario::Scarce {
        return Err(Error::Config("run_scarce needs scenario = scarce".into()));
    }
    run_synthetic(config, false)
}
