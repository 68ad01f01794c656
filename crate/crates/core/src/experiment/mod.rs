//! Experiment configuration, the trimodal, imbalance and scarce scenarios plus a CSV-driven
//! custom run, and result emission.

mod data;
mod scenarios;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use data::{
    generate_trimodal, ingest_csv, trimodal_truth, write_csv, CsvDataset, TrimodalData, TwoClassGenerator,
    TRIMODAL_MEANS,
};
pub use scenarios::{
    build_site, federation_config, match_components, run_custom, run_imbalance, run_scarce, run_trimodal,
    ComponentRecovery, RecoveryReport, ScenarioOutput,
};

use crate::abc::{AbcConfig, Posterior};
use crate::error::{Error, Result};
use crate::federation::{self, FederationRunConfig, PreparedSite};
use crate::gmm::PriorConfig;
use crate::samplers::Matrix;
use crate::suffiae::AeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[default]
    Trimodal,
    Imbalance,
    Scarce,
    Custom,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Trimodal => "trimodal",
            Scenario::Imbalance => "imbalance",
            Scenario::Scarce => "scarce",
            Scenario::Custom => "custom",
        }
    }
}

/// One participating site. Synthetic scenarios use `n` (training rows);
/// the custom scenario reads `path`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteSpec {
    pub n: Option<usize>,
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub alpha: f64,
    pub kappa: f64,
    /// Defaults to `dim + 2`.
    pub nu: Option<f64>,
    /// Scale of the inverse-Wishart matrix `Ψ = spread · I`.
    pub spread: f64,
    /// Defaults to the origin.
    pub mean: Option<Vec<f64>>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            kappa: 0.1,
            nu: None,
            spread: 1.0,
            mean: None,
        }
    }
}

impl PriorSpec {
    pub fn build(&self, k: usize, dim: usize) -> Result<PriorConfig> {
        let mut p = PriorConfig::weakly_informative(k, dim, self.spread);
        p.alpha = vec![self.alpha; k];
        p.kappa = self.kappa;
        if let Some(nu) = self.nu {
            p.nu = nu;
        }
        if let Some(m) = &self.mean {
            p.m = m.clone();
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcSpec {
    pub n_proposals: usize,
    pub n_accept: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Inprocess,
    Socket,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSpec {
    pub kind: TransportKind,
    pub address: Option<String>,
}

/// Synthetic two-class fixture shared by the imbalance and scarce
/// scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub raw_dim: usize,
    pub latent_dim: usize,
    /// Distance between the class means in the latent space.
    pub separation: f64,
    pub noise_sd: f64,
    /// Per-site offset of the latent mean, multiplied by the site index.
    pub site_shift: f64,
    /// Majority : minority training ratio.
    pub ratio: f64,
    /// Test rows per site, drawn at the same ratio.
    pub test_n: usize,
    /// Augmentation repeats with fresh generation seeds.
    pub repeats: usize,
    /// Number of trailing sites that lose label-1 rows (scarce only).
    pub affected_sites: usize,
    /// Fraction of label-1 training rows those sites keep (scarce only).
    pub retain_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            raw_dim: 16,
            latent_dim: 2,
            separation: 2.0,
            noise_sd: 0.5,
            site_shift: 0.25,
            ratio: 6.0,
            test_n: 5000,
            repeats: 20,
            affected_sites: 0,
            retain_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub sites: Vec<SiteSpec>,
    pub prior: PriorSpec,
    pub abc: Option<AbcSpec>,
    pub suffiae: AeConfig,
    /// Use raw rows as summaries instead of training SuffiAE.
    pub identity_summary: Option<bool>,
    pub eval: EvalSpec,
    pub transport: TransportSpec,
    pub synthetic: Option<SyntheticSpec>,
    pub output_dir: Option<PathBuf>,
}

/// Sites that train SuffiAE agree on one initialization seed, so their
/// latent axes start aligned. Derived from the run seed unless configured.
const PACT_SALT: u64 = 0x7061_6374;

fn default_sites(n: usize, count: usize) -> Vec<SiteSpec> {
    (0..count)
        .map(|_| SiteSpec {
            n: Some(n),
            ..SiteSpec::default()
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn preset(scenario: Scenario) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
        .resolved()
        .expect("presets are valid")
    }

    /// Fills scenario defaults for every unset field and validates.
    pub fn resolved(mut self) -> Result<Self> {
        match self.scenario {
            Scenario::Trimodal => {
                if self.sites.is_empty() {
                    self.sites = default_sites(300, 3);
                }
                self.abc.get_or_insert(AbcSpec {
                    n_proposals: 50_000,
                    n_accept: 100,
                    k: 3,
                });
                self.identity_summary.get_or_insert(true);
            }
            Scenario::Imbalance => {
                if self.sites.is_empty() {
                    self.sites = default_sites(70, 3);
                }
                self.abc.get_or_insert(AbcSpec {
                    n_proposals: 20_000,
                    n_accept: 100,
                    k: 1,
                });
                self.identity_summary.get_or_insert(false);
                self.suffiae.init_seed.get_or_insert(self.seed ^ PACT_SALT);
                self.synthetic.get_or_insert_with(SyntheticSpec::default);
            }
            Scenario::Scarce => {
                if self.sites.is_empty() {
                    self.sites = default_sites(40, 6);
                }
                self.abc.get_or_insert(AbcSpec {
                    n_proposals: 20_000,
                    n_accept: 100,
                    k: 1,
                });
                self.identity_summary.get_or_insert(false);
                self.suffiae.init_seed.get_or_insert(self.seed ^ PACT_SALT);
                self.synthetic.get_or_insert_with(|| SyntheticSpec {
                    separation: 4.0,
                    ratio: 1.0,
                    test_n: 1200,
                    repeats: 5,
                    affected_sites: 3,
                    retain_fraction: 0.05,
                    ..SyntheticSpec::default()
                });
            }
            Scenario::Custom => {
                self.suffiae.init_seed.get_or_insert(self.seed ^ PACT_SALT);
                self.abc.get_or_insert(AbcSpec {
                    n_proposals: 10_000,
                    n_accept: 100,
                    k: 2,
                });
                self.identity_summary.get_or_insert(false);
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn abc_spec(&self) -> Result<AbcSpec> {
        self.abc.ok_or_else(|| Error::Config("abc settings unresolved".into()))
    }

    pub fn synthetic_spec(&self) -> Result<&SyntheticSpec> {
        self.synthetic
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} scenario needs synthetic settings", self.scenario.name())))
    }

    pub fn uses_identity(&self) -> bool {
        self.identity_summary.unwrap_or(false)
    }

    fn validate(&self) -> Result<()> {
        let abc = self.abc_spec()?;
        if abc.n_accept == 0 || abc.k == 0 {
            return Err(Error::Config("abc.n_accept and abc.k must be positive".into()));
        }
        if abc.n_proposals < abc.n_accept {
            return Err(Error::Config(format!(
                "abc.n_proposals ({}) must be at least abc.n_accept ({})",
                abc.n_proposals, abc.n_accept
            )));
        }
        if self.sites.is_empty() {
            return Err(Error::Config("at least one site is required".into()));
        }
        for (j, s) in self.sites.iter().enumerate() {
            match self.scenario {
                Scenario::Custom => {
                    let path = s
                        .path
                        .as_ref()
                        .ok_or_else(|| Error::Config(format!("site {j} needs a data path")))?;
                    if !path.exists() {
                        return Err(Error::Config(format!("site {j}: {} does not exist", path.display())));
                    }
                }
                _ => {
                    if s.n.unwrap_or(0) == 0 {
                        return Err(Error::Config(format!("site {j} needs n >= 1")));
                    }
                }
            }
        }
        if self.scenario == Scenario::Trimodal && !self.uses_identity() {
            return Err(Error::Config("the trimodal scenario requires identity_summary".into()));
        }
        if matches!(self.scenario, Scenario::Imbalance | Scenario::Scarce) {
            let syn = self.synthetic_spec()?;
            if syn.raw_dim == 0 || syn.latent_dim == 0 || syn.latent_dim > syn.raw_dim {
                return Err(Error::Config("synthetic dims must satisfy 0 < latent_dim <= raw_dim".into()));
            }
            if !(syn.ratio >= 1.0) || syn.repeats == 0 || syn.test_n == 0 {
                return Err(Error::Config("synthetic ratio >= 1, repeats >= 1 and test_n >= 1 required".into()));
            }
            if !(0.0..=1.0).contains(&syn.retain_fraction) || syn.affected_sites > self.sites.len() {
                return Err(Error::Config("retain_fraction must lie in [0, 1] and affected_sites <= sites".into()));
            }
            if self.uses_identity() {
                return Err(Error::Config(format!(
                    "the {} scenario trains SuffiAE; identity_summary must be false",
                    self.scenario.name()
                )));
            }
        }
        if self.suffiae.d == 0 || self.suffiae.epochs == 0 || !(self.suffiae.noise_alpha > 0.0) {
            return Err(Error::Config("suffiae.d, suffiae.epochs and suffiae.noise_alpha must be positive".into()));
        }
        if self.eval.epochs == 0 {
            return Err(Error::Config("eval.epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn abc_config(&self, dim: usize) -> Result<AbcConfig> {
        let spec = self.abc_spec()?;
        Ok(AbcConfig {
            n_proposals: spec.n_proposals,
            n_accept: spec.n_accept,
            k: spec.k,
            prior: self.prior.build(spec.k, dim)?,
            dim,
        })
    }
}

/// Runs a federation over the configured transport in this process.
pub fn federate(config: &FederationRunConfig, sites: &[PreparedSite], transport: &TransportSpec) -> Result<Posterior> {
    let (posterior, _) = match transport.kind {
        TransportKind::Inprocess => federation::run_inprocess(config, sites)?,
        TransportKind::Socket => federation::run_loopback(config, sites, None)?,
    };
    Ok(posterior)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub transport: TransportKind,
    pub files: Vec<String>,
    pub parameters: serde_json::Value,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub federation_seconds: f64,
}

pub fn version_string() -> String {
    match option_env!("GRAFFL_GIT_DESCRIBE") {
        Some(v) => v.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

pub const CONFIG_FILE: &str = "config.json";
pub const POSTERIOR_FILE: &str = "posterior.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured scenario and writes the config snapshot, posterior,
/// metrics and manifest into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ScenarioOutput> {
    let started = Instant::now();
    let config = config.clone().resolved()?;
    let output = match config.scenario {
        Scenario::Trimodal => run_trimodal(&config)?,
        Scenario::Imbalance => run_imbalance(&config)?,
        Scenario::Scarce => run_scarce(&config)?,
        Scenario::Custom => run_custom(&config)?,
    };
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join(CONFIG_FILE), &config)?;
    write_json(&out_dir.join(POSTERIOR_FILE), &output.posterior_document()?)?;
    output.write_metrics(&out_dir.join(METRICS_FILE))?;
    let manifest = Manifest {
        version: version_string(),
        scenario: config.scenario.name().into(),
        seed: config.seed,
        transport: config.transport.kind,
        files: [CONFIG_FILE, POSTERIOR_FILE, METRICS_FILE, MANIFEST_FILE]
            .map(String::from)
            .to_vec(),
        parameters: output.parameters.clone(),
        timings: Timings {
            total_seconds: started.elapsed().as_secs_f64(),
            federation_seconds: output.federation_seconds,
        },
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(output)
}

/// Coordinator half of a multi-process socket run: waits for every site on
/// `listen`, runs the protocol and writes the same four output files.
pub fn run_coordinator(config: &ExperimentConfig, listen: &str, out_dir: &Path) -> Result<ScenarioOutput> {
    let started = Instant::now();
    let config = config.clone().resolved()?;
    let fed = federation_config(&config)?;
    let listener = std::net::TcpListener::bind(listen)?;
    let mut transports = federation::accept_sites(&listener, fed.sites.len())?;
    let posterior = federation::coordinate(&fed, &mut transports)?;
    let federation_seconds = started.elapsed().as_secs_f64();
    let output = ScenarioOutput::coordinator_only(&config, posterior, federation_seconds)?;
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join(CONFIG_FILE), &config)?;
    write_json(&out_dir.join(POSTERIOR_FILE), &output.posterior_document()?)?;
    output.write_metrics(&out_dir.join(METRICS_FILE))?;
    let manifest = Manifest {
        version: version_string(),
        scenario: config.scenario.name().into(),
        seed: config.seed,
        transport: TransportKind::Socket,
        files: [CONFIG_FILE, POSTERIOR_FILE, METRICS_FILE, MANIFEST_FILE]
            .map(String::from)
            .to_vec(),
        parameters: output.parameters.clone(),
        timings: Timings {
            total_seconds: started.elapsed().as_secs_f64(),
            federation_seconds,
        },
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(output)
}

/// Site half of a multi-process socket run.
pub fn run_site_process(config: &ExperimentConfig, connect: &str, site_index: usize) -> Result<federation::SiteStats> {
    let config = config.clone().resolved()?;
    if site_index >= config.sites.len() {
        return Err(Error::Config(format!(
            "site id {site_index} out of range for {} sites",
            config.sites.len()
        )));
    }
    let site = build_site(&config, site_index)?
        .ok_or_else(|| Error::Config(format!("site {site_index} has nothing to publish")))?;
    let mut transport = connect_with_retry(connect)?;
    site.serve(&mut transport)
}

/// Sites may start before the coordinator listens; keep trying for ~10 s.
fn connect_with_retry(addr: &str) -> Result<federation::TcpTransport> {
    let mut attempts = 0;
    loop {
        match federation::TcpTransport::connect(addr) {
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::ConnectionRefused && attempts < 100 => {
                attempts += 1;
                std::thread::sleep(std::time::Duration::from_millis(100));
            }
            other => return other,
        }
    }
}

pub(crate) fn stack_rows(parts: &[&Matrix]) -> Result<Matrix> {
    Matrix::vstack(&parts.iter().map(|m| (*m).clone()).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for s in [Scenario::Trimodal, Scenario::Imbalance, Scenario::Scarce] {
            let c = ExperimentConfig::preset(s);
            assert!(c.abc.is_some());
            assert!(!c.sites.is_empty());
        }
        assert_eq!(ExperimentConfig::preset(Scenario::Scarce).sites.len(), 6);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(ExperimentConfig::from_json("{\"scenario\":\"nope\"}"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json("{\"typo\":1}"), Err(Error::Config(_))));
        let c = ExperimentConfig::from_json(r#"{"abc":{"n_proposals":5,"n_accept":10,"k":3}}"#).unwrap();
        assert!(matches!(c.resolved(), Err(Error::Config(_))));
        let c = ExperimentConfig::from_json(r#"{"scenario":"custom","sites":[{"path":"/nonexistent.csv"}]}"#).unwrap();
        assert!(matches!(c.resolved(), Err(Error::Config(_))));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::preset(Scenario::Imbalance);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }
}
