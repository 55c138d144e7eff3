//! Experiment configuration: the TOML schema, its validation, and the
//! translation into model types.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::filter::{BirthModel, MotionModel};
use crate::gaussian::{MergeScheme, ReductionConfig, TgmRule};
use crate::metrics::OspaConfig;
use crate::network::ConsensusProtocol;
use crate::scenario::{default_birth, default_motion, ScenarioKind};
use crate::unscented::UtParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    SingleTarget,
    MultiTarget,
}

impl From<ScenarioName> for ScenarioKind {
    fn from(name: ScenarioName) -> Self {
        match name {
            ScenarioName::SingleTarget => ScenarioKind::SingleTarget,
            ScenarioName::MultiTarget => ScenarioKind::MultiTarget,
        }
    }
}

/// Whether ground truth is the deterministic reference scene or freshly
/// sampled per Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    Scripted,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Smr,
    Omr,
}

impl From<SchemeName> for MergeScheme {
    fn from(name: SchemeName) -> Self {
        match name {
            SchemeName::Smr => MergeScheme::Smr,
            SchemeName::Omr => MergeScheme::Omr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TgmRuleName {
    Rank,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolName {
    None,
    Cgmm,
    Cgma,
    Gci,
    Cca,
    Ccf,
}

impl ProtocolName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Cgmm => "cgmm",
            Self::Cgma => "cgma",
            Self::Gci => "gci",
            Self::Cca => "cca",
            Self::Ccf => "ccf",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Number of sensing nodes.
    pub nodes: usize,
    /// Maximum link length between neighbors.
    pub comm_radius: f64,
    /// Seed for node placement; the network is fixed across runs.
    pub seed: u64,
    /// Resample placements until the graph has exactly this diameter.
    #[serde(default)]
    pub target_diameter: Option<usize>,
}

fn default_survival() -> f64 {
    0.99
}

fn default_accel_var() -> f64 {
    25.0
}

fn default_birth_rate() -> f64 {
    0.03
}

fn default_clutter_rate() -> f64 {
    5.0
}

fn default_prune() -> f64 {
    1e-4
}

fn default_merge_gate() -> f64 {
    5.0
}

fn default_max_components() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "default_survival")]
    pub survival_prob: f64,
    #[serde(default = "default_accel_var")]
    pub accel_var: f64,
    /// Birth rate of each of the four birth sites.
    #[serde(default = "default_birth_rate")]
    pub birth_rate: f64,
    /// Expected clutter count per sensor per frame.
    #[serde(default = "default_clutter_rate")]
    pub clutter_rate: f64,
    #[serde(default = "default_prune")]
    pub prune_threshold: f64,
    /// Merge gate in standard-deviation units.
    #[serde(default = "default_merge_gate")]
    pub merge_gate: f64,
    #[serde(default = "default_max_components")]
    pub max_components: usize,
    /// Sigma-point spread parameter; defaults to `3 - dim`.
    #[serde(default)]
    pub ut_kappa: Option<f64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            survival_prob: default_survival(),
            accel_var: default_accel_var(),
            birth_rate: default_birth_rate(),
            clutter_rate: default_clutter_rate(),
            prune_threshold: default_prune(),
            merge_gate: default_merge_gate(),
            max_components: default_max_components(),
            ut_kappa: None,
        }
    }
}

fn default_protocols() -> Vec<ProtocolName> {
    vec![
        ProtocolName::Cgmm,
        ProtocolName::Cgma,
        ProtocolName::Gci,
        ProtocolName::Cca,
        ProtocolName::Ccf,
    ]
}

fn default_t_values() -> Vec<usize> {
    vec![0, 1, 2, 3]
}

fn default_scheme() -> SchemeName {
    SchemeName::Smr
}

fn default_tgm_rule() -> TgmRuleName {
    TgmRuleName::Rank
}

fn default_tgm_threshold() -> f64 {
    0.1
}

fn default_cgma_gate() -> f64 {
    5.0
}

fn default_gci_share_threshold() -> f64 {
    0.005
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSection {
    /// Protocols to evaluate; the no-communication baseline always runs.
    #[serde(default = "default_protocols")]
    pub protocols: Vec<ProtocolName>,
    /// Consensus iteration counts to evaluate each protocol at.
    #[serde(default = "default_t_values")]
    pub t_values: Vec<usize>,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeName,
    #[serde(default = "default_tgm_rule")]
    pub tgm_rule: TgmRuleName,
    /// Fixed transmitted-component count for the rank rule; default is the
    /// rounded expected target count.
    #[serde(default)]
    pub tgm_fixed: Option<usize>,
    /// Minimum transmitted weight for the threshold rule.
    #[serde(default = "default_tgm_threshold")]
    pub tgm_threshold: f64,
    /// Association gate in standard-deviation units.
    #[serde(default = "default_cgma_gate")]
    pub cgma_gate: f64,
    /// Minimum weight a component needs to enter covariance intersection.
    #[serde(default = "default_gci_share_threshold")]
    pub gci_share_threshold: f64,
    /// Fusion-time reduction overrides; default to the filter's values.
    #[serde(default)]
    pub prune_threshold: Option<f64>,
    #[serde(default)]
    pub merge_gate: Option<f64>,
    #[serde(default)]
    pub max_components: Option<usize>,
}

impl Default for ConsensusSection {
    fn default() -> Self {
        Self {
            protocols: default_protocols(),
            t_values: default_t_values(),
            scheme: default_scheme(),
            tgm_rule: default_tgm_rule(),
            tgm_fixed: None,
            tgm_threshold: default_tgm_threshold(),
            cgma_gate: default_cgma_gate(),
            gci_share_threshold: default_gci_share_threshold(),
            prune_threshold: None,
            merge_gate: None,
            max_components: None,
        }
    }
}

fn default_cutoff() -> f64 {
    1000.0
}

fn default_order() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OspaSection {
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "default_order")]
    pub order: f64,
}

impl Default for OspaSection {
    fn default() -> Self {
        Self { cutoff: default_cutoff(), order: default_order() }
    }
}

fn default_steps() -> usize {
    100
}

fn default_truth_mode() -> TruthMode {
    TruthMode::Scripted
}

/// Root of the experiment configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioName,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub mc_runs: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_truth_mode")]
    pub truth: TruthMode,
    pub network: NetworkSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub consensus: ConsensusSection,
    #[serde(default)]
    pub ospa: OspaSection,
}

impl ExperimentConfig {
    /// Parses and validates a TOML configuration string.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read configuration {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    /// Cross-field validation beyond what deserialization enforces. The
    /// model builders below re-validate their own parameters.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.mc_runs == 0 {
            return Err(Error::Config("mc_runs must be at least 1".into()));
        }
        if self.network.nodes == 0 {
            return Err(Error::Config("network.nodes must be at least 1".into()));
        }
        if !(self.network.comm_radius > 0.0) || !self.network.comm_radius.is_finite() {
            return Err(Error::Config(format!(
                "network.comm_radius must be finite and positive, got {}",
                self.network.comm_radius
            )));
        }
        if self.consensus.t_values.is_empty() {
            return Err(Error::Config("consensus.t_values must not be empty".into()));
        }
        if !(self.consensus.cgma_gate > 0.0) || !self.consensus.cgma_gate.is_finite() {
            return Err(Error::Config(format!(
                "consensus.cgma_gate must be finite and positive, got {}",
                self.consensus.cgma_gate
            )));
        }
        if !(self.consensus.gci_share_threshold >= 0.0)
            || !self.consensus.gci_share_threshold.is_finite()
        {
            return Err(Error::Config(format!(
                "consensus.gci_share_threshold must be finite and non-negative, got {}",
                self.consensus.gci_share_threshold
            )));
        }
        if let TgmRuleName::Threshold = self.consensus.tgm_rule {
            if !self.consensus.tgm_threshold.is_finite() || self.consensus.tgm_threshold < 0.0 {
                return Err(Error::Config(format!(
                    "consensus.tgm_threshold must be finite and non-negative, got {}",
                    self.consensus.tgm_threshold
                )));
            }
        }
        if !(self.filter.clutter_rate >= 0.0) || !self.filter.clutter_rate.is_finite() {
            return Err(Error::Config(format!(
                "filter.clutter_rate must be finite and non-negative, got {}",
                self.filter.clutter_rate
            )));
        }
        self.motion().map_err(|e| Error::Config(e.to_string()))?;
        self.birth().map_err(|e| Error::Config(e.to_string()))?;
        self.filter_reduction().map_err(|e| Error::Config(e.to_string()))?;
        self.fusion_reduction().map_err(|e| Error::Config(e.to_string()))?;
        self.ospa_config().map_err(|e| Error::Config(e.to_string()))?;
        self.ut_params().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn scenario_kind(&self) -> ScenarioKind {
        self.scenario.into()
    }

    pub fn motion(&self) -> Result<MotionModel> {
        if self.filter.survival_prob == default_survival()
            && self.filter.accel_var == default_accel_var()
        {
            return Ok(default_motion());
        }
        MotionModel::constant_velocity(1.0, self.filter.accel_var, self.filter.survival_prob)
    }

    pub fn birth(&self) -> Result<BirthModel> {
        default_birth(self.filter.birth_rate)
    }

    /// Reduction applied after every measurement update.
    pub fn filter_reduction(&self) -> Result<ReductionConfig> {
        ReductionConfig::new(
            self.filter.prune_threshold,
            self.filter.merge_gate,
            self.filter.max_components,
        )
    }

    /// Reduction applied inside pooling and covariance-intersection fusion.
    pub fn fusion_reduction(&self) -> Result<ReductionConfig> {
        ReductionConfig::new(
            self.consensus.prune_threshold.unwrap_or(self.filter.prune_threshold),
            self.consensus.merge_gate.unwrap_or(self.filter.merge_gate),
            self.consensus.max_components.unwrap_or(self.filter.max_components),
        )
    }

    pub fn ospa_config(&self) -> Result<OspaConfig> {
        OspaConfig::new(self.ospa.cutoff, self.ospa.order)
    }

    pub fn ut_params(&self) -> Result<UtParams> {
        let params = match self.filter.ut_kappa {
            Some(kappa) => UtParams { kappa },
            None => UtParams::for_dim(4),
        };
        if !params.kappa.is_finite() {
            return Err(Error::Domain("ut_kappa must be finite".into()));
        }
        Ok(params)
    }

    pub fn merge_scheme(&self) -> MergeScheme {
        self.consensus.scheme.into()
    }

    pub fn tgm_rule(&self) -> TgmRule {
        match self.consensus.tgm_rule {
            TgmRuleName::Rank => TgmRule::Rank { fixed: self.consensus.tgm_fixed },
            TgmRuleName::Threshold => TgmRule::Threshold { min_weight: self.consensus.tgm_threshold },
        }
    }

    /// Consensus iteration counts, ascending without duplicates.
    pub fn t_values(&self) -> Vec<usize> {
        let mut t = self.consensus.t_values.clone();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// Protocols to evaluate, in configuration order without duplicates.
    /// The no-communication baseline is not listed; it always runs.
    pub fn protocol_names(&self) -> Vec<ProtocolName> {
        let mut seen = Vec::new();
        for &p in &self.consensus.protocols {
            if p != ProtocolName::None && !seen.contains(&p) {
                seen.push(p);
            }
        }
        seen
    }

    /// Builds the fusion rule a protocol name stands for under this
    /// configuration.
    pub fn protocol(&self, name: ProtocolName) -> Result<ConsensusProtocol> {
        Ok(match name {
            ProtocolName::None => ConsensusProtocol::None,
            ProtocolName::Cgmm => ConsensusProtocol::Cgmm {
                tgm: self.tgm_rule(),
                reduction: self.fusion_reduction()?,
                scheme: self.merge_scheme(),
            },
            ProtocolName::Cgma => ConsensusProtocol::Cgma {
                tgm: self.tgm_rule(),
                gate: self.consensus.cgma_gate,
            },
            ProtocolName::Gci => ConsensusProtocol::Gci {
                share_threshold: self.consensus.gci_share_threshold,
                reduction: self.fusion_reduction()?,
                scheme: self.merge_scheme(),
            },
            ProtocolName::Cca => ConsensusProtocol::Cca,
            ProtocolName::Ccf => ConsensusProtocol::Ccf,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scenario = "multi_target"
mc_runs = 10
master_seed = 7

[network]
nodes = 6
comm_radius = 1200.0
seed = 3
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.steps, 100);
        assert_eq!(cfg.truth, TruthMode::Scripted);
        assert_eq!(cfg.filter.birth_rate, 0.03);
        assert_eq!(cfg.filter.clutter_rate, 5.0);
        assert_eq!(cfg.consensus.protocols.len(), 5);
        assert_eq!(cfg.t_values(), vec![0, 1, 2, 3]);
        assert_eq!(cfg.ospa.cutoff, 1000.0);
        assert_eq!(cfg.ospa.order, 2.0);
        let reduction = cfg.filter_reduction().unwrap();
        assert_eq!(reduction.prune_threshold(), 1e-4);
        assert_eq!(reduction.merge_gate(), 5.0);
        assert_eq!(reduction.max_components(), 100);
        assert_eq!(cfg.ut_params().unwrap().kappa, -1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nwhatever = 3\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
        let text = MINIMAL.replace("[network]", "[network]\nbogus = 1");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let zero_runs = MINIMAL.replace("mc_runs = 10", "mc_runs = 0");
        assert!(ExperimentConfig::from_toml(&zero_runs).is_err());
        let bad_radius = MINIMAL.replace("comm_radius = 1200.0", "comm_radius = -5.0");
        assert!(ExperimentConfig::from_toml(&bad_radius).is_err());
        let text = format!("{MINIMAL}\n[consensus]\nt_values = []\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = format!("{MINIMAL}\n[consensus]\ncgma_gate = 0.0\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = format!("{MINIMAL}\n[filter]\nprune_threshold = -1.0\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = format!("{MINIMAL}\n[ospa]\ncutoff = 0.0\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn protocol_list_dedups_and_drops_the_baseline() {
        let text = format!(
            "{MINIMAL}\n[consensus]\nprotocols = [\"none\", \"gci\", \"cgmm\", \"gci\"]\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.protocol_names(), vec![ProtocolName::Gci, ProtocolName::Cgmm]);
    }

    #[test]
    fn t_values_sort_and_dedup() {
        let text = format!("{MINIMAL}\n[consensus]\nt_values = [3, 1, 0, 1]\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.t_values(), vec![0, 1, 3]);
    }

    #[test]
    fn built_protocols_reflect_the_configuration() {
        let text = format!(
            "{MINIMAL}\n[consensus]\nscheme = \"omr\"\ntgm_rule = \"threshold\"\ntgm_threshold = 0.2\ncgma_gate = 4.0\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        match cfg.protocol(ProtocolName::Cgmm).unwrap() {
            ConsensusProtocol::Cgmm { tgm, scheme, .. } => {
                assert_eq!(tgm, TgmRule::Threshold { min_weight: 0.2 });
                assert_eq!(scheme, MergeScheme::Omr);
            }
            other => panic!("unexpected protocol {other:?}"),
        }
        match cfg.protocol(ProtocolName::Cgma).unwrap() {
            ConsensusProtocol::Cgma { gate, .. } => assert_eq!(gate, 4.0),
            other => panic!("unexpected protocol {other:?}"),
        }
    }
}
