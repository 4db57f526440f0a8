//! Campaign configuration file: a TOML document with `timing`, `topology`,
//! `mitigation`, `workload`, `attack` and `output` sections. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackSpec;
use crate::controller::ControllerConfig;
use crate::dram::Topology;
use crate::mitigations::{self, MitigationConfig};
use crate::security::{PracParams, PrfmParams, Quantization};
use crate::sim::StopCondition;
use crate::timing::TimingSection;
use crate::{Error, TimingParams};

/// Mechanism names accepted in `mitigation.mechanisms`; each is resolved per `n_rh`.
pub const MECHANISM_NAMES: [&str; 10] =
    ["none", "prac-1", "prac-2", "prac-4", "prac-optimistic", "prfm", "prac+prfm", "graphene", "hydra", "para"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MechanismSpec {
    Named(String),
    Explicit { label: String, config: MitigationConfig },
}

impl MechanismSpec {
    pub fn label(&self) -> &str {
        match self {
            MechanismSpec::Named(n) => n,
            MechanismSpec::Explicit { label, .. } => label,
        }
    }

    pub fn validate_name(&self) -> Result<(), Error> {
        match self {
            MechanismSpec::Named(n) if !MECHANISM_NAMES.contains(&n.as_str()) => Err(Error::Config(format!(
                "unknown mechanism {n:?}; expected one of {}",
                MECHANISM_NAMES.join(", ")
            ))),
            MechanismSpec::Explicit { label, .. } if label.is_empty() => {
                Err(Error::Config("explicit mechanisms need a non-empty label".into()))
            }
            _ => Ok(()),
        }
    }

    /// Concrete parameters at `n_rh`. PRAC thresholds come from the analysis on PRAC
    /// timing; PRAC-Optimistic reuses PRAC-4's so that only the timing differs.
    pub fn resolve(&self, n_rh: u64, base: &TimingParams, topo: &Topology) -> Result<MitigationConfig, Error> {
        let prac_t = if base.is_prac_adjusted() { *base } else { base.apply_prac_adjustments()? };
        let prac = |refs| PracParams::secure_for(n_rh, refs, Quantization::P100, &prac_t);
        Ok(match self {
            MechanismSpec::Explicit { config, .. } => config.clone(),
            MechanismSpec::Named(n) => match n.as_str() {
                "none" => MitigationConfig::None,
                "prac-1" => MitigationConfig::PracN(prac(1)?),
                "prac-2" => MitigationConfig::PracN(prac(2)?),
                "prac-4" => MitigationConfig::PracN(prac(4)?),
                "prac-optimistic" => MitigationConfig::PracOptimistic(prac(4)?),
                "prfm" => MitigationConfig::Prfm(PrfmParams::secure_for(n_rh, base)?),
                "prac+prfm" => {
                    MitigationConfig::PracPlusPrfm { prac: prac(4)?, prfm: PrfmParams::secure_for(n_rh, &prac_t)? }
                }
                "graphene" => mitigations::graphene_default(n_rh, base),
                "hydra" => mitigations::hydra_default(n_rh, topo),
                "para" => MitigationConfig::Para { probability: mitigations::para_probability(n_rh) },
                other => return Err(Error::Config(format!("unknown mechanism {other:?}"))),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationSection {
    pub mechanisms: Vec<MechanismSpec>,
    pub n_rh: Vec<u64>,
    #[serde(default = "yes")]
    pub ref_resets_counters: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    /// Number of mixes; a multiple of 6.
    pub mixes: usize,
    pub seed: u64,
    /// Records per synthetic trace; traces wrap around when exhausted.
    pub trace_length: usize,
    pub instructions: u64,
    pub max_cycles: u64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        let s = StopCondition::desk();
        Self { mixes: 12, seed: 1, trace_length: 20_000, instructions: s.instructions, max_cycles: s.max_cycles }
    }
}

impl WorkloadSection {
    pub fn stop(&self) -> StopCondition {
        StopCondition { instructions: self.instructions, max_cycles: self.max_cycles }
    }
}

/// Performance-degradation attacker runs: the first three cores of each mix share the
/// channel with an attacker core.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "eight")]
    pub rows_per_bank: u32,
    #[serde(default = "four")]
    pub banks: u32,
    /// Mechanism labels to attack; empty means every configured mechanism.
    #[serde(default)]
    pub mechanisms: Vec<String>,
    /// Attack runs happen only for `n_rh` at or below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_n_rh: Option<u64>,
}

fn eight() -> u32 {
    8
}
fn four() -> u32 {
    4
}

impl AttackSection {
    pub fn spec(&self, target: MitigationConfig) -> AttackSpec {
        AttackSpec { rows_per_bank: self.rows_per_bank, banks: self.banks, ..AttackSpec::perf_degradation(target) }
    }

    pub fn applies(&self, label: &str, n_rh: u64) -> bool {
        self.max_n_rh.map_or(true, |m| n_rh <= m) && (self.mechanisms.is_empty() || self.mechanisms.iter().any(|m| m == label))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default = "results_csv")]
    pub results: String,
}

fn results_csv() -> String {
    "results.csv".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), results: results_csv() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub timing: TimingSection,
    /// Full-size organization unless given.
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub controller: ControllerConfig,
    pub mitigation: MitigationSection,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Cheap checks run before any simulation starts.
    pub fn validate(&self) -> Result<(), Error> {
        self.timing.resolve()?;
        self.topology.validate()?;
        self.controller.validate()?;
        let m = &self.mitigation;
        if m.mechanisms.is_empty() || m.n_rh.is_empty() {
            return Err(Error::Config("mitigation.mechanisms and mitigation.n_rh must be non-empty".into()));
        }
        for spec in &m.mechanisms {
            spec.validate_name()?;
        }
        let mut labels: Vec<&str> = m.mechanisms.iter().map(|s| s.label()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("mechanism labels must be unique".into()));
        }
        if let Some(&n) = m.n_rh.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("n_rh must be >= 2 (got {n})")));
        }
        let w = &self.workload;
        if w.mixes == 0 || w.mixes % 6 != 0 {
            return Err(Error::Config(format!("workload.mixes must be a positive multiple of 6 (got {})", w.mixes)));
        }
        if w.trace_length == 0 || w.instructions == 0 || w.max_cycles == 0 {
            return Err(Error::Config("workload lengths must be >= 1".into()));
        }
        if let Some(a) = &self.attack {
            a.spec(MitigationConfig::None).validate(&self.topology)?;
            for l in &a.mechanisms {
                if !labels.contains(&l.as_str()) {
                    return Err(Error::Config(format!("attack.mechanisms names unconfigured mechanism {l:?}")));
                }
            }
        }
        if self.output.results.is_empty() {
            return Err(Error::Config("output.results must be a file name".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[timing]
preset = "ddr5-3200an-base"

[mitigation]
mechanisms = ["none", "prac-4", { label = "prfm-8", config = { kind = "prfm", rfm_th = 8 } }]
n_rh = [1024, 16]

[workload]
mixes = 6
seed = 3
trace_length = 1000
instructions = 5000
max_cycles = 100000

[attack]
mechanisms = ["prac-4"]
max_n_rh = 128
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = CampaignConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.mitigation.mechanisms[2].label(), "prfm-8");
        assert_eq!(c.topology, Topology::default());
        assert_eq!(c.attack.as_ref().unwrap().rows_per_bank, 8);
        assert_eq!(CampaignConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_typos_and_bad_values() {
        let typo = SAMPLE.replace("max_cycles", "max_cycle");
        assert!(matches!(CampaignConfig::from_toml(&typo), Err(Error::Config(_))));
        assert!(CampaignConfig::from_toml(&SAMPLE.replace("\"none\"", "\"nope\"")).is_err());
        assert!(CampaignConfig::from_toml(&SAMPLE.replace("mixes = 6", "mixes = 5")).is_err());
        assert!(CampaignConfig::from_toml(&SAMPLE.replace("n_rh = [1024, 16]", "n_rh = []")).is_err());
        assert!(CampaignConfig::from_toml(&SAMPLE.replace("[\"prac-4\"]\nmax", "[\"para\"]\nmax")).is_err());
    }

    #[test]
    fn resolves_named_mechanisms() {
        let t = TimingParams::ddr5_3200an_base();
        let topo = Topology::default();
        let r = |n: &str, n_rh| MechanismSpec::Named(n.into()).resolve(n_rh, &t, &topo).unwrap();
        assert_eq!(r("prac-4", 16).prac().unwrap().abo_th, 7);
        assert_eq!(r("prac-optimistic", 16).prac(), r("prac-4", 16).prac());
        assert_eq!(r("prfm", 64).prfm().unwrap().rfm_th, 6);
        assert!(r("prac+prfm", 32).prac().is_some() && r("prac+prfm", 32).prfm().is_some());
    }
}
