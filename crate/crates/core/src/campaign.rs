//! Simulation campaigns: every (mechanism, n_rh, mix) run of a config, fanned out over
//! a worker pool, written as a sorted CSV plus a manifest that reproduces it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::gen_perf_attack_trace;
use crate::config::CampaignConfig;
use crate::metrics::{write_reports, EnergyModel, ReportMeta, SimReport};
use crate::mitigations::MitigationConfig;
use crate::sim::{run_cores, CoreSpec, SystemSetup};
use crate::workloads::{build_mixes, gen_synthetic, Class, MixSpec, Trace};
use crate::{Error, TimingParams};

/// Environment variable holding the worker count. Unset or 0 uses every core.
pub const WORKERS_ENV: &str = "PRACSIM_WORKERS";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Values of the `attack` report column.
pub const ATTACK_NONE: &str = "none";
/// The three benign cores of an attack run, without the attacker.
pub const ATTACK_BENIGN3: &str = "benign3";
pub const ATTACK_PERF: &str = "perf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedMechanism {
    pub label: String,
    pub n_rh: u64,
    pub config: MitigationConfig,
}

/// Everything needed to regenerate a campaign's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub artifact_version: String,
    pub timing_preset: String,
    pub workload_seed: u64,
    pub outputs: Vec<PathBuf>,
    pub config: CampaignConfig,
    pub energy: EnergyModel,
    /// Parameters each mechanism name resolved to (informational; rerun re-resolves).
    pub resolved: Vec<ResolvedMechanism>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let m: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        m.config.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

pub struct CampaignOutput {
    pub reports: Vec<SimReport>,
    pub manifest: RunManifest,
}

/// Worker count from [`WORKERS_ENV`].
pub fn workers_from_env() -> Result<usize, Error> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("{WORKERS_ENV} must be an integer (got {v:?})"))),
    }
}

struct Job {
    label: String,
    n_rh: u64,
    attack: &'static str,
    mix: usize,
    mitigation: MitigationConfig,
}

pub fn run_campaign(cfg: &CampaignConfig, energy: &EnergyModel, workers: usize) -> Result<CampaignOutput, Error> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(cfg, energy))
}

fn run_inner(cfg: &CampaignConfig, energy: &EnergyModel) -> Result<CampaignOutput, Error> {
    let t = cfg.timing.resolve()?;
    let topo = cfg.topology;
    let w = cfg.workload;
    let mixes = build_mixes(w.mixes, w.seed)?;

    let mut resolved = Vec::new();
    for spec in &cfg.mitigation.mechanisms {
        for &n_rh in &cfg.mitigation.n_rh {
            let config = spec.resolve(n_rh, &t, &topo)?;
            config.validate(n_rh)?;
            resolved.push(ResolvedMechanism { label: spec.label().to_string(), n_rh, config });
        }
    }

    let keys: Vec<(Class, u64)> = {
        let mut k: Vec<(Class, u64)> =
            mixes.iter().flat_map(|m| m.classes.iter().copied().zip(m.seeds)).collect();
        k.sort_unstable_by_key(|(c, s)| (c.letter(), *s));
        k.dedup();
        k
    };
    let traces: BTreeMap<(char, u64), Arc<Trace>> = keys
        .par_iter()
        .map(|&(c, s)| Ok(((c.letter(), s), Arc::new(gen_synthetic(c, s, w.trace_length, &topo)?))))
        .collect::<Result<_, Error>>()?;
    let trace_of = |m: &MixSpec, i: usize| traces[&(m.classes[i].letter(), m.seeds[i])].clone();

    let setup = |mitigation: MitigationConfig, n_rh: u64, seed: u64| SystemSetup {
        topology: topo,
        timing: t,
        n_rh,
        mitigation,
        controller: cfg.controller,
        seed,
        ref_resets_counters: cfg.mitigation.ref_resets_counters,
        log_commands: false,
    };

    // Solo IPC of every trace on an unmitigated channel.
    let max_n_rh = *cfg.mitigation.n_rh.iter().max().unwrap_or(&1024);
    let alone: BTreeMap<(char, u64), f64> = traces
        .par_iter()
        .map(|(k, tr)| {
            let r = run_cores(&setup(MitigationConfig::None, max_n_rh, k.1), &[CoreSpec { trace: tr.clone(), benign: true }], w.stop())?;
            Ok((*k, r.cores[0].ipc))
        })
        .collect::<Result<_, Error>>()?;
    let alone_of = |m: &MixSpec, n: usize| -> Vec<f64> {
        (0..n).map(|i| alone[&(m.classes[i].letter(), m.seeds[i])]).collect()
    };

    let mut jobs = Vec::new();
    for r in &resolved {
        for mix in 0..mixes.len() {
            let job = |attack| Job { label: r.label.clone(), n_rh: r.n_rh, attack, mix, mitigation: r.config.clone() };
            jobs.push(job(ATTACK_NONE));
            if cfg.attack.as_ref().is_some_and(|a| a.applies(&r.label, r.n_rh)) {
                jobs.push(job(ATTACK_BENIGN3));
                jobs.push(job(ATTACK_PERF));
            }
        }
    }

    let mut reports: Vec<SimReport> = jobs
        .par_iter()
        .map(|j| {
            let m = &mixes[j.mix];
            let benign = if j.attack == ATTACK_NONE { 4 } else { 3 };
            let mut cores: Vec<CoreSpec> = (0..benign).map(|i| CoreSpec { trace: trace_of(m, i), benign: true }).collect();
            let s = setup(j.mitigation.clone(), j.n_rh, w.seed ^ ((m.id as u64) << 32) ^ j.n_rh);
            if j.attack == ATTACK_PERF {
                let spec = cfg.attack.as_ref().expect("attack section").spec(j.mitigation.clone());
                let eff = s.effective_timing()?;
                let rotation = spec.rows_per_bank as u64 * eff.cycles().rc;
                cores.push(CoreSpec { trace: Arc::new(gen_perf_attack_trace(&spec, &eff, rotation, &topo)?), benign: false });
            }
            let run = run_cores(&s, &cores, w.stop())?;
            let meta = ReportMeta { mechanism: &j.label, n_rh: j.n_rh, attack: j.attack, mix_id: m.id, mix_kind: &m.kind() };
            SimReport::from_run(&run, &alone_of(m, benign), meta, energy)
        })
        .collect::<Result<_, Error>>()?;
    reports.sort_by(|a, b| {
        (&a.mechanism, a.n_rh, &a.attack, a.mix_id).cmp(&(&b.mechanism, b.n_rh, &b.attack, b.mix_id))
    });

    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        timing_preset: cfg.timing.preset.clone(),
        workload_seed: w.seed,
        outputs: vec![cfg.output.dir.join(&cfg.output.results)],
        config: cfg.clone(),
        energy: *energy,
        resolved,
    };
    Ok(CampaignOutput { reports, manifest })
}

/// Write the results CSV and manifest into `cfg.output.dir`.
pub fn write_outputs(out: &CampaignOutput) -> Result<Vec<PathBuf>, Error> {
    let o = &out.manifest.config.output;
    std::fs::create_dir_all(&o.dir)?;
    let csv = o.dir.join(&o.results);
    write_reports(&out.reports, std::fs::File::create(&csv)?)?;
    let man = o.dir.join(MANIFEST_FILE);
    std::fs::write(&man, out.manifest.to_toml()?)?;
    Ok(vec![csv, man])
}

/// Re-run a manifest, writing into `dir` instead of the recorded output directory.
pub fn rerun(manifest: &RunManifest, dir: Option<&Path>, workers: usize) -> Result<CampaignOutput, Error> {
    if manifest.artifact_version != env!("CARGO_PKG_VERSION") {
        return Err(Error::Config(format!(
            "manifest was written by version {}, this is {}",
            manifest.artifact_version,
            env!("CARGO_PKG_VERSION")
        )));
    }
    let mut cfg = manifest.config.clone();
    if let Some(d) = dir {
        cfg.output.dir = d.to_path_buf();
    }
    run_campaign(&cfg, &manifest.energy, workers)
}

/// Timing of the runs a mechanism would get, for reporting.
pub fn run_timing(cfg: &CampaignConfig, m: &MitigationConfig) -> Result<TimingParams, Error> {
    let t = cfg.timing.resolve()?;
    if m.uses_prac_timing() && !t.is_prac_adjusted() {
        t.apply_prac_adjustments()
    } else {
        Ok(t)
    }
}
