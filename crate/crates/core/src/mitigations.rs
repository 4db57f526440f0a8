//! Mechanism configuration, the controller-side reference mitigations (Graphene,
//! Hydra, PARA) and the storage-cost model.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dram::{counter_bits, victims_of, BankId, Topology};
use crate::security::{PracParams, PrfmParams};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MitigationConfig {
    None,
    Prfm(PrfmParams),
    PracN(PracParams),
    PracPlusPrfm { prac: PracParams, prfm: PrfmParams },
    /// PRAC back-off with unmodified (non-PRAC) timing parameters.
    PracOptimistic(PracParams),
    Graphene { table_entries: u64, threshold: u64 },
    Hydra { gct_entries: u64, rcc_entries: u64, group_threshold: u64, row_threshold: u64 },
    Para { probability: f64 },
}

impl MitigationConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MitigationConfig::None => "none",
            MitigationConfig::Prfm(_) => "prfm",
            MitigationConfig::PracN(_) => "prac-n",
            MitigationConfig::PracPlusPrfm { .. } => "prac+prfm",
            MitigationConfig::PracOptimistic(_) => "prac-optimistic",
            MitigationConfig::Graphene { .. } => "graphene",
            MitigationConfig::Hydra { .. } => "hydra",
            MitigationConfig::Para { .. } => "para",
        }
    }

    pub fn prac(&self) -> Option<&PracParams> {
        match self {
            MitigationConfig::PracN(p) | MitigationConfig::PracOptimistic(p) => Some(p),
            MitigationConfig::PracPlusPrfm { prac, .. } => Some(prac),
            _ => None,
        }
    }

    pub fn prfm(&self) -> Option<&PrfmParams> {
        match self {
            MitigationConfig::Prfm(p) => Some(p),
            MitigationConfig::PracPlusPrfm { prfm, .. } => Some(prfm),
            _ => None,
        }
    }

    /// Whether the device runs with PRAC-adjusted timing.
    pub fn uses_prac_timing(&self) -> bool {
        matches!(self, MitigationConfig::PracN(_) | MitigationConfig::PracPlusPrfm { .. })
    }

    pub fn validate(&self, n_rh: u64) -> Result<(), Error> {
        let below = |name: &str, v: u64| {
            if v == 0 || v >= n_rh {
                Err(Error::Config(format!("{name} must be in [1, n_rh) (got {v}, n_rh {n_rh})")))
            } else {
                Ok(())
            }
        };
        match self {
            MitigationConfig::None => Ok(()),
            MitigationConfig::Prfm(p) => p.validate(),
            MitigationConfig::PracN(p) | MitigationConfig::PracOptimistic(p) => p.validate(),
            MitigationConfig::PracPlusPrfm { prac, prfm } => {
                prac.validate()?;
                prfm.validate()
            }
            MitigationConfig::Graphene { table_entries, threshold } => {
                below("graphene threshold", *threshold)?;
                if *table_entries == 0 {
                    return Err(Error::Config("graphene table_entries must be >= 1".into()));
                }
                Ok(())
            }
            MitigationConfig::Hydra { gct_entries, rcc_entries, group_threshold, row_threshold } => {
                below("hydra row_threshold", *row_threshold)?;
                if *group_threshold == 0 || group_threshold > row_threshold {
                    return Err(Error::Config("hydra group_threshold must be in [1, row_threshold]".into()));
                }
                if *gct_entries == 0 || *rcc_entries == 0 {
                    return Err(Error::Config("hydra table sizes must be >= 1".into()));
                }
                Ok(())
            }
            MitigationConfig::Para { probability } => {
                if !(*probability > 0.0 && *probability < 1.0) && *probability != 1.0 {
                    return Err(Error::Config("para probability must be in (0, 1]".into()));
                }
                Ok(())
            }
        }
    }
}

/// Activations one bank can receive in a refresh window (tREFW / tRC), used to size
/// Graphene's tables.
pub fn acts_per_window(t: &crate::TimingParams) -> u64 {
    t.t_refw / t.t_rc
}

pub fn graphene_default(n_rh: u64, t: &crate::TimingParams) -> MitigationConfig {
    let threshold = (n_rh / 4).max(1);
    MitigationConfig::Graphene { table_entries: acts_per_window(t).div_ceil(threshold) + 1, threshold }
}

/// Hydra with its original structure sizes. The group threshold sits below the row
/// threshold so that tracking switches to per-row counters before any row can be at risk.
pub fn hydra_default(n_rh: u64, topo: &Topology) -> MitigationConfig {
    let row_threshold = (n_rh / 2).max(2);
    let scale = topo.rows_total().div_ceil(Topology::default().rows_total()).max(1);
    let full = topo.rows_total() >= Topology::default().rows_total();
    let (gct, rcc) = if full { (128 * 1024 * scale, 4096) } else { ((topo.rows_total() / 4).max(1), 64) };
    MitigationConfig::Hydra {
        gct_entries: gct,
        rcc_entries: rcc,
        group_threshold: (row_threshold * 4 / 5).max(1),
        row_threshold,
    }
}

/// PARA probability giving at most 2^-40 chance that `n_rh` activations go without a refresh.
pub fn para_probability(n_rh: u64) -> f64 {
    1.0 - (-40.0 * std::f64::consts::LN_2 / n_rh as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    None,
    /// Targeted refresh of these rows in the activated bank.
    Refresh(Vec<u32>),
    /// One DRAM-resident counter read-modify-write, then optionally a refresh.
    CounterAccess(Option<Vec<u32>>),
}

/// A controller-side mitigation observing every activation.
pub trait Mitigation: Send {
    fn on_activation(&mut self, bank: BankId, row: u32, cycle: u64) -> Action;
}

/// Misra-Gries frequent-item tracker per bank.
#[derive(Debug, Clone)]
pub struct Graphene {
    entries: usize,
    threshold: u64,
    window: u64,
    window_end: u64,
    rows: u32,
    tables: Vec<MisraGries>,
}

#[derive(Debug, Clone, Default)]
pub struct MisraGries {
    pub counts: HashMap<u32, u64>,
    pub spillover: u64,
}

impl MisraGries {
    /// Count one occurrence; returns the row's estimated count.
    pub fn observe(&mut self, row: u32, capacity: usize) -> u64 {
        if let Some(c) = self.counts.get_mut(&row) {
            *c += 1;
            return *c;
        }
        if self.counts.len() < capacity {
            self.counts.insert(row, self.spillover + 1);
            return self.spillover + 1;
        }
        // Replace an entry sitting at the spillover floor, or raise the floor.
        let floor = self.spillover;
        let victim = self.counts.iter().filter(|(_, &c)| c == floor).map(|(&r, _)| r).min();
        match victim {
            Some(v) => {
                self.counts.remove(&v);
                self.counts.insert(row, floor + 1);
                floor + 1
            }
            None => {
                self.spillover += 1;
                self.spillover
            }
        }
    }
}

impl Graphene {
    pub fn new(topo: &Topology, entries: u64, threshold: u64, window_cycles: u64) -> Self {
        Self {
            entries: entries as usize,
            threshold,
            window: window_cycles,
            window_end: window_cycles,
            rows: topo.rows_per_bank,
            tables: vec![MisraGries::default(); topo.total_banks() as usize],
        }
    }
}

impl Mitigation for Graphene {
    fn on_activation(&mut self, bank: BankId, row: u32, cycle: u64) -> Action {
        while cycle >= self.window_end {
            self.tables.iter_mut().for_each(|t| *t = MisraGries::default());
            self.window_end += self.window;
        }
        let est = self.tables[bank.0 as usize].observe(row, self.entries);
        if est % self.threshold == 0 {
            Action::Refresh(victims_of(row, self.rows).collect())
        } else {
            Action::None
        }
    }
}

/// Group counters in the controller; per-row counters live in DRAM and are cached.
#[derive(Debug, Clone)]
pub struct Hydra {
    rows_per_group: u64,
    group_threshold: u64,
    row_threshold: u64,
    rcc_entries: usize,
    rows: u32,
    window: u64,
    window_end: u64,
    gct: HashMap<u64, u64>,
    /// Authoritative DRAM-resident row counters.
    rct: HashMap<(u32, u32), u64>,
    rcc: Vec<(u32, u32)>,
    pub counter_traffic: u64,
}

impl Hydra {
    pub fn new(topo: &Topology, gct_entries: u64, rcc_entries: u64, group_threshold: u64, row_threshold: u64, window_cycles: u64) -> Self {
        Self {
            rows_per_group: topo.rows_total().div_ceil(gct_entries).max(1),
            group_threshold,
            row_threshold,
            rcc_entries: rcc_entries as usize,
            rows: topo.rows_per_bank,
            window: window_cycles,
            window_end: window_cycles,
            gct: HashMap::new(),
            rct: HashMap::new(),
            rcc: Vec::new(),
            counter_traffic: 0,
        }
    }

    fn group_of(&self, bank: BankId, row: u32) -> u64 {
        (bank.0 as u64 * self.rows as u64 + row as u64) / self.rows_per_group
    }
}

impl Mitigation for Hydra {
    fn on_activation(&mut self, bank: BankId, row: u32, cycle: u64) -> Action {
        while cycle >= self.window_end {
            self.gct.clear();
            self.rct.clear();
            self.rcc.clear();
            self.window_end += self.window;
        }
        let g = self.group_of(bank, row);
        let gc = self.gct.entry(g).or_insert(0);
        if *gc < self.group_threshold {
            *gc += 1;
            return Action::None;
        }
        // Group saturated: per-row tracking. Rows of the group start from the group count,
        // which can only overestimate.
        let start = *gc;
        let key = (bank.0, row);
        let c = self.rct.entry(key).or_insert(start);
        *c += 1;
        let refresh = if *c >= self.row_threshold {
            *c = 0;
            Some(victims_of(row, self.rows).collect())
        } else {
            None
        };
        match self.rcc.iter().position(|k| *k == key) {
            Some(i) => {
                let k = self.rcc.remove(i);
                self.rcc.push(k);
                refresh.map_or(Action::None, Action::Refresh)
            }
            None => {
                if self.rcc.len() >= self.rcc_entries {
                    self.rcc.remove(0);
                }
                self.rcc.push(key);
                self.counter_traffic += 1;
                Action::CounterAccess(refresh)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Para {
    probability: f64,
    rows: u32,
    rng: ChaCha8Rng,
}

impl Para {
    pub fn new(topo: &Topology, probability: f64, seed: u64) -> Self {
        Self { probability, rows: topo.rows_per_bank, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Mitigation for Para {
    fn on_activation(&mut self, _bank: BankId, row: u32, _cycle: u64) -> Action {
        if self.rng.random::<f64>() >= self.probability {
            return Action::None;
        }
        let up = self.rng.random::<bool>();
        let target = if up { row.checked_add(1).filter(|r| *r < self.rows) } else { row.checked_sub(1) };
        match target.or(if up { row.checked_sub(1) } else { Some(row + 1).filter(|r| *r < self.rows) }) {
            Some(v) => Action::Refresh(vec![v]),
            None => Action::None,
        }
    }
}

/// Build the controller-side part of a mechanism, if it has one.
pub fn build(cfg: &MitigationConfig, topo: &Topology, window_cycles: u64, seed: u64) -> Option<Box<dyn Mitigation>> {
    match cfg {
        MitigationConfig::Graphene { table_entries, threshold } => {
            Some(Box::new(Graphene::new(topo, *table_entries, *threshold, window_cycles)))
        }
        MitigationConfig::Hydra { gct_entries, rcc_entries, group_threshold, row_threshold } => Some(Box::new(
            Hydra::new(topo, *gct_entries, *rcc_entries, *group_threshold, *row_threshold, window_cycles),
        )),
        MitigationConfig::Para { probability } => Some(Box::new(Para::new(topo, *probability, seed))),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageBreakdown {
    pub cpu_bits: u64,
    pub dram_bits: u64,
}

fn log2_ceil(v: u64) -> u32 {
    v.max(1).next_power_of_two().trailing_zeros()
}

/// Storage of each mechanism's tracking state at a given threshold.
pub fn storage_cost(mech: &MitigationConfig, n_rh: u64, topo: &Topology) -> StorageBreakdown {
    let row_bits = log2_ceil(topo.rows_per_bank as u64) as u64;
    match mech {
        MitigationConfig::None => StorageBreakdown { cpu_bits: 0, dram_bits: 0 },
        MitigationConfig::PracN(_) | MitigationConfig::PracOptimistic(_) => {
            StorageBreakdown { cpu_bits: 0, dram_bits: topo.rows_total() * counter_bits(n_rh) as u64 }
        }
        MitigationConfig::Prfm(p) => StorageBreakdown {
            cpu_bits: topo.total_banks() as u64 * (log2_ceil(p.rfm_th as u64) as u64 + 1),
            dram_bits: 0,
        },
        MitigationConfig::PracPlusPrfm { prac, prfm } => {
            let a = storage_cost(&MitigationConfig::PracN(*prac), n_rh, topo);
            let b = storage_cost(&MitigationConfig::Prfm(*prfm), n_rh, topo);
            StorageBreakdown { cpu_bits: a.cpu_bits + b.cpu_bits, dram_bits: a.dram_bits + b.dram_bits }
        }
        MitigationConfig::Graphene { table_entries, threshold } => {
            let entry = row_bits + log2_ceil(*threshold) as u64 + 1;
            StorageBreakdown { cpu_bits: topo.total_banks() as u64 * table_entries * entry, dram_bits: 0 }
        }
        MitigationConfig::Hydra { gct_entries, rcc_entries, group_threshold, row_threshold } => {
            // DRAM row counters are stored byte-aligned; cached copies carry a row tag.
            let rct_bits = (log2_ceil(*row_threshold) as u64 + 1).div_ceil(8) * 8;
            let gct_bits = log2_ceil(*group_threshold) as u64 + 1;
            let tag = log2_ceil(topo.rows_total()) as u64;
            StorageBreakdown {
                cpu_bits: gct_entries * gct_bits + rcc_entries * (tag + rct_bits),
                dram_bits: topo.rows_total() * rct_bits,
            }
        }
        MitigationConfig::Para { .. } => StorageBreakdown { cpu_bits: 0, dram_bits: 0 },
    }
}
