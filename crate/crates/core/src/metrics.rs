//! Weighted speedup, energy, latency percentiles and report assembly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dram::CommandCounts;
use crate::sim::RunResult;
use crate::Error;

pub fn weighted_speedup(shared: &[f64], alone: &[f64]) -> Result<f64, Error> {
    if shared.len() != alone.len() {
        return Err(Error::Precondition("shared and alone IPC lists differ in length".into()));
    }
    if alone.iter().any(|&a| a <= 0.0) {
        return Err(Error::Precondition("alone IPC must be positive".into()));
    }
    Ok(shared.iter().zip(alone).map(|(s, a)| s / a).sum())
}

/// Per-command energies (picojoules) and background power (milliwatts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModel {
    pub act_pj: f64,
    pub pre_pj: f64,
    pub rd_pj: f64,
    pub wr_pj: f64,
    pub ref_pj: f64,
    pub rfm_pj: f64,
    pub vrr_row_pj: f64,
    pub counter_access_pj: f64,
    pub background_mw: f64,
}

impl Default for EnergyModel {
    /// Same values as `configs/energy-ddr5.toml`.
    fn default() -> Self {
        Self {
            act_pj: 2_000.0,
            pre_pj: 1_000.0,
            rd_pj: 1_600.0,
            wr_pj: 1_700.0,
            ref_pj: 490_000.0,
            rfm_pj: 245_000.0,
            vrr_row_pj: 3_000.0,
            counter_access_pj: 6_300.0,
            background_mw: 360.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub act: f64,
    pub pre: f64,
    pub rd: f64,
    pub wr: f64,
    pub refresh: f64,
    pub rfm: f64,
    pub preventive: f64,
    pub background: f64,
}

impl EnergyBreakdown {
    pub fn dynamic(&self) -> f64 {
        self.act + self.pre + self.rd + self.wr + self.refresh + self.rfm + self.preventive
    }

    pub fn total(&self) -> f64 {
        self.dynamic() + self.background
    }
}

/// Σ counts · E_cmd + P_background · runtime, in picojoules.
pub fn energy(c: &CommandCounts, m: &EnergyModel, runtime_ps: u64) -> EnergyBreakdown {
    EnergyBreakdown {
        act: c.act as f64 * m.act_pj,
        pre: c.pre as f64 * m.pre_pj,
        rd: c.rd as f64 * m.rd_pj,
        wr: c.wr as f64 * m.wr_pj,
        refresh: c.refab as f64 * m.ref_pj,
        rfm: c.rfm as f64 * m.rfm_pj,
        preventive: c.vrr_rows as f64 * m.vrr_row_pj + c.counter_accesses as f64 * m.counter_access_pj,
        // mW * ps = 1e-15 J = 1e-3 pJ
        background: m.background_mw * runtime_ps as f64 * 1e-3,
    }
}

pub const PERCENTILES: [f64; 6] = [50.0, 90.0, 95.0, 99.0, 99.9, 100.0];

/// Exact nearest-rank percentiles.
pub fn percentiles(values: &[u64], ps: &[f64]) -> Vec<u64> {
    if values.is_empty() {
        return vec![0; ps.len()];
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    ps.iter()
        .map(|p| {
            // Per-mille integer rank avoids 99.9% landing one element high.
            let per_mille = (p * 10.0).round() as usize;
            let rank = (per_mille * v.len()).div_ceil(1000);
            v[rank.clamp(1, v.len()) - 1]
        })
        .collect()
}

/// One row of a simulation results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mechanism: String,
    pub n_rh: u64,
    pub attack: String,
    pub mix_id: u32,
    pub mix_kind: String,
    /// Semicolon-separated per-core IPCs; the attacker core, if any, is last.
    pub ipc_shared: String,
    pub ipc_alone: String,
    pub weighted_speedup: f64,
    pub energy_total_pj: f64,
    pub energy_act_pj: f64,
    pub energy_pre_pj: f64,
    pub energy_rd_pj: f64,
    pub energy_wr_pj: f64,
    pub energy_ref_pj: f64,
    pub energy_rfm_pj: f64,
    pub energy_preventive_pj: f64,
    pub energy_background_pj: f64,
    pub act: u64,
    pub pre: u64,
    pub rd: u64,
    pub wr: u64,
    pub refab: u64,
    pub rfm: u64,
    pub preventive_refreshes: u64,
    pub backoffs: u64,
    pub lat_p50_ns: f64,
    pub lat_p90_ns: f64,
    pub lat_p95_ns: f64,
    pub lat_p99_ns: f64,
    pub lat_p999_ns: f64,
    pub lat_max_ns: f64,
    pub max_row_activation: u32,
    pub deadline_slack_min_cycles: u64,
    pub cpu_cycles: u64,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";")
}

pub fn split_ipcs(s: &str) -> Vec<f64> {
    s.split(';').filter(|x| !x.is_empty()).filter_map(|x| x.parse().ok()).collect()
}

pub struct ReportMeta<'a> {
    pub mechanism: &'a str,
    pub n_rh: u64,
    pub attack: &'a str,
    pub mix_id: u32,
    pub mix_kind: &'a str,
}

impl SimReport {
    /// `alone` holds the solo IPC of each benign core, in core order.
    pub fn from_run(run: &RunResult, alone: &[f64], meta: ReportMeta<'_>, model: &EnergyModel) -> Result<Self, Error> {
        let shared: Vec<f64> = run.cores.iter().map(|c| c.ipc).collect();
        let benign: Vec<f64> = run.cores.iter().filter(|c| c.benign).map(|c| c.ipc).collect();
        let ws = weighted_speedup(&benign, alone)?;
        let runtime_ps = run.mem_cycles * run.clock_ps;
        let e = energy(&run.counts, model, runtime_ps);
        let ns = |c: u64| round6(c as f64 * run.clock_ps as f64 / 1000.0);
        let p = percentiles(&run.read_latencies, &PERCENTILES);
        Ok(Self {
            mechanism: meta.mechanism.into(),
            n_rh: meta.n_rh,
            attack: meta.attack.into(),
            mix_id: meta.mix_id,
            mix_kind: meta.mix_kind.into(),
            ipc_shared: join(&shared),
            ipc_alone: join(alone),
            weighted_speedup: round6(ws),
            energy_total_pj: round6(e.total()),
            energy_act_pj: round6(e.act),
            energy_pre_pj: round6(e.pre),
            energy_rd_pj: round6(e.rd),
            energy_wr_pj: round6(e.wr),
            energy_ref_pj: round6(e.refresh),
            energy_rfm_pj: round6(e.rfm),
            energy_preventive_pj: round6(e.preventive),
            energy_background_pj: round6(e.background),
            act: run.counts.act,
            pre: run.counts.pre,
            rd: run.counts.rd,
            wr: run.counts.wr,
            refab: run.counts.refab,
            rfm: run.counts.rfm,
            preventive_refreshes: run.controller.preventive_refreshes,
            backoffs: run.controller.backoffs,
            lat_p50_ns: ns(p[0]),
            lat_p90_ns: ns(p[1]),
            lat_p95_ns: ns(p[2]),
            lat_p99_ns: ns(p[3]),
            lat_p999_ns: ns(p[4]),
            lat_max_ns: ns(p[5]),
            max_row_activation: run.max_disturbance,
            deadline_slack_min_cycles: run.controller.deadline_slack.iter().copied().min().unwrap_or(0),
            cpu_cycles: run.cpu_cycles,
        })
    }

    pub fn benign_ipcs(&self) -> Vec<f64> {
        let alone = split_ipcs(&self.ipc_alone);
        split_ipcs(&self.ipc_shared).into_iter().take(alone.len()).collect()
    }
}

pub fn write_reports<W: Write>(reports: &[SimReport], w: W) -> Result<(), Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports<R: Read>(r: R) -> Result<Vec<SimReport>, Error> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|x| x.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Slowdown {
    pub avg_ws_loss: f64,
    pub max_ws_loss: f64,
    pub max_single_app_slowdown: f64,
}

/// Percentage losses of `treated` relative to `baseline`, matched by mix id.
pub fn slowdown_stats(baseline: &[SimReport], treated: &[SimReport]) -> Result<Slowdown, Error> {
    if baseline.len() != treated.len() || baseline.is_empty() {
        return Err(Error::Precondition("slowdown needs equally sized, non-empty report sets".into()));
    }
    let mut sum = 0.0;
    let mut max_ws: f64 = 0.0;
    let mut max_app: f64 = 0.0;
    for t in treated {
        let b = baseline
            .iter()
            .find(|b| b.mix_id == t.mix_id)
            .ok_or_else(|| Error::Precondition(format!("mix {} missing from baseline", t.mix_id)))?;
        let loss = 100.0 * (1.0 - t.weighted_speedup / b.weighted_speedup);
        sum += loss;
        max_ws = max_ws.max(loss);
        for (ti, bi) in t.benign_ipcs().iter().zip(b.benign_ipcs()) {
            max_app = max_app.max(100.0 * (1.0 - ti / bi));
        }
    }
    Ok(Slowdown { avg_ws_loss: sum / treated.len() as f64, max_ws_loss: max_ws, max_single_app_slowdown: max_app })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ws_identities() {
        assert_eq!(weighted_speedup(&[1.0, 2.0, 0.5, 3.0], &[1.0, 2.0, 0.5, 3.0]).unwrap(), 4.0);
        assert_eq!(weighted_speedup(&[0.7], &[0.7]).unwrap(), 1.0);
        assert_eq!(weighted_speedup(&[0.5, 1.0, 0.25, 2.0], &[1.0, 2.0, 0.5, 4.0]).unwrap(), 2.0);
        assert!(weighted_speedup(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn energy_is_linear() {
        let m = EnergyModel::default();
        assert_eq!(energy(&CommandCounts::default(), &m, 0).total(), 0.0);
        let c = CommandCounts { act: 10, pre: 10, rd: 7, wr: 3, refab: 2, rfm: 1, vrr_rows: 4, counter_accesses: 1 };
        let d = CommandCounts { act: 20, pre: 20, rd: 14, wr: 6, refab: 4, rfm: 2, vrr_rows: 8, counter_accesses: 2 };
        let (a, b) = (energy(&c, &m, 1000), energy(&d, &m, 1000));
        assert_eq!(2.0 * a.dynamic(), b.dynamic());
        assert_eq!(a.background, b.background);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=1000).collect();
        assert_eq!(percentiles(&v, &PERCENTILES), [500, 900, 950, 990, 999, 1000]);
        assert_eq!(percentiles(&[], &[50.0]), [0]);
    }
}
