//! Whole-system simulation: cores, controller and device advanced in lockstep.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controller::{map_address, Controller, ControllerConfig, ControllerPolicy, Request};
use crate::dram::{BackOffParams, CommandCounts, Device, DeviceConfig, Topology, Violation};
use crate::mitigations::{self, MitigationConfig};
use crate::workloads::Trace;
use crate::{Error, TimingParams};

pub const RETIRE_WIDTH: usize = 4;
pub const WINDOW: usize = 128;
/// Core clock in MHz.
pub const CPU_MHZ: u64 = 4_200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopCondition {
    pub instructions: u64,
    /// Core cycles.
    pub max_cycles: u64,
}

impl StopCondition {
    pub fn desk() -> Self {
        Self { instructions: 100_000, max_cycles: 3_000_000 }
    }
}

/// Everything needed to build one simulated channel.
#[derive(Debug, Clone)]
pub struct SystemSetup {
    pub topology: Topology,
    /// Timing as configured, before any mechanism-specific adjustment.
    pub timing: TimingParams,
    pub n_rh: u64,
    pub mitigation: MitigationConfig,
    pub controller: ControllerConfig,
    pub seed: u64,
    pub ref_resets_counters: bool,
    pub log_commands: bool,
}

impl SystemSetup {
    /// Timing the device runs with: PRAC-adjusted for PRAC-N and PRAC+PRFM only.
    pub fn effective_timing(&self) -> Result<TimingParams, Error> {
        if self.mitigation.uses_prac_timing() && !self.timing.is_prac_adjusted() {
            self.timing.apply_prac_adjustments()
        } else {
            Ok(self.timing)
        }
    }

    pub fn build(&self) -> Result<(Controller, Device), Error> {
        self.topology.validate()?;
        self.controller.validate()?;
        self.mitigation.validate(self.n_rh)?;
        let t = self.effective_timing()?;
        let prac = self.mitigation.prac().map(|p| BackOffParams { abo_th: p.abo_th, bo_n_refs: p.bo_n_refs, bo_n_acts: p.bo_n_acts });
        let dev = Device::new(DeviceConfig {
            topology: self.topology,
            timing: t.cycles(),
            refs_per_window: t.refs_per_window(),
            n_rh: self.n_rh,
            prac,
            ref_resets_counters: self.ref_resets_counters,
            log_commands: self.log_commands,
        });
        let policy = ControllerPolicy {
            rfm_th: self.mitigation.prfm().map(|p| p.rfm_th as u64),
            bo_n_refs: prac.map_or(0, |p| p.bo_n_refs),
            refresh_enabled: true,
            use_same_bank_rfm: false,
            close_page: false,
        };
        let m = mitigations::build(&self.mitigation, &self.topology, t.cycles().refw, self.seed);
        let ctrl = Controller::new(self.controller, policy, &dev, m);
        Ok((ctrl, dev))
    }
}

#[derive(Debug, Clone)]
pub struct CoreSpec {
    pub trace: Arc<Trace>,
    /// Benign cores must reach the instruction target; others run until the end.
    pub benign: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoreResult {
    pub instructions: u64,
    pub cycles: u64,
    pub ipc: f64,
    pub benign: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub cores: Vec<CoreResult>,
    pub cpu_cycles: u64,
    pub mem_cycles: u64,
    pub counts: CommandCounts,
    pub controller: crate::controller::ControllerStats,
    /// Read latencies in memory cycles.
    pub read_latencies: Vec<u64>,
    pub max_disturbance: u32,
    pub violation: Option<Violation>,
    pub counter_conservation: (u64, u64, u64),
    pub clock_ps: u64,
}

struct Core {
    trace: Arc<Trace>,
    pos: usize,
    bubbles_left: u32,
    /// 0 = completed; otherwise the id of an outstanding read.
    window: VecDeque<u64>,
    retired: u64,
    finished: Option<(u64, u64)>,
    benign: bool,
}

impl Core {
    fn new(spec: &CoreSpec) -> Self {
        let bubbles_left = spec.trace.records.first().map_or(0, |r| r.bubble_count);
        Self { trace: spec.trace.clone(), pos: 0, bubbles_left, window: VecDeque::with_capacity(WINDOW), retired: 0, finished: None, benign: spec.benign }
    }

    #[allow(clippy::too_many_arguments)]
    fn tick(&mut self, idx: u32, cycle: u64, now_mem: u64, ctrl: &mut Controller, topo: &Topology, next_id: &mut u64, target: u64) -> Result<(), Error> {
        for _ in 0..RETIRE_WIDTH {
            if self.window.len() >= WINDOW {
                break;
            }
            if self.trace.records.is_empty() || self.bubbles_left > 0 {
                self.bubbles_left = self.bubbles_left.saturating_sub(1);
                self.window.push_back(0);
                continue;
            }
            let rec = self.trace.records[self.pos];
            if !ctrl.can_accept(rec.is_write) {
                break;
            }
            let a = map_address(rec.address, topo)?;
            *next_id += 1;
            let req = Request {
                id: *next_id,
                core: idx,
                is_write: rec.is_write,
                bank: topo.bank_id(a.rank, a.bankgroup, a.bank),
                row: a.row,
                column: a.column,
                arrival: now_mem,
            };
            ctrl.enqueue(req);
            self.window.push_back(if rec.is_write { 0 } else { req.id });
            self.pos = (self.pos + 1) % self.trace.records.len();
            self.bubbles_left = self.trace.records[self.pos].bubble_count;
        }
        for _ in 0..RETIRE_WIDTH {
            match self.window.front() {
                Some(0) => {
                    self.window.pop_front();
                    self.retired += 1;
                }
                _ => break,
            }
        }
        if self.finished.is_none() && self.retired >= target {
            self.finished = Some((cycle + 1, self.retired));
        }
        Ok(())
    }

    fn complete(&mut self, id: u64) {
        if let Some(slot) = self.window.iter_mut().find(|s| **s == id) {
            *slot = 0;
        }
    }
}

/// Run cores against one channel until every benign core reaches the instruction target
/// or the core-cycle cap is hit.
pub fn run_cores(setup: &SystemSetup, cores: &[CoreSpec], stop: StopCondition) -> Result<RunResult, Error> {
    let (mut ctrl, mut dev) = setup.build()?;
    for c in cores {
        c.trace.check_capacity(&setup.topology)?;
    }
    run_with(&mut ctrl, &mut dev, setup, cores, stop)
}

pub fn run_with(ctrl: &mut Controller, dev: &mut Device, setup: &SystemSetup, cores: &[CoreSpec], stop: StopCondition) -> Result<RunResult, Error> {
    let topo = setup.topology;
    let clock_ps = setup.effective_timing()?.clock_period;
    let mut state: Vec<Core> = cores.iter().map(Core::new).collect();
    let mut next_id = 0u64;
    let mut done = Vec::new();
    let mut latencies = Vec::new();
    let mut cpu_cycle = 0u64;
    let mut mem = 0u64;
    let mut acc = 0u64;
    let step = clock_ps * CPU_MHZ;
    'outer: loop {
        ctrl.tick(mem, dev)?;
        done.clear();
        ctrl.drain_completed(mem, &mut done);
        for (t, r) in &done {
            latencies.push(t - r.arrival);
            state[r.core as usize].complete(r.id);
        }
        acc += step;
        while acc >= 1_000_000 {
            acc -= 1_000_000;
            for (i, c) in state.iter_mut().enumerate() {
                c.tick(i as u32, cpu_cycle, mem, ctrl, &topo, &mut next_id, stop.instructions)?;
            }
            cpu_cycle += 1;
            let all = state.iter().filter(|c| c.benign).all(|c| c.finished.is_some());
            if all || cpu_cycle >= stop.max_cycles {
                break 'outer;
            }
        }
        mem += 1;
    }
    let cores = state
        .iter()
        .map(|c| {
            let (cycles, instructions) = c.finished.unwrap_or((cpu_cycle, c.retired));
            CoreResult { instructions, cycles, ipc: instructions as f64 / cycles.max(1) as f64, benign: c.benign }
        })
        .collect();
    Ok(RunResult {
        cores,
        cpu_cycles: cpu_cycle,
        mem_cycles: mem + 1,
        counts: dev.counts,
        controller: ctrl.stats.clone(),
        read_latencies: latencies,
        max_disturbance: dev.max_disturbance(),
        violation: dev.first_violation(),
        counter_conservation: dev.counter_conservation(),
        clock_ps,
    })
}
