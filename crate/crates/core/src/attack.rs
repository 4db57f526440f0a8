//! Adversarial traces (wave attack, performance-degradation attack) and the
//! theoretical throughput the preventive refreshes consume.

use serde::{Deserialize, Serialize};

use crate::controller::{compose_address, ControllerConfig, DramAddr};
use crate::dram::{BankId, DeviceEvent, RowCounters, Topology, Violation};
use crate::mitigations::MitigationConfig;
use crate::security::{self, Cadence, MaxActBudget, PracParams, PrfmParams};
use crate::sim::SystemSetup;
use crate::workloads::{Trace, TraceRecord};
use crate::{Error, Ps, TimingParams};

/// The mechanism an analysis-level attack is aimed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "kebab-case")]
pub enum Target {
    Prfm(PrfmParams),
    Prac(PracParams),
}

impl Target {
    pub fn from_mitigation(m: &MitigationConfig) -> Result<Self, Error> {
        match m {
            MitigationConfig::Prfm(p) => Ok(Target::Prfm(*p)),
            MitigationConfig::PracN(p) => Ok(Target::Prac(*p)),
            other => Err(Error::Config(format!("the wave attack targets prfm or prac-n, not {}", other.name()))),
        }
    }

    pub fn cadence(&self, t: &TimingParams) -> Result<Cadence, Error> {
        match self {
            Target::Prfm(p) => p.cadence(),
            Target::Prac(p) => p.cadence(t),
        }
    }

    pub fn budget(&self, t: &TimingParams) -> Result<MaxActBudget, Error> {
        match self {
            Target::Prfm(p) => security::max_act_budget(t, p),
            Target::Prac(p) => p.budget(t),
        }
    }

    /// Activations each decoy row gets before the wave starts in the analysis.
    pub fn canonical_priming(&self) -> u64 {
        match self {
            Target::Prfm(_) => 0,
            Target::Prac(p) => p.abo_th as u64 - 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Consumption {
    pub t_available: Ps,
    pub t_attack_period: Ps,
    /// Picoseconds spent on preventive refreshes per window.
    pub t_prevent: f64,
    pub fraction: f64,
}

/// Share of the refresh window an attacker can fill with preventive refreshes.
pub fn theoretical_consumption(t: &TimingParams, target: &Target) -> Result<Consumption, Error> {
    t.validate()?;
    let (period, blocked) = match target {
        Target::Prfm(p) => {
            p.validate()?;
            (p.rfm_th as u64 * t.t_rc + t.t_rfm, t.t_rfm)
        }
        Target::Prac(p) => {
            p.validate()?;
            let blocked = p.bo_n_refs as u64 * t.t_rfm;
            (p.abo_th as u64 * t.t_rc + blocked, blocked)
        }
    };
    let avail = security::t_available(t);
    let t_prevent = blocked as f64 * (avail as f64 / period as f64);
    Ok(Consumption { t_available: avail, t_attack_period: period, t_prevent, fraction: t_prevent / avail as f64 })
}

/// bo_n_refs·tRFM / (bo_n_refs·tRFM + abo_th·tRC): one back-off per abo_th activations.
pub fn steady_state_fraction(p: &PracParams, t: &TimingParams) -> f64 {
    let blocked = p.bo_n_refs as f64 * t.t_rfm as f64;
    blocked / (blocked + p.abo_th as f64 * t.t_rc as f64)
}

/// When the attacker stops hammering a row whose victims were refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    /// Keep the round's row set fixed; drop refreshed rows when the next round starts.
    #[default]
    RoundBoundary,
    /// Drop a refreshed row at once, even mid-round.
    Immediate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleOutcome {
    /// Surviving-set size at the start of every round, ending with 0 unless the budget ran out.
    pub sizes: Vec<u64>,
    pub max_activations: u64,
    pub activations: u64,
}

/// Event-driven wave attack on one bank's counters: `b0` decoy rows primed `prime`
/// times, hammered round-robin; after each refresh event the hottest rows are refreshed
/// and reset. Activations (priming included) stop at `max_act`.
pub fn wave_oracle(b0: u32, prime: u64, c: &Cadence, mode: PruneMode, max_act: u64) -> OracleOutcome {
    let n = b0 as usize;
    let mut counters = RowCounters::new(u32::MAX);
    let mut since = vec![prime; n];
    for r in 0..b0 {
        for _ in 0..prime {
            counters.increment(r);
        }
    }
    let mut alive = vec![true; n];
    let mut total = prime * b0 as u64;
    let mut best = if n > 0 { prime } else { 0 };
    let (mut s, mut events) = (0u64, 0u64);
    let mut sizes = Vec::new();
    'rounds: loop {
        let round: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
        sizes.push(round.len() as u64);
        if round.is_empty() {
            break;
        }
        let mut retired = Vec::new();
        for &r in &round {
            if mode == PruneMode::Immediate && !alive[r] {
                continue;
            }
            if total >= max_act {
                break 'rounds;
            }
            counters.increment(r as u32);
            since[r] += 1;
            best = best.max(since[r]);
            s += 1;
            total += 1;
            let due = c.events_after(s);
            while events < due {
                events += 1;
                for _ in 0..c.removed {
                    let Some((row, _)) = counters.max() else { break };
                    counters.reset(row);
                    since[row as usize] = 0;
                    match mode {
                        PruneMode::Immediate => alive[row as usize] = false,
                        PruneMode::RoundBoundary => retired.push(row as usize),
                    }
                }
            }
        }
        for r in retired {
            alive[r] = false;
        }
    }
    OracleOutcome { sizes, max_activations: best, activations: total }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Wave,
    #[serde(alias = "dos")]
    PerfDegradation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Decoy rows (wave) or hammered rows per bank (performance attack).
    pub rows_per_bank: u32,
    pub banks: u32,
    #[serde(default)]
    pub initial_priming: u32,
    pub target_mechanism: MitigationConfig,
}

impl AttackSpec {
    /// Wave attack on `b0` rows of one bank with the priming the analysis assumes.
    pub fn wave(b0: u32, target: MitigationConfig) -> Result<Self, Error> {
        let prime = Target::from_mitigation(&target)?.canonical_priming() as u32;
        Ok(Self { kind: AttackKind::Wave, rows_per_bank: b0, banks: 1, initial_priming: prime, target_mechanism: target })
    }

    pub fn perf_degradation(target: MitigationConfig) -> Self {
        Self { kind: AttackKind::PerfDegradation, rows_per_bank: 8, banks: 4, initial_priming: 0, target_mechanism: target }
    }

    pub fn validate(&self, topo: &Topology) -> Result<(), Error> {
        if self.rows_per_bank == 0 || self.banks == 0 {
            return Err(Error::Config("attack needs at least one row and one bank".into()));
        }
        if self.rows_per_bank > topo.rows_per_bank {
            return Err(Error::Config(format!("{} rows do not fit a {}-row bank", self.rows_per_bank, topo.rows_per_bank)));
        }
        if self.banks > topo.banks_per_rank() {
            return Err(Error::Config(format!("{} banks exceed the {} banks of a rank", self.banks, topo.banks_per_rank())));
        }
        if self.kind == AttackKind::Wave {
            if self.banks != 1 {
                return Err(Error::Config("the wave attack hammers a single bank".into()));
            }
            if let MitigationConfig::PracN(p) = &self.target_mechanism {
                if self.initial_priming >= p.abo_th {
                    return Err(Error::Config(format!(
                        "initial_priming {} would trigger a back-off (abo_th {})",
                        self.initial_priming, p.abo_th
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveOptions {
    pub topology: Topology,
    pub n_rh: u64,
    pub periodic_refresh: bool,
    /// REF clears the PRAC counters of the rows it refreshes.
    pub ref_resets_counters: bool,
    pub prune: PruneMode,
    /// Memory cycles to run; defaults to one refresh window.
    pub max_cycles: Option<u64>,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self {
            topology: Topology::desk(),
            n_rh: 1024,
            periodic_refresh: true,
            ref_resets_counters: true,
            prune: PruneMode::RoundBoundary,
            max_cycles: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WaveRun {
    pub trace: Trace,
    pub rows: Vec<u32>,
    pub sizes: Vec<u64>,
    pub activations: u64,
    pub rfms: u64,
    pub max_activations: u32,
    pub violation: Option<Violation>,
    /// The analysis' reachable activation count for this B_0 (canonical priming only).
    pub predicted: Option<u64>,
    pub cycles: u64,
    /// Command times of every ACT to the attacked bank.
    pub act_cycles: Vec<u64>,
}

/// Decoy rows spread over the bank, up to 2·blast_radius+1 apart.
fn decoy_rows(b0: u32, rows: u32) -> Vec<u32> {
    let stride = (rows / b0).clamp(1, 2 * security::BLAST_RADIUS + 1);
    (0..b0).map(|i| i * stride).collect()
}

/// Run the wave attack against the cycle-level controller and device, reading RFM
/// reports after every cycle to prune refreshed rows. The attacker keeps exactly one
/// request queued and the controller closes rows as soon as no request needs them,
/// so every access is an ACT.
pub fn gen_wave_trace(spec: &AttackSpec, t: &TimingParams, opts: &WaveOptions) -> Result<WaveRun, Error> {
    if spec.kind != AttackKind::Wave {
        return Err(Error::Config("gen_wave_trace needs a wave attack spec".into()));
    }
    let topo = opts.topology;
    spec.validate(&topo)?;
    let target = Target::from_mitigation(&spec.target_mechanism)?;
    let setup = SystemSetup {
        topology: topo,
        timing: *t,
        n_rh: opts.n_rh,
        mitigation: spec.target_mechanism.clone(),
        controller: ControllerConfig::default(),
        seed: 0,
        ref_resets_counters: opts.ref_resets_counters,
        log_commands: false,
    };
    let eff = setup.effective_timing()?;
    let (mut ctrl, mut dev) = setup.build()?;
    ctrl.record_events(true);
    ctrl.policy_mut().close_page = true;
    ctrl.policy_mut().refresh_enabled = opts.periodic_refresh;

    let cadence = target.cadence(&eff)?;
    let max_act = target.budget(&eff)?.max_act;
    let prime = spec.initial_priming as u64;
    let b0 = spec.rows_per_bank;
    let predicted = (prime == target.canonical_priming())
        .then(|| security::reachable_activations(b0 as u64, prime, &cadence, max_act, u64::MAX));
    let rows = decoy_rows(b0, topo.rows_per_bank);
    let bank = BankId(0);
    let window = opts.max_cycles.unwrap_or(eff.cycles().refw);

    let mut priming: Vec<usize> = (0..b0 as usize).flat_map(|i| std::iter::repeat(i).take(prime as usize)).rev().collect();
    let mut alive = vec![true; b0 as usize];
    let mut round: Vec<usize> = Vec::new();
    let mut pos = 0usize;
    let mut retired: Vec<usize> = Vec::new();
    let mut sizes = Vec::new();
    let mut records = Vec::new();
    let mut act_cycles = Vec::new();
    let mut finished = false;
    let mut submitted = 0u64;
    let mut done = Vec::new();
    let mut now = 0u64;
    while now < window {
        let acts_before = dev.counts.act;
        ctrl.tick(now, &mut dev)?;
        if dev.counts.act > acts_before && dev.open_row(bank).is_some() {
            act_cycles.push(now);
        }
        for ev in ctrl.device_events.drain(..) {
            let DeviceEvent::Rfm { refreshed, .. } = ev else { continue };
            for (b, row) in refreshed {
                if b != bank {
                    continue;
                }
                if let Some(i) = rows.iter().position(|&r| r == row) {
                    match opts.prune {
                        PruneMode::Immediate => alive[i] = false,
                        PruneMode::RoundBoundary => retired.push(i),
                    }
                }
            }
        }
        done.clear();
        ctrl.drain_completed(now, &mut done);
        if finished {
            if ctrl.pending() == 0 {
                break;
            }
        } else if ctrl.queued() == 0 && dev.open_row(bank).is_none() && !ctrl.maintenance_due(0) {
            if submitted >= max_act {
                finished = true;
            } else {
                let next = match priming.pop() {
                    Some(i) => Some(i),
                    None => loop {
                        while pos < round.len() && opts.prune == PruneMode::Immediate && !alive[round[pos]] {
                            pos += 1;
                        }
                        if pos < round.len() {
                            pos += 1;
                            break Some(round[pos - 1]);
                        }
                        for i in retired.drain(..) {
                            alive[i] = false;
                        }
                        round = (0..b0 as usize).filter(|&i| alive[i]).collect();
                        pos = 0;
                        sizes.push(round.len() as u64);
                        if round.is_empty() {
                            break None;
                        }
                    },
                };
                match next {
                    Some(i) => {
                        let (rank, bankgroup, b) = topo.split(bank);
                        let column = (submitted % topo.columns as u64) as u32;
                        let addr = DramAddr { channel: 0, rank, bankgroup, bank: b, row: rows[i], column };
                        let address = compose_address(&addr, &topo);
                        submitted += 1;
                        ctrl.enqueue(crate::controller::Request {
                            id: submitted,
                            core: 0,
                            is_write: false,
                            bank,
                            row: rows[i],
                            column,
                            arrival: now,
                        });
                        records.push(TraceRecord { bubble_count: 0, is_write: false, address });
                    }
                    None => finished = true,
                }
            }
        }
        now += 1;
    }
    Ok(WaveRun {
        trace: Trace { records },
        rows,
        sizes,
        activations: dev.counts.act,
        rfms: dev.counts.rfm,
        max_activations: dev.max_disturbance(),
        violation: dev.first_violation(),
        predicted,
        cycles: now,
        act_cycles,
    })
}

/// (bank, row) targets of the performance attack: banks spread over bank groups first.
pub fn perf_targets(spec: &AttackSpec, topo: &Topology) -> Vec<(BankId, u32)> {
    let stride = (topo.rows_per_bank / spec.rows_per_bank).max(1);
    let mut out = Vec::with_capacity((spec.banks * spec.rows_per_bank) as usize);
    for j in 0..spec.rows_per_bank {
        for k in 0..spec.banks {
            let bg = k % topo.bankgroups;
            let b = (k / topo.bankgroups) % topo.banks_per_group;
            out.push((topo.bank_id(0, bg, b), j * stride));
        }
    }
    out
}

/// Single-core trace cycling through `banks × rows_per_bank` row-conflicting targets:
/// consecutive accesses to one bank always open a different row. Each bank gets one
/// access per tRC of `duration` (memory cycles).
pub fn gen_perf_attack_trace(spec: &AttackSpec, t: &TimingParams, duration: u64, topo: &Topology) -> Result<Trace, Error> {
    if spec.kind != AttackKind::PerfDegradation {
        return Err(Error::Config("gen_perf_attack_trace needs a perf_degradation spec".into()));
    }
    spec.validate(topo)?;
    let rc = t.cycles().rc;
    let rotation = spec.rows_per_bank as u64 * rc;
    if duration < rotation {
        return Err(Error::Config(format!("duration {duration} cycles is shorter than one rotation ({rotation} cycles)")));
    }
    let targets = perf_targets(spec, topo);
    let n = spec.banks as u64 * duration.div_ceil(rc);
    let records = (0..n)
        .map(|i| {
            let (bank, row) = targets[(i % targets.len() as u64) as usize];
            let (rank, bankgroup, b) = topo.split(bank);
            let column = ((i / targets.len() as u64) % topo.columns as u64) as u32;
            let address = compose_address(&DramAddr { channel: 0, rank, bankgroup, bank: b, row, column }, topo);
            TraceRecord { bubble_count: 0, is_write: false, address }
        })
        .collect();
    Ok(Trace { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::DESK_REFS_PER_WINDOW;
    use crate::security::{prfm_trajectory, trajectory};

    fn appendix() -> TimingParams {
        TimingParams::preset("analysis-appendix").unwrap()
    }

    #[test]
    fn consumption_figures() {
        let t = appendix();
        let c = theoretical_consumption(&t, &Target::Prfm(PrfmParams::new(6))).unwrap();
        assert_eq!(c.t_attack_period, 577_000);
        assert_eq!(c.t_available, 29_579_487_180);
        let p = theoretical_consumption(&t, &Target::Prac(PracParams::new(57, 4, 1))).unwrap();
        assert_eq!(p.t_attack_period, 3_859_000);
        let mut s = TimingParams::preset("ddr5-3200an-prac").unwrap();
        s.t_rfm = 350_000;
        assert!((steady_state_fraction(&PracParams::new(7, 4, 1), &s) - 1400.0 / 1764.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_spec_example() {
        let c = PrfmParams::new(4).cadence().unwrap();
        let o = wave_oracle(8, 0, &c, PruneMode::RoundBoundary, u64::MAX);
        assert_eq!(o.sizes, prfm_trajectory(8, &PrfmParams::new(4), 64).unwrap().sizes);
        assert_eq!(o.sizes, [8, 6, 5, 4, 3, 2, 1, 1, 1, 1, 0]);
        assert_eq!(o.max_activations, 10);
        let c = Cadence::every(5, 4);
        assert_eq!(wave_oracle(13, 2, &c, PruneMode::RoundBoundary, u64::MAX).sizes, trajectory(13, &c, 100).sizes);
    }

    #[test]
    fn prac4_minimal_config_reaches_nine() {
        let t = TimingParams::preset("ddr5-3200an-prac").unwrap();
        let p = PracParams::new(1, 4, 1);
        let c = p.cadence(&t).unwrap();
        let max_act = p.budget(&t).unwrap().max_act;
        // The peak is a rounding effect of the 58/13 cadence and needs thousands of rows.
        let o = wave_oracle(7986, 0, &c, PruneMode::RoundBoundary, max_act);
        assert_eq!(o.max_activations, 9);
        for b0 in [1, 9, 22, 85, 821, 5000] {
            assert!(wave_oracle(b0, 0, &c, PruneMode::RoundBoundary, max_act).max_activations <= 9);
        }
        // With priming >= 2 ties never land on retired rows and every round matches.
        for b0 in [1, 9, 22, 85, 821, 8041] {
            let o = wave_oracle(b0, 2, &c, PruneMode::RoundBoundary, u64::MAX);
            assert_eq!(o.sizes, trajectory(b0 as u64, &c, 64).sizes, "b0 {b0}");
        }
    }

    fn desk_base() -> TimingParams {
        TimingParams::preset("ddr5-3200an-base").unwrap().with_refresh_commands_per_window(DESK_REFS_PER_WINDOW).unwrap()
    }

    #[test]
    fn timed_prfm_wave_reproduces_trajectory() {
        let spec = AttackSpec::wave(8, MitigationConfig::Prfm(PrfmParams::new(4))).unwrap();
        let opts = WaveOptions { periodic_refresh: false, ..Default::default() };
        let run = gen_wave_trace(&spec, &desk_base(), &opts).unwrap();
        assert_eq!(run.sizes, [8, 6, 5, 4, 3, 2, 1, 1, 1, 1, 0]);
        assert_eq!(run.max_activations as u64, run.predicted.unwrap());
        assert_eq!(run.rfms, run.activations / 4);
        let rc = desk_base().cycles().rc;
        assert!(run.act_cycles.windows(2).all(|w| w[1] - w[0] >= rc));
    }

    #[test]
    fn lone_row_against_prac_backs_off_after_abo_th() {
        let p = PracParams::new(5, 4, 1);
        let spec = AttackSpec::wave(1, MitigationConfig::PracN(p)).unwrap();
        let opts = WaveOptions { periodic_refresh: false, ..Default::default() };
        let run = gen_wave_trace(&spec, &desk_base(), &opts).unwrap();
        // Priming plus the first wave activation reach abo_th before any recovery.
        assert!(run.max_activations >= 5);
        assert_eq!(run.sizes.last(), Some(&0));
        assert!(run.rfms >= 1);
    }

    /// A REF block can end between an aggressor and its victims: the counter is cleared
    /// but two victims are not refreshed, so the row keeps hammering them.
    #[test]
    fn ref_counter_reset_can_hide_an_aggressor() {
        let p = PracParams::new(19, 1, 1);
        let prac = desk_base().apply_prac_adjustments().unwrap();
        assert!(crate::security::is_secure_prac(32, &p, &prac, 64).unwrap().is_secure());
        let spec = AttackSpec::wave(7, MitigationConfig::PracN(p)).unwrap();
        let run = |reset| {
            gen_wave_trace(&spec, &desk_base(), &WaveOptions { n_rh: 32, ref_resets_counters: reset, ..Default::default() })
                .unwrap()
        };
        let with_reset = run(true);
        let v = with_reset.violation.expect("witness");
        assert_eq!((v.aggressor, v.activations), (15, 32));
        let without = run(false);
        assert!(without.violation.is_none() && without.max_activations < 32);
    }

    #[test]
    fn perf_trace_shape() {
        let topo = Topology::default();
        let spec = AttackSpec::perf_degradation(MitigationConfig::None);
        let t = TimingParams::preset("ddr5-3200an-base").unwrap();
        let tr = gen_perf_attack_trace(&spec, &t, 10_000, &topo).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let mut last_row = std::collections::HashMap::new();
        for (i, r) in tr.records.iter().enumerate() {
            let a = crate::controller::map_address(r.address, &topo).unwrap();
            let b = topo.bank_id(a.rank, a.bankgroup, a.bank);
            assert_eq!(b, perf_targets(&spec, &topo)[i % 4 + 4 * ((i / 4) % 8)].0);
            if let Some(prev) = last_row.insert(b, a.row) {
                assert_ne!(prev, a.row);
            }
            seen.insert((b, a.row));
        }
        assert_eq!(seen.len(), 32);
        assert!(gen_perf_attack_trace(&spec, &t, 10, &topo).is_err());
    }
}
