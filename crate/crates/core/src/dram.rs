//! Command-level DDR5 device model.
//!
//! The device owns bank state, per-row activation counters (PRAC), the per-rank
//! refresh pointer and the Alert Back-Off state machine. Every command is checked
//! against the timing constraints; an illegal command is rejected with the violated
//! constraint and its slack. A victim-centric disturbance tracker runs alongside as
//! ground truth for the safety checks.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::security::BLAST_RADIUS;
use crate::timing::CycleTimings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub channels: u32,
    pub ranks: u32,
    pub bankgroups: u32,
    pub banks_per_group: u32,
    pub rows_per_bank: u32,
    /// 64-byte blocks per row.
    pub columns: u32,
}

/// REF commands per refresh window used with [`Topology::desk`]: 64 rows, 8 per REF.
pub const DESK_REFS_PER_WINDOW: u64 = 8;

impl Default for Topology {
    fn default() -> Self {
        Self { channels: 1, ranks: 2, bankgroups: 8, banks_per_group: 4, rows_per_bank: 65_536, columns: 128 }
    }
}

impl Topology {
    /// Same organization with 64 rows per bank, small enough for exhaustive checks.
    pub fn desk() -> Self {
        Self { rows_per_bank: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), crate::Error> {
        let fields = [
            ("channels", self.channels),
            ("ranks", self.ranks),
            ("bankgroups", self.bankgroups),
            ("banks_per_group", self.banks_per_group),
            ("rows_per_bank", self.rows_per_bank),
            ("columns", self.columns),
        ];
        for (name, v) in fields {
            if v == 0 || !v.is_power_of_two() {
                return Err(crate::Error::Config(format!("topology.{name} must be a power of two (got {v})")));
            }
        }
        if self.channels != 1 {
            return Err(crate::Error::Config("only single-channel systems are modeled".into()));
        }
        if self.rows_per_bank < 8 {
            return Err(crate::Error::Config("topology.rows_per_bank must be >= 8".into()));
        }
        Ok(())
    }

    pub fn banks_per_rank(&self) -> u32 {
        self.bankgroups * self.banks_per_group
    }

    pub fn total_banks(&self) -> u32 {
        self.ranks * self.banks_per_rank()
    }

    pub fn rows_total(&self) -> u64 {
        self.total_banks() as u64 * self.rows_per_bank as u64
    }

    pub fn bank_id(&self, rank: u32, bankgroup: u32, bank: u32) -> BankId {
        BankId((rank * self.bankgroups + bankgroup) * self.banks_per_group + bank)
    }

    /// (rank, bankgroup, bank)
    pub fn split(&self, b: BankId) -> (u32, u32, u32) {
        let bank = b.0 % self.banks_per_group;
        let bg = (b.0 / self.banks_per_group) % self.bankgroups;
        (b.0 / self.banks_per_rank(), bg, bank)
    }

    pub fn rank_of(&self, b: BankId) -> u32 {
        b.0 / self.banks_per_rank()
    }

    pub fn banks_of_rank(&self, rank: u32) -> std::ops::Range<u32> {
        rank * self.banks_per_rank()..(rank + 1) * self.banks_per_rank()
    }
}

/// Flat bank index across the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BankId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Act { bank: BankId, row: u32 },
    Pre { bank: BankId },
    Rd { bank: BankId, column: u32 },
    Wr { bank: BankId, column: u32 },
    Ref { rank: u32 },
    RfmAb { rank: u32 },
    /// Same-bank RFM: the bank with index `bank` in every bank group of `rank`.
    RfmSb { rank: u32, bank: u32 },
    /// Targeted refresh of specific rows, used by controller-side mitigations.
    Vrr { bank: BankId, rows: Vec<u32> },
    /// Read-modify-write of a DRAM-resident mitigation counter.
    CounterAccess { bank: BankId },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Act { .. } => "ACT",
            Command::Pre { .. } => "PRE",
            Command::Rd { .. } => "RD",
            Command::Wr { .. } => "WR",
            Command::Ref { .. } => "REF",
            Command::RfmAb { .. } => "RFMab",
            Command::RfmSb { .. } => "RFMsb",
            Command::Vrr { .. } => "VRR",
            Command::CounterAccess { .. } => "CTR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ProtocolViolation {
    pub constraint: &'static str,
    pub command: &'static str,
    pub cycle: u64,
    /// Earliest legal cycle; equals `cycle` for state (not timing) violations.
    pub earliest: u64,
}

impl ProtocolViolation {
    pub fn slack(&self) -> u64 {
        self.earliest.saturating_sub(self.cycle)
    }
}

impl fmt::Display for ProtocolViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at cycle {} violates {} (legal from cycle {}, short by {})",
            self.command,
            self.cycle,
            self.constraint,
            self.earliest,
            self.slack()
        )
    }
}

/// Per-row activation counters of one bank, with O(log n) access to the hottest row.
#[derive(Debug, Clone, Default)]
pub struct RowCounters {
    counts: HashMap<u32, u32>,
    order: BTreeSet<(u32, Reverse<u32>)>,
    saturation: u32,
}

impl RowCounters {
    pub fn new(saturation: u32) -> Self {
        Self { saturation, ..Default::default() }
    }

    pub fn get(&self, row: u32) -> u32 {
        self.counts.get(&row).copied().unwrap_or(0)
    }

    /// Increment, saturating. Returns the new value.
    pub fn increment(&mut self, row: u32) -> u32 {
        let old = self.get(row);
        let new = (old + 1).min(self.saturation);
        if new != old {
            self.order.remove(&(old, Reverse(row)));
            self.order.insert((new, Reverse(row)));
            self.counts.insert(row, new);
        }
        new
    }

    /// Clear a row's counter. Returns the previous value.
    pub fn reset(&mut self, row: u32) -> u32 {
        match self.counts.remove(&row) {
            Some(old) => {
                self.order.remove(&(old, Reverse(row)));
                old
            }
            None => 0,
        }
    }

    /// The row with the largest counter; ties go to the lowest row index.
    pub fn max(&self) -> Option<(u32, u32)> {
        self.order.last().map(|&(c, Reverse(r))| (r, c))
    }

    pub fn sum(&self) -> u64 {
        self.counts.values().map(|&c| c as u64).sum()
    }

    pub fn nonzero(&self) -> usize {
        self.counts.len()
    }
}

/// Bits of a saturating per-row counter for a given threshold.
pub fn counter_bits(n_rh: u64) -> u32 {
    n_rh.max(2).next_power_of_two().trailing_zeros() + 1
}

/// Victim-centric ground truth: how many times each aggressor was activated since each
/// of its victims was last refreshed.
#[derive(Debug, Clone, Default)]
struct Disturbance {
    acts: HashMap<u32, u32>,
    /// victim -> aggressor activation counts (offsets -2, -1, +1, +2) at its last refresh
    snaps: HashMap<u32, [u32; 4]>,
}

const OFFSETS: [i64; 4] = [-2, -1, 1, 2];

impl Disturbance {
    fn act(&mut self, row: u32, rows: u32) -> u32 {
        let a = self.acts.entry(row).or_insert(0);
        *a += 1;
        let a = *a;
        let mut worst = 0;
        for (slot, off) in OFFSETS.iter().enumerate() {
            // victim v = row - off sees this aggressor at offset `off`
            let v = row as i64 - off;
            if v < 0 || v >= rows as i64 {
                continue;
            }
            let base = self.snaps.get(&(v as u32)).map_or(0, |s| s[slot]);
            worst = worst.max(a - base);
        }
        worst
    }

    fn refresh(&mut self, victim: u32, rows: u32) {
        let mut snap = [0u32; 4];
        for (slot, off) in OFFSETS.iter().enumerate() {
            let n = victim as i64 + off;
            if n >= 0 && n < rows as i64 {
                snap[slot] = self.acts.get(&(n as u32)).copied().unwrap_or(0);
            }
        }
        if snap == [0; 4] {
            self.snaps.remove(&victim);
        } else {
            self.snaps.insert(victim, snap);
        }
    }
}

pub fn victims_of(row: u32, rows: u32) -> impl Iterator<Item = u32> {
    let r = BLAST_RADIUS as i64;
    (-r..=r).filter(|&o| o != 0).filter_map(move |o| {
        let v = row as i64 + o;
        (v >= 0 && v < rows as i64).then_some(v as u32)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackOffParams {
    pub abo_th: u32,
    pub bo_n_refs: u32,
    pub bo_n_acts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackOffPhase {
    Idle,
    /// Alert raised; recovery must start by `deadline`.
    Window { deadline: u64 },
    Recovery { remaining: u32 },
    Delay { remaining: u32 },
}

#[derive(Debug, Clone)]
pub struct DeviceConfig {
    pub topology: Topology,
    pub timing: CycleTimings,
    pub refs_per_window: u64,
    pub n_rh: u64,
    pub prac: Option<BackOffParams>,
    pub ref_resets_counters: bool,
    pub log_commands: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceEvent {
    /// Back-off asserted on `rank`; the controller observes it at `visible_at`.
    BackOff { rank: u32, visible_at: u64, deadline: u64 },
    /// One entry per bank covered by an RFM: the aggressor whose victims were refreshed.
    Rfm { rank: u32, refreshed: Vec<(BankId, u32)> },
    Ref { rank: u32, first_row: u32, rows: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandCounts {
    pub act: u64,
    pub pre: u64,
    pub rd: u64,
    pub wr: u64,
    pub refab: u64,
    pub rfm: u64,
    pub vrr_rows: u64,
    pub counter_accesses: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub bank: BankId,
    pub aggressor: u32,
    pub activations: u32,
    pub cycle: u64,
}

#[derive(Debug, Clone)]
pub struct LogRecord {
    pub cycle: u64,
    pub command: &'static str,
    pub rank: u32,
    pub bankgroup: Option<u32>,
    pub bank: Option<u32>,
    pub row: Option<u32>,
}

#[derive(Debug, Clone)]
struct Bank {
    open_row: Option<u32>,
    act_rc: u64,
    act_rp: u64,
    pre_ras: u64,
    pre_rtp: u64,
    pre_wr: u64,
    col_rcd: u64,
    busy_until: u64,
    busy_why: &'static str,
    counters: RowCounters,
    prfm_acts: u64,
    truth: Disturbance,
}

#[derive(Debug, Clone)]
struct Rank {
    phase: BackOffPhase,
    ref_ptr: u32,
    hot_rows: u64,
    last_pre: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Device {
    cfg: DeviceConfig,
    banks: Vec<Bank>,
    ranks: Vec<Rank>,
    col_ccd: u64,
    rows_per_ref: u32,
    pub counts: CommandCounts,
    pub backoffs: u64,
    counter_increments: u64,
    counters_cleared: u64,
    max_disturbance: u32,
    first_violation: Option<Violation>,
    log: Vec<LogRecord>,
}

impl Device {
    pub fn new(cfg: DeviceConfig) -> Self {
        let sat = (1u64 << counter_bits(cfg.n_rh)).saturating_sub(1).min(u32::MAX as u64) as u32;
        let bank = Bank {
            open_row: None,
            act_rc: 0,
            act_rp: 0,
            pre_ras: 0,
            pre_rtp: 0,
            pre_wr: 0,
            col_rcd: 0,
            busy_until: 0,
            busy_why: "busy",
            counters: RowCounters::new(sat),
            prfm_acts: 0,
            truth: Disturbance::default(),
        };
        let rows = cfg.topology.rows_per_bank;
        let rows_per_ref = (rows as u64).div_ceil(cfg.refs_per_window.max(1)).max(1) as u32;
        Self {
            banks: vec![bank; cfg.topology.total_banks() as usize],
            ranks: vec![Rank { phase: BackOffPhase::Idle, ref_ptr: 0, hot_rows: 0, last_pre: None }; cfg.topology.ranks as usize],
            col_ccd: 0,
            rows_per_ref: rows_per_ref.min(rows),
            counts: CommandCounts::default(),
            backoffs: 0,
            counter_increments: 0,
            counters_cleared: 0,
            max_disturbance: 0,
            first_violation: None,
            log: Vec::new(),
            cfg,
        }
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn rows_per_ref(&self) -> u32 {
        self.rows_per_ref
    }

    pub fn open_row(&self, b: BankId) -> Option<u32> {
        self.banks[b.0 as usize].open_row
    }

    pub fn counter(&self, b: BankId, row: u32) -> u32 {
        self.banks[b.0 as usize].counters.get(row)
    }

    pub fn counters(&self, b: BankId) -> &RowCounters {
        &self.banks[b.0 as usize].counters
    }

    pub fn phase(&self, rank: u32) -> BackOffPhase {
        self.ranks[rank as usize].phase
    }

    pub fn last_pre(&self, rank: u32) -> Option<u64> {
        self.ranks[rank as usize].last_pre
    }

    pub fn prfm_acts(&self, b: BankId) -> u64 {
        self.banks[b.0 as usize].prfm_acts
    }

    /// Consume one RFM threshold's worth of the bank's activation count, if available.
    pub fn take_rfm_trigger(&mut self, b: BankId, rfm_th: u64) -> bool {
        let bank = &mut self.banks[b.0 as usize];
        if bank.prfm_acts >= rfm_th {
            bank.prfm_acts -= rfm_th;
            true
        } else {
            false
        }
    }

    /// Largest number of activations any aggressor received between two refreshes of one
    /// of its victims.
    pub fn max_disturbance(&self) -> u32 {
        self.max_disturbance
    }

    pub fn first_violation(&self) -> Option<Violation> {
        self.first_violation
    }

    /// (per-row counter increments, sum of live counters, sum of counters cleared by refresh)
    pub fn counter_conservation(&self) -> (u64, u64, u64) {
        let live = self.banks.iter().map(|b| b.counters.sum()).sum();
        (self.counter_increments, live, self.counters_cleared)
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn write_log<W: Write>(&self, w: W) -> Result<(), crate::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["cycle", "command", "rank", "bankgroup", "bank", "row"])?;
        let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.log {
            out.write_record([
                r.cycle.to_string(),
                r.command.to_string(),
                r.rank.to_string(),
                opt(r.bankgroup),
                opt(r.bank),
                opt(r.row),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    // ---- readiness queries used by the scheduler ----

    pub fn earliest_act(&self, b: BankId) -> u64 {
        let bank = &self.banks[b.0 as usize];
        bank.act_rc.max(bank.act_rp).max(bank.busy_until)
    }

    pub fn earliest_pre(&self, b: BankId) -> u64 {
        let bank = &self.banks[b.0 as usize];
        bank.pre_ras.max(bank.pre_rtp).max(bank.pre_wr)
    }

    pub fn earliest_col(&self, b: BankId) -> u64 {
        self.banks[b.0 as usize].col_rcd.max(self.col_ccd)
    }

    /// Earliest cycle at which a rank-wide command (REF/RFM) may issue, given all banks closed.
    pub fn earliest_rank_cmd(&self, rank: u32) -> u64 {
        self.cfg
            .topology
            .banks_of_rank(rank)
            .map(|b| {
                let bank = &self.banks[b as usize];
                bank.act_rp.max(bank.busy_until)
            })
            .max()
            .unwrap_or(0)
    }

    pub fn busy_until(&self, b: BankId) -> u64 {
        self.banks[b.0 as usize].busy_until
    }

    pub fn rank_closed(&self, rank: u32) -> bool {
        self.cfg.topology.banks_of_rank(rank).all(|b| self.banks[b as usize].open_row.is_none())
    }

    // ---- command issue ----

    pub fn issue(&mut self, cmd: &Command, now: u64) -> Result<Vec<DeviceEvent>, ProtocolViolation> {
        let name = cmd.name();
        let check = |ready: u64, constraint: &'static str| {
            if now < ready {
                Err(ProtocolViolation { constraint, command: name, cycle: now, earliest: ready })
            } else {
                Ok(())
            }
        };
        let state = |constraint: &'static str| ProtocolViolation { constraint, command: name, cycle: now, earliest: now };
        let t = self.cfg.timing;
        let rows = self.cfg.topology.rows_per_bank;
        let mut events = Vec::new();
        match cmd {
            Command::Act { bank, row } => {
                let rank = self.cfg.topology.rank_of(*bank) as usize;
                if matches!(self.ranks[rank].phase, BackOffPhase::Recovery { .. }) {
                    return Err(state("back-off recovery in progress"));
                }
                if *row >= rows {
                    return Err(state("row out of range"));
                }
                let b = &mut self.banks[bank.0 as usize];
                if b.open_row.is_some() {
                    return Err(state("bank already open"));
                }
                check(b.act_rc, "tRC")?;
                check(b.act_rp, "tRP")?;
                check(b.busy_until, b.busy_why)?;
                b.open_row = Some(*row);
                b.act_rc = now + t.rc;
                b.pre_ras = now + t.ras;
                b.col_rcd = now + t.rcd;
                b.prfm_acts += 1;
                let d = b.truth.act(*row, rows);
                self.counts.act += 1;
                if d > self.max_disturbance {
                    self.max_disturbance = d;
                }
                if d as u64 >= self.cfg.n_rh && self.first_violation.is_none() {
                    self.first_violation = Some(Violation { bank: *bank, aggressor: *row, activations: d, cycle: now });
                }
                if let BackOffPhase::Delay { remaining } = self.ranks[rank].phase {
                    self.ranks[rank].phase =
                        if remaining <= 1 { BackOffPhase::Idle } else { BackOffPhase::Delay { remaining: remaining - 1 } };
                }
                self.log_bank(now, name, *bank, Some(*row));
            }
            Command::Pre { bank } => {
                let b = &mut self.banks[bank.0 as usize];
                let Some(row) = b.open_row else {
                    return Err(state("bank not open"));
                };
                check(b.pre_ras, "tRAS")?;
                check(b.pre_rtp, "tRTP")?;
                check(b.pre_wr, "tWR")?;
                b.open_row = None;
                b.act_rp = now + t.rp;
                let before = b.counters.get(row);
                let after = b.counters.increment(row);
                self.counter_increments += (after - before) as u64;
                self.counts.pre += 1;
                let rank = self.cfg.topology.rank_of(*bank);
                let r = &mut self.ranks[rank as usize];
                r.last_pre = Some(now);
                if let Some(p) = self.cfg.prac {
                    if before < p.abo_th && after >= p.abo_th {
                        r.hot_rows += 1;
                    }
                    if r.phase == BackOffPhase::Idle && r.hot_rows > 0 {
                        let visible_at = now + t.backoff_signal;
                        let deadline = visible_at + t.abo_act;
                        r.phase = BackOffPhase::Window { deadline };
                        self.backoffs += 1;
                        events.push(DeviceEvent::BackOff { rank, visible_at, deadline });
                    }
                }
                self.log_bank(now, name, *bank, Some(row));
            }
            Command::Rd { bank, column } | Command::Wr { bank, column } => {
                let is_rd = matches!(cmd, Command::Rd { .. });
                let b = &mut self.banks[bank.0 as usize];
                if b.open_row.is_none() {
                    return Err(state("bank not open"));
                }
                if *column >= self.cfg.topology.columns {
                    return Err(state("column out of range"));
                }
                check(b.col_rcd, "tRCD")?;
                check(self.col_ccd, "tCCD")?;
                self.col_ccd = now + t.ccd;
                if is_rd {
                    b.pre_rtp = b.pre_rtp.max(now + t.rtp);
                    self.counts.rd += 1;
                } else {
                    b.pre_wr = b.pre_wr.max(now + t.cl + t.ccd + t.wr);
                    self.counts.wr += 1;
                }
                let row = b.open_row;
                self.log_bank(now, name, *bank, row);
            }
            Command::Ref { rank } => {
                self.check_rank_ready(*rank, now, name)?;
                let first = self.ranks[*rank as usize].ref_ptr;
                let n = self.rows_per_ref;
                for bid in self.cfg.topology.banks_of_rank(*rank) {
                    let b = &mut self.banks[bid as usize];
                    b.busy_until = now + t.rfc;
                    b.busy_why = "tRFC";
                    for k in 0..n {
                        let row = (first + k) % rows;
                        b.truth.refresh(row, rows);
                        if self.cfg.ref_resets_counters {
                            let old = b.counters.reset(row);
                            self.counters_cleared += old as u64;
                            if let Some(p) = self.cfg.prac {
                                if old >= p.abo_th {
                                    self.ranks[*rank as usize].hot_rows -= 1;
                                }
                            }
                        }
                    }
                }
                self.ranks[*rank as usize].ref_ptr = (first + n) % rows;
                self.counts.refab += 1;
                events.push(DeviceEvent::Ref { rank: *rank, first_row: first, rows: n });
                self.log.extend(self.cfg.log_commands.then_some(LogRecord {
                    cycle: now,
                    command: name,
                    rank: *rank,
                    bankgroup: None,
                    bank: None,
                    row: Some(first),
                }));
            }
            Command::RfmAb { rank } | Command::RfmSb { rank, .. } => {
                self.check_rank_ready(*rank, now, name)?;
                if let BackOffPhase::Window { deadline } = self.ranks[*rank as usize].phase {
                    if now > deadline {
                        return Err(ProtocolViolation {
                            constraint: "tABO_ACT",
                            command: name,
                            cycle: now,
                            earliest: deadline,
                        });
                    }
                }
                let banks: Vec<u32> = match cmd {
                    Command::RfmSb { bank, .. } => self
                        .cfg
                        .topology
                        .banks_of_rank(*rank)
                        .filter(|b| b % self.cfg.topology.banks_per_group == *bank)
                        .collect(),
                    _ => self.cfg.topology.banks_of_rank(*rank).collect(),
                };
                let mut refreshed = Vec::with_capacity(banks.len());
                for bid in banks {
                    let b = &mut self.banks[bid as usize];
                    b.busy_until = now + t.rfm;
                    b.busy_why = "tRFM";
                    let aggressor = b.counters.max().map_or(0, |(r, _)| r);
                    for v in victims_of(aggressor, rows) {
                        b.truth.refresh(v, rows);
                    }
                    let old = b.counters.reset(aggressor);
                    self.counters_cleared += old as u64;
                    if let Some(p) = self.cfg.prac {
                        if old >= p.abo_th {
                            self.ranks[*rank as usize].hot_rows -= 1;
                        }
                    }
                    refreshed.push((BankId(bid), aggressor));
                }
                self.counts.rfm += 1;
                let p = self.cfg.prac;
                let r = &mut self.ranks[*rank as usize];
                r.phase = match (r.phase, p) {
                    (BackOffPhase::Window { .. }, Some(p)) | (BackOffPhase::Recovery { .. }, Some(p)) => {
                        let remaining = match r.phase {
                            BackOffPhase::Recovery { remaining } => remaining,
                            _ => p.bo_n_refs,
                        } - 1;
                        if remaining == 0 {
                            BackOffPhase::Delay { remaining: p.bo_n_acts }
                        } else {
                            BackOffPhase::Recovery { remaining }
                        }
                    }
                    (ph, _) => ph,
                };
                events.push(DeviceEvent::Rfm { rank: *rank, refreshed });
                self.log.extend(self.cfg.log_commands.then_some(LogRecord {
                    cycle: now,
                    command: name,
                    rank: *rank,
                    bankgroup: None,
                    bank: None,
                    row: None,
                }));
            }
            Command::Vrr { bank, rows: victims } => {
                self.check_bank_idle(*bank, now, name)?;
                let b = &mut self.banks[bank.0 as usize];
                b.busy_until = now + t.rc * victims.len().max(1) as u64;
                b.busy_why = "VRR";
                for &v in victims {
                    b.truth.refresh(v, rows);
                }
                self.counts.vrr_rows += victims.len() as u64;
                self.log_bank(now, name, *bank, victims.first().copied());
            }
            Command::CounterAccess { bank } => {
                self.check_bank_idle(*bank, now, name)?;
                let b = &mut self.banks[bank.0 as usize];
                b.busy_until = now + t.rc;
                b.busy_why = "counter access";
                self.counts.counter_accesses += 1;
                self.log_bank(now, name, *bank, None);
            }
        }
        Ok(events)
    }

    fn check_bank_idle(&self, bank: BankId, now: u64, name: &'static str) -> Result<(), ProtocolViolation> {
        let b = &self.banks[bank.0 as usize];
        if b.open_row.is_some() {
            return Err(ProtocolViolation { constraint: "bank open", command: name, cycle: now, earliest: now });
        }
        for (ready, c) in [(b.act_rp, "tRP"), (b.busy_until, b.busy_why)] {
            if now < ready {
                return Err(ProtocolViolation { constraint: c, command: name, cycle: now, earliest: ready });
            }
        }
        Ok(())
    }

    fn check_rank_ready(&self, rank: u32, now: u64, name: &'static str) -> Result<(), ProtocolViolation> {
        for b in self.cfg.topology.banks_of_rank(rank) {
            self.check_bank_idle(BankId(b), now, name)?;
        }
        Ok(())
    }

    fn log_bank(&mut self, cycle: u64, command: &'static str, bank: BankId, row: Option<u32>) {
        if self.cfg.log_commands {
            let (rank, bg, b) = self.cfg.topology.split(bank);
            self.log.push(LogRecord { cycle, command, rank, bankgroup: Some(bg), bank: Some(b), row });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::TimingParams;

    fn device(prac: Option<BackOffParams>) -> Device {
        let t = TimingParams::preset("ddr5-3200an-prac").unwrap().with_refresh_commands_per_window(8).unwrap();
        Device::new(DeviceConfig {
            topology: Topology::desk(),
            timing: t.cycles(),
            refs_per_window: t.refs_per_window(),
            n_rh: 16,
            prac,
            ref_resets_counters: true,
            log_commands: true,
        })
    }

    #[test]
    fn trc_boundary() {
        let mut d = device(None);
        let rc = d.config().timing.rc;
        let ras = d.config().timing.ras;
        let b = BankId(0);
        d.issue(&Command::Act { bank: b, row: 1 }, 0).unwrap();
        d.issue(&Command::Pre { bank: b }, ras).unwrap();
        let err = d.issue(&Command::Act { bank: b, row: 2 }, rc - 1).unwrap_err();
        assert_eq!(err.constraint, "tRC");
        assert_eq!(err.slack(), 1);
        d.issue(&Command::Act { bank: b, row: 2 }, rc).unwrap();
    }

    #[test]
    fn counter_increments_on_precharge() {
        let mut d = device(None);
        let b = BankId(3);
        d.issue(&Command::Act { bank: b, row: 7 }, 0).unwrap();
        assert_eq!(d.counter(b, 7), 0);
        d.issue(&Command::Pre { bank: b }, 100).unwrap();
        assert_eq!(d.counter(b, 7), 1);
    }

    #[test]
    fn rfm_picks_max_then_lowest_index() {
        let mut c = RowCounters::new(255);
        for _ in 0..5 {
            c.increment(9);
            c.increment(3);
        }
        c.increment(12);
        assert_eq!(c.max(), Some((3, 5)));
        c.reset(3);
        assert_eq!(c.max(), Some((9, 5)));
        assert_eq!(RowCounters::new(7).max(), None);
    }

    #[test]
    fn saturating_counter_width() {
        assert_eq!(counter_bits(1024), 11);
        assert_eq!(counter_bits(16), 5);
        assert_eq!(counter_bits(1000), 11);
        let mut c = RowCounters::new(3);
        for _ in 0..10 {
            c.increment(1);
        }
        assert_eq!(c.get(1), 3);
    }

    #[test]
    fn backoff_asserts_at_threshold() {
        let mut d = device(Some(BackOffParams { abo_th: 2, bo_n_refs: 1, bo_n_acts: 1 }));
        let t = d.config().timing;
        let b = BankId(0);
        let mut now = 0;
        let mut events = vec![];
        for _ in 0..2 {
            d.issue(&Command::Act { bank: b, row: 5 }, now).unwrap();
            events = d.issue(&Command::Pre { bank: b }, now + t.ras).unwrap();
            now += t.rc;
        }
        let pre_at = now - t.rc + t.ras;
        assert_eq!(
            events,
            vec![DeviceEvent::BackOff {
                rank: 0,
                visible_at: pre_at + t.backoff_signal,
                deadline: pre_at + t.backoff_signal + t.abo_act
            }]
        );
        // ACTs are legal inside the window but not during recovery.
        d.issue(&Command::RfmAb { rank: 0 }, now).unwrap();
        assert_eq!(d.phase(0), BackOffPhase::Delay { remaining: 1 });
        assert_eq!(d.counter(b, 5), 0);
        d.issue(&Command::Act { bank: b, row: 5 }, now + t.rfm).unwrap();
        assert_eq!(d.phase(0), BackOffPhase::Idle);
    }

    #[test]
    fn late_rfm_is_a_violation() {
        let mut d = device(Some(BackOffParams { abo_th: 1, bo_n_refs: 1, bo_n_acts: 1 }));
        let t = d.config().timing;
        d.issue(&Command::Act { bank: BankId(0), row: 5 }, 0).unwrap();
        let ev = d.issue(&Command::Pre { bank: BankId(0) }, t.ras).unwrap();
        let DeviceEvent::BackOff { deadline, .. } = ev[0] else { panic!() };
        let err = d.issue(&Command::RfmAb { rank: 0 }, deadline + 1).unwrap_err();
        assert_eq!(err.constraint, "tABO_ACT");
    }

    #[test]
    fn ref_pointer_covers_every_row_once_per_window() {
        let mut d = device(None);
        assert_eq!(d.rows_per_ref(), 8);
        let t = d.config().timing;
        let mut seen = vec![0u32; 64];
        for k in 0..8u64 {
            let ev = d.issue(&Command::Ref { rank: 1 }, k * t.refi).unwrap();
            let DeviceEvent::Ref { first_row, rows, .. } = ev[0] else { panic!() };
            for r in first_row..first_row + rows {
                seen[r as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn ground_truth_resets_at_victim_refresh() {
        let mut d = device(None);
        let t = d.config().timing;
        let b = BankId(0);
        let mut now = 0;
        for _ in 0..5 {
            d.issue(&Command::Act { bank: b, row: 10 }, now).unwrap();
            d.issue(&Command::Pre { bank: b }, now + t.ras).unwrap();
            now += t.rc;
        }
        assert_eq!(d.max_disturbance(), 5);
        d.issue(&Command::RfmAb { rank: 0 }, now).unwrap();
        now += t.rfm;
        d.issue(&Command::Act { bank: b, row: 10 }, now).unwrap();
        assert_eq!(d.max_disturbance(), 5);
        d.issue(&Command::Pre { bank: b }, now + t.ras).unwrap();
        let (inc, live, cleared) = d.counter_conservation();
        assert_eq!(inc, live + cleared);
        assert_eq!(inc, 6);
        assert_eq!(d.log().len(), 13);
    }

    #[test]
    fn busy_bank_rejects_act() {
        let mut d = device(None);
        d.issue(&Command::Ref { rank: 0 }, 0).unwrap();
        let err = d.issue(&Command::Act { bank: BankId(1), row: 0 }, 10).unwrap_err();
        assert_eq!(err.constraint, "tRFC");
    }
}
