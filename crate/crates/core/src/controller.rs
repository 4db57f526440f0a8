//! Memory controller: request queues, FR-FCFS+Cap scheduling, MOP address mapping,
//! periodic refresh, RFM issue for PRFM, and the back-off deadline handling for PRAC.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dram::{BankId, Command, Device, DeviceEvent, Topology};
use crate::mitigations::{Action, Mitigation};
use crate::Error;

pub const BLOCK_BYTES: u64 = 64;
/// Low column bits kept together in MOP: a group of 4 consecutive blocks shares a row.
const MOP_COL_LOW_BITS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub read_queue_depth: usize,
    pub write_queue_depth: usize,
    pub frfcfs_cap: u32,
    pub write_high_watermark: usize,
    pub write_low_watermark: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { read_queue_depth: 64, write_queue_depth: 64, frfcfs_cap: 4, write_high_watermark: 56, write_low_watermark: 16 }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.read_queue_depth == 0 || self.write_queue_depth == 0 || self.frfcfs_cap == 0 {
            return Err(Error::Config("queue depths and frfcfs_cap must be >= 1".into()));
        }
        if self.write_low_watermark >= self.write_high_watermark || self.write_high_watermark > self.write_queue_depth {
            return Err(Error::Config("need write_low_watermark < write_high_watermark <= write_queue_depth".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DramAddr {
    pub channel: u32,
    pub rank: u32,
    pub bankgroup: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
}

fn bits(v: u32) -> u32 {
    v.trailing_zeros()
}

/// Minimalist open-page mapping. From the least significant bit: block offset, low
/// column bits, bank group, bank, rank, high column bits, row.
pub fn map_address(addr: u64, topo: &Topology) -> Result<DramAddr, Error> {
    let cap = capacity(topo);
    if addr >= cap {
        return Err(Error::Trace(format!("address {addr:#x} outside capacity {cap:#x}")));
    }
    let mut a = addr >> bits(BLOCK_BYTES as u32);
    let mut take = |n: u32| {
        let v = (a & ((1u64 << n) - 1)) as u32;
        a >>= n;
        v
    };
    let col_bits = bits(topo.columns);
    let low = col_bits.min(MOP_COL_LOW_BITS);
    let col_low = take(low);
    let bankgroup = take(bits(topo.bankgroups));
    let bank = take(bits(topo.banks_per_group));
    let rank = take(bits(topo.ranks));
    let col_high = take(col_bits - low);
    let row = take(bits(topo.rows_per_bank));
    Ok(DramAddr { channel: 0, rank, bankgroup, bank, row, column: (col_high << low) | col_low })
}

/// Inverse of [`map_address`].
pub fn compose_address(d: &DramAddr, topo: &Topology) -> u64 {
    let col_bits = bits(topo.columns);
    let low = col_bits.min(MOP_COL_LOW_BITS);
    let mut a = 0u64;
    let mut shift = bits(BLOCK_BYTES as u32);
    let mut put = |v: u32, n: u32| {
        a |= (v as u64 & ((1u64 << n) - 1)) << shift;
        shift += n;
    };
    put(d.column & ((1 << low) - 1), low);
    put(d.bankgroup, bits(topo.bankgroups));
    put(d.bank, bits(topo.banks_per_group));
    put(d.rank, bits(topo.ranks));
    put(d.column >> low, col_bits - low);
    put(d.row, bits(topo.rows_per_bank));
    a
}

pub fn capacity(topo: &Topology) -> u64 {
    topo.rows_total() * topo.columns as u64 * BLOCK_BYTES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub core: u32,
    pub is_write: bool,
    pub bank: BankId,
    pub row: u32,
    pub column: u32,
    pub arrival: u64,
}

/// Mechanism knobs the controller acts on directly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControllerPolicy {
    pub rfm_th: Option<u64>,
    pub bo_n_refs: u32,
    pub refresh_enabled: bool,
    pub use_same_bank_rfm: bool,
    /// Precharge a bank as soon as no queued request hits its open row.
    pub close_page: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ControllerStats {
    pub reads_served: u64,
    pub writes_served: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub backoffs: u64,
    pub rfm_backoff: u64,
    pub rfm_prfm: u64,
    pub preventive_refreshes: u64,
    pub counter_accesses: u64,
    pub refs: u64,
    /// Cycles between the first RFM of each recovery and its deadline.
    pub deadline_slack: Vec<u64>,
}

#[derive(Debug, Clone, Default)]
struct RankState {
    next_ref: u64,
    ref_pending: bool,
    prfm_owed: u64,
    /// (visible_at, deadline) of alerts not yet visible to the controller.
    pending_alert: Option<(u64, u64)>,
    /// Deadline of a visible alert whose first RFM has not been issued.
    window_deadline: Option<u64>,
    recovery_owed: u32,
}

#[derive(Debug, Clone, Default)]
struct BankSched {
    bypassed: u32,
    /// An ACT was issued and no column command has used the row yet.
    fresh: bool,
    maintenance: VecDeque<Command>,
}

pub struct Controller {
    pub cfg: ControllerConfig,
    policy: ControllerPolicy,
    topo: Topology,
    reads: VecDeque<Request>,
    writes: VecDeque<Request>,
    draining: bool,
    ranks: Vec<RankState>,
    banks: Vec<BankSched>,
    mitigation: Option<Box<dyn Mitigation>>,
    /// Reads whose data returns at the given cycle.
    inflight: VecDeque<(u64, Request)>,
    pub stats: ControllerStats,
    /// Device events (RFM reports) for observers such as the attack driver.
    pub device_events: Vec<DeviceEvent>,
    keep_events: bool,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, policy: ControllerPolicy, device: &Device, mitigation: Option<Box<dyn Mitigation>>) -> Self {
        let topo = device.config().topology;
        let refi = device.config().timing.refi;
        let ranks = (0..topo.ranks)
            .map(|r| RankState { next_ref: refi + r as u64 * refi / topo.ranks as u64, ..Default::default() })
            .collect();
        Self {
            cfg,
            policy,
            topo,
            reads: VecDeque::new(),
            writes: VecDeque::new(),
            draining: false,
            ranks,
            banks: vec![BankSched::default(); topo.total_banks() as usize],
            mitigation,
            inflight: VecDeque::new(),
            stats: ControllerStats::default(),
            device_events: Vec::new(),
            keep_events: false,
        }
    }

    /// Keep RFM/REF reports in `device_events` for an external observer.
    pub fn record_events(&mut self, on: bool) {
        self.keep_events = on;
    }

    pub fn can_accept(&self, is_write: bool) -> bool {
        if is_write {
            self.writes.len() < self.cfg.write_queue_depth
        } else {
            self.reads.len() < self.cfg.read_queue_depth
        }
    }

    pub fn enqueue(&mut self, r: Request) -> bool {
        if !self.can_accept(r.is_write) {
            return false;
        }
        if r.is_write {
            self.writes.push_back(r);
        } else {
            self.reads.push_back(r);
        }
        true
    }

    pub fn policy_mut(&mut self) -> &mut ControllerPolicy {
        &mut self.policy
    }

    /// Requests not yet served (excludes reads waiting for data).
    pub fn queued(&self) -> usize {
        self.reads.len() + self.writes.len()
    }

    /// A REF or PRFM RFM is owed on `rank`.
    pub fn maintenance_due(&self, rank: u32) -> bool {
        let rs = &self.ranks[rank as usize];
        rs.ref_pending || rs.prfm_owed > 0
    }

    pub fn pending(&self) -> usize {
        self.reads.len() + self.writes.len() + self.inflight.len()
    }

    /// Reads whose data has returned by `now`.
    pub fn drain_completed(&mut self, now: u64, out: &mut Vec<(u64, Request)>) {
        while let Some(&(t, r)) = self.inflight.front() {
            if t > now {
                break;
            }
            self.inflight.pop_front();
            out.push((t, r));
        }
    }

    /// Advance one controller cycle: issue at most one command.
    pub fn tick(&mut self, now: u64, dev: &mut Device) -> Result<(), Error> {
        let t = dev.config().timing;
        for (r, rs) in self.ranks.iter_mut().enumerate() {
            if let Some((visible, deadline)) = rs.pending_alert {
                if visible <= now {
                    rs.pending_alert = None;
                    rs.window_deadline = Some(deadline);
                    rs.recovery_owed = self.policy.bo_n_refs;
                    self.stats.backoffs += 1;
                }
            }
            if let Some(d) = rs.window_deadline {
                if now > d {
                    return Err(Error::Scheduler(format!("back-off deadline {d} overrun on rank {r} at cycle {now}")));
                }
            }
            if self.policy.refresh_enabled && now >= rs.next_ref && !rs.ref_pending {
                rs.ref_pending = true;
                rs.next_ref += t.refi;
            }
        }
        if let Some(cmd) = self.pick_maintenance(now, dev) {
            return self.issue(cmd, now, dev);
        }
        if let Some(cmd) = self.pick_request(now, dev) {
            return self.issue(cmd, now, dev);
        }
        if self.policy.close_page {
            if let Some(cmd) = self.pick_close(now, dev) {
                return self.issue(cmd, now, dev);
            }
        }
        Ok(())
    }

    fn pick_close(&self, now: u64, dev: &Device) -> Option<Command> {
        (0..self.topo.total_banks()).map(BankId).find_map(|bank| {
            let row = dev.open_row(bank)?;
            let wanted = self.reads.iter().chain(self.writes.iter()).any(|r| r.bank == bank && r.row == row);
            (!wanted && dev.earliest_pre(bank) <= now).then_some(Command::Pre { bank })
        })
    }

    fn rank_blocked(&self, rank: u32) -> bool {
        let rs = &self.ranks[rank as usize];
        rs.ref_pending || rs.prfm_owed > 0 || rs.recovery_owed > 0
    }

    fn open_banks(&self, rank: u32, dev: &Device) -> u64 {
        self.topo.banks_of_rank(rank).filter(|&b| dev.open_row(BankId(b)).is_some()).count() as u64
    }

    /// Rank-level work first (back-off recovery, REF, PRFM RFMs), then per-bank
    /// mitigation refreshes. Returns PREs needed to close banks for that work.
    fn pick_maintenance(&mut self, now: u64, dev: &Device) -> Option<Command> {
        let t = dev.config().timing;
        for rank in 0..self.topo.ranks {
            let rs = &self.ranks[rank as usize];
            let alert_inbound = rs.pending_alert.is_some();
            let backoff = rs.recovery_owed > 0;
            if !(backoff || rs.ref_pending || rs.prfm_owed > 0) {
                continue;
            }
            if backoff {
                if let Some(deadline) = rs.window_deadline {
                    // Keep serving while the window allows; close banks once it does not.
                    let open = self.open_banks(rank, dev);
                    let must_close = now + t.rp + 2 * open + 2 >= deadline || !self.window_has_work(rank, now, deadline, dev);
                    if !must_close {
                        continue;
                    }
                }
            }
            if !backoff {
                if let Some(col) = self.fresh_col(rank, now, dev) {
                    return Some(col);
                }
            }
            if let Some(pre) = self.close_one(rank, now, dev, !backoff) {
                return Some(pre);
            }
            if !dev.rank_closed(rank) || dev.earliest_rank_cmd(rank) > now {
                continue;
            }
            if backoff {
                let cmd = if self.policy.use_same_bank_rfm { Command::RfmSb { rank, bank: 0 } } else { Command::RfmAb { rank } };
                return Some(cmd);
            }
            // A PRE within the last tBackoffSignal may still raise an alert; wait it out.
            if alert_inbound || dev.last_pre(rank).is_some_and(|p| now < p + t.backoff_signal + 1) {
                continue;
            }
            if rs.ref_pending {
                return Some(Command::Ref { rank });
            }
            return Some(Command::RfmAb { rank });
        }
        for b in 0..self.banks.len() {
            if self.banks[b].maintenance.is_empty() {
                continue;
            }
            let bank = BankId(b as u32);
            if self.rank_blocked(self.topo.rank_of(bank)) {
                continue;
            }
            if dev.open_row(bank).is_some() {
                if dev.earliest_pre(bank) <= now {
                    return Some(Command::Pre { bank });
                }
                continue;
            }
            if dev.earliest_act(bank) <= now {
                return self.banks[b].maintenance.pop_front();
            }
        }
        None
    }

    /// Whether any queued request could still be served inside the back-off window.
    fn window_has_work(&self, rank: u32, now: u64, deadline: u64, dev: &Device) -> bool {
        self.reads.iter().chain(self.writes.iter()).any(|r| {
            self.topo.rank_of(r.bank) == rank && self.fits_window(r, now, deadline, dev)
        })
    }

    fn fits_window(&self, r: &Request, now: u64, deadline: u64, dev: &Device) -> bool {
        let t = dev.config().timing;
        let rank = self.topo.rank_of(r.bank);
        let open = self.open_banks(rank, dev);
        let start = now.max(match dev.open_row(r.bank) {
            Some(row) if row == r.row => dev.earliest_col(r.bank),
            Some(_) => return false,
            None => dev.earliest_act(r.bank),
        });
        let finish = match dev.open_row(r.bank) {
            Some(_) => start + if r.is_write { t.cl + t.ccd + t.wr } else { t.rtp } + t.rp,
            None => start + t.rc.max(t.rcd + t.rtp + t.rp),
        };
        finish + 2 * (open + 1) + 2 <= deadline
    }

    /// A PRE for some open bank of `rank`. With `spare_fresh`, a freshly activated bank
    /// first serves the request it was opened for.
    fn close_one(&self, rank: u32, now: u64, dev: &Device, spare_fresh: bool) -> Option<Command> {
        self.topo
            .banks_of_rank(rank)
            .map(BankId)
            .find(|&b| dev.open_row(b).is_some() && dev.earliest_pre(b) <= now && !(spare_fresh && self.fresh_hit(b, dev)))
            .map(|bank| Command::Pre { bank })
    }

    fn fresh_col(&self, rank: u32, now: u64, dev: &Device) -> Option<Command> {
        self.topo.banks_of_rank(rank).map(BankId).find_map(|bank| {
            if !self.banks[bank.0 as usize].fresh || dev.earliest_col(bank) > now {
                return None;
            }
            let row = dev.open_row(bank)?;
            self.reads.iter().chain(self.writes.iter()).find(|r| r.bank == bank && r.row == row).map(col_cmd)
        })
    }

    fn fresh_hit(&self, bank: BankId, dev: &Device) -> bool {
        self.banks[bank.0 as usize].fresh
            && dev.open_row(bank).is_some_and(|row| self.reads.iter().chain(self.writes.iter()).any(|r| r.bank == bank && r.row == row))
    }

    fn pick_request(&mut self, now: u64, dev: &Device) -> Option<Command> {
        let writes_first = if self.draining {
            if self.writes.len() <= self.cfg.write_low_watermark {
                self.draining = false;
            }
            self.draining
        } else {
            if self.writes.len() >= self.cfg.write_high_watermark {
                self.draining = true;
            }
            self.draining || (self.reads.is_empty() && !self.writes.is_empty())
        };
        let queue = if writes_first { &self.writes } else { &self.reads };
        self.frfcfs(queue, now, dev)
    }

    fn allowed(&self, r: &Request, now: u64, dev: &Device) -> bool {
        let rank = self.topo.rank_of(r.bank);
        let rs = &self.ranks[rank as usize];
        if !self.banks[r.bank.0 as usize].maintenance.is_empty() {
            return false;
        }
        if rs.recovery_owed > 0 {
            return match rs.window_deadline {
                Some(d) => self.fits_window(r, now, d, dev),
                None => false,
            };
        }
        if rs.ref_pending || rs.prfm_owed > 0 {
            return self.banks[r.bank.0 as usize].fresh && dev.open_row(r.bank) == Some(r.row);
        }
        true
    }

    fn frfcfs(&self, queue: &VecDeque<Request>, now: u64, dev: &Device) -> Option<Command> {
        // First ready: oldest row hit whose bank has not used up its bypass budget.
        for r in queue {
            if dev.open_row(r.bank) == Some(r.row)
                && dev.earliest_col(r.bank) <= now
                && self.banks[r.bank.0 as usize].bypassed < self.cfg.frfcfs_cap
                && self.allowed(r, now, dev)
            {
                return Some(col_cmd(r));
            }
        }
        // Then first come: the oldest request's next command, if ready.
        let mut seen_banks: Vec<BankId> = Vec::new();
        for r in queue {
            if seen_banks.contains(&r.bank) {
                continue;
            }
            seen_banks.push(r.bank);
            if !self.allowed(r, now, dev) {
                continue;
            }
            let cmd = match dev.open_row(r.bank) {
                Some(row) if row == r.row => (dev.earliest_col(r.bank) <= now).then(|| col_cmd(r)),
                Some(_) => (dev.earliest_pre(r.bank) <= now).then_some(Command::Pre { bank: r.bank }),
                None => (dev.earliest_act(r.bank) <= now).then_some(Command::Act { bank: r.bank, row: r.row }),
            };
            if cmd.is_some() {
                return cmd;
            }
        }
        None
    }

    fn issue(&mut self, cmd: Command, now: u64, dev: &mut Device) -> Result<(), Error> {
        let events = dev.issue(&cmd, now)?;
        let t = dev.config().timing;
        for ev in events {
            match ev {
                DeviceEvent::BackOff { rank, visible_at, deadline } => {
                    self.ranks[rank as usize].pending_alert = Some((visible_at, deadline));
                }
                other => {
                    if self.keep_events {
                        self.device_events.push(other);
                    }
                }
            }
        }
        match cmd {
            Command::Act { bank, row } => {
                self.banks[bank.0 as usize].bypassed = 0;
                self.banks[bank.0 as usize].fresh = true;
                self.stats.row_misses += 1;
                if let Some(th) = self.policy.rfm_th {
                    while dev.take_rfm_trigger(bank, th) {
                        self.ranks[self.topo.rank_of(bank) as usize].prfm_owed += 1;
                    }
                }
                if let Some(m) = self.mitigation.as_mut() {
                    let q = &mut self.banks[bank.0 as usize].maintenance;
                    match m.on_activation(bank, row, now) {
                        Action::None => {}
                        Action::Refresh(rows) => {
                            self.stats.preventive_refreshes += 1;
                            q.push_back(Command::Vrr { bank, rows });
                        }
                        Action::CounterAccess(refresh) => {
                            self.stats.counter_accesses += 1;
                            q.push_back(Command::CounterAccess { bank });
                            if let Some(rows) = refresh {
                                self.stats.preventive_refreshes += 1;
                                q.push_back(Command::Vrr { bank, rows });
                            }
                        }
                    }
                }
            }
            Command::Rd { bank, column } | Command::Wr { bank, column } => {
                let is_write = matches!(cmd, Command::Wr { .. });
                let queue = if is_write { &mut self.writes } else { &mut self.reads };
                let row = dev.open_row(bank);
                let pos = queue
                    .iter()
                    .position(|r| r.bank == bank && Some(r.row) == row && r.column == column)
                    .expect("column command without a matching request");
                let req = queue.remove(pos).unwrap();
                self.banks[bank.0 as usize].fresh = false;
                // Count a bypass when an older request to this bank wants another row.
                if queue.iter().take(pos).any(|r| r.bank == bank && Some(r.row) != row) {
                    self.banks[bank.0 as usize].bypassed += 1;
                }
                self.stats.row_hits += 1;
                if is_write {
                    self.stats.writes_served += 1;
                } else {
                    self.stats.reads_served += 1;
                    self.inflight.push_back((now + t.cl + t.ccd, req));
                }
            }
            Command::Ref { rank } => {
                self.ranks[rank as usize].ref_pending = false;
                self.stats.refs += 1;
            }
            Command::RfmAb { rank } | Command::RfmSb { rank, .. } => {
                let rs = &mut self.ranks[rank as usize];
                if rs.recovery_owed > 0 {
                    if let Some(d) = rs.window_deadline.take() {
                        self.stats.deadline_slack.push(d - now);
                    }
                    rs.recovery_owed -= 1;
                    self.stats.rfm_backoff += 1;
                } else {
                    rs.prfm_owed -= 1;
                    self.stats.rfm_prfm += 1;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn col_cmd(r: &Request) -> Command {
    if r.is_write {
        Command::Wr { bank: r.bank, column: r.column }
    } else {
        Command::Rd { bank: r.bank, column: r.column }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::DeviceConfig;
    use crate::TimingParams;

    fn setup(policy: ControllerPolicy) -> (Controller, Device) {
        let t = TimingParams::preset("ddr5-3200an-prac").unwrap();
        let dev = Device::new(DeviceConfig {
            topology: Topology::default(),
            timing: t.cycles(),
            refs_per_window: t.refs_per_window(),
            n_rh: 1024,
            prac: None,
            ref_resets_counters: true,
            log_commands: true,
        });
        (Controller::new(ControllerConfig::default(), policy, &dev, None), dev)
    }

    fn req(id: u64, bank: u32, row: u32, column: u32) -> Request {
        Request { id, core: 0, is_write: false, bank: BankId(bank), row, column, arrival: 0 }
    }

    #[test]
    fn mapping_round_trips_and_splits_bankgroups() {
        let topo = Topology::default();
        assert_eq!(capacity(&topo), 32 << 30);
        assert_eq!(map_address(0, &topo).unwrap(), DramAddr { channel: 0, rank: 0, bankgroup: 0, bank: 0, row: 0, column: 0 });
        let a = map_address(0x1234_5678, &topo).unwrap();
        assert_eq!(compose_address(&a, &topo), 0x1234_5640);
        let b = map_address(0x1234_5678 ^ (1 << 8), &topo).unwrap();
        assert_ne!(a.bankgroup, b.bankgroup);
        assert!(map_address(capacity(&topo), &topo).is_err());
    }

    #[test]
    fn linear_stream_hits_four_blocks_per_bank() {
        let topo = Topology::default();
        let mut runs = vec![];
        let mut last = None;
        let mut run = 0;
        for blk in 0..4096u64 {
            let a = map_address(blk * 64, &topo).unwrap();
            let key = (a.rank, a.bankgroup, a.bank, a.row);
            if Some(key) == last {
                run += 1;
            } else {
                if run > 0 {
                    runs.push(run);
                }
                run = 1;
                last = Some(key);
            }
        }
        runs.push(run);
        assert!(runs.iter().all(|&r| r == 4));
    }

    #[test]
    fn idle_controller_still_refreshes() {
        let (mut c, mut dev) = setup(ControllerPolicy { refresh_enabled: true, ..Default::default() });
        let refi = dev.config().timing.refi;
        for now in 0..10 * refi {
            c.tick(now, &mut dev).unwrap();
        }
        assert!(c.stats.refs >= 9 && c.stats.refs <= 10 * 2, "{}", c.stats.refs);
        assert_eq!(dev.counts.refab, c.stats.refs);
    }

    #[test]
    fn cap_limits_hit_bypass() {
        let (mut c, mut dev) = setup(ControllerPolicy::default());
        // Open row 1 on bank 0, then queue an old miss followed by five young hits.
        c.enqueue(req(0, 0, 1, 0));
        let mut now = 0;
        while c.stats.reads_served < 1 {
            c.tick(now, &mut dev).unwrap();
            now += 1;
        }
        c.enqueue(req(1, 0, 2, 0));
        for i in 0..5 {
            c.enqueue(req(2 + i, 0, 1, 1 + i as u32));
        }
        let mut order = vec![];
        while c.stats.reads_served < 7 {
            let before = c.stats.reads_served;
            c.tick(now, &mut dev).unwrap();
            if c.stats.reads_served > before {
                let mut done = vec![];
                c.drain_completed(u64::MAX, &mut done);
                order.extend(done.iter().map(|(_, r)| r.id));
            }
            now += 1;
        }
        assert_eq!(order[..6], [0, 2, 3, 4, 5, 1]);
    }

    #[test]
    fn row_hit_stream_reaches_ccd_throughput() {
        let (mut c, mut dev) = setup(ControllerPolicy::default());
        let ccd = dev.config().timing.ccd;
        let mut now = 0;
        let mut issued = 0u64;
        let mut first_rd = None;
        let mut id = 0;
        while issued < 100 {
            while c.can_accept(false) && id < 100 {
                c.enqueue(req(id, 5, 9, (id % 128) as u32));
                id += 1;
            }
            let before = c.stats.reads_served;
            c.tick(now, &mut dev).unwrap();
            if c.stats.reads_served > before {
                first_rd.get_or_insert(now);
                issued += 1;
            }
            now += 1;
        }
        assert_eq!(now - 1 - first_rd.unwrap(), 99 * ccd);
    }
}
