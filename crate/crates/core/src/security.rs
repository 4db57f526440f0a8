//! Closed-form wave-attack recurrences and secure-configuration analysis.
//!
//! A wave attack hammers a decoy set of `B_0` rows round-robin. Every preventive
//! refresh event retires one or more of those rows (the device picks the row with the
//! largest counter, which the attacker was about to hammer anyway), so the surviving
//! set shrinks while each survivor gains one activation per round. The last survivor's
//! activation count is what must stay below `n_rh`.
//!
//! All arithmetic is exact integer arithmetic.

use serde::{Deserialize, Serialize};

use crate::timing::{Ps, TimingParams};
use crate::Error;

/// Rows disturbed on each side of an aggressor.
pub const BLAST_RADIUS: u32 = 2;
/// Default upper bound on the decoy-set size: rows in one bank.
pub const ROWS_PER_BANK: u64 = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrfmParams {
    pub rfm_th: u32,
    #[serde(default = "default_victims")]
    pub victims_per_rfm: u32,
    /// RFM may lag behind by `postpone - 1` thresholds' worth of ACTs. Experimental; 1 disables.
    #[serde(default = "one")]
    pub postpone: u32,
}

fn default_victims() -> u32 {
    2 * BLAST_RADIUS
}
fn one() -> u32 {
    1
}

impl PrfmParams {
    pub fn new(rfm_th: u32) -> Self {
        Self { rfm_th, victims_per_rfm: default_victims(), postpone: 1 }
    }

    /// Largest `rfm_th` the analysis proves secure for `n_rh`.
    pub fn secure_for(n_rh: u64, t: &TimingParams) -> Result<Self, Error> {
        let check = |th: u64| -> Result<bool, Error> {
            let p = Self::new(th as u32);
            let b0_max = default_b0_max(&max_act_budget(t, &p)?);
            Ok(is_secure_prfm(n_rh, &p, t, b0_max)?.is_secure())
        };
        if !check(1)? {
            return Err(Error::Precondition(format!("no rfm_th is secure at n_rh={n_rh}")));
        }
        let (mut lo, mut hi) = (1u64, n_rh.max(1));
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if check(mid)? {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Ok(Self::new(lo as u32))
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.rfm_th == 0 {
            return Err(Error::Precondition("rfm_th must be >= 1".into()));
        }
        if self.victims_per_rfm < 2 * BLAST_RADIUS {
            return Err(Error::Precondition(format!(
                "victims_per_rfm {} cannot cover one aggressor's {} victims",
                self.victims_per_rfm,
                2 * BLAST_RADIUS
            )));
        }
        if self.postpone == 0 {
            return Err(Error::Precondition("postpone factor must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cadence(&self) -> Result<Cadence, Error> {
        self.validate()?;
        Ok(Cadence {
            removed: (self.victims_per_rfm / (2 * BLAST_RADIUS)) as u64,
            num: self.rfm_th as u64,
            den: 1,
            lag: (self.postpone as u64 - 1) * self.rfm_th as u64,
        })
    }
}

/// Which recovery-cadence formula the PRAC analysis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PracModel {
    /// One recovery per `bo_n_acts + tABO_ACT/tRC` activations, with the ratio kept exact.
    #[default]
    Final,
    /// Same, but `tABO_ACT/tRC` truncated to whole activations.
    FlooredWindow,
    /// Earlier draft: one recovery per `floor(tABO_ACT/tRC) + floor(tBO_DELAY/tRC)` activations.
    EarlyDraft,
}

/// Back-off threshold as a fraction of `n_rh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Quantization {
    #[serde(rename = "70%")]
    P70,
    #[serde(rename = "80%")]
    P80,
    #[serde(rename = "90%")]
    P90,
    #[default]
    #[serde(rename = "100%")]
    P100,
}

impl Quantization {
    pub fn percent(self) -> u64 {
        match self {
            Quantization::P70 => 70,
            Quantization::P80 => 80,
            Quantization::P90 => 90,
            Quantization::P100 => 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PracParams {
    pub abo_th: u32,
    pub bo_n_refs: u32,
    pub bo_n_acts: u32,
    #[serde(default)]
    pub quantization: Quantization,
    #[serde(default)]
    pub model: PracModel,
}

impl PracParams {
    pub fn new(abo_th: u32, bo_n_refs: u32, bo_n_acts: u32) -> Self {
        Self { abo_th, bo_n_refs, bo_n_acts, quantization: Quantization::P100, model: PracModel::Final }
    }

    /// The PRAC-N configuration used in simulation: `bo_n_acts = 1` and the largest
    /// `abo_th` that the analysis proves secure for `n_rh` (capped by the quantization).
    pub fn secure_for(n_rh: u64, bo_n_refs: u32, q: Quantization, t: &TimingParams) -> Result<Self, Error> {
        let cap = (n_rh * q.percent() / 100).max(1);
        let base = Self { quantization: q, ..Self::new(1, bo_n_refs, 1) };
        let b0_max = default_b0_max(&base.budget(t)?);
        let (mut lo, mut hi) = (1u64, cap);
        if !is_secure_prac(n_rh, &base, t, b0_max)?.is_secure() {
            return Err(Error::Precondition(format!(
                "no back-off threshold is secure at n_rh={n_rh} with bo_n_refs={bo_n_refs}"
            )));
        }
        // Security is monotone in abo_th: binary search the largest secure value.
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            let p = Self { abo_th: mid as u32, ..base };
            if is_secure_prac(n_rh, &p, t, b0_max)?.is_secure() {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Ok(Self { abo_th: lo as u32, ..base })
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.abo_th == 0 {
            return Err(Error::Precondition("abo_th must be >= 1".into()));
        }
        for (name, v) in [("bo_n_refs", self.bo_n_refs), ("bo_n_acts", self.bo_n_acts)] {
            if ![1, 2, 4].contains(&v) {
                return Err(Error::Precondition(format!("{name} must be one of 1, 2, 4 (got {v})")));
            }
        }
        Ok(())
    }

    /// Activations between consecutive recoveries, as an exact ratio.
    pub fn cadence(&self, t: &TimingParams) -> Result<Cadence, Error> {
        let acts = self.bo_n_acts as u64;
        let window = t.t_abo_act / t.t_rc;
        if acts == 0 && window == 0 {
            return Err(Error::DegenerateDivisor(
                "no activation fits between two recoveries (bo_n_acts = 0 and tABO_ACT < tRC)".into(),
            ));
        }
        self.validate()?;
        let removed = self.bo_n_refs as u64;
        let c = match self.model {
            PracModel::Final => Cadence { removed, num: acts * t.t_rc + t.t_abo_act, den: t.t_rc, lag: 0 },
            PracModel::FlooredWindow => Cadence { removed, num: acts + window, den: 1, lag: 0 },
            PracModel::EarlyDraft => {
                let n = window + t.t_bo_delay / t.t_rc;
                if n == 0 {
                    return Err(Error::DegenerateDivisor("tABO_ACT + tBO_DELAY shorter than tRC".into()));
                }
                Cadence { removed, num: n, den: 1, lag: 0 }
            }
        };
        Ok(c.reduced())
    }

    pub fn budget(&self, t: &TimingParams) -> Result<MaxActBudget, Error> {
        Ok(budget(t, &self.cadence(t)?, self.bo_n_refs as u64 * t.t_rfm))
    }
}

/// Preventive-refresh cadence: after `S` activations, `floor(max(0, S - lag) * den / num)`
/// refresh events have happened, each retiring `removed` aggressor rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cadence {
    pub removed: u64,
    pub num: u64,
    pub den: u64,
    pub lag: u64,
}

impl Cadence {
    /// Whole-activation cadence with `removed` rows retired every `every` activations.
    pub fn every(every: u64, removed: u64) -> Self {
        Self { removed, num: every, den: 1, lag: 0 }
    }

    pub fn events_after(&self, acts: u64) -> u64 {
        (acts.saturating_sub(self.lag) as u128 * self.den as u128 / self.num as u128) as u64
    }

    fn reduced(self) -> Self {
        let g = gcd(self.num, self.den);
        Self { num: self.num / g, den: self.den / g, ..self }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowSetTrajectory {
    /// |R_1|, |R_2|, ...; ends with the first zero unless the step bound cut it short.
    pub sizes: Vec<u64>,
    /// Running totals: cumulative[i] = sizes[0] + ... + sizes[i].
    pub cumulative: Vec<u64>,
}

impl RowSetTrajectory {
    /// Rounds that hammered at least one row, i.e. the activation count of the last survivor.
    pub fn rounds(&self) -> u64 {
        self.sizes.iter().take_while(|&&s| s > 0).count() as u64
    }
}

/// Iterate the cumulative-sum recurrence for up to `max_steps` entries.
pub fn trajectory(r1: u64, c: &Cadence, max_steps: usize) -> RowSetTrajectory {
    let mut sizes = Vec::new();
    let mut cumulative = Vec::new();
    let mut total = 0u64;
    for _ in 0..max_steps {
        let retired = c.events_after(total).saturating_mul(c.removed);
        let size = r1.saturating_sub(retired);
        total += size;
        sizes.push(size);
        cumulative.push(total);
        if size == 0 {
            break;
        }
    }
    RowSetTrajectory { sizes, cumulative }
}

/// The same trajectory computed round by round with an explicit per-bank activation
/// counter that is drained by one threshold's worth on every refresh event.
pub fn trajectory_stepwise(r1: u64, every: u64, removed: u64, max_steps: usize) -> Vec<u64> {
    let mut sizes = Vec::new();
    let mut b = r1;
    let mut bank_counter = 0u64;
    for _ in 0..max_steps {
        sizes.push(b);
        if b == 0 {
            break;
        }
        bank_counter += b;
        let events = bank_counter / every;
        bank_counter %= every;
        b = b.saturating_sub(events * removed);
    }
    sizes
}

pub fn prfm_trajectory(r1: u64, p: &PrfmParams, max_steps: usize) -> Result<RowSetTrajectory, Error> {
    if r1 == 0 || max_steps == 0 {
        return Err(Error::Precondition("r1 and max_steps must be >= 1".into()));
    }
    Ok(trajectory(r1, &p.cadence()?, max_steps))
}

pub fn prac_trajectory(r1: u64, p: &PracParams, t: &TimingParams) -> Result<RowSetTrajectory, Error> {
    if r1 == 0 {
        return Err(Error::Precondition("r1 must be >= 1".into()));
    }
    let c = p.cadence(t)?;
    // Every round adds at least one activation, so the set is empty after at most
    // r1 * ceil(num/den) rounds.
    let bound = r1.saturating_mul(c.num.div_ceil(c.den)).saturating_add(2);
    Ok(trajectory(r1, &c, bound.min(usize::MAX as u64) as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MaxActBudget {
    /// Time spent in periodic refresh per window.
    pub d_allref: Ps,
    pub t_available: Ps,
    /// Duration of one activation/refresh-event period (rounded down to a picosecond).
    pub t_rfm_period: Ps,
    pub max_rfm: u64,
    pub max_act: u64,
}

/// Time consumed by periodic refresh in one window: tREFW / tREFI REFs of tRFC each.
pub fn d_allref(t: &TimingParams) -> Ps {
    (t.t_refw as u128 * t.t_rfc as u128 / t.t_refi as u128) as Ps
}

pub fn t_available(t: &TimingParams) -> Ps {
    t.t_refw - d_allref(t)
}

fn budget(t: &TimingParams, c: &Cadence, event_time: Ps) -> MaxActBudget {
    let d = d_allref(t);
    let avail = (t.t_refw - d) as u128;
    let (num, den) = (c.num as u128, c.den as u128);
    // One period: num/den activations of tRC each, then the refresh event.
    let period_scaled = num * t.t_rc as u128 + den * event_time as u128;
    let max_rfm = avail * den / period_scaled;
    let max_act = max_rfm * num / den + c.lag as u128;
    MaxActBudget {
        d_allref: d,
        t_available: avail as Ps,
        t_rfm_period: (period_scaled / den) as Ps,
        max_rfm: max_rfm as u64,
        max_act: max_act as u64,
    }
}

pub fn max_act_budget(t: &TimingParams, p: &PrfmParams) -> Result<MaxActBudget, Error> {
    Ok(budget(t, &p.cadence()?, t.t_rfm))
}

/// Largest useful decoy set: a bank's rows, and never more rows than activations available.
pub fn default_b0_max(b: &MaxActBudget) -> u64 {
    ROWS_PER_BANK.min(b.max_act).max(1)
}

/// Highest activation count a single row reaches when the attack starts with `b0`
/// decoy rows, each pre-hammered `prime` times, within `max_act` total activations.
/// Stops early once `stop_at` is reached.
pub fn reachable_activations(b0: u64, prime: u64, c: &Cadence, max_act: u64, stop_at: u64) -> u64 {
    let primed = prime.saturating_mul(b0);
    if primed.saturating_add(1) > max_act {
        return prime.min(max_act);
    }
    let mut best = prime;
    let mut total = 0u64;
    loop {
        if best >= stop_at {
            return best;
        }
        let size = b0.saturating_sub(c.events_after(total).saturating_mul(c.removed));
        if size == 0 || primed + total + 1 > max_act {
            return best;
        }
        best += 1;
        total += size;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Secure,
    /// The smallest decoy-set size that reaches `n_rh`, and the total activations it needs.
    Insecure { b0: u64, activations: u64 },
}

impl Verdict {
    pub fn is_secure(&self) -> bool {
        matches!(self, Verdict::Secure)
    }
}

fn activations_to_reach(b0: u64, prime: u64, c: &Cadence, target: u64) -> u64 {
    // Priming, then every earlier round in full, then one activation of round `target - prime`.
    let mut total = 0u64;
    for _ in 1..target.saturating_sub(prime) {
        total += b0.saturating_sub(c.events_after(total).saturating_mul(c.removed));
    }
    prime * b0 + total + 1
}

fn verdict(n_rh: u64, prime: u64, c: &Cadence, max_act: u64, b0_max: u64) -> Result<Verdict, Error> {
    if n_rh == 0 {
        return Err(Error::Precondition("n_rh must be >= 1".into()));
    }
    for b0 in 1..=b0_max.max(1) {
        if reachable_activations(b0, prime, c, max_act, n_rh) >= n_rh {
            let activations = if prime >= n_rh { n_rh } else { activations_to_reach(b0, prime, c, n_rh) };
            return Ok(Verdict::Insecure { b0, activations });
        }
    }
    Ok(Verdict::Secure)
}

pub fn is_secure_prfm(n_rh: u64, p: &PrfmParams, t: &TimingParams, b0_max: u64) -> Result<Verdict, Error> {
    let b = max_act_budget(t, p)?;
    verdict(n_rh, 0, &p.cadence()?, b.max_act, b0_max)
}

pub fn is_secure_prac(n_rh: u64, p: &PracParams, t: &TimingParams, b0_max: u64) -> Result<Verdict, Error> {
    let b = p.budget(t)?;
    verdict(n_rh, p.abo_th as u64 - 1, &p.cadence(t)?, b.max_act, b0_max)
}

/// Maximum over all `b0 <= b0_max` of the reachable activation count.
pub fn worst_case_activations(prime: u64, c: &Cadence, max_act: u64, b0_max: u64) -> u64 {
    use rayon::prelude::*;
    (1..=b0_max.max(1))
        .into_par_iter()
        .map(|b0| reachable_activations(b0, prime, c, max_act, u64::MAX))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SweepGrid {
    Prfm {
        rfm_th: Vec<u32>,
        b0: Vec<u64>,
    },
    Prac {
        abo_th: Vec<u32>,
        bo_n_refs: Vec<u32>,
        #[serde(default = "one")]
        bo_n_acts: u32,
        #[serde(default)]
        model: PracModel,
    },
}

impl SweepGrid {
    /// Standard sweep axes.
    pub fn default_prfm() -> Self {
        SweepGrid::Prfm {
            rfm_th: vec![1, 2, 3, 4, 5, 6, 7, 8, 16, 32, 64, 80],
            b0: vec![1, 4, 16, 64, 256, 1024, 4096, 16384, 65536],
        }
    }

    pub fn default_prac() -> Self {
        SweepGrid::Prac {
            abo_th: vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024],
            bo_n_refs: vec![1, 2, 4],
            bo_n_acts: 1,
            model: PracModel::Final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mechanism: String,
    pub rfm_th_or_abo_th: u32,
    pub b0_or_bo_n_refs: u64,
    pub max_activations: u64,
    /// Smallest n_rh for which this threshold configuration is secure against every B_0.
    pub secure_at_nrh: u64,
}

/// Evaluate a grid. PRFM rows report the reachable count for that decoy-set size; PRAC
/// rows report the worst case over all decoy-set sizes. Output is sorted by grid key.
pub fn sweep(grid: &SweepGrid, t: &TimingParams) -> Result<Vec<SweepRow>, Error> {
    use rayon::prelude::*;
    let mut rows: Vec<SweepRow> = match grid {
        SweepGrid::Prfm { rfm_th, b0 } => {
            if rfm_th.is_empty() || b0.is_empty() {
                return Err(Error::Config("empty PRFM sweep grid".into()));
            }
            let mut ths = rfm_th.clone();
            ths.sort_unstable();
            ths.dedup();
            let per_th: Vec<Vec<SweepRow>> = ths
                .par_iter()
                .map(|&th| -> Result<Vec<SweepRow>, Error> {
                    let p = PrfmParams::new(th);
                    let c = p.cadence()?;
                    let b = max_act_budget(t, &p)?;
                    let worst = worst_case_activations(0, &c, b.max_act, default_b0_max(&b));
                    Ok(b0
                        .iter()
                        .map(|&b0| SweepRow {
                            mechanism: "prfm".into(),
                            rfm_th_or_abo_th: th,
                            b0_or_bo_n_refs: b0,
                            max_activations: reachable_activations(b0, 0, &c, b.max_act, u64::MAX),
                            secure_at_nrh: worst + 1,
                        })
                        .collect())
                })
                .collect::<Result<_, _>>()?;
            per_th.into_iter().flatten().collect()
        }
        SweepGrid::Prac { abo_th, bo_n_refs, bo_n_acts, model } => {
            if abo_th.is_empty() || bo_n_refs.is_empty() {
                return Err(Error::Config("empty PRAC sweep grid".into()));
            }
            let points: Vec<(u32, u32)> =
                abo_th.iter().flat_map(|&a| bo_n_refs.iter().map(move |&r| (a, r))).collect();
            points
                .par_iter()
                .map(|&(a, r)| -> Result<SweepRow, Error> {
                    let p = PracParams { model: *model, ..PracParams::new(a, r, *bo_n_acts) };
                    let b = p.budget(t)?;
                    let worst = worst_case_activations(a as u64 - 1, &p.cadence(t)?, b.max_act, default_b0_max(&b));
                    Ok(SweepRow {
                        mechanism: "prac".into(),
                        rfm_th_or_abo_th: a,
                        b0_or_bo_n_refs: r as u64,
                        max_activations: worst,
                        secure_at_nrh: worst + 1,
                    })
                })
                .collect::<Result<_, _>>()?
        }
    };
    rows.sort_by(|a, b| {
        (a.rfm_th_or_abo_th, a.b0_or_bo_n_refs).cmp(&(b.rfm_th_or_abo_th, b.b0_or_bo_n_refs))
    });
    rows.dedup();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn appendix() -> TimingParams {
        TimingParams::preset("analysis-appendix").unwrap()
    }
    fn prac_t() -> TimingParams {
        TimingParams::preset("ddr5-3200an-prac").unwrap()
    }

    #[test]
    fn single_row_single_threshold() {
        let tr = prfm_trajectory(1, &PrfmParams::new(1), 10).unwrap();
        assert_eq!(tr.sizes, [1, 0]);
    }

    #[test]
    fn prfm_eight_rows_threshold_four() {
        // Hand iteration: cumulative sums 8,14,19,23,26,28,29,30,31,32 → floors 2,3,4,5,6,7,7,7,7,8.
        let tr = prfm_trajectory(8, &PrfmParams::new(4), 64).unwrap();
        assert_eq!(tr.sizes, [8, 6, 5, 4, 3, 2, 1, 1, 1, 1, 0]);
        assert_eq!(tr.cumulative.last(), Some(&32));
    }

    #[test]
    fn no_rfm_keeps_set_constant() {
        let tr = prfm_trajectory(5, &PrfmParams::new(u32::MAX), 20).unwrap();
        assert_eq!(tr.sizes, vec![5; 20]);
    }

    #[test]
    fn preconditions() {
        assert!(prfm_trajectory(0, &PrfmParams::new(1), 4).is_err());
        assert!(prfm_trajectory(1, &PrfmParams::new(0), 4).is_err());
        assert!(PracParams::new(1, 0, 1).cadence(&prac_t()).is_err());
        let mut short = prac_t();
        short.t_abo_act = 1_000;
        assert!(matches!(PracParams::new(1, 1, 0).cadence(&short), Err(Error::DegenerateDivisor(_))));
    }

    #[test]
    fn prac_lone_row() {
        // 58/13 ≈ 4.46 activations fit between recoveries, so a lone row is hit five
        // times before the fifth activation completes the first recovery period.
        let tr = prac_trajectory(1, &PracParams::new(1, 4, 1), &prac_t()).unwrap();
        assert_eq!(tr.sizes, [1, 1, 1, 1, 1, 0]);
        let t = prac_t();
        let c = Cadence::every(1, 4);
        assert_eq!(trajectory(1, &c, 10).sizes, [1, 0]);
        assert_eq!(PracParams { model: PracModel::FlooredWindow, ..PracParams::new(1, 4, 1) }.cadence(&t).unwrap().num, 4);
    }

    #[test]
    fn prac_cadences() {
        let t = prac_t();
        let p = PracParams::new(1, 1, 1);
        let c = p.cadence(&t).unwrap();
        // (52 + 180) / 52 = 58/13
        assert_eq!((c.num, c.den), (58, 13));
        let f = PracParams { model: PracModel::FlooredWindow, ..p }.cadence(&t).unwrap();
        assert_eq!((f.num, f.den), (4, 1));
        // divisor 4, four rows per recovery: 16 rows gone after the first round.
        assert_eq!(trajectory(16, &Cadence::every(4, 4), 100).sizes, [16, 0]);
    }

    #[test]
    fn prac_four_refs_reaches_nine() {
        let t = prac_t();
        let p = PracParams::new(1, 4, 1);
        let b = p.budget(&t).unwrap();
        let worst = worst_case_activations(0, &p.cadence(&t).unwrap(), b.max_act, default_b0_max(&b));
        assert_eq!(worst, 9);
        assert!(is_secure_prac(10, &p, &t, default_b0_max(&b)).unwrap().is_secure());
        assert!(!is_secure_prac(9, &p, &t, default_b0_max(&b)).unwrap().is_secure());
    }

    #[test]
    fn secure_abo_threshold_tracks_nrh() {
        let t = prac_t();
        let p = PracParams::secure_for(16, 4, Quantization::P100, &t).unwrap();
        assert_eq!(p.abo_th, 7);
        // At large thresholds priming every decoy row eats the activation budget, so the
        // bound is looser than n_rh - 9.
        let p = PracParams::secure_for(1024, 4, Quantization::P100, &t).unwrap();
        assert_eq!(p.abo_th, 1018);
        assert!(PracParams::secure_for(9, 4, Quantization::P100, &t).is_err());
    }

    #[test]
    fn appendix_budget() {
        let t = appendix();
        let b = max_act_budget(&t, &PrfmParams::new(6)).unwrap();
        assert_eq!(b.d_allref, 2_420_512_820);
        assert_eq!(b.t_available, 29_579_487_180);
        assert_eq!(b.t_rfm_period, 577_000);
        // floor(29_579_487_180 / 577_000) = 51_264
        assert_eq!(b.max_rfm, 51_264);
        assert_eq!(b.max_act, 307_584);
    }

    #[test]
    fn prfm_verdicts_on_appendix() {
        let t = appendix();
        for th in 1..=5 {
            let p = PrfmParams::new(th);
            let b0 = default_b0_max(&max_act_budget(&t, &p).unwrap());
            assert!(is_secure_prfm(64, &p, &t, b0).unwrap().is_secure(), "rfm_th={th}");
        }
        let p = PrfmParams::new(3);
        assert!(is_secure_prfm(32, &p, &t, 65_536).unwrap().is_secure());
        assert!(!is_secure_prfm(32, &PrfmParams::new(4), &t, 65_536).unwrap().is_secure());
    }

    #[test]
    fn nrh_one_is_always_insecure() {
        let v = is_secure_prfm(1, &PrfmParams::new(1), &appendix(), 100).unwrap();
        assert_eq!(v, Verdict::Insecure { b0: 1, activations: 1 });
    }

    #[test]
    fn empty_grid_is_config_error() {
        let g = SweepGrid::Prfm { rfm_th: vec![], b0: vec![1] };
        assert!(matches!(sweep(&g, &appendix()), Err(Error::Config(_))));
    }
}
