//! DRAM timing parameters, named presets and the PRAC timing adjustments.
//!
//! Every duration is held as an exact integer number of picoseconds. Conversion to
//! controller clock cycles rounds up, so a quantized schedule never undercuts a
//! datasheet minimum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Picoseconds.
pub type Ps = u64;

pub const PS_PER_NS: Ps = 1_000;
pub const PS_PER_US: Ps = 1_000_000;
pub const PS_PER_MS: Ps = 1_000_000_000;

pub const PRESET_NAMES: [&str; 3] = ["ddr5-3200an-base", "ddr5-3200an-prac", "analysis-appendix"];

/// Convert a whole number of nanoseconds (or a decimal literal such as `"7.5ns"`) to ps.
pub const fn ns(v: u64) -> Ps {
    v * PS_PER_NS
}

/// Parse a duration with a unit suffix (`ps`, `ns`, `us`/`µs`, `ms`) into exact picoseconds.
///
/// Decimal values are accepted as long as they land on a whole picosecond; no
/// floating point is involved.
pub fn parse_duration(text: &str) -> Result<Ps, Error> {
    let s = text.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .ok_or_else(|| Error::Config(format!("duration `{text}` has no unit (ps, ns, us, ms)")))?;
    let (num, unit) = s.split_at(split);
    let scale = match unit.trim() {
        "ps" => 1,
        "ns" => PS_PER_NS,
        "us" | "µs" => PS_PER_US,
        "ms" => PS_PER_MS,
        other => return Err(Error::Config(format!("unknown duration unit `{other}` in `{text}`"))),
    };
    let bad = || Error::Config(format!("malformed duration `{text}`"));
    let (int_part, frac_part) = match num.split_once('.') {
        Some((i, f)) => (i, f),
        None => (num, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let int: u64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let mut value = int.checked_mul(scale).ok_or_else(bad)?;
    if !frac_part.is_empty() {
        if !frac_part.chars().all(|c| c.is_ascii_digit()) || frac_part.len() > 12 {
            return Err(bad());
        }
        let digits: u64 = frac_part.parse().map_err(|_| bad())?;
        let denom = 10u64.pow(frac_part.len() as u32);
        let scaled = digits as u128 * scale as u128;
        if scaled % denom as u128 != 0 {
            return Err(Error::Config(format!("duration `{text}` is not a whole number of picoseconds")));
        }
        value = value.checked_add((scaled / denom as u128) as u64).ok_or_else(bad)?;
    }
    Ok(value)
}

/// Render picoseconds with the largest unit that keeps the value exact to three decimals.
pub fn format_duration(ps: Ps) -> String {
    for (scale, unit) in [(PS_PER_MS, "ms"), (PS_PER_US, "us"), (PS_PER_NS, "ns")] {
        if ps >= scale && (ps * 1000) % scale == 0 {
            let whole = ps / scale;
            let frac = (ps % scale) * 1000 / scale;
            return if frac == 0 {
                format!("{whole}{unit}")
            } else {
                let f = format!("{frac:03}");
                format!("{whole}.{}{unit}", f.trim_end_matches('0'))
            };
        }
    }
    format!("{ps}ps")
}

/// A duration that (de)serializes as a unit-suffixed string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Duration(pub Ps);

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_duration(self.0))
    }
}

impl FromStr for Duration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        parse_duration(s).map(Duration)
    }
}

impl Serialize for Duration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Duration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All timing constraints used by the analysis and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingParams {
    pub t_rc: Ps,
    pub t_ras: Ps,
    pub t_rp: Ps,
    pub t_rcd: Ps,
    pub t_rtp: Ps,
    pub t_wr: Ps,
    pub t_cl: Ps,
    /// Column-to-column delay; also the data burst length on the bus.
    pub t_ccd: Ps,
    pub t_refw: Ps,
    pub t_refi: Ps,
    pub t_rfc: Ps,
    pub t_rfm: Ps,
    pub t_abo_act: Ps,
    pub t_bo_delay: Ps,
    pub t_backoff_signal: Ps,
    pub clock_period: Ps,
    prac_adjusted: bool,
}

impl TimingParams {
    pub fn preset(name: &str) -> Result<Self, Error> {
        match name {
            "ddr5-3200an-base" => Ok(Self::ddr5_3200an_base()),
            "ddr5-3200an-prac" => Self::ddr5_3200an_base().apply_prac_adjustments(),
            "analysis-appendix" => Ok(Self::analysis_appendix()),
            other => Err(Error::Config(format!(
                "unknown timing preset `{other}`; valid presets: {}",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    /// DDR5-3200AN without PRAC. tRCD/tCL use the
    /// JEDEC 3200AN bin value of 13.75 ns; they only shape read latency.
    pub fn ddr5_3200an_base() -> Self {
        Self {
            t_rc: ns(47),
            t_ras: ns(32),
            t_rp: ns(15),
            t_rcd: 13_750,
            t_rtp: 7_500,
            t_wr: ns(30),
            t_cl: 13_750,
            t_ccd: ns(5),
            t_refw: 32 * PS_PER_MS,
            t_refi: 3_900_000,
            t_rfc: ns(295),
            t_rfm: ns(350),
            t_abo_act: ns(180),
            // Not given numerically; four row cycles at base timing.
            t_bo_delay: ns(188),
            t_backoff_signal: ns(5),
            clock_period: 625,
            prac_adjusted: false,
        }
    }

    /// Values that make the appendix throughput arithmetic come out exactly
    /// (29.58 ms available, 577 ns PRFM attack period at RFM_th = 6).
    pub fn analysis_appendix() -> Self {
        Self { t_rfm: ns(295), ..Self::ddr5_3200an_base() }
    }

    /// Apply the PRAC-induced changes: tRP +21 ns, tRAS -16 ns, tRTP -2.5 ns, tWR -20 ns,
    /// tRC = tRAS + tRP. Rejects a second application.
    pub fn apply_prac_adjustments(self) -> Result<Self, Error> {
        if self.prac_adjusted {
            return Err(Error::InvalidTiming("PRAC adjustments already applied".into()));
        }
        let sub = |v: Ps, d: Ps, name: &str| {
            v.checked_sub(d)
                .filter(|r| *r > 0)
                .ok_or_else(|| Error::InvalidTiming(format!("PRAC adjustment drives {name} to <= 0")))
        };
        let t_rp = self.t_rp + ns(21);
        let t_ras = sub(self.t_ras, ns(16), "tRAS")?;
        let t_rtp = sub(self.t_rtp, 2_500, "tRTP")?;
        let t_wr = sub(self.t_wr, ns(20), "tWR")?;
        Self { t_rp, t_ras, t_rtp, t_wr, t_rc: t_ras + t_rp, prac_adjusted: true, ..self }.validate()
    }

    pub fn is_prac_adjusted(&self) -> bool {
        self.prac_adjusted
    }

    pub fn validate(self) -> Result<Self, Error> {
        let fields = self.named_fields();
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidTiming(format!("{name} must be strictly positive")));
        }
        if self.t_rc != self.t_ras + self.t_rp {
            return Err(Error::InvalidTiming(format!(
                "tRC ({}) must equal tRAS + tRP ({} + {})",
                format_duration(self.t_rc),
                format_duration(self.t_ras),
                format_duration(self.t_rp)
            )));
        }
        if self.t_refi >= self.t_refw {
            return Err(Error::InvalidTiming("tREFI must be shorter than tREFW".into()));
        }
        if self.t_rfc >= self.t_refi {
            return Err(Error::InvalidTiming("tRFC must be shorter than tREFI".into()));
        }
        Ok(self)
    }

    pub fn named_fields(&self) -> [(&'static str, Ps); 16] {
        [
            ("tRC", self.t_rc),
            ("tRAS", self.t_ras),
            ("tRP", self.t_rp),
            ("tRCD", self.t_rcd),
            ("tRTP", self.t_rtp),
            ("tWR", self.t_wr),
            ("tCL", self.t_cl),
            ("tCCD", self.t_ccd),
            ("tREFW", self.t_refw),
            ("tREFI", self.t_refi),
            ("tRFC", self.t_rfc),
            ("tRFM", self.t_rfm),
            ("tABO_ACT", self.t_abo_act),
            ("tBO_DELAY", self.t_bo_delay),
            ("tBackoffSignal", self.t_backoff_signal),
            ("clock", self.clock_period),
        ]
    }

    /// Set one field by its canonical name (as printed by [`Self::named_fields`]).
    pub fn set_field(&mut self, name: &str, value: Ps) -> Result<(), Error> {
        let slot = match name {
            "tRC" => &mut self.t_rc,
            "tRAS" => &mut self.t_ras,
            "tRP" => &mut self.t_rp,
            "tRCD" => &mut self.t_rcd,
            "tRTP" => &mut self.t_rtp,
            "tWR" => &mut self.t_wr,
            "tCL" => &mut self.t_cl,
            "tCCD" => &mut self.t_ccd,
            "tREFW" => &mut self.t_refw,
            "tREFI" => &mut self.t_refi,
            "tRFC" => &mut self.t_rfc,
            "tRFM" => &mut self.t_rfm,
            "tABO_ACT" => &mut self.t_abo_act,
            "tBO_DELAY" => &mut self.t_bo_delay,
            "tBackoffSignal" => &mut self.t_backoff_signal,
            "clock" => &mut self.clock_period,
            other => return Err(Error::Config(format!("unknown timing field `{other}`"))),
        };
        *slot = value;
        Ok(())
    }

    /// Shrink the refresh window to `refs` REF commands, keeping tREFI. Used by the
    /// desk-scale topology where a bank has only a few dozen rows.
    pub fn with_refresh_commands_per_window(self, refs: u64) -> Result<Self, Error> {
        Self { t_refw: self.t_refi * refs, ..self }.validate()
    }

    /// Number of REF commands the device sees per refresh window.
    pub fn refs_per_window(&self) -> u64 {
        self.t_refw / self.t_refi
    }

    pub fn to_cycles(&self, ps: Ps) -> u64 {
        ps.div_ceil(self.clock_period)
    }

    pub fn cycles(&self) -> CycleTimings {
        let c = |v| self.to_cycles(v);
        let (ras, rp) = (c(self.t_ras), c(self.t_rp));
        CycleTimings {
            rc: c(self.t_rc).max(ras + rp),
            ras,
            rp,
            rcd: c(self.t_rcd),
            rtp: c(self.t_rtp),
            wr: c(self.t_wr),
            cl: c(self.t_cl),
            ccd: c(self.t_ccd),
            refw: c(self.t_refw),
            refi: c(self.t_refi),
            rfc: c(self.t_rfc),
            rfm: c(self.t_rfm),
            abo_act: c(self.t_abo_act),
            bo_delay: c(self.t_bo_delay),
            backoff_signal: c(self.t_backoff_signal),
        }
    }
}

/// Timing constraints in whole controller clock cycles, derived by rounding up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleTimings {
    pub rc: u64,
    pub ras: u64,
    pub rp: u64,
    pub rcd: u64,
    pub rtp: u64,
    pub wr: u64,
    pub cl: u64,
    pub ccd: u64,
    pub refw: u64,
    pub refi: u64,
    pub rfc: u64,
    pub rfm: u64,
    pub abo_act: u64,
    pub bo_delay: u64,
    pub backoff_signal: u64,
}

/// Config-file view of timing: a preset plus optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub preset: String,
    /// REF commands per refresh window; shrinks tREFW for desk-scale runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_commands_per_window: Option<u64>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub overrides: std::collections::BTreeMap<String, Duration>,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self { preset: "ddr5-3200an-prac".into(), refresh_commands_per_window: None, overrides: Default::default() }
    }
}

impl TimingSection {
    pub fn resolve(&self) -> Result<TimingParams, Error> {
        let mut t = TimingParams::preset(&self.preset)?;
        for (k, v) in &self.overrides {
            t.set_field(k, v.0)?;
        }
        let t = t.validate()?;
        match self.refresh_commands_per_window {
            Some(r) => t.with_refresh_commands_per_window(r),
            None => Ok(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_units_exactly() {
        assert_eq!(parse_duration("52ns").unwrap(), 52_000);
        assert_eq!(parse_duration("7.5ns").unwrap(), 7_500);
        assert_eq!(parse_duration("3.9us").unwrap(), 3_900_000);
        assert_eq!(parse_duration("32ms").unwrap(), 32_000_000_000);
        assert_eq!(parse_duration("13.75 ns").unwrap(), 13_750);
        assert!(parse_duration("0.0001ns").is_err());
        assert!(parse_duration("12").is_err());
        assert!(parse_duration("12 parsecs").is_err());
    }

    #[test]
    fn format_round_trips() {
        for ps in [625, 7_500, 13_750, 52_000, 3_900_000, 32_000_000_000, 2_420_512_820] {
            assert_eq!(parse_duration(&format_duration(ps)).unwrap(), ps, "{}", format_duration(ps));
        }
    }

    #[test]
    fn presets_satisfy_invariants() {
        for name in PRESET_NAMES {
            let t = TimingParams::preset(name).unwrap();
            assert_eq!(t.t_rc, t.t_ras + t.t_rp, "{name}");
            t.validate().unwrap();
        }
        assert!(TimingParams::preset("ddr4").unwrap_err().to_string().contains("ddr5-3200an-base"));
    }

    #[test]
    fn prac_preset_values() {
        let t = TimingParams::preset("ddr5-3200an-prac").unwrap();
        assert_eq!(t.t_rc, ns(52));
        assert_eq!(t.t_rfm, ns(350));
        assert_eq!((t.t_rp, t.t_ras, t.t_rtp, t.t_wr), (ns(36), ns(16), ns(5), ns(10)));
    }

    #[test]
    fn prac_adjustment_is_guarded() {
        let t = TimingParams::preset("ddr5-3200an-prac").unwrap();
        assert!(t.apply_prac_adjustments().is_err());
        let tiny = TimingParams { t_wr: ns(20), ..TimingParams::ddr5_3200an_base() };
        assert!(tiny.apply_prac_adjustments().is_err());
    }

    #[test]
    fn prac_touches_only_five_fields() {
        let base = TimingParams::ddr5_3200an_base();
        let prac = base.apply_prac_adjustments().unwrap();
        let changed: Vec<_> = base
            .named_fields()
            .iter()
            .zip(prac.named_fields().iter())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, _)| a.0)
            .collect();
        assert_eq!(changed, ["tRC", "tRAS", "tRP", "tRTP", "tWR"]);
    }

    #[test]
    fn cycles_round_up() {
        let base = TimingParams::ddr5_3200an_base().cycles();
        // 47 ns / 0.625 ns = 75.2
        assert_eq!(base.rc, 76);
        let prac = TimingParams::preset("ddr5-3200an-prac").unwrap().cycles();
        assert_eq!(prac.rc, 84);
        assert_eq!(prac.rp, 58);
        assert_eq!(prac.ras, 26);
    }

    #[test]
    fn section_overrides() {
        let sec: TimingSection = toml::from_str(
            "preset = \"analysis-appendix\"\nrefresh_commands_per_window = 8\n[overrides]\ntRFM = \"350ns\"\n",
        )
        .unwrap();
        let t = sec.resolve().unwrap();
        assert_eq!(t.t_rfm, ns(350));
        assert_eq!(t.t_refw, 8 * 3_900_000);
        let bad: Result<TimingSection, _> = toml::from_str("preset = \"x\"\ntypo = 1\n");
        assert!(bad.is_err());
    }
}
