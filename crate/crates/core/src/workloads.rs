//! Trace format, synthetic benign workloads and quad-core mixes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{capacity, compose_address, map_address, DramAddr, BLOCK_BYTES};
use crate::dram::Topology;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    /// Non-memory instructions before this access.
    pub bubble_count: u32,
    pub is_write: bool,
    pub address: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "bubble_count,op,address";

impl Trace {
    pub fn instructions(&self) -> u64 {
        self.records.iter().map(|r| r.bubble_count as u64 + 1).sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), Error> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{},{},{:#x}", r.bubble_count, if r.is_write { 'W' } else { 'R' }, r.address)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, Error> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != TRACE_HEADER {
                    return Err(Error::Trace(format!("expected header `{TRACE_HEADER}`, found `{line}`")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Trace(format!("line {}: malformed record `{line}`", i + 1));
            let mut f = line.split(',');
            let (Some(b), Some(op), Some(a), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(bad());
            };
            let bubble_count = b.trim().parse().map_err(|_| bad())?;
            let is_write = match op.trim() {
                "R" | "r" => false,
                "W" | "w" => true,
                _ => return Err(bad()),
            };
            let a = a.trim();
            let address = u64::from_str_radix(a.strip_prefix("0x").or_else(|| a.strip_prefix("0X")).ok_or_else(bad)?, 16)
                .map_err(|_| bad())?;
            records.push(TraceRecord { bubble_count, is_write, address });
        }
        Ok(Self { records })
    }

    /// Load a trace file; gzip input is detected by its magic bytes.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let mut f = File::open(path)?;
        let mut magic = [0u8; 2];
        let n = f.read(&mut magic)?;
        f.rewind()?;
        if n == 2 && magic == [0x1f, 0x8b] {
            Self::read_from(BufReader::new(GzDecoder::new(f)))
        } else {
            Self::read_from(BufReader::new(f))
        }
    }

    /// Save a trace file, gzip-compressed when the path ends in `.gz`.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let f = BufWriter::new(File::create(path)?);
        if path.extension().is_some_and(|e| e == "gz") {
            let mut gz = GzEncoder::new(f, flate2::Compression::default());
            self.write_to(&mut gz)?;
            gz.finish()?.flush()?;
            Ok(())
        } else {
            self.write_to(f)
        }
    }

    pub fn check_capacity(&self, topo: &Topology) -> Result<(), Error> {
        let cap = capacity(topo);
        match self.records.iter().position(|r| r.address >= cap) {
            Some(i) => Err(Error::Trace(format!("record {i} address {:#x} exceeds capacity {cap:#x}", self.records[i].address))),
            None => Ok(()),
        }
    }
}

/// Row-buffer misses per kilo-instruction under in-order replay with one open row per bank.
pub fn measure_rbmpki(trace: &Trace, topo: &Topology) -> Result<f64, Error> {
    let mut open: HashMap<u32, u32> = HashMap::new();
    let mut misses = 0u64;
    for r in &trace.records {
        let a = map_address(r.address, topo)?;
        let bank = topo.bank_id(a.rank, a.bankgroup, a.bank).0;
        if open.insert(bank, a.row) != Some(a.row) {
            misses += 1;
        }
    }
    let instr = trace.instructions();
    Ok(if instr == 0 { 0.0 } else { misses as f64 * 1000.0 / instr as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    H,
    M,
    L,
}

impl Class {
    /// Accepted RBMPKI band: [lo, hi).
    pub fn band(self) -> (f64, f64) {
        match self {
            Class::H => (10.0, f64::INFINITY),
            Class::M => (2.0, 10.0),
            Class::L => (0.0, 2.0),
        }
    }

    fn mean_bubbles(self) -> f64 {
        match self {
            Class::H => 20.0,
            Class::M => 90.0,
            Class::L => 500.0,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Class::H => 'H',
            Class::M => 'M',
            Class::L => 'L',
        }
    }

    pub fn parse(c: char) -> Result<Self, Error> {
        match c {
            'H' | 'h' => Ok(Class::H),
            'M' | 'm' => Ok(Class::M),
            'L' | 'l' => Ok(Class::L),
            other => Err(Error::Config(format!("unknown intensity class `{other}` (expected H, M or L)"))),
        }
    }
}

enum Phase {
    Stream { next: u64 },
    Random,
    HotRows { rank: u32, bankgroup: u32, bank: u32, rows: Vec<u32>, i: usize },
}

fn generate(class: Class, rng: &mut ChaCha8Rng, length: usize, topo: &Topology) -> Trace {
    let cap = capacity(topo);
    let blocks = cap / BLOCK_BYTES;
    let mean = class.mean_bubbles();
    let mut records = Vec::with_capacity(length);
    let mut phase = Phase::Random;
    let mut phase_left = 0usize;
    while records.len() < length {
        if phase_left == 0 {
            phase_left = rng.random_range(200..2000);
            phase = match rng.random_range(0..4) {
                0 => Phase::Stream { next: rng.random_range(0..blocks) },
                1 => Phase::HotRows {
                    rank: rng.random_range(0..topo.ranks),
                    bankgroup: rng.random_range(0..topo.bankgroups),
                    bank: rng.random_range(0..topo.banks_per_group),
                    rows: (0..rng.random_range(2..5)).map(|_| rng.random_range(0..topo.rows_per_bank)).collect(),
                    i: 0,
                },
                _ => Phase::Random,
            };
        }
        phase_left -= 1;
        let block = match &mut phase {
            Phase::Stream { next } => {
                let b = *next;
                *next = (*next + 1) % blocks;
                b
            }
            Phase::Random => rng.random_range(0..blocks),
            Phase::HotRows { rank, bankgroup, bank, rows, i } => {
                let row = rows[*i % rows.len()];
                *i += 1;
                let d = DramAddr {
                    channel: 0,
                    rank: *rank,
                    bankgroup: *bankgroup,
                    bank: *bank,
                    row,
                    column: rng.random_range(0..topo.columns),
                };
                compose_address(&d, topo) / BLOCK_BYTES
            }
        };
        // Geometric bubble counts with the class mean.
        let u: f64 = rng.random::<f64>().max(1e-12);
        let bubble_count = (-(u.ln()) * mean).floor().min(u32::MAX as f64) as u32;
        records.push(TraceRecord { bubble_count, is_write: rng.random_bool(0.25), address: block * BLOCK_BYTES });
    }
    Trace { records }
}

/// Deterministic synthetic trace whose measured RBMPKI falls in the class band.
pub fn gen_synthetic(class: Class, seed: u64, length: usize, topo: &Topology) -> Result<Trace, Error> {
    if length == 0 {
        return Err(Error::Config("trace length must be >= 1".into()));
    }
    let (lo, hi) = class.band();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64 + 1) << 56));
    for _ in 0..16 {
        let trace = generate(class, &mut rng, length, topo);
        let m = measure_rbmpki(&trace, topo)?;
        if m >= lo && m < hi {
            return Ok(trace);
        }
    }
    Err(Error::Trace(format!("could not hit the {class:?} RBMPKI band with {length} records")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub id: u32,
    pub classes: [Class; 4],
    pub seeds: [u64; 4],
}

impl MixSpec {
    pub fn kind(&self) -> String {
        self.classes.iter().map(|c| c.letter()).collect()
    }
}

pub const MIX_KINDS: [&str; 6] = ["HHHH", "MMMM", "LLLL", "HHMM", "MMLL", "LLHH"];

pub fn build_mixes(count: usize, seed: u64) -> Result<Vec<MixSpec>, Error> {
    if count == 0 || count % MIX_KINDS.len() != 0 {
        return Err(Error::Config(format!("mix count must be a positive multiple of 6 (got {count})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for rep in 0..count / MIX_KINDS.len() {
        for (k, kind) in MIX_KINDS.iter().enumerate() {
            let mut classes = [Class::H; 4];
            for (slot, c) in kind.chars().enumerate() {
                classes[slot] = Class::parse(c)?;
            }
            out.push(MixSpec {
                id: (rep * MIX_KINDS.len() + k) as u32,
                classes,
                seeds: std::array::from_fn(|_| rng.random()),
            });
        }
    }
    Ok(out)
}
