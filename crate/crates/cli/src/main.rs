//! `pracsim`: security sweeps, attack arithmetic, trace generation, simulation
//! campaigns and storage tables, all emitted as CSV.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pracsim_core::attack::{self, AttackSpec, PruneMode, Target, WaveOptions};
use pracsim_core::campaign::{self, RunManifest};
use pracsim_core::config::CampaignConfig;
use pracsim_core::dram::{Topology, DESK_REFS_PER_WINDOW};
use pracsim_core::metrics::EnergyModel;
use pracsim_core::mitigations::{self, MitigationConfig};
use pracsim_core::security::{self, PracModel, PracParams, PrfmParams, SweepGrid};
use pracsim_core::timing::{parse_duration, Duration, TimingSection};
use pracsim_core::workloads::{gen_synthetic, Class};
use pracsim_core::TimingParams;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INSECURE: u8 = 3;

#[derive(Parser)]
#[command(name = "pracsim", version, about = "DDR5 PRAC/RFM read-disturbance analysis and simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Security sweep: maximum activations a wave attack reaches per configuration.
    Analyze(AnalyzeArgs),
    /// Share of DRAM time an attacker can fill with preventive refreshes.
    AttackTheory(TheoryArgs),
    /// Write a wave-attack, performance-attack or synthetic benign trace.
    GenTrace(GenTraceArgs),
    /// Run a simulation campaign from a config file.
    #[command(alias = "campaign")]
    Simulate(SimulateArgs),
    /// Reproduce the outputs recorded in a manifest.
    Rerun(RerunArgs),
    /// Storage cost of each mechanism's tracking state.
    Storage(StorageArgs),
}

#[derive(Args, Clone)]
struct TimingArgs {
    /// Timing preset; defaults depend on the command.
    #[arg(long)]
    preset: Option<String>,
    /// Override one timing field, e.g. `tRFM=295ns`. Repeatable.
    #[arg(long = "set", value_name = "FIELD=DURATION")]
    set: Vec<String>,
    /// Shrink tREFW to this many REF commands.
    #[arg(long)]
    refs_per_window: Option<u64>,
}

impl TimingArgs {
    fn resolve(&self, default_preset: &str) -> anyhow::Result<TimingParams> {
        let mut section = TimingSection {
            preset: self.preset.clone().unwrap_or_else(|| default_preset.to_string()),
            refresh_commands_per_window: self.refs_per_window,
            overrides: Default::default(),
        };
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects FIELD=DURATION, got {s:?}")))?;
            section.overrides.insert(k.trim().to_string(), Duration(parse_duration(v.trim())?));
        }
        Ok(section.resolve()?)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mech {
    Prac,
    Prfm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Final,
    FlooredWindow,
    EarlyDraft,
}

impl From<Model> for PracModel {
    fn from(m: Model) -> Self {
        match m {
            Model::Final => PracModel::Final,
            Model::FlooredWindow => PracModel::FlooredWindow,
            Model::EarlyDraft => PracModel::EarlyDraft,
        }
    }
}

#[derive(Args)]
struct OutArgs {
    /// Output file; stdout when omitted. A `.manifest.toml` is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long, requires = "out")]
    gnuplot_stub: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    mech: Mech,
    #[command(flatten)]
    timing: TimingArgs,
    /// PRAC back-off thresholds (default: 1 to 1024 in powers of two).
    #[arg(long, value_delimiter = ',')]
    abo_th: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    bo_n_refs: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    bo_n_acts: u32,
    #[arg(long, value_enum, default_value = "final")]
    model: Model,
    /// PRFM thresholds (default: 1 to 8, then 16, 32, 64, 80).
    #[arg(long, value_delimiter = ',')]
    rfm_th: Vec<u32>,
    /// PRFM decoy-set sizes.
    #[arg(long, value_delimiter = ',')]
    b0: Vec<u64>,
    /// Read the grid from a TOML file instead of the flags.
    #[arg(long, conflicts_with_all = ["abo_th", "bo_n_refs", "rfm_th", "b0"])]
    grid: Option<PathBuf>,
    /// Mark each row secure or insecure at this threshold.
    #[arg(long)]
    nrh: Option<u64>,
    /// Exit with status 3 if no configuration in the grid is secure at --nrh.
    #[arg(long, requires = "nrh")]
    require_secure: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, value_enum, default_value = "prac")]
    mech: Mech,
    #[command(flatten)]
    timing: TimingArgs,
    #[arg(long, default_value_t = 7)]
    abo_th: u32,
    #[arg(long, default_value_t = 4)]
    bo_n_refs: u32,
    #[arg(long, default_value_t = 6)]
    rfm_th: u32,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackArg {
    Wave,
    Dos,
}

#[derive(Args)]
struct GenTraceArgs {
    /// Attack pattern; omit to generate a benign synthetic trace with --class.
    #[arg(long, value_enum)]
    attack: Option<AttackArg>,
    #[arg(long, value_enum, default_value = "prac")]
    mech: Mech,
    #[command(flatten)]
    timing: TimingArgs,
    #[arg(long, default_value_t = 1)]
    abo_th: u32,
    #[arg(long, default_value_t = 4)]
    bo_n_refs: u32,
    #[arg(long, default_value_t = 4)]
    rfm_th: u32,
    /// Wave attack: decoy rows.
    #[arg(long, default_value_t = 8)]
    b0: u32,
    #[arg(long, default_value_t = 1024)]
    nrh: u64,
    /// Wave attack: priming activations per decoy (default: what the analysis assumes).
    #[arg(long)]
    prime: Option<u32>,
    /// Wave attack: drop refreshed rows at once instead of at the round boundary.
    #[arg(long)]
    immediate: bool,
    /// Wave attack: disable periodic REF.
    #[arg(long)]
    no_refresh: bool,
    /// Wave attack: REF leaves PRAC counters untouched.
    #[arg(long)]
    keep_counters: bool,
    /// Performance attack: rows per bank and banks.
    #[arg(long, default_value_t = 8)]
    rows_per_bank: u32,
    #[arg(long, default_value_t = 4)]
    banks: u32,
    /// Performance attack: memory cycles to cover.
    #[arg(long, default_value_t = 100_000)]
    cycles: u64,
    /// Benign trace class (H, M or L).
    #[arg(long)]
    class: Option<char>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    length: usize,
    /// Use the 64-row desk topology (always on for wave attacks).
    #[arg(long)]
    desk: bool,
    /// Trace file; `.gz` compresses.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-command energy model (TOML); built-in defaults otherwise.
    #[arg(long)]
    energy: Option<PathBuf>,
    #[arg(long)]
    gnuplot_stub: bool,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write into this directory instead of the recorded location.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StorageArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1024u64, 512, 256, 128, 64, 32, 16])]
    nrh: Vec<u64>,
    /// Use the 64-row desk topology instead of the full-size one.
    #[arg(long)]
    desk: bool,
    #[command(flatten)]
    out: OutArgs,
}

/// A usage problem: reported with exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

/// Manifest for single-command outputs: the arguments that produced them.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandManifest {
    artifact_version: String,
    args: Vec<String>,
    outputs: Vec<PathBuf>,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

fn write_command_manifest(out: &Path) -> anyhow::Result<()> {
    let m = CommandManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        args: std::env::args().skip(1).collect(),
        outputs: vec![out.to_path_buf()],
    };
    std::fs::write(manifest_path(out), toml::to_string(&m)?)?;
    Ok(())
}

fn emit_csv<T: Serialize>(rows: &[T], out: &OutArgs, plot: Option<(&str, &str)>) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    match &out.out {
        None => std::io::stdout().write_all(&buf)?,
        Some(p) => {
            std::fs::write(p, &buf).with_context(|| format!("writing {}", p.display()))?;
            write_command_manifest(p)?;
            if out.gnuplot_stub {
                if let Some((using, title)) = plot {
                    write_gnuplot(p, using, title)?;
                }
            }
        }
    }
    Ok(())
}

fn write_gnuplot(csv: &Path, using: &str, title: &str) -> anyhow::Result<()> {
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let script = format!(
        "# Generated by pracsim; run with `gnuplot -p {name}.gp` from the CSV's directory.\n\
         set datafile separator ','\nset key autotitle columnhead\nset title '{title}'\nset logscale x 2\n\
         plot '{name}' using {using} with linespoints\n"
    );
    let mut gp = csv.as_os_str().to_owned();
    gp.push(".gp");
    std::fs::write(PathBuf::from(gp), script)?;
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeRow {
    mechanism: String,
    rfm_th_or_abo_th: u32,
    b0_or_bo_n_refs: u64,
    max_activations: u64,
    secure_at_nrh: u64,
    /// Empty unless --nrh is given.
    secure: Option<bool>,
}

fn analyze(a: &AnalyzeArgs) -> anyhow::Result<u8> {
    let grid = match &a.grid {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SweepGrid>(&text).map_err(|e| usage(e.to_string()))?
        }
        None => match a.mech {
            Mech::Prac => {
                let SweepGrid::Prac { abo_th, bo_n_refs, .. } = SweepGrid::default_prac() else { unreachable!() };
                SweepGrid::Prac {
                    abo_th: if a.abo_th.is_empty() { abo_th } else { a.abo_th.clone() },
                    bo_n_refs: if a.bo_n_refs.is_empty() { bo_n_refs } else { a.bo_n_refs.clone() },
                    bo_n_acts: a.bo_n_acts,
                    model: a.model.into(),
                }
            }
            Mech::Prfm => {
                let SweepGrid::Prfm { rfm_th, b0 } = SweepGrid::default_prfm() else { unreachable!() };
                SweepGrid::Prfm {
                    rfm_th: if a.rfm_th.is_empty() { rfm_th } else { a.rfm_th.clone() },
                    b0: if a.b0.is_empty() { b0 } else { a.b0.clone() },
                }
            }
        },
    };
    let preset = match grid {
        SweepGrid::Prac { .. } => "ddr5-3200an-prac",
        SweepGrid::Prfm { .. } => "analysis-appendix",
    };
    let t = a.timing.resolve(preset)?;
    let rows: Vec<AnalyzeRow> = security::sweep(&grid, &t)?
        .into_iter()
        .map(|r| AnalyzeRow {
            secure: a.nrh.map(|n| n >= r.secure_at_nrh),
            mechanism: r.mechanism,
            rfm_th_or_abo_th: r.rfm_th_or_abo_th,
            b0_or_bo_n_refs: r.b0_or_bo_n_refs,
            max_activations: r.max_activations,
            secure_at_nrh: r.secure_at_nrh,
        })
        .collect();
    emit_csv(&rows, &a.out, Some(("1:4", "maximum activations to a row")))?;
    if a.require_secure && !rows.iter().any(|r| r.secure == Some(true)) {
        eprintln!("no configuration in the grid is secure at n_rh={}", a.nrh.unwrap_or_default());
        return Ok(EXIT_INSECURE);
    }
    Ok(0)
}

#[derive(Serialize)]
struct TheoryRow {
    mechanism: &'static str,
    threshold: u32,
    bo_n_refs: u32,
    t_rc_ns: f64,
    t_rfm_ns: f64,
    t_available_ms: f64,
    t_attack_period_ns: f64,
    t_prevent_ms: f64,
    fraction: f64,
}

fn attack_theory(a: &TheoryArgs) -> anyhow::Result<u8> {
    let (target, preset) = match a.mech {
        Mech::Prac => (Target::Prac(PracParams::new(a.abo_th, a.bo_n_refs, 1)), "ddr5-3200an-prac"),
        Mech::Prfm => (Target::Prfm(PrfmParams::new(a.rfm_th)), "analysis-appendix"),
    };
    let t = a.timing.resolve(preset)?;
    let c = attack::theoretical_consumption(&t, &target)?;
    let ns = |ps: u64| ps as f64 / 1e3;
    let row = TheoryRow {
        mechanism: if a.mech == Mech::Prac { "prac" } else { "prfm" },
        threshold: if a.mech == Mech::Prac { a.abo_th } else { a.rfm_th },
        bo_n_refs: if a.mech == Mech::Prac { a.bo_n_refs } else { 0 },
        t_rc_ns: ns(t.t_rc),
        t_rfm_ns: ns(t.t_rfm),
        t_available_ms: c.t_available as f64 / 1e9,
        t_attack_period_ns: ns(c.t_attack_period),
        t_prevent_ms: c.t_prevent / 1e9,
        fraction: c.fraction,
    };
    emit_csv(&[row], &a.out, None)?;
    Ok(0)
}

fn gen_trace(a: &GenTraceArgs) -> anyhow::Result<u8> {
    let mech = || match a.mech {
        Mech::Prac => MitigationConfig::PracN(PracParams::new(a.abo_th, a.bo_n_refs, 1)),
        Mech::Prfm => MitigationConfig::Prfm(PrfmParams::new(a.rfm_th)),
    };
    let topo = if a.desk || a.attack == Some(AttackArg::Wave) { Topology::desk() } else { Topology::default() };
    let trace = match a.attack {
        Some(AttackArg::Wave) => {
            let mut timing = a.timing.clone();
            if timing.refs_per_window.is_none() {
                timing.refs_per_window = Some(DESK_REFS_PER_WINDOW);
            }
            let t = timing.resolve("ddr5-3200an-base")?;
            let mut spec = AttackSpec::wave(a.b0, mech())?;
            if let Some(p) = a.prime {
                spec.initial_priming = p;
            }
            let opts = WaveOptions {
                topology: topo,
                n_rh: a.nrh,
                periodic_refresh: !a.no_refresh,
                ref_resets_counters: !a.keep_counters,
                prune: if a.immediate { PruneMode::Immediate } else { PruneMode::RoundBoundary },
                max_cycles: None,
            };
            let run = attack::gen_wave_trace(&spec, &t, &opts)?;
            eprintln!(
                "wave: sizes {:?}, max activations {} (analysis {:?}), {} RFMs, violation {:?}",
                run.sizes, run.max_activations, run.predicted, run.rfms, run.violation
            );
            run.trace
        }
        Some(AttackArg::Dos) => {
            let t = a.timing.resolve("ddr5-3200an-base")?;
            let spec = AttackSpec { rows_per_bank: a.rows_per_bank, banks: a.banks, ..AttackSpec::perf_degradation(mech()) };
            attack::gen_perf_attack_trace(&spec, &t, a.cycles, &topo)?
        }
        None => {
            let c = a.class.ok_or_else(|| usage("gen-trace needs --attack or --class"))?;
            gen_synthetic(Class::parse(c.to_ascii_uppercase())?, a.seed, a.length, &topo)?
        }
    };
    trace.save(&a.out)?;
    write_command_manifest(&a.out)?;
    Ok(0)
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<u8> {
    let mut cfg = CampaignConfig::load(&a.config)?;
    if let Some(d) = &a.out {
        cfg.output.dir = d.clone();
    }
    let energy = match &a.energy {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => EnergyModel::default(),
    };
    let out = campaign::run_campaign(&cfg, &energy, campaign::workers_from_env()?)?;
    let files = campaign::write_outputs(&out)?;
    if a.gnuplot_stub {
        write_gnuplot(&files[0], "2:8", "weighted speedup by n_rh")?;
    }
    eprintln!("{} runs written to {}", out.reports.len(), files[0].display());
    Ok(0)
}

fn rerun(a: &RerunArgs) -> anyhow::Result<u8> {
    let text = std::fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    if let Ok(m) = toml::from_str::<CommandManifest>(&text) {
        let mut args = m.args.clone();
        if let Some(dir) = &a.out {
            std::fs::create_dir_all(dir)?;
            if let Some(i) = args.iter().position(|x| x == "--out") {
                let old = PathBuf::from(&args[i + 1]);
                args[i + 1] = dir.join(old.file_name().unwrap_or_default()).to_string_lossy().into_owned();
            }
        }
        let cli = Cli::try_parse_from(std::iter::once("pracsim".to_string()).chain(args)).map_err(|e| usage(e.to_string()))?;
        if matches!(cli.cmd, Cmd::Rerun(_)) {
            return Err(usage("a manifest cannot record a rerun"));
        }
        return run(&cli);
    }
    let m = RunManifest::load(&a.manifest)?;
    let out = campaign::rerun(&m, a.out.as_deref(), campaign::workers_from_env()?)?;
    let files = campaign::write_outputs(&out)?;
    eprintln!("{} runs written to {}", out.reports.len(), files[0].display());
    Ok(0)
}

#[derive(Serialize)]
struct StorageRow {
    mechanism: &'static str,
    n_rh: u64,
    cpu_bits: u64,
    dram_bits: u64,
    total_kib: f64,
}

fn storage(a: &StorageArgs) -> anyhow::Result<u8> {
    if a.nrh.is_empty() || a.nrh.iter().any(|&n| n < 2) {
        return Err(usage("--nrh needs values >= 2"));
    }
    let topo = if a.desk { Topology::desk() } else { Topology::default() };
    let t = TimingParams::ddr5_3200an_base();
    let mut rows = Vec::new();
    for &n in &a.nrh {
        let mechs: [(&str, MitigationConfig); 4] = [
            ("prac", MitigationConfig::PracN(PracParams::new(1, 4, 1))),
            ("prfm", MitigationConfig::Prfm(PrfmParams::new(1))),
            ("graphene", mitigations::graphene_default(n, &t)),
            ("hydra", mitigations::hydra_default(n, &topo)),
        ];
        for (name, m) in mechs {
            let s = mitigations::storage_cost(&m, n, &topo);
            rows.push(StorageRow {
                mechanism: name,
                n_rh: n,
                cpu_bits: s.cpu_bits,
                dram_bits: s.dram_bits,
                total_kib: (s.cpu_bits + s.dram_bits) as f64 / 8192.0,
            });
        }
    }
    emit_csv(&rows, &a.out, Some(("2:5", "tracking storage")))?;
    Ok(0)
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    match &cli.cmd {
        Cmd::Analyze(a) => analyze(a),
        Cmd::AttackTheory(a) => attack_theory(a),
        Cmd::GenTrace(a) => gen_trace(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Rerun(a) => rerun(a),
        Cmd::Storage(a) => storage(a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<pracsim_core::Error>() {
        Some(err) if err.is_usage() => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
