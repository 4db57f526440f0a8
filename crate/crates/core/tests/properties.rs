use std::sync::Arc;

use pracsim_core::attack::{steady_state_fraction, theoretical_consumption, wave_oracle, PruneMode, Target};
use pracsim_core::controller::{compose_address, ControllerConfig, DramAddr};
use pracsim_core::dram::{Topology, DESK_REFS_PER_WINDOW};
use pracsim_core::metrics::{percentiles, read_reports, slowdown_stats, write_reports, EnergyModel, ReportMeta, SimReport, PERCENTILES};
use pracsim_core::mitigations::{graphene_default, MitigationConfig};
use pracsim_core::security::{is_secure_prac, is_secure_prfm, sweep, trajectory, trajectory_stepwise, Cadence, PracParams, PrfmParams, SweepGrid};
use pracsim_core::sim::{run_cores, run_with, CoreSpec, StopCondition, SystemSetup};
use pracsim_core::workloads::{gen_synthetic, Class, Trace, TraceRecord};
use pracsim_core::TimingParams;
use proptest::prelude::*;

fn desk_timing() -> TimingParams {
    TimingParams::ddr5_3200an_base().with_refresh_commands_per_window(DESK_REFS_PER_WINDOW).unwrap()
}

fn setup(m: MitigationConfig, n_rh: u64) -> SystemSetup {
    SystemSetup {
        topology: Topology::desk(),
        timing: desk_timing(),
        n_rh,
        mitigation: m,
        controller: ControllerConfig::default(),
        seed: 11,
        ref_resets_counters: true,
        log_commands: false,
    }
}

/// Back-to-back reads over a few rows of a few banks, in a random order.
fn hammer_trace(rows: &[(u32, u32)], order: &[usize]) -> Trace {
    let topo = Topology::desk();
    let records = order
        .iter()
        .map(|&i| {
            let (bank, row) = rows[i % rows.len()];
            let d = DramAddr { channel: 0, rank: 0, bankgroup: bank % topo.bankgroups, bank: bank / topo.bankgroups, row, column: 0 };
            TraceRecord { bubble_count: 0, is_write: false, address: compose_address(&d, &topo) }
        })
        .collect();
    Trace { records }
}

/// Deterministic xorshift shuffle.
fn shuffle<T>(v: &mut [T], seed: u64) {
    let mut x = seed | 1;
    for i in (1..v.len()).rev() {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        v.swap(i, (x % (i as u64 + 1)) as usize);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn trajectories_decay_and_match_stepwise(r1 in 1u64..2000, every in 1u64..40, removed in 1u64..5) {
        let c = Cadence::every(every, removed);
        let t = trajectory(r1, &c, 100_000);
        prop_assert!(t.sizes.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*t.sizes.last().unwrap(), 0);
        prop_assert_eq!(&t.sizes, &trajectory_stepwise(r1, every, removed, 100_000));
        let mut acc = 0;
        for (s, c) in t.sizes.iter().zip(&t.cumulative) {
            acc += s;
            prop_assert_eq!(acc, *c);
        }
    }

    #[test]
    fn oracle_matches_closed_form_for_prfm(b0 in 1u32..600, th in 1u64..24) {
        let c = Cadence::every(th, 1);
        prop_assert_eq!(wave_oracle(b0, 0, &c, PruneMode::RoundBoundary, u64::MAX).sizes, trajectory(b0 as u64, &c, 100_000).sizes);
    }

    #[test]
    fn oracle_matches_closed_form_for_primed_prac(b0 in 1u32..600, div in 2u64..12, refs in prop::sample::select(vec![1u64, 2, 4]), prime in 2u64..6) {
        let c = Cadence::every(div, refs);
        prop_assert_eq!(wave_oracle(b0, prime, &c, PruneMode::RoundBoundary, u64::MAX).sizes, trajectory(b0 as u64, &c, 100_000).sizes);
    }

    /// Dropping refreshed rows mid-round gains at most `removed - 1` activations per B_0.
    #[test]
    fn immediate_pruning_gains_less_than_one_recovery(b0 in 1u32..600, div in 2u64..13, refs in prop::sample::select(vec![1u64, 2, 4])) {
        let c = Cadence::every(div, refs);
        let closed = trajectory(b0 as u64, &c, 1_000_000).rounds();
        let adaptive = wave_oracle(b0, 2, &c, PruneMode::Immediate, u64::MAX).max_activations - 2;
        prop_assert!(adaptive < closed + refs, "{} > {} + {}", adaptive, closed, refs - 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Lower thresholds and higher n_rh never turn a secure configuration insecure.
    #[test]
    fn security_is_anti_monotone(n_rh in 4u64..64, a in 2u32..64, refs in prop::sample::select(vec![1u32, 2, 4]), th in 2u32..40) {
        let t = TimingParams::preset("ddr5-3200an-prac").unwrap();
        let prac = |n, a| is_secure_prac(n, &PracParams::new(a, refs, 1), &t, 256).unwrap().is_secure();
        if prac(n_rh, a) {
            prop_assert!(prac(n_rh, a - 1));
            prop_assert!(prac(n_rh + 1, a));
        }
        let prfm = |n, th| is_secure_prfm(n, &PrfmParams::new(th), &t, 256).unwrap().is_secure();
        if prfm(n_rh, th) {
            prop_assert!(prfm(n_rh, th - 1));
            prop_assert!(prfm(n_rh + 1, th));
        }
    }

    #[test]
    fn sweep_ignores_grid_order(mut ths in prop::collection::vec(1u32..40, 1..6), mut b0s in prop::collection::vec(1u64..300, 1..6), seed in any::<u64>()) {
        let t = TimingParams::preset("analysis-appendix").unwrap();
        let a = sweep(&SweepGrid::Prfm { rfm_th: ths.clone(), b0: b0s.clone() }, &t).unwrap();
        shuffle(&mut ths, seed);
        shuffle(&mut b0s, seed);
        let b = sweep(&SweepGrid::Prfm { rfm_th: ths, b0: b0s }, &t).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn consumption_fraction_is_a_share_and_falls_with_the_threshold(abo in 1u32..5000, refs in prop::sample::select(vec![1u32, 2, 4])) {
        let t = TimingParams::preset("analysis-appendix").unwrap();
        let f = |a| theoretical_consumption(&t, &Target::Prac(PracParams::new(a, refs, 1))).unwrap().fraction;
        prop_assert!(f(abo) > 0.0 && f(abo) < 1.0);
        prop_assert!(f(abo + 1) < f(abo));
        let s = |a| steady_state_fraction(&PracParams::new(a, refs, 1), &t);
        prop_assert!(s(abo) > 0.0 && s(abo) < 1.0 && s(abo + 1) < s(abo));
    }

    #[test]
    fn percentiles_are_monotone(v in prop::collection::vec(0u64..10_000, 0..400)) {
        let p = percentiles(&v, &PERCENTILES);
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
        if let Some(m) = v.iter().max() {
            prop_assert_eq!(p[5], *m);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    /// Graphene must refresh every aggressor before it reaches n_rh, whatever the pattern.
    #[test]
    fn graphene_is_sound(rows in prop::collection::vec((0u32..4, 0u32..64), 1..12), order in prop::collection::vec(0usize..12, 50..400), n_rh in prop::sample::select(vec![16u64, 32, 64])) {
        let trace = Arc::new(hammer_trace(&rows, &order));
        let s = setup(graphene_default(n_rh, &desk_timing()), n_rh);
        let r = run_cores(&s, &[CoreSpec { trace, benign: true }], StopCondition { instructions: 20_000, max_cycles: 400_000 }).unwrap();
        prop_assert!(r.violation.is_none(), "{:?}", r.violation);
        prop_assert!(r.max_disturbance < n_rh as u32);
    }

    /// Random traffic against PRAC never makes the controller miss a back-off deadline
    /// (an overrun is reported as an error), and PRAC counters are conserved.
    #[test]
    fn prac_deadlines_and_counter_conservation(rows in prop::collection::vec((0u32..8, 0u32..64), 1..16), order in prop::collection::vec(0usize..16, 50..400), abo in 1u32..20, refs in prop::sample::select(vec![1u32, 2, 4]), seed in 0u64..1000) {
        let hammer = Arc::new(hammer_trace(&rows, &order));
        let benign = Arc::new(gen_synthetic(Class::H, seed, 2_000, &Topology::desk()).unwrap());
        let s = setup(MitigationConfig::PracN(PracParams::new(abo, refs, 1)), 1024);
        let (mut c, mut d) = s.build().unwrap();
        let cores = [CoreSpec { trace: hammer, benign: true }, CoreSpec { trace: benign, benign: true }];
        let r = run_with(&mut c, &mut d, &s, &cores, StopCondition { instructions: 10_000, max_cycles: 300_000 });
        prop_assert!(r.is_ok(), "{:?}", r.err());
        let (inc, live, cleared) = d.counter_conservation();
        prop_assert_eq!(inc, live + cleared);
    }

    /// Without periodic refresh a core can only lose from sharing the channel.
    #[test]
    fn sharing_never_helps_without_refresh(seed in 0u64..1000) {
        let topo = Topology::desk();
        let traces: Vec<Arc<Trace>> = [Class::H, Class::M, Class::L]
            .iter()
            .enumerate()
            .map(|(i, &c)| Arc::new(gen_synthetic(c, seed + i as u64, 3_000, &topo).unwrap()))
            .collect();
        let s = setup(MitigationConfig::None, 1024);
        let stop = StopCondition { instructions: 20_000, max_cycles: 2_000_000 };
        let run = |cores: &[CoreSpec]| {
            let (mut c, mut d) = s.build().unwrap();
            c.policy_mut().refresh_enabled = false;
            run_with(&mut c, &mut d, &s, cores, stop).unwrap()
        };
        let all: Vec<CoreSpec> = traces.iter().map(|t| CoreSpec { trace: t.clone(), benign: true }).collect();
        let shared = run(&all);
        for (i, c) in all.iter().enumerate() {
            let alone = run(std::slice::from_ref(c));
            prop_assert!(shared.cores[i].ipc <= alone.cores[0].ipc, "core {}: {} > {}", i, shared.cores[i].ipc, alone.cores[0].ipc);
        }
    }
}

#[test]
fn reports_survive_csv_and_compare_to_themselves() {
    let topo = Topology::desk();
    let trace = Arc::new(gen_synthetic(Class::M, 4, 2_000, &topo).unwrap());
    let s = setup(MitigationConfig::PracN(PracParams::new(8, 2, 1)), 64);
    let run = run_cores(&s, &[CoreSpec { trace, benign: true }], StopCondition { instructions: 10_000, max_cycles: 500_000 }).unwrap();
    let meta = ReportMeta { mechanism: "prac-2", n_rh: 64, attack: "none", mix_id: 0, mix_kind: "M" };
    let r = SimReport::from_run(&run, &[run.cores[0].ipc], meta, &EnergyModel::default()).unwrap();
    let mut buf = Vec::new();
    write_reports(std::slice::from_ref(&r), &mut buf).unwrap();
    let back = read_reports(&buf[..]).unwrap();
    assert_eq!(back, std::slice::from_ref(&r));
    assert_eq!(back[0].energy_total_pj, r.energy_total_pj);
    let z = slowdown_stats(&back, &back).unwrap();
    assert_eq!((z.avg_ws_loss, z.max_ws_loss, z.max_single_app_slowdown), (0.0, 0.0, 0.0));
    let mut half = r.clone();
    half.weighted_speedup = r.weighted_speedup / 2.0;
    assert!((slowdown_stats(&back, &[half]).unwrap().avg_ws_loss - 50.0).abs() < 1e-9);
}
