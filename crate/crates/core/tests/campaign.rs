use pracsim_core::campaign::{run_campaign, ATTACK_NONE};
use pracsim_core::config::CampaignConfig;
use pracsim_core::metrics::EnergyModel;

fn small(mechanisms: &str, n_rh: &str) -> CampaignConfig {
    CampaignConfig::from_toml(&format!(
        r#"
[timing]
preset = "ddr5-3200an-base"
[mitigation]
mechanisms = {mechanisms}
n_rh = {n_rh}
[workload]
mixes = 6
seed = 2
trace_length = 8000
instructions = 30000
max_cycles = 3000000
[output]
dir = "unused"
"#
    ))
    .unwrap()
}

#[test]
fn prac4_energy_grows_as_threshold_falls() {
    let out = run_campaign(&small(r#"["prac-4"]"#, "[1024, 16]"), &EnergyModel::default(), 0).unwrap();
    let at = |n| out.reports.iter().filter(move |r| r.n_rh == n && r.attack == ATTACK_NONE);
    for (lo, hi) in at(16).zip(at(1024)) {
        assert_eq!(lo.mix_id, hi.mix_id);
        assert!(lo.energy_total_pj > hi.energy_total_pj, "mix {}", lo.mix_id);
        assert!(lo.backoffs >= hi.backoffs);
    }
}

#[test]
fn prac_timing_costs_performance_and_optimistic_recovers_it() {
    let out = run_campaign(&small(r#"["none", "prac-4", "prac-optimistic"]"#, "[1024]"), &EnergyModel::default(), 0).unwrap();
    let ws = |m: &str| out.reports.iter().filter(|r| r.mechanism == m).map(|r| r.weighted_speedup).collect::<Vec<_>>();
    for ((none, prac), opt) in ws("none").iter().zip(ws("prac-4")).zip(ws("prac-optimistic")) {
        assert!(prac < *none);
        assert!(opt >= prac);
    }
}
