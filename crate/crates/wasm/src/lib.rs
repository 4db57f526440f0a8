//! Browser bindings: the security sweep, the attack-consumption arithmetic and a single
//! wave-attack trajectory, each returning JSON for the static page in `www/`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Plain-Rust versions of the exports, so they can be tested off the browser.
pub mod api {
    use pracsim_core::attack::{theoretical_consumption, Target};
    use pracsim_core::security::{self, PracParams, PrfmParams, SweepGrid};
    use pracsim_core::timing::{ns, TimingParams};
    use serde::Serialize;

    use super::to_json;

    fn list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, String> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().map_err(|_| format!("{what}: {x:?} is not a number")))
            .collect()
    }

    fn timing(mech: &str) -> Result<TimingParams, String> {
        let preset = match mech {
            "prac" => "ddr5-3200an-prac",
            "prfm" => "analysis-appendix",
            other => return Err(format!("unknown mechanism {other:?} (expected prac or prfm)")),
        };
        TimingParams::preset(preset).map_err(|e| e.to_string())
    }

    #[derive(Serialize)]
    struct Row {
        threshold: u32,
        second: u64,
        max_activations: u64,
        secure_at_nrh: u64,
        secure: bool,
    }

    /// Sweep thresholds against B_0 sizes (PRFM) or back-off lengths (PRAC).
    pub fn sweep(mech: &str, thresholds: &str, second: &str, n_rh: u64) -> Result<String, String> {
        let t = timing(mech)?;
        let th = list(thresholds, "thresholds")?;
        let grid = if mech == "prac" {
            SweepGrid::Prac { abo_th: th, bo_n_refs: list(second, "bo_n_refs")?, bo_n_acts: 1, model: Default::default() }
        } else {
            SweepGrid::Prfm { rfm_th: th, b0: list(second, "B0")? }
        };
        let rows: Vec<Row> = security::sweep(&grid, &t)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| Row {
                threshold: r.rfm_th_or_abo_th,
                second: r.b0_or_bo_n_refs,
                max_activations: r.max_activations,
                secure_at_nrh: r.secure_at_nrh,
                secure: n_rh >= r.secure_at_nrh,
            })
            .collect();
        to_json(&rows)
    }

    #[derive(Serialize)]
    struct Share {
        t_attack_period_ns: f64,
        t_prevent_ms: f64,
        t_available_ms: f64,
        fraction: f64,
    }

    /// Share of the refresh window an attacker fills with preventive refreshes.
    pub fn consumption(mech: &str, threshold: u32, bo_n_refs: u32, t_rfm_ns: u64) -> Result<String, String> {
        let mut t = timing(mech)?;
        t.set_field("tRFM", ns(t_rfm_ns)).map_err(|e| e.to_string())?;
        let target = if mech == "prac" {
            Target::Prac(PracParams::new(threshold, bo_n_refs, 1))
        } else {
            Target::Prfm(PrfmParams::new(threshold))
        };
        let c = theoretical_consumption(&t, &target).map_err(|e| e.to_string())?;
        to_json(&Share {
            t_attack_period_ns: c.t_attack_period as f64 / 1e3,
            t_prevent_ms: c.t_prevent / 1e9,
            t_available_ms: c.t_available as f64 / 1e9,
            fraction: c.fraction,
        })
    }

    /// Decoy-set sizes round by round for one wave attack.
    pub fn trajectory(mech: &str, threshold: u32, bo_n_refs: u32, b0: u64) -> Result<String, String> {
        if b0 == 0 || b0 > 1 << 20 {
            return Err("B0 must be between 1 and 1048576".into());
        }
        let t = timing(mech)?;
        let tr = if mech == "prac" {
            security::prac_trajectory(b0, &PracParams::new(threshold, bo_n_refs, 1), &t)
        } else {
            security::prfm_trajectory(b0, &PrfmParams::new(threshold), 1 << 22)
        }
        .map_err(|e| e.to_string())?;
        to_json(&tr)
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sweep(mech: &str, thresholds: &str, second: &str, n_rh: u32) -> Result<String, JsError> {
    js(api::sweep(mech, thresholds, second, n_rh as u64))
}

#[wasm_bindgen]
pub fn consumption(mech: &str, threshold: u32, bo_n_refs: u32, t_rfm_ns: u32) -> Result<String, JsError> {
    js(api::consumption(mech, threshold, bo_n_refs, t_rfm_ns as u64))
}

#[wasm_bindgen]
pub fn trajectory(mech: &str, threshold: u32, bo_n_refs: u32, b0: u32) -> Result<String, JsError> {
    js(api::trajectory(mech, threshold, bo_n_refs, b0 as u64))
}
