use pracsim_wasm::api;
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn sweep_rows_carry_verdicts() {
    let v = parse(&api::sweep("prac", "1,4", "4", 10).unwrap());
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["max_activations"], 9);
    assert_eq!(rows[0]["secure"], true);
    assert_eq!(rows[1]["secure"], false);
}

#[test]
fn consumption_matches_the_cli_default() {
    let v = parse(&api::consumption("prac", 7, 4, 350).unwrap());
    assert!((v["fraction"].as_f64().unwrap() - 0.7937).abs() < 1e-3);
    let p = parse(&api::consumption("prfm", 6, 0, 295).unwrap());
    assert!((p["fraction"].as_f64().unwrap() - 0.5113).abs() < 1e-3);
}

#[test]
fn trajectory_ends_empty() {
    let v = parse(&api::trajectory("prfm", 4, 0, 64).unwrap());
    let sizes = v["sizes"].as_array().unwrap();
    assert_eq!(sizes[0], 64);
    assert_eq!(sizes.last().unwrap(), 0);
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(api::sweep("prfm", "", "8", 64).is_err());
    assert!(api::sweep("prfm", "x", "8", 64).is_err());
    assert!(api::sweep("hydra", "1", "8", 64).is_err());
    assert!(api::consumption("prac", 0, 4, 350).is_err());
    assert!(api::trajectory("prac", 4, 4, 0).is_err());
}
