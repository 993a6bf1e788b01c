use std::fs;
use std::process::Command as Process;

use ccshape::simlab::oob_db;
use ccshape_cli::config::Target;
use ccshape_cli::{run_scenario, validate_scenario, Command, ConfigError, RunError, Scenario, ScenarioFile};

const SMALL: &str = r#"
[geometry]
n = 32
n_cp = 4
n_cs = 2

[carriers]
ranges = [[-10, 2], [7, 10]]
exclude = [0]

[grid]
regions = [[-16.0, -11.0], [3.0, 6.0], [11.0, 15.75]]
step = 0.25

[design]
cc_mode = "occs"
beta = 3

[sweep]
n_cp = [2, 4]
max_beta = 5
target_db = -30.0

[window]
beta = 2

[simulation]
systems = ["reference", "standard", "occs", "occs_windowed"]
n_symbols = 200
papr_symbols = 500
seed = 9
oversample = 2

[simulation.pa]
p = 10.0
ibo_db = 6.0
"#;

fn small() -> ScenarioFile {
    ScenarioFile::from_toml(SMALL).unwrap()
}

fn invalid_path(file: ScenarioFile) -> (String, String) {
    match validate_scenario(file) {
        Err(ConfigError::Invalid { path, message }) => (path, message),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn bundled_set_has_128_carriers() {
    let scn = Scenario::notch256();
    assert_eq!(scn.occupied.len(), 128);
    assert!(!scn.occupied.carriers().contains(&0));
}

#[test]
fn overlapping_ranges_name_both_intervals() {
    let mut file = small();
    file.carriers.ranges = vec![[-10, 2], [1, 5]];
    let (path, message) = invalid_path(file);
    assert_eq!(path, "carriers.ranges");
    assert!(message.contains("[-10, 2]") && message.contains("[1, 5]"), "{message}");
}

#[test]
fn out_of_range_carriers_rejected() {
    let mut file = small();
    file.carriers.ranges[1] = [7, 16];
    assert_eq!(invalid_path(file).0, "carriers.ranges[1]");
}

#[test]
fn empty_occupied_set_rejected() {
    let mut file = small();
    file.carriers.ranges = vec![[0, 0]];
    file.carriers.exclude = vec![0];
    assert_eq!(invalid_path(file).0, "carriers");
}

#[test]
fn too_many_cancellation_carriers_rejected() {
    let mut file = small();
    file.design.beta = Some(40);
    assert_eq!(invalid_path(file).0, "design.beta");
}

#[test]
fn grid_must_avoid_carriers() {
    let mut file = small();
    file.grid.regions[1] = [2.0, 6.0];
    assert_eq!(invalid_path(file).0, "grid.regions");
}

#[test]
fn design_writes_w_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let scn = validate_scenario(small()).unwrap();
    let art = run_scenario(&scn, Command::Design, dir.path()).unwrap();
    let w = fs::read_to_string(art.path("w.csv").unwrap()).unwrap();
    let mut lines = w.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_hash={}", scn.config_hash));
    assert_eq!(lines.next().unwrap(), "# seed=9");
    assert_eq!(lines.next().unwrap(), "row,col,re,im");
    assert_eq!(lines.count(), 3 * (scn.occupied.len() - 3));

    let trace = fs::read_to_string(art.path("trace.csv").unwrap()).unwrap();
    assert!(trace.lines().nth(2).unwrap() == "step,chosen_index,theta,mean_cc_power,p_oob_db");
    assert_eq!(trace.lines().count(), 3 + 4);
    assert_eq!(art.get("beta"), Some("3"));

    let summary = fs::read_to_string(art.path("summary.csv").unwrap()).unwrap();
    assert!(summary.lines().nth(2).unwrap() == "key,value");
}

#[test]
fn no_cancellation_reports_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = small();
    file.design.cc_mode = ccshape_cli::config::CcMode::None;
    file.design.beta = None;
    file.simulation.systems = vec![ccshape_cli::config::System::Reference];
    let scn = validate_scenario(file).unwrap();
    assert_eq!(scn.target, Target::Beta(0));
    let art = run_scenario(&scn, Command::Design, dir.path()).unwrap();

    let carriers = scn.occupied.carriers();
    let full = ccshape::spectral::projection_matrix(&scn.geometry, &carriers, &scn.grid);
    let baseline = full.norm_squared() / scn.grid.len() as f64;
    let p_oob: f64 = art.get("p_oob").unwrap().parse().unwrap();
    assert!((p_oob - baseline).abs() <= 1e-12 * baseline);
    assert_eq!(art.get("p_oob_db"), Some(oob_db(baseline, &scn.geometry).to_string().as_str()));
    assert_eq!(art.get("snr_loss_db"), Some("0.00"));
}

#[test]
fn identical_inputs_give_identical_bytes() {
    let scn = validate_scenario(small()).unwrap();
    for command in [Command::Design, Command::Sweep, Command::Psd, Command::Papr] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let art_a = run_scenario(&scn, command, a.path()).unwrap();
        let art_b = run_scenario(&scn, command, b.path()).unwrap();
        assert_eq!(art_a.files.len(), art_b.files.len());
        for (pa, pb) in art_a.files.iter().zip(&art_b.files) {
            assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap(), "{}", pa.display());
        }
    }
}

#[test]
fn sweep_covers_both_schemes_and_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    let scn = validate_scenario(small()).unwrap();
    let art = run_scenario(&scn, Command::Sweep, dir.path()).unwrap();
    let text = fs::read_to_string(art.path("sweep.csv").unwrap()).unwrap();
    assert_eq!(text.lines().nth(2), Some("n_cp,scheme,beta,p_oob_db"));
    assert_eq!(text.lines().count(), 3 + 2 * 2 * 6);
    for n_cp in [2, 4] {
        for scheme in ["occs", "standard"] {
            assert!(art.get(&format!("sweep.n_cp_{n_cp}.{scheme}.carriers_needed")).is_some());
        }
    }
}

#[test]
fn psd_and_papr_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scn = validate_scenario(small()).unwrap();
    let psd = run_scenario(&scn, Command::Psd, dir.path()).unwrap();
    for sys in ["reference", "standard", "occs", "occs_windowed"] {
        for name in [format!("psd_{sys}.csv"), format!("psd_{sys}_pa.csv")] {
            let text = fs::read_to_string(psd.path(&name).unwrap()).unwrap();
            assert_eq!(text.lines().nth(2), Some("freq_norm,psd_db"));
        }
        assert!(psd.get(&format!("psd.{sys}.oob_db")).is_some());
    }
    let reference: f64 = psd.get("psd.reference.oob_db").unwrap().parse().unwrap();
    let occs: f64 = psd.get("psd.occs.oob_db").unwrap().parse().unwrap();
    assert!(occs < reference);

    let papr = run_scenario(&scn, Command::Papr, dir.path()).unwrap();
    let text = fs::read_to_string(papr.path("ccdf_occs.csv").unwrap()).unwrap();
    assert_eq!(text.lines().nth(2), Some("papr_db,ccdf"));
    let probs: Vec<f64> = text.lines().skip(3).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn verify_passes_on_small_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scn = validate_scenario(small()).unwrap();
    let art = run_scenario(&scn, Command::Verify, dir.path()).unwrap();
    assert_eq!(art.get("verify.failed"), Some("0"));
    let text = fs::read_to_string(art.path("verify.csv").unwrap()).unwrap();
    assert_eq!(text.lines().nth(2), Some("quantity,oracle,closed_form,rel_err,tolerance,pass"));
}

#[test]
fn unreachable_target_keeps_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = small();
    file.design.beta = None;
    file.design.stop_p_oob_db = Some(-500.0);
    let scn = validate_scenario(file).unwrap();
    let err = run_scenario(&scn, Command::Design, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let RunError::Unreachable { artifacts, .. } = err else { panic!() };
    assert!(artifacts.path("trace.csv").is_some());
    assert!(artifacts.get("unreached").is_some());
    assert!(dir.path().join("summary.csv").exists());
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_ccshape"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("small.toml");
    fs::write(&good, SMALL).unwrap();
    let out = dir.path().join("out");

    let status = binary()
        .args(["design", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "5", "--selector", "min"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let w = fs::read_to_string(out.join("w.csv")).unwrap();
    assert!(w.lines().nth(1) == Some("# seed=5"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SMALL.replace("beta = 3", "beta = 300")).unwrap();
    let status = binary().args(["design", "--config"]).arg(&bad).arg("--out").arg(&out).output().unwrap().status;
    assert_eq!(status.code(), Some(2));

    let far = dir.path().join("far.toml");
    fs::write(&far, SMALL.replace("beta = 3", "stop_p_oob_db = -500.0")).unwrap();
    let status = binary().args(["design", "--config"]).arg(&far).arg("--out").arg(&out).output().unwrap().status;
    assert_eq!(status.code(), Some(3));
}

#[test]
fn bundled_summary_snr_loss() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = ScenarioFile::notch256();
    file.design.cc_mode = ccshape_cli::config::CcMode::Standard;
    let scn = validate_scenario(file).unwrap();
    let art = run_scenario(&scn, Command::Design, dir.path()).unwrap();
    assert_eq!(art.get("alpha"), Some("109"));
    assert_eq!(art.get("snr_loss_db"), Some("0.70"));
}
