//! Files written by simulations and experiments.

use eda_core::experiment::{emit_plotdata, run_experiment, Design, ExperimentConfig, PLOTDATA_HEADER};
use eda_core::simconfig::SimulationConfig;
use eda_core::tergm::simulate_tergm;

#[test]
fn simulation_outputs_share_one_schema() {
    let cfg = SimulationConfig {
        nodes: 30,
        terms: vec!["edges".into(), "degree(1)".into()],
        coefs: vec![-3.5, 0.3],
        targets: Some(vec![15.0, 12.0]),
        durations: vec![6.0],
        burn_in: 20,
        steps: 300,
        thin: 3,
        ..SimulationConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let net = cfg.initial_network(4).unwrap();
    let rec = simulate_tergm(&cfg.tergm_spec().unwrap(), &net, cfg.run_options(), cfg.model().unwrap().terms(), 4).unwrap();
    rec.write_outputs(dir.path(), cfg.targets.as_deref()).unwrap();

    let stats = std::fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    let mut lines = stats.lines();
    assert_eq!(lines.next(), Some("step,edges,degree(1)"));
    // Steps 3, 6, ..., 320 are recorded.
    assert_eq!(lines.count(), 320 / 3);

    let spells = std::fs::read_to_string(dir.path().join("spells.csv")).unwrap();
    let rows: Vec<&str> = spells.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 3);
        assert_eq!(f[0], "1");
        assert!(f[1].parse::<i64>().unwrap() >= 1);
        assert!(f[2] == "0" || f[2] == "1");
    }

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 4);
    let text = summary.to_string();
    for key in ["mean", "se", "rel_error", "target"] {
        assert!(text.contains(&format!("\"{key}\"")), "{key} missing");
    }
}

#[test]
fn experiment_outputs() {
    let cfg = ExperimentConfig {
        single_dyad_p: vec![0.2],
        durations: vec![3.0, 6.0],
        steps_per_duration: 200,
        ..ExperimentConfig::defaults_for(Design::SingleDyad)
    };
    let table = run_experiment(&cfg, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_plotdata(&table, dir.path()).unwrap();
    let plot = std::fs::read_to_string(dir.path().join("plotdata.csv")).unwrap();
    assert_eq!(plot.lines().next(), Some(PLOTDATA_HEADER));
    // Two durations, three variants, edges and duration rows each.
    assert_eq!(plot.lines().count(), 1 + 2 * 3 * 2);
    let cells: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cells.json")).unwrap()).unwrap();
    assert_eq!(cells["cells"].as_array().unwrap().len(), 6);
    assert!(dir.path().join("references.csv").exists());
}
