use eki::{Overrides, RunConfig};
use eki_core::imaging::Metric;

#[test]
fn partial_sections_keep_run_defaults() {
    let cfg = RunConfig::from_json(r#"{ "flow": { "t_end": 5.0 }, "rod": { "n_elements": 8 } }"#)
        .unwrap();
    let d = RunConfig::default();
    assert_eq!(cfg.flow.t_end, 5.0);
    assert_eq!(cfg.flow.control, d.flow.control);
    assert_eq!(cfg.flow.samples_per_decade, d.flow.samples_per_decade);
    assert_eq!(cfg.rod.n_elements, 8);
    assert_eq!(cfg.rod.youngs_modulus, d.rod.youngs_modulus);
}

#[test]
fn defaults_survive_a_json_round_trip() {
    let d = RunConfig::default();
    assert_eq!(RunConfig::from_json(&d.to_json()).unwrap(), d);
    assert_eq!(RunConfig::from_json("{}").unwrap(), d);
}

#[test]
fn null_disables_the_cutoff() {
    let cfg = RunConfig::from_json(r#"{ "schedule": { "t_cutoff": null } }"#).unwrap();
    assert_eq!(cfg.schedule.t_cutoff, None);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(RunConfig::from_json(r#"{ "flow": { "t_ed": 5.0 } }"#).is_err());
}

#[test]
fn flags_override_the_file() {
    let mut cfg = RunConfig::default();
    cfg.apply(&Overrides {
        seed: Some(4),
        workers: Some(2),
        out: Some("o".into()),
        metric: Some(Metric::Manhattan),
        sigma: Some(60),
    });
    assert_eq!(
        (cfg.seed, cfg.workers, cfg.metric, cfg.sigma),
        (4, 2, Metric::Manhattan, 60)
    );
    assert_eq!(cfg.out, std::path::PathBuf::from("o"));
    assert!(cfg.validate().is_ok());
    cfg.ensemble.size = 1;
    assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
}
