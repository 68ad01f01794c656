use graffl::eval::EvalReport;
use graffl::experiment::{
    generate_trimodal, ingest_csv, run_imbalance, run_scarce, run_trimodal, trimodal_truth, write_csv, CsvDataset,
    ExperimentConfig,
};
use graffl::{Error, Matrix, RngStream};

fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).unwrap().resolved().unwrap()
}

fn rows<'a>(reports: &'a [EvalReport], condition: &str) -> Vec<&'a EvalReport> {
    reports.iter().filter(|r| r.condition == condition).collect()
}

#[test]
fn csv_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("d.csv");
    let ds = CsvDataset {
        feature_names: vec!["age".into(), "weight, kg".into()],
        label_name: "died".into(),
        features: Matrix::from_rows(&[[61.5, 0.1 + 0.2], [-3e-12, 7.0]]).unwrap(),
        labels: vec![1, 0],
    };
    write_csv(&path, &ds).unwrap();
    assert_eq!(ingest_csv(&path, "died").unwrap(), ds);
    assert!(matches!(ingest_csv(&path, "survived"), Err(Error::MissingColumn(_))));
}

#[test]
fn csv_rejects_bad_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("d.csv");
    std::fs::write(&path, "a,y\n1,0\nNaN,1\n").unwrap();
    assert!(matches!(ingest_csv(&path, "y"), Err(Error::NonFiniteFeature { row: 1, .. })));
    std::fs::write(&path, "a,y\n1,yes\n").unwrap();
    assert!(matches!(ingest_csv(&path, "y"), Err(Error::NonBinaryLabel { row: 0, .. })));
    std::fs::write(&path, "a,y\n1,0,3\n").unwrap();
    assert!(matches!(ingest_csv(&path, "y"), Err(Error::Parse(_))));
}

#[test]
fn trimodal_fixture_matches_truth() {
    let d = generate_trimodal(50, &mut RngStream::new(4)).unwrap();
    assert_eq!(d.truth, trimodal_truth());
    assert_eq!(d.x.shape(), (150, 2));
}

#[test]
fn trimodal_run_reports_recovery() {
    let cfg = config(r#"{"scenario":"trimodal","seed":3,"sites":[{"n":20},{"n":20},{"n":20}],"abc":{"n_proposals":1200,"n_accept":12,"k":3}}"#);
    let a = run_trimodal(&cfg).unwrap();
    let rec = a.recovery.as_ref().unwrap();
    assert_eq!(rec.components.len(), 3);
    assert_eq!(a.posterior.accepted.len(), 12);
    let b = run_trimodal(&cfg).unwrap();
    assert_eq!(a.posterior, b.posterior);
}

const SMALL_SYNTHETIC: &str = r#""suffiae":{"epochs":5},"eval":{"epochs":30},"abc":{"n_proposals":2000,"n_accept":20,"k":1}"#;

#[test]
fn imbalance_reports_every_condition() {
    let cfg = config(&format!(
        r#"{{"scenario":"imbalance","seed":1,"sites":[{{"n":35}},{{"n":35}},{{"n":35}}],"synthetic":{{"test_n":140,"repeats":2}},{SMALL_SYNTHETIC}}}"#
    ));
    let out = run_imbalance(&cfg).unwrap();
    assert_eq!(out.reports.len(), 1 + 2 * 3);
    assert_eq!(out.reports[0].site, "all");
    assert_eq!(rows(&out.reports, "raw").len(), 3);
    for r in rows(&out.reports, "raw") {
        assert_eq!((r.n_pos, r.n_neg), (5, 30));
    }
    for r in rows(&out.reports, "graffl") {
        assert_eq!(r.n_pos, r.n_neg, "augmentation restores 1:1");
    }
    for r in &out.reports {
        assert!((0.0..=1.0).contains(&r.auc) && (0.0..=1.0).contains(&r.f1));
    }
}

#[test]
fn scarce_sites_fall_back_without_positives() {
    let cfg = config(&format!(
        r#"{{"scenario":"scarce","seed":2,"synthetic":{{"separation":4,"ratio":1,"test_n":120,"repeats":2,"affected_sites":3,"retain_fraction":0.05}},{SMALL_SYNTHETIC}}}"#
    ));
    let out = run_scarce(&cfg).unwrap();
    assert_eq!(out.reports.len(), 2 * 6);
    let raw = rows(&out.reports, "raw");
    for r in &raw[3..] {
        assert_eq!(r.n_pos, 1);
        assert_eq!((r.f1, r.auc), (0.0, 0.5));
    }
    for r in rows(&out.reports, "graffl") {
        assert_eq!(r.n_pos, r.n_neg);
    }
}

#[test]
fn imbalance_needs_two_minority_rows() {
    let cfg = config(r#"{"scenario":"imbalance","sites":[{"n":7}]}"#);
    assert!(matches!(run_imbalance(&cfg), Err(Error::MinorityTooSmall { site: 0, count: 1 })));
}
