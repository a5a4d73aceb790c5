use serde_json::Value;

use sole_core::pipemodel::PipeConfig;
use sole_harness::experiments::{self as exp, Dist, Rows, UnitKind};
use sole_harness::report::RunReport;
use sole_harness::RUN_REPORT_SCHEMA;

fn reports() -> Vec<RunReport> {
    vec![
        exp::bias_check(1000, 1).unwrap(),
        exp::compress_err(4096, 1, Dist::Uniform).unwrap(),
        exp::compress_err(4096, 1, Dist::Normal).unwrap(),
        exp::softmax_fidelity(&Rows::gaussian(4, 50, 1), None, Some(1)).unwrap(),
        exp::layernorm_fidelity(&exp::layernorm_rows(4, 16, 1), 1).unwrap(),
        exp::attn_proxy(8, 4, 1).unwrap(),
        exp::cycles(UnitKind::Softmax, 100, 3, PipeConfig::default()).unwrap(),
    ]
}

#[test]
fn every_report_validates() {
    let schema: Value = serde_json::from_str(RUN_REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for r in reports() {
        let doc: Value = serde_json::from_str(&r.to_json()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", r.command);
    }
}

#[test]
fn schema_rejects_malformed_reports() {
    let schema: Value = serde_json::from_str(RUN_REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let good: Value = serde_json::from_str(&reports()[0].to_json()).unwrap();

    let mut missing = good.clone();
    missing.as_object_mut().unwrap().remove("criteria");
    assert!(!validator.is_valid(&missing));

    let mut bad_status = good.clone();
    bad_status["criteria"][0]["status"] = "maybe".into();
    assert!(!validator.is_valid(&bad_status));

    let mut extra = good;
    extra["timestamp"] = "2024-01-01".into();
    assert!(!validator.is_valid(&extra));
}
