use std::fs;

use ata_core::bench::{
    evaluate_candidate, load_benchmark, load_candidate, run_engine_as_candidate, write_benchmark, write_candidate,
    CandidateOutput, ScoreOptions,
};
use ata_core::par::Execution;
use ata_core::tracegen::{generate_suite, SuiteConfig};
use ata_core::Error;

#[test]
fn default_suite_scores() {
    let dir = tempfile::tempdir().unwrap();
    let suite = generate_suite(&SuiteConfig::default(), 7, Execution::default()).unwrap();
    write_benchmark(dir.path(), &suite.cases).unwrap();
    write_candidate(dir.path(), "tamas", &suite.tamas_like()).unwrap();
    let bench = load_benchmark(dir.path()).unwrap();
    assert_eq!(bench.cases.len(), 30);
    for (b, g) in bench.cases.iter().zip(&suite.cases) {
        assert_eq!(b.gt_flow, g.gt_flow);
        assert_eq!(b.gt_summary, g.gt_summary);
        assert_eq!(b.gt_failures, g.gt_failures);
        assert_eq!(b.expected, g.expected);
        assert_eq!(b.final_output, g.final_output);
    }

    let engine = run_engine_as_candidate(&bench, Execution::default());
    let report = evaluate_candidate(&bench, "engine", &engine, &ScoreOptions::default(), Execution::default()).unwrap();
    assert_eq!(report.summary_match_fraction, 1.0, "{}", report.to_text());
    assert_eq!(report.mean_flow_ged, 0.0);
    assert_eq!(report.mean_failure_similarity, 1.0);
    assert!(report.per_case.iter().all(|c| c.flow_ged == Some(0.0) && c.flow_ged_exact));

    let tamas = load_candidate(&bench, "tamas").unwrap();
    assert_eq!(tamas, suite.tamas_like());
    let report = evaluate_candidate(&bench, "tamas", &tamas, &ScoreOptions::default(), Execution::Sequential).unwrap();
    assert_eq!(report.summary_matches(), 18, "{}", report.to_text());
    assert!((report.summary_match_fraction - 0.60).abs() < 1e-12);
    // syntax-error cases come back as empty flows, the rest as exact copies
    for (c, case) in report.per_case.iter().zip(&bench.cases) {
        let want = if case.tags.iter().any(|t| t == "syntax_error") { case.gt_flow.len() as f64 } else { 0.0 };
        assert!(c.flow_ged.unwrap() >= want.min(1.0), "{}", c.case_id);
    }
}

#[test]
fn missing_and_unknown_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SuiteConfig {
        cases: 6,
        numerical: 3,
        distributed: 2,
        syntax_errors: 1,
        incorrect: 2,
        happy_paths: 2,
        validator_cases: 1,
        ..SuiteConfig::default()
    };
    let suite = generate_suite(&cfg, 3, Execution::Sequential).unwrap();
    write_benchmark(dir.path(), &suite.cases).unwrap();
    let bench = load_benchmark(dir.path()).unwrap();
    let mut outputs = run_engine_as_candidate(&bench, Execution::Sequential);
    outputs.pop();
    let r = evaluate_candidate(&bench, "partial", &outputs, &ScoreOptions::default(), Execution::Sequential).unwrap();
    assert_eq!(r.summary_matches(), 5);
    let last = r.per_case.last().unwrap();
    assert_eq!((last.summary_match, last.flow_ged, last.failure_similarity), (false, None, 0.0));
    outputs.push(CandidateOutput {
        case_id: "nope".into(),
        summary: None,
        flow: None,
        failures: None,
    });
    assert!(matches!(
        evaluate_candidate(&bench, "bad", &outputs, &ScoreOptions::default(), Execution::Sequential),
        Err(Error::UnknownCase(_))
    ));
}

#[test]
fn inconsistent_ground_truth_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SuiteConfig {
        cases: 3,
        numerical: 2,
        distributed: 0,
        syntax_errors: 0,
        incorrect: 0,
        happy_paths: 3,
        validator_cases: 0,
        include_reference_cases: false,
        ..SuiteConfig::default()
    };
    let suite = generate_suite(&cfg, 1, Execution::Sequential).unwrap();
    write_benchmark(dir.path(), &suite.cases).unwrap();
    let path = dir.path().join("gt/summary.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[1].split(',').map(String::from).collect();
    cols[2] = (cols[2].parse::<u64>().unwrap() + 1).to_string();
    lines[1] = cols.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(load_benchmark(dir.path()), Err(Error::InconsistentGt { .. })));
    fs::remove_file(dir.path().join("cases.csv")).unwrap();
    assert!(matches!(load_benchmark(dir.path()), Err(Error::MissingFile(_))));
}
