//! Fast pass over the standard gradient-check suite. The acceptance
//! suite runs all seeds; here one seed proves every case is wired and
//! within tolerance without multiplying the runtime.

use cotnet::gradcheck::run_standard_suite;

#[test]
fn every_case_passes_on_one_seed() {
    let reports = run_standard_suite(&[1], |_| {}).unwrap();
    assert_eq!(reports.len(), 30);
    let failures: Vec<String> =
        reports.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
    assert!(failures.is_empty(), "failed checks:\n{}", failures.join("\n"));
}
