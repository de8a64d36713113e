use hcnet::verify::{format_table, run, Suite};

#[test]
fn every_suite_passes_on_a_correct_build() {
    let checks = run(Suite::All).unwrap();
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    for suite in Suite::EACH {
        assert!(checks.iter().any(|c| c.suite == suite), "{suite:?} missing");
    }
}

#[test]
fn conservation_reports_tiny_drift() {
    for c in run(Suite::Conservation).unwrap() {
        assert!(c.value <= 1e-12, "{c:?}");
    }
}

#[test]
fn spectrum_lists_the_doubled_pairs() {
    let checks = run(Suite::Spectrum).unwrap();
    let sq = checks.iter().find(|c| c.name == "square_on_doubled_pairs").unwrap();
    for pair in ["(0,2)", "(2,0)", "(2,2)"] {
        assert!(sq.detail.contains(pair), "{}", sq.detail);
    }
}

#[test]
fn table_has_one_row_per_check() {
    let checks = run(Suite::Superposition).unwrap();
    let table = format_table(&checks);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("suite,check,value,bound,status,detail"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), checks.len());
    assert!(rows.iter().all(|r| r.starts_with("superposition,") && r.contains(",PASS")));
    assert!("bogus".parse::<Suite>().is_err());
}
