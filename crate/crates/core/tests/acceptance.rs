use melnikov_core::verify::{run, CHECKS};

#[test]
fn acceptance() {
    let results = run(&[]).unwrap();
    assert_eq!(results.len(), CHECKS.len());
    for (i, r) in results.iter().enumerate() {
        println!("criterion {:>2}: {}", i + 1, r.line());
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
