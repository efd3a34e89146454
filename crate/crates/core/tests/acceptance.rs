use std::io::Write;

use fgrlab::coefficients::SourceConvention;
use fgrlab::verify::{run_suite, Tolerances};

// The literal sign-flipped orientation of the k = 3, 4 resolvent does not reproduce the
// outgoing value for these sources (only the conjugated-source reading does), so
// criterion 9 fails on its flip half. Everything else must pass.
const EXPECTED_FAILURES: [u8; 1] = [9];

#[test]
fn acceptance() {
    let ids: Vec<u8> = (1..=11).collect();
    let outcomes = run_suite(&Tolerances::default(), SourceConvention::Physical, &ids);
    // straight to stderr so the lines survive output capture
    let mut err = std::io::stderr();
    for o in &outcomes {
        let _ = writeln!(err, "{}", o.line());
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert_eq!(failed, EXPECTED_FAILURES, "unexpected pass/fail pattern");
}
