//! Acceptance criteria for `mgfa`, run by `cargo test -p mgfa-validation`.
//!
//! The criteria live in `tests/acceptance.rs`. Each prints one line:
//! `PASS`, `FAIL`, or `SKIP` when it depends on data that was not supplied.
