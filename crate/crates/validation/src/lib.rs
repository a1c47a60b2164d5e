//! Holds the `acceptance` integration test, which prints one PASS/FAIL line
//! per criterion. Kept out of the library crate so its multi-minute run
//! comes after the fast suites. Run it alone with
//! `cargo test -p hybrid-precoding-validation`.
