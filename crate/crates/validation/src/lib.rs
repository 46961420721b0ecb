//! Acceptance suite for the kac-ising crate; see tests/acceptance.rs.
