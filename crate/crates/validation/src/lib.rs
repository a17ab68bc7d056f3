//! Acceptance checks live in .
