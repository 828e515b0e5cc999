//! Experiments (stub).
