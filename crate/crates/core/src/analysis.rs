//! Analysis and IO (stub).
