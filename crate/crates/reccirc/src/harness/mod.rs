//! Fixtures, random instance generators, oracles and differential tests.

pub mod fixtures;
pub mod gen;
pub mod oracle;
pub mod shrink;
pub mod difftest;
