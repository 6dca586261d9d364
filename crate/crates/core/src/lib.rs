//! Signal-based reactive runtime, two baseline reactivity runtimes, and a
//! deterministic benchmark harness comparing them.
//!
//! - [`reactive`]: signals, computeds and effects with glitch-free,
//!   rank-ordered propagation and scope-based disposal.
//! - [`baseline`]: eager observable chains and a reducer store with memoized
//!   selectors, instrumented with the same counters.
//! - [`scenario`]: seeded dataflow topologies realized on all three runtimes,
//!   plus a brute-force oracle.
//! - [`stats`]: descriptive statistics, rank-sum significance, effect sizes,
//!   multiple-comparison correction and composite scores.
//! - [`bench`]: run configuration, report assembly and report comparison.

pub mod baseline;
pub mod bench;
pub mod reactive;
pub mod scenario;
pub mod stats;

pub use reactive::LiveCounts;
