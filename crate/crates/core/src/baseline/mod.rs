//! Comparison runtimes: eager observables and a centralized store.
//!
//! Both are synchronous and deterministic and report the same
//! [`LiveCounts`](crate::LiveCounts) snapshot as the signal runtime.

pub mod observable;
pub mod store;

pub use observable::{ObservableCounters, ObservableError, ObservableRuntime, Subject, Subscription};
pub use store::{Selector, Store, StoreCounters, StoreError, StoreRuntime, StoreSubscription};
