//! Eager observable chains over behavior subjects.
//!
//! Emissions are delivered synchronously and depth-first, in subscription
//! order, with no batching or deduplication. A combine over two paths from the
//! same source therefore fires once per upstream emission, which is exactly
//! the glitch behaviour this baseline exists to model.
//!
//! Subscriptions are explicit. Dropping a [`Subscription`] handle does not
//! unsubscribe; the runtime counters keep reporting it until
//! [`Subscription::unsubscribe`] is called or its subject completes.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::{Rc, Weak};

use thiserror::Error;

use crate::LiveCounts;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObservableError {
    #[error("emission on a closed subject")]
    EmissionOnClosed,
    #[error("subscription to a closed subject")]
    SubscribeOnClosed,
}

#[derive(Default, Debug)]
struct Stats {
    live_subjects: Cell<usize>,
    active_subscriptions: Cell<usize>,
    operator_subscriptions: Cell<usize>,
    emissions: Cell<u64>,
    deliveries: Cell<u64>,
    projections: Cell<u64>,
}

fn bump(cell: &Cell<u64>) {
    cell.set(cell.get() + 1);
}

/// Counters shared by every subject created from one [`ObservableRuntime`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ObservableCounters {
    /// `next` calls that stored a value, on any subject.
    pub emissions: u64,
    /// Handler invocations, including the replay on subscribe.
    pub deliveries: u64,
    /// Operator projection calls (`map` / `combine` functions).
    pub projections: u64,
}

/// Factory and instrumentation context for subjects and operators.
#[derive(Clone, Default)]
pub struct ObservableRuntime {
    stats: Rc<Stats>,
}

impl fmt::Debug for ObservableRuntime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservableRuntime")
            .field("live", &self.live_counts())
            .field("counters", &self.counters())
            .finish()
    }
}

impl ObservableRuntime {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subject<T: Clone + 'static>(&self, initial: T) -> Subject<T> {
        let stats = self.stats.clone();
        stats.live_subjects.set(stats.live_subjects.get() + 1);
        Subject {
            inner: Rc::new(SubjectInner {
                value: RefCell::new(initial),
                observers: RefCell::new(Vec::new()),
                upstream: RefCell::new(Vec::new()),
                closed: Cell::new(false),
                emissions: Cell::new(0),
                next_id: Cell::new(0),
                stats,
            }),
        }
    }

    /// Derived subject holding `project(src)`, re-emitting on every emission of `src`.
    pub fn map<T, U, F>(&self, src: &Subject<T>, project: F) -> Result<Subject<U>, ObservableError>
    where
        T: Clone + 'static,
        U: Clone + 'static,
        F: Fn(&T) -> U + 'static,
    {
        self.combine_latest(std::slice::from_ref(src), move |vals: &[T]| project(&vals[0]))
    }

    pub fn combine<T, U, F>(
        &self,
        a: &Subject<T>,
        b: &Subject<T>,
        project: F,
    ) -> Result<Subject<U>, ObservableError>
    where
        T: Clone + 'static,
        U: Clone + 'static,
        F: Fn(&T, &T) -> U + 'static,
    {
        self.combine_latest(&[a.clone(), b.clone()], move |vals: &[T]| project(&vals[0], &vals[1]))
    }

    /// N-ary combine: emits `project(latest values)` on every input emission.
    ///
    /// The derived subject retains one subscription per input, and each
    /// input keeps the derived subject alive through it. They are torn down
    /// only when the derived subject completes.
    pub fn combine_latest<T, U, F>(
        &self,
        sources: &[Subject<T>],
        project: F,
    ) -> Result<Subject<U>, ObservableError>
    where
        T: Clone + 'static,
        U: Clone + 'static,
        F: Fn(&[T]) -> U + 'static,
    {
        if sources.iter().any(|s| s.is_closed()) {
            return Err(ObservableError::SubscribeOnClosed);
        }
        let latest: Rc<RefCell<Vec<T>>> = Rc::new(RefCell::new(sources.iter().map(Subject::value).collect()));
        let project = Rc::new(project);
        bump(&self.stats.projections);
        let derived = self.subject(project(&latest.borrow()));

        for (slot, source) in sources.iter().enumerate() {
            let target = derived.clone();
            let latest = latest.clone();
            let project = project.clone();
            let stats = self.stats.clone();
            let mut primed = false;
            let sub = source.subscribe_inner(move |v: &T| {
                latest.borrow_mut()[slot] = v.clone();
                // the behavior replay on subscribe only primes the slot
                if !primed {
                    primed = true;
                    return;
                }
                bump(&stats.projections);
                let out = project(&latest.borrow());
                // a closed downstream simply stops receiving
                let _ = target.next(out);
            })?;
            self.stats
                .operator_subscriptions
                .set(self.stats.operator_subscriptions.get() + 1);
            derived.inner.upstream.borrow_mut().push(sub.operator());
        }
        Ok(derived)
    }

    pub fn counters(&self) -> ObservableCounters {
        ObservableCounters {
            emissions: self.stats.emissions.get(),
            deliveries: self.stats.deliveries.get(),
            projections: self.stats.projections.get(),
        }
    }

    /// Live subjects, operator edges, and every active subscription.
    pub fn live_counts(&self) -> LiveCounts {
        LiveCounts {
            live_nodes: self.stats.live_subjects.get(),
            live_edges: self.stats.operator_subscriptions.get(),
            live_effects: 0,
            retained_subscriptions: self.stats.active_subscriptions.get(),
        }
    }
}

type Handler<T> = Rc<RefCell<dyn FnMut(&T)>>;

struct Observer<T> {
    id: u64,
    handler: Handler<T>,
    active: Rc<Cell<bool>>,
}

struct SubjectInner<T> {
    value: RefCell<T>,
    observers: RefCell<Vec<Observer<T>>>,
    upstream: RefCell<Vec<Subscription>>,
    closed: Cell<bool>,
    emissions: Cell<u64>,
    next_id: Cell<u64>,
    stats: Rc<Stats>,
}

impl<T> Drop for SubjectInner<T> {
    fn drop(&mut self) {
        self.stats.live_subjects.set(self.stats.live_subjects.get() - 1);
    }
}

/// A behavior subject: holds a current value and replays it on subscribe.
pub struct Subject<T> {
    inner: Rc<SubjectInner<T>>,
}

impl<T> Clone for Subject<T> {
    fn clone(&self) -> Self {
        Self {
            inner: self.inner.clone(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Subject<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subject")
            .field("value", &*self.inner.value.borrow())
            .field("observers", &self.inner.observers.borrow().len())
            .field("closed", &self.inner.closed.get())
            .finish()
    }
}

impl<T: Clone + 'static> Subject<T> {
    pub fn value(&self) -> T {
        self.inner.value.borrow().clone()
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.get()
    }

    /// Number of times this subject emitted.
    pub fn emissions(&self) -> u64 {
        self.inner.emissions.get()
    }

    pub fn observer_count(&self) -> usize {
        self.inner.observers.borrow().len()
    }

    /// Stores `value` and synchronously notifies every observer in order.
    pub fn next(&self, value: T) -> Result<(), ObservableError> {
        if self.is_closed() {
            return Err(ObservableError::EmissionOnClosed);
        }
        *self.inner.value.borrow_mut() = value.clone();
        bump(&self.inner.emissions);
        bump(&self.inner.stats.emissions);
        let handlers: Vec<(Handler<T>, Rc<Cell<bool>>)> = self
            .inner
            .observers
            .borrow()
            .iter()
            .map(|o| (o.handler.clone(), o.active.clone()))
            .collect();
        for (handler, active) in handlers {
            // an earlier handler may have unsubscribed this one
            if active.get() {
                bump(&self.inner.stats.deliveries);
                (handler.borrow_mut())(&value);
            }
        }
        Ok(())
    }

    /// Subscribes `handler`; it receives the current value immediately.
    pub fn subscribe(&self, handler: impl FnMut(&T) + 'static) -> Result<Subscription, ObservableError> {
        self.subscribe_inner(handler)
    }

    fn subscribe_inner(&self, handler: impl FnMut(&T) + 'static) -> Result<Subscription, ObservableError> {
        if self.is_closed() {
            return Err(ObservableError::SubscribeOnClosed);
        }
        let id = self.inner.next_id.get();
        self.inner.next_id.set(id + 1);
        let handler: Handler<T> = Rc::new(RefCell::new(handler));
        let active = Rc::new(Cell::new(true));
        self.inner.observers.borrow_mut().push(Observer {
            id,
            handler: handler.clone(),
            active: active.clone(),
        });
        let stats = self.inner.stats.clone();
        stats.active_subscriptions.set(stats.active_subscriptions.get() + 1);

        let weak: Weak<SubjectInner<T>> = Rc::downgrade(&self.inner);
        let subscription = Subscription {
            id,
            active: active.clone(),
            operator: false,
            stats: stats.clone(),
            detach: Some(Box::new(move || {
                if let Some(inner) = weak.upgrade() {
                    inner.observers.borrow_mut().retain(|o| o.id != id);
                }
            })),
        };

        let current = self.value();
        bump(&stats.deliveries);
        (handler.borrow_mut())(&current);
        Ok(subscription)
    }

    /// Closes the subject: observers are released and upstream operator
    /// subscriptions torn down. Further emissions are rejected.
    pub fn complete(&self) {
        if self.inner.closed.replace(true) {
            return;
        }
        let observers = std::mem::take(&mut *self.inner.observers.borrow_mut());
        for o in observers {
            if o.active.replace(false) {
                let stats = &self.inner.stats;
                stats.active_subscriptions.set(stats.active_subscriptions.get() - 1);
            }
        }
        let upstream = std::mem::take(&mut *self.inner.upstream.borrow_mut());
        for mut sub in upstream {
            sub.unsubscribe();
        }
    }
}

/// An explicit registration that must be torn down by hand.
pub struct Subscription {
    id: u64,
    active: Rc<Cell<bool>>,
    operator: bool,
    stats: Rc<Stats>,
    detach: Option<Box<dyn FnOnce()>>,
}

impl fmt::Debug for Subscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subscription")
            .field("id", &self.id)
            .field("active", &self.active.get())
            .finish()
    }
}

impl Subscription {
    pub fn is_active(&self) -> bool {
        self.active.get()
    }

    /// Removes the handler. Unsubscribing twice is a no-op.
    pub fn unsubscribe(&mut self) {
        if let Some(detach) = self.detach.take() {
            detach();
        }
        if self.active.replace(false) {
            self.stats
                .active_subscriptions
                .set(self.stats.active_subscriptions.get() - 1);
            if self.operator {
                self.stats
                    .operator_subscriptions
                    .set(self.stats.operator_subscriptions.get() - 1);
            }
        }
    }

    fn operator(mut self) -> Self {
        self.operator = true;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recorder<T: Clone + 'static>() -> (Rc<RefCell<Vec<T>>>, impl FnMut(&T)) {
        let log = Rc::new(RefCell::new(Vec::new()));
        let sink = log.clone();
        (log, move |v: &T| sink.borrow_mut().push(v.clone()))
    }

    #[test]
    fn next_without_subscribers_delivers_nothing() {
        let rt = ObservableRuntime::new();
        let s = rt.subject(1);
        s.next(2).unwrap();
        assert_eq!(rt.counters().deliveries, 0);
        assert_eq!(s.value(), 2);
    }

    #[test]
    fn map_chain_notifies_once_per_stage() {
        let rt = ObservableRuntime::new();
        let head = rt.subject(0i64);
        let a = rt.map(&head, |v| v + 1).unwrap();
        let b = rt.map(&a, |v| v + 1).unwrap();
        let c = rt.map(&b, |v| v + 1).unwrap();
        let before = rt.counters().deliveries;
        head.next(10).unwrap();
        assert_eq!(rt.counters().deliveries - before, 3);
        assert_eq!(c.value(), 13);
        assert_eq!([a.emissions(), b.emissions(), c.emissions()], [1, 1, 1]);
    }

    #[test]
    fn map_and_combine_values() {
        let rt = ObservableRuntime::new();
        let s = rt.subject(4i64);
        assert_eq!(rt.map(&s, |v| v + 1).unwrap().value(), 5);

        let a = rt.subject(1i64);
        let b = rt.subject(2i64);
        let sum = rt.combine(&a, &b, |x, y| x + y).unwrap();
        assert_eq!(sum.value(), 3);
        a.next(10).unwrap();
        assert_eq!(sum.emissions(), 1);
        assert_eq!(sum.value(), 12);
    }

    #[test]
    fn combine_diamond_glitches() {
        let rt = ObservableRuntime::new();
        let src = rt.subject(1i64);
        let left = rt.map(&src, |v| v + 1).unwrap();
        let right = rt.map(&src, |v| v * 2).unwrap();
        let sink = rt.combine(&left, &right, |l, r| l + r).unwrap();
        let (seen, handler) = recorder();
        let _sub = sink.subscribe(handler).unwrap();
        src.next(5).unwrap();
        // depth-first: left emits first, sink sees (6, 2) before (6, 10)
        assert_eq!(sink.emissions(), 2);
        assert_eq!(*seen.borrow(), vec![4, 8, 16]);
    }

    #[test]
    fn subscribe_replays_then_unsubscribe_stops() {
        let rt = ObservableRuntime::new();
        let s = rt.subject(1);
        let (seen, handler) = recorder();
        let mut sub = s.subscribe(handler).unwrap();
        s.next(2).unwrap();
        assert_eq!(*seen.borrow(), vec![1, 2]);
        sub.unsubscribe();
        sub.unsubscribe();
        s.next(3).unwrap();
        assert_eq!(*seen.borrow(), vec![1, 2]);
        assert!(!sub.is_active());
        assert_eq!(rt.live_counts().retained_subscriptions, 0);
    }

    #[test]
    fn dropped_handles_leave_subscriptions_retained() {
        let rt = ObservableRuntime::new();
        let src = rt.subject(0i64);
        {
            let l = rt.map(&src, |v| v + 1).unwrap();
            let r = rt.map(&src, |v| v + 2).unwrap();
            let sink = rt.combine(&l, &r, |a, b| a + b).unwrap();
            let _consumer = sink.subscribe(|_| {}).unwrap();
        }
        let live = rt.live_counts();
        assert_eq!(live.retained_subscriptions, 5);
        assert_eq!(live.live_edges, 4);
        // the chain is still wired to the long-lived source
        assert_eq!(live.live_nodes, 4);
        src.next(1).unwrap();
    }

    #[test]
    fn complete_tears_down_upstream() {
        let rt = ObservableRuntime::new();
        let src = rt.subject(0i64);
        let m = rt.map(&src, |v| v + 1).unwrap();
        assert_eq!(src.observer_count(), 1);
        m.complete();
        assert_eq!(src.observer_count(), 0);
        assert_eq!(rt.live_counts().retained_subscriptions, 0);
        assert_eq!(m.next(3), Err(ObservableError::EmissionOnClosed));
        assert!(matches!(m.subscribe(|_| {}), Err(ObservableError::SubscribeOnClosed)));
        assert!(matches!(rt.map(&m, |v| *v), Err(ObservableError::SubscribeOnClosed)));
        src.next(5).unwrap();
        assert_eq!(m.value(), 1);
    }

    #[test]
    fn subjects_are_freed_when_unreachable() {
        let rt = ObservableRuntime::new();
        {
            let src = rt.subject(0i64);
            let _m = rt.map(&src, |v| v + 1).unwrap();
            assert_eq!(rt.live_counts().live_nodes, 2);
        }
        assert_eq!(rt.live_counts().live_nodes, 0);
    }
}
