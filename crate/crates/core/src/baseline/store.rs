//! Centralized store with a reducer, memoized selectors and full-cycle
//! notification.
//!
//! Every dispatch replaces the state snapshot and then runs the change check
//! of every subscriber, whichever branch of the state actually changed.
//! Selectors skip re-evaluation while their input is the same as last time:
//! the same snapshot `Rc` for projections, equal argument lists for composed
//! selectors.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::LiveCounts;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("reducer failed: {0}")]
    Reducer(String),
    #[error("dispatch from inside a subscriber")]
    ReentrantDispatch,
}

pub type Reducer<S, A> = Box<dyn Fn(&Rc<S>, &A) -> Result<Rc<S>, StoreError>>;

#[derive(Default, Debug)]
struct Stats {
    live_selectors: Cell<usize>,
    selector_edges: Cell<usize>,
    active_subscriptions: Cell<usize>,
    dispatches: Cell<u64>,
    notification_checks: Cell<u64>,
    handler_calls: Cell<u64>,
    evaluations: Cell<u64>,
}

fn bump(cell: &Cell<u64>) {
    cell.set(cell.get() + 1);
}

fn add(cell: &Cell<usize>, delta: isize) {
    cell.set(cell.get().checked_add_signed(delta).expect("live counter underflow"));
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoreCounters {
    pub dispatches: u64,
    /// Subscriber change checks; one per subscriber per dispatch.
    pub notification_checks: u64,
    pub handler_calls: u64,
    /// Selector re-evaluations across all selectors.
    pub selector_evaluations: u64,
}

/// Shared instrumentation for stores and selectors.
#[derive(Clone, Default)]
pub struct StoreRuntime {
    stats: Rc<Stats>,
}

impl fmt::Debug for StoreRuntime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StoreRuntime")
            .field("live", &self.live_counts())
            .field("counters", &self.counters())
            .finish()
    }
}

impl StoreRuntime {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store<S: 'static, A: 'static>(
        &self,
        initial: Rc<S>,
        reducer: impl Fn(&Rc<S>, &A) -> Result<Rc<S>, StoreError> + 'static,
    ) -> Store<S, A> {
        Store {
            inner: Rc::new(StoreInner {
                state: RefCell::new(initial),
                reducer: Box::new(reducer),
                subscribers: RefCell::new(Vec::new()),
                dispatching: Cell::new(false),
                next_id: Cell::new(0),
                stats: self.stats.clone(),
            }),
        }
    }

    /// General memoized selector. `input` extracts the memo key from the
    /// snapshot (cheap, uncounted); `project` runs only when `same_input`
    /// says the key changed.
    pub fn select_with<S, I, T>(
        &self,
        input: impl Fn(&Rc<S>) -> I + 'static,
        same_input: impl Fn(&I, &I) -> bool + 'static,
        project: impl Fn(&I) -> T + 'static,
    ) -> Selector<S, T>
    where
        S: 'static,
        I: 'static,
        T: Clone + 'static,
    {
        self.make_selector(input, same_input, project, 0)
    }

    /// Projection memoized on the identity of the state snapshot.
    pub fn select_memo<S, T>(&self, project: impl Fn(&S) -> T + 'static) -> Selector<S, T>
    where
        S: 'static,
        T: Clone + 'static,
    {
        self.make_selector(|s: &Rc<S>| s.clone(), Rc::ptr_eq, move |s: &Rc<S>| project(s), 0)
    }

    /// Selector over the outputs of other selectors; re-evaluates the
    /// combiner only when some input output changed.
    pub fn select_composed<S, T>(
        &self,
        inputs: &[Selector<S, T>],
        combiner: impl Fn(&[T]) -> T + 'static,
    ) -> Selector<S, T>
    where
        S: 'static,
        T: Clone + PartialEq + 'static,
    {
        let parents: Vec<Selector<S, T>> = inputs.to_vec();
        let edges = parents.len();
        self.make_selector(
            move |s: &Rc<S>| parents.iter().map(|p| p.select(s)).collect::<Vec<T>>(),
            |a: &Vec<T>, b: &Vec<T>| a == b,
            move |args: &Vec<T>| combiner(args),
            edges,
        )
    }

    fn make_selector<S, I, T>(
        &self,
        input: impl Fn(&Rc<S>) -> I + 'static,
        same_input: impl Fn(&I, &I) -> bool + 'static,
        project: impl Fn(&I) -> T + 'static,
        edges: usize,
    ) -> Selector<S, T>
    where
        S: 'static,
        I: 'static,
        T: Clone + 'static,
    {
        let stats = self.stats.clone();
        add(&stats.live_selectors, 1);
        add(&stats.selector_edges, edges as isize);
        let memo: RefCell<Option<(I, T)>> = RefCell::new(None);
        let evaluations = Rc::new(Cell::new(0u64));
        let counter = evaluations.clone();
        let eval_stats = stats.clone();
        let compute = move |state: &Rc<S>| -> T {
            let key = input(state);
            if let Some((last, out)) = &*memo.borrow() {
                if same_input(last, &key) {
                    return out.clone();
                }
            }
            bump(&counter);
            bump(&eval_stats.evaluations);
            let out = project(&key);
            *memo.borrow_mut() = Some((key, out.clone()));
            out
        };
        Selector {
            inner: Rc::new(SelectorInner {
                compute: Box::new(compute),
                evaluations,
                edges,
                stats,
            }),
        }
    }

    pub fn counters(&self) -> StoreCounters {
        StoreCounters {
            dispatches: self.stats.dispatches.get(),
            notification_checks: self.stats.notification_checks.get(),
            handler_calls: self.stats.handler_calls.get(),
            selector_evaluations: self.stats.evaluations.get(),
        }
    }

    /// Live selectors, composed-selector edges and active store subscriptions.
    pub fn live_counts(&self) -> LiveCounts {
        LiveCounts {
            live_nodes: self.stats.live_selectors.get(),
            live_edges: self.stats.selector_edges.get(),
            live_effects: 0,
            retained_subscriptions: self.stats.active_subscriptions.get(),
        }
    }
}

struct SelectorInner<S, T> {
    compute: Box<dyn Fn(&Rc<S>) -> T>,
    evaluations: Rc<Cell<u64>>,
    edges: usize,
    stats: Rc<Stats>,
}

impl<S, T> Drop for SelectorInner<S, T> {
    fn drop(&mut self) {
        add(&self.stats.live_selectors, -1);
        add(&self.stats.selector_edges, -(self.edges as isize));
    }
}

pub struct Selector<S, T> {
    inner: Rc<SelectorInner<S, T>>,
}

impl<S, T> Clone for Selector<S, T> {
    fn clone(&self) -> Self {
        Self {
            inner: self.inner.clone(),
        }
    }
}

impl<S, T> fmt::Debug for Selector<S, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Selector")
            .field("evaluations", &self.inner.evaluations.get())
            .field("edges", &self.inner.edges)
            .finish()
    }
}

impl<S, T> Selector<S, T> {
    pub fn select(&self, state: &Rc<S>) -> T {
        (self.inner.compute)(state)
    }

    pub fn evaluations(&self) -> u64 {
        self.inner.evaluations.get()
    }
}

struct StoreSubscriber<S> {
    id: u64,
    check: Box<dyn FnMut(&Rc<S>)>,
    active: Rc<Cell<bool>>,
}

struct StoreInner<S, A> {
    state: RefCell<Rc<S>>,
    reducer: Reducer<S, A>,
    subscribers: RefCell<Vec<StoreSubscriber<S>>>,
    dispatching: Cell<bool>,
    next_id: Cell<u64>,
    stats: Rc<Stats>,
}

impl<S, A> Drop for StoreInner<S, A> {
    fn drop(&mut self) {
        for sub in self.subscribers.get_mut().drain(..) {
            if sub.active.replace(false) {
                add(&self.stats.active_subscriptions, -1);
            }
        }
    }
}

pub struct Store<S, A> {
    inner: Rc<StoreInner<S, A>>,
}

impl<S, A> Clone for Store<S, A> {
    fn clone(&self) -> Self {
        Self {
            inner: self.inner.clone(),
        }
    }
}

impl<S, A> fmt::Debug for Store<S, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("subscribers", &self.inner.subscribers.borrow().len())
            .finish()
    }
}

impl<S: 'static, A: 'static> Store<S, A> {
    pub fn state(&self) -> Rc<S> {
        self.inner.state.borrow().clone()
    }

    pub fn subscriber_count(&self) -> usize {
        self.inner.subscribers.borrow().len()
    }

    /// Runs the reducer, installs the new snapshot and checks every
    /// subscriber. On reducer error the state is left as it was.
    pub fn dispatch(&self, action: &A) -> Result<(), StoreError> {
        if self.inner.dispatching.get() {
            return Err(StoreError::ReentrantDispatch);
        }
        let current = self.state();
        let next = (self.inner.reducer)(&current, action)?;
        *self.inner.state.borrow_mut() = next.clone();
        bump(&self.inner.stats.dispatches);

        self.inner.dispatching.set(true);
        let mut subscribers = std::mem::take(&mut *self.inner.subscribers.borrow_mut());
        for sub in subscribers.iter_mut() {
            if sub.active.get() {
                bump(&self.inner.stats.notification_checks);
                (sub.check)(&next);
            }
        }
        // subscriptions added by handlers during the cycle land after the old ones
        let mut slot = self.inner.subscribers.borrow_mut();
        subscribers.append(&mut slot);
        subscribers.retain(|s| s.active.get());
        *slot = subscribers;
        drop(slot);
        self.inner.dispatching.set(false);
        Ok(())
    }

    /// Registers `handler` to run whenever `selector`'s output changes.
    /// The selector is evaluated once up front; the handler is not called.
    pub fn subscribe<T>(&self, selector: &Selector<S, T>, mut handler: impl FnMut(&T) + 'static) -> StoreSubscription
    where
        T: Clone + PartialEq + 'static,
    {
        let id = self.inner.next_id.get();
        self.inner.next_id.set(id + 1);
        let selector = selector.clone();
        let mut last = selector.select(&self.state());
        let stats = self.inner.stats.clone();
        let handler_stats = stats.clone();
        let check = move |state: &Rc<S>| {
            let out = selector.select(state);
            if out != last {
                last = out;
                bump(&handler_stats.handler_calls);
                handler(&last);
            }
        };
        let active = Rc::new(Cell::new(true));
        self.inner.subscribers.borrow_mut().push(StoreSubscriber {
            id,
            check: Box::new(check),
            active: active.clone(),
        });
        add(&stats.active_subscriptions, 1);
        let weak = Rc::downgrade(&self.inner);
        StoreSubscription {
            active,
            stats,
            detach: Some(Box::new(move || {
                if let Some(inner) = weak.upgrade() {
                    // during a dispatch the list is detached; the inactive flag covers it
                    if let Ok(mut subs) = inner.subscribers.try_borrow_mut() {
                        subs.retain(|s| s.id != id);
                    }
                }
            })),
        }
    }
}

pub struct StoreSubscription {
    active: Rc<Cell<bool>>,
    stats: Rc<Stats>,
    detach: Option<Box<dyn FnOnce()>>,
}

impl fmt::Debug for StoreSubscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StoreSubscription")
            .field("active", &self.active.get())
            .finish()
    }
}

impl StoreSubscription {
    pub fn is_active(&self) -> bool {
        self.active.get()
    }

    /// Double unsubscribe is a no-op.
    pub fn unsubscribe(&mut self) {
        if let Some(detach) = self.detach.take() {
            detach();
        }
        if self.active.replace(false) {
            add(&self.stats.active_subscriptions, -1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    type State = BTreeMap<&'static str, Rc<BTreeMap<&'static str, i64>>>;

    enum Action {
        Set(&'static str, &'static str, i64),
        Noop,
        Fail,
    }

    fn reducer(state: &Rc<State>, action: &Action) -> Result<Rc<State>, StoreError> {
        match action {
            Action::Noop => Ok(state.clone()),
            Action::Fail => Err(StoreError::Reducer("boom".into())),
            Action::Set(branch, key, v) => {
                let mut next = (**state).clone();
                let mut leaf = (*next[branch]).clone();
                leaf.insert(key, *v);
                next.insert(branch, Rc::new(leaf));
                Ok(Rc::new(next))
            }
        }
    }

    fn initial() -> Rc<State> {
        let mut s = State::new();
        s.insert("a", Rc::new(BTreeMap::from([("x", 0)])));
        s.insert("b", Rc::new(BTreeMap::from([("y", 0)])));
        Rc::new(s)
    }

    fn branch_selector(rt: &StoreRuntime, branch: &'static str, key: &'static str) -> Selector<State, i64> {
        rt.select_with(
            move |s: &Rc<State>| s[branch].clone(),
            Rc::ptr_eq,
            move |leaf: &Rc<BTreeMap<&'static str, i64>>| leaf[key],
        )
    }

    #[test]
    fn noop_dispatch_rechecks_without_reevaluating() {
        let rt = StoreRuntime::new();
        let store = rt.store(initial(), reducer);
        let sel = rt.select_memo(|s: &State| s["a"]["x"]);
        let _sub = store.subscribe(&sel, |_| {});
        assert_eq!(sel.evaluations(), 1);
        store.dispatch(&Action::Noop).unwrap();
        assert_eq!(rt.counters().notification_checks, 1);
        assert_eq!(sel.evaluations(), 1);
    }

    #[test]
    fn full_cycle_checks_are_quadratic() {
        let n = 12u64;
        let rt = StoreRuntime::new();
        let store = rt.store(initial(), reducer);
        let subs: Vec<_> = (0..n)
            .map(|_| store.subscribe(&branch_selector(&rt, "a", "x"), |_| {}))
            .collect();
        store.dispatch(&Action::Set("b", "y", 1)).unwrap();
        assert_eq!(rt.counters().notification_checks, n);
        for i in 1..n {
            store.dispatch(&Action::Set("b", "y", i as i64 + 1)).unwrap();
        }
        assert_eq!(rt.counters().notification_checks, n * n);
        assert_eq!(rt.live_counts().retained_subscriptions, subs.len());
    }

    #[test]
    fn untouched_branch_never_fires() {
        let rt = StoreRuntime::new();
        let store = rt.store(initial(), reducer);
        let sel = branch_selector(&rt, "a", "x");
        let calls = Rc::new(Cell::new(0));
        let c = calls.clone();
        let _sub = store.subscribe(&sel, move |_| c.set(c.get() + 1));
        for i in 0..10 {
            store.dispatch(&Action::Set("b", "y", i + 1)).unwrap();
        }
        assert_eq!(rt.counters().notification_checks, 10);
        assert_eq!(calls.get(), 0);
        assert_eq!(sel.evaluations(), 1);
    }

    #[test]
    fn mutated_branch_fires_once_per_change() {
        let rt = StoreRuntime::new();
        let store = rt.store(initial(), reducer);
        let sel = branch_selector(&rt, "a", "x");
        let seen = Rc::new(RefCell::new(Vec::new()));
        let s = seen.clone();
        let _sub = store.subscribe(&sel, move |v| s.borrow_mut().push(*v));
        store.dispatch(&Action::Set("a", "x", 1)).unwrap();
        store.dispatch(&Action::Set("a", "x", 1)).unwrap();
        store.dispatch(&Action::Set("a", "x", 2)).unwrap();
        assert_eq!(*seen.borrow(), vec![1, 2]);
    }

    #[test]
    fn reducer_error_leaves_state() {
        let rt = StoreRuntime::new();
        let store = rt.store(initial(), reducer);
        let before = store.state();
        assert_eq!(store.dispatch(&Action::Fail), Err(StoreError::Reducer("boom".into())));
        assert!(Rc::ptr_eq(&before, &store.state()));
        assert_eq!(rt.counters().dispatches, 0);
    }

    #[test]
    fn composed_selectors_reuse_memoized_inputs() {
        let rt = StoreRuntime::new();
        let store = rt.store(initial(), reducer);
        let x = branch_selector(&rt, "a", "x");
        let y = branch_selector(&rt, "b", "y");
        let left = rt.select_composed(std::slice::from_ref(&x), |v| v[0] + 1);
        let right = rt.select_composed(std::slice::from_ref(&x), |v| v[0] * 2);
        let sink = rt.select_composed(&[left.clone(), right.clone(), y.clone()], |v| v.iter().sum());
        let last = Rc::new(Cell::new(0));
        let l = last.clone();
        let _sub = store.subscribe(&sink, move |v| l.set(*v));
        store.dispatch(&Action::Set("a", "x", 5)).unwrap();
        assert_eq!(last.get(), 6 + 10);
        assert_eq!([x.evaluations(), left.evaluations(), sink.evaluations()], [2, 2, 2]);
        assert_eq!(y.evaluations(), 1);
        assert_eq!(rt.live_counts().live_edges, 5);
    }

    #[test]
    fn unsubscribe_is_idempotent_and_stops_checks() {
        let rt = StoreRuntime::new();
        let store = rt.store(initial(), reducer);
        let mut sub = store.subscribe(&branch_selector(&rt, "a", "x"), |_| {});
        sub.unsubscribe();
        sub.unsubscribe();
        store.dispatch(&Action::Noop).unwrap();
        assert_eq!(rt.counters().notification_checks, 0);
        assert_eq!(rt.live_counts().retained_subscriptions, 0);
        assert_eq!(store.subscriber_count(), 0);
    }

    #[test]
    fn unsubscribe_during_dispatch_skips_later_check() {
        let rt = StoreRuntime::new();
        let store = rt.store(initial(), reducer);
        let victim: Rc<RefCell<Option<StoreSubscription>>> = Rc::new(RefCell::new(None));
        let v = victim.clone();
        let _killer = store.subscribe(&branch_selector(&rt, "a", "x"), move |_| {
            if let Some(s) = v.borrow_mut().as_mut() {
                s.unsubscribe();
            }
        });
        *victim.borrow_mut() = Some(store.subscribe(&branch_selector(&rt, "a", "x"), |_| {}));
        store.dispatch(&Action::Set("a", "x", 1)).unwrap();
        assert_eq!(rt.counters().notification_checks, 1);
        assert_eq!(store.subscriber_count(), 1);
    }

    #[test]
    fn dropping_the_store_releases_subscriptions() {
        let rt = StoreRuntime::new();
        {
            let store = rt.store(initial(), reducer);
            let _sub = store.subscribe(&branch_selector(&rt, "a", "x"), |_| {});
            assert_eq!(rt.live_counts().retained_subscriptions, 1);
        }
        assert_eq!(rt.live_counts(), LiveCounts::default());
    }
}
