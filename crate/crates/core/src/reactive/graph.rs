use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::mem;
use std::rc::Rc;

use rustc_hash::FxHashMap;

use super::{
    Counters, Equality, Evaluation, LiveCounts, NodeId, NodeKind, ReactiveError, ScopeId,
    StabilizationStats,
};

pub type Result<T, E = ReactiveError> = std::result::Result<T, E>;

/// Number of propagation passes a single stabilization may run before effect
/// write cascades are declared non-convergent.
pub const DEFAULT_PASS_LIMIT: usize = 100;

type ComputeFn<V> = Rc<dyn Fn(&ReactiveGraph<V>) -> Result<V>>;
type EffectFn<V> = Rc<RefCell<dyn FnMut(&ReactiveGraph<V>) -> Result<()>>>;

enum Behavior<V> {
    Source,
    Computed(ComputeFn<V>),
    Effect(EffectFn<V>),
}

impl<V> Behavior<V> {
    fn kind(&self) -> NodeKind {
        match self {
            Behavior::Source => NodeKind::Source,
            Behavior::Computed(_) => NodeKind::Computed,
            Behavior::Effect(_) => NodeKind::Effect,
        }
    }
}

struct Node<V> {
    behavior: Behavior<V>,
    scope: ScopeId,
    value: Option<V>,
    equality: Equality<V>,
    version: u64,
    rank: u32,
    deps: Vec<NodeId>,
    /// Versions of `deps` observed by the last committed evaluation.
    dep_versions: Vec<u64>,
    subs: BTreeSet<NodeId>,
    evaluations: u64,
    queued: bool,
}

#[derive(Default)]
struct ScopeRecord {
    parent: Option<ScopeId>,
    nodes: Vec<NodeId>,
    children: Vec<ScopeId>,
}

/// Tracking context of one running computed or effect.
struct Frame {
    node: NodeId,
    kind: NodeKind,
    reads: Vec<(NodeId, u64)>,
    /// Set when a read raised this node's rank mid-propagation; the result is
    /// discarded and the node re-queued at its new rank.
    requeue: bool,
    failure: Option<ReactiveError>,
}

impl Frame {
    fn new(node: NodeId, kind: NodeKind) -> Self {
        Self {
            node,
            kind,
            reads: Vec::new(),
            requeue: false,
            failure: None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Phase {
    Idle,
    Compute,
    Effects,
}

struct State<V> {
    nodes: FxHashMap<NodeId, Node<V>>,
    scopes: FxHashMap<ScopeId, ScopeRecord>,
    next_node: u32,
    next_scope: u32,
    dirty: BTreeSet<(u32, NodeId)>,
    pending_effects: BTreeSet<NodeId>,
    queued_writes: Vec<(NodeId, V)>,
    pending_disposals: Vec<ScopeId>,
    batch_depth: u32,
    phase: Phase,
    frames: Vec<Frame>,
    counters: Counters,
    pass_limit: usize,
    serial: u64,
    trace: Option<Vec<Evaluation>>,
    scratch: Vec<NodeId>,
}

/// A single-threaded reactive graph of source signals, computeds and effects.
///
/// Writes mark subscribers dirty; stabilization then processes dirty
/// computeds in ascending topological rank so each one evaluates at most once
/// and only ever observes settled inputs. Effects run after every computed is
/// clean, in creation order.
///
/// Compute and effect callbacks receive the graph by reference; reads made
/// through it are tracked as dependencies of the running node.
pub struct ReactiveGraph<V> {
    state: RefCell<State<V>>,
}

impl<V: Clone + 'static> Default for ReactiveGraph<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V> fmt::Debug for ReactiveGraph<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.state.try_borrow() {
            Ok(st) => f
                .debug_struct("ReactiveGraph")
                .field("nodes", &st.nodes.len())
                .field("scopes", &st.scopes.len())
                .field("batch_depth", &st.batch_depth)
                .field("counters", &st.counters)
                .finish(),
            Err(_) => f.write_str("ReactiveGraph { <borrowed> }"),
        }
    }
}

impl<V: Clone + 'static> ReactiveGraph<V> {
    pub fn new() -> Self {
        Self::with_pass_limit(DEFAULT_PASS_LIMIT)
    }

    pub fn with_pass_limit(pass_limit: usize) -> Self {
        Self {
            state: RefCell::new(State {
                nodes: FxHashMap::default(),
                scopes: FxHashMap::default(),
                next_node: 0,
                next_scope: 0,
                dirty: BTreeSet::new(),
                pending_effects: BTreeSet::new(),
                queued_writes: Vec::new(),
                pending_disposals: Vec::new(),
                batch_depth: 0,
                phase: Phase::Idle,
                frames: Vec::new(),
                counters: Counters::default(),
                pass_limit: pass_limit.max(1),
                serial: 0,
                trace: None,
                scratch: Vec::new(),
            }),
        }
    }

    /// Creates a top-level scope.
    pub fn create_scope(&self) -> ScopeId {
        self.state.borrow_mut().alloc_scope(None)
    }

    pub fn create_child_scope(&self, parent: ScopeId) -> Result<ScopeId> {
        let mut st = self.state.borrow_mut();
        st.check_scope(parent)?;
        Ok(st.alloc_scope(Some(parent)))
    }

    pub fn is_scope_live(&self, scope: ScopeId) -> bool {
        self.state.borrow().scopes.contains_key(&scope)
    }

    pub fn create_signal(&self, scope: ScopeId, initial: V, equality: Equality<V>) -> Result<NodeId> {
        let mut st = self.state.borrow_mut();
        st.check_can_mutate()?;
        st.check_scope(scope)?;
        Ok(st.alloc_node(scope, Behavior::Source, Some(initial), equality, 0))
    }

    /// Creates a computed with structural equality and evaluates it eagerly.
    pub fn create_computed<F>(&self, scope: ScopeId, compute: F) -> Result<NodeId>
    where
        V: PartialEq,
        F: Fn(&ReactiveGraph<V>) -> Result<V> + 'static,
    {
        self.create_computed_with(scope, Equality::value(), compute)
    }

    pub fn create_computed_with<F>(
        &self,
        scope: ScopeId,
        equality: Equality<V>,
        compute: F,
    ) -> Result<NodeId>
    where
        F: Fn(&ReactiveGraph<V>) -> Result<V> + 'static,
    {
        let compute: ComputeFn<V> = Rc::new(compute);
        let id = {
            let mut st = self.state.borrow_mut();
            st.check_can_mutate()?;
            st.check_scope(scope)?;
            let id = st.alloc_node(scope, Behavior::Computed(compute.clone()), None, equality, 1);
            st.frames.push(Frame::new(id, NodeKind::Computed));
            id
        };
        let result = compute(self);
        let mut st = self.state.borrow_mut();
        let frame = st.frames.pop().expect("frame pushed above");
        match settle(frame.failure, result) {
            Ok(value) => {
                st.commit_computed(id, frame.reads, value);
                Ok(id)
            }
            Err(err) => {
                st.remove_node(id);
                Err(err)
            }
        }
    }

    /// Creates an effect and runs it once immediately.
    ///
    /// Writes made by the callback are queued and applied as a follow-up batch.
    /// If that follow-up fails to converge the error is returned, but the
    /// effect stays registered in its scope.
    pub fn create_effect<F>(&self, scope: ScopeId, callback: F) -> Result<NodeId>
    where
        F: FnMut(&ReactiveGraph<V>) -> Result<()> + 'static,
    {
        let callback: EffectFn<V> = Rc::new(RefCell::new(callback));
        let id = {
            let mut st = self.state.borrow_mut();
            st.check_can_mutate()?;
            st.check_scope(scope)?;
            let id = st.alloc_node(
                scope,
                Behavior::Effect(callback.clone()),
                None,
                Equality::AlwaysChanged,
                1,
            );
            st.frames.push(Frame::new(id, NodeKind::Effect));
            id
        };
        let result = (callback.borrow_mut())(self);
        {
            let mut st = self.state.borrow_mut();
            let frame = st.frames.pop().expect("frame pushed above");
            if let Err(err) = settle(frame.failure, result) {
                st.remove_node(id);
                return Err(err);
            }
            st.commit_effect(id, frame.reads);
        }
        self.settle_if_idle()?;
        Ok(id)
    }

    /// Reads a node's value, recording a dependency when called from inside a
    /// computed or effect.
    pub fn read(&self, id: NodeId) -> Result<V> {
        self.state.borrow_mut().tracked_read(id)
    }

    /// Reads without recording a dependency.
    pub fn peek(&self, id: NodeId) -> Result<V> {
        let st = self.state.borrow();
        let node = st.nodes.get(&id).ok_or(ReactiveError::DanglingHandle(id))?;
        match &node.behavior {
            Behavior::Effect(_) => Err(ReactiveError::NotReadable(id)),
            _ => node.value.clone().ok_or(ReactiveError::Cycle { path: vec![id, id] }),
        }
    }

    /// Writes a source signal.
    ///
    /// Outside a batch this stabilizes immediately. Inside an effect the write
    /// is queued until the current effect phase ends. Errors raised by
    /// stabilization are reported after the write has been applied.
    pub fn write(&self, id: NodeId, value: V) -> Result<()> {
        {
            let mut st = self.state.borrow_mut();
            let node = st.nodes.get(&id).ok_or(ReactiveError::DanglingHandle(id))?;
            if !matches!(node.behavior, Behavior::Source) {
                return Err(ReactiveError::NotASource(id));
            }
            if let Some(frame) = st.frames.last() {
                if frame.kind == NodeKind::Computed {
                    return Err(ReactiveError::WriteDuringCompute {
                        target: id,
                        computing: frame.node,
                    });
                }
                st.queued_writes.push((id, value));
                return Ok(());
            }
            if st.phase != Phase::Idle {
                st.queued_writes.push((id, value));
                return Ok(());
            }
            st.apply_write(id, value);
            if st.batch_depth > 0 {
                return Ok(());
            }
        }
        self.stabilize().map(|_| ())
    }

    /// Runs `body` with stabilization deferred until the outermost batch ends.
    pub fn batch<R>(&self, body: impl FnOnce(&Self) -> Result<R>) -> Result<R> {
        self.state.borrow_mut().batch_depth += 1;
        let result = body(self);
        let depth = {
            let mut st = self.state.borrow_mut();
            st.batch_depth -= 1;
            st.batch_depth
        };
        let settled = if depth == 0 { self.settle_if_idle() } else { Ok(()) };
        let value = result?;
        settled?;
        Ok(value)
    }

    /// Brings the graph to a clean state.
    ///
    /// Runs automatically after writes; calling it on a clean graph, inside a
    /// batch, or from within a callback is a no-op returning zero counts.
    pub fn stabilize(&self) -> Result<StabilizationStats> {
        {
            let st = self.state.borrow();
            if st.phase != Phase::Idle || !st.frames.is_empty() || st.batch_depth > 0 {
                return Ok(StabilizationStats::default());
            }
        }
        let mut stats = StabilizationStats::default();
        let mut first_error = None;
        let mut passes = 0usize;
        loop {
            {
                let mut st = self.state.borrow_mut();
                if !st.queued_writes.is_empty() {
                    if passes >= st.pass_limit {
                        st.queued_writes.clear();
                        first_error.get_or_insert(ReactiveError::NonConvergence { iterations: passes });
                        break;
                    }
                    for (id, value) in mem::take(&mut st.queued_writes) {
                        if st.nodes.contains_key(&id) {
                            st.apply_write(id, value);
                        }
                    }
                }
                if st.dirty.is_empty() && st.pending_effects.is_empty() {
                    break;
                }
                if passes == 0 {
                    st.serial += 1;
                    st.counters.stabilizations += 1;
                }
                st.phase = Phase::Compute;
            }
            passes += 1;
            self.compute_phase(&mut stats, &mut first_error);
            self.effect_phase(&mut stats, &mut first_error);
            self.state.borrow_mut().phase = Phase::Idle;
            self.flush_disposals();
        }
        match first_error {
            Some(err) => Err(err),
            None => Ok(stats),
        }
    }

    /// Disposes a scope, its descendants, their nodes and incident edges.
    /// Disposing an already disposed scope is a no-op.
    pub fn dispose(&self, scope: ScopeId) -> Result<()> {
        let mut st = self.state.borrow_mut();
        if !st.scopes.contains_key(&scope) {
            return Ok(());
        }
        st.check_can_mutate()?;
        if st.phase != Phase::Idle || !st.frames.is_empty() {
            st.pending_disposals.push(scope);
            return Ok(());
        }
        st.dispose_now(scope);
        Ok(())
    }

    pub fn live_counts(&self) -> LiveCounts {
        let st = self.state.borrow();
        LiveCounts {
            live_nodes: st.nodes.len(),
            live_edges: st.nodes.values().map(|n| n.deps.len()).sum(),
            live_effects: st
                .nodes
                .values()
                .filter(|n| matches!(n.behavior, Behavior::Effect(_)))
                .count(),
            retained_subscriptions: 0,
        }
    }

    pub fn counters(&self) -> Counters {
        self.state.borrow().counters
    }

    /// The node whose computed or effect callback is currently running.
    pub fn current_node(&self) -> Option<NodeId> {
        self.state.borrow().frames.last().map(|f| f.node)
    }

    pub fn is_batching(&self) -> bool {
        self.state.borrow().batch_depth > 0
    }

    pub fn kind(&self, id: NodeId) -> Result<NodeKind> {
        self.with_node(id, |n| n.behavior.kind())
    }

    pub fn rank(&self, id: NodeId) -> Result<u32> {
        self.with_node(id, |n| n.rank)
    }

    pub fn version(&self, id: NodeId) -> Result<u64> {
        self.with_node(id, |n| n.version)
    }

    pub fn scope_of(&self, id: NodeId) -> Result<ScopeId> {
        self.with_node(id, |n| n.scope)
    }

    /// Dependencies in the order they were first read by the last evaluation.
    pub fn dependencies(&self, id: NodeId) -> Result<Vec<NodeId>> {
        self.with_node(id, |n| n.deps.clone())
    }

    pub fn subscribers(&self, id: NodeId) -> Result<Vec<NodeId>> {
        self.with_node(id, |n| n.subs.iter().copied().collect())
    }

    /// Committed evaluations of a computed, or runs of an effect.
    pub fn evaluation_count(&self, id: NodeId) -> Result<u64> {
        self.with_node(id, |n| n.evaluations)
    }

    /// Starts or stops recording every committed evaluation.
    pub fn record_evaluations(&self, on: bool) {
        let mut st = self.state.borrow_mut();
        st.trace = if on { Some(st.trace.take().unwrap_or_default()) } else { None };
    }

    pub fn take_evaluations(&self) -> Vec<Evaluation> {
        let mut st = self.state.borrow_mut();
        st.trace.as_mut().map(mem::take).unwrap_or_default()
    }

    /// Verifies the structural invariants of the graph.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.state.borrow().check_invariants()
    }

    fn with_node<T>(&self, id: NodeId, f: impl FnOnce(&Node<V>) -> T) -> Result<T> {
        let st = self.state.borrow();
        st.nodes.get(&id).map(f).ok_or(ReactiveError::DanglingHandle(id))
    }

    fn settle_if_idle(&self) -> Result<()> {
        let idle = {
            let st = self.state.borrow();
            st.phase == Phase::Idle && st.frames.is_empty() && st.batch_depth == 0
        };
        if idle {
            self.flush_disposals();
            self.stabilize()?;
        }
        Ok(())
    }

    fn flush_disposals(&self) {
        let mut st = self.state.borrow_mut();
        for scope in mem::take(&mut st.pending_disposals) {
            st.dispose_now(scope);
        }
    }

    fn compute_phase(&self, stats: &mut StabilizationStats, first_error: &mut Option<ReactiveError>) {
        loop {
            let (id, compute) = {
                let mut st = self.state.borrow_mut();
                let Some((_, id)) = st.dirty.pop_first() else { break };
                let node = st.nodes.get_mut(&id).expect("dirty entries are purged on removal");
                node.queued = false;
                let Behavior::Computed(compute) = &node.behavior else { continue };
                let compute = compute.clone();
                if !st.deps_changed(id) {
                    continue;
                }
                st.frames.push(Frame::new(id, NodeKind::Computed));
                (id, compute)
            };
            let result = compute(self);
            let mut st = self.state.borrow_mut();
            let frame = st.frames.pop().expect("frame pushed above");
            if frame.requeue {
                st.counters.deferred_evaluations += 1;
                st.enqueue(id);
                continue;
            }
            match settle(frame.failure, result) {
                Ok(value) => {
                    stats.recomputations += 1;
                    if !st.commit_computed(id, frame.reads, value) {
                        stats.equality_cuts += 1;
                    }
                }
                Err(err) => {
                    first_error.get_or_insert(err);
                }
            }
        }
    }

    fn effect_phase(&self, stats: &mut StabilizationStats, first_error: &mut Option<ReactiveError>) {
        self.state.borrow_mut().phase = Phase::Effects;
        loop {
            let (id, callback) = {
                let mut st = self.state.borrow_mut();
                let Some(id) = st.pending_effects.pop_first() else { break };
                let Some(node) = st.nodes.get(&id) else { continue };
                let Behavior::Effect(callback) = &node.behavior else { continue };
                let callback = callback.clone();
                if !st.deps_changed(id) {
                    continue;
                }
                st.frames.push(Frame::new(id, NodeKind::Effect));
                (id, callback)
            };
            let result = (callback.borrow_mut())(self);
            let mut st = self.state.borrow_mut();
            let frame = st.frames.pop().expect("frame pushed above");
            st.commit_effect(id, frame.reads);
            stats.effects_run += 1;
            if let Err(err) = settle(frame.failure, result) {
                first_error.get_or_insert(err);
            }
        }
    }
}

fn settle<V>(failure: Option<ReactiveError>, result: Result<V>) -> Result<V> {
    match failure {
        Some(err) => Err(err),
        None => result,
    }
}

impl<V: Clone + 'static> State<V> {
    fn alloc_scope(&mut self, parent: Option<ScopeId>) -> ScopeId {
        let id = ScopeId(self.next_scope);
        self.next_scope += 1;
        self.scopes.insert(
            id,
            ScopeRecord {
                parent,
                ..ScopeRecord::default()
            },
        );
        if let Some(parent) = parent {
            if let Some(rec) = self.scopes.get_mut(&parent) {
                rec.children.push(id);
            }
        }
        id
    }

    fn alloc_node(
        &mut self,
        scope: ScopeId,
        behavior: Behavior<V>,
        value: Option<V>,
        equality: Equality<V>,
        rank: u32,
    ) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(
            id,
            Node {
                behavior,
                scope,
                value,
                equality,
                version: 0,
                rank,
                deps: Vec::new(),
                dep_versions: Vec::new(),
                subs: BTreeSet::new(),
                evaluations: 0,
                queued: false,
            },
        );
        self.scopes
            .get_mut(&scope)
            .expect("scope checked by caller")
            .nodes
            .push(id);
        id
    }

    fn check_scope(&self, scope: ScopeId) -> Result<()> {
        if self.scopes.contains_key(&scope) {
            Ok(())
        } else {
            Err(ReactiveError::DisposedScope(scope))
        }
    }

    fn check_can_mutate(&self) -> Result<()> {
        match self.frames.last() {
            Some(frame) if frame.kind == NodeKind::Computed => {
                Err(ReactiveError::MutationDuringCompute { computing: frame.node })
            }
            _ => Ok(()),
        }
    }

    fn tracked_read(&mut self, id: NodeId) -> Result<V> {
        let node = self.nodes.get(&id).ok_or(ReactiveError::DanglingHandle(id))?;
        if matches!(node.behavior, Behavior::Effect(_)) {
            return Err(ReactiveError::NotReadable(id));
        }
        let (value, version, rank) = (node.value.clone(), node.version, node.rank);

        if let Some(frame) = self.frames.last() {
            let (reader, reader_kind) = (frame.node, frame.kind);
            let already_read = frame.reads.iter().any(|(n, _)| *n == id);
            if reader == id {
                return Err(self.fail_frame(ReactiveError::Cycle { path: vec![id, id] }));
            }
            if !already_read {
                if rank >= self.nodes[&reader].rank {
                    match self.plan_rank_raise(reader, rank + 1, id) {
                        Ok(plan) => self.apply_rank_raise(plan),
                        Err(path) => return Err(self.fail_frame(ReactiveError::Cycle { path })),
                    }
                    if self.phase == Phase::Compute && reader_kind == NodeKind::Computed {
                        self.frames.last_mut().expect("frame present").requeue = true;
                    }
                }
                self.frames.last_mut().expect("frame present").reads.push((id, version));
            }
        }
        value.ok_or(ReactiveError::Cycle { path: vec![id, id] })
    }

    fn fail_frame(&mut self, err: ReactiveError) -> ReactiveError {
        if let Some(frame) = self.frames.last_mut() {
            frame.failure.get_or_insert_with(|| err.clone());
        }
        err
    }

    /// Computes the rank raises needed for `start` to reach `rank`, following
    /// subscriber edges. Reaching `target` means the new edge
    /// `target -> start` would close a cycle; the cycle path is returned.
    fn plan_rank_raise(
        &self,
        start: NodeId,
        rank: u32,
        target: NodeId,
    ) -> std::result::Result<Vec<(NodeId, u32)>, Vec<NodeId>> {
        let mut planned: FxHashMap<NodeId, u32> = FxHashMap::default();
        let mut parent: FxHashMap<NodeId, NodeId> = FxHashMap::default();
        let mut stack = vec![(start, rank)];
        while let Some((id, wanted)) = stack.pop() {
            if id == target {
                // walk back to `start`, then emit in dependency order:
                // target -> start -> ... -> target
                let mut chain = vec![target];
                let mut cur = target;
                while let Some(&p) = parent.get(&cur) {
                    chain.push(p);
                    cur = p;
                }
                chain.push(target);
                chain.reverse();
                return Err(chain);
            }
            let current = planned.get(&id).copied().unwrap_or(self.nodes[&id].rank);
            if current >= wanted {
                continue;
            }
            planned.insert(id, wanted);
            for &sub in &self.nodes[&id].subs {
                let sub_rank = planned.get(&sub).copied().unwrap_or(self.nodes[&sub].rank);
                if sub_rank <= wanted {
                    parent.insert(sub, id);
                    stack.push((sub, wanted + 1));
                }
            }
        }
        Ok(planned.into_iter().collect())
    }

    fn apply_rank_raise(&mut self, plan: Vec<(NodeId, u32)>) {
        for (id, rank) in plan {
            let node = self.nodes.get_mut(&id).expect("planned nodes are live");
            let old = node.rank;
            node.rank = rank;
            if node.queued {
                self.dirty.remove(&(old, id));
                self.dirty.insert((rank, id));
            }
        }
    }

    fn apply_write(&mut self, id: NodeId, value: V) {
        self.counters.writes += 1;
        let node = self.nodes.get_mut(&id).expect("write target checked by caller");
        let unchanged = node
            .value
            .as_ref()
            .is_some_and(|old| node.equality.is_equal(old, &value));
        if unchanged {
            self.counters.unchanged_writes += 1;
            return;
        }
        node.value = Some(value);
        node.version += 1;
        self.mark_subscribers(id);
    }

    fn mark_subscribers(&mut self, id: NodeId) {
        let mut subs = mem::take(&mut self.scratch);
        subs.extend(self.nodes[&id].subs.iter().copied());
        for sub in subs.drain(..) {
            match self.nodes[&sub].behavior {
                Behavior::Effect(_) => {
                    self.pending_effects.insert(sub);
                }
                _ => self.enqueue(sub),
            }
        }
        self.scratch = subs;
    }

    fn enqueue(&mut self, id: NodeId) {
        let node = self.nodes.get_mut(&id).expect("enqueued node is live");
        if !node.queued {
            node.queued = true;
            self.dirty.insert((node.rank, id));
        }
    }

    fn deps_changed(&self, id: NodeId) -> bool {
        let node = &self.nodes[&id];
        node.evaluations == 0
            || node
                .deps
                .iter()
                .zip(&node.dep_versions)
                .any(|(dep, seen)| self.nodes.get(dep).is_none_or(|d| d.version != *seen))
    }

    /// Replaces the dependency set of `id` with exactly what its last
    /// evaluation read.
    fn rewire(&mut self, id: NodeId, reads: &[(NodeId, u64)]) {
        let node = self.nodes.get_mut(&id).expect("live");
        if node.deps.len() == reads.len() && node.deps.iter().zip(reads).all(|(d, (n, _))| d == n) {
            node.dep_versions.clear();
            node.dep_versions.extend(reads.iter().map(|(_, v)| *v));
            return;
        }
        let old = mem::take(&mut node.deps);
        for dep in &old {
            if !reads.iter().any(|(n, _)| n == dep) {
                if let Some(d) = self.nodes.get_mut(dep) {
                    d.subs.remove(&id);
                }
            }
        }
        for (dep, _) in reads {
            if let Some(d) = self.nodes.get_mut(dep) {
                d.subs.insert(id);
            }
        }
        let node = self.nodes.get_mut(&id).expect("live");
        node.deps = reads.iter().map(|(n, _)| *n).collect();
        node.dep_versions = reads.iter().map(|(_, v)| *v).collect();
    }

    fn record(&mut self, id: NodeId, reads: &[(NodeId, u64)]) {
        let serial = if self.phase == Phase::Idle { 0 } else { self.serial };
        if let Some(trace) = self.trace.as_mut() {
            let node = &self.nodes[&id];
            trace.push(Evaluation {
                node: id,
                kind: node.behavior.kind(),
                rank: node.rank,
                stabilization: serial,
                reads: reads.to_vec(),
            });
        }
    }

    /// Returns whether the value changed under the node's equality policy.
    fn commit_computed(&mut self, id: NodeId, reads: Vec<(NodeId, u64)>, value: V) -> bool {
        self.rewire(id, &reads);
        self.record(id, &reads);
        self.counters.recomputations += 1;
        let node = self.nodes.get_mut(&id).expect("live");
        node.evaluations += 1;
        let changed = match &node.value {
            None => true,
            Some(old) => !node.equality.is_equal(old, &value),
        };
        if changed {
            node.value = Some(value);
            node.version += 1;
            self.mark_subscribers(id);
        } else {
            self.counters.equality_cuts += 1;
        }
        changed
    }

    fn commit_effect(&mut self, id: NodeId, reads: Vec<(NodeId, u64)>) {
        if !self.nodes.contains_key(&id) {
            return;
        }
        self.rewire(id, &reads);
        self.record(id, &reads);
        self.counters.effects_run += 1;
        self.nodes.get_mut(&id).expect("live").evaluations += 1;
    }

    fn remove_node(&mut self, id: NodeId) {
        let Some(node) = self.nodes.remove(&id) else { return };
        for dep in &node.deps {
            if let Some(d) = self.nodes.get_mut(dep) {
                d.subs.remove(&id);
            }
        }
        for sub in &node.subs {
            if let Some(s) = self.nodes.get_mut(sub) {
                if let Some(pos) = s.deps.iter().position(|d| *d == id) {
                    s.deps.remove(pos);
                    s.dep_versions.remove(pos);
                }
            }
        }
        if node.queued {
            self.dirty.remove(&(node.rank, id));
        }
        self.pending_effects.remove(&id);
        self.queued_writes.retain(|(n, _)| *n != id);
        if let Some(scope) = self.scopes.get_mut(&node.scope) {
            scope.nodes.retain(|n| *n != id);
        }
    }

    fn dispose_now(&mut self, scope: ScopeId) {
        let Some(record) = self.scopes.get(&scope) else { return };
        if let Some(parent) = record.parent {
            if let Some(p) = self.scopes.get_mut(&parent) {
                p.children.retain(|c| *c != scope);
            }
        }
        let mut stack = vec![scope];
        while let Some(current) = stack.pop() {
            let Some(record) = self.scopes.remove(&current) else { continue };
            stack.extend(record.children);
            for id in record.nodes {
                self.remove_node(id);
            }
        }
    }

    fn check_invariants(&self) -> std::result::Result<(), String> {
        for (&id, node) in &self.nodes {
            let kind = node.behavior.kind();
            if kind == NodeKind::Source && !node.deps.is_empty() {
                return Err(format!("source {id} has dependencies"));
            }
            if kind == NodeKind::Effect && !node.subs.is_empty() {
                return Err(format!("effect {id} has subscribers"));
            }
            if node.deps.len() != node.dep_versions.len() {
                return Err(format!("{id}: dependency versions out of sync"));
            }
            for dep in &node.deps {
                let d = self
                    .nodes
                    .get(dep)
                    .ok_or_else(|| format!("{id} depends on dead node {dep}"))?;
                if !d.subs.contains(&id) {
                    return Err(format!("edge {dep} -> {id} missing from subscriber mirror"));
                }
                if d.rank >= node.rank {
                    return Err(format!(
                        "rank order violated on {dep} -> {id} ({} >= {})",
                        d.rank, node.rank
                    ));
                }
            }
            for sub in &node.subs {
                let s = self
                    .nodes
                    .get(sub)
                    .ok_or_else(|| format!("{id} has dead subscriber {sub}"))?;
                if !s.deps.contains(&id) {
                    return Err(format!("edge {id} -> {sub} missing from dependency mirror"));
                }
            }
            if node.queued != self.dirty.contains(&(node.rank, id)) {
                return Err(format!("{id}: queued flag disagrees with dirty set"));
            }
            if !self.scopes.get(&node.scope).is_some_and(|s| s.nodes.contains(&id)) {
                return Err(format!("{id} not owned by a live scope"));
            }
        }
        if self.dirty.len() != self.nodes.values().filter(|n| n.queued).count() {
            return Err("dirty set holds entries for removed nodes".into());
        }
        let idle = self.phase == Phase::Idle && self.frames.is_empty() && self.batch_depth == 0;
        if idle && (!self.dirty.is_empty() || !self.pending_effects.is_empty()) {
            return Err("graph idle with pending work".into());
        }
        Ok(())
    }
}
