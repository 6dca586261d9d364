use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{oracle, Dag, Result, Runtime, Sample};
use crate::baseline::{ObservableRuntime, Selector, Store, StoreRuntime, StoreSubscription, Subject, Subscription};
use crate::reactive::{Equality, NodeId, ReactiveGraph, ScopeId};
use crate::scenario::final_sources;
use crate::LiveCounts;

/// Cumulative work counters of an instance, in the runtime's own currency:
/// computed refreshes / projections / selector evaluations, and effect runs /
/// handler deliveries / subscriber checks.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct WorkCounters {
    pub recomputations: u64,
    pub notifications: u64,
}

/// One realization of a [`Dag`] on a runtime, with one consumer per terminal.
pub trait ScenarioInstance {
    fn runtime(&self) -> Runtime;

    /// Sets the raw value of the source at `source` (an index into
    /// [`Dag::sources`]) and lets the runtime propagate.
    fn update(&mut self, source: usize, raw: i64) -> Result<()>;

    /// Terminal values as last observed by the consumers.
    fn terminal_values(&self) -> BTreeMap<usize, i64>;

    fn work(&self) -> WorkCounters;

    fn live_counts(&self) -> LiveCounts;

    /// Nodes and edges of the realized dataflow graph, consumers excluded.
    fn graph_size(&self) -> (usize, usize);

    /// Releases everything the instance created.
    fn teardown(&mut self) -> Result<()>;
}

type Seen = Rc<RefCell<BTreeMap<usize, i64>>>;

fn sum_plus(constant: i64, inputs: impl IntoIterator<Item = i64>) -> i64 {
    inputs.into_iter().fold(constant, i64::wrapping_add)
}

pub fn build(runtime: Runtime, dag: &Dag) -> Result<Box<dyn ScenarioInstance>> {
    Ok(match runtime {
        Runtime::Signals => Box::new(SignalsInstance::build(dag)?),
        Runtime::Observables => Box::new(ObservablesInstance::build(dag)?),
        Runtime::Store => Box::new(StoreInstance::build(dag)),
    })
}

/// Builds into a fresh scope of a shared graph.
pub fn build_signals_on(graph: &Rc<ReactiveGraph<i64>>, dag: &Dag) -> Result<SignalsInstance> {
    SignalsInstance::build_on(graph.clone(), dag)
}

pub struct SignalsInstance {
    graph: Rc<ReactiveGraph<i64>>,
    scope: ScopeId,
    ids: Vec<NodeId>,
    dag: Dag,
    seen: Seen,
}

impl SignalsInstance {
    pub fn build(dag: &Dag) -> Result<Self> {
        Self::build_on(Rc::new(ReactiveGraph::new()), dag)
    }

    fn build_on(graph: Rc<ReactiveGraph<i64>>, dag: &Dag) -> Result<Self> {
        let scope = graph.create_scope();
        let seen: Seen = Rc::default();
        let wired = Self::wire(&graph, scope, dag, &seen);
        match wired {
            Ok(ids) => Ok(SignalsInstance {
                graph,
                scope,
                ids,
                dag: dag.clone(),
                seen,
            }),
            Err(e) => {
                graph.dispose(scope)?;
                Err(e)
            }
        }
    }

    fn wire(graph: &ReactiveGraph<i64>, scope: ScopeId, dag: &Dag, seen: &Seen) -> Result<Vec<NodeId>> {
        let mut ids: Vec<NodeId> = Vec::with_capacity(dag.node_count());
        for (node, parents) in dag.parents.iter().enumerate() {
            let c = dag.constants[node];
            let id = if parents.is_empty() {
                graph.create_signal(scope, c, Equality::value())?
            } else {
                let inputs: Vec<NodeId> = parents.iter().map(|&p| ids[p]).collect();
                graph.create_computed(scope, move |g| {
                    let mut acc = c;
                    for &input in &inputs {
                        acc = acc.wrapping_add(g.read(input)?);
                    }
                    Ok(acc)
                })?
            };
            ids.push(id);
        }
        for &t in &dag.terminals {
            let (id, seen) = (ids[t], seen.clone());
            graph.create_effect(scope, move |g| {
                let v = g.read(id)?;
                seen.borrow_mut().insert(t, v);
                Ok(())
            })?;
        }
        Ok(ids)
    }

    pub fn graph(&self) -> &ReactiveGraph<i64> {
        &self.graph
    }

    pub fn node_id(&self, node: usize) -> NodeId {
        self.ids[node]
    }
}

impl ScenarioInstance for SignalsInstance {
    fn runtime(&self) -> Runtime {
        Runtime::Signals
    }

    fn update(&mut self, source: usize, raw: i64) -> Result<()> {
        let node = self.dag.sources[source];
        let value = raw.wrapping_add(self.dag.constants[node]);
        Ok(self.graph.write(self.ids[node], value)?)
    }

    fn terminal_values(&self) -> BTreeMap<usize, i64> {
        self.seen.borrow().clone()
    }

    fn work(&self) -> WorkCounters {
        let c = self.graph.counters();
        WorkCounters {
            recomputations: c.recomputations,
            notifications: c.effects_run,
        }
    }

    fn live_counts(&self) -> LiveCounts {
        self.graph.live_counts()
    }

    fn graph_size(&self) -> (usize, usize) {
        let live: Vec<&NodeId> = self.ids.iter().filter(|&&id| self.graph.kind(id).is_ok()).collect();
        let edges = live
            .iter()
            .map(|&&id| self.graph.dependencies(id).map_or(0, |d| d.len()))
            .sum();
        (live.len(), edges)
    }

    fn teardown(&mut self) -> Result<()> {
        Ok(self.graph.dispose(self.scope)?)
    }
}

pub struct ObservablesInstance {
    rt: ObservableRuntime,
    subjects: Vec<Subject<i64>>,
    consumers: Vec<Subscription>,
    dag: Dag,
    seen: Seen,
}

impl ObservablesInstance {
    pub fn build(dag: &Dag) -> Result<Self> {
        Self::build_on(&ObservableRuntime::new(), dag)
    }

    /// Builds with subjects registered on an existing runtime.
    pub fn build_on(rt: &ObservableRuntime, dag: &Dag) -> Result<Self> {
        let mut subjects: Vec<Subject<i64>> = Vec::with_capacity(dag.node_count());
        for (node, parents) in dag.parents.iter().enumerate() {
            let c = dag.constants[node];
            let subject = if parents.is_empty() {
                rt.subject(c)
            } else {
                let inputs: Vec<Subject<i64>> = parents.iter().map(|&p| subjects[p].clone()).collect();
                rt.combine_latest(&inputs, move |vals: &[i64]| sum_plus(c, vals.iter().copied()))?
            };
            subjects.push(subject);
        }
        let seen: Seen = Rc::default();
        let mut consumers = Vec::with_capacity(dag.terminals.len());
        for &t in &dag.terminals {
            let seen = seen.clone();
            consumers.push(subjects[t].subscribe(move |v| {
                seen.borrow_mut().insert(t, *v);
            })?);
        }
        Ok(ObservablesInstance {
            rt: rt.clone(),
            subjects,
            consumers,
            dag: dag.clone(),
            seen,
        })
    }

    pub fn subject(&self, node: usize) -> &Subject<i64> {
        &self.subjects[node]
    }

    pub fn runtime_handle(&self) -> &ObservableRuntime {
        &self.rt
    }
}

impl ScenarioInstance for ObservablesInstance {
    fn runtime(&self) -> Runtime {
        Runtime::Observables
    }

    fn update(&mut self, source: usize, raw: i64) -> Result<()> {
        let node = self.dag.sources[source];
        Ok(self.subjects[node].next(raw.wrapping_add(self.dag.constants[node]))?)
    }

    fn terminal_values(&self) -> BTreeMap<usize, i64> {
        self.seen.borrow().clone()
    }

    fn work(&self) -> WorkCounters {
        let c = self.rt.counters();
        WorkCounters {
            recomputations: c.projections,
            notifications: c.deliveries,
        }
    }

    fn live_counts(&self) -> LiveCounts {
        self.rt.live_counts()
    }

    fn graph_size(&self) -> (usize, usize) {
        let live = self.rt.live_counts();
        (live.live_nodes, live.live_edges)
    }

    fn teardown(&mut self) -> Result<()> {
        for sub in &mut self.consumers {
            sub.unsubscribe();
        }
        for subject in self.subjects.iter().rev() {
            subject.complete();
        }
        self.consumers.clear();
        self.subjects.clear();
        Ok(())
    }
}

type StoreState = BTreeMap<usize, Rc<BTreeMap<usize, i64>>>;
type StoreAction = (usize, i64);

/// Sources grouped into branches of this many leaves.
const BRANCH_WIDTH: usize = 8;

pub struct StoreInstance {
    rt: StoreRuntime,
    store: Store<StoreState, StoreAction>,
    selectors: Vec<Selector<StoreState, i64>>,
    consumers: Vec<StoreSubscription>,
    /// Root, branch and leaf entries of the state tree.
    state_objects: usize,
    dag: Dag,
    seen: Seen,
}

impl StoreInstance {
    pub fn build(dag: &Dag) -> Self {
        let rt = StoreRuntime::new();
        let mut state = StoreState::new();
        for (k, &s) in dag.sources.iter().enumerate() {
            let branch = state.entry(k / BRANCH_WIDTH).or_default();
            Rc::make_mut(branch).insert(k, dag.constants[s]);
        }
        let store = rt.store(Rc::new(state), |state: &Rc<StoreState>, &(k, value): &StoreAction| {
            let b = k / BRANCH_WIDTH;
            if state[&b].get(&k) == Some(&value) {
                return Ok(state.clone());
            }
            let mut next = (**state).clone();
            Rc::make_mut(next.get_mut(&b).expect("branch exists")).insert(k, value);
            Ok(Rc::new(next))
        });

        let mut position = vec![usize::MAX; dag.node_count()];
        for (k, &s) in dag.sources.iter().enumerate() {
            position[s] = k;
        }
        let mut selectors: Vec<Selector<StoreState, i64>> = Vec::with_capacity(dag.node_count());
        for (node, parents) in dag.parents.iter().enumerate() {
            let selector = if parents.is_empty() {
                let k = position[node];
                let b = k / BRANCH_WIDTH;
                rt.select_with(
                    move |s: &Rc<StoreState>| s[&b].clone(),
                    Rc::ptr_eq,
                    move |branch: &Rc<BTreeMap<usize, i64>>| branch[&k],
                )
            } else {
                let c = dag.constants[node];
                let inputs: Vec<_> = parents.iter().map(|&p| selectors[p].clone()).collect();
                rt.select_composed(&inputs, move |vals: &[i64]| sum_plus(c, vals.iter().copied()))
            };
            selectors.push(selector);
        }

        let seen: Seen = Rc::default();
        let mut consumers = Vec::with_capacity(dag.terminals.len());
        let initial = store.state();
        let state_objects = 1 + initial.len() + dag.sources.len();
        for &t in &dag.terminals {
            seen.borrow_mut().insert(t, selectors[t].select(&initial));
            let seen = seen.clone();
            consumers.push(store.subscribe(&selectors[t], move |v| {
                seen.borrow_mut().insert(t, *v);
            }));
        }
        StoreInstance {
            rt,
            store,
            selectors,
            consumers,
            state_objects,
            dag: dag.clone(),
            seen,
        }
    }

    pub fn selector(&self, node: usize) -> &Selector<StoreState, i64> {
        &self.selectors[node]
    }

    pub fn runtime_handle(&self) -> &StoreRuntime {
        &self.rt
    }
}

impl ScenarioInstance for StoreInstance {
    fn runtime(&self) -> Runtime {
        Runtime::Store
    }

    fn update(&mut self, source: usize, raw: i64) -> Result<()> {
        let node = self.dag.sources[source];
        Ok(self.store.dispatch(&(source, raw.wrapping_add(self.dag.constants[node])))?)
    }

    fn terminal_values(&self) -> BTreeMap<usize, i64> {
        self.seen.borrow().clone()
    }

    fn work(&self) -> WorkCounters {
        let c = self.rt.counters();
        WorkCounters {
            recomputations: c.selector_evaluations,
            notifications: c.notification_checks,
        }
    }

    /// Selectors count as nodes, and so does every state tree entry.
    fn live_counts(&self) -> LiveCounts {
        let mut live = self.rt.live_counts();
        live.live_nodes += self.state_objects;
        live
    }

    fn graph_size(&self) -> (usize, usize) {
        let live = self.rt.live_counts();
        (live.live_nodes, live.live_edges)
    }

    fn teardown(&mut self) -> Result<()> {
        for sub in &mut self.consumers {
            sub.unsubscribe();
        }
        self.consumers.clear();
        self.selectors.clear();
        self.state_objects = 0;
        Ok(())
    }
}

/// Executes `script` update by update, recording one sample per update.
pub fn run_script(
    instance: &mut dyn ScenarioInstance,
    script: &[(usize, i64)],
    repetition: usize,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(script.len());
    let mut before = instance.work();
    for (update_index, &(source, raw)) in script.iter().enumerate() {
        let start = Instant::now();
        instance.update(source, raw)?;
        let elapsed_s = start.elapsed().as_secs_f64();
        let after = instance.work();
        samples.push(Sample {
            repetition,
            update_index,
            recomputations: after.recomputations - before.recomputations,
            notifications: after.notifications - before.notifications,
            elapsed_s,
            live: instance.live_counts(),
        });
        before = after;
    }
    Ok(samples)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OracleMismatch {
    pub runtime: Runtime,
    pub expected: BTreeMap<usize, i64>,
    pub actual: BTreeMap<usize, i64>,
}

impl fmt::Display for OracleMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} terminals {:?} differ from oracle {:?}",
            self.runtime, self.actual, self.expected
        )
    }
}

impl std::error::Error for OracleMismatch {}

/// Compares consumer-observed terminals with the oracle after `script`.
pub fn verify(instance: &dyn ScenarioInstance, dag: &Dag, script: &[(usize, i64)]) -> Result<(), OracleMismatch> {
    let expected = oracle(dag, &final_sources(dag, script)).terminals;
    let actual = instance.terminal_values();
    if expected == actual {
        Ok(())
    } else {
        Err(OracleMismatch {
            runtime: instance.runtime(),
            expected,
            actual,
        })
    }
}
