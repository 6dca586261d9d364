use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, ScenarioError, ScenarioSpec, Topology};

/// Length of the rapid-update burst script.
pub const BURST_LEN: usize = 300;

const CONSTANT_RANGE: std::ops::RangeInclusive<i64> = -9..=9;
const SCRIPT_VALUE_RANGE: std::ops::RangeInclusive<i64> = -100..=100;
const MAX_EXTRA_PARENTS: usize = 2;

/// Logical dataflow graph. Nodes are numbered in topological order: every
/// parent index is smaller than its child's.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Dag {
    pub parents: Vec<Vec<usize>>,
    pub constants: Vec<i64>,
    /// Nodes without parents, ascending.
    pub sources: Vec<usize>,
    /// Nodes without children, ascending.
    pub terminals: Vec<usize>,
}

/// Bound parameters: max out-degree, node count, edge count.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct GraphShape {
    pub k: usize,
    pub n: usize,
    pub m: usize,
}

impl Dag {
    /// Builds a DAG from parent lists, deriving sources and terminals.
    pub fn from_parents(parents: Vec<Vec<usize>>, constants: Vec<i64>) -> Result<Dag> {
        let n = parents.len();
        if n == 0 {
            return Err(ScenarioError::InvalidParameter("empty graph".into()));
        }
        if constants.len() != n {
            return Err(ScenarioError::InvalidParameter(format!(
                "{} constants for {} nodes",
                constants.len(),
                n
            )));
        }
        let mut has_child = vec![false; n];
        for (i, ps) in parents.iter().enumerate() {
            for &p in ps {
                if p >= i {
                    return Err(ScenarioError::InvalidParameter(format!(
                        "edge {p} -> {i} is not forward"
                    )));
                }
                has_child[p] = true;
            }
        }
        let sources = (0..n).filter(|&i| parents[i].is_empty()).collect();
        let terminals = (0..n).filter(|&i| !has_child[i]).collect();
        Ok(Dag {
            parents,
            constants,
            sources,
            terminals,
        })
    }

    pub fn node_count(&self) -> usize {
        self.parents.len()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.node_count()];
        for (i, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                children[p].push(i);
            }
        }
        children
    }

    pub fn max_out_degree(&self) -> usize {
        self.children().iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn shape(&self) -> GraphShape {
        GraphShape {
            k: self.max_out_degree(),
            n: self.node_count(),
            m: self.edge_count(),
        }
    }

    pub fn is_source(&self, node: usize) -> bool {
        self.parents[node].is_empty()
    }
}

/// Deterministic DAG for `spec`: same seed and parameters, same graph.
pub fn generate(spec: &ScenarioSpec) -> Result<Dag> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let parents = match spec.topology {
        Topology::Chain => (0..spec.n).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect(),
        Topology::FanOut => (0..spec.n).map(|i| if i == 0 { vec![] } else { vec![0] }).collect(),
        Topology::DiamondLadder => diamond_ladder(spec.d),
        Topology::RandomDag => random_layers(spec.n, &mut rng),
    };
    let constants = match &spec.constants {
        Some(c) => c.clone(),
        None => parents
            .iter()
            .map(|ps: &Vec<usize>| if ps.is_empty() { 0 } else { rng.gen_range(CONSTANT_RANGE) })
            .collect(),
    };
    Dag::from_parents(parents, constants)
}

/// Source 0, then per rung a left and right branch joined by a sink that
/// feeds the next rung: `3d + 1` nodes, `4d` edges.
fn diamond_ladder(d: usize) -> Vec<Vec<usize>> {
    let mut parents = vec![vec![]];
    let mut join = 0;
    for _ in 0..d {
        let left = parents.len();
        parents.push(vec![join]);
        parents.push(vec![join]);
        parents.push(vec![left, left + 1]);
        join = left + 2;
    }
    parents
}

/// Layered random DAG with about log2(n) layers. Layer 0 holds the sources;
/// every other node has one parent in the previous layer and up to two more
/// from any earlier layer.
fn random_layers(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let layers = ((n + 1) as f64).log2().ceil().max(1.0) as usize;
    let layers = layers.min(n);
    let (base, extra) = (n / layers, n % layers);
    let mut starts = Vec::with_capacity(layers + 1);
    let mut at = 0;
    for l in 0..layers {
        starts.push(at);
        at += base + usize::from(l < extra);
    }
    starts.push(n);

    let mut parents = vec![Vec::new(); n];
    for l in 1..layers {
        let (prev, here, next) = (starts[l - 1], starts[l], starts[l + 1]);
        for node in here..next {
            let mut ps = vec![rng.gen_range(prev..here)];
            let wanted = rng.gen_range(0..=MAX_EXTRA_PARENTS).min(here - 1);
            for p in sample(rng, here, wanted) {
                if !ps.contains(&p) {
                    ps.push(p);
                }
            }
            ps.sort_unstable();
            parents[node] = ps;
        }
    }
    parents
}

/// `len` seeded updates spread uniformly over the sources.
pub fn random_script(dag: &Dag, seed: u64, len: usize) -> Vec<(usize, i64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| (rng.gen_range(0..dag.sources.len()), rng.gen_range(SCRIPT_VALUE_RANGE)))
        .collect()
}

/// The rapid-update burst: [`BURST_LEN`] updates executed back to back.
pub fn burst_script(dag: &Dag, seed: u64) -> Vec<(usize, i64)> {
    random_script(dag, seed, BURST_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn edges(dag: &Dag) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = dag
            .parents
            .iter()
            .enumerate()
            .flat_map(|(i, ps)| ps.iter().map(move |&p| (p, i)))
            .collect();
        e.sort_unstable();
        e
    }

    #[test]
    fn chain_edges() {
        let dag = generate(&ScenarioSpec::new(Topology::Chain, 3)).unwrap();
        assert_eq!(edges(&dag), vec![(0, 1), (1, 2)]);
        assert_eq!(dag.sources, vec![0]);
        assert_eq!(dag.terminals, vec![2]);
        assert_eq!(dag.constants[0], 0);
    }

    #[test]
    fn fan_out_edges() {
        let dag = generate(&ScenarioSpec::new(Topology::FanOut, 4)).unwrap();
        assert_eq!(edges(&dag), vec![(0, 1), (0, 2), (0, 3)]);
        assert_eq!(dag.terminals, vec![1, 2, 3]);
        assert_eq!(dag.shape(), GraphShape { k: 3, n: 4, m: 3 });
    }

    #[test]
    fn diamond_ladder_counts() {
        let dag = generate(&ScenarioSpec::diamond_ladder(1)).unwrap();
        assert_eq!(dag.node_count(), 4);
        assert_eq!(edges(&dag), vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(dag.shape(), GraphShape { k: 2, n: 4, m: 4 });
        for d in [3, 5, 7] {
            let dag = generate(&ScenarioSpec::diamond_ladder(d)).unwrap();
            assert_eq!((dag.node_count(), dag.edge_count()), (3 * d + 1, 4 * d));
            assert_eq!(dag.terminals, vec![3 * d]);
        }
        assert!(generate(&ScenarioSpec::diamond_ladder(0)).is_err());
    }

    #[test]
    fn random_dag_is_deterministic() {
        let spec = ScenarioSpec::new(Topology::RandomDag, 50).with_seed(42);
        assert_eq!(edges(&generate(&spec).unwrap()), edges(&generate(&spec).unwrap()));
        let other = generate(&spec.clone().with_seed(43)).unwrap();
        assert_ne!(generate(&spec).unwrap(), other);
    }

    #[test]
    fn constants_override() {
        let mut spec = ScenarioSpec::new(Topology::Chain, 3);
        spec.constants = Some(vec![0, 1, 1]);
        assert_eq!(generate(&spec).unwrap().constants, vec![0, 1, 1]);
        spec.constants = Some(vec![1]);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn single_node_graph() {
        for topology in [Topology::Chain, Topology::FanOut, Topology::RandomDag] {
            let dag = generate(&ScenarioSpec::new(topology, 1)).unwrap();
            assert_eq!(dag.sources, vec![0]);
            assert_eq!(dag.terminals, vec![0]);
            assert_eq!(dag.edge_count(), 0);
        }
    }

    #[test]
    fn backward_edges_rejected() {
        assert!(Dag::from_parents(vec![vec![1], vec![]], vec![0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn random_dag_is_layered_and_connected(n in 1usize..250, seed in any::<u64>()) {
            let dag = generate(&ScenarioSpec::new(Topology::RandomDag, n).with_seed(seed)).unwrap();
            prop_assert_eq!(dag.node_count(), n);
            let mut reached = vec![false; n];
            for i in 0..n {
                prop_assert!(dag.parents[i].len() <= 1 + MAX_EXTRA_PARENTS);
                prop_assert!(dag.parents[i].windows(2).all(|w| w[0] < w[1]));
                reached[i] = dag.is_source(i) || dag.parents[i].iter().any(|&p| reached[p]);
            }
            prop_assert!(reached.iter().all(|&r| r));
            prop_assert!(!dag.terminals.is_empty());
        }

        #[test]
        fn scripts_address_existing_sources(n in 1usize..100, seed in any::<u64>()) {
            let dag = generate(&ScenarioSpec::new(Topology::RandomDag, n).with_seed(seed)).unwrap();
            let script = random_script(&dag, seed, 50);
            prop_assert!(script.iter().all(|&(i, v)| i < dag.sources.len() && SCRIPT_VALUE_RANGE.contains(&v)));
            prop_assert_eq!(script, random_script(&dag, seed, 50));
        }
    }
}
