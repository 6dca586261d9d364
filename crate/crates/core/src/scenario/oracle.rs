use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Dag;

/// Terminal node values keyed by node index.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct OracleResult {
    pub terminals: BTreeMap<usize, i64>,
}

/// Raw source values after applying `script` to all-zero initial values.
pub fn final_sources(dag: &Dag, script: &[(usize, i64)]) -> Vec<i64> {
    let mut raw = vec![0; dag.sources.len()];
    for &(index, value) in script {
        raw[index] = value;
    }
    raw
}

/// Every node's value for the given raw source values, by memoized
/// recursion from each node towards the sources.
pub fn oracle_values(dag: &Dag, raw: &[i64]) -> Vec<i64> {
    assert_eq!(raw.len(), dag.sources.len(), "one raw value per source");
    let mut position = vec![usize::MAX; dag.node_count()];
    for (k, &s) in dag.sources.iter().enumerate() {
        position[s] = k;
    }
    let mut memo = vec![None; dag.node_count()];
    (0..dag.node_count())
        .map(|node| value_of(dag, raw, &position, &mut memo, node))
        .collect()
}

fn value_of(dag: &Dag, raw: &[i64], position: &[usize], memo: &mut [Option<i64>], node: usize) -> i64 {
    if let Some(v) = memo[node] {
        return v;
    }
    let mut acc = dag.constants[node];
    if dag.is_source(node) {
        acc = acc.wrapping_add(raw[position[node]]);
    }
    for &p in &dag.parents[node] {
        acc = acc.wrapping_add(value_of(dag, raw, position, memo, p));
    }
    memo[node] = Some(acc);
    acc
}

pub fn oracle(dag: &Dag, raw: &[i64]) -> OracleResult {
    let values = oracle_values(dag, raw);
    OracleResult {
        terminals: dag.terminals.iter().map(|&t| (t, values[t])).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate, random_script, ScenarioSpec, Topology};
    use proptest::prelude::*;

    // exponential in depth; only usable on small graphs
    fn naive(dag: &Dag, raw: &[i64], node: usize) -> i64 {
        let own = match dag.sources.iter().position(|&s| s == node) {
            Some(k) => raw[k],
            None => 0,
        };
        dag.parents[node]
            .iter()
            .fold(own.wrapping_add(dag.constants[node]), |acc, &p| acc.wrapping_add(naive(dag, raw, p)))
    }

    #[test]
    fn single_source() {
        let dag = Dag::from_parents(vec![vec![]], vec![7]).unwrap();
        assert_eq!(oracle(&dag, &[5]).terminals, BTreeMap::from([(0, 12)]));
    }

    #[test]
    fn diamond_sums() {
        let mut spec = ScenarioSpec::diamond_ladder(1);
        spec.constants = Some(vec![0; 4]);
        let dag = generate(&spec).unwrap();
        assert_eq!(oracle(&dag, &[1]).terminals[&3], 2);
    }

    #[test]
    fn chain_with_unit_constants() {
        let mut spec = ScenarioSpec::new(Topology::Chain, 3);
        spec.constants = Some(vec![0, 1, 1]);
        let dag = generate(&spec).unwrap();
        assert_eq!(oracle(&dag, &[0]).terminals[&2], 2);
    }

    #[test]
    fn wrapping_arithmetic() {
        let dag = Dag::from_parents(vec![vec![], vec![0]], vec![0, 1]).unwrap();
        assert_eq!(oracle(&dag, &[i64::MAX]).terminals[&1], i64::MIN);
    }

    #[test]
    fn final_sources_keeps_last_write() {
        let dag = generate(&ScenarioSpec::new(Topology::RandomDag, 20).with_seed(7)).unwrap();
        let k = dag.sources.len();
        assert!(k >= 2);
        let raw = final_sources(&dag, &[(0, 4), (1, 9), (0, -2)]);
        assert_eq!(&raw[..2], &[-2, 9]);
        assert!(raw[2..].iter().all(|&v| v == 0));
    }

    proptest! {
        #[test]
        fn memoized_matches_naive(n in 1usize..40, seed in any::<u64>()) {
            let dag = generate(&ScenarioSpec::new(Topology::RandomDag, n).with_seed(seed)).unwrap();
            let raw = final_sources(&dag, &random_script(&dag, seed, 10));
            let values = oracle_values(&dag, &raw);
            for node in 0..n {
                prop_assert_eq!(values[node], naive(&dag, &raw, node));
            }
        }
    }
}
