use std::collections::BTreeSet;

use proptest::prelude::*;

use hinv_core::partition::{balance_window, bipartition, PartitionTree};

fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b && !adj[a].contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    adj
}

/// Connected random graph: a random tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (2usize..120).prop_flat_map(|n| {
        let parents = (1..n).map(|i| 0..i).collect::<Vec<_>>();
        let extra = prop::collection::vec((0..n, 0..n), 0..n);
        (Just(n), parents, extra).prop_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, &p)| (i + 1, p)).collect();
            edges.extend(extra);
            graph_from_edges(n, &edges)
        })
    })
}

fn cut_between(adj: &[Vec<usize>], a: &[usize], b: &[usize]) -> usize {
    let b: BTreeSet<usize> = b.iter().copied().collect();
    a.iter().map(|&v| adj[v].iter().filter(|w| b.contains(w)).count()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_is_a_valid_partition(adj in connected_graph(), d_th in 1usize..40) {
        let n = adj.len();
        let tree = PartitionTree::from_adjacency(&adj, 1, d_th).unwrap();
        let mut order = tree.bus_order().to_vec();
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
        for node in tree.nodes() {
            match (node.left, node.right) {
                (Some(l), Some(r)) => {
                    let (l, r) = (tree.node(l), tree.node(r));
                    prop_assert!(node.n_buses() > d_th);
                    prop_assert!(l.n_buses() >= 1 && r.n_buses() >= 1);
                    prop_assert_eq!(l.bus_range.start, node.bus_range.start);
                    prop_assert_eq!(l.bus_range.end, r.bus_range.start);
                    prop_assert_eq!(r.bus_range.end, node.bus_range.end);
                    let (lo, hi) = balance_window(node.n_buses());
                    prop_assert!((lo..=hi).contains(&l.n_buses()));
                    let left = &tree.bus_order()[l.bus_range.clone()];
                    let right = &tree.bus_order()[r.bus_range.clone()];
                    prop_assert_eq!(node.cut_edges.len(), cut_between(&adj, left, right));
                    for e in &node.cut_edges {
                        prop_assert!(l.index_range.contains(&e.row));
                        prop_assert!(r.index_range.contains(&e.col));
                    }
                }
                (None, None) => {
                    prop_assert!(node.n_buses() <= d_th || node.n_buses() == 1);
                    prop_assert!(node.cut_edges.is_empty());
                }
                _ => prop_assert!(false, "node {} has one child", node.id),
            }
        }
        for bus in 0..n {
            let leaf = tree.locate_leaf(bus).unwrap();
            prop_assert!(tree.node(leaf).bus_range.contains(&tree.bus_position(bus)));
        }
    }

    #[test]
    fn partition_is_deterministic(adj in connected_graph(), d_th in 1usize..40) {
        let a = PartitionTree::from_adjacency(&adj, 1, d_th).unwrap();
        let b = PartitionTree::from_adjacency(&adj, 1, d_th).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        prop_assert_eq!(a.structure_hash(), b.structure_hash());
    }

    #[test]
    fn bisection_cut_matches_brute_force_count(adj in connected_graph()) {
        let verts: Vec<usize> = (0..adj.len()).collect();
        let bis = bipartition(&verts, &adj);
        prop_assert_eq!(bis.left.len() + bis.right.len(), adj.len());
        prop_assert_eq!(bis.cut.len(), cut_between(&adj, &bis.left, &bis.right));
    }
}

#[test]
fn path_of_four_cuts_once() {
    let adj = graph_from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
    let bis = bipartition(&[0, 1, 2, 3], &adj);
    assert_eq!(bis.cut.len(), 1);
    assert_eq!(bis.left.len(), 2);
}

/// Smallest cut over all bipartitions whose left size lies in the balance
/// window, and the smallest over exactly even splits.
fn exhaustive_min_cut(adj: &[Vec<usize>]) -> (usize, usize) {
    let n = adj.len();
    let (lo, hi) = balance_window(n);
    let (mut best, mut best_even) = (usize::MAX, usize::MAX);
    for mask in 0u32..(1 << n) {
        let left: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
        let right: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 0).collect();
        let cut = cut_between(adj, &left, &right);
        if (lo..=hi).contains(&left.len()) {
            best = best.min(cut);
        }
        if left.len() == n / 2 {
            best_even = best_even.min(cut);
        }
    }
    (best, best_even)
}

#[test]
fn complete_graph_on_four() {
    let adj = graph_from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    let bis = bipartition(&[0, 1, 2, 3], &adj);
    let (best, best_even) = exhaustive_min_cut(&adj);
    assert_eq!(best_even, 4);
    // The window admits a 1|3 split, which cuts only three edges.
    assert_eq!(best, 3);
    assert_eq!(bis.cut.len(), best);
}

#[test]
fn small_graphs_reach_the_exhaustive_minimum() {
    let cases: Vec<(usize, Vec<(usize, usize)>)> = vec![
        (4, vec![(0, 1), (1, 2), (2, 3)]),
        (6, vec![(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]),
        (8, (0..8).map(|i| (i, (i + 1) % 8)).collect()),
        (9, vec![(0, 1), (1, 2), (3, 4), (4, 5), (6, 7), (7, 8), (0, 3), (3, 6), (1, 4), (4, 7), (2, 5), (5, 8)]),
    ];
    for (n, edges) in cases {
        let adj = graph_from_edges(n, &edges);
        let verts: Vec<usize> = (0..n).collect();
        assert_eq!(bipartition(&verts, &adj).cut.len(), exhaustive_min_cut(&adj).0, "n = {n}");
    }
}

#[test]
fn thirteen_bus_clusters() {
    // A K4 on {1,2,3,4} and three triangles, chained by single edges.
    let edges = [
        (1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4),
        (5, 6), (6, 7), (5, 7),
        (0, 8), (8, 9), (0, 9),
        (10, 11), (11, 12), (10, 12),
        (3, 5), (7, 8), (9, 10),
    ];
    let adj = graph_from_edges(13, &edges);
    let tree = PartitionTree::from_adjacency(&adj, 1, 4).unwrap();
    let mut sizes: Vec<usize> = tree.leaves().map(|l| l.n_buses()).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![3, 3, 3, 4]);
    let leaf_set = |b: usize| -> BTreeSet<usize> {
        let leaf = tree.node(tree.locate_leaf(b).unwrap());
        tree.bus_order()[leaf.bus_range.clone()].iter().copied().collect()
    };
    assert_eq!(leaf_set(1), [1, 2, 3, 4].into());
    assert_eq!(leaf_set(5), [5, 6, 7].into());
    assert_eq!(leaf_set(0), [0, 8, 9].into());
    assert_eq!(leaf_set(10), [10, 11, 12].into());
    let (l4, l6) = (tree.locate_leaf(4).unwrap(), tree.locate_leaf(6).unwrap());
    assert_eq!(tree.node(l4).parent, tree.node(l6).parent);
    assert_eq!(tree.lca(l4, tree.locate_leaf(10).unwrap()), tree.root());
    assert_eq!(tree.node(tree.root()).cut_edges.len(), 1);
}

#[test]
fn zero_threshold_is_rejected() {
    let adj = graph_from_edges(2, &[(0, 1)]);
    assert!(PartitionTree::from_adjacency(&adj, 1, 0).is_err());
}
