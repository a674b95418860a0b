use std::io::Write;

use coopkernel::graph::{
    all_pairs_distances, central_partition, gen_erdos_renyi, graph_power, greedy_clique_cover,
    greedy_max_weight_independent_set, load_edge_list, Graph,
};
use coopkernel::harness::{build_graph, ExperimentConfig};
use proptest::prelude::*;

/// Floyd–Warshall on the adjacency matrix.
fn floyd(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.vertex_count();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for (a, b) in g.edges() {
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bfs_distances_match_floyd(seed in any::<u64>(), n in 2usize..25, p in 0.1f64..0.9) {
        let g = gen_erdos_renyi(n, p, seed).unwrap();
        let d = all_pairs_distances(&g);
        let f = floyd(&g);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(d.get(i, j), f[i][j]);
            }
        }
    }

    #[test]
    fn power_graph_edges_are_distance_cutoffs(seed in any::<u64>(), n in 2usize..18, gamma in 1usize..4) {
        let g = gen_erdos_renyi(n, 0.25, seed).unwrap();
        let d = all_pairs_distances(&g);
        let gp = graph_power(&g, gamma).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(gp.has_edge(i, j), i != j && d.get(i, j) <= gamma);
            }
        }
    }

    #[test]
    fn partition_is_consistent(seed in any::<u64>(), n in 2usize..20, gamma in 1usize..3) {
        let g = gen_erdos_renyi(n, 0.3, seed).unwrap();
        let gp = graph_power(&g, gamma).unwrap();
        let part = central_partition(&g, gamma).unwrap();
        let d = all_pairs_distances(&g);
        for (v, a) in part.assigned.iter().enumerate() {
            match a {
                None => prop_assert!(part.centrals.contains(&v)),
                Some((c, delay)) => {
                    prop_assert!(part.centrals.contains(c));
                    prop_assert!(gp.has_edge(v, *c));
                    prop_assert_eq!(*delay, d.get(v, *c));
                    prop_assert!(*delay >= 1 && *delay <= gamma);
                }
            }
        }
        let cover = greedy_clique_cover(&gp);
        prop_assert!(cover.is_valid_for(&gp));
        // centrals are pairwise non-adjacent
        for &a in &part.centrals {
            for &b in &part.centrals {
                prop_assert!(a == b || !gp.has_edge(a, b));
            }
        }
    }
}

#[test]
fn complete_power_collapses_to_one_clique() {
    let g = Graph::path(5).unwrap();
    let gp = graph_power(&g, 4).unwrap();
    assert!(gp.is_complete());
    assert_eq!(greedy_clique_cover(&gp).len(), 1);
    let w = vec![1.0; 5];
    assert_eq!(greedy_max_weight_independent_set(&gp, &w), vec![0]);
}

#[test]
fn edge_list_from_file_through_config() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "# FromNodeId\tToNodeId").unwrap();
    for (a, b) in [(10, 20), (20, 30), (30, 10), (30, 40), (40, 40), (20, 10), (77, 88)] {
        writeln!(f, "{a}\t{b}").unwrap();
    }
    let path = f.path().to_string_lossy().into_owned();
    let cfg = ExperimentConfig::parse(&format!("edge-list = {path}")).unwrap();
    let g = build_graph(&cfg).unwrap();
    assert_eq!(g.vertex_count(), 4);
    assert_eq!(g.edge_count(), 4);
    let cfg = ExperimentConfig::parse(&format!("edge-list = {path}\nsubsample = 3")).unwrap();
    assert_eq!(build_graph(&cfg).unwrap().vertex_count(), 3);
    let text = std::fs::read_to_string(f.path()).unwrap();
    assert_eq!(load_edge_list(&text, None).unwrap(), g);
}

#[test]
fn missing_edge_list_reports_path() {
    let cfg = ExperimentConfig::parse("edge-list = /nonexistent/graph.txt").unwrap();
    let err = build_graph(&cfg).unwrap_err().to_string();
    assert!(err.contains("/nonexistent/graph.txt"));
}
