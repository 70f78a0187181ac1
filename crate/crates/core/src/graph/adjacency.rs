use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Upper bound of the edge-drop search range.
pub const MAX_EDGE_DROP: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Full,
    Dropped { rate: f64, seed: u64 },
}

/// `D̂^{-1/2}(A+I)D̂^{-1/2}` over the full or an edge-dropped adjacency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAdjacency {
    pub matrix: CsrMatrix,
    pub provenance: Provenance,
    /// Undirected edges kept (self-loops excluded).
    pub retained_edges: usize,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.matrix.n
    }
}

pub fn normalize(g: &Graph) -> NormalizedAdjacency {
    let keep = vec![true; g.num_edges()];
    build(g, &keep, Provenance::Full)
}

/// Which undirected edges survive dropping at `rate` under `seed`.
///
/// Each edge is kept independently with probability `1 - rate`; both
/// directions share one draw.
pub fn retained_edges(g: &Graph, rate: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=MAX_EDGE_DROP).contains(&rate) || rate.is_nan() {
        return Err(Error::OutOfRange {
            name: "edge drop rate",
            value: rate,
            lo: 0.0,
            hi: MAX_EDGE_DROP,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..g.num_edges()).map(|_| rng.gen::<f64>() >= rate).collect())
}

pub fn drop_edge(g: &Graph, rate: f64, seed: u64) -> Result<NormalizedAdjacency> {
    let keep = retained_edges(g, rate, seed)?;
    Ok(build(g, &keep, Provenance::Dropped { rate, seed }))
}

fn build(g: &Graph, keep: &[bool], provenance: Provenance) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut retained = 0;
    for (&(a, b), &k) in g.edges.iter().zip(keep) {
        if k {
            rows[a].push(b);
            rows[b].push(a);
            retained += 1;
        }
    }
    let degree: Vec<f64> = rows.iter().map(|r| r.len() as f64).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n + 2 * retained);
    let mut values = Vec::with_capacity(n + 2 * retained);
    row_ptr.push(0);
    for (i, mut r) in rows.into_iter().enumerate() {
        r.sort_unstable();
        for j in r {
            col_idx.push(j);
            values.push(1.0 / (degree[i] * degree[j]).sqrt());
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency {
        matrix: CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        },
        provenance,
        retained_edges: retained,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(
            (0..n).map(|i| i.to_string()).collect(),
            edges.iter().copied(),
            Matrix::zeros(n, 1),
            vec![0; n],
            vec!["c".into()],
        )
        .unwrap()
    }

    #[test]
    fn isolated_node_is_one() {
        let a = normalize(&graph(1, &[]));
        assert_eq!(a.matrix.to_dense().data, vec![1.0]);
    }

    #[test]
    fn single_edge_all_half() {
        let a = normalize(&graph(2, &[(0, 1)]));
        assert_eq!(a.matrix.to_dense().data, vec![0.5; 4]);
    }

    #[test]
    fn path_of_three() {
        let a = normalize(&graph(3, &[(0, 1), (1, 2)])).matrix;
        assert_eq!(a.get(0, 0), 0.5);
        assert_eq!(a.get(1, 1), 1.0 / 3.0);
        assert_eq!(a.get(2, 2), 0.5);
        let off = 1.0 / 6f64.sqrt();
        assert!((a.get(0, 1) - off).abs() < 1e-15 && (a.get(1, 2) - off).abs() < 1e-15);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn zero_rate_matches_full() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let d = drop_edge(&g, 0.0, 11).unwrap();
        assert_eq!(d.matrix, normalize(&g).matrix);
        assert_eq!(d.provenance, Provenance::Dropped { rate: 0.0, seed: 11 });
    }

    #[test]
    fn rate_outside_range() {
        let g = graph(2, &[(0, 1)]);
        assert!(matches!(drop_edge(&g, 0.95, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(drop_edge(&g, -0.1, 0), Err(Error::OutOfRange { .. })));
    }

    fn random_graph() -> impl Strategy<Value = Graph> {
        (2usize..20).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..60).prop_map(move |e| graph(n, &e))
        })
    }

    proptest! {
        #[test]
        fn dropped_adjacency_invariants(g in random_graph(), rate in 0.0f64..=0.9, seed in any::<u64>()) {
            let d = drop_edge(&g, rate, seed).unwrap();
            let m = &d.matrix;
            prop_assert!(m.is_symmetric());
            let full = normalize(&g).matrix;
            for i in 0..g.num_nodes() {
                prop_assert!(m.get(i, i) > 0.0);
                let (cols, _) = m.row(i);
                for &j in cols {
                    prop_assert!(full.get(i, j) != 0.0, "edge ({i},{j}) not in A+I");
                }
                let row: f64 = m.row(i).1.iter().sum();
                let col: f64 = (0..g.num_nodes()).map(|r| m.get(r, i)).sum();
                prop_assert!((row - col).abs() < 1e-12);
            }
            prop_assert_eq!(drop_edge(&g, rate, seed).unwrap(), d);
        }
    }
}
