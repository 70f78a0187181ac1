//! Planted-partition benchmark graphs with class-correlated features.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;
use crate::rng::{Seeds, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub classes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the per-node Gaussian feature noise.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            nodes: 600,
            classes: 3,
            communities: 3,
            p_in: 0.05,
            p_out: 0.005,
            feature_dim: 32,
            noise: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nodes == 0 || self.classes == 0 || self.feature_dim == 0 {
            return bad("nodes, classes and feature_dim must be positive".into());
        }
        if self.classes > self.communities || self.communities > self.nodes {
            return bad(format!(
                "need classes ({}) <= communities ({}) <= nodes ({})",
                self.classes, self.communities, self.nodes
            ));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) || self.p_in <= self.p_out {
            return bad(format!("need 0 <= p_out ({}) < p_in ({}) <= 1", self.p_out, self.p_in));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        Ok(())
    }

    /// Community of node `i`: contiguous, near-equal blocks.
    pub fn community(&self, i: usize) -> usize {
        i * self.communities / self.nodes
    }
}

/// Held-out accuracy of the reference classifier shipped with a synthetic graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    /// Nearest class centroid plus majority vote over the closed neighborhood.
    pub oracle_accuracy: f64,
    /// Nearest class centroid on features alone.
    pub feature_accuracy: f64,
    pub held_out: usize,
    pub nodes: usize,
    pub edges: usize,
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub graph: Graph,
    pub oracle: OracleEstimate,
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Synthetic> {
    spec.validate()?;
    let seeds = Seeds::new(seed);
    let n = spec.nodes;
    let dim = spec.feature_dim;

    let mut rng = seeds.rng(Stream::Data, &[1]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if spec.community(i) == spec.community(j) {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    // class means have unit expected norm
    let mut rng = seeds.rng(Stream::Data, &[2]);
    let scale = 1.0 / (dim as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| spec.community(i) % spec.classes).collect();
    let mut x = Vec::with_capacity(n * dim);
    for &l in &labels {
        for m in &means[l] {
            x.push(m + spec.noise * rng.sample::<f64, _>(StandardNormal));
        }
    }

    let graph = Graph::new(
        (0..n).map(|i| format!("n{i}")).collect(),
        edges,
        Matrix::from_vec(n, dim, x),
        labels,
        (0..spec.classes).map(|c| format!("class{c}")).collect(),
    )?;
    let oracle = oracle(&graph, &seeds);
    Ok(Synthetic { graph, oracle })
}

/// Fits centroids on a random half of the nodes and scores the other half.
fn oracle(g: &Graph, seeds: &Seeds) -> OracleEstimate {
    let n = g.num_nodes();
    let c = g.num_classes();
    let dim = g.num_features();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds.rng(Stream::Data, &[3]));
    let (fit, held) = order.split_at(n / 2);

    let mut centroids = vec![vec![0.0; dim]; c];
    let mut counts = vec![0usize; c];
    for &i in fit {
        counts[g.labels[i]] += 1;
        for (a, v) in centroids[g.labels[i]].iter_mut().zip(g.features.row(i)) {
            *a += v;
        }
    }
    for (cent, &k) in centroids.iter_mut().zip(&counts) {
        for a in cent.iter_mut() {
            *a /= k.max(1) as f64;
        }
    }
    let nearest: Vec<usize> = (0..n)
        .map(|i| {
            let row = g.features.row(i);
            let dist = |cent: &Vec<f64>| row.iter().zip(cent).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (0..c)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap()
        })
        .collect();

    let mut feature_hits = 0;
    let mut oracle_hits = 0;
    for &i in held {
        let mut votes = vec![0usize; c];
        votes[nearest[i]] += 1;
        for &j in g.neighbors(i) {
            votes[nearest[j]] += 1;
        }
        let best = *votes.iter().max().unwrap();
        // ties go to the node's own prediction, then the lowest class
        let pick = if votes[nearest[i]] == best {
            nearest[i]
        } else {
            votes.iter().position(|&v| v == best).unwrap()
        };
        feature_hits += usize::from(nearest[i] == g.labels[i]);
        oracle_hits += usize::from(pick == g.labels[i]);
    }
    let h = held.len().max(1) as f64;
    OracleEstimate {
        oracle_accuracy: oracle_hits as f64 / h,
        feature_accuracy: feature_hits as f64 / h,
        held_out: held.len(),
        nodes: n,
        edges: g.num_edges(),
    }
}

/// Paths of the files written by [`write`].
#[derive(Clone, Debug)]
pub struct SyntheticFiles {
    pub content: PathBuf,
    pub cites: PathBuf,
    pub oracle: PathBuf,
}

impl SyntheticFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            content: dir.join("synthetic.content"),
            cites: dir.join("synthetic.cites"),
            oracle: dir.join("oracle.json"),
        }
    }
}

pub fn write(s: &Synthetic, dir: &Path) -> Result<SyntheticFiles> {
    fs::create_dir_all(dir)?;
    let files = SyntheticFiles::in_dir(dir);
    s.graph.write_citation_raw(&files.content, &files.cites)?;
    let json = serde_json::to_string_pretty(&s.oracle).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&files.oracle, json + "\n")?;
    Ok(files)
}

pub fn read_oracle(path: &Path) -> Result<OracleEstimate> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            nodes: 120,
            classes: 2,
            communities: 4,
            p_in: 0.2,
            p_out: 0.01,
            feature_dim: 8,
            noise: 0.5,
        }
    }

    #[test]
    fn no_inter_community_edges_without_p_out() {
        let spec = SyntheticSpec { p_out: 0.0, ..small() };
        let s = generate(&spec, 4).unwrap();
        assert!(s.graph.num_edges() > 0);
        assert!(s.graph.edges.iter().all(|&(a, b)| spec.community(a) == spec.community(b)));
    }

    #[test]
    fn labels_follow_communities() {
        let spec = small();
        let s = generate(&spec, 1).unwrap();
        for i in 0..spec.nodes {
            assert_eq!(s.graph.labels[i], spec.community(i) % spec.classes);
        }
    }

    #[test]
    fn files_are_byte_identical_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(&generate(&small(), 7).unwrap(), &dir.path().join("a")).unwrap();
        let b = write(&generate(&small(), 7).unwrap(), &dir.path().join("b")).unwrap();
        for (x, y) in [(&a.content, &b.content), (&a.cites, &b.cites), (&a.oracle, &b.oracle)] {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let (g, _) = Graph::load_citation_raw(&a.content, &a.cites).unwrap();
        let orig = generate(&small(), 7).unwrap().graph;
        assert_eq!(g.features, orig.features);
        assert_eq!(g.edges, orig.edges);
        assert_eq!(g.labels, orig.labels);
        let o = read_oracle(&a.oracle).unwrap();
        assert!(o.oracle_accuracy >= o.feature_accuracy - 0.05);
    }

    #[test]
    fn infeasible_specs() {
        for spec in [
            SyntheticSpec { p_in: 0.01, p_out: 0.01, ..small() },
            SyntheticSpec { classes: 5, ..small() },
            SyntheticSpec { noise: -1.0, ..small() },
            SyntheticSpec { nodes: 0, ..small() },
        ] {
            assert!(matches!(generate(&spec, 0), Err(Error::Config(_))), "{spec:?}");
        }
    }

    #[test]
    fn benchmark_oracle_is_informative() {
        let s = generate(&SyntheticSpec::default(), 1).unwrap();
        let o = &s.oracle;
        assert!(o.oracle_accuracy > o.feature_accuracy, "{o:?}");
        assert!(o.oracle_accuracy > 0.5 && o.oracle_accuracy <= 1.0, "{o:?}");
    }
}
