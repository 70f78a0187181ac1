//! Undirected node-classification graphs: storage, raw citation-format
//! ingestion and train/val/test splitting.

mod adjacency;

pub use adjacency::{drop_edge, normalize, retained_edges, NormalizedAdjacency, Provenance};

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{Seeds, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    Train,
    Val,
    Test,
}

impl MaskKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Train => "train",
            MaskKind::Val => "val",
            MaskKind::Test => "test",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Self {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn get(&self, kind: MaskKind) -> &[bool] {
        match kind {
            MaskKind::Train => &self.train,
            MaskKind::Val => &self.val,
            MaskKind::Test => &self.test,
        }
    }

    pub fn count(&self, kind: MaskKind) -> usize {
        self.get(kind).iter().filter(|&&b| b).count()
    }

    pub fn is_disjoint(&self) -> bool {
        (0..self.train.len())
            .all(|i| u8::from(self.train[i]) + u8::from(self.val[i]) + u8::from(self.test[i]) <= 1)
    }
}

/// Sparse undirected graph with node features, labels and split masks.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted and deduplicated;
/// `neighbors` holds the symmetric closure in row-compressed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub node_ids: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub masks: Masks,
    nbr_ptr: Vec<usize>,
    nbr_idx: Vec<usize>,
}

/// Counters reported by the raw loader.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub citation_lines: usize,
    pub unresolved: usize,
    pub self_citations: usize,
    pub duplicates: usize,
}

impl Graph {
    /// Builds a graph from arbitrary undirected pairs; self-loops and
    /// duplicates (in either direction) are dropped.
    pub fn new(
        node_ids: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if features.rows != n || labels.len() != n {
            return Err(Error::Shape(format!(
                "{} nodes, {} feature rows, {} labels",
                n,
                features.rows,
                labels.len()
            )));
        }
        let mut canon = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Shape(format!("edge ({a}, {b}) with {n} nodes")));
            }
            if a != b {
                canon.push((a.min(b), a.max(b)));
            }
        }
        canon.sort_unstable();
        canon.dedup();
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_names.len()) {
            return Err(Error::Label {
                node: i,
                label: l,
                classes: class_names.len(),
            });
        }
        let mut g = Self {
            node_ids,
            edges: canon,
            features,
            labels,
            class_names,
            masks: Masks::empty(n),
            nbr_ptr: Vec::new(),
            nbr_idx: Vec::new(),
        };
        g.index_neighbors();
        Ok(g)
    }

    fn index_neighbors(&mut self) {
        let n = self.num_nodes();
        let mut deg = vec![0usize; n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut ptr = vec![0usize; n + 1];
        for i in 0..n {
            ptr[i + 1] = ptr[i] + deg[i];
        }
        let mut fill = ptr.clone();
        let mut idx = vec![0usize; ptr[n]];
        for &(a, b) in &self.edges {
            idx[fill[a]] = b;
            fill[a] += 1;
            idx[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..n {
            idx[ptr[i]..ptr[i + 1]].sort_unstable();
        }
        self.nbr_ptr = ptr;
        self.nbr_idx = idx;
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.nbr_idx[self.nbr_ptr[i]..self.nbr_ptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.nbr_ptr[i + 1] - self.nbr_ptr[i]
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self> {
        let n = self.num_nodes();
        if masks.train.len() != n || masks.val.len() != n || masks.test.len() != n {
            return Err(Error::Shape("mask length differs from node count".into()));
        }
        if !masks.is_disjoint() {
            return Err(Error::Config("train/val/test masks overlap".into()));
        }
        self.masks = masks;
        Ok(self)
    }

    /// Raw citation format: `<id> <f_1> … <f_F> <class>` per content line,
    /// `<citing> <cited>` per cites line.
    pub fn load_citation_raw(content: &Path, cites: &Path) -> Result<(Self, LoadStats)> {
        let content_text = fs::read_to_string(content)?;
        let cites_text = fs::read_to_string(cites)?;
        Self::parse_citation(&content_text, &cites_text, content, cites)
    }

    pub fn parse_citation(
        content_text: &str,
        cites_text: &str,
        content_path: &Path,
        cites_path: &Path,
    ) -> Result<(Self, LoadStats)> {
        let mut ids: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut feats: Vec<f64> = Vec::new();
        let mut labels = Vec::new();
        let mut classes: Vec<String> = Vec::new();
        let mut class_index: HashMap<String, usize> = HashMap::new();
        let mut width: Option<usize> = None;

        for (lineno, line) in content_text.lines().enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: content_path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            if toks.len() < 2 {
                return Err(perr("expected `<id> [features…] <class>`".into()));
            }
            let f = toks.len() - 2;
            match width {
                None => width = Some(f),
                Some(w) if w != f => {
                    return Err(perr(format!("expected {w} feature columns, found {f}")));
                }
                _ => {}
            }
            for t in &toks[1..toks.len() - 1] {
                let v: f64 = t.parse().map_err(|_| perr(format!("bad feature value `{t}`")))?;
                feats.push(v);
            }
            let id = toks[0].to_string();
            if index.contains_key(&id) {
                return Err(Error::DuplicateNode(id));
            }
            index.insert(id.clone(), ids.len());
            ids.push(id);
            let class = toks[toks.len() - 1];
            let next = classes.len();
            let c = *class_index.entry(class.to_string()).or_insert_with(|| {
                classes.push(class.to_string());
                next
            });
            labels.push(c);
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput(format!("{}", content_path.display())));
        }

        let mut stats = LoadStats::default();
        let mut pairs = Vec::new();
        for (lineno, line) in cites_text.lines().enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            if toks.len() != 2 {
                return Err(Error::Parse {
                    path: cites_path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected `<citing> <cited>`, found {} fields", toks.len()),
                });
            }
            stats.citation_lines += 1;
            match (index.get(toks[0]), index.get(toks[1])) {
                (Some(&a), Some(&b)) if a == b => stats.self_citations += 1,
                (Some(&a), Some(&b)) => pairs.push((a.min(b), a.max(b))),
                _ => stats.unresolved += 1,
            }
        }
        let before = pairs.len();
        pairs.sort_unstable();
        pairs.dedup();
        stats.duplicates = before - pairs.len();

        let n = ids.len();
        let features = Matrix::from_vec(n, width.unwrap_or(0), feats);
        let g = Graph::new(ids, pairs, features, labels, classes)?;
        Ok((g, stats))
    }

    /// Writes the graph in the raw citation format (one line per undirected edge).
    pub fn write_citation_raw(&self, content: &Path, cites: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.num_nodes() {
            out.push_str(&self.node_ids[i]);
            for v in self.features.row(i) {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push(' ');
            out.push_str(&self.class_names[self.labels[i]]);
            out.push('\n');
        }
        fs::write(content, out)?;
        let mut out = String::new();
        for &(a, b) in &self.edges {
            out.push_str(&format!("{} {}\n", self.node_ids[a], self.node_ids[b]));
        }
        fs::write(cites, out)?;
        Ok(())
    }

    /// Assigns disjoint train/val/test masks, stratified by class.
    pub fn split_nodes(self, policy: &SplitPolicy, seed: u64) -> Result<Self> {
        let masks = split_masks(&self.labels, &self.class_names, policy, seed)?;
        self.with_masks(masks)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Per-split fractions applied within every class.
    Fractions { train: f64, val: f64, test: f64 },
    /// Absolute node counts per class.
    PerClass { train: usize, val: usize, test: usize },
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy::Fractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

fn split_masks(labels: &[usize], class_names: &[String], policy: &SplitPolicy, seed: u64) -> Result<Masks> {
    let n = labels.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_names.len()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    if let SplitPolicy::Fractions { train, val, test } = *policy {
        let fr = [train, val, test];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::Config(format!(
                "split fractions ({train}, {val}, {test}) must be non-negative and sum to at most 1"
            )));
        }
    }

    let mut masks = Masks::empty(n);
    let mut rng = Seeds::new(seed).rng(Stream::Data, &[0x5B11]);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let counts = match *policy {
            SplitPolicy::Fractions { train, val, test } => allocate(members.len(), [train, val, test]),
            SplitPolicy::PerClass { train, val, test } => {
                let required = train + val + test;
                if members.len() < required {
                    return Err(Error::ClassTooSmall {
                        class: class_names[c].clone(),
                        available: members.len(),
                        required,
                    });
                }
                [train, val, test]
            }
        };
        let mut it = members.iter();
        for (k, &take) in counts.iter().enumerate() {
            for &node in it.by_ref().take(take) {
                match k {
                    0 => masks.train[node] = true,
                    1 => masks.val[node] = true,
                    _ => masks.test[node] = true,
                }
            }
        }
    }
    Ok(masks)
}

/// Largest-remainder allocation of `n` items over three fractions.
fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let total = ((n as f64) * fractions.iter().sum::<f64>() + 1e-9).floor() as usize;
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = (exact[k] + 1e-9).floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(counts.iter().sum());
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(content: &str, cites: &str) -> Result<(Graph, LoadStats)> {
        Graph::parse_citation(content, cites, &PathBuf::from("c"), &PathBuf::from("e"))
    }

    fn labelled(n: usize, classes: usize) -> Graph {
        let ids = (0..n).map(|i| i.to_string()).collect();
        let names = (0..classes).map(|c| format!("c{c}")).collect();
        Graph::new(ids, [], Matrix::zeros(n, 1), (0..n).map(|i| i % classes).collect(), names).unwrap()
    }

    #[test]
    fn directed_citations_merge_into_undirected_edges() {
        let (g, stats) = parse("a 1 0 x\nb 0 1 y\nc 1 1 x\n", "a b\nb a\nb c\n").unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(stats.duplicates, 1);
        assert_eq!(g.class_names, vec!["x", "y"]);
        assert_eq!(g.labels, vec![0, 1, 0]);
        assert_eq!(g.num_features(), 2);
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn single_node_no_cites() {
        let (g, _) = parse("n1 0.5 k\n", "").unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (1, 0));
        assert!(g.masks.train.iter().all(|b| !b));
    }

    #[test]
    fn loader_errors() {
        assert!(matches!(parse("", ""), Err(Error::EmptyInput(_))));
        assert!(matches!(parse("a 1 x\na 0 y\n", ""), Err(Error::DuplicateNode(id)) if id == "a"));
        assert!(matches!(parse("a 1 x\nb 1 2 y\n", ""), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("a q x\n", ""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("a 1 x\n", "a\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unresolved_and_self_citations_are_counted() {
        let (g, stats) = parse("a 1 x\nb 1 x\n", "a zz\na a\na b\n").unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!((stats.unresolved, stats.self_citations), (1, 1));
    }

    #[test]
    fn fraction_split_sizes_and_determinism() {
        let p = SplitPolicy::default();
        let a = labelled(100, 4).split_nodes(&p, 7).unwrap();
        let b = labelled(100, 4).split_nodes(&p, 7).unwrap();
        assert_eq!(a.masks.count(MaskKind::Train), 60);
        assert_eq!(a.masks.count(MaskKind::Val), 20);
        assert_eq!(a.masks.count(MaskKind::Test), 20);
        assert!(a.masks.is_disjoint());
        assert_eq!(a.masks, b.masks);
        let c = labelled(100, 4).split_nodes(&p, 8).unwrap();
        assert_ne!(a.masks, c.masks);
    }

    #[test]
    fn stratified_split_balances_classes() {
        let p = SplitPolicy::Fractions {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        };
        let g = labelled(10, 2).split_nodes(&p, 3).unwrap();
        for kind in [MaskKind::Train, MaskKind::Val, MaskKind::Test] {
            let m = g.masks.get(kind);
            let per: Vec<usize> = (0..2)
                .map(|c| (0..10).filter(|&i| m[i] && g.labels[i] == c).count())
                .collect();
            assert_eq!(per[0], per[1], "{kind:?}");
        }
    }

    #[test]
    fn split_errors() {
        let bad = SplitPolicy::Fractions {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(matches!(labelled(10, 2).split_nodes(&bad, 0), Err(Error::Config(_))));
        let per = SplitPolicy::PerClass { train: 3, val: 1, test: 2 };
        match labelled(10, 2).split_nodes(&per, 0) {
            Err(Error::ClassTooSmall { class, .. }) => assert_eq!(class, "c0"),
            other => panic!("{other:?}"),
        }
        let ok = SplitPolicy::PerClass { train: 3, val: 1, test: 1 };
        let g = labelled(10, 2).split_nodes(&ok, 0).unwrap();
        assert_eq!(g.masks.count(MaskKind::Train), 6);
    }
}
