//! Predefined class hierarchies and the distance matrices derived from them.
//!
//! A hierarchy is a rooted tree stored as a CSV edge list with header
//! `id,parent`. The root row has an empty parent; classes are the leaves, in
//! order of first appearance in the file. That ordering is the class index
//! space used by every other module.

use std::collections::HashMap;
use std::f64::consts::SQRT_2;
use std::io::{Read, Write};

use ndarray::Array2;
use crate::error::{Error, Result};
use crate::vecops::fmt_sig;

/// Default `beta` of the transformed distance.
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchyTree {
    nodes: Vec<Node>,
    leaf_classes: Vec<usize>,
    root: usize,
    index: HashMap<String, usize>,
    depth: Vec<usize>,
    class_of_node: HashMap<usize, usize>,
}

impl HierarchyTree {
    /// Builds and validates a tree from `(id, parent id)` pairs in file order.
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, Option<S>)]) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyHierarchy);
        }
        let mut index = HashMap::with_capacity(edges.len());
        for (i, (id, _)) in edges.iter().enumerate() {
            if index.insert(id.as_ref().to_string(), i).is_some() {
                return Err(Error::DuplicateId(id.as_ref().to_string()));
            }
        }
        let mut nodes = Vec::with_capacity(edges.len());
        let mut root = None;
        for (id, parent) in edges {
            let id = id.as_ref();
            let parent = match parent {
                None => {
                    if let Some(r) = root {
                        let first: &Node = &nodes[r];
                        return Err(Error::MultipleRoots(first.id.clone(), id.to_string()));
                    }
                    root = Some(nodes.len());
                    None
                }
                Some(p) => {
                    let p = p.as_ref();
                    if p == id {
                        return Err(Error::CycleDetected(id.to_string()));
                    }
                    match index.get(p) {
                        Some(&pi) => Some(pi),
                        None => {
                            return Err(Error::OrphanNode {
                                node: id.to_string(),
                                parent: p.to_string(),
                            })
                        }
                    }
                }
            };
            nodes.push(Node {
                id: id.to_string(),
                parent,
            });
        }

        // Every node must reach the root; a walk longer than the node count means a cycle.
        let n = nodes.len();
        let mut depth = vec![usize::MAX; n];
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            loop {
                if depth[cur] != usize::MAX {
                    break;
                }
                path.push(cur);
                if path.len() > n {
                    return Err(Error::CycleDetected(nodes[start].id.clone()));
                }
                match nodes[cur].parent {
                    Some(p) => cur = p,
                    None => {
                        depth[cur] = 0;
                        path.pop();
                        break;
                    }
                }
            }
            let mut d = depth[cur];
            while let Some(node) = path.pop() {
                d += 1;
                depth[node] = d;
            }
        }
        let root = root.ok_or_else(|| Error::CycleDetected(nodes[0].id.clone()))?;

        let mut has_child = vec![false; n];
        for node in &nodes {
            if let Some(p) = node.parent {
                has_child[p] = true;
            }
        }
        let leaf_classes: Vec<usize> = (0..n).filter(|&i| !has_child[i]).collect();
        let class_of_node = leaf_classes
            .iter()
            .enumerate()
            .map(|(c, &node)| (node, c))
            .collect();

        Ok(Self {
            nodes,
            leaf_classes,
            root,
            index,
            depth,
            class_of_node,
        })
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "parent" {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `id,parent`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut edges: Vec<(String, Option<String>)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 2 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 2 fields, found {}", rec.len()),
                });
            }
            let id = rec[0].to_string();
            if id.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty node id".into(),
                });
            }
            let parent = (!rec[1].is_empty()).then(|| rec[1].to_string());
            edges.push((id, parent));
        }
        Self::from_edges(&edges)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse(text.as_bytes())
    }

    /// Writes the `id,parent` edge list in node order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "parent"])?;
        for node in &self.nodes {
            let parent = node.parent.map(|p| self.nodes[p].id.as_str()).unwrap_or("");
            w.write_record([node.id.as_str(), parent])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn num_classes(&self) -> usize {
        self.leaf_classes.len()
    }

    /// Node indices of the classes, in class order.
    pub fn leaf_classes(&self) -> &[usize] {
        &self.leaf_classes
    }

    pub fn class_labels(&self) -> Vec<String> {
        self.leaf_classes
            .iter()
            .map(|&n| self.nodes[n].id.clone())
            .collect()
    }

    pub fn class_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .and_then(|n| self.class_of_node.get(n))
            .copied()
            .ok_or_else(|| Error::UnknownClass(id.to_string()))
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Height of the tree (maximum node depth).
    pub fn height(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.nodes[a].parent.expect("non-root has parent");
        }
        while self.depth[b] > self.depth[a] {
            b = self.nodes[b].parent.expect("non-root has parent");
        }
        while a != b {
            a = self.nodes[a].parent.expect("non-root has parent");
            b = self.nodes[b].parent.expect("non-root has parent");
        }
        a
    }

    /// Edge count of the tree path between two classes given by class index.
    pub fn class_distance(&self, a: usize, b: usize) -> u32 {
        let (na, nb) = (self.leaf_classes[a], self.leaf_classes[b]);
        let l = self.lca(na, nb);
        (self.depth[na] + self.depth[nb] - 2 * self.depth[l]) as u32
    }

    /// Edge count of the tree path between two classes given by id.
    pub fn hierarchical_distance(&self, a: &str, b: &str) -> Result<u32> {
        let ia = self.class_index(a)?;
        let ib = self.class_index(b)?;
        Ok(self.class_distance(ia, ib))
    }

    /// `D_H`, `D_T` and `S_H` over all class pairs.
    pub fn distance_matrices(&self, beta: f64) -> Result<DistanceMatrices> {
        if !(beta > 0.0) {
            return Err(Error::OutOfRange {
                value: beta,
                range: "beta > 0",
            });
        }
        let n = self.num_classes();
        let labels = self.class_labels();
        let mut dh = Array2::zeros((n, n));
        let mut dt = Array2::zeros((n, n));
        let mut sh = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let h = self.class_distance(i, j) as f64;
                let t = transformed_distance(h, beta)?;
                dh[[i, j]] = h;
                dt[[i, j]] = t;
                sh[[i, j]] = hierarchical_similarity(t)?;
            }
        }
        Ok(DistanceMatrices {
            d_h: ClassDistanceMatrix::new(labels.clone(), dh),
            d_t: ClassDistanceMatrix::new(labels.clone(), dt),
            s_h: ClassDistanceMatrix::new(labels, sh),
        })
    }
}

/// `√2·d/(β+d)`: maps tree distances into the chord range of the unit sphere.
pub fn transformed_distance(d_h: f64, beta: f64) -> Result<f64> {
    if d_h < 0.0 {
        return Err(Error::NegativeDistance(d_h));
    }
    if !(beta > 0.0) {
        return Err(Error::OutOfRange {
            value: beta,
            range: "beta > 0",
        });
    }
    if d_h.is_infinite() {
        return Ok(SQRT_2);
    }
    Ok(SQRT_2 * d_h / (beta + d_h))
}

/// `1 − d_T²/2`, the cosine between unit vectors at chord distance `d_T`.
pub fn hierarchical_similarity(d_t: f64) -> Result<f64> {
    if !(0.0..SQRT_2).contains(&d_t) {
        return Err(Error::OutOfRange {
            value: d_t,
            range: "[0, sqrt(2))",
        });
    }
    Ok(1.0 - d_t * d_t / 2.0)
}

/// Square class-by-class matrix with labels, used for `D_H`, `D_T`, `S_H` and learned distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistanceMatrix {
    pub labels: Vec<String>,
    pub values: Array2<f64>,
}

impl ClassDistanceMatrix {
    pub fn new(labels: Vec<String>, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.nrows(), labels.len());
        debug_assert_eq!(values.ncols(), labels.len());
        Self { labels, values }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Restricts to the given class indices (in the given order).
    pub fn subset(&self, classes: &[usize]) -> Self {
        let n = classes.len();
        let values = Array2::from_shape_fn((n, n), |(i, j)| self.values[[classes[i], classes[j]]]);
        let labels = classes.iter().map(|&c| self.labels[c].clone()).collect();
        Self { labels, values }
    }

    /// CSV with a header row and a leading column of class ids; 9 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.values.row(i).iter().map(|&v| fmt_sig(v, 9)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = labels.len();
        let mut values = Array2::zeros((n, n));
        let mut rows = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if i >= n || rec.len() != n + 1 || rec[0] != labels[i] {
                return Err(Error::Parse {
                    line,
                    message: "matrix rows must mirror the header labels".into(),
                });
            }
            for j in 0..n {
                values[[i, j]] = rec[j + 1].parse().map_err(|e| Error::Parse {
                    line,
                    message: format!("bad number `{}`: {e}", &rec[j + 1]),
                })?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse {
                line: rows as u64 + 1,
                message: format!("expected {n} rows, found {rows}"),
            });
        }
        Ok(Self { labels, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrices {
    pub d_h: ClassDistanceMatrix,
    pub d_t: ClassDistanceMatrix,
    pub s_h: ClassDistanceMatrix,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn star() -> HierarchyTree {
        HierarchyTree::parse_str("id,parent\nanimal,\ntiger,animal\nshark,animal\n").unwrap()
    }

    #[test]
    fn minimal_tree() {
        let t = star();
        assert_eq!(t.num_classes(), 2);
        assert_eq!(t.class_labels(), vec!["tiger", "shark"]);
        let m = t.distance_matrices(1.0).unwrap();
        assert_eq!(m.d_h.values, ndarray::array![[0.0, 2.0], [2.0, 0.0]]);
    }

    #[test]
    fn structural_errors() {
        let self_loop = HierarchyTree::parse_str("id,parent\nroot,\na,a\n");
        assert!(matches!(self_loop, Err(Error::CycleDetected(_))));
        let dup = HierarchyTree::parse_str("id,parent\nroot,\na,root\na,root\n");
        assert!(matches!(dup, Err(Error::DuplicateId(_))));
        let two_roots = HierarchyTree::parse_str("id,parent\nr1,\nr2,\n");
        assert!(matches!(two_roots, Err(Error::MultipleRoots(..))));
        let orphan = HierarchyTree::parse_str("id,parent\nroot,\na,nowhere\n");
        assert!(matches!(orphan, Err(Error::OrphanNode { .. })));
        let cycle = HierarchyTree::parse_str("id,parent\nroot,\na,b\nb,a\n");
        assert!(matches!(cycle, Err(Error::CycleDetected(_))));
        assert!(matches!(HierarchyTree::parse_str("id,parent\n"), Err(Error::EmptyHierarchy)));
        assert!(matches!(HierarchyTree::parse_str("node,up\nr,\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn forward_parent_reference_is_allowed() {
        let t = HierarchyTree::parse_str("id,parent\na,mid\nmid,root\nroot,\nb,mid\n").unwrap();
        assert_eq!(t.class_labels(), vec!["a", "b"]);
        assert_eq!(t.hierarchical_distance("a", "b").unwrap(), 2);
    }

    #[test]
    fn transformed_and_similarity() {
        assert_eq!(transformed_distance(0.0, 1.0).unwrap(), 0.0);
        let t4 = transformed_distance(4.0, 1.0).unwrap();
        assert!((t4 - 4.0 * SQRT_2 / 5.0).abs() < 1e-15);
        assert!((t4 - 1.13137).abs() < 1e-5);
        assert!((transformed_distance(1e9, 1.0).unwrap() - SQRT_2).abs() < 1e-6);
        assert!(matches!(transformed_distance(-1.0, 1.0), Err(Error::NegativeDistance(_))));

        assert_eq!(hierarchical_similarity(0.0).unwrap(), 1.0);
        assert_eq!(hierarchical_similarity(1.0).unwrap(), 0.5);
        assert!((hierarchical_similarity(t4).unwrap() - 0.36).abs() < 1e-15);
        assert!(matches!(hierarchical_similarity(SQRT_2), Err(Error::OutOfRange { .. })));
        assert!(matches!(hierarchical_similarity(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn unknown_class() {
        let t = star();
        assert!(matches!(t.hierarchical_distance("tiger", "woman"), Err(Error::UnknownClass(_))));
        // internal nodes are not classes
        assert!(matches!(t.class_index("animal"), Err(Error::UnknownClass(_))));
    }

    fn bfs_distances(tree: &HierarchyTree) -> Vec<Vec<u32>> {
        let n = tree.nodes().len();
        let mut adj = vec![Vec::new(); n];
        for (i, node) in tree.nodes().iter().enumerate() {
            if let Some(p) = node.parent {
                adj[i].push(p);
                adj[p].push(i);
            }
        }
        let leaves = tree.leaf_classes();
        leaves
            .iter()
            .map(|&src| {
                let mut dist = vec![u32::MAX; n];
                dist[src] = 0;
                let mut q = VecDeque::from([src]);
                while let Some(u) = q.pop_front() {
                    for &v in &adj[u] {
                        if dist[v] == u32::MAX {
                            dist[v] = dist[u] + 1;
                            q.push_back(v);
                        }
                    }
                }
                leaves.iter().map(|&l| dist[l]).collect()
            })
            .collect()
    }

    fn random_tree(seed: u64, n: usize) -> HierarchyTree {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut edges: Vec<(String, Option<String>)> = vec![("n0".into(), None)];
        for i in 1..n {
            let p = rng.random_range(0..i);
            edges.push((format!("n{i}"), Some(format!("n{p}"))));
        }
        HierarchyTree::from_edges(&edges).unwrap()
    }

    #[test]
    fn matches_bfs_oracle() {
        for seed in 0..40 {
            let tree = random_tree(seed, 5 + (seed as usize % 46));
            let oracle = bfs_distances(&tree);
            let m = tree.distance_matrices(1.0).unwrap();
            for (i, row) in oracle.iter().enumerate() {
                for (j, &d) in row.iter().enumerate() {
                    assert_eq!(m.d_h.values[[i, j]], d as f64);
                }
            }
        }
    }

    #[test]
    fn triangle_inequality_and_similarity_identity() {
        for seed in 0..10 {
            let tree = random_tree(100 + seed, 30);
            let m = tree.distance_matrices(1.0).unwrap();
            let n = tree.num_classes();
            for i in 0..n {
                for j in 0..n {
                    let t = m.d_t.values[[i, j]];
                    assert_eq!(m.s_h.values[[i, j]], 1.0 - t * t / 2.0);
                    assert_eq!(m.d_h.values[[i, j]], m.d_h.values[[j, i]]);
                    for k in 0..n {
                        assert!(m.d_h.values[[i, k]] <= m.d_h.values[[i, j]] + m.d_h.values[[j, k]]);
                        assert!(m.d_t.values[[i, k]] <= m.d_t.values[[i, j]] + m.d_t.values[[j, k]] + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let tree = random_tree(7, 12);
        let m = tree.distance_matrices(1.0).unwrap();
        let mut buf = Vec::new();
        m.d_h.write_csv(&mut buf).unwrap();
        let back = ClassDistanceMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m.d_h);
        let mut buf = Vec::new();
        m.d_t.write_csv(&mut buf).unwrap();
        let back = ClassDistanceMatrix::read_csv(buf.as_slice()).unwrap();
        for (a, b) in back.values.iter().zip(m.d_t.values.iter()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300));
        }
    }
}
