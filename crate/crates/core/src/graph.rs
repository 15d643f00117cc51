//! Attributed point-cloud graphs: data model, neighbourhood construction and
//! the line-oriented `pcg` text format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A vertex of a point-cloud graph: a position in R^d and an attribute vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub position: Vec<f64>,
    pub attribute: Vec<f64>,
}

impl Vertex {
    pub fn new(position: Vec<f64>, attribute: Vec<f64>) -> Self {
        Vertex {
            position,
            attribute,
        }
    }
}

/// Undirected graph whose vertices carry positions and attributes.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted; the adjacency
/// lists are sorted too, so iteration order is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudGraph {
    vertices: Vec<Vertex>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

/// How to connect the points of a raw point cloud.
#[derive(Debug, Clone, PartialEq)]
pub enum NeighborhoodRule {
    /// Connect points at Euclidean distance at most `r`.
    EpsilonBall(f64),
    /// Connect each point to its `k` nearest points, symmetrized by union.
    KNearest(usize),
    /// Use the given undirected edges.
    Explicit(Vec<(usize, usize)>),
}

impl PointCloudGraph {
    /// Builds a graph, validating every invariant: consistent dimensions,
    /// finite coordinates, in-range indices, no self-loops, no duplicates.
    pub fn new(vertices: Vec<Vertex>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = vertices.len();
        if let Some(first) = vertices.first() {
            let (d, a) = (first.position.len(), first.attribute.len());
            for v in &vertices {
                if v.position.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: v.position.len(),
                    });
                }
                if v.attribute.len() != a {
                    return Err(Error::DimensionMismatch {
                        expected: a,
                        actual: v.attribute.len(),
                    });
                }
                if !v.position.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("vertex position"));
                }
                if !v.attribute.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("vertex attribute"));
                }
            }
        }

        let mut set = BTreeSet::new();
        for (i, j) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            let e = (i.min(j), i.max(j));
            if !set.insert(e) {
                return Err(Error::DuplicateEdge(e.0, e.1));
            }
        }

        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(PointCloudGraph {
            vertices,
            edges,
            adjacency,
        })
    }

    /// The graph with no vertices.
    pub fn empty() -> Self {
        PointCloudGraph {
            vertices: Vec::new(),
            edges: Vec::new(),
            adjacency: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &Vertex {
        &self.vertices[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Position dimension (0 for an empty graph).
    pub fn position_dim(&self) -> usize {
        self.vertices.first().map_or(0, |v| v.position.len())
    }

    /// Attribute dimension (0 for an empty graph).
    pub fn attribute_dim(&self) -> usize {
        self.vertices.first().map_or(0, |v| v.attribute.len())
    }

    /// Replaces all attribute vectors.
    pub fn with_attributes(self, attributes: Vec<Vec<f64>>) -> Result<Self> {
        if attributes.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: attributes.len(),
            });
        }
        let vertices = self
            .vertices
            .into_iter()
            .zip(attributes)
            .map(|(v, attribute)| Vertex::new(v.position, attribute))
            .collect();
        PointCloudGraph::new(vertices, self.edges)
    }

    /// Relabels vertices: vertex `i` of `self` becomes vertex `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: perm.len(),
            });
        }
        let mut slots: Vec<Option<Vertex>> = vec![None; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || slots[p].is_some() {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            slots[p] = Some(self.vertices[i].clone());
        }
        let vertices = slots.into_iter().map(Option::unwrap).collect();
        let edges = self.edges.iter().map(|&(i, j)| (perm[i], perm[j]));
        PointCloudGraph::new(vertices, edges)
    }

    /// Serializes to the `pcg` text format.
    pub fn to_pcg_string(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "pcg 1 {} {} {} {}",
            self.len(),
            self.edges.len(),
            self.position_dim(),
            self.attribute_dim()
        )
        .unwrap();
        for v in &self.vertices {
            out.push('v');
            for x in v.position.iter().chain(&v.attribute) {
                write!(out, " {}", fmt_f64(*x)).unwrap();
            }
            out.push('\n');
        }
        for &(i, j) in &self.edges {
            writeln!(out, "e {i} {j}").unwrap();
        }
        out
    }

    /// Parses the `pcg` text format. `path` is only used in error messages.
    pub fn from_pcg_str(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 6 || h[0] != "pcg" || h[1] != "1" {
            return Err(err(hline + 1, format!("bad header {header:?}")));
        }
        let parse_usize = |s: &str, line: usize| {
            s.parse::<usize>()
                .map_err(|_| err(line, format!("expected integer, found {s:?}")))
        };
        let n = parse_usize(h[2], hline + 1)?;
        let m = parse_usize(h[3], hline + 1)?;
        let d = parse_usize(h[4], hline + 1)?;
        let a = parse_usize(h[5], hline + 1)?;

        let mut vertices = Vec::with_capacity(n);
        let mut edges = Vec::with_capacity(m);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    if !edges.is_empty() {
                        return Err(err(lineno, "vertex line after edge lines".into()));
                    }
                    let values = fields
                        .map(|s| {
                            s.parse::<f64>()
                                .map_err(|_| err(lineno, format!("expected float, found {s:?}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if values.len() != d + a {
                        return Err(err(
                            lineno,
                            format!("expected {} values, found {}", d + a, values.len()),
                        ));
                    }
                    vertices.push(Vertex::new(values[..d].to_vec(), values[d..].to_vec()));
                }
                Some("e") => {
                    let ij = fields
                        .map(|s| parse_usize(s, lineno))
                        .collect::<Result<Vec<_>>>()?;
                    if ij.len() != 2 {
                        return Err(err(lineno, "edge line needs two indices".into()));
                    }
                    edges.push((ij[0], ij[1]));
                }
                _ => return Err(err(lineno, format!("unrecognized line {line:?}"))),
            }
        }
        if vertices.len() != n {
            return Err(err(0, format!("header declares {n} vertices, found {}", vertices.len())));
        }
        if edges.len() != m {
            return Err(err(0, format!("header declares {m} edges, found {}", edges.len())));
        }
        PointCloudGraph::new(vertices, edges)
    }
}

/// Shortest-distance-ready float formatting with 17 significant digits.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<PointCloudGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    PointCloudGraph::from_pcg_str(&text, path)
}

pub fn save_graph(graph: &PointCloudGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, graph.to_pcg_string())?;
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds an undirected graph over raw points. Attributes are left empty.
pub fn build_neighborhood_graph(points: &[Vec<f64>], rule: &NeighborhoodRule) -> Result<PointCloudGraph> {
    if points.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let d = points[0].len();
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: p.len(),
            });
        }
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
    }
    let n = points.len();
    let mut edges = BTreeSet::new();
    match rule {
        NeighborhoodRule::EpsilonBall(r) => {
            if !(*r > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon radius must be > 0, got {r}")));
            }
            let r2 = r * r;
            for i in 0..n {
                for j in i + 1..n {
                    if sq_dist(&points[i], &points[j]) <= r2 {
                        edges.insert((i, j));
                    }
                }
            }
        }
        NeighborhoodRule::KNearest(k) => {
            if *k == 0 {
                return Err(Error::InvalidArgument("k must be >= 1".into()));
            }
            for i in 0..n {
                let mut others: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (sq_dist(&points[i], &points[j]), j))
                    .collect();
                // ties go to the lower index
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in others.iter().take(*k) {
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
        NeighborhoodRule::Explicit(list) => {
            // duplicates and self-loops are rejected by the constructor
            let vertices = points.iter().map(|p| Vertex::new(p.clone(), Vec::new())).collect();
            return PointCloudGraph::new(vertices, list.iter().copied());
        }
    }
    let vertices = points.iter().map(|p| Vertex::new(p.clone(), Vec::new())).collect();
    PointCloudGraph::new(vertices, edges)
}
