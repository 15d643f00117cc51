//! Tree structures, tree-walk labellings, subtree patterns and the augmented
//! pattern graph that drives the dynamic program.
//!
//! Generations are counted from the root (generation 0). A tree structure in
//! `T_{α,γ}` has at most γ generations; a subtree pattern has at most β.

use std::collections::{BTreeSet, HashMap};

use crate::covkernels::DecomposableModel;
use crate::error::{Error, Result};
use crate::graph::PointCloudGraph;

/// Default cap on the number of subtree patterns per graph.
pub const DEFAULT_PATTERN_CAP: usize = 100_000;

/// Combinatorial parameters of the tree-walk kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkParams {
    /// Maximal number of children per node.
    pub alpha: usize,
    /// Distinctness order: a node and its descendants up to generation β are distinct.
    pub beta: usize,
    /// Maximal number of generations of a tree-walk.
    pub gamma: usize,
    /// Penalization per node.
    pub lambda: f64,
    /// Penalization per leaf.
    pub nu: f64,
}

impl WalkParams {
    pub fn new(alpha: usize, beta: usize, gamma: usize, lambda: f64, nu: f64) -> Result<Self> {
        let p = WalkParams {
            alpha,
            beta,
            gamma,
            lambda,
            nu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 || self.beta == 0 || self.gamma == 0 {
            return Err(Error::InvalidArgument(format!(
                "alpha, beta, gamma must be >= 1 (got {}, {}, {})",
                self.alpha, self.beta, self.gamma
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) || !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda and nu must be > 0 (got {}, {})",
                self.lambda, self.nu
            )));
        }
        Ok(())
    }
}

/// Anything with a rooted unordered tree shape.
pub trait TreeShape {
    /// Canonical code of the unordered rooted shape.
    fn shape_code(&self) -> String;
}

/// Canonical code of the subtree at `u`: `(` + sorted child codes + `)`.
fn canonical_code(children: &[Vec<usize>], u: usize) -> String {
    let mut codes: Vec<String> = children[u].iter().map(|&c| canonical_code(children, c)).collect();
    codes.sort_unstable();
    let mut out = String::with_capacity(2 + codes.iter().map(String::len).sum::<usize>());
    out.push('(');
    for c in codes {
        out.push_str(&c);
    }
    out.push(')');
    out
}

/// A rooted unordered tree over nodes `0..n`, stored in breadth-first order
/// (node 0 is the root, parents precede children).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeStructure {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    generation: Vec<usize>,
    code: String,
}

impl TreeStructure {
    /// Builds a tree from a parent map in breadth-first order.
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        if parent.is_empty() || parent[0].is_some() {
            return Err(Error::InvalidArgument("node 0 must be the only root".into()));
        }
        let n = parent.len();
        let mut children = vec![Vec::new(); n];
        let mut generation = vec![0; n];
        for u in 1..n {
            match parent[u] {
                Some(p) if p < u => {
                    children[p].push(u);
                    generation[u] = generation[p] + 1;
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "node {u} needs a parent with a smaller index"
                    )))
                }
            }
        }
        let code = canonical_code(&children, 0);
        Ok(TreeStructure {
            parent,
            children,
            generation,
            code,
        })
    }

    /// Decodes a canonical code such as `(()(()))`; children are laid out in
    /// code order and nodes numbered breadth-first.
    pub fn from_code(code: &str) -> Result<Self> {
        // parse into nested child lists
        fn parse(bytes: &[u8], pos: &mut usize, out: &mut Vec<Vec<usize>>) -> Result<usize> {
            if bytes.get(*pos) != Some(&b'(') {
                return Err(Error::InvalidArgument("malformed tree code".into()));
            }
            *pos += 1;
            let me = out.len();
            out.push(Vec::new());
            while bytes.get(*pos) == Some(&b'(') {
                let child = parse(bytes, pos, out)?;
                out[me].push(child);
            }
            if bytes.get(*pos) != Some(&b')') {
                return Err(Error::InvalidArgument("malformed tree code".into()));
            }
            *pos += 1;
            Ok(me)
        }
        let bytes = code.as_bytes();
        let mut pos = 0;
        let mut nested = Vec::new();
        parse(bytes, &mut pos, &mut nested)?;
        if pos != bytes.len() {
            return Err(Error::InvalidArgument("trailing characters in tree code".into()));
        }
        // sort children canonically, then renumber breadth-first
        let codes: Vec<String> = (0..nested.len()).map(|u| canonical_code(&nested, u)).collect();
        for list in nested.iter_mut() {
            list.sort_by(|a, b| codes[*a].cmp(&codes[*b]));
        }
        let mut order = vec![0usize];
        let mut parent = vec![None];
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            for &c in &nested[u] {
                parent.push(Some(head));
                order.push(c);
            }
            head += 1;
        }
        TreeStructure::from_parents(parent)
    }

    pub fn single() -> Self {
        TreeStructure::from_parents(vec![None]).expect("single node")
    }

    /// A chain of `n ≥ 1` nodes.
    pub fn chain(n: usize) -> Self {
        TreeStructure::from_parents((0..n).map(|i| i.checked_sub(1)).collect()).expect("chain")
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn parent(&self, u: usize) -> Option<usize> {
        self.parent[u]
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    pub fn generation(&self, u: usize) -> usize {
        self.generation[u]
    }

    /// Number of generations.
    pub fn depth(&self) -> usize {
        self.generation.iter().max().map_or(0, |g| g + 1)
    }

    pub fn arity(&self) -> usize {
        self.children.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of childless nodes (1 for a single node).
    pub fn leaves(&self) -> usize {
        self.children.iter().filter(|c| c.is_empty()).count()
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    /// Size of the automorphism group of the rooted unordered tree.
    pub fn automorphisms(&self) -> f64 {
        let codes: Vec<String> = (0..self.len()).map(|u| canonical_code(&self.children, u)).collect();
        let mut total = 1.0;
        for u in 0..self.len() {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for &c in &self.children[u] {
                *counts.entry(codes[c].as_str()).or_default() += 1;
            }
            for m in counts.values() {
                total *= (1..=*m).product::<usize>() as f64;
            }
        }
        total
    }

    /// `u` together with its descendants up to `beta` generations below it.
    pub fn family(&self, u: usize, beta: usize) -> Vec<usize> {
        let mut out = vec![u];
        let mut head = 0;
        while head < out.len() {
            let v = out[head];
            if self.generation[v] - self.generation[u] < beta {
                out.extend_from_slice(&self.children[v]);
            }
            head += 1;
        }
        out.sort_unstable();
        out
    }
}

impl TreeShape for TreeStructure {
    fn shape_code(&self) -> String {
        self.code.clone()
    }
}

/// All tree structures with at most `gamma` generations and at most `alpha`
/// children per node, one per isomorphism class, sorted by canonical code.
pub fn enumerate_tree_structures(alpha: usize, gamma: usize) -> Vec<TreeStructure> {
    let mut level: Vec<String> = vec!["()".to_string()];
    for _ in 1..gamma {
        let prev = level.clone();
        let mut next = BTreeSet::new();
        // multisets of size ≤ alpha from `prev`, as non-decreasing index tuples
        fn rec(
            prev: &[String],
            start: usize,
            left: usize,
            acc: &mut Vec<usize>,
            out: &mut BTreeSet<String>,
        ) {
            let mut codes: Vec<&str> = acc.iter().map(|&i| prev[i].as_str()).collect();
            codes.sort_unstable();
            out.insert(format!("({})", codes.concat()));
            if left == 0 {
                return;
            }
            for i in start..prev.len() {
                acc.push(i);
                rec(prev, i, left - 1, acc, out);
                acc.pop();
            }
        }
        rec(&prev, 0, alpha, &mut Vec::new(), &mut next);
        level = next.into_iter().collect();
    }
    level.sort_unstable();
    level
        .iter()
        .map(|c| TreeStructure::from_code(c).expect("generated code"))
        .collect()
}

/// `λ^{|T|} ν^{ℓ(T)}`.
pub fn penalization(tree: &TreeStructure, lambda: f64, nu: f64) -> f64 {
    lambda.powi(tree.len() as i32) * nu.powi(tree.leaves() as i32)
}

/// A labelling maps each node of a tree structure to a graph vertex.
pub type Labelling = Vec<usize>;

/// For each node, the earlier nodes that share a depth-β family with it.
fn family_conflicts(tree: &TreeStructure, beta: usize) -> Vec<Vec<usize>> {
    let mut conflicts = vec![BTreeSet::new(); tree.len()];
    for a in 0..tree.len() {
        let fam = tree.family(a, beta);
        for (i, &x) in fam.iter().enumerate() {
            for &y in &fam[..i] {
                conflicts[x.max(y)].insert(x.min(y));
            }
        }
    }
    conflicts.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// All consistent labellings of `tree` by vertices of `graph` that give
/// β-tree-walks: tree neighbours map to graph neighbours, and each node's
/// label differs from the labels of its descendants up to generation β
/// and those descendants are pairwise distinct.
pub fn enumerate_labellings(tree: &TreeStructure, graph: &PointCloudGraph, beta: usize) -> Vec<Labelling> {
    let conflicts = family_conflicts(tree, beta);
    let mut out = Vec::new();
    let mut labels = vec![usize::MAX; tree.len()];

    fn rec(
        u: usize,
        tree: &TreeStructure,
        graph: &PointCloudGraph,
        conflicts: &[Vec<usize>],
        labels: &mut Vec<usize>,
        out: &mut Vec<Labelling>,
    ) {
        if u == tree.len() {
            out.push(labels.clone());
            return;
        }
        let candidates: Vec<usize> = match tree.parent(u) {
            None => (0..graph.len()).collect(),
            Some(p) => graph.neighbors(labels[p]).to_vec(),
        };
        for v in candidates {
            if conflicts[u].iter().any(|&w| labels[w] == v) {
                continue;
            }
            labels[u] = v;
            rec(u + 1, tree, graph, conflicts, labels, out);
        }
        labels[u] = usize::MAX;
    }

    if !graph.is_empty() {
        rec(0, tree, graph, &conflicts, &mut labels, &mut out);
    }
    out
}

/// The `beta` nearest ancestors of `u`, nearest first.
fn ancestors(tree: &TreeStructure, u: usize, beta: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(beta);
    let mut x = u;
    while out.len() < beta {
        match tree.parent(x) {
            Some(p) => {
                out.push(p);
                x = p;
            }
            None => break,
        }
    }
    out
}

/// Labellings for the reduced (ancestral) variant: tree neighbours map to
/// graph neighbours, each node differs from its `beta` nearest ancestors,
/// and siblings are pairwise distinct. Cousins may share labels.
pub fn enumerate_ancestral_labellings(
    tree: &TreeStructure,
    graph: &PointCloudGraph,
    beta: usize,
) -> Vec<Labelling> {
    let conflicts: Vec<Vec<usize>> = (0..tree.len())
        .map(|u| {
            let mut c = ancestors(tree, u, beta);
            if let Some(p) = tree.parent(u) {
                c.extend(tree.children(p).iter().copied().filter(|&s| s < u));
            }
            c
        })
        .collect();
    let mut out = Vec::new();
    let mut labels = vec![usize::MAX; tree.len()];
    fn rec(
        u: usize,
        tree: &TreeStructure,
        graph: &PointCloudGraph,
        conflicts: &[Vec<usize>],
        labels: &mut Vec<usize>,
        out: &mut Vec<Labelling>,
    ) {
        if u == tree.len() {
            out.push(labels.clone());
            return;
        }
        let candidates: Vec<usize> = match tree.parent(u) {
            None => (0..graph.len()).collect(),
            Some(p) => graph.neighbors(labels[p]).to_vec(),
        };
        for v in candidates {
            if conflicts[u].iter().any(|&w| labels[w] == v) {
                continue;
            }
            labels[u] = v;
            rec(u + 1, tree, graph, conflicts, labels, out);
        }
    }
    if !graph.is_empty() {
        rec(0, tree, graph, &conflicts, &mut labels, &mut out);
    }
    out
}

/// Model of the reduced variant: one clique per node holding the node and
/// its `beta` nearest ancestors, attached to the parent's clique. Each node
/// is thus conditioned on its ancestors only, and the root clique is the
/// root alone.
pub fn build_ancestral_model_for_tree(tree: &TreeStructure, beta: usize) -> DecomposableModel {
    let cliques = (0..tree.len())
        .map(|u| {
            let mut c = ancestors(tree, u, beta);
            c.push(u);
            c
        })
        .collect();
    let parent = (0..tree.len()).map(|u| tree.parent(u)).collect();
    DecomposableModel::new(tree.len(), cliques, parent).expect("ancestral model is decomposable")
}

/// The decomposable model `Q_β(T)`: each node together with its descendants
/// up to generation β forms a clique; the maximal ones are kept, and the
/// junction tree follows the tree top-down from the root's family.
pub fn build_model_for_tree(tree: &TreeStructure, beta: usize) -> DecomposableModel {
    let n = tree.len();
    // deepest descendant generation below each node
    let mut reach = vec![0usize; n];
    for u in (0..n).rev() {
        if let Some(p) = tree.parent(u) {
            reach[p] = reach[p].max(reach[u] + 1);
        }
    }
    let mut clique_of = vec![None; n];
    let mut cliques = Vec::new();
    let mut parent = Vec::new();
    for u in 0..n {
        let maximal = tree.parent(u).is_none() || reach[u] >= beta;
        if maximal {
            clique_of[u] = Some(cliques.len());
            cliques.push(tree.family(u, beta));
            parent.push(tree.parent(u).map(|p| clique_of[p].expect("parent family is maximal")));
        }
    }
    DecomposableModel::new(n, cliques, parent).expect("Q_beta(T) is decomposable")
}

/// A rooted subtree of a graph with distinct vertices, stored breadth-first.
///
/// Child order is significant for equality; [`build_patterns`] returns the
/// canonical order (children by increasing vertex index), while
/// [`build_patterns_ordered`] returns every order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubtreePattern {
    verts: Vec<usize>,
    parent: Vec<Option<usize>>,
    generation: Vec<usize>,
}

impl SubtreePattern {
    pub fn single(v: usize) -> Self {
        SubtreePattern {
            verts: vec![v],
            parent: vec![None],
            generation: vec![0],
        }
    }

    pub fn root(&self) -> usize {
        self.verts[0]
    }

    pub fn vertices(&self) -> &[usize] {
        &self.verts
    }

    pub fn len(&self) -> usize {
        self.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn generation(&self, i: usize) -> usize {
        self.generation[i]
    }

    /// Number of generations.
    pub fn depth(&self) -> usize {
        self.generation.last().map_or(0, |g| g + 1)
    }

    /// Breadth-first indices of the children of node `i`, in order.
    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (i + 1..self.len()).filter(move |&j| self.parent[j] == Some(i))
    }

    pub fn contains(&self, v: usize) -> bool {
        self.verts.contains(&v)
    }

    /// Child counts in breadth-first order; equal iff ordered shapes agree.
    pub fn ordered_shape(&self) -> Vec<u8> {
        let mut counts = vec![0u8; self.len()];
        for p in self.parent.iter().flatten() {
            counts[*p] += 1;
        }
        counts
    }

    /// Number of childless nodes.
    pub fn leaves(&self) -> usize {
        self.ordered_shape().iter().filter(|&&c| c == 0).count()
    }

    /// Breadth-first indices of nodes at generation `g`.
    pub fn generation_nodes(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.generation[i] == g)
    }

    /// The subtree rooted at node `i`, keeping child order.
    pub fn subtree(&self, i: usize) -> SubtreePattern {
        self.subtree_truncated(i, usize::MAX)
    }

    /// The first `gens` generations.
    pub fn truncate(&self, gens: usize) -> SubtreePattern {
        self.subtree_truncated(0, gens)
    }

    fn subtree_truncated(&self, i: usize, gens: usize) -> SubtreePattern {
        let mut order = vec![i];
        let mut out = SubtreePattern::single(self.verts[i]);
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            if out.generation[head] + 1 < gens {
                for c in self.children(u) {
                    order.push(c);
                    out.verts.push(self.verts[c]);
                    out.parent.push(Some(head));
                    out.generation.push(out.generation[head] + 1);
                }
            }
            head += 1;
        }
        out
    }

    /// Appends a generation: `new[k]` lists the vertices of the children of
    /// the k-th node of the current last generation.
    pub(crate) fn extend(&self, new: &[Vec<usize>]) -> SubtreePattern {
        let last = self.depth() - 1;
        let mut out = self.clone();
        for (x, kids) in self.generation_nodes(last).zip(new) {
            for &v in kids {
                out.verts.push(v);
                out.parent.push(Some(x));
                out.generation.push(last + 1);
            }
        }
        out
    }

    fn children_lists(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (j, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(j);
            }
        }
        ch
    }

    /// The same subtree with every child list sorted by vertex index.
    pub fn canonical(&self) -> SubtreePattern {
        let ch = self.children_lists();
        let mut out = SubtreePattern::single(self.verts[0]);
        let mut order = vec![0usize];
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            let mut kids = ch[u].clone();
            kids.sort_by_key(|&c| self.verts[c]);
            for c in kids {
                order.push(c);
                out.verts.push(self.verts[c]);
                out.parent.push(Some(head));
                out.generation.push(out.generation[head] + 1);
            }
            head += 1;
        }
        out
    }

    /// True if every child list is sorted by vertex index.
    pub fn is_canonical(&self) -> bool {
        (1..self.len()).all(|j| {
            j + 1 >= self.len() || self.parent[j] != self.parent[j + 1] || self.verts[j] < self.verts[j + 1]
        })
    }

    /// Tree structure of the pattern (node numbering follows the pattern).
    pub fn structure(&self) -> TreeStructure {
        TreeStructure::from_parents(self.parent.clone()).expect("pattern is breadth-first")
    }
}

impl TreeShape for SubtreePattern {
    fn shape_code(&self) -> String {
        canonical_code(&self.children_lists(), 0)
    }
}

/// True iff both objects have the same unordered rooted shape.
pub fn tree_equivalent<A: TreeShape + ?Sized, B: TreeShape + ?Sized>(a: &A, b: &B) -> bool {
    a.shape_code() == b.shape_code()
}

/// Child tuples of size `0..=alpha` drawn from `candidates` without reuse.
/// Unordered mode yields increasing tuples only.
fn child_tuples(candidates: &[usize], alpha: usize, ordered: bool) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    fn rec(c: &[usize], alpha: usize, ordered: bool, start: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if acc.len() == alpha {
            return;
        }
        let from = if ordered { 0 } else { start };
        for i in from..c.len() {
            if acc.contains(&c[i]) {
                continue;
            }
            acc.push(c[i]);
            out.push(acc.clone());
            rec(c, alpha, ordered, i + 1, acc, out);
            acc.pop();
        }
    }
    rec(candidates, alpha, ordered, 0, &mut Vec::new(), &mut out);
    out
}

/// All ways to give each of `frontier` (vertices) a child tuple, with every
/// new vertex fresh (not in `used`, not chosen twice).
pub(crate) fn generation_choices(
    graph: &PointCloudGraph,
    frontier: &[usize],
    used: &[usize],
    alpha: usize,
    ordered: bool,
) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut acc: Vec<Vec<usize>> = Vec::with_capacity(frontier.len());
    let mut taken: Vec<usize> = used.to_vec();

    fn rec(
        k: usize,
        graph: &PointCloudGraph,
        frontier: &[usize],
        alpha: usize,
        ordered: bool,
        acc: &mut Vec<Vec<usize>>,
        taken: &mut Vec<usize>,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if k == frontier.len() {
            out.push(acc.clone());
            return;
        }
        let cand: Vec<usize> = graph
            .neighbors(frontier[k])
            .iter()
            .copied()
            .filter(|v| !taken.contains(v))
            .collect();
        for tuple in child_tuples(&cand, alpha, ordered) {
            let mark = taken.len();
            taken.extend_from_slice(&tuple);
            acc.push(tuple);
            rec(k + 1, graph, frontier, alpha, ordered, acc, taken, out);
            acc.pop();
            taken.truncate(mark);
        }
    }

    rec(0, graph, frontier, alpha, ordered, &mut acc, &mut taken, &mut out);
    out
}

fn enumerate_patterns(
    graph: &PointCloudGraph,
    alpha: usize,
    beta: usize,
    ordered: bool,
    cap: usize,
) -> Result<Vec<SubtreePattern>> {
    let mut out = Vec::new();
    for r in 0..graph.len() {
        let mut stack = vec![SubtreePattern::single(r)];
        while let Some(p) = stack.pop() {
            let depth = p.depth();
            if depth < beta {
                let frontier: Vec<usize> = p.generation_nodes(depth - 1).map(|i| p.verts[i]).collect();
                let mut grown = Vec::new();
                for choice in generation_choices(graph, &frontier, &p.verts, alpha, ordered) {
                    if choice.iter().any(|c| !c.is_empty()) {
                        grown.push(p.extend(&choice));
                    }
                }
                // keep depth-first output in enumeration order
                stack.extend(grown.into_iter().rev());
            }
            out.push(p);
            if out.len() > cap {
                return Err(Error::PatternExplosion { count: out.len(), cap });
            }
        }
    }
    Ok(out)
}

/// Rooted subtrees of `graph` with distinct vertices, at most `beta`
/// generations and at most `alpha` children per node, including shallow
/// and incomplete ones; one canonical entry per unordered subtree.
pub fn build_patterns(graph: &PointCloudGraph, alpha: usize, beta: usize, cap: usize) -> Result<Vec<SubtreePattern>> {
    enumerate_patterns(graph, alpha, beta, false, cap)
}

/// Like [`build_patterns`] but with one entry per ordering of children.
pub fn build_patterns_ordered(
    graph: &PointCloudGraph,
    alpha: usize,
    beta: usize,
    cap: usize,
) -> Result<Vec<SubtreePattern>> {
    enumerate_patterns(graph, alpha, beta, true, cap)
}

/// Directed graph over subtree patterns: `R0 → R1` when `R1` extends `R0`
/// one generation further.
#[derive(Clone, Debug)]
pub struct AugmentedGraph {
    patterns: Vec<SubtreePattern>,
    out: Vec<Vec<usize>>,
}

impl AugmentedGraph {
    pub fn patterns(&self) -> &[SubtreePattern] {
        &self.patterns
    }

    pub fn out_neighbors(&self, r: usize) -> &[usize] {
        &self.out[r]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(r, list)| list.iter().map(move |&s| (r, s)))
    }

    pub fn num_edges(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// Indices of patterns with the given ordered content.
    pub fn index_of(&self, p: &SubtreePattern) -> Option<usize> {
        self.patterns.iter().position(|q| q == p)
    }
}

/// Builds the extension graph. `R0 → R1` iff the root of `R1` is a graph
/// neighbour of the root of `R0`, the first β−1 generations of `R1` equal
/// the complete subtree of `R0` at that child (for β ≥ 2 the child must be
/// in `R0`), and the generation-(β−1) nodes of `R1` avoid every vertex of `R0`.
pub fn build_augmented_graph(
    patterns: Vec<SubtreePattern>,
    graph: &PointCloudGraph,
    beta: usize,
) -> AugmentedGraph {
    let n = patterns.len();
    let mut out = vec![Vec::new(); n];
    if beta == 1 {
        let by_vertex: HashMap<usize, usize> = patterns.iter().enumerate().map(|(i, p)| (p.root(), i)).collect();
        for (i, p) in patterns.iter().enumerate() {
            for v in graph.neighbors(p.root()) {
                if let Some(&j) = by_vertex.get(v) {
                    out[i].push(j);
                }
            }
        }
        return AugmentedGraph { patterns, out };
    }
    let mut by_head: HashMap<SubtreePattern, Vec<usize>> = HashMap::new();
    for (j, p) in patterns.iter().enumerate() {
        by_head.entry(p.truncate(beta - 1)).or_default().push(j);
    }
    for (i, r0) in patterns.iter().enumerate() {
        for c in r0.children(0) {
            let head = r0.subtree(c);
            let Some(cands) = by_head.get(&head) else { continue };
            for &j in cands {
                let r1 = &patterns[j];
                let fresh = r1
                    .generation_nodes(beta - 1)
                    .all(|k| !r0.contains(r1.vertices()[k]));
                if fresh {
                    out[i].push(j);
                }
            }
        }
    }
    AugmentedGraph { patterns, out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Vertex;
    use proptest::prelude::*;

    fn path3() -> PointCloudGraph {
        let v = (0..3).map(|i| Vertex::new(vec![i as f64, 0.0], vec![])).collect();
        PointCloudGraph::new(v, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn tree_structure_counts() {
        assert_eq!(enumerate_tree_structures(1, 1).len(), 1);
        let chains = enumerate_tree_structures(1, 3);
        assert_eq!(chains.len(), 3);
        assert!(chains.iter().all(|t| t.arity() <= 1));
        let mut sizes: Vec<_> = chains.iter().map(TreeStructure::len).collect();
        sizes.sort();
        assert_eq!(sizes, [1, 2, 3]);
        let binary = enumerate_tree_structures(2, 2);
        let mut codes: Vec<_> = binary.iter().map(|t| t.code().to_string()).collect();
        codes.sort();
        assert_eq!(codes, ["(()())", "(())", "()"]);
        // 1 + 3 + 6 rooted binary shapes with at most three generations
        assert_eq!(enumerate_tree_structures(2, 3).len(), 10);
        assert_eq!(enumerate_tree_structures(2, 4).len(), 66);
    }

    #[test]
    fn penalization_values() {
        let (l, n) = (0.7, 0.2);
        assert!((penalization(&TreeStructure::single(), l, n) - l * n).abs() < 1e-15);
        assert!((penalization(&TreeStructure::chain(3), l, n) - l.powi(3) * n).abs() < 1e-15);
        let cherry = TreeStructure::from_code("(()())").unwrap();
        assert!((penalization(&cherry, l, n) - l.powi(3) * n * n).abs() < 1e-15);
    }

    #[test]
    fn automorphism_counts() {
        assert_eq!(TreeStructure::single().automorphisms(), 1.0);
        assert_eq!(TreeStructure::from_code("(()())").unwrap().automorphisms(), 2.0);
        assert_eq!(TreeStructure::from_code("((()())(()()))").unwrap().automorphisms(), 8.0);
        assert_eq!(TreeStructure::from_code("(()(()))").unwrap().automorphisms(), 1.0);
    }

    #[test]
    fn labelling_examples() {
        let g = path3();
        assert_eq!(enumerate_labellings(&TreeStructure::single(), &g, 1).len(), 3);
        let two = enumerate_labellings(&TreeStructure::chain(2), &g, 1);
        assert_eq!(two, vec![vec![0, 1], vec![1, 0], vec![1, 2], vec![2, 1]]);
        let three = TreeStructure::chain(3);
        assert_eq!(enumerate_labellings(&three, &g, 2), vec![vec![0, 1, 2], vec![2, 1, 0]]);
        let mut one = enumerate_labellings(&three, &g, 1);
        one.sort();
        assert_eq!(
            one,
            vec![vec![0, 1, 0], vec![0, 1, 2], vec![1, 0, 1], vec![1, 2, 1], vec![2, 1, 0], vec![2, 1, 2]]
        );
        // siblings share the root's family, so they must differ
        let cherry = TreeStructure::from_code("(()())").unwrap();
        assert_eq!(enumerate_labellings(&cherry, &g, 1), vec![vec![1, 0, 2], vec![1, 2, 0]]);
        assert!(enumerate_labellings(&three, &PointCloudGraph::empty(), 1).is_empty());
    }

    #[test]
    fn model_for_tree_examples() {
        let q = build_model_for_tree(&TreeStructure::single(), 3);
        assert_eq!(q.cliques(), &[vec![0]]);
        let q = build_model_for_tree(&TreeStructure::chain(3), 1);
        assert_eq!(q.cliques(), &[vec![0, 1], vec![1, 2]]);
        assert_eq!(q.separator(1), &[1]);
        let q = build_model_for_tree(&TreeStructure::chain(3), 2);
        assert_eq!(q.cliques(), &[vec![0, 1, 2]]);
    }

    #[test]
    fn pattern_examples() {
        let g = path3();
        assert_eq!(build_patterns(&g, 2, 1, DEFAULT_PATTERN_CAP).unwrap().len(), 3);
        let p = build_patterns(&g, 1, 2, DEFAULT_PATTERN_CAP).unwrap();
        assert_eq!(p.len(), 7);
        // the centre vertex with both neighbours needs arity 2
        let p2 = build_patterns(&g, 2, 2, DEFAULT_PATTERN_CAP).unwrap();
        assert_eq!(p2.len(), 8);
        assert_eq!(build_patterns_ordered(&g, 2, 2, DEFAULT_PATTERN_CAP).unwrap().len(), 9);
        assert!(matches!(
            build_patterns(&g, 2, 3, 5),
            Err(Error::PatternExplosion { cap: 5, .. })
        ));
    }

    #[test]
    fn augmented_graph_beta_one_is_directed_graph() {
        let g = path3();
        let a = build_augmented_graph(build_patterns(&g, 1, 1, DEFAULT_PATTERN_CAP).unwrap(), &g, 1);
        assert_eq!(a.num_edges(), 4);
        for (r, s) in a.edges() {
            let (u, v) = (a.patterns()[r].root(), a.patterns()[s].root());
            assert!(g.has_edge(u, v) && u != v);
        }
    }

    #[test]
    fn augmented_graph_beta_two_on_path() {
        let g = path3();
        let a = build_augmented_graph(build_patterns(&g, 1, 2, DEFAULT_PATTERN_CAP).unwrap(), &g, 2);
        let find = |verts: &[usize]| {
            a.patterns()
                .iter()
                .position(|p| p.vertices() == verts)
                .unwrap()
        };
        // 0→1 extends to 1→2 (2 is fresh) and to the bare 1; never back to 0
        let targets: BTreeSet<_> = a.out_neighbors(find(&[0, 1])).iter().copied().collect();
        assert_eq!(targets, BTreeSet::from([find(&[1]), find(&[1, 2])]));
        for (r, s) in a.edges() {
            assert_ne!(r, s);
        }
    }

    #[test]
    fn equivalence_examples() {
        let g = path3();
        let pats = build_patterns(&g, 2, 2, DEFAULT_PATTERN_CAP).unwrap();
        let edge = pats.iter().find(|p| p.len() == 2).unwrap();
        let single = pats.iter().find(|p| p.len() == 1).unwrap();
        assert!(tree_equivalent(edge, edge));
        assert!(!tree_equivalent(edge, single));
        let cherry = TreeStructure::from_code("(()())").unwrap();
        assert!(!tree_equivalent(&cherry, &TreeStructure::chain(3)));
        let centre = pats.iter().find(|p| p.len() == 3).unwrap();
        assert!(tree_equivalent(centre, &cherry));
    }

    #[test]
    fn ancestral_labellings_and_model() {
        let g = path3();
        let cherry = TreeStructure::from_code("(()())").unwrap();
        // siblings stay distinct, so only the centre can be the root
        assert_eq!(enumerate_ancestral_labellings(&cherry, &g, 1).len(), 2);
        let chain = TreeStructure::chain(3);
        assert_eq!(
            enumerate_ancestral_labellings(&chain, &g, 2),
            enumerate_labellings(&chain, &g, 2)
        );
        let q = build_ancestral_model_for_tree(&chain, 1);
        assert_eq!(q.cliques(), &[vec![0], vec![0, 1], vec![1, 2]]);
        assert_eq!(q.separator(2), &[1]);
        let q = build_ancestral_model_for_tree(&cherry, 2);
        assert_eq!(q.residual(2), vec![2]);
        assert_eq!(q.separator(2), &[0]);
    }

    #[test]
    fn canonical_patterns() {
        let g = path3();
        let ordered = build_patterns_ordered(&g, 2, 2, DEFAULT_PATTERN_CAP).unwrap();
        let canon: BTreeSet<Vec<usize>> = build_patterns(&g, 2, 2, DEFAULT_PATTERN_CAP)
            .unwrap()
            .iter()
            .map(|p| {
                assert!(p.is_canonical());
                p.vertices().to_vec()
            })
            .collect();
        let from_ordered: BTreeSet<Vec<usize>> =
            ordered.iter().map(|p| p.canonical().vertices().to_vec()).collect();
        assert_eq!(canon, from_ordered);
        assert_eq!(ordered.iter().filter(|p| !p.is_canonical()).count(), 1);
    }

    proptest! {
        #[test]
        fn codes_round_trip(alpha in 1usize..4, gamma in 1usize..4) {
            for t in enumerate_tree_structures(alpha, gamma) {
                let back = TreeStructure::from_code(t.code()).unwrap();
                prop_assert!(tree_equivalent(&back, &t));
                prop_assert!(t.depth() <= gamma && t.arity() <= alpha);
                prop_assert!(penalization(&t, 0.5, 0.1) > 0.0);
                let q = build_model_for_tree(&t, 1 + gamma % 3);
                prop_assert_eq!(q.num_vertices(), t.len());
            }
        }

        #[test]
        fn walk_labellings_are_beta_walks(seed in any::<u64>(), beta in 1usize..4) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = crate::random::random_graph(6, 0.5, 10.0, &mut rng);
            let chain = TreeStructure::chain(4);
            for walk in enumerate_labellings(&chain, &g, beta) {
                for w in walk.windows(2) {
                    prop_assert!(g.has_edge(w[0], w[1]));
                }
                for w in walk.windows((beta + 1).min(4)) {
                    let set: BTreeSet<_> = w.iter().collect();
                    prop_assert_eq!(set.len(), w.len());
                }
            }
        }

        #[test]
        fn beta_one_augmented_degrees_match_graph(seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = crate::random::random_graph(7, 0.4, 10.0, &mut rng);
            let a = build_augmented_graph(build_patterns(&g, 2, 1, DEFAULT_PATTERN_CAP).unwrap(), &g, 1);
            let mut indeg = vec![0; a.patterns().len()];
            for (_, s) in a.edges() {
                indeg[s] += 1;
            }
            for (i, p) in a.patterns().iter().enumerate() {
                prop_assert_eq!(a.out_neighbors(i).len(), g.degree(p.root()));
                prop_assert_eq!(indeg[i], g.degree(p.root()));
            }
        }
    }

    #[test]
    fn two_walks_on_trees_are_paths() {
        // a tree-shaped graph: star plus a tail
        let v = (0..5).map(|i| Vertex::new(vec![i as f64, 0.0], vec![])).collect();
        let g = PointCloudGraph::new(v, [(0, 1), (0, 2), (0, 3), (3, 4)]).unwrap();
        for len in 1..5 {
            for walk in enumerate_labellings(&TreeStructure::chain(len), &g, 2) {
                let set: BTreeSet<_> = walk.iter().collect();
                assert_eq!(set.len(), walk.len(), "{walk:?}");
            }
        }
    }
}
