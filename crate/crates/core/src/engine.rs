//! Kernel evaluation: the brute-force triple sum over tree structures and
//! labellings, the dynamic program over subtree patterns, and Gram matrices.
//!
//! Both evaluators compute
//!
//! ```text
//! k(G, H) = Σ_T f(T)/|Aut(T)| Σ_I Σ_J k_B^{Q_β(T)}(K_I, L_J) Π_u k_A(a(I_u), b(J_u))
//! ```
//!
//! where `T` ranges over one representative per isomorphism class of trees
//! with at most γ generations and arity at most α. Dividing by the number of
//! automorphisms counts every pair of unordered tree-walks once. For α = 1
//! all automorphism groups are trivial.
//!
//! The dynamic program enumerates tree-walks of `G` with children sorted by
//! vertex index and tree-walks of `H` in every child order, matched node by
//! node. Each non-root node `u` contributes the conditional kernel of its
//! generation-β descendants given the pattern of `u` and its descendants up
//! to generation β−1; the root contributes the plain Bhattacharyya kernel of
//! its whole family.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::covkernels::{
    attribute_kernel, conditional_raw, kernel_b_model_blocks, log_det_sym, position_kernel_matrix,
    principal, KernelScaleParams,
};
use crate::error::{Error, Result};
use crate::graph::{fmt_f64, PointCloudGraph};
use crate::treewalk::{
    build_ancestral_model_for_tree, build_model_for_tree, build_patterns, build_patterns_ordered,
    enumerate_ancestral_labellings, enumerate_labellings, enumerate_tree_structures, generation_choices,
    penalization, SubtreePattern, TreeShape, WalkParams, DEFAULT_PATTERN_CAP,
};

/// Smallest denominator determinant accepted by the conditional kernel.
const MIN_DENOMINATOR_DET: f64 = 1e-300;

/// Full configuration of the tree-walk kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    pub walk: WalkParams,
    pub scales: KernelScaleParams,
    /// Cosine-normalize Gram entries.
    pub normalize: bool,
    /// Use chains of ancestors as states instead of full subtree patterns:
    /// every node is conditioned on its β nearest ancestors only, and cousins
    /// may share vertices. A different (cheaper) kernel.
    pub reduced_patterns: bool,
    /// Maximal number of subtree patterns per graph.
    pub pattern_cap: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            walk: WalkParams {
                alpha: 1,
                beta: 2,
                gamma: 4,
                lambda: 1.0,
                nu: 0.1,
            },
            scales: KernelScaleParams::default(),
            normalize: false,
            reduced_patterns: false,
            pattern_cap: DEFAULT_PATTERN_CAP,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        self.scales.validate()
    }
}

/// Limits on the brute-force evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BruteForceGuard {
    pub max_vertices: usize,
    pub max_gamma: usize,
}

impl Default for BruteForceGuard {
    fn default() -> Self {
        BruteForceGuard {
            max_vertices: 12,
            max_gamma: 4,
        }
    }
}

fn attribute_table(g: &PointCloudGraph, h: &PointCloudGraph, upsilon: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(g.len() * h.len());
    for v in g.vertices() {
        for w in h.vertices() {
            out.push(attribute_kernel(&v.attribute, &w.attribute, upsilon)?);
        }
    }
    Ok(out)
}

/// Exact evaluation by explicit enumeration of tree structures and pairs of
/// labellings, with the default guard.
pub fn brute_force_kernel(g: &PointCloudGraph, h: &PointCloudGraph, cfg: &KernelConfig) -> Result<f64> {
    brute_force_kernel_guarded(g, h, cfg, &BruteForceGuard::default())
}

pub fn brute_force_kernel_guarded(
    g: &PointCloudGraph,
    h: &PointCloudGraph,
    cfg: &KernelConfig,
    guard: &BruteForceGuard,
) -> Result<f64> {
    cfg.validate()?;
    if g.len() > guard.max_vertices || h.len() > guard.max_vertices {
        return Err(Error::GuardExceeded(format!(
            "graphs with {} and {} vertices (limit {})",
            g.len(),
            h.len(),
            guard.max_vertices
        )));
    }
    let w = &cfg.walk;
    if w.gamma > guard.max_gamma {
        return Err(Error::GuardExceeded(format!("gamma {} (limit {})", w.gamma, guard.max_gamma)));
    }
    if g.is_empty() || h.is_empty() {
        return Ok(0.0);
    }
    let kg = position_kernel_matrix(g, &cfg.scales)?;
    let kh = position_kernel_matrix(h, &cfg.scales)?;
    let ka = attribute_table(g, h, cfg.scales.upsilon)?;
    let nh = h.len();

    let mut total = 0.0;
    for tree in enumerate_tree_structures(w.alpha, w.gamma) {
        let (model, lg, lh) = if cfg.reduced_patterns {
            (
                build_ancestral_model_for_tree(&tree, w.beta),
                enumerate_ancestral_labellings(&tree, g, w.beta),
                enumerate_ancestral_labellings(&tree, h, w.beta),
            )
        } else {
            (
                build_model_for_tree(&tree, w.beta),
                enumerate_labellings(&tree, g, w.beta),
                enumerate_labellings(&tree, h, w.beta),
            )
        };
        let mats_h: Vec<DMatrix<f64>> = lh.iter().map(|j| principal(kh.matrix(), j)).collect();
        let mut sum = 0.0;
        for i in &lg {
            let ki = principal(kg.matrix(), i);
            for (j, lj) in lh.iter().zip(&mats_h) {
                let attr: f64 = i.iter().zip(j).map(|(&a, &b)| ka[a * nh + b]).product();
                sum += kernel_b_model_blocks(&ki, lj, &model)? * attr;
            }
        }
        total += penalization(&tree, w.lambda, w.nu) / tree.automorphisms() * sum;
    }
    Ok(total)
}

/// In-place Cholesky of a row-major `n×n` block; returns the log-determinant.
fn chol_log_det(a: &mut [f64], n: usize) -> Option<f64> {
    let mut ld = 0.0;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        ld += d.ln();
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Some(2.0 * ld)
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Conditional covariance of a block of new vertices given a pattern.
#[derive(Clone, Debug)]
struct CondBlock {
    /// `|E|×|E|` conditional covariance, row-major.
    cov: Vec<f64>,
    /// `|E|×|R|` regression coefficients, row-major.
    regress: Vec<f64>,
    log_det: f64,
}

impl CondBlock {
    fn new(k: &DMatrix<f64>, new: &[usize], given: &[usize]) -> Result<Self> {
        if new.is_empty() {
            return Ok(CondBlock {
                cov: Vec::new(),
                regress: Vec::new(),
                log_det: 0.0,
            });
        }
        let (cov, regress) = conditional_raw(k, new, given)?;
        let log_det = log_det_sym(cov.clone(), "conditional covariance")?;
        Ok(CondBlock {
            cov: to_row_major(&cov),
            regress: to_row_major(&regress),
            log_det,
        })
    }
}

/// Log of the conditional kernel between two matched conditional blocks.
fn log_cond_pair(a: &CondBlock, b: &CondBlock, n: usize, r: usize, scratch: &mut Vec<f64>) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    scratch.clear();
    scratch.resize(n * n, 0.0);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..r {
                s += (a.regress[i * r + k] - b.regress[i * r + k]) * (a.regress[j * r + k] - b.regress[j * r + k]);
            }
            let v = 0.5 * (a.cov[i * n + j] + b.cov[i * n + j]) + 0.25 * s;
            scratch[i * n + j] = v;
            scratch[j * n + i] = v;
        }
    }
    let den = chol_log_det(scratch, n).ok_or(Error::NotPositiveDefinite("denominator"))?;
    Ok(0.5 * a.log_det + 0.5 * b.log_det - den.max(MIN_DENOMINATOR_DET.ln()))
}

/// Log of the Bhattacharyya kernel between two row-major blocks.
fn log_bhatt_pair(a: &[f64], la: f64, b: &[f64], lb: f64, n: usize, scratch: &mut Vec<f64>) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    scratch.clear();
    scratch.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
    let lm = chol_log_det(scratch, n).ok_or(Error::NotPositiveDefinite("mean matrix"))?;
    Ok(0.5 * la + 0.5 * lb - lm)
}

/// One way to extend a depth-β pattern by a generation.
#[derive(Clone, Debug)]
struct Extension {
    /// Child counts of the frontier nodes.
    sig: Vec<u8>,
    /// New vertices in breadth-first order.
    new: Vec<usize>,
    /// Patterns of the root's children that reach depth β.
    children: Vec<usize>,
    /// Frontier nodes left childless.
    leaves: usize,
    cond: CondBlock,
    /// Position block of pattern plus new vertices, row-major.
    joint: Vec<f64>,
    joint_log_det: f64,
}

/// Patterns of one graph, in one child-order convention, with extensions.
#[derive(Clone, Debug)]
struct PatternSide {
    patterns: Vec<SubtreePattern>,
    full: Vec<bool>,
    /// Leaves of the pattern strictly above generation β−1.
    upper_leaves: Vec<usize>,
    group: Vec<usize>,
    local: Vec<usize>,
    /// (ordered shape, members) sorted by shape.
    groups: Vec<(Vec<u8>, Vec<usize>)>,
    /// Extensions sorted by signature; empty for patterns shallower than β.
    exts: Vec<Vec<Extension>>,
    /// Root-level data for patterns shallower than β.
    base_joint: Vec<(Vec<f64>, f64)>,
}

fn group_by_key<K: Ord + Clone>(keys: &[K]) -> (Vec<(K, Vec<usize>)>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
    let mut groups: Vec<(K, Vec<usize>)> = Vec::new();
    let mut group = vec![0; keys.len()];
    let mut local = vec![0; keys.len()];
    for i in order {
        if groups.last().map_or(true, |(k, _)| *k != keys[i]) {
            groups.push((keys[i].clone(), Vec::new()));
        }
        let g = groups.len() - 1;
        group[i] = g;
        local[i] = groups[g].1.len();
        groups[g].1.push(i);
    }
    (groups, group, local)
}

fn joint_block(k: &DMatrix<f64>, verts: &[usize]) -> Result<(Vec<f64>, f64)> {
    let m = to_row_major(&principal(k, verts));
    let mut tmp = m.clone();
    let ld = chol_log_det(&mut tmp, verts.len()).ok_or(Error::NotPositiveDefinite("pattern block"))?;
    Ok((m, ld))
}

impl PatternSide {
    fn build(g: &PointCloudGraph, k: &DMatrix<f64>, alpha: usize, beta: usize, cap: usize, ordered: bool) -> Result<Self> {
        let patterns = if ordered {
            build_patterns_ordered(g, alpha, beta, cap)?
        } else {
            build_patterns(g, alpha, beta, cap)?
        };
        let index: HashMap<&SubtreePattern, usize> = patterns.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let shapes: Vec<Vec<u8>> = patterns.iter().map(SubtreePattern::ordered_shape).collect();
        let (groups, group, local) = group_by_key(&shapes);
        let n = patterns.len();
        let mut full = vec![false; n];
        let mut upper_leaves = vec![0; n];
        let mut exts = vec![Vec::new(); n];
        let mut base_joint = vec![(Vec::new(), 0.0); n];
        for (r, p) in patterns.iter().enumerate() {
            full[r] = p.depth() == beta;
            upper_leaves[r] = (0..p.len())
                .filter(|&i| shapes[r][i] == 0 && p.generation(i) + 1 < beta)
                .count();
            if !full[r] {
                base_joint[r] = joint_block(k, p.vertices())?;
                continue;
            }
            let frontier: Vec<usize> = p.generation_nodes(beta - 1).map(|i| p.vertices()[i]).collect();
            let mut list = Vec::new();
            for choice in generation_choices(g, &frontier, p.vertices(), alpha, ordered) {
                let grown = p.extend(&choice);
                let new: Vec<usize> = choice.iter().flatten().copied().collect();
                let mut children = Vec::new();
                for c in grown.children(0) {
                    let sub = grown.subtree(c);
                    if sub.depth() == beta {
                        let idx = index.get(&sub).ok_or_else(|| {
                            Error::InvalidArgument("child pattern missing from pattern set".into())
                        })?;
                        children.push(*idx);
                    }
                }
                let (joint, joint_log_det) = joint_block(k, grown.vertices())?;
                list.push(Extension {
                    sig: choice.iter().map(|c| c.len() as u8).collect(),
                    leaves: choice.iter().filter(|c| c.is_empty()).count(),
                    cond: CondBlock::new(k, &new, p.vertices())?,
                    new,
                    children,
                    joint,
                    joint_log_det,
                });
            }
            list.sort_by(|a, b| a.sig.cmp(&b.sig));
            exts[r] = list;
        }
        Ok(PatternSide {
            patterns,
            full,
            upper_leaves,
            group,
            local,
            groups,
            exts,
            base_joint,
        })
    }
}

/// Runs of equal keys in a sorted slice.
fn runs<T, K: PartialEq>(items: &[T], key: impl Fn(&T) -> K) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        if i == items.len() || key(&items[i]) != key(&items[start]) {
            if start < i {
                out.push((start, i));
            }
            start = i;
        }
    }
    out
}

/// One child extension in the reduced variant.
#[derive(Clone, Debug)]
struct ChainChild {
    vertex: usize,
    /// State of the child: the chain shifted by one.
    state: usize,
    kc: f64,
    regress: Vec<f64>,
}

/// Ancestor-chain states of one graph for the reduced variant.
#[derive(Clone, Debug)]
struct ChainSide {
    chains: Vec<SubtreePattern>,
    group: Vec<usize>,
    local: Vec<usize>,
    groups: Vec<(usize, Vec<usize>)>,
    /// Child tuples per state, sorted by length; entries index `kids`.
    tuples: Vec<Vec<Vec<usize>>>,
    kids: Vec<Vec<ChainChild>>,
    diag: Vec<f64>,
}

impl ChainSide {
    fn build(g: &PointCloudGraph, k: &DMatrix<f64>, alpha: usize, beta: usize, cap: usize, ordered: bool) -> Result<Self> {
        let chains = build_patterns(g, 1, beta, cap)?;
        let index: HashMap<&[usize], usize> = chains.iter().enumerate().map(|(i, p)| (p.vertices(), i)).collect();
        let lens: Vec<usize> = chains.iter().map(SubtreePattern::len).collect();
        let (groups, group, local) = group_by_key(&lens);
        let mut tuples = Vec::with_capacity(chains.len());
        let mut kids = Vec::with_capacity(chains.len());
        for p in &chains {
            let verts = p.vertices();
            let bottom = *verts.last().expect("nonempty chain");
            let cand: Vec<usize> = g.neighbors(bottom).iter().copied().filter(|v| !verts.contains(v)).collect();
            let mut my_kids = Vec::with_capacity(cand.len());
            for &c in &cand {
                let mut next: Vec<usize> = verts.to_vec();
                next.push(c);
                if next.len() > beta {
                    next.remove(0);
                }
                let state = *index
                    .get(next.as_slice())
                    .ok_or_else(|| Error::InvalidArgument("shifted chain missing from state set".into()))?;
                let block = CondBlock::new(k, &[c], verts)?;
                my_kids.push(ChainChild {
                    vertex: c,
                    state,
                    kc: block.cov[0],
                    regress: block.regress,
                });
            }
            let frontier = [bottom];
            let mut my_tuples: Vec<Vec<usize>> = generation_choices(g, &frontier, verts, alpha, ordered)
                .into_iter()
                .map(|choice| {
                    choice[0]
                        .iter()
                        .map(|v| cand.iter().position(|c| c == v).expect("candidate child"))
                        .collect()
                })
                .collect();
            my_tuples.sort_by_key(Vec::len);
            tuples.push(my_tuples);
            kids.push(my_kids);
        }
        let diag = (0..g.len()).map(|v| k[(v, v)]).collect();
        Ok(ChainSide {
            chains,
            group,
            local,
            groups,
            tuples,
            kids,
            diag,
        })
    }
}

#[derive(Clone, Debug)]
enum Sides {
    Patterns { canonical: PatternSide, ordered: Option<PatternSide> },
    Chains { canonical: ChainSide, ordered: Option<ChainSide> },
}

/// Per-graph data reused across kernel evaluations: the position kernel
/// matrix and the pattern tables in both child-order conventions.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    key: String,
    len: usize,
    attr_dim: usize,
    attributes: Vec<Vec<f64>>,
    sides: Option<Sides>,
    alpha: usize,
    beta: usize,
    reduced: bool,
}

impl PreparedGraph {
    pub fn new(g: &PointCloudGraph, cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        let w = &cfg.walk;
        let sides = if g.is_empty() {
            None
        } else {
            let k = position_kernel_matrix(g, &cfg.scales)?;
            let k = k.matrix();
            // with α = 1 there is a single child order
            let two = w.alpha > 1;
            Some(if cfg.reduced_patterns {
                Sides::Chains {
                    canonical: ChainSide::build(g, k, w.alpha, w.beta, cfg.pattern_cap, false)?,
                    ordered: if two {
                        Some(ChainSide::build(g, k, w.alpha, w.beta, cfg.pattern_cap, true)?)
                    } else {
                        None
                    },
                }
            } else {
                Sides::Patterns {
                    canonical: PatternSide::build(g, k, w.alpha, w.beta, cfg.pattern_cap, false)?,
                    ordered: if two {
                        Some(PatternSide::build(g, k, w.alpha, w.beta, cfg.pattern_cap, true)?)
                    } else {
                        None
                    },
                }
            })
        };
        Ok(PreparedGraph {
            key: g.to_pcg_string(),
            len: g.len(),
            attr_dim: g.attribute_dim(),
            attributes: g.vertices().iter().map(|v| v.attribute.clone()).collect(),
            sides,
            alpha: w.alpha,
            beta: w.beta,
            reduced: cfg.reduced_patterns,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of canonical subtree patterns (or ancestor chains).
    pub fn num_patterns(&self) -> usize {
        match &self.sides {
            None => 0,
            Some(Sides::Patterns { canonical, .. }) => canonical.patterns.len(),
            Some(Sides::Chains { canonical, .. }) => canonical.chains.len(),
        }
    }

    fn compatible(&self, other: &PreparedGraph) -> Result<()> {
        if (self.alpha, self.beta, self.reduced) != (other.alpha, other.beta, other.reduced) {
            return Err(Error::InvalidArgument("graphs prepared with different configurations".into()));
        }
        if !self.is_empty() && !other.is_empty() && self.attr_dim != other.attr_dim {
            return Err(Error::DimensionMismatch {
                expected: self.attr_dim,
                actual: other.attr_dim,
            });
        }
        Ok(())
    }
}

/// A linear recursion over pattern pairs. `A_0 ≡ 1`; for `h ≥ 1`,
/// `A_h[p] = Σ_{t ∈ terms(p), min ≤ h} coef_t Π_c A_{h−1}[c]`, or 1 if `p`
/// has no terms. The kernel at depth `γ` sums the root terms allowed at `γ`
/// over `A_{γ−shift}`.
#[derive(Debug, Default)]
struct Program {
    term_ranges: Vec<(u32, u32)>,
    root_ranges: Vec<(u32, u32)>,
    terms: Vec<Term>,
    roots: Vec<Term>,
    children: Vec<u32>,
    shift: usize,
}

#[derive(Clone, Copy, Debug)]
struct Term {
    coef: f64,
    min: u32,
    start: u32,
    end: u32,
}

impl Program {
    fn push_term(&mut self, root: bool, coef: f64, min: usize, kids: impl IntoIterator<Item = u32>) {
        let start = self.children.len() as u32;
        self.children.extend(kids);
        let t = Term {
            coef,
            min: min as u32,
            start,
            end: self.children.len() as u32,
        };
        if root {
            self.roots.push(t);
        } else {
            self.terms.push(t);
        }
    }

    fn term_value(&self, t: &Term, table: &[f64]) -> f64 {
        self.children[t.start as usize..t.end as usize]
            .iter()
            .fold(t.coef, |acc, &c| acc * table[c as usize])
    }

    /// Kernel values for γ = 1..=gamma_max, restricted to root pairs in
    /// `only` when given.
    fn evaluate(&self, gamma_max: usize, only: Option<&[usize]>) -> Vec<f64> {
        let n = self.term_ranges.len();
        let mut table = vec![1.0; n];
        let mut next = vec![1.0; n];
        let mut level = 0;
        let mut out = Vec::with_capacity(gamma_max);
        let root_pairs: Vec<usize> = match only {
            Some(p) => p.to_vec(),
            None => (0..n).collect(),
        };
        for gamma in 1..=gamma_max {
            while level < gamma - self.shift {
                level += 1;
                for p in 0..n {
                    let (s, e) = self.term_ranges[p];
                    next[p] = if s == e {
                        1.0
                    } else {
                        self.terms[s as usize..e as usize]
                            .iter()
                            .filter(|t| t.min as usize <= level)
                            .map(|t| self.term_value(t, &table))
                            .sum()
                    };
                }
                std::mem::swap(&mut table, &mut next);
            }
            let mut total = 0.0;
            for &p in &root_pairs {
                let (s, e) = self.root_ranges[p];
                for t in &self.roots[s as usize..e as usize] {
                    if t.min as usize <= gamma {
                        total += self.term_value(t, &table);
                    }
                }
            }
            out.push(total);
        }
        out
    }
}

struct PairPlan {
    program: Program,
    /// Pair index of (canonical pattern, ordered pattern); G side is first.
    pair_of: Box<dyn Fn(usize, usize) -> Option<usize>>,
}

fn match_groups<K: Ord>(a: &[(K, Vec<usize>)], b: &[(K, Vec<usize>)]) -> (Vec<Option<(usize, usize)>>, usize) {
    let mut matched = vec![None; a.len()];
    let (mut i, mut j, mut offset) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                matched[i] = Some((j, offset));
                offset += a[i].1.len() * b[j].1.len();
                i += 1;
                j += 1;
            }
        }
    }
    (matched, offset)
}

fn plan_patterns(g: &PatternSide, h: &PatternSide, ka: &[f64], nh: usize, w: &WalkParams) -> Result<PairPlan> {
    let (matched, n_pairs) = match_groups(&g.groups, &h.groups);
    let hsizes: Vec<usize> = h.groups.iter().map(|(_, m)| m.len()).collect();
    let pair_of = {
        let matched = matched.clone();
        let ggroup = g.group.clone();
        let glocal = g.local.clone();
        let hgroup = h.group.clone();
        let hlocal = h.local.clone();
        move |r: usize, s: usize| -> Option<usize> {
            let (hg, off) = matched[ggroup[r]]?;
            (hgroup[s] == hg).then(|| off + glocal[r] * hsizes[hg] + hlocal[s])
        }
    };
    let mut prog = Program {
        term_ranges: vec![(0, 0); n_pairs],
        root_ranges: vec![(0, 0); n_pairs],
        shift: 1,
        ..Program::default()
    };
    let beta = w.beta;
    let mut scratch = Vec::new();
    let mut kid_pairs: Vec<u32> = Vec::new();
    for (gi, (_, gmembers)) in g.groups.iter().enumerate() {
        let Some((hi, _)) = matched[gi] else { continue };
        let hmembers = &h.groups[hi].1;
        for &r in gmembers {
            let rp = &g.patterns[r];
            let ext_runs_g = runs(&g.exts[r], |e| e.sig.clone());
            for &s in hmembers {
                let sp = &h.patterns[s];
                let p = pair_of(r, s).expect("matched pair");
                let attr: f64 = rp
                    .vertices()
                    .iter()
                    .zip(sp.vertices())
                    .map(|(&a, &b)| ka[a * nh + b])
                    .product();
                let base = w.lambda.powi(rp.len() as i32) * w.nu.powi(g.upper_leaves[r] as i32) * attr;
                let rstart = prog.roots.len() as u32;
                if !g.full[r] {
                    let (jg, lg) = &g.base_joint[r];
                    let (jh, lh) = &h.base_joint[s];
                    let lb = log_bhatt_pair(jg, *lg, jh, *lh, rp.len(), &mut scratch)?;
                    prog.push_term(true, base * lb.exp(), rp.depth(), []);
                    prog.root_ranges[p] = (rstart, prog.roots.len() as u32);
                    continue;
                }
                let tstart = prog.terms.len() as u32;
                let ext_runs_h = runs(&h.exts[s], |e| e.sig.clone());
                let (mut a, mut b) = (0, 0);
                while a < ext_runs_g.len() && b < ext_runs_h.len() {
                    let (ga, gb) = ext_runs_g[a];
                    let (ha, hb) = ext_runs_h[b];
                    match g.exts[r][ga].sig.cmp(&h.exts[s][ha].sig) {
                        std::cmp::Ordering::Less => a += 1,
                        std::cmp::Ordering::Greater => b += 1,
                        std::cmp::Ordering::Equal => {
                            for e in &g.exts[r][ga..gb] {
                                for f in &h.exts[s][ha..hb] {
                                    let m = e.new.len();
                                    let attr_new: f64 =
                                        e.new.iter().zip(&f.new).map(|(&x, &y)| ka[x * nh + y]).product();
                                    let pen = w.lambda.powi(m as i32) * w.nu.powi(e.leaves as i32) * attr_new;
                                    let lc = log_cond_pair(&e.cond, &f.cond, m, rp.len(), &mut scratch)?;
                                    let lj = log_bhatt_pair(
                                        &e.joint,
                                        e.joint_log_det,
                                        &f.joint,
                                        f.joint_log_det,
                                        rp.len() + m,
                                        &mut scratch,
                                    )?;
                                    kid_pairs.clear();
                                    for (&cr, &cs) in e.children.iter().zip(&f.children) {
                                        kid_pairs.push(pair_of(cr, cs).expect("child shapes agree") as u32);
                                    }
                                    let min_inner = if m == 0 { 0 } else { beta + 1 };
                                    let min_root = if m == 0 { beta } else { beta + 1 };
                                    prog.push_term(false, pen * lc.exp(), min_inner, kid_pairs.iter().copied());
                                    prog.push_term(true, base * pen * lj.exp(), min_root, kid_pairs.iter().copied());
                                }
                            }
                            a += 1;
                            b += 1;
                        }
                    }
                }
                prog.term_ranges[p] = (tstart, prog.terms.len() as u32);
                prog.root_ranges[p] = (rstart, prog.roots.len() as u32);
            }
        }
    }
    Ok(PairPlan {
        program: prog,
        pair_of: Box::new(pair_of),
    })
}

fn plan_chains(g: &ChainSide, h: &ChainSide, ka: &[f64], nh: usize, w: &WalkParams) -> Result<PairPlan> {
    let (matched, n_pairs) = match_groups(&g.groups, &h.groups);
    let hsizes: Vec<usize> = h.groups.iter().map(|(_, m)| m.len()).collect();
    let pair_of = {
        let matched = matched.clone();
        let ggroup = g.group.clone();
        let glocal = g.local.clone();
        let hgroup = h.group.clone();
        let hlocal = h.local.clone();
        move |r: usize, s: usize| -> Option<usize> {
            let (hg, off) = matched[ggroup[r]]?;
            (hgroup[s] == hg).then(|| off + glocal[r] * hsizes[hg] + hlocal[s])
        }
    };
    let mut prog = Program {
        term_ranges: vec![(0, 0); n_pairs],
        root_ranges: vec![(0, 0); n_pairs],
        shift: 0,
        ..Program::default()
    };
    let mut kid_pairs = Vec::new();
    for (gi, (_, gmembers)) in g.groups.iter().enumerate() {
        let Some((hi, _)) = matched[gi] else { continue };
        for &r in gmembers {
            for &s in &h.groups[hi].1 {
                let p = pair_of(r, s).expect("matched pair");
                let plen = g.chains[r].len();
                // per-child factors for every (kid of r, kid of s)
                let (gk, hk) = (&g.kids[r], &h.kids[s]);
                let mut factor = vec![0.0; gk.len() * hk.len()];
                for (i, x) in gk.iter().enumerate() {
                    for (j, y) in hk.iter().enumerate() {
                        let d: f64 = x.regress.iter().zip(&y.regress).map(|(a, b)| (a - b) * (a - b)).sum();
                        let den = (0.5 * (x.kc + y.kc) + 0.25 * d).ln().max(MIN_DENOMINATOR_DET.ln());
                        let lc = 0.5 * x.kc.ln() + 0.5 * y.kc.ln() - den;
                        debug_assert!(plen > 0);
                        factor[i * hk.len() + j] = w.lambda * ka[x.vertex * nh + y.vertex] * lc.exp();
                    }
                }
                let tstart = prog.terms.len() as u32;
                let truns = runs(&g.tuples[r], Vec::len);
                let uruns = runs(&h.tuples[s], Vec::len);
                for &(ga, gb) in &truns {
                    let len = g.tuples[r][ga].len();
                    let Some(&(ha, hb)) = uruns.iter().find(|(ha, _)| h.tuples[s][*ha].len() == len) else {
                        continue;
                    };
                    for tg in &g.tuples[r][ga..gb] {
                        for th in &h.tuples[s][ha..hb] {
                            let mut coef = if len == 0 { w.nu } else { 1.0 };
                            kid_pairs.clear();
                            for (&i, &j) in tg.iter().zip(th) {
                                coef *= factor[i * hk.len() + j];
                                kid_pairs.push(pair_of(gk[i].state, hk[j].state).expect("child lengths agree") as u32);
                            }
                            prog.push_term(false, coef, if len == 0 { 0 } else { 2 }, kid_pairs.iter().copied());
                        }
                    }
                }
                prog.term_ranges[p] = (tstart, prog.terms.len() as u32);
                if plen == 1 {
                    let (v, u) = (g.chains[r].root(), h.chains[s].root());
                    let (kv, lu) = (g.diag[v], h.diag[u]);
                    let kb = (0.5 * kv.ln() + 0.5 * lu.ln() - (0.5 * (kv + lu)).ln()).exp();
                    let rstart = prog.roots.len() as u32;
                    prog.push_term(true, w.lambda * ka[v * nh + u] * kb, 1, [p as u32]);
                    prog.root_ranges[p] = (rstart, prog.roots.len() as u32);
                }
            }
        }
    }
    Ok(PairPlan {
        program: prog,
        pair_of: Box::new(pair_of),
    })
}

/// Orders a pair canonically so that `k(G, H)` and `k(H, G)` run the same computation.
fn ordered_pair<'a>(a: &'a PreparedGraph, b: &'a PreparedGraph) -> (&'a PreparedGraph, &'a PreparedGraph) {
    if a.key <= b.key {
        (a, b)
    } else {
        (b, a)
    }
}

fn plan_pair(g: &PreparedGraph, h: &PreparedGraph, w: &WalkParams, upsilon: f64) -> Result<Option<PairPlan>> {
    let (Some(gs), Some(hs)) = (&g.sides, &h.sides) else {
        return Ok(None);
    };
    let mut ka = Vec::with_capacity(g.len * h.len);
    for a in &g.attributes {
        for b in &h.attributes {
            ka.push(attribute_kernel(a, b, upsilon)?);
        }
    }
    let plan = match (gs, hs) {
        (Sides::Patterns { canonical, .. }, Sides::Patterns { canonical: hc, ordered }) => {
            plan_patterns(canonical, ordered.as_ref().unwrap_or(hc), &ka, h.len, w)?
        }
        (Sides::Chains { canonical, .. }, Sides::Chains { canonical: hc, ordered }) => {
            plan_chains(canonical, ordered.as_ref().unwrap_or(hc), &ka, h.len, w)?
        }
        _ => return Err(Error::InvalidArgument("graphs prepared with different configurations".into())),
    };
    Ok(Some(plan))
}

/// Kernel values for every depth `1..=cfg.walk.gamma` on prepared graphs.
pub fn dp_kernel_prepared_gammas(g: &PreparedGraph, h: &PreparedGraph, cfg: &KernelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    g.compatible(h)?;
    let w = &cfg.walk;
    if (w.alpha, w.beta, cfg.reduced_patterns) != (g.alpha, g.beta, g.reduced) {
        return Err(Error::InvalidArgument("graphs prepared with a different configuration".into()));
    }
    let (g, h) = ordered_pair(g, h);
    match plan_pair(g, h, w, cfg.scales.upsilon)? {
        None => Ok(vec![0.0; w.gamma]),
        Some(plan) => Ok(plan.program.evaluate(w.gamma, None)),
    }
}

/// Kernel values for every depth `1..=cfg.walk.gamma`.
pub fn dp_kernel_gammas(g: &PointCloudGraph, h: &PointCloudGraph, cfg: &KernelConfig) -> Result<Vec<f64>> {
    let pg = PreparedGraph::new(g, cfg)?;
    let ph = PreparedGraph::new(h, cfg)?;
    dp_kernel_prepared_gammas(&pg, &ph, cfg)
}

/// The tree-walk kernel by dynamic programming (not normalized).
pub fn dp_kernel(g: &PointCloudGraph, h: &PointCloudGraph, cfg: &KernelConfig) -> Result<f64> {
    Ok(*dp_kernel_gammas(g, h, cfg)?.last().expect("gamma >= 1"))
}

/// Contribution of the tree-walks whose top β generations map to `r0` in
/// `G` and to `s0` in `H`, with at most `depth` generations. Zero unless
/// the two patterns have the same unordered shape. Summing over all pairs
/// of canonical patterns gives [`dp_kernel`].
pub fn dp_restricted_kernel(
    g: &PointCloudGraph,
    h: &PointCloudGraph,
    r0: &SubtreePattern,
    s0: &SubtreePattern,
    depth: usize,
    cfg: &KernelConfig,
) -> Result<f64> {
    if cfg.reduced_patterns {
        return Err(Error::InvalidArgument("restricted kernel needs full subtree patterns".into()));
    }
    if depth == 0 || r0.shape_code() != s0.shape_code() || g.is_empty() || h.is_empty() {
        return Ok(0.0);
    }
    let mut cfg = *cfg;
    cfg.walk.gamma = depth;
    let pg = PreparedGraph::new(g, &cfg)?;
    let ph = PreparedGraph::new(h, &cfg)?;
    let plan = plan_pair(&pg, &ph, &cfg.walk, cfg.scales.upsilon)?.expect("nonempty graphs");
    let (Some(Sides::Patterns { canonical, .. }), Some(Sides::Patterns { canonical: hc, ordered })) =
        (&pg.sides, &ph.sides)
    else {
        unreachable!("full patterns requested");
    };
    let hside = ordered.as_ref().unwrap_or(hc);
    let rc = r0.canonical();
    let Some(r) = canonical.patterns.iter().position(|p| *p == rc) else {
        return Ok(0.0);
    };
    let sc = s0.canonical();
    let pairs: Vec<usize> = hside
        .patterns
        .iter()
        .enumerate()
        .filter(|(_, p)| p.canonical() == sc)
        .filter_map(|(s, _)| (plan.pair_of)(r, s))
        .collect();
    Ok(*plan.program.evaluate(depth, Some(&pairs)).last().expect("depth >= 1"))
}

/// A kernel matrix over a dataset, with item identifiers and class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub ids: Vec<String>,
    pub labels: Vec<u32>,
}

impl GramMatrix {
    pub fn new(values: DMatrix<f64>, ids: Vec<String>, labels: Vec<u32>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: values.ncols(),
            });
        }
        for len in [ids.len(), labels.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, actual: len });
            }
        }
        Ok(GramMatrix { values, ids, labels })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.values)
    }

    /// Fails when the smallest eigenvalue is below `−1e-8·trace`.
    pub fn check_psd(&self) -> Result<()> {
        check_psd(&self.values)
    }

    /// Rows and columns `idx` of the matrix, with their ids and labels.
    pub fn subset(&self, idx: &[usize]) -> GramMatrix {
        GramMatrix {
            values: principal(&self.values, idx),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// `gram 1 <n>`, then one row per line, then `labels …`.
    pub fn to_gram_string(&self) -> String {
        let n = self.len();
        let mut out = format!("gram 1 {n}\n");
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| fmt_f64(self.values[(i, j)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out.push_str("labels");
        for l in &self.labels {
            write!(out, " {l}").unwrap();
        }
        out.push('\n');
        out
    }

    /// Parses the gram text format; ids are the row indices.
    pub fn from_gram_str(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let lines: Vec<&str> = text.lines().collect();
        let header: Vec<&str> = lines.first().map(|l| l.split_whitespace().collect()).unwrap_or_default();
        if header.len() != 3 || header[0] != "gram" || header[1] != "1" {
            return Err(err(1, "bad gram header".into()));
        }
        let n: usize = header[2].parse().map_err(|_| err(1, "bad size".into()))?;
        if lines.len() < n + 2 {
            return Err(err(lines.len(), format!("expected {} lines", n + 2)));
        }
        let mut values = DMatrix::zeros(n, n);
        for i in 0..n {
            let row: Vec<f64> = lines[i + 1]
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| err(i + 2, format!("bad float {s:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != n {
                return Err(err(i + 2, format!("expected {n} values, found {}", row.len())));
            }
            for (j, v) in row.into_iter().enumerate() {
                values[(i, j)] = v;
            }
        }
        let mut fields = lines[n + 1].split_whitespace();
        if fields.next() != Some("labels") {
            return Err(err(n + 2, "missing labels line".into()));
        }
        let labels: Vec<u32> = fields
            .map(|s| s.parse::<u32>().map_err(|_| err(n + 2, format!("bad label {s:?}"))))
            .collect::<Result<_>>()?;
        if labels.len() != n {
            return Err(err(n + 2, format!("expected {n} labels, found {}", labels.len())));
        }
        GramMatrix::new(values, (0..n).map(|i| i.to_string()).collect(), labels)
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Fails when the smallest eigenvalue is below `−1e-8·trace`.
pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let tol = 1e-8 * m.trace().abs();
    let min_eig = min_eigenvalue(m);
    if min_eig < -tol {
        return Err(Error::NotPsd { min_eig, tol });
    }
    Ok(())
}

/// Cosine normalization `k_ij / √(k_ii k_jj)`; zero rows stay zero.
pub fn normalize_gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let d: Vec<f64> = (0..n).map(|i| m[(i, i)].max(0.0).sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if d[i] > 0.0 && d[j] > 0.0 {
            m[(i, j)] / (d[i] * d[j])
        } else {
            0.0
        }
    })
}

/// Gram matrices for every depth `1..=cfg.walk.gamma` (index `γ − 1`),
/// normalized when `cfg.normalize` is set. Pairs run concurrently on the
/// current rayon pool; the first failing pair in row-major order is reported.
pub fn gram_matrices_all_gammas(graphs: &[PointCloudGraph], cfg: &KernelConfig) -> Result<Vec<DMatrix<f64>>> {
    if graphs.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    cfg.validate()?;
    let prepared: Vec<PreparedGraph> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            PreparedGraph::new(g, cfg).map_err(|e| Error::Pair {
                i,
                j: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let n = graphs.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            dp_kernel_prepared_gammas(&prepared[i], &prepared[j], cfg).map_err(|e| Error::Pair {
                i,
                j,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let gammas = cfg.walk.gamma;
    let mut out = vec![DMatrix::zeros(n, n); gammas];
    for (&(i, j), v) in pairs.iter().zip(&values) {
        for (m, &x) in out.iter_mut().zip(v) {
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    if cfg.normalize {
        for m in out.iter_mut() {
            *m = normalize_gram(m);
        }
    }
    Ok(out)
}

/// Gram matrix of the kernel at depth `cfg.walk.gamma`, with ids `0..n`
/// and all labels zero.
pub fn gram_matrix(graphs: &[PointCloudGraph], cfg: &KernelConfig) -> Result<GramMatrix> {
    let values = gram_matrices_all_gammas(graphs, cfg)?.pop().expect("gamma >= 1");
    let n = graphs.len();
    GramMatrix::new(values, (0..n).map(|i| i.to_string()).collect(), vec![0; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Vertex;
    use crate::random::{random_graph, random_permutation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(alpha: usize, beta: usize, gamma: usize) -> KernelConfig {
        KernelConfig {
            walk: WalkParams {
                alpha,
                beta,
                gamma,
                lambda: 0.8,
                nu: 0.3,
            },
            scales: KernelScaleParams {
                tau: 0.1,
                kappa: 0.01,
                upsilon: 0.05,
            },
            ..KernelConfig::default()
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    fn path(n: usize, dx: f64) -> PointCloudGraph {
        let v = (0..n)
            .map(|i| Vertex::new(vec![i as f64 * dx, (i * i) as f64 * 0.1], vec![i as f64 - n as f64 / 2.0]))
            .collect();
        PointCloudGraph::new(v, (1..n).map(|i| (i - 1, i))).unwrap()
    }

    #[test]
    fn empty_graphs_give_zero() {
        let c = cfg(2, 2, 3);
        let g = path(3, 1.0);
        assert_eq!(brute_force_kernel(&PointCloudGraph::empty(), &g, &c).unwrap(), 0.0);
        assert_eq!(dp_kernel(&g, &PointCloudGraph::empty(), &c).unwrap(), 0.0);
    }

    #[test]
    fn single_node_trees_are_attribute_sums() {
        let c = cfg(1, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(5, 0.5, 5.0, &mut rng);
        let h = random_graph(4, 0.5, 5.0, &mut rng);
        let mut expected = 0.0;
        for v in g.vertices() {
            for w in h.vertices() {
                expected += attribute_kernel(&v.attribute, &w.attribute, c.scales.upsilon).unwrap();
            }
        }
        expected *= c.walk.lambda * c.walk.nu;
        assert!(rel(brute_force_kernel(&g, &h, &c).unwrap(), expected) < 1e-14);
        assert!(rel(dp_kernel(&g, &h, &c).unwrap(), expected) < 1e-12);
    }

    #[test]
    fn guard_rejects_large_inputs() {
        let g = path(13, 1.0);
        assert!(matches!(
            brute_force_kernel(&g, &g, &cfg(1, 1, 2)),
            Err(Error::GuardExceeded(_))
        ));
        let h = path(3, 1.0);
        assert!(matches!(
            brute_force_kernel(&h, &h, &cfg(1, 1, 5)),
            Err(Error::GuardExceeded(_))
        ));
    }

    #[test]
    fn dp_matches_brute_force_on_fixed_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for alpha in 1..=2 {
            for beta in 1..=3 {
                for gamma in 1..=4 {
                    let g = random_graph(6, 0.45, 6.0, &mut rng);
                    let h = random_graph(5, 0.5, 6.0, &mut rng);
                    let c = cfg(alpha, beta, gamma);
                    let b = brute_force_kernel(&g, &h, &c).unwrap();
                    let d = dp_kernel(&g, &h, &c).unwrap();
                    assert!(rel(b, d) < 1e-8, "α={alpha} β={beta} γ={gamma}: brute {b} dp {d}");
                }
            }
        }
    }

    #[test]
    fn reduced_dp_matches_its_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for alpha in 1..=2 {
            for beta in 1..=3 {
                for gamma in 1..=4 {
                    let g = random_graph(6, 0.45, 6.0, &mut rng);
                    let h = random_graph(5, 0.5, 6.0, &mut rng);
                    let c = KernelConfig {
                        reduced_patterns: true,
                        ..cfg(alpha, beta, gamma)
                    };
                    let b = brute_force_kernel(&g, &h, &c).unwrap();
                    let d = dp_kernel(&g, &h, &c).unwrap();
                    assert!(rel(b, d) < 1e-8, "α={alpha} β={beta} γ={gamma}: brute {b} dp {d}");
                }
            }
        }
    }

    #[test]
    fn all_gammas_agree_with_single_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(7, 0.4, 6.0, &mut rng);
        let h = random_graph(7, 0.4, 6.0, &mut rng);
        let all = dp_kernel_gammas(&g, &h, &cfg(2, 2, 5)).unwrap();
        for gamma in 1..=5 {
            let one = dp_kernel(&g, &h, &cfg(2, 2, gamma)).unwrap();
            assert_eq!(one.to_bits(), all[gamma - 1].to_bits());
        }
        // more generations only add positive terms
        assert!(all.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn restricted_kernels_sum_to_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(5, 0.5, 5.0, &mut rng);
        let h = random_graph(5, 0.5, 5.0, &mut rng);
        let c = cfg(2, 2, 3);
        let pg = build_patterns(&g, 2, 2, DEFAULT_PATTERN_CAP).unwrap();
        let ph = build_patterns(&h, 2, 2, DEFAULT_PATTERN_CAP).unwrap();
        let mut sum = 0.0;
        for r in &pg {
            for s in &ph {
                let v = dp_restricted_kernel(&g, &h, r, s, 3, &c).unwrap();
                if r.shape_code() != s.shape_code() {
                    assert_eq!(v, 0.0);
                }
                sum += v;
            }
        }
        let total = dp_kernel(&g, &h, &c).unwrap();
        assert!(rel(sum, total) < 1e-12, "{sum} vs {total}");
    }

    #[test]
    fn restricted_kernel_base_case() {
        // a single-vertex pattern that can never be extended
        let g = path(3, 1.0);
        let c = cfg(1, 1, 1);
        let r = SubtreePattern::single(1);
        let v = dp_restricted_kernel(&g, &g, &r, &r, 1, &c).unwrap();
        assert!(rel(v, c.walk.lambda * c.walk.nu) < 1e-14);
    }

    #[test]
    fn chain_graphs_with_deep_patterns_are_fast() {
        let g = path(18, 1.3);
        let h = path(18, 1.1);
        let mut c = cfg(1, 4, 24);
        c.walk.lambda = 1.0;
        let start = std::time::Instant::now();
        let v = dp_kernel(&g, &h, &c).unwrap();
        assert!(v > 0.0 && v.is_finite());
        assert!(start.elapsed().as_secs_f64() < 1.0, "took {:?}", start.elapsed());
    }

    #[test]
    fn gram_file_round_trip_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let graphs: Vec<_> = (0..6).map(|_| random_graph(6, 0.4, 8.0, &mut rng)).collect();
        let mut c = cfg(1, 2, 3);
        c.normalize = true;
        let gram = gram_matrix(&graphs, &c).unwrap();
        for i in 0..6 {
            assert!((gram.values[(i, i)] - 1.0).abs() < 1e-14);
        }
        let text = gram.to_gram_string();
        assert!(text.starts_with("gram 1 6\n"));
        let back = GramMatrix::from_gram_str(&text, Path::new("x")).unwrap();
        assert_eq!(back.values, gram.values);
        assert_eq!(back.labels, gram.labels);
    }

    #[test]
    fn gram_permutes_with_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let graphs: Vec<_> = (0..7).map(|_| random_graph(5, 0.5, 8.0, &mut rng)).collect();
        let perm = random_permutation(7, &mut rng);
        let shuffled: Vec<_> = perm.iter().map(|&i| graphs[i].clone()).collect();
        let c = cfg(2, 1, 3);
        let a = gram_matrix(&graphs, &c).unwrap();
        let b = gram_matrix(&shuffled, &c).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(b.values[(i, j)], a.values[(perm[i], perm[j])]);
            }
        }
    }

    #[test]
    fn gram_over_twenty_graphs_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let graphs: Vec<_> = (0..20)
            .map(|_| {
                let n = rng.gen_range(3..8);
                random_graph(n, 0.5, 8.0, &mut rng)
            })
            .collect();
        for c in [cfg(1, 2, 4), cfg(2, 2, 3)] {
            let gram = gram_matrix(&graphs, &c).unwrap();
            gram.check_psd().unwrap();
        }
    }

    #[test]
    fn pair_failures_name_the_pair() {
        let a = path(3, 1.0);
        let b = PointCloudGraph::new(
            vec![Vertex::new(vec![0.0, 0.0], vec![1.0, 2.0, 3.0])],
            [],
        )
        .unwrap();
        match gram_matrix(&[a.clone(), a, b], &cfg(1, 1, 2)) {
            Err(Error::Pair { i: 0, j: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dp_is_symmetric_and_invariant(seed in any::<u64>(), alpha in 1usize..3, beta in 1usize..3, gamma in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(rng.gen_range(1..8), 0.45, 6.0, &mut rng);
            let h = random_graph(rng.gen_range(1..8), 0.45, 6.0, &mut rng);
            let c = cfg(alpha, beta, gamma);
            let gh = dp_kernel(&g, &h, &c).unwrap();
            let hg = dp_kernel(&h, &g, &c).unwrap();
            prop_assert_eq!(gh.to_bits(), hg.to_bits());
            let gp = g.permute(&random_permutation(g.len(), &mut rng)).unwrap();
            let hp = h.permute(&random_permutation(h.len(), &mut rng)).unwrap();
            prop_assert!(rel(dp_kernel(&gp, &hp, &c).unwrap(), gh) <= 1e-12);
            prop_assert!(dp_kernel(&g, &g, &c).unwrap() > 0.0);
        }
    }
}
