//! Seeded generators for randomized tests and verification suites.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::covkernels::{DecomposableModel, PdMatrix};
use crate::graph::{PointCloudGraph, Vertex};

/// `A Aᵀ/n + 0.1 I` with standard-normal-ish entries in `A`.
pub fn random_pd<R: Rng>(n: usize, rng: &mut R) -> PdMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let m = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1;
    PdMatrix::new(m).expect("random PD matrix")
}

/// A random PD matrix rescaled to unit diagonal.
pub fn random_correlation<R: Rng>(n: usize, rng: &mut R) -> PdMatrix {
    let m = random_pd(n, rng).matrix().clone();
    let d: Vec<f64> = (0..n).map(|i| m[(i, i)].sqrt()).collect();
    PdMatrix::new(DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (d[i] * d[j]))).expect("correlation")
}

/// A random decomposable model on `n` vertices, grown clique by clique so
/// that running intersection holds by construction.
pub fn random_decomposable_model<R: Rng>(n: usize, rng: &mut R) -> DecomposableModel {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let first = rng.gen_range(1..=n.min(3));
    let mut cliques = vec![order[..first].to_vec()];
    let mut parent = vec![None];
    let mut next = first;
    while next < n {
        let p = rng.gen_range(0..cliques.len());
        let mut sep: Vec<usize> = cliques[p]
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.6))
            .collect();
        if sep.len() == cliques[p].len() && rng.gen_bool(0.5) {
            sep.pop();
        }
        let fresh = rng.gen_range(1..=(n - next).min(2));
        sep.extend_from_slice(&order[next..next + fresh]);
        next += fresh;
        cliques.push(sep);
        parent.push(Some(p));
    }
    DecomposableModel::new(n, cliques, parent).expect("random model is decomposable")
}

/// Erdős–Rényi graph with uniform 2-D positions in `[0, scale)²` and
/// attributes equal to positions minus the centroid.
pub fn random_graph<R: Rng>(n: usize, edge_prob: f64, scale: f64, rng: &mut R) -> PointCloudGraph {
    let pos: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.gen_range(0.0..scale), rng.gen_range(0.0..scale)])
        .collect();
    let cx = pos.iter().map(|p| p[0]).sum::<f64>() / n.max(1) as f64;
    let cy = pos.iter().map(|p| p[1]).sum::<f64>() / n.max(1) as f64;
    let vertices = pos
        .iter()
        .map(|p| Vertex::new(p.to_vec(), vec![p[0] - cx, p[1] - cy]))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    PointCloudGraph::new(vertices, edges).expect("random graph")
}

/// A uniformly random permutation of `0..n`.
pub fn random_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
