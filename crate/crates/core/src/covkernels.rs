//! Base kernel matrices and kernels between covariance matrices.
//!
//! Covariance matrices are factorized on decomposable graphical models: the
//! Bhattacharyya kernel, log-determinants of projections onto a model (via
//! cliques and separators, or via the rooted junction tree) and the two
//! model-factorized kernels built from them. Every determinant is taken from
//! a Cholesky factor and handled in log space.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::graph::PointCloudGraph;

/// Smallest denominator determinant accepted by the conditional kernel.
const MIN_DENOMINATOR_DET: f64 = 1e-300;

/// Relative tolerance for the symmetry check.
const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive-definite matrix together with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct PdMatrix {
    mat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PdMatrix {
    /// Checks symmetry, symmetrizes `(M + Mᵀ)/2`, and factorizes.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                actual: mat.ncols(),
            });
        }
        let scale = mat.amax().max(f64::MIN_POSITIVE);
        let n = mat.nrows();
        for i in 0..n {
            for j in 0..i {
                if (mat[(i, j)] - mat[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        let mat = symmetrize(mat);
        let chol = mat
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("Cholesky factorization failed"))?;
        Ok(PdMatrix { mat, chol })
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        PdMatrix::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn log_det(&self) -> f64 {
        chol_log_det(&self.chol)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Principal submatrix on `idx` (PD whenever `self` is).
    pub fn principal(&self, idx: &[usize]) -> Result<PdMatrix> {
        check_indices(idx, self.dim())?;
        PdMatrix::new(principal(&self.mat, idx))
    }
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Log-determinant of a symmetric matrix through its Cholesky factor.
pub(crate) fn log_det_sym(m: DMatrix<f64>, what: &'static str) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = symmetrize(m).cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    Ok(chol_log_det(&chol))
}

/// `m[rows, cols]`.
pub(crate) fn block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub(crate) fn principal(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    block(m, idx, idx)
}

fn check_indices(idx: &[usize], n: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= n) {
        Some(&index) => Err(Error::IndexOutOfRange { index, n }),
        None => Ok(()),
    }
}

fn check_disjoint(c: &[usize], p: &[usize]) -> Result<()> {
    if c.iter().any(|i| p.contains(i)) {
        return Err(Error::InvalidArgument(
            "conditioned and conditioning index sets overlap".into(),
        ));
    }
    Ok(())
}

/// Bandwidths and ridge of the position and attribute kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelScaleParams {
    /// Position bandwidth.
    pub tau: f64,
    /// Ridge added to the diagonal of position kernel matrices.
    pub kappa: f64,
    /// Attribute bandwidth.
    pub upsilon: f64,
}

impl KernelScaleParams {
    pub fn new(tau: f64, kappa: f64, upsilon: f64) -> Result<Self> {
        let p = KernelScaleParams { tau, kappa, upsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if !(self.upsilon >= 0.0 && self.upsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "upsilon must be >= 0, got {}",
                self.upsilon
            )));
        }
        Ok(())
    }
}

impl Default for KernelScaleParams {
    fn default() -> Self {
        KernelScaleParams {
            tau: 0.05,
            kappa: 0.001,
            upsilon: 0.05,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Raw position kernel matrix `exp(-τ‖x_i − x_j‖²) + κ[i = j]`, without the PD check.
pub(crate) fn position_kernel_raw(graph: &PointCloudGraph, params: &KernelScaleParams) -> DMatrix<f64> {
    let n = graph.len();
    DMatrix::from_fn(n, n, |i, j| {
        let v = (-params.tau * sq_dist(&graph.vertex(i).position, &graph.vertex(j).position)).exp();
        if i == j {
            v + params.kappa
        } else {
            v
        }
    })
}

/// Kernel matrix on vertex positions: `exp(-τ‖x_i − x_j‖²) + κ[i = j]`.
pub fn position_kernel_matrix(graph: &PointCloudGraph, params: &KernelScaleParams) -> Result<PdMatrix> {
    if graph.is_empty() {
        return Err(Error::Empty("graph"));
    }
    params.validate()?;
    PdMatrix::new(position_kernel_raw(graph, params))
        .map_err(|_| Error::NotPositiveDefinite("position kernel matrix; increase kappa"))
}

/// Gaussian kernel `exp(-υ‖a − b‖²)` between two attribute vectors.
pub fn attribute_kernel(a: &[f64], b: &[f64], upsilon: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok((-upsilon * sq_dist(a, b)).exp())
}

/// Log of the Bhattacharyya kernel on raw symmetric blocks.
pub(crate) fn log_bhattacharyya_raw(k: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    if k.nrows() != l.nrows() {
        return Err(Error::DimensionMismatch {
            expected: k.nrows(),
            actual: l.nrows(),
        });
    }
    let lk = log_det_sym(k.clone(), "first argument")?;
    let ll = log_det_sym(l.clone(), "second argument")?;
    let lm = log_det_sym((k + l) * 0.5, "mean matrix")?;
    Ok(0.5 * lk + 0.5 * ll - lm)
}

/// Squared Bhattacharyya kernel `|K|^½ |L|^½ |(K + L)/2|^-1`, in (0, 1].
pub fn bhattacharyya(k: &PdMatrix, l: &PdMatrix) -> Result<f64> {
    if k.dim() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: k.dim(),
            actual: l.dim(),
        });
    }
    let mean = (k.matrix() + l.matrix()) * 0.5;
    let lm = log_det_sym(mean, "mean matrix")?;
    Ok((0.5 * k.log_det() + 0.5 * l.log_det() - lm).exp())
}

/// Conditional covariance (Schur complement) and regression coefficients
/// `K_{C,P} K_P^{-1}` of the block `c` given `p`.
pub(crate) fn conditional_raw(
    k: &DMatrix<f64>,
    c: &[usize],
    p: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let kcc = principal(k, c);
    if p.is_empty() {
        return Ok((kcc, DMatrix::zeros(c.len(), 0)));
    }
    let chol = symmetrize(principal(k, p))
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("conditioning block"))?;
    let kpc = block(k, p, c);
    // K_P^{-1} K_{P,C}; its transpose is the regression matrix
    let solved = chol.solve(&kpc);
    let cond = symmetrize(kcc - kpc.transpose() * &solved);
    Ok((cond, solved.transpose()))
}

/// `K_{C,C} − K_{C,P} K_{P,P}^{-1} K_{P,C}`.
pub fn conditional_covariance(k: &PdMatrix, c: &[usize], p: &[usize]) -> Result<PdMatrix> {
    check_indices(c, k.dim())?;
    check_indices(p, k.dim())?;
    check_disjoint(c, p)?;
    let (cond, _) = conditional_raw(k.matrix(), c, p)?;
    PdMatrix::new(cond)
}

/// A decomposable graphical model given by its cliques and a rooted junction tree.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposableModel {
    n: usize,
    cliques: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    separators: Vec<Vec<usize>>,
    root: usize,
}

impl DecomposableModel {
    /// Validates and builds a model. Cliques are sorted internally;
    /// `parent[c]` is the parent clique of clique `c` (`None` for the root).
    pub fn new(n: usize, cliques: Vec<Vec<usize>>, parent: Vec<Option<usize>>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if cliques.is_empty() {
            return bad("no cliques".into());
        }
        if parent.len() != cliques.len() {
            return bad("parent map and clique list differ in length".into());
        }
        let mut cliques = cliques;
        let mut covered = vec![false; n];
        for c in &mut cliques {
            c.sort_unstable();
            c.dedup();
            if c.is_empty() {
                return bad("empty clique".into());
            }
            for &v in c.iter() {
                if v >= n {
                    return bad(format!("vertex {v} out of range"));
                }
                covered[v] = true;
            }
        }
        if let Some(v) = covered.iter().position(|c| !c) {
            return bad(format!("vertex {v} is in no clique"));
        }
        let roots: Vec<usize> = (0..parent.len()).filter(|&c| parent[c].is_none()).collect();
        if roots.len() != 1 {
            return bad(format!("junction tree needs exactly one root, found {}", roots.len()));
        }
        let root = roots[0];
        for (c, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= cliques.len() || p == c {
                    return bad(format!("invalid parent {p} for clique {c}"));
                }
            }
        }
        // every clique must reach the root without cycling
        for start in 0..cliques.len() {
            let mut c = start;
            let mut steps = 0;
            while let Some(p) = parent[c] {
                c = p;
                steps += 1;
                if steps > cliques.len() {
                    return bad("junction tree has a cycle".into());
                }
            }
        }
        // running intersection: cliques holding v form a connected subtree
        for v in 0..n {
            let holders = cliques.iter().filter(|c| c.contains(&v)).count();
            let links = (0..cliques.len())
                .filter(|&c| {
                    parent[c].is_some_and(|p| cliques[c].contains(&v) && cliques[p].contains(&v))
                })
                .count();
            if links + 1 != holders {
                return bad(format!("running intersection fails for vertex {v}"));
            }
        }
        let separators = (0..cliques.len())
            .map(|c| match parent[c] {
                Some(p) => cliques[c].iter().copied().filter(|v| cliques[p].contains(v)).collect(),
                None => Vec::new(),
            })
            .collect();
        Ok(DecomposableModel {
            n,
            cliques,
            parent,
            separators,
            root,
        })
    }

    /// A single clique over all vertices.
    pub fn complete(n: usize) -> Self {
        DecomposableModel::new(n, vec![(0..n).collect()], vec![None]).expect("valid model")
    }

    /// Singleton cliques chained by empty separators.
    pub fn edgeless(n: usize) -> Self {
        let cliques = (0..n).map(|i| vec![i]).collect();
        let parent = (0..n).map(|i| i.checked_sub(1)).collect();
        DecomposableModel::new(n, cliques, parent).expect("valid model")
    }

    /// The chain `0 – 1 – … – n−1`, rooted at `{0, 1}`.
    pub fn chain(n: usize) -> Self {
        if n < 2 {
            return DecomposableModel::complete(n);
        }
        let cliques = (0..n - 1).map(|i| vec![i, i + 1]).collect();
        let parent = (0..n - 1).map(|i| i.checked_sub(1)).collect();
        DecomposableModel::new(n, cliques, parent).expect("valid model")
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    pub fn parent(&self, clique: usize) -> Option<usize> {
        self.parent[clique]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Separator `C ∩ p_Q(C)` of each clique (empty for the root).
    pub fn separator(&self, clique: usize) -> &[usize] {
        &self.separators[clique]
    }

    /// Separators of all non-root cliques.
    pub fn separators(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.cliques.len())
            .filter(|&c| c != self.root)
            .map(|c| self.separators[c].as_slice())
    }

    /// Variables of clique `c` not shared with its parent.
    pub fn residual(&self, clique: usize) -> Vec<usize> {
        let sep = &self.separators[clique];
        self.cliques[clique]
            .iter()
            .copied()
            .filter(|v| !sep.contains(v))
            .collect()
    }

    /// True if `i` and `j` share a clique.
    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.cliques.iter().any(|c| c.contains(&i) && c.contains(&j))
    }

    /// The same cliques with the junction tree re-rooted at `new_root`.
    pub fn reroot(&self, new_root: usize) -> Result<Self> {
        if new_root >= self.cliques.len() {
            return Err(Error::InvalidModel(format!("no clique {new_root}")));
        }
        let m = self.cliques.len();
        let mut adj = vec![Vec::new(); m];
        for c in 0..m {
            if let Some(p) = self.parent[c] {
                adj[c].push(p);
                adj[p].push(c);
            }
        }
        let mut parent = vec![None; m];
        let mut seen = vec![false; m];
        let mut stack = vec![new_root];
        seen[new_root] = true;
        while let Some(c) = stack.pop() {
            for &d in &adj[c] {
                if !seen[d] {
                    seen[d] = true;
                    parent[d] = Some(c);
                    stack.push(d);
                }
            }
        }
        DecomposableModel::new(self.n, self.cliques.clone(), parent)
    }

    fn check_size(&self, k: usize) -> Result<()> {
        if k != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: k,
            });
        }
        Ok(())
    }
}

/// Closest covariance factorizing in `q` (KL sense), in closed form:
/// `M^{-1} = Σ_C [K_C^{-1}]⁰ − Σ_S [K_S^{-1}]⁰` with zero-padded blocks.
pub fn project_onto_model(k: &PdMatrix, q: &DecomposableModel) -> Result<PdMatrix> {
    q.check_size(k.dim())?;
    let n = k.dim();
    let mut precision = DMatrix::<f64>::zeros(n, n);
    let mut add_block = |idx: &[usize], sign: f64| -> Result<()> {
        if idx.is_empty() {
            return Ok(());
        }
        let inv = k.principal(idx)?.inverse();
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                precision[(i, j)] += sign * inv[(a, b)];
            }
        }
        Ok(())
    };
    for c in q.cliques() {
        add_block(c, 1.0)?;
    }
    for s in q.separators() {
        add_block(s, -1.0)?;
    }
    let precision = PdMatrix::new(symmetrize(precision))?;
    PdMatrix::new(precision.inverse())
}

/// `log|Π_Q(K)| = Σ_C log|K_C| − Σ_S log|K_S|`.
pub fn logdet_projection(k: &PdMatrix, q: &DecomposableModel) -> Result<f64> {
    q.check_size(k.dim())?;
    let m = k.matrix();
    let mut total = 0.0;
    for c in q.cliques() {
        total += log_det_sym(principal(m, c), "clique block")?;
    }
    for s in q.separators() {
        total -= log_det_sym(principal(m, s), "separator block")?;
    }
    Ok(total)
}

/// `log|Π_Q(K)| = Σ_C log|K_{C\S | S}|` over the rooted junction tree.
pub fn logdet_projection_rooted(k: &PdMatrix, q: &DecomposableModel) -> Result<f64> {
    q.check_size(k.dim())?;
    let mut total = 0.0;
    for c in 0..q.cliques().len() {
        let residual = q.residual(c);
        let (cond, _) = conditional_raw(k.matrix(), &residual, q.separator(c))?;
        total += log_det_sym(cond, "conditional block")?;
    }
    Ok(total)
}

/// Clique-over-separator factorization of the Bhattacharyya kernel. This is
/// a positive kernel only when every separator block is the identity.
pub fn kernel_b0_model(k: &PdMatrix, l: &PdMatrix, q: &DecomposableModel) -> Result<f64> {
    q.check_size(k.dim())?;
    q.check_size(l.dim())?;
    let (km, lm) = (k.matrix(), l.matrix());
    let mut log = 0.0;
    for c in q.cliques() {
        log += log_bhattacharyya_raw(&principal(km, c), &principal(lm, c))?;
    }
    for s in q.separators() {
        if !s.is_empty() {
            log -= log_bhattacharyya_raw(&principal(km, s), &principal(lm, s))
                .map_err(|_| Error::NotPositiveDefinite("separator block"))?;
        }
    }
    Ok(log.exp())
}

/// Log of the conditional Bhattacharyya kernel on raw matrices; only the
/// blocks on `c ∪ p` are read, and they must be PD.
pub(crate) fn log_kernel_b_conditional_raw(
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    c: &[usize],
    p: &[usize],
) -> Result<f64> {
    if c.is_empty() {
        return Ok(0.0);
    }
    if p.is_empty() {
        return log_bhattacharyya_raw(&principal(k, c), &principal(l, c));
    }
    let (kc, km) = conditional_raw(k, c, p)?;
    let (lc, lmr) = conditional_raw(l, c, p)?;
    let diff = km - lmr;
    let den = (&kc + &lc) * 0.5 + (&diff * diff.transpose()) * 0.25;
    let lk = log_det_sym(kc, "conditional covariance")?;
    let ll = log_det_sym(lc, "conditional covariance")?;
    let lden = log_det_sym(den, "denominator")?.max(MIN_DENOMINATOR_DET.ln());
    Ok(0.5 * lk + 0.5 * ll - lden)
}

/// Kernel between the conditional Gaussians of `Z_C` given `Z_P`, with an
/// identity prior on the conditioning variables. With `p` empty this is
/// the Bhattacharyya kernel of the `C` blocks.
pub fn kernel_b_conditional(k: &PdMatrix, l: &PdMatrix, c: &[usize], p: &[usize]) -> Result<f64> {
    if k.dim() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: k.dim(),
            actual: l.dim(),
        });
    }
    check_indices(c, k.dim())?;
    check_indices(p, k.dim())?;
    check_disjoint(c, p)?;
    Ok(log_kernel_b_conditional_raw(k.matrix(), l.matrix(), c, p)?.exp())
}

/// Log of the junction-tree kernel on raw matrices whose clique blocks are PD.
pub(crate) fn log_kernel_b_model_raw(k: &DMatrix<f64>, l: &DMatrix<f64>, q: &DecomposableModel) -> Result<f64> {
    q.check_size(k.nrows())?;
    q.check_size(l.nrows())?;
    let mut log = 0.0;
    for c in 0..q.cliques().len() {
        log += log_kernel_b_conditional_raw(k, l, &q.residual(c), q.separator(c))?;
    }
    Ok(log)
}

/// Product over cliques of the conditional kernels given the parent
/// separator; a positive kernel on all covariance matrices.
pub fn kernel_b_model(k: &PdMatrix, l: &PdMatrix, q: &DecomposableModel) -> Result<f64> {
    Ok(log_kernel_b_model_raw(k.matrix(), l.matrix(), q)?.exp())
}

/// [`kernel_b_model`] for symmetric matrices that need only be PD on each
/// clique, such as kernel matrices indexed by a walk that revisits vertices.
pub fn kernel_b_model_blocks(k: &DMatrix<f64>, l: &DMatrix<f64>, q: &DecomposableModel) -> Result<f64> {
    Ok(log_kernel_b_model_raw(k, l, q)?.exp())
}
