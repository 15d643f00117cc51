//! Kernel SVM classification: the 2-norm SVM dual, one-vs-one voting,
//! stratified nested cross-validation and the Gaussian-RBF baseline.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::charpipe::{binarize, RasterImage};
use crate::engine::{check_psd, GramMatrix};
use crate::error::{Error, Result};

/// Stopping rule and iteration budget of the pairwise dual solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Maximal KKT violation accepted at termination.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 100_000,
        }
    }
}

/// A trained binary SVM. Coefficients are indexed like the training rows of
/// the Gram matrix it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    /// Dual variables, all nonnegative.
    pub alpha: Vec<f64>,
    /// `α_i y_i`.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Regularization parameter; infinite for a hard-margin fit.
    pub c: f64,
    /// Dual objective `Σα − ½ αᵀ(yyᵀ ∘ K̃)α` on the ridged kernel `K̃`.
    pub objective: f64,
    /// Largest KKT violation left at termination.
    pub kkt_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    /// `Σ_i α_i y_i k(x_i, x) + b` for the kernel values `row` between the
    /// training items and `x`.
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.coef.iter().zip(row).map(|(c, k)| c * k).sum::<f64>() + self.bias
    }

    pub fn support_count(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0.0).count()
    }
}

fn check_labels(n: usize, y: &[f64]) -> Result<()> {
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument(format!("labels must be +1 or -1, found {bad}")));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Trains a 2-norm SVM with regularization `c`: the hard-margin dual on
/// `K + I/(2c)`. Labels are ±1.
pub fn svm_train(gram: &DMatrix<f64>, y: &[f64], c: f64) -> Result<SvmModel> {
    svm_train_with(gram, y, c, SolverOptions::default())
}

pub fn svm_train_with(gram: &DMatrix<f64>, y: &[f64], c: f64, opts: SolverOptions) -> Result<SvmModel> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    let mut model = svm_train_ridge(gram, y, 0.5 / c, opts)?;
    model.c = c;
    Ok(model)
}

/// Hard-margin dual on `gram + ridge·I`. A zero ridge gives the plain
/// hard-margin SVM, which needs separable data to be bounded.
pub fn svm_train_ridge(gram: &DMatrix<f64>, y: &[f64], ridge: f64, opts: SolverOptions) -> Result<SvmModel> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: gram.ncols(),
        });
    }
    check_labels(n, y)?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge must be finite and nonnegative, got {ridge}")));
    }
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gram"));
    }
    check_psd(gram)?;
    Ok(solve_dual(|i, j| gram[(i, j)], n, y, ridge, opts))
}

/// Maximal-violating-pair SMO for
/// `max Σα − ½ Σ α_i α_j y_i y_j K̃_ij` subject to `yᵀα = 0`, `α ≥ 0`.
fn solve_dual(k: impl Fn(usize, usize) -> f64, n: usize, y: &[f64], ridge: f64, opts: SolverOptions) -> SvmModel {
    let kt = |i: usize, j: usize| k(i, j) + if i == j { ridge } else { 0.0 };
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − Σα.
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut gap;
    loop {
        let mut up = (f64::NEG_INFINITY, usize::MAX);
        let mut low = (f64::INFINITY, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = y[t] > 0.0 || alpha[t] > 0.0;
            let in_low = y[t] < 0.0 || alpha[t] > 0.0;
            if in_up && v > up.0 {
                up = (v, t);
            }
            if in_low && v < low.0 {
                low = (v, t);
            }
        }
        gap = up.0 - low.0;
        if gap <= opts.tol || iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let (i, j) = (up.1, low.1);
        let curvature = (kt(i, i) + kt(j, j) - 2.0 * kt(i, j)).max(1e-12);
        let mut step = gap / curvature;
        if y[i] < 0.0 {
            step = step.min(alpha[i]);
        }
        if y[j] > 0.0 {
            step = step.min(alpha[j]);
        }
        alpha[i] += y[i] * step;
        alpha[j] -= y[j] * step;
        // Clipping lands exactly on the bound; keep it there.
        if alpha[i] < 0.0 {
            alpha[i] = 0.0;
        }
        if alpha[j] < 0.0 {
            alpha[j] = 0.0;
        }
        for (t, g) in grad.iter_mut().enumerate() {
            *g += y[t] * step * (kt(t, i) - kt(t, j));
        }
    }

    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..n {
        if alpha[t] > 0.0 {
            sum += -y[t] * grad[t];
            count += 1;
        }
    }
    let bias = if count > 0 {
        sum / count as f64
    } else {
        0.0
    };
    let coef: Vec<f64> = alpha.iter().zip(y).map(|(a, y)| a * y).collect();
    // Σα − ½αᵀQα with Qα = grad + 1.
    let objective = alpha.iter().zip(&grad).map(|(a, g)| a - 0.5 * a * (g + 1.0)).sum();
    SvmModel {
        alpha,
        coef,
        bias,
        c: if ridge > 0.0 { 0.5 / ridge } else { f64::INFINITY },
        objective,
        kkt_gap: gap.max(0.0),
        iterations,
        converged: gap <= opts.tol,
    }
}

/// Binary SVM separating `positive` (decision ≥ 0) from `negative`, trained
/// on the dataset items `indices`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairModel {
    pub positive: u32,
    pub negative: u32,
    pub indices: Vec<usize>,
    pub svm: SvmModel,
}

impl PairModel {
    /// Decision value for a test item, given its kernel values against
    /// every item of the dataset.
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.svm.coef)
            .map(|(&i, c)| c * row[i])
            .sum::<f64>()
            + self.svm.bias
    }
}

/// One binary SVM per pair of classes seen in training.
#[derive(Clone, Debug, PartialEq)]
pub struct OvoModel {
    /// Sorted class ids.
    pub classes: Vec<u32>,
    pub pairs: Vec<PairModel>,
}

/// Trains every class pair on the items `train` of `gram`. `label` is the
/// only access to class labels.
pub fn ovo_train(gram: &DMatrix<f64>, train: &[usize], label: impl Fn(usize) -> u32, c: f64) -> Result<OvoModel> {
    ovo_train_with(gram, train, label, c, SolverOptions::default())
}

pub fn ovo_train_with(
    gram: &DMatrix<f64>,
    train: &[usize],
    label: impl Fn(usize) -> u32,
    c: f64,
    opts: SolverOptions,
) -> Result<OvoModel> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    let labelled: Vec<(usize, u32)> = train.iter().map(|&i| (i, label(i))).collect();
    let classes: Vec<u32> = labelled.iter().map(|&(_, l)| l).collect::<BTreeSet<_>>().into_iter().collect();
    let mut pairs = Vec::new();
    for (a, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a + 1..] {
            let (indices, y): (Vec<usize>, Vec<f64>) = labelled
                .iter()
                .filter(|&&(_, l)| l == pos || l == neg)
                .map(|&(i, l)| (i, if l == pos { 1.0 } else { -1.0 }))
                .unzip();
            let svm = solve_dual(|r, s| gram[(indices[r], indices[s])], indices.len(), &y, 0.5 / c, opts);
            pairs.push(PairModel {
                positive: pos,
                negative: neg,
                indices,
                svm: SvmModel { c, ..svm },
            });
        }
    }
    Ok(OvoModel { classes, pairs })
}

/// Votes and summed oriented margins per class, in the order of
/// `model.classes`.
pub fn ovo_votes(model: &OvoModel, row: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let pos_of = |c: u32| model.classes.binary_search(&c).expect("pair classes are known");
    let mut votes = vec![0usize; model.classes.len()];
    let mut margins = vec![0.0; model.classes.len()];
    for pair in &model.pairs {
        let f = pair.decision(row);
        let (p, q) = (pos_of(pair.positive), pos_of(pair.negative));
        if f >= 0.0 {
            votes[p] += 1;
        } else {
            votes[q] += 1;
        }
        margins[p] += f;
        margins[q] -= f;
    }
    (votes, margins)
}

/// Majority vote over the pairwise decisions. Ties go to the larger summed
/// margin, then to the smaller class id.
pub fn ovo_predict(model: &OvoModel, row: &[f64]) -> u32 {
    let (votes, margins) = ovo_votes(model, row);
    let mut best = 0;
    for c in 1..model.classes.len() {
        if votes[c] > votes[best] || (votes[c] == votes[best] && margins[c] > margins[best]) {
            best = c;
        }
    }
    model.classes[best]
}

/// Outer and inner fold counts, the C grid and the seed of the splits.
#[derive(Clone, Debug, PartialEq)]
pub struct CvPlan {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub c_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            outer_folds: 5,
            inner_folds: 5,
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(Error::InvalidArgument("fold counts must be at least 2".into()));
        }
        if self.c_grid.is_empty() {
            return Err(Error::Empty("C grid"));
        }
        if let Some(c) = self.c_grid.iter().find(|&&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("C values must be positive and finite, got {c}")));
        }
        Ok(())
    }
}

/// One point of the searched grid: its named parameter values and the Gram
/// matrix over the whole dataset.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub params: Vec<(String, String)>,
    pub gram: DMatrix<f64>,
}

/// Splits `items` into `k` folds, each class dealt round-robin after a
/// seeded shuffle.
pub fn stratified_folds(
    items: &[usize],
    label: impl Fn(usize) -> u32,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("fold count must be positive".into()));
    }
    let mut by_class: Vec<(u32, Vec<usize>)> = Vec::new();
    for &i in items {
        let l = label(i);
        match by_class.iter_mut().find(|(c, _)| *c == l) {
            Some((_, v)) => v.push(i),
            None => by_class.push((l, vec![i])),
        }
    }
    by_class.sort_by_key(|(c, _)| *c);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut members) in by_class {
        if members.len() < k {
            return Err(Error::FoldTooSmall {
                class,
                count: members.len(),
                folds: k,
            });
        }
        members.sort_unstable();
        members.shuffle(rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Label access that records which items were read.
struct AuditedLabels<'a> {
    labels: &'a [u32],
    read: Vec<AtomicBool>,
}

impl<'a> AuditedLabels<'a> {
    fn new(labels: &'a [u32]) -> Self {
        AuditedLabels {
            labels,
            read: labels.iter().map(|_| AtomicBool::new(false)).collect(),
        }
    }

    fn get(&self, i: usize) -> u32 {
        self.read[i].store(true, Ordering::Relaxed);
        self.labels[i]
    }

    fn was_read(&self, i: usize) -> bool {
        self.read[i].load(Ordering::Relaxed)
    }
}

/// Outcome of one outer fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub test: Vec<usize>,
    /// Index into the candidate list.
    pub candidate: usize,
    pub c: f64,
    /// Inner-CV error rate of the selected cell.
    pub inner_error: f64,
    pub test_error: f64,
    /// Test-fold labels read while selecting parameters.
    pub test_labels_read: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean_error: f64,
    /// Sample standard deviation over outer folds.
    pub std_error: f64,
    pub seed: u64,
}

impl CvReport {
    /// Most frequent value of every selected parameter across outer folds,
    /// as `key=value` pairs joined by `;`. Ties keep the earliest fold's
    /// value.
    pub fn selected_modes(&self, candidates: &[Candidate]) -> String {
        let mut keys: Vec<String> = Vec::new();
        for f in &self.folds {
            for (k, _) in &candidates[f.candidate].params {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        let mut out: Vec<String> = Vec::new();
        for key in &keys {
            let values: Vec<&str> = self
                .folds
                .iter()
                .filter_map(|f| {
                    candidates[f.candidate]
                        .params
                        .iter()
                        .find(|(k, _)| k == key)
                        .map(|(_, v)| v.as_str())
                })
                .collect();
            out.push(format!("{key}={}", mode(&values)));
        }
        let cs: Vec<String> = self.folds.iter().map(|f| f.c.to_string()).collect();
        let cs: Vec<&str> = cs.iter().map(String::as_str).collect();
        out.push(format!("C={}", mode(&cs)));
        out.join(";")
    }
}

fn mode<'a>(values: &[&'a str]) -> &'a str {
    let mut best = ("", 0);
    for v in values {
        let count = values.iter().filter(|w| *w == v).count();
        if count > best.1 {
            best = (v, count);
        }
    }
    best.0
}

fn count_errors(model: &OvoModel, gram: &DMatrix<f64>, items: &[usize], label: impl Fn(usize) -> u32) -> usize {
    items
        .iter()
        .filter(|&&i| {
            let row: Vec<f64> = gram.row(i).iter().copied().collect();
            ovo_predict(model, &row) != label(i)
        })
        .count()
}

/// Nested stratified cross-validation. For every outer fold, each
/// (candidate, C) cell is scored by inner cross-validation on the training
/// fold only; the best cell (earliest on ties) is retrained on the whole
/// training fold and scored on the test fold. Error rates are fractions.
pub fn nested_cv(candidates: &[Candidate], labels: &[u32], plan: &CvPlan) -> Result<CvReport> {
    plan.validate()?;
    if candidates.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    for cand in candidates {
        if cand.gram.nrows() != n || cand.gram.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: cand.gram.nrows(),
            });
        }
        if cand.gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gram"));
        }
    }
    candidates.par_iter().try_for_each(|c| check_psd(&c.gram))?;

    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let outer = stratified_folds(&all, |i| labels[i], plan.outer_folds, &mut rng)?;

    let folds = (0..plan.outer_folds)
        .into_par_iter()
        .map(|f| {
            let test = outer[f].clone();
            let train: Vec<usize> = outer
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, fold)| fold.iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let audit = AuditedLabels::new(labels);
            let (candidate, c, inner_error) = select(candidates, &train, &audit, plan, f)?;
            let test_labels_read = test.iter().filter(|&&i| audit.was_read(i)).count();
            let gram = &candidates[candidate].gram;
            let model = ovo_train(gram, &train, |i| labels[i], c)?;
            let errors = count_errors(&model, gram, &test, |i| labels[i]);
            Ok(FoldResult {
                test_error: errors as f64 / test.len() as f64,
                test,
                candidate,
                c,
                inner_error,
                test_labels_read,
            })
        })
        .collect::<Result<Vec<FoldResult>>>()?;

    let errs: Vec<f64> = folds.iter().map(|f| f.test_error).collect();
    let k = errs.len() as f64;
    let mean_error = errs.iter().sum::<f64>() / k;
    let std_error = (errs.iter().map(|e| (e - mean_error).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    Ok(CvReport {
        folds,
        mean_error,
        std_error,
        seed: plan.seed,
    })
}

fn select(
    candidates: &[Candidate],
    train: &[usize],
    audit: &AuditedLabels,
    plan: &CvPlan,
    outer_fold: usize,
) -> Result<(usize, f64, f64)> {
    let seed = plan.seed.wrapping_add(1 + outer_fold as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = stratified_folds(train, |i| audit.get(i), plan.inner_folds, &mut rng)?;
    let cells: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|a| (0..plan.c_grid.len()).map(move |b| (a, b)))
        .collect();
    let scores = cells
        .par_iter()
        .map(|&(a, b)| {
            let gram = &candidates[a].gram;
            let mut errors = 0;
            for (v, valid) in inner.iter().enumerate() {
                let fit: Vec<usize> = inner
                    .iter()
                    .enumerate()
                    .filter(|&(w, _)| w != v)
                    .flat_map(|(_, fold)| fold.iter().copied())
                    .collect();
                let model = ovo_train(gram, &fit, |i| audit.get(i), plan.c_grid[b])?;
                errors += count_errors(&model, gram, valid, |i| audit.get(i));
            }
            Ok(errors)
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    let (a, b) = cells[best];
    Ok((a, plan.c_grid[b], scores[best] as f64 / train.len() as f64))
}

/// Gaussian-RBF Gram matrix `exp(−‖u−v‖²/(2σ²))` with ids `0..n` and zero
/// labels.
pub fn rbf_baseline_gram(vectors: &[Vec<f64>], sigma: f64) -> Result<GramMatrix> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive and finite, got {sigma}")));
    }
    let n = vectors.len();
    if let Some(first) = vectors.first() {
        for v in vectors {
            if v.len() != first.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    actual: v.len(),
                });
            }
        }
    }
    let scale = 1.0 / (2.0 * sigma * sigma);
    let values = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 1.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let d2: f64 = vectors[a].iter().zip(&vectors[b]).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 * scale).exp()
    });
    GramMatrix::new(values, (0..n).map(|i| i.to_string()).collect(), vec![0; n])
}

/// Input representation of the RBF baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BaselineInput {
    /// Binarized image, 0 or 1 per pixel.
    #[default]
    Binary,
    /// Gray levels scaled to [0, 1].
    Raw,
}

pub fn image_vector(img: &RasterImage, input: BaselineInput, threshold: u8) -> Vec<f64> {
    match input {
        BaselineInput::Binary => {
            let grid = binarize(img, threshold);
            (0..img.height())
                .flat_map(|y| (0..img.width()).map(move |x| (x, y)))
                .map(|(x, y)| if grid.get(x, y) { 1.0 } else { 0.0 })
                .collect()
        }
        BaselineInput::Raw => img.pixels().iter().map(|&p| p as f64 / 255.0).collect(),
    }
}

/// One line of the results table: a (dataset, α, β) cell with its optional
/// RBF reference on the same dataset. Errors are percentages.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub alpha: usize,
    pub beta: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub selected: String,
    pub rbf: Option<(f64, f64, String)>,
    pub seed: u64,
}

/// Writes the results table as CSV. The RBF columns appear when any row
/// carries a baseline.
pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let with_rbf = rows.iter().any(|r| r.rbf.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["dataset", "alpha", "beta", "mean_error", "std_error", "selected"];
    if with_rbf {
        header.extend(["rbf_mean_error", "rbf_std_error", "rbf_selected"]);
    }
    header.push("seed");
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.dataset.clone(),
            r.alpha.to_string(),
            r.beta.to_string(),
            format!("{:.4}", r.mean_error),
            format!("{:.4}", r.std_error),
            r.selected.clone(),
        ];
        if with_rbf {
            match &r.rbf {
                Some((m, s, sel)) => rec.extend([format!("{m:.4}"), format!("{s:.4}"), sel.clone()]),
                None => rec.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
            }
        }
        rec.push(r.seed.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}
