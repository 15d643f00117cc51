//! Acceptance suite with one PASS/FAIL line per criterion. The process
//! exits nonzero when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use pcgk::charpipe::{image_to_graph, load_idx_images, load_idx_labels, PipelineConfig};
use pcgk::classify::{image_vector, nested_cv, rbf_baseline_gram, svm_train, BaselineInput, Candidate, CvPlan};
use pcgk::covkernels::{
    kernel_b0_model, kernel_b_model, logdet_projection, logdet_projection_rooted, DecomposableModel,
    KernelScaleParams, PdMatrix,
};
use pcgk::engine::{
    brute_force_kernel, dp_kernel, gram_matrices_all_gammas, gram_matrix, min_eigenvalue, normalize_gram,
    KernelConfig,
};
use pcgk::graph::PointCloudGraph;
use pcgk::random::{random_correlation, random_decomposable_model, random_graph, random_pd, random_permutation};
use pcgk::treewalk::{build_patterns, WalkParams, DEFAULT_PATTERN_CAP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_paths() -> (PathBuf, PathBuf) {
    let dir = workspace_root().join("data/mnist-subset");
    (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn cfg(alpha: usize, beta: usize, gamma: usize, lambda: f64, nu: f64) -> KernelConfig {
    KernelConfig {
        walk: WalkParams {
            alpha,
            beta,
            gamma,
            lambda,
            nu,
        },
        scales: KernelScaleParams {
            tau: 0.08,
            kappa: 0.01,
            upsilon: 0.05,
        },
        ..KernelConfig::default()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut pairs = 0;
    let mut worst = 0.0f64;
    for alpha in 1..=2 {
        for beta in 1..=2 {
            for gamma in 1..=3 {
                let c = cfg(alpha, beta, gamma, 0.9, 0.4);
                for _ in 0..17 {
                    let g = random_graph(rng.gen_range(1..=8), 0.35, 6.0, &mut rng);
                    let h = random_graph(rng.gen_range(1..=8), 0.35, 6.0, &mut rng);
                    let d = dp_kernel(&g, &h, &c).map_err(|e| e.to_string())?;
                    let b = brute_force_kernel(&g, &h, &c).map_err(|e| e.to_string())?;
                    let r = rel(d, b);
                    worst = worst.max(r);
                    if r > 1e-8 {
                        return Err(format!("alpha={alpha} beta={beta} gamma={gamma}: dp {d:e} vs brute {b:e}"));
                    }
                    pairs += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 300.0 {
        return Err(format!("{pairs} pairs agree but took {secs:.1}s"));
    }
    Ok(format!("{pairs} pairs, worst relative gap {worst:.1e}, {secs:.1}s"))
}

fn log_det(m: &DMatrix<f64>) -> f64 {
    m.clone().cholesky().expect("PD").l().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

fn pick(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// log|Π_Q(K)| through the precision of the projection: the sum of padded
/// clique inverses minus the padded separator inverses.
fn projected_log_det(k: &DMatrix<f64>, q: &DecomposableModel) -> f64 {
    let n = k.nrows();
    let mut precision = DMatrix::zeros(n, n);
    let mut add = |idx: &[usize], sign: f64| {
        if idx.is_empty() {
            return;
        }
        let inv = pick(k, idx).try_inverse().expect("invertible block");
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                precision[(i, j)] += sign * inv[(a, b)];
            }
        }
    };
    for c in q.cliques() {
        add(c, 1.0);
    }
    for s in q.separators() {
        add(s, -1.0);
    }
    -log_det(&precision)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for t in 0..120 {
        let n = 1 + t % 10;
        let k = random_pd(n, &mut rng);
        let q = random_decomposable_model(n, &mut rng);
        let eq3 = logdet_projection(&k, &q).map_err(|e| e.to_string())?;
        let eq4 = logdet_projection_rooted(&k, &q).map_err(|e| e.to_string())?;
        let direct = projected_log_det(k.matrix(), &q);
        let scale = direct.abs().max(1.0);
        let gap = ((eq3 - direct).abs().max((eq4 - direct).abs())) / scale;
        worst = worst.max(gap);
        if gap > 1e-10 {
            return Err(format!("instance {t} (n={n}): {eq3} / {eq4} / {direct}"));
        }
    }
    Ok(format!("120 instances up to n=10, worst relative gap {worst:.1e}"))
}

fn gram_of<T>(items: &[T], k: impl Fn(&T, &T) -> Result<f64, String>) -> Result<DMatrix<f64>, String> {
    let n = items.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = k(&items[i], &items[j])?;
        }
    }
    Ok(m)
}

fn psd_margin(m: &DMatrix<f64>) -> f64 {
    min_eigenvalue(m) / m.trace()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = f64::INFINITY;
    let mut check = |name: &str, m: &DMatrix<f64>| -> Result<(), String> {
        let margin = psd_margin(m);
        worst = worst.min(margin);
        if margin < -1e-8 {
            return Err(format!("{name}: min eigenvalue / trace = {margin:e}"));
        }
        Ok(())
    };
    for n in [4, 6, 8] {
        let q = random_decomposable_model(n, &mut rng);
        let ks: Vec<PdMatrix> = (0..16).map(|_| random_pd(n, &mut rng)).collect();
        let m = gram_of(&ks, |a, b| kernel_b_model(a, b, &q).map_err(|e| e.to_string()))?;
        check(&format!("kernel_b_model n={n}"), &m)?;
    }
    let graphs: Vec<PointCloudGraph> = (0..22)
        .map(|_| {
            let n = rng.gen_range(2..=8);
            random_graph(n, 0.35, 8.0, &mut rng)
        })
        .collect();
    for (alpha, beta, gamma) in [(1, 1, 4), (1, 2, 4), (2, 2, 3), (1, 4, 6)] {
        let g = gram_matrix(&graphs, &cfg(alpha, beta, gamma, 1.0, 0.1)).map_err(|e| e.to_string())?;
        check(&format!("dp gram alpha={alpha} beta={beta} gamma={gamma}"), &g.values)?;
    }
    let star = DecomposableModel::new(
        6,
        vec![vec![0, 1, 2], vec![2, 3], vec![2, 4], vec![4, 5]],
        vec![None, Some(0), Some(0), Some(2)],
    )
    .map_err(|e| e.to_string())?;
    for q in [DecomposableModel::chain(5), star] {
        let n = q.num_vertices();
        let ks: Vec<PdMatrix> = (0..16).map(|_| random_correlation(n, &mut rng)).collect();
        let m = gram_of(&ks, |a, b| kernel_b0_model(a, b, &q).map_err(|e| e.to_string()))?;
        check(&format!("kernel_b0_model n={n}"), &m)?;
    }
    Ok(format!(
        "3 covariance Grams (16 each), 4 tree-walk Grams (22 graphs), 2 identity-separator Grams; worst min eigenvalue / trace {worst:.1e}"
    ))
}

/// Kernel of walks computed on the product of directed edges: the first
/// step carries the joint Bhattacharyya factor of both endpoints, every
/// further step the factor of the new point conditioned on the previous one.
fn walk_kernel(g: &PointCloudGraph, h: &PointCloudGraph, c: &KernelConfig) -> f64 {
    let pos = |x: &PointCloudGraph, i: usize, j: usize| {
        let d: f64 = x.vertex(i)
            .position
            .iter()
            .zip(&x.vertex(j).position)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        (-c.scales.tau * d).exp() + if i == j { c.scales.kappa } else { 0.0 }
    };
    let attr = |a: usize, b: usize| {
        let d: f64 = g.vertex(a)
            .attribute
            .iter()
            .zip(&h.vertex(b).attribute)
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        (-c.scales.upsilon * d).exp()
    };
    let joint = |a: usize, b: usize, x: usize, y: usize| {
        let k = DMatrix::from_row_slice(2, 2, &[pos(g, a, a), pos(g, a, b), pos(g, b, a), pos(g, b, b)]);
        let l = DMatrix::from_row_slice(2, 2, &[pos(h, x, x), pos(h, x, y), pos(h, y, x), pos(h, y, y)]);
        (0.5 * log_det(&k) + 0.5 * log_det(&l) - log_det(&((&k + &l) * 0.5))).exp()
    };
    let cond = |a: usize, b: usize, x: usize, y: usize| {
        let (ka, kb) = (pos(g, a, b) / pos(g, a, a), pos(g, b, b) - pos(g, a, b).powi(2) / pos(g, a, a));
        let (la, lb) = (pos(h, x, y) / pos(h, x, x), pos(h, y, y) - pos(h, x, y).powi(2) / pos(h, x, x));
        kb.sqrt() * lb.sqrt() / (0.5 * (kb + lb) + 0.25 * (ka - la).powi(2))
    };
    let (lambda, nu) = (c.walk.lambda, c.walk.nu);
    let mut total = 0.0;
    for a in 0..g.len() {
        for x in 0..h.len() {
            let (k, l) = (pos(g, a, a), pos(h, x, x));
            total += lambda * nu * attr(a, x) * k.sqrt() * l.sqrt() / (0.5 * (k + l));
        }
    }
    let arcs = |x: &PointCloudGraph| -> Vec<(usize, usize)> {
        (0..x.len()).flat_map(|i| x.neighbors(i).iter().map(move |&j| (i, j))).collect()
    };
    let (ga, ha) = (arcs(g), arcs(h));
    let mut v: Vec<f64> = Vec::new();
    for &(a, b) in &ga {
        for &(x, y) in &ha {
            v.push(joint(a, b, x, y) * attr(a, x) * attr(b, y));
        }
    }
    for m in 2..=c.walk.gamma {
        total += lambda.powi(m as i32) * nu * v.iter().sum::<f64>();
        if m == c.walk.gamma {
            break;
        }
        let mut next = vec![0.0; v.len()];
        for (p, &(_, b)) in ga.iter().enumerate() {
            for (r, &(_, y)) in ha.iter().enumerate() {
                let w = v[p * ha.len() + r];
                if w == 0.0 {
                    continue;
                }
                for (p2, &(b2, e)) in ga.iter().enumerate() {
                    if b2 != b {
                        continue;
                    }
                    for (r2, &(y2, f)) in ha.iter().enumerate() {
                        if y2 == y {
                            next[p2 * ha.len() + r2] += w * cond(b, e, y, f) * attr(e, f);
                        }
                    }
                }
            }
        }
        v = next;
    }
    total
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for t in 0..50 {
        let gamma = 1 + t % 6;
        let c = cfg(1, 1, gamma, 0.8, 0.3);
        let g = random_graph(rng.gen_range(1..=9), 0.35, 6.0, &mut rng);
        let h = random_graph(rng.gen_range(1..=9), 0.35, 6.0, &mut rng);
        let d = dp_kernel(&g, &h, &c).map_err(|e| e.to_string())?;
        let w = walk_kernel(&g, &h, &c);
        let r = rel(d, w);
        worst = worst.max(r);
        if r > 1e-10 {
            return Err(format!("pair {t} (gamma={gamma}): dp {d:e} vs walk kernel {w:e}"));
        }
    }
    Ok(format!("50 pairs, worst relative gap {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for t in 0..50 {
        let c = cfg(1 + t % 2, 1 + t % 4, 2 + t % 3, 1.0, 0.1);
        let g = random_graph(rng.gen_range(2..=8), 0.35, 6.0, &mut rng);
        let h = random_graph(rng.gen_range(2..=8), 0.35, 6.0, &mut rng);
        let pg = g.permute(&random_permutation(g.len(), &mut rng)).map_err(|e| e.to_string())?;
        let ph = h.permute(&random_permutation(h.len(), &mut rng)).map_err(|e| e.to_string())?;
        let a = dp_kernel(&g, &h, &c).map_err(|e| e.to_string())?;
        let b = dp_kernel(&pg, &ph, &c).map_err(|e| e.to_string())?;
        let r = rel(a, b);
        worst = worst.max(r);
        if r > 1e-12 {
            return Err(format!("instance {t}: {a:e} vs {b:e}"));
        }
    }
    Ok(format!("50 relabelled pairs, worst relative change {worst:.1e}"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let (img_path, lab_path) = mnist_paths();
        let images = load_idx_images(&img_path).map_err(|e| e.to_string())?;
        let labels = load_idx_labels(&lab_path).map_err(|e| e.to_string())?;
        let pipeline = PipelineConfig::default();
        let mut per_class = [0usize; 10];
        let (mut graphs, mut ys, mut vectors) = (Vec::new(), Vec::new(), Vec::new());
        for (img, &l) in images.iter().zip(&labels) {
            if per_class[l as usize] == 20 {
                continue;
            }
            per_class[l as usize] += 1;
            graphs.push(image_to_graph(img, &pipeline).map_err(|e| e.to_string())?);
            vectors.push(image_vector(img, BaselineInput::Binary, pipeline.threshold));
            ys.push(l);
        }
        let plan = CvPlan::default();

        let rbf: Vec<Candidate> = [2.0, 4.0, 6.0, 8.0, 12.0, 16.0]
            .iter()
            .map(|&s| Candidate {
                params: vec![("sigma".into(), s.to_string())],
                gram: rbf_baseline_gram(&vectors, s).expect("valid sigma").values,
            })
            .collect();
        let rbf_report = nested_cv(&rbf, &ys, &plan).map_err(|e| e.to_string())?;

        let gammas = [1usize, 2, 4, 8, 16, 24];
        let mut all = Vec::new();
        let mut per_beta = Vec::new();
        for beta in [1usize, 2, 4] {
            let mut cands = Vec::new();
            for nu in [0.1, 0.01] {
                for tau in [0.05, 0.01, 0.1] {
                    for upsilon in [0.05, 0.01, 0.1] {
                        let c = KernelConfig {
                            walk: WalkParams::new(1, beta, 24, 1.0, nu).expect("valid"),
                            scales: KernelScaleParams::new(tau, 0.001, upsilon).expect("valid"),
                            normalize: false,
                            reduced_patterns: false,
                            pattern_cap: DEFAULT_PATTERN_CAP,
                        };
                        let grams = gram_matrices_all_gammas(&graphs, &c).map_err(|e| e.to_string())?;
                        for &gamma in &gammas {
                            cands.push(Candidate {
                                params: vec![
                                    ("beta".into(), beta.to_string()),
                                    ("gamma".into(), gamma.to_string()),
                                    ("nu".into(), nu.to_string()),
                                    ("tau".into(), tau.to_string()),
                                    ("upsilon".into(), upsilon.to_string()),
                                ],
                                gram: normalize_gram(&grams[gamma - 1]),
                            });
                        }
                    }
                }
            }
            let r = nested_cv(&cands, &ys, &plan).map_err(|e| e.to_string())?;
            per_beta.push(format!("beta={beta}: {:.1}±{:.1}", 100.0 * r.mean_error, 100.0 * r.std_error));
            all.extend(cands);
        }
        let tw = nested_cv(&all, &ys, &plan).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let detail = format!(
            "tree-walk (beta selected by inner CV) {:.1}±{:.1} vs RBF {:.1}±{:.1} [{}; selected {}]; {secs:.0}s",
            100.0 * tw.mean_error,
            100.0 * tw.std_error,
            100.0 * rbf_report.mean_error,
            100.0 * rbf_report.std_error,
            per_beta.join(", "),
            tw.selected_modes(&all),
        );
        if tw.mean_error < rbf_report.mean_error && secs <= 7200.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn criterion_7() -> Outcome {
    let (img_path, _) = mnist_paths();
    let images = load_idx_images(&img_path).map_err(|e| e.to_string())?;
    let pipeline = PipelineConfig::default();
    let (mut vertices, mut patterns, mut count) = (0usize, 0usize, 0usize);
    for img in &images {
        let g = image_to_graph(img, &pipeline).map_err(|e| e.to_string())?;
        vertices += g.len();
        patterns += build_patterns(&g, 1, 4, DEFAULT_PATTERN_CAP).map_err(|e| e.to_string())?.len();
        count += 1;
    }
    let mean_v = vertices as f64 / count as f64;
    let mean_p = patterns as f64 / count as f64;
    let detail = format!("{count} images: mean vertices {mean_v:.1}, mean |V_1,4| {mean_p:.1}");
    if (10.0..=30.0).contains(&mean_v) && (15.0..=80.0).contains(&mean_p) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Best dual objective over every support set whose equality-constrained
/// stationary point is nonnegative.
fn qp_by_enumeration(k: &DMatrix<f64>, y: &[f64], ridge: f64) -> f64 {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * (k[(i, j)] + if i == j { ridge } else { 0.0 }));
    let mut best = 0.0f64;
    for mask in 1u32..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let m = s.len();
        let mut a = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for (r, &i) in s.iter().enumerate() {
            for (c, &j) in s.iter().enumerate() {
                a[(r, c)] = q[(i, j)];
            }
            a[(r, m)] = y[i];
            a[(m, r)] = y[i];
            rhs[r] = 1.0;
        }
        let Some(sol) = a.lu().solve(&rhs) else { continue };
        if sol.iter().take(m).any(|&v| v < 0.0) {
            continue;
        }
        let mut alpha = DVector::zeros(n);
        for (r, &i) in s.iter().enumerate() {
            alpha[i] = sol[r];
        }
        best = best.max(alpha.sum() - 0.5 * alpha.dot(&(&q * &alpha)));
    }
    best
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    for t in 0..20 {
        let x: Vec<Vec<f64>> = (0..10).map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let width = rng.gen_range(0.5..2.0);
        let k = DMatrix::from_fn(10, 10, |i, j| {
            let d: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum();
            (-d / width).exp()
        });
        let mut y: Vec<f64> = (0..10).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let c = [0.1, 1.0, 10.0, 100.0][t % 4];
        let m = svm_train(&k, &y, c).map_err(|e| e.to_string())?;
        let r = qp_by_enumeration(&k, &y, 0.5 / c);
        let gap = (m.objective - r).abs();
        worst = worst.max(gap);
        if gap > 1e-6 {
            return Err(format!("problem {t} (C={c}): solver {} vs reference {r}", m.objective));
        }
    }
    Ok(format!("20 problems, worst objective gap {worst:.1e}"))
}

fn pcgk(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pcgk"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("pcgk {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn dir_contents(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, fs::read(&path).map_err(|e| e.to_string())?));
    }
    out.sort();
    Ok(out)
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    let (img_path, lab_path) = mnist_paths();
    let (img, lab) = (img_path.to_string_lossy().into_owned(), lab_path.to_string_lossy().into_owned());

    let v1 = pcgk(&["verify", "quick", "--workers", "1"])?;
    let v4 = pcgk(&["verify", "quick", "--workers", "4"])?;
    let v4b = pcgk(&["verify", "quick", "--workers", "4"])?;
    if v1 != v4 || v4 != v4b {
        return Err("verify quick output differs between runs".into());
    }

    for d in ["g1", "g2"] {
        pcgk(&["preprocess", "--images", &img, "--labels", &lab, "--per-class", "3", "--out", &t(d)])?;
    }
    if dir_contents(&tmp.path().join("g1"))? != dir_contents(&tmp.path().join("g2"))? {
        return Err("preprocess output differs between runs".into());
    }

    let mut grams = Vec::new();
    for (w, name) in [("1", "a.gram"), ("4", "b.gram"), ("4", "c.gram")] {
        pcgk(&["gram", &t("g1"), "--out", &t(name), "--workers", w, "--beta", "3", "--gamma", "5", "--normalize"])?;
        grams.push(fs::read(t(name)).map_err(|e| e.to_string())?);
    }
    if grams[0] != grams[1] || grams[1] != grams[2] {
        return Err("gram output differs across runs or worker counts".into());
    }

    let config = format!(
        "[data]\nname = mnist\nimages = {img}\nlabels = {lab}\nper_class = 6\n\n\
         [kernel]\nalpha = 1\nbeta = 1,2\ngamma = 1,3\nnu = 0.1\ntau = 0.05\nupsilon = 0.05,0.01\n\n\
         [cv]\nouter_folds = 3\ninner_folds = 2\nc = 1,10\nseed = 17\n\n\
         [rbf]\nenabled = true\nsigma = 4,8\n"
    );
    fs::write(t("exp.ini"), config).map_err(|e| e.to_string())?;
    let mut results = Vec::new();
    for (w, name) in [("1", "r1.csv"), ("4", "r2.csv"), ("4", "r3.csv")] {
        let stdout = pcgk(&["experiment", &t("exp.ini"), "--out", &t(name), "--workers", w])?;
        results.push((stdout, fs::read(t(name)).map_err(|e| e.to_string())?));
    }
    if results[0] != results[1] || results[1] != results[2] {
        return Err("experiment output differs across runs or worker counts".into());
    }
    let rows = String::from_utf8_lossy(&results[0].1).lines().count() - 1;
    Ok(format!(
        "verify quick, preprocess, gram and experiment ({rows} result rows) identical across reruns and 1/4 workers"
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    // Numeric arguments select criteria, e.g. `cargo test --test acceptance -- 4 8`.
    let only: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", criterion_1),
        ("determinant identities", criterion_2),
        ("positivity", criterion_3),
        ("walk-kernel reduction", criterion_4),
        ("isomorphism invariance", criterion_5),
        ("desk-scale MNIST experiment", criterion_6),
        ("pipeline sanity", criterion_7),
        ("SVM against QP reference", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
