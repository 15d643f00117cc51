use std::time::Instant;

use anyhow::Result;
use nalgebra::{DMatrix, DVector};
use pcgk::classify::svm_train;
use pcgk::covkernels::{kernel_b_model, logdet_projection, logdet_projection_rooted, project_onto_model};
use pcgk::engine::{brute_force_kernel, check_psd, dp_kernel, gram_matrix, KernelConfig};
use pcgk::random::{random_decomposable_model, random_graph, random_pd, random_permutation};
use pcgk::treewalk::WalkParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    Quick,
    Full,
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(value_enum)]
    pub scale: Scale,
    /// Seed of the random instances.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

struct Suite {
    name: &'static str,
    passed: usize,
    total: usize,
    first_failure: Option<String>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Suite {
            name,
            passed: 0,
            total: 0,
            first_failure: None,
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else if self.first_failure.is_none() {
            self.first_failure = Some(detail());
        }
    }

    fn ok(&self) -> bool {
        self.passed == self.total
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn kernel_cfg(alpha: usize, beta: usize, gamma: usize) -> KernelConfig {
    KernelConfig {
        walk: WalkParams {
            alpha,
            beta,
            gamma,
            lambda: 0.9,
            nu: 0.5,
        },
        ..KernelConfig::default()
    }
}

fn oracle_equivalence(per_cell: usize, max_n: usize, rng: &mut ChaCha8Rng) -> Suite {
    let mut s = Suite::new("oracle-equivalence");
    for alpha in 1..=2 {
        for beta in 1..=2 {
            for gamma in 1..=3 {
                let cfg = kernel_cfg(alpha, beta, gamma);
                for _ in 0..per_cell {
                    let g = random_graph(rng.gen_range(1..=max_n), 0.4, 6.0, rng);
                    let h = random_graph(rng.gen_range(1..=max_n), 0.4, 6.0, rng);
                    let res = dp_kernel(&g, &h, &cfg).and_then(|d| Ok((d, brute_force_kernel(&g, &h, &cfg)?)));
                    match res {
                        Ok((d, b)) => s.check(rel(d, b) <= 1e-8, || {
                            format!("alpha={alpha} beta={beta} gamma={gamma}: dp {d:e} vs brute {b:e}")
                        }),
                        Err(e) => s.check(false, || format!("alpha={alpha} beta={beta} gamma={gamma}: {e}")),
                    }
                }
            }
        }
    }
    s
}

fn determinant_identities(count: usize, max_n: usize, rng: &mut ChaCha8Rng) -> Suite {
    let mut s = Suite::new("determinant-identities");
    for _ in 0..count {
        let n = rng.gen_range(1..=max_n);
        let k = random_pd(n, rng);
        let q = random_decomposable_model(n, rng);
        let res = (|| {
            Ok::<_, pcgk::Error>((
                logdet_projection(&k, &q)?,
                logdet_projection_rooted(&k, &q)?,
                project_onto_model(&k, &q)?.log_det(),
            ))
        })();
        match res {
            Ok((a, b, c)) => s.check(rel(a, b) <= 1e-10 && rel(a, c) <= 1e-10, || {
                format!("n={n}: {a} / {b} / {c}")
            }),
            Err(e) => s.check(false, || format!("n={n}: {e}")),
        }
    }
    s
}

fn positivity(covs: usize, graphs: usize, rng: &mut ChaCha8Rng) -> Suite {
    let mut s = Suite::new("positivity");
    for n in [3, 5] {
        let q = random_decomposable_model(n, rng);
        let ks: Vec<_> = (0..covs).map(|_| random_pd(n, rng)).collect();
        let mut gram = DMatrix::zeros(covs, covs);
        let mut err = None;
        for i in 0..covs {
            for j in 0..covs {
                match kernel_b_model(&ks[i], &ks[j], &q) {
                    Ok(v) => gram[(i, j)] = v,
                    Err(e) => err = Some(e.to_string()),
                }
            }
        }
        match err {
            Some(e) => s.check(false, || format!("kernel_b_model n={n}: {e}")),
            None => s.check(check_psd(&gram).is_ok(), || format!("kernel_b_model n={n}: not PSD")),
        }
    }
    let gs: Vec<_> = (0..graphs)
        .map(|_| {
            let n = rng.gen_range(2..=7);
            random_graph(n, 0.4, 8.0, rng)
        })
        .collect();
    for (alpha, beta, gamma) in [(1, 1, 3), (1, 2, 3), (2, 2, 2)] {
        match gram_matrix(&gs, &kernel_cfg(alpha, beta, gamma)) {
            Ok(g) => s.check(g.check_psd().is_ok(), || {
                format!("dp gram alpha={alpha} beta={beta} gamma={gamma}: min eigenvalue {:e}", g.min_eigenvalue())
            }),
            Err(e) => s.check(false, || format!("dp gram: {e}")),
        }
    }
    s
}

fn isomorphism_invariance(count: usize, rng: &mut ChaCha8Rng) -> Suite {
    let mut s = Suite::new("isomorphism-invariance");
    for t in 0..count {
        let cfg = kernel_cfg(1 + t % 2, 1 + t % 3, 3);
        let g = random_graph(rng.gen_range(2..=7), 0.4, 6.0, rng);
        let h = random_graph(rng.gen_range(2..=7), 0.4, 6.0, rng);
        let perm = random_permutation(g.len(), rng);
        let res = g
            .permute(&perm)
            .and_then(|gp| Ok((dp_kernel(&g, &h, &cfg)?, dp_kernel(&gp, &h, &cfg)?)));
        match res {
            Ok((a, b)) => s.check(rel(a, b) <= 1e-12, || format!("instance {t}: {a:e} vs {b:e}")),
            Err(e) => s.check(false, || format!("instance {t}: {e}")),
        }
    }
    s
}

/// Best dual objective over all support sets whose KKT system has a
/// nonnegative solution.
fn qp_reference(k: &DMatrix<f64>, y: &[f64], ridge: f64) -> f64 {
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

fn svm_reference(count: usize, rng: &mut ChaCha8Rng) -> Suite {
    let mut s = Suite::new("svm-qp-reference");
    for t in 0..count {
        let n = 10;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let k = DMatrix::from_fn(n, n, |i, j| x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum::<f64>());
        let mut y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let c = [0.1, 1.0, 10.0, 100.0][t % 4];
        match svm_train(&k, &y, c) {
            Ok(m) => {
                let r = qp_reference(&k, &y, 0.5 / c);
                s.check((m.objective - r).abs() <= 1e-6, || format!("instance {t}: smo {} vs qp {r}", m.objective))
            }
            Err(e) => s.check(false, || format!("instance {t}: {e}")),
        }
    }
    s
}

pub fn run(args: &Args) -> Result<bool> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let quick = args.scale == Scale::Quick;
    let suites = [
        oracle_equivalence(if quick { 4 } else { 20 }, if quick { 6 } else { 8 }, &mut rng),
        determinant_identities(if quick { 30 } else { 120 }, if quick { 6 } else { 10 }, &mut rng),
        positivity(if quick { 8 } else { 15 }, if quick { 10 } else { 20 }, &mut rng),
        isomorphism_invariance(if quick { 10 } else { 50 }, &mut rng),
        svm_reference(if quick { 5 } else { 20 }, &mut rng),
    ];
    let mut all_ok = true;
    for s in &suites {
        println!(
            "{:<24} {:>4}/{:<4} {}",
            s.name,
            s.passed,
            s.total,
            if s.ok() { "PASS" } else { "FAIL" }
        );
        if let Some(f) = &s.first_failure {
            println!("  first failure: {f}");
        }
        all_ok &= s.ok();
    }
    println!("overall: {}", if all_ok { "PASS" } else { "FAIL" });
    eprintln!("verify: {:.1}s", start.elapsed().as_secs_f64());
    Ok(all_ok)
}
