use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pcgk::charpipe::image_to_graph;
use pcgk::classify::{image_vector, nested_cv, rbf_baseline_gram, write_results_csv, Candidate, CvReport, ResultRow};
use pcgk::covkernels::KernelScaleParams;
use pcgk::engine::{gram_matrices_all_gammas, normalize_gram, KernelConfig};
use pcgk::treewalk::{WalkParams, DEFAULT_PATTERN_CAP};
use pcgk::Error;

use crate::config::{ExperimentConfig, KernelGrid};
use crate::preprocess::{load_idx_inputs, select};

#[derive(clap::Args)]
pub struct Args {
    /// Experiment config file.
    pub config: PathBuf,
    /// Results CSV (overrides [output] results).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the fold splits (overrides [cv] seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Every (λ, ν, τ, κ, υ) combination of the grid, in nested list order.
fn scale_points(k: &KernelGrid) -> Vec<(f64, f64, f64, f64, f64)> {
    let mut out = Vec::new();
    for &lambda in &k.lambda {
        for &nu in &k.nu {
            for &tau in &k.tau {
                for &kappa in &k.kappa {
                    for &upsilon in &k.upsilon {
                        out.push((lambda, nu, tau, kappa, upsilon));
                    }
                }
            }
        }
    }
    out
}

fn tree_walk_candidates(
    graphs: &[pcgk::graph::PointCloudGraph],
    grid: &KernelGrid,
    alpha: usize,
    beta: usize,
) -> Result<Vec<Candidate>> {
    let gamma_max = *grid.gamma.iter().max().expect("grid validated");
    let mut out = Vec::new();
    for (lambda, nu, tau, kappa, upsilon) in scale_points(grid) {
        let cfg = KernelConfig {
            walk: WalkParams::new(alpha, beta, gamma_max, lambda, nu)?,
            scales: KernelScaleParams::new(tau, kappa, upsilon)?,
            normalize: false,
            reduced_patterns: grid.reduced_patterns,
            pattern_cap: DEFAULT_PATTERN_CAP,
        };
        let grams = gram_matrices_all_gammas(graphs, &cfg)?;
        for &gamma in &grid.gamma {
            let g = &grams[gamma - 1];
            out.push(Candidate {
                params: vec![
                    ("gamma".into(), gamma.to_string()),
                    ("lambda".into(), lambda.to_string()),
                    ("nu".into(), nu.to_string()),
                    ("tau".into(), tau.to_string()),
                    ("kappa".into(), kappa.to_string()),
                    ("upsilon".into(), upsilon.to_string()),
                ],
                gram: if grid.normalize { normalize_gram(g) } else { g.clone() },
            });
        }
    }
    Ok(out)
}

fn summary(r: &CvReport) -> (f64, f64) {
    (100.0 * r.mean_error, 100.0 * r.std_error)
}

pub fn run(args: &Args) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.plan.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.results = out.clone();
    }
    let start = Instant::now();

    let inputs = load_idx_inputs(&cfg.images, Some(&cfg.labels))?;
    let inputs = select(inputs, |i| i.label, cfg.per_class, None);
    let mut graphs = Vec::new();
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    for input in &inputs {
        match image_to_graph(&input.image, &cfg.pipeline) {
            Ok(g) => {
                graphs.push(g);
                labels.push(input.label);
                if let Some(rbf) = &cfg.rbf {
                    vectors.push(image_vector(&input.image, rbf.input, cfg.pipeline.threshold));
                }
            }
            Err(Error::EmptySkeleton) => eprintln!("experiment: skipping {} (empty skeleton)", input.source),
            Err(e) => return Err(e).with_context(|| format!("processing {}", input.source)),
        }
    }
    if graphs.is_empty() {
        bail!("no usable images");
    }
    eprintln!(
        "experiment: {} items, {} workers, seed {}",
        graphs.len(),
        rayon::current_num_threads(),
        cfg.plan.seed
    );

    let rbf = match &cfg.rbf {
        Some(settings) => {
            let cands = settings
                .sigma
                .iter()
                .map(|&s| {
                    Ok(Candidate {
                        params: vec![("sigma".into(), s.to_string())],
                        gram: rbf_baseline_gram(&vectors, s)?.values,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let report = nested_cv(&cands, &labels, &cfg.plan)?;
            let (m, s) = summary(&report);
            eprintln!("experiment: rbf {m:.2} ± {s:.2} [{:.1}s]", start.elapsed().as_secs_f64());
            Some((m, s, report.selected_modes(&cands)))
        }
        None => None,
    };

    let mut rows = Vec::new();
    for &alpha in &cfg.kernel.alpha {
        for &beta in &cfg.kernel.beta {
            let cands = tree_walk_candidates(&graphs, &cfg.kernel, alpha, beta)?;
            let report = nested_cv(&cands, &labels, &cfg.plan)?;
            let (m, s) = summary(&report);
            eprintln!(
                "experiment: alpha={alpha} beta={beta} {m:.2} ± {s:.2} [{:.1}s]",
                start.elapsed().as_secs_f64()
            );
            rows.push(ResultRow {
                dataset: cfg.name.clone(),
                alpha,
                beta,
                mean_error: m,
                std_error: s,
                selected: report.selected_modes(&cands),
                rbf: rbf.clone(),
                seed: cfg.plan.seed,
            });
        }
    }

    let mut buf = Vec::new();
    write_results_csv(&rows, &mut buf)?;
    if let Some(dir) = cfg.results.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&cfg.results, &buf).with_context(|| format!("writing {}", cfg.results.display()))?;
    print!("{}", String::from_utf8_lossy(&buf));
    eprintln!(
        "experiment: done in {:.1}s, wrote {}",
        start.elapsed().as_secs_f64(),
        cfg.results.display()
    );
    Ok(())
}
