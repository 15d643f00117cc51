use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use pcgk::covkernels::KernelScaleParams;
use pcgk::engine::{gram_matrix, GramMatrix, KernelConfig};
use pcgk::graph::load_graph;
use pcgk::treewalk::{WalkParams, DEFAULT_PATTERN_CAP};

use crate::preprocess::read_manifest;

#[derive(clap::Args)]
pub struct Args {
    /// Directory written by `preprocess` (graph files plus manifest.csv).
    pub graphs: PathBuf,
    /// Output Gram file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(clap::Args, Clone, Debug)]
pub struct KernelArgs {
    /// Arity of tree-walks.
    #[arg(long, default_value_t = 1)]
    pub alpha: usize,
    /// Order of tree-walks.
    #[arg(long, default_value_t = 2)]
    pub beta: usize,
    /// Depth of tree-walks.
    #[arg(long, default_value_t = 4)]
    pub gamma: usize,
    /// Penalization on the number of nodes.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Penalization on the number of leaves.
    #[arg(long, default_value_t = 0.1)]
    pub nu: f64,
    /// Bandwidth of the kernel on positions.
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    /// Ridge of the kernel on positions.
    #[arg(long, default_value_t = 0.001)]
    pub kappa: f64,
    /// Bandwidth of the kernel on attributes.
    #[arg(long, default_value_t = 0.05)]
    pub upsilon: f64,
    /// Cosine-normalize the Gram matrix (unit diagonal).
    #[arg(long)]
    pub normalize: bool,
    /// Use ancestor chains as states (a cheaper, different kernel).
    #[arg(long)]
    pub reduced_patterns: bool,
    /// Maximal number of subtree patterns per graph.
    #[arg(long, default_value_t = DEFAULT_PATTERN_CAP)]
    pub pattern_cap: usize,
}

impl KernelArgs {
    pub fn config(&self) -> Result<KernelConfig> {
        let cfg = KernelConfig {
            walk: WalkParams::new(self.alpha, self.beta, self.gamma, self.lambda, self.nu)?,
            scales: KernelScaleParams::new(self.tau, self.kappa, self.upsilon)?,
            normalize: self.normalize,
            reduced_patterns: self.reduced_patterns,
            pattern_cap: self.pattern_cap,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(args: &Args) -> Result<()> {
    let cfg = args.kernel.config()?;
    let entries = read_manifest(&args.graphs)?;
    let graphs = entries
        .iter()
        .map(|(path, _)| load_graph(path).with_context(|| format!("loading graph {}", path.display())))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u32> = entries.iter().map(|(_, l)| *l).collect();
    let n = graphs.len();
    eprintln!(
        "gram: {n} graphs, {} pairs, alpha={} beta={} gamma={} on {} workers",
        n * (n + 1) / 2,
        cfg.walk.alpha,
        cfg.walk.beta,
        cfg.walk.gamma,
        rayon::current_num_threads()
    );
    let start = Instant::now();
    let g = gram_matrix(&graphs, &cfg)?;
    let ids = entries
        .iter()
        .map(|(p, _)| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let gram = GramMatrix::new(g.values, ids, labels)?;
    fs::write(&args.out, gram.to_gram_string()).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("gram: done in {:.2}s, wrote {}", start.elapsed().as_secs_f64(), args.out.display());
    Ok(())
}
