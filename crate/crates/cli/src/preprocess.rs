use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pcgk::charpipe::{image_to_graph, load_idx_images, load_idx_labels, load_pgm, PipelineConfig, RasterImage};
use pcgk::graph::save_graph;
use pcgk::Error;

pub const MANIFEST: &str = "manifest.csv";

#[derive(clap::Args)]
pub struct Args {
    /// IDX image file (e.g. train-images-idx3-ubyte).
    #[arg(long, conflicts_with = "pgm")]
    pub images: Option<PathBuf>,
    /// IDX label file matching --images.
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// PGM image files.
    #[arg(long, num_args = 1..)]
    pub pgm: Vec<PathBuf>,
    /// Class label given to every PGM input.
    #[arg(long, default_value_t = 0)]
    pub label: u32,
    /// Output directory for graph files and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the first N images of each class, in file order.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Keep only the first N images.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Record failing images in the manifest instead of aborting.
    #[arg(long)]
    pub continue_on_error: bool,
}

#[derive(clap::Args, Clone, Debug)]
pub struct PipelineArgs {
    /// Foreground threshold on gray levels.
    #[arg(long, default_value_t = 128)]
    pub threshold: u8,
    /// Arc length between retained skeleton samples, in pixels.
    #[arg(long, default_value_t = 4.0)]
    pub spacing: f64,
    /// Skeleton components with fewer pixels are dropped.
    #[arg(long, default_value_t = 3)]
    pub min_component: usize,
}

impl PipelineArgs {
    pub fn config(&self) -> PipelineConfig {
        PipelineConfig {
            threshold: self.threshold,
            spacing: self.spacing,
            min_component: self.min_component,
        }
    }
}

/// A source image with its label and a printable origin.
pub struct Input {
    pub source: String,
    pub label: u32,
    pub image: RasterImage,
}

/// First `per_class` items of every class, then the first `limit` overall.
pub fn select<T>(items: Vec<T>, label: impl Fn(&T) -> u32, per_class: Option<usize>, limit: Option<usize>) -> Vec<T> {
    let mut seen = std::collections::HashMap::new();
    items
        .into_iter()
        .filter(|it| match per_class {
            None => true,
            Some(k) => {
                let n = seen.entry(label(it)).or_insert(0usize);
                *n += 1;
                *n <= k
            }
        })
        .take(limit.unwrap_or(usize::MAX))
        .collect()
}

pub fn load_idx_inputs(images: &Path, labels: Option<&Path>) -> Result<Vec<Input>> {
    let imgs = load_idx_images(images).with_context(|| format!("reading {}", images.display()))?;
    let labels = match labels {
        Some(p) => {
            let l = load_idx_labels(p).with_context(|| format!("reading {}", p.display()))?;
            if l.len() != imgs.len() {
                bail!("{} has {} labels for {} images", p.display(), l.len(), imgs.len());
            }
            l
        }
        None => vec![0; imgs.len()],
    };
    Ok(imgs
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (image, label))| Input {
            source: format!("{}#{i}", images.display()),
            label,
            image,
        })
        .collect())
}

pub fn run(args: &Args) -> Result<()> {
    let cfg = args.pipeline.config();
    cfg.validate()?;
    let inputs = if let Some(images) = &args.images {
        load_idx_inputs(images, args.labels.as_deref())?
    } else if !args.pgm.is_empty() {
        args.pgm
            .iter()
            .map(|p| {
                Ok(Input {
                    source: p.display().to_string(),
                    label: args.label,
                    image: load_pgm(p).with_context(|| format!("reading {}", p.display()))?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        bail!("no input: pass --images or --pgm");
    };
    let inputs = select(inputs, |i| i.label, args.per_class, args.limit);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut manifest = csv::Writer::from_path(args.out.join(MANIFEST))?;
    manifest.write_record(["index", "file", "label", "vertices", "edges", "status", "source"])?;
    let (mut written, mut skipped) = (0, 0);
    for (index, input) in inputs.iter().enumerate() {
        let (file, vertices, edges, status) = match image_to_graph(&input.image, &cfg) {
            Ok(g) => {
                let name = format!("{index:05}.pcg");
                save_graph(&g, args.out.join(&name)).with_context(|| format!("writing {name}"))?;
                written += 1;
                (name, g.len().to_string(), g.edges().len().to_string(), "ok".to_string())
            }
            Err(Error::EmptySkeleton) => {
                skipped += 1;
                (String::new(), String::new(), String::new(), "skipped: empty skeleton".to_string())
            }
            Err(e) if args.continue_on_error => {
                skipped += 1;
                (String::new(), String::new(), String::new(), format!("error: {e}"))
            }
            Err(e) => return Err(e).with_context(|| format!("processing {}", input.source)),
        };
        manifest.write_record([
            index.to_string(),
            file,
            input.label.to_string(),
            vertices,
            edges,
            status,
            input.source.clone(),
        ])?;
    }
    manifest.flush()?;
    eprintln!("preprocess: {written} graphs written, {skipped} skipped, to {}", args.out.display());
    Ok(())
}

/// Graph files and labels of the `ok` rows of a manifest.
pub fn read_manifest(dir: &Path) -> Result<Vec<(PathBuf, u32)>> {
    let path = dir.join(MANIFEST);
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), line + 1))?;
        if rec.get(5) != Some("ok") {
            continue;
        }
        let file = rec.get(1).unwrap_or_default();
        let label: u32 = rec
            .get(2)
            .unwrap_or_default()
            .parse()
            .with_context(|| format!("{}: bad label on row {}", path.display(), line + 1))?;
        out.push((dir.join(file), label));
    }
    Ok(out)
}
