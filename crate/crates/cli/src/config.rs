//! Experiment configuration: `key = value` lines grouped in `[sections]`,
//! lists written as comma-separated values. Relative paths are resolved
//! against the directory of the config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ini::{Ini, Properties};
use pcgk::charpipe::PipelineConfig;
use pcgk::classify::{BaselineInput, CvPlan};

#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub gamma: Vec<usize>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub tau: Vec<f64>,
    pub kappa: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub normalize: bool,
    pub reduced_patterns: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbfSettings {
    pub sigma: Vec<f64>,
    pub input: BaselineInput,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub images: PathBuf,
    pub labels: PathBuf,
    pub per_class: Option<usize>,
    pub pipeline: PipelineConfig,
    pub kernel: KernelGrid,
    pub plan: CvPlan,
    pub rbf: Option<RbfSettings>,
    pub results: PathBuf,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("data", &["name", "images", "labels", "per_class"]),
    ("pipeline", &["threshold", "spacing", "min_component"]),
    (
        "kernel",
        &[
            "alpha",
            "beta",
            "gamma",
            "lambda",
            "nu",
            "tau",
            "kappa",
            "upsilon",
            "normalize",
            "reduced_patterns",
        ],
    ),
    ("cv", &["outer_folds", "inner_folds", "c", "seed"]),
    ("rbf", &["enabled", "sigma", "input"]),
    ("output", &["results"]),
];

struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| anyhow!("[{}] {key} = {v:?}: {e}", self.name)),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let items = v
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|e| anyhow!("[{}] {key}: bad item {s:?}: {e}", self.name))
                    })
                    .collect::<Result<Vec<T>>>()?;
                if items.is_empty() {
                    bail!("[{}] {key} is empty", self.name);
                }
                Ok(items)
            }
        }
    }

    fn path(&self, key: &str, base: &Path) -> Result<PathBuf> {
        let v = self
            .raw(key)
            .ok_or_else(|| anyhow!("[{}] {key} is required", self.name))?;
        Ok(base.join(v))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let ini = Ini::load_from_str(text)?;
        for (section, props) in ini.iter() {
            let Some(name) = section else {
                if let Some((k, _)) = props.iter().next() {
                    bail!("key {k:?} outside of any section");
                }
                continue;
            };
            let known = KNOWN
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| anyhow!("unknown section [{name}]"))?;
            for (k, _) in props.iter() {
                if !known.1.contains(&k) {
                    bail!("unknown key {k:?} in [{name}]");
                }
            }
        }
        let section = |name: &'static str| Section {
            name,
            props: ini.section(Some(name)),
        };

        let data = section("data");
        let pipeline = section("pipeline");
        let defaults = PipelineConfig::default();
        let pipeline = PipelineConfig {
            threshold: pipeline.parse("threshold", defaults.threshold)?,
            spacing: pipeline.parse("spacing", defaults.spacing)?,
            min_component: pipeline.parse("min_component", defaults.min_component)?,
        };
        pipeline.validate()?;

        let k = section("kernel");
        let kernel = KernelGrid {
            alpha: k.list("alpha", &[1, 2])?,
            beta: k.list("beta", &[1, 2, 4, 6])?,
            gamma: k.list("gamma", &[1, 2, 4, 8, 16, 24])?,
            lambda: k.list("lambda", &[1.0])?,
            nu: k.list("nu", &[0.1, 0.01])?,
            tau: k.list("tau", &[0.05, 0.01, 0.1])?,
            kappa: k.list("kappa", &[0.001])?,
            upsilon: k.list("upsilon", &[0.05, 0.01, 0.1])?,
            normalize: k.parse("normalize", true)?,
            reduced_patterns: k.parse("reduced_patterns", false)?,
        };
        if kernel.gamma.contains(&0) || kernel.alpha.contains(&0) || kernel.beta.contains(&0) {
            bail!("[kernel] alpha, beta and gamma values must be >= 1");
        }

        let cv = section("cv");
        let defaults = CvPlan::default();
        let plan = CvPlan {
            outer_folds: cv.parse("outer_folds", defaults.outer_folds)?,
            inner_folds: cv.parse("inner_folds", defaults.inner_folds)?,
            c_grid: cv.list("c", &defaults.c_grid)?,
            seed: cv.parse("seed", defaults.seed)?,
        };
        plan.validate()?;

        let rbf = section("rbf");
        let rbf = if rbf.parse("enabled", false)? {
            let input = match rbf.raw("input").unwrap_or("binary") {
                "binary" => BaselineInput::Binary,
                "raw" => BaselineInput::Raw,
                other => bail!("[rbf] input must be binary or raw, got {other:?}"),
            };
            Some(RbfSettings {
                sigma: rbf.list("sigma", &[2.0, 4.0, 6.0, 8.0, 12.0, 16.0])?,
                input,
            })
        } else {
            None
        };

        let output = section("output");
        Ok(ExperimentConfig {
            name: data.raw("name").unwrap_or("dataset").to_string(),
            images: data.path("images", base)?,
            labels: data.path("labels", base)?,
            per_class: data.raw("per_class").map(|_| data.parse("per_class", 0)).transpose()?,
            pipeline,
            kernel,
            plan,
            rbf,
            results: base.join(output.raw("results").unwrap_or("results.csv")),
        })
    }
}
