use std::path::{Path, PathBuf};

use pcgk::charpipe::{image_to_graph, load_idx_images, load_idx_labels, PipelineConfig};
use pcgk::classify::{nested_cv, Candidate, CvPlan};
use pcgk::engine::{dp_kernel, gram_matrix, normalize_gram, KernelConfig};
use pcgk::graph::{load_graph, save_graph, PointCloudGraph};

fn subset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

fn digits(per_class: usize) -> (Vec<PointCloudGraph>, Vec<u32>) {
    let images = load_idx_images(subset().join("images-idx3-ubyte")).unwrap();
    let labels = load_idx_labels(subset().join("labels-idx1-ubyte")).unwrap();
    let mut seen = [0usize; 10];
    let mut graphs = Vec::new();
    let mut ys = Vec::new();
    for (img, &l) in images.iter().zip(&labels) {
        if seen[l as usize] < per_class {
            seen[l as usize] += 1;
            graphs.push(image_to_graph(img, &PipelineConfig::default()).unwrap());
            ys.push(l);
        }
    }
    (graphs, ys)
}

#[test]
fn digit_graphs_survive_a_file_round_trip() {
    let (graphs, _) = digits(1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = KernelConfig::default();
    for (i, g) in graphs.iter().enumerate() {
        let path = dir.path().join(format!("{i}.pcg"));
        save_graph(g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        assert_eq!(&back, g);
        assert_eq!(dp_kernel(&back, g, &cfg).unwrap(), dp_kernel(g, g, &cfg).unwrap());
    }
}

#[test]
fn digit_gram_is_psd_and_separates_classes() {
    let (graphs, ys) = digits(6);
    let cfg = KernelConfig {
        normalize: true,
        ..KernelConfig::default()
    };
    let gram = gram_matrix(&graphs, &cfg).unwrap();
    gram.check_psd().unwrap();
    for i in 0..gram.len() {
        assert!((gram.values[(i, i)] - 1.0).abs() < 1e-12);
    }
    let cands = vec![Candidate {
        params: vec![("gamma".into(), "4".into())],
        gram: normalize_gram(&gram.values),
    }];
    let plan = CvPlan {
        outer_folds: 3,
        inner_folds: 2,
        c_grid: vec![1.0, 100.0],
        seed: 1,
    };
    let report = nested_cv(&cands, &ys, &plan).unwrap();
    // Chance level is 0.9 for ten classes.
    assert!(report.mean_error < 0.6, "{report:?}");
}
