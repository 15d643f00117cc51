//! From raster character images to point-cloud graphs: IDX and PGM input,
//! binarization, thinning, arc-length subsampling and graph extraction.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{PointCloudGraph, Vertex};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A grayscale image with row-major pixels in 0..=255.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Knobs of the image-to-graph pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Pixels at or above this value are foreground.
    pub threshold: u8,
    /// Target arc length between retained skeleton samples, in pixels.
    pub spacing: f64,
    /// Skeleton components with fewer pixels are dropped.
    pub min_component: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold: 128,
            spacing: 4.0,
            min_component: 3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 {
            return Err(Error::InvalidArgument("threshold must be in [1, 255]".into()));
        }
        if !(self.spacing >= 1.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing must be >= 1, got {}", self.spacing)));
        }
        Ok(())
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Decodes an IDX image file (unsigned bytes, three dimensions).
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<RasterImage>> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let expected = 16 + count * size;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[16..expected]
        .chunks_exact(size.max(1))
        .take(count)
        .map(|c| RasterImage {
            width: cols,
            height: rows,
            pixels: c[..size].to_vec(),
        })
        .collect())
}

/// Decodes an IDX label file (unsigned bytes, one dimension).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..expected].iter().map(|&b| b as u32).collect())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<RasterImage>> {
    parse_idx_images(&fs::read(path)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    parse_idx_labels(&fs::read(path)?)
}

/// Encodes images as an IDX image file.
pub fn encode_idx_images(images: &[RasterImage]) -> Result<Vec<u8>> {
    let (w, h) = images.first().map_or((0, 0), |i| (i.width, i.height));
    let mut out = Vec::with_capacity(16 + images.len() * w * h);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [images.len(), h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(Error::InvalidArgument("images differ in size".into()));
        }
        out.extend_from_slice(&img.pixels);
    }
    Ok(out)
}

/// Decodes a binary PGM (`P5`) image; values are rescaled to 0..=255.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<RasterImage> {
    let err = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(err("not a binary PGM (P5) file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| err("bad PGM header number"));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit PGM files are supported"));
    }
    pos += 1; // single whitespace before the raster
    let expected = pos + width * height;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let pixels = bytes[pos..expected]
        .iter()
        .map(|&v| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8)
        .collect();
    RasterImage::new(width, height, pixels)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    parse_pgm(&fs::read(path)?, path)
}

/// A binary image; `true` is foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryGrid {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: cells.len(),
            });
        }
        Ok(BinaryGrid { width, height, cells })
    }

    /// Builds a grid from rows of `#` (foreground) and `.` characters.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let width = rows.first().map_or(0, |r| r.len());
        let cells = rows.iter().flat_map(|r| r.bytes().map(|b| b == b'#')).collect();
        BinaryGrid::new(width, rows.len(), cells).expect("rectangular ascii grid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    /// Out-of-range coordinates read as background.
    fn at(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Foreground pixels as `(x, y)` in raster order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i])
            .map(|i| (i % self.width, i / self.width))
            .collect()
    }

    /// 8-connected foreground components, each in raster order.
    pub fn components(&self) -> Vec<Vec<(usize, usize)>> {
        let mut label = vec![usize::MAX; self.cells.len()];
        let mut out = Vec::new();
        for start in 0..self.cells.len() {
            if !self.cells[start] || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            label[start] = id;
            while let Some(i) = queue.pop_front() {
                let (x, y) = ((i % self.width) as isize, (i / self.width) as isize);
                comp.push((x as usize, y as usize));
                for (dx, dy) in NEIGHBORS_8 {
                    let (nx, ny) = (x + dx, y + dy);
                    if self.at(nx, ny) {
                        let j = ny as usize * self.width + nx as usize;
                        if label[j] == usize::MAX {
                            label[j] = id;
                            queue.push_back(j);
                        }
                    }
                }
            }
            comp.sort_by_key(|&(x, y)| (y, x));
            out.push(comp);
        }
        out
    }
}

const NEIGHBORS_8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Foreground where `pixel ≥ threshold`.
pub fn binarize(img: &RasterImage, threshold: u8) -> BinaryGrid {
    BinaryGrid {
        width: img.width,
        height: img.height,
        cells: img.pixels.iter().map(|&p| p >= threshold).collect(),
    }
}

/// Zhang–Suen thinning to a one-pixel-wide 8-connected skeleton.
///
/// Both sub-iterations delete in parallel. A component whose pixels would
/// all be deleted in one sub-iteration (a 2×2 block, for instance) keeps its
/// first pixel in raster order.
pub fn thin(grid: &BinaryGrid) -> BinaryGrid {
    let mut g = grid.clone();
    loop {
        let mut changed = false;
        for step in 0..2 {
            let mut doomed = Vec::new();
            for (x, y) in g.foreground() {
                let (x, y) = (x as isize, y as isize);
                // P2..P9 clockwise from north
                let p = [
                    g.at(x, y - 1),
                    g.at(x + 1, y - 1),
                    g.at(x + 1, y),
                    g.at(x + 1, y + 1),
                    g.at(x, y + 1),
                    g.at(x - 1, y + 1),
                    g.at(x - 1, y),
                    g.at(x - 1, y - 1),
                ];
                let b = p.iter().filter(|&&v| v).count();
                let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                let ok = if step == 0 {
                    !(n && e && s) && !(e && s && w)
                } else {
                    !(n && e && w) && !(n && s && w)
                };
                if (2..=6).contains(&b) && a == 1 && ok {
                    doomed.push(y as usize * g.width + x as usize);
                }
            }
            if doomed.is_empty() {
                continue;
            }
            let mut next = g.clone();
            for &i in &doomed {
                next.cells[i] = false;
            }
            for comp in g.components() {
                if comp.iter().all(|&(x, y)| !next.get(x, y)) {
                    let (x, y) = comp[0];
                    next.cells[y * g.width + x] = true;
                }
            }
            if next != g {
                changed = true;
                g = next;
            }
        }
        if !changed {
            return g;
        }
    }
}

/// Skeleton adjacency: 8-neighbours, except that a diagonal step is dropped
/// when the two pixels share a 4-neighbour in the skeleton.
fn skeleton_neighbors(g: &BinaryGrid, x: usize, y: usize) -> Vec<(usize, usize)> {
    let (xi, yi) = (x as isize, y as isize);
    let mut out = Vec::new();
    for (dx, dy) in NEIGHBORS_8 {
        let (nx, ny) = (xi + dx, yi + dy);
        if !g.at(nx, ny) {
            continue;
        }
        if dx != 0 && dy != 0 && (g.at(xi + dx, yi) || g.at(xi, yi + dy)) {
            continue;
        }
        out.push((nx as usize, ny as usize));
    }
    out
}

fn step_length(a: (usize, usize), b: (usize, usize)) -> f64 {
    if a.0 != b.0 && a.1 != b.1 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

/// Samples a skeleton into a graph. Endpoints, junctions (three or more
/// skeleton neighbours) and one anchor per closed loop are always kept; along
/// every path between them a pixel is kept once the arc length since the last
/// kept pixel reaches `cfg.spacing`. Consecutive kept pixels on a path are
/// joined. Positions are pixel coordinates `(x, y)`; attributes are positions
/// relative to the centre of the bounding box of the retained skeleton.
pub fn extract_graph(skeleton: &BinaryGrid, cfg: &PipelineConfig) -> Result<PointCloudGraph> {
    cfg.validate()?;
    let mut g = skeleton.clone();
    for comp in skeleton.components() {
        if comp.len() < cfg.min_component {
            for (x, y) in comp {
                g.cells[y * g.width + x] = false;
            }
        }
    }
    let pixels = g.foreground();
    if pixels.is_empty() {
        return Err(Error::EmptySkeleton);
    }
    let idx = |p: (usize, usize)| p.1 * g.width + p.0;
    let nbrs: Vec<Vec<(usize, usize)>> = (0..g.cells.len())
        .map(|i| {
            if g.cells[i] {
                skeleton_neighbors(&g, i % g.width, i / g.width)
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut key = vec![false; g.cells.len()];
    for &p in &pixels {
        key[idx(p)] = nbrs[idx(p)].len() != 2;
    }
    let mut kept = vec![false; g.cells.len()];
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut used_step: BTreeSet<(usize, usize)> = BTreeSet::new();
    let step_key = |a: usize, b: usize| (a.min(b), a.max(b));

    // walks from a key pixel along one unvisited step until the next key pixel
    let trace = |start: (usize, usize),
                     first: (usize, usize),
                     key: &Vec<bool>,
                     kept: &mut Vec<bool>,
                     edges: &mut BTreeSet<(usize, usize)>,
                     used_step: &mut BTreeSet<(usize, usize)>| {
        let mut last_kept = idx(start);
        let mut prev = start;
        let mut cur = first;
        let mut arc = 0.0;
        kept[idx(start)] = true;
        loop {
            used_step.insert(step_key(idx(prev), idx(cur)));
            arc += step_length(prev, cur);
            let ci = idx(cur);
            if key[ci] || arc >= cfg.spacing {
                kept[ci] = true;
                if ci != last_kept {
                    edges.insert(step_key(last_kept, ci));
                }
                last_kept = ci;
                arc = 0.0;
            }
            if key[ci] {
                break;
            }
            let next = nbrs[ci]
                .iter()
                .copied()
                .find(|&n| n != prev && !used_step.contains(&step_key(ci, idx(n))));
            match next {
                Some(n) => {
                    prev = cur;
                    cur = n;
                }
                None => break,
            }
        }
    };

    for &p in &pixels {
        if !key[idx(p)] {
            continue;
        }
        kept[idx(p)] = true;
        for &n in &nbrs[idx(p)] {
            if !used_step.contains(&step_key(idx(p), idx(n))) {
                trace(p, n, &key, &mut kept, &mut edges, &mut used_step);
            }
        }
    }
    // closed loops without key pixels: anchor at the first pixel in raster order
    for &p in &pixels {
        let pi = idx(p);
        if nbrs[pi].iter().all(|&n| used_step.contains(&step_key(pi, idx(n)))) {
            continue;
        }
        key[pi] = true;
        kept[pi] = true;
        for &n in &nbrs[pi].clone() {
            if !used_step.contains(&step_key(pi, idx(n))) {
                trace(p, n, &key, &mut kept, &mut edges, &mut used_step);
            }
        }
    }

    let (minx, maxx) = (
        pixels.iter().map(|p| p.0).min().unwrap(),
        pixels.iter().map(|p| p.0).max().unwrap(),
    );
    let (miny, maxy) = (
        pixels.iter().map(|p| p.1).min().unwrap(),
        pixels.iter().map(|p| p.1).max().unwrap(),
    );
    let cx = (minx + maxx) as f64 / 2.0;
    let cy = (miny + maxy) as f64 / 2.0;
    let mut vertex_of = vec![usize::MAX; g.cells.len()];
    let mut vertices = Vec::new();
    for &p in &pixels {
        if kept[idx(p)] {
            vertex_of[idx(p)] = vertices.len();
            let (x, y) = (p.0 as f64, p.1 as f64);
            vertices.push(Vertex::new(vec![x, y], vec![x - cx, y - cy]));
        }
    }
    let edges: BTreeSet<(usize, usize)> = edges
        .into_iter()
        .map(|(a, b)| {
            let (u, v) = (vertex_of[a], vertex_of[b]);
            (u.min(v), u.max(v))
        })
        .filter(|(u, v)| u != v)
        .collect();
    PointCloudGraph::new(vertices, edges)
}

/// Binarize, thin and sample one image.
pub fn image_to_graph(img: &RasterImage, cfg: &PipelineConfig) -> Result<PointCloudGraph> {
    extract_graph(&thin(&binarize(img, cfg.threshold)), cfg)
}
