//! MNIST IDX ingestion and dataset handling.
//!
//! Images load from the standard IDX container (big-endian header, raw
//! pixel bytes) onto the row-major vertices of a grid graph, scaled to
//! [0, 1]. Subsampling restricts every image to the kept vertices of a
//! subsampled graph.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled graph signals: one row per sample, one column per vertex.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Array2<f64>,
    labels: Vec<u8>,
    graph: Graph,
}

impl Dataset {
    pub fn new(graph: Graph, images: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if images.ncols() != graph.n() {
            return Err(Error::invalid_argument(format!(
                "image vector length {} does not match graph size {}",
                images.ncols(),
                graph.n()
            )));
        }
        if images.nrows() != labels.len() {
            return Err(Error::invalid_argument(format!(
                "sample count {} does not match label count {}",
                images.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::invalid_argument(format!(
                "label {bad} outside 0..=9"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            graph,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Array2<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// First `count` samples (deterministic subset for smoke runs).
    pub fn take(&self, count: usize) -> Dataset {
        let count = count.min(self.len());
        Dataset {
            images: self.images.slice(ndarray::s![..count, ..]).to_owned(),
            labels: self.labels[..count].to_vec(),
            graph: self.graph.clone(),
        }
    }

    /// Per-class sample counts.
    pub fn label_histogram(&self) -> [usize; 10] {
        let mut hist = [0usize; 10];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }
}

struct OffsetReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn new(inner: R) -> Self {
        OffsetReader { inner, offset: 0 }
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(_) => Err(Error::format(
                format!("truncated while reading {what}"),
                Some(self.offset),
            )),
        }
    }

    fn read_u32_be(&mut self, what: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact_at(&mut buf, what)?;
        Ok(u32::from_be_bytes(buf))
    }
}

/// Loads an MNIST image/label pair onto the supplied grid graph (row-major
/// pixel-to-vertex mapping, intensities scaled by 1/255).
pub fn load_mnist(images_path: &Path, labels_path: &Path, graph: &Graph) -> Result<Dataset> {
    let file = File::open(images_path)?;
    let mut r = OffsetReader::new(BufReader::new(file));
    let magic = r.read_u32_be("images magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            format!("bad images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
            Some(0),
        ));
    }
    let count = r.read_u32_be("image count")? as usize;
    let rows = r.read_u32_be("image rows")? as usize;
    let cols = r.read_u32_be("image cols")? as usize;
    let n = rows * cols;
    if n != graph.n() {
        return Err(Error::format(
            format!(
                "image geometry {rows}x{cols} does not match graph size {}",
                graph.n()
            ),
            None,
        ));
    }
    let mut pixels = vec![0u8; count * n];
    r.read_exact_at(&mut pixels, "pixel data")?;

    let file = File::open(labels_path)?;
    let mut r = OffsetReader::new(BufReader::new(file));
    let magic = r.read_u32_be("labels magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            format!("bad labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
            Some(0),
        ));
    }
    let label_count = r.read_u32_be("label count")? as usize;
    if label_count != count {
        return Err(Error::format(
            format!("{count} images but {label_count} labels"),
            Some(4),
        ));
    }
    let mut labels = vec![0u8; label_count];
    r.read_exact_at(&mut labels, "label data")?;

    let images = Array2::from_shape_fn((count, n), |(s, v)| pixels[s * n + v] as f64 / 255.0);
    Dataset::new(graph.clone(), images, labels)
}

/// Restricts every image to `kept_indices` (as produced by graph
/// subsampling over the same grid); labels are unchanged.
pub fn subsample_dataset(d: &Dataset, kept_indices: &[usize], graph: &Graph) -> Result<Dataset> {
    if kept_indices.len() != graph.n() {
        return Err(Error::invalid_argument(format!(
            "kept index count {} does not match target graph size {}",
            kept_indices.len(),
            graph.n()
        )));
    }
    let n_old = d.images.ncols();
    for &idx in kept_indices {
        if idx >= n_old {
            return Err(Error::invalid_argument(format!(
                "kept index {idx} out of range for signal length {n_old}"
            )));
        }
    }
    let images = Array2::from_shape_fn((d.len(), kept_indices.len()), |(s, v)| {
        d.images[[s, kept_indices[v]]]
    });
    Dataset::new(graph.clone(), images, d.labels.clone())
}

const CACHE_MAGIC: &[u8; 4] = b"GDAT";
const CACHE_VERSION: u32 = 1;

/// Writes the dataset's tensors in the internal cache format (exact f64
/// bits, little-endian). Reloading reproduces the tensors bit-identically.
pub fn write_cache<W: Write>(d: &Dataset, mut out: W) -> Result<()> {
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&(d.len() as u64).to_le_bytes())?;
    out.write_all(&(d.images.ncols() as u64).to_le_bytes())?;
    out.write_all(&d.labels)?;
    for &v in d.images.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the cache format back onto the supplied graph.
pub fn read_cache<R: Read>(input: R, graph: &Graph) -> Result<Dataset> {
    let mut r = OffsetReader::new(input);
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "cache magic")?;
    if &magic != CACHE_MAGIC {
        return Err(Error::format("bad cache magic", Some(0)));
    }
    let mut ver = [0u8; 4];
    r.read_exact_at(&mut ver, "cache version")?;
    if u32::from_le_bytes(ver) != CACHE_VERSION {
        return Err(Error::format("unsupported cache version", Some(4)));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact_at(&mut u64buf, "sample count")?;
    let samples = u64::from_le_bytes(u64buf) as usize;
    r.read_exact_at(&mut u64buf, "vertex count")?;
    let n = u64::from_le_bytes(u64buf) as usize;
    let mut labels = vec![0u8; samples];
    r.read_exact_at(&mut labels, "labels")?;
    let mut images = Array2::zeros((samples, n));
    let mut f64buf = [0u8; 8];
    for s in 0..samples {
        for v in 0..n {
            r.read_exact_at(&mut f64buf, "image data")?;
            images[[s, v]] = f64::from_le_bytes(f64buf);
        }
    }
    Dataset::new(graph.clone(), images, labels)
}

/// Reproducibility manifest written next to every experiment's artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub grid: String,
    /// Original vertex ids excluded by subsampling (empty on regular grids).
    pub excluded_vertices: Vec<usize>,
    /// Echo of the full resolved configuration.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by role.
    pub file_checksums: std::collections::BTreeMap<String, String>,
}
