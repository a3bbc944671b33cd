//! Synthetic in-/out-of-distribution generators, IDX and CSV ingestion, and
//! seeded splitting and batching.
//!
//! Every generator is a pure function of its parameters and seed. Random
//! streams are ChaCha8 seeded from a `u64`; the split permutation uses stream
//! 0 and the reshuffle for epoch `e` uses stream `e + 1`.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::heads::LabeledBatch;
use crate::numerics::RealMatrix;

const IDX_UBYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: RealMatrix,
    pub targets: Option<Vec<usize>>,
    /// Number of classes for labeled data, 0 otherwise.
    pub class_count: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn labeled(
        inputs: RealMatrix,
        targets: Vec<usize>,
        class_count: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if targets.len() != inputs.rows() {
            return Err(Error::contract(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= class_count) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            inputs,
            targets: Some(targets),
            class_count,
            provenance: provenance.into(),
        })
    }

    pub fn unlabeled(inputs: RealMatrix, provenance: impl Into<String>) -> Self {
        Self {
            inputs,
            targets: None,
            class_count: 0,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.inputs.cols()
    }

    pub fn targets(&self) -> Result<&[usize]> {
        self.targets
            .as_deref()
            .ok_or_else(|| Error::contract(format!("dataset {} has no labels", self.provenance)))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            targets: self
                .targets
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            class_count: self.class_count,
            provenance: self.provenance.clone(),
        }
    }

    /// Held-out-class protocol: rows with label `< keep` stay labeled, the
    /// rest become an unlabeled OOD set.
    pub fn split_classes(&self, keep: usize) -> Result<(Dataset, Dataset)> {
        let targets = self.targets()?;
        if keep < 2 || keep >= self.class_count {
            return Err(Error::contract(format!(
                "cannot keep {keep} of {} classes",
                self.class_count
            )));
        }
        let (kept, held): (Vec<usize>, Vec<usize>) =
            (0..self.len()).partition(|&i| targets[i] < keep);
        let mut inside = self.subset(&kept);
        inside.class_count = keep;
        inside.provenance = format!("{}[classes<{keep}]", self.provenance);
        let outside = Dataset::unlabeled(
            self.inputs.select_rows(&held),
            format!("{}[classes>={keep}]", self.provenance),
        );
        Ok((inside, outside))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Isotropic Gaussian clusters, one per class, stored class by class.
///
/// In two dimensions the centers sit evenly on a circle of radius
/// `centers_radius`, starting on the positive x axis. In other dimensions
/// each center is a seeded random direction scaled to that radius.
pub fn gaussian_blobs(
    classes: usize,
    dims: usize,
    centers_radius: f64,
    sigma: f64,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::contract("gaussian_blobs needs at least 2 classes"));
    }
    if dims == 0 {
        return Err(Error::contract("gaussian_blobs needs at least 1 dimension"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() || !centers_radius.is_finite() {
        return Err(Error::contract(format!(
            "gaussian_blobs needs a positive finite sigma (got {sigma})"
        )));
    }
    let mut rng = rng_for(seed, 0);
    let centers: Vec<Vec<f64>> = if dims == 2 {
        (0..classes)
            .map(|k| {
                let angle = TAU * k as f64 / classes as f64;
                vec![centers_radius * angle.cos(), centers_radius * angle.sin()]
            })
            .collect()
    } else {
        (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
                let norm = crate::numerics::l2_norm(&v).max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| centers_radius * x / norm).collect()
            })
            .collect()
    };

    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * dims);
    let mut targets = Vec::with_capacity(n);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(c + sigma * z);
            }
            targets.push(k);
        }
    }
    Dataset::labeled(
        RealMatrix::new(n, dims, data)?,
        targets,
        classes,
        format!("blobs(classes={classes},dims={dims},radius={centers_radius},sigma={sigma},seed={seed})"),
    )
}

/// Uniform samples over the box `[low, high)^dims`.
pub fn ood_uniform(dims: usize, low: f64, high: f64, n: usize, seed: u64) -> Result<Dataset> {
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::contract(format!(
            "uniform box needs low < high (got {low}, {high})"
        )));
    }
    let mut rng = rng_for(seed, 0);
    let inputs = RealMatrix::from_fn(n, dims, |_, _| rng.random_range(low..high));
    Ok(Dataset::unlabeled(
        inputs,
        format!("uniform(dims={dims},low={low},high={high},seed={seed})"),
    ))
}

/// Uniform samples over a planar annulus, drawn in polar form with
/// `r = √U(inner², outer²)` so the density is uniform in area.
pub fn ood_ring(
    dims: usize,
    inner_radius: f64,
    outer_radius: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if dims != 2 {
        return Err(Error::Unsupported(format!(
            "ring generator is planar, got {dims} dims"
        )));
    }
    if !(0.0 < inner_radius && inner_radius < outer_radius) || !outer_radius.is_finite() {
        return Err(Error::contract(format!(
            "ring needs 0 < inner < outer (got {inner_radius}, {outer_radius})"
        )));
    }
    let mut rng = rng_for(seed, 0);
    let (lo, hi) = (inner_radius * inner_radius, outer_radius * outer_radius);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let r = rng
            .random_range(lo..=hi)
            .sqrt()
            .clamp(inner_radius, outer_radius);
        let angle = rng.random_range(0.0..TAU);
        data.push(r * angle.cos());
        data.push(r * angle.sin());
    }
    Ok(Dataset::unlabeled(
        RealMatrix::new(n, 2, data)?,
        format!("ring(inner={inner_radius},outer={outer_radius},seed={seed})"),
    ))
}

/// A decoded unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], source_name: &str) -> Result<IdxArray> {
    let err = |offset: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        offset,
        message,
    };
    if bytes.len() < 4 {
        return Err(err(
            bytes.len(),
            "file too short for the IDX magic number".into(),
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(
            0,
            format!("bad magic {:02x}{:02x}", bytes[0], bytes[1]),
        ));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(err(
            2,
            format!("unsupported IDX element type 0x{:02x}", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(err(3, "IDX array with zero dimensions".into()));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(err(bytes.len(), format!("header needs {header} bytes")));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| err(4, "dimension product overflows".into()))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(err(
            header + payload.len().min(expected),
            format!("expected {expected} data bytes, found {}", payload.len()),
        ));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an image/label IDX pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx(&read_file(ip)?, &ip.display().to_string())?;
    let labels = parse_idx(&read_file(lp)?, &lp.display().to_string())?;
    let inputs = idx_images_to_matrix(&images, &ip.display().to_string())?;
    if labels.dims.len() != 1 {
        return Err(Error::Parse {
            source_name: lp.display().to_string(),
            offset: 3,
            message: format!("labels must be 1-D, found {} dims", labels.dims.len()),
        });
    }
    if labels.dims[0] != inputs.rows() {
        return Err(Error::Parse {
            source_name: lp.display().to_string(),
            offset: 4,
            message: format!("{} labels for {} images", labels.dims[0], inputs.rows()),
        });
    }
    let targets: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let class_count = targets.iter().max().map_or(0, |m| m + 1);
    Dataset::labeled(inputs, targets, class_count, ip.display().to_string())
}

/// Reads an IDX image file alone, as an unlabeled dataset.
pub fn load_idx_images(images_path: impl AsRef<Path>) -> Result<Dataset> {
    let ip = images_path.as_ref();
    let images = parse_idx(&read_file(ip)?, &ip.display().to_string())?;
    Ok(Dataset::unlabeled(
        idx_images_to_matrix(&images, &ip.display().to_string())?,
        ip.display().to_string(),
    ))
}

fn idx_images_to_matrix(images: &IdxArray, name: &str) -> Result<RealMatrix> {
    if images.dims.len() < 2 {
        return Err(Error::Parse {
            source_name: name.to_string(),
            offset: 3,
            message: format!("images need at least 2 dims, found {}", images.dims.len()),
        });
    }
    let n = images.dims[0];
    let cols: usize = images.dims[1..].iter().product();
    RealMatrix::new(
        n,
        cols,
        images.data.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Writes a dataset as an IDX pair, quantising inputs (expected in `[0, 1]`)
/// to bytes. Images are stored with dims `[n, 1, cols]`.
pub fn write_idx(
    ds: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let pixels: Vec<u8> = ds
        .inputs
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let ip = images_path.as_ref();
    fs::write(ip, encode_idx(&[ds.len(), 1, ds.dims()], &pixels)).map_err(|e| Error::io(ip, e))?;
    let targets = ds.targets()?;
    if ds.class_count > 256 {
        return Err(Error::Unsupported("IDX labels are single bytes".into()));
    }
    let labels: Vec<u8> = targets.iter().map(|&t| t as u8).collect();
    let lp = labels_path.as_ref();
    fs::write(lp, encode_idx(&[ds.len()], &labels)).map_err(|e| Error::io(lp, e))
}

/// Reads a CSV with header `label,f0,f1,...`. A dataset whose label column
/// is empty on every row loads as unlabeled.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    })?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(Error::Parse {
            source_name: path.display().to_string(),
            offset: 0,
            message: "expected header `label,f0,f1,...`".into(),
        });
    }
    let cols = header.len() - 1;
    let mut data = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        let parse_err = |message: String| Error::Parse {
            source_name: path.display().to_string(),
            offset,
            message,
        };
        let label = record.get(0).unwrap_or("").trim();
        labels.push(if label.is_empty() {
            None
        } else {
            Some(
                label
                    .parse()
                    .map_err(|_| parse_err(format!("bad label {label:?}")))?,
            )
        });
        for field in record.iter().skip(1) {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("bad feature {field:?}")))?,
            );
        }
    }
    let n = labels.len();
    let inputs = RealMatrix::new(n, cols, data)?;
    let provenance = path.display().to_string();
    if labels.iter().all(Option::is_none) {
        return Ok(Dataset::unlabeled(inputs, provenance));
    }
    let targets: Vec<usize> = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| Error::Parse {
                source_name: path.display().to_string(),
                offset: 0,
                message: format!("row {i} is missing its label"),
            })
        })
        .collect::<Result<_>>()?;
    let class_count = targets.iter().max().map_or(0, |m| m + 1);
    Dataset::labeled(inputs, targets, class_count, provenance)
}

/// A seeded train/validation partition plus the batching parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Split {
    pub fn batches(&self, epoch: usize) -> Result<Vec<LabeledBatch>> {
        epoch_batches(&self.train, self.batch_size, self.seed, epoch)
    }
}

/// Permutes `ds` with `seed`, holds out the first `⌊val_fraction · n⌋` rows
/// as validation, and keeps the rest for training.
pub fn split_and_batch(
    ds: &Dataset,
    val_fraction: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Split> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::contract(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut rng_for(seed, 0));
    let n_val = (val_fraction * ds.len() as f64).floor() as usize;
    let val_indices = perm[..n_val].to_vec();
    let train_indices = perm[n_val..].to_vec();
    Ok(Split {
        train: ds.subset(&train_indices),
        val: ds.subset(&val_indices),
        train_indices,
        val_indices,
        batch_size,
        seed,
    })
}

/// Reshuffles a labeled dataset for `epoch` and cuts it into batches; the
/// last batch may be smaller.
pub fn epoch_batches(
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<LabeledBatch>> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let targets = ds.targets()?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng_for(seed, epoch as u64 + 1));
    order
        .chunks(batch_size)
        .map(|idx| {
            LabeledBatch::new(
                ds.inputs.select_rows(idx),
                idx.iter().map(|&i| targets[i]).collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{l2_norm, pairwise_euclidean};

    #[test]
    fn blobs_are_deterministic_and_labeled() {
        let a = gaussian_blobs(4, 2, 4.0, 0.5, 50, 9).unwrap();
        let b = gaussian_blobs(4, 2, 4.0, 0.5, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert_eq!(a.class_count, 4);
        assert_ne!(a, gaussian_blobs(4, 2, 4.0, 0.5, 50, 10).unwrap());
    }

    #[test]
    fn tiny_sigma_collapses_to_centers() {
        let ds = gaussian_blobs(3, 2, 4.0, 1e-300, 5, 1).unwrap();
        let centers = RealMatrix::from_fn(3, 2, |k, j| {
            let a = TAU * k as f64 / 3.0;
            4.0 * if j == 0 { a.cos() } else { a.sin() }
        });
        let d = pairwise_euclidean(&ds.inputs, &centers).unwrap();
        let t = ds.targets().unwrap();
        for (i, row) in d.iter_rows().enumerate() {
            assert_eq!(row[t[i]], 0.0);
            assert_eq!(
                crate::numerics::argmax(&row.iter().map(|v| -v).collect::<Vec<_>>()),
                t[i]
            );
        }
    }

    #[test]
    fn blobs_in_higher_dims() {
        let ds = gaussian_blobs(3, 5, 2.0, 0.1, 4, 3).unwrap();
        assert_eq!(ds.dims(), 5);
        assert!(gaussian_blobs(1, 2, 4.0, 0.5, 5, 0).is_err());
        assert!(gaussian_blobs(3, 2, 4.0, 0.0, 5, 0).is_err());
    }

    #[test]
    fn uniform_bounds_and_empty() {
        let ds = ood_uniform(3, -2.0, 5.0, 500, 4).unwrap();
        assert!(ds.inputs.data().iter().all(|&v| (-2.0..5.0).contains(&v)));
        assert!(ds.targets.is_none());
        assert!(ood_uniform(3, 0.0, 1.0, 0, 4).unwrap().is_empty());
        assert_eq!(ds, ood_uniform(3, -2.0, 5.0, 500, 4).unwrap());
        assert!(ood_uniform(3, 1.0, 1.0, 5, 4).is_err());
    }

    #[test]
    fn ring_norms_within_annulus() {
        let ds = ood_ring(2, 8.0, 12.0, 1000, 2).unwrap();
        for row in ds.inputs.iter_rows() {
            let r = l2_norm(row);
            assert!((8.0 - 1e-12..=12.0 + 1e-12).contains(&r), "{r}");
        }
        assert_eq!(ds, ood_ring(2, 8.0, 12.0, 1000, 2).unwrap());
        assert!(matches!(
            ood_ring(3, 1.0, 2.0, 5, 0),
            Err(Error::Unsupported(_))
        ));
        assert!(ood_ring(2, 2.0, 1.0, 5, 0).is_err());
    }

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        // two 2×2 images
        let images = vec![
            0x00, 0x00, 0x08, 0x03, // magic
            0x00, 0x00, 0x00, 0x02, // n
            0x00, 0x00, 0x00, 0x02, // rows
            0x00, 0x00, 0x00, 0x02, // cols
            0x00, 0xff, 0x33, 0x66, // image 0
            0xcc, 0x00, 0x99, 0xff, // image 1
        ];
        let labels = vec![0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 0x01, 0x00];
        (images, labels)
    }

    #[test]
    fn idx_fixture_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, &labels).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.inputs.rows(), 2);
        assert_eq!(ds.inputs.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.inputs.row(1), &[0.8, 0.0, 0.6, 1.0]);
        assert_eq!(ds.targets().unwrap(), &[1, 0]);
        assert_eq!(ds.class_count, 2);
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let empty = dir.path().join("empty");
        fs::write(&empty, []).unwrap();
        let lp = dir.path().join("lbl");
        fs::write(&lp, &labels).unwrap();
        assert!(matches!(
            load_idx(&empty, &lp),
            Err(Error::Parse { offset: 0, .. })
        ));

        let mut bad_magic = images.clone();
        bad_magic[1] = 7;
        assert!(matches!(
            parse_idx(&bad_magic, "x"),
            Err(Error::Parse { offset: 0, .. })
        ));

        let truncated = &images[..images.len() - 1];
        assert!(matches!(
            parse_idx(truncated, "x"),
            Err(Error::Parse { offset: 23, .. })
        ));

        let ip = dir.path().join("img");
        fs::write(&ip, &images).unwrap();
        let three_labels = encode_idx(&[3], &[0, 1, 0]);
        fs::write(&lp, three_labels).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Parse { .. })));
    }

    #[test]
    fn idx_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let raw = ood_uniform(6, 0.0, 1.0, 20, 1).unwrap();
        let ds = Dataset::labeled(raw.inputs, (0..20).map(|i| i % 3).collect(), 3, "u").unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ds, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.targets, ds.targets);
        for (a, b) in back.inputs.data().iter().zip(ds.inputs.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "label,f0,f1\n1,0.5,2\n0,-1,3.25\n").unwrap();
        let ds = load_csv(&p).unwrap();
        assert_eq!(ds.inputs.data(), &[0.5, 2.0, -1.0, 3.25]);
        assert_eq!(ds.targets().unwrap(), &[1, 0]);

        fs::write(&p, "label,f0\n,1\n,2\n").unwrap();
        assert!(load_csv(&p).unwrap().targets.is_none());

        fs::write(&p, "label,f0\n1,abc\n").unwrap();
        assert!(matches!(load_csv(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn split_partitions_indices() {
        let ds = gaussian_blobs(3, 2, 4.0, 0.5, 10, 0).unwrap();
        let s = split_and_batch(&ds, 0.3, 4, 7).unwrap();
        assert_eq!(s.val.len(), 9);
        let mut all: Vec<usize> = s
            .train_indices
            .iter()
            .chain(&s.val_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());

        let batches = s.batches(0).unwrap();
        assert_eq!(batches.len(), 6);
        assert_eq!(batches.last().unwrap().targets.len(), 1);
        let mut rows: Vec<Vec<u64>> = batches
            .iter()
            .flat_map(|b| {
                b.features
                    .iter_rows()
                    .map(|r| r.iter().map(|v| v.to_bits()).collect())
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut expected: Vec<Vec<u64>> = s
            .train
            .inputs
            .iter_rows()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        expected.sort();
        assert_eq!(rows, expected);

        assert_eq!(batches, s.batches(0).unwrap());
        assert_ne!(batches, s.batches(1).unwrap());
    }

    #[test]
    fn split_edge_cases() {
        let ds = gaussian_blobs(2, 2, 4.0, 0.5, 5, 0).unwrap();
        let s = split_and_batch(&ds, 0.0, 3, 1).unwrap();
        assert_eq!(s.train.len(), 10);
        assert!(s.val.is_empty());
        assert!(split_and_batch(&ds, 0.5, 0, 1).is_err());
        assert!(split_and_batch(&ds, 1.0, 2, 1).is_err());
    }

    #[test]
    fn held_out_classes() {
        let ds = gaussian_blobs(4, 2, 4.0, 0.5, 5, 0).unwrap();
        let (inside, outside) = ds.split_classes(3).unwrap();
        assert_eq!(inside.len(), 15);
        assert_eq!(inside.class_count, 3);
        assert_eq!(outside.len(), 5);
        assert!(outside.targets.is_none());
    }
}
