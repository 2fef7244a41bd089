//! Grayscale dataset loading: IDX files (the MNIST container), directories of
//! binary PGM images, resizing and seeded minibatching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::vectorize;
use crate::tensor::{Real, Tensor2D};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {message}")]
    Format { context: String, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("image {index} is {got:?}, expected {expected:?}")]
    Shape {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("pixel value {value} outside [0, 1] in image {index}")]
    Pixel { index: usize, value: Real },
    #[error("batch size {batch_size} is invalid for {len} samples")]
    BatchSize { batch_size: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

fn format_err(context: impl Into<String>, message: impl Into<String>) -> DataError {
    DataError::Format {
        context: context.into(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Images with integer labels. Pixels lie in `[0, 1]`, all images share one
/// size and every label indexes `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Tensor2D>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<Tensor2D>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(DataError::Empty);
        }
        if images.len() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        let shape = images[0].shape();
        for (index, img) in images.iter().enumerate() {
            if img.shape() != shape {
                return Err(DataError::Shape {
                    index,
                    got: img.shape(),
                    expected: shape,
                });
            }
            if let Some(&value) = img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(DataError::Pixel { index, value });
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(DataError::Label {
                label,
                classes: class_names.len(),
            });
        }
        Ok(Dataset {
            images,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(height, width)` of every image.
    pub fn image_shape(&self) -> (usize, usize) {
        self.images[0].shape()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn images(&self) -> &[Tensor2D] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Replaces the class names; every label must stay in range.
    pub fn with_class_names(self, class_names: Vec<String>) -> Result<Self> {
        Dataset::new(self.images, self.labels, class_names)
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Dataset::new(
            indices.iter().map(|&i| self.images[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
        )
    }

    /// The first `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Every image resized to `out_h x out_w`.
    pub fn resized(&self, out_h: usize, out_w: usize, filter: ResizeFilter) -> Result<Self> {
        let images = self
            .images
            .iter()
            .map(|img| resize(img, out_h, out_w, filter))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(images, self.labels.clone(), self.class_names.clone())
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Decodes an IDX3 unsigned-byte image file into `N` images scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Tensor2D>> {
    let ctx = "IDX images";
    if bytes.len() < 16 {
        return Err(format_err(
            ctx,
            format!("{} bytes is shorter than the 16-byte header", bytes.len()),
        ));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(
            ctx,
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let n = be_u32(bytes, 4) as usize;
    let h = be_u32(bytes, 8) as usize;
    let w = be_u32(bytes, 12) as usize;
    if n == 0 {
        return Err(DataError::Empty);
    }
    if h == 0 || w == 0 {
        return Err(format_err(ctx, format!("image size {h}x{w}")));
    }
    let need = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| format_err(ctx, "dimensions overflow"))?;
    if bytes.len() < need {
        return Err(format_err(
            ctx,
            format!("truncated: {} bytes, need {need}", bytes.len()),
        ));
    }
    Ok(bytes[16..need]
        .chunks_exact(h * w)
        .map(|px| Tensor2D::new(h, w, px.iter().map(|&b| b as Real / 255.0).collect()).expect("pixel bytes are finite"))
        .collect())
}

/// Decodes an IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let ctx = "IDX labels";
    if bytes.len() < 8 {
        return Err(format_err(
            ctx,
            format!("{} bytes is shorter than the 8-byte header", bytes.len()),
        ));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(
            ctx,
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let n = be_u32(bytes, 4) as usize;
    if n == 0 {
        return Err(DataError::Empty);
    }
    if bytes.len() < 8 + n {
        return Err(format_err(
            ctx,
            format!("truncated: {} bytes, need {}", bytes.len(), 8 + n),
        ));
    }
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair. Class names are `"0"`..`"C-1"` where `C`
/// is one more than the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&read(images_path)?).map_err(|e| with_path(e, images_path))?;
    let labels = parse_idx_labels(&read(labels_path)?).map_err(|e| with_path(e, labels_path))?;
    if images.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(images, labels, (0..classes).map(|c| c.to_string()).collect())
}

fn with_path(err: DataError, path: &Path) -> DataError {
    match err {
        DataError::Format { context, message } => DataError::Format {
            context: format!("{} ({context})", path.display()),
            message,
        },
        other => other,
    }
}

/// IDX3 encoding of `images`, pixels quantized as `round(255 v)`.
pub fn encode_idx_images(images: &[Tensor2D]) -> Vec<u8> {
    let (h, w) = images.first().map_or((0, 0), |i| i.shape());
    let mut out = Vec::with_capacity(16 + images.len() * h * w);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    for img in images {
        out.extend(img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

/// Decodes a binary (P5) PGM with `maxval <= 255`, scaling pixels by
/// `1 / maxval`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor2D> {
    let ctx = "PGM";
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(format_err(
            ctx,
            format!("unsupported magic {magic:?}, only binary P5 is accepted"),
        ));
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        // whitespace and '#' comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(ctx, "malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(ctx, "header value out of range"))?;
    }
    let [w, h, maxval] = header;
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(format_err(ctx, "missing whitespace after maxval"));
    }
    pos += 1;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(ctx, format!("maxval {maxval} not in 1..=255")));
    }
    if w == 0 || h == 0 {
        return Err(format_err(ctx, format!("image size {w}x{h}")));
    }
    let need = w * h;
    if bytes.len() < pos + need {
        return Err(format_err(
            ctx,
            format!("truncated raster: {} of {need} bytes", bytes.len() - pos),
        ));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| (b as Real / maxval as Real).min(1.0))
        .collect();
    Ok(Tensor2D::new(h, w, data).expect("pixel bytes are finite"))
}

/// P5 encoding with `maxval = 255`.
pub fn encode_pgm(image: &Tensor2D) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols(), image.rows()).into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResizeFilter {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PgmOptions {
    /// Target `(height, width)`; `None` requires every file to have the same size.
    pub resize: Option<(usize, usize)>,
    pub filter: ResizeFilter,
}

/// Loads `root/<class>/*.pgm`. Classes are the subdirectory names in
/// lexicographic order; hidden entries and non-`.pgm` files are skipped.
pub fn load_pgm_dir(root: &Path, options: PgmOptions) -> Result<Dataset> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    let mut class_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(io(root))? {
        let entry = entry.map_err(io(root))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.starts_with('.') && entry.path().is_dir() {
            class_dirs.push((name, entry.path()));
        }
    }
    class_dirs.sort();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut expected: Option<(usize, usize)> = None;
    for (label, (_, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
                    && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        files.sort();
        for file in files {
            let img = parse_pgm(&read(&file)?).map_err(|e| match e {
                DataError::Format { message, .. } => DataError::Format {
                    context: file.display().to_string(),
                    message,
                },
                other => other,
            })?;
            let img = match options.resize {
                Some((h, w)) => resize(&img, h, w, options.filter)?,
                None => img,
            };
            match expected {
                None => expected = Some(img.shape()),
                Some(shape) if shape != img.shape() => {
                    return Err(DataError::Shape {
                        index: images.len(),
                        got: img.shape(),
                        expected: shape,
                    })
                }
                _ => {}
            }
            images.push(img);
            labels.push(label);
        }
    }
    Dataset::new(images, labels, class_dirs.into_iter().map(|(n, _)| n).collect())
}

/// Bilinear resize with half-pixel centers (no corner alignment).
pub fn resize_bilinear(image: &Tensor2D, out_h: usize, out_w: usize) -> Result<Tensor2D> {
    resize(image, out_h, out_w, ResizeFilter::Bilinear)
}

pub fn resize(image: &Tensor2D, out_h: usize, out_w: usize, filter: ResizeFilter) -> Result<Tensor2D> {
    if out_h == 0 || out_w == 0 {
        return Err(format_err("resize", format!("target size {out_h}x{out_w}")));
    }
    let (h, w) = image.shape();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let out = match filter {
        ResizeFilter::Nearest => Tensor2D::from_fn(out_h, out_w, |y, x| {
            let iy = (((y as f64 + 0.5) * sy) as usize).min(h - 1);
            let ix = (((x as f64 + 0.5) * sx) as usize).min(w - 1);
            image.get(iy, ix)
        }),
        ResizeFilter::Bilinear => {
            let src = |dst: usize, scale: f64, len: usize| {
                let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, s - i0 as f64)
            };
            Tensor2D::from_fn(out_h, out_w, |y, x| {
                let (y0, y1, fy) = src(y, sy, h);
                let (x0, x1, fx) = src(x, sx, w);
                let top = image.get(y0, x0) as f64 * (1.0 - fx) + image.get(y0, x1) as f64 * fx;
                let bot = image.get(y1, x0) as f64 * (1.0 - fx) + image.get(y1, x1) as f64 * fx;
                (top * (1.0 - fy) + bot * fy) as Real
            })
        }
    };
    Ok(out)
}

/// A vectorized minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `B x (H*W)`.
    pub x: Tensor2D,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Sample order for one pass: identity, or a Fisher-Yates shuffle driven by
/// `seed`.
pub fn epoch_order(len: usize, shuffle_seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// Splits `dataset` into vectorized batches of `batch_size`. With
/// `drop_last` a final partial batch is discarded.
pub fn batches(dataset: &Dataset, batch_size: usize, shuffle_seed: Option<u64>, drop_last: bool) -> Result<Vec<Batch>> {
    let n = dataset.len();
    if batch_size == 0 || (drop_last && batch_size > n) {
        return Err(DataError::BatchSize { batch_size, len: n });
    }
    let order = epoch_order(n, shuffle_seed);
    let mut out = Vec::with_capacity(n.div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        if drop_last && chunk.len() < batch_size {
            break;
        }
        let images: Vec<Tensor2D> = chunk.iter().map(|&i| dataset.images[i].clone()).collect();
        out.push(Batch {
            x: vectorize(&images).expect("dataset images share one shape"),
            labels: chunk.iter().map(|&i| dataset.labels[i]).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        let images = (0..n).map(|i| Tensor2D::filled(2, 2, i as Real / n as Real)).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new(images, labels, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn idx_fixture_round_trip() {
        let a = Tensor2D::from_rows(&[[0.0, 1.0], [128.0 / 255.0, 3.0 / 255.0]]).unwrap();
        let b = Tensor2D::from_rows(&[[1.0, 1.0], [0.0, 17.0 / 255.0]]).unwrap();
        let img_bytes = encode_idx_images(&[a.clone(), b.clone()]);
        assert_eq!(&img_bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(img_bytes.len(), 16 + 8);
        let lbl_bytes = encode_idx_labels(&[1, 0]);
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, &img_bytes).unwrap();
        fs::write(&lp, &lbl_bytes).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images(), &[a, b]);
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.class_names(), &["0", "1"]);
    }

    #[test]
    fn idx_errors() {
        let mut bad = encode_idx_images(&[Tensor2D::zeros(2, 2)]);
        bad[3] = 1;
        assert!(matches!(parse_idx_images(&bad), Err(DataError::Format { .. })));
        let good = encode_idx_images(&[Tensor2D::zeros(2, 2)]);
        assert!(parse_idx_images(&good[..good.len() - 1]).is_err());
        let mut empty = good[..16].to_vec();
        empty[4..8].copy_from_slice(&0u32.to_be_bytes());
        assert!(matches!(parse_idx_images(&empty), Err(DataError::Empty)));
        assert!(matches!(
            parse_idx_labels(&encode_idx_labels(&[])),
            Err(DataError::Empty)
        ));
        assert!(parse_idx_labels(&good).is_err());

        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, &good).unwrap();
        fs::write(&lp, encode_idx_labels(&[0, 1])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::CountMismatch { images: 1, labels: 2 })
        ));
        assert!(matches!(
            load_idx(&dir.path().join("missing"), &lp),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn pgm_fixture_and_errors() {
        let bytes = b"P5\n# comment\n3 2\n255\n\x00\x80\xff\x01\x02\x03";
        let img = parse_pgm(bytes).unwrap();
        assert_eq!(img.shape(), (2, 3));
        assert_eq!(img.get(0, 1), 128.0 / 255.0);
        assert_eq!(img.get(0, 2), 1.0);
        assert_eq!(img.get(1, 2), 3.0 / 255.0);

        let low = parse_pgm(b"P5 1 1 15 \x0f").unwrap();
        assert_eq!(low.get(0, 0), 1.0);

        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert_eq!(parse_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn pgm_dir_classes_are_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        for (class, v) in [("b", 1.0), ("a", 0.0)] {
            fs::create_dir(dir.path().join(class)).unwrap();
            fs::write(
                dir.path().join(class).join("x.pgm"),
                encode_pgm(&Tensor2D::filled(2, 2, v)),
            )
            .unwrap();
        }
        fs::write(dir.path().join("a").join("notes.txt"), "ignored").unwrap();
        let ds = load_pgm_dir(dir.path(), PgmOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.class_names(), &["a", "b"]);
        assert_eq!(ds.images()[1], Tensor2D::filled(2, 2, 1.0));

        fs::write(dir.path().join("b").join("big.pgm"), encode_pgm(&Tensor2D::zeros(3, 3))).unwrap();
        assert!(matches!(
            load_pgm_dir(dir.path(), PgmOptions::default()),
            Err(DataError::Shape { .. })
        ));
        let resized = load_pgm_dir(
            dir.path(),
            PgmOptions {
                resize: Some((4, 4)),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(resized.image_shape(), (4, 4));
        assert_eq!(resized.class_histogram(), vec![1, 2]);

        fs::write(dir.path().join("a").join("ascii.pgm"), b"P2\n1 1\n255\n0\n").unwrap();
        assert!(matches!(
            load_pgm_dir(
                dir.path(),
                PgmOptions {
                    resize: Some((4, 4)),
                    ..Default::default()
                }
            ),
            Err(DataError::Format { .. })
        ));
    }

    #[test]
    fn resize_cases() {
        let c = Tensor2D::filled(3, 5, 0.25);
        let up = resize_bilinear(&c, 7, 2).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let x = Tensor2D::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        assert_eq!(resize_bilinear(&x, 2, 2).unwrap(), x);
        assert!(resize_bilinear(&x, 0, 2).is_err());

        // 4x4 ramp to 3x5 against the half-pixel formula written out per pixel
        let ramp = Tensor2D::from_fn(4, 4, |r, c| (r * 4 + c) as Real / 15.0);
        let out = resize_bilinear(&ramp, 3, 5).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                let sy = ((y as f64 + 0.5) * 4.0 / 3.0 - 0.5).clamp(0.0, 3.0);
                let sx = ((x as f64 + 0.5) * 4.0 / 5.0 - 0.5).clamp(0.0, 3.0);
                // the ramp is affine in (row, col), so bilinear interpolation is exact
                let want = (sy * 4.0 + sx) / 15.0;
                assert!((out.get(y, x) as f64 - want).abs() < 1e-6, "{y},{x}");
            }
        }
        let n = resize(&x, 4, 4, ResizeFilter::Nearest).unwrap();
        assert_eq!(n.get(0, 0), 0.1);
        assert_eq!(n.get(3, 3), 0.4);
    }

    #[test]
    fn batch_counts() {
        let ds = toy(10);
        assert_eq!(batches(&ds, 3, None, true).unwrap().len(), 3);
        let keep = batches(&ds, 3, None, false).unwrap();
        assert_eq!(keep.len(), 4);
        assert_eq!(keep[3].len(), 1);
        assert_eq!(keep[0].x.shape(), (3, 4));
        assert_eq!(
            batches(&ds, 3, Some(5), true).unwrap(),
            batches(&ds, 3, Some(5), true).unwrap()
        );
        assert_ne!(
            batches(&ds, 10, Some(5), true).unwrap(),
            batches(&ds, 10, None, true).unwrap()
        );
        assert!(batches(&ds, 11, None, true).is_err());
        assert_eq!(batches(&ds, 11, None, false).unwrap().len(), 1);
        assert!(batches(&ds, 0, None, false).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(Dataset::new(vec![], vec![], vec![]), Err(DataError::Empty)));
        assert!(Dataset::new(vec![Tensor2D::filled(1, 1, 2.0)], vec![0], vec!["a".into()]).is_err());
        assert!(Dataset::new(vec![Tensor2D::zeros(1, 1)], vec![1], vec!["a".into()]).is_err());
    }

    proptest! {
        #[test]
        fn shuffle_is_a_permutation(n in 1usize..200, b in 1usize..17, seed: u64) {
            let ds = toy(n);
            let all = batches(&ds, b, Some(seed), false).unwrap();
            let mut labels: Vec<usize> = all.iter().flat_map(|b| b.labels.clone()).collect();
            let mut want = ds.labels().to_vec();
            labels.sort();
            want.sort();
            prop_assert_eq!(labels, want);
            let mut order = epoch_order(n, Some(seed));
            order.sort();
            prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn resize_to_same_size_is_identity(h in 1usize..12, w in 1usize..12, seed: u64) {
            let mut s = seed;
            let img = Tensor2D::from_fn(h, w, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                (s >> 40) as Real / (1u64 << 24) as Real
            });
            let out = resize_bilinear(&img, h, w).unwrap();
            prop_assert_eq!(out, img.clone());
            let big = resize_bilinear(&img, h * 2 + 1, w + 3).unwrap();
            let lo = img.data().iter().copied().fold(Real::INFINITY, Real::min);
            let hi = img.data().iter().copied().fold(Real::NEG_INFINITY, Real::max);
            prop_assert!(big.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
        }
    }
}
