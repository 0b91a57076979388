//! Image dataset ingestion (IDX, CIFAR-10 binary, raw tensor interchange),
//! range handling, subsetting, and covariance-pattern injection.
//!
//! The canonical working range for denoisers is [-1, 1]; loaders produce
//! [0, 1] and callers rescale.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{AdlError, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const RAW_TENSOR_MAGIC: &[u8; 4] = b"ADT1";
const CIFAR_RECORD_LEN: u64 = 3073;
const RANGE_SLACK: f64 = 1e-9;

/// N flattened images (row-major pixels, channel-interleaved) with shape
/// metadata and a declared value range.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    images: Vec<f64>,
    n: usize,
    height: usize,
    width: usize,
    channels: usize,
    value_range: (f64, f64),
}

impl ImageDataset {
    pub fn new(
        images: Vec<f64>,
        height: usize,
        width: usize,
        channels: usize,
        value_range: (f64, f64),
    ) -> Result<Self> {
        let d = height * width * channels;
        if d == 0 || images.is_empty() || !images.len().is_multiple_of(d) {
            return Err(AdlError::InvalidArgument(format!(
                "image buffer length {} incompatible with {}x{}x{}",
                images.len(),
                height,
                width,
                channels
            )));
        }
        let (lo, hi) = value_range;
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(AdlError::InvalidArgument("degenerate value range".into()));
        }
        for &v in &images {
            if !v.is_finite() || v < lo - RANGE_SLACK || v > hi + RANGE_SLACK {
                return Err(AdlError::Numerical(format!(
                    "pixel {v} outside declared range [{lo}, {hi}]"
                )));
            }
        }
        let n = images.len() / d;
        Ok(ImageDataset {
            images,
            n,
            height,
            width,
            channels,
            value_range,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Flattened dimension d = H * W * C.
    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.value_range
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }
}

fn read_u32_be(r: &mut impl Read, offset: &mut u64, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    let at = *offset;
    r.read_exact(&mut buf)
        .map_err(|_| AdlError::format(at, format!("truncated while reading {what}")))?;
    *offset += 4;
    Ok(u32::from_be_bytes(buf))
}

fn read_u32_le(r: &mut impl Read, offset: &mut u64, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    let at = *offset;
    r.read_exact(&mut buf)
        .map_err(|_| AdlError::format(at, format!("truncated while reading {what}")))?;
    *offset += 4;
    Ok(u32::from_le_bytes(buf))
}

/// Load an IDX image file (the standard MNIST layout), scaled to [0, 1].
pub fn load_idx(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut offset = 0u64;
    let magic = read_u32_be(&mut r, &mut offset, "IDX magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(AdlError::format(
            0,
            format!("bad IDX magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let n = read_u32_be(&mut r, &mut offset, "image count")? as usize;
    let h = read_u32_be(&mut r, &mut offset, "height")? as usize;
    let w = read_u32_be(&mut r, &mut offset, "width")? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(AdlError::format(4, "zero-sized IDX dimensions"));
    }
    let mut payload = vec![0u8; n * h * w];
    r.read_exact(&mut payload)
        .map_err(|_| AdlError::format(offset, "truncated IDX payload"))?;
    let images = payload.iter().map(|&b| b as f64 / 255.0).collect();
    ImageDataset::new(images, h, w, 1, (0.0, 1.0))
}

/// Save a single-channel dataset in IDX layout, quantizing to bytes.
pub fn save_idx(dataset: &ImageDataset, path: impl AsRef<Path>) -> Result<()> {
    if dataset.channels() != 1 {
        return Err(AdlError::InvalidArgument(
            "IDX export requires a single-channel dataset".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    w.write_all(&(dataset.len() as u32).to_be_bytes())?;
    w.write_all(&(dataset.height() as u32).to_be_bytes())?;
    w.write_all(&(dataset.width() as u32).to_be_bytes())?;
    let (lo, hi) = dataset.value_range();
    for &v in dataset.images() {
        let b = (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8;
        w.write_all(&[b])?;
    }
    Ok(())
}

/// Load one or more CIFAR-10 binary batch files (3073-byte records,
/// channel-planar RGB), converted to channel-interleaved [0, 1] pixels.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<ImageDataset> {
    if paths.is_empty() {
        return Err(AdlError::InvalidArgument("no CIFAR batch files given".into()));
    }
    let (h, w, c) = (32usize, 32usize, 3usize);
    let plane = h * w;
    let mut images: Vec<f64> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path.as_ref())?;
        if bytes.is_empty() || !(bytes.len() as u64).is_multiple_of(CIFAR_RECORD_LEN) {
            return Err(AdlError::format(
                bytes.len() as u64,
                format!(
                    "CIFAR file length {} not a positive multiple of {}",
                    bytes.len(),
                    CIFAR_RECORD_LEN
                ),
            ));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN as usize) {
            let pixels = &record[1..]; // leading byte is the label
            for p in 0..plane {
                for ch in 0..c {
                    images.push(pixels[ch * plane + p] as f64 / 255.0);
                }
            }
        }
    }
    ImageDataset::new(images, h, w, c, (0.0, 1.0))
}

/// Save in the raw tensor interchange format:
/// "ADT1" | u8 dtype (0 = f32, 1 = f64) | u8 rank (4) |
/// 4 x u32 LE dims (N, H, W, C) | little-endian payload.
pub fn save_raw_tensor(dataset: &ImageDataset, path: impl AsRef<Path>) -> Result<()> {
    save_raw_tensor_with_dtype(dataset, path, RawDtype::F64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDtype {
    F32,
    F64,
}

pub fn save_raw_tensor_with_dtype(
    dataset: &ImageDataset,
    path: impl AsRef<Path>,
    dtype: RawDtype,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(RAW_TENSOR_MAGIC)?;
    w.write_all(&[if dtype == RawDtype::F32 { 0 } else { 1 }, 4])?;
    for dim in [
        dataset.len(),
        dataset.height(),
        dataset.width(),
        dataset.channels(),
    ] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    match dtype {
        RawDtype::F32 => {
            for &v in dataset.images() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        RawDtype::F64 => {
            for &v in dataset.images() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Load a raw tensor file. The declared value range is inferred from the
/// payload bounds, widened to the containing canonical range when possible.
pub fn load_raw_tensor(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut offset = 0u64;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| AdlError::format(0, "truncated raw tensor header"))?;
    offset += 4;
    if &magic != RAW_TENSOR_MAGIC {
        return Err(AdlError::format(0, "raw tensor magic mismatch"));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)
        .map_err(|_| AdlError::format(offset, "truncated dtype/rank"))?;
    offset += 2;
    let dtype = match head[0] {
        0 => RawDtype::F32,
        1 => RawDtype::F64,
        other => return Err(AdlError::format(4, format!("unknown dtype {other}"))),
    };
    if head[1] != 4 {
        return Err(AdlError::format(5, format!("rank {} != 4", head[1])));
    }
    let n = read_u32_le(&mut r, &mut offset, "N")? as usize;
    let h = read_u32_le(&mut r, &mut offset, "H")? as usize;
    let w = read_u32_le(&mut r, &mut offset, "W")? as usize;
    let c = read_u32_le(&mut r, &mut offset, "C")? as usize;
    let count = n * h * w * c;
    let mut images = Vec::with_capacity(count);
    match dtype {
        RawDtype::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..count {
                r.read_exact(&mut buf)
                    .map_err(|_| AdlError::format(offset, "truncated payload"))?;
                offset += 4;
                images.push(f32::from_le_bytes(buf) as f64);
            }
        }
        RawDtype::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut buf)
                    .map_err(|_| AdlError::format(offset, "truncated payload"))?;
                offset += 8;
                images.push(f64::from_le_bytes(buf));
            }
        }
    }
    let lo = images.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = images.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if lo >= 0.0 && hi <= 1.0 {
        (0.0, 1.0)
    } else if lo >= -1.0 && hi <= 1.0 {
        (-1.0, 1.0)
    } else if lo < hi {
        (lo, hi)
    } else {
        // constant payload still needs a non-degenerate declared interval
        (lo - 0.5, lo + 0.5)
    };
    ImageDataset::new(images, h, w, c, range)
}

/// Affine map onto a new declared value range.
pub fn rescale(dataset: &ImageDataset, target: (f64, f64)) -> Result<ImageDataset> {
    let (slo, shi) = dataset.value_range();
    let (tlo, thi) = target;
    if !tlo.is_finite() || !thi.is_finite() || tlo >= thi {
        return Err(AdlError::InvalidArgument("degenerate target range".into()));
    }
    if (slo, shi) == target {
        return Ok(dataset.clone());
    }
    let scale = (thi - tlo) / (shi - slo);
    let images = dataset
        .images()
        .iter()
        .map(|&v| tlo + (v - slo) * scale)
        .map(|v| v.clamp(tlo, thi))
        .collect();
    ImageDataset::new(
        images,
        dataset.height(),
        dataset.width(),
        dataset.channels(),
        target,
    )
}

/// Deterministic sampling without replacement.
pub fn subset(dataset: &ImageDataset, count: usize, seed: u64) -> Result<ImageDataset> {
    if count < 1 || count > dataset.len() {
        return Err(AdlError::InvalidArgument(format!(
            "subset count {} out of range 1..={}",
            count,
            dataset.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    // partial Fisher-Yates
    for i in 0..count {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    let d = dataset.dim();
    let mut images = Vec::with_capacity(count * d);
    for &i in &indices[..count] {
        images.extend_from_slice(dataset.image(i));
    }
    ImageDataset::new(
        images,
        dataset.height(),
        dataset.width(),
        dataset.channels(),
        dataset.value_range(),
    )
}

/// Binary stencil plus signal strength for covariance manipulation.
#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    stencil: Vec<f64>,
    pub gamma: f64,
    pub seed: u64,
    /// Clamp the perturbed images back into the declared range. ON for
    /// generation, OFF for statistical analysis (the covariance math assumes
    /// no clamping).
    pub clamp: bool,
}

impl PerturbationSpec {
    /// `stencil` is flattened d = H*W*C with identical values across the
    /// channels of a pixel; entries must be 0 or 1 with at least one 1.
    pub fn new(stencil: Vec<f64>, gamma: f64, seed: u64, clamp: bool) -> Result<Self> {
        if gamma < 0.0 {
            return Err(AdlError::InvalidArgument("gamma must be >= 0".into()));
        }
        if stencil.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(AdlError::InvalidArgument("stencil entries must be 0/1".into()));
        }
        if !stencil.contains(&1.0) {
            return Err(AdlError::InvalidArgument("stencil has no nonzero pixel".into()));
        }
        Ok(PerturbationSpec {
            stencil,
            gamma,
            seed,
            clamp,
        })
    }

    pub fn stencil(&self) -> &[f64] {
        &self.stencil
    }
}

/// Bundled 28x28 binary raster of the letter W.
const W_RASTER_28: [&str; 28] = [
    "............................",
    "............................",
    "............................",
    "...#.....................#..",
    "..###...................###.",
    "..###...................###.",
    "...##...................##..",
    "...###.................###..",
    "...###........#........###..",
    "...###.......###.......###..",
    "....##.......###.......##...",
    "....###.....#####.....###...",
    "....###.....#####.....###...",
    ".....##....###.###....##....",
    ".....##....###.###....##....",
    ".....###...##...##...###....",
    ".....###..###...###..###....",
    "......##..##.....##..##.....",
    "......######.....######.....",
    "......######.....######.....",
    "......#####.......#####.....",
    ".......####.......####......",
    ".......###.........###......",
    ".......###.........###......",
    "........#...........#.......",
    "............................",
    "............................",
    "............................",
];

/// The default "W" stencil, nearest-neighbor-resampled to the target
/// resolution and replicated across channels.
pub fn w_stencil(height: usize, width: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; height * width * channels];
    for y in 0..height {
        let sy = (y * 28) / height;
        let row = W_RASTER_28[sy].as_bytes();
        for x in 0..width {
            let sx = (x * 28) / width;
            if row[sx] == b'#' {
                for c in 0..channels {
                    out[(y * width + x) * channels + c] = 1.0;
                }
            }
        }
    }
    out
}

/// Add gamma * c * s per image, with one random color vector c drawn
/// uniformly from [-1, 1]^C per image.
pub fn inject_pattern(dataset: &ImageDataset, spec: &PerturbationSpec) -> Result<ImageDataset> {
    let d = dataset.dim();
    if spec.stencil().len() != d {
        return Err(AdlError::InvalidArgument(format!(
            "stencil length {} does not match dataset dim {}",
            spec.stencil().len(),
            d
        )));
    }
    let c = dataset.channels();
    let (lo, hi) = dataset.value_range();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(dataset.len() * d);
    for i in 0..dataset.len() {
        let color: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let src = dataset.image(i);
        for (p, (&v, &s)) in src.iter().zip(spec.stencil()).enumerate() {
            let mut out = v + spec.gamma * color[p % c] * s;
            if spec.clamp {
                out = out.clamp(lo, hi);
            }
            images.push(out);
        }
    }
    if spec.clamp {
        ImageDataset::new(images, dataset.height(), dataset.width(), c, (lo, hi))
    } else {
        // unclamped outputs may leave the declared range
        let nlo = images.iter().cloned().fold(lo, f64::min);
        let nhi = images.iter().cloned().fold(hi, f64::max);
        ImageDataset::new(images, dataset.height(), dataset.width(), c, (nlo, nhi))
    }
}

/// Export one image as binary PGM (C=1) or PPM (C=3), 8-bit, mapping the
/// declared range onto 0..255.
pub fn save_image(
    pixels: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    value_range: (f64, f64),
    path: impl AsRef<Path>,
) -> Result<()> {
    if pixels.len() != height * width * channels {
        return Err(AdlError::InvalidArgument("pixel buffer shape mismatch".into()));
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    match channels {
        1 => writeln!(w, "P5\n{width} {height}\n255")?,
        3 => writeln!(w, "P6\n{width} {height}\n255")?,
        other => {
            return Err(AdlError::InvalidArgument(format!(
                "image export supports 1 or 3 channels, got {other}"
            )))
        }
    }
    let (lo, hi) = value_range;
    for &v in pixels {
        let b = (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8;
        w.write_all(&[b])?;
    }
    Ok(())
}
