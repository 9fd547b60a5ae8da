//! Synthetic blob images and the on-disk dataset layout.
//!
//! A dataset directory holds `images/<id>.pgm`, `masks/<id>.pgm` and
//! `manifest.jsonl`. Images are 8-bit binary PGM (`value = round(255·intensity)`);
//! masks are binary PGM with 0 for background and 255 for foreground.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{connected_components, tightest_box, BBox, BinaryMask};
use crate::noise::{perturb_dataset, BoxRecord, NoiseParams};
use crate::raster::Raster;
use crate::rng::{keyed_stream, stream_key, StreamRng, SAMPLE_DOMAIN};

pub const PIXEL_NOISE_STD: f64 = 0.05;
const MAX_LAYOUT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image_id: String,
    /// Grayscale intensities in `[0, 1]`, quantized to multiples of 1/255.
    pub image: Raster<f64>,
    pub gt_mask: BinaryMask,
    /// Tightest box of each connected component of `gt_mask`.
    pub clean_boxes: Vec<BBox>,
}

/// A sample with the (possibly noisy) boxes used for training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample: SyntheticSample,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    exponent: f64,
    rotation: f64,
    harmonics: [(f64, f64); 3],
}

impl Blob {
    fn random(rng: &mut StreamRng, h: usize, w: usize) -> Blob {
        let scale = h.min(w) as f64;
        let a = rng.gen_range(0.09..0.2) * scale;
        let b = rng.gen_range(0.09..0.2) * scale;
        let reach = a.max(b) * 1.25 + 2.0;
        let cx = rng.gen_range(reach.min(w as f64 / 2.0)..(w as f64 - reach).max(w as f64 / 2.0 + 1e-9));
        let cy = rng.gen_range(reach.min(h as f64 / 2.0)..(h as f64 - reach).max(h as f64 / 2.0 + 1e-9));
        let mut harmonics = [(0.0, 0.0); 3];
        for hm in &mut harmonics {
            *hm = (rng.gen_range(0.0..0.08), rng.gen_range(0.0..2.0 * PI));
        }
        Blob {
            cx,
            cy,
            a,
            b,
            exponent: rng.gen_range(1.6..4.0),
            rotation: rng.gen_range(0.0..PI),
            harmonics,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.rotation.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let rho = u.hypot(v);
        if rho == 0.0 {
            return true;
        }
        let phi = v.atan2(u);
        let n = self.exponent;
        let radius = ((phi.cos() / self.a).abs().powf(n) + (phi.sin() / self.b).abs().powf(n)).powf(-1.0 / n);
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, &(amp, phase))| amp * ((k + 2) as f64 * phi + phase).sin())
            .sum();
        rho <= radius * (1.0 + wobble)
    }

    fn render(&self, h: usize, w: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |i, j| self.contains(j as f64 + 0.5, i as f64 + 0.5))
    }
}

fn dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    let (h, w) = mask.shape();
    BinaryMask::from_fn(h, w, |i, j| {
        let (i0, i1) = (i.saturating_sub(r), (i + r + 1).min(h));
        let (j0, j1) = (j.saturating_sub(r), (j + r + 1).min(w));
        (i0..i1).any(|a| (j0..j1).any(|b| mask.get(a, b)))
    })
}

fn touches_border(mask: &BinaryMask) -> bool {
    let (h, w) = mask.shape();
    mask.pixels().any(|(i, j)| i == 0 || j == 0 || i + 1 == h || j + 1 == w)
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Renders one image with `n_objects` separated blobs.
pub fn generate_sample(seed: u64, height: usize, width: usize, n_objects: usize) -> Result<SyntheticSample> {
    generate_with_id(seed, "sample", height, width, n_objects)
}

fn generate_with_id(seed: u64, image_id: &str, height: usize, width: usize, n_objects: usize) -> Result<SyntheticSample> {
    if !(1..=2).contains(&n_objects) {
        return Err(Error::Config(format!("n_objects must be 1 or 2, got {n_objects}")));
    }
    if height < 16 || width < 16 {
        return Err(Error::Config(format!("image must be at least 16x16, got {height}x{width}")));
    }
    let mut rng = keyed_stream(SAMPLE_DOMAIN, seed, image_id, n_objects as u64, 0);
    let gt_mask = 'layout: {
        for _ in 0..MAX_LAYOUT_ATTEMPTS {
            let mut union = BinaryMask::zeros(height, width);
            let mut ok = true;
            for _ in 0..n_objects {
                let blob = Blob::random(&mut rng, height, width).render(height, width);
                let single = connected_components(&blob).len() == 1;
                let separated = dilate(&blob, 2).intersection_count(&union)? == 0;
                if blob.count() < 16 || !single || !separated || touches_border(&blob) {
                    ok = false;
                    break;
                }
                union = union.or(&blob)?;
            }
            if ok {
                break 'layout union;
            }
        }
        return Err(Error::Config(format!("could not place {n_objects} blobs in {height}x{width}")));
    };

    let bg = rng.gen_range(0.22..0.38);
    let fg = rng.gen_range(0.62..0.78);
    let noise = Normal::new(0.0, PIXEL_NOISE_STD).expect("valid std");
    let image = Raster::from_fn(height, width, |i, j| {
        let base = if gt_mask.get(i, j) { fg } else { bg };
        quantize(base + noise.sample(&mut rng))
    });
    let clean_boxes = connected_components(&gt_mask)
        .iter()
        .filter_map(tightest_box)
        .collect();
    Ok(SyntheticSample {
        image_id: image_id.to_string(),
        image,
        gt_mask,
        clean_boxes,
    })
}

/// Seed for one sample, derived from the dataset seed and the sample id.
pub fn sample_seed(dataset_seed: u64, image_id: &str) -> u64 {
    let key = stream_key(SAMPLE_DOMAIN, dataset_seed, image_id, 0, 0);
    u64::from_le_bytes(key[..8].try_into().unwrap())
}

/// `count` samples named `<prefix>-0000`, ... with one or two objects each.
pub fn generate_split(dataset_seed: u64, prefix: &str, count: usize, height: usize, width: usize) -> Result<Vec<SyntheticSample>> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let id = format!("{prefix}-{k:04}");
            let seed = sample_seed(dataset_seed, &id);
            let n_objects = if seed.is_multiple_of(2) { 1 } else { 2 };
            generate_with_id(seed, &id, height, width, n_objects)
        })
        .collect()
}

/// Attaches boxes perturbed from the clean ones.
pub fn add_noisy_boxes(samples: Vec<SyntheticSample>, noise: &NoiseParams) -> Result<Vec<LabeledSample>> {
    let records: Vec<BoxRecord> = samples.iter().map(box_record).collect();
    let noisy = perturb_dataset(&records, noise)?;
    Ok(samples
        .into_iter()
        .zip(noisy)
        .map(|(sample, rec)| LabeledSample {
            sample,
            boxes: rec.boxes,
        })
        .collect())
}

pub const BENCHMARK_TRAIN: usize = 200;
pub const BENCHMARK_TEST: usize = 50;
pub const BENCHMARK_SIZE: usize = 64;

/// The desk-scale benchmark: 200 noisy-box training and 50 test images of
/// 64×64. `seed` drives both the images and the box noise.
pub fn benchmark(seed: u64, sigma: f64) -> Result<(Vec<LabeledSample>, Vec<SyntheticSample>)> {
    let noise = NoiseParams { sigma, seed, ..NoiseParams::default() };
    let train = generate_split(seed, "train", BENCHMARK_TRAIN, BENCHMARK_SIZE, BENCHMARK_SIZE)?;
    let test = generate_split(seed, "test", BENCHMARK_TEST, BENCHMARK_SIZE, BENCHMARK_SIZE)?;
    Ok((add_noisy_boxes(train, &noise)?, test))
}

pub fn box_record(s: &SyntheticSample) -> BoxRecord {
    BoxRecord {
        image_id: s.image_id.clone(),
        boxes: s.clean_boxes.clone(),
        height: Some(s.image.height()),
        width: Some(s.image.width()),
    }
}

// ---------------------------------------------------------------------------
// PGM

pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PGM with maxval 255, returning `(height, width, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::parse(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
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
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][k];
            return Err(Error::parse(pos, format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::parse(start, "number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::parse(pos, format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse(pos, "expected whitespace after header"));
    }
    pos += 1;
    let n = width * height;
    if bytes.len() - pos != n {
        return Err(Error::parse(pos, format!("expected {n} pixel bytes, found {}", bytes.len() - pos)));
    }
    Ok((height, width, bytes[pos..].to_vec()))
}

pub fn image_to_pgm(image: &Raster<f64>) -> Vec<u8> {
    let pixels: Vec<u8> = image.as_slice().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    encode_pgm(image.height(), image.width(), &pixels)
}

pub fn image_from_pgm(bytes: &[u8]) -> Result<Raster<f64>> {
    let (h, w, px) = decode_pgm(bytes)?;
    Raster::from_vec(h, w, px.into_iter().map(|b| b as f64 / 255.0).collect())
}

pub fn mask_to_pgm(mask: &BinaryMask) -> Vec<u8> {
    let pixels: Vec<u8> = mask.as_slice().iter().map(|&v| if v { 255 } else { 0 }).collect();
    encode_pgm(mask.height(), mask.width(), &pixels)
}

pub fn mask_from_pgm(bytes: &[u8]) -> Result<BinaryMask> {
    let (h, w, px) = decode_pgm(bytes)?;
    let header = bytes.len() - px.len();
    let mut data = Vec::with_capacity(px.len());
    for (k, b) in px.into_iter().enumerate() {
        match b {
            0 => data.push(false),
            255 => data.push(true),
            other => return Err(Error::parse(header + k, format!("mask value {other} is neither 0 nor 255"))),
        }
    }
    Ok(BinaryMask::from_raster(Raster::from_vec(h, w, data)?))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Path relative to the dataset directory.
    pub image: String,
    pub mask: String,
    pub height: usize,
    pub width: usize,
    pub clean_boxes: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_boxes: Option<Vec<BBox>>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in BufReader::new(file).lines() {
        let line = line?;
        let len = line.len() + 1;
        if !line.trim().is_empty() {
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::parse(offset, format!("manifest row: {e}")))?;
            if let Some(noisy) = &entry.noisy_boxes {
                if noisy.len() != entry.clean_boxes.len() {
                    return Err(Error::parse(offset, format!("{}: noisy and clean box lists differ in length", entry.image_id)));
                }
            }
            out.push(entry);
        }
        offset += len;
    }
    Ok(out)
}

/// Writes images, masks and manifest for one split.
pub fn write_dataset(dir: &Path, samples: &[SyntheticSample], noisy: Option<&[Vec<BBox>]>, seed: u64, sigma: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = fs::File::create(dir.join(MANIFEST_FILE))?;
    for (k, s) in samples.iter().enumerate() {
        let image = format!("images/{}.pgm", s.image_id);
        let mask = format!("masks/{}.pgm", s.image_id);
        fs::write(dir.join(&image), image_to_pgm(&s.image))?;
        fs::write(dir.join(&mask), mask_to_pgm(&s.gt_mask))?;
        let entry = ManifestEntry {
            image_id: s.image_id.clone(),
            image,
            mask,
            height: s.image.height(),
            width: s.image.width(),
            clean_boxes: s.clean_boxes.clone(),
            noisy_boxes: noisy.map(|n| n[k].clone()),
            seed,
            sigma,
        };
        writeln!(manifest, "{}", serde_json::to_string(&entry)?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEntry {
    pub entry: ManifestEntry,
    pub sample: SyntheticSample,
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<LoadedEntry>> {
    let entries = read_manifest(&dir.join(MANIFEST_FILE))?;
    entries
        .into_iter()
        .map(|entry| {
            let image = image_from_pgm(&fs::read(resolve(dir, &entry.image))?)?;
            let gt_mask = mask_from_pgm(&fs::read(resolve(dir, &entry.mask))?)?;
            if image.shape() != (entry.height, entry.width) || gt_mask.shape() != image.shape() {
                return Err(Error::Config(format!("{}: image, mask and manifest sizes disagree", entry.image_id)));
            }
            let sample = SyntheticSample {
                image_id: entry.image_id.clone(),
                image,
                gt_mask,
                clean_boxes: entry.clean_boxes.clone(),
            };
            Ok(LoadedEntry { entry, sample })
        })
        .collect()
}
