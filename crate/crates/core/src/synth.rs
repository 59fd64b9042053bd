//! Seeded generator for a three-class valve-motion video benchmark with an
//! ambiguous subpopulation, plus the on-disk dataset format.
//!
//! Every clip shows a circular annulus with two leaflets hinged at its top and
//! bottom. The leaflets open and close once per clip with a class-dependent
//! amplitude; more severe classes open less and carry brighter calcification
//! speckle. Ambiguous clips take an amplitude from the gap between two class
//! ranges, a label drawn from either neighbouring class, and a haze patch over
//! the leaflets.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affine::{Affine, WarpPlan};
use crate::error::{Error, Result};
use crate::types::{Clip, ClipRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub height: usize,
    pub width: usize,
    pub clip_len: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Leaflet opening amplitude range per class, degrees.
    pub class_amplitude_deg: Vec<[f64; 2]>,
    /// Gap `i` sits between the ranges of classes `i` and `i + 1`.
    pub ambiguity_gap_deg: Vec<[f64; 2]>,
    /// Peak brightness added by calcification spots, per class.
    pub calcification: Vec<f64>,
    pub ambiguous_fraction: f64,
    /// Standard deviation of the multiplicative speckle noise.
    pub speckle_noise: f64,
    pub studies: usize,
    pub cines_per_study: usize,
    pub clips_per_cine: usize,
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            clip_len: 32,
            channels: 1,
            num_classes: 3,
            class_amplitude_deg: vec![[60.0, 80.0], [35.0, 55.0], [5.0, 25.0]],
            ambiguity_gap_deg: vec![[55.0, 60.0], [25.0, 35.0]],
            calcification: vec![0.0, 0.3, 0.6],
            ambiguous_fraction: 0.2,
            speckle_noise: 0.15,
            studies: 50,
            cines_per_study: 2,
            clips_per_cine: 2,
            split_ratios: [0.8, 0.1, 0.1],
            seed: 7,
        }
    }
}

fn ordered(r: [f64; 2]) -> (f64, f64) {
    (r[0].min(r[1]), r[0].max(r[1]))
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::Config("generator needs at least two classes".into()));
        }
        if self.class_amplitude_deg.len() != c || self.calcification.len() != c {
            return Err(Error::Config("one amplitude range and calcification level per class".into()));
        }
        if self.ambiguity_gap_deg.len() != c - 1 {
            return Err(Error::Config("one ambiguity gap per adjacent class pair".into()));
        }
        if !(1..=4).contains(&self.channels) || self.channels == 2 {
            return Err(Error::Config("channels must be 1, 3 or 4".into()));
        }
        if self.height == 0 || self.width == 0 || self.clip_len == 0 {
            return Err(Error::Config("clip dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_fraction) {
            return Err(Error::Config("ambiguous_fraction must lie in [0, 1]".into()));
        }
        for i in 0..c - 1 {
            let (a, b) = (ordered(self.class_amplitude_deg[i]), ordered(self.class_amplitude_deg[i + 1]));
            let (lower, upper) = if a.0 < b.0 { (a, b) } else { (b, a) };
            let gap = ordered(self.ambiguity_gap_deg[i]);
            if !(lower.1 < upper.0) {
                return Err(Error::Config(format!("class ranges {i} and {} overlap", i + 1)));
            }
            if !(gap.0 < gap.1 && gap.0 >= lower.1 && gap.1 <= upper.0) {
                return Err(Error::Config(format!("ambiguity gap {i} is not between its class ranges")));
            }
        }
        for (i, a) in self.class_amplitude_deg.iter().enumerate() {
            for b in &self.class_amplitude_deg[i + 1..] {
                let (a, b) = (ordered(*a), ordered(*b));
                if a.0 <= b.1 && b.0 <= a.1 {
                    return Err(Error::Config("class amplitude ranges must be disjoint".into()));
                }
            }
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_ratios.iter().any(|&r| r < 0.0) {
            return Err(Error::Config("split ratios must be non-negative and sum to 1".into()));
        }
        Ok(())
    }

    pub fn total_clips(&self) -> usize {
        self.studies * self.cines_per_study * self.clips_per_cine
    }

    /// Class whose amplitude range contains `amplitude`, if any.
    pub fn class_of_amplitude(&self, amplitude: f64) -> Option<usize> {
        self.class_amplitude_deg.iter().position(|&r| {
            let (lo, hi) = ordered(r);
            (lo..=hi).contains(&amplitude)
        })
    }

    pub fn in_gap(&self, amplitude: f64) -> bool {
        self.ambiguity_gap_deg.iter().any(|&r| {
            let (lo, hi) = ordered(r);
            lo < amplitude && amplitude < hi
        })
    }
}

/// Leaflet opening angle at frame `t`: one raised-cosine cycle per clip with
/// peak `amplitude`. Over the `frames` samples its mean is exactly
/// `amplitude / 2` for any phase.
pub fn leaflet_angle_deg(amplitude: f64, phase: f64, t: usize, frames: usize) -> f64 {
    amplitude * 0.5 * (1.0 - (2.0 * PI * (t as f64 + phase) / frames as f64).cos())
}

/// A generated clip together with the generator's latent parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedClip {
    pub record: ClipRecord,
    pub amplitude_deg: f64,
    pub phase: f64,
    /// Per-frame leaflet opening angle, degrees.
    pub trajectory: Vec<f64>,
}

struct Segment {
    a: (f64, f64),
    b: (f64, f64),
}

impl Segment {
    fn distance(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let s = (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0);
        let (qx, qy) = (self.a.0 + s * dx, self.a.1 + s * dy);
        ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
    }

    fn at(&self, s: f64) -> (f64, f64) {
        (self.a.0 + s * (self.b.0 - self.a.0), self.a.1 + s * (self.b.1 - self.a.1))
    }
}

/// Soft stroke coverage for a pixel at `distance` from a shape of half width `half`.
fn coverage(distance: f64, half: f64) -> f64 {
    (half + 0.5 - distance).clamp(0.0, 1.0)
}

/// Renders one clip. `class` is the underlying severity; for ambiguous clips
/// the label is redrawn from the two classes bordering the chosen gap.
pub fn generate_clip(spec: &GeneratorSpec, class: usize, ambiguous: bool, seed: u64) -> GeneratedClip {
    assert!(class < spec.num_classes, "class {class} out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.num_classes;

    let (amplitude, label, calcification) = if ambiguous {
        let gaps: Vec<usize> = [class.checked_sub(1), (class + 1 < c).then_some(class)]
            .into_iter()
            .flatten()
            .collect();
        let gap = gaps[rng.random_range(0..gaps.len())];
        let (lo, hi) = ordered(spec.ambiguity_gap_deg[gap]);
        let mut amplitude = rng.random_range(lo..hi);
        while amplitude <= lo {
            amplitude = rng.random_range(lo..hi);
        }
        let label = if rng.random_bool(0.5) { gap } else { gap + 1 };
        let calc = 0.5 * (spec.calcification[gap] + spec.calcification[gap + 1]);
        (amplitude, label, calc)
    } else {
        let (lo, hi) = ordered(spec.class_amplitude_deg[class]);
        (rng.random_range(lo..=hi), class, spec.calcification[class])
    };

    let (h, w, frames, ch) = (spec.height, spec.width, spec.clip_len, spec.channels);
    let s = w.min(h) as f64 / 64.0;
    let centre = (
        w as f64 / 2.0 + rng.random_range(-3.0..3.0) * s,
        h as f64 / 2.0 + rng.random_range(-3.0..3.0) * s,
    );
    let radius = rng.random_range(17.0..21.0) * s;
    let leaflet_len = 0.95 * radius;
    let phase = rng.random_range(0.0..frames as f64);
    let spots: Vec<f64> = (0..4).map(|_| rng.random_range(0.3..1.0)).collect();
    let background: f64 = rng.random_range(0.06..0.12);
    let trajectory: Vec<f64> = (0..frames)
        .map(|t| leaflet_angle_deg(amplitude, phase, t, frames))
        .collect();

    let haze = ambiguous.then(|| {
        let (hw, hh) = (0.75 * radius, 1.05 * radius);
        let cx = centre.0 + 0.35 * radius;
        (cx - hw, cx + hw, centre.1 - hh, centre.1 + hh)
    });

    let mut voxels = Array4::<f32>::zeros((h, w, frames, ch));
    for (t, &angle) in trajectory.iter().enumerate() {
        let (sin, cos) = angle.to_radians().sin_cos();
        let top = Segment {
            a: (centre.0, centre.1 - radius),
            b: (centre.0 + leaflet_len * sin, centre.1 - radius + leaflet_len * cos),
        };
        let bottom = Segment {
            a: (centre.0, centre.1 + radius),
            b: (centre.0 + leaflet_len * sin, centre.1 + radius - leaflet_len * cos),
        };
        let spot_centres: Vec<(f64, f64)> = spots
            .iter()
            .flat_map(|&f| [top.at(f), bottom.at(f)])
            .collect();
        for i in 0..h {
            for j in 0..w {
                let p = (j as f64 + 0.5, i as f64 + 0.5);
                let r = ((p.0 - centre.0).powi(2) + (p.1 - centre.1).powi(2)).sqrt();
                let ring = 0.55 * coverage((r - radius).abs(), 1.5 * s);
                let leaf = 0.8 * coverage(top.distance(p).min(bottom.distance(p)), 1.0 * s);
                let mut v = background.max(ring).max(leaf);
                for sc in &spot_centres {
                    let d2 = (p.0 - sc.0).powi(2) + (p.1 - sc.1).powi(2);
                    v += calcification * (-d2 / (2.0 * (1.2 * s).powi(2))).exp();
                }
                if let Some((x0, x1, y0, y1)) = haze {
                    if (x0..x1).contains(&p.0) && (y0..y1).contains(&p.1) {
                        v = 0.25 * v + 0.75 * 0.3;
                    }
                }
                let noise: f64 = StandardNormal.sample(&mut rng);
                v *= (1.0 + spec.speckle_noise * noise).max(0.0);
                let q = (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0;
                for k in 0..ch {
                    voxels[[i, j, t, k]] = q;
                }
            }
        }
    }

    GeneratedClip {
        record: ClipRecord {
            clip: Clip {
                voxels,
                frame_rate: frames as f64,
            },
            label,
            study_id: String::new(),
            cine_id: String::new(),
            clip_id: String::new(),
            ambiguous,
        },
        amplitude_deg: amplitude,
        phase,
        trajectory,
    }
}

/// Applies a seeded random rotation and resized crop to every frame.
pub fn augment(clip: &Clip, seed: u64) -> (Clip, Affine) {
    let affine = Affine::sample(&mut ChaCha8Rng::seed_from_u64(seed));
    (apply_affine(clip, &affine), affine)
}

pub fn apply_affine(clip: &Clip, affine: &Affine) -> Clip {
    if affine.is_identity() {
        return clip.clone();
    }
    let (h, w, t, ch) = clip.dims();
    let flat = clip
        .voxels
        .mapv(f64::from)
        .into_shape_with_order((h * w * t, ch))
        .expect("contiguous");
    let warped: Array2<f64> = WarpPlan::new(affine, h, w).apply(&flat, [h, w, t]);
    let voxels = warped
        .mapv(|v| v.clamp(0.0, 1.0) as f32)
        .into_shape_with_order((h, w, t, ch))
        .expect("same element count");
    Clip {
        voxels,
        frame_rate: clip.frame_rate,
    }
}

/// Stable 64-bit seed derived from a dataset seed and an identifier.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Clip directory relative to the dataset root.
    pub path: PathBuf,
    pub study_id: String,
    pub cine_id: String,
    pub clip_id: String,
    pub label: usize,
    pub ambiguous: bool,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Label of a group of clips: majority over its non-ambiguous members, or over
/// all members when every one is ambiguous. Ties go to the lower class.
pub fn group_label<'a>(members: impl IntoIterator<Item = (usize, bool)>) -> Option<usize> {
    let members: Vec<(usize, bool)> = members.into_iter().collect();
    let clean: Vec<usize> = members.iter().filter(|m| !m.1).map(|m| m.0).collect();
    let pool: Vec<usize> = if clean.is_empty() {
        members.iter().map(|m| m.0).collect()
    } else {
        clean
    };
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in pool {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, n)| n == best).map(|(l, _)| l)
}

impl Manifest {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).map_err(|err| Error::json(path, err))?;
            out.push(b'\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn study_labels(&self) -> BTreeMap<String, usize> {
        let mut groups: BTreeMap<String, Vec<(usize, bool)>> = BTreeMap::new();
        for e in &self.entries {
            groups.entry(e.study_id.clone()).or_default().push((e.label, e.ambiguous));
        }
        groups
            .into_iter()
            .map(|(k, v)| (k, group_label(v).expect("non-empty group")))
            .collect()
    }
}

/// Whole-study split counts by largest remainder; every split with a
/// nonzero ratio receives at least one study.
fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| ((r * n as f64) * 1e9).round() / 1e9).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    let mut remaining = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).expect("three splits");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Assigns whole studies to train/val/test. Studies are shuffled within each
/// study label, interleaved round-robin across labels, and cut into
/// contiguous ranges, so every split sees every class when it can.
pub fn split_by_study(manifest: &Manifest, ratios: [f64; 3], seed: u64) -> Result<Manifest> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config("split ratios must be non-negative and sum to 1".into()));
    }
    let labels = manifest.study_labels();
    let needed = ratios.iter().filter(|&&r| r > 0.0).count();
    if labels.len() < needed {
        return Err(Error::NotEnoughStudies {
            needed,
            available: labels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (study, label) in &labels {
        by_label.entry(*label).or_default().push(study.clone());
    }
    for studies in by_label.values_mut() {
        studies.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(labels.len());
    let longest = by_label.values().map(Vec::len).max().unwrap_or(0);
    for round in 0..longest {
        for studies in by_label.values() {
            if let Some(s) = studies.get(round) {
                order.push(s.clone());
            }
        }
    }
    let counts = split_counts(order.len(), ratios);
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    let mut cursor = 0;
    for (split, &count) in Split::ASSIGNED.iter().zip(&counts) {
        for s in &order[cursor..cursor + count] {
            assignment.insert(s.clone(), *split);
        }
        cursor += count;
    }
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            split: assignment[&e.study_id],
            ..e.clone()
        })
        .collect();
    Ok(Manifest { entries })
}

/// Identifiers and generation inputs of every clip, in canonical order.
fn clip_plan(spec: &GeneratorSpec) -> Vec<(String, String, String, usize, bool, u64)> {
    let mut plan = Vec::with_capacity(spec.total_clips());
    for s in 0..spec.studies {
        let study = format!("s{s:04}");
        let class = s % spec.num_classes;
        for c in 0..spec.cines_per_study {
            let cine = format!("{study}_c{c}");
            for k in 0..spec.clips_per_cine {
                let clip_id = format!("{cine}_k{k}");
                let seed = derive_seed(spec.seed, &clip_id);
                let ambiguous = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed ^ 0xa5a5, &clip_id))
                    .random_bool(spec.ambiguous_fraction);
                plan.push((study.clone(), cine.clone(), clip_id, class, ambiguous, seed));
            }
        }
    }
    plan
}

pub fn frame_path(clip_dir: &Path, t: usize) -> PathBuf {
    clip_dir.join(format!("frame_{t:04}.png"))
}

fn write_frames(clip: &Clip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w, frames, ch) = clip.dims();
    for t in 0..frames {
        let mut buf = Vec::with_capacity(h * w * ch);
        for i in 0..h {
            for j in 0..w {
                for k in 0..ch {
                    buf.push((clip.voxels[[i, j, t, k]] * 255.0).round() as u8);
                }
            }
        }
        let color = match ch {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            _ => image::ExtendedColorType::Rgba8,
        };
        let path = frame_path(dir, t);
        image::save_buffer(&path, &buf, w as u32, h as u32, color)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

pub fn load_clip(clip_dir: &Path, spec: &GeneratorSpec) -> Result<Clip> {
    let (h, w, frames, ch) = (spec.height, spec.width, spec.clip_len, spec.channels);
    let mut voxels = Array4::<f32>::zeros((h, w, frames, ch));
    for t in 0..frames {
        let path = frame_path(clip_dir, t);
        let img = image::open(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        if img.width() as usize != w || img.height() as usize != h {
            return Err(Error::shape("frame size", format!("{w}x{h}"), format!("{}x{}", img.width(), img.height())));
        }
        let raw: Vec<u8> = match ch {
            1 => img.to_luma8().into_raw(),
            3 => img.to_rgb8().into_raw(),
            _ => img.to_rgba8().into_raw(),
        };
        for i in 0..h {
            for j in 0..w {
                for k in 0..ch {
                    voxels[[i, j, t, k]] = raw[(i * w + j) * ch + k] as f32 / 255.0;
                }
            }
        }
    }
    Ok(Clip {
        voxels,
        frame_rate: frames as f64,
    })
}

/// Writes every clip and `manifest.jsonl` under `root`. On failure, removes
/// whatever this call created.
pub fn generate_dataset(spec: &GeneratorSpec, root: &Path) -> Result<Manifest> {
    spec.validate()?;
    let existed = root.exists();
    let result = write_dataset(spec, root);
    if result.is_err() {
        if existed {
            let studies: BTreeSet<String> = clip_plan(spec).into_iter().map(|p| p.0).collect();
            for s in studies {
                let _ = fs::remove_dir_all(root.join(s));
            }
            let _ = fs::remove_file(root.join(MANIFEST_FILE));
        } else {
            let _ = fs::remove_dir_all(root);
        }
    }
    result
}

fn write_dataset(spec: &GeneratorSpec, root: &Path) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(spec.total_clips());
    for (study, cine, clip_id, class, ambiguous, seed) in clip_plan(spec) {
        let generated = generate_clip(spec, class, ambiguous, seed);
        let rel = PathBuf::from(&study).join(&cine).join(&clip_id);
        write_frames(&generated.record.clip, &root.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            study_id: study,
            cine_id: cine,
            clip_id,
            label: generated.record.label,
            ambiguous,
            split: Split::Unassigned,
        });
    }
    let manifest = split_by_study(&Manifest { entries }, spec.split_ratios, spec.seed)?;
    manifest.write_jsonl(&root.join(MANIFEST_FILE))?;
    let mut marker = fs::File::create(root.join("generator.json")).map_err(|e| Error::io(root, e))?;
    let text = serde_json::to_string_pretty(spec).map_err(|e| Error::json(root, e))?;
    marker.write_all(text.as_bytes()).map_err(|e| Error::io(root, e))?;
    Ok(manifest)
}

/// Generates clips in memory without touching the filesystem; returns the
/// same records and split tags that [`generate_dataset`] would write.
pub fn generate_in_memory(spec: &GeneratorSpec) -> Result<(Manifest, Vec<ClipRecord>)> {
    spec.validate()?;
    let mut entries = Vec::new();
    let mut records = Vec::new();
    for (study, cine, clip_id, class, ambiguous, seed) in clip_plan(spec) {
        let mut g = generate_clip(spec, class, ambiguous, seed);
        g.record.study_id = study.clone();
        g.record.cine_id = cine.clone();
        g.record.clip_id = clip_id.clone();
        entries.push(ManifestEntry {
            path: PathBuf::from(&study).join(&cine).join(&clip_id),
            study_id: study,
            cine_id: cine,
            clip_id,
            label: g.record.label,
            ambiguous,
            split: Split::Unassigned,
        });
        records.push(g.record);
    }
    let manifest = split_by_study(&Manifest { entries }, spec.split_ratios, spec.seed)?;
    Ok((manifest, records))
}

/// A manifest with its clips loaded into memory, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<ClipRecord>,
}

impl Dataset {
    pub fn load(root: &Path, spec: &GeneratorSpec) -> Result<Self> {
        let manifest = Manifest::read_jsonl(&root.join(MANIFEST_FILE))?;
        let records = manifest
            .entries
            .iter()
            .map(|e| {
                Ok(ClipRecord {
                    clip: load_clip(&root.join(&e.path), spec)?,
                    label: e.label,
                    study_id: e.study_id.clone(),
                    cine_id: e.cine_id.clone(),
                    clip_id: e.clip_id.clone(),
                    ambiguous: e.ambiguous,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, records })
    }

    pub fn in_memory(spec: &GeneratorSpec) -> Result<Self> {
        let (manifest, records) = generate_in_memory(spec)?;
        Ok(Self { manifest, records })
    }

    pub fn split(&self, split: Split) -> Vec<&ClipRecord> {
        self.manifest
            .entries
            .iter()
            .zip(&self.records)
            .filter(|(e, _)| e.split == split)
            .map(|(_, r)| r)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GeneratorSpec {
        GeneratorSpec {
            height: 32,
            width: 32,
            clip_len: 8,
            studies: 10,
            cines_per_study: 1,
            clips_per_cine: 2,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn same_seed_same_clip() {
        let spec = GeneratorSpec::default();
        let a = generate_clip(&spec, 0, false, 7);
        let b = generate_clip(&spec, 0, false, 7);
        assert_eq!(a, b);
        let c = generate_clip(&spec, 0, false, 8);
        assert_ne!(a.record.clip, c.record.clip);
    }

    #[test]
    fn clean_amplitude_recovered_from_trajectory() {
        let spec = GeneratorSpec::default();
        for seed in 0..20 {
            let g = generate_clip(&spec, 2, false, seed);
            // twice the mean of a full raised-cosine cycle is its peak
            let mean = g.trajectory.iter().sum::<f64>() / g.trajectory.len() as f64;
            let amplitude = 2.0 * mean;
            assert!((5.0..=25.0).contains(&amplitude), "{amplitude}");
            assert!((amplitude - g.amplitude_deg).abs() < 1e-9);
            assert_eq!(g.record.label, 2);
        }
    }

    #[test]
    fn ambiguous_clips_sit_in_gaps() {
        let spec = GeneratorSpec::default();
        for seed in 0..40 {
            let g = generate_clip(&spec, 1, true, seed);
            assert!(spec.in_gap(g.amplitude_deg));
            assert!(spec.class_of_amplitude(g.amplitude_deg).is_none());
            let a = g.amplitude_deg;
            if (55.0..60.0).contains(&a) {
                assert!([0, 1].contains(&g.record.label));
            } else {
                assert!((25.0..35.0).contains(&a));
                assert!([1, 2].contains(&g.record.label));
            }
        }
    }

    #[test]
    fn amplitude_threshold_oracle_separates_clean_clips() {
        let spec = GeneratorSpec::default();
        for class in 0..3 {
            for seed in 0..30 {
                let g = generate_clip(&spec, class, false, seed * 3 + class as u64);
                assert_eq!(spec.class_of_amplitude(g.amplitude_deg), Some(g.record.label));
                assert!(!spec.in_gap(g.amplitude_deg));
            }
        }
    }

    #[test]
    fn voxels_in_unit_interval() {
        let spec = GeneratorSpec::default();
        let g = generate_clip(&spec, 1, true, 3);
        assert_eq!(g.record.clip.dims(), (64, 64, 32, 1));
        assert!(g.record.clip.voxels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn spec_validation() {
        let mut spec = GeneratorSpec::default();
        spec.validate().unwrap();
        spec.ambiguity_gap_deg[0] = [50.0, 58.0];
        assert!(spec.validate().is_err());
        let mut spec = GeneratorSpec::default();
        spec.class_amplitude_deg[1] = [35.0, 65.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn split_counts_follow_ratios() {
        assert_eq!(split_counts(50, [0.8, 0.1, 0.1]), [40, 5, 5]);
        assert_eq!(split_counts(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(split_counts(10, [1.0, 0.0, 0.0]), [10, 0, 0]);
        assert_eq!(split_counts(3, [0.8, 0.1, 0.1]), [1, 1, 1]);
    }

    fn fake_manifest(studies: usize) -> Manifest {
        let entries = (0..studies)
            .flat_map(|s| {
                (0..2).map(move |k| ManifestEntry {
                    path: PathBuf::new(),
                    study_id: format!("s{s:03}"),
                    cine_id: format!("s{s:03}_c0"),
                    clip_id: format!("s{s:03}_c0_k{k}"),
                    label: s % 3,
                    ambiguous: false,
                    split: Split::Unassigned,
                })
            })
            .collect();
        Manifest { entries }
    }

    #[test]
    fn split_by_study_counts_and_exclusivity() {
        let m = split_by_study(&fake_manifest(10), [0.8, 0.1, 0.1], 1).unwrap();
        let mut per_split: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
        for e in &m.entries {
            per_split.entry(e.split).or_default().insert(e.study_id.clone());
        }
        assert_eq!(per_split[&Split::Train].len(), 8);
        assert_eq!(per_split[&Split::Val].len(), 1);
        assert_eq!(per_split[&Split::Test].len(), 1);
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &m.entries {
            assert_eq!(*seen.entry(&e.study_id).or_insert(e.split), e.split);
        }
    }

    #[test]
    fn degenerate_ratios_put_everything_in_train() {
        let m = split_by_study(&fake_manifest(4), [1.0, 0.0, 0.0], 1).unwrap();
        assert!(m.entries.iter().all(|e| e.split == Split::Train));
    }

    #[test]
    fn too_few_studies_rejected() {
        let err = split_by_study(&fake_manifest(2), [0.8, 0.1, 0.1], 1).unwrap_err();
        assert!(matches!(err, Error::NotEnoughStudies { needed: 3, available: 2 }));
    }

    #[test]
    fn fifty_studies_split_40_5_5_with_all_classes_in_test() {
        let m = split_by_study(&fake_manifest(50), [0.8, 0.1, 0.1], 7).unwrap();
        let labels = m.study_labels();
        for (split, n) in [(Split::Train, 40), (Split::Val, 5), (Split::Test, 5)] {
            let studies: BTreeSet<&String> = m.split(split).iter().map(|e| &e.study_id).collect();
            assert_eq!(studies.len(), n);
            let classes: BTreeSet<usize> = studies.iter().map(|s| labels[*s]).collect();
            assert_eq!(classes.len(), 3);
        }
    }

    #[test]
    fn augment_identity_and_determinism() {
        let spec = small_spec();
        let clip = generate_clip(&spec, 0, false, 1).record.clip;
        assert_eq!(apply_affine(&clip, &Affine::identity()), clip);
        let (a, pa) = augment(&clip, 11);
        let (b, pb) = augment(&clip, 11);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a.voxels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn group_label_prefers_clean_members() {
        assert_eq!(group_label([(2, false), (1, true), (1, true)]), Some(2));
        assert_eq!(group_label([(2, true), (1, true)]), Some(1));
        assert_eq!(group_label(std::iter::empty()), None);
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let manifest = generate_dataset(&spec, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 20);
        let first = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(dir.path().join("s0000/s0000_c0/s0000_c0_k0/frame_0000.png").exists());

        let loaded = Dataset::load(dir.path(), &spec).unwrap();
        let memory = Dataset::in_memory(&spec).unwrap();
        assert_eq!(loaded.manifest, memory.manifest);
        for (a, b) in loaded.records.iter().zip(&memory.records) {
            assert_eq!(a, b);
        }

        let dir2 = tempfile::tempdir().unwrap();
        generate_dataset(&spec, dir2.path()).unwrap();
        assert_eq!(first, std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap());
    }
}
