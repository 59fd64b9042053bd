//! ROI overlays, the prototype gallery and per-clip reasoning reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, Rgb, RgbImage, RgbaImage};
use ndarray::{Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{argmax_class, top_k};
use crate::model::Model;
use crate::synth::frame_path;
use crate::types::{Clip, ClipRecord, PrototypeTag};

/// Weight of the heat colour in an overlay pixel.
pub const OVERLAY_OPACITY: f64 = 0.45;
/// Overlays written per report for the predicted class.
pub const REPORT_TOP_K: usize = 3;
const GIF_FRAME_MS: u32 = 80;

/// `|M|` rescaled to `[0, 1]` over the whole map. `None` for an all-zero map;
/// a constant nonzero map becomes all ones.
pub fn normalize_map(map: ArrayView3<f64>) -> Option<Array3<f64>> {
    let abs = map.mapv(f64::abs);
    let max = abs.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return None;
    }
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return Some(Array3::ones(abs.raw_dim()));
    }
    Some(abs.mapv(|v| (v - min) / (max - min)))
}

/// Sample positions and weights for resizing one axis with half-pixel
/// centres, clamped at the borders.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

/// Trilinear resize of an `[H, W, T]` volume.
pub fn trilinear_upsample(map: ArrayView3<f64>, out: (usize, usize, usize)) -> Array3<f64> {
    let (h, w, t) = map.dim();
    let (th, tw, tt) = (axis_taps(h, out.0), axis_taps(w, out.1), axis_taps(t, out.2));
    Array3::from_shape_fn(out, |(i, j, k)| {
        let (y0, y1, fy) = th[i];
        let (x0, x1, fx) = tw[j];
        let (t0, t1, ft) = tt[k];
        let mut acc = 0.0;
        for (y, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            for (x, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                for (z, wz) in [(t0, 1.0 - ft), (t1, ft)] {
                    acc += wy * wx * wz * map[[y, x, z]];
                }
            }
        }
        acc
    })
}

fn heat_colour(v: f64) -> [f64; 3] {
    let ramp = |c: f64| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

fn grey(clip: &Clip, y: usize, x: usize, t: usize) -> f64 {
    let ch = clip.voxels.dim().3;
    (0..ch).map(|c| f64::from(clip.voxels[[y, x, t, c]])).sum::<f64>() / ch as f64
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The clip's frames as RGB images.
pub fn raw_frames(clip: &Clip) -> Vec<RgbImage> {
    let (h, w, t, _) = clip.dims();
    (0..t)
        .map(|k| {
            RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let g = to_byte(grey(clip, y as usize, x as usize, k));
                Rgb([g, g, g])
            })
        })
        .collect()
}

/// Heat overlay of one occurrence map `[h, w, t]` on every frame of `clip`.
pub fn upsample_overlay(map: ArrayView3<f64>, clip: &Clip) -> Vec<RgbImage> {
    let Some(norm) = normalize_map(map) else {
        return raw_frames(clip);
    };
    let (h, w, t, _) = clip.dims();
    let heat = trilinear_upsample(norm.view(), (h, w, t));
    (0..t)
        .map(|k| {
            RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (y, x) = (y as usize, x as usize);
                let g = grey(clip, y, x, k);
                let c = heat_colour(heat[[y, x, k]]);
                Rgb(c.map(|c| to_byte((1.0 - OVERLAY_OPACITY) * g + OVERLAY_OPACITY * c)))
            })
        })
        .collect()
}

/// Writes `frame_%04d.png` files and `overlay.gif` into `dir`.
pub fn write_media(frames: &[RgbImage], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, f) in frames.iter().enumerate() {
        let path = frame_path(dir, t);
        f.save(&path).map_err(|e| Error::Image { path, source: e })?;
    }
    let path = dir.join("overlay.gif");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut encoder = GifEncoder::new(file);
    let image_err = |e| Error::Image { path: path.clone(), source: e };
    encoder.set_repeat(Repeat::Infinite).map_err(image_err)?;
    let gif_frames = frames.iter().map(|f| {
        let rgba = RgbaImage::from_fn(f.width(), f.height(), |x, y| {
            let [r, g, b] = f.get_pixel(x, y).0;
            image::Rgba([r, g, b, 255])
        });
        Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(GIF_FRAME_MS, 1))
    });
    encoder.encode_frames(gif_frames).map_err(image_err)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub prototype: usize,
    pub tag: PrototypeTag,
    pub similarity: f64,
    pub weight: f64,
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub row: usize,
    pub logit: f64,
    /// Every prototype, largest contribution first.
    pub entries: Vec<ReportEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub clip_id: String,
    pub label: usize,
    pub predicted: usize,
    pub alpha: f64,
    pub joint_probs: Vec<f64>,
    pub predicted_section: ReportSection,
    /// Present when the model has an uncertainty row.
    pub alpha_section: Option<ReportSection>,
    /// Overlay directories relative to the explanation root.
    pub media: Vec<String>,
}

/// `weight[r, p] * similarity[p]` for every head row `r`.
pub fn contribution_matrix(head: &Array2<f64>, similarities: &[f64]) -> Array2<f64> {
    let mut m = head.clone();
    for mut row in m.axis_iter_mut(Axis(0)) {
        row.iter_mut().zip(similarities).for_each(|(w, g)| *w *= g);
    }
    m
}

fn section(model: &Model, row: usize, logit: f64, similarities: &[f64]) -> ReportSection {
    let weights = model.head.weights.row(row);
    let contributions: Vec<f64> = weights.iter().zip(similarities).map(|(w, g)| w * g).collect();
    let entries = top_k(&contributions, contributions.len())
        .into_iter()
        .map(|p| ReportEntry {
            prototype: p,
            tag: model.bank.assignment[p],
            similarity: similarities[p],
            weight: weights[p],
            contribution: contributions[p],
        })
        .collect();
    ReportSection { row, logit, entries }
}

/// Ranked evidence for one clip. The returned maps are `[P, h, w, t]`.
pub fn reasoning_report(model: &Model, record: &ClipRecord) -> Result<(ExplanationReport, ndarray::Array4<f64>)> {
    let trace = model.trace(&record.clip)?;
    let out = &trace.output;
    let sims = out.similarities.as_slice().expect("contiguous");
    let c = model.layout.num_classes;
    let joint = out.joint_probs.to_vec();
    let (predicted, _) = argmax_class(&joint, c);
    let alpha_section = model.layout.uncertainty.then(|| section(model, c, out.logits[c], sims));
    let report = ExplanationReport {
        clip_id: record.clip_id.clone(),
        label: record.label,
        predicted,
        alpha: out.alpha,
        joint_probs: joint,
        predicted_section: section(model, predicted, out.logits[predicted], sims),
        alpha_section,
        media: Vec::new(),
    };
    Ok((report, trace.pass.occurrence_volume().values))
}

fn rel(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Report plus top-k overlays for one clip, written under
/// `root/<clip_id>/`.
pub fn explain_clip(model: &Model, record: &ClipRecord, root: &Path) -> Result<ExplanationReport> {
    let (mut report, maps) = reasoning_report(model, record)?;
    for entry in report.predicted_section.entries.iter().take(REPORT_TOP_K) {
        let p = entry.prototype;
        let rel_dir = PathBuf::from(&record.clip_id).join(format!("proto_{p}"));
        write_media(&upsample_overlay(maps.index_axis(Axis(0), p), &record.clip), &root.join(&rel_dir))?;
        report.media.push(rel(&rel_dir));
    }
    let path = root.join(&record.clip_id).join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub prototype: usize,
    pub tag: PrototypeTag,
    pub source_clip_id: String,
    pub source_label: usize,
    pub push_epoch: usize,
    pub media: String,
}

/// Overlays every prototype's occurrence map on the training clip it was
/// pushed from, under `root/gallery/proto_<p>/`.
pub fn prototype_gallery(model: &Model, records: &[&ClipRecord], root: &Path) -> Result<Vec<GalleryEntry>> {
    let mut entries = Vec::with_capacity(model.bank.len());
    for p in 0..model.bank.len() {
        let prov = model.bank.provenance[p].as_ref().ok_or(Error::MissingProvenance(p))?;
        let record = records
            .iter()
            .find(|r| r.clip_id == prov.clip_id)
            .ok_or_else(|| Error::Config(format!("push source clip `{}` is not in the dataset", prov.clip_id)))?;
        let maps = model.trace(&record.clip)?.pass.occurrence_volume().values;
        let rel_dir = PathBuf::from("gallery").join(format!("proto_{p}"));
        write_media(&upsample_overlay(maps.index_axis(Axis(0), p), &record.clip), &root.join(&rel_dir))?;
        entries.push(GalleryEntry {
            prototype: p,
            tag: model.bank.assignment[p],
            source_clip_id: prov.clip_id.clone(),
            source_label: prov.label,
            push_epoch: prov.epoch,
            media: rel(&rel_dir),
        });
    }
    let path = root.join("gallery").join("gallery.json");
    let text = serde_json::to_string_pretty(&entries).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

fn tag_name(tag: PrototypeTag) -> String {
    match tag {
        PrototypeTag::Class(c) => format!("class {c}"),
        PrototypeTag::Uncertainty => "uncertainty".into(),
    }
}

/// Static page linking the gallery and every report's overlays.
pub fn write_index(root: &Path, gallery: &[GalleryEntry], reports: &[ExplanationReport]) -> Result<()> {
    let mut html = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Prototype explanations</title></head><body>\n");
    html.push_str("<h1>Prototype gallery</h1>\n<table>\n<tr><th>prototype</th><th>tag</th><th>source clip</th><th>label</th><th>overlay</th></tr>\n");
    for g in gallery {
        let _ = writeln!(
            html,
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td><img src=\"{}/overlay.gif\"></td></tr>",
            g.prototype,
            tag_name(g.tag),
            g.source_clip_id,
            g.source_label,
            g.media
        );
    }
    html.push_str("</table>\n<h1>Test clips</h1>\n");
    for r in reports {
        let _ = writeln!(
            html,
            "<h2>{}</h2>\n<p>label {}, predicted {}, alpha {:.4} (<a href=\"{}/report.json\">report</a>)</p>",
            r.clip_id, r.label, r.predicted, r.alpha, r.clip_id
        );
        for (m, e) in r.media.iter().zip(&r.predicted_section.entries) {
            let _ = writeln!(
                html,
                "<figure style=\"display:inline-block\"><img src=\"{m}/overlay.gif\"><figcaption>prototype {} ({}), contribution {:.4}</figcaption></figure>",
                e.prototype,
                tag_name(e.tag),
                e.contribution
            );
        }
    }
    html.push_str("</body></html>\n");
    let path = root.join("index.html");
    fs::write(&path, html).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    fn clip(h: usize, w: usize, t: usize) -> Clip {
        let v = Array4::from_shape_fn((h, w, t, 1), |(y, x, k, _)| ((y + 2 * x + 3 * k) % 7) as f32 / 7.0);
        Clip::new(v, 30.0).unwrap()
    }

    #[test]
    fn zero_map_renders_raw_frames() {
        let c = clip(8, 8, 4);
        let frames = upsample_overlay(Array3::zeros((2, 2, 2)).view(), &c);
        assert_eq!(frames, raw_frames(&c));
    }

    #[test]
    fn constant_map_is_uniform() {
        let norm = normalize_map(Array3::from_elem((2, 3, 2), -0.4).view()).unwrap();
        assert!(norm.iter().all(|&v| v == 1.0));
        let up = trilinear_upsample(norm.view(), (8, 12, 4));
        assert!(up.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn normalization_uses_magnitude() {
        let mut m = Array3::zeros((2, 2, 1));
        m[[0, 0, 0]] = -2.0;
        m[[1, 1, 0]] = 1.0;
        let n = normalize_map(m.view()).unwrap();
        assert_eq!(n[[0, 0, 0]], 1.0);
        assert_eq!(n[[1, 1, 0]], 0.5);
        assert_eq!(n[[0, 1, 0]], 0.0);
    }

    #[test]
    fn delta_peak_stays_in_its_cell() {
        let (h, w, t) = (4, 4, 4);
        for (py, px, pt) in [(0, 0, 0), (1, 2, 3), (3, 3, 1), (2, 1, 2)] {
            let mut m = Array3::zeros((h, w, t));
            m[[py, px, pt]] = 1.0;
            let up = trilinear_upsample(m.view(), (16, 16, 8));
            let (mut best, mut arg) = (f64::MIN, (0, 0, 0));
            for ((y, x, k), &v) in up.indexed_iter() {
                if v > best {
                    best = v;
                    arg = (y, x, k);
                }
            }
            // Upsampled argmax maps back into the peak cell.
            assert_eq!((arg.0 / 4, arg.1 / 4, arg.2 / 2), (py, px, pt));
        }
    }

    #[test]
    fn contributions_sum_to_logits() {
        let head = ndarray::array![[1.0, 0.5, -0.2], [0.0, 2.0, 1.0]];
        let sims = [0.3, 0.9, 0.1];
        let m = contribution_matrix(&head, &sims);
        let logits = head.dot(&ndarray::arr1(&sims));
        for r in 0..2 {
            assert!((m.row(r).sum() - logits[r]).abs() < 1e-12);
        }
    }
}
