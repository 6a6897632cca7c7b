//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Everything runs on synthetic faces in memory; no files and no threads.

use std::collections::BTreeMap;

use wasm_bindgen::prelude::*;

use distaudit::distort::{apply_with, DistortionFamily, DistortionSpec, SeedContext};
use distaudit::embed::{toy_embed, EmbeddingStore, TOY_DIM};
use distaudit::metrics::{degree_of_bias, similarity_curve, CurvePoint};
use distaudit::protocol::{Axis, ManifestRecord};
use distaudit::synth::{image_id, sample, subject_id, SynthConfig, GENDERS, RACES};
use distaudit::{Image, Result};

fn js(err: distaudit::Error) -> JsError {
    JsError::new(&err.to_string())
}

fn synth_config(seed: u32) -> SynthConfig {
    SynthConfig {
        seed: seed as u64,
        ..SynthConfig::default()
    }
}

/// Grey or RGB samples expanded to RGBA for an `ImageData`.
pub fn to_rgba(img: &Image) -> Vec<u8> {
    let ch = img.channels() as usize;
    img.pixels()
        .chunks_exact(ch)
        .flat_map(|p| match ch {
            1 => [p[0], p[0], p[0], 255],
            _ => [p[0], p[1], p[2], 255],
        })
        .collect()
}

/// Distort one synthetic face. Returns the image and the distorted copy.
pub fn preview_images(spec: &DistortionSpec, seed: u32, gender: &str, race: &str, subject: u32) -> Result<(Image, Image)> {
    let cfg = synth_config(seed);
    let (img, kps) = sample(&cfg, gender, race, subject as usize, 0)?;
    let item = image_id(&subject_id(gender, race, subject as usize), 0);
    let out = apply_with(&img, spec, &SeedContext::new(seed as u64, item), Some(&kps), true)?;
    Ok((img, out))
}

/// Mean clean-vs-distorted similarity per subgroup over the family's grid,
/// using `subjects` synthetic subjects per (gender, race) cell.
pub fn curve_points(family: DistortionFamily, axis: Axis, seed: u32, subjects: u32) -> Result<Vec<CurvePoint>> {
    let cfg = synth_config(seed);
    let mut faces = Vec::new();
    let mut partition = BTreeMap::new();
    for g in GENDERS {
        for r in RACES {
            for s in 0..subjects as usize {
                let sid = subject_id(g, r, s);
                let record = ManifestRecord {
                    image_id: image_id(&sid, 0),
                    path: String::new(),
                    subject_id: sid,
                    gender: g.to_string(),
                    race: r.to_string(),
                    keypoints_path: None,
                };
                let (img, kps) = sample(&cfg, g, r, s, 0)?;
                partition.insert(record.image_id.clone(), axis.label(&record));
                faces.push((record.image_id, img, kps));
            }
        }
    }

    let mut clean = EmbeddingStore::new(TOY_DIM);
    for (id, img, _) in &faces {
        clean.insert(id.clone(), toy_embed(img)?)?;
    }
    let mut grid = vec![DistortionSpec::Identity];
    grid.extend(family.default_grid());
    let mut distorted = Vec::new();
    for spec in grid {
        let mut store = EmbeddingStore::new(TOY_DIM);
        for (id, img, kps) in &faces {
            let ctx = SeedContext::new(seed as u64, id.as_str());
            store.insert(id.clone(), toy_embed(&apply_with(img, &spec, &ctx, Some(kps), true)?)?)?;
        }
        distorted.push((spec.intensity_label(), store));
    }
    similarity_curve(&clean, &distorted, &partition)
}

/// Side length of the preview images.
#[wasm_bindgen(js_name = previewSize)]
pub fn preview_size() -> u32 {
    SynthConfig::default().size
}

/// RGBA bytes of the clean face followed by the distorted face.
/// `spec` is distortion JSON such as `{"GaussianBlur":{"sigma":2.0}}`.
#[wasm_bindgen]
pub fn preview(spec: &str, seed: u32, gender: &str, race: &str, subject: u32) -> std::result::Result<Vec<u8>, JsError> {
    let spec = DistortionSpec::from_json(spec).map_err(js)?;
    let (clean, out) = preview_images(&spec, seed, gender, race, subject).map_err(js)?;
    let mut rgba = to_rgba(&clean);
    rgba.extend(to_rgba(&out));
    Ok(rgba)
}

/// Similarity curve as a JSON array of points.
#[wasm_bindgen(js_name = similarityCurve)]
pub fn similarity_curve_json(family: &str, axis: &str, seed: u32, subjects: u32) -> std::result::Result<String, JsError> {
    let family: DistortionFamily = family.parse().map_err(js)?;
    let axis: Axis = axis.parse().map_err(js)?;
    let points = curve_points(family, axis, seed, subjects.max(1)).map_err(js)?;
    serde_json::to_string(&points).map_err(|e| JsError::new(&e.to_string()))
}

/// Degree of bias of per-subgroup accuracies, in the same units.
#[wasm_bindgen]
pub fn dob(accuracies: &[f64]) -> std::result::Result<f64, JsError> {
    degree_of_bias(accuracies).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgba_expands_grey() {
        let img = Image::new(2, 1, 1, vec![10, 200]).unwrap();
        assert_eq!(to_rgba(&img), vec![10, 10, 10, 255, 200, 200, 200, 255]);
    }

    #[test]
    fn identity_preview_is_unchanged() {
        let (clean, out) = preview_images(&DistortionSpec::Identity, 1, "G2", "R1", 3).unwrap();
        assert_eq!(clean, out);
        let rgba = preview(r#""Identity""#, 1, "G2", "R1", 3).unwrap();
        let n = preview_size() as usize;
        assert_eq!(rgba.len(), 2 * n * n * 4);
    }

    #[test]
    fn occlusion_preview_blacks_out_pixels() {
        let spec = DistortionSpec::from_json(r#"{"Occlusion":{"region":"Mouth"}}"#).unwrap();
        let (clean, out) = preview_images(&spec, 1, "G1", "R2", 0).unwrap();
        let dark = |i: &Image| i.pixels().iter().filter(|&&p| p == 0).count();
        assert!(dark(&out) > dark(&clean) + 50);
    }

    #[test]
    fn curve_starts_at_one_and_drops_under_blur() {
        let points = curve_points(DistortionFamily::GaussianBlur, Axis::Gender, 3, 2).unwrap();
        let grid = 1 + DistortionFamily::GaussianBlur.default_grid().len();
        assert_eq!(points.len(), grid * 2);
        for p in &points[..2] {
            assert_eq!(p.intensity, "identity");
            assert!((p.mean_similarity - 1.0).abs() < 1e-6);
            assert_eq!(p.n, 4);
        }
        for p in &points[points.len() - 2..] {
            assert!(p.mean_similarity < 1.0 - 1e-6);
        }
    }

    #[test]
    fn curve_json_parses() {
        let json = similarity_curve_json("brightness", "intersection", 0, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 6 * 4);
        assert_eq!(v[0]["subgroup"], "G1+R1");
    }

    #[test]
    fn dob_of_two_subgroups() {
        assert!((dob(&[98.13, 92.00]).unwrap() - 4.3345).abs() < 1e-3);
    }
}
