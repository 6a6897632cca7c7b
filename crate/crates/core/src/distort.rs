//! The six distortion families and their canonical intensity grids.
//!
//! Every operator is a pure function of its inputs. The two stochastic
//! operators draw from a [`CounterRng`] seeded by [`SeedContext`], so output
//! bytes depend only on `(image, spec, master seed, item id)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{resize_area, resize_bilinear, round_sample, Image};
use crate::landmarks::{region_bbox, FaceRegion, KeypointSet};
use crate::rng::{derive_seed, CounterRng};

/// One distortion family at one intensity.
///
/// Serialized externally tagged, e.g. `{"GaussianBlur":{"sigma":2.0}}` or
/// `"Identity"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistortionSpec {
    Identity,
    Occlusion { region: FaceRegion },
    GaussianBlur { sigma: f64 },
    Brightness { beta: f64 },
    GaussianNoise { sigma: f64 },
    SaltPepper { p: f64 },
    Resolution { w: u32, h: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionFamily {
    Occlusion,
    GaussianBlur,
    Brightness,
    GaussianNoise,
    SaltPepper,
    Resolution,
}

/// Blur σ from 2.0 to 4.0 in steps of 0.2.
pub fn blur_grid() -> Vec<f64> {
    // Integer tenths avoid accumulated drift (2.0 + 5 * 0.2 != 3.0).
    (20..=40).step_by(2).map(|t| t as f64 / 10.0).collect()
}

pub const BRIGHTNESS_GRID: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
pub const NOISE_GRID: [f64; 4] = [10.0, 20.0, 30.0, 40.0];
pub const SALT_PEPPER_GRID: [f64; 5] = [0.03, 0.06, 0.09, 0.12, 0.15];
pub const RESOLUTION_GRID: [u32; 5] = [96, 64, 48, 32, 28];

impl DistortionFamily {
    pub const ALL: [DistortionFamily; 6] = [
        DistortionFamily::Occlusion,
        DistortionFamily::GaussianBlur,
        DistortionFamily::Brightness,
        DistortionFamily::GaussianNoise,
        DistortionFamily::SaltPepper,
        DistortionFamily::Resolution,
    ];

    /// Canonical intensity grid for the family.
    pub fn default_grid(self) -> Vec<DistortionSpec> {
        match self {
            DistortionFamily::Occlusion => FaceRegion::ALL
                .iter()
                .map(|&region| DistortionSpec::Occlusion { region })
                .collect(),
            DistortionFamily::GaussianBlur => blur_grid()
                .into_iter()
                .map(|sigma| DistortionSpec::GaussianBlur { sigma })
                .collect(),
            DistortionFamily::Brightness => BRIGHTNESS_GRID
                .iter()
                .map(|&beta| DistortionSpec::Brightness { beta })
                .collect(),
            DistortionFamily::GaussianNoise => NOISE_GRID
                .iter()
                .map(|&sigma| DistortionSpec::GaussianNoise { sigma })
                .collect(),
            DistortionFamily::SaltPepper => SALT_PEPPER_GRID
                .iter()
                .map(|&p| DistortionSpec::SaltPepper { p })
                .collect(),
            DistortionFamily::Resolution => RESOLUTION_GRID
                .iter()
                .map(|&s| DistortionSpec::Resolution { w: s, h: s })
                .collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionFamily::Occlusion => "occlusion",
            DistortionFamily::GaussianBlur => "gaussian_blur",
            DistortionFamily::Brightness => "brightness",
            DistortionFamily::GaussianNoise => "gaussian_noise",
            DistortionFamily::SaltPepper => "salt_pepper",
            DistortionFamily::Resolution => "resolution",
        }
    }
}

impl fmt::Display for DistortionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DistortionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::param("family", format!("unknown distortion family {s:?}")))
    }
}

impl DistortionSpec {
    pub fn family(&self) -> Option<DistortionFamily> {
        Some(match self {
            DistortionSpec::Identity => return None,
            DistortionSpec::Occlusion { .. } => DistortionFamily::Occlusion,
            DistortionSpec::GaussianBlur { .. } => DistortionFamily::GaussianBlur,
            DistortionSpec::Brightness { .. } => DistortionFamily::Brightness,
            DistortionSpec::GaussianNoise { .. } => DistortionFamily::GaussianNoise,
            DistortionSpec::SaltPepper { .. } => DistortionFamily::SaltPepper,
            DistortionSpec::Resolution { .. } => DistortionFamily::Resolution,
        })
    }

    /// Check parameter ranges. The error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(field, format!("must be finite, got {v}")))
            }
        };
        match *self {
            DistortionSpec::Identity | DistortionSpec::Occlusion { .. } => Ok(()),
            DistortionSpec::GaussianBlur { sigma } => {
                finite("GaussianBlur.sigma", sigma)?;
                if sigma <= 0.0 {
                    return Err(Error::param("GaussianBlur.sigma", format!("must be > 0, got {sigma}")));
                }
                Ok(())
            }
            DistortionSpec::Brightness { beta } => {
                finite("Brightness.beta", beta)?;
                if beta < 0.0 {
                    return Err(Error::param("Brightness.beta", format!("must be >= 0, got {beta}")));
                }
                Ok(())
            }
            DistortionSpec::GaussianNoise { sigma } => {
                finite("GaussianNoise.sigma", sigma)?;
                if sigma < 0.0 {
                    return Err(Error::param("GaussianNoise.sigma", format!("must be >= 0, got {sigma}")));
                }
                Ok(())
            }
            DistortionSpec::SaltPepper { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::param("SaltPepper.p", format!("must be in [0, 1], got {p}")));
                }
                Ok(())
            }
            DistortionSpec::Resolution { w, h } => {
                if w == 0 {
                    return Err(Error::param("Resolution.w", "must be >= 1"));
                }
                if h == 0 {
                    return Err(Error::param("Resolution.h", "must be >= 1"));
                }
                Ok(())
            }
        }
    }

    /// Parse and validate the JSON form.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: DistortionSpec = serde_json::from_str(text)
            .map_err(|e| Error::param("spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// Short intensity label used in report rows and store keys,
    /// e.g. `2.2`, `eyes`, `32x32`, `identity`.
    pub fn intensity_label(&self) -> String {
        match *self {
            DistortionSpec::Identity => "identity".into(),
            DistortionSpec::Occlusion { region } => region.to_string(),
            DistortionSpec::GaussianBlur { sigma } => format!("{sigma:?}"),
            DistortionSpec::Brightness { beta } => format!("{beta:?}"),
            DistortionSpec::GaussianNoise { sigma } => format!("{sigma:?}"),
            DistortionSpec::SaltPepper { p } => format!("{p:?}"),
            DistortionSpec::Resolution { w, h } => format!("{w}x{h}"),
        }
    }

    /// Family-qualified label, unique across families: `blur:2.2`.
    pub fn descriptor(&self) -> String {
        let family = match self {
            DistortionSpec::Identity => return "identity".into(),
            DistortionSpec::Occlusion { .. } => "occlusion",
            DistortionSpec::GaussianBlur { .. } => "blur",
            DistortionSpec::Brightness { .. } => "brightness",
            DistortionSpec::GaussianNoise { .. } => "noise",
            DistortionSpec::SaltPepper { .. } => "saltpepper",
            DistortionSpec::Resolution { .. } => "resolution",
        };
        format!("{family}:{}", self.intensity_label())
    }
}

impl fmt::Display for DistortionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

/// Identifies the random stream of one distorted item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedContext {
    pub master_seed: u64,
    pub item_id: String,
}

impl SeedContext {
    pub fn new(master_seed: u64, item_id: impl Into<String>) -> Self {
        Self {
            master_seed,
            item_id: item_id.into(),
        }
    }

    /// Stream seed from `(master_seed, item_id, serialized spec)`.
    pub fn stream_seed(&self, spec: &DistortionSpec) -> u64 {
        derive_seed(&[
            b"distort",
            &self.master_seed.to_le_bytes(),
            self.item_id.as_bytes(),
            spec.to_json().as_bytes(),
        ])
    }

    pub fn rng(&self, spec: &DistortionSpec) -> CounterRng {
        CounterRng::new(self.stream_seed(spec))
    }
}

// ---------------------------------------------------------------------------
// Gaussian blur
// ---------------------------------------------------------------------------

/// Filter length `2 * ceil(2σ) + 1`.
///
/// `2σ` within 1e-9 of an integer is treated as that integer, so σ values
/// written as decimals (3.0000000000000004) keep their intended size.
pub fn kernel_size(sigma: f64) -> Result<usize> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param("sigma", format!("must be > 0, got {sigma}")));
    }
    let two_sigma = 2.0 * sigma;
    let nearest = two_sigma.round();
    let half = if (two_sigma - nearest).abs() < 1e-9 {
        nearest
    } else {
        two_sigma.ceil()
    };
    Ok(2 * half as usize + 1)
}

/// Normalized 1-D Gaussian weights of length [`kernel_size`].
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    let n = kernel_size(sigma)?;
    let r = (n / 2) as f64;
    let mut w: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - r;
            libm::exp(-(d * d) / (2.0 * sigma * sigma))
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    Ok(w)
}

/// Mirror an out-of-range index without repeating the edge sample
/// (`dcb|abcd|cba`).
pub(crate) fn reflect_101(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur, horizontal then vertical, in f64; rounded once
/// at the end.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as i64;
    let (w, h, ch) = (img.width() as usize, img.height() as usize, img.channels() as usize);
    let src = img.pixels();

    let taps = |len: usize| -> Vec<usize> {
        (0..len as i64)
            .flat_map(|o| (-r..=r).map(move |k| reflect_101(o + k, len)))
            .collect()
    };
    let tx = taps(w);
    let ty = taps(h);
    let klen = kernel.len();

    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        let row = &src[y * w * ch..(y + 1) * w * ch];
        let out = &mut horiz[y * w * ch..(y + 1) * w * ch];
        for x in 0..w {
            let idx = &tx[x * klen..(x + 1) * klen];
            for c in 0..ch {
                out[x * ch + c] = kernel
                    .iter()
                    .zip(idx)
                    .map(|(k, &sx)| k * row[sx * ch + c] as f64)
                    .sum();
            }
        }
    }

    let mut pixels = vec![0u8; src.len()];
    let stride = w * ch;
    let mut acc = vec![0.0f64; stride];
    for y in 0..h {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (k, &sy) in kernel.iter().zip(&ty[y * klen..(y + 1) * klen]) {
            let row = &horiz[sy * stride..(sy + 1) * stride];
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += k * v);
        }
        for (dst, v) in pixels[y * stride..(y + 1) * stride].iter_mut().zip(&acc) {
            *dst = round_sample(*v);
        }
    }
    Image::new(img.width(), img.height(), img.channels(), pixels)
}

// ---------------------------------------------------------------------------
// Photometric and noise operators
// ---------------------------------------------------------------------------

/// `clamp(round(β · v), 0, 255)` per sample.
pub fn adjust_brightness(img: &Image, beta: f64) -> Result<Image> {
    DistortionSpec::Brightness { beta }.validate()?;
    let lut: Vec<u8> = (0..=255u32).map(|v| round_sample(beta * v as f64)).collect();
    map_samples(img, |v| lut[v as usize])
}

fn map_samples(img: &Image, f: impl Fn(u8) -> u8) -> Result<Image> {
    Image::new(
        img.width(),
        img.height(),
        img.channels(),
        img.pixels().iter().map(|&v| f(v)).collect(),
    )
}

/// Add one independent `N(0, σ²)` draw to every sample (row-major,
/// channel-interleaved order), round and clamp.
pub fn add_gaussian_noise(img: &Image, sigma: f64, ctx: &SeedContext) -> Result<Image> {
    let spec = DistortionSpec::GaussianNoise { sigma };
    spec.validate()?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ctx.rng(&spec);
    let mut out = img.clone();
    for v in out.pixels_mut() {
        *v = round_sample(*v as f64 + sigma * rng.next_normal());
    }
    Ok(out)
}

/// Impulse noise: one uniform draw per pixel location; below `p/2` every
/// channel becomes 0, in `[p/2, p)` every channel becomes 255.
pub fn add_salt_pepper(img: &Image, p: f64, ctx: &SeedContext) -> Result<Image> {
    let spec = DistortionSpec::SaltPepper { p };
    spec.validate()?;
    if p == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ctx.rng(&spec);
    let ch = img.channels() as usize;
    let mut out = img.clone();
    for px in out.pixels_mut().chunks_exact_mut(ch) {
        let u = rng.next_f64();
        if u < p / 2.0 {
            px.fill(0);
        } else if u < p {
            px.fill(255);
        }
    }
    Ok(out)
}

/// Area-downsample to `w` x `h`; with `restore`, bilinear back to the
/// original size.
pub fn reduce_resolution(img: &Image, w: u32, h: u32, restore: bool) -> Result<Image> {
    DistortionSpec::Resolution { w, h }.validate()?;
    let small = resize_area(img, w, h)?;
    if restore {
        resize_bilinear(&small, img.width(), img.height())
    } else {
        Ok(small)
    }
}

/// Black out the region's bounding box in every channel.
pub fn occlude(img: &Image, kps: &KeypointSet, region: FaceRegion) -> Result<Image> {
    let rect = region_bbox(kps, region, img.width(), img.height())?;
    let ch = img.channels() as usize;
    let w = img.width() as usize;
    let mut out = img.clone();
    let px = out.pixels_mut();
    for y in rect.y0 as usize..rect.y1 as usize {
        px[(y * w + rect.x0 as usize) * ch..(y * w + rect.x1 as usize) * ch].fill(0);
    }
    Ok(out)
}

/// Dispatch `spec` to its operator. Resolution is not restored.
pub fn apply(
    img: &Image,
    spec: &DistortionSpec,
    ctx: &SeedContext,
    kps: Option<&KeypointSet>,
) -> Result<Image> {
    apply_with(img, spec, ctx, kps, false)
}

/// As [`apply`], with control over restoring low-resolution output to the
/// input size.
pub fn apply_with(
    img: &Image,
    spec: &DistortionSpec,
    ctx: &SeedContext,
    kps: Option<&KeypointSet>,
    restore_resolution: bool,
) -> Result<Image> {
    spec.validate()?;
    match *spec {
        DistortionSpec::Identity => Ok(img.clone()),
        DistortionSpec::Occlusion { region } => {
            occlude(img, kps.ok_or(Error::MissingKeypoints)?, region)
        }
        DistortionSpec::GaussianBlur { sigma } => gaussian_blur(img, sigma),
        DistortionSpec::Brightness { beta } => adjust_brightness(img, beta),
        DistortionSpec::GaussianNoise { sigma } => add_gaussian_noise(img, sigma, ctx),
        DistortionSpec::SaltPepper { p } => add_salt_pepper(img, p, ctx),
        DistortionSpec::Resolution { w, h } => reduce_resolution(img, w, h, restore_resolution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx() -> SeedContext {
        SeedContext::new(7, "img-001")
    }

    fn ramp(w: u32, h: u32, ch: u8) -> Image {
        Image::from_fn(w, h, ch, |x, y, c| ((x * 37 + y * 11 + c as u32 * 5) % 256) as u8).unwrap()
    }

    #[test]
    fn kernel_sizes() {
        assert_eq!(kernel_size(2.0).unwrap(), 9);
        assert_eq!(kernel_size(2.2).unwrap(), 11);
        assert_eq!(kernel_size(0.4).unwrap(), 3);
        assert_eq!(kernel_size(3.0000000000000004).unwrap(), 13);
        assert!(kernel_size(0.0).is_err());
        assert!(kernel_size(-1.0).is_err());
    }

    #[test]
    fn grids_have_expected_values() {
        let blur = blur_grid();
        assert_eq!(blur.len(), 11);
        assert_eq!(blur[0], 2.0);
        assert_eq!(blur[5], 3.0);
        assert_eq!(blur[10], 4.0);
        assert_eq!(DistortionFamily::Occlusion.default_grid().len(), 7);
        assert_eq!(
            DistortionFamily::Resolution.default_grid()[4],
            DistortionSpec::Resolution { w: 28, h: 28 }
        );
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.3, 1.0, 2.2, 4.0] {
            let k = gaussian_kernel(sigma).unwrap();
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k.len() {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn kernel_center_weight_sigma_one() {
        // Independent summation: size 5, offsets -2..=2.
        let z: f64 = (-2i32..=2).map(|d| (-(d * d) as f64 / 2.0).exp()).sum();
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.len(), 5);
        assert!((k[2] - 1.0 / z).abs() < 1e-15);
    }

    #[test]
    fn reflect_without_repeat() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect_101(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect_101(-7, 2), 1);
        assert_eq!(reflect_101(9, 1), 0);
    }

    #[test]
    fn blur_constant_fixed_point() {
        let img = Image::filled(13, 9, 3, 42).unwrap();
        assert_eq!(gaussian_blur(&img, 3.4).unwrap(), img);
    }

    #[test]
    fn blur_impulse_matches_outer_product() {
        let mut px = vec![0u8; 25];
        px[12] = 255;
        let img = Image::new(5, 5, 1, px).unwrap();
        let k = gaussian_kernel(0.6).unwrap();
        assert_eq!(k.len(), 5);
        let out = gaussian_blur(&img, 0.6).unwrap();
        // At the border the reflected taps fold the impulse in twice.
        for y in 1..4 {
            for x in 1..4 {
                let want = round_sample(255.0 * k[x as usize] * k[y as usize]);
                assert_eq!(out.get(x, y, 0), want, "({x},{y})");
            }
        }
    }

    #[test]
    fn brightness_examples() {
        let img = ramp(6, 5, 3);
        assert_eq!(adjust_brightness(&img, 1.0).unwrap(), img);
        let one = |v: u8, beta: f64| adjust_brightness(&Image::filled(1, 1, 1, v).unwrap(), beta).unwrap().pixels()[0];
        assert_eq!(one(100, 1.5), 150);
        assert_eq!(one(200, 2.0), 255);
        assert_eq!(one(101, 1.5), 152);
        assert!(adjust_brightness(&img, -0.5).is_err());
    }

    #[test]
    fn noise_zero_and_determinism() {
        let img = ramp(16, 16, 3);
        assert_eq!(add_gaussian_noise(&img, 0.0, &ctx()).unwrap(), img);
        let a = add_gaussian_noise(&img, 25.0, &ctx()).unwrap();
        let b = add_gaussian_noise(&img, 25.0, &ctx()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, img);
        let other = add_gaussian_noise(&img, 25.0, &SeedContext::new(7, "img-002")).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn salt_pepper_zero_and_extremes() {
        let img = ramp(32, 32, 3);
        assert_eq!(add_salt_pepper(&img, 0.0, &ctx()).unwrap(), img);
        let out = add_salt_pepper(&img, 0.3, &ctx()).unwrap();
        let mut altered = 0;
        for (a, b) in img.pixels().chunks(3).zip(out.pixels().chunks(3)) {
            if a != b {
                altered += 1;
                assert!(b == [0, 0, 0] || b == [255, 255, 255], "{b:?}");
            }
        }
        assert!(altered > 0);
        let all = add_salt_pepper(&img, 1.0, &ctx()).unwrap();
        assert!(all.pixels().chunks(3).all(|p| p == [0, 0, 0] || p == [255, 255, 255]));
    }

    #[test]
    fn resolution_examples() {
        let img = ramp(12, 10, 1);
        assert_eq!(reduce_resolution(&img, 12, 10, false).unwrap(), img);
        let c = Image::filled(96, 96, 1, 131).unwrap();
        assert_eq!(
            reduce_resolution(&c, 28, 28, false).unwrap(),
            Image::filled(28, 28, 1, 131).unwrap()
        );
        let checker = Image::from_fn(4, 4, 1, |x, y, _| if (x + y) % 2 == 0 { 0 } else { 255 }).unwrap();
        assert_eq!(
            reduce_resolution(&checker, 2, 2, false).unwrap(),
            Image::filled(2, 2, 1, 128).unwrap()
        );
        let restored = reduce_resolution(&img, 5, 5, true).unwrap();
        assert!(restored.same_shape(&img));
        assert!(reduce_resolution(&img, 0, 5, false).is_err());
    }

    #[test]
    fn occlusion_alters_exactly_the_box() {
        let kps = KeypointSet::canonical(96.0, 96.0);
        let img = Image::filled(96, 96, 3, 200).unwrap();
        let out = occlude(&img, &kps, FaceRegion::Mouth).unwrap();
        let rect = region_bbox(&kps, FaceRegion::Mouth, 96, 96).unwrap();
        let altered = img.pixels().iter().zip(out.pixels()).filter(|(a, b)| a != b).count();
        assert_eq!(altered as u64, rect.area() * 3);
        for y in 0..96 {
            for x in 0..96 {
                for c in 0..3 {
                    let want = if rect.contains(x, y) { 0 } else { 200 };
                    assert_eq!(out.get(x, y, c), want);
                }
            }
        }
    }

    #[test]
    fn apply_dispatch() {
        let img = ramp(20, 20, 1);
        let c = ctx();
        assert_eq!(apply(&img, &DistortionSpec::Identity, &c, None).unwrap(), img);
        assert_eq!(
            apply(&img, &DistortionSpec::GaussianBlur { sigma: 2.0 }, &c, None).unwrap(),
            gaussian_blur(&img, 2.0).unwrap()
        );
        assert!(matches!(
            apply(&img, &DistortionSpec::Occlusion { region: FaceRegion::Eyes }, &c, None),
            Err(Error::MissingKeypoints)
        ));
        let small = apply(&img, &DistortionSpec::Resolution { w: 5, h: 4 }, &c, None).unwrap();
        assert_eq!((small.width(), small.height()), (5, 4));
        let restored = apply_with(&img, &DistortionSpec::Resolution { w: 5, h: 4 }, &c, None, true).unwrap();
        assert!(restored.same_shape(&img));
    }

    #[test]
    fn spec_json_and_validation() {
        let spec = DistortionSpec::from_json(r#"{"GaussianBlur":{"sigma":2.0}}"#).unwrap();
        assert_eq!(spec, DistortionSpec::GaussianBlur { sigma: 2.0 });
        assert_eq!(DistortionSpec::from_json(r#""Identity""#).unwrap(), DistortionSpec::Identity);
        let err = DistortionSpec::from_json(r#"{"GaussianBlur":{"sigma":-1}}"#).unwrap_err();
        assert!(err.to_string().contains("GaussianBlur.sigma"), "{err}");
        let err = DistortionSpec::from_json(r#"{"SaltPepper":{"p":1.5}}"#).unwrap_err();
        assert!(err.to_string().contains("SaltPepper.p"), "{err}");
        assert_eq!(
            DistortionSpec::from_json(r#"{"Occlusion":{"region":"LeftCheek"}}"#).unwrap(),
            DistortionSpec::Occlusion { region: FaceRegion::LeftCheek }
        );
        assert_eq!(DistortionSpec::GaussianBlur { sigma: 2.2 }.descriptor(), "blur:2.2");
        assert_eq!(DistortionSpec::Resolution { w: 32, h: 32 }.intensity_label(), "32x32");
    }

    #[test]
    fn stream_seed_depends_on_every_input() {
        let spec = DistortionSpec::GaussianNoise { sigma: 10.0 };
        let base = ctx().stream_seed(&spec);
        assert_eq!(base, ctx().stream_seed(&spec));
        assert_ne!(base, SeedContext::new(8, "img-001").stream_seed(&spec));
        assert_ne!(base, SeedContext::new(7, "img-01").stream_seed(&spec));
        assert_ne!(base, ctx().stream_seed(&DistortionSpec::GaussianNoise { sigma: 20.0 }));
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1u32..10, 1u32..10, prop_oneof![Just(1u8), Just(3u8)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), (w * h * c as u32) as usize)
                .prop_map(move |px| Image::new(w, h, c, px).unwrap())
        })
    }

    fn arb_spec() -> impl Strategy<Value = DistortionSpec> {
        prop_oneof![
            Just(DistortionSpec::Identity),
            (0.1f64..5.0).prop_map(|sigma| DistortionSpec::GaussianBlur { sigma }),
            (0.0f64..4.0).prop_map(|beta| DistortionSpec::Brightness { beta }),
            (0.0f64..60.0).prop_map(|sigma| DistortionSpec::GaussianNoise { sigma }),
            (0.0f64..=1.0).prop_map(|p| DistortionSpec::SaltPepper { p }),
        ]
    }

    proptest! {
        #[test]
        fn operators_preserve_shape(img in arb_image(), spec in arb_spec()) {
            let out = apply(&img, &spec, &ctx(), None).unwrap();
            prop_assert!(out.same_shape(&img));
        }

        #[test]
        fn brightness_is_monotone(img in arb_image(), a in 0.0f64..4.0, b in 0.0f64..4.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let x = adjust_brightness(&img, lo).unwrap();
            let y = adjust_brightness(&img, hi).unwrap();
            prop_assert!(x.pixels().iter().zip(y.pixels()).all(|(p, q)| p <= q));
        }

        #[test]
        fn restored_resolution_keeps_shape(img in arb_image(), w in 1u32..12, h in 1u32..12) {
            let out = reduce_resolution(&img, w, h, true).unwrap();
            prop_assert!(out.same_shape(&img));
        }
    }
}
