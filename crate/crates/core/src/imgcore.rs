//! 8-bit raster images, PNM/PNG I/O, grayscale conversion and resampling.
//!
//! Pixel centers sit at `(x + 0.5, y + 0.5)`. Every conversion from a real
//! value back to a sample rounds half-up and clamps to `[0, 255]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved 8-bit image with 1 (gray) or 3 (RGB)
/// channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

/// Round half-up and clamp to the 8-bit range.
#[inline]
pub fn round_sample(value: f64) -> u8 {
    let r = (value + 0.5).floor();
    if r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}

fn sample_count(width: u32, height: u32, channels: u8) -> Result<usize> {
    (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(channels as usize))
        .ok_or(Error::DimensionOverflow {
            width: width as u64,
            height: height as u64,
            channels: channels as u64,
        })
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = sample_count(width, height, channels)?;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} samples for {width}x{height}x{channels}, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Image with every sample set to `value`.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        let n = sample_count(width, height, channels)?;
        Self::new(width, height, channels, vec![value; n])
    }

    /// Build an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        mut f: impl FnMut(u32, u32, u8) -> u8,
    ) -> Result<Self> {
        let n = sample_count(width, height, channels)?;
        let mut pixels = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32, c: u8) -> usize {
        ((y as usize * self.width as usize) + x as usize) * self.channels as usize + c as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.pixels[self.index(x, y, c)]
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

/// Load a binary PGM (P5), binary PPM (P6) or 8-bit gray/RGB PNG.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Decode an in-memory PNM or PNG file.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err(Error::Format(
            "unrecognized file signature (expected P5, P6 or PNG)".into(),
        ))
    }
}

struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmHeader<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("missing {what} in PNM header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{what} out of range in PNM header")))
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels: u8 = if bytes[1] == b'5' { 1 } else { 3 };
    let mut header = PnmHeader { bytes, pos: 2 };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedBitDepth(if maxval > 255 { 16 } else { 0 }));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if header.pos >= bytes.len() || !bytes[header.pos].is_ascii_whitespace() {
        return Err(Error::Format("missing raster after PNM header".into()));
    }
    let data = &bytes[header.pos + 1..];
    let (width, height) = match (u32::try_from(width), u32::try_from(height)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => {
            return Err(Error::DimensionOverflow {
                width,
                height,
                channels: channels as u64,
            })
        }
    };
    let n = sample_count(width, height, channels)?;
    if data.len() < n {
        return Err(Error::Format(format!(
            "truncated raster: expected {n} bytes, found {}",
            data.len()
        )));
    }
    Image::new(width, height, channels, data[..n].to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(info.bit_depth as u32));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::UnsupportedColorType(format!("{other:?}"))),
    };
    let (width, height) = (info.width, info.height);
    let n = sample_count(width, height, channels)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(n).max(n)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    buf.truncate(frame.buffer_size());
    if buf.len() != n {
        return Err(Error::Format(format!(
            "png frame has {} bytes, expected {n}",
            buf.len()
        )));
    }
    Image::new(width, height, channels, buf)
}

/// Encode as PGM (1 channel) or PPM (3 channels).
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Write `img` as PGM/PPM. The extension must agree with the channel count
/// (`.pgm` for gray, `.ppm` for RGB); `.pnm` accepts either.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match (ext.as_deref(), img.channels) {
        (Some("pgm"), 1) | (Some("ppm"), 3) | (Some("pnm"), _) => {}
        (Some("pgm"), _) | (Some("ppm"), _) => {
            return Err(Error::InvalidImage(format!(
                "{}-channel image cannot be written as {}",
                img.channels,
                path.display()
            )))
        }
        _ => {
            return Err(Error::Format(format!(
                "only .pgm/.ppm/.pnm output is supported: {}",
                path.display()
            )))
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_pnm(img))
        .map_err(|e| Error::io(path, e))
}

/// Conventional output extension for an image's channel count.
pub fn pnm_extension(img: &Image) -> &'static str {
    if img.channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

// ---------------------------------------------------------------------------
// Color and resampling
// ---------------------------------------------------------------------------

/// ITU-R BT.601 luma, `round(0.299 R + 0.587 G + 0.114 B)` half-up.
/// Gray input is returned unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|rgb| {
            // Integer weights in thousandths keep the half-up rule exact.
            let acc = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
            ((acc + 500) / 1000) as u8
        })
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        pixels,
    }
}

fn check_target(out_w: u32, out_h: u32) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::param(
            "target size",
            format!("must be at least 1x1, got {out_w}x{out_h}"),
        ));
    }
    Ok(())
}

/// Per-axis overlap table for area resampling.
///
/// Coordinates are scaled by `src * dst` so every boundary is an integer:
/// source pixel `i` spans `[i*dst, (i+1)*dst)`, output pixel `o` spans
/// `[o*src, (o+1)*src)`. Each entry is `(first source index, overlaps)`.
fn area_weights(src: u32, dst: u32) -> Vec<(usize, Vec<u64>)> {
    let (src, dst) = (src as u64, dst as u64);
    (0..dst)
        .map(|o| {
            let lo = o * src;
            let hi = lo + src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            let weights = (first..=last)
                .map(|i| {
                    let s_lo = i * dst;
                    let s_hi = s_lo + dst;
                    s_hi.min(hi) - s_lo.max(lo)
                })
                .collect();
            (first as usize, weights)
        })
        .collect()
}

/// Area-average resampling (OpenCV `INTER_AREA` semantics for shrinking).
///
/// Each output sample is the exact overlap-weighted mean of the source
/// region it covers, computed in integer arithmetic and rounded half-up.
/// Enlarging uses the same box-overlap rule.
pub fn resize_area(img: &Image, out_w: u32, out_h: u32) -> Result<Image> {
    check_target(out_w, out_h)?;
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let ch = img.channels as usize;
    let wx = area_weights(img.width, out_w);
    let wy = area_weights(img.height, out_h);

    // Horizontal pass: sums scaled by the x overlap, no division yet.
    let mut rows = vec![0u64; img.height as usize * out_w as usize * ch];
    for y in 0..img.height as usize {
        let src_row = &img.pixels[y * img.width as usize * ch..][..img.width as usize * ch];
        let dst_row = &mut rows[y * out_w as usize * ch..][..out_w as usize * ch];
        for (ox, (first, weights)) in wx.iter().enumerate() {
            for c in 0..ch {
                dst_row[ox * ch + c] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| w * src_row[(first + k) * ch + c] as u64)
                    .sum();
            }
        }
    }

    let denom = img.width as u128 * img.height as u128;
    let mut pixels = Vec::with_capacity(out_w as usize * out_h as usize * ch);
    for (first, weights) in &wy {
        for ox in 0..out_w as usize {
            for c in 0..ch {
                let num: u128 = weights
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| w as u128 * rows[((first + k) * out_w as usize + ox) * ch + c] as u128)
                    .sum();
                // floor((num/denom) + 1/2)
                let v = (2 * num + denom) / (2 * denom);
                pixels.push(v.min(255) as u8);
            }
        }
    }
    Image::new(out_w, out_h, img.channels, pixels)
}

/// Source coordinate and blend factor for one output index under the
/// half-pixel-center mapping, clamped to the valid sample range.
fn bilinear_taps(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src as usize - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with half-pixel-center mapping and edge clamping.
pub fn resize_bilinear(img: &Image, out_w: u32, out_h: u32) -> Result<Image> {
    check_target(out_w, out_h)?;
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let ch = img.channels as usize;
    let tx = bilinear_taps(img.width, out_w);
    let ty = bilinear_taps(img.height, out_h);
    let stride = img.width as usize * ch;
    let mut pixels = Vec::with_capacity(out_w as usize * out_h as usize * ch);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            for c in 0..ch {
                let p = |x: usize, y: usize| img.pixels[y * stride + x * ch + c] as f64;
                let top = p(x0, y0) + fx * (p(x1, y0) - p(x0, y0));
                let bottom = p(x0, y1) + fx * (p(x1, y1) - p(x0, y1));
                pixels.push(round_sample(top + fy * (bottom - top)));
            }
        }
    }
    Image::new(out_w, out_h, img.channels, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: u32, h: u32, px: &[u8]) -> Image {
        Image::new(w, h, 1, px.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Image::new(0, 1, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 2, vec![0, 0]).is_err());
        assert!(Image::new(2, 2, 1, vec![0; 3]).is_err());
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_sample(127.5), 128);
        assert_eq!(round_sample(127.499), 127);
        assert_eq!(round_sample(-3.0), 0);
        assert_eq!(round_sample(300.0), 255);
    }

    #[test]
    fn loads_p5_bytes_verbatim() {
        let img = decode_image(b"P5\n2 2\n255\n\x00\x40\x80\xff").unwrap();
        assert_eq!(img, gray(2, 2, &[0, 64, 128, 255]));
    }

    #[test]
    fn loads_p6_with_comment() {
        let img = decode_image(b"P6\n# made by hand\n1 1\n255\n\x0a\x14\x1e").unwrap();
        assert_eq!(img, Image::new(1, 1, 3, vec![10, 20, 30]).unwrap());
    }

    #[test]
    fn pnm_errors() {
        assert!(matches!(
            decode_image(b"P5\n1 1\n65535\n\x00\x00"),
            Err(Error::UnsupportedBitDepth(16))
        ));
        assert!(matches!(
            decode_image(b"P5\n4 4\n255\n\x00"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_image(b"P5\n99999999999 99999999999\n255\n\x00"),
            Err(Error::DimensionOverflow { .. })
        ));
        assert!(decode_image(b"GIF89a").is_err());
    }

    fn png_bytes(color: png::ColorType, depth: png::BitDepth, w: u32, h: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            let mut writer = enc.write_header().unwrap();
            writer.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn png_gray_and_rgb() {
        let bytes = png_bytes(png::ColorType::Grayscale, png::BitDepth::Eight, 2, 1, &[7, 9]);
        assert_eq!(decode_image(&bytes).unwrap(), gray(2, 1, &[7, 9]));
        let bytes = png_bytes(png::ColorType::Rgb, png::BitDepth::Eight, 1, 1, &[1, 2, 3]);
        assert_eq!(
            decode_image(&bytes).unwrap(),
            Image::new(1, 1, 3, vec![1, 2, 3]).unwrap()
        );
    }

    #[test]
    fn png_16_bit_is_rejected() {
        let bytes = png_bytes(png::ColorType::Grayscale, png::BitDepth::Sixteen, 1, 1, &[0, 1]);
        let err = decode_image(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported bit depth"), "{err}");
    }

    #[test]
    fn png_alpha_is_rejected() {
        let bytes = png_bytes(png::ColorType::Rgba, png::BitDepth::Eight, 1, 1, &[1, 2, 3, 4]);
        assert!(matches!(
            decode_image(&bytes),
            Err(Error::UnsupportedColorType(_))
        ));
    }

    #[test]
    fn save_checks_extension_and_directory() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Image::filled(2, 2, 3, 5).unwrap();
        assert!(save_image(&rgb, dir.path().join("x.pgm")).is_err());
        assert!(save_image(&rgb, dir.path().join("x.png")).is_err());
        let missing = dir.path().join("nope").join("x.ppm");
        assert!(matches!(save_image(&rgb, missing), Err(Error::Io { .. })));
    }

    #[test]
    fn grayscale_examples() {
        let g = gray(1, 1, &[9]);
        assert_eq!(to_grayscale(&g), g);
        let white = Image::new(1, 1, 3, vec![255, 255, 255]).unwrap();
        assert_eq!(to_grayscale(&white).pixels(), &[255]);
        let px = Image::new(1, 1, 3, vec![100, 150, 200]).unwrap();
        assert_eq!(to_grayscale(&px).pixels(), &[141]);
    }

    #[test]
    fn area_examples() {
        let c = Image::filled(4, 4, 1, 77).unwrap();
        assert_eq!(resize_area(&c, 2, 2).unwrap(), Image::filled(2, 2, 1, 77).unwrap());
        let block = gray(2, 2, &[0, 255, 255, 0]);
        assert_eq!(resize_area(&block, 1, 1).unwrap().pixels(), &[128]);
        let big = Image::from_fn(96, 96, 1, |x, y, _| (x * 3 + y) as u8).unwrap();
        assert_eq!(resize_area(&big, 96, 96).unwrap(), big);
        assert!(resize_area(&big, 0, 4).is_err());
    }

    #[test]
    fn area_fractional_overlap() {
        // 3 -> 2: output 0 covers source 0 fully and half of source 1.
        let row = gray(3, 1, &[0, 90, 180]);
        let out = resize_area(&row, 2, 1).unwrap();
        // (0 + 45) / 1.5 = 30 ; (45 + 180) / 1.5 = 150
        assert_eq!(out.pixels(), &[30, 150]);
    }

    #[test]
    fn bilinear_matches_direct_formula() {
        let src = [0.0f64, 255.0];
        let img = gray(2, 1, &[0, 255]);
        let out = resize_bilinear(&img, 4, 1).unwrap();
        let oracle: Vec<u8> = (0..4)
            .map(|o| {
                let s = ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                let v = src[0] * (1.0 - s) + src[1] * s;
                (v + 0.5).floor() as u8
            })
            .collect();
        assert_eq!(out.pixels(), oracle.as_slice());
        assert_eq!(out.pixels(), &[0, 64, 191, 255]);
    }

    #[test]
    fn bilinear_identity_and_constants() {
        let img = Image::from_fn(5, 3, 3, |x, y, c| (x * 40 + y * 7 + c as u32) as u8).unwrap();
        assert_eq!(resize_bilinear(&img, 5, 3).unwrap(), img);
        let c = Image::filled(7, 5, 3, 200).unwrap();
        assert_eq!(
            resize_bilinear(&c, 13, 2).unwrap(),
            Image::filled(13, 2, 3, 200).unwrap()
        );
        assert!(resize_bilinear(&c, 1, 0).is_err());
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1u32..12, 1u32..12, prop_oneof![Just(1u8), Just(3u8)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), (w * h * c as u32) as usize)
                .prop_map(move |px| Image::new(w, h, c, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pnm_round_trip(img in arb_image()) {
            prop_assert_eq!(decode_image(&encode_pnm(&img)).unwrap(), img);
        }

        #[test]
        fn grayscale_is_idempotent(img in arb_image()) {
            let g = to_grayscale(&img);
            prop_assert_eq!(to_grayscale(&g), g);
        }

        #[test]
        fn area_stays_within_input_range(img in arb_image(), w in 1u32..15, h in 1u32..15) {
            let out = resize_area(&img, w, h).unwrap();
            let lo = *img.pixels().iter().min().unwrap();
            let hi = *img.pixels().iter().max().unwrap();
            prop_assert!(out.pixels().iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn area_preserves_constants(v in any::<u8>(), w in 1u32..20, h in 1u32..20, ow in 1u32..20, oh in 1u32..20) {
            let img = Image::filled(w, h, 1, v).unwrap();
            prop_assert_eq!(resize_area(&img, ow, oh).unwrap(), Image::filled(ow, oh, 1, v).unwrap());
        }
    }
}
