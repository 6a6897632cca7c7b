//! 68-point facial landmarks and the rectangular occlusion regions derived
//! from them.
//!
//! Points follow the usual 1-indexed 68-point annotation: jaw 1–17,
//! eyebrows 18–27, nose 28–36, eyes 37–48 (image-left eye 37–42), mouth
//! 49–68.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 68;

/// Fractional margin added on every side of the eyes, nose and mouth boxes.
pub const FEATURE_MARGIN: f64 = 0.10;

/// Forehead band height as a multiple of the brow-to-eye gap.
pub const FOREHEAD_SCALE: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    points: Vec<Point>,
}

impl KeypointSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != NUM_KEYPOINTS {
            return Err(Error::KeypointCount(points.len()));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.y >= 0.0) {
                return Err(Error::param(
                    format!("keypoint {}", i + 1),
                    format!("coordinates must be finite and non-negative, got ({}, {})", p.x, p.y),
                ));
            }
        }
        Ok(Self { points })
    }

    /// Point by its 1-based annotation index.
    pub fn point(&self, index: usize) -> Point {
        self.points[index - 1]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Translate every point. Fails if a coordinate would go negative.
    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(
            self.points
                .iter()
                .map(|p| Point {
                    x: p.x + dx,
                    y: p.y + dy,
                })
                .collect(),
        )
    }

    /// Mean-face layout scaled to a `width` x `height` frame, centered.
    pub fn canonical(width: f64, height: f64) -> Self {
        let points = canonical_layout()
            .into_iter()
            .map(|(x, y)| Point {
                x: x * width,
                y: y * height,
            })
            .collect();
        Self { points }
    }

    /// Serialize in the text form: one `x y` line per point.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(68 * 16);
        for p in &self.points {
            out.push_str(&format!("{} {}\n", p.x, p.y));
        }
        out
    }

    fn span(&self, range: std::ops::RangeInclusive<usize>) -> Bounds {
        let mut b = Bounds {
            x0: f64::INFINITY,
            y0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for i in range {
            let p = self.point(i);
            b.x0 = b.x0.min(p.x);
            b.y0 = b.y0.min(p.y);
            b.x1 = b.x1.max(p.x);
            b.y1 = b.y1.max(p.y);
        }
        b
    }
}

/// Parse keypoints from either text (`x y` per line) or a JSON array of
/// 68 `[x, y]` pairs.
pub fn parse_keypoints(text: &str) -> Result<KeypointSet> {
    if text.trim_start().starts_with('[') {
        let pairs: Vec<Vec<f64>> = serde_json::from_str(text)?;
        if pairs.len() != NUM_KEYPOINTS {
            return Err(Error::KeypointCount(pairs.len()));
        }
        let points = pairs
            .into_iter()
            .enumerate()
            .map(|(i, pair)| match pair.as_slice() {
                [x, y] => Ok(Point { x: *x, y: *y }),
                _ => Err(Error::KeypointParse {
                    line: i + 1,
                    token: format!("{pair:?}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        return KeypointSet::new(points);
    }

    let mut points = Vec::with_capacity(NUM_KEYPOINTS);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut coords = [0.0; 2];
        let mut tokens = line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty());
        for coord in &mut coords {
            let token = tokens.next().unwrap_or("");
            *coord = token.parse().map_err(|_| Error::KeypointParse {
                line: lineno + 1,
                token: token.to_string(),
            })?;
        }
        if let Some(extra) = tokens.next() {
            return Err(Error::KeypointParse {
                line: lineno + 1,
                token: extra.to_string(),
            });
        }
        points.push(Point {
            x: coords[0],
            y: coords[1],
        });
    }
    KeypointSet::new(points)
}

pub fn load_keypoints(path: impl AsRef<Path>) -> Result<KeypointSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaceRegion {
    Eyes,
    Nose,
    Mouth,
    Forehead,
    LeftCheek,
    RightCheek,
    Mask,
}

impl FaceRegion {
    pub const ALL: [FaceRegion; 7] = [
        FaceRegion::Eyes,
        FaceRegion::Nose,
        FaceRegion::Mouth,
        FaceRegion::Forehead,
        FaceRegion::LeftCheek,
        FaceRegion::RightCheek,
        FaceRegion::Mask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaceRegion::Eyes => "eyes",
            FaceRegion::Nose => "nose",
            FaceRegion::Mouth => "mouth",
            FaceRegion::Forehead => "forehead",
            FaceRegion::LeftCheek => "left_cheek",
            FaceRegion::RightCheek => "right_cheek",
            FaceRegion::Mask => "mask",
        }
    }
}

impl fmt::Display for FaceRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Real-valued region bounds before rounding and clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Bounds {
    fn expanded(self, margin: f64) -> Self {
        let dx = (self.x1 - self.x0) * margin;
        let dy = (self.y1 - self.y0) * margin;
        Bounds {
            x0: self.x0 - dx,
            y0: self.y0 - dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    fn from_corners(xa: f64, ya: f64, xb: f64, yb: f64) -> Self {
        Bounds {
            x0: xa.min(xb),
            y0: ya.min(yb),
            x1: xa.max(xb),
            y1: ya.max(yb),
        }
    }
}

/// Integer pixel rectangle, `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RectRegion {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl RectRegion {
    pub fn area(&self) -> u64 {
        (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Region geometry in image coordinates, before rounding.
pub fn region_bounds(kps: &KeypointSet, region: FaceRegion) -> Bounds {
    let eyes = kps.span(37..=48);
    let mouth = kps.span(49..=68);
    let jaw = kps.span(2..=16);
    match region {
        FaceRegion::Eyes => eyes.expanded(FEATURE_MARGIN),
        FaceRegion::Nose => kps.span(28..=36).expanded(FEATURE_MARGIN),
        FaceRegion::Mouth => mouth.expanded(FEATURE_MARGIN),
        FaceRegion::Forehead => {
            let brows = kps.span(18..=27);
            let gap = eyes.y0 - brows.y0;
            Bounds {
                x0: brows.x0,
                y0: (brows.y0 - FOREHEAD_SCALE * gap).max(0.0),
                x1: brows.x1,
                y1: brows.y0,
            }
        }
        FaceRegion::LeftCheek => {
            let eye_bottom = kps.span(37..=42).y1;
            Bounds::from_corners(kps.point(2).x, eye_bottom, kps.point(32).x, mouth.y0)
        }
        FaceRegion::RightCheek => {
            let eye_bottom = kps.span(43..=48).y1;
            Bounds::from_corners(kps.point(36).x, eye_bottom, kps.point(16).x, mouth.y0)
        }
        FaceRegion::Mask => Bounds {
            x0: jaw.x0,
            y0: kps.point(31).y,
            x1: jaw.x1,
            y1: jaw.y1,
        },
    }
}

/// Round half-up to integer pixel bounds without clamping.
pub fn region_rect_unclamped(kps: &KeypointSet, region: FaceRegion) -> (i64, i64, i64, i64) {
    let b = region_bounds(kps, region);
    let r = |v: f64| (v + 0.5).floor() as i64;
    (r(b.x0), r(b.y0), r(b.x1), r(b.y1))
}

/// Pixel rectangle for `region`, clamped to the image. Errors when nothing
/// of the region lies inside the image.
pub fn region_bbox(
    kps: &KeypointSet,
    region: FaceRegion,
    img_w: u32,
    img_h: u32,
) -> Result<RectRegion> {
    let (x0, y0, x1, y1) = region_rect_unclamped(kps, region);
    let cx = |v: i64| v.clamp(0, img_w as i64) as u32;
    let cy = |v: i64| v.clamp(0, img_h as i64) as u32;
    let rect = RectRegion {
        x0: cx(x0),
        y0: cy(y0),
        x1: cx(x1),
        y1: cy(y1),
    };
    if rect.x0 >= rect.x1 || rect.y0 >= rect.y1 {
        return Err(Error::EmptyRegion {
            region: region.to_string(),
            width: img_w,
            height: img_h,
        });
    }
    Ok(rect)
}

/// Normalized mean-face coordinates for all 68 points.
fn canonical_layout() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(NUM_KEYPOINTS);
    // Jaw: lower half-ellipse from the image-left temple to the right one.
    for i in 0..17 {
        let t = std::f64::consts::PI * (1.0 - i as f64 / 16.0);
        pts.push((0.5 + 0.40 * t.cos(), 0.42 + 0.46 * t.sin()));
    }
    // Eyebrows: shallow arcs.
    for side in [0.0, 1.0] {
        for i in 0..5 {
            let u = i as f64 / 4.0;
            let x = 0.20 + side * 0.34 + 0.26 * u;
            let y = 0.30 - 0.04 * (std::f64::consts::PI * u).sin();
            pts.push((x, y));
        }
    }
    // Nose bridge 28–31, then nostrils 32–36.
    for i in 0..4 {
        pts.push((0.5, 0.40 + 0.055 * i as f64));
    }
    for i in 0..5 {
        let u = i as f64 / 4.0;
        pts.push((0.43 + 0.14 * u, 0.61 + 0.02 * (std::f64::consts::PI * u).sin()));
    }
    // Eyes: six-point ellipses, 37–42 then 43–48.
    for cx in [0.33, 0.67] {
        for k in 0..6 {
            let a = std::f64::consts::PI * (1.0 - k as f64 / 3.0);
            pts.push((cx + 0.075 * a.cos(), 0.40 - 0.03 * a.sin()));
        }
    }
    // Mouth: outer lip 49–60, inner lip 61–68.
    for k in 0..12 {
        let a = std::f64::consts::PI * (1.0 - k as f64 / 6.0);
        pts.push((0.5 + 0.15 * a.cos(), 0.75 - 0.05 * a.sin()));
    }
    for k in 0..8 {
        let a = std::f64::consts::PI * (1.0 - k as f64 / 4.0);
        pts.push((0.5 + 0.10 * a.cos(), 0.75 - 0.02 * a.sin()));
    }
    debug_assert_eq!(pts.len(), NUM_KEYPOINTS);
    pts
}
