//! Synthetic panoramic observations and SSIM matching.
//!
//! A panorama is a grayscale strip whose column `c` looks along the bearing
//! `c·360/W` degrees clockwise from world north, so storage does not depend
//! on the heading at capture. Each column draws a wall band whose height
//! shrinks with depth, shaded by a texture derived from the 1 m block of wall
//! the ray hit.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Pose, World};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    width: usize,
    height: usize,
    /// Row-major, row 0 at the top.
    pixels: Vec<f32>,
}

impl Panorama {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDistribution("pixel intensity outside [0, 1]".into()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn column(&self, col: usize) -> Vec<f32> {
        (0..self.height).map(|r| self.get(col, r)).collect()
    }

    /// Writes a binary (P5) portable graymap.
    pub fn write_pgm(&self, mut out: impl Write) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|p| (p * 255.0).round() as u8).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(file))
    }

    /// Reads a binary (P5) portable graymap with maxval up to 255.
    pub fn read_pgm(input: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut header = Vec::new();
        let mut token = String::new();
        while header.len() < 4 {
            let mut byte = [0u8; 1];
            if reader.read(&mut byte)? == 0 {
                return Err(Error::Graymap("truncated header".into()));
            }
            let c = byte[0] as char;
            if c == '#' {
                let mut skip = String::new();
                reader.read_line(&mut skip)?;
                continue;
            }
            if c.is_ascii_whitespace() {
                if !token.is_empty() {
                    header.push(std::mem::take(&mut token));
                }
            } else {
                token.push(c);
            }
        }
        if header[0] != "P5" {
            return Err(Error::Graymap(format!("unsupported magic {}", header[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Graymap(format!("bad number {s}")));
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Graymap(format!("unsupported maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| Error::Graymap("truncated pixel data".into()))?;
        let pixels = bytes.iter().map(|b| *b as f32 / maxval as f32).collect();
        Self::new(width, height, pixels)
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PanoramaRepr {
    width: usize,
    height: usize,
    /// Little-endian f32 pixels, base64.
    data: String,
}

impl Serialize for Panorama {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.pixels.iter().flat_map(|p| p.to_le_bytes()).collect();
        PanoramaRepr {
            width: self.width,
            height: self.height,
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Panorama {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = PanoramaRepr::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(repr.data)
            .map_err(D::Error::custom)?;
        if bytes.len() % 4 != 0 {
            return Err(D::Error::custom("pixel data is not a whole number of f32"));
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Panorama::new(repr.width, repr.height, pixels).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
    /// Scales wall and floor intensity; 1 is the reference lighting.
    pub brightness: f64,
    /// Mixed into the wall texture hash; changing it repaints every wall.
    pub texture_salt: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 360,
            height: 32,
            max_range: 12.0,
            brightness: 1.0,
            texture_salt: 0,
        }
    }
}

/// Wall depth and texture shade for one panorama column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSample {
    /// Distance to the wall, or `None` when nothing is within range.
    pub depth: Option<f64>,
    /// Shade in `[0, 1]`.
    pub texture: f64,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Horizontal bands per wall half, each with its own shade.
const WALL_BANDS: u64 = 4;
const BAND_CONTRAST: f64 = 0.2;

/// Texture shade of the 1 m wall block containing a point.
pub fn wall_texture(x: f64, y: f64, salt: u64) -> f64 {
    let bx = x.floor() as i64 as u64;
    let by = y.floor() as i64 as u64;
    unit(mix64(mix64(bx ^ salt.rotate_left(17)) ^ by.rotate_left(32)))
}

/// Bearing, in world-frame radians, viewed by column `c`.
pub fn column_angle(c: usize, width: usize) -> f64 {
    std::f64::consts::FRAC_PI_2 - c as f64 * std::f64::consts::TAU / width as f64
}

/// Paints a panorama from per-column samples.
pub fn render_columns(samples: &[ColumnSample], cfg: &RenderConfig) -> Result<Panorama> {
    if samples.len() != cfg.width {
        return Err(Error::DimensionMismatch {
            expected: cfg.width,
            found: samples.len(),
        });
    }
    let h = cfg.height;
    let mid = h as f64 / 2.0;
    let mut pixels = vec![0.0f32; cfg.width * h];
    for (c, s) in samples.iter().enumerate() {
        let (half, wall) = match s.depth {
            Some(d) => {
                let half = (mid * 0.6 / d.max(0.05)).min(mid);
                let fade = 1.0 - 0.6 * (d / cfg.max_range).min(1.0);
                (half, (0.25 + 0.7 * s.texture) * fade)
            }
            None => (0.0, 0.0),
        };
        for r in 0..h {
            let off = (r as f64 + 0.5 - mid).abs();
            let v = if off < half {
                let band = ((off / half) * WALL_BANDS as f64) as u64 + if (r as f64) < mid { WALL_BANDS } else { 0 };
                wall * (1.0 - BAND_CONTRAST + 2.0 * BAND_CONTRAST * unit(mix64(s.texture.to_bits() ^ band)))
            } else {
                // Sky and floor shades depend on the row only, so they look
                // the same from every place and every bearing.
                let cell = mix64(r as u64);
                if (r as f64) < mid {
                    0.8 + 0.15 * (2.0 * unit(cell) - 1.0)
                } else {
                    0.2 + 0.1 * off / mid + 0.12 * (2.0 * unit(cell) - 1.0)
                }
            };
            pixels[r * cfg.width + c] = (v * cfg.brightness).clamp(0.0, 1.0) as f32;
        }
    }
    Panorama::new(cfg.width, h, pixels)
}

/// Renders the panorama seen from `pose`; the heading is ignored.
pub fn render_panorama(world: &World, pose: &Pose, cfg: &RenderConfig) -> Result<Panorama> {
    if world.occupied_at(pose.x, pose.y) {
        return Err(Error::PoseInObstacle { x: pose.x, y: pose.y });
    }
    let samples: Vec<ColumnSample> = (0..cfg.width)
        .map(|c| {
            let a = column_angle(c, cfg.width);
            let d = world.raycast(pose.x, pose.y, a, cfg.max_range);
            if d >= cfg.max_range {
                ColumnSample { depth: None, texture: 0.0 }
            } else {
                let eps = world.resolution() * 1e-3;
                let hx = pose.x + (d + eps) * a.cos();
                let hy = pose.y + (d + eps) * a.sin();
                ColumnSample {
                    depth: Some(d),
                    texture: wall_texture(hx, hy, cfg.texture_salt),
                }
            }
        })
        .collect();
    render_columns(&samples, cfg)
}

/// Mean SSIM over 8×8 windows taken every 4 pixels.
///
/// Images smaller than a window are compared as a single window.
pub fn ssim(a: &Panorama, b: &Panorama) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            expected: a.width * a.height,
            found: b.width * b.height,
        });
    }
    let wx = SSIM_WINDOW.min(a.width);
    let wy = SSIM_WINDOW.min(a.height);
    let xs = window_starts(a.width, wx);
    let ys = window_starts(a.height, wy);
    let n = (wx * wy) as f64;
    let mut total = 0.0;
    for &y0 in &ys {
        for &x0 in &xs {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + wy {
                let row = y * a.width;
                for x in x0..x0 + wx {
                    let pa = a.pixels[row + x] as f64;
                    let pb = b.pixels[row + x] as f64;
                    sa += pa;
                    sb += pb;
                    saa += pa * pa;
                    sbb += pb * pb;
                    sab += pa * pb;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    Ok(total / (xs.len() * ys.len()) as f64)
}

fn window_starts(len: usize, w: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=len - w).step_by(SSIM_STRIDE).collect();
    if *v.last().unwrap() != len - w {
        v.push(len - w);
    }
    v
}

/// Append-only table of stored panoramas; ids are dense indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationStore {
    panoramas: Vec<Panorama>,
}

impl ObservationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.panoramas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panoramas.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Panorama> {
        self.panoramas.get(id)
    }

    pub fn push(&mut self, p: Panorama) -> Result<usize> {
        if let Some(first) = self.panoramas.first() {
            if first.width != p.width || first.height != p.height {
                return Err(Error::DimensionMismatch {
                    expected: first.width * first.height,
                    found: p.width * p.height,
                });
            }
        }
        self.panoramas.push(p);
        Ok(self.panoramas.len() - 1)
    }

    /// SSIM of `p` against every stored panorama, in id order.
    pub fn scores(&self, p: &Panorama) -> Result<Vec<f64>> {
        self.panoramas.iter().map(|q| ssim(p, q)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MatchResult {
    Match { id: usize, score: f64 },
    Novel,
}

/// Best-scoring stored observation if it reaches `threshold`; lowest id wins ties.
pub fn match_observation(p: &Panorama, store: &ObservationStore, threshold: f64) -> Result<MatchResult> {
    Ok(best_match(&store.scores(p)?, threshold))
}

pub fn best_match(scores: &[f64], threshold: f64) -> MatchResult {
    let mut best: Option<(usize, f64)> = None;
    for (id, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    match best {
        Some((id, score)) if score >= threshold => MatchResult::Match { id, score },
        _ => MatchResult::Novel,
    }
}

/// How SSIM scores become observation weights for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    /// Softmax of `β·score` over all stored observations.
    #[default]
    Soft,
    /// All weight on the best match.
    Hard,
}

/// Sharpness of the soft evidence softmax.
pub const EVIDENCE_BETA: f64 = 50.0;

/// Observation weights for inference; empty (uninformative) when novel.
pub fn observation_evidence(scores: &[f64], threshold: f64, mode: EvidenceMode) -> Vec<(usize, f64)> {
    let MatchResult::Match { id, score } = best_match(scores, threshold) else {
        return Vec::new();
    };
    match mode {
        EvidenceMode::Hard => vec![(id, 1.0)],
        EvidenceMode::Soft => {
            let raw: Vec<(usize, f64)> = scores
                .iter()
                .enumerate()
                .map(|(o, s)| (o, (EVIDENCE_BETA * (s - score)).exp()))
                .filter(|(_, w)| *w > 1e-12)
                .collect();
            let z: f64 = raw.iter().map(|(_, w)| w).sum();
            raw.into_iter().map(|(o, w)| (o, w / z)).collect()
        }
    }
}
