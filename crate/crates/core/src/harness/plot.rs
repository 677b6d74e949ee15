//! Small raster plots written as PNG.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::map::MapSnapshot;
use crate::sim::World;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRAY: Rgb<u8> = Rgb([170, 170, 170]);
const WALL: Rgb<u8> = Rgb([60, 60, 60]);
const BLUE: Rgb<u8> = Rgb([30, 90, 220]);
const RED: Rgb<u8> = Rgb([220, 40, 40]);

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(w, h, WHITE),
        }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
        let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            self.put((x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64, c);
        }
    }

    fn disc(&mut self, (x, y): (f64, f64), r: f64, c: Rgb<u8>) {
        let ri = r.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= r * r {
                    self.put(x.round() as i64 + dx, y.round() as i64 + dy, c);
                }
            }
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.img.save(path)?;
        Ok(())
    }
}

/// World cells drawn at a fixed number of pixels per meter.
struct WorldView<'a> {
    world: &'a World,
    ppm: f64,
}

impl<'a> WorldView<'a> {
    fn new(world: &'a World) -> Self {
        let (x0, y0, x1, y1) = world.bounds();
        let ppm = (600.0 / (x1 - x0).max(y1 - y0)).clamp(8.0, 60.0);
        Self { world, ppm }
    }

    fn px(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (x0, _, _, y1) = self.world.bounds();
        ((x - x0) * self.ppm, (y1 - y) * self.ppm)
    }

    fn canvas(&self) -> Canvas {
        let (x0, y0, x1, y1) = self.world.bounds();
        let w = ((x1 - x0) * self.ppm).ceil() as u32;
        let h = ((y1 - y0) * self.ppm).ceil() as u32;
        let mut c = Canvas::new(w.max(1), h.max(1));
        for py in 0..h {
            for px in 0..w {
                let x = x0 + (px as f64 + 0.5) / self.ppm;
                let y = y1 - (py as f64 + 0.5) / self.ppm;
                if self.world.occupied_at(x, y) {
                    c.put(px as i64, py as i64, WALL);
                }
            }
        }
        c
    }

    fn graph(&self, c: &mut Canvas, map: &MapSnapshot) {
        for e in &map.edges {
            let (Some(a), Some(b)) = (map.nodes.get(e.from), map.nodes.get(e.to)) else { continue };
            c.line(self.px((a.x, a.y)), self.px((b.x, b.y)), GRAY);
        }
    }
}

/// Blue to red through white.
fn ramp(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let mix = |a: u8, b: u8, u: f64| (a as f64 + (b as f64 - a as f64) * u).round() as u8;
    if t < 0.5 {
        let u = t * 2.0;
        Rgb([mix(BLUE[0], 255, u), mix(BLUE[1], 255, u), mix(BLUE[2], 255, u)])
    } else {
        let u = (t - 0.5) * 2.0;
        Rgb([mix(255, RED[0], u), mix(255, RED[1], u), mix(255, RED[2], u)])
    }
}

/// Coverage fraction against distance traveled.
pub fn coverage_curve(points: &[(f64, f64)], path: &Path) -> Result<()> {
    let (w, h, m) = (480u32, 320u32, 30.0);
    let mut c = Canvas::new(w, h);
    let (wf, hf) = (w as f64, h as f64);
    c.line((m, hf - m), (wf - m, hf - m), BLACK);
    c.line((m, m), (m, hf - m), BLACK);
    let d_max = points.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-9);
    let to_px = |(d, f): (f64, f64)| (m + d / d_max * (wf - 2.0 * m), hf - m - f.clamp(0.0, 1.0) * (hf - 2.0 * m));
    for pair in points.windows(2) {
        c.line(to_px(pair[0]), to_px(pair[1]), BLUE);
    }
    if let [only] = points {
        c.disc(to_px(*only), 2.0, BLUE);
    }
    c.save(path)
}

/// True (blue) and believed (red) paths over the world and the final map.
pub fn trajectory(world: &World, map: &MapSnapshot, truth: &[(f64, f64)], believed: &[(f64, f64)], path: &Path) -> Result<()> {
    let v = WorldView::new(world);
    let mut c = v.canvas();
    v.graph(&mut c, map);
    for n in &map.nodes {
        c.disc(v.px((n.x, n.y)), 2.5, BLACK);
    }
    for (pts, col) in [(truth, BLUE), (believed, RED)] {
        for pair in pts.windows(2) {
            c.line(v.px(pair[0]), v.px(pair[1]), col);
        }
    }
    c.save(path)
}

/// Map nodes coloured by a value per node, low blue and high red.
pub fn node_heatmap(world: &World, map: &MapSnapshot, values: &[f64], path: &Path) -> Result<()> {
    let v = WorldView::new(world);
    let mut c = v.canvas();
    v.graph(&mut c, map);
    let finite = values.iter().copied().filter(|x| x.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let r = (v.ppm * 0.2).max(3.0);
    for (n, val) in map.nodes.iter().zip(values) {
        let col = if val.is_finite() { ramp((val - lo) / span) } else { GRAY };
        c.disc(v.px((n.x, n.y)), r + 1.0, BLACK);
        c.disc(v.px((n.x, n.y)), r, col);
    }
    c.save(path)
}

/// Nodes and listed edges, with one node highlighted. A dot near the head
/// end of each edge shows its direction.
pub fn edge_map(world: &World, map: &MapSnapshot, highlight: Option<usize>, path: &Path) -> Result<()> {
    let v = WorldView::new(world);
    let mut c = v.canvas();
    v.graph(&mut c, map);
    for e in &map.edges {
        let (Some(a), Some(b)) = (map.nodes.get(e.from), map.nodes.get(e.to)) else { continue };
        let (pa, pb) = (v.px((a.x, a.y)), v.px((b.x, b.y)));
        c.disc((pa.0 + 0.8 * (pb.0 - pa.0), pa.1 + 0.8 * (pb.1 - pa.1)), 1.5, BLUE);
    }
    for n in &map.nodes {
        let col = if Some(n.id) == highlight { RED } else { BLACK };
        c.disc(v.px((n.x, n.y)), 3.0, col);
    }
    c.save(path)
}
