//! Occupancy-grid simulator: discrete-heading motion with drift, lidar
//! raycasting, collision truncation and runtime obstacle edits.
//!
//! Cell `(i, j)` covers `[ox + i·r, ox + (i+1)·r] × [oy + j·r, oy + (j+1)·r]`
//! where `r` is the resolution and `(ox, oy)` the origin. Border cells are
//! always occupied.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Inclusive rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRegion {
    pub i0: i64,
    pub j0: i64,
    pub i1: i64,
    pub j1: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    /// Row-major, row 0 at the bottom.
    cells: Vec<bool>,
    spawns: BTreeMap<String, (f64, f64)>,
}

impl World {
    /// Empty rectangular room with a one-cell wall around it.
    ///
    /// The free interior spans `[ox, ox + w] × [oy, oy + h]` in meters.
    pub fn room(w: f64, h: f64, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::Config("resolution must be positive".into()));
        }
        let iw = (w / resolution).round() as usize;
        let ih = (h / resolution).round() as usize;
        if iw == 0 || ih == 0 {
            return Err(Error::Config("room must have a free interior".into()));
        }
        let width = iw + 2;
        let height = ih + 2;
        let mut world = Self {
            width,
            height,
            resolution,
            origin: (origin.0 - resolution, origin.1 - resolution),
            cells: vec![false; width * height],
            spawns: BTreeMap::new(),
        };
        world.seal_border();
        Ok(world)
    }

    fn seal_border(&mut self) {
        for i in 0..self.width {
            self.cells[i] = true;
            self.cells[(self.height - 1) * self.width + i] = true;
        }
        for j in 0..self.height {
            self.cells[j * self.width] = true;
            self.cells[j * self.width + self.width - 1] = true;
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    /// Metric bounds `(x_min, y_min, x_max, y_max)` of the whole grid.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.width as f64 * self.resolution,
            self.origin.1 + self.height as f64 * self.resolution,
        )
    }

    pub fn spawns(&self) -> &BTreeMap<String, (f64, f64)> {
        &self.spawns
    }

    pub fn spawn(&self, name: &str) -> Option<Pose> {
        self.spawns.get(name).map(|&(x, y)| Pose::new(x, y, 0.0))
    }

    pub fn add_spawn(&mut self, name: &str, x: f64, y: f64) {
        self.spawns.insert(name.to_string(), (x, y));
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin.0) / self.resolution).floor() as i64,
            ((y - self.origin.1) / self.resolution).floor() as i64,
        )
    }

    pub fn cell_center(&self, i: i64, j: i64) -> (f64, f64) {
        (
            self.origin.0 + (i as f64 + 0.5) * self.resolution,
            self.origin.1 + (j as f64 + 0.5) * self.resolution,
        )
    }

    /// Cells outside the grid count as occupied.
    pub fn occupied(&self, i: i64, j: i64) -> bool {
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            return true;
        }
        self.cells[j as usize * self.width + i as usize]
    }

    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        let (i, j) = self.cell_of(x, y);
        self.occupied(i, j)
    }

    /// Distance from a point to the nearest occupied cell, capped at `limit`.
    pub fn clearance(&self, x: f64, y: f64, limit: f64) -> f64 {
        let r = self.resolution;
        let (ci, cj) = self.cell_of(x, y);
        if self.occupied(ci, cj) {
            return 0.0;
        }
        let span = (limit / r).ceil() as i64 + 1;
        let mut best = limit;
        for j in cj - span..=cj + span {
            for i in ci - span..=ci + span {
                if !self.occupied(i, j) {
                    continue;
                }
                let x0 = self.origin.0 + i as f64 * r;
                let y0 = self.origin.1 + j as f64 * r;
                let dx = (x0 - x).max(0.0).max(x - (x0 + r));
                let dy = (y0 - y).max(0.0).max(y - (y0 + r));
                best = best.min(dx.hypot(dy));
            }
        }
        best
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (0..self.height as i64)
            .flat_map(move |j| (0..self.width as i64).map(move |i| (i, j)))
            .filter(|&(i, j)| !self.occupied(i, j))
    }

    /// Free area in square meters.
    pub fn free_area(&self) -> f64 {
        self.free_cells().count() as f64 * self.resolution * self.resolution
    }

    /// Cells whose centers fall inside the metric rectangle.
    pub fn region_of(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> CellRegion {
        let r = self.resolution;
        let lo = |v: f64, o: f64| ((v - o) / r - 0.5).ceil() as i64;
        let hi = |v: f64, o: f64| ((v - o) / r - 0.5).floor() as i64;
        CellRegion {
            i0: lo(x0.min(x1), self.origin.0),
            j0: lo(y0.min(y1), self.origin.1),
            i1: hi(x0.max(x1), self.origin.0),
            j1: hi(y0.max(y1), self.origin.1),
        }
    }

    /// Sets the occupancy of every cell in `region`.
    ///
    /// Regions that leave the grid or would open a border cell are rejected.
    pub fn edit(&mut self, region: CellRegion, occupied: bool) -> Result<()> {
        let in_grid = |i: i64, w: usize| i >= 0 && i < w as i64;
        if region.i0 > region.i1
            || region.j0 > region.j1
            || !in_grid(region.i0, self.width)
            || !in_grid(region.i1, self.width)
            || !in_grid(region.j0, self.height)
            || !in_grid(region.j1, self.height)
        {
            return Err(Error::OutOfBounds(format!("{region:?}")));
        }
        let touches_border = region.i0 == 0
            || region.j0 == 0
            || region.i1 == self.width as i64 - 1
            || region.j1 == self.height as i64 - 1;
        if touches_border && !occupied {
            return Err(Error::OutOfBounds(format!("{region:?} would open the border")));
        }
        for j in region.j0..=region.j1 {
            for i in region.i0..=region.i1 {
                self.cells[j as usize * self.width + i as usize] = occupied;
            }
        }
        Ok(())
    }

    /// Metric-rectangle convenience over [`World::edit`].
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, occupied: bool) -> Result<()> {
        let region = self.region_of(x0, y0, x1, y1);
        self.edit(region, occupied)
    }

    /// Distance along `angle` to the first occupied cell, capped at `max_range`.
    pub fn raycast(&self, x: f64, y: f64, angle: f64, max_range: f64) -> f64 {
        let mut hit = max_range;
        self.walk_ray(x, y, angle, max_range, |i, j, t| {
            if self.occupied(i, j) {
                hit = t;
                false
            } else {
                true
            }
        });
        hit
    }

    /// Visits the cells a ray crosses, in order, with the distance at which
    /// the ray enters each one. Stops when `visit` returns false or the ray
    /// passes `max_range`.
    pub fn walk_ray(&self, x: f64, y: f64, angle: f64, max_range: f64, mut visit: impl FnMut(i64, i64, f64) -> bool) {
        let r = self.resolution;
        let gx = (x - self.origin.0) / r;
        let gy = (y - self.origin.1) / r;
        let (mut i, mut j) = (gx.floor() as i64, gy.floor() as i64);
        if !visit(i, j, 0.0) {
            return;
        }
        let (dx, dy) = (angle.cos(), angle.sin());
        let (step_i, mut t_max_x, t_dx) = axis_setup(gx, dx);
        let (step_j, mut t_max_y, t_dy) = axis_setup(gy, dy);
        let limit = max_range / r;
        let max_cells = 2 * (self.width + self.height) + 4;
        for _ in 0..max_cells * 2 {
            let t;
            if t_max_x < t_max_y {
                t = t_max_x;
                t_max_x += t_dx;
                i += step_i;
            } else {
                t = t_max_y;
                t_max_y += t_dy;
                j += step_j;
            }
            if t >= limit {
                return;
            }
            if !visit(i, j, t * r) {
                return;
            }
        }
    }

    /// Parses the plain-text world format.
    ///
    /// ```text
    /// resolution 0.5
    /// origin 0 0
    /// spawn start 1.0 1.0
    /// grid
    /// #####
    /// #...#
    /// #####
    /// ```
    ///
    /// Rows run top to bottom; `#` is occupied, `.` free; `%` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, column: usize, message: &str| Error::WorldParse {
            line,
            column,
            message: message.to_string(),
        };
        let mut resolution = None;
        let mut origin = (0.0, 0.0);
        let mut spawns = BTreeMap::new();
        let mut rows: Vec<(usize, &str)> = Vec::new();
        let mut in_grid = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('%').next().unwrap_or("").trim_end();
            if in_grid {
                if !line.trim().is_empty() {
                    rows.push((lineno, line.trim()));
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            let nums = |parts: std::str::SplitWhitespace<'_>, n: usize| -> Result<Vec<f64>> {
                let v: Vec<&str> = parts.collect();
                if v.len() != n {
                    return Err(err(lineno, 1, &format!("{key} expects {n} values")));
                }
                v.iter()
                    .map(|s| {
                        s.parse::<f64>().map_err(|_| {
                            let col = raw.find(s).map_or(1, |c| c + 1);
                            err(lineno, col, &format!("not a number: {s}"))
                        })
                    })
                    .collect()
            };
            match key {
                "resolution" => {
                    let v = nums(parts, 1)?;
                    if !(v[0] > 0.0) {
                        return Err(err(lineno, 1, "resolution must be positive"));
                    }
                    resolution = Some(v[0]);
                }
                "origin" => {
                    let v = nums(parts, 2)?;
                    origin = (v[0], v[1]);
                }
                "spawn" => {
                    let name = parts.next().ok_or_else(|| err(lineno, 1, "spawn needs a name"))?;
                    let v = nums(parts, 2)?;
                    spawns.insert(name.to_string(), (v[0], v[1]));
                }
                "grid" => in_grid = true,
                other => return Err(err(lineno, 1, &format!("unknown key {other}"))),
            }
        }
        let resolution = resolution.ok_or_else(|| err(1, 1, "missing resolution"))?;
        if rows.is_empty() {
            return Err(err(text.lines().count().max(1), 1, "missing grid"));
        }
        let width = rows[0].1.chars().count();
        let height = rows.len();
        let mut cells = vec![false; width * height];
        for (r, (lineno, row)) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(err(*lineno, 1, &format!("row width {} differs from {width}", row.chars().count())));
            }
            let j = height - 1 - r;
            for (i, c) in row.chars().enumerate() {
                let occ = match c {
                    '#' => true,
                    '.' => false,
                    other => return Err(err(*lineno, i + 1, &format!("unexpected character {other:?}"))),
                };
                let border = i == 0 || i == width - 1 || j == 0 || j == height - 1;
                if border && !occ {
                    return Err(err(*lineno, i + 1, "border cells must be occupied"));
                }
                cells[j * width + i] = occ;
            }
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
            spawns,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "resolution {}", self.resolution);
        let _ = writeln!(out, "origin {} {}", self.origin.0, self.origin.1);
        for (name, (x, y)) in &self.spawns {
            let _ = writeln!(out, "spawn {name} {x} {y}");
        }
        out.push_str("grid\n");
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                out.push(if self.cells[j * self.width + i] { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Built-in layouts by name; see [`BUILTIN_WORLDS`].
    pub fn builtin(name: &str) -> Result<Self> {
        let res = 0.25;
        let mut w = match name {
            "mini-warehouse" => {
                let mut w = Self::room(6.0, 6.0, res, (0.0, 0.0))?;
                w.fill_rect(1.5, 1.5, 2.0, 4.5, true)?;
                w.fill_rect(4.0, 1.5, 4.5, 4.5, true)?;
                w.add_spawn("start", 0.75, 0.75);
                w.add_spawn("far", 5.25, 5.25);
                w
            }
            "small-warehouse" => {
                let mut w = Self::room(10.0, 8.0, res, (0.0, 0.0))?;
                w.fill_rect(2.0, 2.0, 2.5, 6.0, true)?;
                w.fill_rect(5.0, 2.0, 5.5, 6.0, true)?;
                w.fill_rect(8.0, 1.5, 8.5, 6.5, true)?;
                w.add_spawn("start", 0.75, 0.75);
                w.add_spawn("far", 9.25, 7.25);
                w
            }
            "large-warehouse" => {
                let mut w = Self::room(20.0, 14.0, res, (0.0, 0.0))?;
                for k in 0..5 {
                    let x = 2.5 + 3.5 * k as f64;
                    w.fill_rect(x, 2.0, x + 0.5, 6.0, true)?;
                    w.fill_rect(x, 8.0, x + 0.5, 12.0, true)?;
                }
                w.add_spawn("start", 0.75, 0.75);
                w.add_spawn("far", 19.25, 13.25);
                w
            }
            "house" => {
                let mut w = Self::room(17.5, 10.0, res, (0.0, 0.0))?;
                w.fill_rect(7.0, 0.0, 7.25, 4.0, true)?;
                w.fill_rect(7.0, 5.5, 7.25, 10.0, true)?;
                w.fill_rect(7.25, 5.0, 11.0, 5.25, true)?;
                w.fill_rect(12.5, 5.0, 17.5, 5.25, true)?;
                w.fill_rect(12.5, 5.25, 12.75, 7.0, true)?;
                w.fill_rect(12.5, 8.5, 12.75, 10.0, true)?;
                w.fill_rect(2.0, 6.5, 4.0, 7.5, true)?;
                w.add_spawn("start", 1.0, 1.0);
                w.add_spawn("far", 16.5, 9.0);
                w
            }
            "obstacle-room" => {
                let mut w = Self::room(5.0, 5.0, res, (-2.5, -2.5))?;
                w.fill_rect(-1.25, -0.25, -0.75, 0.25, true)?;
                w.add_spawn("start", -2.0, 0.0);
                w.add_spawn("goal", 0.0, 0.0);
                w
            }
            "drift-room" => {
                let mut w = Self::room(8.0, 4.0, res, (0.0, 0.0))?;
                w.add_spawn("start", 2.0, 2.0);
                w
            }
            "corridor" => {
                let mut w = Self::room(15.5, 1.5, res, (0.0, 0.0))?;
                w.add_spawn("start", 0.75, 0.75);
                w.add_spawn("far", 14.75, 0.75);
                w
            }
            other => return Err(Error::UnknownWorld(other.to_string())),
        };
        w.seal_border();
        Ok(w)
    }
}

/// Names accepted by [`World::builtin`].
pub const BUILTIN_WORLDS: &[&str] = &[
    "mini-warehouse",
    "small-warehouse",
    "large-warehouse",
    "house",
    "obstacle-room",
    "drift-room",
    "corridor",
];

fn axis_setup(g: f64, d: f64) -> (i64, f64, f64) {
    if d > 1e-12 {
        (1, (g.floor() + 1.0 - g) / d, 1.0 / d)
    } else if d < -1e-12 {
        (-1, (g - g.floor()) / -d, -1.0 / d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

/// Evenly spaced ranges, beam `i` along heading `i·2π/n_beams` (world frame).
pub fn lidar_scan(world: &World, pose: &Pose, max_range: f64, n_beams: usize) -> Vec<f64> {
    (0..n_beams)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / n_beams as f64;
            world.raycast(pose.x, pose.y, a, max_range)
        })
        .collect()
}

/// World point hit by each beam that returned before `max_range`.
pub fn scan_points(pose: &Pose, ranges: &[f64], max_range: f64) -> Vec<(f64, f64)> {
    let n = ranges.len();
    ranges
        .iter()
        .enumerate()
        .filter(|(_, r)| **r < max_range)
        .map(|(i, r)| {
            let a = i as f64 * std::f64::consts::TAU / n as f64;
            (pose.x + r * a.cos(), pose.y + r * a.sin())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftModel {
    pub translation_gain: f64,
    pub translation_noise_sigma: f64,
    pub rotation_noise_sigma: f64,
    /// Noise on the reported displacement, per axis.
    pub odometry_noise_sigma: f64,
    pub seed: u64,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            translation_gain: 1.0,
            translation_noise_sigma: 0.0,
            rotation_noise_sigma: 0.0,
            odometry_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl DriftModel {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.translation_noise_sigma,
            self.rotation_noise_sigma,
            self.odometry_noise_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) || !(self.translation_gain > 0.0) {
            return Err(Error::Config("drift sigmas must be >= 0 and gain > 0".into()));
        }
        Ok(())
    }
}

/// Drift parameters together with their random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub model: DriftModel,
    rng: ChaCha8Rng,
}

impl Drift {
    pub fn new(model: DriftModel) -> Result<Self> {
        model.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Ok(Self { model, rng })
    }

    fn normal(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        self.rng.sample(Normal::new(0.0, sigma).expect("sigma validated"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub true_pose: Pose,
    /// Displacement as measured by wheel odometry, world frame.
    pub reported_odometry: (f64, f64),
    pub collided: bool,
    pub traveled: f64,
}

/// Executes one action: turn to its heading, then translate `distance`.
///
/// The stay action leaves the pose untouched.
pub fn step(
    world: &World,
    pose: &Pose,
    action: &Action,
    distance: f64,
    radius: f64,
    drift: &mut Drift,
) -> Result<StepResult> {
    match action.heading {
        None => {
            if world.occupied_at(pose.x, pose.y) {
                return Err(Error::PoseInObstacle { x: pose.x, y: pose.y });
            }
            Ok(StepResult {
                true_pose: *pose,
                reported_odometry: (0.0, 0.0),
                collided: false,
                traveled: 0.0,
            })
        }
        Some(h) => step_heading(world, pose, h, distance, radius, drift),
    }
}

/// Turn-then-translate toward an arbitrary heading.
///
/// True travel is `distance·gain + noise`, truncated where the body of
/// radius `radius` first touches an occupied cell. The reported displacement
/// is the travel the wheels were commanded to make before any truncation
/// (`traveled / gain`), along the commanded heading, plus odometry noise.
pub fn step_heading(
    world: &World,
    pose: &Pose,
    heading: f64,
    distance: f64,
    radius: f64,
    drift: &mut Drift,
) -> Result<StepResult> {
    if world.occupied_at(pose.x, pose.y) {
        return Err(Error::PoseInObstacle { x: pose.x, y: pose.y });
    }
    let theta = heading + drift.normal(drift.model.rotation_noise_sigma);
    let trans_noise = drift.normal(drift.model.translation_noise_sigma);
    let intended = (distance * drift.model.translation_gain + trans_noise).max(0.0);

    let start_clear = world.clearance(pose.x, pose.y, radius);
    let required = radius.min(start_clear) - 1e-9;
    let (c, s) = (theta.cos(), theta.sin());
    let blocked = |d: f64| world.clearance(pose.x + d * c, pose.y + d * s, radius) < required;

    let inc = (world.resolution() / 4.0).min(0.02);
    let mut free = 0.0;
    let mut hit = None;
    let mut d = 0.0;
    while d < intended {
        d = (d + inc).min(intended);
        if blocked(d) {
            hit = Some(d);
            break;
        }
        free = d;
    }
    let traveled = match hit {
        None => intended,
        Some(mut bad) => {
            for _ in 0..40 {
                let mid = 0.5 * (free + bad);
                if blocked(mid) {
                    bad = mid;
                } else {
                    free = mid;
                }
            }
            free
        }
    };
    let true_pose = Pose::new(pose.x + traveled * c, pose.y + traveled * s, theta);
    let wheel = traveled / drift.model.translation_gain;
    let ox = drift.normal(drift.model.odometry_noise_sigma);
    let oy = drift.normal(drift.model.odometry_noise_sigma);
    Ok(StepResult {
        true_pose,
        reported_odometry: (wheel * heading.cos() + ox, wheel * heading.sin() + oy),
        collided: hit.is_some(),
        traveled,
    })
}
