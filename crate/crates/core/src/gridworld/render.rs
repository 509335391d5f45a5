//! First-person column raycaster producing 64x64 luminance frames.
//!
//! Geometry, all in `f64` and evaluated in the order written here:
//!
//! * camera at the agent's cell center, x = col + 0.5, y = row + 0.5;
//! * direction `dir` is the heading unit vector, `plane` its right-hand
//!   perpendicular with length 1 (90 degree field of view);
//! * column `c` casts `ray = dir + plane * cx` with `cx = (2c + 1) / 64 - 1`;
//! * a grid DDA finds the first wall or block cell and its perpendicular
//!   distance `d`;
//! * row `y` has `off = y + 0.5 - 32`. With eye height 0.5, unit wall height
//!   and projection distance 32, a pixel is wall or block iff `|off| < 16 / d`;
//!   otherwise sky above the horizon, or the floor tile hit at distance
//!   `16 / off` along the ray.
//!
//! Luminance is computed in `f64` and stored as `f32`.

use sha2::{Digest, Sha256};

use super::{field_bit, is_wall, Heading, WorldState};

pub const FRAME_SIZE: usize = 64;
pub const FRAME_LEN: usize = FRAME_SIZE * FRAME_SIZE;

pub const SKY: f64 = 0.05;
pub const WALL: f64 = 0.45;
pub const WALL_FADE: f64 = 0.01;
pub const BLOCK: f64 = 0.70;
pub const WHITE_TILE: f64 = 0.90;
pub const COLORED_TILE: f64 = 0.30;
pub const WALKWAY: f64 = 0.55;

const HALF: f64 = FRAME_SIZE as f64 / 2.0;
/// Projection distance times eye height (and times wall height minus eye height).
const HALF_WALL: f64 = HALF * 0.5;

/// 64x64 row-major luminance in [0, 1].
#[derive(Clone, PartialEq)]
pub struct Frame {
    data: Box<[f32]>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({})", &self.hash_hex()[..12])
    }
}

impl Frame {
    /// Panics unless `data` holds exactly 4096 values.
    pub fn new(data: Vec<f32>) -> Frame {
        assert_eq!(data.len(), FRAME_LEN, "frame needs {FRAME_LEN} values");
        Frame { data: data.into_boxed_slice() }
    }

    pub fn filled(value: f32) -> Frame {
        Frame::new(vec![value; FRAME_LEN])
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * FRAME_SIZE + col]
    }

    /// 8-bit quantization `round(v * 255)`, the golden-file format.
    pub fn quantize(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_quantized(bytes: &[u8]) -> Frame {
        Frame::new(bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// SHA-256 over the little-endian `f32` bits.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        for v in self.data.iter() {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mse(&self, other: &Frame) -> f64 {
        let sum: f64 =
            self.data.iter().zip(other.data.iter()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
        sum / FRAME_LEN as f64
    }
}

fn vectors(heading: Heading) -> ((f64, f64), (f64, f64)) {
    match heading {
        Heading::North => ((0.0, -1.0), (1.0, 0.0)),
        Heading::East => ((1.0, 0.0), (0.0, 1.0)),
        Heading::South => ((0.0, 1.0), (-1.0, 0.0)),
        Heading::West => ((-1.0, 0.0), (0.0, -1.0)),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Hit {
    Wall,
    Block,
}

fn solid(state: &WorldState, row: i32, col: i32) -> Option<Hit> {
    if is_wall(row, col) {
        Some(Hit::Wall)
    } else if field_bit(row, col).is_some_and(|b| state.blocks & b != 0) {
        Some(Hit::Block)
    } else {
        None
    }
}

/// Casts from `(px, py)` along `(rx, ry)`; returns the hit and its
/// perpendicular distance.
fn cast(state: &WorldState, px: f64, py: f64, rx: f64, ry: f64) -> (Hit, f64) {
    let mut mx = px.floor() as i32;
    let mut my = py.floor() as i32;
    let dx = if rx == 0.0 { f64::INFINITY } else { (1.0 / rx).abs() };
    let dy = if ry == 0.0 { f64::INFINITY } else { (1.0 / ry).abs() };
    let (sx, mut side_x) = if rx < 0.0 { (-1, (px - mx as f64) * dx) } else { (1, (mx as f64 + 1.0 - px) * dx) };
    let (sy, mut side_y) = if ry < 0.0 { (-1, (py - my as f64) * dy) } else { (1, (my as f64 + 1.0 - py) * dy) };
    loop {
        let dist = if side_x < side_y {
            mx += sx;
            side_x += dx;
            side_x - dx
        } else {
            my += sy;
            side_y += dy;
            side_y - dy
        };
        if let Some(hit) = solid(state, my, mx) {
            return (hit, dist);
        }
    }
}

fn wall_luminance(d: f64) -> f64 {
    (WALL - WALL_FADE * d).max(0.0)
}

fn floor_luminance(state: &WorldState, row: i32, col: i32, d: f64) -> f64 {
    match solid(state, row, col) {
        Some(Hit::Wall) => wall_luminance(d),
        Some(Hit::Block) => BLOCK,
        None => match field_bit(row, col) {
            Some(b) if state.task.colored & b != 0 => COLORED_TILE,
            Some(_) => WHITE_TILE,
            None => WALKWAY,
        },
    }
}

/// Pure function of the state; equal states give bit-identical frames.
pub fn render(state: &WorldState) -> Frame {
    let pose = state.pose;
    let (px, py) = (pose.col as f64 + 0.5, pose.row as f64 + 0.5);
    let ((dx, dy), (qx, qy)) = vectors(pose.heading);
    let mut data = vec![0.0f32; FRAME_LEN];
    for c in 0..FRAME_SIZE {
        let cx = (2 * c + 1) as f64 / FRAME_SIZE as f64 - 1.0;
        let (rx, ry) = (dx + qx * cx, dy + qy * cx);
        let (hit, d) = cast(state, px, py, rx, ry);
        let half = HALF_WALL / d;
        let solid_lum = match hit {
            Hit::Wall => wall_luminance(d),
            Hit::Block => BLOCK,
        };
        for y in 0..FRAME_SIZE {
            let off = y as f64 + 0.5 - HALF;
            let lum = if off.abs() < half {
                solid_lum
            } else if off < 0.0 {
                SKY
            } else {
                let dist = HALF_WALL / off;
                let fx = px + rx * dist;
                let fy = py + ry * dist;
                floor_luminance(state, fy.floor() as i32, fx.floor() as i32, dist)
            };
            data[y * FRAME_SIZE + c] = lum as f32;
        }
    }
    Frame::new(data)
}
