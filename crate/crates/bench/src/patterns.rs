//! Procedural batik-like test images built from repeating geometric motifs
//! (sine fields, diagonal stripes, dot lattices) in traditional palettes.

use std::f64::consts::PI;
use std::str::FromStr;

use nst_core::{ImageTensor, Shape};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Lattice of four-petal ovals.
    Kawung,
    /// Diagonal wavy blades.
    Parang,
    /// Symmetric tiles from crossed sine fields.
    Ceplok,
    /// Scattered star dots on a dark ground.
    Truntum,
    /// Uniform per-pixel noise; a reference, not a motif.
    Noise,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Kawung,
        Pattern::Parang,
        Pattern::Ceplok,
        Pattern::Truntum,
        Pattern::Noise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Kawung => "kawung",
            Pattern::Parang => "parang",
            Pattern::Ceplok => "ceplok",
            Pattern::Truntum => "truntum",
            Pattern::Noise => "noise",
        }
    }
}

impl FromStr for Pattern {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        Pattern::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Pattern::ALL.iter().map(|p| p.as_str()).collect();
            BenchError::Config(format!("unknown pattern `{s}`; valid: {}", names.join(", ")))
        })
    }
}

const PALETTES: [[[f64; 3]; 3]; 3] = [
    // indigo, soga brown, cream
    [[0.10, 0.14, 0.32], [0.47, 0.29, 0.14], [0.93, 0.88, 0.74]],
    // deep brown, ochre, off-white
    [[0.24, 0.13, 0.07], [0.78, 0.55, 0.20], [0.96, 0.93, 0.85]],
    // black, madder red, ivory
    [[0.06, 0.05, 0.05], [0.62, 0.16, 0.12], [0.95, 0.92, 0.82]],
];

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    f64::from(rng.next_u32()) / f64::from(u32::MAX)
}

/// Mixes three palette colours with weights from a tone in `[0, 1]`.
fn shade(palette: &[[f64; 3]; 3], tone: f64, c: usize) -> f32 {
    let t = tone.clamp(0.0, 1.0);
    let v = if t < 0.5 {
        palette[0][c] + (palette[1][c] - palette[0][c]) * (t * 2.0)
    } else {
        palette[1][c] + (palette[2][c] - palette[1][c]) * ((t - 0.5) * 2.0)
    };
    v as f32
}

/// Renders `pattern` at `size`×`size`; the seed varies palette, scale,
/// orientation, and phase.
pub fn render(pattern: Pattern, seed: u64, size: usize) -> ImageTensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (pattern as u64) << 32);
    let shape = Shape::new(3, size, size);
    if pattern == Pattern::Noise {
        let values: Vec<f32> = (0..shape.len()).map(|_| unit(&mut rng) as f32).collect();
        return ImageTensor::from_vec(shape, values).expect("length matches shape");
    }
    let palette = PALETTES[(rng.next_u32() % 3) as usize];
    let period = 8.0 + 10.0 * unit(&mut rng);
    let phase = 2.0 * PI * unit(&mut rng);
    let angle = PI / 8.0 * (unit(&mut rng) - 0.5);
    let s = size as f64;
    let tone = |y: usize, x: usize| -> f64 {
        let (u, v) = (x as f64 / s * 64.0, y as f64 / s * 64.0);
        let (ur, vr) = (
            u * angle.cos() - v * angle.sin(),
            u * angle.sin() + v * angle.cos(),
        );
        let w = 2.0 * PI / period;
        match pattern {
            Pattern::Kawung => {
                let (cu, cv) = ((ur / period).fract() - 0.5, (vr / period).fract() - 0.5);
                let petal = |a: f64, b: f64| (a * a / 0.09 + b * b / 0.02).min(b * b / 0.09 + a * a / 0.02);
                let r = petal(cu.abs() - 0.22, cv).min(petal(cu, cv.abs() - 0.22));
                if r < 1.0 {
                    0.95
                } else if r < 1.6 {
                    0.35
                } else {
                    0.05 + 0.1 * (w * (ur + vr) + phase).sin().abs()
                }
            }
            Pattern::Parang => {
                let d = ur + vr + 2.0 * (w * (ur - vr) * 0.5 + phase).sin();
                let band = (d / period).fract();
                if band < 0.45 {
                    0.9 - band
                } else if band < 0.55 {
                    0.05
                } else {
                    0.5 + 0.3 * (w * 3.0 * d).sin()
                }
            }
            Pattern::Ceplok => {
                let f = (w * ur + phase).sin() * (w * vr + phase).sin();
                let g = (2.0 * w * (ur + vr)).cos();
                0.5 + 0.4 * f + 0.1 * g
            }
            Pattern::Truntum => {
                let (cu, cv) = ((ur / period).fract() - 0.5, (vr / period).fract() - 0.5);
                let r = (cu * cu + cv * cv).sqrt();
                let star = (5.0 * cv.atan2(cu) + phase).cos() * 0.06 + 0.18;
                if r < star {
                    0.95
                } else {
                    0.08 + 0.05 * (w * ur).sin()
                }
            }
            Pattern::Noise => unreachable!(),
        }
    };
    ImageTensor::from_fn(shape, |c, y, x| shade(&palette, tone(y, x), c))
}
