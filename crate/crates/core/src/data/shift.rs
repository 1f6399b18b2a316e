use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dataset::DatasetContainer;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftKind {
    Invert,
    GaussianNoise {
        sigma: f64,
    },
    /// `dx` moves columns right, `dy` moves rows down.
    Translate {
        dx: i64,
        dy: i64,
    },
}

/// JSON form is flat: `{"kind": "translate", "dx": 2, "dy": 0, "seed": 0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatSpec", into = "FlatSpec")]
pub struct SyntheticShiftSpec {
    pub kind: ShiftKind,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatSpec {
    kind: FlatKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dx: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dy: Option<i64>,
    #[serde(default)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FlatKind {
    Invert,
    GaussianNoise,
    Translate,
}

impl TryFrom<FlatSpec> for SyntheticShiftSpec {
    type Error = String;

    fn try_from(f: FlatSpec) -> std::result::Result<Self, String> {
        let kind = match (f.kind, f.sigma, f.dx, f.dy) {
            (FlatKind::Invert, None, None, None) => ShiftKind::Invert,
            (FlatKind::GaussianNoise, Some(sigma), None, None) => ShiftKind::GaussianNoise { sigma },
            (FlatKind::Translate, None, dx, dy) if dx.is_some() || dy.is_some() => ShiftKind::Translate {
                dx: dx.unwrap_or(0),
                dy: dy.unwrap_or(0),
            },
            (k, ..) => return Err(format!("fields do not match shift kind {k:?}")),
        };
        Ok(SyntheticShiftSpec { kind, seed: f.seed })
    }
}

impl From<SyntheticShiftSpec> for FlatSpec {
    fn from(s: SyntheticShiftSpec) -> Self {
        let mut f = FlatSpec {
            kind: FlatKind::Invert,
            sigma: None,
            dx: None,
            dy: None,
            seed: s.seed,
        };
        match s.kind {
            ShiftKind::Invert => {}
            ShiftKind::GaussianNoise { sigma } => {
                f.kind = FlatKind::GaussianNoise;
                f.sigma = Some(sigma);
            }
            ShiftKind::Translate { dx, dy } => {
                f.kind = FlatKind::Translate;
                f.dx = Some(dx);
                f.dy = Some(dy);
            }
        }
        f
    }
}

impl SyntheticShiftSpec {
    pub fn invert() -> Self {
        SyntheticShiftSpec {
            kind: ShiftKind::Invert,
            seed: 0,
        }
    }
}

/// Returns a shifted copy; shape and labels are preserved.
pub fn apply_shift(ds: &DatasetContainer, spec: &SyntheticShiftSpec) -> Result<DatasetContainer> {
    let mut out = ds.clone();
    let (h, w) = (ds.height, ds.width);
    match spec.kind {
        ShiftKind::Invert => out.images_mut().iter_mut().for_each(|v| *v = 255 - *v),
        ShiftKind::GaussianNoise { sigma } => {
            if sigma == 0.0 {
                return Ok(out);
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::Validation(format!("noise sigma {sigma}: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            for v in out.images_mut() {
                let n: f64 = normal.sample(&mut rng);
                *v = (*v as f64 + n).round().clamp(0.0, 255.0) as u8;
            }
        }
        ShiftKind::Translate { dx, dy } => {
            if dx.unsigned_abs() as usize >= w || dy.unsigned_abs() as usize >= h {
                return Err(Error::Validation(format!(
                    "translate ({dx}, {dy}) out of range for {h}x{w} images"
                )));
            }
            let src = ds.images();
            let dst = out.images_mut();
            dst.fill(0);
            for (plane, chunk) in dst.chunks_mut(h * w).enumerate() {
                let base = plane * h * w;
                for y in 0..h as i64 {
                    let sy = y - dy;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for x in 0..w as i64 {
                        let sx = x - dx;
                        if sx >= 0 && sx < w as i64 {
                            chunk[(y * w as i64 + x) as usize] = src[base + (sy * w as i64 + sx) as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
