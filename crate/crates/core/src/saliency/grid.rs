use serde::{Deserialize, Serialize};

use super::{BoundaryPolicy, SaliencyConfig, SaliencyError};

/// Axis-aligned pixel rectangle, `[x, x + w) x [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// One grid location: its nominal origin on the stride lattice and the
/// small and large patches cropped for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub x: u32,
    pub y: u32,
    pub small: Rect,
    pub large: Rect,
}

// Patch of side `side` anchored at `origin`, shifted inward (and shrunk, if
// the image is narrower than the patch) so it fits in `extent`.
fn clamped(origin: u32, side: u32, extent: u32) -> (u32, u32) {
    let len = side.min(extent);
    (origin.min(extent - len), len)
}

/// Grid locations in row-major order (y outer, x inner) at stride `omega`.
///
/// Under [`BoundaryPolicy::FitOnly`] only origins whose large patch lies
/// fully inside the image are kept. Under [`BoundaryPolicy::Clamp`] every
/// origin in `[0, W) x [0, H)` on the lattice is kept and patches crossing
/// the border are shifted inward.
pub fn patch_grid(width: u32, height: u32, cfg: &SaliencyConfig) -> Result<Vec<Location>, SaliencyError> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(SaliencyError::ImageTooSmall {
            width,
            height,
            need: cfg.delta_l,
        });
    }
    let step = cfg.omega as usize;
    match cfg.boundary_policy {
        BoundaryPolicy::FitOnly => {
            if width < cfg.delta_l || height < cfg.delta_l {
                return Err(SaliencyError::ImageTooSmall {
                    width,
                    height,
                    need: cfg.delta_l,
                });
            }
            let mut out = Vec::new();
            for y in (0..=height - cfg.delta_l).step_by(step) {
                for x in (0..=width - cfg.delta_l).step_by(step) {
                    out.push(Location {
                        x,
                        y,
                        small: Rect {
                            x,
                            y,
                            w: cfg.delta_s,
                            h: cfg.delta_s,
                        },
                        large: Rect {
                            x,
                            y,
                            w: cfg.delta_l,
                            h: cfg.delta_l,
                        },
                    });
                }
            }
            Ok(out)
        }
        BoundaryPolicy::Clamp => {
            let mut out = Vec::new();
            for y in (0..height).step_by(step) {
                for x in (0..width).step_by(step) {
                    let rect = |side: u32| {
                        let (rx, w) = clamped(x, side, width);
                        let (ry, h) = clamped(y, side, height);
                        Rect { x: rx, y: ry, w, h }
                    };
                    out.push(Location {
                        x,
                        y,
                        small: rect(cfg.delta_s),
                        large: rect(cfg.delta_l),
                    });
                }
            }
            Ok(out)
        }
    }
}

/// Number of patch encodings a saliency map needs: two per location.
pub fn patch_budget(width: u32, height: u32, cfg: &SaliencyConfig) -> Result<usize, SaliencyError> {
    Ok(2 * patch_grid(width, height, cfg)?.len())
}
