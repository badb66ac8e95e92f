use super::{SaliencyError, SaliencyMap, ScoreGrid, WindowMode};

/// Averages grid scores into a per-pixel map.
///
/// Each location contributes its score to a rectangle of pixels: its large
/// patch in containment mode, or the open `delta_l` box around its origin
/// in symmetric mode. Pixels covered by no location get 0.
///
/// Scores are rank counts over a common total, so window sums are
/// accumulated as integers with 2-D difference arrays and divided once.
pub fn aggregate(grid: &ScoreGrid) -> Result<SaliencyMap, SaliencyError> {
    if grid.scores.is_empty() || grid.scores.len() != grid.locations.len() {
        return Err(SaliencyError::EmptyGrid);
    }
    let total = grid.scores[0].total();
    if grid.scores.iter().any(|r| r.total() != total) {
        return Err(SaliencyError::Format("scores with different totals".into()));
    }
    let (w, h) = (grid.width as usize, grid.height as usize);
    let stride = w + 1;
    let mut sum = vec![0i64; stride * (h + 1)];
    let mut count = vec![0i64; stride * (h + 1)];
    let dl = grid.config.delta_l as i64;

    for (loc, score) in grid.locations.iter().zip(&grid.scores) {
        let (x0, y0, x1, y1) = match grid.config.window_mode {
            WindowMode::Containment => (
                loc.large.x as i64,
                loc.large.y as i64,
                (loc.large.x + loc.large.w) as i64,
                (loc.large.y + loc.large.h) as i64,
            ),
            WindowMode::Symmetric => (
                loc.x as i64 - dl + 1,
                loc.y as i64 - dl + 1,
                loc.x as i64 + dl,
                loc.y as i64 + dl,
            ),
        };
        let x0 = x0.clamp(0, w as i64) as usize;
        let y0 = y0.clamp(0, h as i64) as usize;
        let x1 = x1.clamp(0, w as i64) as usize;
        let y1 = y1.clamp(0, h as i64) as usize;
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let s = score.below() as i64;
        for (arr, v) in [(&mut sum, s), (&mut count, 1)] {
            arr[y0 * stride + x0] += v;
            arr[y0 * stride + x1] -= v;
            arr[y1 * stride + x0] -= v;
            arr[y1 * stride + x1] += v;
        }
    }

    for arr in [&mut sum, &mut count] {
        for y in 0..=h {
            for x in 1..=w {
                arr[y * stride + x] += arr[y * stride + x - 1];
            }
        }
        for y in 1..=h {
            for x in 0..=w {
                arr[y * stride + x] += arr[(y - 1) * stride + x];
            }
        }
    }

    let denom = total as f64;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let n = count[y * stride + x];
            values.push(if n == 0 {
                0.0
            } else {
                sum[y * stride + x] as f64 / (n as f64 * denom)
            });
        }
    }
    Ok(SaliencyMap {
        width: grid.width,
        height: grid.height,
        values,
        synset: String::new(),
        image: String::new(),
    })
}
