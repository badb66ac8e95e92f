//! Weakly-supervised localisation: threshold a saliency map, keep the
//! largest connected component, box it and compare with ground truth.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::saliency::SaliencyMap;

/// Half-open pixel box `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, EvalError> {
        if x_min >= x_max || y_min >= y_max {
            return Err(EvalError::InvalidBox([x_min, y_min, x_max, y_max]));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> u64 {
        (self.x_max - self.x_min) as u64 * (self.y_max - self.y_min) as u64
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = EvalError;
    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Pixels with saliency strictly above `tau`.
pub fn threshold_map(map: &SaliencyMap, tau: f64) -> Result<Mask, EvalError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(EvalError::InvalidThreshold(tau));
    }
    Ok(Mask::new(
        map.width,
        map.height,
        map.values.iter().map(|&v| v > tau).collect(),
    ))
}

/// Keeps only the component with the most pixels. Among equal areas the
/// component holding the first pixel in row-major order wins.
pub fn largest_connected_component(mask: &Mask, connectivity: Connectivity) -> Mask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut label = vec![0u32; mask.bits.len()];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 0u32;
    let neighbours: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ],
    };
    let mut queue = VecDeque::new();
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut area = 0usize;
        while let Some(p) = queue.pop_front() {
            area += 1;
            let (px, py) = ((p as i64) % w, (p as i64) / w);
            for &(dx, dy) in neighbours {
                let (nx, ny) = (px + dx, py + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let q = (ny * w + nx) as usize;
                if mask.bits[q] && label[q] == 0 {
                    label[q] = next;
                    queue.push_back(q);
                }
            }
        }
        if best.is_none_or(|(_, a)| area > a) {
            best = Some((next, area));
        }
    }
    let keep = best.map(|(l, _)| l).unwrap_or(0);
    Mask::new(
        mask.width,
        mask.height,
        label.iter().map(|&l| l != 0 && l == keep).collect(),
    )
}

/// Tight box around the set pixels; `None` for an empty mask.
pub fn bounding_box(mask: &Mask) -> Option<BBox> {
    let mut ext: Option<(u32, u32, u32, u32)> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                ext = Some(match ext {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    ext.map(|(x0, y0, x1, y1)| BBox {
        x_min: x0,
        y_min: y0,
        x_max: x1 + 1,
        y_max: y1 + 1,
    })
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = a.x_max.min(b.x_max).saturating_sub(a.x_min.max(b.x_min)) as u64;
    let iy = a.y_max.min(b.y_max).saturating_sub(a.y_min.max(b.y_min)) as u64;
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// `{0.00, 0.01, ..., 1.00}`.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Box extracted from a map at threshold `tau`.
pub fn box_from_map(map: &SaliencyMap, tau: f64, connectivity: Connectivity) -> Result<Option<BBox>, EvalError> {
    let mask = threshold_map(map, tau)?;
    Ok(bounding_box(&largest_connected_component(&mask, connectivity)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxAccuracy {
    /// Best fraction of correctly localised samples.
    pub max_box_acc: f64,
    /// Smallest threshold attaining it.
    pub best_tau: f64,
    /// Accuracy at each threshold of the grid, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Maximal box accuracy over the threshold grid. A sample counts as
/// correct at `tau` when the box of its largest component overlaps the
/// ground truth with IoU >= `delta_hat`; an empty mask is a miss.
pub fn max_box_acc(
    maps: &[SaliencyMap],
    gt: &[BBox],
    delta_hat: f64,
    tau_grid: &[f64],
    connectivity: Connectivity,
) -> Result<BoxAccuracy, EvalError> {
    if maps.len() != gt.len() {
        return Err(EvalError::LengthMismatch(maps.len(), gt.len()));
    }
    if maps.is_empty() {
        return Err(EvalError::Empty("samples"));
    }
    if tau_grid.is_empty() {
        return Err(EvalError::Empty("tau grid"));
    }
    if let Some(&t) = tau_grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(EvalError::InvalidThreshold(t));
    }
    // hits[t] summed over samples
    let hits: Vec<usize> = maps
        .par_iter()
        .zip(gt)
        .map(|(map, g)| {
            tau_grid
                .iter()
                .map(|&tau| {
                    box_from_map(map, tau, connectivity)
                        .map(|b| b.is_some_and(|b| iou(&b, g) >= delta_hat) as usize)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .try_reduce(
            || vec![0; tau_grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let n = maps.len() as f64;
    let curve: Vec<(f64, f64)> = tau_grid
        .iter()
        .zip(&hits)
        .map(|(&t, &h)| (t, h as f64 / n))
        .collect();
    let (best_tau, max_box_acc) = curve
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, (t, a)| match best {
            Some((bt, ba)) if ba > a || (ba == a && bt <= t) => Some((bt, ba)),
            _ => Some((t, a)),
        })
        .expect("tau grid is nonempty");
    Ok(BoxAccuracy {
        max_box_acc,
        best_tau,
        curve,
    })
}

/// One line of a localisation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsolSample {
    pub path: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub concept: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: u32, h: u32, values: Vec<f64>) -> SaliencyMap {
        SaliencyMap {
            width: w,
            height: h,
            values,
            synset: String::new(),
            image: String::new(),
        }
    }

    fn mask(rows: &[&str]) -> Mask {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        Mask::new(w, h, rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect())
    }

    #[test]
    fn threshold_cases() {
        let m = map(2, 1, vec![0.2, 0.6]);
        assert_eq!(threshold_map(&m, 0.5).unwrap().bits, vec![false, true]);
        assert!(threshold_map(&m, 1.0).unwrap().is_empty());
        assert_eq!(threshold_map(&m, 0.0).unwrap().count(), 2);
        assert!(threshold_map(&m, 1.5).is_err());
        assert!(threshold_map(&m, -0.1).is_err());
    }

    #[test]
    fn lcc_keeps_biggest_blob() {
        let m = mask(&["##...", "##..#", "#...#", "....#"]);
        let l = largest_connected_component(&m, Connectivity::Eight);
        assert_eq!(l, mask(&["##...", "##...", "#....", "....."]));
        // single blob unchanged
        let one = mask(&[".##", ".#."]);
        assert_eq!(largest_connected_component(&one, Connectivity::Four), one);
        let empty = mask(&["...", "..."]);
        assert_eq!(largest_connected_component(&empty, Connectivity::Eight), empty);
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let m = mask(&["#..", ".#.", "..#"]);
        assert_eq!(largest_connected_component(&m, Connectivity::Four).count(), 1);
        assert_eq!(largest_connected_component(&m, Connectivity::Eight).count(), 3);
        // tie: first in row-major order wins
        let l = largest_connected_component(&m, Connectivity::Four);
        assert!(l.get(0, 0));
    }

    #[test]
    fn boxes() {
        let mut bits = vec![false; 10 * 10];
        bits[4 * 10 + 3] = true;
        let b = bounding_box(&Mask::new(10, 10, bits)).unwrap();
        assert_eq!(b, BBox::new(3, 4, 4, 5).unwrap());
        let full = Mask::new(4, 3, vec![true; 12]);
        assert_eq!(bounding_box(&full).unwrap(), BBox::new(0, 0, 4, 3).unwrap());
        let l = mask(&["#...", "#...", "####"]);
        assert_eq!(bounding_box(&l).unwrap(), BBox::new(0, 0, 4, 3).unwrap());
        assert!(bounding_box(&Mask::new(2, 2, vec![false; 4])).is_none());
    }

    #[test]
    fn iou_hand_cases() {
        let a = BBox::new(0, 0, 10, 10).unwrap();
        let b = BBox::new(5, 0, 15, 10).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b), 1.0 / 3.0);
        assert_eq!(iou(&a, &BBox::new(10, 0, 20, 5).unwrap()), 0.0);
        assert!(BBox::new(3, 0, 3, 4).is_err());
    }

    #[test]
    fn box_deserializes_from_array() {
        let b: BBox = serde_json::from_str("[1,2,3,4]").unwrap();
        assert_eq!(b, BBox::new(1, 2, 3, 4).unwrap());
        assert!(serde_json::from_str::<BBox>("[3,2,3,4]").is_err());
    }

    #[test]
    fn max_box_acc_extremes() {
        let gt = BBox::new(2, 2, 6, 5).unwrap();
        let ind: Vec<f64> = (0..64)
            .map(|i| {
                let (x, y) = (i % 8, i / 8);
                (x >= 2 && x < 6 && y >= 2 && y < 5) as u8 as f64
            })
            .collect();
        let r = max_box_acc(&[map(8, 8, ind.clone())], &[gt], 0.5, &[0.3, 0.7], Connectivity::Eight).unwrap();
        assert_eq!((r.max_box_acc, r.best_tau), (1.0, 0.3));
        let off: Vec<f64> = ind.iter().map(|v| 1.0 - v).collect();
        let r = max_box_acc(&[map(8, 8, off)], &[BBox::new(0, 0, 1, 1).unwrap()], 0.5, &default_tau_grid(), Connectivity::Eight)
            .unwrap();
        assert!(r.max_box_acc < 1.0);
        assert!(matches!(
            max_box_acc(&[], &[], 0.5, &[0.5], Connectivity::Eight),
            Err(EvalError::Empty(_))
        ));
        assert!(matches!(
            max_box_acc(&[map(1, 1, vec![1.0])], &[gt, gt], 0.5, &[0.5], Connectivity::Eight),
            Err(EvalError::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            max_box_acc(&[map(1, 1, vec![1.0])], &[gt], 0.5, &[], Connectivity::Eight),
            Err(EvalError::Empty(_))
        ));
    }
}
