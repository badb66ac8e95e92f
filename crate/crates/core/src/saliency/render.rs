use super::{SaliencyError, SaliencyMap};
use crate::image::Image;

/// Named colour maps for overlays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Palette {
    #[default]
    Jet,
    Viridis,
    Hot,
    Gray,
}

impl std::str::FromStr for Palette {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jet" => Ok(Self::Jet),
            "viridis" => Ok(Self::Viridis),
            "hot" => Ok(Self::Hot),
            "gray" | "grey" => Ok(Self::Gray),
            other => Err(format!("unknown palette {other:?}")),
        }
    }
}

const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 82.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 145.0, 140.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5).floor() as u8
}

impl Palette {
    pub fn color(self, v: f64) -> [u8; 3] {
        let v = v.clamp(0.0, 1.0);
        let unit = |c: f64| to_u8(255.0 * c.clamp(0.0, 1.0));
        match self {
            Palette::Gray => [unit(v); 3],
            Palette::Jet => [
                unit(1.5 - (4.0 * v - 3.0).abs()),
                unit(1.5 - (4.0 * v - 2.0).abs()),
                unit(1.5 - (4.0 * v - 1.0).abs()),
            ],
            Palette::Hot => [unit(3.0 * v), unit(3.0 * v - 1.0), unit(3.0 * v - 2.0)],
            Palette::Viridis => {
                let pos = v * (VIRIDIS.len() - 1) as f64;
                let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
                let t = pos - i as f64;
                let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
                [
                    to_u8(a[0] + t * (b[0] - a[0])),
                    to_u8(a[1] + t * (b[1] - a[1])),
                    to_u8(a[2] + t * (b[2] - a[2])),
                ]
            }
        }
    }
}

fn check(image: &Image, map: &SaliencyMap) -> Result<(), SaliencyError> {
    if image.width() != map.width || image.height() != map.height {
        return Err(SaliencyError::SizeMismatch {
            map_w: map.width,
            map_h: map.height,
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    Ok(())
}

/// Colour-coded map blended over the image at alpha 0.5; always RGB.
/// Each channel is `(palette + pixel + 1) / 2`, i.e. the mean rounded half up.
pub fn render_overlay(image: &Image, map: &SaliencyMap, palette: Palette) -> Result<Image, SaliencyError> {
    check(image, map)?;
    let rgb = image.to_rgb();
    let mut out = Vec::with_capacity(rgb.data().len());
    for (px, &v) in rgb.data().chunks_exact(3).zip(&map.values) {
        let c = palette.color(v);
        for k in 0..3 {
            out.push((c[k] as u16 + px[k] as u16).div_ceil(2) as u8);
        }
    }
    Ok(Image::new(image.width(), image.height(), 3, out)?)
}

/// Masks low-saliency regions towards white: `y * pixel + (1 - y) * 255`,
/// rounded half up.
pub fn render_mask(image: &Image, map: &SaliencyMap) -> Result<Image, SaliencyError> {
    check(image, map)?;
    let c = image.channels() as usize;
    let out = image
        .data()
        .chunks_exact(c)
        .zip(&map.values)
        .flat_map(|(px, &y)| {
            let y = y.clamp(0.0, 1.0);
            px.iter()
                .map(move |&p| (y * p as f64 + (1.0 - y) * 255.0 + 0.5).floor() as u8)
        })
        .collect();
    Ok(Image::new(image.width(), image.height(), image.channels(), out)?)
}
