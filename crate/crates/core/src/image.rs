//! 8-bit raster images, row-major, one or three channels.

use std::path::Path;

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image has zero area ({width}x{height})")]
    ZeroArea { width: u32, height: u32 },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(u8),
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("crop {x},{y} {w}x{h} outside {width}x{height} image")]
    CropBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroArea { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, ImageError> {
        let n = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; n])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let off = (y as usize * self.width as usize + x as usize) * c;
        &self.data[off..off + c]
    }

    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Image, ImageError> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(ImageError::CropBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(w as usize * h as usize * c);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * c;
            data.extend_from_slice(&self.data[start..start + w as usize * c]);
        }
        Ok(Image {
            width: w,
            height: h,
            channels: self.channels,
            data,
        })
    }

    /// Three-channel copy (grey replicated).
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }

    /// Bilinear resize to `w`x`h`.
    pub fn resize_bilinear(&self, w: u32, h: u32) -> Image {
        if w == self.width && h == self.height {
            return self.clone();
        }
        let resized = match self.channels {
            1 => image::imageops::resize(
                &self.to_gray_buffer(),
                w,
                h,
                image::imageops::FilterType::Triangle,
            )
            .into_raw(),
            _ => image::imageops::resize(
                &self.to_rgb_buffer(),
                w,
                h,
                image::imageops::FilterType::Triangle,
            )
            .into_raw(),
        };
        Image {
            width: w,
            height: h,
            channels: self.channels,
            data: resized,
        }
    }

    /// SHA-256 over a canonical encoding: `width` (u32 LE), `height`
    /// (u32 LE), `channels` (u8), then the raw pixel bytes.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update([self.channels]);
        h.update(&self.data);
        h.finalize().into()
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash())
    }

    fn to_gray_buffer(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer size checked at construction")
    }

    fn to_rgb_buffer(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer size checked at construction")
    }

    /// Decodes PNG or JPEG bytes. Alpha is dropped; 16-bit inputs are
    /// reduced to 8 bits.
    pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
        if bytes.is_empty() {
            return Err(ImageError::Decode("empty payload".into()));
        }
        let dynamic =
            image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        Ok(Self::from_dynamic(dynamic))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Image, ImageError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    fn from_dynamic(dynamic: image::DynamicImage) -> Image {
        use image::ColorType;
        match dynamic.color() {
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => {
                let g = dynamic.into_luma8();
                Image {
                    width: g.width(),
                    height: g.height(),
                    channels: 1,
                    data: g.into_raw(),
                }
            }
            _ => {
                let rgb = dynamic.into_rgb8();
                Image {
                    width: rgb.width(),
                    height: rgb.height(),
                    channels: 3,
                    data: rgb.into_raw(),
                }
            }
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut out = Vec::new();
        image::ImageEncoder::write_image(
            image::codecs::png::PngEncoder::new(&mut out),
            &self.data,
            self.width,
            self.height,
            color,
        )
        .map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            Image::new(0, 3, 1, vec![]),
            Err(ImageError::ZeroArea { .. })
        ));
        assert!(matches!(
            Image::new(2, 2, 4, vec![0; 16]),
            Err(ImageError::Channels(4))
        ));
        assert!(matches!(
            Image::new(2, 2, 3, vec![0; 11]),
            Err(ImageError::BufferSize { .. })
        ));
    }

    #[test]
    fn crop_copies_rows() {
        let data: Vec<u8> = (0..16).collect();
        let img = Image::new(4, 4, 1, data).unwrap();
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[9, 10, 13, 14]);
        assert!(img.crop(3, 3, 2, 1).is_err());
    }

    #[test]
    fn hash_depends_on_shape() {
        let a = Image::new(1, 4, 1, vec![1, 2, 3, 4]).unwrap();
        let b = Image::new(4, 1, 1, vec![1, 2, 3, 4]).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }

    #[test]
    fn png_roundtrip() {
        let img = Image::new(3, 2, 3, (0..18).collect()).unwrap();
        let back = Image::decode(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
        assert!(Image::decode(&[]).is_err());
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(5, 3, 3, 77).unwrap();
        let r = img.resize_bilinear(16, 16);
        assert_eq!((r.width(), r.height()), (16, 16));
        assert!(r.data().iter().all(|&v| v == 77));
    }
}
