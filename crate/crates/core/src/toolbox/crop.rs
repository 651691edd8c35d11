//! Image crop with normalized bounding boxes.
//!
//! Rounding rule: floor for the top-left corner, ceil for the bottom-right,
//! half-open pixel intervals. Every valid bbox yields at least a 1x1 crop.

use crate::transcript::ImagePayload;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid bbox [{x1}, {y1}, {x2}, {y2}]: need 0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0")]
pub struct InvalidBBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, InvalidBBox> {
        let ok = (0.0..1.0).contains(&x1)
            && (0.0..1.0).contains(&y1)
            && x2 <= 1.0
            && y2 <= 1.0
            && x1 < x2
            && y1 < y2
            && x1.is_finite()
            && y1.is_finite()
            && x2.is_finite()
            && y2.is_finite();
        if ok {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(InvalidBBox { x1, y1, x2, y2 })
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, InvalidBBox> {
        assert_eq!(v.len(), 4, "bbox arity is schema-checked upstream");
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Pixel bounds on a WxH image: columns x0..x1 and rows y0..y1, half-open.
    pub fn pixel_bounds(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let w = width as f64;
        let h = height as f64;
        let x0 = (self.x1 * w).floor() as u32;
        let x1 = (self.x2 * w).ceil() as u32;
        let y0 = (self.y1 * h).floor() as u32;
        let y1 = (self.y2 * h).ceil() as u32;
        (x0, x1.min(width), y0, y1.min(height))
    }
}

/// Extracts the sub-rectangle selected by the bbox.
pub fn crop_image(image: &ImagePayload, bbox: &BBox) -> ImagePayload {
    let (x0, x1, y0, y1) = bbox.pixel_bounds(image.width, image.height);
    assert!(x1 > x0 && y1 > y0, "valid bbox cannot produce an empty crop");
    let out_w = x1 - x0;
    let out_h = y1 - y0;
    let mut pixels = Vec::with_capacity((out_w * out_h) as usize * 3);
    for y in y0..y1 {
        let row_start = ((y as usize) * (image.width as usize) + x0 as usize) * 3;
        let row_end = row_start + (out_w as usize) * 3;
        pixels.extend_from_slice(&image.pixels[row_start..row_end]);
    }
    ImagePayload::new(out_w, out_h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_image(width: u32, height: u32) -> ImagePayload {
        let mut pixels = Vec::with_capacity((width * height) as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.push((x % 251) as u8);
                pixels.push((y % 251) as u8);
                pixels.push(((x * 7 + y * 13) % 256) as u8);
            }
        }
        ImagePayload::new(width, height, pixels)
    }

    #[test]
    fn fixture_crop_dimensions_and_content() {
        let image = gradient_image(1000, 800);
        let bbox = BBox::new(0.1, 0.2, 0.5, 0.8).unwrap();
        let crop = crop_image(&image, &bbox);
        assert_eq!((crop.width, crop.height), (400, 480));
        // Columns 100..500, rows 160..640.
        for (dy, dx) in [(0u32, 0u32), (479, 399), (100, 250)] {
            assert_eq!(crop.pixel(dx, dy), image.pixel(100 + dx, 160 + dy));
        }
    }

    #[test]
    fn full_bbox_is_identity() {
        let image = gradient_image(17, 5);
        let bbox = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(crop_image(&image, &bbox), image);
    }

    #[test]
    fn degenerate_bbox_rejected() {
        assert!(BBox::new(0.5, 0.2, 0.5, 0.8).is_err());
        assert!(BBox::new(0.2, 0.8, 0.5, 0.2).is_err());
        assert!(BBox::new(-0.1, 0.0, 0.5, 0.5).is_err());
        assert!(BBox::new(0.0, 0.0, 1.1, 1.0).is_err());
    }

    #[test]
    fn tiny_bbox_yields_at_least_one_pixel() {
        let image = gradient_image(3, 3);
        let bbox = BBox::new(0.4, 0.4, 0.41, 0.41).unwrap();
        let crop = crop_image(&image, &bbox);
        assert!(crop.width >= 1 && crop.height >= 1);
    }

    proptest! {
        #[test]
        fn full_bbox_identity_fuzzed(w in 1u32..64, h in 1u32..64) {
            let image = gradient_image(w, h);
            let bbox = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
            prop_assert_eq!(crop_image(&image, &bbox), image);
        }

        // Containment: every output pixel exists at the corresponding source
        // coordinate.
        #[test]
        fn crop_containment(
            w in 1u32..48, h in 1u32..48,
            a in 0.0f64..0.9, b in 0.0f64..0.9,
            da in 0.01f64..0.5, db in 0.01f64..0.5,
        ) {
            let x2 = (a + da).min(1.0);
            let y2 = (b + db).min(1.0);
            prop_assume!(a < x2 && b < y2);
            let image = gradient_image(w, h);
            let bbox = BBox::new(a, b, x2, y2).unwrap();
            let (x0, _, y0, _) = bbox.pixel_bounds(w, h);
            let crop = crop_image(&image, &bbox);
            for dy in 0..crop.height {
                for dx in 0..crop.width {
                    prop_assert_eq!(crop.pixel(dx, dy), image.pixel(x0 + dx, y0 + dy));
                }
            }
        }
    }
}
