use image::Rgb;
use serde::{Deserialize, Serialize};

use super::{ClipError, Frame, FrameMode, FrameSet};
use crate::dataset::BoundingBox;

/// Box outline style. Default: red, 3 px, drawn inside the box edges, no fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayStyle {
    pub color: [u8; 3],
    pub stroke: u32,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            color: [255, 0, 0],
            stroke: 3,
        }
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` covered by a box.
pub(crate) fn pixel_rect(b: &BoundingBox) -> (i64, i64, i64, i64) {
    (
        b.x.floor() as i64,
        b.y.floor() as i64,
        (b.x + b.w).ceil() as i64,
        (b.y + b.h).ceil() as i64,
    )
}

/// Whether `(px, py)` lies in the outline band of `rect` for the given stroke.
pub(crate) fn in_band((x0, y0, x1, y1): (i64, i64, i64, i64), stroke: i64, px: i64, py: i64) -> bool {
    let inside = px >= x0 && px < x1 && py >= y0 && py < y1;
    inside && (px < x0 + stroke || px >= x1 - stroke || py < y0 + stroke || py >= y1 - stroke)
}

/// Returns a new, annotated frame set; `boxes` is aligned with `frame_set.frames`.
pub fn render_overlay(
    frame_set: &FrameSet,
    boxes: &[Option<BoundingBox>],
    style: &OverlayStyle,
) -> Result<FrameSet, ClipError> {
    if frame_set.mode != FrameMode::Raw {
        return Err(ClipError::AlreadyAnnotated);
    }
    frame_set.check_complete(boxes.len())?;
    let color = Rgb(style.color);
    let stroke = style.stroke as i64;
    let frames = frame_set
        .frames
        .iter()
        .zip(boxes)
        .map(|(frame, bbox)| {
            let Some(bbox) = bbox else {
                return Ok(frame.clone());
            };
            let (w, h) = frame.image.dimensions();
            let rect @ (x0, y0, x1, y1) = pixel_rect(bbox);
            if x0 < 0 || y0 < 0 || x1 > w as i64 || y1 > h as i64 || x1 <= x0 || y1 <= y0 {
                return Err(ClipError::BoxOutOfBounds(frame.index));
            }
            let mut image = frame.image.clone();
            for py in y0..y1 {
                for px in x0..x1 {
                    if in_band(rect, stroke, px, py) {
                        image.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
            Ok(Frame {
                index: frame.index,
                image,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrameSet {
        frames,
        mode: FrameMode::Annotated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn uniform(n: usize) -> FrameSet {
        FrameSet {
            frames: (0..n as u32)
                .map(|i| Frame {
                    index: i,
                    image: RgbImage::from_pixel(100, 100, Rgb([40, 80, 120])),
                })
                .collect(),
            mode: FrameMode::Raw,
        }
    }

    #[test]
    fn perimeter_band_only() {
        let raw = uniform(1);
        let out = render_overlay(&raw, &[Some(BoundingBox::new(10.0, 20.0, 30.0, 40.0))], &OverlayStyle::default()).unwrap();
        let img = &out.frames[0].image;
        let mut colored = 0;
        for (x, y, p) in img.enumerate_pixels() {
            let (x, y) = (x as i64, y as i64);
            // independent restatement: inside [10,40)x[20,60) but not inside [13,37)x[23,57)
            let outer = (10..40).contains(&x) && (20..60).contains(&y);
            let inner = (13..37).contains(&x) && (23..57).contains(&y);
            if outer && !inner {
                assert_eq!(p, &Rgb([255, 0, 0]), "({x},{y})");
                colored += 1;
            } else {
                assert_eq!(p, &Rgb([40, 80, 120]), "({x},{y})");
            }
        }
        assert_eq!(colored, 30 * 40 - 24 * 34);
        assert_eq!(out.mode, FrameMode::Annotated);
        // input untouched
        assert_eq!(raw, uniform(1));
    }

    #[test]
    fn no_box_is_identity() {
        let raw = uniform(2);
        let out = render_overlay(&raw, &[None, Some(BoundingBox::new(0.0, 0.0, 5.0, 5.0))], &OverlayStyle::default()).unwrap();
        assert_eq!(out.frames[0].image.as_raw(), raw.frames[0].image.as_raw());
        assert_ne!(out.frames[1].image.as_raw(), raw.frames[1].image.as_raw());
    }

    #[test]
    fn out_of_bounds_box() {
        let raw = uniform(1);
        assert!(matches!(
            render_overlay(&raw, &[Some(BoundingBox::new(90.0, 90.0, 30.0, 30.0))], &OverlayStyle::default()),
            Err(ClipError::BoxOutOfBounds(0))
        ));
    }

    #[test]
    fn annotated_input_rejected() {
        let mut fs = uniform(1);
        fs.mode = FrameMode::Annotated;
        assert!(matches!(
            render_overlay(&fs, &[None], &OverlayStyle::default()),
            Err(ClipError::AlreadyAnnotated)
        ));
    }

    #[test]
    fn box_smaller_than_stroke_fills() {
        let out = render_overlay(&uniform(1), &[Some(BoundingBox::new(5.0, 5.0, 4.0, 4.0))], &OverlayStyle::default()).unwrap();
        for y in 5..9 {
            for x in 5..9 {
                assert_eq!(out.frames[0].image.get_pixel(x, y), &Rgb([255, 0, 0]));
            }
        }
    }
}
