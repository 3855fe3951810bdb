use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Validated box: min < max on both axes. Coordinates are not clamped;
    /// use [`BBox::normalized`] for the [0, 1] check.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn normalized(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox::new(x_min, y_min, x_max, y_max)?;
        if [x_min, y_min, x_max, y_max]
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(b.degenerate());
        }
        Ok(b)
    }

    fn degenerate(&self) -> Error {
        Error::DegenerateBox {
            x_min: self.x_min,
            y_min: self.y_min,
            x_max: self.x_max,
            y_max: self.y_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(self.degenerate());
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// (x_min, y_min, x_max, y_max, width, height, area)
    pub fn features7(&self) -> [f64; 7] {
        [
            self.x_min,
            self.y_min,
            self.x_max,
            self.y_max,
            self.width(),
            self.height(),
            self.area(),
        ]
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let far = BBox::new(2.0, 2.0, 3.0, 3.0).unwrap();
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
        let shifted = BBox::new(0.5, 0.0, 1.5, 1.0).unwrap();
        assert!((iou(&a, &shifted).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &shifted).unwrap(), iou(&shifted, &a).unwrap());
    }

    #[test]
    fn touching_edges_do_not_intersect() {
        let a = BBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let b = BBox::new(0.5, 0.0, 1.0, 0.5).unwrap();
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(BBox::new(0.5, 0.0, 0.5, 1.0).is_err());
        assert!(BBox::new(0.0, 0.7, 1.0, 0.2).is_err());
        assert!(BBox::normalized(0.0, 0.0, 1.2, 1.0).is_err());
        let bad = BBox {
            x_min: 1.0,
            y_min: 0.0,
            x_max: 0.0,
            y_max: 1.0,
        };
        let ok = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(matches!(iou(&bad, &ok), Err(Error::DegenerateBox { .. })));
    }
}
