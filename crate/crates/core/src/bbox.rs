//! Axis-aligned boxes in `[x1, y1, w, h]` pixel convention.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Rejects non-finite values and non-positive sizes.
    pub fn new(x1: f64, y1: f64, w: f64, h: f64) -> Result<Self> {
        if ![x1, y1, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::Input(format!("box {x1},{y1},{w},{h} is not finite")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Input(format!("box {x1},{y1},{w},{h} has non-positive size")));
        }
        Ok(BBox { x1, y1, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x2(&self) -> f64 {
        self.x1 + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y1 + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x1 + self.w / 2.0, self.y1 + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn xyxy(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2(), self.y2()]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            ..*self
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }

    /// Whether the box lies entirely within a `width × height` frame.
    pub fn inside(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2() <= width && self.y2() <= height
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x1, self.y1, self.w, self.h)
    }
}

impl FromStr for BBox {
    type Err = Error;

    /// Accepts `x1,y1,w,h` with comma, tab or space separators.
    fn from_str(s: &str) -> Result<Self> {
        let vals: Vec<&str> = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .collect();
        if vals.len() != 4 {
            return Err(Error::Input(format!("expected 4 box values, got {}", vals.len())));
        }
        let mut v = [0.0; 4];
        for (slot, raw) in v.iter_mut().zip(&vals) {
            *slot = raw
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("bad box value {raw:?}")))?;
        }
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

fn intersection(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    iw * ih
}

fn area(a: [f64; 4]) -> f64 {
    (a[2] - a[0]) * (a[3] - a[1])
}

/// IoU of two xyxy boxes.
pub fn iou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU of two xyxy boxes: `IoU − (E − U)/E`.
pub fn giou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    let enclose = (a[2].max(b[2]) - a[0].min(b[0])) * (a[3].max(b[3]) - a[1].min(b[1]));
    if union <= 0.0 || enclose <= 0.0 {
        return 0.0;
    }
    inter / union - (enclose - union) / enclose
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_xyxy(a.xyxy(), b.xyxy())
}

pub fn giou(a: &BBox, b: &BBox) -> f64 {
    giou_xyxy(a.xyxy(), b.xyxy())
}
