use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal of the normalized unit image.
pub const UNIT_DIAGONAL: f64 = std::f64::consts::SQRT_2;

/// Axis-aligned box in normalized image coordinates: center, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xc: f64,
    pub yc: f64,
    pub h: f64,
    pub w: f64,
}

impl BBox {
    /// The whole image.
    pub const IMAGE: BBox = BBox {
        xc: 0.5,
        yc: 0.5,
        h: 1.0,
        w: 1.0,
    };

    pub fn new(xc: f64, yc: f64, h: f64, w: f64) -> Self {
        Self { xc, yc, h, w }
    }

    pub fn left(&self) -> f64 {
        self.xc - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.xc + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.yc - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.yc + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.h * self.w
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.xc, self.yc, self.h, self.w]
    }

    /// Closed containment: every edge of `other` lies on or inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        self.left() <= other.left()
            && self.right() >= other.right()
            && self.top() <= other.top()
            && self.bottom() >= other.bottom()
    }

    /// Clips the box to the unit image. Returns `None` when nothing with
    /// positive area remains. Boxes already inside (up to rounding) are
    /// returned unchanged so that save/load is lossless.
    pub fn clamp_to_unit(self) -> Option<BBox> {
        const SLACK: f64 = 1e-12;
        if !(self.h > 0.0 && self.w > 0.0) {
            return None;
        }
        let inside = self.left() >= -SLACK
            && self.top() >= -SLACK
            && self.right() <= 1.0 + SLACK
            && self.bottom() <= 1.0 + SLACK;
        if inside {
            return Some(self);
        }
        let (x0, x1) = (self.left().max(0.0), self.right().min(1.0));
        let (y0, y1) = (self.top().max(0.0), self.bottom().min(1.0));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox {
            xc: (x0 + x1) / 2.0,
            yc: (y0 + y1) / 2.0,
            h: y1 - y0,
            w: x1 - x0,
        })
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let h = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    w * h
}

fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    // areas from edge coordinates, so identical boxes give exactly 1
    let area = |x: &BBox| (x.right() - x.left()) * (x.bottom() - x.top());
    let inter = intersection_area(a, b);
    inter / (area(a) + area(b) - inter)
}

/// Intersection over union of two boxes with positive area.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for (name, bx) in [("first", a), ("second", b)] {
        if !(bx.area() > 0.0) {
            return Err(Error::Data(format!("iou: {name} box has zero area")));
        }
    }
    Ok(iou_unchecked(a, b))
}

/// Edge label of the spatial graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpatialRelation {
    Inside,
    Cover,
    Overlap,
    Class1,
    Class2,
    Class3,
    Class4,
    Class5,
    Class6,
    Class7,
    Class8,
}

impl SpatialRelation {
    pub const COUNT: usize = 11;

    pub const ALL: [SpatialRelation; 11] = [
        SpatialRelation::Inside,
        SpatialRelation::Cover,
        SpatialRelation::Overlap,
        SpatialRelation::Class1,
        SpatialRelation::Class2,
        SpatialRelation::Class3,
        SpatialRelation::Class4,
        SpatialRelation::Class5,
        SpatialRelation::Class6,
        SpatialRelation::Class7,
        SpatialRelation::Class8,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Angle class `k` in `1..=8`.
    pub fn angle_class(k: usize) -> Option<Self> {
        (1..=8).contains(&k).then(|| Self::ALL[2 + k])
    }

    /// `Some(k)` for `ClassK`, `None` for the containment/overlap labels.
    pub fn class_number(self) -> Option<usize> {
        let i = self.index();
        (i >= 3).then(|| i - 2)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpatialRelation::Inside => "inside",
            SpatialRelation::Cover => "cover",
            SpatialRelation::Overlap => "overlap",
            SpatialRelation::Class1 => "class1",
            SpatialRelation::Class2 => "class2",
            SpatialRelation::Class3 => "class3",
            SpatialRelation::Class4 => "class4",
            SpatialRelation::Class5 => "class5",
            SpatialRelation::Class6 => "class6",
            SpatialRelation::Class7 => "class7",
            SpatialRelation::Class8 => "class8",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Direction of the vector from `a`'s center to `b`'s center, in degrees
/// in `[0, 360)`, counterclockwise from the positive x-axis.
pub fn relative_angle(a: &BBox, b: &BBox) -> f64 {
    let deg = (b.yc - a.yc).atan2(b.xc - a.xc).to_degrees();
    let deg = if deg < 0.0 { deg + 360.0 } else { deg };
    if deg >= 360.0 {
        deg - 360.0
    } else {
        deg
    }
}

/// Sector `k` covers `[(k-1)*45, k*45)` degrees.
fn sector(angle_deg: f64) -> SpatialRelation {
    let k = ((angle_deg / 45.0).floor() as usize).min(7) + 1;
    SpatialRelation::angle_class(k).expect("sector in 1..=8")
}

/// Label of the directed edge `a -> b`, or `None` when the boxes are too far
/// apart to be related.
///
/// Checked in order: `a` contains `b` (inside), `b` contains `a` (cover),
/// IoU above 0.5 (overlap), then center distance over `image_diag`: at or
/// above 0.5 gives no edge, below 0.5 gives the angle sector.
pub fn relate(a: &BBox, b: &BBox, image_diag: f64) -> Option<SpatialRelation> {
    if a.contains(b) {
        return Some(SpatialRelation::Inside);
    }
    if b.contains(a) {
        return Some(SpatialRelation::Cover);
    }
    if iou_unchecked(a, b) > 0.5 {
        return Some(SpatialRelation::Overlap);
    }
    let dist = (b.xc - a.xc).hypot(b.yc - a.yc);
    let ratio = dist / image_diag;
    if ratio < 0.5 {
        Some(sector(relative_angle(a, b)))
    } else {
        None
    }
}
