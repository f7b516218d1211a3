//! Hard-edged shapes sampled at pixel centres.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeClass {
    Ellipse,
    Rectangle,
    Triangle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Ellipse, ShapeClass::Rectangle, ShapeClass::Triangle];

    pub fn label(self) -> &'static str {
        match self {
            ShapeClass::Ellipse => "ellipse",
            ShapeClass::Rectangle => "rectangle",
            ShapeClass::Triangle => "triangle",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape class {s:?}")))
    }
}

/// A shape placed on the canvas, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub class: ShapeClass,
    pub cx: f64,
    pub cy: f64,
    /// Half extent before the aspect stretch.
    pub radius: f64,
    /// Horizontal over vertical stretch; the area does not depend on it.
    pub aspect: f64,
    /// Rotation in radians.
    pub angle: f64,
}

impl Shape {
    /// Shape-local coordinates of a canvas point, with the aspect undone.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let a = self.aspect.sqrt();
        (u / a, v * a)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        let r = self.radius;
        match self.class {
            ShapeClass::Ellipse => u * u + v * v <= r * r,
            ShapeClass::Rectangle => u.abs() <= r && v.abs() <= r,
            ShapeClass::Triangle => {
                // Equilateral triangle inscribed in the circle of radius r,
                // apex pointing to -v.
                let half = r * 0.5;
                v <= half && (3f64.sqrt() * u.abs() - v) <= r
            }
        }
    }

    /// Row-major coverage of a `width x height` canvas; pixel `(x, y)` is
    /// inside when its centre `(x + 0.5, y + 0.5)` is.
    pub fn rasterize(&self, width: usize, height: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                out.push(self.contains(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        out
    }

    /// Continuous area of the shape.
    pub fn area(&self) -> f64 {
        let r = self.radius;
        match self.class {
            ShapeClass::Ellipse => std::f64::consts::PI * r * r,
            ShapeClass::Rectangle => 4.0 * r * r,
            ShapeClass::Triangle => 0.75 * 3f64.sqrt() * r * r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_area_tracks_continuous_area() {
        for class in ShapeClass::ALL {
            let s = Shape {
                class,
                cx: 100.0,
                cy: 100.0,
                radius: 60.0,
                aspect: 1.3,
                angle: 0.4,
            };
            let count = s.rasterize(200, 200).iter().filter(|&&b| b).count() as f64;
            assert!((count / s.area() - 1.0).abs() < 0.01, "{class}: {count} vs {}", s.area());
        }
    }

    #[test]
    fn labels_round_trip() {
        for c in ShapeClass::ALL {
            assert_eq!(c.label().parse::<ShapeClass>().unwrap(), c);
        }
        assert!("hexagon".parse::<ShapeClass>().is_err());
    }
}
