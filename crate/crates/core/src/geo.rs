//! Planar geometry in a local equirectangular frame.
//!
//! Everything the matcher needs lives here: projecting WGS84 coordinates into
//! meters around an origin, turning a compass bearing into a sight ray, and
//! intersecting that ray with building outlines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS84 semi-major axis in meters.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Largest per-axis offset from the origin accepted by [`project_local`].
pub const MAX_PROJECTION_SPAN_DEG: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::validation(format!(
                "coordinate is not finite: ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::validation(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        if !(-180.0..180.0).contains(&lon) {
            return Err(Error::validation(format!(
                "longitude {lon} outside [-180, 180)"
            )));
        }
        Ok(Self { lat, lon })
    }
}

/// Meters east (`x`) and north (`y`) of a projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPoint {
    pub x: f64,
    pub y: f64,
}

impl LocalPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn translate(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    /// Rotates clockwise about the origin, matching the compass convention.
    pub fn rotate_cw(self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Self::new(self.x * c + self.y * s, -self.x * s + self.y * c)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Projects `p` into meters around `origin` using an equirectangular
/// approximation. Only valid at city-block scale.
pub fn project_local(origin: GeoPoint, p: GeoPoint) -> Result<LocalPoint> {
    let origin = GeoPoint::new(origin.lat, origin.lon)?;
    let p = GeoPoint::new(p.lat, p.lon)?;
    let dlat = p.lat - origin.lat;
    let dlon = p.lon - origin.lon;
    if dlat.abs() >= MAX_PROJECTION_SPAN_DEG || dlon.abs() >= MAX_PROJECTION_SPAN_DEG {
        return Err(Error::validation(format!(
            "point ({}, {}) is too far from projection origin ({}, {})",
            p.lat, p.lon, origin.lat, origin.lon
        )));
    }
    let meters_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    Ok(LocalPoint {
        x: dlon * origin.lat.to_radians().cos() * meters_per_deg,
        y: dlat * meters_per_deg,
    })
}

/// Exact inverse of [`project_local`] for the same origin.
pub fn unproject_local(origin: GeoPoint, p: LocalPoint) -> GeoPoint {
    let meters_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    GeoPoint {
        lat: origin.lat + p.y / meters_per_deg,
        lon: origin.lon + p.x / (origin.lat.to_radians().cos() * meters_per_deg),
    }
}

/// A half-line from a camera position along its compass heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SightRay {
    origin: LocalPoint,
    /// Unit vector, (east, north).
    direction: (f64, f64),
}

impl SightRay {
    pub fn origin(&self) -> LocalPoint {
        self.origin
    }

    pub fn direction(&self) -> (f64, f64) {
        self.direction
    }

    pub fn point_at(&self, t: f64) -> LocalPoint {
        LocalPoint::new(
            self.origin.x + t * self.direction.0,
            self.origin.y + t * self.direction.1,
        )
    }
}

/// Builds the sight ray for a camera at `camera` facing `bearing` degrees
/// clockwise from north.
pub fn ray_from_bearing(camera: LocalPoint, bearing: f64) -> Result<SightRay> {
    if !bearing.is_finite() || !(0.0..360.0).contains(&bearing) {
        return Err(Error::validation(format!(
            "bearing {bearing} outside [0, 360)"
        )));
    }
    if !camera.x.is_finite() || !camera.y.is_finite() {
        return Err(Error::validation("camera position is not finite"));
    }
    let (s, c) = bearing.to_radians().sin_cos();
    // sin/cos of the same angle can be off by an ulp from unit length.
    let norm = s.hypot(c);
    Ok(SightRay {
        origin: camera,
        direction: (s / norm, c / norm),
    })
}

/// Closed simple outline in the local frame. The closing edge is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon2D {
    vertices: Vec<LocalPoint>,
}

impl Polygon2D {
    pub fn new(vertices: Vec<LocalPoint>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::validation(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices
            .iter()
            .any(|v| !v.x.is_finite() || !v.y.is_finite())
        {
            return Err(Error::validation("polygon vertex is not finite"));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::validation(format!(
                    "polygon has repeated consecutive vertex at index {i}"
                )));
            }
        }
        let poly = Self { vertices };
        if poly.signed_area() == 0.0 {
            return Err(Error::validation("polygon has zero area"));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle from two opposite corners.
    pub fn rect(min: LocalPoint, max: LocalPoint) -> Result<Self> {
        Self::new(vec![
            LocalPoint::new(min.x, min.y),
            LocalPoint::new(max.x, min.y),
            LocalPoint::new(max.x, max.y),
            LocalPoint::new(min.x, max.y),
        ])
    }

    pub fn vertices(&self) -> &[LocalPoint] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (LocalPoint, LocalPoint)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area; positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        self.edges()
            .map(|(a, b)| a.x * b.y - b.x * a.y)
            .sum::<f64>()
            / 2.0
    }

    pub fn map_points(&self, f: impl Fn(LocalPoint) -> LocalPoint) -> Self {
        Self {
            vertices: self.vertices.iter().copied().map(f).collect(),
        }
    }
}

fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

fn on_segment(p: LocalPoint, a: LocalPoint, b: LocalPoint) -> bool {
    let ab = (b.x - a.x, b.y - a.y);
    let ap = (p.x - a.x, p.y - a.y);
    let c = cross(ab.0, ab.1, ap.0, ap.1);
    let len = ab.0.hypot(ab.1);
    // Collinearity in meters, scaled by edge length.
    if c.abs() > 1e-12 * len.max(1.0) {
        return false;
    }
    p.x >= a.x.min(b.x) - 1e-12
        && p.x <= a.x.max(b.x) + 1e-12
        && p.y >= a.y.min(b.y) - 1e-12
        && p.y <= a.y.max(b.y) + 1e-12
}

/// Even-odd containment test. Points on the boundary count as inside.
pub fn point_in_polygon(p: LocalPoint, poly: &Polygon2D) -> bool {
    let mut inside = false;
    for (a, b) in poly.edges() {
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Distance along the ray to the first edge it meets. Zero when the camera
/// stands inside the outline, `None` when the ray misses it entirely.
pub fn ray_polygon_distance(ray: &SightRay, poly: &Polygon2D) -> Option<f64> {
    if point_in_polygon(ray.origin, poly) {
        return Some(0.0);
    }
    let o = ray.origin;
    let (dx, dy) = ray.direction;
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t >= 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    for (a, b) in poly.edges() {
        let (ex, ey) = (b.x - a.x, b.y - a.y);
        let (wx, wy) = (a.x - o.x, a.y - o.y);
        let denom = cross(dx, dy, ex, ey);
        if denom.abs() <= 1e-15 * ex.hypot(ey) {
            // Parallel. Only a collinear edge can be hit, at its nearer end.
            if cross(wx, wy, dx, dy).abs() <= 1e-12 * ex.hypot(ey).max(1.0) {
                let ta = wx * dx + wy * dy;
                let tb = (b.x - o.x) * dx + (b.y - o.y) * dy;
                if ta.max(tb) >= 0.0 {
                    consider(ta.min(tb).max(0.0));
                }
            }
            continue;
        }
        let t = cross(wx, wy, ex, ey) / denom;
        let u = cross(wx, wy, dx, dy) / denom;
        if (-1e-12..=1.0 + 1e-12).contains(&u) {
            consider(t);
        }
    }
    best
}
