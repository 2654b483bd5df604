//! Rotated-box overlap in the camera frame, plus great-circle distance.
//!
//! Boxes follow the KITTI camera convention: x right, y **down**, z forward.
//! [`Box3D`] stores the bottom-face center, so the vertical extent is
//! `[y - h, y]`. The bird's-eye-view (BEV) footprint is a `w` by `l`
//! rectangle in the (x, z) plane: `l` runs along the heading axis, `w`
//! across it, and `yaw` rotates the footprint counter-clockwise when the
//! (x, z) plane is drawn with x right and z up.
//!
//! Overlap is computed exactly: footprints are clipped against each other
//! with Sutherland-Hodgman and the intersection area comes from the
//! shoelace formula. No axis-aligned approximation is involved anywhere.

use serde::{Deserialize, Serialize};

/// Guard for degenerate geometry: polygon edges shorter than this, and IoU
/// denominators smaller than this, are treated as zero.
pub const GEOM_EPS: f64 = 1e-12;

/// Mean Earth radius in meters, used by [`haversine_m`].
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Oriented 3D box, camera frame, meters and radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    /// Bottom-face center. `y` points down, so the box occupies `[y - h, y]`.
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Height (vertical extent).
    pub h: f64,
    /// Width (footprint extent across the heading axis).
    pub w: f64,
    /// Length (footprint extent along the heading axis).
    pub l: f64,
    /// Heading around the vertical axis, radians in `[-pi, pi]`.
    pub yaw: f64,
}

impl Box3D {
    pub fn new(x: f64, y: f64, z: f64, h: f64, w: f64, l: f64, yaw: f64) -> Self {
        Box3D { x, y, z, h, w, l, yaw }
    }

    /// Footprint corners in the (x, z) plane, counter-clockwise.
    ///
    /// At `yaw = 0` the box extends `l/2` along x and `w/2` along z, so a
    /// `w = 2, l = 4` box centered at the origin has corners
    /// `(±2, ±1)`; at `yaw = pi/2` the extents swap to `(±1, ±2)`.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        // Object-frame corners, counter-clockwise in (x, z).
        let local = [
            [self.l / 2.0, self.w / 2.0],
            [-self.l / 2.0, self.w / 2.0],
            [-self.l / 2.0, -self.w / 2.0],
            [self.l / 2.0, -self.w / 2.0],
        ];
        // Rotation about the (downward) y axis: x' = c*x + s*z, z' = -s*x + c*z.
        local.map(|[lx, lz]| [self.x + c * lx + s * lz, self.z - s * lx + c * lz])
    }

    /// Footprint polygon, counter-clockwise.
    pub fn bev_polygon(&self) -> ConvexPolygon {
        ConvexPolygon { vertices: self.bev_corners().to_vec() }
    }

    /// Footprint area `w * l`.
    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }
}

/// Convex polygon in the (x, z) plane, vertices counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    pub vertices: Vec<[f64; 2]>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        ConvexPolygon { vertices }
    }

    /// Shoelace area. Non-negative regardless of winding; degenerate
    /// polygons (fewer than three vertices, or collinear) return 0.
    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        if v.len() < 3 {
            return 0.0;
        }
        let mut twice = 0.0;
        for i in 0..v.len() {
            let [x0, z0] = v[i];
            let [x1, z1] = v[(i + 1) % v.len()];
            twice += x0 * z1 - x1 * z0;
        }
        (twice / 2.0).abs()
    }
}

/// Clips `poly` against the half-plane on the left of the directed edge
/// `e0 -> e1`. Points within `GEOM_EPS` of the edge count as inside, which
/// keeps shared-edge footprints from flickering between empty and degenerate.
fn clip_halfplane(poly: &[[f64; 2]], e0: [f64; 2], e1: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| (e1[0] - e0[0]) * (p[1] - e0[1]) - (e1[1] - e0[1]) * (p[0] - e0[0]);
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let s_cur = side(cur);
        let s_next = side(next);
        if s_cur >= -GEOM_EPS {
            out.push(cur);
        }
        // Edge crosses the clip line: keep the intersection point.
        if (s_cur > GEOM_EPS && s_next < -GEOM_EPS) || (s_cur < -GEOM_EPS && s_next > GEOM_EPS) {
            let t = s_cur / (s_cur - s_next);
            out.push([cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])]);
        }
    }
    out
}

/// Area of the intersection of two convex polygons.
///
/// Symmetric in its arguments and never larger than either input area
/// (up to `GEOM_EPS` slack from clipping arithmetic).
pub fn polygon_intersection_area(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    if a.vertices.len() < 3 || b.vertices.len() < 3 {
        return 0.0;
    }
    let mut poly = a.vertices.clone();
    for i in 0..b.vertices.len() {
        if poly.is_empty() {
            return 0.0;
        }
        let e0 = b.vertices[i];
        let e1 = b.vertices[(i + 1) % b.vertices.len()];
        poly = clip_halfplane(&poly, e0, e1);
    }
    ConvexPolygon { vertices: poly }.area()
}

/// Bird's-eye-view IoU of two boxes. Unions below `GEOM_EPS` yield 0.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let area_a = a.bev_area();
    let area_b = b.bev_area();
    // Clipping noise can push the intersection a hair past the smaller box.
    let inter = polygon_intersection_area(&a.bev_polygon(), &b.bev_polygon())
        .min(area_a)
        .min(area_b);
    let union = area_a + area_b - inter;
    if union < GEOM_EPS {
        0.0
    } else {
        inter / union
    }
}

/// 3D IoU: BEV intersection area times overlap of the vertical intervals
/// `[y - h, y]`, over the volume union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter_bev = polygon_intersection_area(&a.bev_polygon(), &b.bev_polygon())
        .min(a.bev_area())
        .min(b.bev_area());
    let y_overlap = (a.y.min(b.y) - (a.y - a.h).max(b.y - b.h)).max(0.0);
    let inter = inter_bev * y_overlap;
    let union = a.volume() + b.volume() - inter;
    if union < GEOM_EPS {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Axis-aligned 2D IoU of `[left, top, right, bottom]` image boxes.
pub fn iou_2d(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area_a = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    let area_b = (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let union = area_a + area_b - inter;
    if union < GEOM_EPS {
        0.0
    } else {
        inter / union
    }
}

/// Great-circle distance in meters between two WGS-ish latitude/longitude
/// points on a sphere of radius [`EARTH_RADIUS_M`].
///
/// ```
/// let d = conf3d::box_geometry::haversine_m(0.0, 0.0, 0.0, 1.0);
/// assert!((d - 111_195.0).abs() < 1.0); // one degree of longitude at the equator
/// ```
pub fn haversine_m(lat_a: f64, lon_a: f64, lat_b: f64, lon_b: f64) -> f64 {
    let phi_a = lat_a.to_radians();
    let phi_b = lat_b.to_radians();
    let d_phi = (lat_b - lat_a).to_radians();
    let d_lambda = (lon_b - lon_a).to_radians();
    let s = (d_phi / 2.0).sin().powi(2)
        + phi_a.cos() * phi_b.cos() * (d_lambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.sqrt().min(1.0).asin()
}
