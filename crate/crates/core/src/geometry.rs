//! Small 2D polygon helpers used for scene bounds and LoS blockage.

use crate::model::Vec2;

fn cross(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn vertex(v: &[f64; 2]) -> Vec2 {
    Vec2::new(v[0], v[1])
}

pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Even-odd rule point-in-polygon test.
pub fn point_in_polygon(p: &Vec2, vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (xi, yi) = (vertices[i][0], vertices[i][1]);
        let (xj, yj) = (vertices[j][0], vertices[j][1]);
        if (yi > p[1]) != (yj > p[1]) && p[0] < (xj - xi) * (p[1] - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn point_on_polygon_boundary(p: &Vec2, vertices: &[[f64; 2]], tol: f64) -> bool {
    let n = vertices.len();
    (0..n).any(|i| {
        let a = vertex(&vertices[i]);
        let b = vertex(&vertices[(i + 1) % n]);
        let ab = b - a;
        let len2 = ab.norm_squared();
        if len2 == 0.0 {
            return (p - a).norm() <= tol;
        }
        let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
        (a + ab * t - p).norm() <= tol
    })
}

fn on_segment(a: &Vec2, b: &Vec2, p: &Vec2) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

pub fn segments_intersect(p1: &Vec2, p2: &Vec2, q1: &Vec2, q2: &Vec2) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True if the segment `a`–`b` crosses or lies inside the polygon.
pub fn segment_hits_polygon(a: &Vec2, b: &Vec2, vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    if point_in_polygon(a, vertices) || point_in_polygon(b, vertices) {
        return true;
    }
    (0..n).any(|i| segments_intersect(a, b, &vertex(&vertices[i]), &vertex(&vertices[(i + 1) % n])))
}
