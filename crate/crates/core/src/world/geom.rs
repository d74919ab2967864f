//! Planar geometry for footprint/sweep contact tests.

/// Squared distance from point `p` to segment `a..b`.
fn point_segment_dist_sq(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len_sq = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len_sq == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len_sq).clamp(0.0, 1.0)
    };
    let c = [a[0] + t * ab[0], a[1] + t * ab[1]];
    let d = [p[0] - c[0], p[1] - c[1]];
    d[0] * d[0] + d[1] * d[1]
}

/// Whether a disc of `radius` centered at `center` touches segment `a..b`.
pub fn disc_intersects_segment(center: [f64; 2], radius: f64, a: [f64; 2], b: [f64; 2]) -> bool {
    point_segment_dist_sq(center, a, b) <= radius * radius
}

/// Whether an axis-aligned rectangle (after rotating the segment into the
/// box frame) with half-extents `half` touches segment `a..b`. `center` and
/// `theta` give the rectangle's pose.
pub fn rect_intersects_segment(
    center: [f64; 2],
    half: [f64; 2],
    theta: f64,
    a: [f64; 2],
    b: [f64; 2],
) -> bool {
    // Express the segment in the rectangle's local frame.
    let (s, c) = theta.sin_cos();
    let to_local = |p: [f64; 2]| {
        let dx = p[0] - center[0];
        let dy = p[1] - center[1];
        [c * dx + s * dy, -s * dx + c * dy]
    };
    let la = to_local(a);
    let lb = to_local(b);
    segment_intersects_aabb(la, lb, half)
}

fn segment_intersects_aabb(a: [f64; 2], b: [f64; 2], half: [f64; 2]) -> bool {
    // Slab test on the segment parameterized as a + t(b-a), t in [0,1].
    let d = [b[0] - a[0], b[1] - a[1]];
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for axis in 0..2 {
        if d[axis].abs() < 1e-15 {
            if a[axis] < -half[axis] || a[axis] > half[axis] {
                return false;
            }
        } else {
            let inv = 1.0 / d[axis];
            let mut near = (-half[axis] - a[axis]) * inv;
            let mut far = (half[axis] - a[axis]) * inv;
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}
