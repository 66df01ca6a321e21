//! Footprint overlap tests: the ego is an oriented rectangle, obstacles are
//! axis-aligned boxes. Separating-axis test over the four face normals.

use worldgen::Obstacle;

/// True when the oriented ego rectangle overlaps the obstacle box.
pub fn obb_intersects_aabb(
    cx: f64,
    cy: f64,
    theta: f64,
    half_len: f64,
    half_wid: f64,
    ob: &Obstacle,
) -> bool {
    let (s, c) = theta.sin_cos();
    // Ego axes in world coordinates.
    let ax = [c, s];
    let ay = [-s, c];
    let d = [ob.cx - cx, ob.cy - cy];

    // Candidate separating axes: world x/y and the ego's two axes.
    let axes = [[1.0, 0.0], [0.0, 1.0], ax, ay];
    for axis in axes {
        let dist = (d[0] * axis[0] + d[1] * axis[1]).abs();
        let r_ego =
            half_len * (ax[0] * axis[0] + ax[1] * axis[1]).abs() + half_wid * (ay[0] * axis[0] + ay[1] * axis[1]).abs();
        let r_ob = ob.hx * axis[0].abs() + ob.hy * axis[1].abs();
        if dist > r_ego + r_ob {
            return false;
        }
    }
    true
}
