//! Pinhole camera plumbing: intrinsics under resize+center-crop, rigid
//! world/camera transforms, and point projection. All math is closed-form
//! and f64; rotations are validated rather than re-orthonormalized.

use serde::{Deserialize, Serialize};

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CamError {
    #[error("bad image geometry: {0}")]
    Geometry(String),
    #[error("rotation is not orthonormal with det +1 (max deviation {0:.3e})")]
    InvalidRotation(f64),
    #[error("point is behind the camera (z = {0:.6})")]
    BehindCamera(f64),
}

pub type Result<T> = std::result::Result<T, CamError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Camera-to-world rigid transform: `p_world = r * p_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl Extrinsics {
    pub fn new(r: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        let e = Extrinsics { r, t };
        e.validate()?;
        Ok(e)
    }

    /// Checks R^T R = I to 1e-9 and det(R) = +1.
    pub fn validate(&self) -> Result<()> {
        let r = &self.r;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        worst = worst.max((det - 1.0).abs());
        if worst > ORTHO_TOL {
            return Err(CamError::InvalidRotation(worst));
        }
        Ok(())
    }
}

/// Rescales and shifts intrinsics for an image that was resized from
/// `orig` to `resized` and then center-cropped to `crop` (all `(w, h)`).
pub fn adjust_intrinsics(
    k: &Intrinsics,
    orig: (u32, u32),
    resized: (u32, u32),
    crop: (u32, u32),
) -> Result<Intrinsics> {
    for (name, (w, h)) in [("orig", orig), ("resized", resized), ("crop", crop)] {
        if w == 0 || h == 0 {
            return Err(CamError::Geometry(format!("{} size {}x{} has a zero side", name, w, h)));
        }
    }
    if crop.0 > resized.0 || crop.1 > resized.1 {
        return Err(CamError::Geometry(format!(
            "crop {}x{} exceeds resized {}x{}",
            crop.0, crop.1, resized.0, resized.1
        )));
    }
    let sx = resized.0 as f64 / orig.0 as f64;
    let sy = resized.1 as f64 / orig.1 as f64;
    let dx = (resized.0 as f64 - crop.0 as f64) / 2.0;
    let dy = (resized.1 as f64 - crop.1 as f64) / 2.0;
    Ok(Intrinsics {
        fx: k.fx * sx,
        fy: k.fy * sy,
        cx: k.cx * sx - dx,
        cy: k.cy * sy - dy,
    })
}

/// World-to-camera 4x4 from camera-to-world extrinsics: `[R^T, -R^T t; 0 1]`.
pub fn world_to_camera(ext: &Extrinsics) -> [[f64; 4]; 4] {
    let r = &ext.r;
    let t = &ext.t;
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[j][i];
        }
        m[i][3] = -(r[0][i] * t[0] + r[1][i] * t[1] + r[2][i] * t[2]);
    }
    m[3][3] = 1.0;
    m
}

/// Camera-to-world 4x4 (the forward rigid transform as a matrix).
pub fn camera_to_world(ext: &Extrinsics) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = ext.r[i][j];
        }
        m[i][3] = ext.t[i];
    }
    m[3][3] = 1.0;
    m
}

pub fn mat4_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn transform_point(m: &[[f64; 4]; 4], p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    }
    out
}

/// Projects a world point to pixel coordinates through a world-to-camera
/// transform. Points at or behind the image plane are an error.
pub fn project(k: &Intrinsics, t_wc: &[[f64; 4]; 4], p_world: [f64; 3]) -> Result<[f64; 2]> {
    let pc = transform_point(t_wc, p_world);
    if pc[2] <= 0.0 {
        return Err(CamError::BehindCamera(pc[2]));
    }
    Ok([k.fx * pc[0] / pc[2] + k.cx, k.fy * pc[1] / pc[2] + k.cy])
}

/// Pixel ray direction in the camera frame (unit z before normalization).
pub fn pixel_ray(k: &Intrinsics, u: f64, v: f64) -> [f64; 3] {
    [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0]
}
