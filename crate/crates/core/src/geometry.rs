//! Pinhole camera geometry: intrinsics, Euler-angle rotations, the
//! camera/world coordinate transforms, projection, and the token patch
//! grid. Plain f64 math over immutable values; the differentiable twin of
//! the camera path lives in [`crate::layer`] and is tested against this
//! module.
//!
//! Conventions pinned here and relied on everywhere else:
//! - rotations compose as R = Rz(yaw) * Ry(pitch) * Rx(roll);
//! - a world point maps into the camera frame as R p - t, and back out as
//!   R^T p + R^T t (so the camera center sits at R^T t);
//! - the image plane is normalized: the longer image side spans [-1, 1]
//!   and the image center is the origin.

use crate::error::{Error, Result};

pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    /// Focal length in normalized-image units.
    pub c: f64,
    pub u0: f64,
    pub v0: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics { c: 1.0, u0: 0.0, v0: 0.0 }
    }
}

impl CameraIntrinsics {
    pub fn with_focal(c: f64) -> Self {
        CameraIntrinsics { c, u0: 0.0, v0: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        EulerAngles { yaw, pitch, roll }
    }
}

pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraExtrinsics {
    pub r: Mat3,
    pub t: [f64; 3],
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        CameraExtrinsics {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    pub fn new(r: Mat3, t: [f64; 3]) -> Result<Self> {
        let ext = CameraExtrinsics { r, t };
        ext.validate()?;
        Ok(ext)
    }

    /// R must be orthonormal with determinant one, both within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let rtr = mat_mul(&transpose(&self.r), &self.r);
        let mut frob = 0.0;
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                frob += (v - target) * (v - target);
            }
        }
        if frob.sqrt() > ROTATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "R is not orthonormal (|R^T R - I| = {:.3e})",
                frob.sqrt()
            )));
        }
        let d = det3(&self.r);
        if (d - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "det(R) = {d} is not 1"
            )));
        }
        Ok(())
    }

    /// Camera position in world coordinates (the point mapping to the
    /// camera-frame origin): R^T t.
    pub fn center(&self) -> Point3 {
        let rt = transpose(&self.r);
        let t = mat_vec(&rt, &self.t);
        Point3::new(t[0], t[1], t[2])
    }

    /// Unit view direction (camera-frame +z) expressed in world frame:
    /// the third row of R.
    pub fn looking_at(&self) -> [f64; 3] {
        self.r[2]
    }
}

/// Intrinsic Z-Y-X composition: R = Rz(yaw) * Ry(pitch) * Rx(roll).
pub fn euler_to_rotation(e: EulerAngles) -> Mat3 {
    let (sy, cy) = e.yaw.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sr, cr) = e.roll.sin_cos();
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    mat_mul(&mat_mul(&rz, &ry), &rx)
}

/// Lift an image-plane location and depth to a camera-frame point:
/// (u z / c, v z / c, z) with z = d. Raw depth passes through, sign and all.
pub fn uvd_to_camera(u: f64, v: f64, d: f64, k: &CameraIntrinsics) -> Point3 {
    let z = d;
    Point3::new(u * z / k.c, v * z / k.c, z)
}

/// Camera frame to world frame: R^T p + R^T t.
pub fn camera_to_world(p: Point3, ext: &CameraExtrinsics) -> Point3 {
    let rt = transpose(&ext.r);
    let rp = mat_vec(&rt, &p.to_array());
    let rt_t = mat_vec(&rt, &ext.t);
    Point3::new(rp[0] + rt_t[0], rp[1] + rt_t[1], rp[2] + rt_t[2])
}

/// World frame to camera frame, the exact inverse of [`camera_to_world`]:
/// R p - t.
pub fn world_to_camera(p: Point3, ext: &CameraExtrinsics) -> Point3 {
    let rp = mat_vec(&ext.r, &p.to_array());
    Point3::new(rp[0] - ext.t[0], rp[1] - ext.t[1], rp[2] - ext.t[2])
}

/// Perspective projection of a camera-frame point with z > 0.
pub fn project(p_cam: Point3, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if p_cam.z <= 0.0 {
        return Err(Error::BehindCamera { z: p_cam.z });
    }
    Ok((k.c * p_cam.x / p_cam.z + k.u0, k.c * p_cam.y / p_cam.z + k.v0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    /// Per-token image-plane coordinates in row-major token order.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Token-center coordinates of a rows x cols grid. The longer side spans
/// [-1, 1]; the shorter side keeps the same spacing (aspect preserved).
/// u varies along columns, v along rows; tokens are row-major.
pub fn make_patch_grid(rows: usize, cols: usize) -> Result<PatchGrid> {
    make_patch_grid_with(rows, cols, CameraIntrinsics::default())
}

pub fn make_patch_grid_with(
    rows: usize,
    cols: usize,
    intrinsics: CameraIntrinsics,
) -> Result<PatchGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "patch grid extents must be positive, got {rows}x{cols}"
        )));
    }
    let step = 2.0 / rows.max(cols) as f64;
    let mut u = Vec::with_capacity(rows * cols);
    let mut v = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let vr = (r as f64 - (rows as f64 - 1.0) / 2.0) * step;
        for c in 0..cols {
            u.push((c as f64 - (cols as f64 - 1.0) / 2.0) * step);
            v.push(vr);
        }
    }
    Ok(PatchGrid { rows, cols, u, v, intrinsics })
}

/// Rodrigues rotation about a unit axis.
pub fn axis_angle_rotation(axis: [f64; 3], angle: f64) -> Mat3 {
    let (x, y, z) = (axis[0], axis[1], axis[2]);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

// ── small fixed-size matrix helpers ─────────────────────────────────

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_extrinsics(rng: &mut Rng) -> CameraExtrinsics {
        let e = EulerAngles::new(
            rng.uniform_in(-PI, PI),
            rng.uniform_in(-PI, PI),
            rng.uniform_in(-PI, PI),
        );
        CameraExtrinsics {
            r: euler_to_rotation(e),
            t: [
                rng.uniform_in(-5.0, 5.0),
                rng.uniform_in(-5.0, 5.0),
                rng.uniform_in(-5.0, 5.0),
            ],
        }
    }

    #[test]
    fn zero_angles_give_identity() {
        let r = euler_to_rotation(EulerAngles::default());
        assert_eq!(r, CameraExtrinsics::identity().r);
    }

    #[test]
    fn quarter_yaw_rotates_x_to_y() {
        let r = euler_to_rotation(EulerAngles::new(FRAC_PI_2, 0.0, 0.0));
        let v = mat_vec(&r, &[1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15);
        assert!((v[1] - 1.0).abs() < 1e-15);
        assert!((v[2]).abs() < 1e-15);
    }

    #[test]
    fn random_angles_land_in_so3() {
        let mut rng = Rng::new(2024);
        for _ in 0..200 {
            let ext = random_extrinsics(&mut rng);
            ext.validate().unwrap();
        }
    }

    #[test]
    fn uvd_examples() {
        let k = CameraIntrinsics::default();
        let p = uvd_to_camera(0.0, 0.0, 5.0, &k);
        assert_eq!(p, Point3::new(0.0, 0.0, 5.0));

        let p = uvd_to_camera(0.5, -0.5, 2.0, &k);
        assert_eq!(p, Point3::new(1.0, -1.0, 2.0));

        let k2 = CameraIntrinsics::with_focal(2.0);
        let p = uvd_to_camera(0.5, -0.5, 2.0, &k2);
        assert_eq!(p, Point3::new(0.5, -0.5, 2.0));
    }

    #[test]
    fn world_map_examples() {
        let ident = CameraExtrinsics::identity();
        let p = Point3::new(1.5, -2.0, 3.0);
        assert_eq!(camera_to_world(p, &ident), p);
        assert_eq!(world_to_camera(p, &ident), p);

        let shift = CameraExtrinsics {
            r: ident.r,
            t: [1.0, 0.0, 0.0],
        };
        assert_eq!(
            camera_to_world(Point3::new(0.0, 0.0, 0.0), &shift),
            Point3::new(1.0, 0.0, 0.0)
        );

        let half_turn = CameraExtrinsics {
            r: euler_to_rotation(EulerAngles::new(PI, 0.0, 0.0)),
            t: [0.0; 3],
        };
        let q = world_to_camera(Point3::new(1.0, 0.0, 0.0), &half_turn);
        assert!((q.x + 1.0).abs() < 1e-12 && q.y.abs() < 1e-12 && q.z.abs() < 1e-12);
    }

    #[test]
    fn round_trip_world_camera() {
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let ext = random_extrinsics(&mut rng);
            let p = Point3::new(
                rng.uniform_in(-10.0, 10.0),
                rng.uniform_in(-10.0, 10.0),
                rng.uniform_in(-10.0, 10.0),
            );
            let q = world_to_camera(camera_to_world(p, &ext), &ext);
            assert!((q.x - p.x).abs() < 1e-9);
            assert!((q.y - p.y).abs() < 1e-9);
            assert!((q.z - p.z).abs() < 1e-9);
        }
    }

    #[test]
    fn project_examples_and_round_trip() {
        let k = CameraIntrinsics::default();
        assert_eq!(project(Point3::new(0.0, 0.0, 5.0), &k).unwrap(), (0.0, 0.0));
        assert_eq!(
            project(Point3::new(1.0, -1.0, 2.0), &k).unwrap(),
            (0.5, -0.5)
        );
        assert!(project(Point3::new(0.0, 0.0, -1.0), &k).is_err());
        assert!(project(Point3::new(0.0, 0.0, 0.0), &k).is_err());

        let mut rng = Rng::new(9);
        for _ in 0..1000 {
            let (u, v) = (rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0));
            let d = rng.uniform_in(0.01, 50.0);
            let c = rng.uniform_in(0.1, 10.0);
            let k = CameraIntrinsics::with_focal(c);
            let (u2, v2) = project(uvd_to_camera(u, v, d, &k), &k).unwrap();
            assert!((u2 - u).abs() < 1e-12 && (v2 - v).abs() < 1e-12);
        }
    }

    #[test]
    fn patch_grid_examples() {
        let g = make_patch_grid(1, 1).unwrap();
        assert_eq!((g.u[0], g.v[0]), (0.0, 0.0));

        let g = make_patch_grid(2, 2).unwrap();
        assert_eq!(g.u, vec![-0.5, 0.5, -0.5, 0.5]);
        assert_eq!(g.v, vec![-0.5, -0.5, 0.5, 0.5]);

        let g = make_patch_grid(14, 14).unwrap();
        assert_eq!(g.len(), 196);
        let step = 2.0 / 14.0;
        for r in 0..14 {
            for c in 0..14 {
                let i = r * 14 + c;
                assert!((g.u[i] - (c as f64 - 6.5) * step).abs() < 1e-15);
                assert!((g.v[i] - (r as f64 - 6.5) * step).abs() < 1e-15);
                // symmetric about zero
                let j = (13 - r) * 14 + (13 - c);
                assert!((g.u[i] + g.u[j]).abs() < 1e-15);
                assert!((g.v[i] + g.v[j]).abs() < 1e-15);
            }
        }

        assert!(make_patch_grid(0, 3).is_err());
    }

    #[test]
    fn rectangular_grid_preserves_aspect() {
        let g = make_patch_grid(2, 4).unwrap();
        // longer side (cols) spans [-1,1]; rows use the same spacing
        assert_eq!(g.u[0..4], [-0.75, -0.25, 0.25, 0.75]);
        assert_eq!(g.v[0], -0.25);
        assert_eq!(g.v[4], 0.25);
    }

    #[test]
    fn center_and_looking_at() {
        let mut rng = Rng::new(13);
        let ext = random_extrinsics(&mut rng);
        let c = ext.center();
        // camera center maps to the origin of the camera frame
        let o = world_to_camera(c, &ext);
        assert!(o.x.abs() < 1e-12 && o.y.abs() < 1e-12 && o.z.abs() < 1e-12);
        let la = ext.looking_at();
        let norm = (la[0] * la[0] + la[1] * la[1] + la[2] * la[2]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
