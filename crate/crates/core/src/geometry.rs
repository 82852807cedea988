//! Pinhole camera model, rigid transforms, and pixel/ray/point conversions.
//!
//! Conventions, asserted by the round-trip tests:
//! - camera-from-world poses, right-handed, +z forward;
//! - depth is view-space z, not ray length;
//! - [`PixelCoord`] is principal-point-centered, while image-space functions
//!   use standard pixel coordinates with an explicit `(cx, cy)`.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Default near-plane used by projection when the caller does not override it.
pub const DEFAULT_Z_NEAR: f64 = 0.01;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::Domain(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if width < 1 || height < 1 {
            return Err(Error::Domain(format!("image size must be at least 1x1, got {width}x{height}")));
        }
        if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
            return Err(Error::Domain(format!(
                "principal point ({cx}, {cy}) outside image bounds {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Intrinsics with a single focal length and the principal point at the
    /// image center.
    pub fn centered(f: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    /// Principal-point-centered coordinate of the center of pixel `(ix, iy)`.
    pub fn pixel_center(&self, ix: isize, iy: isize) -> PixelCoord {
        PixelCoord { u_x: ix as f64 + 0.5 - self.cx, u_y: iy as f64 + 0.5 - self.cy }
    }
}

/// Pixel coordinate relative to the principal point; homogeneous 1 implied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u_x: f64,
    pub u_y: f64,
}

impl PixelCoord {
    pub fn new(u_x: f64, u_y: f64) -> Self {
        Self { u_x, u_y }
    }

    /// Convert a standard image-space position to a centered coordinate.
    pub fn from_image(cam: &CameraIntrinsics, px: f64, py: f64) -> Self {
        Self { u_x: px - cam.cx, u_y: py - cam.cy }
    }
}

/// Normalize a quaternion stored as `[w, x, y, z]`.
pub fn quat_normalize(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Domain(format!("cannot normalize quaternion with norm {n}")));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]` (active rotation).
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion `[w, x, y, z]` of a rotation matrix (Shepperd's method).
pub fn quat_from_matrix(r: &Matrix3<f64>) -> [f64; 4] {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    quat_normalize(q).expect("rotation matrix yields non-zero quaternion")
}

/// Rigid camera-from-world transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: [f64; 4],
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: [1.0, 0.0, 0.0, 0.0], translation: Vector3::zeros() }
    }

    /// Build from a quaternion `[w, x, y, z]` (normalized here) and a
    /// translation in meters.
    pub fn new(rotation: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        Ok(Self { rotation: quat_normalize(rotation)?, translation })
    }

    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: quat_from_matrix(rotation), translation }
    }

    pub fn rotation_quat(&self) -> [f64; 4] {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(self.rotation)
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation_matrix();
        Pose::from_matrix(&r.transpose(), -(r.transpose() * self.translation))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let ra = self.rotation_matrix();
        let rb = other.rotation_matrix();
        Pose::from_matrix(&(ra * rb), ra * other.translation + self.translation)
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }
}

/// Back-project a centered pixel coordinate at depth `d` (view-space z) into
/// the camera frame: `(u_x d / fx, u_y d / fy, d)`.
pub fn unproject_pixel(cam: &CameraIntrinsics, u: PixelCoord, d: f64) -> Result<Vector3<f64>> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("depth must be positive, got {d}")));
    }
    Ok(Vector3::new(u.u_x * d / cam.fx, u.u_y * d / cam.fy, d))
}

/// Project a world point into standard image coordinates together with its
/// view-space depth. Returns `None` when the point is at or behind the near
/// plane ("behind camera" is a normal outcome, not an error).
pub fn project_point(
    cam: &CameraIntrinsics,
    pose: &Pose,
    x_world: &Vector3<f64>,
    z_near: f64,
) -> Option<(Vector2<f64>, f64)> {
    let v = pose.transform(x_world);
    if v.z <= z_near {
        return None;
    }
    Some((Vector2::new(cam.fx * v.x / v.z + cam.cx, cam.fy * v.y / v.z + cam.cy), v.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pose(rng: &mut StdRng) -> Pose {
        let q = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let t = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        Pose::new(q, t).unwrap()
    }

    #[test]
    fn unproject_principal_ray() {
        let cam = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let p = unproject_pixel(&cam, PixelCoord::new(0.0, 0.0), 5.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn unproject_direct_evaluation() {
        let cam = CameraIntrinsics::new(2.0, 2.0, 0.0, 0.0, 8, 8).unwrap();
        let p = unproject_pixel(&cam, PixelCoord::new(2.0, 3.0), 4.0).unwrap();
        assert_eq!(p, Vector3::new(4.0, 6.0, 4.0));
        // z component equals d exactly
        assert_eq!(p.z, 4.0);
    }

    #[test]
    fn unproject_is_linear_in_depth() {
        let cam = CameraIntrinsics::new(123.0, 77.0, 3.5, 2.5, 16, 16).unwrap();
        let u = PixelCoord::new(-4.2, 9.1);
        let base = unproject_pixel(&cam, u, 1.0).unwrap();
        for d in [0.5, 2.0, 7.25] {
            let p = unproject_pixel(&cam, u, d).unwrap();
            assert_relative_eq!(p, base * d, max_relative = 1e-12);
        }
    }

    #[test]
    fn unproject_rejects_nonpositive_depth() {
        let cam = CameraIntrinsics::centered(1.0, 4, 4).unwrap();
        assert!(unproject_pixel(&cam, PixelCoord::new(0.0, 0.0), 0.0).is_err());
        assert!(unproject_pixel(&cam, PixelCoord::new(0.0, 0.0), -1.0).is_err());
    }

    #[test]
    fn project_unproject_roundtrip_identity_pose() {
        let cam = CameraIntrinsics::new(100.0, 120.0, 64.0, 48.0, 128, 96).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let u = PixelCoord::new(rng.random_range(-60.0..60.0), rng.random_range(-45.0..45.0));
            let d = rng.random_range(0.1..50.0);
            let p = unproject_pixel(&cam, u, d).unwrap();
            let (px, depth) = project_point(&cam, &Pose::identity(), &p, DEFAULT_Z_NEAR).unwrap();
            assert_relative_eq!(px.x - cam.cx, u.u_x, max_relative = 1e-9, epsilon = 1e-12);
            assert_relative_eq!(px.y - cam.cy, u.u_y, max_relative = 1e-9, epsilon = 1e-12);
            assert_relative_eq!(depth, d, max_relative = 1e-9);
        }
    }

    #[test]
    fn project_on_axis_point() {
        let cam = CameraIntrinsics::new(100.0, 100.0, 128.0, 192.0, 256, 384).unwrap();
        let (px, depth) =
            project_point(&cam, &Pose::identity(), &Vector3::new(0.0, 0.0, 2.0), DEFAULT_Z_NEAR)
                .unwrap();
        assert_eq!(px, Vector2::new(128.0, 192.0));
        assert_eq!(depth, 2.0);
    }

    #[test]
    fn project_behind_camera_signals_none() {
        let cam = CameraIntrinsics::centered(100.0, 64, 64).unwrap();
        let p = Vector3::new(0.0, 0.0, 0.0);
        assert!(project_point(&cam, &Pose::identity(), &p, DEFAULT_Z_NEAR).is_none());
        let p = Vector3::new(0.3, -0.1, -2.0);
        assert!(project_point(&cam, &Pose::identity(), &p, DEFAULT_Z_NEAR).is_none());
    }

    #[test]
    fn pose_compose_inverse_is_identity() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let ident = pose.compose(&pose.inverse());
            let r = ident.rotation_matrix();
            assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-9);
            assert_relative_eq!(ident.translation(), Vector3::zeros(), epsilon = 1e-9);
        }
    }

    #[test]
    fn pose_roundtrips_points() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let p = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let back = pose.inverse().transform(&pose.transform(&p));
            assert_relative_eq!(back, p, epsilon = 1e-9);
        }
    }

    #[test]
    fn quat_matrix_roundtrip() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let q = pose.rotation_quat();
            let q2 = quat_from_matrix(&quat_to_matrix(q));
            // q and -q encode the same rotation
            let dot: f64 = q.iter().zip(&q2).map(|(a, b)| a * b).sum();
            assert!(dot.abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 2.0, 0, 4).is_err());
    }
}
