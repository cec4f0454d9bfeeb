//! SE(3) rigid-body transforms, exp/log maps, and the pinhole projection model.
//!
//! Rotations are stored as orthonormal matrices; twists appear only at the
//! optimizer boundaries. All closed forms fall back to Taylor expansions near
//! the identity, following the usual Lie-group recipes (Barfoot, "State
//! Estimation for Robotics"; Eade, "Lie groups for 2D and 3D transformations").

use nalgebra::{Matrix2x3, Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use thiserror::Error;

/// Minimum depth (meters) in front of the camera for a projection to be valid.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Rotation angles within this distance of pi make the log map ambiguous.
pub const PI_GUARD: f64 = 1e-6;

/// Below this angle the closed-form coefficients switch to Taylor expansions.
const TAYLOR_SWITCH: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// The rotation angle is within `PI_GUARD` of pi, where the axis sign is
    /// ambiguous. Callers must perturb the pose before taking the log.
    #[error("rotation angle within {PI_GUARD} of pi; log map is ambiguous")]
    AngleAtPi,
    /// The point is at or behind the camera plane and cannot be projected.
    #[error("point depth {0} m is behind the camera (<= {DEPTH_EPSILON} m)")]
    BehindCamera(f64),
}

/// Rigid transform in SE(3): `transform(p) = R p + t`.
///
/// The same type serves as a pose (frame-to-world) and as a relative
/// transform; composition is plain matrix composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Element of se(3): rotational part in radians, translational part in meters.
///
/// The flattened 6-vector ordering is `[rot; trans]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist6 {
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        Self { fx, fy, cx, cy }
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    if theta2 < TAYLOR_SWITCH * TAYLOR_SWITCH {
        // sin(t)/t = 1 - t^2/6, (1-cos t)/t^2 = 1/2 - t^2/24
        Matrix3::identity() + (1.0 - theta2 / 6.0) * w + (0.5 - theta2 / 24.0) * (w * w)
    } else {
        let theta = theta2.sqrt();
        Matrix3::identity()
            + (theta.sin() / theta) * w
            + ((1.0 - theta.cos()) / theta2) * (w * w)
    }
}

fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if (std::f64::consts::PI - theta).abs() < PI_GUARD {
        return Err(GeometryError::AngleAtPi);
    }
    let vee = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-8 {
        // vee(R - R^T)/2 is already first-order exact here.
        Ok(0.5 * vee)
    } else {
        Ok((theta / (2.0 * theta.sin())) * vee)
    }
}

/// Left Jacobian of SO(3): couples rotation into translation in the SE(3) exp.
fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    if theta2 < TAYLOR_SWITCH * TAYLOR_SWITCH {
        Matrix3::identity() + (0.5 - theta2 / 24.0) * w + (1.0 / 6.0 - theta2 / 120.0) * (w * w)
    } else {
        let theta = theta2.sqrt();
        Matrix3::identity()
            + ((1.0 - theta.cos()) / theta2) * w
            + ((theta - theta.sin()) / (theta2 * theta)) * (w * w)
    }
}

fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    if theta2 < TAYLOR_SWITCH * TAYLOR_SWITCH {
        Matrix3::identity() - 0.5 * w + (1.0 / 12.0 + theta2 / 720.0) * (w * w)
    } else {
        let theta = theta2.sqrt();
        let coeff = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
        Matrix3::identity() - 0.5 * w + coeff * (w * w)
    }
}

impl Twist6 {
    pub fn zero() -> Self {
        Self { rot: Vector3::zeros(), trans: Vector3::zeros() }
    }

    pub fn new(rot: Vector3<f64>, trans: Vector3<f64>) -> Self {
        Self { rot, trans }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rot: Vector3::new(v[0], v[1], v[2]),
            trans: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.rot.x, self.rot.y, self.rot.z, self.trans.x, self.trans.y, self.trans.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Construct from a rotation matrix and translation.
    ///
    /// Debug builds assert orthonormality (1e-9 on ||R^T R - I|| and |det - 1|).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let pose = Self { rotation, translation };
        debug_assert!(pose.is_valid(1e-9), "rotation is not orthonormal with det +1");
        pose
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::new(*nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), angle).matrix(), Vector3::zeros())
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::new(*nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), angle).matrix(), Vector3::zeros())
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::new(*nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix(), Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        let det = (self.rotation.determinant() - 1.0).abs();
        ortho < tol && det < tol && self.translation.iter().all(|x| x.is_finite())
    }

    /// Apply the transform to a point: `R p + t`.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Serialize as `[tx ty tz qw qx qy qz]` with qw >= 0 for determinism.
    pub fn to_coeffs(&self) -> [f64; 7] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        let q = if q.w < 0.0 { UnitQuaternion::new_unchecked(-q.into_inner()) } else { q };
        let t = &self.translation;
        [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
    }

    pub fn from_coeffs(c: &[f64; 7]) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(c[3], c[4], c[5], c[6]));
        Self { rotation: q.to_rotation_matrix().into_inner(), translation: Vector3::new(c[0], c[1], c[2]) }
    }

    /// Adjoint map: `exp(adjoint(T) * xi) = T exp(xi) T^{-1}`, twist order `[rot; trans]`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut adj = Matrix6::zeros();
        adj.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        adj.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        adj.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&self.translation) * self.rotation));
        adj
    }
}

/// Compose transforms: the result applies `b` first, then `a`.
pub fn compose(a: &Pose3, b: &Pose3) -> Pose3 {
    Pose3 {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn inverse(t: &Pose3) -> Pose3 {
    let rt = t.rotation.transpose();
    Pose3 { rotation: rt, translation: -(rt * t.translation) }
}

/// Relative transform between two world-frame poses: `T_j * T_i^{-1}`.
///
/// `compose(relative_pose(i, j), i) == j`.
pub fn relative_pose(i: &Pose3, j: &Pose3) -> Pose3 {
    compose(j, &inverse(i))
}

/// Exponential map se(3) -> SE(3), with the left-Jacobian coupling of
/// rotation into translation.
pub fn se3_exp(x: &Twist6) -> Pose3 {
    Pose3 {
        rotation: so3_exp(&x.rot),
        translation: so3_left_jacobian(&x.rot) * x.trans,
    }
}

/// Logarithm map SE(3) -> se(3). Fails with `AngleAtPi` near the branch cut.
pub fn se3_log(t: &Pose3) -> Result<Twist6, GeometryError> {
    let rot = so3_log(&t.rotation)?;
    let trans = so3_left_jacobian_inv(&rot) * t.translation;
    Ok(Twist6 { rot, trans })
}

/// Right-multiplicative retraction `T * exp(delta)`, the local
/// parameterization used by every optimizer in this crate.
pub fn retract(t: &Pose3, delta: &Twist6) -> Pose3 {
    compose(t, &se3_exp(delta))
}

/// Inverse of the right Jacobian of SE(3) at `xi`:
/// `Log(exp(xi) exp(delta)) = xi + right_jacobian_inv(xi) delta + O(|delta|^2)`.
pub fn se3_right_jacobian_inv(xi: &Twist6) -> Matrix6<f64> {
    se3_left_jacobian_inv(&Twist6 { rot: -xi.rot, trans: -xi.trans })
}

/// Inverse of the left Jacobian of SE(3) at `xi`:
/// `Log(exp(delta) exp(xi)) = xi + left_jacobian_inv(xi) delta + O(|delta|^2)`.
pub fn se3_left_jacobian_inv(xi: &Twist6) -> Matrix6<f64> {
    let j_inv = so3_left_jacobian_inv(&xi.rot);
    let q = se3_q_matrix(&xi.rot, &xi.trans);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-j_inv * q * j_inv));
    out
}

/// Translation-rotation coupling block of the SE(3) left Jacobian
/// (Barfoot eq. 7.86).
fn se3_q_matrix(omega: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let p = skew(v);
    let (b, c, d) = if theta2 < TAYLOR_SWITCH * TAYLOR_SWITCH {
        (
            1.0 / 6.0 - theta2 / 120.0,
            1.0 / 24.0 - theta2 / 720.0,
            1.0 / 120.0 - theta2 / 2520.0,
        )
    } else {
        let theta = theta2.sqrt();
        let (s, co) = (theta.sin(), theta.cos());
        (
            (theta - s) / (theta2 * theta),
            (theta2 + 2.0 * co - 2.0) / (2.0 * theta2 * theta2),
            (2.0 * theta - 3.0 * s + theta * co) / (2.0 * theta2 * theta2 * theta),
        )
    };
    let wp = w * p;
    let pw = p * w;
    let wpw = wp * w;
    0.5 * p + b * (wp + pw + wpw) + c * (w * wp + pw * w - 3.0 * wpw) + d * (wpw * w + w * wpw)
}

/// Pinhole projection of a camera-frame point to pixel coordinates.
pub fn project(p_cam: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>, GeometryError> {
    if p_cam.z <= DEPTH_EPSILON {
        return Err(GeometryError::BehindCamera(p_cam.z));
    }
    Ok(Vector2::new(
        k.fx * p_cam.x / p_cam.z + k.cx,
        k.fy * p_cam.y / p_cam.z + k.cy,
    ))
}

/// Jacobian of `project` with respect to the camera-frame point.
pub fn project_jacobian(p_cam: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let z_inv = 1.0 / p_cam.z;
    let z_inv2 = z_inv * z_inv;
    Matrix2x3::new(
        k.fx * z_inv, 0.0, -k.fx * p_cam.x * z_inv2,
        0.0, k.fy * z_inv, -k.fy * p_cam.y * z_inv2,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_pose(rng: &mut impl Rng) -> Pose3 {
        // Angle bounded away from pi so the log map stays single-branch.
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(-3.0..3.0);
        let trans = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        se3_exp(&Twist6::new(axis * angle, trans))
    }

    fn assert_pose_eq(a: &Pose3, b: &Pose3, tol: f64) {
        assert!(
            (a.rotation() - b.rotation()).norm() < tol && (a.translation() - b.translation()).norm() < tol,
            "poses differ: {a:?} vs {b:?}"
        );
    }

    #[test]
    fn compose_identity() {
        let i = Pose3::identity();
        assert_pose_eq(&compose(&i, &i), &i, 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let t = random_pose(&mut rng);
            assert_pose_eq(&compose(&t, &inverse(&t)), &Pose3::identity(), 1e-9);
        }
    }

    #[test]
    fn compose_rotations_closed_form() {
        let quarter = Pose3::rot_z(std::f64::consts::FRAC_PI_2);
        let half = Pose3::rot_z(std::f64::consts::PI);
        assert_pose_eq(&compose(&quarter, &quarter), &half, 1e-12);
    }

    #[test]
    fn inverse_of_pure_translation() {
        let t = Pose3::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let inv = inverse(&t);
        assert_relative_eq!(*inv.translation(), Vector3::new(-1.0, -2.0, -3.0), epsilon = 1e-15);
    }

    #[test]
    fn inverse_is_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let t = random_pose(&mut rng);
            assert_pose_eq(&inverse(&inverse(&t)), &t, 1e-12);
        }
    }

    #[test]
    fn relative_pose_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let i = random_pose(&mut rng);
            let j = random_pose(&mut rng);
            assert_pose_eq(&relative_pose(&i, &i), &Pose3::identity(), 1e-9);
            assert_pose_eq(&relative_pose(&Pose3::identity(), &j), &j, 1e-12);
            // Round trip: rel composed onto i recovers j.
            assert_pose_eq(&compose(&relative_pose(&i, &j), &i), &j, 1e-9);
        }
    }

    #[test]
    fn log_of_identity_is_zero() {
        let twist = se3_log(&Pose3::identity()).unwrap();
        assert!(twist.norm() < 1e-15);
    }

    #[test]
    fn log_of_pure_translation() {
        let d = Vector3::new(0.3, -0.7, 1.1);
        let twist = se3_log(&Pose3::from_translation(d)).unwrap();
        assert!(twist.rot.norm() < 1e-15);
        assert_relative_eq!(twist.trans, d, epsilon = 1e-15);
    }

    #[test]
    fn log_of_z_rotation() {
        let twist = se3_log(&Pose3::rot_z(0.5)).unwrap();
        assert_relative_eq!(twist.rot, Vector3::new(0.0, 0.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_angle_at_pi() {
        let err = se3_log(&Pose3::rot_z(std::f64::consts::PI)).unwrap_err();
        assert_eq!(err, GeometryError::AngleAtPi);
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_pose_eq(&se3_exp(&Twist6::zero()), &Pose3::identity(), 1e-15);
    }

    #[test]
    fn exp_small_omega_first_order() {
        let omega = Vector3::new(1e-5, -2e-5, 3e-6);
        let pose = se3_exp(&Twist6::new(omega, Vector3::zeros()));
        let first_order = Matrix3::identity() + skew(&omega);
        assert!((pose.rotation() - first_order).norm() < omega.norm_squared() * 2.0);
    }

    #[test]
    fn exp_log_round_trip_1000_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let t = random_pose(&mut rng);
            let round = se3_exp(&se3_log(&t).unwrap());
            assert_pose_eq(&round, &t, 1e-9);
        }
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            assert_pose_eq(&compose(&compose(&a, &b), &c), &compose(&a, &compose(&b, &c)), 1e-9);
        }
    }

    #[test]
    fn project_on_optical_axis() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0);
        let px = project(&Vector3::new(0.0, 0.0, 2.0), &k).unwrap();
        assert_relative_eq!(px, Vector2::new(320.0, 240.0), epsilon = 1e-12);
    }

    #[test]
    fn project_unit_offset() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0);
        let px = project(&Vector3::new(1.0, 0.0, 1.0), &k).unwrap();
        assert_relative_eq!(px, Vector2::new(820.0, 240.0), epsilon = 1e-12);
    }

    #[test]
    fn project_direct_substitution() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0);
        let px = project(&Vector3::new(0.5, -0.5, 2.0), &k).unwrap();
        assert_relative_eq!(px, Vector2::new(445.0, 115.0), epsilon = 1e-12);
    }

    #[test]
    fn project_rejects_behind_camera() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0);
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &k),
            Err(GeometryError::BehindCamera(_))
        ));
        assert!(project(&Vector3::new(0.0, 0.0, 1e-7), &k).is_err());
    }

    #[test]
    fn project_scale_invariant() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..5.0),
            );
            let lambda = rng.random_range(0.1..10.0);
            let a = project(&p, &k).unwrap();
            let b = project(&(lambda * p), &k).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let k = CameraIntrinsics::new(500.0, 520.0, 320.0, 240.0);
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..5.0),
            );
            let analytic = project_jacobian(&p, &k);
            let step = 1e-6;
            let mut numeric = Matrix2x3::zeros();
            for col in 0..3 {
                let mut hi = p;
                let mut lo = p;
                hi[col] += step;
                lo[col] -= step;
                let diff = (project(&hi, &k).unwrap() - project(&lo, &k).unwrap()) / (2.0 * step);
                numeric.set_column(col, &diff);
            }
            let rel = (analytic - numeric).norm() / analytic.norm().max(1.0);
            assert!(rel < 1e-5, "jacobian mismatch: rel={rel}");
        }
    }

    #[test]
    fn right_jacobian_inverse_matches_directional_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..100 {
            let xi = se3_log(&random_pose(&mut rng)).unwrap();
            let jr_inv = se3_right_jacobian_inv(&xi);
            let base = se3_exp(&xi);
            for col in 0..6 {
                let mut delta = Vector6::zeros();
                let eps = 1e-6;
                delta[col] = eps;
                let perturbed = compose(&base, &se3_exp(&Twist6::from_vector(&delta)));
                let numeric = (se3_log(&perturbed).unwrap().to_vector() - xi.to_vector()) / eps;
                let analytic = jr_inv.column(col);
                let rel = (numeric - analytic).norm() / analytic.norm().max(1.0);
                assert!(rel < 1e-4, "col {col}: rel={rel}");
            }
        }
    }

    #[test]
    fn adjoint_conjugation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..50 {
            let t = random_pose(&mut rng);
            let xi = Twist6::new(
                Vector3::new(0.1, -0.2, 0.05),
                Vector3::new(0.3, 0.4, -0.1),
            );
            let lhs = compose(&compose(&t, &se3_exp(&xi)), &inverse(&t));
            let rhs = se3_exp(&Twist6::from_vector(&(t.adjoint() * xi.to_vector())));
            assert_pose_eq(&lhs, &rhs, 1e-9);
        }
    }

    #[test]
    fn quaternion_coeffs_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..100 {
            let t = random_pose(&mut rng);
            let back = Pose3::from_coeffs(&t.to_coeffs());
            assert_pose_eq(&back, &t, 1e-12);
        }
    }
}
