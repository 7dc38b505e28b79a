//! Rigid-body math on SE(3).
//!
//! Conventions used throughout the crate:
//!
//! * Quaternions are scalar-first Hamilton quaternions (`w + xi + yj + zk`).
//! * A [`RigidTransform`] is a passive transform `p_parent = R * p_child + t`; a
//!   sensor calibration maps sensor-frame coordinates into the vehicle frame, a
//!   vehicle pose maps vehicle-frame coordinates into the world frame.
//! * [`EulerAngles`] are intrinsic Z-Y-X (yaw, then pitch, then roll), so that
//!   `R = R_z(yaw) * R_y(pitch) * R_x(roll)`.
//! * Before taking a rotation logarithm or comparing rotations, quaternions are
//!   canonicalized to a non-negative scalar part.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("time {t} outside pose stream span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("pose stream is empty")]
    EmptyStream,
    #[error("pose stream timestamps not strictly increasing at index {index}")]
    NonMonotonic { index: usize },
}

/// Rigid transform stored as translation plus unit quaternion.
///
/// Serialized as `{"translation": [x, y, z], "rotation": [w, x, y, z]}`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    bound = "T: Scalar + Serialize + serde::de::DeserializeOwned",
    into = "PoseRepr<T>",
    from = "PoseRepr<T>"
)]
pub struct RigidTransform<T: Scalar> {
    translation: Vector3<T>,
    rotation: UnitQuaternion<T>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr<T> {
    translation: [T; 3],
    rotation: [T; 4],
}

impl<T: Scalar> From<RigidTransform<T>> for PoseRepr<T> {
    fn from(p: RigidTransform<T>) -> Self {
        let t = p.translation;
        PoseRepr {
            translation: [t.x, t.y, t.z],
            rotation: p.wxyz(),
        }
    }
}

impl<T: Scalar> From<PoseRepr<T>> for RigidTransform<T> {
    fn from(r: PoseRepr<T>) -> Self {
        let [w, x, y, z] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        // keep already-normalized input bit-exact so files round-trip
        let rotation = if (q.norm_squared() - T::one()).abs() <= T::default_epsilon() * T::lit(4.0) {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        RigidTransform {
            translation: Vector3::from(r.translation),
            rotation,
        }
    }
}

impl<T: Scalar> fmt::Debug for RigidTransform<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "RigidTransform(t: [{:.6}, {:.6}, {:.6}], q: [w: {:.6}, x: {:.6}, y: {:.6}, z: {:.6}])",
            self.translation.x, self.translation.y, self.translation.z, q.w, q.i, q.j, q.k
        )
    }
}

impl<T: Scalar> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Builds a transform, renormalizing the rotation.
    pub fn new(translation: Vector3<T>, rotation: UnitQuaternion<T>) -> Self {
        Self {
            translation,
            rotation: renormalize(rotation),
        }
    }

    /// Builds a transform from a raw `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(translation: Vector3<T>, wxyz: [T; 4]) -> Self {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        Self {
            translation,
            rotation: UnitQuaternion::from_quaternion(q),
        }
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self {
            translation,
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_rotation(rotation: UnitQuaternion<T>) -> Self {
        Self::new(Vector3::zeros(), rotation)
    }

    pub fn from_euler(translation: Vector3<T>, angles: EulerAngles<T>) -> Self {
        Self::new(translation, angles.to_quaternion())
    }

    /// Pure rotation about the vehicle z axis.
    pub fn from_yaw(yaw: T) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw))
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    #[inline]
    pub fn rotation(&self) -> &UnitQuaternion<T> {
        &self.rotation
    }

    /// Scalar-first quaternion coefficients.
    pub fn wxyz(&self) -> [T; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn euler(&self) -> EulerAngles<T> {
        EulerAngles::from_quaternion(&self.rotation)
    }

    pub fn with_translation(mut self, translation: Vector3<T>) -> Self {
        self.translation = translation;
        self
    }

    pub fn with_rotation(mut self, rotation: UnitQuaternion<T>) -> Self {
        self.rotation = renormalize(rotation);
        self
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            translation: self.rotation * other.translation + self.translation,
            rotation: renormalize(self.rotation * other.rotation),
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Homogeneous 4x4 matrix.
    pub fn to_matrix(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Right retraction: `t + dt`, `R * exp(dw)`.
    pub fn retract(&self, dt: &Vector3<T>, dw: &Vector3<T>) -> Self {
        Self {
            translation: self.translation + dt,
            rotation: renormalize(self.rotation * so3_exp(dw)),
        }
    }

    /// Geodesic angle between the rotations of two transforms, radians.
    pub fn angle_to(&self, other: &Self) -> T {
        so3_log(&(self.rotation.inverse() * other.rotation)).norm()
    }
}

impl<T: Scalar> std::ops::Mul for RigidTransform<T> {
    type Output = RigidTransform<T>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.compose(&rhs)
    }
}

impl<'a, T: Scalar> std::ops::Mul<&'a RigidTransform<T>> for &'a RigidTransform<T> {
    type Output = RigidTransform<T>;
    fn mul(self, rhs: &'a RigidTransform<T>) -> Self::Output {
        self.compose(rhs)
    }
}

fn renormalize<T: Scalar>(q: UnitQuaternion<T>) -> UnitQuaternion<T> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Roll, pitch and yaw in radians (intrinsic Z-Y-X).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct EulerAngles<T: Scalar> {
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
}

impl<T: Scalar> EulerAngles<T> {
    pub fn new(roll: T, pitch: T, yaw: T) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn yaw_only(yaw: T) -> Self {
        Self::new(T::zero(), T::zero(), yaw)
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<T> {
        UnitQuaternion::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    pub fn from_quaternion(q: &UnitQuaternion<T>) -> Self {
        let (roll, pitch, yaw) = q.euler_angles();
        Self { roll, pitch, yaw }
    }
}

/// A pose tagged with a timestamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct TimedPose<T: Scalar> {
    pub timestamp: f64,
    pub pose: RigidTransform<T>,
}

impl<T: Scalar> TimedPose<T> {
    pub fn new(timestamp: f64, pose: RigidTransform<T>) -> Self {
        Self { timestamp, pose }
    }
}

/// Checks that timestamps are strictly increasing.
pub fn validate_stream<T: Scalar>(stream: &[TimedPose<T>]) -> Result<(), GeometryError> {
    for (i, w) in stream.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(GeometryError::NonMonotonic { index: i + 1 });
        }
    }
    Ok(())
}

pub fn compose<T: Scalar>(a: &RigidTransform<T>, b: &RigidTransform<T>) -> RigidTransform<T> {
    a.compose(b)
}

/// Increment between two absolute poses: `prev⁻¹ ∘ curr`.
pub fn relative_increment<T: Scalar>(
    pose_prev: &RigidTransform<T>,
    pose_curr: &RigidTransform<T>,
) -> RigidTransform<T> {
    pose_prev.inverse().compose(pose_curr)
}

/// Sensor-frame increment predicted from a vehicle increment through the
/// hand-eye relation: `calib⁻¹ ∘ vehicle_inc ∘ calib`.
pub fn conjugate_increment<T: Scalar>(
    calib: &RigidTransform<T>,
    vehicle_inc: &RigidTransform<T>,
) -> RigidTransform<T> {
    calib.inverse().compose(vehicle_inc).compose(calib)
}

/// Interpolates a timestamped pose stream at `t` (linear translation, slerp rotation).
pub fn interpolate_pose<T: Scalar>(
    stream: &[TimedPose<T>],
    t: f64,
) -> Result<RigidTransform<T>, GeometryError> {
    let (first, last) = match (stream.first(), stream.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(GeometryError::EmptyStream),
    };
    if t < first.timestamp || t > last.timestamp || t.is_nan() {
        return Err(GeometryError::OutOfRange {
            t,
            start: first.timestamp,
            end: last.timestamp,
        });
    }
    let hi = stream.partition_point(|s| s.timestamp < t);
    if stream[hi].timestamp == t {
        return Ok(stream[hi].pose);
    }
    let a = &stream[hi - 1];
    let b = &stream[hi];
    let s = T::lit((t - a.timestamp) / (b.timestamp - a.timestamp));
    Ok(interpolate_between(&a.pose, &b.pose, s))
}

/// Interpolation at fraction `s ∈ [0, 1]` between two poses.
pub fn interpolate_between<T: Scalar>(
    a: &RigidTransform<T>,
    b: &RigidTransform<T>,
    s: T,
) -> RigidTransform<T> {
    let translation = a.translation * (T::one() - s) + b.translation * s;
    let delta = so3_log(&(a.rotation.inverse() * b.rotation));
    RigidTransform::new(translation, a.rotation * so3_exp(&(delta * s)))
}

/// Flips a quaternion to the hemisphere with non-negative scalar part.
pub fn canonicalize<T: Scalar>(q: &UnitQuaternion<T>) -> UnitQuaternion<T> {
    if q.w < T::zero() {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// Rotation logarithm as an axis-angle vector (radians), angle in `[0, π]`.
pub fn so3_log<T: Scalar>(q: &UnitQuaternion<T>) -> Vector3<T> {
    let q = canonicalize(q);
    let v = q.imag();
    let n = v.norm();
    let w = q.w;
    if n < T::lit(1e-12) {
        // sin(θ/2) ≈ θ/2 and w ≈ 1
        v * (T::lit(2.0) / w)
    } else {
        v * (T::lit(2.0) * n.atan2(w) / n)
    }
}

/// Rotation exponential of an axis-angle vector.
pub fn so3_exp<T: Scalar>(w: &Vector3<T>) -> UnitQuaternion<T> {
    let theta = w.norm();
    let half = theta * T::lit(0.5);
    if theta < T::lit(1e-12) {
        let q = Quaternion::new(T::one(), w.x * T::lit(0.5), w.y * T::lit(0.5), w.z * T::lit(0.5));
        UnitQuaternion::from_quaternion(q)
    } else {
        let k = half.sin() / theta;
        UnitQuaternion::new_unchecked(Quaternion::new(half.cos(), w.x * k, w.y * k, w.z * k))
    }
}

/// Skew-symmetric cross-product matrix.
pub fn skew<T: Scalar>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Inverse of the SO(3) right Jacobian, `d log(R exp(δ)) / dδ` at `δ = 0`.
pub fn so3_right_jacobian_inv<T: Scalar>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta = phi.norm();
    let k = skew(phi);
    let half = T::lit(0.5);
    if theta < T::lit(1e-6) {
        return Matrix3::identity() + k * half + k * k * T::lit(1.0 / 12.0);
    }
    let coef = T::one() / (theta * theta)
        - (T::one() + theta.cos()) / (T::lit(2.0) * theta * theta.sin());
    Matrix3::identity() + k * half + k * k * coef
}

/// `[t(a) − t(b), log(R(b)⁻¹ R(a))]`.
pub fn pose_log_difference<T: Scalar>(a: &RigidTransform<T>, b: &RigidTransform<T>) -> Vector6<T> {
    let dt = a.translation - b.translation;
    let dw = so3_log(&(b.rotation.inverse() * a.rotation));
    Vector6::new(dt.x, dt.y, dt.z, dw.x, dw.y, dw.z)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a.abs() <= PI {
        return if a == -PI { PI } else { a };
    }
    // reduce |a| so that wrap(-a) == -wrap(a) bit for bit
    let mut r = a.signum() * ((a.abs() + PI).rem_euclid(2.0 * PI) - PI);
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    type Pose = RigidTransform<f64>;

    fn pose(t: [f64; 3], rpy: [f64; 3]) -> Pose {
        Pose::from_euler(Vector3::from(t), EulerAngles::new(rpy[0], rpy[1], rpy[2]))
    }

    fn close_pose(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.translation() - b.translation()).norm() < tol && a.angle_to(b) < tol
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-10.0..10.0f64),
            -PI..PI,
            -1.4..1.4f64,
            -PI..PI,
        )
            .prop_map(|(t, r, p, y)| pose(t, [r, p, y]))
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = pose([1.0, -2.0, 0.5], [0.1, -0.2, 2.0]);
        assert!(close_pose(&Pose::identity().compose(&t), &t, 1e-12));
        assert!(close_pose(&t.compose(&t.inverse()), &Pose::identity(), 1e-9));
    }

    #[test]
    fn compose_chain_matches_matrix_product() {
        let step = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let yaw = Pose::from_yaw(FRAC_PI_2);
        let chain = step.compose(&yaw).compose(&step);
        let p = chain.transform_point(&Vector3::zeros());
        assert!((p - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        let m = step.to_matrix() * yaw.to_matrix() * step.to_matrix();
        assert!((m - chain.to_matrix()).norm() < 1e-12);
    }

    #[test]
    fn relative_increment_cases() {
        let t = pose([3.0, 1.0, 0.0], [0.0, 0.0, 0.7]);
        assert!(close_pose(&relative_increment(&t, &t), &Pose::identity(), 1e-12));
        assert!(close_pose(&relative_increment(&Pose::identity(), &t), &t, 1e-12));
    }

    #[test]
    fn conjugate_increment_cases() {
        let inc = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert!(close_pose(&conjugate_increment(&Pose::identity(), &inc), &inc, 1e-12));

        let calib = Pose::from_yaw(FRAC_PI_2);
        let s = conjugate_increment(&calib, &inc);
        assert!((s.translation() - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        // matrix algebra cross-check
        let m = calib.to_matrix().try_inverse().unwrap() * inc.to_matrix() * calib.to_matrix();
        assert!((m - s.to_matrix()).norm() < 1e-12);

        let c = pose([0.3, -1.0, 1.2], [0.1, 0.05, -2.0]);
        assert!(close_pose(&conjugate_increment(&c, &Pose::identity()), &Pose::identity(), 1e-12));
    }

    #[test]
    fn interpolation_cases() {
        let stream = vec![
            TimedPose::new(0.0, Pose::identity()),
            TimedPose::new(1.0, Pose::from_translation(Vector3::new(2.0, 0.0, 0.0))),
            TimedPose::new(2.0, Pose::from_yaw(FRAC_PI_2)),
        ];
        let at = interpolate_pose(&stream, 1.0).unwrap();
        assert_eq!(at, stream[1].pose);
        let mid = interpolate_pose(&stream, 0.5).unwrap();
        assert!((mid.translation() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);

        let rot = vec![
            TimedPose::new(0.0, Pose::identity()),
            TimedPose::new(1.0, Pose::from_yaw(FRAC_PI_2)),
        ];
        let half = interpolate_pose(&rot, 0.5).unwrap();
        assert!((half.euler().yaw - FRAC_PI_4).abs() < 1e-9);

        assert!(matches!(
            interpolate_pose(&rot, 1.5),
            Err(GeometryError::OutOfRange { .. })
        ));
        assert!(matches!(
            interpolate_pose::<f64>(&[], 0.0),
            Err(GeometryError::EmptyStream)
        ));
    }

    #[test]
    fn log_difference_cases() {
        let b = pose([1.0, 2.0, 3.0], [0.2, -0.1, 0.4]);
        assert!(pose_log_difference(&b, &b).norm() < 1e-12);
        for delta in [0.1, 1.0, 2.5, -3.0] {
            let a = b.compose(&Pose::from_yaw(delta));
            let d = pose_log_difference(&a, &b);
            assert!((d.fixed_rows::<3>(3).norm() - f64::abs(delta)).abs() < 1e-9);
        }
    }

    #[test]
    fn euler_round_trip_and_convention() {
        let e = EulerAngles::<f64>::new(0.3, -0.4, 2.9);
        let back = EulerAngles::from_quaternion(&e.to_quaternion());
        assert!((back.roll - e.roll).abs() < 1e-9);
        assert!((back.pitch - e.pitch).abs() < 1e-9);
        assert!((back.yaw - e.yaw).abs() < 1e-9);
        // R = Rz(yaw) Ry(pitch) Rx(roll)
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), e.yaw);
        let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), e.pitch);
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), e.roll);
        assert!((rz * ry * rx).angle_to(&e.to_quaternion()) < 1e-12);
    }

    #[test]
    fn right_jacobian_inverse_matches_finite_difference() {
        let r = so3_exp(&Vector3::new(0.4, -1.1, 0.7));
        let base = so3_log(&r);
        let jinv = so3_right_jacobian_inv(&base);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let plus = so3_log(&(r * so3_exp(&e)));
            let minus = so3_log(&(r * so3_exp(&(-e))));
            let col = (plus - minus) / (2.0 * h);
            assert!((col - jinv.column(k)).norm() < 1e-7);
        }
    }

    #[test]
    fn generic_over_f32() {
        let a = RigidTransform::<f32>::from_yaw(0.5);
        let b = a.compose(&a.inverse());
        assert!(b.angle_to(&RigidTransform::identity()) < 1e-5);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn associativity(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(close_pose(&l, &r, 1e-9));
        }

        #[test]
        fn quaternion_stays_unit(a in arb_pose(), b in arb_pose()) {
            let c = a.compose(&b).inverse().compose(&a);
            prop_assert!((c.rotation().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn increment_reconstructs(prev in arb_pose(), curr in arb_pose()) {
            let inc = relative_increment(&prev, &curr);
            prop_assert!(close_pose(&prev.compose(&inc), &curr, 1e-9));
        }

        #[test]
        fn hand_eye_chain_consistency(c in arb_pose(), v1 in arb_pose(), v2 in arb_pose(), v3 in arb_pose()) {
            let chained = conjugate_increment(&c, &v1)
                .compose(&conjugate_increment(&c, &v2))
                .compose(&conjugate_increment(&c, &v3));
            let direct = conjugate_increment(&c, &v1.compose(&v2).compose(&v3));
            prop_assert!(close_pose(&chained, &direct, 1e-9));
        }

        #[test]
        fn log_norm_is_geodesic_angle(a in arb_pose(), b in arb_pose()) {
            let d = pose_log_difference(&a, &b);
            let rel = b.rotation_matrix().transpose() * a.rotation_matrix();
            let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            let angle = cos.acos();
            // acos is ill-conditioned near 0 and π
            let tol = if angle < 1e-3 || angle > PI - 1e-3 { 1e-5 } else { 1e-9 };
            prop_assert!((d.fixed_rows::<3>(3).norm() - angle).abs() < tol);
        }

        #[test]
        fn log_norm_left_invariant(a in arb_pose(), b in arb_pose(), yaw in -PI..PI, roll in -1.0..1.0f64) {
            let g = Pose::from_euler(Vector3::zeros(), EulerAngles::new(roll, 0.2, yaw));
            let d0 = pose_log_difference(&a, &b).fixed_rows::<3>(3).norm();
            let d1 = pose_log_difference(&g.compose(&a), &g.compose(&b)).fixed_rows::<3>(3).norm();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn euler_round_trip(r in -3.0..3.0f64, p in -1.5..1.5f64, y in -3.0..3.0f64) {
            let e = EulerAngles::new(r, p, y);
            let back = EulerAngles::from_quaternion(&e.to_quaternion());
            prop_assert!((back.roll - r).abs() < 1e-9);
            prop_assert!((back.pitch - p).abs() < 1e-9);
            prop_assert!((back.yaw - y).abs() < 1e-9);
        }
    }
}
