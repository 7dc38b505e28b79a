//! Pole and ground-plane features with their distance functions.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("pole has (near) zero length")]
    DegeneratePole,
    #[error("plane fit needs at least {required} points, got {got}")]
    InsufficientPoints { required: usize, got: usize },
    #[error("points do not define a plane: {0}")]
    DegenerateGeometry(&'static str),
}

/// Coordinate frame a feature is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Sensor,
    Vehicle,
    World,
}

impl Frame {
    pub fn is_sensor(&self) -> bool {
        *self == Frame::Sensor
    }

    /// Frame reached by applying a transform whose child is `self`.
    fn parent(self) -> Frame {
        match self {
            Frame::Sensor => Frame::Vehicle,
            Frame::Vehicle | Frame::World => Frame::World,
        }
    }
}

/// A pole landmark summarized by its base and top points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Pole<T: Scalar> {
    pub base: Vector3<T>,
    pub top: Vector3<T>,
    #[serde(default, skip_serializing_if = "Frame::is_sensor")]
    pub frame: Frame,
}

impl<T: Scalar> Pole<T> {
    pub fn new(base: Vector3<T>, top: Vector3<T>, frame: Frame) -> Self {
        Self { base, top, frame }
    }

    pub fn length(&self) -> T {
        (self.top - self.base).norm()
    }

    pub fn centroid(&self) -> Vector3<T> {
        (self.base + self.top) * T::lit(0.5)
    }

    pub fn is_degenerate(&self) -> bool {
        self.length() < T::lit(1e-9)
    }
}

/// Perpendicular distance from `p` to the infinite line through the pole.
pub fn pole_point_distance<T: Scalar>(pole: &Pole<T>, p: &Vector3<T>) -> Result<T, FeatureError> {
    let len = pole.length();
    if len < T::lit(1e-9) {
        return Err(FeatureError::DegeneratePole);
    }
    Ok((p - pole.top).cross(&(p - pole.base)).norm() / len)
}

/// Root-sum-square of the distances of `q`'s endpoints to the line of `p`.
pub fn pole_pole_distance<T: Scalar>(p: &Pole<T>, q: &Pole<T>) -> Result<T, FeatureError> {
    if q.is_degenerate() {
        return Err(FeatureError::DegeneratePole);
    }
    let db = pole_point_distance(p, &q.base)?;
    let dt = pole_point_distance(p, &q.top)?;
    Ok((db * db + dt * dt).sqrt())
}

pub fn transform_pole<T: Scalar>(t: &RigidTransform<T>, pole: &Pole<T>) -> Pole<T> {
    Pole {
        base: t.transform_point(&pole.base),
        top: t.transform_point(&pole.top),
        frame: pole.frame.parent(),
    }
}

/// Ground points observed by one sensor at one timestamp (sensor frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundPatch {
    pub sensor_id: String,
    pub timestamp: f64,
    pub points: Vec<Vector3<f64>>,
}

/// Plane through `point` with unit `normal` and an orthonormal tangent pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Plane<T: Scalar> {
    pub point: Vector3<T>,
    pub normal: Vector3<T>,
    pub tangent_u: Vector3<T>,
    pub tangent_v: Vector3<T>,
}

impl<T: Scalar> Plane<T> {
    /// The ideal ground plane `z = 0`.
    pub fn ground() -> Self {
        Self {
            point: Vector3::zeros(),
            normal: Vector3::z(),
            tangent_u: Vector3::x(),
            tangent_v: Vector3::y(),
        }
    }

    /// Plane from a point and a (not necessarily unit) normal; tangents are
    /// chosen to complete a right-handed frame.
    pub fn from_point_normal(point: Vector3<T>, normal: Vector3<T>) -> Self {
        let n = normal.normalize();
        let helper = if n.x.abs() < T::lit(0.9) {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let u = (helper - n * n.dot(&helper)).normalize();
        let v = n.cross(&u);
        Self {
            point,
            normal: n,
            tangent_u: u,
            tangent_v: v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaneFitConfig {
    pub min_points: usize,
    /// Minimum ratio of the middle to the smallest covariance eigenvalue.
    pub planarity_ratio: f64,
}

impl Default for PlaneFitConfig {
    fn default() -> Self {
        Self {
            min_points: 20,
            planarity_ratio: 5.0,
        }
    }
}

/// Least-squares plane through a point set via eigen-decomposition of the
/// centered scatter matrix.
pub fn fit_plane<T: Scalar>(
    points: &[Vector3<T>],
    config: &PlaneFitConfig,
) -> Result<Plane<T>, FeatureError> {
    if points.len() < 3 {
        return Err(FeatureError::InsufficientPoints {
            required: config.min_points.max(3),
            got: points.len(),
        });
    }
    let n = T::lit(points.len() as f64);
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    scatter /= n;
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let (lo, mid, hi) = (
        eig.eigenvalues[order[0]].max(T::zero()),
        eig.eigenvalues[order[1]].max(T::zero()),
        eig.eigenvalues[order[2]].max(T::zero()),
    );
    if hi <= T::zero() || mid <= hi * T::tolerance() {
        return Err(FeatureError::DegenerateGeometry("points are collinear or coincident"));
    }
    if points.len() < config.min_points {
        return Err(FeatureError::InsufficientPoints {
            required: config.min_points,
            got: points.len(),
        });
    }
    if mid < lo * T::lit(config.planarity_ratio) {
        return Err(FeatureError::DegenerateGeometry("points are not planar enough"));
    }

    let mut normal: Vector3<T> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let flip = if normal.z.abs() > T::lit(1e-6) {
        normal.z < T::zero()
    } else if normal.x.abs() > T::lit(1e-6) {
        normal.x < T::zero()
    } else {
        normal.y < T::zero()
    };
    if flip {
        normal = -normal;
    }
    let u: Vector3<T> = eig.eigenvectors.column(order[2]).into_owned();
    let u = (u - normal * normal.dot(&u)).normalize();
    let v = normal.cross(&u);
    Ok(Plane {
        point: centroid,
        normal,
        tangent_u: u,
        tangent_v: v,
    })
}

/// Signed distance of `p` along the plane normal.
pub fn plane_point_distance<T: Scalar>(plane: &Plane<T>, p: &Vector3<T>) -> T {
    plane.normal.normalize().dot(&(p - plane.point))
}

/// The three probe points of a plane: centroid and centroid moved along each tangent.
pub fn plane_probe_points<T: Scalar>(plane: &Plane<T>, step: T) -> [Vector3<T>; 3] {
    [
        plane.point,
        plane.point + plane.tangent_u * step,
        plane.point + plane.tangent_v * step,
    ]
}

/// Sum of absolute distances of `a`'s three probe points to plane `b`.
pub fn plane_plane_distance<T: Scalar>(a: &Plane<T>, b: &Plane<T>, step: T) -> T {
    plane_probe_points(a, step)
        .iter()
        .map(|q| plane_point_distance(b, q).abs())
        .fold(T::zero(), |acc, d| acc + d)
}

/// `1 − |n̂_a · n̂_b|`: zero for parallel planes, one for perpendicular ones.
pub fn plane_angular_distance<T: Scalar>(a: &Plane<T>, b: &Plane<T>) -> T {
    let c = a.normal.normalize().dot(&b.normal.normalize()).abs();
    (T::one() - c).max(T::zero())
}

pub fn transform_plane<T: Scalar>(t: &RigidTransform<T>, plane: &Plane<T>) -> Plane<T> {
    Plane {
        point: t.transform_point(&plane.point),
        normal: t.transform_vector(&plane.normal),
        tangent_u: t.transform_vector(&plane.tangent_u),
        tangent_v: t.transform_vector(&plane.tangent_v),
    }
}
