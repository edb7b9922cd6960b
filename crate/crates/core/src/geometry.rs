//! Minimal 3D vector and rotation types used by the scan pipeline.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn cast<U: Scalar>(self) -> Vec3<U> {
        Vec3::new(U::lit(self.x.to_f64_lossy()), U::lit(self.y.to_f64_lossy()), U::lit(self.z.to_f64_lossy()))
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Rotation quaternion stored as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Quaternion<T> {
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Rotation of `angle` radians about +z.
    pub fn from_yaw(angle: T) -> Self {
        let half = angle * T::lit(0.5);
        Self::new(half.cos(), T::zero(), T::zero(), half.sin())
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn check_unit(&self) -> Result<()> {
        let n = self.norm();
        if !n.is_finite() || (n - T::one()).abs() > T::unit_tolerance() {
            return Err(Error::InvalidPose(format!("quaternion norm {n} is not 1")));
        }
        Ok(())
    }

    /// Row-major rotation matrix of a unit quaternion.
    pub fn to_matrix(&self) -> [[T; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let two = T::lit(2.0);
        let one = T::one();
        [
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ]
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform<T> {
    rot: [[T; 3]; 3],
    pub translation: Vec3<T>,
}

impl<T: Scalar> RigidTransform<T> {
    pub fn new(rotation: &Quaternion<T>, translation: Vec3<T>) -> Result<Self> {
        rotation.check_unit()?;
        if !translation.is_finite() {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Self { rot: rotation.to_matrix(), translation })
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        let r = &self.rot;
        Vec3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + self.translation.x,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + self.translation.y,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + self.translation.z,
        )
    }
}

/// Axis-aligned box; membership is inclusive at `min` and exclusive at `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Scalar> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Result<Self> {
        if !(min.x <= max.x && min.y <= max.y && min.z <= max.z) {
            return Err(Error::InvalidArgument("box min must not exceed max on any axis".into()));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= self.min.x
            && p.x < self.max.x
            && p.y >= self.min.y
            && p.y < self.max.y
            && p.z >= self.min.z
            && p.z < self.max.z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaw_rotates_x_onto_y() {
        let t = RigidTransform::new(&Quaternion::from_yaw(std::f64::consts::FRAC_PI_2), Vec3::zero()).unwrap();
        let p = t.apply(Vec3::new(1.0, 0.0, 0.0));
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let q = Quaternion::new(1.0, 0.1, 0.0, 0.0);
        assert!(matches!(RigidTransform::new(&q, Vec3::<f64>::zero()), Err(Error::InvalidPose(_))));
    }

    #[test]
    fn box_boundaries() {
        let b = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        assert!(b.contains(Vec3::new(0.0, 0.0, 0.0)));
        assert!(!b.contains(Vec3::new(1.0, 0.5, 0.5)));
        assert!(Aabb::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 1.0)).is_err());
    }
}
