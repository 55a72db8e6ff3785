//! Geometry kernels shared by every renderer.
//!
//! Conventions: quaternions are Hamilton, scalar-first, and rotate column
//! vectors by left multiplication. Camera space is x right, y down, z forward.
//! Ray space follows the local affine approximation of the perspective map:
//! the first two coordinates are the perspective-divided position and the
//! third is the Euclidean distance from the sensor to the Gaussian center.

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scene::SensorView;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat2 = Matrix2<f64>;

/// Gaussians whose camera-space depth is at or below this are culled.
pub const Z_NEAR: f64 = 0.01;

/// Added to the diagonal of projected 2D covariances before inversion.
pub const COV2D_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(q: [f64; 4]) -> Self {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate(format!(
                "cannot normalize quaternion with norm {n}"
            )));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Rotation matrix of an already-normalized quaternion.
    pub fn unit_to_rotation(&self) -> Mat3 {
        let Quaternion { w, x, y, z } = *self;
        Mat3::new(
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
}

/// Proper rotation from a (possibly unnormalized) quaternion.
pub fn quat_to_rot(q: Quaternion) -> Result<Mat3> {
    Ok(q.normalized()?.unit_to_rotation())
}

/// Symmetric 3x3 matrix in packed upper-triangular storage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub fn identity() -> Self {
        Self::diagonal(1.0, 1.0, 1.0)
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self {
            xx: a,
            xy: 0.0,
            xz: 0.0,
            yy: b,
            yz: 0.0,
            zz: c,
        }
    }

    /// Packs a matrix, averaging the off-diagonal pairs.
    pub fn from_matrix(m: &Mat3) -> Self {
        Self {
            xx: m[(0, 0)],
            xy: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            xz: 0.5 * (m[(0, 2)] + m[(2, 0)]),
            yy: m[(1, 1)],
            yz: 0.5 * (m[(1, 2)] + m[(2, 1)]),
            zz: m[(2, 2)],
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        Mat3::new(
            self.xx, self.xy, self.xz, self.xy, self.yy, self.yz, self.xz, self.yz, self.zz,
        )
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub fn to_matrix(&self) -> Mat2 {
        Mat2::new(self.xx, self.xy, self.xy, self.yy)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn inverse(&self) -> Option<SymMat2> {
        let det = self.det();
        if !(det > 0.0) {
            return None;
        }
        Some(SymMat2 {
            xx: self.yy / det,
            xy: -self.xy / det,
            yy: self.xx / det,
        })
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let mid = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        mid + (half_diff * half_diff + self.xy * self.xy).sqrt()
    }
}

/// Σ = R·diag(s)·diag(s)ᵀ·Rᵀ.
pub fn build_covariance(scale: &Vec3, rotation: &Mat3) -> Result<SymMat3> {
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid(format!(
            "scales must be positive, got {:?}",
            scale.as_slice()
        )));
    }
    let d = Mat3::from_diagonal(&scale.component_mul(scale));
    Ok(SymMat3::from_matrix(&(rotation * d * rotation.transpose())))
}

/// Rigid world-to-camera action on a Gaussian.
pub fn to_camera(mu: &Vec3, sigma: &SymMat3, view: &SensorView) -> (Vec3, SymMat3) {
    let r = &view.rotation;
    let mu_cam = r * mu + view.translation;
    let sigma_cam = SymMat3::from_matrix(&(r * sigma.to_matrix() * r.transpose()));
    (mu_cam, sigma_cam)
}

/// Jacobian of the local affine approximation at a camera-space mean.
pub fn ray_space_jacobian(mu_cam: &Vec3) -> Mat3 {
    let (x, y, z) = (mu_cam.x, mu_cam.y, mu_cam.z);
    let l = mu_cam.norm();
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    Mat3::new(
        iz,
        0.0,
        -x * iz2,
        0.0,
        iz,
        -y * iz2,
        x / l,
        y / l,
        z / l,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySpaceGaussian {
    /// (x/z, y/z, ‖μ‖).
    pub mean: Vec3,
    pub cov: SymMat3,
}

pub fn to_ray_space(mu_cam: &Vec3, sigma_cam: &SymMat3) -> Result<RaySpaceGaussian> {
    if !(mu_cam.z > 0.0) {
        return Err(Error::invalid(format!(
            "camera-space depth must be positive, got {}",
            mu_cam.z
        )));
    }
    let j = ray_space_jacobian(mu_cam);
    let cov = SymMat3::from_matrix(&(j * sigma_cam.to_matrix() * j.transpose()));
    let mean = Vec3::new(mu_cam.x / mu_cam.z, mu_cam.y / mu_cam.z, mu_cam.norm());
    Ok(RaySpaceGaussian { mean, cov })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    /// Image plane (camera splatting).
    Xy,
    /// Range axis (echosounder splatting).
    Z,
    /// Elevation-range plane (forward-looking sonar).
    Yz,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Cov2(SymMat2),
    Variance(f64),
}

pub fn project(sigma: &SymMat3, plane: Plane) -> Projection {
    match plane {
        Plane::Xy => Projection::Cov2(SymMat2 {
            xx: sigma.xx,
            xy: sigma.xy,
            yy: sigma.yy,
        }),
        Plane::Z => Projection::Variance(sigma.zz),
        Plane::Yz => Projection::Cov2(SymMat2 {
            xx: sigma.yy,
            xy: sigma.yz,
            yy: sigma.zz,
        }),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
