//! Camera model: axis-angle rotations, pinhole intrinsics and ray generation.
//!
//! Conventions: right-handed world frame, cameras look down their local −z
//! axis with +x to the right and +y up. A pose maps camera coordinates to
//! world coordinates, `x_world = R(φ) x_cam + t`, so the translation is the
//! camera centre. Pixel `(u, v)` is measured from the top-left image corner
//! in continuous coordinates; pixel centres sit at half-integers.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Below this rotation angle the Rodrigues coefficients switch to their
/// Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Threshold for the series form of the coefficient derivatives. Larger than
/// [`SMALL_ANGLE`] because the closed forms of the derivatives lose relative
/// precision as `α³` in the denominator.
const SMALL_ANGLE_DERIVATIVE: f64 = 1e-2;

/// Axis-angle rotation vector `φ = α ω` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    phi: Vector3<f64>,
}

impl AxisAngle {
    pub fn new(phi: Vector3<f64>) -> Result<Self> {
        if !phi.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "axis-angle vector must be finite, got {:?}",
                phi.as_slice()
            )));
        }
        Ok(Self { phi })
    }

    pub fn identity() -> Self {
        Self {
            phi: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let norm = axis.norm();
        if !(norm > 0.0) || !angle.is_finite() {
            return Err(Error::InvalidArgument(
                "rotation axis must be non-zero and angle finite".into(),
            ));
        }
        Self::new(axis * (angle / norm))
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.phi
    }

    /// Rotation angle `α = ‖φ‖`.
    pub fn angle(&self) -> f64 {
        self.phi.norm()
    }

    /// Unit rotation axis, `None` for the identity.
    pub fn axis(&self) -> Option<Vector3<f64>> {
        let alpha = self.angle();
        (alpha > 0.0).then(|| self.phi / alpha)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rodrigues_unchecked(&self.phi)
    }
}

impl Default for AxisAngle {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: AxisAngle,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: AxisAngle, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("translation must be finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: AxisAngle::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking towards `target`, with `up` roughly the image's +y.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let back = eye - target;
        if back.norm() == 0.0 {
            return Err(Error::InvalidArgument("eye and target coincide".into()));
        }
        let z = back.normalize();
        let x = up.cross(&z);
        if x.norm() < 1e-12 {
            return Err(Error::InvalidArgument("up vector parallel to view axis".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        Self::new(matrix_to_axis_angle(&r)?, eye)
    }
}

/// Shared pinhole intrinsics plus one pose per view.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub poses: Vec<Pose>,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraParams {
    pub fn new(poses: Vec<Pose>, focal: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            poses,
            focal,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.is_empty() {
            return Err(Error::InvalidArgument("camera set needs at least one view".into()));
        }
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {}",
                self.focal
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        Ok(())
    }

    pub fn views(&self) -> usize {
        self.poses.len()
    }

    pub fn pose(&self, view: usize) -> Result<&Pose> {
        self.poses.get(view).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "view index {view} out of range for {} views",
                self.poses.len()
            ))
        })
    }
}

/// Near/far bounds of the ray parameter, shared by every ray of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBounds {
    pub t_near: f64,
    pub t_far: f64,
}

impl SceneBounds {
    pub fn new(t_near: f64, t_far: f64) -> Result<Self> {
        if !(t_near >= 0.0 && t_near < t_far && t_far.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid ray bounds [{t_near}, {t_far}]"
            )));
        }
        Ok(Self { t_near, t_far })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>, t_near: f64, t_far: f64) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("ray direction must be unit length".into()));
        }
        SceneBounds::new(t_near, t_far)?;
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Cross-product matrix `[v]×`, so that `[v]× w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `sin α / α` and `(1 − cos α) / α²`.
fn rodrigues_coefficients(alpha: f64) -> (f64, f64) {
    if alpha < SMALL_ANGLE {
        rodrigues_series_coefficients(alpha)
    } else {
        let half = 0.5 * alpha;
        let sinc_half = half.sin() / half;
        (alpha.sin() / alpha, 0.5 * sinc_half * sinc_half)
    }
}

fn rodrigues_series_coefficients(alpha: f64) -> (f64, f64) {
    let a2 = alpha * alpha;
    (1.0 - a2 / 6.0, 0.5 - a2 / 24.0)
}

/// Derivatives of the two coefficients divided by `α`.
fn rodrigues_coefficient_slopes(alpha: f64) -> (f64, f64) {
    if alpha < SMALL_ANGLE_DERIVATIVE {
        let a2 = alpha * alpha;
        let a4 = a2 * a2;
        (
            -1.0 / 3.0 + a2 / 30.0 - a4 / 840.0,
            -1.0 / 12.0 + a2 / 180.0 - a4 / 6720.0,
        )
    } else {
        let (s, c) = alpha.sin_cos();
        let a2 = alpha * alpha;
        let a3 = a2 * alpha;
        let a4 = a2 * a2;
        let da = (alpha * c - s) / a3;
        // d/dα [(1 − cos α)/α²] / α
        let db = (alpha * s - 2.0 * (1.0 - c)) / a4;
        (da, db)
    }
}

fn rodrigues_unchecked(phi: &Vector3<f64>) -> Matrix3<f64> {
    let alpha = phi.norm();
    let (a, b) = rodrigues_coefficients(alpha);
    let k = skew(phi);
    Matrix3::identity() + k * a + (k * k) * b
}

/// Rotation matrix of an axis-angle vector,
/// `R = I + (sin α/α)[φ]× + ((1 − cos α)/α²)[φ]×²`.
pub fn rodrigues(phi: &Vector3<f64>) -> Result<Matrix3<f64>> {
    AxisAngle::new(*phi).map(|aa| aa.matrix())
}

/// Small-angle expansion of [`rodrigues`], exposed for continuity checks.
pub fn rodrigues_series(phi: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = rodrigues_series_coefficients(phi.norm());
    let k = skew(phi);
    Matrix3::identity() + k * a + (k * k) * b
}

fn frobenius(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Pulls `∂L/∂R` back to `∂L/∂φ` through [`rodrigues`].
pub fn rodrigues_backward(phi: &Vector3<f64>, upstream: &Matrix3<f64>) -> Result<Vector3<f64>> {
    AxisAngle::new(*phi)?;
    if !upstream.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("rotation cotangent".into()));
    }
    let alpha = phi.norm();
    let (a, b) = rodrigues_coefficients(alpha);
    let (da, db) = rodrigues_coefficient_slopes(alpha);
    let k = skew(phi);
    let k2 = k * k;
    let g_k = frobenius(upstream, &k);
    let g_k2 = frobenius(upstream, &k2);
    let mut grad = Vector3::zeros();
    for i in 0..3 {
        let e = skew(&Vector3::ith(i, 1.0));
        let term_linear = frobenius(upstream, &e);
        let term_square = frobenius(upstream, &(e * k + k * e));
        grad[i] = da * phi[i] * g_k + db * phi[i] * g_k2 + a * term_linear + b * term_square;
    }
    Ok(grad)
}

/// Inverse of [`rodrigues`] for proper rotations; angle in `[0, π]`.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Result<AxisAngle> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-7 {
        return AxisAngle::new(w * 0.5);
    }
    if std::f64::consts::PI - angle < 1e-6 {
        // Near π the antisymmetric part vanishes; recover the axis from R + I.
        let m = r + Matrix3::identity();
        let col = (0..3)
            .max_by(|&i, &j| m.column(i).norm().total_cmp(&m.column(j).norm()))
            .unwrap_or(0);
        let axis = m.column(col).normalize();
        return AxisAngle::from_axis_angle(axis, angle);
    }
    AxisAngle::new(w * (angle / (2.0 * angle.sin())))
}

/// Angle in degrees of the relative rotation `R_aᵀ R_b`.
pub fn rotation_distance_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Unnormalized camera-space direction through pixel `(u, v)`.
fn camera_direction(cam: &CameraParams, u: f64, v: f64) -> Vector3<f64> {
    let cx = cam.width as f64 * 0.5;
    let cy = cam.height as f64 * 0.5;
    Vector3::new((u - cx) / cam.focal, -(v - cy) / cam.focal, -1.0)
}

fn check_pixel(cam: &CameraParams, u: f64, v: f64) -> Result<()> {
    if !(u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64) {
        return Err(Error::InvalidArgument(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            cam.width, cam.height
        )));
    }
    Ok(())
}

/// World-space ray through pixel `(u, v)` of `view`.
pub fn generate_ray(cam: &CameraParams, view: usize, u: f64, v: f64, bounds: &SceneBounds) -> Result<Ray> {
    let pose = cam.pose(view)?;
    check_pixel(cam, u, v)?;
    let dir_cam = camera_direction(cam, u, v).normalize();
    let direction = pose.rotation.matrix() * dir_cam;
    Ok(Ray {
        origin: pose.translation,
        direction: direction.normalize(),
        t_near: bounds.t_near,
        t_far: bounds.t_far,
    })
}

/// Gradient of a loss with respect to one view's pose and the shared focal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGrad {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
    pub focal: f64,
}

impl CameraGrad {
    pub fn zero() -> Self {
        Self {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
            focal: 0.0,
        }
    }
}

/// Chains `∂L/∂origin` and `∂L/∂direction` of a generated ray back to the
/// view's axis-angle, translation and the focal length.
pub fn generate_ray_backward(
    cam: &CameraParams,
    view: usize,
    u: f64,
    v: f64,
    grad_origin: &Vector3<f64>,
    grad_direction: &Vector3<f64>,
) -> Result<CameraGrad> {
    let pose = cam.pose(view)?;
    check_pixel(cam, u, v)?;
    let c = camera_direction(cam, u, v);
    let c_norm = c.norm();
    let n = c / c_norm;
    let r = pose.rotation.matrix();

    // The final renormalization of R n is the identity map for a proper
    // rotation, so its Jacobian is dropped.
    let grad_r = grad_direction * n.transpose();
    let rotation = rodrigues_backward(&pose.rotation.vector(), &grad_r)?;

    let grad_n = r.transpose() * grad_direction;
    let grad_c = (grad_n - n * n.dot(&grad_n)) / c_norm;
    let cx = cam.width as f64 * 0.5;
    let cy = cam.height as f64 * 0.5;
    let f2 = cam.focal * cam.focal;
    let dc_df = Vector3::new(-(u - cx) / f2, (v - cy) / f2, 0.0);

    Ok(CameraGrad {
        rotation,
        translation: *grad_origin,
        focal: grad_c.dot(&dc_df),
    })
}
