//! Image-plane geometry for the gimbal and strapdown cameras.
//!
//! Image coordinates are normalized by the focal length (pixel offset from
//! the principal point divided by the focal length in pixels). The image
//! x axis points right and y points down.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angles closer than this to the `tan` pole are rejected by the pitch correction.
pub const SINGULARITY_MARGIN: f64 = 0.05;

pub type FullJacobian = SMatrix<f64, 2, 6>;
pub type ReducedJacobian = SMatrix<f64, 2, 4>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    focal_px: f64,
    image_width: u32,
    image_height: u32,
}

impl CameraIntrinsics {
    pub fn new(focal_px: f64, image_width: u32, image_height: u32) -> Result<Self> {
        if !(focal_px.is_finite() && focal_px > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal length must be positive, got {focal_px}"
            )));
        }
        if image_width == 0 || image_height == 0 {
            return Err(Error::InvalidInput("image size must be non-zero".into()));
        }
        Ok(Self {
            focal_px,
            image_width,
            image_height,
        })
    }

    pub fn focal_px(&self) -> f64 {
        self.focal_px
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedImagePoint {
    pub x: f64,
    pub y: f64,
}

impl NormalizedImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn in_roi(&self) -> bool {
        (-1.0..=1.0).contains(&self.x) && (-1.0..=1.0).contains(&self.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Roll and pitch of the strapdown camera. The pitch includes the installation angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrapdownAttitude {
    roll: f64,
    pitch: f64,
}

impl StrapdownAttitude {
    pub fn new(roll: f64, pitch: f64) -> Result<Self> {
        if !roll.is_finite() || !pitch.is_finite() {
            return Err(Error::InvalidInput("attitude angles must be finite".into()));
        }
        if pitch.abs() >= FRAC_PI_2 {
            return Err(Error::InvalidInput(format!(
                "|pitch| must be below pi/2, got {pitch}"
            )));
        }
        Ok(Self { roll, pitch })
    }

    pub fn from_degrees(roll_deg: f64, pitch_deg: f64) -> Result<Self> {
        Self::new(roll_deg.to_radians(), pitch_deg.to_radians())
    }

    pub fn roll(&self) -> f64 {
        self.roll
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }
}

/// Linear and angular velocity of the gimbal camera, expressed in its own frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraVelocity {
    pub v: [f64; 3],
    pub w: [f64; 3],
}

impl CameraVelocity {
    pub fn as_vector(&self) -> nalgebra::Vector6<f64> {
        nalgebra::Vector6::new(
            self.v[0], self.v[1], self.v[2], self.w[0], self.w[1], self.w[2],
        )
    }

    /// The components that drive the reduced model, `(v_x, v_y, v_z, w_y)`.
    pub fn reduced(&self) -> Vector4<f64> {
        Vector4::new(self.v[0], self.v[1], self.v[2], self.w[1])
    }
}

/// Converts a pixel offset from the principal point into normalized coordinates.
pub fn normalize_pixel(p_px: (f64, f64), intr: &CameraIntrinsics) -> Result<NormalizedImagePoint> {
    if !p_px.0.is_finite() || !p_px.1.is_finite() {
        return Err(Error::InvalidInput(format!(
            "pixel coordinates must be finite, got ({}, {})",
            p_px.0, p_px.1
        )));
    }
    Ok(NormalizedImagePoint::new(
        p_px.0 / intr.focal_px,
        p_px.1 / intr.focal_px,
    ))
}

/// Rotates the strapdown image point by the camera roll and then removes the
/// pitch with a tangent correction, giving the point as seen by a camera
/// whose optical axis has zero roll and pitch.
pub fn strapdown_to_gimbal(
    p_s: NormalizedImagePoint,
    att: &StrapdownAttitude,
) -> Result<NormalizedImagePoint> {
    if !p_s.is_finite() {
        return Err(Error::InvalidInput("image point must be finite".into()));
    }
    let (sin_r, cos_r) = att.roll.sin_cos();
    let x1 = p_s.x * cos_r - p_s.y * sin_r;
    let y1 = p_s.x * sin_r + p_s.y * cos_r;

    let angle = y1.atan() - att.pitch;
    guard_tangent(angle)?;
    Ok(NormalizedImagePoint::new(x1, angle.tan()))
}

/// Inverse of [`strapdown_to_gimbal`].
pub fn gimbal_to_strapdown(
    p_g: NormalizedImagePoint,
    att: &StrapdownAttitude,
) -> Result<NormalizedImagePoint> {
    if !p_g.is_finite() {
        return Err(Error::InvalidInput("image point must be finite".into()));
    }
    let angle = p_g.y.atan() + att.pitch;
    guard_tangent(angle)?;
    let x1 = p_g.x;
    let y1 = angle.tan();
    let (sin_r, cos_r) = att.roll.sin_cos();
    Ok(NormalizedImagePoint::new(
        x1 * cos_r + y1 * sin_r,
        -x1 * sin_r + y1 * cos_r,
    ))
}

fn guard_tangent(angle: f64) -> Result<()> {
    if angle.abs() >= FRAC_PI_2 - SINGULARITY_MARGIN {
        return Err(Error::Singularity {
            angle,
            margin: SINGULARITY_MARGIN,
        });
    }
    Ok(())
}

fn check_distance(c_z: f64) -> Result<()> {
    if !(c_z.is_finite() && c_z > 0.0) {
        return Err(Error::Domain(format!(
            "object distance must be positive, got {c_z}"
        )));
    }
    Ok(())
}

/// Interaction matrix of a point feature at depth `c_z`, columns ordered
/// `(v_x, v_y, v_z, w_x, w_y, w_z)`.
pub fn image_jacobian_full(p: NormalizedImagePoint, c_z: f64) -> Result<FullJacobian> {
    check_distance(c_z)?;
    let (x, y) = (p.x, p.y);
    let inv = 1.0 / c_z;
    #[rustfmt::skip]
    let m = FullJacobian::new(
        -inv, 0.0,  x * inv, x * y,     -(1.0 + x * x), y,
        0.0,  -inv, y * inv, 1.0 + y * y, -x * y,       -x,
    );
    Ok(m)
}

/// Interaction matrix with `w_x = w_z = 0`, columns `(v_x, v_y, v_z, w_y)`.
pub fn image_jacobian_reduced(p: NormalizedImagePoint, c_z: f64) -> Result<ReducedJacobian> {
    check_distance(c_z)?;
    let (x, y) = (p.x, p.y);
    let inv = 1.0 / c_z;
    #[rustfmt::skip]
    let m = ReducedJacobian::new(
        -inv, 0.0,  x * inv, -(1.0 + x * x),
        0.0,  -inv, y * inv, -x * y,
    );
    Ok(m)
}

/// Image-point velocity under the reduced model for `u4 = (v_x, v_y, v_z, w_y)`.
pub fn image_point_dynamics(
    p: NormalizedImagePoint,
    c_z: f64,
    u4: Vector4<f64>,
) -> Result<Vector2<f64>> {
    Ok(image_jacobian_reduced(p, c_z)? * u4)
}

/// Largest normalized offset at which a target of inscribed radius `r`
/// still covers the image center at distance `c_z`.
pub fn max_hit_offset(r: f64, c_z: f64) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Domain(format!(
            "target radius must be positive, got {r}"
        )));
    }
    check_distance(c_z)?;
    Ok(r / c_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 1280, 720).unwrap()
    }

    #[test]
    fn normalize_divides_by_focal_length() {
        let cases = [
            ((0.0, 0.0), (0.0, 0.0)),
            ((600.0, -300.0), (1.0, -0.5)),
            ((150.0, 450.0), (0.25, 0.75)),
        ];
        for (px, (x, y)) in cases {
            let p = normalize_pixel(px, &intr()).unwrap();
            assert_eq!((p.x, p.y), (x, y));
        }
    }

    #[test]
    fn normalize_rejects_nan() {
        assert!(matches!(
            normalize_pixel((f64::NAN, 1.0), &intr()),
            Err(Error::InvalidInput(_))
        ));
        assert!(CameraIntrinsics::new(0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(600.0, 0, 10).is_err());
    }

    #[test]
    fn identity_attitude_is_identity() {
        let att = StrapdownAttitude::new(0.0, 0.0).unwrap();
        let p = strapdown_to_gimbal(NormalizedImagePoint::new(0.3, -0.2), &att).unwrap();
        assert_abs_diff_eq!(p.x, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, -0.2, epsilon = 1e-15);
    }

    #[test]
    fn installation_pitch_shifts_center() {
        let att = StrapdownAttitude::from_degrees(0.0, 15.0).unwrap();
        let p = strapdown_to_gimbal(NormalizedImagePoint::new(0.0, 0.0), &att).unwrap();
        assert_eq!(p.x, 0.0);
        // tan(-15 deg) = -(2 - sqrt(3))
        assert_abs_diff_eq!(p.y, -(2.0 - 3f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, -0.26795, epsilon = 1e-5);
    }

    #[test]
    fn quarter_turn_roll() {
        let att = StrapdownAttitude::from_degrees(90.0, 0.0).unwrap();
        let p = strapdown_to_gimbal(NormalizedImagePoint::new(0.3, -0.2), &att).unwrap();
        assert_abs_diff_eq!(p.x, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn pitch_near_pole_is_rejected() {
        let att = StrapdownAttitude::new(0.0, 1.2).unwrap();
        // atan(-10) - 1.2 is about -2.67, well past -pi/2
        let r = strapdown_to_gimbal(NormalizedImagePoint::new(0.0, -10.0), &att);
        assert!(matches!(r, Err(Error::Singularity { .. })));
        assert!(StrapdownAttitude::new(0.0, FRAC_PI_2).is_err());
    }

    #[test]
    fn full_jacobian_examples() {
        let j = image_jacobian_full(NormalizedImagePoint::new(0.0, 0.0), 1.0).unwrap();
        #[rustfmt::skip]
        let want = FullJacobian::new(
            -1.0, 0.0, 0.0, 0.0, -1.0, 0.0,
            0.0, -1.0, 0.0, 1.0, 0.0, 0.0,
        );
        assert_eq!(j, want);

        let j = image_jacobian_full(NormalizedImagePoint::new(1.0, 1.0), 2.0).unwrap();
        #[rustfmt::skip]
        let want = FullJacobian::new(
            -0.5, 0.0, 0.5, 1.0, -2.0, 1.0,
            0.0, -0.5, 0.5, 2.0, -1.0, -1.0,
        );
        assert_eq!(j, want);

        let j = image_jacobian_full(NormalizedImagePoint::new(0.5, 0.0), 10.0).unwrap();
        let row: Vec<f64> = j.row(0).iter().copied().collect();
        assert_eq!(row, vec![-0.1, 0.0, 0.05, 0.0, -1.25, 0.0]);
    }

    #[test]
    fn reduced_jacobian_examples() {
        let j = image_jacobian_reduced(NormalizedImagePoint::new(0.0, 0.0), 1.0).unwrap();
        assert_eq!(
            j,
            ReducedJacobian::new(-1.0, 0.0, 0.0, -1.0, 0.0, -1.0, 0.0, 0.0)
        );
        let j = image_jacobian_reduced(NormalizedImagePoint::new(0.5, -0.5), 5.0).unwrap();
        assert_eq!(
            j,
            ReducedJacobian::new(-0.2, 0.0, 0.1, -1.25, 0.0, -0.2, -0.1, 0.25)
        );
    }

    #[test]
    fn jacobians_reject_nonpositive_distance() {
        let p = NormalizedImagePoint::new(0.1, 0.1);
        assert!(matches!(image_jacobian_full(p, 0.0), Err(Error::Domain(_))));
        assert!(matches!(
            image_jacobian_reduced(p, -1.0),
            Err(Error::Domain(_))
        ));
        assert!(image_point_dynamics(p, 0.0, Vector4::zeros()).is_err());
    }

    #[test]
    fn dynamics_examples() {
        let r = image_point_dynamics(
            NormalizedImagePoint::new(0.0, 0.0),
            7.0,
            Vector4::new(0.0, 0.0, 12.0, 0.0),
        )
        .unwrap();
        assert_eq!(r, Vector2::zeros());

        let r = image_point_dynamics(
            NormalizedImagePoint::new(0.5, 0.0),
            10.0,
            Vector4::new(17.5, 0.0, 15.0, 0.0),
        )
        .unwrap();
        assert_abs_diff_eq!(r.x, -1.0, epsilon = 1e-14);

        let r = image_point_dynamics(
            NormalizedImagePoint::new(0.0, 0.2),
            2.0,
            Vector4::new(0.0, 1.0, 0.0, 0.0),
        )
        .unwrap();
        assert_abs_diff_eq!(r.x, 0.0);
        assert_abs_diff_eq!(r.y, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn hit_offset() {
        assert_abs_diff_eq!(max_hit_offset(0.3, 1.0).unwrap(), 0.3);
        assert_abs_diff_eq!(max_hit_offset(0.3, 3.0).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(max_hit_offset(0.5, 50.0).unwrap(), 0.01, epsilon = 1e-15);
        assert!(max_hit_offset(0.0, 1.0).is_err());
        assert!(max_hit_offset(0.3, -1.0).is_err());
    }
}
