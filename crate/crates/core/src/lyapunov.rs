//! Per-axis quadratic Lyapunov candidates and their derivatives along the
//! reduced interception dynamics.
//!
//! The two image axes are treated separately: `V_x = px^2 / 2` is driven by
//! `v_x` and `V_y = py^2 / 2` by `v_y`. `D_x`, `D_y` are the time derivatives
//! of these candidates for a given state and input.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default decrease-rate weight.
pub const DEFAULT_ETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];

    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(Axis::X),
            "Y" | "y" => Ok(Axis::Y),
            other => Err(Error::InvalidInput(format!("unknown axis {other:?}"))),
        }
    }
}

/// `(px, py, vz, cz, wy)`: normalized image coordinates, approach speed,
/// object distance and gimbal yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptState {
    pub px: f64,
    pub py: f64,
    pub vz: f64,
    pub cz: f64,
    pub wy: f64,
}

impl InterceptState {
    pub fn new(px: f64, py: f64, vz: f64, cz: f64, wy: f64) -> Result<Self> {
        let s = Self { px, py, vz, cz, wy };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.px, self.py, self.vz, self.cz, self.wy];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite state {self:?}")));
        }
        if self.cz <= 0.0 {
            return Err(Error::Domain(format!(
                "object distance must be positive, got {}",
                self.cz
            )));
        }
        Ok(())
    }

    /// The image coordinate controlled along `axis`.
    pub fn coord(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.px,
            Axis::Y => self.py,
        }
    }

    pub fn with_coord(mut self, axis: Axis, value: f64) -> Self {
        match axis {
            Axis::X => self.px = value,
            Axis::Y => self.py = value,
        }
        self
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.px, self.py, self.vz, self.cz, self.wy]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            px: a[0],
            py: a[1],
            vz: a[2],
            cz: a[3],
            wy: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub vx: f64,
    pub vy: f64,
}

impl ControlInput {
    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.vx,
            Axis::Y => self.vy,
        }
    }
}

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let i = Self { lo, hi };
        i.validate()?;
        Ok(i)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!(
                "interval bounds must be finite with lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn is_within(&self, outer: &Interval) -> bool {
        self.lo >= outer.lo && self.hi <= outer.hi
    }
}

/// Box of states over which data is generated and stability is checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub px: Interval,
    pub py: Interval,
    pub vz: Interval,
    pub cz: Interval,
    pub wy: Interval,
}

impl Default for Roi {
    /// The interception case-study ranges.
    fn default() -> Self {
        Self {
            px: Interval { lo: -1.0, hi: 1.0 },
            py: Interval { lo: -1.0, hi: 1.0 },
            vz: Interval { lo: 0.1, hi: 15.0 },
            cz: Interval { lo: 0.5, hi: 50.0 },
            wy: Interval { lo: -0.2, hi: 0.2 },
        }
    }
}

impl Roi {
    pub fn validate(&self) -> Result<()> {
        for i in self.intervals() {
            i.validate()?;
        }
        if self.cz.lo <= 0.0 {
            return Err(Error::Config(
                "object distance range must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    /// Intervals in state-vector order `(px, py, vz, cz, wy)`.
    pub fn intervals(&self) -> [Interval; 5] {
        [self.px, self.py, self.vz, self.cz, self.wy]
    }

    pub fn coord(&self, axis: Axis) -> Interval {
        match axis {
            Axis::X => self.px,
            Axis::Y => self.py,
        }
    }

    pub fn contains(&self, s: &InterceptState) -> bool {
        self.intervals()
            .iter()
            .zip(s.as_array())
            .all(|(i, v)| i.contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub vx: f64,
    pub vy: f64,
    pub total: f64,
}

pub fn lyapunov_v(px: f64, py: f64) -> LyapunovValue {
    let vx = 0.5 * px * px;
    let vy = 0.5 * py * py;
    LyapunovValue {
        vx,
        vy,
        total: vx + vy,
    }
}

/// Decrease-rate shaping term, `W(p) = p^2`.
pub fn w_value(p: f64) -> f64 {
    p * p
}

fn check_cz(cz: f64) -> Result<()> {
    if !(cz > 0.0) {
        return Err(Error::Domain(format!(
            "object distance must be positive, got {cz}"
        )));
    }
    Ok(())
}

/// `dV_x/dt` for lateral command `vx`.
pub fn d_x(s: &InterceptState, vx: f64) -> Result<f64> {
    check_cz(s.cz)?;
    let px = s.px;
    Ok(px * (-vx / s.cz + s.vz * px / s.cz - (1.0 + px * px) * s.wy))
}

/// `dV_y/dt` for vertical command `vy`.
pub fn d_y(s: &InterceptState, vy: f64) -> Result<f64> {
    check_cz(s.cz)?;
    let py = s.py;
    Ok(py * (-vy / s.cz + s.vz * py / s.cz - s.px * py * s.wy))
}

pub fn d_axis(axis: Axis, s: &InterceptState, u: f64) -> Result<f64> {
    match axis {
        Axis::X => d_x(s, u),
        Axis::Y => d_y(s, u),
    }
}

/// `D` is affine in the axis input: `D(u) = slope * u + offset`.
pub(crate) fn d_affine(axis: Axis, s: &InterceptState) -> Result<(f64, f64)> {
    check_cz(s.cz)?;
    let p = s.coord(axis);
    let slope = -p / s.cz;
    let offset = d_axis(axis, s, 0.0)?;
    Ok((slope, offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn st(px: f64, py: f64, vz: f64, cz: f64, wy: f64) -> InterceptState {
        InterceptState::new(px, py, vz, cz, wy).unwrap()
    }

    #[test]
    fn v_examples() {
        let v = lyapunov_v(0.0, 0.0);
        assert_eq!((v.vx, v.vy, v.total), (0.0, 0.0, 0.0));
        let v = lyapunov_v(1.0, -1.0);
        assert_eq!((v.vx, v.vy, v.total), (0.5, 0.5, 1.0));
        let v = lyapunov_v(0.2, 0.4);
        assert_abs_diff_eq!(v.vx, 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(v.vy, 0.08, epsilon = 1e-15);
        assert_abs_diff_eq!(v.total, 0.10, epsilon = 1e-15);
    }

    #[test]
    fn d_x_examples() {
        assert_eq!(d_x(&st(0.0, 0.3, 7.0, 3.0, 0.1), 4.0).unwrap(), 0.0);
        let d = d_x(&st(0.5, 0.0, 15.0, 10.0, 0.0), 17.5).unwrap();
        assert_abs_diff_eq!(d, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d, -DEFAULT_ETA * w_value(0.5), epsilon = 1e-14);
        let d = d_x(&st(0.5, 0.0, 15.0, 10.0, 0.2), 0.0).unwrap();
        assert_abs_diff_eq!(d, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn d_y_examples() {
        assert_eq!(d_y(&st(0.4, 0.0, 7.0, 3.0, 0.1), 4.0).unwrap(), 0.0);
        let d = d_y(&st(0.0, -0.4, 10.0, 2.0, 0.0), -6.0).unwrap();
        assert_abs_diff_eq!(d, -0.4, epsilon = 1e-14);
        let d = d_y(&st(0.5, 0.5, 0.0, 1.0, 0.2), 0.0).unwrap();
        assert_abs_diff_eq!(d, -0.025, epsilon = 1e-15);
    }

    #[test]
    fn d_rejects_nonpositive_distance() {
        let s = InterceptState {
            px: 0.1,
            py: 0.1,
            vz: 1.0,
            cz: 0.0,
            wy: 0.0,
        };
        assert!(matches!(d_x(&s, 1.0), Err(Error::Domain(_))));
        assert!(matches!(d_y(&s, 1.0), Err(Error::Domain(_))));
        assert!(InterceptState::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn w_examples() {
        assert_eq!(w_value(0.0), 0.0);
        assert_eq!(w_value(0.5), 0.25);
        assert_eq!(w_value(-1.0), 1.0);
        for p in [-0.7, -1e-3, 1e-9, 0.3, 2.0] {
            assert!(w_value(p) > 0.0);
        }
    }

    #[test]
    fn d_x_is_affine_in_input() {
        let s = st(0.37, -0.2, 11.0, 4.5, -0.13);
        let (a, b) = (d_x(&s, -3.0).unwrap(), d_x(&s, 5.0).unwrap());
        let slope = (b - a) / 8.0;
        assert_abs_diff_eq!(slope, -s.px / s.cz, epsilon = 1e-12);
        let (k, c) = d_affine(Axis::X, &s).unwrap();
        assert_abs_diff_eq!(k * 2.0 + c, d_x(&s, 2.0).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn default_roi_matches_case_study() {
        let r = Roi::default();
        assert_eq!((r.px.lo, r.px.hi), (-1.0, 1.0));
        assert_eq!((r.py.lo, r.py.hi), (-1.0, 1.0));
        assert_eq!((r.wy.lo, r.wy.hi), (-0.2, 0.2));
        assert_eq!((r.vz.lo, r.vz.hi), (0.1, 15.0));
        assert_eq!((r.cz.lo, r.cz.hi), (0.5, 50.0));
        r.validate().unwrap();
    }
}
