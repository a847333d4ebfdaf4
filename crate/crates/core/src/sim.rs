//! Closed-loop simulation of the simplified interception model.
//!
//! The vehicle closes on the target at constant `vz` while the two policies
//! command the lateral velocities. Commands take effect instantaneously; the
//! policy is re-evaluated at every integrator stage.

use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{d_x, d_y, lyapunov_v, Axis, InterceptState};
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub cz: f64,
    pub px: f64,
    pub py: f64,
}

impl SimState {
    pub const fn new(cz: f64, px: f64, py: f64) -> Self {
        Self { cz, px, py }
    }

    fn axpy(&self, h: f64, r: &SimState) -> SimState {
        SimState {
            cz: self.cz + h * r.cz,
            px: self.px + h * r.px,
            py: self.py + h * r.py,
        }
    }

    pub fn lyapunov(&self) -> f64 {
        lyapunov_v(self.px, self.py).total
    }
}

/// What the policies are told the object distance is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceMode {
    TrueDistance,
    /// A constant distance fed to the policies in place of the true one.
    Fabricated {
        cz: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YawMode {
    Zero,
    /// `wy = gain * px`.
    Proportional {
        gain: f64,
    },
}

impl YawMode {
    pub fn rate(&self, px: f64) -> f64 {
        match *self {
            YawMode::Zero => 0.0,
            YawMode::Proportional { gain } => gain * px,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub vz: f64,
    pub cz_stop: f64,
    pub distance_mode: DistanceMode,
    pub yaw_mode: YawMode,
    pub integrator: Integrator,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            t_max: 10.0,
            vz: 15.0,
            cz_stop: 0.5,
            distance_mode: DistanceMode::TrueDistance,
            yaw_mode: YawMode::Zero,
            integrator: Integrator::Rk4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if !(self.cz_stop.is_finite() && self.cz_stop > 0.0) {
            return Err(Error::Config("cz_stop must be positive".into()));
        }
        if !self.vz.is_finite() {
            return Err(Error::Config("vz must be finite".into()));
        }
        if let DistanceMode::Fabricated { cz } = self.distance_mode {
            if !(cz.is_finite() && cz > 0.0) {
                return Err(Error::Config("fabricated distance must be positive".into()));
            }
        }
        if let YawMode::Proportional { gain } = self.yaw_mode {
            if !gain.is_finite() {
                return Err(Error::Config("yaw gain must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Rates `(cz', px', py')` for commands `u = (vx, vy, vz)` and yaw rate `wy`.
pub fn dynamics(s: &SimState, u: (f64, f64, f64), wy: f64) -> Result<SimState> {
    if !(s.cz > 0.0) {
        return Err(Error::Domain(format!(
            "object distance must be positive, got {}",
            s.cz
        )));
    }
    let (vx, vy, vz) = u;
    Ok(SimState {
        cz: -vz,
        px: -vx / s.cz + s.px * vz / s.cz - (1.0 + s.px * s.px) * wy,
        py: -vy / s.cz + s.py * vz / s.cz - s.px * s.py * wy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub cz: f64,
    pub px: f64,
    pub py: f64,
    pub vx_cmd: f64,
    pub vy_cmd: f64,
    pub wy_cmd: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub d_x: f64,
    pub d_y: f64,
}

impl TrajectorySample {
    pub fn state(&self) -> SimState {
        SimState::new(self.cz, self.px, self.py)
    }

    pub fn lyapunov(&self) -> f64 {
        self.v_x + self.v_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedStop,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: SimState,
    pub samples: Vec<TrajectorySample>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn first(&self) -> &TrajectorySample {
        &self.samples[0]
    }

    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().unwrap()
    }

    pub fn timed_out(&self) -> bool {
        self.termination == Termination::Timeout
    }
}

/// Six starting points at 50 m on the corners and edges of the `[-0.8, 0.8]^2` image box.
pub fn default_initial_states() -> Vec<SimState> {
    [
        (0.8, 0.8),
        (-0.8, 0.8),
        (-0.8, -0.8),
        (0.8, -0.8),
        (0.8, 0.0),
        (0.0, -0.8),
    ]
    .into_iter()
    .map(|(px, py)| SimState::new(50.0, px, py))
    .collect()
}

struct ClosedLoop<'a, PX: ?Sized, PY: ?Sized> {
    x: &'a PX,
    y: &'a PY,
    cfg: &'a SimConfig,
}

impl<PX: Policy + ?Sized, PY: Policy + ?Sized> ClosedLoop<'_, PX, PY> {
    fn commands(&self, s: &SimState) -> (f64, f64, f64) {
        let wy = self.cfg.yaw_mode.rate(s.px);
        let cz = match self.cfg.distance_mode {
            DistanceMode::TrueDistance => s.cz,
            DistanceMode::Fabricated { cz } => cz,
        };
        let seen = InterceptState {
            px: s.px,
            py: s.py,
            vz: self.cfg.vz,
            cz,
            wy,
        };
        (
            self.x.command(Axis::X, &seen),
            self.y.command(Axis::Y, &seen),
            wy,
        )
    }

    fn rate(&self, s: &SimState) -> Result<SimState> {
        let (vx, vy, wy) = self.commands(s);
        dynamics(s, (vx, vy, self.cfg.vz), wy)
    }

    fn step(&self, s: &SimState, h: f64) -> Result<SimState> {
        match self.cfg.integrator {
            Integrator::Euler => Ok(s.axpy(h, &self.rate(s)?)),
            Integrator::Rk4 => {
                let k1 = self.rate(s)?;
                let k2 = self.rate(&s.axpy(0.5 * h, &k1))?;
                let k3 = self.rate(&s.axpy(0.5 * h, &k2))?;
                let k4 = self.rate(&s.axpy(h, &k3))?;
                Ok(SimState {
                    cz: s.cz + h / 6.0 * (k1.cz + 2.0 * k2.cz + 2.0 * k3.cz + k4.cz),
                    px: s.px + h / 6.0 * (k1.px + 2.0 * k2.px + 2.0 * k3.px + k4.px),
                    py: s.py + h / 6.0 * (k1.py + 2.0 * k2.py + 2.0 * k3.py + k4.py),
                })
            }
        }
    }

    fn sample(&self, t: f64, s: &SimState) -> Result<TrajectorySample> {
        let (vx, vy, wy) = self.commands(s);
        let truth = InterceptState {
            px: s.px,
            py: s.py,
            vz: self.cfg.vz,
            cz: s.cz,
            wy,
        };
        let v = lyapunov_v(s.px, s.py);
        Ok(TrajectorySample {
            t,
            cz: s.cz,
            px: s.px,
            py: s.py,
            vx_cmd: vx,
            vy_cmd: vy,
            wy_cmd: wy,
            v_x: v.vx,
            v_y: v.vy,
            d_x: d_x(&truth, vx)?,
            d_y: d_y(&truth, vy)?,
        })
    }
}

/// Integrates the closed loop from `s0` until `cz` reaches `cz_stop` or `t_max`
/// elapses. The final step is shortened to land exactly on whichever comes first.
pub fn run<PX, PY>(
    policy_x: &PX,
    policy_y: &PY,
    s0: SimState,
    cfg: &SimConfig,
) -> Result<Trajectory>
where
    PX: Policy + ?Sized,
    PY: Policy + ?Sized,
{
    cfg.validate()?;
    if !(s0.cz > cfg.cz_stop) {
        return Err(Error::InvalidInput(format!(
            "initial distance {} must exceed the stop distance {}",
            s0.cz, cfg.cz_stop
        )));
    }
    if !(s0.px.is_finite() && s0.py.is_finite()) {
        return Err(Error::InvalidInput(
            "initial image point must be finite".into(),
        ));
    }
    let lp = ClosedLoop {
        x: policy_x,
        y: policy_y,
        cfg,
    };
    let stop_tol = 1e-9 * (1.0 + cfg.cz_stop);
    let time_tol = 1e-9 * cfg.dt;
    let mut samples = vec![lp.sample(0.0, &s0)?];
    let mut s = s0;
    let mut t = 0.0;
    let mut full_steps: u64 = 0;
    let termination = loop {
        if s.cz <= cfg.cz_stop + stop_tol {
            break Termination::ReachedStop;
        }
        if t >= cfg.t_max - time_tol {
            break Termination::Timeout;
        }
        let mut h = cfg.dt;
        if cfg.vz > 0.0 {
            h = h.min((s.cz - cfg.cz_stop) / cfg.vz);
        }
        h = h.min(cfg.t_max - t);
        let partial = h < cfg.dt - time_tol;
        s = lp.step(&s, h)?;
        if partial {
            t += h;
        } else {
            full_steps += 1;
            t = full_steps as f64 * cfg.dt;
        }
        if !(s.px.is_finite() && s.py.is_finite()) {
            return Err(Error::Domain(format!("state diverged at t = {t}")));
        }
        samples.push(lp.sample(t, &s)?);
    };
    Ok(Trajectory {
        initial: s0,
        samples,
        termination,
    })
}

/// Runs every initial state independently; results keep the input order.
pub fn run_batch<PX, PY>(
    policy_x: &PX,
    policy_y: &PY,
    initial: &[SimState],
    cfg: &SimConfig,
) -> Result<Vec<Trajectory>>
where
    PX: Policy + ?Sized,
    PY: Policy + ?Sized,
{
    initial
        .par_iter()
        .map(|s0| run(policy_x, policy_y, *s0, cfg))
        .collect()
}

const TRAJ_HEADER: [&str; 11] = [
    "t", "cz", "px", "py", "vx_cmd", "vy_cmd", "wy_cmd", "V_x", "V_y", "D_x", "D_y",
];

fn sample_record(s: &TrajectorySample) -> [String; 11] {
    [
        s.t, s.cz, s.px, s.py, s.vx_cmd, s.vy_cmd, s.wy_cmd, s.v_x, s.v_y, s.d_x, s.d_y,
    ]
    .map(|v| v.to_string())
}

pub fn write_trajectory_csv_to<W: io::Write>(traj: &Trajectory, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TRAJ_HEADER)?;
    for s in &traj.samples {
        wtr.write_record(sample_record(s))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_trajectory_csv(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    crate::io_util::write_atomic(path.as_ref(), |w| write_trajectory_csv_to(traj, w))
}

/// Concatenated trajectories, each row tagged with its run index.
pub fn write_batch_csv_to<W: io::Write>(trajs: &[Trajectory], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let header: Vec<&str> = std::iter::once("run").chain(TRAJ_HEADER).collect();
    wtr.write_record(&header)?;
    for (k, traj) in trajs.iter().enumerate() {
        for s in &traj.samples {
            let rec = sample_record(s);
            wtr.write_record(std::iter::once(k.to_string()).chain(rec))?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_batch_csv(trajs: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    crate::io_util::write_atomic(path.as_ref(), |w| write_batch_csv_to(trajs, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero(_: Axis, _: &InterceptState) -> f64 {
        0.0
    }

    #[test]
    fn dynamics_examples() {
        let r = dynamics(&SimState::new(12.0, 0.0, 0.0), (0.0, 0.0, 15.0), 0.0).unwrap();
        assert_eq!(r, SimState::new(-15.0, 0.0, 0.0));
        let r = dynamics(&SimState::new(10.0, 0.5, 0.0), (17.5, 0.0, 15.0), 0.0).unwrap();
        assert_abs_diff_eq!(r.px, -1.0, epsilon = 1e-14);
        assert!(dynamics(&SimState::new(0.0, 0.1, 0.1), (0.0, 0.0, 15.0), 0.0).is_err());
    }

    #[test]
    fn yaw_term_matches_reduced_jacobian() {
        use crate::camera::{image_point_dynamics, NormalizedImagePoint};
        use nalgebra::Vector4;
        let s = SimState::new(7.0, 0.3, -0.4);
        let r = dynamics(&s, (2.0, -1.0, 9.0), 0.15).unwrap();
        let j = image_point_dynamics(
            NormalizedImagePoint::new(s.px, s.py),
            s.cz,
            Vector4::new(2.0, -1.0, 9.0, 0.15),
        )
        .unwrap();
        assert_abs_diff_eq!(r.px, j.x, epsilon = 1e-14);
        assert_abs_diff_eq!(r.py, j.y, epsilon = 1e-14);
    }

    #[test]
    fn equilibrium_run_closes_linearly() {
        let cfg = SimConfig::default();
        let tr = run(&zero, &zero, SimState::new(50.0, 0.0, 0.0), &cfg).unwrap();
        assert_eq!(tr.termination, Termination::ReachedStop);
        assert!(tr.samples.iter().all(|s| s.px == 0.0 && s.py == 0.0));
        assert_abs_diff_eq!(tr.last().t, (50.0 - 0.5) / 15.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tr.last().cz, 0.5, epsilon = 1e-9);
        for s in &tr.samples {
            assert_abs_diff_eq!(s.cz, 50.0 - 15.0 * s.t, epsilon = 1e-9);
        }
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn timeout_run_has_expected_rows() {
        let cfg = SimConfig {
            dt: 0.01,
            t_max: 3.0,
            ..Default::default()
        };
        let tr = run(&zero, &zero, SimState::new(50.0, 0.1, 0.1), &cfg).unwrap();
        assert_eq!(tr.termination, Termination::Timeout);
        assert_eq!(tr.samples.len(), 301);
        let mut buf = Vec::new();
        write_trajectory_csv_to(&tr, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 302);
        assert!(text.starts_with("t,cz,px,py,vx_cmd,vy_cmd,wy_cmd,V_x,V_y,D_x,D_y\n"));
    }

    #[test]
    fn proportional_yaw_reports_command() {
        let cfg = SimConfig {
            yaw_mode: YawMode::Proportional { gain: 0.002 },
            ..Default::default()
        };
        let tr = run(&zero, &zero, SimState::new(20.0, 0.5, 0.2), &cfg).unwrap();
        assert_abs_diff_eq!(tr.first().wy_cmd, 0.001, epsilon = 1e-15);
    }

    #[test]
    fn rejects_start_inside_stop_distance() {
        let cfg = SimConfig::default();
        assert!(run(&zero, &zero, SimState::new(0.4, 0.0, 0.0), &cfg).is_err());
        let bad = SimConfig {
            dt: 0.0,
            ..Default::default()
        };
        assert!(run(&zero, &zero, SimState::new(10.0, 0.0, 0.0), &bad).is_err());
    }

    #[test]
    fn batch_export_has_one_block_per_run() {
        let cfg = SimConfig::default();
        let runs = run_batch(&zero, &zero, &default_initial_states()[..], &cfg).unwrap();
        assert_eq!(runs.len(), 6);
        let mut buf = Vec::new();
        write_batch_csv_to(&runs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut ids: Vec<&str> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        ids.dedup();
        assert_eq!(ids, vec!["0", "1", "2", "3", "4", "5"]);
    }
}
