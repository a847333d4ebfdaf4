//! Sample-based almost-Lyapunov check of a trained policy.
//!
//! The sign of `D` is evaluated exactly on a dense grid over a 2-D slice of
//! the RoI (image coordinate x object distance, remaining states fixed).
//! Points with `D > 0` are violations; the pocket they form near the image
//! center bounds the static error the policy leaves behind.

use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::max_hit_offset;
use crate::error::{Error, Result};
use crate::lyapunov::{d_axis, Axis, InterceptState, Interval, Roi};
use crate::policy::Policy;

/// `|D|` at or below this is classified as boundary rather than a violation.
pub const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Sweep {
    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }

    fn validate(&self, name: &str, within: Interval) -> Result<()> {
        if self.count < 2 {
            return Err(Error::Config(format!(
                "{name} sweep needs at least 2 points, got {}",
                self.count
            )));
        }
        if !(self.min < self.max) {
            return Err(Error::Config(format!(
                "{name} sweep needs min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.min < within.lo || self.max > within.hi {
            return Err(Error::Config(format!(
                "{name} sweep [{}, {}] leaves the RoI [{}, {}]",
                self.min, self.max, within.lo, within.hi
            )));
        }
        Ok(())
    }
}

/// A 2-D slice: the axis image coordinate and `cz` are swept, the rest is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub vz: f64,
    pub wy: f64,
    /// Value of the image coordinate of the other axis.
    pub other_coord: f64,
    pub coord: Sweep,
    pub cz: Sweep,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::slice(200)
    }
}

impl GridSpec {
    /// `vz = 15`, `wy = 0` over the full coordinate and distance ranges, `n x n` points.
    pub fn slice(n: usize) -> Self {
        let roi = Roi::default();
        Self {
            vz: 15.0,
            wy: 0.0,
            other_coord: 0.0,
            coord: Sweep {
                min: roi.px.lo,
                max: roi.px.hi,
                count: n,
            },
            cz: Sweep {
                min: roi.cz.lo,
                max: roi.cz.hi,
                count: n,
            },
        }
    }

    pub fn new(
        roi: &Roi,
        vz: f64,
        wy: f64,
        other_coord: f64,
        coord: Sweep,
        cz: Sweep,
    ) -> Result<Self> {
        let g = Self {
            vz,
            wy,
            other_coord,
            coord,
            cz,
        };
        g.validate(roi)?;
        Ok(g)
    }

    pub fn validate(&self, roi: &Roi) -> Result<()> {
        self.coord.validate("image coordinate", roi.px)?;
        self.cz.validate("object distance", roi.cz)?;
        if !roi.vz.contains(self.vz) || !roi.wy.contains(self.wy) {
            return Err(Error::Config(format!(
                "fixed states vz = {}, wy = {} leave the RoI",
                self.vz, self.wy
            )));
        }
        if !roi.py.contains(self.other_coord) {
            return Err(Error::Config(
                "fixed image coordinate leaves the RoI".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coord.count * self.cz.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// State at `(cz_index, coord_index)` for `axis`.
    pub fn state(&self, axis: Axis, cz_index: usize, coord_index: usize) -> InterceptState {
        let c = self.coord.value(coord_index);
        let (px, py) = match axis {
            Axis::X => (c, self.other_coord),
            Axis::Y => (self.other_coord, c),
        };
        InterceptState {
            px,
            py,
            vz: self.vz,
            cz: self.cz.value(cz_index),
            wy: self.wy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DSign {
    Negative,
    Boundary,
    Positive,
}

impl DSign {
    pub fn classify(d: f64) -> Self {
        if d > BOUNDARY_EPS {
            DSign::Positive
        } else if d < -BOUNDARY_EPS {
            DSign::Negative
        } else {
            DSign::Boundary
        }
    }

    pub fn as_i8(&self) -> i8 {
        match self {
            DSign::Negative => -1,
            DSign::Boundary => 0,
            DSign::Positive => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoaPoint {
    pub cz_index: usize,
    pub coord_index: usize,
    pub state: InterceptState,
    pub u: f64,
    pub d: f64,
    pub sign: DSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoaReport {
    pub axis: Axis,
    pub grid: GridSpec,
    /// Row-major by `cz_index`, then `coord_index`.
    pub points: Vec<RoaPoint>,
}

impl RoaReport {
    pub fn count(&self, sign: DSign) -> usize {
        self.points.iter().filter(|p| p.sign == sign).count()
    }

    pub fn violation_fraction(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.count(DSign::Positive) as f64 / self.points.len() as f64
    }
}

/// Evaluates `sgn(D)` for the policy command on every grid point.
pub fn verify_axis<P: Policy + ?Sized>(
    policy: &P,
    axis: Axis,
    grid: &GridSpec,
) -> Result<RoaReport> {
    let n_coord = grid.coord.count;
    let points = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n_coord, k % n_coord);
            let state = grid.state(axis, i, j);
            let u = policy.command(axis, &state);
            let d = d_axis(axis, &state, u)?;
            Ok(RoaPoint {
                cz_index: i,
                coord_index: j,
                state,
                u,
                d,
                sign: DSign::classify(d),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RoaReport {
        axis,
        grid: *grid,
        points,
    })
}

pub fn write_roa_csv_to<W: io::Write>(report: &RoaReport, mut w: W) -> Result<()> {
    let g = &report.grid;
    writeln!(
        w,
        "# axis={} vz={} wy={} other_coord={}",
        report.axis, g.vz, g.wy, g.other_coord
    )?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["cz_index", "coord_index", "coord", "cz", "u", "d", "sign"])?;
    for p in &report.points {
        wtr.write_record([
            p.cz_index.to_string(),
            p.coord_index.to_string(),
            p.state.coord(report.axis).to_string(),
            p.state.cz.to_string(),
            p.u.to_string(),
            p.d.to_string(),
            p.sign.as_i8().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_roa_csv(report: &RoaReport, path: impl AsRef<Path>) -> Result<()> {
    crate::io_util::write_atomic(path.as_ref(), |w| write_roa_csv_to(report, w))
}

/// Largest `|coordinate|` with `D > 0` in one `cz` row of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pocket {
    pub cz_index: usize,
    pub cz: f64,
    pub max_abs_coord: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationSummary {
    pub axis: Axis,
    pub total: usize,
    pub violations: usize,
    pub boundary: usize,
    pub fraction: f64,
    /// Rows containing at least one violation, in increasing `cz`.
    pub pockets: Vec<Pocket>,
    pub max_violation_cz: Option<f64>,
    pub min_violation_cz: Option<f64>,
    pub max_abs_violation_coord: Option<f64>,
    cz_values: Vec<f64>,
}

impl ViolationSummary {
    /// Predicted static error at the grid row closest to `cz`; zero if that row has no violation.
    pub fn static_error_bound_near(&self, cz: f64) -> f64 {
        let Some((row, _)) = self
            .cz_values
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - cz).abs().total_cmp(&(b.1 - cz).abs()))
        else {
            return 0.0;
        };
        self.pockets
            .iter()
            .find(|p| p.cz_index == row)
            .map_or(0.0, |p| p.max_abs_coord)
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let mut s = format!(
            "axis = \"{}\"\ngrid_points = {}\nviolations = {}\nboundary = {}\nviolation_fraction = {}\nmin_violation_cz = {}\nmax_violation_cz = {}\nmax_abs_violation_coord = {}\n",
            self.axis,
            self.total,
            self.violations,
            self.boundary,
            self.fraction,
            opt(self.min_violation_cz),
            opt(self.max_violation_cz),
            opt(self.max_abs_violation_coord),
        );
        for p in &self.pockets {
            s.push_str(&format!(
                "pocket cz = {} max_abs_coord = {}\n",
                p.cz, p.max_abs_coord
            ));
        }
        s
    }
}

pub fn violation_summary(report: &RoaReport) -> Result<ViolationSummary> {
    if report.points.is_empty() {
        return Err(Error::Domain("empty verification report".into()));
    }
    let mut pockets: Vec<Pocket> = Vec::new();
    for p in report.points.iter().filter(|p| p.sign == DSign::Positive) {
        let c = p.state.coord(report.axis).abs();
        match pockets.iter_mut().find(|q| q.cz_index == p.cz_index) {
            Some(q) => q.max_abs_coord = q.max_abs_coord.max(c),
            None => pockets.push(Pocket {
                cz_index: p.cz_index,
                cz: p.state.cz,
                max_abs_coord: c,
            }),
        }
    }
    pockets.sort_by_key(|p| p.cz_index);
    let violations = report.count(DSign::Positive);
    let cz_values = report.grid.cz.values();
    Ok(ViolationSummary {
        axis: report.axis,
        total: report.points.len(),
        violations,
        boundary: report.count(DSign::Boundary),
        fraction: violations as f64 / report.points.len() as f64,
        max_violation_cz: pockets.iter().map(|p| p.cz).reduce(f64::max),
        min_violation_cz: pockets.iter().map(|p| p.cz).reduce(f64::min),
        max_abs_violation_coord: pockets.iter().map(|p| p.max_abs_coord).reduce(f64::max),
        pockets,
        cz_values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitComparison {
    pub cz: f64,
    pub target_radius: f64,
    pub static_error_bound: f64,
    pub max_hit_offset: f64,
    /// The residual offset stays inside the target's image.
    pub hits: bool,
}

/// Compares the static-error bound at `cz` with the largest offset that still hits a target of radius `r`.
pub fn compare_with_hit_radius(
    summary: &ViolationSummary,
    r: f64,
    cz: f64,
) -> Result<HitComparison> {
    let limit = max_hit_offset(r, cz)?;
    let bound = summary.static_error_bound_near(cz);
    Ok(HitComparison {
        cz,
        target_radius: r,
        static_error_bound: bound,
        max_hit_offset: limit,
        hits: bound <= limit,
    })
}
