//! Synthesis of `(state, input)` datasets that satisfy the Lyapunov decrease
//! condition `D < 0` with `D` as close as possible to `-eta * W`.
//!
//! For each sampled state the searched input is the minimizer of
//! `|D(u) + eta * W(p)|` over the configured input bounds, subject to `D < 0`.
//! Because `D` is affine in the input, the unconstrained minimizer has a
//! closed form; the numeric scheme finds it by a coarse scan followed by a
//! golden-section refinement and is kept as an independent route.

use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{
    d_affine, d_axis, w_value, Axis, InterceptState, Interval, Roi, DEFAULT_ETA,
};

/// Coarse scan resolution of the numeric search.
pub const SCAN_POINTS: usize = 1024;

/// Image coordinates with magnitude at or below this are treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchScheme {
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub eta: f64,
    pub input_bounds: Interval,
    pub tolerance: f64,
    pub scheme: SearchScheme,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            input_bounds: Interval {
                lo: -30.0,
                hi: 30.0,
            },
            tolerance: 1e-8,
            scheme: SearchScheme::Numeric,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        self.input_bounds.validate()
    }
}

/// Input that makes `D = -eta * W` exactly, without bounds.
pub fn solve_input_closed_form(axis: Axis, s: &InterceptState, eta: f64) -> Result<f64> {
    s.validate()?;
    let p = s.coord(axis);
    if p.abs() <= DEGENERATE_EPS {
        return Err(Error::DegenerateState { axis });
    }
    let u = match axis {
        Axis::X => s.vz * s.px + eta * s.cz * s.px - s.cz * (1.0 + s.px * s.px) * s.wy,
        Axis::Y => s.vz * s.py + eta * s.cz * s.py - s.cz * s.px * s.py * s.wy,
    };
    Ok(u)
}

/// Limit of the closed-form input as the axis coordinate goes to zero. Used
/// to label states on the degenerate line, where `D` vanishes for every input.
pub fn limit_input(axis: Axis, s: &InterceptState) -> f64 {
    match axis {
        Axis::X => -s.cz * (1.0 + s.px * s.px) * s.wy,
        Axis::Y => 0.0,
    }
}

/// Golden-section minimization of a unimodal `f` on `[a, b]`.
pub fn golden_section_min<F>(
    f: F,
    mut a: f64,
    mut b: f64,
    x_tol: f64,
    max_iter: usize,
) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() <= x_tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Bounded search for the input minimizing `|D + eta * W|` subject to `D < 0`.
pub fn solve_input_numeric(axis: Axis, s: &InterceptState, cfg: &SearchConfig) -> Result<f64> {
    cfg.validate()?;
    s.validate()?;
    let bounds = cfg.input_bounds;
    let target = -cfg.eta * w_value(s.coord(axis));
    let d = |u: f64| d_axis(axis, s, u).unwrap_or(f64::NAN);
    let objective = |u: f64| {
        let du = d(u);
        if du < 0.0 {
            (du - target).abs()
        } else {
            f64::INFINITY
        }
    };

    let step = bounds.width() / (SCAN_POINTS - 1) as f64;
    let grid = |i: usize| {
        if i == SCAN_POINTS - 1 {
            bounds.hi
        } else {
            bounds.lo + i as f64 * step
        }
    };

    let mut best_i = 0;
    let mut best_obj = f64::INFINITY;
    let mut min_d = (f64::INFINITY, bounds.lo);
    for i in 0..SCAN_POINTS {
        let u = grid(i);
        let du = d(u);
        if du < min_d.0 {
            min_d = (du, u);
        }
        let o = objective(u);
        if o < best_obj {
            best_obj = o;
            best_i = i;
        }
    }
    if !best_obj.is_finite() {
        return Err(Error::Infeasible {
            lo: bounds.lo,
            hi: bounds.hi,
            best_u: min_d.1,
            best_d: min_d.0,
        });
    }

    let a = grid(best_i.saturating_sub(1));
    let b = grid((best_i + 1).min(SCAN_POINTS - 1));
    let x_tol = 1e-13 * (1.0 + bounds.max_abs());
    let (u_gs, o_gs) = golden_section_min(objective, a, b, x_tol, 200);

    let mut best = (grid(best_i), best_obj);
    for (u, o) in [(u_gs, o_gs), (a, objective(a)), (b, objective(b))] {
        if o < best.1 {
            best = (u, o);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveOutcome {
    /// `D + eta * W` is within tolerance of zero.
    Solved,
    /// The bounds cut the search off before the target; `D < 0` still holds.
    Clamped,
    /// Axis coordinate is zero; labelled with the limit input.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solution {
    pub input: f64,
    pub achieved_d: f64,
    pub outcome: SolveOutcome,
}

/// Bounded solve for one state, dispatching on the configured scheme.
pub fn solve_bounded(axis: Axis, s: &InterceptState, cfg: &SearchConfig) -> Result<Solution> {
    cfg.validate()?;
    s.validate()?;
    let p = s.coord(axis);
    if p.abs() <= DEGENERATE_EPS {
        let input = cfg.input_bounds.clamp(limit_input(axis, s));
        return Ok(Solution {
            input,
            achieved_d: d_axis(axis, s, input)?,
            outcome: SolveOutcome::Degenerate,
        });
    }
    let input = match cfg.scheme {
        SearchScheme::Numeric => solve_input_numeric(axis, s, cfg)?,
        SearchScheme::ClosedForm => {
            let u = cfg
                .input_bounds
                .clamp(solve_input_closed_form(axis, s, cfg.eta)?);
            let du = d_axis(axis, s, u)?;
            if du >= 0.0 {
                // D is monotone in u, so the end with the smaller D is the best infeasible point.
                let (slope, offset) = d_affine(axis, s)?;
                let best_u = if slope < 0.0 {
                    cfg.input_bounds.hi
                } else {
                    cfg.input_bounds.lo
                };
                return Err(Error::Infeasible {
                    lo: cfg.input_bounds.lo,
                    hi: cfg.input_bounds.hi,
                    best_u,
                    best_d: slope * best_u + offset,
                });
            }
            u
        }
    };
    let achieved_d = d_axis(axis, s, input)?;
    let residual = (achieved_d + cfg.eta * w_value(p)).abs();
    let outcome = if residual <= cfg.tolerance {
        SolveOutcome::Solved
    } else {
        SolveOutcome::Clamped
    };
    Ok(Solution {
        input,
        achieved_d,
        outcome,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingScheme {
    UniformRandom {
        n: usize,
    },
    /// `points_per_dim` evenly spaced values along each of the five state dimensions.
    Grid {
        points_per_dim: usize,
    },
}

impl SamplingScheme {
    pub fn count(&self) -> usize {
        match *self {
            SamplingScheme::UniformRandom { n } => n,
            SamplingScheme::Grid { points_per_dim } => points_per_dim.pow(5),
        }
    }
}

fn linspace(i: Interval, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![i.mid()],
        _ => (0..k)
            .map(|j| {
                if j == k - 1 {
                    i.hi
                } else {
                    i.lo + i.width() * j as f64 / (k - 1) as f64
                }
            })
            .collect(),
    }
}

/// Draws states inside `roi`. Deterministic for a given seed.
pub fn sample_roi(roi: &Roi, scheme: SamplingScheme, seed: u64) -> Vec<InterceptState> {
    match scheme {
        SamplingScheme::UniformRandom { n } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let iv = roi.intervals();
            (0..n)
                .map(|_| {
                    let mut a = [0.0; 5];
                    for (v, i) in a.iter_mut().zip(iv.iter()) {
                        *v = rng.random_range(i.lo..=i.hi);
                    }
                    InterceptState::from_array(a)
                })
                .collect()
        }
        SamplingScheme::Grid { points_per_dim } => {
            let axes: Vec<Vec<f64>> = roi
                .intervals()
                .iter()
                .map(|&i| linspace(i, points_per_dim))
                .collect();
            let k = points_per_dim;
            (0..scheme.count())
                .map(|mut idx| {
                    let mut a = [0.0; 5];
                    for d in (0..5).rev() {
                        a[d] = axes[d][idx % k];
                        idx /= k;
                    }
                    InterceptState::from_array(a)
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub axis: Axis,
    pub state: InterceptState,
    /// Searched command for the axis, m/s.
    pub input: f64,
    pub achieved_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub axis: Axis,
    pub samples: Vec<LabeledSample>,
    pub roi: Roi,
    /// Unknown when the dataset was read back from CSV.
    pub eta: Option<f64>,
    pub seed: Option<u64>,
}

/// Counts per outcome of a generation run. Infeasible states are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GenerationReport {
    pub axis: Option<Axis>,
    pub requested: usize,
    pub solved: usize,
    pub clamped: usize,
    pub degenerate: usize,
    pub infeasible: usize,
}

impl GenerationReport {
    pub fn retained(&self) -> usize {
        self.solved + self.clamped + self.degenerate
    }

    pub fn infeasible_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.infeasible as f64 / self.requested as f64
        }
    }

    pub fn to_text(&self) -> String {
        let axis = self.axis.map(|a| a.as_str()).unwrap_or("-");
        format!(
            "axis = \"{axis}\"\nrequested = {}\nsolved = {}\nclamped_at_bound = {}\ndegenerate = {}\ninfeasible = {}\nretained = {}\n",
            self.requested,
            self.solved,
            self.clamped,
            self.degenerate,
            self.infeasible,
            self.retained()
        )
    }
}

/// Samples `roi`, labels every state and keeps the ones with a valid label.
/// Output order follows the sampled-state order regardless of thread count.
pub fn generate_dataset(
    axis: Axis,
    roi: &Roi,
    sampling: SamplingScheme,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<(Dataset, GenerationReport)> {
    roi.validate()?;
    cfg.validate()?;
    let states = sample_roi(roi, sampling, seed);
    let solved: Vec<Result<Solution>> = states
        .par_iter()
        .map(|s| solve_bounded(axis, s, cfg))
        .collect();

    let mut report = GenerationReport {
        axis: Some(axis),
        requested: states.len(),
        ..Default::default()
    };
    let mut samples = Vec::with_capacity(states.len());
    for (state, res) in states.into_iter().zip(solved) {
        match res {
            Ok(sol) => {
                match sol.outcome {
                    SolveOutcome::Solved => report.solved += 1,
                    SolveOutcome::Clamped => report.clamped += 1,
                    SolveOutcome::Degenerate => report.degenerate += 1,
                }
                samples.push(LabeledSample {
                    axis,
                    state,
                    input: sol.input,
                    achieved_d: sol.achieved_d,
                });
            }
            Err(Error::Infeasible { .. }) => report.infeasible += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((
        Dataset {
            axis,
            samples,
            roi: *roi,
            eta: Some(cfg.eta),
            seed: Some(seed),
        },
        report,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    axis: Axis,
    px: f64,
    py: f64,
    vz: f64,
    cz: f64,
    wy: f64,
    u: f64,
    achieved_d: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_csv_to<W: io::Write>(&self, w: W) -> Result<()> {
        // Header is written by hand so empty datasets still carry it.
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(["axis", "px", "py", "vz", "cz", "wy", "u", "achieved_d"])?;
        for s in &self.samples {
            wtr.serialize(CsvRow {
                axis: s.axis,
                px: s.state.px,
                py: s.state.py,
                vz: s.state.vz,
                cz: s.state.cz,
                wy: s.state.wy,
                u: s.input,
                achieved_d: s.achieved_d,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io_util::write_atomic(path.as_ref(), |f| self.write_csv_to(f))
    }

    /// Reads a dataset CSV. All rows must share one axis; `roi` is attached as metadata.
    pub fn read_csv_from<R: io::Read>(r: R, roi: Roi) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut samples = Vec::new();
        let mut axis = None;
        for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row?;
            if *axis.get_or_insert(row.axis) != row.axis {
                return Err(Error::Dataset(format!(
                    "row {} has axis {} but the dataset started with {}",
                    line + 2,
                    row.axis,
                    axis.unwrap()
                )));
            }
            let state = InterceptState {
                px: row.px,
                py: row.py,
                vz: row.vz,
                cz: row.cz,
                wy: row.wy,
            };
            state
                .validate()
                .map_err(|e| Error::Dataset(format!("row {}: {e}", line + 2)))?;
            samples.push(LabeledSample {
                axis: row.axis,
                state,
                input: row.u,
                achieved_d: row.achieved_d,
            });
        }
        let axis = axis.ok_or_else(|| Error::Dataset("dataset has no rows".into()))?;
        Ok(Self {
            axis,
            samples,
            roi,
            eta: None,
            seed: None,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>, roi: Roi) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read_csv_from(io::BufReader::new(f), roi)
    }
}
