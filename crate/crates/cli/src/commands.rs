//! The pipeline stages. Each stage writes its artifacts into the output
//! directory and returns what it computed; gate failures are collected
//! rather than raised so the caller decides the exit code.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use lyapinit_core::dataset::{generate_dataset, Dataset, GenerationReport};
use lyapinit_core::io_util::write_atomic;
use lyapinit_core::policy::io::{load_model, save_model};
use lyapinit_core::policy::{train, TrainReport};
use lyapinit_core::sim::{
    export_batch_csv, run_batch, DistanceMode, SimConfig, Termination, Trajectory,
};
use lyapinit_core::verify::{
    compare_with_hit_radius, export_roa_csv, verify_axis, violation_summary, HitComparison,
    ViolationSummary,
};
use lyapinit_core::{Axis, MlpParams};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const GENERATION_REPORT: &str = "generation_report.txt";
pub const VERIFY_SUMMARY: &str = "verify_summary.txt";
pub const SIMULATE_SUMMARY: &str = "simulate_summary.txt";
pub const PIPELINE_SUMMARY: &str = "summary.txt";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const TRAJECTORIES_FABRICATED: &str = "trajectories_fabricated.csv";

fn tag(axis: Axis) -> &'static str {
    match axis {
        Axis::X => "x",
        Axis::Y => "y",
    }
}

pub fn dataset_file(axis: Axis) -> String {
    format!("S_{}.csv", tag(axis))
}

pub fn model_file(axis: Axis) -> String {
    format!("model_{}.json", tag(axis))
}

pub fn loss_file(axis: Axis) -> String {
    format!("loss_{}.csv", tag(axis))
}

pub fn roa_file(axis: Axis) -> String {
    format!("roa_{}.csv", tag(axis))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| {
        w.write_all(text.as_bytes())?;
        Ok(())
    })?;
    Ok(())
}

fn prepare_out(cfg: &PipelineConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    Ok(&cfg.out_dir)
}

fn require_file(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Io(format!("{}: file not found", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct GenOutput {
    pub datasets: Vec<Dataset>,
    pub reports: Vec<GenerationReport>,
    pub failures: Vec<String>,
}

pub fn gen_data(cfg: &PipelineConfig) -> Result<GenOutput, CliError> {
    cfg.validate()?;
    let out = prepare_out(cfg)?;
    let mut output = GenOutput {
        datasets: vec![],
        reports: vec![],
        failures: vec![],
    };
    let mut report_text = String::new();
    for axis in Axis::BOTH {
        let (ds, report) = generate_dataset(
            axis,
            &cfg.roi,
            cfg.sampling,
            &cfg.search,
            cfg.axis_seed(axis),
        )?;
        ds.write_csv(out.join(dataset_file(axis)))?;
        if report.infeasible_rate() > cfg.gates.max_infeasible_rate {
            output.failures.push(format!(
                "{axis}: infeasible rate {} exceeds {}",
                report.infeasible_rate(),
                cfg.gates.max_infeasible_rate
            ));
        }
        let _ = writeln!(report_text, "[{axis}]\n{}", report.to_text());
        output.datasets.push(ds);
        output.reports.push(report);
    }
    write_text(&out.join(GENERATION_REPORT), &report_text)?;
    Ok(output)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub models: Vec<MlpParams>,
    pub reports: Vec<TrainReport>,
}

impl TrainOutput {
    pub fn model(&self, axis: Axis) -> &MlpParams {
        &self.models[axis as usize]
    }
}

/// Trains both axes on the datasets found in `data_dir`.
pub fn train_models(cfg: &PipelineConfig, data_dir: &Path) -> Result<TrainOutput, CliError> {
    cfg.validate()?;
    let paths = Axis::BOTH.map(|a| require_file(data_dir.join(dataset_file(a))));
    let out = prepare_out(cfg)?;
    let mut output = TrainOutput {
        models: vec![],
        reports: vec![],
    };
    for (axis, path) in Axis::BOTH.into_iter().zip(paths) {
        let ds = Dataset::read_csv(path?, cfg.roi)?;
        if ds.axis != axis {
            return Err(CliError::Io(format!(
                "{} holds {} data",
                dataset_file(axis),
                ds.axis
            )));
        }
        let p0 = MlpParams::for_axis(
            &cfg.roi,
            axis,
            cfg.search.input_bounds.max_abs(),
            cfg.axis_seed(axis),
        )?;
        let (model, report) = train(&p0, &ds, &cfg.train)?;
        save_model(&model, out.join(model_file(axis)))?;
        write_text(&out.join(loss_file(axis)), &report.loss_csv())?;
        output.models.push(model);
        output.reports.push(report);
    }
    Ok(output)
}

/// Loads both models from `dir` and checks each was trained for its axis.
pub fn load_models(dir: &Path) -> Result<Vec<MlpParams>, CliError> {
    Axis::BOTH
        .into_iter()
        .map(|axis| {
            let path = require_file(dir.join(model_file(axis)))?;
            let model = load_model(&path)?;
            match model.axis() {
                Some(a) if a != axis => Err(CliError::Io(format!(
                    "{} holds a {a} policy",
                    path.display()
                ))),
                _ => Ok(model),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub summaries: Vec<ViolationSummary>,
    pub hits: Vec<HitComparison>,
    pub failures: Vec<String>,
}

pub fn verify_models(cfg: &PipelineConfig, models: &[MlpParams]) -> Result<VerifyOutput, CliError> {
    cfg.validate()?;
    let out = prepare_out(cfg)?;
    let mut output = VerifyOutput {
        summaries: vec![],
        hits: vec![],
        failures: vec![],
    };
    let mut text = String::new();
    for (axis, model) in Axis::BOTH.into_iter().zip(models) {
        let report = verify_axis(model, axis, &cfg.grid_for(axis))?;
        export_roa_csv(&report, out.join(roa_file(axis)))?;
        let summary = violation_summary(&report)?;
        let hit = compare_with_hit_radius(&summary, cfg.hit_check.radius, cfg.hit_check.cz)?;
        if summary.fraction > cfg.gates.max_violation_fraction {
            output.failures.push(format!(
                "{axis}: violation fraction {} exceeds {}",
                summary.fraction, cfg.gates.max_violation_fraction
            ));
        }
        let _ = writeln!(
            text,
            "[{axis}]\n{}hit_check_cz = {}\nhit_check_radius = {}\nstatic_error_bound = {}\nmax_hit_offset = {}\nhits = {}\n",
            summary.to_text(),
            hit.cz,
            hit.target_radius,
            hit.static_error_bound,
            hit.max_hit_offset,
            hit.hits
        );
        output.summaries.push(summary);
        output.hits.push(hit);
    }
    write_text(&out.join(VERIFY_SUMMARY), &text)?;
    Ok(output)
}

/// One batch of closed-loop runs over the configured initial states.
#[derive(Debug, Clone)]
pub struct SimBatch {
    pub label: &'static str,
    pub config: SimConfig,
    pub trajectories: Vec<Trajectory>,
}

impl SimBatch {
    pub fn converged(&self) -> Vec<bool> {
        self.trajectories.iter().map(converged).collect()
    }
}

/// Reached the stop distance with `V` reduced at least tenfold.
pub fn converged(t: &Trajectory) -> bool {
    let v0 = t.first().lyapunov();
    let v1 = t.last().lyapunov();
    t.termination == Termination::ReachedStop && (v1 < v0 / 10.0 || v1 == 0.0)
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub batches: Vec<SimBatch>,
}

pub fn simulate_models(cfg: &PipelineConfig, models: &[MlpParams]) -> Result<SimOutput, CliError> {
    cfg.validate()?;
    let out = prepare_out(cfg)?;
    let mut plans = vec![("true", cfg.sim, TRAJECTORIES)];
    if let Some(cz) = cfg.fabricated_cz {
        let fabricated = SimConfig {
            distance_mode: DistanceMode::Fabricated { cz },
            ..cfg.sim
        };
        plans.push(("fabricated", fabricated, TRAJECTORIES_FABRICATED));
    }
    let mut batches = vec![];
    for (label, sim, file) in plans {
        let trajectories = run_batch(&models[0], &models[1], &cfg.initial_states, &sim)?;
        export_batch_csv(&trajectories, out.join(file))?;
        batches.push(SimBatch {
            label,
            config: sim,
            trajectories,
        });
    }
    let mut text = String::from("batch,run,cz0,px0,py0,termination,t_end,V0,V_end,converged\n");
    for b in &batches {
        for (i, t) in b.trajectories.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{i},{},{},{},{:?},{},{},{},{}",
                b.label,
                t.initial.cz,
                t.initial.px,
                t.initial.py,
                t.termination,
                t.last().t,
                t.first().lyapunov(),
                t.last().lyapunov(),
                converged(t)
            );
        }
    }
    write_text(&out.join(SIMULATE_SUMMARY), &text)?;
    Ok(SimOutput { batches })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub generation: GenOutput,
    pub training: TrainOutput,
    pub verification: VerifyOutput,
    pub simulation: SimOutput,
    pub summary: String,
}

impl PipelineOutput {
    pub fn failures(&self) -> Vec<String> {
        let mut f = self.generation.failures.clone();
        f.extend(self.verification.failures.iter().cloned());
        f
    }
}

/// Runs every stage in order and writes the summary table.
pub fn pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, CliError> {
    cfg.validate()?;
    let out = prepare_out(cfg)?;
    write_text(&out.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    let generation = gen_data(cfg)?;
    let training = train_models(cfg, out)?;
    let verification = verify_models(cfg, &training.models)?;
    let simulation = simulate_models(cfg, &training.models)?;
    let summary = summary_table(&generation, &training, &verification, &simulation);
    write_text(&out.join(PIPELINE_SUMMARY), &summary)?;
    Ok(PipelineOutput {
        generation,
        training,
        verification,
        simulation,
        summary,
    })
}

pub fn summary_table(
    generation: &GenOutput,
    training: &TrainOutput,
    verification: &VerifyOutput,
    simulation: &SimOutput,
) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = format!(
        "{:<5}{:>10}{:>12}{:>12}{:>14}{:>12}{:>14}{:>12}{:>10}{:>6}\n",
        "axis",
        "retained",
        "infeasible",
        "final_mse",
        "holdout_rmse",
        "violations",
        "max_viol_cz",
        "pocket_|p|",
        "bound@cz",
        "hit"
    );
    for (i, axis) in Axis::BOTH.into_iter().enumerate() {
        let g = &generation.reports[i];
        let t = &training.reports[i];
        let v = &verification.summaries[i];
        let h = &verification.hits[i];
        let _ = writeln!(
            s,
            "{:<5}{:>10}{:>12}{:>12.5}{:>14}{:>11.2}%{:>14}{:>12}{:>10.4}{:>6}",
            axis.as_str(),
            g.retained(),
            g.infeasible,
            t.final_loss(),
            opt(t.holdout_rmse()),
            100.0 * v.fraction,
            opt(v.max_violation_cz),
            opt(v.max_abs_violation_coord),
            h.static_error_bound,
            if h.hits { "yes" } else { "no" }
        );
    }
    s.push('\n');
    let _ = writeln!(
        s,
        "{:<12}{:>5}{:>8}{:>8}{:>12}{:>12}{:>11}",
        "batch", "run", "px0", "py0", "V0", "V_end", "converged"
    );
    for b in &simulation.batches {
        for (i, t) in b.trajectories.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<12}{:>5}{:>8.2}{:>8.2}{:>12.4e}{:>12.4e}{:>11}",
                b.label,
                i,
                t.initial.px,
                t.initial.py,
                t.first().lyapunov(),
                t.last().lyapunov(),
                if converged(t) { "yes" } else { "no" }
            );
        }
    }
    s
}
