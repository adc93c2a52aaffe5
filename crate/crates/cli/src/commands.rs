//! One function per subcommand. Each writes its CSV outputs into `out` and
//! returns the JSON result block that goes into `summary.json`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use isd_core::aircraft::{detect_emergence, generate_synthetic_sequence, ImageSequence, Track};
use isd_core::dp::{extract_stopping_set, solve_with, write_value_csv};
use isd_core::montecarlo::{
    occupation_study, run_trials, soc_sweep, CostExperiment, ExperimentSpec, SweepResult,
};
use isd_core::occupation::trace_detector;
use isd_core::signal::{scripted_trajectory, simulate_trajectory};
use isd_core::stopping::{run_with_resets, write_alarm_csv};
use isd_core::{Belief, State, StoppingRule, Trajectory};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{belief_from, RunConfig};
use crate::error::{in_section, CliError};

/// Files written plus the command-specific result.
pub struct Outcome {
    pub outputs: Vec<String>,
    pub result: Value,
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = out.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(&path, e))
}

fn trajectory_for(cfg: &RunConfig) -> Result<Trajectory, CliError> {
    let model_cfg = RunConfig::section(&cfg.model, "model")?;
    let default_sim = Default::default();
    let sim = cfg.simulate.as_ref().unwrap_or(&default_sim);
    let model = model_cfg.transition("model")?;
    let obs = model_cfg.observation("model")?;
    match &sim.switches {
        Some(switches) => {
            if let Some(bad) = switches.iter().find(|s| **s > sim.length) {
                return Err(CliError::Invalid {
                    field: "simulate.switches".into(),
                    reason: format!("switch time {bad} exceeds length {}", sim.length),
                });
            }
            scripted_trajectory(switches, sim.length, &obs, cfg.seed)
                .map_err(in_section("simulate"))
        }
        None => {
            let initial = match &sim.initial_belief {
                Some(p) => belief_from("simulate.initial_belief", p)?,
                None => model.stationary().map_err(in_section("model"))?,
            };
            simulate_trajectory(&model, &obs, &initial, sim.length, cfg.seed)
                .map_err(in_section("simulate"))
        }
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let traj = trajectory_for(cfg)?;
    traj.write_csv(create(out, "trajectory.csv")?)?;
    let anomalous = traj.anomalous_count(1, traj.len() + 1);
    Ok(Outcome {
        outputs: vec!["trajectory.csv".into()],
        result: json!({
            "length": traj.len(),
            "anomalous_steps": anomalous,
            "first_anomalous": traj.states.iter().position(|s| *s == State::Anomalous),
        }),
    })
}

pub fn detect(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let model_cfg = RunConfig::section(&cfg.model, "model")?;
    let det = RunConfig::section(&cfg.detect, "detect")?;
    let data_model = model_cfg.transition("model")?;
    let obs = model_cfg.observation("model")?;
    let rule = StoppingRule::new(det.threshold).map_err(in_section("detect"))?;
    if det.variants.is_empty() {
        return Err(CliError::Invalid {
            field: "detect.variants".into(),
            reason: "needs at least one rule variant".into(),
        });
    }
    let initial = match &det.initial_belief {
        Some(p) => belief_from("detect.initial_belief", p)?,
        None => data_model.stationary().map_err(in_section("model"))?,
    };
    let traj = trajectory_for(cfg)?;
    let mut outputs = vec!["trajectory.csv".to_string()];
    traj.write_csv(create(out, "trajectory.csv")?)?;
    let mut per_variant = Vec::new();
    for variant in &det.variants {
        let filter_model = variant.filter_model(&data_model);
        let trace = trace_detector(&traj.observations, &filter_model, &obs, &initial)?;
        let trace_name = format!("trace_{}.csv", variant.name());
        write_detector_trace(&trace, &traj, det.threshold, create(out, &trace_name)?)?;
        let alarms = run_with_resets(
            &traj,
            &filter_model,
            &obs,
            &rule,
            &initial,
            det.reset_policy,
        )?;
        let alarm_name = format!("alarms_{}.csv", variant.name());
        write_alarm_csv(alarms.iter().map(|a| (0u64, a)), create(out, &alarm_name)?)?;
        outputs.push(trace_name);
        outputs.push(alarm_name);
        per_variant.push(json!({
            "variant": variant,
            "first_alarm": alarms.first().map(|a| a.alarm_time),
            "first_alarm_is_false": alarms.first().map(|a| a.is_false_alarm),
            "alarms": alarms.len(),
            "false_alarms": alarms.iter().filter(|a| a.is_false_alarm).count(),
            "alarm_times": alarms.iter().map(|a| a.alarm_time).collect::<Vec<_>>(),
        }));
    }
    Ok(Outcome {
        outputs,
        result: json!({
            "length": traj.len(),
            "first_anomalous": traj.states.iter().position(|s| *s == State::Anomalous),
            "variants": per_variant,
        }),
    })
}

/// Uninterrupted posterior and occupation trace (no restarts).
fn write_detector_trace<W: std::io::Write>(
    trace: &[isd_core::occupation::DetectorStep],
    traj: &Trajectory,
    threshold: f64,
    writer: W,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "k",
        "state",
        "observation",
        "belief_e1",
        "belief_e2",
        "occ_e1",
        "occ_e2",
        "log_normalizer",
        "above_threshold",
    ])
    .map_err(isd_core::Error::from)?;
    for s in trace {
        let y = if s.k == 0 {
            String::new()
        } else {
            traj.observations[s.k - 1].to_string()
        };
        w.write_record([
            s.k.to_string(),
            traj.states[s.k].label().to_string(),
            y,
            s.belief.get(0).to_string(),
            s.belief.get(1).to_string(),
            s.occupation(0).to_string(),
            s.occupation(1).to_string(),
            s.log_normalizer.to_string(),
            u8::from(s.belief.get(1) >= threshold).to_string(),
        ])
        .map_err(isd_core::Error::from)?;
    }
    w.flush().map_err(isd_core::Error::from)?;
    Ok(())
}

fn experiment(cfg: &RunConfig) -> Result<&ExperimentSpec, CliError> {
    let spec = RunConfig::section(&cfg.experiment, "experiment")?;
    spec.validate().map_err(in_section("experiment"))?;
    Ok(spec)
}

fn write_sweep(result: &SweepResult, out: &Path, name: &str) -> Result<(), CliError> {
    result.write_csv(create(out, name)?)?;
    Ok(())
}

pub fn montecarlo(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let spec = experiment(cfg)?;
    let result = run_trials(spec)?;
    write_sweep(&result, out, "sweep.csv")?;
    Ok(Outcome {
        outputs: vec!["sweep.csv".into()],
        result: serde_json::to_value(&result)?,
    })
}

pub fn soc(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let spec = experiment(cfg)?;
    let report = soc_sweep(spec)?;
    write_sweep(&report.result, out, "soc.csv")?;
    Ok(Outcome {
        outputs: vec!["soc.csv".into()],
        result: serde_json::to_value(&report)?,
    })
}

#[derive(Serialize)]
struct OccupationCheck {
    sigma2: f64,
    mean_delay: Option<f64>,
    mean_occupation_estimate: Option<f64>,
    gap: Option<f64>,
    /// Estimate ≤ realised delay + 3 standard errors of the paired gap.
    underestimates: bool,
}

pub fn occstudy(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let spec = experiment(cfg)?;
    let result = occupation_study(spec)?;
    write_sweep(&result, out, "occupation_study.csv")?;
    let checks: Vec<OccupationCheck> = result
        .rows
        .iter()
        .map(|r| OccupationCheck {
            sigma2: r.sigma2,
            mean_delay: r.mean_delay,
            mean_occupation_estimate: r.mean_occupation_estimate,
            gap: r.delay_gap(),
            underestimates: match (r.delay_gap(), r.stderr_delay_gap) {
                (Some(g), Some(se)) => g >= -3.0 * se,
                _ => false,
            },
        })
        .collect();
    Ok(Outcome {
        outputs: vec!["occupation_study.csv".into()],
        result: json!({ "rows": result.rows, "checks": checks }),
    })
}

pub fn dp(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let d = RunConfig::section(&cfg.dp, "dp")?;
    let model = isd_core::TransitionModel::new(d.rho, d.a).map_err(in_section("dp"))?;
    let obs = isd_core::GaussianPair::new(d.mu1, d.mu2, d.sigma2).map_err(in_section("dp"))?;
    let (grid, vf) = solve_with(&model, &obs, d.c, &d.solver).map_err(in_section("dp.solver"))?;
    let set = extract_stopping_set(&vf, &grid, d.solver.stop_tolerance)?;
    write_value_csv(
        &vf,
        &grid,
        d.solver.stop_tolerance,
        create(out, "value_function.csv")?,
    )?;
    let mut outputs = vec!["value_function.csv".to_string()];
    let mut result = json!({
        "threshold": set.threshold,
        "threshold_index": set.index,
        "iterations": vf.iterations,
        "sup_norm_residual": vf.sup_norm_residual,
        "max_second_difference": vf.max_second_difference(),
        "value_at_zero": vf.values[0],
        "value_at_one": vf.values[vf.values.len() - 1],
    });
    if let Some(v) = &d.validation {
        let initial = belief_from("dp.validation.initial_belief", &v.initial_belief)?;
        let validation =
            validate_threshold(cfg.seed, d.c, model, obs, initial, v, set.threshold, out)?;
        outputs.push("cost_sweep.csv".into());
        result["validation"] = validation;
    }
    Ok(Outcome { outputs, result })
}

#[allow(clippy::too_many_arguments)]
fn validate_threshold(
    seed: u64,
    c: f64,
    model: isd_core::TransitionModel,
    obs: isd_core::GaussianPair,
    initial: Belief,
    v: &crate::config::DpValidation,
    dp_threshold: f64,
    out: &Path,
) -> Result<Value, CliError> {
    if v.thresholds.len() < 2 {
        return Err(CliError::Invalid {
            field: "dp.validation.thresholds".into(),
            reason: "needs at least two thresholds".into(),
        });
    }
    let mut sweep_points = v.thresholds.clone();
    sweep_points.sort_by(f64::total_cmp);
    let cell = sweep_points
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    let mut all = sweep_points.clone();
    all.push(dp_threshold);
    let exp = CostExperiment {
        data_model: model,
        filter_model: model,
        obs,
        initial,
        c,
        horizon: v.horizon,
        trials: v.trials,
        seed_base: seed,
    };
    let costs = exp.run(&all).map_err(in_section("dp.validation"))?;
    let dp_index = all.len() - 1;
    let mut w = csv::Writer::from_writer(create(out, "cost_sweep.csv")?);
    w.write_record([
        "threshold",
        "trials",
        "censored",
        "cost_state_form",
        "stderr_state_form",
        "cost_cme_form",
        "stderr_cme_form",
        "is_dp_threshold",
    ])
    .map_err(isd_core::Error::from)?;
    // Thresholds with censored runs have biased means; they are reported
    // but not eligible as the minimiser.
    let reports: Vec<Option<isd_core::stopping::CostReport>> =
        (0..all.len()).map(|i| costs.report(i).ok()).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, (h, r)) in all.iter().zip(&reports).enumerate() {
        let cell_of = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        if let Some(r) = r {
            if i != dp_index && r.censored == 0 && best.is_none_or(|(_, b)| r.cost_state_form < b) {
                best = Some((i, r.cost_state_form));
            }
        }
        w.write_record([
            h.to_string(),
            cell_of(r.map(|r| r.trials as f64)),
            r.map_or(v.trials, |r| r.censored).to_string(),
            cell_of(r.map(|r| r.cost_state_form)),
            cell_of(r.map(|r| r.stderr_state_form)),
            cell_of(r.map(|r| r.cost_cme_form)),
            cell_of(r.map(|r| r.stderr_cme_form)),
            u8::from(i == dp_index).to_string(),
        ])
        .map_err(isd_core::Error::from)?;
    }
    w.flush().map_err(isd_core::Error::from)?;
    let at_dp = reports[dp_index].filter(|r| r.censored == 0);
    let (diff, diff_se) = match (best, at_dp) {
        (Some((b, _)), Some(_)) => {
            let (d, se) = costs.paired_difference(dp_index, b);
            (Some(d), Some(se))
        }
        _ => (None, None),
    };
    Ok(json!({
        "sweep_cell": cell,
        "argmin_threshold": best.map(|(b, _)| all[b]),
        "min_cost": best.map(|(_, c)| c),
        "min_cost_stderr": best.and_then(|(b, _)| reports[b].map(|r| r.stderr_state_form)),
        "cost_at_dp_threshold": at_dp.map(|r| r.cost_state_form),
        "cost_at_dp_threshold_stderr": at_dp.map(|r| r.stderr_state_form),
        "censored_at_dp_threshold": reports[dp_index].map_or(v.trials, |r| r.censored),
        "paired_difference": diff,
        "paired_difference_stderr": diff_se,
        "argmin_within_one_cell": best.is_some_and(|(b, _)| (all[b] - dp_threshold).abs() <= cell + 1e-12),
        "dp_cost_within_3_sigma": matches!((diff, diff_se), (Some(d), Some(se)) if d <= 3.0 * se),
    }))
}

pub fn aircraft(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let ac = RunConfig::section(&cfg.aircraft, "aircraft")?;
    ac.grid.validate().map_err(in_section("aircraft.grid"))?;
    let mut outputs = Vec::new();
    let (images, track): (ImageSequence, Option<Track>) = match (&ac.scenario, &ac.input) {
        (Some(scenario), None) => {
            let (images, track) = generate_synthetic_sequence(&ac.grid, scenario, cfg.seed)
                .map_err(in_section("aircraft.scenario"))?;
            images.write_raster(create(out, "frames.raster")?)?;
            track.write_csv(&ac.grid, create(out, "track.csv")?)?;
            outputs.push("frames.raster".into());
            outputs.push("track.csv".into());
            (images, Some(track))
        }
        (None, Some(path)) => {
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            (
                ImageSequence::read_raster(std::io::BufReader::new(file))?,
                None,
            )
        }
        _ => {
            return Err(CliError::Invalid {
                field: "aircraft".into(),
                reason: "set exactly one of `scenario` and `input`".into(),
            })
        }
    };
    let result =
        detect_emergence(&images, &ac.grid, None, ac.h_c).map_err(in_section("aircraft"))?;
    isd_core::aircraft::write_zeta_csv(&result, ac.h_c, create(out, "zeta.csv")?)?;
    outputs.push("zeta.csv".into());
    let emergence = track.as_ref().and_then(Track::first_visible);
    let false_alarm = match (result.alarm, &track) {
        (Some(k), Some(t)) => Some(t.0[k].is_none()),
        _ => None,
    };
    let max_zeta_before = emergence.map(|e| result.zeta[..e].iter().cloned().fold(0.0, f64::max));
    Ok(Outcome {
        outputs,
        result: json!({
            "frames": images.len(),
            "pixels": ac.grid.pixels(),
            "alarm": result.alarm,
            "emergence_frame": emergence,
            "false_alarm": false_alarm,
            "delay_frames": match (result.alarm, emergence) {
                (Some(a), Some(e)) if a >= e => Some(a - e),
                _ => None,
            },
            "max_zeta_before_emergence": max_zeta_before,
            "final_zeta": result.zeta.last(),
        }),
    })
}
