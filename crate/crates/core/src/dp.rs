//! Value iteration for the optimal stopping problem on the anomalous-state
//! posterior `p ∈ [0, 1]`:
//!
//! ```text
//! V(p) = min{ c p + E[V(X̂⁺(p, y)) | p],  1 - p }
//! ```
//!
//! The expectation over the next measurement uses Gauss–Hermite nodes of
//! both Gaussian components, weighted against the fixed reference density
//! `r = (f¹ + f²) / 2`:
//!
//! ```text
//! E[V(X̂⁺(p, y)) | p] ≈ Σ_j W_j · m(y_j | p) / r(y_j) · V(X̂⁺(p, y_j))
//! ```
//!
//! Each term `m(y_j|p) V(X̂⁺(p, y_j))` is the perspective of `V` at a linear
//! function of `p`, so a concave piecewise-linear iterate maps to a concave
//! one and the discrete value function stays concave up to rounding.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;
use crate::signal::{GaussianPair, State, Transition, TransitionModel};

/// Sorted anomalous-state probabilities covering `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGrid {
    points: Vec<f64>,
}

impl BeliefGrid {
    pub fn uniform(resolution: usize) -> Result<Self> {
        if resolution < 3 {
            return Err(Error::invalid("grid_resolution", "must be at least 3"));
        }
        let last = (resolution - 1) as f64;
        Ok(Self {
            points: (0..resolution).map(|i| i as f64 / last).collect(),
        })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::invalid("grid", "needs at least 3 points"));
        }
        if points[0] != 0.0 || points[points.len() - 1] != 1.0 {
            return Err(Error::invalid("grid", "must include 0 and 1"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid", "must be strictly increasing"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn resolution(&self) -> usize {
        self.points.len()
    }

    /// Left cell index and fractional position of `p` for linear interpolation.
    fn locate(&self, p: f64) -> (usize, f64) {
        let p = p.clamp(0.0, 1.0);
        let n = self.points.len();
        let upper = self.points.partition_point(|x| *x <= p).clamp(1, n - 1);
        let lo = upper - 1;
        let frac = (p - self.points[lo]) / (self.points[upper] - self.points[lo]);
        (lo, frac.clamp(0.0, 1.0))
    }

    pub fn interpolate(&self, values: &[f64], p: f64) -> f64 {
        let (lo, frac) = self.locate(p);
        values[lo] * (1.0 - frac) + values[lo + 1] * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub sup_norm_residual: f64,
}

impl ValueFunction {
    pub fn zero(grid: &BeliefGrid) -> Self {
        Self {
            values: vec![0.0; grid.resolution()],
            converged: false,
            iterations: 0,
            sup_norm_residual: f64::INFINITY,
        }
    }

    /// Largest discrete second difference (≤ 0 for a concave function on a
    /// uniform grid).
    pub fn max_second_difference(&self) -> f64 {
        self.values
            .windows(3)
            .map(|w| w[0] - 2.0 * w[1] + w[2])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpSettings {
    pub grid_resolution: usize,
    pub quadrature_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Absolute tolerance for classifying a grid point as stopping.
    pub stop_tolerance: f64,
}

impl Default for DpSettings {
    fn default() -> Self {
        Self {
            grid_resolution: 2001,
            quadrature_nodes: 64,
            tol: 1e-8,
            max_iter: 100_000,
            stop_tolerance: 1e-6,
        }
    }
}

const QUADRATURE_MASS_TOL: f64 = 1e-6;

/// Interpolation stencil of the expected continuation value at one grid point.
#[derive(Debug, Clone)]
struct Stencil {
    lower: Vec<u32>,
    frac: Vec<f64>,
    weight: Vec<f64>,
}

impl Stencil {
    fn expect(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((lo, f), w) in self.lower.iter().zip(&self.frac).zip(&self.weight) {
            let lo = *lo as usize;
            acc += w * (values[lo] * (1.0 - f) + values[lo + 1] * f);
        }
        acc
    }
}

/// Precomputed posterior images and quadrature weights for every grid point.
#[derive(Debug, Clone)]
pub struct BackupOperator {
    grid: BeliefGrid,
    stencils: Vec<Stencil>,
    penalty: f64,
}

impl BackupOperator {
    pub fn new(
        grid: &BeliefGrid,
        model: &TransitionModel,
        obs: &GaussianPair,
        c: f64,
        quadrature: &GaussHermite,
    ) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::invalid("c", format!("must be nonnegative, got {c}")));
        }
        let mut nodes = Vec::with_capacity(2 * quadrature.nodes.len());
        for state in [State::Normal, State::Anomalous] {
            for (y, w) in quadrature.normal_rule(obs.mean(state), obs.sigma2()) {
                let l1 = obs.log_density(State::Normal, y);
                let l2 = obs.log_density(State::Anomalous, y);
                let max = l1.max(l2);
                // (reference weight, scaled f¹, scaled f²)
                nodes.push((0.5 * w, (l1 - max).exp(), (l2 - max).exp()));
            }
        }
        let stencils = grid
            .points()
            .par_iter()
            .map(|&p| {
                let mut predicted = [0.0; 2];
                model.predict(&[1.0 - p, p], &mut predicted);
                let mut s = Stencil {
                    lower: Vec::with_capacity(nodes.len()),
                    frac: Vec::with_capacity(nodes.len()),
                    weight: Vec::with_capacity(nodes.len()),
                };
                let mut mass = 0.0;
                for &(w, e1, e2) in &nodes {
                    let joint1 = e1 * predicted[0];
                    let joint2 = e2 * predicted[1];
                    let m = joint1 + joint2;
                    let weight = w * 2.0 * m / (e1 + e2);
                    mass += weight;
                    if weight == 0.0 {
                        continue;
                    }
                    let (lo, frac) = grid.locate(joint2 / m);
                    s.lower.push(lo as u32);
                    s.frac.push(frac);
                    s.weight.push(weight);
                }
                if (mass - 1.0).abs() > QUADRATURE_MASS_TOL {
                    return Err(Error::QuadratureFailure { p, total: mass });
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.clone(),
            stencils,
            penalty: c,
        })
    }

    /// Continuation value `c p + E[V(X̂⁺(p, y)) | p]` at each grid point.
    pub fn continuation(&self, values: &[f64]) -> Vec<f64> {
        self.grid
            .points()
            .par_iter()
            .zip(&self.stencils)
            .map(|(p, s)| self.penalty * p + s.expect(values))
            .collect()
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.grid
            .points()
            .par_iter()
            .zip(&self.stencils)
            .map(|(p, s)| (self.penalty * p + s.expect(values)).min(1.0 - p))
            .collect()
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// One Bellman update of `current`.
pub fn bellman_backup(
    current: &ValueFunction,
    grid: &BeliefGrid,
    model: &TransitionModel,
    obs: &GaussianPair,
    c: f64,
    quadrature: &GaussHermite,
) -> Result<ValueFunction> {
    let op = BackupOperator::new(grid, model, obs, c, quadrature)?;
    let values = op.apply(&current.values);
    let residual = sup_distance(&values, &current.values);
    Ok(ValueFunction {
        values,
        converged: false,
        iterations: current.iterations + 1,
        sup_norm_residual: residual,
    })
}

/// Value iteration from `V ≡ 0` until the sup-norm change drops below `tol`.
pub fn solve(
    grid: &BeliefGrid,
    model: &TransitionModel,
    obs: &GaussianPair,
    c: f64,
    tol: f64,
    max_iter: usize,
    quadrature: &GaussHermite,
) -> Result<ValueFunction> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let op = BackupOperator::new(grid, model, obs, c, quadrature)?;
    let mut values = vec![0.0; grid.resolution()];
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let next = op.apply(&values);
        residual = sup_distance(&next, &values);
        values = next;
        if residual < tol {
            return Ok(ValueFunction {
                values,
                converged: true,
                iterations: iteration,
                sup_norm_residual: residual,
            });
        }
    }
    Err(Error::NotConverged {
        residual,
        iterations: max_iter,
    })
}

/// Convenience wrapper taking all solver knobs from `settings`.
pub fn solve_with(
    model: &TransitionModel,
    obs: &GaussianPair,
    c: f64,
    settings: &DpSettings,
) -> Result<(BeliefGrid, ValueFunction)> {
    let grid = BeliefGrid::uniform(settings.grid_resolution)?;
    let gh = GaussHermite::new(settings.quadrature_nodes)?;
    let vf = solve(&grid, model, obs, c, settings.tol, settings.max_iter, &gh)?;
    Ok((grid, vf))
}

/// The stop region `[h_s, 1]` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingSet {
    pub threshold: f64,
    pub index: usize,
}

/// Grid points where stopping is optimal (`|V(p) - (1 - p)| ≤ tolerance`).
pub fn stop_flags(vf: &ValueFunction, grid: &BeliefGrid, tolerance: f64) -> Vec<bool> {
    vf.values
        .iter()
        .zip(grid.points())
        .map(|(v, p)| (v - (1.0 - p)).abs() <= tolerance)
        .collect()
}

pub fn extract_stopping_set(
    vf: &ValueFunction,
    grid: &BeliefGrid,
    tolerance: f64,
) -> Result<StoppingSet> {
    if !vf.converged {
        return Err(Error::invalid("value_function", "not converged"));
    }
    let flags = stop_flags(vf, grid, tolerance);
    let index = flags
        .iter()
        .position(|f| *f)
        .ok_or_else(|| Error::invalid("value_function", "no stopping point (V(1) ≠ 0)"))?;
    if let Some(gap) = flags[index..].iter().position(|f| !*f) {
        return Err(Error::NotAnInterval {
            first_stop: grid.points()[index],
            p: grid.points()[index + gap],
        });
    }
    Ok(StoppingSet {
        threshold: grid.points()[index],
        index,
    })
}

/// CSV rows `p, value, stop_flag`.
pub fn write_value_csv<W: Write>(
    vf: &ValueFunction,
    grid: &BeliefGrid,
    tolerance: f64,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["p", "value", "stop_flag"])?;
    for ((p, v), stop) in grid
        .points()
        .iter()
        .zip(&vf.values)
        .zip(stop_flags(vf, grid, tolerance))
    {
        w.write_record([p.to_string(), v.to_string(), (stop as u8).to_string()])?;
    }
    w.flush()?;
    Ok(())
}
