use serde::{Deserialize, Serialize};

use super::fit_slope;
use crate::error::{Error, Result};
use crate::grid::{FormField, WeightedMeasure};
use crate::solver::{solve_bumped_family, SolveConfig};
use crate::weights::{ConvexCutoff, DefiningFunction, WeightSpec};

/// Tails at or below this value are treated as floating-point noise by the fit.
pub const TAIL_FLOOR: f64 = 1e-14;

/// Slack on the decay rate: the fitted slope must reach `0.8·χ(ε)`.
const SLOPE_SLACK: f64 = 0.8;
/// Largest allowed growth of `‖u_k‖/‖ω‖` across the family.
const RATIO_GROWTH: f64 = 1.10;
/// Largest allowed share of `‖u_{k_max}‖²` outside `D_ε`.
const SUPPORT_FRACTION_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub k: f64,
    /// `∫_{outside D_ε} |u_k|² c_φ e^φ`
    pub tail: f64,
    pub ratio: f64,
    /// `tail_0·e^{−kχ(ε)}`: the exponential bound with its constant taken from `k = 0`.
    pub bound_prediction: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub epsilon: f64,
    pub chi_epsilon: f64,
    pub rows: Vec<DecayRow>,
    /// Slope of `ln tail_k` against `k` over the tails above [`TAIL_FLOOR`].
    pub fitted_slope: Option<f64>,
    pub fit_points: usize,
    pub slope_target: f64,
    /// Share of `‖u_{k_max}‖²_{c_φ e^φ}` outside `D_ε`.
    pub support_fraction: f64,
    /// Set when `ω ≡ 0`; nothing is solved and every tail is zero.
    pub trivial: bool,
}

impl DecayReport {
    /// Invariants that failed, as readable messages; empty when all hold.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trivial {
            return out;
        }
        for r in &self.rows {
            if !(r.tail.is_finite() && r.tail >= 0.0) {
                out.push(format!("tail at k = {} is {}", r.k, r.tail));
            }
        }
        match self.fitted_slope {
            Some(s) if s <= SLOPE_SLACK * self.slope_target => {}
            Some(s) => out.push(format!(
                "fitted slope {s:.4} exceeds {SLOPE_SLACK}·(−χ(ε)) = {:.4}",
                SLOPE_SLACK * self.slope_target
            )),
            None => out.push("no decay fit".into()),
        }
        if let Some(first) = self.rows.first() {
            for r in &self.rows {
                let bound = first.tail * (SLOPE_SLACK * (r.k - first.k) * self.slope_target).exp();
                if r.tail > bound {
                    out.push(format!(
                        "tail {:.3e} at k = {} is above tail_0·e^(−0.8kχ(ε)) = {bound:.3e}",
                        r.tail, r.k
                    ));
                }
            }
            let max_ratio = self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
            if max_ratio > RATIO_GROWTH * first.ratio {
                out.push(format!(
                    "norm ratio grows from {:.6} to {max_ratio:.6}",
                    first.ratio
                ));
            }
        }
        if self.support_fraction > SUPPORT_FRACTION_LIMIT {
            out.push(format!(
                "support fraction {:.3e} at k_max exceeds {SUPPORT_FRACTION_LIMIT:e}",
                self.support_fraction
            ));
        }
        out
    }
}

/// Solves the bumped family `ψ_k = φ + kχ(ρ)` and measures how fast the
/// solution mass leaves `{ρ > ε}`.
pub fn compact_support_experiment(
    omega: &FormField,
    defining: &DefiningFunction,
    epsilon: f64,
    ks: &[f64],
    phi: &WeightSpec,
    cutoff: &ConvexCutoff,
    cfg: &SolveConfig,
) -> Result<DecayReport> {
    if ks.is_empty() {
        return Err(Error::Config("the k list is empty".into()));
    }
    if ks.windows(2).any(|w| w[1] <= w[0]) || ks[0] < 0.0 {
        return Err(Error::Config("k values must be non-negative and increasing".into()));
    }
    let chi_epsilon = cutoff.value(epsilon);
    let slope_target = -chi_epsilon;
    if omega.is_zero() {
        let rows = ks
            .iter()
            .map(|&k| DecayRow {
                k,
                tail: 0.0,
                ratio: 0.0,
                bound_prediction: 0.0,
                residual: 0.0,
                iterations: 0,
            })
            .collect();
        return Ok(DecayReport {
            epsilon,
            chi_epsilon,
            rows,
            fitted_slope: None,
            fit_points: 0,
            slope_target,
            support_fraction: 0.0,
            trivial: true,
        });
    }

    let family = solve_bumped_family(omega, defining, epsilon, ks, phi, cutoff, cfg)?;
    let tail_0 = family[0].tail;
    let k_0 = family[0].k;
    let rows: Vec<DecayRow> = family
        .iter()
        .map(|m| DecayRow {
            k: m.k,
            tail: m.tail,
            ratio: m.solution.report.ratio,
            bound_prediction: tail_0 * (-(m.k - k_0) * chi_epsilon).exp(),
            residual: m.solution.report.residual,
            iterations: m.solution.report.iterations,
        })
        .collect();

    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.tail > TAIL_FLOOR)
        .map(|r| (r.k, r.tail.ln()))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "only {} of {} tails exceed {TAIL_FLOOR:e}",
            xs.len(),
            rows.len()
        )));
    }

    let last = family.last().expect("ks is non-empty");
    let g = *omega.grid();
    let total = last.solution.norm_in(&WeightedMeasure::c_exp_weight(g, phi)?)?.powi(2);
    let support_fraction = if total > 0.0 { last.tail / total } else { 0.0 };

    Ok(DecayReport {
        epsilon,
        chi_epsilon,
        rows,
        fitted_slope: Some(fit_slope(&xs, &ys)),
        fit_points: xs.len(),
        slope_target,
        support_fraction,
        trivial: false,
    })
}
