use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RadialCutoff;
use crate::error::{Error, Result};
use crate::grid::{
    moment_violation, stable_sum, weighted_norm, DbarOperator, FormField, Grid, RegionMask,
    WeightedMeasure,
};
use crate::solver::{solve_bumped_family, solve_min_norm, SolveConfig};
use crate::weights::{ConvexCutoff, DefiningFunction, Point, WeightSpec};

const CUTOFF_SLOPE_LIMIT: f64 = 1.0 + 1e-3;
const DUALITY_LIMIT: f64 = 1e-6;
const TELESCOPE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ApproxParams {
    /// Radius of `B_0`.
    pub r0: f64,
    pub stages: usize,
    pub test_forms: usize,
    pub seed: u64,
    /// Bump used by the compactly supported correction solves (`q < n` only).
    pub correction_epsilon: f64,
    pub correction_k: f64,
    pub correction_cutoff: ConvexCutoff,
}

impl Default for ApproxParams {
    fn default() -> Self {
        Self {
            r0: 3.0,
            stages: 8,
            test_forms: 20,
            seed: 0,
            correction_epsilon: 1.0,
            correction_k: 4.0,
            correction_cutoff: ConvexCutoff::default(),
        }
    }
}

/// Numbers for one stage; norms of forms are in `e^φ`, norms of solutions in `c_φ e^φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxStage {
    pub k: usize,
    pub r_k: f64,
    /// `∫_{B_k^c} |ω|² e^φ`
    pub tail_omega: f64,
    /// `∫_{B_k \ B_{k−1}} |ω|² e^φ`
    pub annulus_mass: f64,
    pub cutoff_max_dbar: f64,
    pub dbar_omega_k_norm: f64,
    /// `‖u_k‖` in `e^φ`, the norm used by the telescoping bound.
    pub u_k_norm: f64,
    /// `‖ω − ω_k‖`
    pub omega_gap: f64,
    /// `‖ω − μ_k‖`
    pub mu_gap: f64,
    pub v_k_norm: f64,
    pub v_k_residual: f64,
    pub v_k_iterations: usize,
    /// `‖u_k‖_{c_φe^φ} / ‖∂̄ω_k‖` when a correction was solved.
    pub correction_ratio: Option<f64>,
    /// Orthogonality defect of `μ_k` against holomorphic monomials (top degree only).
    pub mu_moment_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub r0: f64,
    pub omega_norm: f64,
    pub stages: Vec<ApproxStage>,
    /// Largest correction ratio; 0 when every correction vanishes.
    pub c_hat: f64,
    pub duality_residuals: Vec<f64>,
    pub duality_residual: f64,
}

impl ApproxReport {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut prev = self.r0;
        for s in &self.stages {
            let k = s.k as f64;
            if s.r_k < prev + 1.0 {
                out.push(format!("r_{} = {} is less than r_(k-1) + 1", s.k, s.r_k));
            }
            prev = s.r_k;
            let values = [
                s.tail_omega,
                s.annulus_mass,
                s.cutoff_max_dbar,
                s.dbar_omega_k_norm,
                s.u_k_norm,
                s.omega_gap,
                s.mu_gap,
                s.v_k_norm,
            ];
            if values.iter().any(|v| !v.is_finite()) {
                out.push(format!("stage {} has a non-finite norm", s.k));
            }
            if s.cutoff_max_dbar > CUTOFF_SLOPE_LIMIT {
                out.push(format!(
                    "stage {}: max |dbar chi_k| = {:.6} exceeds {CUTOFF_SLOPE_LIMIT}",
                    s.k, s.cutoff_max_dbar
                ));
            }
            if s.mu_gap > (1.0 + self.c_hat) / k {
                out.push(format!(
                    "stage {}: |omega - mu_k| = {:.4e} exceeds (1 + C)/k = {:.4e}",
                    s.k,
                    s.mu_gap,
                    (1.0 + self.c_hat) / k
                ));
            }
            if s.mu_gap > (s.omega_gap + s.u_k_norm) * (1.0 + TELESCOPE_SLACK) {
                out.push(format!("stage {}: telescoping bound fails", s.k));
            }
            if s.dbar_omega_k_norm.powi(2) > s.annulus_mass * (1.0 + TELESCOPE_SLACK) {
                out.push(format!(
                    "stage {}: |dbar omega_k|^2 = {:.4e} exceeds the annulus mass {:.4e}",
                    s.k,
                    s.dbar_omega_k_norm.powi(2),
                    s.annulus_mass
                ));
            }
        }
        if !(self.duality_residual <= DUALITY_LIMIT) {
            out.push(format!(
                "duality residual {:.3e} exceeds {DUALITY_LIMIT:e}",
                self.duality_residual
            ));
        }
        out
    }
}

/// Pointwise masses `|ω(z)|² e^{φ(z)} h^{2n}` with the radius of each point.
fn radial_masses(omega: &FormField, w: &WeightedMeasure) -> (Vec<f64>, Vec<f64>) {
    let g = omega.grid();
    let cell = g.cell_measure();
    let radius = (0..g.len()).map(|i| g.point(i).norm_sqr().sqrt()).collect();
    let mass = (0..g.len())
        .map(|i| {
            (0..omega.components())
                .map(|c| w.weighted_sqr(omega.at(c, i), i))
                .sum::<f64>()
                * cell
        })
        .collect();
    (radius, mass)
}

/// Smallest grid radius `r` with `Σ_{|z| ≥ r} mass ≤ target`; zero if the whole mass fits.
fn smallest_tail_radius(radius: &[f64], mass: &[f64], target: f64) -> f64 {
    let mut order: Vec<usize> = (0..radius.len()).collect();
    order.sort_by(|&a, &b| radius[b].total_cmp(&radius[a]));
    let mut tail = 0.0;
    let mut best = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let r = radius[order[i]];
        while i < order.len() && radius[order[i]] == r {
            tail += mass[order[i]];
            i += 1;
        }
        if tail > target {
            return best;
        }
        best = r;
    }
    0.0
}

/// Random compactly supported degree-`q` test form inside `B(0, r0)`.
fn test_form(g: Grid, degree: usize, r0: f64, rng: &mut ChaCha8Rng) -> FormField {
    let n = g.dim();
    let center = loop {
        let c: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-0.5..0.5) * r0).collect();
        if c.iter().map(|x| x * x).sum::<f64>() < (0.5 * r0).powi(2) {
            break c;
        }
    };
    let center = Point::new(
        &(0..n)
            .map(|j| Complex64::new(center[2 * j], center[2 * j + 1]))
            .collect::<Vec<_>>(),
    );
    let rho = rng.gen_range(0.25..0.5) * r0;
    let freq: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let amps: Vec<Complex64> = (0..g.components(degree))
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    FormField::from_fn(g, degree, |c, p| {
        let s2 = p.sub(&center).norm_sqr() / (rho * rho);
        if s2 >= 1.0 {
            return Complex64::new(0.0, 0.0);
        }
        let phase: f64 = p
            .coords()
            .iter()
            .enumerate()
            .map(|(j, z)| freq[2 * j] * z.re + freq[2 * j + 1] * z.im)
            .sum();
        amps[c] * (1.0 - s2).powi(4) * Complex64::from_polar(1.0, phase)
    })
    .expect("degree checked by the caller")
}

/// Relative duality defect `|⟨v, Dᵀg⟩ − ⟨ω, g⟩| / (‖v‖‖Dᵀg‖ + ‖ω‖‖g‖)` for one test form.
fn duality_defect(v: &FormField, omega: &FormField, op: &DbarOperator, g: &FormField) -> Result<f64> {
    let dt = op.transpose_apply(g)?;
    let lhs = v.bilinear_pairing(&dt)?;
    let rhs = omega.bilinear_pairing(g)?;
    let scale = v.l2_norm() * dt.l2_norm() + omega.l2_norm() * g.l2_norm();
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).norm() / scale })
}

/// Solves `∂̄v = ω` for data without compact support by cutting off on growing
/// balls, correcting each cut-off form back to a closed one, and solving.
pub fn approximation_procedure(
    omega: &FormField,
    phi: &WeightSpec,
    params: &ApproxParams,
    cfg: &SolveConfig,
) -> Result<(FormField, ApproxReport)> {
    let g = *omega.grid();
    let n = g.dim();
    let q = omega.degree();
    if q == 0 {
        return Err(Error::Shape("the approximation procedure needs data of degree >= 1".into()));
    }
    if params.stages == 0 || !(params.r0 > 0.0) {
        return Err(Error::Config("approx needs r0 > 0 and at least one stage".into()));
    }
    let w = WeightedMeasure::exp_weight(g, phi)?;
    let wc = WeightedMeasure::c_exp_weight(g, phi)?;
    let op_v = DbarOperator::new(g, q - 1)?;
    let op_q = if q < n { Some(DbarOperator::new(g, q)?) } else { None };
    let (radius, mass) = radial_masses(omega, &w);
    let omega_norm = weighted_norm(omega, &w)?;
    let h = g.spacing();

    let mut stages = Vec::with_capacity(params.stages);
    let mut r_prev = params.r0;
    let mut previous: Option<(FormField, FormField, f64, usize)> = None;
    let mut ratios = Vec::new();
    for k in 1..=params.stages {
        let step = |what: &str| format!("stage {k}: {what}");
        let target = 1.0 / (k as f64 + 1.0);
        let r_k = (r_prev + 1.0).max(smallest_tail_radius(&radius, &mass, target));
        if r_k + 1.0 >= g.half_width() {
            return Err(Error::Config(format!(
                "radius schedule reaches r_{k} = {r_k:.3}, but r_k + 1 must stay below R = {}",
                g.half_width()
            )));
        }
        let tail_omega = stable_sum(
            radius.iter().zip(&mass).filter(|(r, _)| **r >= r_k).map(|(_, m)| *m),
        );
        let annulus_mass = stable_sum(
            radius
                .iter()
                .zip(&mass)
                .filter(|(r, _)| **r >= r_prev && **r < r_k)
                .map(|(_, m)| *m),
        );

        let chi = RadialCutoff {
            center: Point::origin(n),
            inner: r_prev,
            outer: r_k,
        };
        let chi_values = chi.sample(&g);
        let legal = chi_values.iter().zip(&radius).all(|(c, r)| {
            (0.0..=1.0).contains(c) && (*r >= r_prev || *c == 1.0) && (*r < r_k || *c == 0.0)
        });
        if !legal {
            return Err(Error::NumericalConsistency(step("cutoff is not 1 on B_(k-1) and 0 off B_k")));
        }
        let dchi = DbarOperator::new(g, 0)?.apply(&chi.on_grid(g))?;
        let cutoff_max_dbar = dchi.max_abs();

        let omega_k = omega.multiply_pointwise(&chi_values);
        let omega_gap = weighted_norm(&omega.sub(&omega_k)?, &w)?;

        let (u_k, dbar_omega_k_norm, correction_ratio) = match &op_q {
            Some(op) => {
                let d = op.apply(&omega_k)?;
                let d_norm = weighted_norm(&d, &w)?;
                if d.is_zero() {
                    (FormField::zeros(g, q)?, d_norm, None)
                } else {
                    let ball = DefiningFunction::centered(n, r_k + 2.0 * h)?;
                    let fam = solve_bumped_family(
                        &d,
                        &ball,
                        params.correction_epsilon,
                        &[params.correction_k],
                        phi,
                        &params.correction_cutoff,
                        cfg,
                    )
                    .map_err(|e| Error::staged(step("correction solve"), e))?;
                    let u = fam.into_iter().next().expect("one member").solution;
                    let ratio = u.norm_in(&wc)? / d_norm;
                    ratios.push(ratio);
                    (u.u, d_norm, Some(ratio))
                }
            }
            None => (FormField::zeros(g, q)?, 0.0, None),
        };
        let mu_k = omega_k.sub(&u_k)?;
        let mu_gap = weighted_norm(&omega.sub(&mu_k)?, &w)?;
        let u_k_norm = weighted_norm(&u_k, &w)?;
        let mu_moment_violation = if q == n {
            Some(moment_violation(&mu_k, cfg.moment_degree)?)
        } else {
            None
        };

        let (v_k, v_norm, v_res, v_it) = match previous.take() {
            Some((mu, v, norm, it)) if mu == mu_k => (v, norm, 0.0, it),
            _ => {
                // cutting off a top-degree form breaks the moment condition by
                // the amount reported in mu_moment_violation
                let solve_cfg = SolveConfig {
                    check_preconditions: cfg.check_preconditions && q < n,
                    ..cfg.clone()
                };
                let s = solve_min_norm(&mu_k, &op_v, &wc, &w, &solve_cfg)
                    .map_err(|e| Error::staged(step("solve for v_k"), e))?;
                (s.u, s.report.u_norm, s.report.residual, s.report.iterations)
            }
        };
        stages.push(ApproxStage {
            k,
            r_k,
            tail_omega,
            annulus_mass,
            cutoff_max_dbar,
            dbar_omega_k_norm,
            u_k_norm,
            omega_gap,
            mu_gap,
            v_k_norm: v_norm,
            v_k_residual: v_res,
            v_k_iterations: v_it,
            correction_ratio,
            mu_moment_violation,
        });
        previous = Some((mu_k, v_k, v_norm, v_it));
        r_prev = r_k;
    }

    let (_, v, _, _) = previous.expect("at least one stage");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let forms: Vec<FormField> = (0..params.test_forms)
        .map(|_| test_form(g, q, params.r0, &mut rng))
        .collect();
    let interior = RegionMask::interior(&g, 2);
    if forms.iter().any(|f| !f.support().is_subset_of(&interior)) {
        return Err(Error::Precondition("test forms reach the box faces".into()));
    }
    let duality_residuals = forms
        .par_iter()
        .map(|f| duality_defect(&v, omega, &op_v, f))
        .collect::<Result<Vec<f64>>>()?;
    let duality_residual = duality_residuals.iter().copied().fold(0.0, f64::max);
    let c_hat = ratios.iter().copied().fold(0.0, f64::max);
    Ok((
        v,
        ApproxReport {
            r0: params.r0,
            omega_norm,
            stages,
            c_hat,
            duality_residuals,
            duality_residual,
        },
    ))
}
