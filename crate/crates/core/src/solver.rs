//! Minimal weighted-norm solutions of `∂̄u = ω`.
//!
//! The dual system `D·W_u^{-1}·D^H λ = ω` is solved by conjugate gradients
//! after a symmetric diagonal (Jacobi) scaling carried out in the log domain:
//! with `B = S·D·W_u^{-1/2}` and `S_i = (Σ_j |D_ij|²/w_j)^{-1/2}` the scaled
//! operator `B·B^H` has unit diagonal, and the scaled unknown
//! `x = W_u^{1/2} u = B^H y` stays representable even where `w_u` overflows.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    dot, moment_violation, norm2, stable_sum, weighted_norm, CsrMatrix, DbarOperator, FormField,
    Grid, RegionMask, WeightedMeasure,
};
use crate::weights::{BumpedWeight, ConvexCutoff, DefiningFunction, WeightSpec};

/// Closedness threshold `‖∂̄ω‖/‖ω‖` for `q < n`.
pub const CLOSEDNESS_THRESHOLD: f64 = 1e-8;
/// Moment threshold, relative to `‖ω‖`, for `q = n`.
pub const MOMENT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Relative residual of the scaled dual system.
    pub tolerance: f64,
    /// Defaults to `20·√unknowns`.
    pub max_iterations: Option<usize>,
    /// Tikhonov shift added to the scaled dual operator.
    pub tikhonov: f64,
    pub verbose: bool,
    /// Minimum-norm least-squares solution by CGLS on the primal system, for
    /// data outside the range; stops on the normal-equation residual as well.
    pub least_squares: bool,
    /// Replace `w_u` by `max(w_u, floor)`; for degenerate weights only.
    pub weight_floor: Option<f64>,
    /// Degree bound of the moment test applied to top-degree data.
    pub moment_degree: usize,
    pub check_preconditions: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: None,
            tikhonov: 0.0,
            verbose: false,
            least_squares: false,
            weight_floor: None,
            moment_degree: 4,
            check_preconditions: true,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!(
                "solver.tolerance = {} must lie in (0, 1)",
                self.tolerance
            )));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::Config("solver.max_iterations must be >= 1".into()));
        }
        if !(self.tikhonov >= 0.0 && self.tikhonov.is_finite()) {
            return Err(Error::Config(format!("solver.tikhonov = {} must be >= 0", self.tikhonov)));
        }
        if let Some(f) = self.weight_floor {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("solver.weight_floor = {f} must be > 0")));
            }
        }
        Ok(())
    }

    fn iteration_cap(&self, unknowns: usize) -> usize {
        self.max_iterations
            .unwrap_or_else(|| (20.0 * (unknowns as f64).sqrt()).ceil() as usize)
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖∂̄u − ω‖_{w_d} / ‖ω‖_{w_d}`
    pub residual: f64,
    /// `‖u‖_{w_u}`
    pub u_norm: f64,
    /// `‖ω‖_{w_d}`
    pub data_norm: f64,
    pub ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<f64>,
}

/// Solver output: `u`, its scaled form `W_u^{1/2}u` and the report.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: FormField,
    scaled: Vec<Complex64>,
    log_weight_u: Vec<f64>,
    pub report: SolveReport,
    pub history: Vec<f64>,
}

impl Solution {
    /// `Σ_{mask} |u|²·w·h^{2n}`, formed from the scaled solution so that
    /// points where `u` underflows still contribute.
    pub fn tail_mass(&self, mask: &RegionMask, w: &WeightedMeasure) -> Result<f64> {
        let g = self.u.grid();
        if mask.grid() != g || w.grid() != g {
            return Err(Error::Shape("mask or measure grid differs from the solution grid".into()));
        }
        let len = g.len();
        let lw = w.log_weights();
        let sum = stable_sum(self.scaled.iter().enumerate().filter_map(|(k, x)| {
            let p = k % len;
            if !mask.contains(p) || x.norm() == 0.0 {
                return None;
            }
            Some((2.0 * x.norm().ln() + lw[p] - self.log_weight_u[p]).exp())
        }));
        Ok(sum * g.cell_measure())
    }

    /// `‖u‖_w` for an arbitrary measure, from the scaled solution.
    pub fn norm_in(&self, w: &WeightedMeasure) -> Result<f64> {
        Ok(self.tail_mass(&RegionMask::everything(self.u.grid()), w)?.sqrt())
    }
}

/// The scaled dual system for one operator and one solution weight.
pub struct DualSystem {
    grid: Grid,
    source_degree: usize,
    b: CsrMatrix,
    bh: CsrMatrix,
    rows: Vec<usize>,
    row_mask: RegionMask,
    log_diag: Vec<f64>,
    log_weight_u: Vec<f64>,
}

impl DualSystem {
    pub fn new(op: &DbarOperator, w_u: &WeightedMeasure) -> Result<Self> {
        Self::with_row_mask(op, w_u, &RegionMask::everything(op.grid()))
    }

    /// Constraints only at interior points inside `mask`; the solution still
    /// lives on the whole grid.
    pub fn with_row_mask(op: &DbarOperator, w_u: &WeightedMeasure, mask: &RegionMask) -> Result<Self> {
        if w_u.grid() != op.grid() || mask.grid() != op.grid() {
            return Err(Error::Shape("solution weight and operator grids differ".into()));
        }
        if !w_u.is_strictly_positive() {
            return Err(Error::Config(
                "solution weight w_u must be strictly positive on the grid".into(),
            ));
        }
        let len = op.grid().len();
        let lw = w_u.log_weights();
        let (d, rows) = op.matrix().select_rows(|r| op.is_interior(r % len) && mask.contains(r % len));
        if rows.is_empty() {
            return Err(Error::Precondition("no constraint rows inside the mask".into()));
        }
        let log_diag: Vec<f64> = (0..d.nrows())
            .into_par_iter()
            .with_min_len(1024)
            .map(|i| {
                let terms: Vec<f64> = d
                    .row(i)
                    .filter(|(_, v)| v.norm() > 0.0)
                    .map(|(j, v)| 2.0 * v.norm().ln() - lw[j % len])
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
        if let Some(i) = log_diag.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalConsistency(format!(
                "dual diagonal at row {i} is not representable"
            )));
        }
        let b = d.map_entries(|i, j, v| v * (-0.5 * log_diag[i] - 0.5 * lw[j % len]).exp());
        let bh = b.conj_transpose();
        Ok(Self {
            grid: *op.grid(),
            source_degree: op.source_degree(),
            b,
            bh,
            rows,
            row_mask: mask.clone(),
            log_diag,
            log_weight_u: lw.to_vec(),
        })
    }

    /// `B·B^H y`
    pub fn apply_scaled(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.b.matvec(&self.bh.matvec(y))
    }

    /// Unscaled `A λ = D·W_u^{-1}·D^H λ`.
    pub fn apply(&self, lambda: &[Complex64]) -> Vec<Complex64> {
        let s: Vec<Complex64> = lambda
            .iter()
            .zip(&self.log_diag)
            .map(|(v, ld)| v * (0.5 * ld).exp())
            .collect();
        self.apply_scaled(&s)
            .iter()
            .zip(&self.log_diag)
            .map(|(v, ld)| v * (0.5 * ld).exp())
            .collect()
    }

    /// Original row numbers of the constraints, all at interior points.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    fn scaled_rhs(&self, omega: &FormField) -> Result<Vec<Complex64>> {
        self.rows
            .iter()
            .map(|&r| omega.data()[r])
            .zip(&self.log_diag)
            .map(|(w, ld)| {
                if w.norm() == 0.0 {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                let v = w / w.norm() * (w.norm().ln() - 0.5 * ld).exp();
                if v.re.is_finite() && v.im.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NumericalConsistency(
                        "data sits where the solution weight leaves floating-point range".into(),
                    ))
                }
            })
            .collect()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + stable_sum(terms.iter().map(|t| (t - m).exp())).ln()
}

/// `(Σ_i |r_i|²·e^{s_i})^{1/2}`: maps a scaled residual back to the data norm.
fn log_scaled_norm(r: &[Complex64], log_scale: &[f64]) -> f64 {
    stable_sum(r.iter().zip(log_scale).map(|(v, s)| {
        let m = v.norm();
        if m == 0.0 {
            0.0
        } else {
            (2.0 * m.ln() + s).exp()
        }
    }))
    .sqrt()
}

/// Conjugate gradients on `(B·B^H + μ)y = b`, stopped on the residual measured
/// in the data norm (`row_log_scale` converts scaled rows back).
/// Returns `(y, iterations, history)`.
fn conjugate_gradients(
    sys: &DualSystem,
    rhs: &[Complex64],
    row_log_scale: &[f64],
    cfg: &SolveConfig,
    cap: usize,
) -> Result<(Vec<Complex64>, usize, Vec<f64>)> {
    let zero = Complex64::new(0.0, 0.0);
    let mut y = vec![zero; rhs.len()];
    let b_norm = log_scaled_norm(rhs, row_log_scale);
    if b_norm == 0.0 {
        return Ok((y, 0, Vec::new()));
    }
    let apply = |v: &[Complex64]| -> Vec<Complex64> {
        let mut out = sys.apply_scaled(v);
        if cfg.tikhonov > 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x * cfg.tikhonov;
            }
        }
        out
    };
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r).re;
    let mut history = Vec::new();
    for it in 1..=cap {
        let ap = apply(&p);
        let pap = dot(&p, &ap).re;
        if !(pap > 0.0) {
            // p lies in the null space: the remaining residual is unreachable
            let rel = log_scaled_norm(&r, row_log_scale) / b_norm;
            return Err(Error::Solver {
                iterations: it - 1,
                residual: rel,
                history,
            });
        }
        let alpha = rs / pap;
        for i in 0..y.len() {
            y[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        let rs_new = dot(&r, &r).re;
        let rel = log_scaled_norm(&r, row_log_scale) / b_norm;
        history.push(rel);
        if cfg.verbose {
            eprintln!("cg {it:5} {rel:.3e}");
        }
        if rel <= cfg.tolerance {
            return Ok((y, it, history));
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..p.len() {
            p[i] = r[i] + p[i] * beta;
        }
    }
    let residual = history.last().copied().unwrap_or(1.0);
    Err(Error::Solver {
        iterations: cap,
        residual,
        history,
    })
}

/// CGLS on `min ‖B x − b‖² + μ‖x‖²` from `x = 0`, which converges to the
/// minimum-norm least-squares solution. Returns the scaled solution `x`.
fn least_squares_cg(
    sys: &DualSystem,
    rhs: &[Complex64],
    row_log_scale: &[f64],
    cfg: &SolveConfig,
    cap: usize,
) -> Result<(Vec<Complex64>, usize, Vec<f64>)> {
    let zero = Complex64::new(0.0, 0.0);
    let mut x = vec![zero; sys.b.ncols()];
    let b_norm = log_scaled_norm(rhs, row_log_scale);
    if b_norm == 0.0 {
        return Ok((x, 0, Vec::new()));
    }
    let mut r = rhs.to_vec();
    let mut s = sys.bh.matvec(&r);
    let normal_scale = norm2(&s);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s).re;
    let mut history = Vec::new();
    for it in 1..=cap {
        let q = sys.b.matvec(&p);
        let denom = dot(&q, &q).re + cfg.tikhonov * dot(&p, &p).re;
        if !(denom > 0.0) {
            return Ok((x, it - 1, history));
        }
        let alpha = gamma / denom;
        for i in 0..x.len() {
            x[i] += p[i] * alpha;
        }
        for i in 0..r.len() {
            r[i] -= q[i] * alpha;
        }
        s = sys.bh.matvec(&r);
        if cfg.tikhonov > 0.0 {
            for (si, xi) in s.iter_mut().zip(&x) {
                *si -= xi * cfg.tikhonov;
            }
        }
        let gamma_new = dot(&s, &s).re;
        let rel = log_scaled_norm(&r, row_log_scale) / b_norm;
        history.push(rel);
        if cfg.verbose {
            eprintln!("cgls {it:5} {rel:.3e}");
        }
        if rel <= cfg.tolerance || gamma_new.sqrt() <= cfg.tolerance * normal_scale {
            return Ok((x, it, history));
        }
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for i in 0..p.len() {
            p[i] = s[i] + p[i] * beta;
        }
    }
    let residual = history.last().copied().unwrap_or(1.0);
    Err(Error::Solver {
        iterations: cap,
        residual,
        history,
    })
}

fn check_data_preconditions(omega: &FormField, w_d: &WeightedMeasure, cfg: &SolveConfig) -> Result<()> {
    let g = *omega.grid();
    let n = g.dim();
    let q = omega.degree();
    let norm = weighted_norm(omega, w_d)?;
    if norm == 0.0 {
        return Ok(());
    }
    if q < n {
        let next = DbarOperator::new(g, q)?;
        let closedness = weighted_norm(&next.apply(omega)?, w_d)? / norm;
        if closedness > CLOSEDNESS_THRESHOLD {
            return Err(Error::Precondition(format!(
                "data is not dbar-closed: relative ‖dbar ω‖ = {closedness:.3e} > {CLOSEDNESS_THRESHOLD:e}"
            )));
        }
    } else {
        let violation = moment_violation(omega, cfg.moment_degree)?;
        if violation > MOMENT_THRESHOLD {
            return Err(Error::Precondition(format!(
                "top-degree data fails the moment test: {violation:.3e} > {MOMENT_THRESHOLD:e}"
            )));
        }
    }
    Ok(())
}

/// Minimises `‖u‖_{w_u}` subject to `D u = ω`.
pub fn solve_min_norm(
    omega: &FormField,
    op: &DbarOperator,
    w_u: &WeightedMeasure,
    w_d: &WeightedMeasure,
    cfg: &SolveConfig,
) -> Result<Solution> {
    cfg.validate()?;
    if omega.grid() != op.grid() || omega.degree() != op.target_degree() {
        return Err(Error::Shape(format!(
            "data of degree {} does not match an operator into degree {}",
            omega.degree(),
            op.target_degree()
        )));
    }
    if w_d.grid() != op.grid() {
        return Err(Error::Shape("data weight and operator grids differ".into()));
    }
    let w_u = match cfg.weight_floor {
        Some(f) => w_u.with_floor(f),
        None => w_u.clone(),
    };
    if cfg.check_preconditions {
        check_data_preconditions(omega, w_d, cfg)?;
    }
    let sys = DualSystem::new(op, &w_u)?;
    solve_with_system(omega, &sys, w_d, cfg)
}

/// Solve against a prepared [`DualSystem`]; skips the data preconditions.
pub fn solve_with_system(
    omega: &FormField,
    sys: &DualSystem,
    w_d: &WeightedMeasure,
    cfg: &SolveConfig,
) -> Result<Solution> {
    let g = sys.grid;
    let len = g.len();
    let cell = g.cell_measure();
    let rhs = sys.scaled_rhs(omega)?;
    let cap = cfg.iteration_cap(sys.b.ncols());
    let lw_d = w_d.log_weights();
    let row_log_scale: Vec<f64> = sys
        .rows
        .iter()
        .zip(&sys.log_diag)
        .map(|(&r, ld)| ld + lw_d[r % len])
        .collect();
    let (scaled, iterations, history) = if cfg.least_squares {
        least_squares_cg(sys, &rhs, &row_log_scale, cfg, cap)?
    } else {
        let (y, iterations, history) = conjugate_gradients(sys, &rhs, &row_log_scale, cfg, cap)?;
        (sys.bh.matvec(&y), iterations, history)
    };
    let u_data: Vec<Complex64> = scaled
        .iter()
        .enumerate()
        .map(|(k, x)| x * (-0.5 * sys.log_weight_u[k % len]).exp())
        .collect();
    let u = FormField::from_data(g, sys.source_degree, u_data)?;

    // residual in scaled coordinates: r_i = S_i (ω − Du)_i
    let bx = sys.b.matvec(&scaled);
    let constrained = stable_sum(rhs.iter().zip(&bx).enumerate().map(|(i, (b, ax))| {
        let r = (b - ax).norm();
        if r == 0.0 {
            0.0
        } else {
            (2.0 * r.ln() + sys.log_diag[i] + lw_d[sys.rows[i] % len]).exp()
        }
    }));
    // data on boundary rows inside the mask is never matched and counts in full
    let mut is_row = vec![false; omega.data().len()];
    for &r in &sys.rows {
        is_row[r] = true;
    }
    let unmatched = stable_sum(
        omega
            .data()
            .iter()
            .enumerate()
            .filter(|(r, _)| !is_row[*r] && sys.row_mask.contains(r % len))
            .map(|(r, a)| w_d.weighted_sqr(*a, r % len)),
    );
    let res_sqr = (constrained + unmatched) * cell;
    let data_norm = (stable_sum(
        omega
            .data()
            .iter()
            .enumerate()
            .filter(|(r, _)| sys.row_mask.contains(r % len))
            .map(|(r, a)| w_d.weighted_sqr(*a, r % len)),
    ) * cell)
        .sqrt();
    let u_norm = (stable_sum(scaled.iter().map(|x| x.norm_sqr())) * cell).sqrt();
    let (residual, ratio) = if data_norm == 0.0 {
        (0.0, 0.0)
    } else {
        (res_sqr.sqrt() / data_norm, u_norm / data_norm)
    };
    Ok(Solution {
        u,
        scaled,
        log_weight_u: sys.log_weight_u.clone(),
        report: SolveReport {
            iterations,
            residual,
            u_norm,
            data_norm,
            ratio,
            k: None,
        },
        history,
    })
}

/// One member of a bumped family.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub k: f64,
    pub solution: Solution,
    /// `∫_{outside D_ε} |u_k|² c_φ e^φ`
    pub tail: f64,
}

/// Solves `∂̄u_k = ω` with `w_u = c_φ e^{ψ_k}` and `w_d = e^{ψ_k}` for each `k`.
pub fn solve_bumped_family(
    omega: &FormField,
    defining: &DefiningFunction,
    epsilon: f64,
    ks: &[f64],
    phi: &WeightSpec,
    cutoff: &ConvexCutoff,
    cfg: &SolveConfig,
) -> Result<Vec<FamilyMember>> {
    cfg.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon = {epsilon} must be > 0")));
    }
    let g = *omega.grid();
    let inside = RegionMask::ball(&g, &defining.center, defining.radius);
    if !omega.support().is_subset_of(&inside) {
        return Err(Error::Precondition("data is not supported inside D".into()));
    }
    let outside = RegionMask::ball(&g, &defining.center, defining.level_radius(epsilon)).complement();
    let op = DbarOperator::new(g, omega.degree().checked_sub(1).ok_or_else(|| {
        Error::Shape("bumped family needs data of degree >= 1".into())
    })?)?;
    let tail_measure = WeightedMeasure::c_exp_weight(g, phi)?;
    if cfg.check_preconditions {
        check_data_preconditions(omega, &WeightedMeasure::exp_weight(g, phi)?, cfg)?;
    }
    let member_cfg = SolveConfig {
        check_preconditions: false,
        ..cfg.clone()
    };
    ks.par_iter()
        .map(|&k| {
            let family = |e: Error| Error::Family { k, source: Box::new(e) };
            let psi = BumpedWeight::new(phi.clone(), *defining, *cutoff, k).map_err(family)?;
            let w_u = WeightedMeasure::bumped_c_exp_weight(g, &psi).map_err(family)?;
            let w_d = WeightedMeasure::bumped_exp_weight(g, &psi).map_err(family)?;
            let mut solution = solve_min_norm(omega, &op, &w_u, &w_d, &member_cfg).map_err(family)?;
            solution.report.k = Some(k);
            let tail = solution.tail_mass(&outside, &tail_measure).map_err(family)?;
            Ok(FamilyMember { k, solution, tail })
        })
        .collect()
}

/// One test case for [`estimate_constant`].
#[derive(Debug, Clone)]
pub struct ConstantCase {
    pub omega: FormField,
    pub w_u: WeightedMeasure,
    pub w_d: WeightedMeasure,
}

/// Largest observed ratio `‖u‖_{w_u}/‖ω‖_{w_d}` over the cases.
pub fn estimate_constant(cases: &[ConstantCase], cfg: &SolveConfig) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Precondition("estimate_constant needs at least one case".into()));
    }
    let ratios = cases
        .par_iter()
        .map(|c| {
            let op = DbarOperator::new(*c.omega.grid(), c.omega.degree().saturating_sub(1))?;
            Ok(solve_min_norm(&c.omega, &op, &c.w_u, &c.w_d, cfg)?.report.ratio)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::exact_form_data;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn radial_bump(g: Grid, center: f64, width: f64) -> FormField {
        FormField::from_fn(g, 0, |_, p| {
            let r = p.norm_sqr().sqrt();
            let s = (r - center) / width;
            if s.abs() < 1.0 {
                c((1.0 - s * s).powi(4), 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
        .unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = Grid::new(1, 3.0, 16).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let w = WeightedMeasure::uniform(g);
        let omega = FormField::zeros(g, 1).unwrap();
        let s = solve_min_norm(&omega, &op, &w, &w, &SolveConfig::default()).unwrap();
        assert!(s.u.is_zero());
        assert_eq!(s.report.iterations, 0);
        assert_eq!(s.report.ratio, 0.0);
    }

    #[test]
    fn gaussian_weight_radial_bump() {
        let g = Grid::new(1, 5.0, 128).unwrap();
        let phi = WeightSpec::gaussian(1.0, 1).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let v = radial_bump(g, 1.2, 0.8);
        let omega = exact_form_data(&v, &op).unwrap();
        let w_u = WeightedMeasure::c_exp_weight(g, &phi).unwrap();
        let w_d = WeightedMeasure::exp_weight(g, &phi).unwrap();
        let s = solve_min_norm(&omega, &op, &w_u, &w_d, &SolveConfig::default()).unwrap();
        assert!(s.report.residual <= 1e-9, "{:?}", s.report);
        assert!(s.report.ratio.is_finite() && s.report.ratio > 0.0);
    }

    #[test]
    fn dual_operator_is_hermitian_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Grid::new(2, 2.0, 8).unwrap();
        let w = WeightedMeasure::from_log_fn(g, |p| 0.5 * p.norm_sqr()).unwrap();
        for q in 0..2 {
            let op = DbarOperator::new(g, q).unwrap();
            let sys = DualSystem::new(&op, &w).unwrap();
            let rows = sys.rows().len();
            let mut rand_vec = || -> Vec<Complex64> {
                (0..rows).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
            };
            let (l1, l2) = (rand_vec(), rand_vec());
            let (a1, a2) = (sys.apply(&l1), sys.apply(&l2));
            let scale = norm2(&a1) * norm2(&l1);
            assert!(dot(&a1, &l1).re >= -1e-12 * norm2(&l1).powi(2));
            let lhs = dot(&a1, &l2);
            let rhs = dot(&a2, &l1).conj();
            assert!((lhs - rhs).norm() <= 1e-12 * scale, "{lhs} {rhs}");
        }
    }

    #[test]
    fn scaling_is_linear() {
        let g = Grid::new(1, 5.0, 32).unwrap();
        let phi = WeightSpec::gaussian(0.5, 1).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let omega = exact_form_data(&radial_bump(g, 0.9, 0.6), &op).unwrap();
        let w_u = WeightedMeasure::c_exp_weight(g, &phi).unwrap();
        let w_d = WeightedMeasure::exp_weight(g, &phi).unwrap();
        let cfg = SolveConfig {
            tolerance: 1e-13,
            ..SolveConfig::default()
        };
        let base = solve_min_norm(&omega, &op, &w_u, &w_d, &cfg).unwrap();
        let alpha = c(-2.5, 0.75);
        let scaled = solve_min_norm(&omega.scale(alpha), &op, &w_u, &w_d, &cfg).unwrap();
        let diff = scaled.u.sub(&base.u.scale(alpha)).unwrap();
        assert!(diff.l2_norm() <= 1e-10 * scaled.u.l2_norm());
    }

    #[test]
    fn family_k_zero_reduces_to_plain_solve() {
        let g = Grid::new(1, 4.0, 32).unwrap();
        let phi = WeightSpec::gaussian(1.0, 1).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let omega = exact_form_data(&radial_bump(g, 0.8, 0.6), &op).unwrap();
        let d = DefiningFunction::centered(1, 2.0).unwrap();
        let cfg = SolveConfig::default();
        let cutoff = ConvexCutoff::new(0.01).unwrap();
        let fam = solve_bumped_family(&omega, &d, 1.0, &[0.0, 4.0], &phi, &cutoff, &cfg).unwrap();
        let w_u = WeightedMeasure::c_exp_weight(g, &phi).unwrap();
        let w_d = WeightedMeasure::exp_weight(g, &phi).unwrap();
        let plain = solve_min_norm(&omega, &op, &w_u, &w_d, &cfg).unwrap();
        assert_eq!(fam[0].solution.u, plain.u);
        assert_eq!(fam[0].solution.report.ratio, plain.report.ratio);
        // ψ_k = φ on the support of ω, so the data norm does not move
        assert_eq!(fam[1].solution.report.data_norm, plain.report.data_norm);
        assert_eq!(fam[1].solution.report.k, Some(4.0));
    }

    #[test]
    fn family_rejects_data_outside_d() {
        let g = Grid::new(1, 5.0, 32).unwrap();
        let phi = WeightSpec::gaussian(1.0, 1).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let omega = exact_form_data(&radial_bump(g, 1.2, 0.5), &op).unwrap();
        let d = DefiningFunction::centered(1, 1.0).unwrap();
        let r = solve_bumped_family(&omega, &d, 1.0, &[0.0], &phi, &ConvexCutoff::default(), &SolveConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn non_closed_data_is_rejected() {
        let g = Grid::new(2, 2.0, 8).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let w = WeightedMeasure::uniform(g);
        let omega = FormField::from_fn(g, 1, |c_, p| if c_ == 0 { p.coords()[1].conj() } else { c(0.0, 0.0) })
            .unwrap();
        let r = solve_min_norm(&omega, &op, &w, &w, &SolveConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))), "{r:?}");
    }

    #[test]
    fn non_positive_weight_is_config_error() {
        let g = Grid::new(1, 2.0, 8).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let quartic = WeightSpec::from_catalog("radial-quartic", &[0.0, 1.0], 1).unwrap();
        let w_u = WeightedMeasure::c_exp_weight(g, &quartic).unwrap();
        let w_u = WeightedMeasure::from_log(
            g,
            w_u.log_weights().iter().enumerate().map(|(i, v)| if i == 0 { f64::NEG_INFINITY } else { *v }).collect(),
        )
        .unwrap();
        let w_d = WeightedMeasure::uniform(g);
        let omega = FormField::zeros(g, 1).unwrap();
        let r = solve_min_norm(&omega, &op, &w_u, &w_d, &SolveConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
        let floored = SolveConfig {
            weight_floor: Some(1e-12),
            ..SolveConfig::default()
        };
        assert!(solve_min_norm(&omega, &op, &w_u, &w_d, &floored).is_ok());
    }

    #[test]
    fn constant_is_max_ratio_and_idempotent() {
        let g = Grid::new(1, 4.0, 32).unwrap();
        let phi = WeightSpec::gaussian(1.0, 1).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let case = ConstantCase {
            omega: exact_form_data(&radial_bump(g, 1.0, 0.6), &op).unwrap(),
            w_u: WeightedMeasure::c_exp_weight(g, &phi).unwrap(),
            w_d: WeightedMeasure::exp_weight(g, &phi).unwrap(),
        };
        let cfg = SolveConfig::default();
        let one = estimate_constant(std::slice::from_ref(&case), &cfg).unwrap();
        let two = estimate_constant(&[case.clone(), case], &cfg).unwrap();
        assert_eq!(one, two);
        assert!(estimate_constant(&[], &cfg).is_err());
    }

    #[test]
    fn least_squares_mode_agrees_on_consistent_data() {
        let g = Grid::new(1, 4.0, 64).unwrap();
        let phi = WeightSpec::gaussian(0.5, 1).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let omega = exact_form_data(&radial_bump(g, 1.0, 0.7), &op).unwrap();
        let w_u = WeightedMeasure::c_exp_weight(g, &phi).unwrap();
        let w_d = WeightedMeasure::exp_weight(g, &phi).unwrap();
        let cfg = SolveConfig {
            tolerance: 1e-12,
            max_iterations: Some(20_000),
            ..SolveConfig::default()
        };
        let dual = solve_min_norm(&omega, &op, &w_u, &w_d, &cfg).unwrap();
        let ls_cfg = SolveConfig {
            least_squares: true,
            ..cfg
        };
        let ls = solve_min_norm(&omega, &op, &w_u, &w_d, &ls_cfg).unwrap();
        let diff = ls.u.sub(&dual.u).unwrap().l2_norm();
        assert!(diff <= 1e-8 * dual.u.l2_norm(), "{diff}");
        assert!(ls.report.residual <= 1e-10);
    }

    #[test]
    fn least_squares_on_masked_rows_matches_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::new(2, 2.0, 8).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let w = WeightedMeasure::uniform(g);
        let mask = RegionMask::ball(&g, &crate::weights::Point::origin(2), 1.2);
        let v = FormField::from_fn(g, 1, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap();
        let sys = DualSystem::with_row_mask(&op, &w, &mask).unwrap();
        let cfg = SolveConfig {
            tolerance: 1e-13,
            max_iterations: Some(20_000),
            least_squares: true,
            ..SolveConfig::default()
        };
        let s = solve_with_system(&v, &sys, &w, &cfg).unwrap();

        // interior rows of the function operator all have the same norm, so
        // the row scaling does not change the least-squares problem
        let (d, rows) = op.matrix().select_rows(|r| op.is_interior(r % g.len()) && mask.contains(r % g.len()));
        let a = d.to_dense();
        let b = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|&r| v.data()[r]));
        let x = a.clone().svd(true, true).solve(&b, 1e-10).unwrap();
        let worst = s.u.data().iter().zip(x.iter()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(worst <= 1e-8 * scale, "{worst} vs {scale}");
        // the data is not in the range, so the residual stays away from zero
        assert!(s.report.residual > 1e-3, "{:?}", s.report);
    }

    #[test]
    fn report_serializes_expected_keys() {
        let r = SolveReport {
            iterations: 3,
            residual: 1e-12,
            u_norm: 2.0,
            data_norm: 1.0,
            ratio: 2.0,
            k: None,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["data_norm", "iterations", "ratio", "residual", "u_norm"]);
    }
}
