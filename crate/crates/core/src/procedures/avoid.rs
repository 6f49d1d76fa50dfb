use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::RadialCutoff;
use crate::error::{Error, Result};
use crate::grid::{stable_sum, DbarOperator, FormField, RegionMask, WeightedMeasure};
use crate::solver::{solve_bumped_family, solve_with_system, DualSystem, SolveConfig};
use crate::weights::{ConvexCutoff, DefiningFunction, WeightSpec};

const VANISHING_LIMIT: f64 = 1e-10;
const RESIDUAL_LIMIT: f64 = 1e-7;
const EXPANSION_LIMIT: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct AvoidanceParams {
    /// The ball `C`; the data must vanish on it.
    pub outer: DefiningFunction,
    /// The ball `U` with `Ū ⊂ C` on which the corrected solution vanishes.
    pub inner: DefiningFunction,
    /// Ball `D ⊃ supp ω` for the first, compactly supported solve.
    pub bump: DefiningFunction,
    pub epsilon: f64,
    pub k: f64,
    pub cutoff: ConvexCutoff,
    /// Relative residual for the unweighted solve `∂̄h = v` on `C`.
    pub inner_tolerance: f64,
    /// Required gap in cells between `supp ω` and `C`, and between `Ū` and `∂C`.
    pub margin_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceReport {
    pub max_u_on_u: f64,
    pub max_v: f64,
    /// `‖∂̄u − ω‖/‖ω‖` over the constraint rows, plus any data on the faces.
    pub residual: f64,
    /// `‖∂̄v‖/‖ω‖` over the rows inside `C`.
    pub closedness_on_c: f64,
    pub inner_residual: f64,
    /// Largest pointwise gap between `v − ∂̄(χh)` and its product-rule expansion.
    pub expansion_gap: f64,
    pub v_norm: f64,
    pub h_norm: f64,
    pub u_norm: f64,
    pub transition_inner: f64,
    pub transition_outer: f64,
    pub v_iterations: usize,
    pub h_iterations: usize,
}

impl AvoidanceReport {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let fields = [
            self.max_u_on_u,
            self.max_v,
            self.residual,
            self.closedness_on_c,
            self.expansion_gap,
            self.v_norm,
            self.h_norm,
            self.u_norm,
        ];
        if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            out.push("a reported quantity is negative or not finite".into());
        }
        if self.max_u_on_u > VANISHING_LIMIT * self.max_v {
            out.push(format!(
                "max |u| on U = {:.3e} exceeds {VANISHING_LIMIT:e}·max |v| = {:.3e}",
                self.max_u_on_u,
                VANISHING_LIMIT * self.max_v
            ));
        }
        if self.residual > RESIDUAL_LIMIT {
            out.push(format!("residual {:.3e} exceeds {RESIDUAL_LIMIT:e}", self.residual));
        }
        if self.closedness_on_c > RESIDUAL_LIMIT {
            out.push(format!(
                "dbar v on C is {:.3e} relative, above {RESIDUAL_LIMIT:e}",
                self.closedness_on_c
            ));
        }
        if self.expansion_gap > EXPANSION_LIMIT * self.max_v {
            out.push(format!(
                "product-rule expansion differs by {:.3e}",
                self.expansion_gap
            ));
        }
        out
    }
}

/// Centred-difference product-rule defect `∂̄(fg) − f·∂̄g − g·∂̄f` for functions.
///
/// For one axis, `f₊g₊ − f₋g₋ = f₀(g₊ − g₋) + g₀(f₊ − f₋) + (f₊ − f₀)(g₊ − g₀) − (f₋ − f₀)(g₋ − g₀)`,
/// so the defect is the last two terms over `2h`. It is formed at interior
/// points only and is zero on the box faces.
pub fn leibniz_defect(f: &FormField, g: &FormField) -> Result<FormField> {
    if f.degree() != 0 || !f.same_shape(g) {
        return Err(Error::Shape("the product rule is formed for two functions on one grid".into()));
    }
    let grid = *f.grid();
    let n = grid.dim();
    let len = grid.len();
    let h = grid.spacing();
    let (fd, gd) = (f.data(), g.data());
    let mut out = vec![Complex64::new(0.0, 0.0); n * len];
    for p in 0..len {
        if grid.boundary_distance(p) < 1 {
            continue;
        }
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (axis, factor) in [(2 * j, Complex64::new(0.5, 0.0)), (2 * j + 1, Complex64::new(0.0, 0.5))] {
                let s = grid.stride(axis);
                let (up, down) = (p + s, p - s);
                let cross = (fd[up] - fd[p]) * (gd[up] - gd[p]) - (fd[down] - fd[p]) * (gd[down] - gd[p]);
                acc += factor * cross / (2.0 * h);
            }
            out[j * len + p] = acc;
        }
    }
    FormField::from_data(grid, 1, out)
}

fn product(f: &FormField, form: &FormField) -> FormField {
    let len = f.grid().len();
    let data = form
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| v * f.data()[k % len])
        .collect();
    FormField::from_data(*form.grid(), form.degree(), data).expect("same shape")
}

fn masked_norm(f: &FormField, mask: &RegionMask) -> f64 {
    let len = f.grid().len();
    stable_sum(
        f.data()
            .iter()
            .enumerate()
            .filter(|(k, _)| mask.contains(k % len))
            .map(|(_, v)| v.norm_sqr()),
    )
    .sqrt()
}

/// Corrects a solution of `∂̄v = ω` so that it vanishes on `U`, for `(0,2)`-forms on `C²`.
///
/// Steps: a compactly supported `v`; a check that `∂̄v ≈ 0` on `C`; an
/// unweighted minimal-norm `h` with `∂̄h = v` on `C`; a radial cutoff `χ`
/// equal to 1 near `Ū` and 0 near `∂C`; and `u = v − ∂̄(χh)`. The product-rule
/// form `v − χv − ∂̄χ·h − (defect)` is assembled as well and compared.
pub fn support_avoidance(
    omega: &FormField,
    params: &AvoidanceParams,
    phi: &WeightSpec,
    cfg: &SolveConfig,
) -> Result<(FormField, AvoidanceReport)> {
    let g = *omega.grid();
    if g.dim() != 2 || omega.degree() != 2 {
        return Err(Error::Precondition(
            "support avoidance is implemented for (0,2)-forms on C^2".into(),
        ));
    }
    let h_step = g.spacing();
    let m = params.margin_cells;
    let c_mask = RegionMask::ball(&g, &params.outer.center, params.outer.radius);
    let u_mask = RegionMask::ball(&g, &params.inner.center, params.inner.radius);
    let offset = params.inner.center.sub(&params.outer.center).norm_sqr().sqrt();
    if u_mask.count() == 0 {
        return Err(Error::Precondition("U contains no grid points".into()));
    }
    if offset + params.inner.radius >= params.outer.radius || !u_mask.dilate(m).is_subset_of(&c_mask) {
        return Err(Error::Precondition(format!("U is not inside C with a {m}-cell margin")));
    }
    if omega.support().dilate(m).intersect(&c_mask).count() > 0 {
        return Err(Error::Precondition(format!(
            "the data comes within {m} cells of C"
        )));
    }
    if !c_mask.dilate(1).is_subset_of(&RegionMask::interior(&g, 1)) {
        return Err(Error::Precondition("C reaches the box faces".into()));
    }

    // transition from 1 just outside Ū (one stencil step) to 0 one step inside ∂C
    let transition_inner = offset + params.inner.radius + h_step;
    let room = params.outer.radius - h_step - transition_inner;
    let width = (0.3 * params.outer.radius).min(room);
    if width <= 0.0 {
        return Err(Error::Precondition("no room for the cutoff transition inside C".into()));
    }
    let chi = RadialCutoff {
        center: params.inner.center,
        inner: transition_inner,
        outer: transition_inner + width,
    };

    if omega.is_zero() {
        let report = AvoidanceReport {
            max_u_on_u: 0.0,
            max_v: 0.0,
            residual: 0.0,
            closedness_on_c: 0.0,
            inner_residual: 0.0,
            expansion_gap: 0.0,
            v_norm: 0.0,
            h_norm: 0.0,
            u_norm: 0.0,
            transition_inner: chi.inner,
            transition_outer: chi.outer,
            v_iterations: 0,
            h_iterations: 0,
        };
        return Ok((FormField::zeros(g, 1)?, report));
    }

    let family = solve_bumped_family(
        omega,
        &params.bump,
        params.epsilon,
        &[params.k],
        phi,
        &params.cutoff,
        cfg,
    )
    .map_err(|e| Error::staged("compact-support solve", e))?;
    let v_solution = &family[0].solution;
    let v = v_solution.u.clone();

    let op1 = DbarOperator::new(g, 1)?;
    let omega_norm = omega.l2_norm();
    let dv = op1.apply(&v)?;
    let closedness_on_c = masked_norm(&dv, &c_mask.intersect(&RegionMask::interior(&g, 1)))
        / (omega_norm / g.cell_measure().sqrt());
    if closedness_on_c > RESIDUAL_LIMIT {
        return Err(Error::staged(
            "closedness on C",
            Error::NumericalConsistency(format!("dbar v on C is {closedness_on_c:.3e} relative")),
        ));
    }

    let op0 = DbarOperator::new(g, 0)?;
    let plain = WeightedMeasure::uniform(g);
    // D on functions has more rows than unknowns, and v is closed only up to
    // the first solve's tolerance
    let inner_cfg = SolveConfig {
        tolerance: params.inner_tolerance,
        least_squares: true,
        check_preconditions: false,
        ..cfg.clone()
    };
    let h = DualSystem::with_row_mask(&op0, &plain, &c_mask)
        .and_then(|sys| solve_with_system(&v, &sys, &plain, &inner_cfg))
        .map_err(|e| Error::staged("inner solve on C", e))?;

    let chi_field = chi.on_grid(g);
    let chi_support = chi_field.support();
    if !chi_support.dilate(1).is_subset_of(&c_mask) || !u_mask.dilate(1).is_subset_of(&RegionMask::from_indices(&g, |i| chi_field.at(0, i).re == 1.0)) {
        return Err(Error::Precondition("the cutoff does not fit between U and C".into()));
    }

    let chi_h = product(&chi_field, &h.u);
    let u = v.sub(&op0.apply(&chi_h)?)?;

    let expanded = v
        .sub(&product(&chi_field, &v))?
        .sub(&product(&h.u, &op0.apply(&chi_field)?))?
        .sub(&leibniz_defect(&chi_field, &h.u)?)?;
    let expansion_gap = u.sub(&expanded)?.max_abs();

    // the discrete equation is imposed at interior rows; data on the faces
    // would stay unmatched and counts in full
    let faces = RegionMask::interior(&g, 1).complement();
    let defect = op1.apply(&u)?.sub(omega)?;
    let residual = (masked_norm(&defect, &RegionMask::interior(&g, 1)).powi(2)
        + masked_norm(omega, &faces).powi(2))
    .sqrt()
        / (omega_norm / g.cell_measure().sqrt());
    let report = AvoidanceReport {
        max_u_on_u: u.max_abs_on(&u_mask),
        max_v: v.max_abs(),
        residual,
        closedness_on_c,
        inner_residual: h.report.residual,
        expansion_gap,
        v_norm: v.l2_norm(),
        h_norm: h.u.l2_norm(),
        u_norm: u.l2_norm(),
        transition_inner: chi.inner,
        transition_outer: chi.outer,
        v_iterations: v_solution.report.iterations,
        h_iterations: h.report.iterations,
    };
    Ok((u, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::weights::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball(center: &[f64], radius: f64) -> DefiningFunction {
        let c: Vec<Complex64> = center.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        DefiningFunction::ball(Point::new(&c), radius).unwrap()
    }

    fn params() -> AvoidanceParams {
        AvoidanceParams {
            outer: ball(&[-0.75, 0.0, -0.75, 0.0], 2.2),
            inner: ball(&[-0.75, 0.0, -0.75, 0.0], 0.6),
            bump: ball(&[0.0; 4], 5.0),
            epsilon: 10.0,
            k: 10.0,
            cutoff: ConvexCutoff::new(1e-4).unwrap(),
            inner_tolerance: 1e-13,
            margin_cells: 2,
        }
    }

    #[test]
    fn product_rule_defect_closes_the_leibniz_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Grid::new(2, 2.0, 8).unwrap();
        let mut random = || {
            FormField::from_fn(g, 0, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .unwrap()
        };
        let (f, h) = (random(), random());
        let op = DbarOperator::new(g, 0).unwrap();
        let fh = product(&f, &h);
        let lhs = op.apply(&fh).unwrap();
        let rhs = product(&f, &op.apply(&h).unwrap())
            .add(&product(&h, &op.apply(&f).unwrap()))
            .unwrap()
            .add(&leibniz_defect(&f, &h).unwrap())
            .unwrap();
        let gap = lhs.sub(&rhs).unwrap().restrict(&RegionMask::interior(&g, 1));
        assert!(gap.max_abs() <= 1e-13 * lhs.max_abs(), "{}", gap.max_abs());
        // linear functions have a vanishing defect against anything
        let linear = FormField::from_fn(g, 0, |_, p| p.coords()[0] + 2.0 * p.coords()[1].conj()).unwrap();
        let d = leibniz_defect(&linear, &linear).unwrap();
        assert!(d.max_abs() <= 1e-12);
    }

    #[test]
    fn zero_data_gives_zero_correction() {
        let g = Grid::new(2, 4.0, 16).unwrap();
        let omega = FormField::zeros(g, 2).unwrap();
        let phi = WeightSpec::gaussian(0.5, 2).unwrap();
        let (u, rep) = support_avoidance(&omega, &params(), &phi, &SolveConfig::default()).unwrap();
        assert!(u.is_zero());
        assert_eq!(u.degree(), 1);
        assert!(rep.violations().is_empty());
        assert!(rep.transition_inner < rep.transition_outer);
    }

    #[test]
    fn geometry_is_checked() {
        let g = Grid::new(2, 4.0, 16).unwrap();
        let omega = FormField::zeros(g, 2).unwrap();
        let phi = WeightSpec::gaussian(0.5, 2).unwrap();
        let cfg = SolveConfig::default();

        // U sticks out of C
        let mut p = params();
        p.inner = ball(&[0.8, 0.0, -0.75, 0.0], 0.6);
        assert!(matches!(support_avoidance(&omega, &p, &phi, &cfg), Err(Error::Precondition(_))));

        // C reaches the box faces
        let mut p = params();
        p.outer = ball(&[-1.5, 0.0, -0.75, 0.0], 2.2);
        p.inner = ball(&[-1.5, 0.0, -0.75, 0.0], 0.6);
        assert!(matches!(support_avoidance(&omega, &p, &phi, &cfg), Err(Error::Precondition(_))));

        // data one cell outside C
        let c_mask = RegionMask::ball(&g, &params().outer.center, params().outer.radius);
        let idx = c_mask.dilate(1).intersect(&c_mask.complement()).indices().next().unwrap();
        let mut near = FormField::zeros(g, 2).unwrap();
        near.data_mut()[idx] = Complex64::new(1.0, 0.0);
        assert!(matches!(support_avoidance(&near, &params(), &phi, &cfg), Err(Error::Precondition(_))));

        let one = Grid::new(1, 4.0, 16).unwrap();
        let flat = FormField::zeros(one, 1).unwrap();
        let phi1 = WeightSpec::gaussian(0.5, 1).unwrap();
        assert!(support_avoidance(&flat, &params(), &phi1, &cfg).is_err());
    }
}
