use num_complex::Complex64;

use super::{stable_sum, DbarOperator, FormField, Grid, RegionMask, WeightedMeasure};
use crate::error::{Error, Result};

/// Minimum distance, in cells, between manufactured data and the box faces.
pub const DEFAULT_SUPPORT_MARGIN: usize = 10;

/// `ω = ∂̄v` for a compactly supported `v`; for `q = n` this `ω` pairs to zero
/// against every discrete holomorphic monomial.
pub fn exact_form_data(v: &FormField, op: &DbarOperator) -> Result<FormField> {
    exact_form_data_with_margin(v, op, DEFAULT_SUPPORT_MARGIN)
}

pub fn exact_form_data_with_margin(
    v: &FormField,
    op: &DbarOperator,
    margin: usize,
) -> Result<FormField> {
    let g = v.grid();
    if let Some(idx) = (0..g.len()).find(|&i| v.pointwise_abs(i) > 0.0 && g.boundary_distance(i) < margin) {
        return Err(Error::DataGeneration(format!(
            "source field is non-zero {} cells from the boundary (margin {margin} required)",
            g.boundary_distance(idx)
        )));
    }
    op.apply(v)
}

/// Coefficients of `asin(u) = Σ_k c_k u^{2k+1}`; `asinh` has `(-1)^k c_k`.
fn arcsine_coefficients(max_degree: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut c = 1.0; // (2k)! / (4^k (k!)^2)
    let mut k = 0usize;
    while 2 * k + 1 <= max_degree {
        out.push(c / (2 * k + 1) as f64);
        c *= ((2 * k + 1) as f64) / ((2 * k + 2) as f64);
        k += 1;
    }
    out
}

/// Discrete holomorphic monomials `p_0, …, p_M` at one complex coordinate.
///
/// `p_m` is `m!` times the `t^m` coefficient of
/// `exp(x·asinh(th)/h + i·y·asin(th)/h)`. Each exponential in that family is an
/// eigenfunction of both centred differences with eigenvalues `t` and `it`, so
/// the centred `∂̄` annihilates every `p_m` exactly; `p_m = z^m + O(h²)`.
pub fn discrete_monomials(z: Complex64, h: f64, max_degree: usize) -> Vec<Complex64> {
    let coeffs = arcsine_coefficients(max_degree);
    let mut e = vec![Complex64::new(0.0, 0.0); max_degree + 1];
    for (k, c) in coeffs.iter().enumerate() {
        let j = 2 * k + 1;
        let scale = c * h.powi(2 * k as i32);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        e[j] = Complex64::new(sign * scale * z.re, scale * z.im);
    }
    // f = exp(E): f_0 = 1, m f_m = Σ_{j=1}^m j e_j f_{m-j}
    let mut f = vec![Complex64::new(0.0, 0.0); max_degree + 1];
    f[0] = Complex64::new(1.0, 0.0);
    for m in 1..=max_degree {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 1..=m {
            acc += e[j] * f[m - j] * j as f64;
        }
        f[m] = acc / m as f64;
    }
    let mut factorial = 1.0;
    for (m, fm) in f.iter_mut().enumerate() {
        if m > 0 {
            factorial *= m as f64;
        }
        *fm *= factorial;
    }
    f
}

pub fn discrete_monomial(z: Complex64, h: f64, degree: usize) -> Complex64 {
    discrete_monomials(z, h, degree)[degree]
}

/// Multi-indices `α` with `|α| ≤ max_degree`, graded then lexicographic.
pub fn multi_indices(n: usize, max_degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=max_degree {
        if n == 1 {
            out.push(vec![total]);
        } else {
            for a in (0..=total).rev() {
                out.push(vec![a, total - a]);
            }
        }
    }
    out
}

/// Pairings `Σ_z ω(z)·p_α(z)·h^{2n}` of a top-degree form against the
/// discrete holomorphic monomials, one per entry of [`multi_indices`].
pub fn moment_orthogonality(omega: &FormField, max_degree: usize) -> Result<Vec<Complex64>> {
    let g = *omega.grid();
    let n = g.dim();
    if omega.degree() != n {
        return Err(Error::Shape(format!(
            "moment test needs a top-degree (0,{n}) form, got degree {}",
            omega.degree()
        )));
    }
    let h = g.spacing();
    let alphas = multi_indices(n, max_degree);
    let mut terms: Vec<Vec<Complex64>> = vec![Vec::with_capacity(g.len()); alphas.len()];
    for idx in 0..g.len() {
        let w = omega.at(0, idx);
        if w.re == 0.0 && w.im == 0.0 {
            continue;
        }
        let p = g.point(idx);
        let monos: Vec<Vec<Complex64>> = p
            .coords()
            .iter()
            .map(|&z| discrete_monomials(z, h, max_degree))
            .collect();
        for (a, alpha) in alphas.iter().enumerate() {
            let basis = alpha
                .iter()
                .enumerate()
                .fold(Complex64::new(1.0, 0.0), |acc, (j, &aj)| acc * monos[j][aj]);
            terms[a].push(w * basis);
        }
    }
    let cell = g.cell_measure();
    Ok(terms
        .into_iter()
        .map(|t| {
            Complex64::new(
                stable_sum(t.iter().map(|v| v.re)),
                stable_sum(t.iter().map(|v| v.im)),
            ) * cell
        })
        .collect())
}

/// Largest `|⟨ω, p_α⟩| / (‖ω‖·R^{|α|})`, the scale-free orthogonality defect.
pub fn moment_violation(omega: &FormField, max_degree: usize) -> Result<f64> {
    let pairings = moment_orthogonality(omega, max_degree)?;
    let norm = omega.l2_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let r = omega.grid().half_width().max(1.0);
    let alphas = multi_indices(omega.grid().dim(), max_degree);
    Ok(pairings
        .iter()
        .zip(&alphas)
        .map(|(p, a)| p.norm() / (norm * r.powi(a.iter().sum::<usize>() as i32)))
        .fold(0.0, f64::max))
}

/// `Σ_{mask} |f|²·w·h^{2n}`
pub fn tail_mass(f: &FormField, mask: &RegionMask, w: &WeightedMeasure) -> Result<f64> {
    if f.grid() != mask.grid() || f.grid() != w.grid() {
        return Err(Error::Shape("field, mask and measure grids differ".into()));
    }
    let g: &Grid = f.grid();
    let len = g.len();
    let sum = stable_sum(
        f.data()
            .iter()
            .enumerate()
            .filter(|(k, _)| mask.contains(k % len))
            .map(|(k, a)| w.weighted_sqr(*a, k % len)),
    );
    Ok(sum * g.cell_measure())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::weighted_norm;
    use crate::weights::Point;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn monomials_match_closed_forms() {
        let h = 0.3;
        let z = c(0.7, -1.1);
        let p = discrete_monomials(z, h, 3);
        assert_eq!(p[0], c(1.0, 0.0));
        assert!((p[1] - z).norm() < 1e-15);
        assert!((p[2] - z * z).norm() < 1e-14);
        assert!((p[3] - (z * z * z - z.conj() * h * h)).norm() < 1e-14);
    }

    #[test]
    fn monomials_are_discretely_holomorphic() {
        let g = Grid::new(1, 3.0, 16).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        for m in 0..=6 {
            let f = FormField::from_fn(g, 0, |_, p| discrete_monomial(p.coords()[0], g.spacing(), m)).unwrap();
            let df = op.apply(&f).unwrap();
            let worst = (0..g.len())
                .filter(|&i| g.boundary_distance(i) >= 1)
                .map(|i| df.at(0, i).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1e-10 * 3f64.powi(m as i32), "m = {m}: {worst}");
        }
    }

    #[test]
    fn manufactured_data_is_orthogonal() {
        let g = Grid::new(1, 5.0, 64).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let v = FormField::from_fn(g, 0, |_, p| {
            let r = p.norm_sqr().sqrt();
            let s = ((r - 1.0) / 1.0).abs();
            if s < 1.0 {
                c((-4.0 * (r - 1.0).powi(2)).exp() * (1.0 - s * s).powi(4), 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
        .unwrap();
        let omega = exact_form_data(&v, &op).unwrap();
        assert!(omega.l2_norm() > 0.0);
        assert!(moment_violation(&omega, 6).unwrap() <= 1e-9);
    }

    #[test]
    fn support_near_boundary_is_rejected() {
        let g = Grid::new(1, 2.0, 16).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let v = FormField::from_fn(g, 0, |_, _| c(1.0, 0.0)).unwrap();
        assert!(matches!(exact_form_data(&v, &op), Err(Error::DataGeneration(_))));
        let zero = FormField::zeros(g, 0).unwrap();
        assert!(exact_form_data(&zero, &op).unwrap().is_zero());
    }

    #[test]
    fn gaussian_mass_moment() {
        let g = Grid::new(1, 6.0, 128).unwrap();
        let omega = FormField::from_fn(g, 1, |_, p| c((-p.norm_sqr()).exp(), 0.0)).unwrap();
        let m = moment_orthogonality(&omega, 2).unwrap();
        assert!((m[0].re - PI).abs() < 1e-8 && m[0].im.abs() < 1e-12);
        let zero = FormField::zeros(g, 1).unwrap();
        assert!(moment_orthogonality(&zero, 4).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn tail_mass_examples() {
        let g = Grid::new(1, 2.0, 128).unwrap();
        let w = WeightedMeasure::uniform(g);
        let one = FormField::from_fn(g, 0, |_, _| c(1.0, 0.0)).unwrap();
        let outside = RegionMask::ball(&g, &Point::origin(1), 1.0).complement();
        let t = tail_mass(&one, &outside, &w).unwrap();
        assert!((t - (16.0 - PI)).abs() < 2e-2, "{t}");
        let all = RegionMask::everything(&g);
        let n = weighted_norm(&one, &w).unwrap();
        assert!((tail_mass(&one, &all, &w).unwrap() - n * n).abs() < 1e-12);
        assert_eq!(tail_mass(&FormField::zeros(g, 0).unwrap(), &all, &w).unwrap(), 0.0);
    }
}
