use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DataConfig, DataKind};
use crate::error::Result;
use crate::grid::{exact_form_data_with_margin, DbarOperator, FormField, Grid};
use crate::weights::Point;

fn amplitude(cfg: &DataConfig, c: usize) -> Complex64 {
    cfg.amplitudes
        .get(c)
        .map(|a| Complex64::new(a[0], a[1]))
        .unwrap_or(Complex64::new(1.0, 0.0))
}

/// `(1 − s²)⁴` on `|s| < 1`, zero outside.
fn quartic_bump(s2: f64) -> f64 {
    if s2 < 1.0 {
        (1.0 - s2).powi(4)
    } else {
        0.0
    }
}

/// The source field `v` of degree `q − 1` with `ω = ∂̄v`.
pub fn source_field(grid: Grid, cfg: &DataConfig, center: &Point, seed: u64) -> Result<FormField> {
    let degree = cfg.degree - 1;
    match cfg.kind {
        DataKind::Zero => FormField::zeros(grid, degree),
        DataKind::Shell => FormField::from_fn(grid, degree, |c, p| {
            let r = p.sub(center).norm_sqr().sqrt();
            let t = r - cfg.radius;
            let s = t / cfg.width;
            amplitude(cfg, c) * (-4.0 * t * t).exp() * quartic_bump(s * s)
        }),
        DataKind::Bump => FormField::from_fn(grid, degree, |c, p| {
            let s2 = p.sub(center).norm_sqr() / (cfg.radius * cfg.radius);
            amplitude(cfg, c) * quartic_bump(s2)
        }),
        DataKind::GaussianEnvelope => {
            let k: Vec<Complex64> = cfg.coefficients.iter().map(|a| Complex64::new(a[0], a[1])).collect();
            FormField::from_fn(grid, degree, |c, p| {
                let z = p.sub(center).coords()[0];
                let envelope = (-p.sub(center).norm_sqr() / cfg.width).exp();
                amplitude(cfg, c) * (k[0] + k[1] * z.conj() + k[2] * z) * envelope
            })
        }
        DataKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = grid.dim();
            let components = grid.components(degree);
            let bumps: Vec<(Point, f64, Vec<Complex64>)> = (0..cfg.bumps)
                .map(|_| {
                    let offset: Vec<Complex64> = (0..n)
                        .map(|_| {
                            Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)) * cfg.radius
                        })
                        .collect();
                    let c = Point::new(
                        &center.coords().iter().zip(&offset).map(|(a, b)| a + b).collect::<Vec<_>>(),
                    );
                    let rho = rng.gen_range(0.4..0.8) * cfg.radius;
                    let amps = (0..components)
                        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                        .collect();
                    (c, rho, amps)
                })
                .collect();
            FormField::from_fn(grid, degree, |c, p| {
                bumps
                    .iter()
                    .map(|(b, rho, amps)| amps[c] * quartic_bump(p.sub(b).norm_sqr() / (rho * rho)))
                    .sum::<Complex64>()
                    * amplitude(cfg, c)
            })
        }
    }
}

/// Manufactures `ω = ∂̄v`. Compact sources keep the configured margin from the
/// faces; the Gaussian envelope is applied on the whole box.
pub fn manufacture(grid: Grid, cfg: &DataConfig, center: &Point, seed: u64) -> Result<FormField> {
    let v = source_field(grid, cfg, center, seed)?;
    let op = DbarOperator::new(grid, cfg.degree - 1)?;
    match cfg.kind {
        DataKind::GaussianEnvelope => op.apply(&v),
        _ => exact_form_data_with_margin(&v, &op, cfg.margin),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::moment_violation;

    #[test]
    fn manufactured_shell_is_exact_and_orthogonal() {
        let g = Grid::new(1, 3.0, 64).unwrap();
        let cfg = DataConfig::default();
        let omega = manufacture(g, &cfg, &Point::origin(1), 0).unwrap();
        assert!(omega.l2_norm() > 0.0);
        assert!(moment_violation(&omega, 6).unwrap() <= 1e-12);
    }

    #[test]
    fn random_data_is_seeded() {
        let g = Grid::new(2, 3.0, 16).unwrap();
        let cfg = DataConfig {
            kind: DataKind::Random,
            degree: 2,
            margin: 1,
            ..DataConfig::default()
        };
        let a = manufacture(g, &cfg, &Point::origin(2), 7).unwrap();
        let b = manufacture(g, &cfg, &Point::origin(2), 7).unwrap();
        let c = manufacture(g, &cfg, &Point::origin(2), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.degree(), 2);
    }

    #[test]
    fn margin_violation_is_a_data_error() {
        let g = Grid::new(1, 2.0, 16).unwrap();
        let cfg = DataConfig {
            radius: 1.5,
            ..DataConfig::default()
        };
        let err = manufacture(g, &cfg, &Point::origin(1), 0).unwrap_err();
        assert!(err.is_config_error());
    }
}
