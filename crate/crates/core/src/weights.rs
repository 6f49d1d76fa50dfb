//! Plurisubharmonic weights with closed-form derivatives.
//!
//! A weight `φ` on `C^n` (`n ∈ {1, 2}`) is described by a [`WeightSpec`]. The
//! quantities the solvers consume are the value `φ(z)`, the antiholomorphic
//! gradient `∂φ/∂z̄_j`, the complex Hessian `∂²φ/∂z_i∂z̄_j` and its smallest
//! eigenvalue `c_φ(z)`. The bumped family `ψ_k = φ + k·χ(ρ)` is built from a
//! ball defining function `ρ` and the hinge cubic `χ`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A point of `C^n`, `n ∈ {1, 2}`. Unused coordinates are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    n: usize,
    z: [Complex64; 2],
}

impl Point {
    pub fn new(coords: &[Complex64]) -> Self {
        assert!(
            (1..=2).contains(&coords.len()),
            "only C^1 and C^2 are supported"
        );
        let mut z = [Complex64::new(0.0, 0.0); 2];
        z[..coords.len()].copy_from_slice(coords);
        Self {
            n: coords.len(),
            z,
        }
    }

    pub fn origin(n: usize) -> Self {
        Self::new(&vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn coords(&self) -> &[Complex64] {
        &self.z[..self.n]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coords().iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn sub(&self, other: &Point) -> Point {
        let mut out = *self;
        for j in 0..self.n {
            out.z[j] -= other.z[j];
        }
        out
    }

    pub(crate) fn with_coord(&self, j: usize, value: Complex64) -> Point {
        let mut out = *self;
        out.z[j] = value;
        out
    }
}

/// Complex Hessian `H_{ij} = ∂²φ/∂z_i∂z̄_j`, stored as an `n × n` block of a 2×2 array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexHessian {
    n: usize,
    entries: [[Complex64; 2]; 2],
}

impl ComplexHessian {
    pub fn new(rows: &[Vec<Complex64>]) -> Self {
        let n = rows.len();
        assert!((1..=2).contains(&n) && rows.iter().all(|r| r.len() == n));
        let mut entries = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in rows.iter().enumerate() {
            entries[i][..n].copy_from_slice(row);
        }
        Self { n, entries }
    }

    pub fn real(rows: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        Self::new(&rows)
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self::real(&rows)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i][j]
    }

    fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max(self.entries[i][j].norm());
            }
        }
        m
    }

    /// Largest deviation from `H = H^H`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                d = d.max((self.entries[i][j] - self.entries[j][i].conj()).norm());
            }
        }
        d
    }

    /// `self - other`, for Loewner-order checks.
    #[cfg(test)]
    fn sub(&self, other: &ComplexHessian) -> ComplexHessian {
        let mut out = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                out.entries[i][j] -= other.entries[i][j];
            }
        }
        out
    }
}

/// Smallest eigenvalue of a Hermitian 1×1 or 2×2 matrix.
pub fn smallest_eigenvalue(h: &ComplexHessian) -> Result<f64> {
    let scale = h.max_abs();
    if h.hermitian_defect() > 1e-12 * scale {
        return Err(Error::NumericalConsistency(format!(
            "matrix is not Hermitian (defect {:.3e}, scale {:.3e})",
            h.hermitian_defect(),
            scale
        )));
    }
    match h.n {
        1 => Ok(h.entries[0][0].re),
        _ => {
            let a = h.entries[0][0].re;
            let d = h.entries[1][1].re;
            let b = h.entries[0][1];
            let mean = 0.5 * (a + d);
            let spread = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            let largest = mean + spread;
            if largest > 0.0 {
                // det / λ_max avoids cancellation when λ_min ≪ λ_max
                Ok((a * d - b.norm_sqr()) / largest)
            } else {
                Ok(mean - spread)
            }
        }
    }
}

pub type ValueFn = dyn Fn(&Point) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&Point) -> Vec<Complex64> + Send + Sync;
pub type HessianFn = dyn Fn(&Point) -> ComplexHessian + Send + Sync;

/// User-supplied weight given by its value, `∂̄`-gradient and complex Hessian.
#[derive(Clone)]
pub struct CustomWeight {
    pub name: String,
    pub value: Arc<ValueFn>,
    pub gradient: Arc<GradientFn>,
    pub hessian: Arc<HessianFn>,
    /// Whether the caller guarantees `c_φ > 0` everywhere.
    pub strictly_psh: bool,
}

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomWeight")
            .field("name", &self.name)
            .field("strictly_psh", &self.strictly_psh)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum WeightKind {
    /// `φ = a·|z|²`
    Gaussian { a: f64 },
    /// `φ = Σ a_j·|z_j|²`
    AnisotropicGaussian { a: Vec<f64> },
    /// `φ = quadratic·|z|² + quartic·|z|⁴`; degenerate at the origin when `quadratic = 0`.
    RadialQuartic { quadratic: f64, quartic: f64 },
    Custom(CustomWeight),
}

#[derive(Debug, Clone)]
pub struct WeightSpec {
    kind: WeightKind,
    dim: usize,
}

/// Value, `∂̄`-gradient and complex Hessian of a weight at one point.
#[derive(Debug, Clone)]
pub struct WeightEval {
    pub value: f64,
    pub gradient: Vec<Complex64>,
    pub hessian: ComplexHessian,
}

impl WeightSpec {
    pub fn new(kind: WeightKind, dim: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("weight dimension {dim} not in {{1, 2}}")));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        match &kind {
            WeightKind::Gaussian { a } if !positive(*a) => {
                return Err(Error::Config(format!("gaussian parameter a = {a} must be > 0")))
            }
            WeightKind::AnisotropicGaussian { a } => {
                if a.len() != dim || !a.iter().all(|&x| positive(x)) {
                    return Err(Error::Config(format!(
                        "anisotropic-gaussian needs {dim} positive parameters, got {a:?}"
                    )));
                }
            }
            WeightKind::RadialQuartic { quadratic, quartic } => {
                if !(quadratic.is_finite() && *quadratic >= 0.0 && positive(*quartic)) {
                    return Err(Error::Config(format!(
                        "radial-quartic needs quadratic >= 0 and quartic > 0, got ({quadratic}, {quartic})"
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { kind, dim })
    }

    pub fn gaussian(a: f64, dim: usize) -> Result<Self> {
        Self::new(WeightKind::Gaussian { a }, dim)
    }

    /// Looks a weight up by catalog name.
    pub fn from_catalog(name: &str, params: &[f64], dim: usize) -> Result<Self> {
        let kind = match name {
            "gaussian" => match params {
                [a] => WeightKind::Gaussian { a: *a },
                _ => return Err(Error::Config("gaussian takes one parameter `a`".into())),
            },
            "anisotropic-gaussian" => WeightKind::AnisotropicGaussian { a: params.to_vec() },
            "radial-quartic" => match params {
                [quartic] => WeightKind::RadialQuartic {
                    quadratic: 0.0,
                    quartic: *quartic,
                },
                [quadratic, quartic] => WeightKind::RadialQuartic {
                    quadratic: *quadratic,
                    quartic: *quartic,
                },
                _ => {
                    return Err(Error::Config(
                        "radial-quartic takes [quartic] or [quadratic, quartic]".into(),
                    ))
                }
            },
            other => return Err(Error::Config(format!("unknown weight kind `{other}`"))),
        };
        Self::new(kind, dim)
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> String {
        match &self.kind {
            WeightKind::Gaussian { .. } => "gaussian".into(),
            WeightKind::AnisotropicGaussian { .. } => "anisotropic-gaussian".into(),
            WeightKind::RadialQuartic { .. } => "radial-quartic".into(),
            WeightKind::Custom(c) => c.name.clone(),
        }
    }

    /// Whether `c_φ > 0` holds everywhere.
    pub fn is_strictly_psh(&self) -> bool {
        match &self.kind {
            WeightKind::Gaussian { .. } | WeightKind::AnisotropicGaussian { .. } => true,
            WeightKind::RadialQuartic { quadratic, .. } => *quadratic > 0.0,
            WeightKind::Custom(c) => c.strictly_psh,
        }
    }

    pub fn value(&self, z: &Point) -> f64 {
        match &self.kind {
            WeightKind::Gaussian { a } => a * z.norm_sqr(),
            WeightKind::AnisotropicGaussian { a } => z
                .coords()
                .iter()
                .zip(a)
                .map(|(c, aj)| aj * c.norm_sqr())
                .sum(),
            WeightKind::RadialQuartic { quadratic, quartic } => {
                let r2 = z.norm_sqr();
                quadratic * r2 + quartic * r2 * r2
            }
            WeightKind::Custom(c) => (c.value)(z),
        }
    }

    /// `∂φ/∂z̄_j` for each `j`.
    pub fn gradient(&self, z: &Point) -> Vec<Complex64> {
        match &self.kind {
            WeightKind::Gaussian { a } => z.coords().iter().map(|c| c * *a).collect(),
            WeightKind::AnisotropicGaussian { a } => {
                z.coords().iter().zip(a).map(|(c, aj)| c * *aj).collect()
            }
            WeightKind::RadialQuartic { quadratic, quartic } => {
                let r2 = z.norm_sqr();
                let factor = quadratic + 2.0 * quartic * r2;
                z.coords().iter().map(|c| c * factor).collect()
            }
            WeightKind::Custom(c) => (c.gradient)(z),
        }
    }

    pub fn hessian(&self, z: &Point) -> ComplexHessian {
        match &self.kind {
            WeightKind::Gaussian { a } => ComplexHessian::diagonal(&vec![*a; self.dim]),
            WeightKind::AnisotropicGaussian { a } => ComplexHessian::diagonal(a),
            WeightKind::RadialQuartic { quadratic, quartic } => {
                // ∂²/∂z_i∂z̄_j (|z|⁴) = 2|z|²δ_ij + 2 z̄_i z_j
                let r2 = z.norm_sqr();
                let c = z.coords();
                let rows: Vec<Vec<Complex64>> = (0..self.dim)
                    .map(|i| {
                        (0..self.dim)
                            .map(|j| {
                                let delta = if i == j { quadratic + 2.0 * quartic * r2 } else { 0.0 };
                                Complex64::new(delta, 0.0) + c[i].conj() * c[j] * (2.0 * quartic)
                            })
                            .collect()
                    })
                    .collect();
                ComplexHessian::new(&rows)
            }
            WeightKind::Custom(c) => (c.hessian)(z),
        }
    }

    pub fn eval(&self, z: &Point) -> Result<WeightEval> {
        if z.dim() != self.dim {
            return Err(Error::Shape(format!(
                "point in C^{} for a weight on C^{}",
                z.dim(),
                self.dim
            )));
        }
        if !z.is_finite() {
            return Err(Error::Config("weight evaluated at a non-finite point".into()));
        }
        Ok(WeightEval {
            value: self.value(z),
            gradient: self.gradient(z),
            hessian: self.hessian(z),
        })
    }

    /// `c_φ(z)`, the smallest eigenvalue of the complex Hessian.
    pub fn smallest_eigenvalue(&self, z: &Point) -> Result<f64> {
        smallest_eigenvalue(&self.hessian(z))
    }
}

/// `c_φ` sampled at every grid point.
#[derive(Debug, Clone)]
pub struct EigenField {
    pub values: Vec<f64>,
}

impl EigenField {
    pub fn on_grid(weight: &WeightSpec, grid: &Grid) -> Result<Self> {
        if weight.dim() != grid.dim() {
            return Err(Error::Shape("weight and grid dimensions differ".into()));
        }
        let values = (0..grid.len())
            .map(|i| weight.smallest_eigenvalue(&grid.point(i)))
            .collect::<Result<Vec<_>>>()?;
        if weight.is_strictly_psh() {
            if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NumericalConsistency(format!(
                    "weight `{}` declared strictly psh but c_phi = {v:e} at grid point {i}",
                    weight.name()
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Ball defining function `ρ(z) = |z - center|² - r²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefiningFunction {
    pub center: Point,
    pub radius: f64,
}

impl DefiningFunction {
    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Config(format!("ball radius {radius} must be > 0")));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(n: usize, radius: f64) -> Result<Self> {
        Self::ball(Point::origin(n), radius)
    }

    pub fn eval(&self, z: &Point) -> f64 {
        z.sub(&self.center).norm_sqr() - self.radius * self.radius
    }

    /// Radius of the sublevel set `{ρ < level}`.
    pub fn level_radius(&self, level: f64) -> f64 {
        (self.radius * self.radius + level).max(0.0).sqrt()
    }

    pub fn contains(&self, z: &Point) -> bool {
        self.eval(z) < 0.0
    }
}

/// Hinge cubic `χ(t) = s·max(t, 0)³`: zero on `t ≤ 0`, increasing and convex, `C²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexCutoff {
    pub scale: f64,
}

impl Default for ConvexCutoff {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl ConvexCutoff {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("cutoff scale {scale} must be > 0")));
        }
        Ok(Self { scale })
    }

    /// `(χ(t), χ'(t), χ''(t))`
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        if t <= 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            let s = self.scale;
            (s * t * t * t, 3.0 * s * t * t, 6.0 * s * t)
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    /// The level `ε > 0` with `χ(ε) = target`.
    pub fn level_for(&self, target: f64) -> f64 {
        (target / self.scale).cbrt()
    }
}

/// `ψ_k = φ + k·χ(ρ)`.
#[derive(Debug, Clone)]
pub struct BumpedWeight {
    pub base: WeightSpec,
    pub defining: DefiningFunction,
    pub cutoff: ConvexCutoff,
    pub k: f64,
}

impl BumpedWeight {
    pub fn new(
        base: WeightSpec,
        defining: DefiningFunction,
        cutoff: ConvexCutoff,
        k: f64,
    ) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::Config(format!("bump strength k = {k} must be >= 0")));
        }
        if defining.center.dim() != base.dim() {
            return Err(Error::Shape("defining function and weight dimensions differ".into()));
        }
        Ok(Self {
            base,
            defining,
            cutoff,
            k,
        })
    }

    /// `σ(z) = χ(ρ(z))`
    pub fn bump(&self, z: &Point) -> f64 {
        self.cutoff.value(self.defining.eval(z))
    }

    pub fn value(&self, z: &Point) -> f64 {
        let bump = self.bump(z);
        // k = 0 must reproduce φ exactly, even where χ(ρ) is huge
        if self.k == 0.0 || bump == 0.0 {
            self.base.value(z)
        } else {
            self.base.value(z) + self.k * bump
        }
    }

    /// `(ψ_k(z), c_φ(z))`; the second entry is the lower bound used for `c_{ψ_k}`.
    pub fn eval(&self, z: &Point) -> Result<(f64, f64)> {
        Ok((self.value(z), self.base.smallest_eigenvalue(z)?))
    }

    /// Complex Hessian of `ψ_k`: `H_φ + k(χ'(ρ)·I + χ''(ρ)·∂ρ ⊗ ∂̄ρ)`.
    pub fn hessian(&self, z: &Point) -> ComplexHessian {
        let rho = self.defining.eval(z);
        let (_, d1, d2) = self.cutoff.eval(rho);
        let base = self.base.hessian(z);
        let n = base.dim();
        let w = z.sub(&self.defining.center);
        let c = w.coords();
        let rows: Vec<Vec<Complex64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let delta = if i == j { d1 } else { 0.0 };
                        // ∂ρ/∂z_i = conj(w_i), ∂ρ/∂z̄_j = w_j
                        base.get(i, j)
                            + (Complex64::new(delta, 0.0) + c[i].conj() * c[j] * d2) * self.k
                    })
                    .collect()
            })
            .collect();
        ComplexHessian::new(&rows)
    }
}
