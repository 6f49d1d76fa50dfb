use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::solver::SolveConfig;
use crate::weights::{ConvexCutoff, DefiningFunction, Point, WeightSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Solve,
    Decay,
    Avoid,
    Approx,
    Constants,
    Validate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Decay => "decay",
            ExperimentKind::Avoid => "avoid",
            ExperimentKind::Approx => "approx",
            ExperimentKind::Constants => "constants",
            ExperimentKind::Validate => "validate",
        }
    }

    /// The statement an experiment of this kind checks, as written in its report.
    pub fn theorem(self) -> &'static str {
        match self {
            ExperimentKind::Solve => {
                "weighted L2 existence: minimal-norm solution of dbar u = omega with |u|_{c e^phi} <= C |omega|_{e^phi}"
            }
            ExperimentKind::Decay => {
                "compact support by weight bumping: the psi_k-minimal solutions decay like e^(-k chi(eps)) outside D_eps"
            }
            ExperimentKind::Avoid => {
                "support avoidance: u = v - dbar(chi h) solves dbar u = omega and vanishes on U"
            }
            ExperimentKind::Approx => {
                "approximation procedure: mu_k = omega_k - u_k converges to omega and v solves dbar v = omega in the distributions sense"
            }
            ExperimentKind::Constants => {
                "k-uniform estimate: the norm ratio for psi_k = phi + k chi(rho) is bounded independently of k"
            }
            ExperimentKind::Validate => {
                "discretisation checks: dbar o dbar = 0, oracle agreement, Stokes orthogonality"
            }
        }
    }

    fn needs_problem(self) -> bool {
        self != ExperimentKind::Validate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    #[serde(rename = "R")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub points: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.n, self.half_width, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// `ω = ∂̄v` for a radial shell `v` around `center`.
    Shell,
    /// `ω = ∂̄v` for a ball bump `v`.
    Bump,
    /// `ω = ∂̄v` for `v = (c₀ + c₁z̄₁ + c₂z₁)e^{−|z|²/width}`, not compactly supported.
    GaussianEnvelope,
    /// `ω = ∂̄v` for a sum of seeded random bumps.
    Random,
    Zero,
}

/// How the data `ω` is manufactured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Degree `q` of `ω`; the source field has degree `q − 1`.
    pub degree: usize,
    /// Real coordinates `(x₁, y₁, …)`; empty means the origin.
    pub center: Vec<f64>,
    pub radius: f64,
    pub width: f64,
    /// One `[re, im]` amplitude per component of the source field; empty means all ones.
    pub amplitudes: Vec<[f64; 2]>,
    /// `[c₀, c₁, c₂]` for the Gaussian envelope.
    pub coefficients: Vec<[f64; 2]>,
    /// Cells kept free between the source field and the box faces.
    pub margin: usize,
    /// Number of bumps for random data.
    pub bumps: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Shell,
            degree: 1,
            center: Vec::new(),
            radius: 1.0,
            width: 0.8,
            amplitudes: Vec::new(),
            coefficients: vec![[1.0, 0.0], [0.5, 0.0], [0.0, 0.3]],
            margin: 10,
            bumps: 3,
        }
    }
}

/// Geometry and schedule parameters; each experiment reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    /// Radius of the ball `D = {ρ < 0}` centred at the origin.
    pub d_radius: f64,
    pub epsilon: f64,
    /// Scale `s` of the cutoff `χ(t) = s·t³`.
    pub cutoff_scale: f64,
    pub ks: Vec<f64>,
    pub c_center: Vec<f64>,
    pub c_radius: f64,
    pub u_center: Vec<f64>,
    pub u_radius: f64,
    pub bump_center: Vec<f64>,
    pub bump_radius: f64,
    pub bump_k: f64,
    pub margin_cells: usize,
    pub inner_tolerance: f64,
    pub r0: f64,
    /// Number of stages `K` of the ball schedule.
    pub stages: usize,
    pub test_forms: usize,
    pub correction_epsilon: f64,
    pub correction_k: f64,
    pub correction_cutoff_scale: f64,
    /// Random data sets per `k` for the constant estimate.
    pub samples: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            d_radius: 2.0,
            epsilon: 1.0,
            cutoff_scale: 1.0,
            ks: (0..=6).map(|i| 2.0 * i as f64).collect(),
            c_center: Vec::new(),
            c_radius: 2.0,
            u_center: Vec::new(),
            u_radius: 0.5,
            bump_center: Vec::new(),
            bump_radius: 5.0,
            bump_k: 10.0,
            margin_cells: 3,
            inner_tolerance: 1e-13,
            r0: 3.0,
            stages: 8,
            test_forms: 20,
            correction_epsilon: 1.0,
            correction_k: 4.0,
            correction_cutoff_scale: 1.0,
            samples: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightConfig>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub solver: SolveConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    /// `.json` files are JSON; everything else is read as TOML.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

const PROBLEM_KEYS: [&str; 4] = ["grid.n", "grid.R", "grid.N", "weight.kind"];

fn lookup<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |v, key| v.get(key))
}

fn point(coords: &[f64], n: usize, key: &str) -> Result<Point> {
    if coords.is_empty() {
        return Ok(Point::origin(n));
    }
    if coords.len() != 2 * n || coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config(format!(
            "`{key}` needs {} finite real coordinates, got {}",
            2 * n,
            coords.len()
        )));
    }
    let z: Vec<Complex64> = coords.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Ok(Point::new(&z))
}

fn positive(value: f64, key: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("`{key}` = {value} must be > 0")))
    }
}

/// Largest `|x|` over the real coordinates of a point.
fn sup_norm(p: &Point) -> f64 {
    p.coords().iter().flat_map(|z| [z.re.abs(), z.im.abs()]).fold(0.0, f64::max)
}

impl ExperimentConfig {
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self> {
        let value: Value = match format {
            ConfigFormat::Json => serde_json::from_str(text)
                .map_err(|e| Error::Config(format!("invalid JSON: {e}")))?,
            ConfigFormat::Toml => {
                let t: toml::Value =
                    toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
                serde_json::to_value(t).map_err(|e| Error::Config(e.to_string()))?
            }
        };
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, ConfigFormat::from_path(path))
    }

    /// Checks the required keys by path, then deserializes with the failing key path in errors.
    pub fn from_value(value: Value) -> Result<Self> {
        if !value.is_object() {
            return Err(Error::Config("the config must be a table of keys".into()));
        }
        let kind = lookup(&value, "experiment")
            .ok_or_else(|| Error::Config("missing required key `experiment`".into()))?;
        let kind: ExperimentKind = serde_json::from_value(kind.clone()).map_err(|_| {
            Error::Config(format!(
                "`experiment` = {kind} is not one of solve, decay, avoid, approx, constants, validate"
            ))
        })?;
        if kind.needs_problem() {
            if let Some(key) = PROBLEM_KEYS.iter().find(|k| lookup(&value, k).is_none()) {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.inner()))
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = Some(d.clone());
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        self.grid
            .ok_or_else(|| Error::Config("missing required key `grid.n`".into()))?
            .build()
    }

    pub fn weight(&self) -> Result<WeightSpec> {
        let w = self
            .weight
            .as_ref()
            .ok_or_else(|| Error::Config("missing required key `weight.kind`".into()))?;
        WeightSpec::from_catalog(&w.kind, &w.params, self.grid()?.dim())
    }

    pub fn cutoff(&self) -> Result<ConvexCutoff> {
        ConvexCutoff::new(self.geometry.cutoff_scale)
    }

    pub fn defining_ball(&self) -> Result<DefiningFunction> {
        DefiningFunction::centered(self.grid()?.dim(), self.geometry.d_radius)
    }

    /// `(C, U, bump ball)` for the avoidance experiment.
    pub fn avoidance_balls(&self) -> Result<(DefiningFunction, DefiningFunction, DefiningFunction)> {
        let n = self.grid()?.dim();
        let g = &self.geometry;
        Ok((
            DefiningFunction::ball(point(&g.c_center, n, "geometry.c_center")?, g.c_radius)?,
            DefiningFunction::ball(point(&g.u_center, n, "geometry.u_center")?, g.u_radius)?,
            DefiningFunction::ball(point(&g.bump_center, n, "geometry.bump_center")?, g.bump_radius)?,
        ))
    }

    pub fn data_center(&self) -> Result<Point> {
        point(&self.data.center, self.grid()?.dim(), "data.center")
    }

    /// Field and cross-field checks; runs before anything is allocated.
    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(Error::Config("`threads` must be >= 1".into()));
        }
        self.solver.validate()?;
        if !self.experiment.needs_problem() {
            return Ok(());
        }
        let grid = self.grid()?;
        let n = grid.dim();
        let r = grid.half_width();
        let phi = self.weight()?;
        if !phi.is_strictly_psh() {
            return Err(Error::Config(format!(
                "weight `{}` is not strictly plurisubharmonic; c_phi e^phi would vanish",
                phi.name()
            )));
        }

        let d = &self.data;
        if !(1..=n).contains(&d.degree) {
            return Err(Error::Config(format!("`data.degree` = {} must lie in 1..={n}", d.degree)));
        }
        let center = self.data_center()?;
        positive(d.radius, "data.radius")?;
        positive(d.width, "data.width")?;
        let components = grid.components(d.degree - 1);
        if !d.amplitudes.is_empty() && d.amplitudes.len() != components {
            return Err(Error::Config(format!(
                "`data.amplitudes` needs {components} entries, got {}",
                d.amplitudes.len()
            )));
        }
        if d.kind == DataKind::GaussianEnvelope && d.coefficients.len() != 3 {
            return Err(Error::Config("`data.coefficients` needs three entries".into()));
        }
        let reach = match d.kind {
            DataKind::Shell => d.radius + d.width,
            DataKind::Bump | DataKind::Random => d.radius,
            DataKind::GaussianEnvelope | DataKind::Zero => 0.0,
        };
        if sup_norm(&center) + reach >= r {
            return Err(Error::Config("the data support leaves the box".into()));
        }

        let g = &self.geometry;
        match self.experiment {
            ExperimentKind::Decay | ExperimentKind::Constants => {
                positive(g.d_radius, "geometry.d_radius")?;
                positive(g.epsilon, "geometry.epsilon")?;
                self.cutoff()?;
                if g.ks.is_empty() {
                    return Err(Error::Config("`geometry.ks` is empty".into()));
                }
                if g.ks.iter().any(|k| !(k.is_finite() && *k >= 0.0))
                    || g.ks.windows(2).any(|w| w[1] <= w[0])
                {
                    return Err(Error::Config("`geometry.ks` must be non-negative and increasing".into()));
                }
                if g.d_radius >= r {
                    return Err(Error::Config(format!(
                        "D of radius {} does not fit in the box of half-width {r}",
                        g.d_radius
                    )));
                }
                if self.experiment == ExperimentKind::Constants && g.samples == 0 {
                    return Err(Error::Config("`geometry.samples` must be >= 1".into()));
                }
            }
            ExperimentKind::Avoid => {
                if n != 2 || d.degree != 2 {
                    return Err(Error::Config("avoid needs grid.n = 2 and data.degree = 2".into()));
                }
                positive(g.c_radius, "geometry.c_radius")?;
                positive(g.u_radius, "geometry.u_radius")?;
                positive(g.epsilon, "geometry.epsilon")?;
                positive(g.inner_tolerance, "geometry.inner_tolerance")?;
                if g.bump_k < 0.0 {
                    return Err(Error::Config("`geometry.bump_k` must be >= 0".into()));
                }
                self.cutoff()?;
                let (c, u, _) = self.avoidance_balls()?;
                let gap = u.center.sub(&c.center).norm_sqr().sqrt();
                if gap + u.radius >= c.radius {
                    return Err(Error::Config("the closure of U is not inside C".into()));
                }
                if sup_norm(&c.center) + c.radius >= r {
                    return Err(Error::Config("C is not inside the box".into()));
                }
            }
            ExperimentKind::Approx => {
                positive(g.r0, "geometry.r0")?;
                if g.stages == 0 {
                    return Err(Error::Config("`geometry.stages` must be >= 1".into()));
                }
                // the schedule grows by at least one per stage
                let r_k = g.r0 + g.stages as f64;
                if r_k + 1.0 >= r {
                    return Err(Error::Config(format!(
                        "ball schedule needs r_K + 1 < R, but r_K >= r0 + K = {r_k} and R = {r}"
                    )));
                }
                positive(g.correction_epsilon, "geometry.correction_epsilon")?;
                ConvexCutoff::new(g.correction_cutoff_scale)?;
            }
            ExperimentKind::Solve | ExperimentKind::Validate => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DECAY: &str = r#"
experiment = "decay"
[grid]
n = 1
R = 3
N = 64
[weight]
kind = "gaussian"
params = [1.0]
"#;

    #[test]
    fn toml_and_json_agree() {
        let a = ExperimentConfig::parse(DECAY, ConfigFormat::Toml).unwrap();
        let json = serde_json::json!({
            "experiment": "decay",
            "grid": {"n": 1, "R": 3.0, "N": 64},
            "weight": {"kind": "gaussian", "params": [1.0]}
        });
        let b = ExperimentConfig::parse(&json.to_string(), ConfigFormat::Json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grid.unwrap().points, 64);
        a.validate().unwrap();
    }

    #[test]
    fn missing_key_is_named_by_path() {
        let text = DECAY.replace("N = 64\n", "");
        let err = ExperimentConfig::parse(&text, ConfigFormat::Toml).unwrap_err();
        assert!(err.to_string().contains("missing required key `grid.N`"), "{err}");
        assert!(err.is_config_error());
    }

    #[test]
    fn unknown_and_mistyped_keys_report_their_path() {
        let err = ExperimentConfig::parse(&format!("{DECAY}\n[solver]\ntolerence = 1e-9\n"), ConfigFormat::Toml)
            .unwrap_err();
        assert!(err.to_string().contains("solver"), "{err}");
        let err = ExperimentConfig::parse(&DECAY.replace("N = 64", "N = \"many\""), ConfigFormat::Toml)
            .unwrap_err();
        assert!(err.to_string().contains("grid.N"), "{err}");
    }

    #[test]
    fn validate_needs_no_problem_section() {
        let cfg = ExperimentConfig::parse("experiment = \"validate\"", ConfigFormat::Toml).unwrap();
        cfg.validate().unwrap();
        let err = ExperimentConfig::parse("experiment = \"nonsense\"", ConfigFormat::Toml).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn cross_field_checks() {
        let approx = DECAY.replace("\"decay\"", "\"approx\"") + "[geometry]\nr0 = 2.0\nstages = 3\n";
        let cfg = ExperimentConfig::parse(&approx, ConfigFormat::Toml).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("r_K + 1 < R"));

        let quartic = DECAY.replace("kind = \"gaussian\"\nparams = [1.0]", "kind = \"radial-quartic\"\nparams = [1.0]");
        let cfg = ExperimentConfig::parse(&quartic, ConfigFormat::Toml).unwrap();
        assert!(cfg.validate().is_err());

        let avoid = r#"
experiment = "avoid"
[grid]
n = 2
R = 4
N = 16
[weight]
kind = "gaussian"
params = [0.5]
[data]
degree = 2
[geometry]
c_radius = 1.0
u_radius = 0.8
u_center = [0.5, 0, 0, 0]
"#;
        let cfg = ExperimentConfig::parse(avoid, ConfigFormat::Toml).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("not inside C"));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = ExperimentConfig::parse(&format!("seed = 4\nthreads = 2\n{DECAY}"), ConfigFormat::Toml).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            threads: None,
            out_dir: Some("out".into()),
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.threads, Some(2));
        assert_eq!(cfg.out_dir, Some(PathBuf::from("out")));
    }
}
