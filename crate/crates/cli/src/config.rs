use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ulamcert::expr::Expr;
use ulamcert::map1d::{lorenz_1d, Branch, PiecewiseMap1D};
use ulamcert::map2d::{lorenz_2d, SkewProductMap};
use ulamcert::Rational;

/// A number written as a float, `p/q`, or `2^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Float(f64),
    Text(String),
}

impl Num {
    pub fn value(&self) -> Result<f64> {
        match self {
            Num::Float(x) => Ok(*x),
            Num::Text(s) => {
                let s = s.trim();
                if let Some(e) = s.strip_prefix("2^") {
                    let k: i32 = e.trim_matches(|c| c == '(' || c == ')').parse().with_context(|| format!("bad exponent in {s:?}"))?;
                    return Ok(2f64.powi(k));
                }
                if s.contains('/') {
                    let r: Rational = s.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
                    return Ok(r.to_f64());
                }
                s.parse().with_context(|| format!("not a number: {s:?}"))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lorenz,
    Generic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub lo: String,
    pub hi: String,
    pub map: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub family: Family,
    pub alpha: Option<String>,
    pub theta: Option<String>,
    pub beta: Option<String>,
    /// Iterate used throughout: the pipeline works with `F^m`.
    pub m: usize,
    #[serde(default)]
    pub branches: Vec<BranchSpec>,
    /// Fibre maps `G(x, y)`, one per base branch; must be affine in `y`.
    #[serde(default)]
    pub fibers: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneDConfig {
    /// Cells of the fine grid, `1/ξ`.
    pub cells: usize,
    pub entry_tol: Num,
    /// Truncation level of the Lasota-Yorke estimate.
    pub ly_l: f64,
    #[serde(default = "default_ly_tol")]
    pub ly_tol: f64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_cap")]
    pub contraction_cap: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoDConfig {
    /// `1/δ`.
    pub nx: usize,
    /// `1/δ′`.
    pub ny: usize,
    pub coarse_k: usize,
    pub y_slices: usize,
    pub entry_tol: Num,
    pub max_leak: Num,
    pub bad_radius: Num,
    /// Iterations of the 2D operator.
    pub n: u32,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    pub eps1: Option<Num>,
    pub eps2: Option<Num>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Orbit length of `F` itself (not the iterate).
    pub points: usize,
    pub k0: i32,
    pub count: usize,
    pub seed: [f64; 2],
    pub burn_in: usize,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig { enabled: true, points: 1 << 16, k0: 4, count: 6, seed: [0.1, 0.2], burn_in: 1000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub map: MapConfig,
    pub one_d: OneDConfig,
    pub two_d: TwoDConfig,
    #[serde(default)]
    pub dimension: DimensionConfig,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    pub output: Option<PathBuf>,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_ly_tol() -> f64 {
    1e-7
}
fn default_solver_tol() -> f64 {
    1e-13
}
fn default_max_iter() -> usize {
    10_000
}
fn default_cap() -> usize {
    64
}
fn default_threads() -> usize {
    1
}
fn default_true() -> bool {
    true
}

pub const BUNDLED: [(&str, &str); 3] = [
    ("doubling", include_str!("../configs/doubling.toml")),
    ("desk", include_str!("../configs/desk.toml")),
    ("full", include_str!("../configs/full.toml")),
];

fn rational(s: &Option<String>, name: &str) -> Result<Rational> {
    let s = s.as_ref().with_context(|| format!("map.{name} is required for the lorenz family"))?;
    s.parse().map_err(|e| anyhow::anyhow!("map.{name}: {e}"))
}

impl PipelineConfig {
    /// Reads a config file, or one of the bundled configs by name.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => match BUNDLED.iter().find(|(n, _)| Path::new(n) == path) {
                Some((_, t)) => t.to_string(),
                None => return Err(e).with_context(|| format!("reading {}", path.display())),
            },
        };
        let cfg = Self::parse(&text)?;
        Ok((cfg, text))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let pow2 = |n: usize, what: &str| {
            if n == 0 || !n.is_power_of_two() {
                bail!("{what} = {n} must be a power of two");
            }
            Ok(())
        };
        pow2(self.one_d.cells, "one_d.cells")?;
        pow2(self.two_d.nx, "two_d.nx")?;
        pow2(self.two_d.ny, "two_d.ny")?;
        if self.one_d.cells <= self.two_d.nx {
            bail!("the 1D grid ({} cells) must be finer than the 2D x grid ({})", self.one_d.cells, self.two_d.nx);
        }
        for (what, v) in [
            ("one_d.entry_tol", self.one_d.entry_tol.value()?),
            ("two_d.entry_tol", self.two_d.entry_tol.value()?),
            ("two_d.max_leak", self.two_d.max_leak.value()?),
            ("two_d.bad_radius", self.two_d.bad_radius.value()?),
            ("one_d.ly_l", self.one_d.ly_l),
            ("one_d.ly_tol", self.one_d.ly_tol),
            ("one_d.solver_tol", self.one_d.solver_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{what} must be positive, got {v}");
            }
        }
        for e in [&self.dimension.eps1, &self.dimension.eps2].into_iter().flatten() {
            let v = e.value()?;
            if !(v > 0.0 && v < 0.5) {
                bail!("dimension window radius {v} outside (0, 1/2)");
            }
        }
        if self.map.m == 0 || self.two_d.n == 0 {
            bail!("map.m and two_d.n must be at least 1");
        }
        if self.map.family == Family::Lorenz {
            for (n, v) in [("alpha", &self.map.alpha), ("theta", &self.map.theta), ("beta", &self.map.beta)] {
                rational(v, n)?;
            }
        } else if self.map.branches.is_empty() || self.map.branches.len() != self.map.fibers.len() {
            bail!("generic maps need one fibre map per base branch");
        }
        Ok(())
    }

    pub fn base_map(&self) -> Result<PiecewiseMap1D> {
        match self.map.family {
            Family::Lorenz => Ok(lorenz_1d(&rational(&self.map.alpha, "alpha")?, &rational(&self.map.theta, "theta")?)?),
            Family::Generic => {
                let mut out = Vec::new();
                for b in &self.map.branches {
                    let lo: Rational = b.lo.parse()?;
                    let hi: Rational = b.hi.parse()?;
                    let e: Expr = b.map.parse()?;
                    out.push(Branch::from_expr(&lo, &hi, e)?);
                }
                Ok(PiecewiseMap1D::new(out)?)
            }
        }
    }

    pub fn skew_map(&self) -> Result<SkewProductMap> {
        self.skew_map_iterate(self.map.m)
    }

    pub fn skew_map_iterate(&self, m: usize) -> Result<SkewProductMap> {
        match self.map.family {
            Family::Lorenz => Ok(lorenz_2d(
                &rational(&self.map.alpha, "alpha")?,
                &rational(&self.map.theta, "theta")?,
                &rational(&self.map.beta, "beta")?,
                m,
            )?),
            Family::Generic => {
                let fibers = self.map.fibers.iter().map(|s| s.parse::<Expr>()).collect::<ulamcert::Result<Vec<_>>>()?;
                Ok(SkewProductMap::new(self.base_map()?, fibers, m)?)
            }
        }
    }

    /// `(α, θ, β)` when the dimension formula applies.
    pub fn lorenz_parameters(&self) -> Result<Option<(Rational, Rational, Rational)>> {
        if self.map.family != Family::Lorenz {
            return Ok(None);
        }
        Ok(Some((
            rational(&self.map.alpha, "alpha")?,
            rational(&self.map.theta, "theta")?,
            rational(&self.map.beta, "beta")?,
        )))
    }
}
