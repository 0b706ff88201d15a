use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ulamcert::certify::{
    build_mu0, convergence_bound, discretization_bound, invariance_defect, iterate, total_certificate, DiscretizationBound,
    ErrorBudget, InvarianceDefect,
};
use ulamcert::dimension::{bound_log_integral, correlation_dimension, dimension_interval};
use ulamcert::map1d::{branch_partition, ly_coefficients, IteratedMap, LYCoefficients};
use ulamcert::map2d::{geometric_constants, localize_attractor, CellSet2D, GeometricConstants};
use ulamcert::sparse::SparseTransitionMatrix;
use ulamcert::ulam1d::{
    assemble_ulam_1d, certify_fixed_point, coarsen, contraction_time, fixed_point, ContractionProfile, FixedPointCertificate1D,
    Partition1D, StepDensity1D,
};
use ulamcert::ulam2d::{assemble_ulam_2d, Ulam2D};
use ulamcert::{Error, Interval};

use crate::config::PipelineConfig;
use crate::manifest::{hash_file, RunManifest, StageRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    LyCoeffs,
    Ulam1d,
    Fixpoint,
    Certify1d,
    Localize,
    Ulam2d,
    Iterate,
    Certify2d,
    Dimension,
    Corrdim,
    Report,
}

pub const ORDER: [Stage; 11] = [
    Stage::LyCoeffs,
    Stage::Ulam1d,
    Stage::Fixpoint,
    Stage::Certify1d,
    Stage::Localize,
    Stage::Ulam2d,
    Stage::Iterate,
    Stage::Certify2d,
    Stage::Dimension,
    Stage::Corrdim,
    Stage::Report,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::LyCoeffs => "ly-coeffs",
            Stage::Ulam1d => "ulam1d",
            Stage::Fixpoint => "fixpoint",
            Stage::Certify1d => "certify1d",
            Stage::Localize => "localize",
            Stage::Ulam2d => "ulam2d",
            Stage::Iterate => "iterate",
            Stage::Certify2d => "certify2d",
            Stage::Dimension => "dimension",
            Stage::Corrdim => "corrdim",
            Stage::Report => "report",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            LyCoeffs | Ulam1d | Localize | Corrdim => &[],
            Fixpoint => &[Ulam1d],
            Certify1d => &[LyCoeffs, Ulam1d, Fixpoint],
            Ulam2d => &[Localize],
            Iterate => &[Fixpoint, Localize, Ulam2d],
            Certify2d => &[LyCoeffs, Ulam1d, Certify1d, Iterate],
            Dimension => &[LyCoeffs, Fixpoint, Certify1d],
            Report => &[LyCoeffs, Certify1d, Localize, Ulam2d, Certify2d, Dimension, Corrdim],
        }
    }
}

pub mod files {
    pub const LY: &str = "ly.json";
    pub const P1D: &str = "p1d.bin";
    pub const ULAM1D: &str = "ulam1d.json";
    pub const F1D: &str = "f1d.csv";
    pub const FIXPOINT: &str = "fixpoint.json";
    pub const CERT1D: &str = "certificate_1d.json";
    pub const CELLS: &str = "cells.bin";
    pub const LOCALIZE: &str = "localize.json";
    pub const P2D: &str = "p2d.bin";
    pub const LEAK: &str = "leak2d.bin";
    pub const ULAM2D: &str = "ulam2d.json";
    pub const F_DELTA: &str = "f_delta.csv";
    pub const MU_N: &str = "mu_n.csv";
    pub const ITERATE: &str = "iterate.json";
    pub const CERT2D: &str = "certificate_2d.json";
    pub const DIMENSION: &str = "dimension.json";
    pub const CORRDIM: &str = "corrdim.json";
    pub const REPORT: &str = "report.json";
    pub const SUMMARY: &str = "summary.txt";
}
use files::*;

#[derive(Serialize, Deserialize)]
pub struct FixpointOut {
    pub cells: usize,
    pub residual: Interval,
}

#[derive(Serialize, Deserialize)]
pub struct Certificate1DOut {
    pub profile: ContractionProfile,
    pub certificate: FixedPointCertificate1D,
}

#[derive(Serialize, Deserialize)]
pub struct IterateOut {
    pub n: u32,
    /// Bound on `‖f_ξ − f_δ‖₁` from coarsening to the 2D x grid.
    pub coarsening_loss: Interval,
    pub eta: Interval,
    pub mass: Interval,
}

#[derive(Serialize, Deserialize)]
pub struct Certificate2DOut {
    pub constants: GeometricConstants,
    pub defect: InvarianceDefect,
    /// `‖f − f_δ‖₁` for the marginal density on the 2D x grid.
    pub marginal_error: Interval,
    pub convergence: Interval,
    pub discretization: DiscretizationBound,
    pub budget: ErrorBudget,
}

const LEAK_MAGIC: &[u8; 8] = b"ULAMLEAK";
const LEAK_VERSION: u32 = 1;

fn write_leak(leak: &[f64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(LEAK_MAGIC)?;
    w.write_all(&LEAK_VERSION.to_le_bytes())?;
    w.write_all(&(leak.len() as u64).to_le_bytes())?;
    for v in leak {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_leak(path: &Path) -> Result<Vec<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 20];
    r.read_exact(&mut head)?;
    if &head[..8] != LEAK_MAGIC || u32::from_le_bytes(head[8..12].try_into()?) != LEAK_VERSION {
        bail!("{} is not a version {LEAK_VERSION} leak file", path.display());
    }
    let n = u64::from_le_bytes(head[12..20].try_into()?) as usize;
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub force: bool,
    pub threads: usize,
    /// Files read by the running stage.
    read: BTreeMap<String, String>,
    log: Box<dyn Write>,
}

/// Adds the suggestion the algorithm gives when a contraction hypothesis fails.
fn diagnose(e: Error) -> anyhow::Error {
    match e {
        Error::NoContraction { .. } | Error::ContractionCapExceeded { .. } => anyhow::anyhow!(
            "{e}; restart the algorithm with a larger n and smaller δ, δ′ (for the Lasota-Yorke step: a larger iterate m or a different truncation level l)"
        ),
        other => other.into(),
    }
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, dir: PathBuf, force: bool, threads: usize, log: Box<dyn Write>) -> Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut manifest = RunManifest::load(&dir)?;
        manifest.config_hash = config_hash(&cfg)?;
        Ok(Pipeline { cfg, dir, manifest, force, threads, read: BTreeMap::new(), log })
    }

    fn path(&self, f: &str) -> PathBuf {
        self.dir.join(f)
    }

    fn note(&mut self, f: &str) -> Result<PathBuf> {
        let p = self.path(f);
        if !p.exists() {
            bail!("missing upstream artifact {}", p.display());
        }
        self.read.insert(f.to_string(), hash_file(&p)?);
        Ok(p)
    }

    fn json<T: DeserializeOwned>(&mut self, f: &str) -> Result<T> {
        let p = self.note(f)?;
        serde_json::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))
    }

    fn write_json<T: Serialize>(&self, f: &str, v: &T) -> Result<()> {
        std::fs::write(self.path(f), serde_json::to_string_pretty(v)? + "\n")?;
        Ok(())
    }

    fn iterated(&self) -> Result<IteratedMap> {
        Ok(branch_partition(&self.cfg.base_map()?, self.cfg.map.m)?)
    }

    /// A stage may be skipped when its outputs are intact and every file it read still has the
    /// recorded hash.
    fn reusable(&self, stage: Stage) -> bool {
        let Some(rec) = self.manifest.intact(stage.name(), &self.dir) else { return false };
        rec.inputs.iter().all(|(f, h)| hash_file(&self.path(f)).map(|c| &c == h).unwrap_or(false))
    }

    fn check_upstream(&self, stage: Stage) -> Result<()> {
        for up in stage.upstream() {
            if self.manifest.intact(up.name(), &self.dir).is_none() {
                let why = match self.manifest.stages.get(up.name()) {
                    None => "has not been run",
                    Some(r) if r.config_hash != self.manifest.config_hash => "was run with a different config",
                    Some(_) => "has outputs whose hashes no longer match the manifest",
                };
                bail!("stale upstream hash: stage {} {why}; run it (or `all`) first", up.name());
            }
        }
        Ok(())
    }

    /// Runs `stage` unless it can be reused. Returns whether it ran.
    pub fn run(&mut self, stage: Stage) -> Result<bool> {
        self.check_upstream(stage)?;
        if !self.force && self.reusable(stage) {
            writeln!(self.log, "{:<10} up to date", stage.name())?;
            return Ok(false);
        }
        self.read.clear();
        let t0 = Instant::now();
        let outputs = self.execute(stage).with_context(|| format!("stage {}", stage.name()))?;
        let seconds = t0.elapsed().as_secs_f64();
        let mut out_hashes = BTreeMap::new();
        for f in outputs {
            out_hashes.insert(f.to_string(), hash_file(&self.path(f))?);
        }
        let rec = StageRecord {
            config_hash: self.manifest.config_hash.clone(),
            inputs: std::mem::take(&mut self.read),
            outputs: out_hashes,
            seconds,
            threads: self.threads,
        };
        self.manifest.stages.insert(stage.name().to_string(), rec);
        self.manifest.save(&self.dir)?;
        writeln!(self.log, "{:<10} done in {seconds:.2}s", stage.name())?;
        Ok(true)
    }

    pub fn run_all(&mut self) -> Result<()> {
        for s in ORDER {
            self.run(s)?;
        }
        let report: Value = serde_json::from_str(&std::fs::read_to_string(self.path(REPORT))?)?;
        writeln!(self.log, "W bound: {}", report["wasserstein_total"])?;
        writeln!(self.log, "dimension: {}", report["dimension"])?;
        Ok(())
    }

    fn execute(&mut self, stage: Stage) -> Result<Vec<&'static str>> {
        let c = self.cfg.clone();
        match stage {
            Stage::LyCoeffs => {
                let ly = ly_coefficients(&self.iterated()?, c.one_d.ly_l, c.one_d.ly_tol).map_err(diagnose)?;
                self.write_json(LY, &ly)?;
                Ok(vec![LY])
            }
            Stage::Ulam1d => {
                let p = assemble_ulam_1d(&self.iterated()?, Partition1D::new(c.one_d.cells)?, c.one_d.entry_tol.value()?)?;
                p.write_binary(&self.path(P1D))?;
                self.write_json(
                    ULAM1D,
                    &json!({
                        "cells": p.n_cols,
                        "nnz": p.nnz(),
                        "entry_tol": p.entry_tol,
                        "max_radius": p.max_radius(),
                        "max_col_radius_sum": p.max_col_radius_sum(),
                    }),
                )?;
                Ok(vec![P1D, ULAM1D])
            }
            Stage::Fixpoint => {
                let p = SparseTransitionMatrix::read_binary(&self.note(P1D)?)?;
                let (f, residual) = fixed_point(&p, c.one_d.solver_tol, c.one_d.max_iter)?;
                f.write_csv(&self.path(F1D))?;
                self.write_json(FIXPOINT, &FixpointOut { cells: f.n(), residual })?;
                Ok(vec![F1D, FIXPOINT])
            }
            Stage::Certify1d => {
                let ly: LYCoefficients = self.json(LY)?;
                let fp: FixpointOut = self.json(FIXPOINT)?;
                let p = SparseTransitionMatrix::read_binary(&self.note(P1D)?)?;
                let f = StepDensity1D::read_csv(&self.note(F1D)?)?;
                let profile = contraction_time(&p, &f, c.one_d.contraction_cap).map_err(diagnose)?;
                let certificate = certify_fixed_point(&p, &f, fp.residual, &ly, &profile).map_err(diagnose)?;
                self.write_json(CERT1D, &Certificate1DOut { profile, certificate })?;
                Ok(vec![CERT1D])
            }
            Stage::Localize => {
                let f = c.skew_map()?;
                let cells = localize_attractor(&f, c.two_d.coarse_k, c.two_d.y_slices, c.two_d.nx, c.two_d.ny)?;
                cells.write_bitmap(&self.path(CELLS))?;
                self.write_json(LOCALIZE, &json!({ "nx": cells.nx, "ny": cells.ny, "marked": cells.len() }))?;
                Ok(vec![CELLS, LOCALIZE])
            }
            Stage::Ulam2d => {
                let cells = CellSet2D::read_bitmap(&self.note(CELLS)?)?;
                let u = assemble_ulam_2d(&c.skew_map()?, &cells, c.two_d.entry_tol.value()?, c.two_d.max_leak.value()?)?;
                u.matrix.write_binary(&self.path(P2D))?;
                write_leak(&u.leak, &self.path(LEAK))?;
                let sums = u.matrix.col_sums();
                let (lo, hi) = sums.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.lo()), b.max(s.hi())));
                self.write_json(
                    ULAM2D,
                    &json!({
                        "cells": cells.len(),
                        "nnz": u.matrix.nnz(),
                        "entry_tol": u.matrix.entry_tol,
                        "max_radius": u.matrix.max_radius(),
                        "max_leak": u.max_leak(),
                        "column_sums": [lo, hi],
                    }),
                )?;
                Ok(vec![P2D, LEAK, ULAM2D])
            }
            Stage::Iterate => {
                let cells = CellSet2D::read_bitmap(&self.note(CELLS)?)?;
                let matrix = SparseTransitionMatrix::read_binary(&self.note(P2D)?)?;
                let leak = read_leak(&self.note(LEAK)?)?;
                let f = StepDensity1D::read_csv(&self.note(F1D)?)?;
                let (f_delta, loss) = coarsen(&f, Partition1D::new(c.two_d.nx)?)?;
                let mu0 = build_mu0(&f_delta, &cells)?;
                let (mu, eta) = iterate(&Ulam2D { matrix, leak }, &mu0, c.two_d.n)?;
                f_delta.write_csv(&self.path(F_DELTA))?;
                mu.write_csv(&cells, &self.path(MU_N))?;
                self.write_json(ITERATE, &IterateOut { n: c.two_d.n, coarsening_loss: loss, eta, mass: mu.total_mass() })?;
                Ok(vec![F_DELTA, MU_N, ITERATE])
            }
            Stage::Certify2d => {
                let ly: LYCoefficients = self.json(LY)?;
                let c1: Certificate1DOut = self.json(CERT1D)?;
                let it: IterateOut = self.json(ITERATE)?;
                let p_xi = SparseTransitionMatrix::read_binary(&self.note(P1D)?)?;
                let f_delta = StepDensity1D::read_csv(&self.note(F_DELTA)?)?;
                let f = c.skew_map()?;
                let bad_radius = c.two_d.bad_radius.value()?;
                let constants = geometric_constants(&f, bad_radius, &f_delta)?;
                let defect = invariance_defect(&f_delta, &p_xi, &ly)?;
                let marginal_error = c1.certificate.total_l1_bound + it.coarsening_loss;
                let (delta, delta_prime) = (1.0 / c.two_d.nx as f64, 1.0 / c.two_d.ny as f64);
                let convergence = convergence_bound(constants.lambda, c.two_d.n, marginal_error)?;
                let discretization = discretization_bound(&constants, delta, delta_prime, c.two_d.n, marginal_error, defect.total)?;
                let inputs: BTreeMap<String, f64> = [
                    ("delta", delta),
                    ("delta_prime", delta_prime),
                    ("xi", 1.0 / c.one_d.cells as f64),
                    ("n", c.two_d.n as f64),
                    ("lambda", constants.lambda.hi()),
                    ("lbar", constants.lbar.hi()),
                    ("l", constants.l.hi()),
                    ("bad_radius", bad_radius),
                    ("marginal_error", marginal_error.hi()),
                    ("defect", defect.total.hi()),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
                let budget = total_certificate(convergence, &discretization, it.eta, inputs)?;
                self.write_json(CERT2D, &Certificate2DOut { constants, defect, marginal_error, convergence, discretization, budget })?;
                Ok(vec![CERT2D])
            }
            Stage::Dimension => {
                let ly: LYCoefficients = self.json(LY)?;
                let c1: Certificate1DOut = self.json(CERT1D)?;
                let f = StepDensity1D::read_csv(&self.note(F1D)?)?;
                let out = match c.lorenz_parameters()? {
                    None => json!({ "applicable": false, "reason": "the dimension formula needs the lorenz family" }),
                    Some((alpha, theta, beta)) => {
                        // ‖f‖_∞ <= Var f + ‖f‖₁
                        let b_sup = ly.b + Interval::point(1.0);
                        let eps1 = c.dimension.eps1.as_ref().map(|e| e.value()).transpose()?;
                        let eps2 = c.dimension.eps2.as_ref().map(|e| e.value()).transpose()?;
                        let j = bound_log_integral(&f, c1.certificate.total_l1_bound, b_sup, eps1, eps2)?;
                        let d = dimension_interval(&j, &alpha, &theta, &beta)?;
                        json!({ "applicable": true, "log_integral": j, "certificate": d })
                    }
                };
                self.write_json(DIMENSION, &out)?;
                Ok(vec![DIMENSION])
            }
            Stage::Corrdim => {
                let k = &c.correlation;
                if !k.enabled {
                    self.write_json(CORRDIM, &json!({ "enabled": false, "slope": null }))?;
                    return Ok(vec![CORRDIM]);
                }
                let est = correlation_dimension(&c.skew_map_iterate(1)?, k.points, k.k0, k.count, (k.seed[0], k.seed[1]), k.burn_in)?;
                self.write_json(CORRDIM, &json!({ "enabled": true, "points": k.points, "slope": est.slope, "sums": est.sums }))?;
                Ok(vec![CORRDIM])
            }
            Stage::Report => self.report(),
        }
    }

    fn report(&mut self) -> Result<Vec<&'static str>> {
        let ly: Value = self.json(LY)?;
        let c1: Value = self.json(CERT1D)?;
        let loc: Value = self.json(LOCALIZE)?;
        let u2: Value = self.json(ULAM2D)?;
        let c2: Certificate2DOut = self.json(CERT2D)?;
        let dim: Value = self.json(DIMENSION)?;
        let corr: Value = self.json(CORRDIM)?;
        let total = c2.budget.total;
        let dimension = if dim["applicable"] == true { dim["certificate"]["dimension"].clone() } else { Value::Null };
        let report = json!({
            "wasserstein_total": total.hi(),
            "dimension": dimension,
            "lasota_yorke": ly,
            "certificate_1d": c1["certificate"],
            "contraction_time": c1["profile"]["n_contraction"],
            "localization": loc,
            "ulam2d": u2,
            "certificate_2d": c2,
            "dimension_certificate": dim,
            "correlation": corr,
        });
        self.write_json(REPORT, &report)?;
        let mut s = String::new();
        use std::fmt::Write as _;
        writeln!(s, "Lasota-Yorke: lambda1 <= {:.6}, B <= {:.4}", ly["lambda1"][1].as_f64().unwrap_or(f64::NAN), ly["b"][1].as_f64().unwrap_or(f64::NAN))?;
        writeln!(
            s,
            "1D: N = {}, |f - f_xi|_1 <= {:.6e}",
            c1["profile"]["n_contraction"],
            c1["certificate"]["total_l1_bound"][1].as_f64().unwrap_or(f64::NAN)
        )?;
        writeln!(s, "localized cells: {} on {} x {}", loc["marked"], loc["nx"], loc["ny"])?;
        writeln!(s, "2D matrix: {} nonzeros, max radius {}, max leak {}", u2["nnz"], u2["max_radius"], u2["max_leak"])?;
        for t in &c2.budget.terms {
            writeln!(s, "  {:<15} <= {:.6e}   ({})", t.name, t.hi, t.source)?;
        }
        writeln!(s, "W total <= {:.6e}", total.hi())?;
        match dimension.as_array() {
            Some(d) => writeln!(s, "dimension in [{}, {}]", d[0], d[1])?,
            None => writeln!(s, "dimension: not applicable")?,
        }
        writeln!(s, "correlation slope (non-rigorous): {}", corr["slope"])?;
        std::fs::write(self.path(SUMMARY), s)?;
        Ok(vec![REPORT, SUMMARY])
    }
}

/// Hash of the config with the fields that cannot change results blanked out.
pub fn config_hash(cfg: &PipelineConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output = None;
    c.threads = 0;
    Ok(crate::manifest::hash_bytes(serde_json::to_string(&c)?.as_bytes()))
}
