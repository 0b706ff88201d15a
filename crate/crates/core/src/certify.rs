//! Wasserstein error budget for the computed invariant measure of a skew product.
//!
//! Distances are in the bounded-Lipschitz sense: `W(μ, ν) = sup |∫g dμ − ∫g dν|` over `g` with
//! `Lip(g) <= 1` and `|g| <= 1`, for the sup metric on the square.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{add_up, mul_up, Interval};
use crate::map1d::LYCoefficients;
use crate::map2d::{CellSet2D, GeometricConstants};
use crate::sparse::SparseTransitionMatrix;
use crate::ulam1d::{bv_norm, residual, StepDensity1D};
use crate::ulam2d::{CellDensity2D, Ulam2D};

fn pt(x: f64) -> Interval {
    Interval::point(x)
}

/// `f_δ × (normalized Lebesgue on the marked cells of each column)`.
pub fn build_mu0(f_delta: &StepDensity1D, cells: &CellSet2D) -> Result<CellDensity2D> {
    if f_delta.n() != cells.nx {
        return Err(Error::Inconsistent(format!("density has {} cells, grid has {} columns", f_delta.n(), cells.nx)));
    }
    let mut masses = Vec::with_capacity(cells.len());
    for (i, &m) in f_delta.masses.iter().enumerate() {
        let k = cells.column(i).len();
        if k == 0 {
            if m > 0.0 {
                return Err(Error::SupportMismatch(format!("column {i} carries mass {m:e} but has no marked cell")));
            }
            continue;
        }
        masses.extend(std::iter::repeat(m / k as f64).take(k));
    }
    CellDensity2D::new(masses)
}

/// `λⁿ + ε`: two measures whose x-marginals differ by `ε` in L¹ end up within this distance
/// after `n` steps, since fibres have length 1 and contract by `λ`.
pub fn convergence_bound(lambda: Interval, n: u32, eps_marginal: Interval) -> Result<Interval> {
    Ok(lambda.powi(n as i32)? + eps_marginal)
}

/// Bound on `‖f_δ − L_T f_δ‖₁` through a finer Ulam matrix `P_ξ`:
/// `‖f_δ − P_ξ f_δ‖₁ + ξ(2λ₁ + 1)‖f_δ‖_BV + ξB′‖f_δ‖₁`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvarianceDefect {
    pub computed: Interval,
    pub variation_term: Interval,
    pub mass_term: Interval,
    pub total: Interval,
}

/// `p_xi` is the Ulam matrix of the same map on a grid refining the one of `f_delta`.
pub fn invariance_defect(f_delta: &StepDensity1D, p_xi: &SparseTransitionMatrix, ly: &LYCoefficients) -> Result<InvarianceDefect> {
    let n = p_xi.n_cols;
    if n < f_delta.n() || n % f_delta.n() != 0 {
        return Err(Error::Inconsistent(format!("a {n}-cell matrix does not refine {} cells", f_delta.n())));
    }
    let r = n / f_delta.n();
    // splitting a cell into r equal parts is exact when r is a power of two
    let split = |m: f64| m / r as f64;
    let exact = r.is_power_of_two();
    let fine = StepDensity1D::new(f_delta.masses.iter().flat_map(|&m| std::iter::repeat(split(m)).take(r)).collect())?;
    let mut computed = residual(p_xi, &fine);
    if !exact {
        let err = mul_up(f64::EPSILON, f_delta.total_mass().hi());
        computed = computed + Interval::new(0.0, mul_up(2.0, err))?;
    }
    let xi = pt(1.0) / pt(n as f64);
    let variation_term = xi * (pt(2.0) * ly.lambda1 + pt(1.0)) * bv_norm(f_delta);
    let mass_term = xi * ly.b_prime * f_delta.total_mass();
    let total = computed + variation_term + mass_term;
    Ok(InvarianceDefect { computed, variation_term, mass_term, total })
}

/// Which member of the minimum was taken at step `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchChoice {
    Lipschitz,
    Contraction,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscretizationBound {
    pub leading: Interval,
    /// `(i, lipschitz member, contraction member, chosen)` for `i = 1..n−1`.
    pub steps: Vec<(u32, Interval, Interval, BranchChoice)>,
    pub total: Interval,
}

impl DiscretizationBound {
    pub fn choices(&self) -> Vec<BranchChoice> {
        self.steps.iter().map(|s| s.3).collect()
    }
}

/// Bound on `W(Lⁿμ₀, L_δⁿμ₀)`:
/// `2δ′/(1−λ) + δ + Σ_{i=1}^{n−1} min{L̄ⁱ(δ+2δ′) + (L̄^{i−1}+…+1)(2δ′+2l+3ε), λ^{n−i} + 2δ′/(1−λ) + defect}`.
pub fn discretization_bound(
    consts: &GeometricConstants,
    delta: f64,
    delta_prime: f64,
    n: u32,
    eps: Interval,
    defect: Interval,
) -> Result<DiscretizationBound> {
    let lambda = consts.lambda;
    if !(lambda.hi() < 1.0) {
        return Err(Error::Inconsistent(format!("fibre contraction {lambda} is not below 1")));
    }
    let (d, dp) = (pt(delta), pt(delta_prime));
    let fibre = pt(2.0) * dp / (pt(1.0) - lambda);
    let leading = fibre + d;
    let lbar = consts.lbar;
    let per_step = pt(2.0) * dp + pt(2.0) * consts.l + pt(3.0) * eps;
    let mut steps = Vec::new();
    let mut total = leading;
    let mut lbar_i = pt(1.0);
    let mut geometric = pt(0.0);
    for i in 1..n {
        geometric = geometric + lbar_i;
        lbar_i = lbar_i * lbar;
        let lip = lbar_i * (d + pt(2.0) * dp) + geometric * per_step;
        let con = lambda.powi((n - i) as i32)? + fibre + defect;
        let choice = if lip.hi() < con.hi() { BranchChoice::Lipschitz } else { BranchChoice::Contraction };
        total = total + lip.min(&con);
        steps.push((i, lip, con, choice));
    }
    Ok(DiscretizationBound { leading, steps, total })
}

/// `n` steps of the 2D matrix from `mu0`, with `η` bounding the L¹ distance (hence the
/// distance `W`, since `|g| <= 1`) to the exact iterates of the Ulam operator. Each step adds
/// the matrix error on the current mass, its floating point error and the leak; earlier errors
/// are not amplified because the operator is an L¹ contraction.
pub fn iterate(u: &Ulam2D, mu0: &CellDensity2D, n: u32) -> Result<(CellDensity2D, Interval)> {
    let p = &u.matrix;
    if mu0.masses.len() != p.n_cols {
        return Err(Error::Inconsistent(format!("density has {} cells, matrix has {}", mu0.masses.len(), p.n_cols)));
    }
    let mut x = mu0.masses.clone();
    let mut y = vec![0.0; p.n_rows];
    let mut eta = 0.0;
    for _ in 0..n {
        let l1 = x.iter().fold(0.0, |a, &v| add_up(a, v.abs()));
        let leak = x.iter().zip(&u.leak).fold(0.0, |a, (&v, &l)| add_up(a, mul_up(v.abs(), l)));
        eta = add_up(eta, add_up(p.matvec_error(l1), leak));
        p.matvec(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
    }
    // rounding can leave tiny negative masses; clipping moves the vector by at most their size
    let neg = x.iter().filter(|v| **v < 0.0).fold(0.0, |a, &v| add_up(a, -v));
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    eta = add_up(eta, neg);
    Ok((CellDensity2D::new(x)?, Interval::new(0.0, eta)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BudgetTerm {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// The inequality the term comes from.
    pub source: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub terms: Vec<BudgetTerm>,
    pub total: Interval,
    pub inputs: BTreeMap<String, f64>,
    pub branch_choices: Vec<BranchChoice>,
}

impl ErrorBudget {
    pub fn term(&self, name: &str) -> Option<&BudgetTerm> {
        self.terms.iter().find(|t| t.name == name)
    }
}

/// `W(μ̃, μ̄) <= W(L_Fⁿμ₀, L_Fⁿμ̄) + W(L_δⁿμ₀, L_Fⁿμ₀) + η`.
pub fn total_certificate(
    convergence: Interval,
    discretization: &DiscretizationBound,
    eta: Interval,
    inputs: BTreeMap<String, f64>,
) -> Result<ErrorBudget> {
    let parts = [
        ("convergence", convergence, "W(L^n mu0, L^n mu) <= lambda^n + |f - f_delta|_1"),
        (
            "discretization",
            discretization.total,
            "W(L^n mu0, L_delta^n mu0) <= 2 delta'/(1 - lambda) + delta + sum_i min{Lipschitz growth, contraction + defect}",
        ),
        ("iteration", eta, "W <= L1 distance of the computed and exact Ulam iterates"),
    ];
    let mut terms = Vec::new();
    let mut total = pt(0.0);
    for (name, v, source) in parts {
        if v.lo() < 0.0 {
            return Err(Error::Inconsistent(format!("{name} term {v} is negative")));
        }
        total = total + v;
        terms.push(BudgetTerm { name: name.into(), lo: v.lo(), hi: v.hi(), source: source.into() });
    }
    Ok(ErrorBudget { terms, total, inputs, branch_choices: discretization.choices() })
}

/// Largest combined support accepted by [`wasserstein_oracle`].
pub const ORACLE_MAX_POINTS: usize = 400;

/// Exact `W` between two finitely supported measures given as `(x, y, mass)`.
///
/// The dual of the defining supremum is a transport problem with cost `d` plus a ground node at
/// distance 1 from every point that absorbs or supplies the mass difference, solved here by
/// successive shortest paths on the dense residual graph.
pub fn wasserstein_oracle(mu: &[(f64, f64, f64)], nu: &[(f64, f64, f64)]) -> Result<f64> {
    let mut pts: Vec<(f64, f64, f64)> = Vec::new();
    let signed = mu.iter().cloned().chain(nu.iter().map(|&(x, y, m)| (x, y, -m)));
    for (x, y, m) in signed {
        match pts.iter_mut().find(|p| p.0 == x && p.1 == y) {
            Some(p) => p.2 += m,
            None => pts.push((x, y, m)),
        }
    }
    if pts.len() > ORACLE_MAX_POINTS {
        return Err(Error::Inconsistent(format!("oracle support {} exceeds {ORACLE_MAX_POINTS}", pts.len())));
    }
    let sources: Vec<_> = pts.iter().filter(|p| p.2 > 0.0).cloned().collect();
    let sinks: Vec<_> = pts.iter().filter(|p| p.2 < 0.0).map(|p| (p.0, p.1, -p.2)).collect();
    let excess: f64 = pts.iter().map(|p| p.2).sum();
    let d = |a: &(f64, f64, f64), b: &(f64, f64, f64)| (a.0 - b.0).abs().max((a.1 - b.1).abs()).min(2.0);
    // supplies and demands, the ground node on the side that balances them
    let mut supply: Vec<f64> = sources.iter().map(|p| p.2).collect();
    let mut demand: Vec<f64> = sinks.iter().map(|p| p.2).collect();
    let (ns, nt) = (sources.len() + 1, sinks.len() + 1);
    let mut cost = vec![vec![0.0; nt]; ns];
    for (i, s) in sources.iter().enumerate() {
        for (j, t) in sinks.iter().enumerate() {
            cost[i][j] = d(s, t);
        }
        cost[i][nt - 1] = 1.0;
    }
    for j in 0..nt - 1 {
        cost[ns - 1][j] = 1.0;
    }
    cost[ns - 1][nt - 1] = 0.0;
    supply.push(if excess < 0.0 { -excess } else { 0.0 });
    demand.push(if excess > 0.0 { excess } else { 0.0 });
    Ok(transport(&cost, &mut supply, &mut demand))
}

/// Balanced uncapacitated transport by successive shortest paths with node potentials.
fn transport(cost: &[Vec<f64>], supply: &mut [f64], demand: &mut [f64]) -> f64 {
    let (ns, nt) = (supply.len(), demand.len());
    let scale = supply.iter().chain(demand.iter()).fold(0.0f64, |a, &b| a.max(b));
    let tiny = scale * 1e-14;
    let mut flow = vec![vec![0.0; nt]; ns];
    // potentials: sources 0..ns, sinks ns..ns+nt
    let mut pot = vec![0.0; ns + nt];
    let mut total = 0.0;
    loop {
        if supply.iter().all(|&s| s <= tiny) || demand.iter().all(|&t| t <= tiny) {
            break;
        }
        // Dijkstra from all sources with remaining supply
        let n = ns + nt;
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        for (i, &s) in supply.iter().enumerate() {
            if s > tiny {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            for v in 0..n {
                if !done[v] && dist[v].is_finite() && (u == usize::MAX || dist[v] < dist[u]) {
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < ns {
                for j in 0..nt {
                    let rc = cost[u][j] + pot[u] - pot[ns + j];
                    let nd = dist[u] + rc.max(0.0);
                    if nd < dist[ns + j] {
                        dist[ns + j] = nd;
                        prev[ns + j] = u;
                    }
                }
            } else {
                let j = u - ns;
                for i in 0..ns {
                    if flow[i][j] > tiny {
                        let rc = -cost[i][j] + pot[u] - pot[i];
                        let nd = dist[u] + rc.max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        let target = (0..nt).filter(|&j| demand[j] > tiny && dist[ns + j].is_finite()).min_by(|&a, &b| dist[ns + a].total_cmp(&dist[ns + b]));
        let Some(tj) = target else { break };
        let reach = dist[ns + tj];
        for v in 0..n {
            pot[v] += dist[v].min(reach);
        }
        // bottleneck along the path
        let mut amount = demand[tj];
        let mut v = ns + tj;
        loop {
            let u = prev[v];
            if u == usize::MAX {
                amount = amount.min(supply[v]);
                break;
            }
            if v < ns {
                amount = amount.min(flow[v][u - ns]);
            }
            v = u;
        }
        let mut v = ns + tj;
        loop {
            let u = prev[v];
            if u == usize::MAX {
                supply[v] -= amount;
                break;
            }
            if v >= ns {
                flow[u][v - ns] += amount;
                total += amount * cost[u][v - ns];
            } else {
                flow[v][u - ns] -= amount;
                total -= amount * cost[v][u - ns];
            }
            v = u;
        }
        demand[tj] -= amount;
    }
    total
}
