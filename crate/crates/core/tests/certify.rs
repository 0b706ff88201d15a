use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulamcert::certify::*;
use ulamcert::expr::Expr;
use ulamcert::map1d::{branch_partition, doubling, ly_coefficients, Branch, PiecewiseMap1D};
use ulamcert::map2d::*;
use ulamcert::sparse::SparseTransitionMatrix;
use ulamcert::ulam1d::*;
use ulamcert::ulam2d::*;
use ulamcert::{Interval, Rational};

type Measure = Vec<(f64, f64, f64)>;

fn constants(lambda: f64, l: f64, lbar: f64) -> GeometricConstants {
    GeometricConstants {
        lambda: Interval::new(0.0, lambda).unwrap(),
        bad_radius: 0.0,
        bad_set: vec![],
        l: Interval::point(l),
        lbar: Interval::point(lbar),
    }
}

fn random_measure(rng: &mut ChaCha8Rng, k: usize) -> Measure {
    let raw: Vec<(f64, f64, f64)> = (0..k).map(|_| (rng.gen(), rng.gen(), rng.gen::<f64>() + 0.01)).collect();
    let s: f64 = raw.iter().map(|p| p.2).sum();
    raw.into_iter().map(|(x, y, m)| (x, y, m / s)).collect()
}

#[test]
fn oracle_of_equal_measures_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mu = random_measure(&mut rng, 30);
    assert!(wasserstein_oracle(&mu, &mu).unwrap().abs() < 1e-12);
}

#[test]
fn oracle_dirac_pairs() {
    let w = wasserstein_oracle(&[(0.1, 0.2, 1.0)], &[(0.4, 0.25, 1.0)]).unwrap();
    assert!((w - 0.3).abs() < 1e-12, "{w}");
    // beyond distance 2 the bound |g| <= 1 takes over
    let w = wasserstein_oracle(&[(0.0, 0.0, 1.0)], &[(5.0, 0.0, 1.0)]).unwrap();
    assert!((w - 2.0).abs() < 1e-12, "{w}");
    // unequal masses at one point: g = 1 there
    let w = wasserstein_oracle(&[(0.5, 0.5, 1.0)], &[(0.5, 0.5, 0.25)]).unwrap();
    assert!((w - 0.75).abs() < 1e-12, "{w}");
}

#[test]
fn oracle_rejects_large_supports() {
    let mu: Measure = (0..300).map(|i| (i as f64 / 300.0, 0.0, 1.0)).collect();
    let nu: Measure = (0..300).map(|i| (i as f64 / 300.0, 1.0, 1.0)).collect();
    assert!(wasserstein_oracle(&mu, &nu).is_err());
}

// On a segment of length < 2 with equal masses the cap |g| <= 1 never binds, so W is the
// L¹ distance of the distribution functions.
#[test]
fn oracle_matches_distribution_functions_on_a_segment() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let k = rng.gen_range(1..40);
        let mu: Measure = random_measure(&mut rng, k).into_iter().map(|(x, _, m)| (1.5 * x, 0.3, m)).collect();
        let k = rng.gen_range(1..40);
        let nu: Measure = random_measure(&mut rng, k).into_iter().map(|(x, _, m)| (1.5 * x, 0.3, m)).collect();
        let mut xs: Vec<f64> = mu.iter().chain(&nu).map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |m: &Measure, t: f64| m.iter().filter(|p| p.0 <= t).map(|p| p.2).sum::<f64>();
        let exact: f64 = xs.windows(2).map(|w| (cdf(&mu, w[0]) - cdf(&nu, w[0])).abs() * (w[1] - w[0])).sum();
        let w = wasserstein_oracle(&mu, &nu).unwrap();
        assert!((w - exact).abs() < 1e-9, "{w} vs {exact}");
    }
}

fn push(m: &Measure, f: impl Fn(f64, f64) -> (f64, f64)) -> Measure {
    m.iter().map(|&(x, y, w)| {
        let (u, v) = f(x, y);
        (u, v, w)
    })
    .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oracle_is_a_metric(seed in any::<u64>(), a in 1usize..15, b in 1usize..15, c in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mu, nu, rho) = (random_measure(&mut rng, a), random_measure(&mut rng, b), random_measure(&mut rng, c));
        let mn = wasserstein_oracle(&mu, &nu).unwrap();
        let nm = wasserstein_oracle(&nu, &mu).unwrap();
        prop_assert!((mn - nm).abs() < 1e-9);
        let via = wasserstein_oracle(&mu, &rho).unwrap() + wasserstein_oracle(&rho, &nu).unwrap();
        prop_assert!(mn <= via + 1e-9);
    }

    #[test]
    fn oracle_is_subadditive(seed in any::<u64>(), k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<(Measure, Measure)> = (0..2)
            .map(|_| {
                let w: f64 = rng.gen_range(0.1..1.0);
                let scale = |m: Measure| m.into_iter().map(|(x, y, a)| (x, y, a * w)).collect::<Measure>();
                (scale(random_measure(&mut rng, k)), scale(random_measure(&mut rng, k)))
            })
            .collect();
        let whole_mu: Measure = parts.iter().flat_map(|p| p.0.clone()).collect();
        let whole_nu: Measure = parts.iter().flat_map(|p| p.1.clone()).collect();
        let sum: f64 = parts.iter().map(|p| wasserstein_oracle(&p.0, &p.1).unwrap()).sum();
        prop_assert!(wasserstein_oracle(&whole_mu, &whole_nu).unwrap() <= sum + 1e-9);
    }

    #[test]
    fn oracle_contracts_under_affine_contractions(seed in any::<u64>(), lam in 0.05f64..0.95, a in 1usize..15, b in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mu, nu) = (random_measure(&mut rng, a), random_measure(&mut rng, b));
        let (cx, cy): (f64, f64) = (rng.gen::<f64>() * (1.0 - lam), rng.gen::<f64>() * (1.0 - lam));
        let f = |x: f64, y: f64| (lam * x + cx, lam * y + cy);
        let before = wasserstein_oracle(&mu, &nu).unwrap();
        let after = wasserstein_oracle(&push(&mu, f), &push(&nu, f)).unwrap();
        prop_assert!(after <= lam * before + 1e-9, "{after} > {lam} * {before}");
    }
}

#[test]
fn convergence_bound_examples() {
    let b = convergence_bound(Interval::new(0.0, 0.014).unwrap(), 3, Interval::point(0.005) + Interval::point(0.0003)).unwrap();
    assert!(b.hi() <= 0.0054, "{b}");
    let b = convergence_bound(Interval::point(0.3), 0, Interval::point(0.01)).unwrap();
    assert!(b.contains(1.01) && b.width() < 1e-15);
    let b = convergence_bound(Interval::point(0.5), 10, Interval::point(0.0)).unwrap();
    assert!(b.contains(0.5f64.powi(10)) && b.width() < 1e-18);
}

#[test]
fn discretization_bound_with_reference_constants() {
    let gc = constants(0.014, 3.2e-5, 1277.0);
    let eps = Interval::point(0.005) + Interval::point(0.0003);
    let d = discretization_bound(&gc, 2f64.powi(-14), 2f64.powi(-10), 3, eps, Interval::point(0.00034)).unwrap();
    assert!(d.total.hi() <= 0.022, "{}", d.total);
    assert_eq!(d.choices(), vec![BranchChoice::Contraction; 2]);
    // with every step on the contraction member the sum is n·2δ′/(1−λ) + δ + Σ(λ^{n−i} + defect)
    let (dl, dp, lam) = (2f64.powi(-14), 2f64.powi(-10), 0.014);
    let direct = 3.0 * 2.0 * dp / (1.0 - lam) + dl + 2.0 * 0.00034 + lam + lam * lam;
    assert!(d.total.contains(direct) || (d.total.hi() - direct).abs() < 1e-12, "{} vs {direct}", d.total);
}

#[test]
fn discretization_bound_single_step_is_the_leading_term() {
    let gc = GeometricConstants { lambda: Interval::point(0.25), ..constants(0.25, 0.1, 5.0) };
    let d = discretization_bound(&gc, 0.01, 0.02, 1, Interval::point(0.1), Interval::point(0.1)).unwrap();
    assert!(d.steps.is_empty());
    let lead = 2.0 * 0.02 / 0.75 + 0.01;
    assert!(d.total.contains(lead) && d.total.width() < 1e-15);
}

#[test]
fn lipschitz_member_can_win() {
    let (dl, dp, lam) = (1.0 / 64.0, 1.0 / 64.0, 0.5);
    let d = discretization_bound(&constants(lam, 0.0, 1.0), dl, dp, 3, Interval::point(0.0), Interval::point(0.0)).unwrap();
    // i = 2: L̄²(δ+2δ′) + 2·2δ′ against λ + 2δ′/(1−λ)
    let lip = (dl + 2.0 * dp) + 2.0 * 2.0 * dp;
    let con = lam + 2.0 * dp / (1.0 - lam);
    assert!(lip < con);
    assert_eq!(d.choices()[1], BranchChoice::Lipschitz);
    assert!(d.steps[1].1.contains(lip));
}

#[test]
fn halving_fibre_grid_shrinks_discretization() {
    let gc = constants(0.014, 3.2e-5, 1277.0);
    let eps = Interval::point(0.0053);
    let a = discretization_bound(&gc, 2f64.powi(-12), 2f64.powi(-8), 3, eps, Interval::point(0.001)).unwrap();
    let b = discretization_bound(&gc, 2f64.powi(-12), 2f64.powi(-9), 3, eps, Interval::point(0.001)).unwrap();
    assert!(b.total.hi() < a.total.hi());
}

#[test]
fn invariance_defect_for_doubling_reduces_to_grid_terms() {
    let it = branch_partition(&doubling(), 2).unwrap();
    let ly = ly_coefficients(&it, 1.0, 1e-9).unwrap();
    let p = assemble_ulam_1d(&it, Partition1D::new(1 << 10).unwrap(), 1e-12).unwrap();
    let f = StepDensity1D::uniform(1 << 6);
    let d = invariance_defect(&f, &p, &ly).unwrap();
    assert!(d.computed.hi() < 1e-12, "{}", d.computed);
    let xi = 2f64.powi(-10);
    let expect = xi * (2.0 * ly.lambda1.hi() + 1.0) * 2.0 + xi * ly.b_prime.hi();
    assert!((d.total.hi() - expect).abs() < 1e-12 && d.total.hi() >= expect * (1.0 - 1e-12), "{} vs {expect}", d.total);
    assert!(invariance_defect(&StepDensity1D::uniform(3), &p, &ly).is_err());
}

#[test]
fn mu0_examples() {
    let f = StepDensity1D::uniform(8);
    let full = CellSet2D::full(8, 4);
    let mu = build_mu0(&f, &full).unwrap();
    assert!(mu.masses.iter().all(|&m| m == 1.0 / 32.0));
    let mut bits = vec![0u64; 1];
    for i in 0..8 {
        bits[0] |= 1 << ((i % 4) * 8 + i);
    }
    let one = CellSet2D::from_bits(8, 4, &bits);
    let mu = build_mu0(&f, &one).unwrap();
    assert_eq!(mu.masses, vec![1.0 / 8.0; 8]);
    let empty_col = CellSet2D::from_bits(8, 4, &[bits[0] & !(1 << 3 * 8 + 3)]);
    assert!(build_mu0(&f, &empty_col).is_err());
}

#[test]
fn mu0_has_the_given_marginal() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (nx, ny) = (64, 32);
    let masses: Vec<f64> = (0..nx).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = masses.iter().sum();
    let f = StepDensity1D::new(masses.iter().map(|m| m / s).collect()).unwrap();
    let mut bits = vec![0u64; nx * ny / 64];
    for i in 0..nx {
        for _ in 0..rng.gen_range(1..6) {
            let j = rng.gen_range(0..ny);
            bits[(j * nx + i) / 64] |= 1 << ((j * nx + i) % 64);
        }
    }
    let cells = CellSet2D::from_bits(nx, ny, &bits);
    let mu = build_mu0(&f, &cells).unwrap();
    for (a, b) in mu.x_marginal(&cells).iter().zip(&f.masses) {
        assert!((a - b).abs() <= 8.0 * f64::EPSILON * b);
    }
}

fn dense_ulam(n: usize, col: impl Fn(usize) -> Vec<(usize, f64)>) -> Ulam2D {
    let entries = (0..n).flat_map(|c| col(c).into_iter().map(move |(r, v)| (c as u32, r as u32, Interval::point(v)))).collect();
    Ulam2D { matrix: SparseTransitionMatrix::from_entries(n, n, entries, 0.0), leak: vec![0.0; n] }
}

#[test]
fn iterate_trivial_cases() {
    let u = dense_ulam(4, |_| vec![(0, 0.125), (1, 0.375), (2, 0.25), (3, 0.25)]);
    let mu0 = CellDensity2D::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    let (m0, eta0) = iterate(&u, &mu0, 0).unwrap();
    assert_eq!(m0, mu0);
    assert_eq!(eta0.hi(), 0.0);
    let (m1, _) = iterate(&u, &mu0, 1).unwrap();
    let (m3, eta3) = iterate(&u, &mu0, 3).unwrap();
    assert_eq!(m1.masses, vec![0.125, 0.375, 0.25, 0.25]);
    assert_eq!(m3, m1);
    assert!(eta3.hi() < 1e-14);
}

#[test]
fn iterate_keeps_the_one_dimensional_marginal() {
    // T = 2x mod 1, G = (y + x)/4
    let g: Expr = "(y + x)/4".parse().unwrap();
    let f = SkewProductMap::new(doubling(), vec![g.clone(), g], 1).unwrap();
    let (nx, ny) = (32, 16);
    let cells = CellSet2D::full(nx, ny);
    let u = assemble_ulam_2d(&f, &cells, 1e-10, 1e-12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let masses: Vec<f64> = (0..nx).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = masses.iter().sum();
    let fd = StepDensity1D::new(masses.iter().map(|m| m / s).collect()).unwrap();
    let p1 = assemble_ulam_1d(&f.iterate, Partition1D::new(nx).unwrap(), 1e-12).unwrap();
    let mu0 = build_mu0(&fd, &cells).unwrap();
    let (mu, eta) = iterate(&u, &mu0, 3).unwrap();
    let mut x = fd.masses.clone();
    let mut y = vec![0.0; nx];
    for _ in 0..3 {
        p1.matvec(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
    }
    let slack = eta.hi() + 3.0 * p1.matvec_error(1.0) + 1e-12;
    for (a, b) in mu.x_marginal(&cells).iter().zip(&x) {
        assert!((a - b).abs() <= slack, "{a} vs {b}");
    }
}

// T = 3x mod 1 with fibres y/4 + k/4 on branch k: the invariant measure is Lebesgue in x times
// the self-similar measure of the maps y/4 + k/4, k = 0, 1, 2, each with weight 1/3.
fn three_branch() -> SkewProductMap {
    let r = |a, b| Rational::new(a, b);
    let base = PiecewiseMap1D::new(vec![
        Branch::from_expr(&r(0, 1), &r(1, 3), "3*x".parse().unwrap()).unwrap(),
        Branch::from_expr(&r(1, 3), &r(2, 3), "3*x - 1".parse().unwrap()).unwrap(),
        Branch::from_expr(&r(2, 3), &r(1, 1), "3*x - 2".parse().unwrap()).unwrap(),
    ])
    .unwrap();
    let fibres = (0..3).map(|k| format!("(y + {k})/4").parse().unwrap()).collect();
    SkewProductMap::new(base, fibres, 1).unwrap()
}

fn fibre_cdf(t: f64, depth: u32) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 0.75 || depth == 0 {
        return t.min(0.75) / 0.75;
    }
    let k = (4.0 * t).floor();
    (k + fibre_cdf(4.0 * t - k, depth - 1)) / 3.0
}

#[test]
fn budget_bounds_the_oracle_distance_on_a_linear_example() {
    let f = three_branch();
    let (nx, ny, n_iter) = (16, 16, 3);
    let it = &f.iterate;
    let p = assemble_ulam_1d(it, Partition1D::new(nx).unwrap(), 1e-12).unwrap();
    let (fd, res) = fixed_point(&p, 1e-14, 1000).unwrap();
    let ly = ly_coefficients(it, 1.0, 1e-9).unwrap();
    let prof = contraction_time(&p, &fd, 64).unwrap();
    let cert = certify_fixed_point(&p, &fd, res, &ly, &prof).unwrap();
    let eps = cert.total_l1_bound;
    let cells = localize_attractor(&f, 64, 16, nx, ny).unwrap();
    let gc = geometric_constants(&f, 1.0 / 256.0, &fd).unwrap();
    let u = assemble_ulam_2d(&f, &cells, 1e-10, 1e-9).unwrap();
    let mu0 = build_mu0(&fd, &cells).unwrap();
    let (mu, eta) = iterate(&u, &mu0, n_iter).unwrap();
    let p_xi = assemble_ulam_1d(it, Partition1D::new(4 * nx).unwrap(), 1e-12).unwrap();
    let defect = invariance_defect(&fd, &p_xi, &ly).unwrap();
    let conv = convergence_bound(gc.lambda, n_iter, eps).unwrap();
    let disc = discretization_bound(&gc, 1.0 / nx as f64, 1.0 / ny as f64, n_iter, eps, defect.total).unwrap();
    let budget = total_certificate(conv, &disc, eta, BTreeMap::new()).unwrap();

    // both measures coarsened to the centres of a 20 × 20 grid
    let m = 20;
    let mut computed = vec![0.0; m * m];
    for (idx, &w) in mu.masses.iter().enumerate() {
        let (i, j) = cells.cell(idx);
        let (x0, y0) = (i as f64 / nx as f64, j as f64 / ny as f64);
        for a in 0..m {
            for b in 0..m {
                let ox = ((x0 + 1.0 / nx as f64).min((a + 1) as f64 / m as f64) - x0.max(a as f64 / m as f64)).max(0.0);
                let oy = ((y0 + 1.0 / ny as f64).min((b + 1) as f64 / m as f64) - y0.max(b as f64 / m as f64)).max(0.0);
                computed[a * m + b] += w * ox * oy * (nx * ny) as f64;
            }
        }
    }
    let centre = |a: usize| (a as f64 + 0.5) / m as f64;
    let mu_pts: Measure = (0..m * m).map(|k| (centre(k / m), centre(k % m), computed[k])).collect();
    let exact: Measure = (0..m * m)
        .map(|k| {
            let b = k % m;
            let mass = (fibre_cdf((b + 1) as f64 / m as f64, 40) - fibre_cdf(b as f64 / m as f64, 40)) / m as f64;
            (centre(k / m), centre(b), mass)
        })
        .collect();
    let w = wasserstein_oracle(&mu_pts, &exact).unwrap();
    assert!(w > 0.0);
    assert!(budget.total.hi() >= w, "budget {} below oracle {w}", budget.total);
    for t in &budget.terms {
        assert!(t.lo >= 0.0 && t.hi <= budget.total.hi());
    }
}

#[test]
fn budget_total_is_the_sum_of_terms() {
    let zero = discretization_bound(&constants(0.0, 0.0, 1.0), 0.0, 0.0, 1, Interval::point(0.0), Interval::point(0.0)).unwrap();
    let b = total_certificate(Interval::point(0.0), &zero, Interval::point(0.0), BTreeMap::new()).unwrap();
    assert_eq!((b.total.lo(), b.total.hi()), (0.0, 0.0));
    let d = discretization_bound(&constants(0.014, 3.2e-5, 1277.0), 2f64.powi(-14), 2f64.powi(-10), 3, Interval::point(0.0053), Interval::point(0.00034)).unwrap();
    let b = total_certificate(Interval::point(0.0054), &d, Interval::new(0.0, 1e-6).unwrap(), BTreeMap::new()).unwrap();
    let sum: f64 = b.terms.iter().map(|t| t.hi).sum();
    assert!(b.total.hi() >= sum && b.total.hi() <= sum * (1.0 + 1e-12));
    assert!(b.term("discretization").is_some());
    assert!(b.total.hi() <= 0.028);
}
