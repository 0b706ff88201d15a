use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulamcert::expr::Expr;
use ulamcert::map1d::doubling;
use ulamcert::map2d::*;
use ulamcert::ulam1d::StepDensity1D;
use ulamcert::Rational;

fn lorenz() -> SkewProductMap {
    lorenz_2d(&Rational::new(51, 64), &Rational::new(109, 64), &Rational::new(396, 256), 4).unwrap()
}

// T = 2x mod 1, G = (y + x)/4
fn linear_skew() -> SkewProductMap {
    let g: Expr = "(y + x)/4".parse().unwrap();
    SkewProductMap::new(doubling(), vec![g.clone(), g], 1).unwrap()
}

fn assert_contains_images(f: &SkewProductMap, cells: &CellSet2D, samples: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let (x, y): (f64, f64) = (rng.gen(), rng.gen());
        let (u, v) = f.eval_f64(x, y);
        let (i, j) = cells.locate(u, v);
        assert!(cells.contains(i, j), "F({x}, {y}) = ({u}, {v}) lands in unmarked cell ({i}, {j})");
    }
}

#[test]
fn lorenz_localization_contains_sampled_images() {
    let f = lorenz();
    let cells = localize_attractor(&f, 1024, 64, 2048, 256).unwrap();
    assert!(cells.len() < 2048 * 256 / 4, "{} cells", cells.len());
    assert_contains_images(&f, &cells, 10_000, 3);
}

#[test]
fn single_cell_grid_is_marked() {
    let cells = localize_attractor(&lorenz(), 16, 4, 1, 1).unwrap();
    assert_eq!(cells.len(), 1);
}

#[test]
fn constant_fibre_marks_only_rows_at_one_half() {
    let g: Expr = "1/2".parse().unwrap();
    let f = SkewProductMap::new(doubling(), vec![g.clone(), g], 1).unwrap();
    let ny = 64;
    let cells = localize_attractor(&f, 64, 8, 32, ny).unwrap();
    for i in 0..32 {
        for &j in cells.column(i) {
            assert!(j as usize == ny / 2 || j as usize == ny / 2 - 1, "row {j} in column {i}");
        }
        assert!(cells.contains(i, ny / 2));
    }
}

#[test]
fn non_affine_fibre_is_rejected() {
    let g: Expr = "y*y/2".parse().unwrap();
    assert!(SkewProductMap::new(doubling(), vec![g.clone(), g], 1).is_err());
}

#[test]
fn linear_skew_constants_are_exact() {
    let f = linear_skew();
    let r = 1.0 / 1024.0;
    let gc = geometric_constants(&f, r, &StepDensity1D::uniform(256)).unwrap();
    assert!(gc.lambda.contains(0.25) && gc.lambda.width() < 1e-12, "{}", gc.lambda);
    assert!(gc.lbar.contains(2.0) && gc.lbar.width() < 1e-12, "{}", gc.lbar);
    // uniform density: the mass of [1/2 - r, 1/2 + r]
    assert!(gc.l.hi() >= 2.0 * r && gc.l.hi() <= 2.0 * r * (1.0 + 1e-9), "{}", gc.l);
}

#[test]
fn lorenz_constants_bound_finite_differences() {
    let f = lorenz();
    let r = 2.0 / 1048576.0;
    let gc = geometric_constants(&f, r, &StepDensity1D::uniform(1 << 10)).unwrap();
    assert!(gc.lambda.hi() < 0.014);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bad = |x: f64| gc.bad_set.iter().any(|&(a, b)| x >= a && x <= b);
    let mut checked = 0;
    while checked < 2000 {
        let x: f64 = rng.gen();
        let h = 1e-7 * rng.gen::<f64>();
        if bad(x) || bad(x + h) || f.iterate.branch_at(x) != f.iterate.branch_at(x + h) {
            continue;
        }
        let (y1, y2): (f64, f64) = (rng.gen(), rng.gen());
        let (_, g1) = f.eval_f64(x, y1);
        let (_, g2) = f.eval_f64(x, y2);
        assert!((g1 - g2).abs() <= gc.lambda.hi() * (y1 - y2).abs() + 1e-15);
        let (u1, v1) = f.eval_f64(x, y1);
        let (u2, v2) = f.eval_f64(x + h, y1);
        let d = (u1 - u2).abs().max((v1 - v2).abs());
        assert!(d <= gc.lbar.hi() * h * (1.0 + 1e-6) + 1e-14, "x={x} d={d} h={h}");
        checked += 1;
    }
}

#[test]
fn larger_bad_radius_is_monotone() {
    let f = lorenz();
    let fd = StepDensity1D::uniform(1 << 12);
    let a = geometric_constants(&f, 1.0 / 65536.0, &fd).unwrap();
    let b = geometric_constants(&f, 2.0 / 65536.0, &fd).unwrap();
    assert!(b.l.hi() >= a.l.hi());
    assert!(b.lbar.hi() <= a.lbar.hi());
}

#[test]
fn finer_coarse_partition_stays_near_previous_cells() {
    let f = lorenz();
    let k1 = localize_attractor(&f, 256, 16, 512, 128).unwrap();
    let k2 = localize_attractor(&f, 512, 16, 512, 128).unwrap();
    assert!(k2.is_subset_of(&k1.dilate()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cell_set_files_roundtrip(nx_pow in 0usize..5, ny_pow in 0usize..5, seed in any::<u64>()) {
        let (nx, ny): (usize, usize) = (1 << nx_pow, 1 << ny_pow);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bits: Vec<u64> = (0..(nx * ny).div_ceil(64)).map(|_| rng.gen()).collect();
        if (nx * ny) % 64 != 0 {
            let last = bits.len() - 1;
            bits[last] &= (1u64 << ((nx * ny) % 64)) - 1;
        }
        let set = CellSet2D::from_bits(nx, ny, &bits);
        prop_assert_eq!(set.to_bits(), bits);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cells.bin");
        set.write_bitmap(&p).unwrap();
        prop_assert_eq!(CellSet2D::read_bitmap(&p).unwrap(), set.clone());
        let q = dir.path().join("cells.csv");
        set.write_csv(&q).unwrap();
        prop_assert_eq!(CellSet2D::read_csv(&q, nx, ny).unwrap(), set.clone());
        for idx in 0..set.len() {
            let (i, j) = set.cell(idx);
            prop_assert_eq!(set.index(i, j), Some(idx));
        }
    }
}
