use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use incidence_recon::backcalc::{build_regularizer, IncidenceSolution};
use incidence_recon::demography::{
    simulate_population, AnnualSeries, DemographicInputs, PopulationDrivers,
};
use incidence_recon::eki::kalman_update;
use incidence_recon::grid::{bin_cells, AgeTimeGrid, BinningScheme, CellField, Field};
use incidence_recon::io::manifest::hash_run;
use incidence_recon::io::RunConfig;
use incidence_recon::onset::WeibullKernel;
use incidence_recon::pipeline::{aggregate, band};
use incidence_recon::pipeline::{allocate_census, CensusBins, EnsembleRun};

fn small_grid() -> AgeTimeGrid {
    AgeTimeGrid::new(0.0, 20.0, 2000.0, 2004.0, 0.5).unwrap()
}

fn cell_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binning_is_linear_and_partitions_the_grid(
        f in cell_values(40 * 8),
        g in cell_values(40 * 8),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let grid = small_grid();
        let scheme = BinningScheme::uniform(0.0, 20.0, 5.0, 2000.0, 2004.0, 1.0).unwrap();
        let n_age = grid.n_age_cells();
        let at = |v: &[f64], i: usize, j: usize| v[j * n_age + i];
        let bf = bin_cells(&grid, &scheme, |i, j| at(&f, i, j)).unwrap();
        let bg = bin_cells(&grid, &scheme, |i, j| at(&g, i, j)).unwrap();
        let mix = bin_cells(&grid, &scheme, |i, j| a * at(&f, i, j) + b * at(&g, i, j)).unwrap();
        for k in 0..scheme.n_bins() {
            let want = a * bf.as_slice()[k] + b * bg.as_slice()[k];
            prop_assert!((mix.as_slice()[k] - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }
        let whole: f64 = f.iter().sum::<f64>() * grid.cell_area();
        prop_assert!((bf.total() - whole).abs() <= 1e-10 * whole.max(1.0));
    }

    #[test]
    fn population_stays_non_negative(
        u0 in cell_values(41),
        hazard in prop::collection::vec(0.0f64..2.0, 40 * 8),
        immigration in cell_values(40 * 8),
        births in 0.0f64..100.0,
    ) {
        let grid = small_grid();
        let inputs = DemographicInputs {
            drivers: PopulationDrivers {
                initial_population: u0,
                births: AnnualSeries::constant(2000, 4, births),
                immigration: CellField::from_values(grid, immigration).unwrap(),
            },
            hazard: CellField::from_values(grid, hazard).unwrap(),
        };
        let u = simulate_population(&inputs, &grid).unwrap();
        prop_assert!(u.min_value() >= 0.0);
    }

    #[test]
    fn kalman_update_commutes_with_parameter_shift(
        seed in any::<u64>(),
        shift in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ne, p) = (8, 4);
        let params: Vec<Vec<f64>> = (0..ne).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let preds: Vec<Vec<f64>> = (0..ne).map(|_| (0..p).map(|_| rng.random_range(50.0..150.0)).collect()).collect();
        let pert: Vec<Vec<f64>> = (0..ne).map(|_| (0..p).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let y = vec![100.0; p];
        let var = vec![100.0; p];
        let base = kalman_update(&params, &preds, &y, &var, &pert).unwrap();
        let moved: Vec<Vec<f64>> = params.iter().map(|m| m.iter().zip(&shift).map(|(a, s)| a + s).collect()).collect();
        let out = kalman_update(&moved, &preds, &y, &var, &pert).unwrap();
        for (o, b) in out.iter().zip(&base) {
            for ((x, y), s) in o.iter().zip(b).zip(&shift) {
                prop_assert!((x - (y + s)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn penalty_does_not_couple_years(k in 2usize..12, j in 1usize..6, x in prop::collection::vec(-1.0f64..1.0, 72)) {
        let reg = build_regularizer(k, j, 1.0).unwrap();
        let n = k * j;
        let x = &x[..n];
        let whole = reg.apply_rtr(x);
        let l = reg.l_matrix();
        for s in 0..j {
            for r in 0..k {
                let mut want = 0.0;
                for c in 0..k {
                    want += l[(r, c)] * x[s * k + c];
                }
                prop_assert!((whole[s * k + r] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences(
        seed in any::<u64>(),
        beta in 1e-2f64..1e2,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, j, m) = (4, 3, 15);
        let n = k * j;
        let a = nalgebra::DMatrix::from_fn(m, n, |_, _| rng.random_range(0.0..1.0));
        let d = nalgebra::DVector::from_fn(m, |_, _| rng.random_range(0.0..5.0));
        let x = nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let reg = build_regularizer(k, j, beta).unwrap();
        let objective = |x: &nalgebra::DVector<f64>| {
            let rtr = reg.apply_rtr(x.as_slice());
            (&a * x - &d).norm_squared() + beta * x.iter().zip(&rtr).map(|(p, q)| p * q).sum::<f64>()
        };
        let rtr = reg.apply_rtr(x.as_slice());
        let grad = (a.transpose() * (&a * &x - &d)) * 2.0
            + nalgebra::DVector::from_vec(rtr) * (2.0 * beta);
        let h = 1e-5;
        for i in 0..n {
            let mut up = x.clone();
            let mut down = x.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (objective(&up) - objective(&down)) / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() <= 1e-5 * (1.0 + grad[i].abs()));
        }
    }

    #[test]
    fn census_allocation_keeps_bin_totals(
        seed in any::<u64>(),
        totals in prop::collection::vec(0.0f64..1e6, 4),
    ) {
        let grid = small_grid();
        let census = CensusBins::new(vec![0.0, 5.0, 10.0, 15.0, 20.0], totals.clone()).unwrap();
        let density = allocate_census(&grid, &census, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(density.iter().all(|v| *v >= 0.0));
        for (b, total) in totals.iter().enumerate() {
            let kept: f64 = density[b * 10..(b + 1) * 10].iter().sum::<f64>() * grid.step();
            prop_assert!((kept - total).abs() <= 1e-9 * total.max(1.0));
        }
    }

    #[test]
    fn band_median_lies_within_member_range(values in prop::collection::vec(-1e3f64..1e3, 1..120)) {
        let b = band(&values);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= b.lo && b.lo <= b.median && b.median <= b.hi && b.hi <= hi);
    }

    #[test]
    fn weibull_cdf_integrates_the_pdf(
        shape in 0.5f64..4.0,
        scale in 0.5f64..20.0,
        t0 in 0.05f64..30.0,
        width in 0.01f64..2.0,
    ) {
        let k = WeibullKernel::new(shape, scale).unwrap();
        let n = 200;
        let h = width / n as f64;
        let mut s = k.pdf(t0).unwrap() + k.pdf(t0 + width).unwrap();
        for i in 1..n {
            s += k.pdf(t0 + i as f64 * h).unwrap() * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        prop_assert!((k.cdf(t0 + width) - k.cdf(t0) - integral).abs() <= 1e-8);
        prop_assert!(k.cdf(t0) <= k.cdf(t0 + width) && (k.cdf(t0) + k.sf(t0) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn weibull_hazard_increases_for_shape_above_one(
        shape in 1.0f64..4.0,
        scale in 0.5f64..20.0,
        t in 0.01f64..40.0,
        dt in 0.01f64..5.0,
    ) {
        let k = WeibullKernel::new(shape, scale).unwrap();
        let hz = |t: f64| k.pdf(t).unwrap() / k.sf(t);
        let (a, b) = (hz(t), hz(t + dt));
        if a.is_finite() && b.is_finite() {
            prop_assert!(b >= a * (1.0 - 1e-12));
        }
    }
}

fn fake_run(
    member_id: usize,
    lambda: Vec<f64>,
    person_years: Vec<f64>,
    basis: &BinningScheme,
) -> EnsembleRun {
    let grid = AgeTimeGrid::new(0.0, 100.0, 2000.0, 2003.0, 1.0).unwrap();
    let (n_age, n_year) = (basis.n_age_bins(), basis.n_year_bins());
    EnsembleRun {
        member_id,
        kernel: WeibullKernel::new(1.5, 6.0).unwrap(),
        drivers: Arc::new(PopulationDrivers {
            initial_population: vec![0.0; grid.n_a()],
            births: AnnualSeries::constant(2000, 3, 0.0),
            immigration: CellField::zeros(grid),
        }),
        hazard: CellField::zeros(grid),
        population: Field::zeros(grid),
        person_years,
        basis: basis.clone(),
        solution: IncidenceSolution {
            lambda,
            n_age,
            n_year,
            beta: 1.0,
            residual_norm: 0.0,
            seminorm: 0.0,
            normal_residual: 0.0,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn strata_add_up_to_all_ages(
        members in 2usize..12,
        seed in any::<u64>(),
        clamp in any::<bool>(),
    ) {
        use rand::Rng;
        let basis = BinningScheme::uniform(60.0, 100.0, 5.0, 2000.0, 2003.0, 1.0).unwrap();
        let n = basis.n_bins();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let runs: Vec<EnsembleRun> = (0..members)
            .map(|m| {
                let lambda = (0..n).map(|_| rng.random_range(-0.002..0.03)).collect();
                let py = (0..n).map(|_| rng.random_range(1e4..1e6)).collect();
                fake_run(m, lambda, py, &basis)
            })
            .collect();
        let est = aggregate(&runs, clamp).unwrap();
        for s in 0..3 {
            let parts = est.under70.bands[s].median + est.from70to85.bands[s].median + est.over85.bands[s].median;
            prop_assert_eq!(parts, est.all_ages.bands[s].median);
            for series in [&est.all_ages, &est.under70, &est.from70to85, &est.over85] {
                let b = series.bands[s];
                prop_assert!(b.lo <= b.median && b.median <= b.hi);
            }
        }
        for (i, b) in est.incidence.bands.iter().enumerate() {
            let cases: Vec<f64> = runs
                .iter()
                .map(|r| {
                    let l = r.solution.lambda[i];
                    (if clamp { l.max(0.0) } else { l }) * r.person_years[i]
                })
                .collect();
            let lo = cases.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = cases.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= b.median && b.median <= hi);
        }
    }
}

fn write_inputs(dir: &std::path::Path, seed: u64) -> RunConfig {
    for name in ["population", "births", "immigration", "all", "disease"] {
        std::fs::write(dir.join(format!("{name}.csv")), format!("{name}\n")).unwrap();
    }
    let text = format!(
        r#"
seed = {seed}
[grid]
age_min = 0
age_max = 100
year_start = 2000
year_end = 2010
step = 1
[inputs]
population = "population.csv"
births = "births.csv"
immigration = "immigration.csv"
all_cause_deaths = "all.csv"
disease_deaths = "disease.csv"
[output]
dir = "out"
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    RunConfig::load(&path).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn run_hash_tracks_config_and_inputs(
        seed in any::<u64>(),
        other_seed in any::<u64>(),
        file in 0usize..5,
        extra in prop::collection::vec(any::<u8>(), 1..16),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_inputs(dir.path(), seed);
        let (h0, _) = hash_run(&cfg).unwrap();
        prop_assert_eq!(&hash_run(&cfg).unwrap().0, &h0);

        let mut reseeded = cfg.clone();
        reseeded.seed = other_seed;
        prop_assert_eq!(hash_run(&reseeded).unwrap().0 == h0, other_seed == seed);

        let paths = [
            &cfg.inputs.population,
            &cfg.inputs.births,
            &cfg.inputs.immigration,
            &cfg.inputs.all_cause_deaths,
            &cfg.inputs.disease_deaths,
        ];
        let mut bytes = std::fs::read(paths[file]).unwrap();
        bytes.extend(&extra);
        std::fs::write(paths[file], bytes).unwrap();
        prop_assert_ne!(hash_run(&cfg).unwrap().0, h0);
    }
}
