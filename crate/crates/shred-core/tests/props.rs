//! Property tests over randomized inputs: sensor sampling, library
//! combinatorics, softmax rows, pruning, lag-window bookkeeping, and the
//! symbolic round trip.

use proptest::prelude::*;

use shred_core::field::{sample_sensors, LaggedDataset, SpatioTemporalField};
use shred_core::library::{eval_library, monomials, LibrarySpec};
use shred_core::sindy::{round_printed, SindyCoefficients, SymbolicSystem};
use shred_core::tape::Tape;
use shred_core::Matrix;

fn field_with_mask(grid: (usize, usize), n_time: usize, mask: Vec<bool>) -> SpatioTemporalField {
    let n_cells = grid.0 * grid.1;
    let values = Matrix::from_fn(n_time, n_cells, |t, c| {
        if mask[c] {
            ((t * 31 + c * 7) % 17) as f32 * 0.1
        } else {
            0.0
        }
    });
    SpatioTemporalField::new("prop", values, grid, mask, 1.0).unwrap()
}

proptest! {
    #[test]
    fn sampled_sensors_are_distinct_valid_and_in_range(
        seed in 0u64..1000,
        rows in 2usize..6,
        cols in 2usize..6,
        dead in proptest::collection::vec(any::<bool>(), 36),
    ) {
        let n_cells = rows * cols;
        // Keep at least two cells alive so a request of 1..=2 sensors works.
        let mut mask: Vec<bool> = dead[..n_cells].iter().map(|&d| !d).collect();
        mask[0] = true;
        mask[n_cells - 1] = true;
        let field = field_with_mask((rows, cols), 3, mask.clone());
        let n_valid = mask.iter().filter(|&&m| m).count();
        let n = 1 + seed as usize % n_valid.min(4);

        let sensors = sample_sensors(&field, n, seed).unwrap();
        prop_assert_eq!(sensors.len(), n);
        for (i, &s) in sensors.iter().enumerate() {
            prop_assert!(s < n_cells);
            prop_assert!(mask[s], "sensor {} on a masked cell", s);
            prop_assert!(!sensors[..i].contains(&s), "duplicate sensor {}", s);
        }
    }

    #[test]
    fn oversampling_valid_cells_is_rejected(
        rows in 2usize..5,
        cols in 2usize..5,
        extra in 1usize..4,
    ) {
        let n_cells = rows * cols;
        let mask = vec![true; n_cells];
        let field = field_with_mask((rows, cols), 3, mask);
        prop_assert!(sample_sensors(&field, n_cells + extra, 0).is_err());
    }

    #[test]
    fn library_width_matches_names_and_evaluation(
        k in 1usize..5,
        poly_order in 0u32..4,
        fourier_k in 0u32..3,
        include_bias in any::<bool>(),
    ) {
        let spec = LibrarySpec { include_bias, poly_order, fourier_k };
        if spec.validate().is_err() {
            // The only rejection rule is a missing polynomial block.
            prop_assert!(poly_order == 0);
            return Ok(());
        }
        let width = spec.width(k);
        prop_assert_eq!(spec.column_names(k).len(), width);

        let z = Matrix::from_fn(3, k, |r, c| 0.3 * r as f64 - 0.2 * c as f64);
        let theta = eval_library(&z, &spec);
        prop_assert_eq!(theta.shape(), (3, width));

        // Monomial count: C(k + p, p) across degrees 1..=p, excluding the
        // constant, computed here independently via the binomial identity.
        let choose = |n: usize, r: usize| -> usize {
            let r = r.min(n - r);
            (0..r).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
        };
        let n_monomials = choose(k + poly_order as usize, poly_order as usize) - 1;
        prop_assert_eq!(monomials(k, poly_order).len(), n_monomials);
        let expected = usize::from(include_bias) + n_monomials + 2 * fourier_k as usize * k;
        prop_assert_eq!(width, expected);
    }

    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..6,
        cols in 1usize..6,
        scale in 0.1f64..30.0,
        seed in 0u64..500,
    ) {
        let mut rng = shred_core::rng::Pcg32::new(seed);
        let x = Matrix::from_fn(rows, cols, |_, _| rng.uniform(-scale, scale));
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(x);
        let s = tape.row_softmax(v).unwrap();
        let out = tape.value(s);
        for r in 0..rows {
            let sum: f64 = out.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6, "row {} sums to {}", r, sum);
            prop_assert!(out.row(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn pruning_is_idempotent_and_monotone(
        k in 1usize..4,
        tau_millis in 1u32..900,
        seed in 0u64..500,
    ) {
        let spec = LibrarySpec::linear();
        let width = spec.width(k);
        let mut rng = shred_core::rng::Pcg32::new(seed);
        let xi = Matrix::from_fn(width, k, |_, _| rng.uniform(-1.0f64, 1.0));
        let tau = tau_millis as f64 / 1000.0;

        let mut once = SindyCoefficients::new(xi.clone(), 1.0, 1).unwrap();
        once.prune(tau);
        let mut twice = once.clone();
        let removed_again = twice.prune(tau);
        prop_assert_eq!(removed_again, 0, "second prune at the same tau removed entries");
        prop_assert_eq!(&once.xi, &twice.xi);
        prop_assert_eq!(&once.mask, &twice.mask);

        // Monotone: a larger threshold keeps a subset of the survivors.
        let mut harsher = SindyCoefficients::new(xi, 1.0, 1).unwrap();
        harsher.prune(tau * 1.5);
        for (h, o) in harsher.mask.iter().zip(&once.mask) {
            prop_assert!(!h || *o, "entry alive at tau*1.5 but dead at tau");
        }
        prop_assert!(harsher.active_count() <= once.active_count());
    }

    #[test]
    fn lag_window_count_and_alignment_hold(
        n_time in 4usize..40,
        k_lag in 1usize..8,
        offset in 0usize..4,
    ) {
        prop_assume!(n_time >= k_lag + offset.max(1));
        let field = field_with_mask((2, 3), n_time, vec![true; 6]);
        let sensors = [0usize, 4];
        let data = LaggedDataset::<f64>::new(&field, &sensors, k_lag, offset).unwrap();
        prop_assert_eq!(data.n_samples(), n_time - k_lag - offset + 1);

        // Every window row is the sensor reading at its absolute time step,
        // and the target row is k_lag - 1 + offset steps after the window
        // start.
        for (s, (w, t)) in data.inputs.iter().zip(&data.targets).enumerate() {
            for r in 0..k_lag {
                for (j, &cell) in sensors.iter().enumerate() {
                    prop_assert_eq!(w[(r, j)], field.values[(s + r, cell)] as f64);
                }
            }
            let trow = s + k_lag - 1 + offset;
            for c in 0..6 {
                prop_assert_eq!(t[(0, c)], field.values[(trow, c)] as f64);
            }
        }
    }

    #[test]
    fn symbolic_text_round_trips_at_print_precision(
        k in 1usize..4,
        seed in 0u64..500,
    ) {
        let spec = LibrarySpec::linear();
        let width = spec.width(k);
        let mut rng = shred_core::rng::Pcg32::new(seed);
        let xi = Matrix::from_fn(width, k, |_, _| {
            round_printed(rng.uniform(-1.0f64, 1.0))
        });
        let coeffs = SindyCoefficients::new(xi, 1.0, 1).unwrap();
        let head = shred_core::sindy::HeadSystem::from_coefficients(0, 0, &coeffs, &spec);
        let sys = SymbolicSystem { systems: vec![head] };

        let text = sys.render_text();
        let parsed = SymbolicSystem::parse_text(&text).unwrap();
        prop_assert_eq!(&parsed, &sys);
        // And printing the parse reproduces the text byte for byte.
        prop_assert_eq!(parsed.render_text(), text);
    }
}
