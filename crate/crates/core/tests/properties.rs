//! Property tests for the structural invariants: partition round-trips,
//! parser round-trips, prox nonexpansiveness, batch-sampling contracts,
//! graph symmetry, and token linearity.

use proptest::prelude::*;

use mtcd_core::data::{
    generate_synthetic_ridge, parse_svmlight, partition_even, sample_batch, write_svmlight,
    BatchIndices, LabelMap,
};
use mtcd_core::graph::{build_topology, Topology};
use mtcd_core::linalg::norm2;
use mtcd_core::objective::{prox_l1, ModelParams};
use mtcd_core::rngstream::{child_stream, DOMAIN_DATA};
use mtcd_core::token::{average, consistency_error, recompute};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_roundtrip_is_exact(
        n in 1usize..12,
        d in 1usize..40,
        k in 1usize..10,
        seed in 0u64..1000,
    ) {
        prop_assume!(k <= d);
        let ds = generate_synthetic_ridge(n, d, seed).unwrap();
        let parts = partition_even(&ds, k).unwrap();
        prop_assert_eq!(parts.block_dims().iter().sum::<usize>(), d);
        // First (d mod k) blocks get the extra column.
        let base = d / k;
        for (c, &w) in parts.block_dims().iter().enumerate() {
            prop_assert_eq!(w, base + usize::from(c < d % k));
        }
        prop_assert_eq!(parts.full_matrix(), ds.full_matrix());
    }

    #[test]
    fn svmlight_roundtrip_reproduces_values(
        n in 1usize..10,
        d in 1usize..12,
        seed in 0u64..1000,
    ) {
        let ds = generate_synthetic_ridge(n, d, seed).unwrap();
        let mut buf = Vec::new();
        write_svmlight(&ds, &mut buf).unwrap();
        let back = parse_svmlight(buf.as_slice(), "mem", Some(d), LabelMap::Raw).unwrap();
        prop_assert_eq!(ds, back);
    }

    #[test]
    fn prox_is_firmly_nonexpansive(
        u in prop::collection::vec(-10.0f64..10.0, 1..16),
        shift in prop::collection::vec(-10.0f64..10.0, 1..16),
        threshold in 0.0f64..5.0,
    ) {
        let len = u.len().min(shift.len());
        let u = &u[..len];
        let v: Vec<f64> = u.iter().zip(&shift[..len]).map(|(a, b)| a + b).collect();
        let pu = prox_l1(u, threshold);
        let pv = prox_l1(&v, threshold);
        let d_prox: Vec<f64> = pu.iter().zip(&pv).map(|(a, b)| a - b).collect();
        let d_in: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        prop_assert!(norm2(&d_prox) <= norm2(&d_in) + 1e-12);
    }

    #[test]
    fn batches_are_distinct_sorted_in_range(
        n in 1usize..50,
        b in 1usize..50,
        seed in 0u64..1000,
    ) {
        prop_assume!(b <= n);
        let mut rng = child_stream(seed, DOMAIN_DATA, 9, 9);
        let batch = sample_batch(n, b, &mut rng).unwrap();
        prop_assert_eq!(batch.len(), b);
        prop_assert!(batch.indices().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(batch.indices().iter().all(|&i| i < n));
    }

    #[test]
    fn er_graphs_are_symmetric_with_consistent_edge_count(
        k in 2usize..16,
        seed in 0u64..200,
    ) {
        let g = build_topology(Topology::ErdosRenyi { p: 0.5, seed }, k).unwrap();
        let degree_sum: usize = (0..k).map(|i| g.degree(i).unwrap()).sum();
        prop_assert_eq!(degree_sum, 2 * g.edge_count());
        for i in 0..k {
            for &j in g.neighbors(i).unwrap() {
                prop_assert!(g.neighbors(j).unwrap().contains(&i));
                prop_assert!(j != i);
            }
        }
    }

    #[test]
    fn token_average_commutes_with_recompute(
        seed in 0u64..500,
        copies in 1usize..5,
    ) {
        use rand::Rng;
        let ds = partition_even(&generate_synthetic_ridge(8, 6, seed).unwrap(), 3).unwrap();
        let full = BatchIndices::full(8);
        let mut rng = child_stream(seed, DOMAIN_DATA, 7, 7);
        let mut tokens = Vec::new();
        let mut flats: Vec<Vec<f64>> = Vec::new();
        for _ in 0..copies {
            let flat: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let theta = ModelParams::from_flat(ds.block_dims(), &flat).unwrap();
            tokens.push(recompute(&ds, &theta, &full).unwrap());
            flats.push(flat);
        }
        let mean: Vec<f64> = (0..6)
            .map(|j| flats.iter().map(|f| f[j]).sum::<f64>() / copies as f64)
            .collect();
        let mean_theta = ModelParams::from_flat(ds.block_dims(), &mean).unwrap();
        let avg = average(&tokens).unwrap();
        prop_assert!(consistency_error(&avg, &ds, &mean_theta).unwrap() <= 1e-10);
    }

    /// Numeric sanity check of the recursion bound behind the
    /// surrogate-offset constant: any nonnegative sequence with
    /// `u_n <= a + b * sum_{i<n} u_i` stays below `a (1+b)^n`, even when
    /// every step sits exactly on the premise boundary.
    #[test]
    fn cumulative_recursion_bound_holds(
        a in 0.0f64..10.0,
        b in 0.0f64..2.0,
        fractions in prop::collection::vec(0.0f64..=1.0, 1..24),
    ) {
        let mut running = 0.0f64;
        for (n, frac) in fractions.iter().enumerate() {
            let u_n = frac * (a + b * running);
            let bound = a * (1.0 + b).powi(n as i32);
            prop_assert!(
                u_n <= bound * (1.0 + 1e-12) + 1e-300,
                "n={n}: u={u_n} bound={bound}"
            );
            running += u_n;
        }
    }
}
