//! Randomized invariants of the numerical building blocks: the response
//! gradient's collinearity and scaling structure, bit-exact checkpoint
//! round-trips, Hessian-vector symmetry, metric bounds, and optimizer
//! identities.

use std::sync::Arc;

use proptest::prelude::*;

use brcgan_core::adam::{adam_step_in_place, AdamState};
use brcgan_core::bilevel::response_gradient_from_parts;
use brcgan_core::fd::hvp_fd;
use brcgan_core::metrics::{fid_from_moments, js_bits_from_probs, mode_coverage};
use brcgan_core::matrix::Matrix;
use brcgan_core::params::{Layout, LayoutEntry, ParamVector};
use brcgan_core::synthdata::{ring2d, sample_seeded};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn small_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, len)
}

prop_compose! {
    fn grad_triple()(len in 1usize..12)(
        f_gen in small_vec(len),
        f_disc in small_vec(len.max(2)),
        big_f_disc in small_vec(len.max(2)),
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (f_gen, f_disc, big_f_disc)
    }
}

proptest! {
    #[test]
    fn response_is_an_exact_rescaling_of_the_follower_gen_gradient(
        (f_gen, f_disc, big_f_disc) in grad_triple(),
        damping in prop::sample::select(vec![0.0, 1e-10, 1e-8, 1e-4]),
    ) {
        let denom = dot(&f_disc, &f_disc) + damping;
        prop_assume!(denom > 0.0);
        let r = response_gradient_from_parts(&f_gen, &f_disc, &big_f_disc, damping);
        prop_assert!(!r.degenerate_denominator);
        // The returned scalar must reproduce the quotient of dot products…
        let want_scalar = dot(&f_disc, &big_f_disc) / denom;
        prop_assert_eq!(r.scalar.to_bits(), want_scalar.to_bits());
        // …and every component must be exactly −scalar·(∂f/∂θ_G)ᵢ.
        for (got, g) in r.values.iter().zip(&f_gen) {
            prop_assert_eq!(got.to_bits(), (-r.scalar * g).to_bits());
        }
    }

    #[test]
    fn response_survives_power_of_two_rescaling_bitwise(
        (f_gen, f_disc, big_f_disc) in grad_triple(),
        k in -8i32..=8,
    ) {
        prop_assume!(dot(&f_disc, &f_disc) > 0.0);
        let base = response_gradient_from_parts(&f_gen, &f_disc, &big_f_disc, 0.0);
        let c = (2.0f64).powi(k);
        let f_gen_s: Vec<f64> = f_gen.iter().map(|v| c * v).collect();
        let f_disc_s: Vec<f64> = f_disc.iter().map(|v| c * v).collect();
        let scaled = response_gradient_from_parts(&f_gen_s, &f_disc_s, &big_f_disc, 0.0);
        for (a, b) in base.values.iter().zip(&scaled.values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_follower_gradient_always_flags_degeneracy(
        f_gen in small_vec(4),
        big_f_disc in small_vec(5),
    ) {
        let r = response_gradient_from_parts(&f_gen, &[0.0; 5], &big_f_disc, 0.0);
        prop_assert!(r.degenerate_denominator);
        prop_assert_eq!(r.scalar, 0.0);
        prop_assert!(r.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        dims in prop::collection::vec((1usize..5, 1usize..5), 1..4),
        raw in prop::collection::vec(any::<f64>(), 64),
    ) {
        let entries: Vec<LayoutEntry> = dims
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| LayoutEntry::matrix(&format!("m{i}"), r, c))
            .collect();
        let layout = Arc::new(Layout::new(entries));
        let n = layout.total_len();
        let values: Vec<f64> = raw
            .iter()
            .cycle()
            .filter(|v| v.is_finite())
            .take(n)
            .cloned()
            .collect();
        prop_assume!(values.len() == n);
        let p = ParamVector::from_values(layout, values).unwrap();
        let back = ParamVector::decode(&p.encode()).unwrap();
        prop_assert!(p.same_layout(&back));
        for (a, b) in p.values.iter().zip(&back.values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn quadratic_hessian_vector_products_are_symmetric(
        diag in prop::collection::vec(0.5..3.0f64, 3),
        off in prop::collection::vec(-0.4..0.4f64, 3),
        at in small_vec(3),
        u in small_vec(3),
        v in small_vec(3),
    ) {
        // f(x) = ½ xᵀAx with symmetric A ⇒ ⟨Hu, v⟩ = ⟨Hv, u⟩.
        let a = Matrix::from_rows(&[
            &[diag[0], off[0], off[1]],
            &[off[0], diag[1], off[2]],
            &[off[1], off[2], diag[2]],
        ])
        .unwrap();
        let mut grad = |x: &[f64]| -> brcgan_core::error::Result<Vec<f64>> {
            let mut g = vec![0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    g[i] += a.at(i, j) * x[j];
                }
            }
            Ok(g)
        };
        let hu = hvp_fd(&mut grad, &at, &u, 1e-4).unwrap();
        let hv = hvp_fd(&mut grad, &at, &v, 1e-4).unwrap();
        let lhs = dot(&hu, &v);
        let rhs = dot(&hv, &u);
        prop_assert!((lhs - rhs).abs() < 1e-6 * (1.0 + lhs.abs().max(rhs.abs())));
    }

    #[test]
    fn js_is_bounded_symmetric_and_zero_on_itself(
        p_counts in prop::collection::vec(0u32..50, 2..48),
        q_seed in prop::collection::vec(0u32..50, 2..48),
    ) {
        let len = p_counts.len().min(q_seed.len());
        let norm = |c: &[u32]| -> Option<Vec<f64>> {
            let total: u32 = c.iter().sum();
            if total == 0 {
                return None;
            }
            Some(c.iter().map(|&x| x as f64 / total as f64).collect())
        };
        let (p, q) = match (norm(&p_counts[..len]), norm(&q_seed[..len])) {
            (Some(p), Some(q)) => (p, q),
            _ => return Ok(()),
        };
        let ab = js_bits_from_probs(&p, &q);
        let ba = js_bits_from_probs(&q, &p);
        prop_assert!(ab >= 0.0 && ab <= 1.0 + 1e-12, "js {ab}");
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert_eq!(js_bits_from_probs(&p, &p), 0.0);
    }

    #[test]
    fn fid_translation_identity_and_symmetry(
        mu in small_vec(2),
        t in small_vec(2),
        d in prop::collection::vec(0.2..2.0f64, 2),
        c in -0.1..0.1f64,
    ) {
        let cov = Matrix::from_rows(&[&[d[0], c], &[c, d[1]]]).unwrap();
        prop_assume!(d[0] * d[1] > c * c);
        let shifted: Vec<f64> = mu.iter().zip(&t).map(|(m, s)| m + s).collect();
        let fid = fid_from_moments(&mu, &cov, &shifted, &cov).unwrap();
        let want = dot(&t, &t);
        prop_assert!((fid - want).abs() < 1e-9, "fid {fid} vs ‖t‖² {want}");
        let back = fid_from_moments(&shifted, &cov, &mu, &cov).unwrap();
        prop_assert!((fid - back).abs() < 1e-9);
    }

    #[test]
    fn adam_with_a_zero_gradient_never_moves_parameters(
        values in prop::collection::vec(-5.0..5.0f64, 1..10),
        steps in 1usize..5,
        lr in prop::sample::select(vec![1e-4, 1e-3, 0.1]),
    ) {
        let layout = Arc::new(Layout::new(vec![LayoutEntry::vector(
            "w",
            values.len(),
        )]));
        let mut p = ParamVector::from_values(layout.clone(), values.clone()).unwrap();
        let mut s = AdamState::new(layout);
        let zeros = vec![0.0; values.len()];
        for _ in 0..steps {
            adam_step_in_place(&mut p, &zeros, &mut s, lr, 1.0).unwrap();
        }
        for (a, b) in p.values.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mode_coverage_is_monotone_in_the_required_fraction(
        modes in 2usize..8,
        n in 64usize..200,
        seed in 0u64..1000,
    ) {
        let spec = ring2d(modes, 1.0).unwrap();
        let s = sample_seeded(&spec, n, seed, brcgan_core::rng::purpose::EVAL_REAL, 0, 0);
        let mut last = usize::MAX;
        for frac in [0.0, 0.02, 0.05, 0.1, 0.25, 0.6] {
            let m = mode_coverage(&s, &spec, 3.0, frac).unwrap();
            prop_assert!(m <= last, "coverage rose from {last} to {m} at {frac}");
            last = m;
        }
    }

    #[test]
    fn mode_coverage_is_monotone_in_the_capture_radius(
        modes in 2usize..8,
        n in 64usize..200,
        seed in 0u64..1000,
    ) {
        let spec = ring2d(modes, 1.0).unwrap();
        let s = sample_seeded(&spec, n, seed, brcgan_core::rng::purpose::EVAL_REAL, 0, 1);
        let mut last = 0usize;
        for mult in [0.5, 1.0, 2.0, 3.0, 6.0] {
            let m = mode_coverage(&s, &spec, mult, 0.01).unwrap();
            prop_assert!(m >= last, "coverage fell from {last} to {m} at radius ×{mult}");
            last = m;
        }
    }

    #[test]
    fn mode_coverage_ignores_sample_order(
        modes in 2usize..6,
        seed in 0u64..1000,
        rot in 1usize..63,
    ) {
        let spec = ring2d(modes, 1.0).unwrap();
        let s = sample_seeded(&spec, 64, seed, brcgan_core::rng::purpose::EVAL_REAL, 0, 2);
        let mut rows: Vec<Vec<f64>> = (0..s.rows).map(|i| s.row(i).to_vec()).collect();
        rows.rotate_left(rot);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let shuffled = Matrix::from_rows(&refs).unwrap();
        let a = mode_coverage(&s, &spec, 3.0, 0.02).unwrap();
        let b = mode_coverage(&shuffled, &spec, 3.0, 0.02).unwrap();
        prop_assert_eq!(a, b);
    }
}
