//! Randomized algebraic properties of the generalized cross product.

use proptest::prelude::*;
use wedgenet::ga;

fn vectors(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), d - 1)
}

fn sized() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..6).prop_flat_map(vectors)
}

proptest! {
    #[test]
    fn cross_is_orthogonal_to_its_inputs(v in sized()) {
        let refs: Vec<&[f64]> = v.iter().map(|r| r.as_slice()).collect();
        let c = ga::cross(&refs).unwrap();
        let scale = 1.0 + ga::norm_l2(&c.direction) * v.iter().map(|r| ga::norm_l2(r)).fold(0.0, f64::max);
        for r in &v {
            prop_assert!(ga::dot(&c.direction, r).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn swapping_two_inputs_negates_exactly(v in sized().prop_filter("two inputs", |v| v.len() >= 2)) {
        let refs: Vec<&[f64]> = v.iter().map(|r| r.as_slice()).collect();
        let mut swapped = refs.clone();
        swapped.swap(0, 1);
        let a = ga::cross(&refs).unwrap();
        let b = ga::cross(&swapped).unwrap();
        for (x, y) in a.direction.iter().zip(&b.direction) {
            prop_assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn dot_with_cross_is_the_signed_volume(v in sized(), seed in prop::collection::vec(-3.0f64..3.0, 6)) {
        let d = v[0].len();
        let x = &seed[..d];
        let refs: Vec<&[f64]> = v.iter().map(|r| r.as_slice()).collect();
        let c = ga::cross(&refs).unwrap();
        // x goes in the leading row.
        let mut all = vec![x];
        all.extend(refs.iter().copied());
        let vol = ga::signed_volume(&all).unwrap();
        let lhs = ga::dot(x, &c.direction);
        prop_assert!((lhs - vol).abs() <= 1e-10 * (1.0 + vol.abs() + ga::norm_l2(&c.direction) * ga::norm_l2(x)),
            "{} vs {}", lhs, vol);
    }
}
