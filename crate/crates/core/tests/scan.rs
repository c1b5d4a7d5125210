mod common;

use common::{expected_orders, rand_tensor, scan_suite};
use crackseg::scan::{Direction, ScanPath, ScanPathSet, ScanStrategy};
use crackseg::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_grid_up_to_16() {
    let bad = scan_suite(16);
    assert!(bad.is_empty(), "{} violations, first: {:?}", bad.len(), &bad[..bad.len().min(5)]);
}

#[test]
fn worked_examples() {
    let sass = ScanPathSet::generate(ScanStrategy::Sass, 2, 2, 4).unwrap();
    assert_eq!(sass.paths()[0].order(), &[0, 2, 3, 1]);
    assert_eq!(sass.paths()[2].order(), &[0, 1, 2, 3]);
    let raster = ScanPathSet::generate(ScanStrategy::Parallel, 2, 3, 4).unwrap();
    assert_eq!(raster.paths()[0].order(), &[0, 1, 2, 3, 4, 5]);
    for s in ScanStrategy::ALL {
        for p in ScanPathSet::generate(s, 1, 1, 4).unwrap().paths() {
            assert_eq!((p.order(), p.inverse(), p.directions()), (&[0][..], &[0][..], &[Direction::Start][..]));
        }
    }
}

#[test]
fn apply_substitutes_rows() {
    let set = ScanPathSet::generate(ScanStrategy::Sass, 2, 2, 4).unwrap();
    let p = &set.paths()[0];
    let seq = Tensor::new([4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(p.apply(&seq).unwrap().data(), &[1.0, 3.0, 4.0, 2.0]);
    assert!(p.apply(&Tensor::zeros([5, 1])).is_err());
}

#[test]
fn malformed_orders_are_rejected() {
    assert!(ScanPath::from_order(2, 2, vec![0, 1, 1, 3]).is_err());
    assert!(ScanPath::from_order(2, 2, vec![0, 1, 2]).is_err());
    assert!(ScanPath::from_order(2, 2, vec![0, 1, 2, 4]).is_err());
}

fn strategy() -> impl Strategy<Value = ScanStrategy> {
    prop::sample::select(ScanStrategy::ALL.to_vec())
}

proptest! {
    #[test]
    fn unapply_inverts_apply(s in strategy(), h in 1usize..12, w in 1usize..12, d in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = rand_tensor(&mut rng, &[h * w, d], -1.0, 1.0);
        for p in ScanPathSet::generate(s, h, w, 4).unwrap().paths() {
            prop_assert_eq!(p.unapply(&p.apply(&seq).unwrap()).unwrap(), seq.clone());
            prop_assert_eq!(p.apply(&p.unapply(&seq).unwrap()).unwrap(), seq.clone());
        }
    }

    #[test]
    fn larger_grids_match_reference(s in strategy(), h in 17usize..40, w in 1usize..40) {
        let set = ScanPathSet::generate(s, h, w, 4).unwrap();
        let want = expected_orders(s, h, w);
        for (p, o) in set.paths().iter().zip(&want) {
            prop_assert_eq!(p.order(), o.as_slice());
        }
    }

    #[test]
    fn reversal_is_an_involution(s in strategy(), h in 1usize..10, w in 1usize..10) {
        for p in ScanPathSet::generate(s, h, w, 4).unwrap().paths() {
            prop_assert_eq!(&p.reversed().reversed(), p);
            prop_assert_eq!(&p.mirrored().mirrored(), p);
        }
    }

    #[test]
    fn two_path_sets_prefix_or_pick(s in strategy(), h in 1usize..10, w in 1usize..10) {
        let four = ScanPathSet::generate(s, h, w, 4).unwrap();
        let two = ScanPathSet::generate(s, h, w, 2).unwrap();
        prop_assert_eq!(two.len(), 2);
        let picks = if s == ScanStrategy::Sass { [0, 2] } else { [0, 1] };
        prop_assert_eq!(&two.paths()[0], &four.paths()[picks[0]]);
        prop_assert_eq!(&two.paths()[1], &four.paths()[picks[1]]);
    }
}
