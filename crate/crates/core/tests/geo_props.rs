use proptest::prelude::*;
use watermain::geo::{assign_mains_to_blocks, overlap_length, polyline_length, Point2, Polyline};
use watermain::{BlockId, MainId};

fn arb_line() -> impl Strategy<Value = Polyline> {
    prop::collection::vec((0.0..500.0f64, 0.0..500.0f64), 2..5).prop_filter_map("degenerate", |pts| {
        Polyline::new(pts.into_iter().map(|(x, y)| Point2 { x, y }).collect()).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn overlap_is_translation_invariant(main in arb_line(), street in arb_line(), w in 1.0..60.0f64,
                                        dx in -1e4..1e4f64, dy in -1e4..1e4f64) {
        let a = overlap_length(&main, &street, w);
        let b = overlap_length(&main.translate(dx, dy), &street.translate(dx, dy), w);
        prop_assert!((a - b).abs() < 0.1, "{a} vs {b}");
    }

    #[test]
    fn overlap_bounded_by_main_length(main in arb_line(), street in arb_line(), w in 1.0..60.0f64) {
        let o = overlap_length(&main, &street, w);
        prop_assert!(o >= 0.0);
        prop_assert!(o <= polyline_length(&main) + 1e-9);
    }

    #[test]
    fn overlap_monotone_in_halfwidth(main in arb_line(), street in arb_line(), w in 1.0..40.0f64, extra in 0.5..40.0f64) {
        let narrow = overlap_length(&main, &street, w);
        let wide = overlap_length(&main, &street, w + extra);
        prop_assert!(wide + 0.1 >= narrow, "{narrow} > {wide}");
    }

    #[test]
    fn assignment_ignores_input_order(mains in prop::collection::vec(arb_line(), 1..8),
                                      blocks in prop::collection::vec(arb_line(), 1..8),
                                      rot in 0usize..8) {
        let mains: Vec<(MainId, Polyline)> = mains.into_iter().enumerate().map(|(i, l)| (MainId(i as u64), l)).collect();
        let blocks: Vec<(BlockId, Polyline)> = blocks.into_iter().enumerate().map(|(i, l)| (BlockId(i as u64 * 3), l)).collect();
        let a = assign_mains_to_blocks(&mains, &blocks, 25.0).unwrap();
        let mut m2 = mains.clone();
        m2.reverse();
        let mut b2 = blocks.clone();
        let r = rot % b2.len();
        b2.rotate_left(r);
        let b = assign_mains_to_blocks(&m2, &b2, 25.0).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn equal_overlap_goes_to_smaller_block() {
    let main = Polyline::new(vec![Point2 { x: 0.0, y: 0.0 }, Point2 { x: 100.0, y: 0.0 }]).unwrap();
    let above = Polyline::new(vec![Point2 { x: 0.0, y: 10.0 }, Point2 { x: 100.0, y: 10.0 }]).unwrap();
    let below = Polyline::new(vec![Point2 { x: 0.0, y: -10.0 }, Point2 { x: 100.0, y: -10.0 }]).unwrap();
    let a = assign_mains_to_blocks(&[(MainId(1), main)], &[(BlockId(9), above), (BlockId(4), below)], 25.0).unwrap();
    assert_eq!(a.mapping[&MainId(1)], BlockId(4));
}

#[test]
fn distant_main_is_unmapped() {
    let main = Polyline::new(vec![Point2 { x: 0.0, y: 500.0 }, Point2 { x: 100.0, y: 500.0 }]).unwrap();
    let street = Polyline::new(vec![Point2 { x: 0.0, y: 0.0 }, Point2 { x: 100.0, y: 0.0 }]).unwrap();
    let a = assign_mains_to_blocks(&[(MainId(1), main)], &[(BlockId(1), street)], 25.0).unwrap();
    assert!(a.mapping.is_empty());
    assert_eq!(a.unmapped, vec![MainId(1)]);
}
