//! Overlap metrics on binary masks.

use crate::error::{ensure, Result};
use crate::masks::BinaryMask;

fn check_extents(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    ensure!(
        a.extents() == b.extents(),
        "mask extents differ: {:?} vs {:?}",
        a.extents(),
        b.extents()
    );
    Ok(())
}

/// `2|P∩G| / (|P|+|G|)`; `None` when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<f64>> {
    check_extents(pred, gt)?;
    let denom = pred.count() + gt.count();
    if denom == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * pred.intersection_count(gt)? as f64 / denom as f64))
}

/// Neighbours P2..P9, clockwise from north.
fn ring(m: &BinaryMask, r: usize, c: usize) -> [bool; 8] {
    let (r, c) = (r as isize, c as isize);
    [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)].map(|(dr, dc)| m.get_signed(r + dr, c + dc))
}

/// Zhang–Suen thinning run to convergence.
///
/// Plain Zhang–Suen erases some small blobs (a 2×2 square) entirely. When a
/// sub-iteration would remove every pixel of an 8-connected component, the
/// component's first pixel in raster order is kept instead.
pub fn skeletonize(m: &BinaryMask) -> BinaryMask {
    let mut cur = m.clone();
    loop {
        let mut changed = false;
        for step in 0..2 {
            let doomed: Vec<(usize, usize)> = cur
                .points()
                .filter(|&(r, c)| {
                    let p = ring(&cur, r, c);
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    let [p2, _, p4, _, p6, _, p8, _] = p;
                    let side = if step == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    (2..=6).contains(&b) && a == 1 && side
                })
                .collect();
            if doomed.is_empty() {
                continue;
            }
            let mut next = cur.clone();
            for &(r, c) in &doomed {
                next.set(r, c, false);
            }
            for comp in cur.connected_components() {
                if comp.points().all(|(r, c)| !next.get(r, c)) {
                    let (r, c) = comp.points().next().expect("components are nonempty");
                    next.set(r, c, true);
                }
            }
            if next != cur {
                changed = true;
                cur = next;
            }
        }
        if !changed {
            return cur;
        }
    }
}

/// Harmonic mean of topology precision and sensitivity; `None` when either
/// skeleton is empty.
pub fn cl_dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<f64>> {
    check_extents(pred, gt)?;
    let (sp, sg) = (skeletonize(pred), skeletonize(gt));
    if sp.count() == 0 || sg.count() == 0 {
        return Ok(None);
    }
    let tprec = sp.intersection_count(gt)? as f64 / sp.count() as f64;
    let tsens = sg.intersection_count(pred)? as f64 / sg.count() as f64;
    if tprec + tsens == 0.0 {
        return Ok(Some(0.0));
    }
    Ok(Some(2.0 * tprec * tsens / (tprec + tsens)))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn parse(rows: &[&str]) -> BinaryMask {
        BinaryMask::from_fn(rows.len(), rows[0].len(), |r, c| rows[r].as_bytes()[c] == b'#')
    }

    fn block(h: usize, w: usize, r: std::ops::Range<usize>, c: std::ops::Range<usize>) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| r.contains(&y) && c.contains(&x))
    }

    #[test]
    fn dice_examples() {
        let p = block(5, 5, 1..4, 0..3);
        let g = block(5, 5, 1..4, 1..4);
        assert_eq!(p.intersection_count(&g).unwrap(), 6);
        assert!((dice(&p, &g).unwrap().unwrap() - 12.0 / 18.0).abs() < 1e-12);
        assert_eq!(dice(&p, &p).unwrap(), Some(1.0));
        assert_eq!(
            dice(&block(5, 5, 0..1, 0..1), &block(5, 5, 4..5, 4..5)).unwrap(),
            Some(0.0)
        );
        assert_eq!(dice(&BinaryMask::zeros(5, 5), &BinaryMask::zeros(5, 5)).unwrap(), None);
        assert!(dice(&p, &BinaryMask::zeros(5, 6)).is_err());
    }

    #[test]
    fn thin_shapes_are_fixed_points() {
        let dot = BinaryMask::from_points(5, 5, &[(2, 2)]).unwrap();
        assert_eq!(skeletonize(&dot), dot);
        let line = block(5, 9, 2..3, 1..8);
        assert_eq!(skeletonize(&line), line);
        let diag = BinaryMask::from_fn(6, 6, |r, c| r == c);
        assert_eq!(skeletonize(&diag), diag);
    }

    #[test]
    fn bar_reduces_to_its_centerline() {
        // frozen output of a reference Zhang–Suen run
        let bar = block(3, 9, 0..3, 0..9);
        let expected = block(3, 9, 1..2, 1..7);
        assert_eq!(skeletonize(&bar), expected);
        let padded = block(5, 11, 1..4, 1..10);
        assert_eq!(skeletonize(&padded), block(5, 11, 2..3, 2..8));
    }

    #[test]
    fn matches_reference_thinning_on_fixed_shapes() {
        let cases: [(&[&str], &[&str]); 3] = [
            (
                &[
                    "...........",
                    ".....#.....",
                    "...#####...",
                    "..#######..",
                    "..#######..",
                    ".#########.",
                    "..#######..",
                    "..#######..",
                    "...#####...",
                    ".....#.....",
                    "...........",
                ],
                &[
                    "...........",
                    "...........",
                    "...........",
                    "...........",
                    "...........",
                    ".....#.....",
                    "...........",
                    "...........",
                    "...........",
                    "...........",
                    "...........",
                ],
            ),
            (
                &[
                    "..........",
                    ".###......",
                    ".###......",
                    ".###......",
                    ".###......",
                    ".###......",
                    ".########.",
                    ".########.",
                    ".########.",
                    "..........",
                ],
                &[
                    "..........",
                    "..........",
                    "..#.......",
                    "..#.......",
                    "..#.......",
                    "..#.......",
                    "..#.......",
                    "..#####...",
                    "..........",
                    "..........",
                ],
            ),
            (
                &[
                    "..........",
                    "###.......",
                    ".###......",
                    "..###.....",
                    "...###....",
                    "....###...",
                    ".....###..",
                    "......###.",
                    ".......###",
                    "..........",
                ],
                &[
                    "..........",
                    ".#........",
                    "..#.......",
                    "...#......",
                    "....#.....",
                    ".....#....",
                    "......#...",
                    ".......#..",
                    "........#.",
                    "..........",
                ],
            ),
        ];
        for (input, want) in cases {
            assert_eq!(skeletonize(&parse(input)), parse(want));
        }
    }

    #[test]
    fn small_squares_keep_one_pixel() {
        let sq = block(4, 4, 1..3, 1..3);
        assert_eq!(skeletonize(&sq), BinaryMask::from_points(4, 4, &[(1, 1)]).unwrap());
    }

    #[test]
    fn cl_dice_examples() {
        let line = block(7, 12, 3..4, 1..11);
        assert_eq!(cl_dice(&line, &line).unwrap(), Some(1.0));
        assert_eq!(cl_dice(&line, &block(7, 12, 6..7, 1..11)).unwrap(), Some(0.0));
        assert_eq!(cl_dice(&BinaryMask::zeros(7, 12), &line).unwrap(), None);

        let bar = block(7, 12, 2..5, 1..11);
        let center = block(7, 12, 3..4, 1..11);
        // brute force: the bar's skeleton against the centerline
        let sg = skeletonize(&bar);
        let tsens = sg.points().filter(|&(r, c)| center.get(r, c)).count() as f64 / sg.count() as f64;
        let tprec = 1.0;
        let want = 2.0 * tprec * tsens / (tprec + tsens);
        assert!((cl_dice(&center, &bar).unwrap().unwrap() - want).abs() < 1e-12);
        assert!((want - 1.0).abs() < 1e-12);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        prop::collection::vec(any::<bool>(), 12 * 12)
            .prop_map(|px| BinaryMask::new(12, 12, px.into_iter().map(u8::from).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn dice_is_symmetric(a in arb_mask(), b in arb_mask()) {
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            if a.is_positive() {
                prop_assert_eq!(dice(&a, &a).unwrap(), Some(1.0));
            }
            if dice(&a, &b).unwrap() == Some(1.0) {
                prop_assert_eq!(&a, &b);
            }
        }

        #[test]
        fn skeleton_is_an_idempotent_subset(m in arb_mask()) {
            let s = skeletonize(&m);
            prop_assert!(s.is_subset_of(&m));
            prop_assert_eq!(skeletonize(&s), s.clone());
            prop_assert_eq!(s.is_positive(), m.is_positive());
            prop_assert_eq!(s.connected_components().len(), m.connected_components().len());
        }

        #[test]
        fn cl_dice_of_a_mask_with_itself_is_one(m in arb_mask()) {
            if skeletonize(&m).is_positive() {
                prop_assert_eq!(cl_dice(&m, &m).unwrap(), Some(1.0));
            }
        }
    }
}
