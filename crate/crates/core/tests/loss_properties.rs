mod common;

use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsedet::geometry::Xyxy;
use sparsedet::loss::*;

use common::{central_diff, ciou_reference, rel_err};

fn random_box(rng: &mut ChaCha8Rng) -> Xyxy {
    let x1 = rng.random_range(0.0..0.7);
    let y1 = rng.random_range(0.0..0.7);
    Xyxy::new(x1, y1, x1 + rng.random_range(0.02..0.3), y1 + rng.random_range(0.02..0.3))
}

fn corners(b: &Xyxy) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

fn with_corner(b: &Xyxy, k: usize, v: f64) -> Xyxy {
    let mut c = corners(b);
    c[k] = v;
    Xyxy::new(c[0], c[1], c[2], c[3])
}

#[test]
fn kernel_values() {
    let one = Array2::from_elem((1, 1), true);
    let v = bce_loss(Array2::zeros((1, 1)).view(), Array2::ones((1, 1)).view(), one.view());
    assert!((v - std::f64::consts::LN_2).abs() < 1e-6);

    let (c, _) = ciou_pair(&Xyxy::new(0.0, 0.0, 1.0, 1.0), &Xyxy::new(2.0, 0.0, 3.0, 1.0));
    assert!((c - 1.4).abs() < 1e-6, "{c}");

    let mut g = vec![0.0; 16];
    assert!((dfl_side(&[0.0; 16], 3.5, &mut g) - 16f64.ln()).abs() < 1e-6);
}

#[test]
fn bce_is_stable_at_extreme_logits() {
    for x in [-50.0, 50.0] {
        for y in [0.0, 1.0] {
            let v = bce_term(x, y);
            assert!(v.is_finite() && v >= 0.0);
            let expected = if (x > 0.0) == (y > 0.5) { (-50f64).exp() } else { 50.0 };
            assert!((v - expected).abs() < 1e-9, "x={x} y={y} v={v}");
        }
    }
}

#[test]
fn dfl_two_point_optimum_matches_grid_search() {
    let value = |pl: f64| -0.75 * pl.ln() - 0.25 * (1.0 - pl).ln();
    let mut best = (f64::INFINITY, 0.0);
    for k in 1..100_000 {
        let pl = k as f64 / 100_000.0;
        if value(pl) < best.0 {
            best = (value(pl), pl);
        }
    }
    assert!((best.1 - 0.75).abs() < 1e-4);
    let mut logits = vec![-1e4; 16];
    logits[3] = 0.75f64.ln();
    logits[4] = 0.25f64.ln();
    let mut g = vec![0.0; 16];
    let v = dfl_side(&logits, 3.25, &mut g);
    assert!((v - 0.562335).abs() < 1e-6, "{v}");
    assert!(v <= best.0 + 1e-12);
}

#[test]
fn ciou_matches_reference_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let (p, t) = (random_box(&mut rng), random_box(&mut rng));
        let (v, _) = ciou_pair(&p, &t);
        assert!((v - ciou_reference(&p, &t)).abs() < 1e-12);
    }
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (n, c) = (rng.random_range(1..6), rng.random_range(1..4));
        let scores = Array2::from_shape_fn((n, c), |_| rng.random_range(-4.0..4.0));
        let targets = Array2::from_shape_fn((n, c), |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let mask = Array2::from_shape_fn((n, c), |_| rng.random_bool(0.8));
        let out = bce_with_grad(scores.view(), targets.view(), mask.view());
        for ((i, j), &a) in out.grad.indexed_iter() {
            let f = |x: f64| {
                let mut s = scores.clone();
                s[[i, j]] = x;
                bce_loss(s.view(), targets.view(), mask.view())
            };
            let num = central_diff(f, scores[[i, j]], 1e-5);
            assert!(rel_err(a, num) < 1e-4, "analytic {a} numeric {num}");
        }
    }
}

#[test]
fn ciou_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 50 {
        let t = random_box(&mut rng);
        // half the cases overlap the target
        let p = if checked % 2 == 0 {
            let c = corners(&t);
            Xyxy::new(
                c[0] + rng.random_range(-0.05..0.05),
                c[1] + rng.random_range(-0.05..0.05),
                c[2] + rng.random_range(-0.05..0.05),
                c[3] + rng.random_range(-0.05..0.05),
            )
        } else {
            random_box(&mut rng)
        };
        if !(p.width() > 1e-3 && p.height() > 1e-3) {
            continue;
        }
        let (_, g) = ciou_pair(&p, &t);
        for (k, &a) in g.iter().enumerate() {
            let num = central_diff(|v| ciou_pair(&with_corner(&p, k, v), &t).0, corners(&p)[k], 1e-7);
            assert!(rel_err(a, num) < 1e-4, "corner {k}: analytic {a} numeric {num} p={p:?} t={t:?}");
        }
        checked += 1;
    }
}

#[test]
fn dfl_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let bins = 16;
        let logits: Vec<f64> = (0..bins).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = rng.random_range(0.0..(bins - 1) as f64);
        let mut g = vec![0.0; bins];
        dfl_side(&logits, d, &mut g);
        for k in 0..bins {
            let f = |x: f64| {
                let mut l = logits.clone();
                l[k] = x;
                dfl_side(&l, d, &mut vec![0.0; bins])
            };
            let num = central_diff(f, logits[k], 1e-5);
            assert!(rel_err(g[k], num) < 1e-4, "bin {k}: analytic {} numeric {num}", g[k]);
        }
    }
}

/// A small batch of random predictions and targets on a 4×4 grid with 8 bins.
fn random_batch(rng: &mut ChaCha8Rng, classes: usize) -> (BatchPredictions, BatchTargets) {
    let n = 16;
    let bins = 8;
    let sn = 0.25;
    let mut fg = vec![false; n];
    let mut class_targets = Array2::zeros((n, classes));
    let mut sides = Array2::zeros((n, 4));
    let mut boxes = vec![Xyxy::new(0.0, 0.0, 0.0, 0.0); n];
    let mut gt_area = Array2::from_elem((n, classes), false);
    let mut anchors = Vec::new();
    for cell in 0..n {
        let (ax, ay) = (((cell % 4) as f64 + 0.5) * sn, ((cell / 4) as f64 + 0.5) * sn);
        anchors.push((ax, ay));
        if rng.random_bool(0.4) {
            fg[cell] = true;
            let c = rng.random_range(0..classes);
            class_targets[[cell, c]] = 1.0;
            gt_area[[cell, c]] = true;
            let d: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..(bins - 1) as f64)).collect();
            for k in 0..4 {
                sides[[cell, k]] = d[k];
            }
            boxes[cell] = Xyxy::new(ax - d[0] * sn, ay - d[1] * sn, ax + d[2] * sn, ay + d[3] * sn);
        }
    }
    let preds = BatchPredictions {
        scores: Array2::from_shape_fn((n, classes), |_| rng.random_range(-3.0..3.0)),
        box_logits: Array3::from_shape_fn((n, 4, bins), |_| rng.random_range(-2.0..2.0)),
    };
    let targets = BatchTargets {
        fg,
        class_targets,
        sides,
        boxes,
        gt_area,
        anchors,
        stride_norm: sn,
    };
    (preds, targets)
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let weights = LossWeights::default();
    let cfg = CfplConfig::enabled_for([0]);
    for _ in 0..10 {
        let (preds, targets) = random_batch(&mut rng, 2);
        let out = total_loss(&preds, &targets, &weights, &cfg).unwrap();
        let eval = |p: &BatchPredictions| {
            let o = total_loss(p, &targets, &weights, &cfg).unwrap();
            (o.breakdown.total, o.mask)
        };
        for ((cell, k, b), &a) in out.grad_box_logits.indexed_iter() {
            let f = |x: f64| {
                let mut p = preds.clone();
                p.box_logits[[cell, k, b]] = x;
                eval(&p).0
            };
            let num = central_diff(f, preds.box_logits[[cell, k, b]], 1e-6);
            assert!(rel_err(a, num) < 1e-4, "box logit ({cell},{k},{b}): analytic {a} numeric {num}");
        }
        for ((cell, c), &a) in out.grad_scores.indexed_iter() {
            let h = 1e-6;
            let at = |x: f64| {
                let mut p = preds.clone();
                p.scores[[cell, c]] = x;
                eval(&p)
            };
            let x = preds.scores[[cell, c]];
            let ((lo, mlo), (hi, mhi)) = (at(x - h), at(x + h));
            if mlo != out.mask || mhi != out.mask {
                continue;
            }
            let num = (hi - lo) / (2.0 * h);
            assert!(rel_err(a, num) < 1e-4, "score ({cell},{c}): analytic {a} numeric {num}");
        }
    }
}

fn arb_grid() -> impl Strategy<Value = (Array2<f64>, Array2<bool>, Vec<usize>)> {
    (1usize..40, 1usize..5).prop_flat_map(|(n, c)| {
        (
            proptest::collection::vec(-8.0f64..8.0, n * c),
            proptest::collection::vec(proptest::bool::weighted(0.2), n * c),
            proptest::collection::vec(0..c, 0..=c),
        )
            .prop_map(move |(s, g, w)| (Array2::from_shape_vec((n, c), s).unwrap(), Array2::from_shape_vec((n, c), g).unwrap(), w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mask_is_sound((scores, gt, wl) in arb_grid(), q in 0.0f64..=1.0) {
        let cfg = CfplConfig { threshold_quantile: q, ..CfplConfig::enabled_for(wl.iter().copied()) };
        let m = compute_cfpl_mask(scores.view(), gt.view(), &cfg);
        for ((i, c), &v) in m.mask.indexed_iter() {
            if gt[[i, c]] || !cfg.whitelist.contains(&c) {
                prop_assert!(v);
            }
        }
        for c in 0..scores.ncols() {
            let has_gt = gt.column(c).iter().any(|&g| g);
            prop_assert_eq!(m.thresholds[c].is_finite(), cfg.whitelist.contains(&c) && has_gt);
        }
    }

    #[test]
    fn masking_never_raises_bce((scores, gt, wl) in arb_grid()) {
        let targets = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        let m = compute_cfpl_mask(scores.view(), gt.view(), &CfplConfig::enabled_for(wl));
        let ones = Array2::from_elem(scores.dim(), true);
        prop_assert!(bce_loss(scores.view(), targets.view(), m.mask.view()) <= bce_loss(scores.view(), targets.view(), ones.view()));
    }

    #[test]
    fn masked_entries_have_zero_gradient((scores, gt, wl) in arb_grid()) {
        let targets = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        let cfg = CfplConfig::enabled_for(wl);
        let m = compute_cfpl_mask(scores.view(), gt.view(), &cfg);
        let out = bce_with_grad(scores.view(), targets.view(), m.mask.view());
        let h = 1e-4;
        for ((i, c), &keep) in m.mask.indexed_iter() {
            if keep {
                continue;
            }
            prop_assert_eq!(out.grad[[i, c]], 0.0);
            let loss_at = |x: f64| {
                let mut s = scores.clone();
                s[[i, c]] = x;
                let mm = compute_cfpl_mask(s.view(), gt.view(), &cfg);
                (bce_loss(s.view(), targets.view(), mm.mask.view()), mm.mask == m.mask)
            };
            let ((lo, same_lo), (hi, same_hi)) = (loss_at(scores[[i, c]] - h), loss_at(scores[[i, c]] + h));
            if same_lo && same_hi {
                prop_assert!(((hi - lo) / (2.0 * h)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn masked_count_is_non_increasing_in_q((scores, gt, wl) in arb_grid(), q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let base = CfplConfig::enabled_for(wl);
        let at = |q| compute_cfpl_mask(scores.view(), gt.view(), &CfplConfig { threshold_quantile: q, ..base.clone() }).masked_count();
        prop_assert!(at(hi) <= at(lo));
    }

    #[test]
    fn disabled_masking_is_bitwise_baseline((scores, gt, wl) in arb_grid()) {
        let targets = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        let disabled = CfplConfig { enabled: false, ..CfplConfig::enabled_for(wl) };
        let m = compute_cfpl_mask(scores.view(), gt.view(), &disabled);
        prop_assert!(m.mask.iter().all(|&v| v));
        let ones = Array2::from_elem(scores.dim(), true);
        let a = bce_with_grad(scores.view(), targets.view(), m.mask.view());
        let b = bce_with_grad(scores.view(), targets.view(), ones.view());
        prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        prop_assert_eq!(a.grad, b.grad);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn total_loss_with_masking_never_exceeds_baseline(seed in any::<u64>(), wl in proptest::collection::vec(0usize..3, 0..=3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, targets) = random_batch(&mut rng, 3);
        let w = LossWeights::default();
        let on = total_loss(&preds, &targets, &w, &CfplConfig::enabled_for(wl.iter().copied())).unwrap();
        let off = total_loss(&preds, &targets, &w, &CfplConfig { enabled: false, ..CfplConfig::enabled_for(wl) }).unwrap();
        let base = total_loss(&preds, &targets, &w, &CfplConfig::default()).unwrap();
        prop_assert!(on.breakdown.total <= off.breakdown.total);
        prop_assert_eq!(off.breakdown.total.to_bits(), base.breakdown.total.to_bits());
        prop_assert_eq!(off.grad_scores, base.grad_scores);
    }
}
