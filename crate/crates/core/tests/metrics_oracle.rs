//! Metrics against a per-pixel counting oracle.

use ccdf_core::dataio::{BinaryMap, RefLabel, ReferenceMap};
use ccdf_core::metrics::{accumulate_confusion, compute_metrics, ConfusionMatrix, EvaluationReport, Metrics};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight from the definitions, one pixel at a time.
fn oracle(pred: &Array2<bool>, reference: &Array2<RefLabel>) -> [f64; 7] {
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0f64, 0.0, 0.0, 0.0);
    for (p, r) in pred.iter().zip(reference.iter()) {
        match (r, p) {
            (RefLabel::Changed, true) => tp += 1.0,
            (RefLabel::Changed, false) => fn_ += 1.0,
            (RefLabel::Unchanged, true) => fp += 1.0,
            (RefLabel::Unchanged, false) => tn += 1.0,
            (RefLabel::Undefined, _) => {}
        }
    }
    let n = tp + fp + tn + fn_;
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    let ciou = ratio(tp, tp + fp + fn_);
    let uiou = ratio(tn, tn + fp + fn_);
    let po = (tp + tn) / n;
    let pe = ((tp + fp) * (tp + fn_) + (tn + fn_) * (tn + fp)) / (n * n);
    let kc = ratio(po - pe, 1.0 - pe);
    [po, kc, precision, recall, f1, (ciou + uiou) / 2.0, ciou]
}

fn as_array(m: &Metrics) -> [f64; 7] {
    [m.oa, m.kc, m.precision, m.recall, m.f1, m.miou, m.ciou]
}

#[test]
fn matches_pixel_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    for case in 0..200 {
        let p_changed: f64 = rng.random_range(0.0..1.0);
        let p_undefined: f64 = rng.random_range(0.0..0.5);
        let reference = Array2::from_shape_fn((64, 64), |_| {
            let u: f64 = rng.random();
            if u < p_undefined {
                RefLabel::Undefined
            } else if rng.random::<f64>() < p_changed {
                RefLabel::Changed
            } else {
                RefLabel::Unchanged
            }
        });
        let flip: f64 = rng.random_range(0.0..1.0);
        let pred = Array2::from_shape_fn((64, 64), |(y, x)| {
            let truth = reference[[y, x]] == RefLabel::Changed;
            if rng.random::<f64>() < flip {
                !truth
            } else {
                truth
            }
        });
        let cm = accumulate_confusion(&BinaryMap::new(pred.clone()).unwrap(), &ReferenceMap::new(reference.clone()).unwrap())
            .unwrap();
        let got = as_array(&compute_metrics(&cm).unwrap());
        let want = oracle(&pred, &reference);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9, "case {case}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn hand_case_in_percent() {
    let r = EvaluationReport::new(&ConfusionMatrix::new(1, 1, 1, 1)).unwrap();
    assert_eq!(r.oa, 50.0);
    assert_eq!(r.kc, 0.0);
    assert_eq!(r.f1, 50.0);
    assert_eq!(r.ciou, 33.33);
    let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(json["cIOU"], 33.33);
    assert_eq!(json["OA"], 50.0);
}

#[test]
fn ciou_bounded_by_precision_and_recall() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let cm = ConfusionMatrix::new(
            rng.random_range(0..500),
            rng.random_range(0..500),
            rng.random_range(0..500),
            rng.random_range(0..500),
        );
        if cm.total() == 0 {
            continue;
        }
        let m = compute_metrics(&cm).unwrap();
        assert!(m.ciou <= m.precision.min(m.recall) + 1e-15);
        for v in [m.oa, m.precision, m.recall, m.f1, m.miou, m.ciou] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!((-1.0..=1.0).contains(&m.kc));
        if m.precision > 0.0 && m.recall > 0.0 {
            let harmonic = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
            assert!((m.f1 - harmonic).abs() <= 1e-12);
        }
    }
}

#[test]
fn pixel_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = [RefLabel::Changed, RefLabel::Unchanged, RefLabel::Undefined];
    let reference: Vec<RefLabel> = (0..400).map(|_| labels[rng.random_range(0..3)]).collect();
    let pred: Vec<bool> = (0..400).map(|_| rng.random()).collect();
    let metrics = |order: &[usize]| {
        let r = Array2::from_shape_fn((20, 20), |(y, x)| reference[order[y * 20 + x]]);
        let p = Array2::from_shape_fn((20, 20), |(y, x)| pred[order[y * 20 + x]]);
        let cm = accumulate_confusion(&BinaryMap::new(p).unwrap(), &ReferenceMap::new(r).unwrap()).unwrap();
        as_array(&compute_metrics(&cm).unwrap())
    };
    let identity: Vec<usize> = (0..400).collect();
    let mut shuffled = identity.clone();
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, rng.random_range(0..=i));
    }
    assert_eq!(metrics(&identity), metrics(&shuffled));
}

#[test]
fn kappa_zero_when_agreement_is_chance() {
    // p_o = p_e: predictions independent of the reference with matching marginals.
    for cm in [ConfusionMatrix::new(1, 1, 1, 1), ConfusionMatrix::new(4, 2, 1, 2), ConfusionMatrix::new(9, 3, 1, 3)] {
        let m = compute_metrics(&cm).unwrap();
        let n = cm.total() as f64;
        let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
        let pe = ((tp + fp) * (tp + fn_) + (tn + fn_) * (tn + fp)) / (n * n);
        assert!((m.oa - pe).abs() < 1e-12, "{cm:?}");
        assert!(m.kc.abs() < 1e-12);
    }
}
