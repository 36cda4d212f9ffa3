//! Metrics against brute-force reimplementations on randomized small cases.

use tempseg::featio::Segment;
use tempseg::infer::ScoredSegment;
use tempseg::metrics::{average_precision, average_recall_at_k, final_score, roc_auc, AP_TIOUS, AR_KS};
use tempseg_oracles::{self as oracle, Case};

const TOL: f64 = 1e-9;

fn lib_preds(c: &Case) -> Vec<Vec<ScoredSegment>> {
    c.preds
        .iter()
        .map(|p| p.iter().map(|&(start, end, score)| ScoredSegment { start, end, score }).collect())
        .collect()
}

fn lib_gts(c: &Case) -> Vec<Vec<Segment>> {
    c.gts.iter().map(|g| g.iter().map(|&(a, b)| Segment::new(a, b)).collect()).collect()
}

#[test]
fn ap_ar_auc_match_brute_force_on_1000_cases() {
    let mut auc_cases = 0;
    for seed in 0..1000 {
        let c = oracle::random_case(seed);
        let (preds, gts) = (lib_preds(&c), lib_gts(&c));
        for tiou in AP_TIOUS.iter().copied().chain([0.3, 0.6]) {
            let got = average_precision(&preds, &gts, tiou).unwrap();
            let want = oracle::average_precision(&c.preds, &c.gts, tiou);
            assert!((got - want).abs() <= TOL, "case {seed} AP@{tiou}: {got} vs {want}");
        }
        for k in AR_KS.iter().copied().chain([1, 3]) {
            let got = average_recall_at_k(&preds, &gts, k).unwrap();
            let want = oracle::average_recall(&c.preds, &c.gts, k);
            assert!((got - want).abs() <= TOL, "case {seed} AR@{k}: {got} vs {want}");
        }
        let pairs = c.confidence_pairs();
        if pairs.iter().any(|p| p.1) && pairs.iter().any(|p| !p.1) {
            auc_cases += 1;
            let got = roc_auc(&pairs).unwrap();
            let want = oracle::auc(&pairs);
            assert!((got - want).abs() <= TOL, "case {seed} AUC: {got} vs {want}");
        }
    }
    assert!(auc_cases > 500, "only {auc_cases} cases had both classes");
}

#[test]
fn crafted_five_predictions_three_gts() {
    let gts = vec![vec![(0.0, 1.0), (2.0, 3.0)], vec![(5.0, 6.0)]];
    let preds = vec![
        vec![(0.0, 1.0, 0.9), (0.1, 1.0, 0.8), (2.2, 3.0, 0.4)],
        vec![(7.0, 8.0, 0.7), (5.0, 5.9, 0.3)],
    ];
    let c = Case { preds, gts };
    // Ranked: TP, FP (duplicate), FP, TP, TP at tIoU 0.5.
    // Precision 1, 1/2, 1/3, 2/4, 3/5; recall steps of 1/3 at ranks 1, 4, 5.
    let want = (1.0 + 0.6 + 0.6) / 3.0;
    assert!((average_precision(&lib_preds(&c), &lib_gts(&c), 0.5).unwrap() - want).abs() < TOL);
    assert!((oracle::average_precision(&c.preds, &c.gts, 0.5) - want).abs() < TOL);
}

#[test]
fn six_mixed_pairs_auc() {
    let pairs = [(0.9, true), (0.5, false), (0.5, true), (0.2, false), (0.7, true), (0.95, false)];
    // 0.9 and 0.7 beat two genuine each; 0.5 beats one and ties one.
    let want = (2.0 + 1.5 + 2.0) / 9.0;
    assert!((roc_auc(&pairs).unwrap() - want).abs() < TOL);
    assert!((oracle::auc(&pairs) - want).abs() < TOL);
}

#[test]
fn scoring_rule_weights_are_exact() {
    let perfect = final_score(1.0, [1.0; 4], [1.0; 4]);
    assert_eq!(perfect.score, 1.0);
    assert_eq!(perfect.final_score, 1.0);
    let zero = final_score(1.0, [0.0; 4], [0.0; 4]);
    assert_eq!(zero.score, 0.0);
    assert_eq!(zero.final_score, 0.5);
    // One component at a time recovers its weight over 16.
    let weights = [1.0, 2.0, 2.0, 3.0, 1.0, 2.0, 2.0, 3.0];
    for (i, w) in weights.iter().enumerate() {
        let mut ap = [0.0; 4];
        let mut ar = [0.0; 4];
        if i < 4 {
            ap[i] = 1.0;
        } else {
            ar[i - 4] = 1.0;
        }
        assert_eq!(final_score(0.0, ap, ar).score, w / 16.0, "component {i}");
    }
}

#[test]
fn undefined_metrics_are_errors() {
    assert!(roc_auc(&[(0.5, true), (0.7, true)]).is_err());
    let no_gt = vec![vec![]];
    assert!(average_precision(&[vec![]], &no_gt, 0.5).is_err());
    assert!(average_recall_at_k(&[vec![]], &no_gt, 5).is_err());
}
