use proptest::prelude::*;

use opd_lab::estimators::{
    adversarial_trajectory, gamma_estimator, gradient_variance, sample_tokens, score_tabular, sequence_estimator,
    token_estimator, BoundConstants, Estimator,
};
use opd_lab::frame::{Cell, MetricFrame};
use opd_lab::nn::{CategoricalDist, Layout, ParamVector, TabularLm, TokenModel};
use opd_lab::oracle::{exact_sequence_kl, EnumerationInstance};
use opd_lab::rng;
use opd_lab::support::{
    build_support, nucleus, renormalize, top_k_ids, top_p_sample, truncated_rkl, MaskSet, SupportSet, SupportSource,
};

fn logits(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0..6.0f64, 2..=max_len)
}

fn logit_pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..=max_len).prop_flat_map(|v| (prop::collection::vec(-6.0..6.0f64, v), prop::collection::vec(-6.0..6.0f64, v)))
}

fn source() -> impl Strategy<Value = SupportSource> {
    prop_oneof![
        Just(SupportSource::TeacherTopk),
        Just(SupportSource::StudentTopk),
        Just(SupportSource::TeacherTopkPlusSampled)
    ]
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in logits(40)) {
        let d = CategoricalDist::from_logits(z);
        prop_assert!(d.probs().iter().all(|p| *p >= 0.0));
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layout_segments_are_contiguous(sizes in prop::collection::vec(prop::collection::vec(1usize..5, 1..3), 1..6)) {
        let parts: Vec<(String, Vec<usize>)> = sizes.iter().enumerate().map(|(i, s)| (format!("s{i}"), s.clone())).collect();
        let layout = Layout::new(parts);
        let mut offset = 0;
        for seg in layout.segments() {
            prop_assert_eq!(seg.range().start, offset);
            offset = seg.range().end;
        }
        prop_assert_eq!(offset, layout.total_len());
        prop_assert_eq!(ParamVector::zeros(layout.clone()).len(), layout.total_len());
    }

    #[test]
    fn tabular_rows_are_distributions(vocab in 2usize..6, order in 0usize..3, seed in any::<u64>()) {
        let m = TabularLm::random(vocab, order, 2.0, seed).unwrap();
        for d in m.row_dists() {
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn truncated_rkl_is_nonnegative((zp, zq) in logit_pair(16), k in 1usize..16, src in source(), y in any::<u32>()) {
        let (p, q) = (CategoricalDist::from_logits(zp), CategoricalDist::from_logits(zq));
        let v = p.vocab_size();
        let k = k.min(v);
        let s = build_support(&q, &p, k, src, Some(y % v as u32)).unwrap();
        let (pt, qt) = (renormalize(&p, &s).unwrap(), renormalize(&q, &s).unwrap());
        prop_assert!(truncated_rkl(&pt, &qt).unwrap() >= 0.0);
        prop_assert!(truncated_rkl(&pt, &pt).unwrap() < 1e-10);
    }

    #[test]
    fn renormalized_masses_sum_to_one((zp, zq) in logit_pair(16), k in 1usize..16) {
        let (p, q) = (CategoricalDist::from_logits(zp), CategoricalDist::from_logits(zq));
        let k = k.min(p.vocab_size());
        let s = build_support(&q, &p, k, SupportSource::TeacherTopk, None).unwrap();
        let t = renormalize(&p, &s).unwrap();
        prop_assert!((t.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(t.probs().iter().all(|x| *x > 0.0));
    }

    #[test]
    fn support_ids_are_distinct_with_expected_size((zp, zq) in logit_pair(16), k in 1usize..16, src in source(), y in any::<u32>()) {
        let (p, q) = (CategoricalDist::from_logits(zp), CategoricalDist::from_logits(zq));
        let v = p.vocab_size();
        let k = k.min(v);
        let y = y % v as u32;
        let s = build_support(&q, &p, k, src, Some(y)).unwrap();
        let mut ids = s.token_ids().to_vec();
        prop_assert!(ids.iter().all(|t| (*t as usize) < v));
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), s.len());
        let expected = if src == SupportSource::TeacherTopkPlusSampled && !top_k_ids(q.probs(), k).contains(&y) { k + 1 } else { k };
        prop_assert_eq!(s.len(), expected);
    }

    #[test]
    fn coverage_grows_with_k(z in logits(20)) {
        let q = CategoricalDist::from_logits(z);
        let mut last = 0.0;
        for k in 1..=q.vocab_size() {
            let s = build_support(&q, &q, k, SupportSource::TeacherTopk, None).unwrap();
            let c = s.coverage(&q);
            prop_assert!(c >= last);
            last = c;
        }
        prop_assert!((last - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nucleus_is_the_minimal_prefix(z in logits(20), p in 0.01..1.0f64) {
        let d = CategoricalDist::from_logits(z);
        let (ids, probs) = nucleus(&d, p).unwrap();
        let mass: f64 = ids.iter().map(|&t| d.prob(t)).sum();
        prop_assert!(mass >= p - 1e-12);
        let without_last = mass - d.prob(*ids.last().unwrap());
        prop_assert!(without_last < p);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let min_in = ids.iter().map(|&t| d.prob(t)).fold(f64::INFINITY, f64::min);
        for t in 0..d.vocab_size() as u32 {
            if !ids.contains(&t) {
                prop_assert!(d.prob(t) <= min_in);
            }
        }
    }

    #[test]
    fn top_p_samples_stay_in_nucleus(z in logits(12), p in 0.05..1.0f64, seed in any::<u64>()) {
        let d = CategoricalDist::from_logits(z);
        let (ids, _) = nucleus(&d, p).unwrap();
        let mut r = rng::seeded(seed);
        for _ in 0..50 {
            prop_assert!(ids.contains(&top_p_sample(&d, p, &mut r).unwrap()));
        }
    }

    #[test]
    fn mask_is_a_vocabulary_subset(ids in prop::collection::vec(0u32..20, 0..10), vocab in 1usize..20) {
        match MaskSet::new(ids.clone(), vocab) {
            Ok(m) => {
                prop_assert!(m.ids().iter().all(|t| (*t as usize) < vocab));
                prop_assert!(m.ids().windows(2).all(|w| w[0] < w[1]));
            }
            Err(_) => prop_assert!(ids.iter().any(|t| *t as usize >= vocab)),
        }
    }

    #[test]
    fn support_set_rejects_out_of_range(ids in prop::collection::vec(0u32..10, 1..5)) {
        let ok = SupportSet::new(ids.clone(), SupportSource::TeacherTopk, 6).is_ok();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(ok, ids.iter().all(|t| *t < 6) && sorted.len() == ids.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sequence_kl_is_nonnegative(vocab in 2usize..4, horizon in 1usize..4, seed in any::<u64>(), identical in any::<bool>()) {
        let mut inst = EnumerationInstance::random(vocab, 1, horizon, 1.5, seed).unwrap();
        if identical {
            inst = EnumerationInstance::new(inst.student.clone(), inst.student.clone(), horizon).unwrap();
        }
        let kl = exact_sequence_kl(&inst).unwrap();
        prop_assert!(kl >= -1e-15);
        if identical {
            prop_assert!(kl.abs() < 1e-15);
        } else {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn estimator_reductions_and_rewards(seed in any::<u64>(), len in 1usize..10) {
        let inst = EnumerationInstance::random(4, 1, len, 1.0, seed).unwrap();
        let tokens = sample_tokens(&inst.student, &[], len, &mut rng::seeded(seed));
        let traj = score_tabular(&inst.student, &inst.teacher, &[], &tokens).unwrap();
        for (i, s) in traj.steps().iter().enumerate() {
            prop_assert_eq!(s.position, i + 1);
            prop_assert!((s.reward - (s.student_logprob - s.teacher_logprob)).abs() < 1e-12);
        }
        prop_assert_eq!(gamma_estimator(&traj, 0.0).unwrap(), token_estimator(&traj).unwrap());
        prop_assert_eq!(gamma_estimator(&traj, 1.0).unwrap(), sequence_estimator(&traj, true).unwrap());
        prop_assert_eq!(Estimator::gamma(1.0).unwrap().estimate(&traj).unwrap(), sequence_estimator(&traj, true).unwrap());
    }

    #[test]
    fn gamma_outside_unit_interval_rejected(g in prop_oneof![-10.0..-1e-9f64, (1.0 + 1e-9)..10.0f64]) {
        prop_assert!(Estimator::gamma(g).is_err());
    }

    #[test]
    fn adversarial_norms_respect_bounds(rb in 0.1..5.0f64, sb in 0.1..5.0f64, h in 1usize..64, dim in 1usize..6) {
        let c = BoundConstants::new(rb, sb).unwrap();
        let traj = adversarial_trajectory(c, h, dim).unwrap();
        let tol = 1e-9 * (1.0 + c.sequence_norm_bound(h));
        prop_assert!(token_estimator(&traj).unwrap().norm() <= c.token_norm_bound(h) + tol);
        prop_assert!(sequence_estimator(&traj, false).unwrap().norm() <= c.sequence_norm_bound(h) + tol);
        for s in traj.steps() {
            prop_assert!(s.reward.abs() <= rb + 1e-12 && s.score_grad.norm() <= sb + 1e-12);
        }
    }

    #[test]
    fn variance_is_nonnegative(grads in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 2..9)) {
        let layout = Layout::new([("out.weight", vec![3])]);
        let pv: Vec<ParamVector> = grads.into_iter().map(|g| ParamVector::from_values(layout.clone(), g).unwrap()).collect();
        prop_assert!(gradient_variance(&pv, 64, "out.weight").unwrap().variance >= 0.0);
    }

    #[test]
    fn frame_csv_round_trips(rows in prop::collection::vec((any::<i64>(), any::<f64>()), 0..20)) {
        let mut f = MetricFrame::new(&[("i", true), ("x", false)]).unwrap();
        for (i, x) in &rows {
            f.push(&[Cell::Int(*i), Cell::Float(*x)]).unwrap();
        }
        let bytes = f.to_csv_bytes().unwrap();
        prop_assert!(!bytes.contains(&b'\r'));
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let back: Vec<(i64, f64)> = rdr.records().map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        }).collect();
        prop_assert_eq!(back.len(), rows.len());
        for ((a, x), (b, y)) in rows.iter().zip(&back) {
            prop_assert_eq!(a, b);
            prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
        }
    }

    #[test]
    fn sampled_rollouts_stop_at_eos(seed in any::<u64>()) {
        let m = TabularLm::random(4, 1, 1.0, seed).unwrap().with_eos(Some(3)).unwrap();
        let toks = sample_tokens(&m, &[], 12, &mut rng::seeded(seed));
        if let Some(i) = toks.iter().position(|&t| t == 3) {
            prop_assert_eq!(i + 1, toks.len());
        } else {
            prop_assert_eq!(toks.len(), 12);
        }
        prop_assert_eq!(m.eos(), Some(3));
    }
}
