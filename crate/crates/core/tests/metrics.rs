//! Text and accuracy metrics against brute-force oracles and properties.

mod common;

use officeflow::eval::*;
use officeflow::types::{Plan, SubTask, ToolCall, Value};
use proptest::prelude::*;

use common::{oracle_bleu, oracle_rouge_l, PAIRS};

#[test]
fn frozen_pairs_match_oracles() {
    for (r, h) in PAIRS {
        assert!((rouge_l(r, h) - oracle_rouge_l(r, h)).abs() < 1e-9, "rouge {r:?} / {h:?}");
        assert!((bleu(r, h) - oracle_bleu(r, h)).abs() < 1e-9, "bleu {r:?} / {h:?}");
    }
}

#[test]
fn hand_computed_values() {
    assert!((rouge_l("the cat sat", "the cat ran") - 2.0 / 3.0).abs() < 1e-12);
    // 7/8 unigrams, 5/7 bigrams, 3/6 trigrams and 1/5 four-grams match.
    let hand = (8.0 / 9.0 * 6.0 / 8.0 * 4.0 / 7.0 * 2.0 / 6.0f64).powf(0.25);
    assert!((bleu("a b c d e f g h", "a b c d x f g h") - hand).abs() < 1e-12);
    let short = bleu("a b c", "a b");
    assert!(short.is_finite() && short > 0.0);
}

fn plan(apis: &[&str]) -> Plan {
    Plan { sub_tasks: apis.iter().enumerate().map(|(i, a)| SubTask::new(i + 1, format!("use {a}"), *a)).collect() }
}

#[test]
fn plan_metrics_by_hand() {
    let gold = [plan(&["a", "b"]), plan(&["c"]), plan(&["d", "e", "f"])];
    let pred = [plan(&["a", "b"]), plan(&["x"]), plan(&["d", "e"])];
    // Counts match for samples 1 and 2; apis match at 4 of 2 + 1 + 3 positions.
    assert!((sub_tasks_num_acc(&pred, &gold).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((api_acc(&pred, &gold).unwrap() - 4.0 / 6.0).abs() < 1e-12);
}

fn arb_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["the", "cat", "sat", "on", "mat", ",", "2", "PM", "x"]), 0..10)
        .prop_map(|v| v.join(" "))
}

fn arb_call() -> impl Strategy<Value = ToolCall> {
    (prop::sample::select(vec!["a", "b"]), 0i64..3, prop::collection::vec(prop::sample::select(vec!["p", "q", "r"]), 1..3))
        .prop_map(|(api, n, ids)| ToolCall::new(api).arg("n", Value::Int(n)).arg("ids", Value::list(ids)))
}

fn arb_plan() -> impl Strategy<Value = Plan> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 0..4).prop_map(|v| plan(&v))
}

proptest! {
    #[test]
    fn text_metrics_bounded_and_reflexive(r in arb_text(), h in arb_text()) {
        for s in [rouge_l(&r, &h), bleu(&r, &h)] {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        if !r.trim().is_empty() {
            prop_assert!((rouge_l(&r, &r) - 1.0).abs() < 1e-12);
            prop_assert!((bleu(&r, &r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_metrics_bounded_reflexive_and_order_free(
        pairs in prop::collection::vec((arb_plan(), arb_plan()), 0..8),
        seed in any::<u64>(),
    ) {
        let (pred, gold): (Vec<Plan>, Vec<Plan>) = pairs.iter().cloned().unzip();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by_key(|i| (*i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let (sp, sg): (Vec<Plan>, Vec<Plan>) = order.iter().map(|&i| pairs[i].clone()).unzip();
        for f in [sub_tasks_num_acc, api_acc, planner_rouge] {
            let v = f(&pred, &gold).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - f(&sp, &sg).unwrap()).abs() < 1e-12);
            prop_assert_eq!(f(&gold, &gold).unwrap(), 1.0);
        }
    }

    #[test]
    fn strict_is_dominated(
        pairs in prop::collection::vec((prop::collection::vec(arb_call(), 0..3), prop::collection::vec(arb_call(), 0..3)), 0..8),
    ) {
        let (pred, gold): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let s = strict_accuracy(&pred, &gold).unwrap();
        let a = call_api_acc(&pred, &gold).unwrap();
        prop_assert!((0.0..=1.0).contains(&s) && s <= a);
        prop_assert_eq!(strict_accuracy(&gold, &gold).unwrap(), 1.0);
    }

    #[test]
    fn relate_acc_counts(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 0..20)) {
        let (p, g): (Vec<bool>, Vec<bool>) = flags.iter().copied().unzip();
        let expect = if flags.is_empty() { 1.0 } else { flags.iter().filter(|(a, b)| a == b).count() as f64 / flags.len() as f64 };
        prop_assert_eq!(relate_acc(&p, &g).unwrap(), expect);
    }
}
