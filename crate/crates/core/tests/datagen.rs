//! Generator contracts: determinism, targeting, coverage, validity, noise
//! and the annotation round trip.

use officeflow::catalog;
use officeflow::datagen::annotation::{export_annotation, import_annotation, spans_consistent, validate};
use officeflow::datagen::*;
use officeflow::transitions;
use officeflow::types::Scenario;

fn cfg(flow: &str, count: usize, seed: u64, noise: f64) -> DatagenConfig {
    DatagenConfig { flow: flow.parse().unwrap(), count, seed, noise }
}

#[test]
fn deterministic_and_order_free() {
    let a = generate(&cfg("email", 10, 1, 0.0)).unwrap();
    assert_eq!(a, generate(&cfg("email", 10, 1, 0.0)).unwrap());
    assert!(a.iter().all(|s| s.scenario == Some(Scenario::Email)));
    let c = cfg("full", 40, 9, 0.3);
    let all = generate(&c).unwrap();
    assert_eq!(generate_one(&c, 37).unwrap(), all[37]);
    assert_ne!(generate(&cfg("full", 40, 10, 0.3)).unwrap(), all);
}

#[test]
fn empty_and_bad_requests() {
    assert!(generate(&cfg("full", 0, 1, 0.0)).unwrap().is_empty());
    assert!("transition:send_email->find_todo".parse::<Flow>().is_err());
    assert!("everything".parse::<Flow>().is_err());
    assert!(generate(&cfg("full", 1, 1, 1.5)).is_err());
}

#[test]
fn targeted_rule_in_every_path() {
    let samples = generate(&cfg("transition:create_schedule->update_schedule", 30, 2, 0.0)).unwrap();
    for s in &samples {
        assert!(s.transition_path.windows(2).any(|w| w == ["create_schedule", "update_schedule"]), "{}", s.id);
    }
}

#[test]
fn full_transition_run_covers_quota() {
    let samples = generate(&cfg("transitions", 2511, 1, 0.0)).unwrap();
    let cov = coverage(&samples);
    for rule in transitions::ledger() {
        let key = format!("{}->{}", rule.prev_api, rule.cur_api);
        let want = rule.combinations.min(500) as usize;
        assert_eq!(cov.get(&key).copied().unwrap_or(0), want, "{key}");
    }
}

#[test]
fn gold_is_valid_and_follows_paths() {
    let samples = generate(&cfg("full", 300, 5, 0.0)).unwrap();
    for s in &samples {
        let apis: Vec<&str> = s.turns.iter().flat_map(|t| t.gold_calls.iter().map(|c| c.api_name.as_str())).collect();
        assert_eq!(apis, s.transition_path.iter().map(String::as_str).collect::<Vec<_>>(), "{}", s.id);
        for t in &s.turns {
            for c in &t.gold_calls {
                assert!(catalog::validate(c).unwrap().is_ok(), "{}: {c:?}", s.id);
            }
            assert_eq!(t.gold_calls.len(), t.sim_results.len());
            if let Some(p) = &t.gold_plan {
                p.check().unwrap();
            }
        }
        if s.kind == SampleKind::Transition {
            assert!(transitions::validate_chain(&apis).unwrap().all_listed(), "{}", s.id);
        }
    }
}

#[test]
fn noise_changes_text_only() {
    let clean = generate(&cfg("full", 100, 4, 0.0)).unwrap();
    let noisy = generate(&cfg("full", 100, 4, 0.5)).unwrap();
    let mut changed = 0;
    for (a, b) in clean.iter().zip(&noisy) {
        for (x, y) in a.turns.iter().zip(&b.turns) {
            assert_eq!((&x.gold_rewritten, &x.gold_plan, &x.gold_calls), (&y.gold_rewritten, &y.gold_plan, &y.gold_calls));
            changed += usize::from(x.user_text != y.user_text);
        }
        assert_eq!(b.noise.is_empty(), a.turns.iter().zip(&b.turns).all(|(x, y)| x.user_text == y.user_text));
    }
    assert!(changed > 10);
}

#[test]
fn full_noise_makes_reschedules_deictic() {
    let samples = generate(&cfg("transition:create_schedule->update_schedule", 3937, 1, 1.0)).unwrap();
    let moved: Vec<&DialogueSample> = samples.iter().filter(|s| s.noise.iter().any(|n| n == "turn2:pronoun")).collect();
    assert!(!moved.is_empty());
    for s in moved {
        assert!(s.turns[1].user_text.starts_with("Move it to "), "{:?}", s.turns[1].user_text);
    }
}

#[test]
fn jsonl_and_annotation_round_trip() {
    let samples = generate(&cfg("full", 100, 1, 0.0)).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&samples, &mut buf).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), samples);

    let doc = export_annotation(&samples).unwrap();
    let json: serde_json::Value = serde_json::from_str(&doc).unwrap();
    validate(&json).unwrap();
    assert!(json.as_array().unwrap().iter().all(spans_consistent));
    let back = import_annotation(&doc).unwrap();
    let mut again = Vec::new();
    write_jsonl(&back, &mut again).unwrap();
    assert_eq!(again, buf);

    let err = read_jsonl("{}\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
}
