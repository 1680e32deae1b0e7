//! Recall of the hashing embedder over description-derived and generated queries.

use officeflow::catalog;
use officeflow::datagen::{generate, DatagenConfig};
use officeflow::eval::runner::{intent_samples, recall_row, recall_sets};
use officeflow::retrieval::{self, build_pairs_v1, build_pairs_v2, description_queries, HashingEmbedder, ToolIndex};

#[test]
fn description_queries_recall() {
    let index = ToolIndex::reference();
    let e = HashingEmbedder::default();
    let pairs = description_queries();
    assert_eq!(pairs.iter().map(|p| &p.positives[0]).collect::<std::collections::BTreeSet<_>>().len(), 21);
    let at: Vec<f64> = (1..=21).map(|k| retrieval::eval_recall(&index, &e, &pairs, k).unwrap()).collect();
    assert!(at[4] >= 0.95, "top-5 recall {}", at[4]);
    assert!(at.windows(2).all(|w| w[0] <= w[1]), "{at:?}");
    assert_eq!(at[20], 1.0);
}

#[test]
fn rankings_extend_as_prefixes() {
    let index = ToolIndex::reference();
    let e = HashingEmbedder::default();
    for p in description_queries().iter().step_by(4) {
        let long = index.recall(&e, &p.query, 10).unwrap();
        for k in 1..10 {
            assert_eq!(index.recall(&e, &p.query, k).unwrap(), long[..k]);
        }
    }
}

#[test]
fn pair_builders_on_generated_data() {
    let samples = generate(&DatagenConfig { count: 200, ..Default::default() }).unwrap();
    let intents = intent_samples(&samples);
    let (v1, _) = build_pairs_v1(&intents);
    assert_eq!(v1.len(), intents.iter().map(|s| s.clauses.len()).sum::<usize>());
    let v2 = build_pairs_v2(&intents, 7).unwrap();
    let names = catalog::tool_names();
    for p in &v2 {
        assert_eq!(p.negatives.len(), 3);
        assert!(p.negatives.iter().all(|n| !p.positives.contains(n) && names.contains(&n.as_str())));
    }
    assert_eq!(v2, build_pairs_v2(&intents, 7).unwrap());

    let (single, multi) = recall_sets(&samples, 7).unwrap();
    assert!(!single.is_empty() && !multi.is_empty());
    assert!(single.iter().all(|p| p.positives.len() == 1));
    let row = recall_row("hashing", &ToolIndex::reference(), &HashingEmbedder::default(), &single, &multi).unwrap();
    assert!(row.single_top3 <= row.single_top5 && row.multi_top3 <= row.multi_top5);
}
