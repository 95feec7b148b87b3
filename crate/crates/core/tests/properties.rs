use std::collections::BTreeMap;
use std::sync::Arc;

use em_core::backend::{BackendRequest, BackendResponse, CostLedger, FnBackend, Label};
use em_core::comem::{run_comem, FilterStrategy, PipelineConfig};
use em_core::eval::{validate_consistency, PredictionRow};
use em_core::records::{load_tasks, retrieve_fewshot, serialize_record, token_jaccard, DatasetSource, FewShotExample};
use em_core::strategies::Strategies;
use em_core::{Backend, Dataset, EntityRecord, MatchTask, OracleBackend, OracleConfig, ProbabilityMode};
use proptest::prelude::*;

fn attr_name() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

fn attr_value() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.;:]{0,12}"
}

fn record(id: String) -> impl Strategy<Value = EntityRecord> {
    prop::collection::btree_map(attr_name(), attr_value(), 1..4).prop_map(move |m| {
        let pairs: Vec<(String, String)> = m.into_iter().collect();
        EntityRecord::from_pairs(&id, "src", &pairs).unwrap()
    })
}

fn task_strategy(max_n: usize) -> impl Strategy<Value = MatchTask> {
    (1..=max_n).prop_flat_map(|n| {
        (
            record("anchor".into()),
            (1..=n).map(|i| record(format!("c{i}"))).collect::<Vec<_>>(),
            prop::option::of(1..=n),
        )
            .prop_map(|(anchor, candidates, gold)| MatchTask::new("t", anchor, candidates, gold).unwrap())
    })
}

/// Answers purely from record content, ignoring presentation order.
fn content_backend(gold_title: String) -> impl Backend {
    FnBackend::new("content", move |req: &BackendRequest| {
        let text = &req.prompt.text;
        let reply = match req.prompt.strategy {
            em_core::Strategy::Matching => {
                let right = text.rsplit("Record 2: ").next().unwrap_or_default();
                if right.contains(&gold_title) { "Yes".to_string() } else { "No".to_string() }
            }
            em_core::Strategy::Comparing => {
                let b = text.rsplit("Record B: ").next().unwrap_or_default();
                if b.contains(&gold_title) { "Record B".into() } else { "Record A".into() }
            }
            em_core::Strategy::Selecting => {
                let list = text.split("Candidate records:").nth(1).unwrap_or_default();
                let pos = list.lines().skip(1).position(|l| l.contains(&gold_title));
                format!("[{}]", pos.map_or(0, |p| p + 1))
            }
        };
        Ok(BackendResponse { text: reply, label_probs: None, usage: None })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialized_records_are_injective(
        a in prop::collection::vec((attr_name(), attr_value()), 1..4),
        b in prop::collection::vec((attr_name(), attr_value()), 1..4),
    ) {
        let dedup = |v: Vec<(String, String)>| {
            let mut seen = std::collections::BTreeSet::new();
            v.into_iter().filter(|(k, _)| seen.insert(k.clone())).collect::<Vec<_>>()
        };
        let (a, b) = (dedup(a), dedup(b));
        let ra = EntityRecord::from_pairs("x", "s", &a).unwrap();
        let rb = EntityRecord::from_pairs("y", "s", &b).unwrap();
        if a != b {
            prop_assert_ne!(serialize_record(&ra), serialize_record(&rb));
        } else {
            prop_assert_eq!(serialize_record(&ra), serialize_record(&rb));
        }
    }

    #[test]
    fn fewshot_retrieval_matches_exhaustive_sort(
        t in task_strategy(3),
        pool_spec in prop::collection::vec(("[a-c ]{0,8}", any::<bool>()), 0..12),
        pos in 0usize..4,
        neg in 0usize..4,
    ) {
        let pool: Vec<FewShotExample> = pool_spec
            .iter()
            .enumerate()
            .map(|(i, (title, label))| FewShotExample {
                record_left: EntityRecord::from_pairs(&format!("l{i}"), "s", &[("title", title.as_str())]).unwrap(),
                record_right: EntityRecord::from_pairs(&format!("r{i}"), "s", &[("title", title.as_str())]).unwrap(),
                label: *label,
            })
            .collect();
        let got = retrieve_fewshot(&pool, &t, pos, neg);
        let available = |l: bool| pool.iter().filter(|e| e.label == l).count();
        if available(true) < pos || available(false) < neg {
            prop_assert!(got.is_err());
        } else {
            let anchor = serialize_record(&t.anchor);
            // reference: score every example, sort by (-sim, pool index)
            let pick = |label: bool, want: usize| {
                let mut scored: Vec<(usize, f64)> = pool
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.label == label)
                    .map(|(i, e)| (i, token_jaccard(&anchor, &serialize_record(&e.record_left))))
                    .collect();
                scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
                scored.into_iter().take(want).map(|(i, _)| pool[i].clone()).collect::<Vec<_>>()
            };
            let mut want = pick(true, pos);
            want.extend(pick(false, neg));
            prop_assert_eq!(got.unwrap(), want);
        }
    }

    #[test]
    fn task_jsonl_round_trips(tasks in prop::collection::vec(task_strategy(4), 1..5)) {
        let tasks: Vec<MatchTask> = tasks
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let id = format!("task{i}");
                // the file format implies the source: anchors D1, candidates D2
                let rename = |r: &EntityRecord, rid: String, source: &str| {
                    EntityRecord::new(rid, source, r.attributes().to_vec()).unwrap()
                };
                let anchor = rename(&t.anchor, format!("{id}:anchor"), "D1");
                let cands = t
                    .candidates()
                    .iter()
                    .enumerate()
                    .map(|(j, c)| rename(c, format!("{id}:{}", j + 1), "D2"))
                    .collect();
                MatchTask::new(id, anchor, cands, t.gold()).unwrap()
            })
            .collect();
        let d = Dataset::new("rt", tasks).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        d.save_jsonl(file.path()).unwrap();
        let back = load_tasks(&DatasetSource::TaskJsonl(file.path().to_path_buf())).unwrap();
        prop_assert_eq!(back.tasks(), d.tasks());
    }

    #[test]
    fn comem_prediction_follows_the_record(
        n in 1usize..8,
        gold in prop::option::of(0usize..8),
        perm_seed in any::<u64>(),
        k in 1usize..6,
        bubble in any::<bool>(),
    ) {
        let gold = gold.map(|g| g % n + 1);
        let t = MatchTask::new(
            "t",
            EntityRecord::from_pairs("a", "s", &[("title", "anchor")]).unwrap(),
            (1..=n).map(|i| EntityRecord::from_pairs(&format!("c{i}"), "s", &[("title", format!("item{i}x"))]).unwrap()).collect(),
            gold,
        ).unwrap();
        let gold_title = gold.map_or("no such title".to_string(), |g| format!("item{g}x"));
        let b: Arc<dyn Backend> = Arc::new(content_backend(gold_title));
        let mut cfg = PipelineConfig::new(b.clone(), b);
        cfg.top_k = k;
        if bubble {
            cfg.filter_strategy = FilterStrategy::ComparingBubble;
        }
        let mut order: Vec<usize> = (1..=n).collect();
        let mut s = perm_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = t.permuted(&order).unwrap();
        let id = |task: &MatchTask, r: Option<usize>| r.map(|i| task.candidate(i).id.clone());
        let r1 = run_comem(&t, &cfg).unwrap();
        let r2 = run_comem(&p, &cfg).unwrap();
        prop_assert_eq!(id(&t, r1.prediction), id(&p, r2.prediction));
        prop_assert_eq!(id(&t, r1.prediction), gold.map(|g| format!("c{g}")));
        let kept = r1.ranking.unwrap();
        prop_assert_eq!(kept.len(), k.min(n));
        prop_assert!(kept.iter().all(|&i| (1..=n).contains(&i)));
    }

    #[test]
    fn comem_ledger_is_sum_of_stages(
        n in 1usize..10,
        gold in prop::option::of(0usize..10),
        seed in any::<u64>(),
        flip in 0.0f64..0.5,
        k in 1usize..6,
        calibrated in any::<bool>(),
        bubble in any::<bool>(),
    ) {
        let gold = gold.map(|g| g % n + 1);
        let t = MatchTask::new(
            "t",
            EntityRecord::from_pairs("a", "s", &[("title", "anchor")]).unwrap(),
            (1..=n).map(|i| EntityRecord::from_pairs(&format!("c{i}"), "s", &[("title", format!("c{i}"))]).unwrap()).collect(),
            gold,
        ).unwrap();
        let mut o = OracleBackend::new(OracleConfig {
            seed,
            flip_rate: flip,
            position_bias: None,
            probability_mode: if calibrated { ProbabilityMode::Calibrated } else { ProbabilityMode::None },
        }).unwrap();
        o.register("t", t.gold_record().map(|r| r.id.clone()));
        let o: Arc<dyn Backend> = Arc::new(o);
        let mut cfg = PipelineConfig::new(o.clone(), o);
        cfg.top_k = k;
        if bubble {
            cfg.filter_strategy = FilterStrategy::ComparingBubble;
        }
        let r = run_comem(&t, &cfg).unwrap();
        prop_assert_eq!(r.stages.len(), 2);
        let summed: CostLedger = r.stages.iter().map(|s| s.ledger).sum();
        prop_assert_eq!(summed, r.ledger);
        let kept = r.ranking.as_ref().unwrap();
        prop_assert_eq!(r.stages[1].ledger.input_records as usize, kept.len() + 1);
        // single-direction output is one-to-one by construction
        let rows = vec![PredictionRow::from_task(&t, r.prediction)];
        prop_assert!(validate_consistency(&rows).is_clean());
    }

    #[test]
    fn matching_prediction_ignores_candidate_order(
        answers in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..9),
        calibrated in any::<bool>(),
        perm_seed in any::<u64>(),
    ) {
        let n = answers.len();
        let t = MatchTask::new(
            "t",
            EntityRecord::from_pairs("a", "s", &[("title", "anchor")]).unwrap(),
            (1..=n).map(|i| EntityRecord::from_pairs(&format!("c{i}"), "s", &[("title", format!("c{i}"))]).unwrap()).collect(),
            None,
        ).unwrap();
        let script: BTreeMap<String, (bool, f64)> =
            (1..=n).map(|i| (format!("c{i}"), answers[i - 1])).collect();
        let b = FnBackend::new("by-id", move |req: &BackendRequest| {
            let (yes, p) = script[&req.prompt.candidate_ids[0]];
            let (chosen, other) = if yes { (Label::Yes, Label::No) } else { (Label::No, Label::Yes) };
            Ok(BackendResponse {
                text: if yes { "Yes" } else { "No" }.into(),
                label_probs: calibrated.then(|| BTreeMap::from([(chosen, p), (other, 1.0 - p)])),
                usage: None,
            })
        });
        let mut order: Vec<usize> = (1..=n).collect();
        let mut s = perm_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = t.permuted(&order).unwrap();
        let strategies = Strategies::default();
        let r1 = strategies.match_pairwise(&t, &b, &[]).unwrap();
        let r2 = strategies.match_pairwise(&p, &b, &[]).unwrap();
        let score_of = |task: &MatchTask, r: &em_core::StrategyResult| {
            r.scores.as_ref().unwrap().iter().map(|s| (task.candidate(s.index).id.clone(), s.score)).collect::<BTreeMap<_, _>>()
        };
        prop_assert_eq!(score_of(&t, &r1), score_of(&p, &r2));
        // the prediction is the same record unless equal top scores are
        // broken by position
        let s1 = score_of(&t, &r1);
        let yes_scores: Vec<f64> = (1..=n).filter(|&i| answers[i - 1].0).map(|i| s1[&format!("c{i}")]).collect();
        let best = yes_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unique = yes_scores.iter().filter(|&&x| x == best).count() <= 1;
        if unique {
            prop_assert_eq!(
                r1.prediction.map(|i| t.candidate(i).id.clone()),
                r2.prediction.map(|i| p.candidate(i).id.clone())
            );
        }
    }
}

#[test]
fn ledger_addition_is_fieldwise() {
    let a = CostLedger { invocations: 3, input_records: 9, prompt_tokens: 100, completion_tokens: 3, cost: 0.25 };
    let b = CostLedger { invocations: 1, input_records: 5, prompt_tokens: 40, completion_tokens: 1, cost: 0.5 };
    let mut s = a;
    s += &b;
    assert_eq!(s, CostLedger { invocations: 4, input_records: 14, prompt_tokens: 140, completion_tokens: 4, cost: 0.75 });
}
