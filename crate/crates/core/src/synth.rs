//! Seeded synthetic datasets for simulation runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Dataset, EntityRecord, MatchTask};

const BRANDS: &[&str] = &["acme", "globex", "initech", "umbrella", "stark", "wayne", "wonka", "tyrell"];
const ITEMS: &[&str] = &["camera", "laptop", "router", "speaker", "monitor", "printer", "tablet", "drive"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub tasks: usize,
    pub with_gold: usize,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tasks: 400,
            with_gold: 300,
            candidates: 10,
            seed: 7,
        }
    }
}

fn product(rng: &mut ChaCha8Rng) -> (String, String) {
    let title = format!(
        "{} {} {}{}",
        BRANDS.choose(rng).unwrap(),
        ITEMS.choose(rng).unwrap(),
        (b'a' + rng.gen_range(0..26)) as char,
        rng.gen_range(100..1000)
    );
    let price = format!("{:.2}", rng.gen_range(5.0..900.0));
    (title, price)
}

/// Builds `tasks` tasks of `candidates` candidates each; `with_gold` of them
/// (chosen at random) hide a true match at a uniformly random position.
pub fn synthetic_dataset(config: &SynthConfig) -> Result<Dataset> {
    if config.with_gold > config.tasks {
        return Err(Error::config("with_gold", "exceeds the number of tasks"));
    }
    if config.candidates == 0 {
        return Err(Error::EmptyCandidates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut has_gold = vec![false; config.tasks];
    has_gold[..config.with_gold].fill(true);
    has_gold.shuffle(&mut rng);

    let mut tasks = Vec::with_capacity(config.tasks);
    for (t, &gold_present) in has_gold.iter().enumerate() {
        let task_id = format!("s{t:04}");
        let (title, price) = product(&mut rng);
        let anchor = EntityRecord::from_pairs(&format!("{task_id}:a"), "left", &[("title", &title), ("price", &price)])?;
        let gold = gold_present.then(|| rng.gen_range(1..=config.candidates));
        let candidates = (1..=config.candidates)
            .map(|i| {
                let (t2, p2) = if gold == Some(i) {
                    (title.to_uppercase(), price.clone())
                } else {
                    product(&mut rng)
                };
                EntityRecord::from_pairs(&format!("{task_id}:{i}"), "right", &[("title", &t2), ("price", &p2)])
            })
            .collect::<Result<Vec<_>>>()?;
        tasks.push(MatchTask::new(task_id, anchor, candidates, gold)?);
    }
    Dataset::new("synthetic", tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions_and_determinism() {
        let d = synthetic_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(d.len(), 400);
        assert_eq!(d.tasks().iter().filter(|t| t.gold().is_some()).count(), 300);
        assert!(d.tasks().iter().all(|t| t.n() == 10));
        let again = synthetic_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(d, again);
        let positions: std::collections::BTreeSet<_> = d.tasks().iter().filter_map(|t| t.gold()).collect();
        assert_eq!(positions.len(), 10);
    }
}
