//! Synthetic corpora with known structure, for demos, benchmarks and tests.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EntityRef, EntityType, Publication};

fn topic(id: &str, label: &str) -> EntityRef {
    EntityRef::new(EntityType::Topic, id, label).expect("valid synthetic topic")
}

fn publication(pub_id: String, title: String, topics: Vec<EntityRef>, citations: &[(i32, u64)]) -> Publication {
    Publication {
        pub_id,
        title,
        abstract_text: None,
        year: 2022,
        entities: BTreeMap::from([(EntityType::Topic, topics)]),
        citations_by_year: citations.iter().copied().collect(),
        author_count: 3,
    }
}

/// `(id, label)` of one topic.
pub type TopicRef = (&'static str, &'static str);

/// Topic pairs and document counts that a "carbon sequestration" query over
/// [`listing_corpus`] returns, strongest first.
pub const LISTING: [(TopicRef, TopicRef, u64); 8] = [
    (("Q15305550", "carbon sequestration"), ("Q7942", "climate change"), 17),
    (("Q15305550", "carbon sequestration"), ("Q623", "carbon"), 14),
    (("Q15305550", "Carbon sequestration"), ("Q7942", "Climate change"), 13),
    (("Q15305550", "Carbon sequestration"), ("Q898653", "Climate change mitigation"), 10),
    (("Q397350", "agroforestry"), ("Q8486", "coffee"), 10),
    (("Q15305550", "Carbon sequestration"), ("Q1997", "CO2"), 9),
    (("Q623", "carbon"), ("Q627", "nitrogen"), 9),
    (("Q15305550", "Carbon sequestration"), ("Q623", "carbon"), 7),
];

/// A small corpus whose "carbon sequestration" matches carry exactly the
/// [`LISTING`] pairs at the top, plus weaker pairs and off-query decoys that
/// would outrank them without the query filter.
pub fn listing_corpus() -> Vec<Publication> {
    let mut out = Vec::new();
    for (i, (a, b, n)) in LISTING.iter().enumerate() {
        for j in 0..*n {
            out.push(publication(
                format!("carbon-{i}-{j:02}"),
                format!("Carbon sequestration and {} in managed landscapes", b.1),
                vec![topic(a.0, a.1), topic(b.0, b.1)],
                &[(2023, j % 3), (2024, 1)],
            ));
        }
    }
    for j in 0..4 {
        out.push(publication(
            format!("carbon-soil-{j}"),
            "Carbon sequestration in tropical soils".into(),
            vec![topic("Q15305550", "carbon sequestration"), topic("Q36133", "soil"), topic("Q2336", "soil organic carbon")],
            &[(2020, 5)],
        ));
    }
    for j in 0..30 {
        out.push(publication(
            format!("ocean-{j:02}"),
            "Nitrogen fixation by marine cyanobacteria".into(),
            vec![topic("Q136437", "Trichodesmium"), topic("Q5188371", "Crocosphaera")],
            &[(2024, 2)],
        ));
    }
    out
}

/// A generated corpus with its ground-truth communities.
pub struct PlantedCorpus {
    pub publications: Vec<Publication>,
    /// Node id → planted community (0-based).
    pub truth: BTreeMap<String, usize>,
}

/// Corpus with `communities` planted groups of `topics_per_community` topics.
/// Each publication carries two distinct topics; any specific intra-community
/// pair is `ratio` times as likely as any specific inter-community pair.
pub fn planted_corpus(
    publications: usize,
    communities: usize,
    topics_per_community: usize,
    ratio: f64,
    seed: u64,
) -> PlantedCorpus {
    assert!(communities >= 2 && topics_per_community >= 2 && ratio > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<EntityRef>> = (0..communities)
        .map(|c| (0..topics_per_community).map(|t| topic(&format!("P{c}x{t}"), &format!("field {c} topic {t}"))).collect())
        .collect();
    let truth = groups
        .iter()
        .enumerate()
        .flat_map(|(c, g)| g.iter().map(move |e| (e.serialized(), c)))
        .collect();

    let (k, t) = (communities as f64, topics_per_community as f64);
    let intra_pairs = k * t * (t - 1.0) / 2.0;
    let inter_pairs = k * (k - 1.0) / 2.0 * t * t;
    let p_intra = ratio * intra_pairs / (ratio * intra_pairs + inter_pairs);

    let community_ids: Vec<usize> = (0..communities).collect();
    let mut pubs = Vec::with_capacity(publications);
    for i in 0..publications {
        let pair: Vec<EntityRef> = if rng.random_bool(p_intra) {
            let g = &groups[rng.random_range(0..communities)];
            g.choose_multiple(&mut rng, 2).cloned().collect()
        } else {
            community_ids
                .choose_multiple(&mut rng, 2)
                .map(|&c| groups[c].choose(&mut rng).expect("non-empty").clone())
                .collect()
        };
        let cites = [(2023, rng.random_range(0..4)), (2024, rng.random_range(0..4))];
        pubs.push(publication(format!("planted-{i:05}"), format!("Planted study {i}"), pair, &cites));
    }
    PlantedCorpus { publications: pubs, truth }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::compute_pairs;

    #[test]
    fn listing_counts() {
        let pubs = listing_corpus();
        let sum: u64 = LISTING.iter().map(|l| l.2).sum();
        assert_eq!(pubs.len() as u64, sum + 4 + 30);
    }

    #[test]
    fn planted_shape() {
        let c = planted_corpus(2000, 3, 20, 10.0, 1);
        assert_eq!(c.truth.len(), 60);
        let mut intra = 0;
        for p in &c.publications {
            let pairs = compute_pairs(p, EntityType::Topic);
            assert_eq!(pairs.len(), 1);
            let ts = p.entities_of(EntityType::Topic);
            intra += usize::from(c.truth[&ts[0].serialized()] == c.truth[&ts[1].serialized()]);
        }
        // expected share 5700/6900, about 0.826
        let share = intra as f64 / 2000.0;
        assert!((share - 5700.0 / 6900.0).abs() < 0.03, "{share}");
    }
}
