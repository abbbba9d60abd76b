use std::collections::{BTreeMap, BTreeSet, VecDeque};

use proptest::prelude::*;

use reqgen::ontology::{
    build_injection_knowledge, filter_by_frequency, multi_hop_search, parse_pseudo_sentence,
    triples_to_pseudo_sentences, InjectionPlan, OntologyGraph, Triple,
};

const RELATIONS: [&str; 7] = [
    "subClassOf",
    "hasSuperClasses",
    "subPropertyOf",
    "hasDomain",
    "hasRange",
    "uses",
    "is part of",
];

fn triples_strategy(max_nodes: usize) -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec((0..max_nodes, 0..RELATIONS.len(), 0..max_nodes), 1..40).prop_map(|raw| {
        raw.into_iter()
            .map(|(s, r, o)| Triple::new(format!("e{s}"), RELATIONS[r], format!("e{o}")).unwrap())
            .collect()
    })
}

fn bfs(graph: &OntologyGraph, seeds: &[usize]) -> BTreeMap<String, usize> {
    let mut dist = vec![usize::MAX; graph.entities().len()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        for e in graph.edges(u) {
            if dist[e.neighbor] == usize::MAX {
                dist[e.neighbor] = dist[u] + 1;
                queue.push_back(e.neighbor);
            }
        }
    }
    dist.iter()
        .enumerate()
        .filter(|(_, &d)| d != usize::MAX && d > 0)
        .map(|(i, &d)| (graph.entity_name(i).to_string(), d))
        .collect()
}

fn mentioned(sentences: &[reqgen::ontology::PseudoSentence]) -> BTreeSet<String> {
    sentences
        .iter()
        .flat_map(|s| s.sources.iter())
        .flat_map(|t| [t.subject.clone(), t.object.clone()])
        .collect()
}

proptest! {
    #[test]
    fn hops_are_bfs_distances(triples in triples_strategy(20), h in 1usize..6, pick in 0usize..100) {
        let graph = OntologyGraph::from_triples(triples);
        let seed = graph.entities()[pick % graph.entities().len()].clone();
        let result = multi_hop_search(&graph, std::slice::from_ref(&seed), h).unwrap();
        let expected: BTreeMap<String, usize> = bfs(&graph, &[graph.entity_id(&seed).unwrap()])
            .into_iter()
            .filter(|(_, d)| *d <= h)
            .collect();
        prop_assert_eq!(result.hop_of, expected);
    }

    #[test]
    fn zero_threshold_is_identity(triples in triples_strategy(20), h in 1usize..6) {
        let graph = OntologyGraph::from_triples(triples);
        let seed = graph.entities()[0].clone();
        let result = multi_hop_search(&graph, &[seed], h).unwrap();
        prop_assert_eq!(filter_by_frequency(&result, 0), result);
    }

    #[test]
    fn adjacency_is_symmetric(triples in triples_strategy(15)) {
        let graph = OntologyGraph::from_triples(triples);
        for u in 0..graph.entities().len() {
            for e in graph.edges(u) {
                prop_assert!(graph
                    .edges(e.neighbor)
                    .iter()
                    .any(|b| b.neighbor == u && b.triple == e.triple));
            }
        }
    }

    #[test]
    fn templates_round_trip(triples in triples_strategy(12)) {
        let graph = OntologyGraph::from_triples(triples.clone());
        let unique = graph.triples().to_vec();
        for sentence in triples_to_pseudo_sentences(&unique, &BTreeMap::new()) {
            let parsed = parse_pseudo_sentence(&sentence.text, &graph).expect("parsable");
            let expected: Vec<String> = if sentence.sources.len() == 2 {
                let (d, r) = (&sentence.sources[0], &sentence.sources[1]);
                vec![d.object.clone(), d.subject.clone(), r.object.clone()]
            } else {
                let t = &sentence.sources[0];
                vec![t.subject.clone(), t.object.clone()]
            };
            prop_assert_eq!(parsed, expected, "{}", sentence.text);
        }
    }

    #[test]
    fn deeper_layers_refine_shallower(
        triples in triples_strategy(20),
        threshold in 0u64..4,
        pick in 0usize..100,
    ) {
        let graph = OntologyGraph::from_triples(triples);
        let seed = graph.entities()[pick % graph.entities().len()].clone();
        // A cap that never binds, so truncation cannot reorder the subsets.
        let plan = InjectionPlan::from_layer_hops(&[(1, 5), (2, 3), (3, 2), (4, 1)], threshold, usize::MAX);
        let layers = build_injection_knowledge(&graph, &[seed], &plan).unwrap();
        let sets: Vec<BTreeSet<String>> = plan.layers().iter().map(|l| mentioned(&layers[l])).collect();
        for pair in sets.windows(2) {
            prop_assert!(pair[1].is_subset(&pair[0]));
        }
    }
}

#[test]
fn unmatched_keywords_give_empty_knowledge() {
    let graph = OntologyGraph::from_triples([Triple::new("a", "subClassOf", "b").unwrap()]);
    let layers = build_injection_knowledge(&graph, &["zzz"], &InjectionPlan::default()).unwrap();
    assert!(layers.values().all(Vec::is_empty));
    assert_eq!(layers.keys().copied().collect::<Vec<_>>(), vec![1, 2, 4]);
}
