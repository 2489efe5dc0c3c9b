use std::collections::BTreeSet;

use lakeorg::approx::{transition_error, transition_error_bound};
use lakeorg::benchgen::Zipf;
use lakeorg::embedding::{cosine, topic_vector, EmbeddingStore, TopicVector};
use lakeorg::enrich::{train_classifiers, transfer_tags, TrainConfig};
use lakeorg::fixtures::{random_lake, random_organization, rng, RandomOrgSpec};
use lakeorg::kmedoids::{kmedoids, DistMatrix};
use lakeorg::navmodel::{
    any_prob, brute_force_reach, evaluate, reach_probs, reevaluate, transition_probs, QuerySet, QueryTopic,
    SimilarityIndex,
};
use lakeorg::optimizer::{affected_subgraph, op_add_parent, op_delete_parent, organize_with, state_to_modify, SearchConfig};
use std::sync::Arc;

use lakeorg::organization::{initial_org, Organization, StateKind, Universe, UniverseAttribute};
use lakeorg::vector::dot;
use proptest::prelude::*;
use rand::RngExt;

fn org_spec() -> impl Strategy<Value = RandomOrgSpec> {
    (1usize..6, 0usize..10, 2usize..4, 0usize..4, 0.1f64..2.0, 0.5f64..20.0).prop_map(
        |(tags, extra_attrs, branching, extra_edges, noise, gamma)| RandomOrgSpec {
            n_tags: tags,
            n_attributes: tags + extra_attrs,
            n_tables: 3,
            dim: 5,
            max_tags_per_attribute: 2,
            max_branching: branching,
            extra_edges,
            noise,
            gamma,
        },
    )
}

fn random_query(seed: u64, dim: usize) -> QueryTopic {
    let v = lakeorg::fixtures::gaussian_vector(&mut rng(seed), dim);
    QueryTopic::from_vector(&v).unwrap()
}

fn non_leaves(org: &Organization) -> Vec<lakeorg::organization::StateId> {
    org.states().filter(|s| !s.children.is_empty()).map(|s| s.id).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transitions_sum_to_one(spec in org_spec(), seed in any::<u64>()) {
        let org = random_organization(&mut rng(seed), &spec);
        let q = random_query(seed ^ 1, spec.dim);
        for s in non_leaves(&org) {
            let p = transition_probs(&org, s, &q);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn propagated_reach_equals_path_enumeration(spec in org_spec(), seed in any::<u64>()) {
        let org = random_organization(&mut rng(seed), &spec);
        let q = random_query(seed ^ 2, spec.dim);
        let reach = reach_probs(&org, &q).unwrap();
        for s in org.ids() {
            let brute = brute_force_reach(&org, s, &q).unwrap();
            prop_assert!((reach[s.index()] - brute).abs() < 1e-9, "{} vs {}", reach[s.index()], brute);
        }
    }

    #[test]
    fn random_organizations_are_valid(spec in org_spec(), seed in any::<u64>()) {
        let org = random_organization(&mut rng(seed), &spec);
        prop_assert!(org.validate().is_empty(), "{:?}", org.validate());
        let levels = org.levels().unwrap();
        prop_assert_eq!(levels.of(org.root()), 0);
        for s in org.states() {
            for &c in &s.children {
                prop_assert!(levels.of(c) <= levels.of(s.id) + 1);
            }
            if !s.children.is_empty() {
                let union: BTreeSet<u32> = s.children.iter().flat_map(|c| org.state(*c).attributes.iter().copied()).collect();
                prop_assert_eq!(&union, &s.attributes);
            }
        }
    }

    #[test]
    fn probabilities_stay_in_unit_interval_and_success_dominates(spec in org_spec(), seed in any::<u64>(), theta in 0.0f64..1.0) {
        let org = random_organization(&mut rng(seed), &spec);
        let eval = evaluate(&org, &QuerySet::exact(&org)).unwrap();
        let success = SimilarityIndex::new(&org, theta).success(&eval.attr_discovery);
        for (d, s) in eval.attr_discovery.iter().zip(&success) {
            let (d, s) = (d.unwrap(), s.unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!(s >= d);
        }
        prop_assert!((0.0..=1.0).contains(&eval.effectiveness));
        for t in eval.table_discovery.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(t));
        }
    }

    #[test]
    fn operations_keep_organizations_valid_and_pruning_exact(spec in org_spec(), seed in any::<u64>()) {
        let org = random_organization(&mut rng(seed), &spec);
        let qs = QuerySet::exact(&org);
        let base = evaluate(&org, &qs).unwrap();
        let levels = org.levels().unwrap();
        let reach = lakeorg::navmodel::state_reachability(&org, &qs, false).unwrap();
        for s in state_to_modify(&org, &levels, &reach) {
            for next in [op_add_parent(&org, &levels, &reach, s), op_delete_parent(&org, &reach, s)].into_iter().flatten() {
                prop_assert!(next.validate().is_empty(), "{:?}", next.validate());
                let affected = affected_subgraph(&org, &next);
                let (fast, _) = reevaluate(&next, &qs, &base, &affected.attributes).unwrap();
                let full = evaluate(&next, &QuerySet::exact(&next)).unwrap();
                prop_assert!((fast.effectiveness - full.effectiveness).abs() < 1e-9);
                for (x, y) in fast.attr_discovery.iter().zip(&full.attr_discovery) {
                    prop_assert!((x.unwrap() - y.unwrap()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn vanishing_gamma_gives_uniform_transitions(spec in org_spec(), seed in any::<u64>()) {
        let mut org = random_organization(&mut rng(seed), &spec);
        org.set_gamma(1e-9);
        let q = random_query(seed ^ 3, spec.dim);
        for s in non_leaves(&org) {
            let p = transition_probs(&org, s, &q);
            let u = 1.0 / p.len() as f64;
            prop_assert!(p.iter().all(|x| (x - u).abs() < 1e-6));
        }
    }

    #[test]
    fn organization_file_round_trips(spec in org_spec(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let lake = random_lake(&mut r, &spec);
        let org = initial_org(&lake, spec.gamma).unwrap();
        let back = Organization::from_file(&org.to_file(), &lake).unwrap();
        prop_assert_eq!(&back, &org);
        let json = serde_json::to_string(&org.to_file()).unwrap();
        let file = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(Organization::from_file(&file, &lake).unwrap(), org);
    }

    #[test]
    fn best_seen_never_decreases(spec in org_spec(), seed in any::<u64>()) {
        let org = random_organization(&mut rng(seed), &spec);
        let cfg = SearchConfig { use_representatives: false, max_iterations: 30, plateau_window: 10, rng_seed: seed, ..SearchConfig::default() };
        let (best, trace) = organize_with(&org, &cfg, &QuerySet::exact(&org), 0).unwrap();
        let mut last = trace.initial_effectiveness;
        for r in &trace.iterations {
            prop_assert!(r.best_effectiveness >= last);
            last = r.best_effectiveness;
        }
        prop_assert!(best.validate().is_empty());
    }

    #[test]
    fn union_of_probabilities(ps in proptest::collection::vec(0.0f64..=1.0, 0..8)) {
        let u = any_prob(ps.iter().copied());
        prop_assert!((0.0..=1.0).contains(&u));
        let max = ps.iter().copied().fold(0.0, f64::max);
        prop_assert!(u >= max - 1e-15);
        let complement: f64 = ps.iter().map(|p| 1.0 - p).product();
        prop_assert!((u - (1.0 - complement)).abs() < 1e-12);
    }

    #[test]
    fn one_sided_bound_has_expected_sign_at_identity(spec in org_spec(), seed in any::<u64>()) {
        let org = random_organization(&mut rng(seed), &spec);
        let q = random_query(seed ^ 4, spec.dim);
        for m in non_leaves(&org) {
            for &s in org.children(m) {
                prop_assert!(transition_error(&org, m, s, &q, &q).unwrap().abs() < 1e-12);
                prop_assert!(transition_error_bound(&org, m, s, &q, &q).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn zipf_probabilities_normalize(a in 1usize..20, len in 0usize..60, exponent in 0.01f64..3.0) {
        let z = Zipf::new(a, a + len, exponent).unwrap();
        let p = z.probabilities();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn medoid_assignment_is_nearest(n in 2usize..25, k in 1usize..6, seed in any::<u64>()) {
        let k = k.min(n);
        let mut r = rng(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let d = DistMatrix::from_fn(n, |i, j| ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt());
        let c = kmedoids(&d, k, seed, 100).unwrap();
        prop_assert_eq!(c.medoids.len(), k);
        for i in 0..n {
            let assigned = d.get(i, c.medoids[c.assignment[i]]);
            for &m in &c.medoids {
                prop_assert!(assigned <= d.get(i, m) + 1e-12);
            }
        }
        let loss: f64 = (0..n).map(|i| d.get(i, c.medoids[c.assignment[i]])).sum();
        prop_assert!((loss - c.loss).abs() < 1e-9);
    }

    #[test]
    fn topic_vectors_ignore_value_order(perm_seed in any::<u64>()) {
        let mut store = EmbeddingStore::new(3);
        for (t, v) in [("red", [1.0, 0.0, 0.0]), ("blue", [0.0, 1.0, 0.0]), ("green", [0.3, 0.3, 0.9])] {
            store.insert(t, &v).unwrap();
        }
        let mut values = ["red blue", "green", "Blue", "unknown red"];
        let before = topic_vector(values.iter().copied(), &store);
        let mut r = rng(perm_seed);
        for i in (1..values.len()).rev() {
            values.swap(i, r.random_range(0..=i));
        }
        let after = topic_vector(values.iter().copied(), &store);
        prop_assert_eq!(before.support, after.support);
        for (x, y) in before.mean.iter().zip(&after.mean) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((cosine(&before, &after).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn adding_a_parent_that_keeps_its_topic_raises_reach() {
    // root -> {p1, p2}; p1 -> {A, X}; p2 -> {Y, Z}. Y and Z share A's topic,
    // so linking p2 -> A leaves p2's topic and the root's softmax untouched.
    let t = |v: [f64; 3]| TopicVector { mean: v.to_vec(), support: 1 };
    let attr = |id: &str, tag: &str, v: [f64; 3]| UniverseAttribute {
        id: id.into(),
        table: "t".into(),
        topic: t(v),
        tags: vec![tag.into()],
    };
    let a = [0.6, 0.8, 0.0];
    let universe = Arc::new(Universe::new(
        3,
        vec![attr("a", "A", a), attr("x", "X", [1.0, 0.0, 0.0]), attr("y", "Y", a), attr("z", "Z", a)],
    ));
    let mut org = Organization::empty(universe, 10.0);
    let leaves: Vec<_> = (0..4).map(|i| org.add_leaf(i)).collect();
    let tags: Vec<_> = (0..4).map(|i| org.add_tag_state(i, &[leaves[i as usize]])).collect();
    let p1 = org.add_union_state(StateKind::Interior, &[tags[0], tags[1]]);
    let p2 = org.add_union_state(StateKind::Interior, &[tags[2], tags[3]]);
    let root = org.add_union_state(StateKind::Root, &[p1, p2]);
    org.set_root(root);
    assert!(org.validate().is_empty());
    let mut linked = org.clone();
    linked.add_edge(p2, tags[0]);
    let st = linked.state(tags[0]).clone();
    linked.grow_ancestors(p2, &st.attributes, &st.tags);
    assert!(linked.validate().is_empty(), "{:?}", linked.validate());
    for seed in 0..50 {
        let q = random_query(seed, 3);
        let before = reach_probs(&org, &q).unwrap();
        let after = reach_probs(&linked, &q).unwrap();
        assert!((before[p1.index()] - after[p1.index()]).abs() < 1e-12);
        assert!(after[tags[0].index()] >= before[tags[0].index()]);
    }
}

#[test]
fn knn_matches_sorted_scan_on_a_thousand_tokens() {
    let mut r = rng(77);
    let dim = 16;
    let mut store = EmbeddingStore::new(dim);
    for i in 0..1000 {
        let v = lakeorg::fixtures::gaussian_vector(&mut r, dim);
        store.insert(&format!("w{i:04}"), &v).unwrap();
    }
    for trial in 0..20 {
        let q = lakeorg::fixtures::gaussian_vector(&mut r, dim);
        let k = 1 + trial * 7;
        let qn = lakeorg::vector::norm(&q);
        let mut all: Vec<(f64, &str)> = store
            .tokens()
            .iter()
            .map(|t| (dot(store.get(t).unwrap(), &q) / qn, t.as_str()))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let expected: Vec<&str> = all.iter().take(k).map(|x| x.1).collect();
        let got = lakeorg::embedding::knn(&store, &q, k).unwrap();
        assert_eq!(got, expected);
    }
    for t in store.tokens().iter().take(200) {
        assert_eq!(lakeorg::embedding::knn(&store, store.get(t).unwrap(), 1).unwrap(), vec![t.clone()]);
    }
}

#[test]
fn transfer_is_idempotent_and_keeps_lake_consistent() {
    let spec = RandomOrgSpec { n_tags: 3, n_attributes: 90, n_tables: 10, noise: 0.3, ..RandomOrgSpec::default() };
    let lake = random_lake(&mut rng(21), &spec);
    let cfg = TrainConfig { epochs: 100, ..TrainConfig::default() };
    let classifiers = train_classifiers(&lake, &cfg).unwrap();
    assert!(!classifiers.is_empty());
    let target = lake.without_tags();
    let (once, report) = transfer_tags(&classifiers, &target).unwrap();
    assert!(report.attributes_labeled > 0);
    let (twice, again) = transfer_tags(&classifiers, &once).unwrap();
    assert_eq!(twice, once);
    assert_eq!(again.attributes_labeled, 0);
    let associations: usize = once.attributes().iter().map(|a| a.tags.len()).sum();
    let indexed: usize = once.tags().map(|t| once.tag_members(t).len()).sum();
    assert_eq!(associations, indexed);
    // memorization: a training attribute keeps its tag
    let first = &lake.attributes()[0];
    let pos = once.attribute_index(&first.id).unwrap();
    assert!(!once.attribute(pos).tags.is_disjoint(&first.tags));
    assert_eq!(train_classifiers(&lake, &cfg).unwrap(), classifiers);
}
