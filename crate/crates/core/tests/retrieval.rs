use std::collections::BTreeSet;

use proptest::prelude::*;

use flowgen_core::ir::parse_ir;
use flowgen_core::retrieval::{
    activities_recall, levenshtein, load_catalog, normalized_distance, retrieve_activities,
    retrieve_demos, ActivityEntry, Catalog, CatalogError, Demonstration, LexicalBackend,
    RetrieverConfig, RetrieverKind, SimilarityBackend,
};

/// Textbook full-matrix edit distance, kept apart from the library's rolling row.
fn matrix_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn catalog(entries: &[(&str, &str)]) -> Catalog {
    Catalog::new(
        entries
            .iter()
            .map(|(id, d)| ActivityEntry {
                id: id.to_string(),
                description: d.to_string(),
            })
            .collect(),
    )
    .unwrap()
}

fn sample_catalog() -> Catalog {
    catalog(&[
        ("Jira_Issue__2_0_0__retrievewithwhere_Issue", "Retrieve all Jira issues"),
        ("Jira_Issue__2_0_0__create_Issue", "Create a new Jira issue"),
        ("GitHub_Issue__3_0_0__create_Issue", "Create a new GitHub issue"),
        ("GitHub_Repository__3_0_0__retrievewithwhere_Repository", "Retrieve all GitHub repositories"),
        ("Slack_Message__1_0_0__create_Message", "Post a message to a Slack channel"),
        ("Box_File__2_0_0__delete_File", "Delete a Box file"),
    ])
}

fn demo(utterance: &str, prior: Option<&str>, expected: &str) -> Demonstration {
    Demonstration {
        uid: None,
        utterance: utterance.into(),
        prior_sequence: prior.map(|p| parse_ir(p).unwrap()),
        expected: parse_ir(expected).unwrap(),
        tags: BTreeSet::new(),
    }
}

#[test]
fn catalog_listing_loads() {
    let c = load_catalog(
        r#"[{"id": "Jira_Issue__2_0_0__retrievewithwhere_Issue", "description": "Retrieve all Jira issues"}]"#,
    )
    .unwrap();
    assert_eq!(c.len(), 1);
    let e = &c.entries()[0];
    assert_eq!(e.id, "Jira_Issue__2_0_0__retrievewithwhere_Issue");
    assert_eq!(e.description, "Retrieve all Jira issues");
    assert!(load_catalog("[]").unwrap().is_empty());
}

#[test]
fn catalog_rejects_bad_input() {
    let dup = r#"[{"id": "A", "description": "x"}, {"id": "A", "description": "y"}]"#;
    assert_eq!(load_catalog(dup).unwrap_err(), CatalogError::DuplicateId { id: "A".into() });
    let missing = r#"[{"id": "A"}]"#;
    assert_eq!(
        load_catalog(missing).unwrap_err(),
        CatalogError::MissingField {
            index: 0,
            field: "description"
        }
    );
    assert!(matches!(load_catalog("{}"), Err(CatalogError::NotAnArray)));
    assert!(matches!(load_catalog("[1"), Err(CatalogError::Json(_))));
    assert!(matches!(
        load_catalog(r#"[{"id": "not an id", "description": "x"}]"#),
        Err(CatalogError::BadId { .. })
    ));
}

#[test]
fn kitten_sitting() {
    assert_eq!(levenshtein("kitten", "sitting"), 3);
    assert_eq!(matrix_distance("kitten", "sitting"), 3);
    assert!((normalized_distance("Kitten", "SITTING") - 3.0 / 7.0).abs() < 1e-12);
}

#[test]
fn exact_description_ranks_first() {
    let c = sample_catalog();
    for kind in [RetrieverKind::EditDistance, RetrieverKind::SimilarityBackend] {
        for e in c.entries() {
            let got = retrieve_activities(&e.description.to_uppercase(), None, &c, &RetrieverConfig::new(kind, 3));
            assert_eq!(got[0], *e, "{kind:?}");
            assert_eq!(got.len(), 3);
        }
    }
}

#[test]
fn ties_keep_catalog_order() {
    let c = catalog(&[("B", "abc"), ("A", "abd"), ("C", "abe")]);
    let got = retrieve_activities("abz", None, &c, &RetrieverConfig::new(RetrieverKind::EditDistance, 3));
    let ids: Vec<&str> = got.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["B", "A", "C"]);
}

#[test]
fn prior_activities_are_forced_to_the_head() {
    let c = sample_catalog();
    let prior = parse_ir(
        "files = Box_File__2_0_0__delete_File()\nissue = GitHub_Issue__3_0_0__create_Issue()\nagain = Box_File__2_0_0__delete_File()\nx = Unknown_Thing()",
    )
    .unwrap();
    let config = RetrieverConfig::new(RetrieverKind::EditDistance, 3);
    let got = retrieve_activities("Retrieve all Jira issues", Some(&prior), &c, &config);
    let ids: Vec<&str> = got.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "Box_File__2_0_0__delete_File",
            "GitHub_Issue__3_0_0__create_Issue",
            "Jira_Issue__2_0_0__retrievewithwhere_Issue"
        ]
    );
}

#[test]
fn demos_are_shortlisted_by_prior_presence() {
    let pool = vec![
        demo("post a message", None, "m = Slack_Message__1_0_0__create_Message()"),
        demo("also post a message", Some("a = A()"), "a = A()\nm = Slack_Message__1_0_0__create_Message()"),
    ];
    let prior = parse_ir("a = A()").unwrap();
    let config = RetrieverConfig::new(RetrieverKind::SimilarityBackend, 5);
    let with = retrieve_demos("post a message", Some(&prior), &pool, &config);
    assert_eq!(with.len(), 1);
    assert!(with[0].prior_sequence.is_some());
    let without = retrieve_demos("post a message", None, &pool, &config);
    assert_eq!(without.len(), 1);
    assert!(without[0].prior_sequence.is_none());
}

#[test]
fn demo_ranking_and_pool_size() {
    let pool = vec![
        demo("delete the old files", None, "f = Box_File__2_0_0__delete_File()"),
        demo("create an issue for every repository", None, "r = R()"),
        demo("post a message", None, "m = M()"),
    ];
    for kind in [RetrieverKind::EditDistance, RetrieverKind::SimilarityBackend] {
        let got = retrieve_demos("post a message", None, &pool, &RetrieverConfig::new(kind, 10));
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].utterance, "post a message");
    }
}

#[test]
fn recall_examples() {
    let gold: BTreeSet<String> = ["A", "B"].into_iter().map(String::from).collect();
    assert_eq!(activities_recall(&["A", "B", "C"], &gold), 1.0);
    assert_eq!(activities_recall(&["A", "C"], &gold), 0.5);
    assert_eq!(activities_recall::<&str>(&[], &BTreeSet::new()), 1.0);
}

fn word() -> impl Strategy<Value = String> {
    "[a-e ]{0,12}"
}

proptest! {
    #[test]
    fn levenshtein_matches_the_matrix(a in word(), b in word()) {
        prop_assert_eq!(levenshtein(&a, &b), matrix_distance(&a, &b));
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
    }

    #[test]
    fn lexical_scores_are_bounded(a in word(), b in word()) {
        let mut backend = LexicalBackend::new();
        backend.index(&[a.as_str(), b.as_str()]);
        let s = backend.score(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    /// A larger top_k never loses a gold activity, and rankings repeat.
    #[test]
    fn recall_is_monotone_in_top_k(
        descriptions in proptest::collection::vec(word(), 1..12),
        utterance in word(),
        gold_idx in proptest::collection::btree_set(0usize..12, 0..4),
        a in 1usize..12,
        b in 1usize..12,
        lexical in any::<bool>(),
    ) {
        let entries: Vec<(String, String)> = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("Act_{i}"), d.clone()))
            .collect();
        let c = Catalog::new(entries.iter().map(|(id, d)| ActivityEntry { id: id.clone(), description: d.clone() }).collect()).unwrap();
        let gold: BTreeSet<String> = gold_idx.iter().filter(|&&i| i < c.len()).map(|i| format!("Act_{i}")).collect();
        let kind = if lexical { RetrieverKind::SimilarityBackend } else { RetrieverKind::EditDistance };
        let (lo, hi) = (a.min(b), a.max(b));
        let ids = |k: usize| -> Vec<String> {
            retrieve_activities(&utterance, None, &c, &RetrieverConfig::new(kind, k)).into_iter().map(|e| e.id).collect()
        };
        let (small, large) = (ids(lo), ids(hi));
        prop_assert!(activities_recall(&small, &gold) <= activities_recall(&large, &gold));
        prop_assert_eq!(&large[..small.len()], &small[..]);
        prop_assert_eq!(ids(hi), large);
    }

    /// Prior-present and prior-absent queries see disjoint pools covering everything.
    #[test]
    fn shortlists_partition_the_pool(with_prior in proptest::collection::vec(any::<bool>(), 0..10)) {
        let pool: Vec<Demonstration> = with_prior
            .iter()
            .enumerate()
            .map(|(i, &p)| Demonstration { uid: Some(i as u64), ..demo("do it", p.then_some("a = A()"), "b = B()") })
            .collect();
        let config = RetrieverConfig::new(RetrieverKind::EditDistance, 100);
        let prior = parse_ir("a = A()").unwrap();
        let a: BTreeSet<u64> = retrieve_demos("do it", Some(&prior), &pool, &config).iter().filter_map(|d| d.uid).collect();
        let b: BTreeSet<u64> = retrieve_demos("do it", None, &pool, &config).iter().filter_map(|d| d.uid).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), pool.len());
    }
}
