//! Embeddings checked against values produced by an independent
//! implementation of the hashing and weighting rules.

use convrisk::encoding::{Embedder, IdfTable};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    text: String,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct Golden {
    documents: Vec<String>,
    dim: usize,
    cases: Vec<Case>,
}

#[test]
fn embeddings_match_golden_fixture() {
    let golden: Golden =
        serde_json::from_str(include_str!("fixtures/golden_embeddings.json")).unwrap();
    let idf = IdfTable::from_documents(golden.documents.iter().map(String::as_str)).unwrap();
    let e = Embedder::new(idf, golden.dim).unwrap();
    for case in &golden.cases {
        let got = e.embed(&case.text);
        assert_eq!(got.len(), golden.dim);
        for (g, w) in got.iter().zip(&case.embedding) {
            assert!((g - w).abs() < 1e-12, "{:?}: {got:?} vs {:?}", case.text, case.embedding);
        }
    }
}
