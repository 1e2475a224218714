//! Fixtures shared by the integration and acceptance suites.

#![allow(dead_code)]

use reflect_core::corpus::{CommentEditPair, Label};
use reflect_core::retrieval::Neighbor;
use std::path::PathBuf;

/// The pair used by every prompt golden.
pub fn golden_pair() -> CommentEditPair {
    CommentEditPair::new(
        "golden1",
        "you additionally need axis=1 in pd.concat",
        "df = pd.concat([a, b])",
        "df = pd.concat([a, b], axis=1)",
    )
}

pub fn golden_neighbors() -> Vec<Neighbor> {
    let specs = [
        (
            "n1",
            "use isEmpty() instead of comparing with an empty string",
            "if (!s.equals(\"\"))",
            "if (!s.isEmpty())",
            Label::Valid,
            0.91,
        ),
        (
            "n2",
            "Thanks, works fine!",
            "return cache.get(key);",
            "return cache.get(key);",
            Label::Invalid,
            0.72,
        ),
        (
            "n3",
            "compiler.parse is deprecated, use ast.parse",
            "tree = compiler.parse(src)",
            "tree = ast.parse(src)",
            Label::Valid,
            0.65,
        ),
    ];
    specs
        .into_iter()
        .map(|(id, comment, before, after, label, similarity)| Neighbor {
            pair_id: id.to_string(),
            similarity,
            payload: CommentEditPair::new(id, comment, before, after).with_label(label),
        })
        .collect()
}

pub fn golden_exemplars() -> Vec<CommentEditPair> {
    vec![
        CommentEditPair::new(
            "e1",
            "add a null check before calling length()",
            "int n = s.length();",
            "if (s != null) { int n = s.length(); }",
        )
        .with_label(Label::Valid),
        CommentEditPair::new("e2", "Great answer, thanks!", "x = 1", "x = 1").with_label(Label::Invalid),
    ]
}

/// Absolute path to the shipped 40-pair toy corpus at the workspace root.
pub fn toy_corpus_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/toy_corpus.jsonl")
        .canonicalize()
        .expect("toy corpus exists")
}

/// Minimal TOML config pointing at `corpus`, writing into `out_dir`.
pub fn write_config(
    dir: &std::path::Path,
    corpus: &std::path::Path,
    out_dir: &std::path::Path,
    extra: &str,
) -> PathBuf {
    let body = format!
        (
        "seed = 7\noutput_dir = \"{}\"\n\n[corpus]\npath = \"{}\"\n\n[corpus.split]\nmode = \"field\"\n{}",
        out_dir.display(),
        corpus.display(),
        extra
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, body).expect("config written");
    path
}
