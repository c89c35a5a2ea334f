//! The external ranker client against scripted stand-in processes.

use std::path::PathBuf;
use std::time::Duration;

use convrisk::corpus::{Candidate, CandidateId};
use convrisk::ranker::{BridgePool, BridgeRanker, Ranker, RankerError};

/// Writes a shell script that answers the handshake and then behaves
/// according to `mode`.
fn fake_bridge(dir: &tempfile::TempDir, mode: &str) -> Vec<String> {
    let script = r#"
mode="$1"
while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed 's/.*"id":\([0-9]*\).*/\1/')
  case "$line" in
    *'"op":"hello"'*) printf '{"id":%s,"name":"fake","embed_dim":3}\n' "$id"; continue ;;
  esac
  case "$mode" in
    good)
      case "$line" in
        *'"op":"score"'*) printf '{"id":%s,"scores":[0.1,0.9,0.5]}\n' "$id" ;;
        *'"op":"embed"'*) printf '{"id":%s,"vectors":[[1,0,0],[0,1,0]]}\n' "$id" ;;
      esac ;;
    wrong_id) printf '{"id":%s,"scores":[0.1,0.9,0.5]}\n' "$((id + 100))" ;;
    arity) printf '{"id":%s,"scores":[0.1,0.9]}\n' "$id" ;;
    error) printf '{"id":%s,"error":"model not loaded"}\n' "$id" ;;
    garbage) printf 'this is not json\n' ;;
    die) exit 0 ;;
    slow) sleep 5; printf '{"id":%s,"scores":[0.1,0.9,0.5]}\n' "$id" ;;
  esac
done
"#;
    let path: PathBuf = dir.path().join("bridge.sh");
    std::fs::write(&path, script).unwrap();
    vec!["sh".into(), path.to_string_lossy().into_owned(), mode.into()]
}

fn candidates() -> Vec<Candidate> {
    ["alpha", "beta", "gamma"]
        .iter()
        .enumerate()
        .map(|(i, t)| Candidate {
            id: CandidateId(10 + i as u64),
            text: (*t).into(),
            is_positive: i == 1,
            turn_index: None,
        })
        .collect()
}

const T: Duration = Duration::from_secs(5);

#[test]
fn handshake_score_and_embed() {
    let dir = tempfile::tempdir().unwrap();
    let b = BridgeRanker::spawn(&fake_bridge(&dir, "good"), T).unwrap();
    assert_eq!(b.name(), "fake");
    assert_eq!(b.embed_dim(), Some(3));
    let s = b.score("ctx", &candidates()).unwrap();
    assert_eq!(s.top().0, CandidateId(11));
    assert_eq!(s.rank_of(CandidateId(12)), Some(2));
    // a second request uses the next id
    assert_eq!(b.score_texts("ctx", &["a", "b", "c"]).unwrap(), vec![0.1, 0.9, 0.5]);
    assert_eq!(b.embed(&["x", "y"]).unwrap()[1], vec![0.0, 1.0, 0.0]);
}

#[test]
fn mismatched_id_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let b = BridgeRanker::spawn(&fake_bridge(&dir, "wrong_id"), T).unwrap();
    assert!(matches!(b.score("c", &candidates()), Err(RankerError::Protocol(_))));
}

#[test]
fn arity_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let b = BridgeRanker::spawn(&fake_bridge(&dir, "arity"), T).unwrap();
    let err = b.score("c", &candidates()).unwrap_err();
    assert!(matches!(err, RankerError::Protocol(ref m) if m.contains("expected 3")), "{err}");
}

#[test]
fn error_response_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let b = BridgeRanker::spawn(&fake_bridge(&dir, "error"), T).unwrap();
    let err = b.score("c", &candidates()).unwrap_err();
    assert!(matches!(err, RankerError::Protocol(ref m) if m.contains("model not loaded")));
}

#[test]
fn malformed_line_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let b = BridgeRanker::spawn(&fake_bridge(&dir, "garbage"), T).unwrap();
    assert!(matches!(b.score("c", &candidates()), Err(RankerError::Protocol(_))));
}

#[test]
fn dead_bridge_is_reported_and_sticky() {
    let dir = tempfile::tempdir().unwrap();
    let b = BridgeRanker::spawn(&fake_bridge(&dir, "die"), T).unwrap();
    assert!(matches!(b.score("c", &candidates()), Err(RankerError::BridgeDown(_))));
    assert!(matches!(b.score("c", &candidates()), Err(RankerError::BridgeDown(_))));
}

#[test]
fn slow_bridge_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let b = BridgeRanker::spawn(&fake_bridge(&dir, "slow"), Duration::from_millis(300)).unwrap();
    assert!(matches!(b.score("c", &candidates()), Err(RankerError::Timeout(_))));
    assert!(matches!(b.score("c", &candidates()), Err(RankerError::BridgeDown(_))));
}

#[test]
fn missing_program_fails_to_spawn() {
    let err = BridgeRanker::spawn(&["/nonexistent/ranker-binary".into()], T).unwrap_err();
    assert!(matches!(err, RankerError::BridgeDown(_)));
    assert!(BridgeRanker::spawn(&[], T).is_err());
}

#[test]
fn pool_round_robins() {
    let dir = tempfile::tempdir().unwrap();
    let pool = BridgePool::spawn(&fake_bridge(&dir, "good"), 3, T).unwrap();
    assert_eq!(pool.len(), 3);
    for _ in 0..6 {
        assert_eq!(pool.score("c", &candidates()).unwrap().top().0, CandidateId(11));
    }
}
