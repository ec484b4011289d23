mod common;

use std::collections::BTreeSet;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackscope::correlate::interval::{Interval, IntervalTree};
use stackscope::correlate::{self, CorrelateError, Diagnostic};
use stackscope::span::validate_bundle;
use stackscope::{LevelSet, SpanKind, TraceBundle};

#[test]
fn nested_bundles_match_containment_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..30 {
        let max = if i % 10 == 0 { 10_000 } else { rng.gen_range(1..3_000) };
        let b = nested_bundle(&mut rng, max);
        assert!(b.spans.len() <= max.max(1));
        assert!(validate_bundle(&b).is_empty(), "{:?}", validate_bundle(&b));
        let c = correlate::correlate(&b).unwrap();
        assert!(c.ambiguity.is_empty());
        assert_eq!(c.tree.parent_map(), containment_oracle(&b), "bundle {i}");
    }
}

#[test]
fn interval_queries_match_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ivs: Vec<Interval<usize>> = (0..10_000)
        .map(|i| {
            let b = rng.gen_range(0..1_000_000u64);
            Interval { begin: b, end: b + rng.gen_range(0..50_000), value: i }
        })
        .collect();
    let tree = IntervalTree::new(ivs.clone());
    for _ in 0..1_000 {
        let b = rng.gen_range(0..1_000_000u64);
        let e = b + rng.gen_range(0..5_000);
        let got: BTreeSet<usize> = tree.containing(b, e).iter().map(|iv| iv.value).collect();
        let want: BTreeSet<usize> =
            ivs.iter().filter(|iv| iv.begin <= b && e <= iv.end).map(|iv| iv.value).collect();
        assert_eq!(got, want);
        let t = rng.gen_range(0..1_000_000u64);
        let got: BTreeSet<usize> = tree.stab(t).iter().map(|iv| iv.value).collect();
        let want: BTreeSet<usize> = ivs.iter().filter(|iv| iv.begin <= t && t <= iv.end).map(|iv| iv.value).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn five_thousand_pairs_form_a_bijection() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = pair_bundle(&mut rng, 5_000);
    let c = correlate::correlate(&b).unwrap();
    assert!(c.diagnostics.is_empty());
    let kernels: Vec<_> = c.tree.kernels().collect();
    assert_eq!(kernels.len(), 5_000);
    let mut execs = BTreeSet::new();
    for k in &kernels {
        assert_eq!(k.launch.correlation_id, k.exec.correlation_id);
        assert!(execs.insert(k.exec.span_id));
    }
    assert_eq!(execs.len(), 5_000);
}

#[test]
fn orphans_and_duplicates_are_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let b = pair_bundle(&mut rng, 200);
    let exec_cid = |b: &TraceBundle| b.spans.iter().find(|s| s.kind == SpanKind::Exec).unwrap().correlation_id.unwrap();

    let mut no_exec = b.clone();
    let cid = exec_cid(&b);
    no_exec.spans.retain(|s| !(s.kind == SpanKind::Exec && s.correlation_id == Some(cid)));
    let c = correlate::correlate(&no_exec).unwrap();
    assert_eq!(c.tree.kernels().count(), 199);
    assert!(matches!(c.diagnostics[..], [Diagnostic::UnmatchedLaunch { correlation_id, .. }] if correlation_id == cid));

    let mut no_launch = b.clone();
    no_launch.spans.retain(|s| !(s.kind == SpanKind::Launch && s.correlation_id == Some(cid)));
    let c = correlate::correlate(&no_launch).unwrap();
    assert!(matches!(c.diagnostics[..], [Diagnostic::UnmatchedExec { correlation_id, .. }] if correlation_id == cid));

    let mut dup = b.clone();
    let mut extra = dup.spans.iter().find(|s| s.kind == SpanKind::Exec).unwrap().clone();
    extra.span_id = 1_000_000;
    dup.spans.push(extra);
    assert!(matches!(
        correlate::correlate(&dup),
        Err(CorrelateError::DuplicateCorrelationId { correlation_id, kind: "exec", count: 2 }) if correlation_id == cid
    ));
}

#[test]
fn overlap_fixture_is_ambiguous_until_resolved() {
    use stackscope::sim::{emit_run, fixtures, EmitConfig};
    let m = fixtures::builtin("overlap").unwrap();
    let mut cfg = EmitConfig::new(1, LevelSet::full());
    let b = emit_run(&m, &cfg).unwrap();
    let c = correlate::correlate(&b).unwrap();
    assert!(!c.ambiguity.is_empty());
    assert!(correlate::demand_serialized_rerun(&c.ambiguity));
    cfg.serialized = true;
    let twin = emit_run(&m, &cfg).unwrap();
    assert!(correlate::correlate(&twin).unwrap().ambiguity.is_empty());
    let r = correlate::resolve_with_serialized(&b, &twin).unwrap();
    assert!(r.ambiguity.is_empty());
    assert_eq!(r.tree.kernels().count(), m.kernel_count());
    for (layer, want) in r.tree.layers().iter().zip(&m.layers) {
        let names: Vec<&str> = layer.kernels.iter().map(|k| k.name()).collect();
        let want: Vec<&str> = want.kernels.iter().map(|k| k.name.as_str()).collect();
        assert_eq!(names, want);
    }
}
