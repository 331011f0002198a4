//! Properties of evidence retrieval and the five-whys driver on constructed
//! fixture families. The narrowing families are built so every step's cause
//! reuses at least one token from its top cited snippet; under that premise
//! the hop distance of the top cited node must never increase.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

use causeway_core::backend::RuleBackend;
use causeway_core::config::Config;
use causeway_core::funnel::{retrieve_evidence, run_funnel, EvidenceRef, Termination, WhyChain};
use causeway_core::kg::{Edge, EdgeKind, GraphBuilder, KnowledgeGraph, Node, NodeId, NodeKind};
use causeway_core::text::token_set;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    /// Storage incident looping on hop-2 peer incidents until max depth.
    StorageLoop,
    /// Uncategorized incident: service delay at hop 1, then the resolving
    /// change at hop 1.
    ServiceThenChange,
    /// Backup incident resolved in one step by a change at hop 1.
    BackupChange,
    /// Deadlock incident citing hop-2 peers first, then narrowing to the
    /// resolving change at hop 1.
    DeadlockNarrowing,
}

fn node(b: &mut GraphBuilder, id: &str, kind: NodeKind, text: &str) -> NodeId {
    let id = NodeId::new(id).unwrap();
    b.add_node(Node::new(id.clone(), kind).unwrap().with_text(text))
        .unwrap();
    id
}

fn edge(b: &mut GraphBuilder, src: &NodeId, dst: &NodeId, kind: EdgeKind) {
    b.add_edge(Edge::new(src.clone(), dst.clone(), kind)).unwrap();
}

/// `size` is the peer count for the looping families and the count of
/// zero-overlap noise files for the others.
fn build_family(family: Family, size: usize) -> (KnowledgeGraph, NodeId) {
    let mut b = GraphBuilder::new();
    let incident = match family {
        Family::StorageLoop => {
            let inc = node(
                &mut b,
                "inc:T0",
                NodeKind::Incident,
                "storage tier capacity exhausted on shared volume",
            );
            let svc = node(&mut b, "svc:storage-nas", NodeKind::Service, "storage-nas");
            edge(&mut b, &inc, &svc, EdgeKind::Affects);
            for i in 0..size.max(1) {
                let peer = node(
                    &mut b,
                    &format!("inc:T{}", i + 1),
                    NodeKind::Incident,
                    &format!("storage tier capacity exhausted in rack r{i}"),
                );
                edge(&mut b, &peer, &svc, EdgeKind::Affects);
            }
            inc
        }
        Family::ServiceThenChange => {
            let inc = node(
                &mut b,
                "inc:T0",
                NodeKind::Incident,
                "payment service unreachable for several minutes",
            );
            let svc = node(
                &mut b,
                "svc:payment-service",
                NodeKind::Service,
                "payment-service",
            );
            edge(&mut b, &inc, &svc, EdgeKind::Affects);
            let chg = node(
                &mut b,
                "chg:T-CR1",
                NodeKind::ChangeRequest,
                "Add automation for payment service restart after failed deploy",
            );
            edge(&mut b, &inc, &chg, EdgeKind::ResolvedBy);
            for i in 0..size {
                let file = node(
                    &mut b,
                    &format!("file:proj-n/noise{i}.txt"),
                    NodeKind::CodeFile,
                    &format!("proj-n/noise{i}.txt"),
                );
                edge(&mut b, &chg, &file, EdgeKind::Touches);
            }
            inc
        }
        Family::BackupChange => {
            let inc = node(
                &mut b,
                "inc:T0",
                NodeKind::Incident,
                "backup process failures affecting disaster recovery",
            );
            let chg = node(
                &mut b,
                "chg:T-CR1",
                NodeKind::ChangeRequest,
                "verify backup completion automation",
            );
            edge(&mut b, &inc, &chg, EdgeKind::ResolvedBy);
            for i in 0..size {
                let file = node(
                    &mut b,
                    &format!("file:proj-n/noise{i}.txt"),
                    NodeKind::CodeFile,
                    &format!("proj-n/noise{i}.txt"),
                );
                edge(&mut b, &chg, &file, EdgeKind::Touches);
            }
            inc
        }
        Family::DeadlockNarrowing => {
            let inc = node(
                &mut b,
                "inc:T0",
                NodeKind::Incident,
                "deadlock detected across transactions",
            );
            let svc = node(&mut b, "svc:db-core", NodeKind::Service, "db-core");
            edge(&mut b, &inc, &svc, EdgeKind::Affects);
            for i in 0..size.max(1) {
                let peer = node(
                    &mut b,
                    &format!("inc:T{}", i + 1),
                    NodeKind::Incident,
                    &format!("deadlock detected in payments db r{i}"),
                );
                edge(&mut b, &peer, &svc, EdgeKind::Affects);
            }
            // Shares no token with the incident text, so it only enters the
            // evidence once the hypothesis becomes the hop-2 cluster cause.
            let chg = node(
                &mut b,
                "chg:T-CR1",
                NodeKind::ChangeRequest,
                "rework lock acquisition order for retry cluster",
            );
            edge(&mut b, &inc, &chg, EdgeKind::ResolvedBy);
            inc
        }
    };
    (b.seal(), incident)
}

/// Per step: hop of the top cited node plus whether the cause reuses a token
/// from that node's snippet.
fn trace_steps(
    graph: &KnowledgeGraph,
    incident: &NodeId,
    chain: &WhyChain,
    config: &Config,
) -> Vec<(usize, bool)> {
    let mut hypothesis = graph.node(incident).unwrap().text.clone();
    chain
        .steps
        .iter()
        .map(|step| {
            let offered = retrieve_evidence(graph, incident, &hypothesis, &config.funnel).unwrap();
            let top = step.cited.first().expect("narrowing families always cite");
            let evidence = offered
                .iter()
                .find(|e| &e.node == top)
                .expect("cited node must be offered");
            let premise = !token_set(&step.cause).is_disjoint(&token_set(&evidence.snippet));
            hypothesis = step.cause.clone();
            (evidence.hop_distance, premise)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn narrowing_is_monotone_when_causes_reuse_cited_tokens(
        family_tag in 0..4u8,
        size in 0..4usize,
    ) {
        let family = match family_tag {
            0 => Family::StorageLoop,
            1 => Family::ServiceThenChange,
            2 => Family::BackupChange,
            _ => Family::DeadlockNarrowing,
        };
        let (graph, incident) = build_family(family, size);
        let config = Config::default();
        let backend = RuleBackend::with_default_rules(config.funnel.symptom_taxonomy.clone());
        let chain = run_funnel(&graph, &incident, &backend, &config.funnel).unwrap();
        let steps = trace_steps(&graph, &incident, &chain, &config);

        for (i, (_, premise)) in steps.iter().enumerate() {
            prop_assert!(premise, "step {} cause does not reuse a cited token", i + 1);
        }
        for pair in steps.windows(2) {
            prop_assert!(
                pair[1].0 <= pair[0].0,
                "top cited hop increased: {:?}",
                steps
            );
        }

        let hops: Vec<usize> = steps.iter().map(|(hop, _)| *hop).collect();
        match family {
            Family::StorageLoop => {
                prop_assert_eq!(chain.termination, Termination::MaxDepthReached);
                prop_assert_eq!(hops, vec![2; config.funnel.max_depth]);
            }
            Family::ServiceThenChange => {
                prop_assert_eq!(chain.termination, Termination::ActionableCauseFound);
                prop_assert_eq!(hops, vec![1, 1]);
            }
            Family::BackupChange => {
                prop_assert_eq!(chain.termination, Termination::ActionableCauseFound);
                prop_assert_eq!(hops, vec![1]);
            }
            Family::DeadlockNarrowing => {
                // Non-vacuous case: the hop strictly decreases.
                prop_assert_eq!(chain.termination, Termination::ActionableCauseFound);
                prop_assert_eq!(hops, vec![2, 1]);
            }
        }
    }
}

const WORDS: &[&str] = &[
    "deadlock", "lock", "sql", "query", "backup", "restore", "storage", "capacity", "disk",
    "vendor", "upstream", "deploy", "retry", "timeout", "payment", "orders", "cache", "index",
];

fn build_random_graph(seed: u64) -> (KnowledgeGraph, NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let text = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(1..6);
        (0..n)
            .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let incident_count = rng.gen_range(1..5);
    let service_count = rng.gen_range(1..3);
    let services: Vec<NodeId> = (0..service_count)
        .map(|s| node(&mut b, &format!("svc:s{s}"), NodeKind::Service, &format!("service s{s}")))
        .collect();
    let incidents: Vec<NodeId> = (0..incident_count)
        .map(|i| {
            let words = text(&mut rng);
            let id = NodeId::new(format!("inc:P{i}")).unwrap();
            b.add_node(
                Node::new(id.clone(), NodeKind::Incident)
                    .unwrap()
                    .with_text(words)
                    .with_ts(1_000 + i as i64),
            )
            .unwrap();
            id
        })
        .collect();
    for (i, inc) in incidents.iter().enumerate() {
        edge(&mut b, inc, &services[i % services.len()], EdgeKind::Affects);
    }
    for c in 0..rng.gen_range(0..4) {
        let words = text(&mut rng);
        let cid = NodeId::new(format!("chg:c{c}")).unwrap();
        b.add_node(
            Node::new(cid.clone(), NodeKind::ChangeRequest)
                .unwrap()
                .with_text(words)
                .with_ts(2_000 + c as i64),
        )
        .unwrap();
        let inc = incidents[rng.gen_range(0..incidents.len())].clone();
        edge(&mut b, &inc, &cid, EdgeKind::ResolvedBy);
        if rng.gen_bool(0.5) {
            let fid = node(
                &mut b,
                &format!("file:proj-x/f{c}.sql"),
                NodeKind::CodeFile,
                &format!("proj-x/f{c}.sql"),
            );
            edge(&mut b, &cid, &fid, EdgeKind::Touches);
        }
    }
    let target = incidents[0].clone();
    (b.seal(), target)
}

/// Independent copy of the documented evidence ordering.
fn reference_sort(graph: &KnowledgeGraph, refs: &[EvidenceRef]) -> Vec<NodeId> {
    let mut sorted = refs.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.hop_distance.cmp(&b.hop_distance))
            .then_with(|| {
                let ta = graph.node(&a.node).and_then(|n| n.ts);
                let tb = graph.node(&b.node).and_then(|n| n.ts);
                match (ta, tb) {
                    (Some(x), Some(y)) => y.cmp(&x),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => std::cmp::Ordering::Equal,
                }
            })
            .then_with(|| a.node.cmp(&b.node))
    });
    sorted.into_iter().map(|e| e.node).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn evidence_is_positive_overlap_within_hops_capped_and_ordered(
        seed in any::<u64>(),
        hypothesis_words in prop::collection::vec(prop::sample::select(WORDS), 1..6),
    ) {
        let (graph, incident) = build_random_graph(seed);
        let config = Config::default();
        let hypothesis = hypothesis_words.join(" ");
        let refs = retrieve_evidence(&graph, &incident, &hypothesis, &config.funnel).unwrap();

        prop_assert!(refs.len() <= config.funnel.evidence_top_n);
        let query = token_set(&hypothesis);
        let reachable: BTreeSet<NodeId> = graph
            .k_hop(&incident, config.funnel.evidence_hops, None)
            .unwrap()
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        for e in &refs {
            prop_assert!(e.score > 0.0);
            prop_assert!(e.hop_distance >= 1 && e.hop_distance <= config.funnel.evidence_hops);
            prop_assert!(reachable.contains(&e.node));
            let overlap = query
                .intersection(&token_set(&graph.node(&e.node).unwrap().text))
                .count();
            prop_assert_eq!(e.score, overlap as f64, "score must equal token overlap");
            prop_assert!(overlap > 0);
        }

        let got: Vec<NodeId> = refs.iter().map(|e| e.node.clone()).collect();
        prop_assert_eq!(&got, &reference_sort(&graph, &refs));

        let again = retrieve_evidence(&graph, &incident, &hypothesis, &config.funnel).unwrap();
        prop_assert_eq!(refs, again, "retrieval must be deterministic");
    }
}
