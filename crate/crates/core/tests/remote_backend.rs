//! HTTP backend behavior against a scripted local server: wire shape,
//! bearer auth, malformed-body fallback, bounded retries, and how the
//! funnel reacts when the backend disappears mid-run.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use causeway_core::backend::{
    BackendError, ReasoningBackend, RemoteBackend, FALLBACK_CAUSE,
};
use causeway_core::config::Config;
use causeway_core::funnel::{
    run_funnel, EvidenceRef, FunnelError, PriorStep, ReasoningRequest, Termination,
};
use causeway_core::kg::{Edge, EdgeKind, GraphBuilder, KnowledgeGraph, Node, NodeId, NodeKind};
use causeway_core::RootCauseClass;

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Serves the scripted (status, body) replies one connection each, capturing
/// every raw request, then stops listening.
fn serve_script(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let captured: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));
    let sink = captured.clone();
    let handle = thread::spawn(move || {
        for (status, body) in script {
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            let mut buf = Vec::new();
            let mut tmp = [0u8; 1024];
            let header_end = loop {
                let n = stream.read(&mut tmp).unwrap();
                if n == 0 {
                    break None;
                }
                buf.extend_from_slice(&tmp[..n]);
                if let Some(pos) = find(&buf, b"\r\n\r\n") {
                    break Some(pos);
                }
            };
            let Some(pos) = header_end else { continue };
            let headers = String::from_utf8_lossy(&buf[..pos]).to_string();
            let content_length = headers
                .lines()
                .find_map(|line| {
                    let (name, value) = line.split_once(':')?;
                    if name.eq_ignore_ascii_case("content-length") {
                        value.trim().parse::<usize>().ok()
                    } else {
                        None
                    }
                })
                .unwrap_or(0);
            let mut body_bytes = buf[pos + 4..].to_vec();
            while body_bytes.len() < content_length {
                let n = stream.read(&mut tmp).unwrap();
                if n == 0 {
                    break;
                }
                body_bytes.extend_from_slice(&tmp[..n]);
            }
            sink.lock().unwrap().push(format!(
                "{headers}\r\n\r\n{}",
                String::from_utf8_lossy(&body_bytes)
            ));
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
            stream.flush().unwrap();
        }
    });
    (format!("http://{addr}/why"), captured, handle)
}

fn sample_request() -> ReasoningRequest {
    ReasoningRequest {
        incident_summary: "payment service unreachable".to_string(),
        prior_steps: vec![PriorStep {
            question: "Why: payment service unreachable?".to_string(),
            cause: "service delays downstream".to_string(),
        }],
        evidence: vec![EvidenceRef {
            node: NodeId::new("chg:CR-7").unwrap(),
            snippet: "Add automation for restart".to_string(),
            score: 2.0,
            hop_distance: 1,
        }],
        depth: 2,
    }
}

#[test]
fn posts_the_documented_wire_shape_and_parses_the_reply() {
    let reply = r#"{"cause":"lack of automation","cited":["chg:CR-7","not-a-node-id"],"actionable_hint":true,"class_hint":"automation-gap"}"#;
    let (url, captured, handle) = serve_script(vec![(200, reply.to_string())]);
    let backend = RemoteBackend::new(url)
        .with_retry(1, Duration::from_millis(5))
        .with_token(None);

    let response = backend.next_cause(&sample_request()).unwrap();
    handle.join().unwrap();

    assert_eq!(response.cause, "lack of automation");
    // The unparseable citation is dropped; the valid one survives.
    assert_eq!(response.cited, vec![NodeId::new("chg:CR-7").unwrap()]);
    assert!(response.actionable_hint);
    assert_eq!(response.class_hint, Some(RootCauseClass::AutomationGap));

    let raw = captured.lock().unwrap();
    assert_eq!(raw.len(), 1);
    let body = &raw[0][raw[0].find("\r\n\r\n").unwrap() + 4..];
    let wire: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(wire["incident_summary"], "payment service unreachable");
    assert_eq!(wire["depth"], 2);
    assert_eq!(
        wire["prior_steps"][0]["question"],
        "Why: payment service unreachable?"
    );
    assert_eq!(wire["prior_steps"][0]["cause"], "service delays downstream");
    let evidence = &wire["evidence"][0];
    assert_eq!(evidence["node"], "chg:CR-7");
    assert_eq!(evidence["snippet"], "Add automation for restart");
    assert_eq!(evidence["score"], 2.0);
    assert_eq!(evidence["hop"], 1, "hop distance must serialize under the key 'hop'");
}

#[test]
fn bearer_token_is_attached_only_when_configured() {
    let ok = r#"{"cause":"x"}"#.to_string();
    let (url, captured, handle) = serve_script(vec![(200, ok.clone())]);
    let backend = RemoteBackend::new(url)
        .with_retry(1, Duration::from_millis(5))
        .with_token(Some("sekrit".to_string()));
    backend.next_cause(&sample_request()).unwrap();
    handle.join().unwrap();
    let raw = captured.lock().unwrap();
    let has_auth = raw[0]
        .lines()
        .any(|l| l.to_ascii_lowercase().starts_with("authorization:") && l.contains("Bearer sekrit"));
    assert!(has_auth, "expected a bearer authorization header");
    drop(raw);

    let (url, captured, handle) = serve_script(vec![(200, ok)]);
    let backend = RemoteBackend::new(url)
        .with_retry(1, Duration::from_millis(5))
        .with_token(None);
    backend.next_cause(&sample_request()).unwrap();
    handle.join().unwrap();
    let raw = captured.lock().unwrap();
    let has_auth = raw[0]
        .lines()
        .any(|l| l.to_ascii_lowercase().starts_with("authorization:"));
    assert!(!has_auth, "no token configured, no authorization header");
}

#[test]
fn malformed_success_body_becomes_an_unsupported_step_without_retrying() {
    let (url, captured, handle) = serve_script(vec![(200, "{ this is not json".to_string())]);
    let backend = RemoteBackend::new(url)
        .with_retry(3, Duration::from_millis(5))
        .with_token(None);
    let response = backend.next_cause(&sample_request()).unwrap();
    handle.join().unwrap();

    assert_eq!(response.cause, FALLBACK_CAUSE);
    assert!(response.cited.is_empty());
    assert!(!response.actionable_hint);
    assert_eq!(response.class_hint, None);
    assert_eq!(captured.lock().unwrap().len(), 1, "2xx bodies are never retried");
}

#[test]
fn persistent_failures_surface_after_the_configured_attempts() {
    let script = vec![(500, "{}".to_string()); 3];
    let (url, captured, handle) = serve_script(script);
    let backend = RemoteBackend::new(url)
        .with_retry(3, Duration::from_millis(5))
        .with_token(None);
    let err = backend.next_cause(&sample_request()).unwrap_err();
    handle.join().unwrap();

    match err {
        BackendError::Unavailable { attempts, message } => {
            assert_eq!(attempts, 3);
            assert!(message.contains("500"), "message was {message:?}");
        }
    }
    assert_eq!(captured.lock().unwrap().len(), 3);
}

#[test]
fn a_successful_retry_recovers() {
    let reply = r#"{"cause":"lack of automation","cited":["chg:CR-7"]}"#;
    let script = vec![(503, String::new()), (200, reply.to_string())];
    let (url, captured, handle) = serve_script(script);
    let backend = RemoteBackend::new(url)
        .with_retry(3, Duration::from_millis(5))
        .with_token(None);
    let response = backend.next_cause(&sample_request()).unwrap();
    handle.join().unwrap();

    assert_eq!(response.cause, "lack of automation");
    assert_eq!(captured.lock().unwrap().len(), 2);
}

fn replay_graph() -> (KnowledgeGraph, NodeId) {
    let mut b = GraphBuilder::new();
    let inc = NodeId::new("inc:I1").unwrap();
    b.add_node(
        Node::new(inc.clone(), NodeKind::Incident)
            .unwrap()
            .with_text("payment service unreachable for several minutes"),
    )
    .unwrap();
    let svc = NodeId::new("svc:payment-service").unwrap();
    b.add_node(
        Node::new(svc.clone(), NodeKind::Service)
            .unwrap()
            .with_text("payment-service"),
    )
    .unwrap();
    b.add_edge(Edge::new(inc.clone(), svc, EdgeKind::Affects)).unwrap();
    let chg = NodeId::new("chg:CR-7").unwrap();
    b.add_node(
        Node::new(chg.clone(), NodeKind::ChangeRequest)
            .unwrap()
            .with_text("Add automation for payment service restart after failed deploy"),
    )
    .unwrap();
    b.add_edge(Edge::new(inc.clone(), chg, EdgeKind::ResolvedBy)).unwrap();
    (b.seal(), inc)
}

#[test]
fn citations_outside_the_offered_evidence_are_stripped() {
    // The reply cites a node that is not in the evidence for this incident;
    // the guard must drop it, leaving the step unsupported.
    let reply = r#"{"cause":"a hunch with no evidence","cited":["inc:GHOST"]}"#;
    let (url, _captured, handle) = serve_script(vec![(200, reply.to_string())]);
    let (graph, incident) = replay_graph();
    let config = Config::default();
    let backend = RemoteBackend::new(url)
        .with_retry(1, Duration::from_millis(5))
        .with_token(None);

    let chain = run_funnel(&graph, &incident, &backend, &config.funnel).unwrap();
    handle.join().unwrap();

    assert_eq!(chain.termination, Termination::NoSupportedCause);
    assert_eq!(chain.steps.len(), 1);
    assert!(chain.steps[0].cited.is_empty());
    assert!(!chain.steps[0].supported);
}

#[test]
fn funnel_preserves_the_partial_chain_when_the_backend_dies() {
    // One good step citing the service, then the server goes away.
    let reply = r#"{"cause":"service delays downstream","cited":["svc:payment-service"]}"#;
    let (url, _captured, handle) = serve_script(vec![(200, reply.to_string())]);
    let (graph, incident) = replay_graph();
    let config = Config::default();
    let backend = RemoteBackend::new(url)
        .with_retry(1, Duration::from_millis(5))
        .with_token(None);

    let err = run_funnel(&graph, &incident, &backend, &config.funnel).unwrap_err();
    handle.join().unwrap();

    match err {
        FunnelError::BackendUnavailable { message, partial } => {
            assert!(!message.is_empty());
            assert_eq!(partial.steps.len(), 1);
            assert_eq!(partial.steps[0].cause, "service delays downstream");
            assert_eq!(partial.termination, Termination::NoSupportedCause);
        }
        other => panic!("expected BackendUnavailable, got {other:?}"),
    }
}
