use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use visa_core::dataset::{instance_seed, write_instance};
use visa_core::gateway::stub::{StubReply, StubServer};
use visa_core::gateway::{build_prompt, dispatch, query, EndpointConfig, GatewayError, PromptPayload, QueryMode};
use visa_core::instance::{generate_instance, Instance, Split};
use visa_core::scenario::list_scenarios;

fn instance(si: usize) -> Instance {
    let s = &list_scenarios()[si];
    generate_instance(s, instance_seed(1, si, 0), format!("{}-0000", s.slug), Split::Eval).unwrap()
}

fn fast(url: &str) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(url, "stub-model");
    cfg.backoff_ms = 1;
    cfg.retries = 3;
    cfg.timeout_secs = 10.0;
    cfg
}

/// Rows listed under `All N rows:` up to the next blank line, minus the column line.
fn listed_rows(text: &str) -> Vec<usize> {
    let lines: Vec<&str> = text.lines().collect();
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.starts_with("All ") && l.ends_with(" rows:"))
        .map(|(i, _)| lines[i + 2..].iter().take_while(|l| !l.trim().is_empty()).count())
        .collect()
}

#[test]
fn vlm_prompt_attaches_two_images() {
    let dir = tempfile::tempdir().unwrap();
    let inst = instance(4);
    write_instance(dir.path(), &inst, true).unwrap();
    let p = build_prompt(dir.path(), &inst, QueryMode::Vlm).unwrap();
    assert_eq!(p.images.len(), 2);
    assert!(p.images.iter().all(|i| i.bytes.starts_with(b"\x89PNG")));
    assert!(p.text.contains("<solution>") && p.text.contains("<thinking>"));
    assert!(p.text.contains("Data shape: (400, 3)") && p.text.contains("Data shape: (400, 4)"));
    assert!(p.text.contains("Columns: x, y, du_dx, du_dy"));
    assert_eq!(p.text.matches("First 10 rows:").count(), 2);
    for (name, _) in inst.metadata.entries() {
        assert!(p.text.contains(&format!("  {name}: ")), "{name}");
    }
    assert!(!p.text.contains(&inst.solution));
}

#[test]
fn llm_only_prompt_embeds_full_tables() {
    let dir = tempfile::tempdir().unwrap();
    let inst = instance(9);
    write_instance(dir.path(), &inst, false).unwrap();
    let p = build_prompt(dir.path(), &inst, QueryMode::LlmOnly).unwrap();
    assert!(p.images.is_empty());
    assert_eq!(listed_rows(&p.text), vec![400, 400]);
    assert!(p.text.contains("<solution>"));
    assert!(!p.text.contains("Visualization"));
}

#[test]
fn prompts_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let inst = instance(17);
    write_instance(a.path(), &inst, true).unwrap();
    write_instance(b.path(), &inst, true).unwrap();
    for mode in [QueryMode::Vlm, QueryMode::LlmOnly] {
        let pa = build_prompt(a.path(), &inst, mode).unwrap();
        let pb = build_prompt(b.path(), &inst, mode).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(pa.images.iter().map(|i| i.data_url()).collect::<Vec<_>>(), pb.images.iter().map(|i| i.data_url()).collect::<Vec<_>>());
    }
}

#[test]
fn missing_images_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let inst = instance(2);
    write_instance(dir.path(), &inst, false).unwrap();
    assert!(matches!(build_prompt(dir.path(), &inst, QueryMode::Vlm), Err(GatewayError::MissingArtifact { .. })));
    let empty = tempfile::tempdir().unwrap();
    assert!(build_prompt(empty.path(), &inst, QueryMode::LlmOnly).is_err());
}

#[test]
fn echo_reply_is_preserved_exactly() {
    let canned = "<thinking>\n  ünïcode ∂u/∂x\r\n</thinking><solution>x**2</solution>  ";
    let server = StubServer::start(move |_| StubReply::Content(canned.to_string())).unwrap();
    let r = query(&PromptPayload::text_only("i", "test", "q".into()), &fast(&server.base_url()));
    assert!(r.is_ok(), "{:?}", r.status);
    assert_eq!(r.raw, canned);
    assert_eq!(r.attempts, 1);
    assert_eq!(r.finish_reason.as_deref(), Some("stop"));
}

#[test]
fn rate_limits_are_retried() {
    let seen = Arc::new(AtomicUsize::new(0));
    let s2 = seen.clone();
    let server = StubServer::start(move |_| {
        if s2.fetch_add(1, Ordering::SeqCst) < 2 {
            StubReply::Status(429)
        } else {
            StubReply::Content("ok".into())
        }
    })
    .unwrap();
    let r = query(&PromptPayload::text_only("i", "test", "q".into()), &fast(&server.base_url()));
    assert!(r.is_ok());
    assert_eq!(r.attempts, 3);
    assert_eq!(r.raw, "ok");
    assert!(r.latency_ms > 0.0);
}

#[test]
fn client_errors_and_bad_bodies_are_not_retried() {
    let server = StubServer::start(|req| match req.stage() {
        Some("bad") => StubReply::Raw { status: 200, body: "{\"nope\":1}".into() },
        _ => StubReply::Status(400),
    })
    .unwrap();
    let cfg = fast(&server.base_url());
    let r = query(&PromptPayload::text_only("i", "test", "q".into()), &cfg);
    assert_eq!((r.attempts, r.http_status), (1, Some(400)));
    assert!(!r.is_ok());
    let r = query(&PromptPayload::text_only("i", "bad", "q".into()), &cfg);
    assert_eq!(r.attempts, 1);
    assert!(r.failure().unwrap().contains("malformed"));
    assert_eq!(server.requests(), 2);
}

#[test]
fn unreachable_host_fails_after_retries() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = fast(&format!("http://127.0.0.1:{port}/v1"));
    let r = query(&PromptPayload::text_only("i", "test", "q".into()), &cfg);
    assert!(!r.is_ok());
    assert_eq!(r.attempts, cfg.retries + 1);
    assert!(r.raw.is_empty());
}

#[test]
fn dispatcher_respects_concurrency_cap() {
    let server = StubServer::start(|req| {
        std::thread::sleep(Duration::from_millis(30));
        StubReply::Content(req.instance().unwrap_or("").to_string())
    })
    .unwrap();
    let mut cfg = fast(&server.base_url());
    cfg.concurrency = 3;
    let payloads: Vec<PromptPayload> =
        (0..20).map(|k| PromptPayload::text_only(&format!("inst-{k}"), "test", "q".into())).collect();
    let out = dispatch(payloads, &cfg);
    assert_eq!(server.requests(), 20);
    assert!(server.max_in_flight() <= 3, "{}", server.max_in_flight());
    assert!(server.max_in_flight() >= 2);
    for (k, r) in out.iter().enumerate() {
        assert_eq!(r.raw, format!("inst-{k}"));
    }
}

#[test]
fn bearer_token_comes_from_environment() {
    std::env::set_var("VISA_GATEWAY_TEST_TOKEN", "sekrit");
    let server = StubServer::start(|req| {
        let ok = req.header("authorization") == Some("Bearer sekrit");
        StubReply::Content(if ok { "authorized" } else { "denied" }.to_string())
    })
    .unwrap();
    let mut cfg = fast(&server.base_url());
    cfg.token_env = Some("VISA_GATEWAY_TEST_TOKEN".into());
    let r = query(&PromptPayload::text_only("i", "test", "q".into()), &cfg);
    assert_eq!(r.raw, "authorized");
    assert!(!serde_json::to_string(&cfg).unwrap().contains("sekrit"));
    assert!(!serde_json::to_string(&r).unwrap().contains("sekrit"));
}
