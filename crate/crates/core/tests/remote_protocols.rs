//! Wire-level tests of the remote embedding, NLU and completion clients
//! against in-process stub servers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use idic_core::data::TurnRef;
use idic_core::http::RetryPolicy;
use idic_core::intent::{DialogueInformation, IntentError, NluClient};
use idic_core::llm::{CompletionBackend, CompletionRequest, Dialect, LlmError, RecordingBackend, RemoteBackend, ReplayBackend};
use idic_core::retrieval::{EmbedError, EmbeddingProvider, RemoteProvider};
use idic_core::{Schema, SlotKey, SlotValue};
use serde_json::{json, Value};

type Handler = dyn Fn(&str, &Value, usize) -> (u16, String) + Send + Sync;

struct Stub {
    base: String,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
}

/// Serves `handler(path, body, call_index)` until the test process exits.
fn stub(handler: Box<Handler>) -> Stub {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let base = format!("http://{}", server.server_addr().to_ip().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    let calls = AtomicUsize::new(0);
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut text = String::new();
            req.as_reader().read_to_string(&mut text).unwrap();
            let body: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
            let path = req.url().to_string();
            log.lock().unwrap().push((path.clone(), body.clone()));
            let (status, out) = handler(&path, &body, calls.fetch_add(1, Ordering::SeqCst));
            let resp = tiny_http::Response::from_string(out)
                .with_status_code(status)
                .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap());
            let _ = req.respond(resp);
        }
    });
    Stub { base, requests }
}

fn fast_policy() -> RetryPolicy {
    RetryPolicy {
        timeout: Duration::from_secs(5),
        retries: 2,
        backoff: Duration::from_millis(5),
    }
}

fn fake_vector(text: &str) -> Vec<f64> {
    vec![text.len() as f64, 1.0, 0.0]
}

#[test]
fn embed_protocol_and_batching() {
    let s = stub(Box::new(|path, body, _| {
        assert_eq!(path, "/embed");
        let texts: Vec<&str> = body["texts"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
        let embeddings: Vec<Vec<f64>> = texts.iter().map(|t| fake_vector(t)).collect();
        (200, json!({"embeddings": embeddings, "dim": 3}).to_string())
    }));
    let p = RemoteProvider::new(&format!("{}/", s.base), fast_policy()).with_batch_size(2);
    let texts = ["a", "bb", "ccc", "dddd", "eeeee"];
    let out = p.embed_batch(&texts).unwrap();
    assert_eq!(out.len(), 5);
    assert_eq!(out[3].components, fake_vector("dddd"));
    assert!(out.iter().all(|v| v.provider_id == p.id()));
    let sizes: Vec<usize> = s.requests.lock().unwrap().iter().map(|(_, b)| b["texts"].as_array().unwrap().len()).collect();
    assert_eq!(sizes, vec![2, 2, 1]);
    assert!(p.embed_batch(&[]).unwrap().is_empty());
}

#[test]
fn embed_rejects_malformed_answers() {
    let s = stub(Box::new(|_, body, _| {
        let n = body["texts"].as_array().unwrap().len();
        match body["texts"][0].as_str().unwrap() {
            "count" => (200, json!({"embeddings": vec![vec![1.0]; n + 1], "dim": 1}).to_string()),
            "dim" => (200, json!({"embeddings": vec![vec![1.0, 2.0]; n], "dim": 3}).to_string()),
            "shape" => (200, json!({"vectors": []}).to_string()),
            _ => (400, "bad request".to_string()),
        }
    }));
    let p = RemoteProvider::new(&s.base, fast_policy());
    for probe in ["count", "dim"] {
        assert!(matches!(p.embed(probe), Err(EmbedError::Protocol(_))), "{probe}");
    }
    assert!(matches!(p.embed("shape"), Err(EmbedError::Transport(_))));
    assert!(matches!(p.embed("other"), Err(EmbedError::Transport(_))));
}

#[test]
fn transient_errors_are_retried() {
    let s = stub(Box::new(|_, _, call| {
        if call < 2 {
            (503, "busy".into())
        } else {
            (200, json!({"text": "SELECT * FROM none; trailing"}).to_string())
        }
    }));
    let b = RemoteBackend::new(&s.base, Dialect::Minimal, fast_policy());
    let r = b.complete(&CompletionRequest::new("prompt")).unwrap();
    assert_eq!(r.text, "SELECT * FROM none");
    assert_eq!(s.requests.lock().unwrap().len(), 3);
}

#[test]
fn completion_wire_shapes() {
    let s = stub(Box::new(|path, body, _| match path {
        "/complete" => (200, json!({"text": format!("echo {}", body["prompt"].as_str().unwrap())}).to_string()),
        "/v1/completions" => (200, json!({"choices": [{"text": "SELECT * FROM hotel;"}], "model": body["model"]}).to_string()),
        _ => (404, "no".into()),
    }));
    let minimal = RemoteBackend::new(&s.base, Dialect::Minimal, fast_policy());
    let mut req = CompletionRequest::new("hello").for_turn(TurnRef::new("d", 0));
    req.stop = vec!["\n".into()];
    assert_eq!(minimal.complete(&req).unwrap().text, "echo hello");
    let openai = RemoteBackend::new(&s.base, Dialect::OpenAi, fast_policy()).with_model("codellama");
    assert_eq!(openai.complete(&CompletionRequest::new("x")).unwrap().text, "SELECT * FROM hotel");

    let reqs = s.requests.lock().unwrap();
    assert_eq!(
        reqs[0].1,
        json!({"prompt": "hello", "max_tokens": 200, "temperature": 0.0, "stop": ["\n"]})
    );
    assert_eq!(reqs[1].1["model"], "codellama");
    assert_eq!(reqs[1].1["stop"], json!([";"]));
}

#[test]
fn client_errors_fail_fast() {
    let s = stub(Box::new(|_, _, _| (400, "prompt too long".into())));
    let b = RemoteBackend::new(&s.base, Dialect::Minimal, fast_policy());
    match b.complete(&CompletionRequest::new("p")) {
        Err(LlmError::Backend { status, body }) => assert_eq!((status, body.as_str()), (400, "prompt too long")),
        other => panic!("{other:?}"),
    }
    assert_eq!(s.requests.lock().unwrap().len(), 1);
    let empty = stub(Box::new(|_, _, _| (200, json!({"choices": []}).to_string())));
    let o = RemoteBackend::new(&empty.base, Dialect::OpenAi, fast_policy());
    assert!(matches!(o.complete(&CompletionRequest::new("p")), Err(LlmError::Protocol(_))));
}

#[test]
fn unreachable_host_is_bounded() {
    let policy = RetryPolicy {
        timeout: Duration::from_millis(200),
        retries: 2,
        backoff: Duration::from_millis(10),
    };
    // Bind then drop to get a port with nothing listening.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = RemoteBackend::new(&format!("http://127.0.0.1:{port}"), Dialect::Minimal, policy.clone());
    let start = std::time::Instant::now();
    match b.complete(&CompletionRequest::new("p")) {
        Err(LlmError::Transport(e)) => assert!(e.to_string().contains("3 attempt")),
        other => panic!("{other:?}"),
    }
    assert!(start.elapsed() <= policy.max_total() + Duration::from_secs(1));
}

#[test]
fn record_against_live_then_replay_offline() {
    let s = stub(Box::new(|_, body, _| {
        let p = body["prompt"].as_str().unwrap();
        (200, json!({"text": format!("SELECT * FROM hotel WHERE area = '{}'", p.len())}).to_string())
    }));
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("rec.jsonl");
    let live = RemoteBackend::new(&s.base, Dialect::Minimal, fast_policy());
    let rec = RecordingBackend::create(live, &fixture).unwrap();
    let prompts: Vec<String> = (0..10).map(|i| "x".repeat(i + 1)).collect();
    let recorded: Vec<String> = prompts.iter().map(|p| rec.complete(&CompletionRequest::new(p.as_str())).unwrap().text).collect();
    drop(rec);
    let replay = ReplayBackend::open(&fixture).unwrap();
    assert_eq!(replay.len(), 10);
    for (p, r) in prompts.iter().zip(&recorded) {
        assert_eq!(&replay.complete(&CompletionRequest::new(p.as_str())).unwrap().text, r);
    }
    assert_eq!(s.requests.lock().unwrap().len(), 10);
}

fn info() -> DialogueInformation {
    DialogueInformation {
        turn_index: 1,
        active_domains: vec!["attraction".into()],
        user_utterance: "can you give me some info on the 1 in the south.".into(),
        system_utterance: "we have 4 of in the centre and 1 in the south.".into(),
        history: vec![(String::new(), "i am looking for attractions to go to in town .".into())],
        prev_state: Default::default(),
        other: Default::default(),
    }
}

#[test]
fn nlu_protocol() {
    let s = stub(Box::new(|path, body, _| {
        assert_eq!(path, "/intent");
        let ctx = body["context"].as_str().unwrap();
        if ctx.contains("south") {
            (200, json!({"intent": "[inform]{\"attraction-area\": \"South\", \"bogus-slot\": \"x\"}"}).to_string())
        } else {
            (200, json!({"nope": 1}).to_string())
        }
    }));
    let client = NluClient::at_base(&s.base, fast_policy());
    let schema = Schema::multiwoz();
    let parsed = client.model_intent(&info(), &schema).unwrap();
    assert_eq!(parsed.intent.act, "inform");
    assert_eq!(
        parsed.intent.slot_values().get(&SlotKey::new("attraction", "area")),
        Some(&SlotValue::Value("south".into()))
    );
    assert_eq!(parsed.dropped, 1);
    assert_eq!(s.requests.lock().unwrap()[0].1["context"], info().render_full());

    let mut other = info();
    other.user_utterance = "hello".into();
    other.system_utterance.clear();
    let bad = client.model_intent(&other, &schema).unwrap();
    assert!(bad.intent.is_empty());
    assert!(matches!(bad.error, Some(IntentError::Decode(_))));
}
