//! Live adapters against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use propdial::gateway::{
    CompletionRequest, Gateway, HttpClient, HttpRewriter, LiveChat, LiveEmbedder, RetryPolicy, TemplateName,
};
use propdial::rewrite::{conditional_rewrite, Rewriter};
use propdial::Error;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves the canned `(status, body)` replies in order, one per connection.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (name, value) = h.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                authorization,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen)
}

fn client(key: Option<&str>) -> HttpClient {
    HttpClient::new(
        key.map(String::from),
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(5),
        },
        Duration::from_secs(10),
    )
}

#[test]
fn chat_retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![
        (503, "{}".into()),
        (500, "{}".into()),
        (200, json!({"content": "[\"p1\"]"}).to_string()),
    ]);
    let gw = Gateway::new(Box::new(LiveChat::new(format!("{url}/chat"), "m", client(Some("sekret")))));
    let req = CompletionRequest::new(TemplateName::Step1Propositions).bind("text", "Doc body.");
    assert_eq!(gw.complete(&req).unwrap(), "[\"p1\"]");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[2].path, "/chat");
    assert_eq!(seen[2].authorization.as_deref(), Some("Bearer sekret"));
    assert_eq!(seen[2].body["model"], "m");
    assert_eq!(seen[2].body["temperature"], 0.0);
    assert!(seen[2].body["messages"][0]["content"].as_str().unwrap().contains("Doc body."));
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = serve(vec![(401, "{\"error\":\"bad key\"}".into()), (200, "{}".into())]);
    let gw = Gateway::new(Box::new(LiveChat::new(url, "m", client(None))));
    let req = CompletionRequest::new(TemplateName::Step1Propositions).bind("text", "x");
    assert!(matches!(gw.complete(&req), Err(Error::Auth(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn persistent_failure_gives_up_with_transport_error() {
    let (url, seen) = serve(vec![(429, "{}".into()); 4]);
    let gw = Gateway::new(Box::new(LiveChat::new(url, "m", client(None))));
    let req = CompletionRequest::new(TemplateName::Step1Propositions).bind("text", "x");
    assert!(matches!(gw.complete(&req), Err(Error::Transport(_))));
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn embedding_contract() {
    let (url, seen) = serve(vec![
        (200, json!({"dim": 2, "vectors": [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]}).to_string()),
        (200, json!({"dim": 3, "vectors": [[1.0, 0.0]]}).to_string()),
    ]);
    let gw = Gateway::new(Box::new(LiveChat::new("http://unused", "m", client(None))))
        .with_embedder(Box::new(LiveEmbedder::new(format!("{url}/embed"), client(None))));
    let texts: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let v = gw.embed(&texts).unwrap();
    assert_eq!(v.len(), 3);
    assert!(v.iter().all(|e| e.dim() == 2));
    assert_eq!(seen.lock().unwrap()[0].body, json!({"texts": ["a", "b", "c"]}));
    assert!(matches!(gw.embed(&texts[..1]), Err(Error::Backend(_))));
}

#[test]
fn rewriter_contract() {
    let (url, seen) = serve(vec![
        (200, json!({"output": "rewrite Can I apply for a Board Appeal by fax?"}).to_string()),
        (200, json!({"output": "no_rewrite"}).to_string()),
        (200, json!({"text": "wrong field"}).to_string()),
    ]);
    let rw = HttpRewriter::new(format!("{url}/rewrite"), 64, client(None));
    let out = rw.generate("Can I apply for it by fax?").unwrap();
    assert_eq!(
        conditional_rewrite(&out, "Can I apply for it by fax?").query,
        "Can I apply for a Board Appeal by fax?"
    );
    let out = rw.generate("When is it due?").unwrap();
    let r = conditional_rewrite(&out, "When is it due?");
    assert_eq!((r.query.as_str(), r.was_rewritten), ("When is it due?", false));
    assert!(matches!(rw.generate("x"), Err(Error::Backend(_))));
    assert_eq!(
        seen.lock().unwrap()[0].body,
        json!({"input": "Can I apply for it by fax?", "max_tokens": 64})
    );
}
