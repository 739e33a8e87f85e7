use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use map_core::embedding::{EmbeddingProvider, RemoteEmbeddingConfig, RemoteEmbeddingProvider};
use map_core::gateway::{
    ChatBackend, CompletionRequest, GatewayError, RemoteChatBackend, RemoteChatConfig,
};
use map_core::retry::RetryPolicy;
use map_core::{Gateway, PriceTable, PromptBuilder};
use serde_json::Value;

/// Serves the canned `(status, body)` replies in order, one per connection,
/// and records each request body.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line.trim().to_string());
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let mut doc: Value = serde_json::from_slice(&buf).unwrap();
            if let Some(a) = auth {
                doc["_auth"] = Value::String(a);
            }
            log.lock().unwrap().push(doc);
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn chat_config(url: String) -> RemoteChatConfig {
    RemoteChatConfig {
        url,
        model: "test-model".into(),
        auth_token: Some("sekret".into()),
        timeout_secs: 5,
        retry: RetryPolicy::no_delay(3),
    }
}

fn request() -> CompletionRequest {
    CompletionRequest::new(PromptBuilder::default().detection("Recommend me a comedy").unwrap(), "t")
}

#[test]
fn chat_backend_retries_server_errors_and_reads_usage() {
    let ok = r#"{"choices":[{"message":{"role":"assistant","content":"A"}}],"usage":{"prompt_tokens":71,"completion_tokens":1}}"#;
    let (url, seen) = serve(vec![(503, "{}".into()), (200, ok.into())]);
    let gateway = Gateway::new(Arc::new(RemoteChatBackend::new(chat_config(url)).unwrap()), PriceTable::default(), 2);
    let result = gateway.complete(&request()).unwrap();
    assert_eq!(result.text, "A");
    assert_eq!((result.prompt_tokens, result.reply_tokens), (71, 1));
    assert_eq!(result.provider, "test-model");
    assert_eq!(gateway.ledger().len(), 1);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    let body = &seen[1];
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Recommend me a comedy");
    assert_eq!(body["_auth"], "authorization: Bearer sekret");
}

#[test]
fn chat_backend_gives_up_on_client_errors() {
    let (url, seen) = serve(vec![(401, "{}".into())]);
    let backend = RemoteChatBackend::new(chat_config(url)).unwrap();
    assert!(matches!(backend.send(&request()), Err(GatewayError::ProviderUnavailable(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn missing_usage_falls_back_to_estimates() {
    let ok = r#"{"choices":[{"message":{"content":"4"}}]}"#;
    let (url, _) = serve(vec![(200, ok.into())]);
    let gateway = Gateway::new(Arc::new(RemoteChatBackend::new(chat_config(url)).unwrap()), PriceTable::default(), 1);
    let req = request();
    let result = gateway.complete(&req).unwrap();
    assert_eq!(result.prompt_tokens, req.bundle.token_estimate as u64);
    assert_eq!(result.reply_tokens, 1);
}

#[test]
fn unreachable_provider_is_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let backend = RemoteChatBackend::new(chat_config(url)).unwrap();
    assert!(matches!(backend.send(&request()), Err(GatewayError::ProviderUnavailable(_))));
}

#[test]
fn embedding_provider_batches_and_caches() {
    let reply = r#"{"data":[{"index":1,"embedding":[0.0,1.0,0.0]},{"index":0,"embedding":[1.0,0.0,0.0]}]}"#;
    let (url, seen) = serve(vec![(200, reply.into())]);
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("vectors.bin");
    let config = RemoteEmbeddingConfig {
        url,
        model: "embed-small".into(),
        auth_token: None,
        dimension: 3,
        cache_path: Some(cache.clone()),
        timeout_secs: 5,
        retry: RetryPolicy::no_delay(1),
    };
    let provider = RemoteEmbeddingProvider::new(config.clone()).unwrap();
    let v = provider.embed_batch(&["comedy", "drama"]).unwrap();
    assert_eq!(v[0].values(), &[1.0, 0.0, 0.0]);
    assert_eq!(v[1].values(), &[0.0, 1.0, 0.0]);
    assert_eq!(seen.lock().unwrap()[0]["input"], serde_json::json!(["comedy", "drama"]));

    // the server is gone now; a fresh provider answers from the cache file
    let reopened = RemoteEmbeddingProvider::new(config).unwrap();
    assert_eq!(reopened.embed_batch(&["drama"]).unwrap()[0].values(), &[0.0, 1.0, 0.0]);
    assert_eq!(seen.lock().unwrap().len(), 1);
}
