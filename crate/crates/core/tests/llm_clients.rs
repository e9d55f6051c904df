use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use prompt_catalyst::llmopt::{
    llm_complete, HttpChatClient, InstructionStyle, LlmClient, LlmError, NeighborhoodClient,
    RetryPolicy, ScriptedClient,
};
use prompt_catalyst::vocab::Vocabulary;

struct Captured {
    head: String,
    body: serde_json::Value,
}

/// Serves one canned `(status, body)` per connection and reports each request.
fn mock_server(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(Captured { head, body: serde_json::from_slice(&buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn reply(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn client(url: String, style: InstructionStyle, timeout: Duration) -> HttpChatClient {
    HttpChatClient::new(url, "test-model".into(), 0.5, timeout, Some("sekret".into()), style)
}

#[test]
fn http_client_round_trip() {
    let (url, rx) = mock_server(vec![(200, reply("1. a photo of"))]);
    let mut c = client(url, InstructionStyle::Gpt, Duration::from_secs(5));
    assert_eq!(c.complete("hello there").unwrap(), "1. a photo of");
    let got = rx.recv().unwrap();
    assert!(got.head.starts_with("POST /v1/chat/completions"));
    assert!(got.head.to_ascii_lowercase().contains("authorization: bearer sekret"));
    assert_eq!(got.body["model"], "test-model");
    assert_eq!(got.body["temperature"], 0.5);
    assert_eq!(got.body["messages"][0]["role"], "user");
    assert_eq!(got.body["messages"][0]["content"], "hello there");
}

#[test]
fn llama_style_sends_system_message() {
    let (url, rx) = mock_server(vec![(200, reply("ok"))]);
    let mut c = client(url, InstructionStyle::Llama, Duration::from_secs(5));
    c.complete("You are helpful.\n\nPropose new prompts.").unwrap();
    let got = rx.recv().unwrap();
    assert_eq!(got.body["messages"][0]["role"], "system");
    assert_eq!(got.body["messages"][0]["content"], "You are helpful.");
    assert_eq!(got.body["messages"][1]["content"], "Propose new prompts.");
}

#[test]
fn server_error_is_retried() {
    let (url, _rx) = mock_server(vec![(500, "{}".into()), (200, reply("fine"))]);
    let mut c = client(url, InstructionStyle::Gpt, Duration::from_secs(5));
    let policy = RetryPolicy { max_retries: 2, base_delay: Duration::ZERO, max_delay: Duration::ZERO };
    let done = llm_complete(&mut c, "q", &policy).unwrap();
    assert_eq!(done.text, "fine");
    assert_eq!(done.attempts, 2);
}

#[test]
fn bad_status_and_missing_content() {
    let (url, _rx) = mock_server(vec![(503, "busy".into()), (200, r#"{"choices": []}"#.into())]);
    let mut c = client(url, InstructionStyle::Gpt, Duration::from_secs(5));
    match c.complete("q") {
        Err(LlmError::Transport(m)) => assert!(m.contains("503"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(c.complete("q"), Err(LlmError::Transport(_))));
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let hold = thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_millis(1500));
        drop(s);
    });
    let mut c = client(url, InstructionStyle::Gpt, Duration::from_millis(200));
    assert_eq!(c.complete("q"), Err(LlmError::Timeout(Duration::from_millis(200))));
    hold.join().unwrap();
}

#[test]
fn refused_connection_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut c = client(format!("http://127.0.0.1:{port}/"), InstructionStyle::Gpt, Duration::from_secs(2));
    assert!(matches!(c.complete("q"), Err(LlmError::Transport(_))));
}

#[test]
fn retry_budget() {
    let policy = RetryPolicy { max_retries: 3, base_delay: Duration::ZERO, max_delay: Duration::ZERO };
    let mut c = ScriptedClient::failing_then(3, "ok");
    assert_eq!(llm_complete(&mut c, "q", &policy).unwrap().attempts, 4);

    let mut c = ScriptedClient::failing_then(4, "ok");
    assert!(matches!(llm_complete(&mut c, "q", &policy), Err(LlmError::Transport(_))));
    assert_eq!(c.calls(), 4);

    let mut c = ScriptedClient::new([Err(LlmError::Config("bad".into())), Ok("ok".into())]);
    assert!(matches!(llm_complete(&mut c, "q", &policy), Err(LlmError::Config(_))));
    assert_eq!(c.calls(), 1);

    assert_eq!(llm_complete(&mut c, "  ", &policy), Err(LlmError::EmptyInstruction));
}

#[test]
fn backoff_doubles_and_caps() {
    let p = RetryPolicy { max_retries: 5, base_delay: Duration::from_millis(100), max_delay: Duration::from_millis(350) };
    let d: Vec<u128> = (1..=4).map(|r| p.delay(r).as_millis()).collect();
    assert_eq!(d, vec![100, 200, 350, 350]);
}

#[test]
fn neighborhood_client_is_seeded() {
    let vocab = std::sync::Arc::new(Vocabulary::random(1, 200, 8).unwrap());
    let instruction = "Templates: goba poba dobe\nLoss: 1.00\nAccuracy: 10.0\n\n\
- Keep every template under 10 words\n- Generate 3 templates that potentially have better x performance\n";
    let a = NeighborhoodClient::new(vocab.clone(), 4).complete(instruction).unwrap();
    let b = NeighborhoodClient::new(vocab.clone(), 4).complete(instruction).unwrap();
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 3);
    for l in lines {
        let words: Vec<&str> = l.splitn(2, ". ").nth(1).unwrap().split(' ').collect();
        assert_eq!(words.len(), 3);
        assert!(words.iter().all(|w| vocab.id_of(w).is_some()));
    }
}
