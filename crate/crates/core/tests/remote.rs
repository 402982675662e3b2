use std::sync::Arc;

use tacos::llm::{
    BackendError, ChatMessage, CompletionRequest, LlmBackend, RemoteBackend, RemoteConfig, Script, ScriptRule,
    ScriptedBackend, SharedBackend, StubServer,
};

fn request(user: &str, max_tokens: u32) -> CompletionRequest {
    CompletionRequest {
        messages: vec![ChatMessage::system("You answer."), ChatMessage::user(user)],
        temperature: 0.0,
        max_tokens,
        model_id: "llama-3.3-70b-instruct".into(),
    }
}

fn model() -> SharedBackend {
    let script = Script::new(vec![
        ScriptRule::substring("ping", "REASONING:\nsay \"pong\" with a brace } and unicode é\n\nPLAN:\n[]\n"),
        ScriptRule::substring("long", "x".repeat(400)),
    ]);
    Arc::new(ScriptedBackend::new(script).unwrap())
}

fn fast(url: String) -> RemoteConfig {
    let mut cfg = RemoteConfig::new(url);
    cfg.backoff_ms = 1;
    cfg.timeout_secs = 10.0;
    cfg
}

#[test]
fn completion_text_survives_the_round_trip() {
    let server = StubServer::start(model(), "127.0.0.1:0").unwrap();
    let remote = RemoteBackend::new(fast(server.url()));
    let direct = model().complete(&request("ping", 256)).unwrap();
    assert_eq!(remote.complete(&request("ping", 256)).unwrap(), direct);
    assert_eq!(server.requests(), 1);
}

#[test]
fn unmatched_prompt_is_a_client_error_not_retried() {
    let server = StubServer::start(model(), "127.0.0.1:0").unwrap();
    let remote = RemoteBackend::new(fast(server.url()));
    let err = remote.complete(&request("nothing here", 256)).unwrap_err();
    assert!(matches!(err, BackendError::InvalidRequest(_)), "{err:?}");
    assert_eq!(server.requests(), 1);
}

#[test]
fn length_finish_maps_to_token_limit() {
    let server = StubServer::start(model(), "127.0.0.1:0").unwrap();
    let remote = RemoteBackend::new(fast(server.url()));
    assert_eq!(remote.complete(&request("long", 10)), Err(BackendError::TokenLimitExceeded));
}

#[test]
fn service_unavailable_is_retried() {
    let server = StubServer::start_flaky(model(), "127.0.0.1:0", 2).unwrap();
    let remote = RemoteBackend::new(fast(format!("{}/chat/completions", server.url())));
    assert!(remote.complete(&request("ping", 256)).unwrap().contains("pong"));
    assert_eq!(server.requests(), 3);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let server = StubServer::start_flaky(model(), "127.0.0.1:0", 10).unwrap();
    let remote = RemoteBackend::new(fast(server.url()));
    let err = remote.complete(&request("ping", 256)).unwrap_err();
    assert!(matches!(err, BackendError::Unreachable(_)), "{err:?}");
    assert_eq!(server.requests(), 4);
}
