use std::time::Duration;

use futures::{SinkExt, StreamExt};
use retsim_core::sim::SimConfig;
use retsim_gateway::{Gateway, GatewayConfig, Health, Session};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

async fn start() -> Gateway {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let mut cfg = SimConfig::default();
    cfg.mode = retsim_core::sim::Mode::HybridCooperative;
    let session = Session::new(cfg, GatewayConfig::default()).unwrap();
    Gateway::start(listener, session).unwrap()
}

async fn connect(gw: &Gateway) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/session", gw.addr)).await.unwrap();
    ws
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

/// Skips telemetry until a message of `kind` arrives.
async fn next_of(ws: &mut Ws, kind: &str) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn http_get(gw: &Gateway, path: &str) -> (String, String) {
    let mut s = TcpStream::connect(gw.addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let (head, body) = buf.split_once("\r\n\r\n").unwrap();
    (head.to_owned(), body.to_owned())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_config_endpoints() {
    let gw = start().await;
    let (head, body) = http_get(&gw, "/health").await;
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    let h: Health = serde_json::from_str(&body).unwrap();
    assert_eq!(h.status, "ok");
    assert!(!h.version.is_empty());
    let (_, body) = http_get(&gw, "/config").await;
    let cfg: SimConfig = serde_json::from_str(&body).unwrap();
    assert_eq!(cfg.control_rate_hz, 240.0);
    gw.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn hello_acks_and_telemetry() {
    let gw = start().await;
    let mut ws = connect(&gw).await;
    let hello = next_json(&mut ws).await;
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["payload"]["protocol_version"], 1);
    assert_eq!(hello["payload"]["telemetry_rate_hz"], 30.0);

    send(&mut ws, json!({"type": "command", "seq": 7, "payload": {"kind": "steer_force", "force_n": [1.0, 0.0]}})).await;
    let ack = next_of(&mut ws, "ack").await;
    assert_eq!(ack["payload"]["command_seq"], 7);
    assert_eq!(ack["payload"]["rejected"], true);
    assert_eq!(ack["payload"]["reason"], "pedal released");

    send(&mut ws, json!({"type": "command", "seq": 8, "payload": {"kind": "pedal", "pressed": true}})).await;
    send(&mut ws, json!({"type": "command", "seq": 9, "payload": {"kind": "steer_force", "force_n": [40.0, 0.0]}})).await;
    let a8 = next_of(&mut ws, "ack").await;
    let a9 = next_of(&mut ws, "ack").await;
    assert_eq!(a8["payload"]["rejected"], false);
    assert_eq!(a9["payload"]["command_seq"], 9);
    assert_eq!(a9["payload"]["clamped"], true);

    send(&mut ws, json!({"type": "command", "seq": 10, "payload": {"kind": "steer_force", "force_n": "left"}})).await;
    let bad = next_of(&mut ws, "ack").await;
    assert_eq!(bad["payload"]["rejected"], true);
    assert!(bad["payload"]["reason"].as_str().unwrap().starts_with("malformed payload"));

    // about one second of telemetry, strictly ordered
    let mut frames = Vec::new();
    let t0 = std::time::Instant::now();
    let mut last_seq = a9["seq"].as_u64().unwrap();
    while t0.elapsed() < Duration::from_secs(1) {
        let v = next_json(&mut ws).await;
        let seq = v["seq"].as_u64().unwrap();
        assert!(seq > last_seq);
        last_seq = seq;
        if v["type"] == "telemetry" {
            frames.push(v["payload"].clone());
        }
    }
    assert!(frames.len() >= 15 && frames.len() <= 40, "{} frames", frames.len());
    assert!(frames.windows(2).all(|w| w[1]["t"].as_f64() > w[0]["t"].as_f64()));
    assert!(frames.iter().all(|f| f["pedal"] == true));
    assert!(frames.last().unwrap()["thumbnail"]["width"] == 64);

    ws.close(None).await.unwrap();
    while let Some(Ok(_)) = ws.next().await {}
    // the engine applies the disconnect at its next tick
    tokio::time::sleep(Duration::from_millis(100)).await;
    let session = gw.shutdown().await;
    // the socket closed, so the pedal is released
    assert!(!session.pedal());
    assert!(session.time() > 1.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn version_mismatch_is_refused() {
    let gw = start().await;
    let mut ws = connect(&gw).await;
    next_of(&mut ws, "hello").await;
    send(&mut ws, json!({"type": "hello", "seq": 1, "payload": {"protocol_version": 99}})).await;
    let err = next_of(&mut ws, "error").await;
    assert!(err["payload"]["reason"].as_str().unwrap().contains("99"));
    // the server hangs up
    let closed = tokio::time::timeout(Duration::from_secs(5), async {
        while let Some(Ok(msg)) = ws.next().await {
            if matches!(msg, Message::Close(_)) {
                return;
            }
        }
    })
    .await;
    assert!(closed.is_ok());
    gw.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_message_type_is_an_error() {
    let gw = start().await;
    let mut ws = connect(&gw).await;
    send(&mut ws, json!({"type": "launch", "seq": 1, "payload": {}})).await;
    let err = next_of(&mut ws, "error").await;
    assert!(err["payload"]["reason"].as_str().unwrap().contains("launch"));
    ws.send(Message::Text("{not json".into())).await.unwrap();
    let err = next_of(&mut ws, "error").await;
    assert!(err["payload"]["reason"].as_str().unwrap().starts_with("malformed"));
    gw.shutdown().await;
}
