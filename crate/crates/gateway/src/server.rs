//! HTTP and websocket front end. One engine thread owns the [`Session`];
//! connection tasks reach it only through channels.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};

use crate::protocol::{Ack, ClientHello, Envelope, Hello, SessionCommand, PROTOCOL_VERSION};
use crate::session::Session;

pub const SERVER_VERSION: &str = env!("CARGO_PKG_VERSION");

enum EngineMsg {
    Command(SessionCommand, oneshot::Sender<Ack>),
    Disconnect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub uptime_s: f64,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<EngineMsg>,
    /// Latest telemetry payload, serialized once for every client.
    telemetry: watch::Receiver<Option<Arc<String>>>,
    config: Arc<serde_json::Value>,
    hello: Arc<Hello>,
    started: Instant,
}

/// A running gateway.
pub struct Gateway {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    engine: Option<JoinHandle<Session>>,
    server: tokio::task::JoinHandle<()>,
    shutdown_tx: Option<oneshot::Sender<()>>,
}

impl Gateway {
    /// Starts the engine thread and serves on `listener`.
    pub fn start(listener: TcpListener, session: Session) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        let hello = Hello {
            protocol_version: PROTOCOL_VERSION,
            server_version: SERVER_VERSION.into(),
            control_rate_hz: session.config().control_rate_hz,
            telemetry_rate_hz: session.gateway_config().telemetry_rate_hz,
            mode: session.engine().mode(),
            t1: session.config().autofocus.t1,
            t2: session.config().autofocus.t2,
            force_cap_n: session.gateway_config().force_cap_n,
        };
        let config = serde_json::to_value(session.config()).expect("config serializes");
        let (cmd_tx, cmd_rx) = mpsc::channel();
        let (tel_tx, tel_rx) = watch::channel(None);
        let stop = Arc::new(AtomicBool::new(false));
        let engine = {
            let stop = stop.clone();
            std::thread::Builder::new()
                .name("retsim-engine".into())
                .spawn(move || engine_loop(session, cmd_rx, tel_tx, stop))?
        };
        let state = AppState {
            commands: cmd_tx,
            telemetry: tel_rx,
            config: Arc::new(config),
            hello: Arc::new(hello),
            started: Instant::now(),
        };
        let app = Router::new()
            .route("/health", get(health))
            .route("/config", get(config_echo))
            .route("/session", get(session_upgrade))
            .with_state(state);
        let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
        let server = tokio::spawn(async move {
            let res = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = shutdown_rx.await;
                })
                .await;
            if let Err(e) = res {
                log::error!("server stopped: {e}");
            }
        });
        log::info!("gateway listening on {addr}");
        Ok(Self {
            addr,
            stop,
            engine: Some(engine),
            server,
            shutdown_tx: Some(shutdown_tx),
        })
    }

    /// Stops serving, stops the engine and returns the session with its log
    /// flushed.
    pub async fn shutdown(mut self) -> Session {
        if let Some(tx) = self.shutdown_tx.take() {
            let _ = tx.send(());
        }
        self.stop.store(true, Ordering::SeqCst);
        let engine = self.engine.take().expect("engine joined once");
        let mut session = tokio::task::spawn_blocking(move || engine.join().expect("engine thread panicked"))
            .await
            .expect("join task");
        if let Err(e) = session.flush_log() {
            log::error!("could not flush the session log: {e}");
        }
        // open websockets are not waited for
        self.server.abort();
        session
    }
}

fn engine_loop(
    mut session: Session,
    commands: mpsc::Receiver<EngineMsg>,
    telemetry: watch::Sender<Option<Arc<String>>>,
    stop: Arc<AtomicBool>,
) -> Session {
    let dt = session.config().dt();
    let start = Instant::now();
    let mut ticks: u64 = 0;
    while !stop.load(Ordering::SeqCst) {
        // commands take effect at the next tick
        while let Ok(msg) = commands.try_recv() {
            match msg {
                EngineMsg::Command(cmd, reply) => {
                    let _ = reply.send(session.apply(&cmd));
                }
                EngineMsg::Disconnect => session.disconnect(),
            }
        }
        match session.tick() {
            Ok(Some(frame)) => {
                let payload = serde_json::to_string(&frame).expect("telemetry serializes");
                telemetry.send_replace(Some(Arc::new(payload)));
            }
            Ok(None) => {}
            Err(e) => {
                log::error!("engine tick failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
        ticks += 1;
        let due = start + Duration::from_secs_f64(ticks as f64 * dt);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
    session
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: SERVER_VERSION.into(),
        uptime_s: s.started.elapsed().as_secs_f64(),
    })
}

async fn config_echo(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json((*s.config).clone())
}

async fn session_upgrade(ws: WebSocketUpgrade, State(s): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| run_session(socket, s))
}

enum Reply {
    Send(String, serde_json::Value),
    Error(String),
    /// Protocol mismatch: report and hang up.
    Fatal(String),
}

async fn handle_text(text: &str, state: &AppState) -> Reply {
    match handle_inner(text, state).await {
        Ok(reply) => reply,
        Err(reason) => Reply::Error(reason),
    }
}

async fn handle_inner(text: &str, state: &AppState) -> Result<Reply, String> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    match env.kind.as_str() {
        "hello" => {
            let hello: ClientHello =
                serde_json::from_value(env.payload).map_err(|e| format!("malformed hello: {e}"))?;
            if hello.protocol_version != PROTOCOL_VERSION {
                return Ok(Reply::Fatal(format!(
                    "protocol version {} not supported, server speaks {PROTOCOL_VERSION}",
                    hello.protocol_version
                )));
            }
            Ok(Reply::Send("hello".into(), serde_json::to_value(&*state.hello).expect("hello serializes")))
        }
        "command" => {
            let ack = match serde_json::from_value::<SessionCommand>(env.payload.clone()) {
                Ok(cmd) => {
                    let (tx, rx) = oneshot::channel();
                    if state.commands.send(EngineMsg::Command(cmd, tx)).is_err() {
                        Ack::reject(None, "engine stopped")
                    } else {
                        rx.await.unwrap_or_else(|_| Ack::reject(None, "engine stopped"))
                    }
                }
                Err(e) => {
                    let kind = env.payload.get("kind").and_then(|k| k.as_str());
                    Ack::reject(kind, format!("malformed payload: {e}"))
                }
            };
            let ack = Ack {
                command_seq: env.seq,
                ..ack
            };
            Ok(Reply::Send("ack".into(), serde_json::to_value(&ack).expect("ack serializes")))
        }
        other => Err(format!("unknown message type `{other}`")),
    }
}

async fn run_session(socket: WebSocket, state: AppState) {
    let (mut tx, mut rx) = socket.split();
    let (out_tx, mut out_rx) = tokio::sync::mpsc::unbounded_channel::<(String, serde_json::Value)>();
    let mut telemetry = state.telemetry.clone();
    telemetry.mark_unchanged();

    let writer = tokio::spawn(async move {
        let mut seq: u64 = 0;
        let wrap = |kind: &str, seq: u64, payload: serde_json::Value| {
            Envelope {
                kind: kind.into(),
                seq,
                payload,
            }
            .to_text()
        };
        loop {
            tokio::select! {
                msg = out_rx.recv() => match msg {
                    Some((kind, payload)) => {
                        seq += 1;
                        let text = wrap(&kind, seq, payload);
                        if tx.send(Message::Text(text.into())).await.is_err() {
                            break;
                        }
                    }
                    None => break,
                },
                changed = telemetry.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    // latest wins: frames produced while this client lagged are skipped
                    let frame = telemetry.borrow_and_update().clone();
                    if let Some(payload) = frame {
                        seq += 1;
                        let text = format!(r#"{{"type":"telemetry","seq":{seq},"payload":{payload}}}"#);
                        if tx.send(Message::Text(text.into())).await.is_err() {
                            break;
                        }
                    }
                }
            }
        }
        let _ = tx.close().await;
    });

    let _ = out_tx.send((
        "hello".into(),
        serde_json::to_value(&*state.hello).expect("hello serializes"),
    ));
    while let Some(Ok(msg)) = rx.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        match handle_text(&text, &state).await {
            Reply::Send(kind, payload) => {
                let _ = out_tx.send((kind, payload));
            }
            Reply::Error(reason) => {
                let _ = out_tx.send(("error".into(), serde_json::json!({ "reason": reason })));
            }
            Reply::Fatal(reason) => {
                let _ = out_tx.send(("error".into(), serde_json::json!({ "reason": reason })));
                break;
            }
        }
    }
    let _ = state.commands.send(EngineMsg::Disconnect);
    drop(out_tx);
    let _ = writer.await;
}
