//! Session service: `POST /sessions`, `GET /sessions/{id}/log`,
//! `GET /healthz` and the `/sessions/{id}/ws` stream.
//!
//! Each session runs in its own task, ticking in lockstep with the wall
//! clock. Client frames are queued to that task and applied between ticks
//! in arrival order. If the task falls behind, the simulation is delayed,
//! never fast-forwarded.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::MissedTickBehavior;

use rvc_core::protocol::{ErrorCode, ServerMessage};
use rvc_core::telemetry::encode;
use rvc_core::{Scenario, Session, SimConfig};

use crate::exit;
use crate::ServeArgs;

enum Command {
    /// A client text frame and where to send the replies meant only for that client.
    Text(String, mpsc::UnboundedSender<String>),
    FetchLog(oneshot::Sender<Result<Vec<u8>, ServerMessage>>),
    /// Close the trial and write its log; reply when done.
    Shutdown(oneshot::Sender<()>),
}

#[derive(Clone)]
struct Handle {
    commands: mpsc::UnboundedSender<Command>,
    frames: broadcast::Sender<String>,
}

struct AppState {
    scenario: Scenario,
    config: SimConfig,
    log_dir: PathBuf,
    sessions: Mutex<HashMap<String, Handle>>,
}

type Shared = Arc<AppState>;

pub fn serve(args: ServeArgs) -> u8 {
    let (scenario, config) = match args.inputs.load() {
        Ok(v) => v,
        Err(f) => {
            eprintln!("rvc: {}", f.message);
            return f.code;
        }
    };
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    rt.block_on(async move {
        let addr = std::net::SocketAddr::new(args.bind, args.port);
        let listener = match tokio::net::TcpListener::bind(addr).await {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => {
                eprintln!("rvc: {addr} is already in use");
                return exit::PORT_IN_USE;
            }
            Err(e) => {
                eprintln!("rvc: cannot bind {addr}: {e}");
                return exit::ERROR;
            }
        };
        let state = Arc::new(AppState {
            scenario,
            config,
            log_dir: args.log_dir,
            sessions: Mutex::new(HashMap::new()),
        });
        let app = Router::new()
            .route("/healthz", get(|| async { "ok" }))
            .route("/sessions", post(create_session))
            .route("/sessions/{id}/log", get(fetch_log))
            .route("/sessions/{id}/ws", get(connect))
            .with_state(state.clone());
        println!("listening on {}", listener.local_addr().expect("bound"));
        let server = axum::serve(listener, app);
        tokio::select! {
            r = server => {
                if let Err(e) = r {
                    eprintln!("rvc: {e}");
                    return exit::ERROR;
                }
            }
            _ = tokio::signal::ctrl_c() => {
                flush_all(&state).await;
                println!("shut down");
            }
        }
        exit::DONE
    })
}

async fn flush_all(state: &Shared) {
    let handles: Vec<Handle> = state.sessions.lock().expect("lock").values().cloned().collect();
    for h in handles {
        let (tx, rx) = oneshot::channel();
        if h.commands.send(Command::Shutdown(tx)).is_ok() {
            let _ = rx.await;
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    scenario: Option<serde_json::Value>,
    config: Option<serde_json::Value>,
    #[serde(default)]
    seed: u64,
}

fn bad_request(kind: &str, fields: Vec<String>, message: String) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": kind, "fields": fields, "message": message })),
    )
        .into_response()
}

async fn create_session(State(state): State<Shared>, body: Bytes) -> Response {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return bad_request("bad_request", vec![], e.to_string()),
        }
    };
    let scenario = match req.scenario {
        None => state.scenario.clone(),
        Some(v) => match Scenario::from_json(&v.to_string()) {
            Ok(s) => s,
            Err(e) => return bad_request("invalid_scenario", e.fields(), e.to_string()),
        },
    };
    let config = match req.config {
        None => state.config.clone(),
        Some(v) => match SimConfig::from_json(&v.to_string()) {
            Ok(c) => c,
            Err(e) => return bad_request("invalid_config", vec![], e.to_string()),
        },
    };
    let session = match Session::new(scenario, config, req.seed) {
        Ok(s) => s,
        Err(e) => return bad_request("invalid_session", vec![], e.to_string()),
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let step = session.sim().step();
    let (commands, rx) = mpsc::unbounded_channel();
    let (frames, _) = broadcast::channel(1024);
    let handle = Handle { commands, frames };
    tokio::spawn(run_session(
        session,
        rx,
        handle.frames.clone(),
        state.log_dir.join(format!("{id}.rvcl")),
    ));
    state.sessions.lock().expect("lock").insert(id.clone(), handle);
    (StatusCode::CREATED, Json(json!({ "id": id, "step": step }))).into_response()
}

fn lookup(state: &Shared, id: &str) -> Option<Handle> {
    state.sessions.lock().expect("lock").get(id).cloned()
}

fn not_found() -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "error": "unknown_session" }))).into_response()
}

async fn fetch_log(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let Some(h) = lookup(&state, &id) else {
        return not_found();
    };
    let (tx, rx) = oneshot::channel();
    if h.commands.send(Command::FetchLog(tx)).is_err() {
        return not_found();
    }
    match rx.await {
        Ok(Ok(bytes)) => ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response(),
        Ok(Err(msg)) => (StatusCode::CONFLICT, msg.to_json()).into_response(),
        Err(_) => not_found(),
    }
}

async fn connect(State(state): State<Shared>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    match lookup(&state, &id) {
        Some(h) => ws.on_upgrade(move |socket| client(socket, h)),
        None => not_found(),
    }
}

async fn client(socket: WebSocket, handle: Handle) {
    let (mut sink, mut stream) = socket.split();
    let mut frames = handle.frames.subscribe();
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<String>();
    loop {
        let out = tokio::select! {
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if handle.commands.send(Command::Text(text.to_string(), reply_tx.clone())).is_err() {
                        break;
                    }
                    continue;
                }
                Some(Ok(Message::Binary(_))) => {
                    ServerMessage::error(ErrorCode::BadMessage, "expected a JSON text frame").to_json()
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
            Some(reply) = replies.recv() => reply,
            frame = frames.recv() => match frame {
                Ok(f) => f,
                // A slow client misses frames rather than stalling the session.
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
        };
        if sink.send(Message::Text(out.into())).await.is_err() {
            break;
        }
    }
}

fn write_log(session: &Session, path: &std::path::Path) {
    if let Some(dir) = path.parent() {
        let _ = std::fs::create_dir_all(dir);
    }
    if let Err(e) = std::fs::write(path, encode(session.sim().log())) {
        eprintln!("rvc: cannot write {}: {e}", path.display());
    }
}

async fn run_session(
    mut session: Session,
    mut commands: mpsc::UnboundedReceiver<Command>,
    frames: broadcast::Sender<String>,
    log_path: PathBuf,
) {
    let dt = Duration::from_secs_f64(session.sim().config().dt_s());
    let mut clock = tokio::time::interval(dt);
    clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut saved = false;
    let broadcast_all = |msgs: Vec<ServerMessage>| {
        for m in msgs {
            let _ = frames.send(m.to_json());
        }
    };
    loop {
        tokio::select! {
            // Queued client frames always go before the next tick.
            biased;
            cmd = commands.recv() => match cmd {
                Some(Command::Text(text, reply)) => {
                    for m in session.ingest_text(&text) {
                        match m {
                            ServerMessage::Event { .. } => broadcast_all(vec![m]),
                            other => {
                                let _ = reply.send(other.to_json());
                            }
                        }
                    }
                }
                Some(Command::FetchLog(reply)) => {
                    let _ = reply.send(session.fetch_log());
                }
                Some(Command::Shutdown(done)) => {
                    session.abort();
                    write_log(&session, &log_path);
                    let _ = done.send(());
                    return;
                }
                None => return,
            },
            _ = clock.tick(), if !session.finished() => broadcast_all(session.tick()),
        }
        if session.finished() && !saved {
            write_log(&session, &log_path);
            saved = true;
        }
    }
}
