//! Live simulator and impedance loop streamed to WebSocket clients.
//!
//! Every connection receives a `hello` frame, then `state` frames at
//! `frame_hz` taken from the control loop. Clients send `pose`, `mode` and
//! `reset` messages; a malformed message is answered with an `error` frame to
//! that client only.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{ensure, Result};
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use stiffness_core::runtime::{
    Controller, ImpedanceConfig, Mode, PoseMailbox, StiffnessPolicy, TickRecord,
};
use stiffness_core::sim::Environment;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};
use tokio::time::MissedTickBehavior;

pub const PROTOCOL: &str = "stiffness-copilot/1";
pub const DEFAULT_FRAME_HZ: f64 = 30.0;
const BROADCAST_CAPACITY: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Pose { p: [f64; 3] },
    Mode { value: Mode },
    Reset {},
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigen {
    #[serde(rename = "Q")]
    pub q: [f64; 9],
    pub lambda: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub act_pos: [f64; 3],
    pub force: [f64; 3],
    #[serde(rename = "K")]
    pub k: [f64; 6],
    #[serde(rename = "D")]
    pub d: [f64; 6],
    pub eig: Eigen,
    pub mode: Mode,
    pub stop: bool,
}

impl From<&TickRecord> for StateFrame {
    fn from(r: &TickRecord) -> Self {
        Self {
            tick: r.tick,
            act_pos: r.act_pos,
            force: r.force,
            k: r.k,
            d: r.d,
            eig: Eigen {
                q: r.eig_q,
                lambda: r.eig_lambda,
            },
            mode: r.mode,
            stop: r.stop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Hello {
        protocol: String,
        env: Environment,
        mode: Mode,
        rate_hz: f64,
        frame_hz: f64,
        copilot: bool,
    },
    State(StateFrame),
    Error {
        message: String,
    },
}

impl ServerMessage {
    fn text(&self) -> Utf8Bytes {
        serde_json::to_string(self)
            .expect("server messages serialize")
            .into()
    }
}

#[derive(Clone)]
pub struct ServeConfig {
    pub env: Environment,
    pub impedance: ImpedanceConfig,
    pub mode: Mode,
    pub policy: Option<Arc<dyn StiffnessPolicy>>,
    pub frame_hz: f64,
}

enum Control {
    Mode(Mode),
    Reset,
}

/// Shared between the control loop and the connection handlers.
#[derive(Clone)]
pub struct Session {
    hello: Utf8Bytes,
    copilot: bool,
    mailbox: PoseMailbox,
    control: mpsc::UnboundedSender<Control>,
    frames: broadcast::Sender<Utf8Bytes>,
    latest: Arc<Mutex<Option<StateFrame>>>,
}

impl Session {
    /// Most recent state, updated once per control tick.
    pub fn latest(&self) -> Option<StateFrame> {
        self.latest
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Interprets one inbound text message.
    pub fn handle(&self, text: &str) -> Result<(), String> {
        let msg: ClientMessage =
            serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
        match msg {
            ClientMessage::Pose { p } => {
                if !p.iter().all(|v| v.is_finite()) {
                    return Err("pose must be finite".into());
                }
                self.mailbox.post(Vector3::from(p));
            }
            ClientMessage::Mode { value } => {
                if value == Mode::Copilot && !self.copilot {
                    return Err("copilot mode needs a model; start the service with --model".into());
                }
                self.send(Control::Mode(value))?;
            }
            ClientMessage::Reset {} => self.send(Control::Reset)?,
        }
        Ok(())
    }

    fn send(&self, c: Control) -> Result<(), String> {
        self.control
            .send(c)
            .map_err(|_| "control loop has stopped".to_string())
    }
}

/// Starts the control loop, paced to wall-clock time.
pub fn start(cfg: ServeConfig) -> Result<Session> {
    ensure!(
        cfg.frame_hz > 0.0 && cfg.frame_hz <= cfg.impedance.rate_hz,
        "frame rate must lie in (0, rate_hz]"
    );
    let mut ctl = Controller::new(cfg.impedance, cfg.env.clone(), cfg.mode, cfg.policy.clone())?;
    let every = (cfg.impedance.rate_hz / cfg.frame_hz).round().max(1.0) as u64;
    let (control, mut control_rx) = mpsc::unbounded_channel();
    let (frames, _) = broadcast::channel(BROADCAST_CAPACITY);
    let session = Session {
        hello: ServerMessage::Hello {
            protocol: PROTOCOL.to_string(),
            env: cfg.env.clone(),
            mode: cfg.mode,
            rate_hz: cfg.impedance.rate_hz,
            frame_hz: cfg.impedance.rate_hz / every as f64,
            copilot: cfg.policy.is_some(),
        }
        .text(),
        copilot: cfg.policy.is_some(),
        mailbox: PoseMailbox::default(),
        control,
        frames: frames.clone(),
        latest: Arc::default(),
    };
    let mailbox = session.mailbox.clone();
    let latest = session.latest.clone();
    let period = Duration::from_secs_f64(cfg.impedance.period());

    tokio::spawn(async move {
        let mut clock = tokio::time::interval(period);
        clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            clock.tick().await;
            loop {
                match control_rx.try_recv() {
                    Ok(Control::Mode(m)) => {
                        if let Err(e) = ctl.set_mode(m) {
                            tracing::warn!("mode change rejected: {e}");
                        }
                    }
                    Ok(Control::Reset) => {
                        mailbox.clear();
                        if let Err(e) = ctl.reset() {
                            tracing::error!("reset failed: {e}");
                        }
                    }
                    Err(mpsc::error::TryRecvError::Empty) => break,
                    Err(mpsc::error::TryRecvError::Disconnected) => return,
                }
            }
            let record = match ctl.step(mailbox.latest()) {
                Ok(r) => r,
                Err(e) => {
                    tracing::error!("control tick failed: {e}");
                    mailbox.clear();
                    continue;
                }
            };
            let frame = StateFrame::from(&record);
            *latest.lock().unwrap_or_else(|e| e.into_inner()) = Some(frame.clone());
            if record.tick % every == 0 {
                // no receivers is fine
                let _ = frames.send(ServerMessage::State(frame).text());
            }
        }
    });
    Ok(session)
}

pub fn router(session: Session) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(session)
}

/// Serves on an already bound listener until the process exits.
pub async fn serve(listener: TcpListener, cfg: ServeConfig) -> Result<()> {
    let session = start(cfg)?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!("listening on ws://{addr}/ws");
    axum::serve(listener, router(session)).await?;
    Ok(())
}

async fn upgrade(ws: WebSocketUpgrade, State(session): State<Session>) -> Response {
    ws.on_upgrade(move |socket| client(socket, session))
}

async fn client(mut socket: WebSocket, session: Session) {
    let mut frames = session.frames.subscribe();
    if socket
        .send(Message::Text(session.hello.clone()))
        .await
        .is_err()
    {
        return;
    }
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text)).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => tracing::debug!("client lagged, dropped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if let Err(message) = session.handle(text.as_str()) {
                        let reply = ServerMessage::Error { message }.text();
                        if socket.send(Message::Text(reply)).await.is_err() {
                            return;
                        }
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    let reply = ServerMessage::Error { message: "binary messages are not supported".into() }.text();
                    if socket.send(Message::Text(reply)).await.is_err() {
                        return;
                    }
                }
                Some(Ok(_)) => {}
                Some(Err(_)) | None => return,
            },
        }
    }
}
