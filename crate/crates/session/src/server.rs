//! Websocket front end.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, oneshot, watch};
use tokio_tungstenite::tungstenite::Message;

use crate::control::{control_loop, Catalog, Command, LoopConfig, Mailbox, Session, Shared};
use crate::protocol::{ClientMessage, ServerMessage, StateFrame, SummaryMsg};

#[derive(Debug, Clone, Copy)]
pub struct ServeConfig {
    pub frame_hz: f64,
    /// Simulated seconds per wall second.
    pub speed: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            frame_hz: 30.0,
            speed: 1.0,
        }
    }
}

/// A bound session: control thread plus accept loop.
pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
    commands: mpsc::Sender<Command>,
    frames: watch::Receiver<Arc<StateFrame>>,
    summaries: broadcast::Sender<SummaryMsg>,
    frame_period: Duration,
    control: Option<JoinHandle<()>>,
}

impl Server {
    /// Opens `initial` from the catalog, starts the control thread and
    /// binds `addr`. Port 0 picks a free port.
    pub async fn bind(catalog: Catalog, initial: &str, addr: SocketAddr, cfg: ServeConfig) -> Result<Self, String> {
        if !(cfg.frame_hz > 0.0 && cfg.speed > 0.0) {
            return Err("frame rate and speed must be positive".into());
        }
        let session = Session::new(catalog, initial)?;
        let listener = TcpListener::bind(addr).await.map_err(|e| e.to_string())?;
        let shared = Arc::new(Shared {
            mailbox: Mailbox::default(),
            clients: AtomicUsize::new(0),
            stop: AtomicBool::new(false),
            obstacle_count: AtomicUsize::new(session.sim.obstacles.len()),
        });
        let (commands, rx) = mpsc::channel();
        let (frame_tx, frames) = watch::channel(Arc::new(session.frame()));
        let (summaries, _) = broadcast::channel(16);
        let loop_cfg = LoopConfig {
            speed: cfg.speed,
            command_tick: 1.0 / cfg.frame_hz,
        };
        let control = {
            let shared = shared.clone();
            let summaries = summaries.clone();
            std::thread::Builder::new()
                .name("control".into())
                .spawn(move || control_loop(session, loop_cfg, shared, rx, frame_tx, summaries))
                .map_err(|e| e.to_string())?
        };
        Ok(Self {
            listener,
            shared,
            commands,
            frames,
            summaries,
            frame_period: Duration::from_secs_f64(1.0 / cfg.frame_hz),
            control: Some(control),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Accepts clients until the task is dropped.
    pub async fn run(self) {
        loop {
            let Ok((stream, _)) = self.listener.accept().await else {
                continue;
            };
            let client = Client {
                shared: self.shared.clone(),
                commands: self.commands.clone(),
                frames: self.frames.clone(),
                summaries: self.summaries.subscribe(),
                frame_period: self.frame_period,
            };
            tokio::spawn(client.serve(stream));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(h) = self.control.take() {
            let _ = h.join();
        }
    }
}

struct Client {
    shared: Arc<Shared>,
    commands: mpsc::Sender<Command>,
    frames: watch::Receiver<Arc<StateFrame>>,
    summaries: broadcast::Receiver<SummaryMsg>,
    frame_period: Duration,
}

impl Client {
    fn send(&self, cmd: Command) {
        let _ = self.commands.send(cmd);
    }

    /// Handles one text message; `Some` is the reply.
    async fn handle(&self, text: &str, driven: &mut BTreeSet<u32>) -> Option<ServerMessage> {
        let error = |message: String| Some(ServerMessage::Error { message });
        match ClientMessage::parse(text) {
            Err(e) => error(e),
            Ok(ClientMessage::Obstacle { id, x, y, z }) => {
                let count = self.shared.obstacle_count.load(Ordering::Acquire);
                if id as usize >= count {
                    return error(format!("no obstacle {id}"));
                }
                driven.insert(id);
                self.shared.mailbox.post(id, [x, y, z]);
                None
            }
            Ok(ClientMessage::Reset) => {
                self.send(Command::Reset);
                None
            }
            Ok(ClientMessage::Load { scenario }) => {
                let (reply, rx) = oneshot::channel();
                self.send(Command::Load { name: scenario, reply });
                match rx.await {
                    Ok(Ok(())) => None,
                    Ok(Err(e)) => error(e),
                    Err(_) => error("session closed".into()),
                }
            }
        }
    }

    async fn serve(self, stream: TcpStream) {
        let Ok(ws) = tokio_tungstenite::accept_async(stream).await else {
            return;
        };
        self.shared.clients.fetch_add(1, Ordering::AcqRel);
        let (mut tx, mut rx) = ws.split();
        let mut driven = BTreeSet::new();
        let mut frames = self.frames.clone();
        let mut summaries = self.summaries.resubscribe();
        let mut ticker = tokio::time::interval(self.frame_period);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            let out = tokio::select! {
                _ = ticker.tick() => {
                    let frame = (**frames.borrow_and_update()).clone();
                    Some(ServerMessage::State(frame))
                }
                s = summaries.recv() => match s {
                    Ok(s) => Some(ServerMessage::Summary(s)),
                    Err(broadcast::error::RecvError::Lagged(_)) => None,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                m = rx.next() => match m {
                    Some(Ok(Message::Text(text))) => self.handle(text.as_str(), &mut driven).await,
                    Some(Ok(Message::Binary(_))) => Some(ServerMessage::Error {
                        message: "malformed message: expected JSON text".into(),
                    }),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => None,
                },
            };
            if let Some(msg) = out {
                if tx.send(Message::text(msg.to_json())).await.is_err() {
                    break;
                }
            }
        }
        if !driven.is_empty() {
            self.send(Command::Freeze(driven.into_iter().collect()));
        }
        self.shared.clients.fetch_sub(1, Ordering::AcqRel);
    }
}
