//! Live closed loop over WebSocket.
//!
//! One planning thread owns the session and runs at the sampling rate. Each
//! client gets a thread that reads commands and forwards them through a
//! bounded channel, and sends the newest frame from its slot. Slow clients
//! skip frames instead of stalling the planner.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};
use wmpc::harness::{EventAction, Scenario, Session, TraceRecord};

const COMMAND_QUEUE: usize = 32;
const POLL: Duration = Duration::from_millis(5);
const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

enum CommandKind {
    Edit(EventAction),
    Pause,
    Resume,
    Reset,
}

struct Command {
    kind: CommandKind,
    /// Iteration the command takes effect at, or a rejection message.
    reply: mpsc::Sender<Result<usize, String>>,
}

#[derive(Default)]
struct Slot {
    frame: Mutex<Option<Arc<String>>>,
}

struct Hub {
    clients: Mutex<Vec<Arc<Slot>>>,
    hello: Mutex<Arc<String>>,
    stop: AtomicBool,
}

impl Hub {
    fn publish(&self, text: String) {
        let text = Arc::new(text);
        for c in self.clients.lock().unwrap().iter() {
            *c.frame.lock().unwrap() = Some(text.clone());
        }
    }

    fn subscribe(&self) -> Arc<Slot> {
        let slot = Arc::new(Slot::default());
        self.clients.lock().unwrap().push(slot.clone());
        slot
    }

    fn unsubscribe(&self, slot: &Arc<Slot>) {
        self.clients.lock().unwrap().retain(|s| !Arc::ptr_eq(s, slot));
    }
}

/// Running aggregates shown alongside each frame.
#[derive(Debug, Default, Serialize)]
struct PartialMetrics {
    steps: usize,
    path_length: f64,
    planning_time_max: f64,
    planning_time_avg: f64,
    waypoint_pass_errors: Vec<f64>,
    min_clearance: Option<f64>,
    degraded_steps: usize,
}

impl PartialMetrics {
    fn update(&mut self, r: &TraceRecord) {
        let step: f64 = r.states[1].q.iter().zip(&r.states[0].q).map(|(a, b)| (a - b).powi(2)).sum();
        self.path_length += step.sqrt();
        self.planning_time_max = self.planning_time_max.max(r.solve_time);
        self.planning_time_avg = (self.planning_time_avg * self.steps as f64 + r.solve_time) / (self.steps + 1) as f64;
        self.steps += 1;
        if let Some(w) = &r.waypoint_passed {
            self.waypoint_pass_errors.push(w.error);
        }
        if let Some(d) = r.min_distance {
            self.min_clearance = Some(self.min_clearance.map_or(d, |c| c.min(d)));
        }
        if r.degraded {
            self.degraded_steps += 1;
        }
    }
}

fn hello_text(session: &Session) -> String {
    let s = session.scenario();
    let p = &s.params;
    json!({
        "type": "hello",
        "scenario": {
            "robot": s.robot,
            "start": s.start,
            "world": session.world().obstacles,
            "waypoints": session.planner().state().sequence.points,
            "h": p.model.h,
            "N_max": p.n_max,
            "eps": p.eps,
        }
    })
    .to_string()
}

fn frame_text(session: &Session, r: &TraceRecord, metrics: &PartialMetrics) -> String {
    json!({
        "type": "frame",
        "n": r.n,
        "t": r.t,
        "q": r.x0.q,
        "horizon": { "N_s": r.n_s, "N": r.n_horizon, "N_max": r.n_max },
        "plan": r.states.iter().map(|s| &s.q).collect::<Vec<_>>(),
        "world": session.world().obstacles,
        "waypoints": session.planner().state().sequence.points,
        "cursor": r.cursor,
        "final_mode": r.final_mode,
        "status": r.status,
        "degraded": r.degraded,
        "metrics_partial": metrics,
    })
    .to_string()
}

fn error_text(message: &str) -> String {
    json!({ "type": "error", "message": message }).to_string()
}

fn planning_loop(scenario: Scenario, hub: Arc<Hub>, rx: Receiver<Command>, max_fps: f64) {
    let h = Duration::from_secs_f64(scenario.params.model.h);
    let min_gap = Duration::from_secs_f64(1.0 / max_fps);
    let mut session = Session::new(scenario.clone()).expect("scenario validated at load");
    let mut metrics = PartialMetrics::default();
    let mut paused = false;
    let mut last_frame: Option<Instant> = None;
    *hub.hello.lock().unwrap() = Arc::new(hello_text(&session));

    let handle = |cmd: Command, session: &mut Session, metrics: &mut PartialMetrics, paused: &mut bool| {
        let result = match cmd.kind {
            CommandKind::Edit(action) => session.apply(&action).map(|_| ()).map_err(|e| e.to_string()),
            CommandKind::Pause => {
                *paused = true;
                Ok(())
            }
            CommandKind::Resume => {
                *paused = false;
                Ok(())
            }
            CommandKind::Reset => {
                *session = Session::new(scenario.clone()).expect("scenario validated at load");
                *metrics = PartialMetrics::default();
                Ok(())
            }
        };
        *hub.hello.lock().unwrap() = Arc::new(hello_text(session));
        let _ = cmd.reply.send(result.map(|()| session.iteration()));
    };

    while !hub.stop.load(Ordering::Relaxed) {
        let deadline = Instant::now() + h;
        if !paused {
            match session.step() {
                Ok(r) => {
                    metrics.update(&r);
                    if last_frame.is_none_or(|t| t.elapsed() >= min_gap) {
                        hub.publish(frame_text(&session, &r, &metrics));
                        last_frame = Some(Instant::now());
                    }
                }
                Err(e) => {
                    log::error!("planning failed: {e}");
                    hub.publish(error_text(&format!("planning failed: {e}; paused")));
                    paused = true;
                }
            }
        }
        // Commands are applied between iterations while waiting for the next tick.
        loop {
            let now = Instant::now();
            let wait = if paused { POLL } else { deadline.saturating_duration_since(now) };
            if hub.stop.load(Ordering::Relaxed) || (!paused && wait.is_zero()) {
                break;
            }
            match rx.recv_timeout(wait.min(POLL * 20)) {
                Ok(cmd) => handle(cmd, &mut session, &mut metrics, &mut paused),
                Err(RecvTimeoutError::Timeout) => {
                    if paused {
                        continue;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }
}

fn parse_command(text: &str) -> Result<(String, CommandKind), String> {
    let msg: Value = serde_json::from_str(text).map_err(|e| format!("invalid json: {e}"))?;
    let kind = msg
        .get("type")
        .and_then(Value::as_str)
        .ok_or("message needs a string `type`")?
        .to_string();
    let cmd = match kind.as_str() {
        "pause" => CommandKind::Pause,
        "resume" => CommandKind::Resume,
        "reset" => CommandKind::Reset,
        "move_obstacle" | "move_waypoint" | "move_goal" => {
            let payload = match msg.get("payload") {
                Some(p) => p.clone(),
                None => {
                    let mut rest = msg.as_object().cloned().unwrap_or_default();
                    rest.remove("type");
                    Value::Object(rest)
                }
            };
            CommandKind::Edit(EventAction::parse(&kind, &payload).map_err(|e| e.to_string())?)
        }
        other => return Err(format!("unknown command `{other}`")),
    };
    Ok((kind, cmd))
}

fn respond(text: &str, commands: &SyncSender<Command>) -> String {
    let (name, kind) = match parse_command(text) {
        Ok(c) => c,
        Err(e) => return error_text(&e),
    };
    let (reply, answer) = mpsc::channel();
    match commands.try_send(Command { kind, reply }) {
        Ok(()) => {}
        Err(TrySendError::Full(_)) => return error_text("command queue full"),
        Err(TrySendError::Disconnected(_)) => return error_text("planner stopped"),
    }
    match answer.recv_timeout(REPLY_TIMEOUT) {
        Ok(Ok(n)) => json!({ "type": "ack", "command": name, "n": n }).to_string(),
        Ok(Err(e)) => error_text(&format!("{name} rejected: {e}")),
        Err(_) => error_text(&format!("{name}: no reply from planner")),
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn client_loop(stream: TcpStream, hub: Arc<Hub>, commands: SyncSender<Command>) {
    let peer = stream.peer_addr().ok();
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let mut ws: WebSocket<TcpStream> = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("handshake with {peer:?} failed: {e}");
            return;
        }
    };
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let slot = hub.subscribe();
    let hello = hub.hello.lock().unwrap().clone();
    let mut alive = ws.send(Message::text(hello.as_str())).is_ok();
    log::info!("client {peer:?} connected");
    while alive && !hub.stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(t)) => {
                let reply = respond(t.as_str(), &commands);
                alive = ws.send(Message::text(reply)).is_ok();
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => break,
        }
        let frame = slot.frame.lock().unwrap().take();
        if let Some(f) = frame {
            alive = alive && ws.send(Message::text(f.as_str())).is_ok();
        }
    }
    hub.unsubscribe(&slot);
    let _ = ws.close(None);
    let _ = ws.flush();
    log::info!("client {peer:?} disconnected");
}

/// A server running in background threads.
pub struct ServerHandle {
    addr: SocketAddr,
    hub: Arc<Hub>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {
        self.hub.stop.store(true, Ordering::Relaxed);
        for t in self.threads {
            let _ = t.join();
        }
    }

    pub fn wait(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

pub fn spawn(listener: TcpListener, scenario: Scenario, max_fps: f64) -> io::Result<ServerHandle> {
    if !(max_fps > 0.0 && max_fps <= 30.0) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "max_fps must be in (0, 30]"));
    }
    Session::new(scenario.clone()).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let hub = Arc::new(Hub {
        clients: Mutex::new(Vec::new()),
        hello: Mutex::new(Arc::new(String::new())),
        stop: AtomicBool::new(false),
    });
    let (tx, rx) = mpsc::sync_channel(COMMAND_QUEUE);
    let planner = {
        let hub = hub.clone();
        thread::spawn(move || planning_loop(scenario, hub, rx, max_fps))
    };
    // Clients must not see an empty hello.
    while hub.hello.lock().unwrap().is_empty() {
        thread::sleep(Duration::from_millis(1));
    }
    let acceptor = {
        let hub = hub.clone();
        thread::spawn(move || {
            let mut clients = Vec::new();
            while !hub.stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let (hub, tx) = (hub.clone(), tx.clone());
                        clients.push(thread::spawn(move || client_loop(stream, hub, tx)));
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                    Err(e) => log::warn!("accept failed: {e}"),
                }
                clients.retain(|c: &JoinHandle<()>| !c.is_finished());
            }
            for c in clients {
                let _ = c.join();
            }
        })
    };
    Ok(ServerHandle {
        addr,
        hub,
        threads: vec![planner, acceptor],
    })
}

pub fn serve_forever(scenario: Scenario, port: u16, max_fps: f64) -> io::Result<()> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let handle = spawn(listener, scenario, max_fps)?;
    log::info!("listening on ws://{}", handle.local_addr());
    eprintln!("listening on ws://{}", handle.local_addr());
    handle.wait();
    Ok(())
}
