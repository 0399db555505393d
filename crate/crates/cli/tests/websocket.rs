use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};
use wmpc::harness::parse_scenario;
use wmpc_cli::serve::{spawn, ServerHandle};

const SCENARIO: &str = r#"{
  "robot": {"link_lengths": [1.0, 0.8], "spheres": [{"link": 1, "fraction": 1.0, "radius": 0.05}]},
  "world": [{"kind": "sphere", "center": [-1.5, -1.0], "radius": 0.1}],
  "start": [0.0, 0.0],
  "waypoints": [{"joint": [0.4, 0.3]}],
  "params": {"h": H}
}"#;

struct Client {
    ws: WebSocket<TcpStream>,
}

impl Client {
    fn connect(server: &ServerHandle) -> Self {
        let stream = TcpStream::connect(server.local_addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        let (ws, _) = tungstenite::client(format!("ws://{}/", server.local_addr()), stream).unwrap();
        Self { ws }
    }

    fn recv(&mut self) -> Value {
        loop {
            match self.ws.read().unwrap() {
                Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
                Message::Close(_) => panic!("closed"),
                _ => {}
            }
        }
    }

    fn recv_type(&mut self, kind: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(10);
        while Instant::now() < deadline {
            let v = self.recv();
            if v["type"] == kind {
                return v;
            }
        }
        panic!("no {kind} message");
    }

    fn send(&mut self, v: Value) {
        self.ws.send(Message::text(v.to_string())).unwrap();
    }

    /// Sends a command and returns its reply, skipping frames in between.
    fn command(&mut self, v: Value) -> Value {
        self.send(v);
        loop {
            let r = self.recv();
            if r["type"] != "frame" {
                return r;
            }
        }
    }
}

fn server_with_step(h: f64) -> ServerHandle {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    spawn(listener, parse_scenario(&SCENARIO.replace("H", &h.to_string())).unwrap(), 30.0).unwrap()
}

fn server() -> ServerHandle {
    server_with_step(0.1)
}

#[test]
fn hello_then_frames() {
    let server = server();
    let mut c = Client::connect(&server);
    let hello = c.recv();
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["scenario"]["N_max"], 20);
    assert_eq!(hello["scenario"]["h"], 0.1);
    assert_eq!(hello["scenario"]["waypoints"], json!([[0.4, 0.3]]));
    assert_eq!(hello["scenario"]["world"][0]["kind"], "sphere");
    let a = c.recv_type("frame");
    let b = c.recv_type("frame");
    assert!(b["n"].as_u64() > a["n"].as_u64());
    for key in ["t", "q", "horizon", "plan", "world", "waypoints", "cursor", "final_mode", "status", "metrics_partial"] {
        assert!(!a[key].is_null(), "{key}");
    }
    assert_eq!(a["plan"].as_array().unwrap().len() as u64, a["horizon"]["N"].as_u64().unwrap());
    server.shutdown();
}

#[test]
fn frame_rate_is_capped() {
    let server = server_with_step(0.02);
    let mut c = Client::connect(&server);
    c.recv_type("hello");
    let first = c.recv_type("frame");
    let start = Instant::now();
    let mut count = 0;
    while start.elapsed() < Duration::from_secs(1) {
        c.recv_type("frame");
        count += 1;
    }
    // Planning runs at 50 Hz; frames are limited to 30 per second.
    assert!(count <= 32, "{count} frames");
    let last = c.recv_type("frame");
    assert!(last["n"].as_u64().unwrap() - first["n"].as_u64().unwrap() > count);
    server.shutdown();
}

#[test]
fn moving_the_goal_resets_horizons() {
    let server = server();
    let mut c = Client::connect(&server);
    c.recv_type("hello");
    // Let the arm settle near the first goal.
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let f = c.recv_type("frame");
        if f["final_mode"] == true && f["horizon"]["N"].as_u64() < Some(20) {
            break;
        }
        assert!(Instant::now() < deadline, "never entered final mode");
    }
    let ack = c.command(json!({"type": "move_goal", "payload": {"joint": [1.6, -0.8]}}));
    assert_eq!(ack["type"], "ack", "{ack}");
    assert_eq!(ack["command"], "move_goal");
    let n_ack = ack["n"].as_u64().unwrap();
    let mut reset = false;
    for _ in 0..5 {
        let f = c.recv_type("frame");
        if f["n"].as_u64().unwrap() >= n_ack && f["horizon"]["N"] == f["horizon"]["N_max"] {
            assert_eq!(f["waypoints"], json!([[1.6, -0.8]]));
            reset = true;
            break;
        }
    }
    assert!(reset);
    server.shutdown();
}

#[test]
fn clients_see_the_same_frames() {
    let server = server();
    let mut a = Client::connect(&server);
    let mut b = Client::connect(&server);
    a.recv_type("hello");
    b.recv_type("hello");
    let mut from_a = std::collections::HashMap::new();
    for _ in 0..20 {
        let f = a.recv_type("frame");
        from_a.insert(f["n"].as_u64().unwrap(), f);
    }
    let mut common = 0;
    for _ in 0..20 {
        let f = b.recv_type("frame");
        if let Some(g) = from_a.get(&f["n"].as_u64().unwrap()) {
            assert_eq!(g, &f);
            common += 1;
        }
    }
    assert!(common > 0);
    server.shutdown();
}

#[test]
fn pause_resume_and_reset() {
    let server = server();
    let mut c = Client::connect(&server);
    c.recv_type("hello");
    c.recv_type("frame");
    let ack = c.command(json!({"type": "pause"}));
    assert_eq!(ack["type"], "ack");
    let paused_at = ack["n"].as_u64().unwrap();
    // Frames already queued may still arrive; none newer than the pause.
    std::thread::sleep(Duration::from_millis(200));
    c.ws.get_ref().set_read_timeout(Some(Duration::from_millis(300))).unwrap();
    loop {
        match c.ws.read() {
            Ok(Message::Text(t)) => {
                let f: Value = serde_json::from_str(t.as_str()).unwrap();
                assert!(f["n"].as_u64().unwrap() < paused_at);
            }
            Ok(_) => {}
            Err(_) => break,
        }
    }
    c.ws.get_ref().set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    assert_eq!(c.command(json!({"type": "resume"}))["type"], "ack");
    let f = c.recv_type("frame");
    assert!(f["n"].as_u64().unwrap() >= paused_at);

    c.command(json!({"type": "pause"}));
    let ack = c.command(json!({"type": "reset"}));
    assert_eq!(ack["type"], "ack");
    assert_eq!(ack["n"], 0);
    c.command(json!({"type": "resume"}));
    let f = c.recv_type("frame");
    assert!(f["n"].as_u64().unwrap() < 5, "{}", f["n"]);
    assert_eq!(f["metrics_partial"]["steps"].as_u64().unwrap(), f["n"].as_u64().unwrap() + 1);
    server.shutdown();
}

#[test]
fn bad_commands_get_errors_and_keep_the_connection() {
    let server = server();
    let mut c = Client::connect(&server);
    c.recv_type("hello");
    for bad in [
        "not json".to_string(),
        json!({"type": "fly"}).to_string(),
        json!({"payload": {}}).to_string(),
        json!({"type": "move_goal", "payload": {"cartesian": [9.0, 9.0]}}).to_string(),
        json!({"type": "move_obstacle", "payload": {"index": 7, "position": [0.0, 0.0]}}).to_string(),
    ] {
        c.ws.send(Message::text(bad.clone())).unwrap();
        let r = loop {
            let r = c.recv();
            if r["type"] != "frame" {
                break r;
            }
        };
        assert_eq!(r["type"], "error", "{bad}: {r}");
        assert!(!r["message"].as_str().unwrap().is_empty());
    }
    // Top-level payload fields are accepted too.
    let ack = c.command(json!({"type": "move_obstacle", "index": 0, "position": [-1.4, -1.1]}));
    assert_eq!(ack["type"], "ack", "{ack}");
    let f = c.recv_type("frame");
    assert_eq!(f["world"][0]["center"], json!([-1.4, -1.1]));
    server.shutdown();
}

#[test]
fn invalid_frame_rate_rejected() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    assert!(spawn(listener, parse_scenario(&SCENARIO.replace("H", "0.1")).unwrap(), 60.0).is_err());
}
