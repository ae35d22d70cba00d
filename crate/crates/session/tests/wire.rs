use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safe_topp::sim::{Contact, ObstacleScript, ObstacleSpec, Scenario};
use safe_topp_session::{Catalog, ServeConfig, Server, ServerMessage, StateFrame, SummaryMsg};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn external_arm(start: [f64; 3]) -> Scenario {
    let mut sc = Scenario::arm_pursuit(0);
    sc.name = "ext".into();
    sc.n = 40;
    sc.m = 12;
    sc.t_max = 12.0;
    sc.obstacles = vec![ObstacleSpec {
        script: ObstacleScript::External { start },
        v_max: 1.6,
        radius: 0.1,
        seed: 0,
    }];
    sc
}

fn catalog() -> Catalog {
    let mut c = Catalog::new(1).with_presets();
    c.insert(external_arm([3.0, 3.0, 0.0]), None);
    let mut pursuit = Scenario::arm_pursuit(2);
    pursuit.name = "pursuit".into();
    pursuit.n = 40;
    pursuit.m = 12;
    c.insert(pursuit, None);
    c
}

async fn start(initial: &str, cfg: ServeConfig) -> SocketAddr {
    let server = Server::bind(catalog(), initial, "127.0.0.1:0".parse().unwrap(), cfg).await.unwrap();
    let addr = server.local_addr();
    tokio::spawn(server.run());
    addr
}

async fn connect(addr: SocketAddr) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap().0
}

async fn next(ws: &mut Ws) -> ServerMessage {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn next_frame(ws: &mut Ws) -> StateFrame {
    loop {
        if let ServerMessage::State(f) = next(ws).await {
            return f;
        }
    }
}

async fn next_error(ws: &mut Ws) -> String {
    loop {
        if let ServerMessage::Error { message } = next(ws).await {
            return message;
        }
    }
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::text(text)).await.unwrap();
}

async fn obstacle(ws: &mut Ws, id: u32, p: [f64; 3]) {
    let text = format!(r#"{{"type":"obstacle","id":{id},"x":{},"y":{},"z":{}}}"#, p[0], p[1], p[2]);
    send(ws, &text).await;
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn pos(f: &StateFrame, id: usize) -> [f64; 3] {
    let o = &f.obstacles[id];
    [o.x, o.y, o.z]
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn frames_arrive_at_the_frame_rate() {
    let addr = start("ext", ServeConfig::default()).await;
    let mut ws = connect(addr).await;
    let first = next_frame(&mut ws).await;
    assert_eq!(first.scenario, "ext");
    assert!(!first.spheres.is_empty());
    assert_eq!(first.obstacles.len(), 1);
    let t0 = std::time::Instant::now();
    let mut last_t = first.t;
    let mut count = 0;
    while t0.elapsed() < Duration::from_millis(600) {
        let f = next_frame(&mut ws).await;
        assert!(f.t >= last_t);
        last_t = f.t;
        count += 1;
    }
    // 30 Hz over 0.6 s; the control clock runs at real time.
    assert!((14..=22).contains(&count), "{count} frames");
    assert!(last_t > 0.3 && last_t < 0.9, "{last_t}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn teleport_request_moves_one_tick_of_v_max() {
    let cfg = ServeConfig {
        frame_hz: 1.0 / 0.033,
        speed: 4.0,
    };
    let addr = start("ext", cfg).await;
    let mut ws = connect(addr).await;
    let before = pos(&next_frame(&mut ws).await, 0);
    obstacle(&mut ws, 0, [before[0] + 10.0, before[1], before[2]]).await;
    let mut settled = 0;
    let mut last = before;
    while settled < 10 {
        let p = pos(&next_frame(&mut ws).await, 0);
        settled = if p == last && p != before { settled + 1 } else { 0 };
        last = p;
    }
    let moved = dist(before, last);
    assert!((moved - 0.0528).abs() < 1e-9, "{moved}");
    assert!((last[0] - before[0] - 0.0528).abs() < 1e-9);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_messages_get_errors_and_the_session_goes_on() {
    let addr = start("ext", ServeConfig::default()).await;
    let mut ws = connect(addr).await;
    let t0 = next_frame(&mut ws).await.t;
    send(&mut ws, "not json").await;
    assert!(next_error(&mut ws).await.starts_with("malformed"));
    send(&mut ws, r#"{"type":"jump"}"#).await;
    assert!(next_error(&mut ws).await.starts_with("malformed"));
    obstacle(&mut ws, 7, [0.0; 3]).await;
    assert_eq!(next_error(&mut ws).await, "no obstacle 7");
    send(&mut ws, r#"{"type":"load","scenario":"missing"}"#).await;
    assert!(next_error(&mut ws).await.contains("unknown scenario"));
    ws.send(Message::binary(vec![1, 2, 3])).await.unwrap();
    assert!(next_error(&mut ws).await.starts_with("malformed"));
    let mut f = next_frame(&mut ws).await;
    while f.t <= t0 {
        f = next_frame(&mut ws).await;
    }
    assert_eq!(f.scenario, "ext");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reset_and_load_restart_the_episode() {
    let cfg = ServeConfig { frame_hz: 30.0, speed: 4.0 };
    let addr = start("ext", cfg).await;
    let mut ws = connect(addr).await;
    let mut f = next_frame(&mut ws).await;
    while f.t < 0.5 {
        f = next_frame(&mut ws).await;
    }
    send(&mut ws, r#"{"type":"reset"}"#).await;
    let mut g = next_frame(&mut ws).await;
    while g.t >= f.t {
        g = next_frame(&mut ws).await;
    }
    assert!(g.t < 0.4, "{}", g.t);
    send(&mut ws, r#"{"type":"load","scenario":"car-race"}"#).await;
    let mut h = next_frame(&mut ws).await;
    while h.scenario != "car-race" {
        h = next_frame(&mut ws).await;
    }
    assert_eq!(h.joints.len(), 1);
    assert!(h.t < 0.5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn disconnect_freezes_the_driven_obstacle() {
    let cfg = ServeConfig { frame_hz: 30.0, speed: 2.0 };
    let addr = start("pursuit", cfg).await;
    let mut a = connect(addr).await;
    let p0 = pos(&next_frame(&mut a).await, 0);
    for _ in 0..5 {
        let f = next_frame(&mut a).await;
        let p = pos(&f, 0);
        obstacle(&mut a, 0, [p[0] + 5.0, p[1], p[2]]).await;
    }
    let mut b = connect(addr).await;
    a.close(None).await.unwrap();
    drop(a);
    tokio::time::sleep(Duration::from_millis(200)).await;
    // Frames queued while `a` was still driving.
    for _ in 0..10 {
        next_frame(&mut b).await;
    }
    let first = pos(&next_frame(&mut b).await, 0);
    assert!(first[0] > p0[0]);
    for _ in 0..15 {
        let f = next_frame(&mut b).await;
        assert_eq!(pos(&f, 0), first, "t = {}", f.t);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn episode_end_sends_a_summary() {
    let cfg = ServeConfig { frame_hz: 30.0, speed: 20.0 };
    let addr = start("ext", cfg).await;
    let mut ws = connect(addr).await;
    let summary: SummaryMsg = loop {
        if let ServerMessage::Summary(s) = next(&mut ws).await {
            break s;
        }
    };
    assert_eq!(summary.scenario, "ext");
    assert!(summary.arrival_time.is_some());
    assert_eq!(summary.violations, 0);
    let f = next_frame(&mut ws).await;
    assert_eq!(f.stage, f.n);
    assert!(f.stopped);
}

/// Random drags, flicks and lunges at the robot. Every pair of frames must
/// respect the obstacle's speed bound and no frame may show a moving
/// contact.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn fuzzing_client_cannot_break_the_speed_bound() {
    let cfg = ServeConfig { frame_hz: 60.0, speed: 4.0 };
    let addr = start("ext", cfg).await;
    let mut ws = connect(addr).await;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        send(&mut ws, r#"{"type":"reset"}"#).await;
        let mut prev = next_frame(&mut ws).await;
        while prev.t > 0.2 {
            prev = next_frame(&mut ws).await;
        }
        let mut frames = 0;
        let summary = loop {
            let f = match next(&mut ws).await {
                ServerMessage::State(f) => f,
                ServerMessage::Summary(s) => break s,
                ServerMessage::Error { message } => panic!("{message}"),
            };
            frames += 1;
            assert_ne!(f.contact, Contact::Violation, "seed {seed} t {}", f.t);
            if f.t >= prev.t {
                let moved = dist(pos(&prev, 0), pos(&f, 0));
                assert!(moved <= 1.6 * (f.t - prev.t) + 1e-9, "{moved} in {}", f.t - prev.t);
            }
            let here = pos(&f, 0);
            let target = match rng.random_range(0..4) {
                0 => [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0],
                1 => {
                    let s = &f.spheres[rng.random_range(0..f.spheres.len())];
                    [s.x, s.y, s.z]
                }
                2 => [here[0] + rng.random_range(-0.05..0.05), here[1] + rng.random_range(-0.05..0.05), 0.0],
                _ => [0.0, 0.0, 0.0],
            };
            for _ in 0..rng.random_range(0..4) {
                obstacle(&mut ws, 0, target).await;
            }
            prev = f;
        };
        assert!(frames > 10);
        assert_eq!(summary.violations, 0, "seed {seed}");
        assert_eq!(summary.limit_violations, 0);
    }
}
