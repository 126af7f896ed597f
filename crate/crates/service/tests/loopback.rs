mod common;

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;
use std::time::{Duration, Instant};

use livervis_core::phantom::{abdomen_phantom, noisy_sphere};
use livervis_core::render::{Quat, RenderFrame, Vec3};
use livervis_service::client::{open_viewer, ClientError, SignalConnection, ViewerSession, ViewerStream};
use livervis_service::config::{ListenConfig, ServerConfig};
use livervis_service::protocol::{Axis, ControlOp, PoseUpdate, ServerMessage, StreamMode};
use livervis_service::service::Service;
use livervis_service::session::{SessionState, VolumeSource};
use livervis_service::signaling::{PeerState, Role, SignalMessage};
use tokio::time::timeout;

const W: u16 = 96;
const H: u16 = 72;

fn config(max_peers: usize, heartbeat_timeout_s: f64) -> ServerConfig {
    ServerConfig {
        max_peers,
        target_fps: 60.0,
        heartbeat_timeout_s,
        listen: ListenConfig { signaling: "127.0.0.1:0".into(), stream: "127.0.0.1:0".into() },
    }
}

fn library() -> Arc<dyn VolumeSource> {
    let sphere = noisy_sphere(24, 8.0, 0.8, 0.1, 5).intensity;
    common::volumes(vec![("abdomen", abdomen_phantom(40, 1).0), ("sphere", sphere)])
}

async fn start(cfg: ServerConfig) -> (Service, Arc<dyn VolumeSource>) {
    let lib = library();
    (Service::start(&cfg, lib.clone()).await.unwrap(), lib)
}

fn load(id: &str) -> ControlOp {
    ControlOp::Load { volume_id: id.into() }
}

/// Replays `ops` on a fresh session and renders, as the server should.
fn expected(lib: &dyn VolumeSource, ops: &[ControlOp], pose: Option<&PoseUpdate>) -> Vec<u8> {
    let mut s = SessionState::new();
    for op in ops {
        s.apply_control(op, lib).unwrap();
    }
    if let Some(p) = pose {
        s.apply_pose(p);
    }
    s.render(W.into(), H.into()).unwrap().unwrap().pixels
}

fn side_pose(lib: &dyn VolumeSource, ts: u64) -> PoseUpdate {
    let mut s = SessionState::new();
    s.apply_control(&load("abdomen"), lib).unwrap();
    let d = s.camera().position.norm();
    let q = Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), FRAC_PI_2);
    PoseUpdate { position: q.rotate(Vec3::new(0.0, 0.0, d)), rotation: q, timestamp_us: ts }
}

/// Returns the first frame id that reflects `op`.
async fn ack(stream: &mut ViewerStream, seq: u64, op: ControlOp) -> u32 {
    match stream.control(seq, op).await.unwrap() {
        ServerMessage::Ack { seq: s, applies_from_frame } => {
            assert_eq!(s, seq);
            applies_from_frame
        }
        other => panic!("expected ack, got {other:?}"),
    }
}

async fn viewer(svc: &Service, name: &str, mode: StreamMode) -> ViewerSession {
    timeout(Duration::from_secs(5), open_viewer(svc.signaling_addr(), name, W, H, mode)).await.expect("handshake in time").unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn register_connect_load_three_frames_under_two_seconds() {
    let (svc, lib) = start(config(2, 10.0)).await;
    let t0 = Instant::now();
    let mut v = viewer(&svc, "viewer", StreamMode::Pull).await;
    ack(&mut v.stream, 1, load("abdomen")).await;
    let frames = v.stream.request_frames(3).await.unwrap();
    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(2), "took {elapsed:?}");

    assert_eq!(frames.iter().map(|f| f.frame_id).collect::<Vec<_>>(), vec![0, 1, 2]);
    let want = expected(lib.as_ref(), &[load("abdomen")], None);
    for f in &frames {
        assert!(f.is_consistent());
        assert_eq!((f.width, f.height), (W, H));
        assert_eq!(f.pixels, want);
    }
    assert!(frames.windows(2).all(|w| w[0].timestamp_us <= w[1].timestamp_us));
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn pose_applies_from_the_next_frame_in_pull_mode() {
    let (svc, lib) = start(config(2, 10.0)).await;
    let mut v = viewer(&svc, "viewer", StreamMode::Pull).await;
    ack(&mut v.stream, 1, load("abdomen")).await;
    let before = v.stream.request_frames(1).await.unwrap().remove(0);

    let pose = side_pose(lib.as_ref(), 1_000);
    let reply = v.stream.pose(pose).await.unwrap();
    assert_eq!(reply, ServerMessage::PoseAck { timestamp_us: 1_000, applied: true, applies_from_frame: 1 });
    let after = v.stream.request_frames(1).await.unwrap().remove(0);

    let old = expected(lib.as_ref(), &[load("abdomen")], None);
    let new = expected(lib.as_ref(), &[load("abdomen")], Some(&pose));
    assert_ne!(old, new);
    assert_eq!((before.frame_id, after.frame_id), (0, 1));
    assert_eq!(before.pixels, old);
    assert_eq!(after.pixels, new);

    // An older pose is acknowledged but not applied.
    let stale = PoseUpdate { timestamp_us: 999, ..side_pose(lib.as_ref(), 0) };
    let reply = v.stream.pose(PoseUpdate { position: Vec3::ZERO, ..stale }).await.unwrap();
    assert!(matches!(reply, ServerMessage::PoseAck { applied: false, .. }));
    assert_eq!(v.stream.request_frames(1).await.unwrap()[0].pixels, new);
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn pose_boundary_holds_in_push_mode() {
    let (svc, lib) = start(config(2, 10.0)).await;
    let mut v = viewer(&svc, "viewer", StreamMode::Push).await;
    ack(&mut v.stream, 1, load("abdomen")).await;
    // let a few frames go out on the old camera
    for _ in 0..3 {
        v.stream.next_frame().await.unwrap();
    }
    let pose = side_pose(lib.as_ref(), 5);
    let ServerMessage::PoseAck { applies_from_frame: n, applied: true, .. } = v.stream.pose(pose).await.unwrap() else {
        panic!("pose not applied")
    };
    let old = expected(lib.as_ref(), &[load("abdomen")], None);
    let new = expected(lib.as_ref(), &[load("abdomen")], Some(&pose));
    let mut last_id = None;
    loop {
        let f = v.stream.next_frame().await.unwrap();
        if let Some(prev) = last_id {
            assert!(f.frame_id > prev, "frame ids must increase");
        }
        last_id = Some(f.frame_id);
        if f.frame_id < n {
            assert_eq!(f.pixels, old, "frame {} predates the pose", f.frame_id);
        } else {
            assert_eq!(f.pixels, new, "frame {} follows the pose", f.frame_id);
        }
        if f.frame_id > n + 2 {
            break;
        }
    }
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn controls_change_frames_and_report_errors() {
    let (svc, lib) = start(config(2, 10.0)).await;
    let mut v = viewer(&svc, "viewer", StreamMode::Pull).await;
    let s = &mut v.stream;

    let err = |r: ServerMessage| match r {
        ServerMessage::Error { reason, .. } => reason,
        other => panic!("expected error, got {other:?}"),
    };
    assert_eq!(err(s.control(1, ControlOp::Window { level: 0.0, width: 1.0, brightness: None }).await.unwrap()), "no-volume-loaded");
    assert_eq!(err(s.control(2, load("nope")).await.unwrap()), "unknown-volume-id");
    s.send(&livervis_service::protocol::ClientMessage::Request { count: 1 }).await.unwrap();
    assert_eq!(err(s.next_message().await.unwrap()), "no-volume-loaded");
    s.send_raw(livervis_service::channel::Channel::Data, b"{not json").await.unwrap();
    assert_eq!(err(s.next_message().await.unwrap()), "parse");

    let ops = vec![
        load("abdomen"),
        ControlOp::Window { level: 100.0, width: 200.0, brightness: Some(1.5) },
        ControlOp::Slice { axis: Axis::Z, offset: 0.4 },
        ControlOp::Transform { action: livervis_service::protocol::TransformAction::Scale, args: vec![0.8] },
    ];
    for (i, op) in ops.iter().enumerate() {
        ack(s, 10 + i as u64, op.clone()).await;
    }
    assert_eq!(err(s.control(20, ControlOp::Slice { axis: Axis::X, offset: 2.0 }).await.unwrap()), "invalid-args");
    let f = s.request_frames(1).await.unwrap().remove(0);
    assert_eq!(f.pixels, expected(lib.as_ref(), &ops, None));
    assert_ne!(f.pixels, expected(lib.as_ref(), &ops[..1], None));

    ack(s, 30, ControlOp::Unload).await;
    s.send(&livervis_service::protocol::ClientMessage::Request { count: 1 }).await.unwrap();
    assert_eq!(err(s.next_message().await.unwrap()), "no-volume-loaded");
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn peer_limit_rejects_the_extra_client() {
    let (svc, _) = start(config(2, 10.0)).await;
    let a = viewer(&svc, "a", StreamMode::Pull).await;
    let _b = viewer(&svc, "b", StreamMode::Pull).await;

    let mut c = SignalConnection::connect(svc.signaling_addr()).await.unwrap();
    match c.register("c", Role::Client, None).await {
        Err(ClientError::Rejected(r)) => assert_eq!(r, "peer-limit"),
        other => panic!("expected rejection, got {other:?}"),
    }
    assert_eq!(svc.signaling.registry().client_count(), 2);

    // a slot frees up once a client leaves
    let mut a_sig = a.signal;
    a_sig.send(&SignalMessage::Bye).await.unwrap();
    let deadline = Instant::now() + Duration::from_secs(2);
    loop {
        let mut d = SignalConnection::connect(svc.signaling_addr()).await.unwrap();
        match d.register("d", Role::Client, None).await {
            Ok(_) => break,
            Err(ClientError::Rejected(r)) if r == "peer-limit" && Instant::now() < deadline => {
                tokio::time::sleep(Duration::from_millis(20)).await
            }
            Err(e) => panic!("{e}"),
        }
    }
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unadmitted_peer_cannot_open_a_stream() {
    let (svc, _) = start(config(2, 10.0)).await;
    let addr = svc.stream.local_addr.to_string();
    match ViewerStream::connect(&addr, 4242, W, H, StreamMode::Pull).await {
        Err(ClientError::Rejected(r)) => assert_eq!(r, "not-admitted"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("stream opened without a handshake"),
    }
    svc.stop().await;
}

/// `n` frames with ids from `from` on; earlier frames are skipped.
async fn collect(v: &mut ViewerSession, from: u32, n: usize) -> Vec<RenderFrame> {
    let mut out = Vec::new();
    while out.len() < n {
        let f = v.stream.next_frame().await.unwrap();
        if f.frame_id >= from {
            out.push(f);
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_do_not_cross_talk() {
    let (svc, lib) = start(config(2, 10.0)).await;
    let mut a = viewer(&svc, "a", StreamMode::Push).await;
    let mut b = viewer(&svc, "b", StreamMode::Push).await;
    let a_ops = vec![load("abdomen")];
    let b_ops = vec![load("sphere"), ControlOp::Window { level: 0.6, width: 0.5, brightness: Some(2.0) }];
    let mut from_a = 0;
    for (i, op) in a_ops.iter().enumerate() {
        from_a = ack(&mut a.stream, i as u64, op.clone()).await;
    }
    let mut from_b = 0;
    for (i, op) in b_ops.iter().enumerate() {
        from_b = ack(&mut b.stream, i as u64, op.clone()).await;
    }
    let want_a = RenderFrame { pixels: expected(lib.as_ref(), &a_ops, None), ..blank() }.checksum();
    let want_b = RenderFrame { pixels: expected(lib.as_ref(), &b_ops, None), ..blank() }.checksum();
    assert_ne!(want_a, want_b);

    let (fa, fb) = tokio::join!(collect(&mut a, from_a, 8), collect(&mut b, from_b, 8));
    for f in &fa {
        assert_eq!(RenderFrame { pixels: f.pixels.clone(), ..blank() }.checksum(), want_a);
    }
    for f in &fb {
        assert_eq!(RenderFrame { pixels: f.pixels.clone(), ..blank() }.checksum(), want_b);
    }
    svc.stop().await;
}

fn blank() -> RenderFrame {
    RenderFrame {
        width: W,
        height: H,
        pixel_format: livervis_core::render::PixelFormat::Rgb8,
        frame_id: 0,
        timestamp_us: 0,
        pixels: Vec::new(),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn silent_viewer_is_evicted_and_its_stream_closed() {
    let (svc, _) = start(config(2, 0.3)).await;
    let mut v = viewer(&svc, "quiet", StreamMode::Pull).await;
    let id = v.peer_id;
    let t0 = Instant::now();
    let closed = timeout(Duration::from_secs(3), async {
        loop {
            match v.stream.next_event().await {
                Err(_) => break,
                Ok(_) => continue,
            }
        }
    })
    .await;
    assert!(closed.is_ok(), "stream still open after 3 s");
    assert!(t0.elapsed() < Duration::from_secs(2), "took {:?}", t0.elapsed());
    assert_eq!(svc.signaling.registry().get(id).map(|p| p.state), Some(PeerState::Closed));
    // the render peer keeps itself alive
    let server = svc.signaling.registry().get(svc.render_peer.peer_id).map(|p| p.state);
    assert_ne!(server, Some(PeerState::Closed));
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn heartbeating_viewer_outlives_the_timeout() {
    let (svc, _) = start(config(2, 0.3)).await;
    let mut v = viewer(&svc, "busy", StreamMode::Pull).await;
    ack(&mut v.stream, 1, load("sphere")).await;
    let t0 = Instant::now();
    while t0.elapsed() < Duration::from_millis(900) {
        v.signal.send(&SignalMessage::Heartbeat).await.unwrap();
        v.stream.request_frames(1).await.unwrap();
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert_eq!(svc.signaling.registry().get(v.peer_id).map(|p| p.state), Some(PeerState::Connected));
    svc.stop().await;
}
