use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::time::Duration;

use mirrorscan::controller::*;
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..=1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn playback_replays_memory(n in 1usize..200, speed in 0.001f64..10.0, seed in any::<u64>()) {
        let xs: Vec<f64> = (0..n).map(|i| ((i as u64 ^ seed) % 2001) as f64 / 1000.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().rev().copied().collect();
        let mut s = ControllerState::default();
        s.load_vector(Axis::X, &xs).unwrap();
        s.load_vector(Axis::Y, &ys).unwrap();
        s.set_speed(speed).unwrap();
        let out = s.run_sequence().unwrap();
        prop_assert_eq!(out.len(), n);
        for (k, e) in out.iter().enumerate() {
            prop_assert_eq!((e.xy.x(), e.xy.y()), (xs[k], ys[k]));
            prop_assert_eq!(e.t_ms, k as f64 / speed);
        }
    }

    #[test]
    fn memory_bound_on_every_load(v in values(1501), cut in 0usize..1502) {
        let mut s = ControllerState::default();
        let r = s.load_vector(Axis::Y, &v[..cut.min(1501)]);
        prop_assert_eq!(r.is_ok(), cut <= 1500);
    }

    #[test]
    fn wire_format_is_exact(v in values(20)) {
        let cmd = Command::Load(Axis::X, v.clone());
        prop_assert_eq!(Command::parse(&cmd.to_line()).unwrap(), cmd);
    }
}

fn server(realtime: bool) -> ServerHandle {
    ControllerServer::bind("127.0.0.1:0", ServerOptions { realtime }).unwrap().spawn().unwrap()
}

#[test]
fn tcp_session_runs_sequence() {
    let srv = server(false);
    let mut c = ControllerClient::connect(srv.local_addr()).unwrap();
    assert!(c.banner().starts_with(PROTOCOL_BANNER));
    assert_eq!(c.request(&Command::Pos).unwrap(), "AT 0 0 0");
    assert!(c.run().unwrap().unwrap_err().starts_with("ERR STATE"));
    let xs = vec![0.1, -0.25, 1.0 / 3.0];
    assert_eq!(c.request(&Command::Load(Axis::X, xs.clone())).unwrap(), "OK");
    assert_eq!(c.request(&Command::Load(Axis::Y, vec![0.0, 0.5, -0.5])).unwrap(), "OK");
    assert!(c.request(&Command::Speed(-1.0)).unwrap().starts_with("ERR SPEED"));
    assert_eq!(c.request(&Command::Speed(1.0)).unwrap(), "OK");
    let out = c.run().unwrap().unwrap();
    assert_eq!(out.iter().map(|e| e.t_ms).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
    assert_eq!(out.iter().map(|e| e.xy.x()).collect::<Vec<_>>(), xs);
    assert_eq!(c.request(&Command::Pos).unwrap(), format!("AT 2 {} -0.5", 1.0 / 3.0));
    assert!(c.request(&Command::Load(Axis::X, vec![1.2])).unwrap().starts_with("ERR RANGE"));
    c.send_line("LOAD Q 1").unwrap();
    assert!(c.read_line().unwrap().starts_with("ERR SYNTAX"));
}

#[test]
fn second_client_is_rejected() {
    let srv = server(false);
    let _first = ControllerClient::connect(srv.local_addr()).unwrap();
    let second = TcpStream::connect(srv.local_addr()).unwrap();
    second.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut line = String::new();
    BufReader::new(second).read_line(&mut line).unwrap();
    assert!(line.starts_with("ERR BUSY"), "{line}");
}

#[test]
fn client_slot_frees_on_disconnect() {
    let srv = server(false);
    drop(ControllerClient::connect(srv.local_addr()).unwrap());
    for _ in 0..50 {
        let c = ControllerClient::connect(srv.local_addr()).unwrap();
        if c.banner().starts_with(PROTOCOL_BANNER) {
            return;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    panic!("slot never freed");
}

#[test]
fn realtime_run_answers_position_queries() {
    let srv = server(true);
    let mut c = ControllerClient::connect(srv.local_addr()).unwrap();
    let n = 40;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    c.request(&Command::Load(Axis::X, xs.clone())).unwrap();
    c.request(&Command::Load(Axis::Y, vec![0.0; n])).unwrap();
    // 0.2 values/ms → 5 ms per value, ~200 ms run
    c.request(&Command::Speed(0.2)).unwrap();
    c.send_line("RUN").unwrap();
    std::thread::sleep(Duration::from_millis(60));
    c.send_line("POS?").unwrap();
    let mut stream = Vec::new();
    loop {
        let l = c.read_line().unwrap();
        if l == "OK" {
            break;
        }
        stream.push(l);
    }
    // the position reply is interleaved in the stream; playback order is intact
    let ats: Vec<Emission> = stream.iter().filter_map(|l| parse_at(l)).collect();
    assert_eq!(ats.len(), n + 1);
    let mut played = Vec::new();
    let mut extra = 0;
    for e in &ats {
        if played.len() < n && e.xy.x() == xs[played.len()] && e.t_ms == played.len() as f64 / 0.2 {
            played.push(e.xy.x());
        } else {
            extra += 1;
        }
    }
    assert_eq!(played, xs);
    assert_eq!(extra, 1);
}
