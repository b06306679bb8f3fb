//! Fan-out behavior of the TCP publisher over loopback.

use std::io::Read;
use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use foostate_core::pubsub::{Publisher, Subscriber};
use foostate_core::state::RodState;
use foostate_core::wire::{encode_message, read_frame, GameStateMessage};

fn message(frame_id: u64) -> GameStateMessage {
    let mut rods = [RodState { shift_mm: 0.0, rotation_deg: 180.0 }; 8];
    rods[3] = RodState { shift_mm: frame_id as f64 * 0.5 - 20.0, rotation_deg: (frame_id % 360) as f64 };
    GameStateMessage { frame_id, timestamp_us: frame_id * 16_667, rods, inference_ms: 1.5 }
}

fn wait_for_subscribers(publisher: &Publisher, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while publisher.stats().subscribers < n {
        assert!(Instant::now() < deadline, "subscribers never connected");
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn drain_raw(stream: &mut TcpStream) -> Vec<Vec<u8>> {
    let mut frames = Vec::new();
    while let Ok(payload) = read_frame(stream) {
        frames.push(payload);
    }
    frames
}

#[test]
fn two_subscribers_see_identical_ordered_streams() {
    // queue sized to the burst so the tight publish loop cannot outrun the
    // writer threads
    let mut publisher = Publisher::bind_with_capacity("127.0.0.1:0", 256).unwrap();
    let addr = publisher.local_addr();
    let mut a = TcpStream::connect(addr).unwrap();
    let mut b = TcpStream::connect(addr).unwrap();
    wait_for_subscribers(&publisher, 2);

    for i in 0..100 {
        publisher.publish(&message(i));
    }
    publisher.shutdown();

    let frames_a = drain_raw(&mut a);
    let frames_b = drain_raw(&mut b);
    assert_eq!(frames_a.len(), 100);
    assert_eq!(frames_a, frames_b);
    // ordered by frame id
    for (i, payload) in frames_a.iter().enumerate() {
        let m = foostate_core::wire::decode_message(payload).unwrap();
        assert_eq!(m.frame_id, i as u64);
    }
}

#[test]
fn late_joiner_receives_only_later_messages() {
    let mut publisher = Publisher::bind_with_capacity("127.0.0.1:0", 256).unwrap();
    let addr = publisher.local_addr();
    let mut early = TcpStream::connect(addr).unwrap();
    wait_for_subscribers(&publisher, 1);

    for i in 0..50 {
        publisher.publish(&message(i));
    }
    let mut late = TcpStream::connect(addr).unwrap();
    wait_for_subscribers(&publisher, 2);
    for i in 50..100 {
        publisher.publish(&message(i));
    }
    publisher.shutdown();

    let early_ids: Vec<u64> = drain_raw(&mut early)
        .iter()
        .map(|p| foostate_core::wire::decode_message(p).unwrap().frame_id)
        .collect();
    let late_ids: Vec<u64> = drain_raw(&mut late)
        .iter()
        .map(|p| foostate_core::wire::decode_message(p).unwrap().frame_id)
        .collect();
    assert_eq!(early_ids, (0..100).collect::<Vec<_>>());
    assert_eq!(late_ids, (50..100).collect::<Vec<_>>());
}

#[test]
fn killed_subscriber_does_not_disturb_the_other() {
    let mut publisher = Publisher::bind_with_capacity("127.0.0.1:0", 64).unwrap();
    let addr = publisher.local_addr();
    let mut keeper = TcpStream::connect(addr).unwrap();
    let doomed = TcpStream::connect(addr).unwrap();
    wait_for_subscribers(&publisher, 2);

    for i in 0..10 {
        publisher.publish(&message(i));
    }
    drop(doomed);
    // give the writer thread a chance to hit the dead socket
    std::thread::sleep(Duration::from_millis(50));
    for i in 10..30 {
        publisher.publish(&message(i));
    }
    publisher.shutdown();
    let ids: Vec<u64> = drain_raw(&mut keeper)
        .iter()
        .map(|p| foostate_core::wire::decode_message(p).unwrap().frame_id)
        .collect();
    assert_eq!(ids, (0..30).collect::<Vec<_>>());
}

#[test]
fn slow_subscriber_overflows_without_blocking() {
    let mut publisher = Publisher::bind_with_capacity("127.0.0.1:0", 4).unwrap();
    let addr = publisher.local_addr();
    // connect but never read
    let _lazy = TcpStream::connect(addr).unwrap();
    wait_for_subscribers(&publisher, 1);

    let start = Instant::now();
    for i in 0..500 {
        publisher.publish(&message(i));
    }
    // publishing 500 messages into a stuck queue must not block the loop
    assert!(start.elapsed() < Duration::from_secs(2));
    assert!(publisher.stats().dropped_messages > 0, "overflow must be counted");
    publisher.shutdown();
}

#[test]
fn wrong_topic_filter_yields_nothing() {
    let mut publisher = Publisher::bind("127.0.0.1:0").unwrap();
    let addr = publisher.local_addr().to_string();
    let mut sub = Subscriber::connect(&addr, "othertopic")
        .unwrap()
        .with_read_timeout(Some(Duration::from_millis(200)));
    wait_for_subscribers(&publisher, 1);
    for i in 0..5 {
        publisher.publish(&message(i));
    }
    // all five payloads are filtered out; the call times out empty-handed
    assert!(sub.next_message().is_err());
    publisher.shutdown();
}

#[test]
fn subscriber_decodes_matching_topic() {
    let mut publisher = Publisher::bind("127.0.0.1:0").unwrap();
    let addr = publisher.local_addr().to_string();
    let mut sub = Subscriber::connect(&addr, "gamestate").unwrap().reconnect_on_drop(false);
    wait_for_subscribers(&publisher, 1);
    for i in 0..20 {
        publisher.publish(&message(i));
    }
    let mut last = None;
    for _ in 0..20 {
        let m = sub.next_message().unwrap();
        if let Some(prev) = last {
            assert!(m.frame_id > prev, "frame ids strictly increasing");
        }
        last = Some(m.frame_id);
    }
    publisher.shutdown();
}

#[test]
fn stats_endpoint_reports_counts() {
    let mut publisher = Publisher::bind("127.0.0.1:0").unwrap();
    publisher.bind_stats("127.0.0.1:0").unwrap();
    let stats_addr = publisher.stats_addr().unwrap();
    let _sub = TcpStream::connect(publisher.local_addr()).unwrap();
    wait_for_subscribers(&publisher, 1);

    let mut conn = TcpStream::connect(stats_addr).unwrap();
    let mut text = String::new();
    conn.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("subscribers 1\n"), "got: {text}");
    assert!(text.contains("dropped_messages 0"));
    publisher.shutdown();
}

#[test]
fn publish_bytes_shares_one_buffer() {
    let mut publisher = Publisher::bind("127.0.0.1:0").unwrap();
    let addr = publisher.local_addr();
    let mut a = TcpStream::connect(addr).unwrap();
    wait_for_subscribers(&publisher, 1);
    let payload = Arc::new(encode_message(&message(1)));
    publisher.publish_bytes(&payload);
    publisher.shutdown();
    assert_eq!(drain_raw(&mut a), vec![(*payload).clone()]);
}
