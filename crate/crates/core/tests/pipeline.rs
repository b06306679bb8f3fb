//! End-to-end detection loop: replay sources, payload determinism, ordering.

use std::net::TcpStream;
use std::path::PathBuf;

use foostate_core::dataset::{self, CaptureOptions};
use foostate_core::nn::RegressorModel;
use foostate_core::pipeline::{serve_with, FrameSource, ServeConfig};
use foostate_core::pubsub::Publisher;
use foostate_core::rods::RodId;
use foostate_core::table::default_table_geometry;
use foostate_core::wire::read_frame;

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("foostate-pipe-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn untrained_models() -> Vec<RegressorModel<f32>> {
    RodId::ALL
        .iter()
        .map(|&id| RegressorModel::init(id, 256, 64, 1000 + id.index() as u64).unwrap())
        .collect()
}

fn run_replay(dir: &std::path::Path, parallel: bool) -> (u64, Vec<Vec<u8>>) {
    let dataset = dataset::load(dir).unwrap();
    let n = dataset.records.len() as u64;
    let publisher = Publisher::bind("127.0.0.1:0").unwrap();
    let addr = publisher.local_addr();
    let mut sub = TcpStream::connect(addr).unwrap();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
    while publisher.stats().subscribers < 1 {
        assert!(std::time::Instant::now() < deadline);
        std::thread::sleep(std::time::Duration::from_millis(5));
    }
    let cfg = ServeConfig {
        geometry: default_table_geometry(),
        models: untrained_models(),
        endpoint: String::new(),
        stats_endpoint: None,
        source: FrameSource::Replay { dataset },
        parallel_rods: parallel,
        target_fps: 500.0,
        deterministic_timing: true,
        verbose: false,
    };
    let summary = serve_with(cfg, publisher).unwrap();
    assert_eq!(summary.frames_published, n);
    assert_eq!(summary.frames_skipped, 0);
    let mut payloads = Vec::new();
    while let Ok(p) = read_frame(&mut sub) {
        payloads.push(p);
    }
    (summary.frames_published, payloads)
}

#[test]
fn replay_publishes_each_frame_once_then_exits() {
    let dir = tmp_dir("replay");
    let geometry = default_table_geometry();
    dataset::capture(4, &geometry, &CaptureOptions::default(), 77, &dir).unwrap();

    let (published, payloads) = run_replay(&dir, false);
    assert_eq!(published, 4);
    assert_eq!(payloads.len(), 4);
    let ids: Vec<u64> = payloads
        .iter()
        .map(|p| foostate_core::wire::decode_message(p).unwrap().frame_id)
        .collect();
    assert_eq!(ids, vec![0, 1, 2, 3]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn parallel_and_sequential_payloads_match_bitwise() {
    let dir = tmp_dir("par");
    let geometry = default_table_geometry();
    dataset::capture(3, &geometry, &CaptureOptions::default(), 31, &dir).unwrap();

    let (_, sequential) = run_replay(&dir, false);
    let (_, parallel) = run_replay(&dir, true);
    assert_eq!(sequential.len(), 3);
    assert_eq!(sequential, parallel);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulator_source_respects_frame_limit() {
    let publisher = Publisher::bind("127.0.0.1:0").unwrap();
    let cfg = ServeConfig {
        geometry: default_table_geometry(),
        models: untrained_models(),
        endpoint: String::new(),
        stats_endpoint: None,
        source: FrameSource::Simulator {
            render: Default::default(),
            white_bias: Default::default(),
            seed: 5,
            frames: Some(6),
        },
        parallel_rods: false,
        target_fps: 500.0,
        deterministic_timing: true,
        verbose: false,
    };
    let summary = serve_with(cfg, publisher).unwrap();
    assert_eq!(summary.frames_published, 6);
}

#[test]
fn mismatched_model_set_is_rejected_at_startup() {
    let publisher = Publisher::bind("127.0.0.1:0").unwrap();
    let mut models = untrained_models();
    models.swap(0, 1);
    let cfg = ServeConfig {
        geometry: default_table_geometry(),
        models,
        endpoint: String::new(),
        stats_endpoint: None,
        source: FrameSource::Simulator {
            render: Default::default(),
            white_bias: Default::default(),
            seed: 5,
            frames: Some(1),
        },
        parallel_rods: false,
        target_fps: 60.0,
        deterministic_timing: true,
        verbose: false,
    };
    assert!(serve_with(cfg, publisher).is_err());
}
