use std::sync::Arc;

use imagery_core::pipeline::{OnlinePipeline, PipelineConfig, TaskDecoder};
use imagery_core::recording::Task;
use imagery_core::robotsim::{RobotConfig, SimExecutor};
use imagery_core::stream::{loopback, serve_replay, spawn_collector, CollectorConfig, ServeOptions};
use imagery_core::synthgen::{generate_online_stream_script, random_truth, SynthConfig};

/// With both decoders replaced by the scripted truth, system success is
/// the grasp success of the object mix.
#[test]
fn oracle_session_tracks_grasp_mixture() {
    let n = 50;
    let truth = random_truth(n, 31);
    let script = Arc::new(generate_online_stream_script(&SynthConfig::new(Task::VI, n, 1.0, 31), &truth).unwrap());
    let pipe = OnlinePipeline::new(
        PipelineConfig::default(),
        TaskDecoder::Oracle(Task::VI),
        TaskDecoder::Oracle(Task::MI),
        None,
    )
    .unwrap();
    let (reader, mut writer) = loopback().unwrap();
    let handle = spawn_collector(reader, CollectorConfig::default());
    let server = {
        let rec = script.clone();
        std::thread::spawn(move || serve_replay(&rec, &mut writer, &ServeOptions::default()))
    };
    let robot = RobotConfig { seed: 3, ..RobotConfig::default() };
    let mut exec = SimExecutor::new(robot.clone()).unwrap();
    let report = pipe.run_session(handle.windows.iter(), n, &mut exec);
    handle.join().unwrap();
    server.join().unwrap().unwrap();

    assert_eq!(report.trials.len(), n);
    assert!(report.partial.is_none());
    assert_eq!(report.vi_accuracy().value(), Some(1.0));
    assert_eq!(report.mi_accuracy().value(), Some(1.0));
    assert_eq!(report.place_rate().value(), Some(1.0));
    let system = report.system_accuracy().value().unwrap();
    assert_eq!(Some(system), report.grasp_rate().value());

    // Expected rate for this object mix, with a 99% binomial interval.
    let p: f64 = truth
        .iter()
        .map(|(vi, _)| robot.grasp_prob(imagery_core::robotsim::ObjectKind::from_label(*vi).unwrap()))
        .sum::<f64>()
        / n as f64;
    let half = 2.576 * (p * (1.0 - p) / n as f64).sqrt();
    assert!((system - p).abs() <= half, "system {system} vs mixture {p} +/- {half}");

    for t in &report.trials {
        let c = t.timing.columns_ms();
        assert_eq!(c[..8].iter().sum::<u64>(), c[8]);
    }
    let text = report.render();
    assert!(text.contains("Product estimator") && text.contains("Empirical joint"));
}
