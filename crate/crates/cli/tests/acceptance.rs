//! Acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p imagery-cli --test acceptance`; pass criterion
//! numbers as trailing arguments to run a subset.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Read;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use imagery_core::decoders::nn::{CompactCnn, Mlp, Net};
use imagery_core::decoders::{evaluate, train, Dataset, DecoderKind, DecoderModel, TrainConfig};
use imagery_core::features::{
    differential_entropy, extract_features, tile_windows, trim_and_window, trim_len, window_len, AnalysisWindow,
    BandDef, FeatureExtractor, FeatureVector, SpectrumEstimate, LOG_FLOOR,
};

use imagery_core::pipeline::{
    simulate_system, ComponentRates, OnlinePipeline, PipelineConfig, TaskDecoder, TimingMode, REFERENCE_SYSTEM_ACCURACY,
};
use imagery_core::preprocess::{
    bandpass, filter_and_rereference, fit_ica, notch50, reject_artifacts, FrequencyProfile, IcaFitOptions,
};
use imagery_core::recording::{
    slice_epochs, ChannelRole, ClassLabel, Montage, Phase, Recording, Task, TriggerCode, TriggerEvent,
};
use imagery_core::robotsim::{scenario_map, Executor, ObjectKind, Placement, RobotConfig, Scenario, SimExecutor};
use imagery_core::stream::{
    collect_recording, decode_frame, encode_frame, loopback, read_frame, serve_replay, spawn_collector, ClockMode,
    CollectorConfig, Frame, ServeOptions,
};
use imagery_core::synthgen::{generate_online_stream_script, generate_session, random_truth, SynthConfig};

type Check = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Check);

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn scalp_rec(rows: Vec<Vec<f32>>, fs: f64) -> Recording {
    let chans =
        Montage::from_specs((0..rows.len()).map(|i| (format!("S{i}"), ChannelRole::ScalpEeg))).unwrap().into_channels();
    Recording::from_rows(chans, fs, rows, vec![]).unwrap()
}

fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// 1 -----------------------------------------------------------------------

/// Periodogram by direct DFT, integrated on a grid ten times finer than
/// the bin spacing. The estimate is piecewise constant over each bin cell
/// `[f_k, f_k + df)`, so each cell contributes ten sub-rectangles.
fn de_oracle(x: &[f32], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let h: Vec<f64> = (0..n).map(|i| (PI * i as f64 / n as f64).sin().powi(2)).collect();
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let df = fs / n as f64;
    let sub = df / 10.0;
    let mut total = 0.0;
    for k in 0..=n / 2 {
        let f = k as f64 * df;
        if f < lo || f >= hi {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (i, (&v, &w)) in x.iter().zip(&h).enumerate() {
            let ph = -2.0 * PI * (k * i % n) as f64 / n as f64;
            re += v as f64 * w * ph.cos();
            im += v as f64 * w * ph.sin();
        }
        let one_sided = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
        let p = one_sided * (re * re + im * im) / (fs * energy);
        for _ in 0..10 {
            total -= p * p.max(LOG_FLOOR).ln() * sub;
        }
    }
    total
}

fn criterion_1() -> Check {
    let t0 = Instant::now();
    let fs = 1000.0;
    let w = window_len(fs);
    let bands = BandDef::ALL.to_vec();
    let fx = FeatureExtractor::with_bands(bands.clone(), w, fs).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..50 {
        let tones: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| (rng.random_range(1.0..120.0), rng.random_range(0.5..20.0), rng.random_range(0.0..2.0 * PI)))
            .collect();
        let x: Vec<f32> = (0..w)
            .map(|i| {
                let t = i as f64 / fs;
                let s: f64 = tones.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
                (s + 3.0 * rng.sample::<f64, _>(StandardNormal)) as f32
            })
            .collect();
        let got = fx.features(&x, 1).map_err(fail)?;
        for (b, band) in bands.iter().enumerate() {
            let (lo, hi) = band.range();
            let want = de_oracle(&x, fs, lo, hi);
            worst_rel = worst_rel.max((got[b] - want).abs() / want.abs().max(1e-12));
        }
    }
    // Constant PSD c over the band: DE = -B c ln c with B the covered bandwidth.
    let df = fs / w as f64;
    let freqs: Vec<f64> = (0..=w / 2).map(|k| k as f64 * df).collect();
    let mut worst_closed: f64 = 0.0;
    for c in [1e-3, 0.25, 1.0, 7.5, 1e3] {
        let spec = SpectrumEstimate {
            freqs_hz: freqs.clone(),
            psd: vec![vec![c; freqs.len()]],
            df_hz: df,
            window_seconds: 0.5,
        };
        for &band in &bands {
            let (lo, hi) = band.range();
            let b = ((hi / df).ceil() - (lo / df).ceil()) * df;
            let expected = -b * c * c.ln();
            let de = differential_entropy(&spec, band).map_err(fail)?[0];
            worst_closed = worst_closed.max((de - expected).abs() / expected.abs().max(1.0));
        }
    }
    let el = t0.elapsed();
    let pass = worst_rel < 1e-3 && worst_closed < 1e-9 && within(el, 10.0);
    Ok((
        pass,
        format!(
            "50 windows x 7 bands, max rel err {worst_rel:.1e} (tol 1e-3); closed form max err {worst_closed:.1e} (tol 1e-9); {:.2} s (limit 10 s)",
            el.as_secs_f64()
        ),
    ))
}

// 2 -----------------------------------------------------------------------

fn tone(freq: f64, n: usize, fs: f64) -> Vec<f32> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin() as f32).collect()
}

fn xcorr_peak_lag(x: &[f64], y: &[f64], max_lag: i64) -> i64 {
    let n = x.len() as i64;
    (-max_lag..=max_lag)
        .map(|lag| {
            let s: f64 =
                (0..n).filter(|&i| (0..n).contains(&(i + lag))).map(|i| x[i as usize] * y[(i + lag) as usize]).sum();
            (lag, s)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

fn criterion_2() -> Check {
    let t0 = Instant::now();
    let fs = 1000.0;
    let n = 10_000;
    let mid = 2000..8000;
    let mut worst_dc = f64::MIN;
    let mut worst_pass: f64 = 0.0;
    let mut lags = Vec::new();
    let packet: Vec<f64> = (0..6000)
        .map(|i| {
            let t = (i as f64 - 3000.0) / fs;
            (-t * t / 0.08).exp() * (2.0 * PI * 12.0 * t).sin()
        })
        .collect();
    let packet_rec = scalp_rec(vec![packet.iter().map(|&v| v as f32).collect()], fs);
    for p in FrequencyProfile::ALL {
        let dc = bandpass(&scalp_rec(vec![vec![5.0; n]], fs), p).map_err(fail)?;
        // Floored at -300 dB: an exact zero has no finite level.
        worst_dc = worst_dc.max(20.0 * (rms(&dc.channel(0)[mid.clone()]) / 5.0).max(1e-15).log10());
        let x = tone(20.0, n, fs);
        let y = bandpass(&scalp_rec(vec![x.clone()], fs), p).map_err(fail)?;
        let db = 20.0 * (rms(&y.channel(0)[mid.clone()]) / rms(&x[mid.clone()])).log10();
        worst_pass = worst_pass.max(db.abs());
        let y = bandpass(&packet_rec, p).map_err(fail)?;
        lags.push(xcorr_peak_lag(&packet, &to_f64(y.channel(0)), 50));
    }
    let x = tone(50.0, n, fs);
    let y = notch50(&scalp_rec(vec![x.clone()], fs)).map_err(fail)?;
    let notch_db = 20.0 * (rms(&y.channel(0)[mid.clone()]) / rms(&x[mid.clone()])).log10();
    let y = notch50(&packet_rec).map_err(fail)?;
    lags.push(xcorr_peak_lag(&packet, &to_f64(y.channel(0)), 50));
    let el = t0.elapsed();
    let pass =
        worst_dc <= -20.0 && notch_db <= -25.0 && worst_pass <= 1.0 && lags.iter().all(|&l| l == 0) && within(el, 10.0);
    Ok((
        pass,
        format!(
            "DC {worst_dc:.1} dB (<= -20), 50 Hz notch {notch_db:.1} dB (<= -25), 20 Hz passband max |{worst_pass:.3}| dB (<= 1), lags {lags:?} (all 0); {:.2} s (limit 10 s)",
            el.as_secs_f64()
        ),
    ))
}

// 3 -----------------------------------------------------------------------

fn max_grad_error(net: &mut dyn Net, x: &[f64], y: &[usize], per_tensor: usize) -> f64 {
    let (_, grads) = net.loss_and_grad(x, y);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        let stride = (g.len() / per_tensor).max(1);
        for j in (0..g.len()).step_by(stride) {
            let w0 = net.tensors()[ti].data[j];
            net.tensors_mut()[ti].data[j] = w0 + h;
            let up = net.loss(x, y);
            net.tensors_mut()[ti].data[j] = w0 - h;
            let down = net.loss(x, y);
            net.tensors_mut()[ti].data[j] = w0;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((numeric - g[j]).abs() / numeric.abs().max(g[j].abs()).max(1e-6));
        }
    }
    worst
}

fn criterion_3() -> Check {
    let t0 = Instant::now();
    let (mut mlp_worst, mut cnn_worst): (f64, f64) = (0.0, 0.0);
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let y: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let x: Vec<f64> = (0..10 * 20).map(|_| rng.sample(StandardNormal)).collect();
        let mut mlp = Mlp::new(20, 3, seed);
        mlp_worst = mlp_worst.max(max_grad_error(&mut mlp, &x, &y, 60));
        let x: Vec<f64> = (0..10 * 4 * 64).map(|_| rng.sample(StandardNormal)).collect();
        let mut cnn = CompactCnn::new(4, 64, 3, seed).map_err(fail)?;
        cnn_worst = cnn_worst.max(max_grad_error(&mut cnn, &x, &y, 30));
    }
    let el = t0.elapsed();
    let pass = mlp_worst < 1e-4 && cnn_worst < 1e-4 && within(el, 60.0);
    Ok((
        pass,
        format!(
            "5 seeds, batch 10: Mlp max rel err {mlp_worst:.1e}, CompactCnn {cnn_worst:.1e} (tol 1e-4); {:.2} s (limit 60 s)",
            el.as_secs_f64()
        ),
    ))
}

// 4 -----------------------------------------------------------------------

fn criterion_4() -> Check {
    let t0 = Instant::now();
    let fs = 1000.0;
    // Two-source mixture.
    let n = 5000;
    let s1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.031).sin()).collect();
    let s2: Vec<f64> = (0..n).map(|i| ((i as f64 * 0.0173) % 1.0) * 2.0 - 1.0).collect();
    let a = [[0.9, 0.4], [-0.3, 1.1]];
    let rows: Vec<Vec<f32>> =
        (0..2).map(|r| (0..n).map(|i| (a[r][0] * s1[i] + a[r][1] * s2[i]) as f32).collect()).collect();
    let rec = scalp_rec(rows, fs);
    let model = fit_ica(&rec, &IcaFitOptions { max_fit_samples: None, ..Default::default() }).map_err(fail)?;
    let src = model.sources(&rec).map_err(fail)?;
    let recovery = [&s1, &s2]
        .iter()
        .map(|truth| src.iter().map(|s| pearson(s, truth).abs()).fold(0.0, f64::max))
        .fold(1.0, f64::min);

    // Blink plus seven Laplace sources, square-mixed into eight scalp
    // channels; the EOG lead reads the blink with r = 0.99.
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut blink = vec![0.0f64; n];
    let mut t = 300;
    while t < n {
        let amp = rng.random_range(60.0..140.0);
        for (i, b) in blink.iter_mut().enumerate().take((t + 400).min(n)).skip(t.saturating_sub(400)) {
            let d = (i as f64 - t as f64) / 80.0;
            *b += amp * (-0.5 * d * d).exp();
        }
        t += rng.random_range(700..2500);
    }
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let eog_noise = sd(&blink) * (1.0 / 0.99f64.powi(2) - 1.0).sqrt();
    let eog: Vec<f64> = blink.iter().map(|b| b + eog_noise * rng.sample::<f64, _>(StandardNormal)).collect();
    let k = 8;
    let mut sources = vec![blink.clone()];
    for _ in 1..k {
        sources.push(
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    -u.signum() * (1.0 - u.abs()).ln() * 10.0
                })
                .collect(),
        );
    }
    let mixing: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..k).map(|j| if j == 0 { 1.0 - c as f64 / k as f64 } else { rng.random_range(-1.0..1.0) }).collect())
        .collect();
    let mut specs: Vec<(String, ChannelRole)> = (0..k).map(|i| (format!("S{i}"), ChannelRole::ScalpEeg)).collect();
    specs.push(("EOG".into(), ChannelRole::Eog));
    specs.push(("ECG".into(), ChannelRole::Ecg));
    let mut rows: Vec<Vec<f32>> = mixing
        .iter()
        .map(|w| (0..n).map(|i| w.iter().zip(&sources).map(|(a, s)| a * s[i]).sum::<f64>() as f32).collect())
        .collect();
    rows.push(eog.iter().map(|&v| v as f32).collect());
    rows.push((0..n).map(|i| (40.0 * (2.0 * PI * 1.1 * i as f64 / fs).sin().powi(15)) as f32).collect());
    let rec = Recording::from_rows(Montage::from_specs(specs).map_err(fail)?.into_channels(), fs, rows, vec![])
        .map_err(fail)?;
    let before = (0..k).map(|c| pearson(&to_f64(rec.channel(c)), &eog).abs()).fold(0.0, f64::max);
    let mut ica = fit_ica(&rec, &IcaFitOptions { max_fit_samples: None, ..Default::default() }).map_err(fail)?;
    let clean = reject_artifacts(&rec, &mut ica, 0.95).map_err(fail)?;
    let removed = ica.removed_components();
    let blink_r = removed.iter().map(|&j| ica.artifact_correlation[j]).fold(0.0, f64::max);
    let after = (0..k).map(|c| pearson(&to_f64(clean.channel(c)), &eog).abs()).fold(0.0, f64::max);
    let el = t0.elapsed();
    let pass = recovery > 0.99 && !removed.is_empty() && blink_r > 0.95 && after < 0.3 && within(el, 30.0);
    Ok((
        pass,
        format!(
            "2-source min |r| {recovery:.4} (> 0.99); removed {removed:?} with |r| {blink_r:.3} vs EOG (> 0.95); scalp-EOG max |r| {before:.3} -> {after:.3} (< 0.3); {:.2} s (limit 30 s)",
            el.as_secs_f64()
        ),
    ))
}

// 5 -----------------------------------------------------------------------

fn strides(starts: &[usize]) -> Vec<usize> {
    starts.windows(2).map(|p| p[1] - p[0]).collect()
}

fn criterion_5() -> Check {
    let fs = 1000.0;
    let w = window_len(fs);
    let mut notes = Vec::new();
    let mut pass = w == 500;
    for (name, secs, n_want, stride_want) in [("VI", 5usize, 8usize, 500usize), ("MI", 4, 7, 450)] {
        let len = secs * 1000;
        let usable = len - 2 * trim_len(len);
        let starts = tile_windows(usable, w).map_err(fail)?;
        let st = strides(&starts);
        pass &= starts.len() == n_want && st.iter().all(|&s| s == stride_want) && starts.last() == Some(&(usable - w));
        notes.push(format!("{name} {} windows stride {:?}", starts.len(), st.first().copied().unwrap_or(0)));
    }
    // The same counts from synthetic epochs.
    for (task, want) in [(Task::VI, 8), (Task::MI, 7)] {
        let rec = generate_session(&SynthConfig::new(task, 3, 1.0, 2)).map_err(fail)?;
        for ep in slice_epochs(&rec, Phase::Imagery).map_err(fail)? {
            pass &= trim_and_window(&ep).map_err(fail)?.len() == want;
        }
    }
    let starts = tile_windows(10_000, w).map_err(fail)?;
    pass &= starts.len() == 20 && strides(&starts).iter().all(|&s| s == 500);
    // The online decoder sees the same crop.
    let online =
        generate_online_stream_script(&SynthConfig::new(Task::VI, 1, 1.0, 3), &random_truth(1, 3)).map_err(fail)?;
    let start = online.triggers().iter().find(|t| t.code == TriggerCode::TaskViStart).ok_or("no VI task")?.sample_index
        as usize;
    let buf = online.slice(start, start + 15_000).map_err(fail)?;
    let pipe = OnlinePipeline::new(
        PipelineConfig::default(),
        TaskDecoder::Oracle(Task::VI),
        TaskDecoder::Oracle(Task::MI),
        None,
    )
    .map_err(fail)?;
    let decoded = pipe.decode(&TaskDecoder::Oracle(Task::VI), &buf, Some(ClassLabel::APPLE)).map_err(fail)?;
    pass &= decoded.n_windows == 20;
    notes.push(format!("online crop {} windows stride 500 (pipeline {})", starts.len(), decoded.n_windows));
    Ok((pass, format!("{} (exact: 8/500, 7/450, 20)", notes.join("; "))))
}

// 6 -----------------------------------------------------------------------

/// Sessions are generated in blocks so memory stays bounded.
const BLOCK_TRIALS: usize = 48;
/// Raw windows for the convolutional decoder are averaged down to 250 Hz.
const CNN_DOWNSAMPLE: usize = 4;

#[derive(Default)]
struct Pool {
    features: Vec<FeatureVector>,
    windows: Vec<AnalysisWindow>,
    labels: HashMap<usize, ClassLabel>,
}

fn downsample(w: &AnalysisWindow, f: usize) -> AnalysisWindow {
    let len = w.len / f;
    let data = (0..w.n_channels())
        .flat_map(|c| {
            let row = w.channel(c);
            (0..len).map(move |i| row[i * f..(i + 1) * f].iter().sum::<f32>() / f as f32)
        })
        .collect();
    AnalysisWindow { data, len, sample_rate_hz: w.sample_rate_hz / f as f64, ..w.clone() }
}

fn pool(task: Task, separability: f64, n_trials: usize, seed: u64, windows: bool) -> Result<Pool, String> {
    let mut p = Pool::default();
    for b in 0..n_trials.div_ceil(BLOCK_TRIALS) {
        let n = BLOCK_TRIALS.min(n_trials - b * BLOCK_TRIALS);
        let rec = generate_session(&SynthConfig::new(task, n, separability, seed + b as u64)).map_err(fail)?;
        let clean = filter_and_rereference(&rec, FrequencyProfile::F40).map_err(fail)?;
        drop(rec);
        for mut ep in slice_epochs(&clean, Phase::Imagery).map_err(fail)? {
            ep.trial_id += b * 10_000;
            p.labels.insert(ep.trial_id, ep.label);
            p.features.extend(extract_features(&ep, FrequencyProfile::F40).map_err(fail)?);
            if windows {
                p.windows.extend(trim_and_window(&ep).map_err(fail)?.iter().map(|w| downsample(w, CNN_DOWNSAMPLE)));
            }
        }
    }
    Ok(p)
}

fn datasets(p: &Pool, task: Task, kind: DecoderKind) -> Result<Dataset, String> {
    if kind.uses_windows() {
        Dataset::from_windows(&p.windows, |t| p.labels[&t], task, FrequencyProfile::F40).map_err(fail)
    } else {
        Dataset::from_feature_vectors(&p.features, task, FrequencyProfile::F40).map_err(fail)
    }
}

fn train_cfg(kind: DecoderKind) -> TrainConfig {
    match kind {
        DecoderKind::CompactCnn => TrainConfig { epochs: 8, ..TrainConfig::default() },
        _ => TrainConfig { epochs: 50, ..TrainConfig::default() },
    }
}

fn trial_accuracy(train_pool: &Pool, test_pool: &Pool, task: Task, kind: DecoderKind) -> Result<(f64, usize), String> {
    let model: DecoderModel = train(&datasets(train_pool, task, kind)?, kind, &train_cfg(kind)).map_err(fail)?;
    let ev = evaluate(&model, &datasets(test_pool, task, kind)?).map_err(fail)?;
    Ok((ev.trial.accuracy, ev.trial.n))
}

fn criterion_6() -> Check {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (task, seed) in [(Task::MI, 600u64), (Task::VI, 700)] {
        let chance = task.chance_level();
        let train_pool = pool(task, 0.0, 4 * BLOCK_TRIALS, seed, true)?;
        let test_pool = pool(task, 0.0, 11 * BLOCK_TRIALS, seed + 50, true)?;
        let mut cells = Vec::new();
        for kind in DecoderKind::ALL {
            let (acc, n) = trial_accuracy(&train_pool, &test_pool, task, kind)?;
            pass &= n >= 500 && (acc - chance).abs() <= 0.05;
            cells.push(format!("{kind} {:.1}", 100.0 * acc));
            if kind == DecoderKind::ALL[0] {
                cells[0] = format!("n={n}: {}", cells[0]);
            }
        }
        parts.push(format!("sep 0 {task} [{}] (chance {:.1} +/- 5)", cells.join(", "), 100.0 * chance));
    }
    for (task, floor, seed) in [(Task::MI, 0.95, 800u64), (Task::VI, 0.90, 900)] {
        let train_pool = pool(task, 1.0, 2 * BLOCK_TRIALS, seed, false)?;
        let test_pool = pool(task, 1.0, 2 * BLOCK_TRIALS, seed + 50, false)?;
        let (acc, n) = trial_accuracy(&train_pool, &test_pool, task, DecoderKind::Mlp)?;
        pass &= acc >= floor;
        parts.push(format!("sep 1 {task} Mlp {:.1} on {n} trials (>= {:.0})", 100.0 * acc, 100.0 * floor));
    }
    let el = t0.elapsed();
    pass &= within(el, 600.0);
    Ok((pass, format!("{}; {:.0} s (limit 600 s)", parts.join("; "), el.as_secs_f64())))
}

// 7 -----------------------------------------------------------------------

fn criterion_7() -> Check {
    let t0 = Instant::now();
    let rates = ComponentRates::reference();
    let mc = simulate_system(rates, 5000, 2024).map_err(fail)?;
    let text = mc.render();
    let flagged = text.contains(&format!("{REFERENCE_SYSTEM_ACCURACY:.4}")) && text.contains("differs");
    let el = t0.elapsed();
    let pass =
        (mc.empirical - 0.1916).abs() <= 0.02 && (mc.product - 0.1916).abs() < 5e-5 && flagged && within(el, 60.0);
    Ok((
        pass,
        format!(
            "joint {:.4} over 5000 vs product {:.4} (+/- 0.02); reference 0.2088 printed and flagged: {flagged}; {:.2} s (limit 60 s)",
            mc.empirical,
            mc.product,
            el.as_secs_f64()
        ),
    ))
}

// 8 -----------------------------------------------------------------------

fn criterion_8() -> Check {
    let t0 = Instant::now();
    let cfg = RobotConfig { seed: 8, ..RobotConfig::default() };
    let mut exec = SimExecutor::new(cfg.clone()).map_err(fail)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (o, want) in ObjectKind::ALL.into_iter().zip([0.8983, 0.5584, 0.8444]) {
        let req = scenario_map(o, Some(Placement::Left), Scenario::BaseDemo);
        let mut ok = 0;
        for _ in 0..10_000 {
            ok += exec.execute(&req).map_err(fail)?.grasp_ok as usize;
        }
        let rate = ok as f64 / 10_000.0;
        pass &= (rate - want).abs() <= 0.01 && cfg.grasp_prob(o) == want;
        parts.push(format!("{} {rate:.4} (want {want:.4})", o.as_str()));
    }
    let el = t0.elapsed();
    pass &= within(el, 10.0);
    Ok((pass, format!("10000 attempts each: {} (+/- 0.01); {:.2} s (limit 10 s)", parts.join(", "), el.as_secs_f64())))
}

// 9 -----------------------------------------------------------------------

fn random_recording(rng: &mut ChaCha8Rng) -> Recording {
    let nc = rng.random_range(1..=8);
    let ns = rng.random_range(1..=4000);
    let fs = [250.0, 500.0, 1000.0, 1234.5][rng.random_range(0..4)];
    let roles = [ChannelRole::ScalpEeg, ChannelRole::Mastoid, ChannelRole::Eog, ChannelRole::Ecg];
    let chans =
        Montage::from_specs((0..nc).map(|i| (format!("C{i}"), roles[rng.random_range(0..4)]))).unwrap().into_channels();
    let data: Vec<f32> = (0..nc * ns).map(|_| f32::from_bits(rng.random::<u32>() & 0xBFFF_FFFF)).collect();
    let mut idx: Vec<u64> = (0..rng.random_range(0..20)).map(|_| rng.random_range(0..ns as u64)).collect();
    idx.sort_unstable();
    let triggers = idx
        .into_iter()
        .map(|s| {
            let code = TriggerCode::ALL[rng.random_range(0..TriggerCode::ALL.len())];
            if rng.random_bool(0.5) {
                let l =
                    [ClassLabel::APPLE, ClassLabel::BANANA, ClassLabel::ORANGE, ClassLabel::LEFT, ClassLabel::RIGHT];
                TriggerEvent::labeled(code, s, l[rng.random_range(0..5)])
            } else {
                TriggerEvent::new(code, s)
            }
        })
        .collect();
    Recording::new(chans, fs, ns, data, triggers).unwrap()
}

fn same_bits(a: &Recording, b: &Recording) -> bool {
    a.channels() == b.channels()
        && a.sample_rate_hz().to_bits() == b.sample_rate_hz().to_bits()
        && a.n_samples() == b.n_samples()
        && a.triggers() == b.triggers()
        && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_9() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut exact = 0;
    for i in 0..100 {
        let rec = Arc::new(random_recording(&mut rng));
        let (mut reader, mut writer) = loopback().map_err(fail)?;
        let opts = ServeOptions { clock: ClockMode::Unpaced, chunk_size: 1 + i % 64 };
        let server = {
            let rec = rec.clone();
            std::thread::spawn(move || serve_replay(&rec, &mut writer, &opts))
        };
        let got = collect_recording(&mut reader).map_err(fail)?;
        server.join().map_err(|_| "server panicked")?.map_err(fail)?;
        exact += same_bits(&rec, &got) as usize;
    }

    // Malformed frames: truncations, bit flips, bad lengths and random bytes.
    let seeds = [
        Frame::Bye,
        Frame::Trigger { code: TriggerCode::TaskViEnd, sample_index: 42, label: Some("Apple".into()) },
        Frame::Chunk { first_sample: 9, n_frames: 3, samples: vec![1.0; 6] },
    ];
    let mut encoded = Vec::new();
    for f in &seeds {
        let mut buf = Vec::new();
        encode_frame(f, &mut buf).map_err(fail)?;
        encoded.push(buf);
    }
    let mut crashes = 0;
    let mut rejected = 0;
    for i in 0..10_000 {
        let mut bytes = encoded[i % encoded.len()].clone();
        match i % 4 {
            0 => bytes.truncate(rng.random_range(0..bytes.len())),
            1 => {
                let at = rng.random_range(0..bytes.len());
                bytes[at] ^= 1 << rng.random_range(0..8);
            }
            2 => bytes[..4].copy_from_slice(&rng.random::<u32>().to_le_bytes()),
            _ => bytes = (0..rng.random_range(0..64)).map(|_| rng.random()).collect(),
        }
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let a = decode_frame(&bytes);
            let b = read_frame(&mut bytes.as_slice().chain(std::io::empty()));
            a.is_err() || b.is_err()
        }));
        match outcome {
            Ok(err) => rejected += err as usize,
            Err(_) => crashes += 1,
        }
    }
    let el = t0.elapsed();
    let pass = exact == 100 && crashes == 0 && within(el, 60.0);
    Ok((
        pass,
        format!(
            "{exact}/100 recordings bit-exact; 10000 malformed frames, {crashes} crashes ({rejected} rejected, rest decoded or incomplete); {:.2} s (limit 60 s)",
            el.as_secs_f64()
        ),
    ))
}

// 10 ----------------------------------------------------------------------

fn criterion_10() -> Check {
    let t0 = Instant::now();
    let truth = random_truth(4, 10);
    let script =
        Arc::new(generate_online_stream_script(&SynthConfig::new(Task::VI, 4, 1.0, 10), &truth).map_err(fail)?);
    let mut worst_ms = 0u64;
    let mut rows = 0;
    for timing in [TimingMode::Modeled, TimingMode::Measured] {
        let cfg = PipelineConfig { timing, ..PipelineConfig::default() };
        let pipe = OnlinePipeline::new(cfg, TaskDecoder::Oracle(Task::VI), TaskDecoder::Oracle(Task::MI), None)
            .map_err(fail)?;
        let (reader, mut writer) = loopback().map_err(fail)?;
        let handle = spawn_collector(reader, CollectorConfig::default());
        let server = {
            let rec = script.clone();
            std::thread::spawn(move || serve_replay(&rec, &mut writer, &ServeOptions::default()))
        };
        let mut exec = SimExecutor::new(RobotConfig::default()).map_err(fail)?;
        let report = pipe.run_session(handle.windows.iter(), truth.len(), &mut exec);
        handle.join().map_err(fail)?;
        server.join().map_err(|_| "server panicked")?.map_err(fail)?;
        if report.trials.len() != truth.len() {
            return Ok((false, format!("session stopped after {} trials", report.trials.len())));
        }
        let mut timings: Vec<_> = report.trials.iter().map(|t| t.timing).collect();
        timings.extend(report.mean_timing());
        for t in timings {
            let c = t.columns_ms();
            worst_ms = worst_ms.max(c[..8].iter().sum::<u64>().abs_diff(c[8]));
            rows += 1;
        }
    }

    // 60 s of a small montage replayed against the wall clock.
    let fs = 1000.0;
    let n = 60_000;
    let rec = scalp_rec((0..4).map(|c| tone(5.0 + c as f64, n, fs)).collect(), fs);
    let opts = ServeOptions { clock: ClockMode::Realtime, chunk_size: 40 };
    let stats = serve_replay(&rec, &mut std::io::sink(), &opts).map_err(fail)?;
    let el = t0.elapsed();
    let pass = worst_ms <= 1 && stats.max_drift_s < 0.2 && stats.elapsed_s >= 59.9;
    Ok((
        pass,
        format!(
            "{rows} timing rows, max |sum(stages) - total| {worst_ms} ms (<= 1); realtime replay {:.2} s, max drift {:.1} ms (< 200); {:.1} s",
            stats.elapsed_s,
            1000.0 * stats.max_drift_s,
            el.as_secs_f64()
        ),
    ))
}

// 11 ----------------------------------------------------------------------

fn criterion_11() -> Check {
    let train_pool = pool(Task::VI, 1.0, 12, 1100, false)?;
    let ds = Dataset::from_feature_vectors(&train_pool.features, Task::VI, FrequencyProfile::F40).map_err(fail)?;
    let model = train(&ds, DecoderKind::Mlp, &TrainConfig { epochs: 5, ..TrainConfig::default() }).map_err(fail)?;
    let truth = random_truth(1, 11);
    let online = generate_online_stream_script(&SynthConfig::new(Task::VI, 1, 1.0, 11), &truth).map_err(fail)?;
    let start = online.triggers().iter().find(|t| t.code == TriggerCode::TaskViStart).ok_or("no VI task")?.sample_index
        as usize;
    let buf = online.slice(start, start + 15_000).map_err(fail)?;
    let dec = TaskDecoder::Model(&model);
    let pipe =
        OnlinePipeline::new(PipelineConfig::default(), TaskDecoder::Model(&model), TaskDecoder::Oracle(Task::MI), None)
            .map_err(fail)?;
    let mut worst: f64 = 0.0;
    let mut split = (0.0, 0.0);
    for _ in 0..3 {
        let t0 = Instant::now();
        let d = pipe.decode(&dec, &buf, None).map_err(fail)?;
        let el = t0.elapsed().as_secs_f64();
        if el > worst {
            worst = el;
            split = (d.data_proc_s, d.infer_s);
        }
    }
    Ok((
        worst < 1.5,
        format!(
            "64 ch, 1000 Hz, 15 s buffer with 10 s crop: worst of 3 {:.3} s (data proc {:.3} s, inference {:.3} s) (< 1.5 s)",
            worst, split.0, split.1
        ),
    ))
}

// 12 ----------------------------------------------------------------------

fn imagery(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_imagery"))
        .args(args)
        .current_dir(dir)
        .env_remove("IMAGERY_DATA_DIR")
        .env("RUST_LOG", "error")
        .output()
        .map_err(fail)?;
    if !out.status.success() {
        return Err(format!("imagery {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn full_run(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    imagery(dir, &["synth", "--task", "vi", "--trials", "24", "--seed", "21", "--separability", "1", "-o", "vi.eegr"])?;
    imagery(dir, &["synth", "--task", "mi", "--trials", "24", "--seed", "22", "--separability", "1", "-o", "mi.eegr"])?;
    imagery(dir, &["synth", "--online", "3", "--seed", "23", "-o", "online.eegr"])?;
    for input in ["vi.eegr", "mi.eegr"] {
        imagery(
            dir,
            &["train", "-i", input, "--kinds", "mlp", "--epochs", "30", "--seed", "4", "--out-dir", "models"],
        )?;
    }
    let stdout = imagery(
        dir,
        &[
            "run-online",
            "--vi-model",
            "models/vi-mlp-f40.eegm",
            "--mi-model",
            "models/mi-mlp-f40.eegm",
            "--replay",
            "online.eegr",
            "--seed",
            "5",
            "--report",
            "report.txt",
        ],
    )?;
    let report = std::fs::read(dir.join("report.txt")).map_err(fail)?;
    if report != stdout {
        return Err("printed report differs from the report file".into());
    }
    Ok((report, std::fs::read(dir.join("models/vi-mlp-f40.eegm")).map_err(fail)?))
}

fn criterion_12() -> Check {
    let t0 = Instant::now();
    let (a, b) = (tempfile::tempdir().map_err(fail)?, tempfile::tempdir().map_err(fail)?);
    let (report_a, model_a) = full_run(a.path())?;
    let (report_b, model_b) = full_run(b.path())?;
    let same = report_a == report_b;
    Ok((
        same && !report_a.is_empty(),
        format!(
            "synth -> train -> run-online twice: reports {} ({} bytes), models {}; {:.1} s",
            if same { "byte-identical" } else { "DIFFER" },
            report_a.len(),
            if model_a == model_b { "byte-identical" } else { "differ" },
            t0.elapsed().as_secs_f64()
        ),
    ))
}

// -------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 12] = [
        ("DE oracle equivalence", criterion_1),
        ("filter response", criterion_2),
        ("gradient checks", criterion_3),
        ("ICA recovery and artifact rejection", criterion_4),
        ("windowing arithmetic", criterion_5),
        ("chance-level control and separable ceiling", criterion_6),
        ("system Monte-Carlo", criterion_7),
        ("grasp calibration", criterion_8),
        ("protocol round trip and fuzz", criterion_9),
        ("timing ledger and realtime drift", criterion_10),
        ("throughput", criterion_11),
        ("determinism", criterion_12),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let (pass, detail) = match catch_unwind(check) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        failures += !pass as usize;
        println!("{} [{id:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
