//! Framed replay stream: a server that plays a [`Recording`] as Hello,
//! Chunk/Trigger and Bye frames, and a collector that reassembles the
//! scripted task windows from it.
//!
//! Triggers travel in-band and precede the chunk that contains their
//! sample, so window boundaries are sample-exact whatever the chunking.

pub mod frame;

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::str::FromStr;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frame::{decode_frame, encode_frame, read_frame, write_frame, Frame, StreamHeader};

use crate::recording::{ClassLabel, Recording, RecordingError, Task, TriggerCode, TriggerEvent};

pub const DEFAULT_CHUNK: usize = 40;
pub const DEFAULT_PORT: u16 = 47_310;
pub const DEFAULT_RING_SECONDS: f64 = 20.0;
/// Upper bound on buffered samples across all channels (1 GiB of `f32`).
pub const MAX_RING_VALUES: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("sample gap: expected chunk at {expected}, got {found}")]
    Gap { expected: u64, found: u64 },
    #[error("session is corrupt after an earlier protocol error")]
    Corrupt,
    #[error("window [{start}, {end}) is no longer buffered (oldest sample {oldest})")]
    WindowLost { start: u64, end: u64, oldest: u64 },
    #[error(transparent)]
    Recording(#[from] RecordingError),
}

pub type Result<T> = std::result::Result<T, StreamError>;

/// How the server paces chunks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClockMode {
    Realtime,
    /// Real time divided by the factor.
    Accelerated(f64),
    Unpaced,
}

impl ClockMode {
    fn speed(self) -> Option<f64> {
        match self {
            ClockMode::Realtime => Some(1.0),
            ClockMode::Accelerated(f) => Some(f),
            ClockMode::Unpaced => None,
        }
    }
}

impl fmt::Display for ClockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClockMode::Realtime => f.write_str("realtime"),
            ClockMode::Accelerated(x) => write!(f, "{x}x"),
            ClockMode::Unpaced => f.write_str("unpaced"),
        }
    }
}

impl FromStr for ClockMode {
    type Err = StreamError;

    /// `realtime`, `unpaced` or `<factor>x`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || StreamError::Protocol(format!("clock mode {s:?} is not realtime, unpaced or <factor>x"));
        match s.to_ascii_lowercase().as_str() {
            "realtime" => Ok(ClockMode::Realtime),
            "unpaced" => Ok(ClockMode::Unpaced),
            other => {
                let f: f64 = other.strip_suffix('x').ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if f > 0.0 && f.is_finite() {
                    Ok(ClockMode::Accelerated(f))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub clock: ClockMode,
    pub chunk_size: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { clock: ClockMode::Unpaced, chunk_size: DEFAULT_CHUNK }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServeStats {
    pub chunks: usize,
    pub triggers: usize,
    /// Largest lateness of a chunk against its ideal emission time.
    pub max_drift_s: f64,
    /// Lateness of the final chunk.
    pub final_drift_s: f64,
    pub elapsed_s: f64,
}

/// Streams `rec` to `out`. A chunk is due when its last sample would have
/// been acquired. On a write failure a Bye is attempted before returning.
pub fn serve_replay<W: Write>(rec: &Recording, out: &mut W, opts: &ServeOptions) -> Result<ServeStats> {
    if opts.chunk_size == 0 {
        return Err(StreamError::Protocol("chunk size must be positive".into()));
    }
    if let Some(speed) = opts.clock.speed() {
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(StreamError::Protocol(format!("clock factor {speed} must be positive")));
        }
    }
    let result = serve_frames(rec, out, opts);
    if result.is_err() {
        let _ = write_frame(out, &Frame::Bye).and_then(|_| out.flush().map_err(Into::into));
    }
    result
}

fn serve_frames<W: Write>(rec: &Recording, out: &mut W, opts: &ServeOptions) -> Result<ServeStats> {
    let (n, nc, fs) = (rec.n_samples(), rec.n_channels(), rec.sample_rate_hz());
    let mut buf = Vec::new();
    encode_frame(&Frame::Hello(StreamHeader { sample_rate_hz: fs, channels: rec.channels().to_vec() }), &mut buf)?;
    out.write_all(&buf)?;
    let mut stats = ServeStats::default();
    let triggers = rec.triggers();
    let mut next_trigger = 0;
    let t0 = Instant::now();
    let mut start = 0;
    while start < n {
        let len = opts.chunk_size.min(n - start);
        buf.clear();
        while next_trigger < triggers.len() && (triggers[next_trigger].sample_index as usize) < start + len {
            encode_frame(&trigger_frame(&triggers[next_trigger]), &mut buf)?;
            next_trigger += 1;
            stats.triggers += 1;
        }
        let mut samples = Vec::with_capacity(len * nc);
        for t in start..start + len {
            samples.extend((0..nc).map(|c| rec.data()[c * n + t]));
        }
        encode_frame(&Frame::Chunk { first_sample: start as u64, n_frames: len as u32, samples }, &mut buf)?;
        if let Some(speed) = opts.clock.speed() {
            let due = Duration::from_secs_f64((start + len) as f64 / fs / speed);
            if let Some(wait) = due.checked_sub(t0.elapsed()) {
                std::thread::sleep(wait);
            }
            let drift = t0.elapsed().as_secs_f64() - due.as_secs_f64();
            stats.max_drift_s = stats.max_drift_s.max(drift);
            stats.final_drift_s = drift;
        }
        out.write_all(&buf)?;
        if opts.clock.speed().is_some() {
            out.flush()?;
        }
        stats.chunks += 1;
        start += len;
    }
    buf.clear();
    // Unreachable for a validated recording; kept so no trigger is lost.
    for t in &triggers[next_trigger..] {
        encode_frame(&trigger_frame(t), &mut buf)?;
        stats.triggers += 1;
    }
    encode_frame(&Frame::Bye, &mut buf)?;
    out.write_all(&buf)?;
    out.flush()?;
    stats.elapsed_s = t0.elapsed().as_secs_f64();
    Ok(stats)
}

fn trigger_frame(t: &TriggerEvent) -> Frame {
    Frame::Trigger { code: t.code, sample_index: t.sample_index, label: t.label.map(|l| l.to_string()) }
}

fn parse_trigger(code: TriggerCode, sample_index: u64, label: Option<String>) -> Result<TriggerEvent> {
    let label = label.map(|l| l.parse::<ClassLabel>()).transpose()?;
    Ok(TriggerEvent { code, sample_index, label })
}

/// Binds `addr`, accepts one client and replays `rec` to it.
pub fn serve_tcp(rec: &Recording, addr: impl ToSocketAddrs, opts: &ServeOptions) -> Result<ServeStats> {
    let listener = TcpListener::bind(addr)?;
    log::info!("serving on {}", listener.local_addr()?);
    let (stream, peer) = listener.accept()?;
    log::info!("client {peer} connected");
    stream.set_nodelay(true)?;
    let mut w = std::io::BufWriter::new(stream);
    serve_replay(rec, &mut w, opts)
}

/// In-process byte pipe for tests and single-process sessions.
pub fn loopback() -> std::io::Result<(std::io::PipeReader, std::io::PipeWriter)> {
    std::io::pipe()
}

/// Shared ordering checks: Hello first, gapless chunks of the announced
/// width, non-decreasing triggers, nothing after Bye.
#[derive(Debug, Default)]
struct Sequencer {
    header: Option<StreamHeader>,
    next_sample: u64,
    last_trigger: u64,
    done: bool,
}

impl Sequencer {
    fn check(&mut self, frame: &Frame) -> Result<()> {
        if self.done {
            return Err(StreamError::Protocol(format!("{} frame after Bye", frame.kind())));
        }
        let Some(h) = &self.header else {
            return match frame {
                Frame::Hello(h) => {
                    self.header = Some(h.clone());
                    Ok(())
                }
                f => Err(StreamError::Protocol(format!("{} frame before Hello", f.kind()))),
            };
        };
        match frame {
            Frame::Hello(_) => Err(StreamError::Protocol("second Hello".into())),
            Frame::Chunk { first_sample, n_frames, samples } => {
                if *first_sample != self.next_sample {
                    return Err(StreamError::Gap { expected: self.next_sample, found: *first_sample });
                }
                if samples.len() != *n_frames as usize * h.channels.len() {
                    return Err(StreamError::Protocol(format!(
                        "chunk of {} samples is not {n_frames} frames of {} channels",
                        samples.len(),
                        h.channels.len()
                    )));
                }
                self.next_sample += *n_frames as u64;
                Ok(())
            }
            Frame::Trigger { sample_index, .. } => {
                if *sample_index < self.last_trigger {
                    return Err(StreamError::Protocol(format!(
                        "trigger at {sample_index} after one at {}",
                        self.last_trigger
                    )));
                }
                self.last_trigger = *sample_index;
                Ok(())
            }
            Frame::Bye => {
                self.done = true;
                Ok(())
            }
        }
    }
}

/// Reads a whole session back into a [`Recording`].
pub fn collect_recording<R: Read>(r: &mut R) -> Result<Recording> {
    let mut seq = Sequencer::default();
    let mut frames: Vec<f32> = Vec::new();
    let mut triggers = Vec::new();
    loop {
        let frame = read_frame(r)?.ok_or_else(|| StreamError::Protocol("stream ended without Bye".into()))?;
        seq.check(&frame)?;
        match frame {
            Frame::Chunk { samples, .. } => frames.extend_from_slice(&samples),
            Frame::Trigger { code, sample_index, label } => triggers.push(parse_trigger(code, sample_index, label)?),
            Frame::Bye => break,
            Frame::Hello(_) => {}
        }
    }
    let h = seq.header.expect("Bye implies Hello");
    let (nc, n) = (h.channels.len(), seq.next_sample as usize);
    let mut data = vec![0f32; nc * n];
    for (t, frame) in frames.chunks_exact(nc.max(1)).enumerate() {
        for (c, &v) in frame.iter().enumerate() {
            data[c * n + t] = v;
        }
    }
    Ok(Recording::new(h.channels, h.sample_rate_hz, n, data, triggers)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectorConfig {
    pub ring_seconds: f64,
    /// Windows held between the reader thread and the consumer.
    pub queue_capacity: usize,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self { ring_seconds: DEFAULT_RING_SECONDS, queue_capacity: 4 }
    }
}

/// One scripted task interval, `[TaskStart, TaskEnd)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWindow {
    pub task: Task,
    pub label: Option<ClassLabel>,
    pub start_sample: u64,
    /// The window's samples with no triggers.
    pub recording: Recording,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectorStats {
    pub chunks: usize,
    pub triggers: usize,
    pub windows: usize,
    /// Frames evicted from the ring before anyone asked for them.
    pub dropped_frames: u64,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    task: Task,
    label: Option<ClassLabel>,
    start: u64,
    end: u64,
}

/// Push-driven window assembler over a bounded ring buffer.
#[derive(Debug)]
pub struct Collector {
    cfg: CollectorConfig,
    seq: Sequencer,
    capacity: usize,
    ring: VecDeque<f32>,
    ring_start: u64,
    open: [Option<(u64, Option<ClassLabel>)>; 2],
    pending: VecDeque<Pending>,
    triggers: Vec<TriggerEvent>,
    stats: CollectorStats,
    corrupt: bool,
}

fn task_slot(task: Task) -> usize {
    match task {
        Task::VI => 0,
        Task::MI => 1,
    }
}

impl Collector {
    pub fn new(cfg: CollectorConfig) -> Self {
        Self {
            cfg,
            seq: Sequencer::default(),
            capacity: 0,
            ring: VecDeque::new(),
            ring_start: 0,
            open: [None, None],
            pending: VecDeque::new(),
            triggers: Vec::new(),
            stats: CollectorStats::default(),
            corrupt: false,
        }
    }

    pub fn header(&self) -> Option<&StreamHeader> {
        self.seq.header.as_ref()
    }

    pub fn stats(&self) -> CollectorStats {
        self.stats
    }

    pub fn triggers(&self) -> &[TriggerEvent] {
        &self.triggers
    }

    pub fn is_finished(&self) -> bool {
        self.seq.done
    }

    pub fn is_corrupt(&self) -> bool {
        self.corrupt
    }

    /// Feeds one frame; returns the windows it completed, in trigger order.
    /// Any error marks the session corrupt.
    pub fn push(&mut self, frame: Frame) -> Result<Vec<TaskWindow>> {
        if self.corrupt {
            return Err(StreamError::Corrupt);
        }
        let out = self.accept(frame);
        if out.is_err() {
            self.corrupt = true;
        }
        out
    }

    fn accept(&mut self, frame: Frame) -> Result<Vec<TaskWindow>> {
        self.seq.check(&frame)?;
        match frame {
            Frame::Hello(h) => {
                let frames = (self.cfg.ring_seconds * h.sample_rate_hz).round();
                if !(frames >= 1.0) {
                    return Err(StreamError::Protocol(format!("ring of {} s holds no samples", self.cfg.ring_seconds)));
                }
                let values = frames * h.channels.len() as f64;
                if h.channels.is_empty() || values > MAX_RING_VALUES as f64 {
                    return Err(StreamError::Protocol(format!(
                        "{} channels at {} Hz do not fit a {} s ring",
                        h.channels.len(),
                        h.sample_rate_hz,
                        self.cfg.ring_seconds
                    )));
                }
                self.capacity = frames as usize;
                self.ring = VecDeque::with_capacity(values as usize);
                Ok(vec![])
            }
            Frame::Chunk { samples, .. } => {
                self.stats.chunks += 1;
                let nc = self.n_channels();
                self.ring.extend(samples);
                let held = self.ring.len() / nc.max(1);
                if held > self.capacity {
                    let drop = held - self.capacity;
                    self.ring.drain(..drop * nc);
                    self.ring_start += drop as u64;
                    let before = self.stats.dropped_frames;
                    self.stats.dropped_frames += drop as u64;
                    if before == 0 {
                        log::debug!("ring buffer full; dropping oldest frames");
                    }
                }
                debug_assert_eq!(self.ring_start + (self.ring.len() / nc.max(1)) as u64, self.seq.next_sample);
                self.drain_ready()
            }
            Frame::Trigger { code, sample_index, label } => {
                self.stats.triggers += 1;
                let t = parse_trigger(code, sample_index, label)?;
                self.triggers.push(t);
                self.on_trigger(t)?;
                self.drain_ready()
            }
            Frame::Bye => {
                let ready = self.drain_ready()?;
                if let Some(p) = self.pending.front() {
                    return Err(StreamError::Protocol(format!(
                        "stream ended at {} before window end {}",
                        self.seq.next_sample, p.end
                    )));
                }
                Ok(ready)
            }
        }
    }

    fn n_channels(&self) -> usize {
        self.seq.header.as_ref().map_or(0, |h| h.channels.len())
    }

    fn on_trigger(&mut self, t: TriggerEvent) -> Result<()> {
        let (task, is_start) = match t.code {
            TriggerCode::TaskViStart => (Task::VI, true),
            TriggerCode::TaskViEnd => (Task::VI, false),
            TriggerCode::TaskMiStart => (Task::MI, true),
            TriggerCode::TaskMiEnd => (Task::MI, false),
            _ => return Ok(()),
        };
        let slot = &mut self.open[task_slot(task)];
        if is_start {
            if slot.is_some() {
                return Err(StreamError::Protocol(format!("{} while a {task} window is open", t.code)));
            }
            *slot = Some((t.sample_index, t.label));
            return Ok(());
        }
        let (start, label) =
            slot.take().ok_or_else(|| StreamError::Protocol(format!("{} without a matching start", t.code)))?;
        if t.sample_index - start > self.capacity as u64 {
            return Err(StreamError::Protocol(format!(
                "{task} window of {} frames exceeds the {}-frame ring",
                t.sample_index - start,
                self.capacity
            )));
        }
        self.pending.push_back(Pending { task, label, start, end: t.sample_index });
        Ok(())
    }

    fn drain_ready(&mut self) -> Result<Vec<TaskWindow>> {
        let mut out = Vec::new();
        while let Some(&p) = self.pending.front() {
            if p.end > self.seq.next_sample {
                break;
            }
            self.pending.pop_front();
            if p.start < self.ring_start {
                return Err(StreamError::WindowLost { start: p.start, end: p.end, oldest: self.ring_start });
            }
            out.push(self.extract(p)?);
            self.stats.windows += 1;
        }
        Ok(out)
    }

    fn extract(&self, p: Pending) -> Result<TaskWindow> {
        let h = self.seq.header.as_ref().expect("chunks imply Hello");
        let nc = h.channels.len();
        let n = (p.end - p.start) as usize;
        let offset = (p.start - self.ring_start) as usize;
        let mut data = vec![0f32; nc * n];
        for t in 0..n {
            for c in 0..nc {
                data[c * n + t] = self.ring[(offset + t) * nc + c];
            }
        }
        let recording = Recording::new(h.channels.clone(), h.sample_rate_hz, n, data, vec![])?;
        Ok(TaskWindow { task: p.task, label: p.label, start_sample: p.start, recording })
    }
}

/// Reader thread plus the bounded queue it fills.
pub struct CollectorHandle {
    pub windows: Receiver<Result<TaskWindow>>,
    thread: JoinHandle<Result<CollectorStats>>,
}

impl CollectorHandle {
    /// Waits for the reader to finish and returns its counters.
    pub fn join(self) -> Result<CollectorStats> {
        drop(self.windows);
        self.thread.join().map_err(|_| StreamError::Protocol("collector thread panicked".into()))?
    }
}

/// Spawns a reader that decodes frames from `r` and delivers completed
/// windows, in trigger order, through a queue of `queue_capacity`. An
/// error is delivered as the last item.
pub fn spawn_collector<R: Read + Send + 'static>(mut r: R, cfg: CollectorConfig) -> CollectorHandle {
    let (tx, rx) = sync_channel(cfg.queue_capacity.max(1));
    let thread = std::thread::spawn(move || {
        let mut c = Collector::new(cfg);
        let fail = |e: StreamError| {
            let msg = e.to_string();
            let _ = tx.send(Err(e));
            Err(StreamError::Protocol(msg))
        };
        loop {
            let frame = match read_frame(&mut r) {
                Ok(Some(f)) => f,
                Ok(None) if c.is_finished() => return Ok(c.stats()),
                Ok(None) => return fail(StreamError::Protocol("stream ended without Bye".into())),
                Err(e) => return fail(e),
            };
            match c.push(frame) {
                Ok(ws) => {
                    for w in ws {
                        if tx.send(Ok(w)).is_err() {
                            return Ok(c.stats());
                        }
                    }
                }
                Err(e) => return fail(e),
            }
        }
    });
    CollectorHandle { windows: rx, thread }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::{ChannelInfo, ChannelRole};

    fn tiny(n: usize, nc: usize, triggers: Vec<TriggerEvent>) -> Recording {
        let channels =
            (0..nc).map(|i| ChannelInfo { name: format!("C{i}"), role: ChannelRole::ScalpEeg, index: i }).collect();
        let data = (0..n * nc).map(|i| i as f32 * 0.5).collect();
        Recording::new(channels, 1000.0, n, data, triggers).unwrap()
    }

    fn frames_of(rec: &Recording, chunk: usize) -> Vec<Frame> {
        let mut buf = Vec::new();
        serve_replay(rec, &mut buf, &ServeOptions { chunk_size: chunk, ..ServeOptions::default() }).unwrap();
        let mut r = buf.as_slice();
        std::iter::from_fn(|| read_frame(&mut r).unwrap()).collect()
    }

    #[test]
    fn one_second_gives_25_chunks() {
        let frames = frames_of(&tiny(1000, 2, vec![]), 40);
        let starts: Vec<u64> = frames
            .iter()
            .filter_map(|f| match f {
                Frame::Chunk { first_sample, .. } => Some(*first_sample),
                _ => None,
            })
            .collect();
        assert_eq!(starts, (0..25).map(|i| i * 40).collect::<Vec<_>>());
        assert!(matches!(frames[0], Frame::Hello(_)));
        assert_eq!(frames.last(), Some(&Frame::Bye));
    }

    #[test]
    fn trigger_precedes_its_chunk() {
        let frames = frames_of(&tiny(1000, 1, vec![TriggerEvent::new(TriggerCode::Beep, 500)]), 40);
        let pos = frames.iter().position(|f| matches!(f, Frame::Trigger { .. })).unwrap();
        assert!(matches!(frames[pos - 1], Frame::Chunk { first_sample: 440, .. }));
        assert!(matches!(frames[pos + 1], Frame::Chunk { first_sample: 480, .. }));
    }

    #[test]
    fn unpaced_round_trip_is_exact() {
        let tr = vec![
            TriggerEvent::labeled(TriggerCode::TaskViStart, 3, ClassLabel::BANANA),
            TriggerEvent::new(TriggerCode::TaskViEnd, 997),
            TriggerEvent::new(TriggerCode::TrialEnd, 1000),
        ];
        let rec = tiny(1001, 3, tr);
        let mut buf = Vec::new();
        serve_replay(&rec, &mut buf, &ServeOptions { chunk_size: 37, ..ServeOptions::default() }).unwrap();
        assert_eq!(collect_recording(&mut buf.as_slice()).unwrap(), rec);
    }

    #[test]
    fn windows_are_sample_exact_across_chunk_boundaries() {
        let tr = vec![
            TriggerEvent::labeled(TriggerCode::TaskViStart, 123, ClassLabel::ORANGE),
            TriggerEvent::new(TriggerCode::TaskViEnd, 523),
            TriggerEvent::labeled(TriggerCode::TaskMiStart, 601, ClassLabel::LEFT),
            TriggerEvent::new(TriggerCode::TaskMiEnd, 901),
        ];
        let rec = tiny(1000, 2, tr);
        let mut c = Collector::new(CollectorConfig::default());
        let mut got = Vec::new();
        for f in frames_of(&rec, 40) {
            got.extend(c.push(f).unwrap());
        }
        assert_eq!(got.len(), 2);
        assert_eq!((got[0].task, got[0].label, got[0].start_sample), (Task::VI, Some(ClassLabel::ORANGE), 123));
        assert_eq!(got[0].recording.data(), rec.slice(123, 523).unwrap().data());
        assert!(got[0].recording.triggers().is_empty());
        assert_eq!(got[1].recording.n_samples(), 300);
        assert_eq!(got[1].recording.channel(1)[0], rec.channel(1)[601]);
    }

    #[test]
    fn out_of_order_chunk_corrupts_session() {
        let rec = tiny(200, 1, vec![]);
        let mut frames = frames_of(&rec, 40);
        frames.swap(2, 3);
        let mut c = Collector::new(CollectorConfig::default());
        let errs: Vec<_> = frames.into_iter().map(|f| c.push(f)).filter_map(|r| r.err()).collect();
        assert!(matches!(errs[0], StreamError::Gap { expected: 40, found: 80 }));
        assert!(errs[1..].iter().all(|e| matches!(e, StreamError::Corrupt)));
        assert!(c.is_corrupt());
    }

    #[test]
    fn frames_before_hello_rejected() {
        let mut c = Collector::new(CollectorConfig::default());
        assert!(matches!(c.push(Frame::Bye), Err(StreamError::Protocol(_))));
    }

    #[test]
    fn small_ring_drops_oldest_and_counts() {
        let rec = tiny(3000, 1, vec![]);
        let mut c = Collector::new(CollectorConfig { ring_seconds: 1.0, ..CollectorConfig::default() });
        for f in frames_of(&rec, 40) {
            c.push(f).unwrap();
        }
        assert_eq!(c.stats().dropped_frames, 2000);
    }

    #[test]
    fn window_longer_than_ring_is_an_error() {
        let tr = vec![TriggerEvent::new(TriggerCode::TaskMiStart, 0), TriggerEvent::new(TriggerCode::TaskMiEnd, 2500)];
        let rec = tiny(3000, 1, tr);
        let mut c = Collector::new(CollectorConfig { ring_seconds: 2.0, ..CollectorConfig::default() });
        assert!(frames_of(&rec, 40).into_iter().any(|f| c.push(f).is_err()));
    }

    #[test]
    fn threaded_collector_over_loopback() {
        let tr = vec![
            TriggerEvent::labeled(TriggerCode::TaskViStart, 100, ClassLabel::APPLE),
            TriggerEvent::new(TriggerCode::TaskViEnd, 2100),
        ];
        let rec = tiny(3000, 64, tr);
        let (r, mut w) = loopback().unwrap();
        let handle = spawn_collector(r, CollectorConfig::default());
        let server = {
            let rec = rec.clone();
            std::thread::spawn(move || serve_replay(&rec, &mut w, &ServeOptions::default()))
        };
        let windows: Vec<TaskWindow> = handle.windows.iter().map(|w| w.unwrap()).collect();
        server.join().unwrap().unwrap();
        let stats = handle.join().unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].recording.n_samples(), 2000);
        assert_eq!(stats.chunks, 75);
    }

    #[test]
    fn accelerated_pacing_tracks_schedule() {
        let rec = tiny(2000, 1, vec![]);
        let opts = ServeOptions { clock: ClockMode::Accelerated(10.0), chunk_size: 40 };
        let stats = serve_replay(&rec, &mut std::io::sink(), &opts).unwrap();
        assert!(stats.elapsed_s >= 0.19, "{}", stats.elapsed_s);
        assert!(stats.max_drift_s < 0.05, "{}", stats.max_drift_s);
    }

    #[test]
    fn clock_mode_parsing() {
        assert_eq!("realtime".parse::<ClockMode>().unwrap(), ClockMode::Realtime);
        assert_eq!("8x".parse::<ClockMode>().unwrap(), ClockMode::Accelerated(8.0));
        assert!("0x".parse::<ClockMode>().is_err());
        assert!("fast".parse::<ClockMode>().is_err());
    }
}
