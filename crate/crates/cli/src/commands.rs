use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use imagery_core::decoders::{
    evaluate, load_model, save_model, stratified_split, train, Aggregation, Dataset, DecoderKind, DecoderModel,
};
use imagery_core::features::{extract_features, trim_and_window, write_feature_table, AnalysisWindow, FeatureVector};
use imagery_core::pipeline::{simulate_system, ComponentRates, OnlinePipeline, TaskDecoder, TimingMode};
use imagery_core::preprocess::{
    filter_and_rereference, fit_ica, reject_artifacts, FrequencyProfile, IcaFitOptions, IcaModel,
};
use imagery_core::recording::{
    read_recording, slice_epochs, write_recording, ChannelRole, ClassLabel, Phase, Recording, Task, TriggerCode,
};
use imagery_core::robotsim::line::LineClient;
use imagery_core::robotsim::{scenario_map, Executor, ObjectKind, Placement, Scenario, SimExecutor};
use imagery_core::stream::{
    loopback, serve_replay, serve_tcp, spawn_collector, ClockMode, CollectorConfig, ServeOptions, StreamError,
};
use imagery_core::synthgen::{generate_online_stream_script, generate_session, random_truth};

use crate::config::{config_err, RunConfig};
use crate::{Cli, Command, EvalArgs, OnlineArgs, PreprocessArgs, ReportArgs, ServeArgs, SynthArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.data_dir.is_some() {
        cfg.data_dir = cli.data_dir.clone();
    }
    let command = std::env::args().skip(1).collect::<Vec<_>>().join(" ");
    match cli.command {
        Command::Synth(a) => synth(cfg, a, &command),
        Command::Preprocess(a) => preprocess(cfg, a, &command),
        Command::Train(a) => train_grid(cfg, a, &command),
        Command::Eval(a) => eval(cfg, a),
        Command::Serve(a) => serve(cfg, a),
        Command::RunOnline(a) => run_online(cfg, a, &command),
        Command::Report(a) => report(cfg, a, &command),
    }
}

/// Relative paths live under the data directory when one is set.
fn resolve(cfg: &RunConfig, p: &Path) -> PathBuf {
    match &cfg.data_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn parse_task(s: &str) -> Result<Task> {
    s.parse().map_err(|e| config_err(format!("--task: {e}")))
}

fn parse_profile(s: &str) -> Result<FrequencyProfile> {
    s.parse().map_err(|e: String| config_err(format!("profile: {e}")))
}

fn parse_profiles(s: &str) -> Result<Vec<FrequencyProfile>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(FrequencyProfile::ALL.to_vec());
    }
    s.split(',').map(|p| parse_profile(p.trim())).collect()
}

fn parse_kinds(items: &[String]) -> Result<Vec<DecoderKind>> {
    if items.len() == 1 && items[0].eq_ignore_ascii_case("all") {
        return Ok(DecoderKind::ALL.to_vec());
    }
    items.iter().map(|k| k.trim().parse().map_err(|e| config_err(format!("decoder kind: {e}")))).collect()
}

fn parse_phase(s: &str) -> Result<Phase> {
    match s.to_ascii_lowercase().as_str() {
        "imagery" => Ok(Phase::Imagery),
        "perception" => Ok(Phase::Perception),
        _ => Err(config_err(format!("phase {s:?} is not imagery or perception"))),
    }
}

fn parse_clock(s: &str) -> Result<ClockMode> {
    s.parse().map_err(|e| config_err(format!("clock: {e}")))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn read_session(cfg: &RunConfig, p: &Path) -> Result<Recording> {
    let path = resolve(cfg, p);
    read_recording(&path).with_context(|| format!("reading {}", path.display()))
}

/// Task of the first labelled trigger.
fn session_task(rec: &Recording) -> Result<Task> {
    rec.triggers()
        .iter()
        .find_map(|t| t.label.map(|l| l.task()))
        .ok_or_else(|| config_err("recording has no labelled triggers"))
}

fn synth(mut cfg: RunConfig, a: SynthArgs, command: &str) -> Result<()> {
    if let Some(t) = &a.task {
        cfg.synth.task = parse_task(t)?;
    }
    if let Some(n) = a.trials {
        cfg.synth.n_trials = n;
    }
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    if let Some(s) = a.separability {
        cfg.synth.separability = s;
    }
    cfg.synth.validate().map_err(|e| config_err(e.to_string()))?;
    let s = &cfg.synth;
    let (rec, default_name) = match a.online {
        Some(n) => {
            let truth = random_truth(n, s.seed);
            (generate_online_stream_script(s, &truth)?, format!("online_n{n}_s{}.eegr", s.seed))
        }
        None => (generate_session(s)?, format!("{}_n{}_s{}.eegr", s.task.as_str().to_lowercase(), s.n_trials, s.seed)),
    };
    let out = resolve(&cfg, a.out.as_deref().unwrap_or(Path::new(&default_name)));
    ensure_parent(&out)?;
    write_recording(&rec, &out).with_context(|| format!("writing {}", out.display()))?;
    cfg.snapshot(&out, command)?;

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in rec.triggers() {
        if matches!(t.code, TriggerCode::ImageryStart | TriggerCode::TaskViStart | TriggerCode::TaskMiStart) {
            if let Some(l) = t.label {
                *counts.entry(l.name().to_string()).or_default() += 1;
            }
        }
    }
    let trials = match a.online {
        Some(n) => n,
        None => s.n_trials,
    };
    let per: Vec<String> = counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
    println!(
        "wrote {}: {} trials ({}), {} channels, {:.1} s",
        out.display(),
        trials,
        per.join(", "),
        rec.n_channels(),
        rec.duration_seconds()
    );
    Ok(())
}

/// Filter and re-reference, then optionally fit ICA and reject artifact
/// components.
fn clean(rec: &Recording, profile: FrequencyProfile, ica: Option<(f64, u64)>) -> Result<(Recording, Option<IcaModel>)> {
    let filtered = filter_and_rereference(rec, profile)?;
    match ica {
        None => Ok((filtered, None)),
        Some((threshold, seed)) => {
            let mut model = fit_ica(&filtered, &IcaFitOptions { seed, ..IcaFitOptions::default() })?;
            let cleaned = reject_artifacts(&filtered, &mut model, threshold)?;
            log::info!("ICA removed components {:?}", model.removed_components());
            Ok((cleaned, Some(model)))
        }
    }
}

fn preprocess(mut cfg: RunConfig, a: PreprocessArgs, command: &str) -> Result<()> {
    let profile = match &a.profile {
        Some(p) => parse_profile(p)?,
        None => cfg.grid.profiles.first().copied().unwrap_or(FrequencyProfile::F40),
    };
    cfg.grid.profiles = vec![profile];
    if let Some(p) = &a.phase {
        cfg.grid.phase = p.clone();
    }
    cfg.grid.ica |= a.ica;
    let phase = parse_phase(&cfg.grid.phase)?;
    let rec = read_session(&cfg, &a.input)?;
    let ica = cfg.grid.ica.then_some((cfg.grid.ica_threshold, cfg.grid.split_seed));
    let (clean_rec, model) = clean(&rec, profile, ica)?;
    let mut rows = Vec::new();
    for ep in slice_epochs(&clean_rec, phase)? {
        rows.extend(extract_features(&ep, profile)?);
    }
    let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "session".into());
    let out = resolve(&cfg, a.out.as_deref().unwrap_or(Path::new(&format!("{stem}_{profile}.eegf"))));
    ensure_parent(&out)?;
    let names: Vec<String> =
        clean_rec.channels().iter().filter(|c| c.role == ChannelRole::ScalpEeg).map(|c| c.name.clone()).collect();
    write_feature_table(&out, &rows, &names)?;
    if let Some(m) = &model {
        let path = out.with_extension("ica.json");
        fs::write(&path, serde_json::to_string_pretty(m)?).with_context(|| format!("writing {}", path.display()))?;
        println!("ICA removed components {:?}; model in {}", m.removed_components(), path.display());
    }
    cfg.snapshot(&out, command)?;
    println!(
        "wrote {}: {} windows x {} features",
        out.display(),
        rows.len(),
        rows.first().map_or(0, |r| r.values.len())
    );
    Ok(())
}

/// Features and (optionally) raw windows of every session for one profile.
struct Prepared {
    features: Vec<FeatureVector>,
    windows: Vec<AnalysisWindow>,
    labels: BTreeMap<usize, ClassLabel>,
    ica: Option<IcaModel>,
}

/// Trial ids are offset per session so that they stay unique.
const SESSION_STRIDE: usize = 1_000_000;

fn prepare(
    sessions: &[Recording],
    profile: FrequencyProfile,
    phase: Phase,
    want_windows: bool,
    ica: Option<(f64, u64)>,
) -> Result<Prepared> {
    let mut p = Prepared { features: vec![], windows: vec![], labels: BTreeMap::new(), ica: None };
    for (si, rec) in sessions.iter().enumerate() {
        let (clean_rec, model) = clean(rec, profile, ica)?;
        if p.ica.is_none() {
            p.ica = model;
        }
        for mut ep in slice_epochs(&clean_rec, phase)? {
            ep.trial_id += si * SESSION_STRIDE;
            p.labels.insert(ep.trial_id, ep.label);
            p.features.extend(extract_features(&ep, profile)?);
            if want_windows {
                p.windows.extend(trim_and_window(&ep)?);
            }
        }
    }
    Ok(p)
}

/// Accuracy grid with the best cell of each column marked `*` and of
/// each row marked `+`.
fn render_grid(
    title: &str,
    kinds: &[DecoderKind],
    profiles: &[FrequencyProfile],
    cells: &BTreeMap<(DecoderKind, FrequencyProfile), f64>,
) -> String {
    let mut s = format!("{title}\n{:<14}", "model");
    for p in profiles {
        let _ = write!(s, "{:>11}", p.to_string());
    }
    s.push('\n');
    let col_best: Vec<f64> = profiles
        .iter()
        .map(|p| kinds.iter().filter_map(|k| cells.get(&(*k, *p))).copied().fold(f64::MIN, f64::max))
        .collect();
    for k in kinds {
        let row_best = profiles.iter().filter_map(|p| cells.get(&(*k, *p))).copied().fold(f64::MIN, f64::max);
        let _ = write!(s, "{:<14}", k.to_string());
        for (j, p) in profiles.iter().enumerate() {
            match cells.get(&(*k, *p)) {
                Some(&v) => {
                    let mark =
                        format!("{}{}", if v == col_best[j] { "*" } else { "" }, if v == row_best { "+" } else { "" });
                    let _ = write!(s, "{:>9.2}{:<2}", 100.0 * v, mark);
                }
                None => {
                    let _ = write!(s, "{:>11}", "-");
                }
            }
        }
        s.push('\n');
    }
    s.push_str("* best in column, + best in row\n");
    s
}

fn train_grid(mut cfg: RunConfig, a: TrainArgs, command: &str) -> Result<()> {
    if let Some(k) = &a.kinds {
        cfg.grid.kinds = k.split(',').map(str::to_string).collect();
    }
    if let Some(p) = &a.profiles {
        cfg.grid.profiles = parse_profiles(p)?;
    }
    if let Some(e) = a.epochs {
        cfg.optimizer.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.optimizer.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.optimizer.seed = s;
        cfg.grid.split_seed = s;
    }
    if let Some(f) = a.test_fraction {
        cfg.grid.test_fraction = f;
    }
    if let Some(p) = &a.phase {
        cfg.grid.phase = p.clone();
    }
    cfg.grid.ica |= a.ica;
    if !(0.0 < cfg.grid.test_fraction && cfg.grid.test_fraction < 1.0) {
        return Err(config_err(format!("test fraction {} outside (0, 1)", cfg.grid.test_fraction)));
    }
    cfg.optimizer.validate()?;
    let kinds = parse_kinds(&cfg.grid.kinds)?;
    let phase = parse_phase(&cfg.grid.phase)?;
    let sessions: Vec<Recording> = a.inputs.iter().map(|p| read_session(&cfg, p)).collect::<Result<_>>()?;
    let task = session_task(&sessions[0])?;
    for s in &sessions[1..] {
        if session_task(s)? != task {
            return Err(config_err("all inputs must belong to the same task"));
        }
    }
    let out_dir = resolve(&cfg, a.out_dir.as_deref().unwrap_or(Path::new("models")));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let want_windows = kinds.iter().any(|k| k.uses_windows());
    let ica = cfg.grid.ica.then_some((cfg.grid.ica_threshold, cfg.grid.split_seed));
    let mut cells = BTreeMap::new();
    let mut n_test = 0;
    for &profile in &cfg.grid.profiles {
        let prep = prepare(&sessions, profile, phase, want_windows, ica)?;
        let feats = Dataset::from_feature_vectors(&prep.features, task, profile)?;
        let (feat_train, feat_test) = stratified_split(&feats, cfg.grid.test_fraction, cfg.grid.split_seed)?;
        let win_split = if want_windows {
            let labels = &prep.labels;
            let ds = Dataset::from_windows(&prep.windows, |t| labels[&t], task, profile)?;
            Some(stratified_split(&ds, cfg.grid.test_fraction, cfg.grid.split_seed)?)
        } else {
            None
        };
        if let Some(m) = &prep.ica {
            let path = out_dir.join(format!(
                "{}-ica-{}.json",
                task.as_str().to_lowercase(),
                profile.to_string().to_lowercase()
            ));
            fs::write(&path, serde_json::to_string_pretty(m)?)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        for &kind in &kinds {
            let (tr, te) = match (&win_split, kind.uses_windows()) {
                (Some((tr, te)), true) => (tr, te),
                _ => (&feat_train, &feat_test),
            };
            let model = train(tr, kind, &cfg.optimizer).with_context(|| format!("training {kind} on {profile}"))?;
            let ev = evaluate(&model, te)?;
            n_test = ev.trial.n;
            log::info!("{kind} {profile}: trial {:.4} window {:.4}", ev.trial.accuracy, ev.window.accuracy);
            cells.insert((kind, profile), ev.trial.accuracy);
            let path = out_dir.join(model_file_name(task, kind, profile));
            save_model(&model, &path)?;
        }
    }
    let title = format!("Offline trial accuracy (%), task {task}, {n_test} held-out trials");
    let grid = render_grid(&title, &kinds, &cfg.grid.profiles, &cells);
    let grid_path = out_dir.join(format!("{}-grid.txt", task.as_str().to_lowercase()));
    fs::write(&grid_path, &grid).with_context(|| format!("writing {}", grid_path.display()))?;
    cfg.snapshot(&grid_path, command)?;
    print!("{grid}");
    println!("models in {}", out_dir.display());
    Ok(())
}

pub fn model_file_name(task: Task, kind: DecoderKind, profile: FrequencyProfile) -> String {
    format!(
        "{}-{}-{}.eegm",
        task.as_str().to_lowercase(),
        kind.as_str().to_lowercase(),
        profile.to_string().to_lowercase()
    )
}

fn eval(cfg: RunConfig, a: EvalArgs) -> Result<()> {
    let phase = parse_phase(a.phase.as_deref().unwrap_or(&cfg.grid.phase))?;
    let sessions: Vec<Recording> = a.inputs.iter().map(|p| read_session(&cfg, p)).collect::<Result<_>>()?;
    let models: Vec<(PathBuf, DecoderModel)> = a
        .models
        .iter()
        .map(|p| {
            let path = resolve(&cfg, p);
            load_model(&path).with_context(|| format!("loading {}", path.display())).map(|m| (path, m))
        })
        .collect::<Result<_>>()?;
    let mut cache: BTreeMap<FrequencyProfile, Prepared> = BTreeMap::new();
    println!("{:<34}{:>6}{:>7}{:>10}{:>10}{:>8}", "model", "task", "prof", "window%", "trial%", "trials");
    for (path, m) in &models {
        if session_task(&sessions[0])? != m.task() {
            return Err(config_err(format!(
                "{} decodes {} but the inputs are {}",
                path.display(),
                m.task(),
                session_task(&sessions[0])?
            )));
        }
        let prep: &Prepared = match cache.entry(m.profile()) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(prepare(&sessions, m.profile(), phase, true, None)?),
        };
        let ds = if m.kind().uses_windows() {
            Dataset::from_windows(&prep.windows, |t| prep.labels[&t], m.task(), m.profile())?
        } else {
            Dataset::from_feature_vectors(&prep.features, m.task(), m.profile())?
        };
        let ev = evaluate(m, &ds)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        println!(
            "{:<34}{:>6}{:>7}{:>10.2}{:>10.2}{:>8}",
            name,
            m.task().as_str(),
            m.profile().to_string(),
            100.0 * ev.window.accuracy,
            100.0 * ev.trial.accuracy,
            ev.trial.n
        );
        log::info!("{}", ev.trial);
    }
    Ok(())
}

fn serve_options(cfg: &RunConfig, clock: Option<&str>, chunk: Option<usize>) -> Result<ServeOptions> {
    let opts = ServeOptions {
        clock: parse_clock(clock.unwrap_or(&cfg.stream.clock))?,
        chunk_size: chunk.unwrap_or(cfg.stream.chunk),
    };
    if opts.chunk_size == 0 {
        return Err(config_err("chunk size must be positive"));
    }
    Ok(opts)
}

fn serve(cfg: RunConfig, a: ServeArgs) -> Result<()> {
    let rec = read_session(&cfg, &a.input)?;
    let opts = serve_options(&cfg, a.clock.as_deref(), a.chunk)?;
    let addr = format!("{}:{}", a.host.as_deref().unwrap_or(&cfg.stream.host), a.port.unwrap_or(cfg.stream.port));
    eprintln!("waiting for one client on {addr}");
    let stats = match serve_tcp(&rec, addr.as_str(), &opts) {
        Err(StreamError::Io(e)) if matches!(e.kind(), ErrorKind::BrokenPipe | ErrorKind::ConnectionReset) => {
            println!("client disconnected before the end of the recording");
            return Ok(());
        }
        other => other?,
    };
    println!(
        "sent {} chunks and {} triggers in {:.3} s (max drift {:.1} ms)",
        stats.chunks,
        stats.triggers,
        stats.elapsed_s,
        1000.0 * stats.max_drift_s
    );
    Ok(())
}

fn load_ica(cfg: &RunConfig, p: &Path) -> Result<IcaModel> {
    let path = resolve(cfg, p);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn run_online(mut cfg: RunConfig, a: OnlineArgs, command: &str) -> Result<()> {
    if let Some(p) = &a.profile {
        cfg.pipeline.profile = parse_profile(p)?;
    }
    if let Some(g) = &a.aggregation {
        cfg.pipeline.aggregation = g.parse::<Aggregation>()?;
    }
    if let Some(t) = &a.timing {
        cfg.pipeline.timing = match t.to_ascii_lowercase().as_str() {
            "modeled" => TimingMode::Modeled,
            "measured" => TimingMode::Measured,
            _ => return Err(config_err(format!("timing {t:?} is not modeled or measured"))),
        };
    }
    if let Some(s) = a.seed {
        cfg.robot.seed = s;
    }
    if let Some(c) = &a.clock {
        cfg.stream.clock = c.clone();
    }
    let models: Option<(DecoderModel, DecoderModel)> = match (&a.vi_model, &a.mi_model) {
        (Some(v), Some(m)) => {
            let load = |p: &Path| {
                let path = resolve(&cfg, p);
                load_model(&path).with_context(|| format!("loading {}", path.display()))
            };
            let (vi, mi) = (load(v)?, load(m)?);
            if a.profile.is_none() && vi.profile() == mi.profile() {
                cfg.pipeline.profile = vi.profile();
            }
            Some((vi, mi))
        }
        _ => None,
    };
    let ica = a.ica_model.as_deref().map(|p| load_ica(&cfg, p)).transpose()?;
    let (vi, mi) = match &models {
        Some((v, m)) => (TaskDecoder::Model(v), TaskDecoder::Model(m)),
        None => (TaskDecoder::Oracle(Task::VI), TaskDecoder::Oracle(Task::MI)),
    };
    let pipeline = OnlinePipeline::new(cfg.pipeline.clone(), vi, mi, ica.as_ref())?;
    let mut executor: Box<dyn Executor> = match &a.robot_addr {
        Some(addr) => {
            let stream =
                std::net::TcpStream::connect(addr).with_context(|| format!("connecting to robot at {addr}"))?;
            Box::new(LineClient::new(stream.try_clone()?, stream))
        }
        None => Box::new(SimExecutor::new(cfg.robot.clone())?),
    };
    let collector_cfg = CollectorConfig { ring_seconds: cfg.stream.ring_seconds, ..CollectorConfig::default() };

    let report = match (&a.replay, &a.connect) {
        (Some(path), _) => {
            let rec = read_session(&cfg, path)?;
            let scripted = rec.triggers().iter().filter(|t| t.code == TriggerCode::TaskViStart).count();
            let n = a.trials.unwrap_or(scripted);
            let opts = serve_options(&cfg, None, None)?;
            let (reader, mut writer) = loopback()?;
            let handle = spawn_collector(reader, collector_cfg);
            let rec = Arc::new(rec);
            let server = {
                let rec = rec.clone();
                std::thread::spawn(move || serve_replay(&rec, &mut writer, &opts))
            };
            let report = pipeline.run_session(handle.windows.iter(), n, executor.as_mut());
            let complete = report.partial.is_none();
            let collected = handle.join();
            let served = server.join().map_err(|_| anyhow::anyhow!("replay thread panicked"))?;
            // Stopping early closes the pipe under the server; that is expected.
            if complete && n == scripted {
                served?;
                collected?;
            }
            report
        }
        (None, Some(addr)) => {
            let stream = std::net::TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
            let handle = spawn_collector(stream, collector_cfg);
            let report = pipeline.run_session(handle.windows.iter(), a.trials.unwrap_or(50), executor.as_mut());
            drop(handle);
            report
        }
        (None, None) => return Err(config_err("one of --replay or --connect is required")),
    };
    let text = report.render();
    let out = resolve(&cfg, a.report.as_deref().unwrap_or(Path::new("session-report.txt")));
    ensure_parent(&out)?;
    fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
    cfg.snapshot(&out, command)?;
    print!("{text}");
    if let Some(p) = &report.partial {
        return Err(StreamError::Protocol(format!("partial session: {p}")).into());
    }
    Ok(())
}

fn parse_rates(s: &str) -> Result<ComponentRates> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| config_err(format!("bad rate {x:?}"))))
        .collect::<Result<_>>()?;
    let [vi, grasp, mi, place] = v[..] else { bail!(config_err("--rates needs four values: vi,grasp,mi,place")) };
    Ok(ComponentRates { vi, grasp, mi, place })
}

fn report(mut cfg: RunConfig, a: ReportArgs, command: &str) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.robot.seed = s;
    }
    let rates = match &a.rates {
        Some(r) => parse_rates(r)?,
        None => ComponentRates::reference(),
    };
    let mc = simulate_system(rates, a.trials, cfg.robot.seed)?;
    let mut s = String::new();
    let _ = writeln!(s, "SYSTEM REPORT");
    let _ = writeln!(
        s,
        "component rates: VI {:.4}  grasp {:.4}  MI {:.4}  place {:.4}",
        rates.vi, rates.grasp, rates.mi, rates.place
    );
    let _ = writeln!(s, "{}", mc.render());
    let _ = writeln!(s, "grasp calibration ({} attempts per object, seed {}):", a.grasp_attempts, cfg.robot.seed);
    let mut exec = SimExecutor::new(cfg.robot.clone())?;
    let mut total = 0;
    for o in ObjectKind::ALL {
        let req = scenario_map(o, Some(Placement::Left), Scenario::BaseDemo);
        let mut ok = 0;
        for _ in 0..a.grasp_attempts {
            ok += exec.execute(&req)?.grasp_ok as usize;
        }
        total += ok;
        let rate = ok as f64 / a.grasp_attempts.max(1) as f64;
        let _ = writeln!(s, "  {:<8} configured {:.4}  empirical {:.4}", o.as_str(), cfg.robot.grasp_prob(o), rate);
    }
    let _ = writeln!(
        s,
        "  {:<8} configured {:.4}  empirical {:.4}  (equal mix)",
        "overall",
        cfg.robot.equal_mix_rate(),
        total as f64 / (3 * a.grasp_attempts).max(1) as f64
    );
    if let Some(p) = &a.out {
        let out = resolve(&cfg, p);
        ensure_parent(&out)?;
        fs::write(&out, &s).with_context(|| format!("writing {}", out.display()))?;
        cfg.snapshot(&out, command)?;
    }
    print!("{s}");
    Ok(())
}
