//! Line-delimited request/response protocol so that an external robot
//! bridge can stand in for the simulator.
//!
//! ```text
//! > EXEC <object> <placement|-> <scenario>
//! < OK <grasp 0|1> <place 0|1> <elapsed_s> <draw>,<draw>,...
//! < ERR <message>
//! ```

use std::io::{BufRead, BufReader, Read, Write};

use super::{ActionRequest, ActionResult, Executor, Placement, Result, RobotError};

pub fn format_request(req: &ActionRequest) -> String {
    let side = req.placement.map_or_else(|| "-".to_string(), |p| p.to_string());
    format!("EXEC {} {side} {}", req.object, req.scenario)
}

pub fn parse_request(line: &str) -> Result<ActionRequest> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let ["EXEC", object, side, scenario] = parts[..] else {
        return Err(RobotError::Link(format!("bad request {line:?}")));
    };
    let placement = match side {
        "-" => None,
        s => Some(s.parse::<Placement>()?),
    };
    Ok(ActionRequest { object: object.parse()?, placement, scenario: scenario.parse()? })
}

/// `{:?}` on f64 round-trips exactly, so replays stay bit-identical.
pub fn format_result(r: &ActionResult) -> String {
    let draws: Vec<String> = r.rng_draws.iter().map(|d| format!("{d:?}")).collect();
    format!("OK {} {} {:?} {}", r.grasp_ok as u8, r.place_ok as u8, r.elapsed_seconds, draws.join(","))
}

pub fn parse_response(line: &str) -> Result<ActionResult> {
    if let Some(msg) = line.strip_prefix("ERR ") {
        return Err(RobotError::Link(msg.trim().to_string()));
    }
    let bad = || RobotError::Link(format!("bad response {line:?}"));
    let parts: Vec<&str> = line.split_whitespace().collect();
    let ["OK", g, p, t, draws] = parts[..] else { return Err(bad()) };
    let flag = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(bad()),
    };
    Ok(ActionResult {
        grasp_ok: flag(g)?,
        place_ok: flag(p)?,
        elapsed_seconds: t.parse().map_err(|_| bad())?,
        rng_draws: draws.split(',').map(|d| d.parse().map_err(|_| bad())).collect::<Result<_>>()?,
    })
}

/// Answers requests from `input` until it closes. Request errors are
/// reported to the peer and do not end the loop.
pub fn serve_lines<R: Read, W: Write>(exec: &mut dyn Executor, input: R, mut output: W) -> std::io::Result<usize> {
    let mut served = 0;
    for line in BufReader::new(input).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match parse_request(&line).and_then(|req| exec.execute(&req)) {
            Ok(r) => format_result(&r),
            Err(e) => format!("ERR {e}"),
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}

/// Client side of the protocol over any byte stream.
pub struct LineClient<R: Read, W: Write> {
    reader: BufReader<R>,
    writer: W,
}

impl<R: Read, W: Write> LineClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader: BufReader::new(reader), writer }
    }
}

impl<R: Read, W: Write> Executor for LineClient<R, W> {
    fn execute(&mut self, req: &ActionRequest) -> Result<ActionResult> {
        let io = |e: std::io::Error| RobotError::Link(e.to_string());
        writeln!(self.writer, "{}", format_request(req)).map_err(io)?;
        self.writer.flush().map_err(io)?;
        let mut line = String::new();
        if self.reader.read_line(&mut line).map_err(io)? == 0 {
            return Err(RobotError::Link("executor closed the connection".into()));
        }
        parse_response(line.trim_end())
    }
}
