//! Emulated two-axis mirror controller: bounded position memory, playback
//! speed, and a line-oriented TCP protocol.
//!
//! ```text
//! > LOAD X 0.1,0.2,0.3        < OK
//! > LOAD Y 0,0,0              < OK
//! > SPEED 1                   < OK
//! > RUN                       < AT 0 0.1 0 / AT 1 0.2 0 / AT 2 0.3 0 / OK
//! > POS?                      < AT 2 0.3 0
//! ```
//!
//! Failures reply `ERR <code> <message>`. Time is simulated unless the
//! server runs in real-time mode, where emissions are paced by the clock.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::geometry::XYPosition;
use crate::planner::MIRROR_MEMORY;

pub const PROTOCOL_BANNER: &str = "MIRRORCTL 1";
pub const PORT_ENV: &str = "MIRRORCTL_PORT";
pub const DEFAULT_PORT: u16 = 7450;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Idle,
    Loaded,
    Running,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("{len} values exceed the {capacity}-value memory")]
    Length { len: usize, capacity: usize },
    #[error("value {0} outside [-1, 1]")]
    Range(f64),
    #[error("speed must be positive and finite, got {0}")]
    Speed(f64),
    #[error("{0}")]
    State(&'static str),
    #[error("{0}")]
    Syntax(String),
    #[error("controller already has a client")]
    Busy,
}

impl ControllerError {
    /// Short code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            ControllerError::Length { .. } => "LEN",
            ControllerError::Range(_) => "RANGE",
            ControllerError::Speed(_) => "SPEED",
            ControllerError::State(_) => "STATE",
            ControllerError::Syntax(_) => "SYNTAX",
            ControllerError::Busy => "BUSY",
        }
    }
}

/// One playback sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub t_ms: f64,
    pub xy: XYPosition,
}

impl fmt::Display for Emission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AT {} {} {}", self.t_ms, self.xy.x(), self.xy.y())
    }
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    capacity: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    speed: Option<f64>,
    cursor: usize,
    mode: Mode,
    last: Option<Emission>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self::new(MIRROR_MEMORY)
    }
}

impl ControllerState {
    pub fn new(capacity: usize) -> Self {
        ControllerState {
            capacity,
            x: Vec::new(),
            y: Vec::new(),
            speed: None,
            cursor: 0,
            mode: Mode::Idle,
            last: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn speed(&self) -> Option<f64> {
        self.speed
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn memory(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }

    /// Replaces one axis' memory. The whole load is rejected if any value is
    /// invalid.
    pub fn load_vector(&mut self, axis: Axis, values: &[f64]) -> Result<(), ControllerError> {
        if self.mode == Mode::Running {
            return Err(ControllerError::State("cannot load while running"));
        }
        if values.len() > self.capacity {
            return Err(ControllerError::Length {
                len: values.len(),
                capacity: self.capacity,
            });
        }
        if let Some(&v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(ControllerError::Range(v));
        }
        match axis {
            Axis::X => self.x = values.to_vec(),
            Axis::Y => self.y = values.to_vec(),
        }
        self.mode = if !self.x.is_empty() && !self.y.is_empty() {
            Mode::Loaded
        } else {
            Mode::Idle
        };
        Ok(())
    }

    pub fn set_speed(&mut self, values_per_ms: f64) -> Result<(), ControllerError> {
        if self.mode == Mode::Running {
            return Err(ControllerError::State("cannot change speed while running"));
        }
        if !(values_per_ms.is_finite() && values_per_ms > 0.0) {
            return Err(ControllerError::Speed(values_per_ms));
        }
        self.speed = Some(values_per_ms);
        Ok(())
    }

    /// Starts playback from the first stored pair. Memory is kept after a
    /// run, so a sequence can be replayed without reloading.
    pub fn start_run(&mut self) -> Result<(), ControllerError> {
        if self.mode == Mode::Running {
            return Err(ControllerError::State("already running"));
        }
        if self.x.is_empty() || self.y.is_empty() {
            return Err(ControllerError::State("memory not loaded"));
        }
        if self.x.len() != self.y.len() {
            return Err(ControllerError::State("X and Y memories differ in length"));
        }
        if self.speed.is_none() {
            return Err(ControllerError::State("speed not set"));
        }
        self.cursor = 0;
        self.mode = Mode::Running;
        Ok(())
    }

    /// Emits the sample under the cursor and advances; `None` once idle.
    pub fn advance(&mut self) -> Option<Emission> {
        if self.mode != Mode::Running {
            return None;
        }
        let k = self.cursor;
        let e = Emission {
            t_ms: k as f64 / self.speed.expect("running implies speed"),
            // stored values were range-checked on load
            xy: XYPosition::new(self.x[k], self.y[k]).expect("validated on load"),
        };
        self.last = Some(e);
        self.cursor += 1;
        if self.cursor == self.x.len() {
            self.cursor = 0;
            self.mode = Mode::Idle;
        }
        Some(e)
    }

    /// Time of the next emission while running.
    pub fn next_time_ms(&self) -> Option<f64> {
        (self.mode == Mode::Running).then(|| self.cursor as f64 / self.speed.unwrap_or(1.0))
    }

    pub fn run_sequence(&mut self) -> Result<Vec<Emission>, ControllerError> {
        self.start_run()?;
        Ok(std::iter::from_fn(|| self.advance()).collect())
    }

    /// Last emitted position, or rest if nothing has run yet.
    pub fn query_position(&self) -> XYPosition {
        self.last.map_or(XYPosition::REST, |e| e.xy)
    }

    pub fn last_emission(&self) -> Option<Emission> {
        self.last
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Load(Axis, Vec<f64>),
    Speed(f64),
    Run,
    Pos,
}

impl Command {
    pub fn parse(line: &str) -> Result<Command, ControllerError> {
        let line = line.trim();
        let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let syntax = |m: &str| ControllerError::Syntax(m.to_string());
        match word.to_ascii_uppercase().as_str() {
            "LOAD" => {
                let (axis, vals) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                let axis = match axis.to_ascii_uppercase().as_str() {
                    "X" => Axis::X,
                    "Y" => Axis::Y,
                    _ => return Err(syntax("LOAD expects axis X or Y")),
                };
                let vals = vals.trim();
                let values = if vals.is_empty() {
                    Vec::new()
                } else {
                    vals.split(',')
                        .map(|v| {
                            v.trim()
                                .parse::<f64>()
                                .map_err(|_| ControllerError::Syntax(format!("bad value `{}`", v.trim())))
                        })
                        .collect::<Result<_, _>>()?
                };
                Ok(Command::Load(axis, values))
            }
            "SPEED" => rest
                .parse()
                .map(Command::Speed)
                .map_err(|_| syntax("SPEED expects a number")),
            "RUN" if rest.is_empty() => Ok(Command::Run),
            "POS?" if rest.is_empty() => Ok(Command::Pos),
            _ => Err(ControllerError::Syntax(format!("unknown command `{line}`"))),
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Command::Load(axis, v) => {
                let a = if *axis == Axis::X { "X" } else { "Y" };
                let vals: Vec<String> = v.iter().map(f64::to_string).collect();
                format!("LOAD {a} {}", vals.join(","))
            }
            Command::Speed(s) => format!("SPEED {s}"),
            Command::Run => "RUN".into(),
            Command::Pos => "POS?".into(),
        }
    }
}

fn err_line(e: &ControllerError) -> String {
    format!("ERR {} {e}", e.code())
}

fn pos_line(state: &ControllerState) -> String {
    match state.last_emission() {
        Some(e) => e.to_string(),
        None => "AT 0 0 0".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServerOptions {
    /// Pace emissions with the wall clock instead of sending them at once.
    pub realtime: bool,
}

type Shared<T> = Arc<Mutex<T>>;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct ControllerServer {
    listener: TcpListener,
    state: Shared<ControllerState>,
    opts: ServerOptions,
    active: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
}

/// Handle to a server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

impl ControllerServer {
    pub fn bind(addr: impl ToSocketAddrs, opts: ServerOptions) -> std::io::Result<Self> {
        Ok(ControllerServer {
            listener: TcpListener::bind(addr)?,
            state: Arc::new(Mutex::new(ControllerState::default())),
            opts,
            active: Arc::new(AtomicBool::new(false)),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts clients until shut down. Only one client is served at a time;
    /// others get `ERR BUSY` and are disconnected.
    pub fn serve(self) -> std::io::Result<()> {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let mut stream = match stream {
                Ok(s) => s,
                Err(_) => continue,
            };
            if self.active.swap(true, Ordering::SeqCst) {
                let _ = writeln!(stream, "{}", err_line(&ControllerError::Busy));
                let _ = stream.shutdown(Shutdown::Both);
                continue;
            }
            let state = Arc::clone(&self.state);
            let active = Arc::clone(&self.active);
            let opts = self.opts;
            thread::spawn(move || {
                let _ = handle_client(stream, state, opts);
                active.store(false, Ordering::SeqCst);
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> std::io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let thread = thread::spawn(move || self.serve());
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

fn send(out: &Shared<TcpStream>, line: &str) -> std::io::Result<()> {
    let mut w = lock(out);
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()
}

fn handle_client(
    stream: TcpStream,
    state: Shared<ControllerState>,
    opts: ServerOptions,
) -> std::io::Result<()> {
    let out = Arc::new(Mutex::new(stream.try_clone()?));
    let capacity = lock(&state).capacity();
    send(&out, &format!("{PROTOCOL_BANNER} memory={capacity}"))?;
    let mut emitter: Option<JoinHandle<()>> = None;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cmd = match Command::parse(&line) {
            Ok(c) => c,
            Err(e) => {
                send(&out, &err_line(&e))?;
                continue;
            }
        };
        let mut st = lock(&state);
        match cmd {
            Command::Load(axis, v) => {
                let r = st.load_vector(axis, &v);
                drop(st);
                send(&out, &r.map_or_else(|e| err_line(&e), |_| "OK".into()))?;
            }
            Command::Speed(s) => {
                let r = st.set_speed(s);
                drop(st);
                send(&out, &r.map_or_else(|e| err_line(&e), |_| "OK".into()))?;
            }
            Command::Pos => {
                let l = pos_line(&st);
                drop(st);
                send(&out, &l)?;
            }
            Command::Run => {
                if let Err(e) = st.start_run() {
                    drop(st);
                    send(&out, &err_line(&e))?;
                } else if opts.realtime {
                    drop(st);
                    if let Some(h) = emitter.take() {
                        let _ = h.join();
                    }
                    let (state, out) = (Arc::clone(&state), Arc::clone(&out));
                    emitter = Some(thread::spawn(move || realtime_emit(state, out)));
                } else {
                    // hold the writer so the stream is not interleaved
                    let mut w = lock(&out);
                    while let Some(e) = st.advance() {
                        writeln!(w, "{e}")?;
                    }
                    writeln!(w, "OK")?;
                    w.flush()?;
                }
            }
        }
    }
    if let Some(h) = emitter {
        let _ = h.join();
    }
    Ok(())
}

fn realtime_emit(state: Shared<ControllerState>, out: Shared<TcpStream>) {
    let start = Instant::now();
    loop {
        let due = match lock(&state).next_time_ms() {
            Some(t) => t,
            None => break,
        };
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if due > elapsed {
            thread::sleep(Duration::from_secs_f64((due - elapsed) / 1e3));
        }
        let e = lock(&state).advance();
        match e {
            Some(e) if send(&out, &e.to_string()).is_ok() => {}
            _ => break,
        }
    }
    let _ = send(&out, "OK");
}

/// Blocking client for the text protocol.
pub struct ControllerClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    banner: String,
}

impl ControllerClient {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut banner = String::new();
        reader.read_line(&mut banner)?;
        Ok(ControllerClient {
            reader,
            writer,
            banner: banner.trim_end().to_string(),
        })
    }

    pub fn banner(&self) -> &str {
        &self.banner
    }

    pub fn read_line(&mut self) -> std::io::Result<String> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        Ok(line.trim_end().to_string())
    }

    pub fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }

    /// Sends a command and returns its single reply line.
    pub fn request(&mut self, cmd: &Command) -> std::io::Result<String> {
        self.send_line(&cmd.to_line())?;
        self.read_line()
    }

    /// Sends `RUN` and collects the emission stream up to the final `OK`.
    pub fn run(&mut self) -> std::io::Result<Result<Vec<Emission>, String>> {
        self.send_line("RUN")?;
        let mut out = Vec::new();
        loop {
            let line = self.read_line()?;
            if line == "OK" {
                return Ok(Ok(out));
            }
            if line.starts_with("ERR") {
                return Ok(Err(line));
            }
            match parse_at(&line) {
                Some(e) => out.push(e),
                None => return Ok(Err(format!("unexpected reply `{line}`"))),
            }
        }
    }
}

/// Parses an `AT <t> <x> <y>` line.
pub fn parse_at(line: &str) -> Option<Emission> {
    let mut it = line.split_whitespace();
    if it.next()? != "AT" {
        return None;
    }
    let t = it.next()?.parse().ok()?;
    let x = it.next()?.parse().ok()?;
    let y = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some(Emission {
        t_ms: t,
        xy: XYPosition::new(x, y).ok()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_limit() {
        let mut s = ControllerState::default();
        assert!(s.load_vector(Axis::X, &vec![0.0; 1500]).is_ok());
        assert_eq!(
            s.load_vector(Axis::X, &vec![0.0; 1501]).unwrap_err().code(),
            "LEN"
        );
        assert_eq!(s.load_vector(Axis::Y, &[0.0, 1.2]).unwrap_err().code(), "RANGE");
        assert_eq!(s.memory(Axis::X).len(), 1500);
        assert_eq!(s.mode(), Mode::Idle);
    }

    #[test]
    fn speed_examples() {
        let mut s = ControllerState::default();
        assert!(s.set_speed(0.025).is_ok());
        assert!(s.set_speed(-1.0).is_err());
        assert!(s.set_speed(0.0).is_err());
        s.load_vector(Axis::X, &[0.0, 0.1]).unwrap();
        s.load_vector(Axis::Y, &[0.0, 0.1]).unwrap();
        s.start_run().unwrap();
        assert_eq!(s.set_speed(1.0).unwrap_err().code(), "STATE");
    }

    #[test]
    fn run_examples() {
        let mut s = ControllerState::default();
        assert!(s.run_sequence().is_err());
        s.load_vector(Axis::X, &[0.1, 0.2, 0.5]).unwrap();
        s.load_vector(Axis::Y, &[0.0, 0.0, -0.5]).unwrap();
        s.set_speed(1.0).unwrap();
        let ts: Vec<f64> = s.run_sequence().unwrap().iter().map(|e| e.t_ms).collect();
        assert_eq!(ts, vec![0.0, 1.0, 2.0]);
        assert_eq!(s.mode(), Mode::Idle);
        assert_eq!(s.query_position(), XYPosition::new(0.5, -0.5).unwrap());

        let mut s = ControllerState::default();
        s.load_vector(Axis::X, &vec![0.0; 1500]).unwrap();
        s.load_vector(Axis::Y, &vec![0.0; 1500]).unwrap();
        s.set_speed(0.025).unwrap();
        assert_eq!(s.run_sequence().unwrap().last().unwrap().t_ms, 59_960.0);
    }

    #[test]
    fn query_before_and_during_run() {
        let mut s = ControllerState::default();
        assert_eq!(s.query_position(), XYPosition::REST);
        let xs = [0.1, 0.2, 0.3, 0.4];
        s.load_vector(Axis::X, &xs).unwrap();
        s.load_vector(Axis::Y, &[0.0; 4]).unwrap();
        s.set_speed(2.0).unwrap();
        s.start_run().unwrap();
        for k in 0..3 {
            s.advance();
            assert_eq!(s.query_position().x(), xs[k]);
        }
    }

    #[test]
    fn mismatched_axes_do_not_run() {
        let mut s = ControllerState::default();
        s.load_vector(Axis::X, &[0.0, 0.1]).unwrap();
        s.load_vector(Axis::Y, &[0.0]).unwrap();
        s.set_speed(1.0).unwrap();
        assert_eq!(s.start_run().unwrap_err().code(), "STATE");
    }

    #[test]
    fn command_parsing() {
        assert_eq!(
            Command::parse("LOAD X 0.1, -0.2,1").unwrap(),
            Command::Load(Axis::X, vec![0.1, -0.2, 1.0])
        );
        assert_eq!(Command::parse("load y").unwrap(), Command::Load(Axis::Y, vec![]));
        assert_eq!(Command::parse("SPEED 0.025").unwrap(), Command::Speed(0.025));
        assert_eq!(Command::parse("RUN").unwrap(), Command::Run);
        assert_eq!(Command::parse("POS?").unwrap(), Command::Pos);
        for bad in ["LOAD Z 1", "LOAD X 1,a", "SPEED", "JUMP", "RUN now"] {
            assert_eq!(Command::parse(bad).unwrap_err().code(), "SYNTAX", "{bad}");
        }
        let c = Command::Load(Axis::Y, vec![0.1, 1.0 / 3.0]);
        assert_eq!(Command::parse(&c.to_line()).unwrap(), c);
    }
}
