//! A line-protocol instrument emulator wrapping one simulated device, and a
//! [`DeviceBackend`] client that talks to it.
//!
//! Grammar (one command per `\n`-terminated line, one response line each):
//!
//! ```text
//! *IDN? | IDN?      -> SPINBENCH,1
//! RST               -> OK
//! PULSE <amps>      -> OK 0 | OK 1
//! READ?             -> <ohms>             e.g. 2.000000e1
//! SEED <u64>        -> OK
//! PARAM?            -> <i_bias_A> <i_delta_A>
//! QUIT              -> OK, then the server closes the session
//! anything else     -> ERR <code> <message>
//! ```
//!
//! A second connection while a session is open gets `ERR BUSY ...` in reply
//! to its first line and is closed.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, DeviceBackend, SimulatedBackend};
use crate::device::{DeviceParams, DEFAULT_H_AN, PULSE_INTERVAL, READ_DURATION};
use crate::error::Result;

pub const IDN: &str = "SPINBENCH,1";
pub const ERR_UNKNOWN: u16 = 100;
pub const ERR_ARITY: u16 = 101;
pub const ERR_NUMBER: u16 = 102;
pub const ERR_DEVICE: u16 = 103;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Device parameter file served by one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchDeviceConfig {
    #[serde(rename = "i_bias_A")]
    pub i_bias: f64,
    #[serde(rename = "i_delta_A")]
    pub i_delta: f64,
    #[serde(rename = "r_set_ohm")]
    pub r_set: f64,
    #[serde(rename = "r_reset_ohm")]
    pub r_reset: f64,
    pub seed: u64,
}

impl BenchDeviceConfig {
    pub fn from_params(p: &DeviceParams, seed: u64) -> Self {
        Self {
            i_bias: p.i_bias(),
            i_delta: p.i_delta(),
            r_set: p.r_set(),
            r_reset: p.r_reset(),
            seed,
        }
    }

    pub fn params(&self) -> Result<DeviceParams> {
        DeviceParams::with_readout(self.i_bias, self.i_delta, self.r_set, self.r_reset, DEFAULT_H_AN)
    }

    pub fn device(&self) -> Result<SimulatedBackend> {
        Ok(SimulatedBackend::new(self.params()?, self.seed))
    }
}

/// Protocol number rendering: exponent form, six digits after the point.
pub fn format_number(v: f64) -> String {
    format!("{v:.6e}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub line: String,
    pub quit: bool,
}

fn err(code: u16, msg: impl std::fmt::Display) -> Reply {
    Reply {
        line: format!("ERR {code} {msg}"),
        quit: false,
    }
}

fn ok(line: impl Into<String>) -> Reply {
    Reply {
        line: line.into(),
        quit: false,
    }
}

/// Applies one command line to `device`. Errors never touch the device.
pub fn execute(device: &mut SimulatedBackend, line: &str) -> Reply {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut parts = line.split_ascii_whitespace();
    let Some(verb) = parts.next() else {
        return err(ERR_UNKNOWN, "empty command");
    };
    let args: Vec<&str> = parts.collect();
    let arity = |n: usize| -> Option<Reply> {
        (args.len() != n).then(|| err(ERR_ARITY, format!("{verb} takes {n} argument(s), got {}", args.len())))
    };
    match verb {
        "*IDN?" | "IDN?" => arity(0).unwrap_or_else(|| ok(IDN)),
        "RST" => arity(0).unwrap_or_else(|| {
            device.reset().expect("simulated reset cannot fail");
            ok("OK")
        }),
        "PULSE" => {
            if let Some(e) = arity(1) {
                return e;
            }
            match args[0].parse::<f64>() {
                Ok(a) if a.is_finite() => match device.pulse(a) {
                    Ok(s) => ok(format!("OK {}", s as u8)),
                    Err(e) => err(ERR_DEVICE, e),
                },
                _ => err(ERR_NUMBER, format!("bad amplitude '{}'", args[0])),
            }
        }
        "READ?" => arity(0).unwrap_or_else(|| match device.read() {
            Ok(r) => ok(format_number(r)),
            Err(e) => err(ERR_DEVICE, e),
        }),
        "SEED" => {
            if let Some(e) = arity(1) {
                return e;
            }
            match args[0].parse::<u64>() {
                Ok(s) => {
                    device.reseed(s);
                    ok("OK")
                }
                Err(_) => err(ERR_NUMBER, format!("bad seed '{}'", args[0])),
            }
        }
        "PARAM?" => arity(0).unwrap_or_else(|| {
            let p = device.params();
            ok(format!("{} {}", format_number(p.i_bias()), format_number(p.i_delta())))
        }),
        "QUIT" => arity(0).unwrap_or_else(|| Reply {
            line: "OK".into(),
            quit: true,
        }),
        other => err(ERR_UNKNOWN, format!("unknown command '{other}'")),
    }
}

/// Runs a transcript of command lines against `device`, returning the replies.
pub fn run_script<'a>(device: &mut SimulatedBackend, lines: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut out = Vec::new();
    for l in lines {
        let r = execute(device, l);
        out.push(r.line);
        if r.quit {
            break;
        }
    }
    out
}

/// One emulated instrument bound to one endpoint.
pub struct BenchServer {
    listener: TcpListener,
    device: Arc<Mutex<SimulatedBackend>>,
    realistic_timing: bool,
}

impl BenchServer {
    pub fn bind(addr: impl ToSocketAddrs, config: &BenchDeviceConfig) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            device: Arc::new(Mutex::new(config.device()?)),
            realistic_timing: false,
        })
    }

    /// Sleep for the bench's pulse interval and read duration on each command.
    pub fn with_realistic_timing(mut self, on: bool) -> Self {
        self.realistic_timing = on;
        self
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves until `stop` is set; a connection is needed to wake the
    /// accept loop afterwards. Open sessions are left to finish on their own.
    pub fn serve_until(self, stop: Arc<AtomicBool>) -> Result<()> {
        let busy = Arc::new(AtomicBool::new(false));
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            if busy.swap(true, Ordering::SeqCst) {
                std::thread::spawn(move || refuse(stream));
                continue;
            }
            let device = Arc::clone(&self.device);
            let busy = Arc::clone(&busy);
            let timing = self.realistic_timing;
            std::thread::spawn(move || {
                let _ = session(stream, &device, timing);
                busy.store(false, Ordering::SeqCst);
            });
        }
        Ok(())
    }

    pub fn serve(self) -> Result<()> {
        self.serve_until(Arc::new(AtomicBool::new(false)))
    }

    /// Serves on a background thread until the handle is shut down or dropped.
    pub fn spawn(self) -> Result<BenchHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            let _ = self.serve_until(flag);
        });
        Ok(BenchHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

fn refuse(stream: TcpStream) {
    let mut reader = BufReader::new(&stream);
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) > 0 {
        let _ = (&stream).write_all(b"ERR BUSY device held by another session\n");
    }
}

fn session(stream: TcpStream, device: &Mutex<SimulatedBackend>, timing: bool) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let cmd = line.strip_suffix('\n').unwrap_or(&line);
        let reply = {
            let mut dev = device.lock().map_err(|_| std::io::Error::other("device lock poisoned"))?;
            execute(&mut dev, cmd)
        };
        if timing {
            pace(cmd);
        }
        writer.write_all(reply.line.as_bytes())?;
        writer.write_all(b"\n")?;
        if reply.quit {
            return Ok(());
        }
    }
}

fn pace(cmd: &str) {
    let secs = match cmd.split_ascii_whitespace().next() {
        Some("RST" | "PULSE") => PULSE_INTERVAL,
        Some("READ?") => READ_DURATION,
        _ => 0.0,
    };
    std::thread::sleep(Duration::from_secs_f64(secs));
}

pub struct BenchHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl BenchHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
            let _ = t.join();
        }
    }
}

impl Drop for BenchHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Client side of the protocol as a [`DeviceBackend`].
pub struct RemoteBackend {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    completed: u64,
}

impl RemoteBackend {
    pub fn connect(addr: impl ToSocketAddrs) -> std::result::Result<Self, BackendError> {
        Self::connect_timeout(addr, DEFAULT_TIMEOUT)
    }

    /// Connects and checks the instrument identity.
    pub fn connect_timeout(addr: impl ToSocketAddrs, timeout: Duration) -> std::result::Result<Self, BackendError> {
        let io = |e: std::io::Error| BackendError::Io(e.to_string());
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs().map_err(io)?.collect();
        let mut last = BackendError::Io("no address to connect to".into());
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout)).map_err(io)?;
                    stream.set_write_timeout(Some(timeout)).map_err(io)?;
                    stream.set_nodelay(true).map_err(io)?;
                    let mut me = Self {
                        reader: BufReader::new(stream.try_clone().map_err(io)?),
                        writer: stream,
                        completed: 0,
                    };
                    let id = me.command("*IDN?")?;
                    if id != IDN {
                        return Err(BackendError::Protocol(format!("unexpected instrument '{id}'")));
                    }
                    me.completed = 0;
                    return Ok(me);
                }
                Err(e) => last = io(e),
            }
        }
        Err(last)
    }

    /// Commands answered since the identity check.
    pub fn completed(&self) -> u64 {
        self.completed
    }

    /// Sends one line and returns the reply, mapping `ERR` replies to errors.
    pub fn command(&mut self, line: &str) -> std::result::Result<String, BackendError> {
        let lost = |completed: u64, reason: String| BackendError::ConnectionLost { completed, reason };
        self.writer
            .write_all(format!("{line}\n").as_bytes())
            .map_err(|e| lost(self.completed, e.to_string()))?;
        let mut reply = String::new();
        match self.reader.read_line(&mut reply) {
            Ok(0) => return Err(lost(self.completed, "server closed the connection".into())),
            Ok(_) if !reply.ends_with('\n') => return Err(lost(self.completed, "reply truncated".into())),
            Ok(_) => {}
            Err(e) => return Err(lost(self.completed, e.to_string())),
        }
        let reply = reply.trim_end_matches('\n').to_string();
        if let Some(rest) = reply.strip_prefix("ERR ") {
            if rest.starts_with("BUSY") {
                return Err(BackendError::Busy);
            }
            let (code, message) = rest.split_once(' ').unwrap_or((rest, ""));
            return Err(BackendError::Remote {
                code: code.to_string(),
                message: message.to_string(),
            });
        }
        self.completed += 1;
        Ok(reply)
    }

    fn expect_ok(&mut self, line: &str) -> std::result::Result<String, BackendError> {
        let r = self.command(line)?;
        if r == "OK" || r.starts_with("OK ") {
            Ok(r)
        } else {
            Err(BackendError::Protocol(format!("'{line}' answered '{r}'")))
        }
    }

    pub fn pulse(&mut self, amps: f64) -> std::result::Result<bool, BackendError> {
        match self.expect_ok(&format!("PULSE {amps:e}"))?.as_str() {
            "OK 0" => Ok(false),
            "OK 1" => Ok(true),
            other => Err(BackendError::Protocol(format!("bad PULSE reply '{other}'"))),
        }
    }

    pub fn seed(&mut self, seed: u64) -> std::result::Result<(), BackendError> {
        self.expect_ok(&format!("SEED {seed}")).map(|_| ())
    }

    /// `(i_bias, i_delta)` reported by the instrument.
    pub fn params(&mut self) -> std::result::Result<(f64, f64), BackendError> {
        let r = self.command("PARAM?")?;
        let bad = || BackendError::Protocol(format!("bad PARAM? reply '{r}'"));
        let (a, b) = r.split_once(' ').ok_or_else(bad)?;
        Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
    }

    pub fn quit(mut self) -> std::result::Result<(), BackendError> {
        self.expect_ok("QUIT").map(|_| ())
    }
}

impl DeviceBackend for RemoteBackend {
    fn reset(&mut self) -> std::result::Result<(), BackendError> {
        self.expect_ok("RST").map(|_| ())
    }

    fn write(&mut self, amps: f64) -> std::result::Result<(), BackendError> {
        self.pulse(amps).map(|_| ())
    }

    fn read(&mut self) -> std::result::Result<f64, BackendError> {
        let r = self.command("READ?")?;
        r.parse()
            .map_err(|_| BackendError::Protocol(format!("bad READ? reply '{r}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64) -> BenchDeviceConfig {
        BenchDeviceConfig {
            i_bias: 1e-3,
            i_delta: 50e-6,
            r_set: -20.0,
            r_reset: 20.0,
            seed,
        }
    }

    #[test]
    fn grammar() {
        let mut d = config(1).device().unwrap();
        assert_eq!(execute(&mut d, "*IDN?").line, "SPINBENCH,1");
        assert_eq!(execute(&mut d, "IDN?").line, "SPINBENCH,1");
        assert_eq!(execute(&mut d, "RST").line, "OK");
        assert_eq!(execute(&mut d, "READ?").line, "2.000000e1");
        assert_eq!(execute(&mut d, "PULSE 1").line, "OK 1");
        assert_eq!(execute(&mut d, "READ?").line, "-2.000000e1");
        assert_eq!(execute(&mut d, "PARAM?").line, "1.000000e-3 5.000000e-5");
        assert_eq!(execute(&mut d, "SEED 42").line, "OK");
        assert_eq!(execute(&mut d, "QUIT"), Reply { line: "OK".into(), quit: true });
        assert_eq!(execute(&mut d, "RST\r").line, "OK");
    }

    #[test]
    fn errors_carry_codes_and_leave_state_alone() {
        let mut d = config(1).device().unwrap();
        d.write(1.0).unwrap();
        for (line, code) in [
            ("FOO", "100"),
            ("", "100"),
            ("RST 1", "101"),
            ("PULSE", "101"),
            ("PULSE abc", "102"),
            ("PULSE nan", "102"),
            ("SEED -1", "102"),
            ("read?", "100"),
        ] {
            let r = execute(&mut d, line).line;
            assert!(r.starts_with(&format!("ERR {code} ")), "{line:?} -> {r}");
        }
        assert_eq!(execute(&mut d, "READ?").line, "-2.000000e1");
    }

    #[test]
    fn seeded_replay_is_identical() {
        let script = ["SEED 42", "RST", "PULSE 1.0e-3", "READ?", "RST", "PULSE 1.02e-3", "READ?"];
        let a = run_script(&mut config(0).device().unwrap(), script);
        let b = run_script(&mut config(9).device().unwrap(), script);
        assert_eq!(a, b);
    }

    #[test]
    fn number_format() {
        assert_eq!(format_number(20.0), "2.000000e1");
        assert_eq!(format_number(1.0e-3), "1.000000e-3");
        assert_eq!(format_number(-0.5), "-5.000000e-1");
    }

    #[test]
    fn config_json_field_names() {
        let json = serde_json::to_value(config(3)).unwrap();
        for k in ["i_bias_A", "i_delta_A", "r_set_ohm", "r_reset_ohm", "seed"] {
            assert!(json.get(k).is_some(), "{k}");
        }
    }
}
