//! Predictor backed by a child process speaking the line protocol in [`wire`].

mod echo;
pub mod wire;

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use super::{PredictRequest, PredictResponse, Predictor, PredictorError, ProbabilityMap};
use crate::dataset::Sample;

pub use echo::{run_echo_child, EchoExit, EchoFault};
use wire::{decode_child_line, excerpt, ChildMessage, HostMessage, Raster};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteConfig {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
    /// Announced in the handshake.
    pub resolution: [usize; 2],
    pub modalities: Vec<String>,
}

impl RemoteConfig {
    /// Split a whitespace-separated command line (no shell quoting).
    pub fn from_command_line(command: &str) -> Result<Self, PredictorError> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| PredictorError::Spec("empty remote command".into()))?;
        Ok(Self { program, args: parts.collect(), timeout: DEFAULT_TIMEOUT, resolution: [0, 0], modalities: Vec::new() })
    }

    fn command_line(&self) -> String {
        std::iter::once(self.program.as_str()).chain(self.args.iter().map(String::as_str)).collect::<Vec<_>>().join(" ")
    }
}

struct ChildProcess {
    process: Child,
    stdin: ChildStdin,
    lines: Receiver<Option<String>>,
}

impl ChildProcess {
    fn status(&mut self) -> String {
        // give a dying child a moment to be reaped
        for _ in 0..50 {
            if let Ok(Some(status)) = self.process.try_wait() {
                return status.to_string();
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        "still running, stdout closed".into()
    }

    fn kill(&mut self) {
        let _ = self.process.kill();
        let _ = self.process.wait();
    }
}

pub struct RemotePredictor {
    cfg: RemoteConfig,
    child: Option<ChildProcess>,
    /// Image id and serialized prepare message, replayed after a restart.
    prepared: Option<(String, String)>,
    restarts: usize,
}

impl RemotePredictor {
    /// Spawns the child and completes the handshake.
    pub fn new(cfg: RemoteConfig) -> Result<Self, PredictorError> {
        let mut p = Self { cfg, child: None, prepared: None, restarts: 0 };
        p.spawn()?;
        Ok(p)
    }

    /// Number of times a crashed child was replaced.
    pub fn restarts(&self) -> usize {
        self.restarts
    }

    fn spawn(&mut self) -> Result<(), PredictorError> {
        let command = self.cfg.command_line();
        let mut process = Command::new(&self.cfg.program)
            .args(&self.cfg.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| PredictorError::Spawn { command: command.clone(), source })?;
        let stdin = process.stdin.take().expect("stdin piped");
        let stdout = process.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(Some(line)).is_err() {
                    break;
                }
            }
            let _ = tx.send(None);
        });
        self.child = Some(ChildProcess { process, stdin, lines: rx });
        let hello = HostMessage::Hello { resolution: self.cfg.resolution, modalities: self.cfg.modalities.clone() }.to_line();
        match self.exchange(&hello)? {
            ChildMessage::Ready => Ok(()),
            other => Err(unexpected("ready", &other)),
        }
    }

    fn exchange(&mut self, line: &str) -> Result<ChildMessage, PredictorError> {
        let timeout = self.cfg.timeout;
        let child = self.child.as_mut().ok_or_else(|| PredictorError::ChildExited {
            status: "not running".into(),
            raw: excerpt(line),
        })?;
        if writeln!(child.stdin, "{line}").and_then(|_| child.stdin.flush()).is_err() {
            let status = child.status();
            self.child = None;
            return Err(PredictorError::ChildExited { status, raw: excerpt(line) });
        }
        match child.lines.recv_timeout(timeout) {
            Ok(Some(reply)) => match decode_child_line(&reply)? {
                ChildMessage::Error { message } => Err(PredictorError::Remote(message)),
                msg => Ok(msg),
            },
            Ok(None) | Err(RecvTimeoutError::Disconnected) => {
                let status = child.status();
                child.kill();
                self.child = None;
                Err(PredictorError::ChildExited { status, raw: excerpt(line) })
            }
            Err(RecvTimeoutError::Timeout) => {
                child.kill();
                self.child = None;
                Err(PredictorError::Timeout { after: timeout, raw: excerpt(line) })
            }
        }
    }

    /// One request with a single restart if the child died underneath it.
    fn call(&mut self, line: &str) -> Result<ChildMessage, PredictorError> {
        if self.child.is_none() {
            self.spawn()?;
            self.replay_prepare(line)?;
        }
        match self.exchange(line) {
            Err(PredictorError::ChildExited { .. }) => {
                self.restarts += 1;
                self.spawn()?;
                self.replay_prepare(line)?;
                self.exchange(line)
            }
            other => other,
        }
    }

    fn replay_prepare(&mut self, current: &str) -> Result<(), PredictorError> {
        let Some((_, prepare)) = self.prepared.clone() else {
            return Ok(());
        };
        if prepare == current {
            return Ok(());
        }
        match self.exchange(&prepare)? {
            ChildMessage::Prepared => Ok(()),
            other => Err(unexpected("prepared", &other)),
        }
    }
}

fn unexpected(expected: &str, got: &ChildMessage) -> PredictorError {
    PredictorError::Protocol {
        field: "type".into(),
        message: format!("expected '{expected}'"),
        raw: excerpt(&got.to_line()),
    }
}

impl Predictor for RemotePredictor {
    fn describe(&self) -> String {
        format!("remote:{}", self.cfg.command_line())
    }

    fn prepare(&mut self, sample: &Sample) -> Result<Duration, PredictorError> {
        let start = Instant::now();
        let mut tensors = std::collections::BTreeMap::new();
        tensors.insert("rgb".to_string(), Raster::encode(&sample.rgb, 8));
        for m in &sample.modalities {
            tensors.insert(m.name.clone(), Raster::encode(&m.data, 16));
        }
        let line = HostMessage::Prepare { image_id: sample.id.clone(), tensors }.to_line();
        self.prepared = None;
        match self.call(&line)? {
            ChildMessage::Prepared => {
                self.prepared = Some((sample.id.clone(), line));
                Ok(start.elapsed())
            }
            other => Err(unexpected("prepared", &other)),
        }
    }

    fn predict(&mut self, request: &PredictRequest) -> Result<PredictResponse, PredictorError> {
        let start = Instant::now();
        if self.prepared.as_ref().is_none_or(|(id, _)| *id != request.image_id) {
            return Err(PredictorError::NotPrepared(request.image_id.clone()));
        }
        request.validate()?;
        let line = HostMessage::predict(request).to_line();
        let mask = match self.call(&line)? {
            ChildMessage::Mask { mask } => mask,
            other => return Err(unexpected("mask", &other)),
        };
        if (mask.height, mask.width) != request.dims() {
            return Err(PredictorError::Protocol {
                field: "mask".into(),
                message: format!("mask is {}x{}, request is {:?}", mask.height, mask.width, request.dims()),
                raw: excerpt(&ChildMessage::Mask { mask }.to_line()),
            });
        }
        let mask = mask.decode()?;
        Ok(PredictResponse { probabilities: ProbabilityMap::from_mask(&mask), click_time: start.elapsed() })
    }
}

impl Drop for RemotePredictor {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            drop(child.stdin);
            // closing stdin lets a well-behaved child exit; do not wait on a hung one
            match child.process.try_wait() {
                Ok(Some(_)) => {}
                _ => {
                    std::thread::sleep(Duration::from_millis(5));
                    if !matches!(child.process.try_wait(), Ok(Some(_))) {
                        let _ = child.process.kill();
                        let _ = child.process.wait();
                    }
                }
            }
        }
    }
}
