//! Client side of the analysis-sandbox wire protocol: one JSON request on
//! the child's stdin, one JSON response on its stdout.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::AttemptStatus;

/// Extra time granted past `timeout_s` before the child is killed.
pub const GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox unreachable: {0}")]
    Unreachable(String),
    #[error("invalid sandbox request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxRequest {
    pub code: String,
    /// Flat value maps, one per record.
    pub records: Vec<Value>,
    pub timeout_s: u64,
}

impl SandboxRequest {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.timeout_s < 1 {
            return Err(SandboxError::InvalidRequest("timeout_s must be at least 1".into()));
        }
        if self.code.trim().is_empty() {
            return Err(SandboxError::InvalidRequest("code is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxResponse {
    pub status: AttemptStatus,
    #[serde(default)]
    pub answer: Option<Value>,
    #[serde(default)]
    pub traceback: Option<String>,
    #[serde(default)]
    pub stdout: String,
}

impl SandboxResponse {
    pub fn error(traceback: impl Into<String>) -> Self {
        SandboxResponse {
            status: AttemptStatus::Error,
            answer: None,
            traceback: Some(traceback.into()),
            stdout: String::new(),
        }
    }

    pub fn timeout(after: Duration) -> Self {
        SandboxResponse {
            status: AttemptStatus::Timeout,
            answer: None,
            traceback: Some(format!("timed out after {:.1} s", after.as_secs_f64())),
            stdout: String::new(),
        }
    }
}

pub trait Sandbox: Send + Sync {
    fn execute(&self, request: &SandboxRequest) -> Result<SandboxResponse, SandboxError>;
}

/// Launches a fresh child process per request.
#[derive(Debug, Clone)]
pub struct ProcessSandbox {
    program: String,
    args: Vec<String>,
}

impl ProcessSandbox {
    /// `command` is the program followed by its arguments.
    pub fn new(command: &[String]) -> Result<Self, SandboxError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| SandboxError::Unreachable("empty sandbox command".into()))?;
        Ok(ProcessSandbox {
            program: program.clone(),
            args: args.to_vec(),
        })
    }
}

impl Sandbox for ProcessSandbox {
    fn execute(&self, request: &SandboxRequest) -> Result<SandboxResponse, SandboxError> {
        request.validate()?;
        let payload = serde_json::to_vec(request).expect("request serializes");
        let started = Instant::now();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SandboxError::Unreachable(format!("{}: {e}", self.program)))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&payload);
            let _ = stdin.write_all(b"\n");
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stdout.read_to_string(&mut buf);
            buf
        });
        let mut stderr = child.stderr.take().expect("piped stderr");
        let err_reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr.read_to_string(&mut buf);
            buf
        });

        let deadline = Duration::from_secs(request.timeout_s) + GRACE;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if started.elapsed() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(SandboxError::Unreachable(e.to_string())),
            }
        };
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        let Some(status) = status else {
            return Ok(SandboxResponse::timeout(started.elapsed()));
        };
        let line = out.lines().rev().find(|l| !l.trim().is_empty());
        match line.map(serde_json::from_str::<SandboxResponse>) {
            Some(Ok(resp)) => Ok(resp),
            Some(Err(e)) => Ok(SandboxResponse::error(format!(
                "malformed sandbox response ({e}): {}",
                out.trim()
            ))),
            None => Ok(SandboxResponse::error(format!(
                "sandbox exited with {status} and no output\n{}",
                err.trim()
            ))),
        }
    }
}
