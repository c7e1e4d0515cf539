//! Subprocess execution with a hard timeout.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

/// Captured output of a completed subprocess.
#[derive(Debug)]
pub struct ProcessOutput {
    pub stdout: String,
    pub stderr: String,
}

/// Why a subprocess call failed. Callers map this onto proposer- or
/// evaluator-failure errors as appropriate.
#[derive(Debug)]
pub enum ProcessFailure {
    Spawn(String),
    TimedOut { after: Duration },
    NonZeroExit { code: Option<i32>, stderr: String },
    Io(String),
}

impl std::fmt::Display for ProcessFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProcessFailure::Spawn(e) => write!(f, "failed to spawn: {e}"),
            ProcessFailure::TimedOut { after } => write!(f, "timed out after {after:?}"),
            ProcessFailure::NonZeroExit { code, stderr } => {
                write!(f, "exited with status {code:?}; stderr: {}", stderr.trim())
            }
            ProcessFailure::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

/// Runs `command` (argv form), writes `stdin_data` to its stdin, and
/// collects stdout/stderr. The child is killed if it outlives `timeout`.
pub fn run_with_timeout(
    command: &[String],
    stdin_data: &[u8],
    timeout: Duration,
) -> Result<ProcessOutput, ProcessFailure> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| ProcessFailure::Spawn("empty command".into()))?;

    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| ProcessFailure::Spawn(format!("{program}: {e}")))?;

    // Writer and readers run on their own threads so a child that never
    // reads stdin or floods a pipe cannot deadlock us.
    let mut stdin = child.stdin.take().expect("stdin piped");
    let data = stdin_data.to_vec();
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(&data);
        // dropping stdin closes the pipe
    });
    let mut stdout_pipe = child.stdout.take().expect("stdout piped");
    let stdout_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        use std::io::Read;
        let _ = stdout_pipe.read_to_string(&mut buf);
        buf
    });
    let mut stderr_pipe = child.stderr.take().expect("stderr piped");
    let stderr_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        use std::io::Read;
        let _ = stderr_pipe.read_to_string(&mut buf);
        buf
    });

    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if start.elapsed() >= timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    // Reader threads are left detached: surviving
                    // grandchildren may hold the pipes open, and joining
                    // would block on them.
                    return Err(ProcessFailure::TimedOut { after: timeout });
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(ProcessFailure::Io(e.to_string())),
        }
    };

    let _ = writer.join();
    let stdout = stdout_reader.join().unwrap_or_default();
    let stderr = stderr_reader.join().unwrap_or_default();

    if !status.success() {
        return Err(ProcessFailure::NonZeroExit { code: status.code(), stderr });
    }
    Ok(ProcessOutput { stdout, stderr })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn echoes_stdin() {
        let out = run_with_timeout(&sh("cat"), b"hello", Duration::from_secs(5)).unwrap();
        assert_eq!(out.stdout, "hello");
    }

    #[test]
    fn nonzero_exit_captures_stderr() {
        let err = run_with_timeout(&sh("echo boom >&2; exit 3"), b"", Duration::from_secs(5))
            .unwrap_err();
        match err {
            ProcessFailure::NonZeroExit { code, stderr } => {
                assert_eq!(code, Some(3));
                assert!(stderr.contains("boom"));
            }
            other => panic!("unexpected failure: {other:?}"),
        }
    }

    #[test]
    fn timeout_kills_child() {
        let started = Instant::now();
        let err = run_with_timeout(&sh("sleep 30"), b"", Duration::from_millis(200)).unwrap_err();
        assert!(matches!(err, ProcessFailure::TimedOut { .. }));
        assert!(started.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn missing_program_is_spawn_failure() {
        let err = run_with_timeout(
            &["definitely-not-a-real-binary-xyz".to_string()],
            b"",
            Duration::from_secs(1),
        )
        .unwrap_err();
        assert!(matches!(err, ProcessFailure::Spawn(_)));
    }
}
