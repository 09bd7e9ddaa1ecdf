use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use tracing::debug;

use super::{ExecError, RunLimits};
use crate::corpus::{outputs_match, FailReason, TestCase, Verdict};

const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Exited(i32),
    Signaled,
    TimedOut,
    OutputCapped,
}

#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub termination: Termination,
}

fn drain<R: Read>(mut src: R, cap: usize, overflow: Option<Arc<AtomicBool>>) -> Vec<u8> {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match src.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
                if n > room {
                    if let Some(flag) = &overflow {
                        flag.store(true, Ordering::SeqCst);
                        break;
                    }
                }
            }
        }
    }
    kept
}

/// Runs `cmd` to completion under the wall-clock and stdout limits.
///
/// stdout beyond `output_cap` kills the process; stderr is truncated
/// silently at the same cap.
pub fn run_process(
    mut cmd: Command,
    stdin: &[u8],
    limits: &RunLimits,
) -> Result<ProcessOutput, ExecError> {
    let program = cmd.get_program().to_string_lossy().into_owned();
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ExecError::Spawn { program, source })?;

    let mut child_stdin = child.stdin.take().expect("stdin piped");
    let input = stdin.to_vec();
    let writer = thread::spawn(move || {
        // the child may exit without reading; a broken pipe is expected then
        let _ = child_stdin.write_all(&input);
    });

    let overflow = Arc::new(AtomicBool::new(false));
    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");
    let cap = limits.output_cap;
    let flag = Arc::clone(&overflow);
    let out_reader = thread::spawn(move || drain(stdout, cap, Some(flag)));
    let err_reader = thread::spawn(move || drain(stderr, cap, None));

    let started = Instant::now();
    let termination = loop {
        if let Some(status) = child.try_wait()? {
            break match status.code() {
                Some(code) => Termination::Exited(code),
                None => Termination::Signaled,
            };
        }
        if overflow.load(Ordering::SeqCst) {
            let _ = child.kill();
            let _ = child.wait();
            break Termination::OutputCapped;
        }
        if started.elapsed() >= limits.wall_timeout {
            let _ = child.kill();
            let _ = child.wait();
            break Termination::TimedOut;
        }
        thread::sleep(POLL);
    };

    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    // the reader may notice the overflow only after the child exited
    let termination = if overflow.load(Ordering::SeqCst) {
        Termination::OutputCapped
    } else {
        termination
    };
    Ok(ProcessOutput {
        stdout,
        stderr,
        termination,
    })
}

/// How subject programs are launched.
#[derive(Debug, Clone)]
pub struct Sandbox {
    /// Interpreter argv; the program path is appended.
    pub interpreter: Vec<String>,
    pub limits: RunLimits,
}

impl Sandbox {
    pub fn new(interpreter: Vec<String>, limits: RunLimits) -> Self {
        Self {
            interpreter,
            limits,
        }
    }

    pub fn python(limits: RunLimits) -> Self {
        Self::new(vec!["python3".into()], limits)
    }

    /// A command with a scrubbed environment rooted in `cwd`.
    pub(crate) fn base_command(&self, argv: &[String], cwd: &std::path::Path) -> Command {
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]).current_dir(cwd).env_clear();
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }
        cmd.env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONIOENCODING", "utf-8");
        cmd
    }
}

#[derive(Debug, Clone)]
pub struct TestRun {
    pub test_id: String,
    pub verdict: Verdict,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub exit_code: Option<i32>,
}

/// Runs `source` on one test in a fresh temp directory.
pub fn run_test(source: &str, test: &TestCase, sandbox: &Sandbox) -> Result<TestRun, ExecError> {
    let dir = tempfile::tempdir()?;
    let program = dir.path().join("program.py");
    std::fs::write(&program, source)?;
    let mut argv = sandbox.interpreter.clone();
    argv.push(program.to_string_lossy().into_owned());
    let cmd = sandbox.base_command(&argv, dir.path());
    let out = run_process(cmd, &test.input, &sandbox.limits)?;

    let (verdict, exit_code) = match out.termination {
        Termination::TimedOut => (Verdict::Fail(FailReason::Timeout), None),
        Termination::OutputCapped => (Verdict::Fail(FailReason::OutputCap), None),
        Termination::Signaled => (Verdict::Fail(FailReason::NonzeroExit), None),
        Termination::Exited(0) if outputs_match(&out.stdout, &test.expected_output) => {
            (Verdict::Pass, Some(0))
        }
        Termination::Exited(0) => (Verdict::Fail(FailReason::WrongOutput), Some(0)),
        Termination::Exited(code) => (Verdict::Fail(FailReason::NonzeroExit), Some(code)),
    };
    debug!(test = %test.id, ?verdict, "baseline run");
    Ok(TestRun {
        test_id: test.id.clone(),
        verdict,
        stdout: out.stdout,
        stderr: out.stderr,
        exit_code,
    })
}

/// Runs every test, at most `limits.max_parallel` at a time.
pub fn run_suite(
    source: &str,
    tests: &[TestCase],
    sandbox: &Sandbox,
) -> Result<BTreeMap<String, TestRun>, ExecError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sandbox.limits.max_parallel)
        .build()
        .map_err(|e| ExecError::Limits(e.to_string()))?;
    let runs: Vec<TestRun> = pool.install(|| {
        tests
            .par_iter()
            .map(|t| run_test(source, t, sandbox))
            .collect::<Result<_, _>>()
    })?;
    Ok(runs.into_iter().map(|r| (r.test_id.clone(), r)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sandbox(timeout_ms: u64) -> Sandbox {
        Sandbox::python(RunLimits::new(Duration::from_millis(timeout_ms), 4096, 2).unwrap())
    }

    fn case(input: &str, expected: &str) -> TestCase {
        TestCase {
            id: "t".into(),
            input: input.as_bytes().to_vec(),
            expected_output: expected.as_bytes().to_vec(),
        }
    }

    #[test]
    fn pass_and_wrong_output() {
        let src = "import sys\nprint(int(sys.stdin.read()) * 2)\n";
        let run = run_test(src, &case("21\n", "42"), &sandbox(5000)).unwrap();
        assert_eq!(run.verdict, Verdict::Pass);
        let run = run_test(src, &case("2\n", "5\n"), &sandbox(5000)).unwrap();
        assert_eq!(run.verdict, Verdict::Fail(FailReason::WrongOutput));
        assert_eq!(run.stdout, b"4\n");
    }

    #[test]
    fn infinite_loop_times_out() {
        let run = run_test("while True:\n    pass\n", &case("", ""), &sandbox(300)).unwrap();
        assert_eq!(run.verdict, Verdict::Fail(FailReason::Timeout));
    }

    #[test]
    fn crash_is_nonzero_exit() {
        let run = run_test("raise SystemExit(3)\n", &case("", ""), &sandbox(5000)).unwrap();
        assert_eq!(run.verdict, Verdict::Fail(FailReason::NonzeroExit));
        assert_eq!(run.exit_code, Some(3));
    }

    #[test]
    fn output_flood_hits_cap() {
        let src = "while True:\n    print('x' * 1000)\n";
        let run = run_test(src, &case("", ""), &sandbox(5000)).unwrap();
        assert_eq!(run.verdict, Verdict::Fail(FailReason::OutputCap));
        assert!(run.stdout.len() <= 4096);
    }

    #[test]
    fn missing_interpreter_is_infrastructure_error() {
        let sb = Sandbox::new(
            vec!["/nonexistent/interpreter".into()],
            RunLimits::default(),
        );
        assert!(matches!(
            run_test("print(1)", &case("", "1"), &sb),
            Err(ExecError::Spawn { .. })
        ));
    }
}
