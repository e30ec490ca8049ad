//! `opt` subprocess backend and textual instruction counting.

use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use thiserror::Error;
use wait_timeout::ChildExt;

use super::{EvalError, EvaluationResult, Evaluator};
use crate::pipeline::PipelineForest;

/// Environment variable naming the `opt` executable.
pub const OPT_ENV: &str = "PIPETUNE_OPT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptConfig {
    pub opt_path: PathBuf,
    pub timeout: Duration,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            opt_path: std::env::var_os(OPT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("opt")),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IrCountError {
    #[error("malformed IR at line {line}: {message}")]
    MalformedIr { line: usize, message: String },
}

/// Counts instruction lines inside `define … { … }` bodies.
///
/// Blank lines, `;` comments, labels, the `define` line and the closing
/// brace are not instructions. Unbalanced bodies are reported as errors.
pub fn count_ir_instructions(ir_text: &str) -> Result<u64, IrCountError> {
    let mut in_body = false;
    let mut count = 0u64;
    let mut open_line = 0;
    for (idx, raw) in ir_text.lines().enumerate() {
        let line = raw.trim();
        let line_no = idx + 1;
        if !in_body {
            if line.starts_with("define") {
                if !line.ends_with('{') {
                    return Err(IrCountError::MalformedIr {
                        line: line_no,
                        message: "function definition does not open a body".into(),
                    });
                }
                in_body = true;
                open_line = line_no;
            } else if line == "}" {
                return Err(IrCountError::MalformedIr {
                    line: line_no,
                    message: "closing brace outside a function body".into(),
                });
            }
            continue;
        }
        if line == "}" {
            in_body = false;
            continue;
        }
        if line.starts_with("define") {
            return Err(IrCountError::MalformedIr {
                line: line_no,
                message: format!("function body opened at line {open_line} is not closed"),
            });
        }
        if line.is_empty() || line.starts_with(';') || is_label(line) {
            continue;
        }
        count += 1;
    }
    if in_body {
        return Err(IrCountError::MalformedIr {
            line: open_line,
            message: "function body is not closed".into(),
        });
    }
    Ok(count)
}

fn is_label(line: &str) -> bool {
    // `bb:` or `5:                   ; preds = %0`
    let code = match line.find(';') {
        Some(pos) => line[..pos].trim_end(),
        None => line,
    };
    code.ends_with(':') && !code.contains(char::is_whitespace)
}

/// Runs `opt -S -passes=<pipeline> <ir_file> -o -` and counts the output.
///
/// A missing executable is an error; everything that goes wrong after the
/// process starts (nonzero exit, timeout, unreadable output) is a failed
/// evaluation.
pub fn opt_backend_evaluate(
    ir_file: &Path,
    pipeline_string: &str,
    config: &OptConfig,
) -> Result<EvaluationResult, EvalError> {
    run_opt(ir_file, Some(pipeline_string), config)
}

fn run_opt(ir_file: &Path, pipeline: Option<&str>, config: &OptConfig) -> Result<EvaluationResult, EvalError> {
    if !ir_file.is_file() {
        return Ok(EvaluationResult::failed(format!(
            "input IR `{}` not found",
            ir_file.display()
        )));
    }
    let mut cmd = Command::new(&config.opt_path);
    cmd.arg("-S");
    if let Some(p) = pipeline {
        cmd.arg(format!("-passes={p}"));
    }
    cmd.arg(ir_file)
        .args(["-o", "-"])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());

    let mut child = cmd.spawn().map_err(|e| {
        EvalError::BackendUnavailable(format!("cannot run `{}`: {e}", config.opt_path.display()))
    })?;

    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");
    let out_reader = thread::spawn(move || read_all(stdout));
    let err_reader = thread::spawn(move || read_all(stderr));

    let status = match child.wait_timeout(config.timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            // Readers are left detached: grandchildren of a wrapper script
            // may still hold the pipes open.
            let _ = child.kill();
            let _ = child.wait();
            drop((out_reader, err_reader));
            return Ok(EvaluationResult::failed(format!(
                "opt timed out after {:.1}s",
                config.timeout.as_secs_f64()
            )));
        }
        Err(e) => {
            let _ = child.kill();
            return Ok(EvaluationResult::failed(format!("waiting for opt failed: {e}")));
        }
    };
    let stdout = out_reader.join().unwrap_or_else(|_| Ok(String::new()));
    let stderr = err_reader.join().unwrap_or_else(|_| Ok(String::new())).unwrap_or_default();

    if !status.success() {
        let code = status
            .code()
            .map_or_else(|| "a signal".to_string(), |c| format!("status {c}"));
        return Ok(EvaluationResult::failed(format!(
            "opt exited with {code}: {}",
            stderr.trim()
        )));
    }
    let text = match stdout {
        Ok(t) => t,
        Err(e) => return Ok(EvaluationResult::failed(format!("reading opt output: {e}"))),
    };
    Ok(match count_ir_instructions(&text) {
        Ok(n) => EvaluationResult::ok(n),
        Err(e) => EvaluationResult::failed(e.to_string()),
    })
}

fn read_all(mut r: impl Read) -> io::Result<String> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

/// Backend that evaluates IR files with an `opt` executable.
#[derive(Debug, Clone, Default)]
pub struct OptEvaluator {
    pub config: OptConfig,
}

impl OptEvaluator {
    pub fn new(config: OptConfig) -> Self {
        OptEvaluator { config }
    }
}

impl Evaluator for OptEvaluator {
    type Program = PathBuf;

    /// Round-trips the module through `opt -S` without passes.
    fn original_count(&self, program: &PathBuf) -> Result<u64, EvalError> {
        match run_opt(program, None, &self.config)? {
            EvaluationResult::Ok { instruction_count } => Ok(instruction_count),
            EvaluationResult::Failed { detail } => Err(EvalError::Baseline(detail)),
        }
    }

    fn run(&self, program: &PathBuf, forest: &PipelineForest) -> Result<EvaluationResult, EvalError> {
        opt_backend_evaluate(program, &forest.to_pipeline_string(), &self.config)
    }
}
