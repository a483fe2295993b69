use std::io::Write as _;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::backend::{
    BackendError, FaultPlan, FaultyBackend, MockBackend, MockScript, PlannerBackend, Prompt,
    RuleBackend,
};

impl PlannerBackend for Box<dyn PlannerBackend> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn interpret(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        (**self).interpret(prompt)
    }

    fn refine(
        &mut self,
        prompt: &Prompt,
        prior: &str,
        feedback: &str,
    ) -> Result<String, BackendError> {
        (**self).refine(prompt, prior, feedback)
    }
}

/// Forwards every request to an external program: the request document is
/// written to its stdin and its stdout is the reply. Empty output declines
/// the request.
///
/// ```json
/// {"prompt": {...}, "prior": "..." | null, "feedback": "..." | null}
/// ```
#[derive(Debug, Clone)]
pub struct CommandBackend {
    program: String,
    args: Vec<String>,
}

impl CommandBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    fn call(&self, request: serde_json::Value) -> Result<String, BackendError> {
        let unavailable =
            |e: std::io::Error| BackendError::Unavailable(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(unavailable)?;
        if let Some(mut stdin) = child.stdin.take() {
            stdin
                .write_all(request.to_string().as_bytes())
                .map_err(unavailable)?;
        }
        let out = child.wait_with_output().map_err(unavailable)?;
        if !out.status.success() {
            return Err(BackendError::Unavailable(format!(
                "{} exited with {}",
                self.program, out.status
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout).trim().to_owned();
        if text.is_empty() {
            return Err(BackendError::Declined);
        }
        Ok(text)
    }
}

impl PlannerBackend for CommandBackend {
    fn name(&self) -> &str {
        &self.program
    }

    fn interpret(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        self.call(json!({"prompt": prompt, "prior": null, "feedback": null}))
    }

    fn refine(
        &mut self,
        prompt: &Prompt,
        prior: &str,
        feedback: &str,
    ) -> Result<String, BackendError> {
        self.call(json!({"prompt": prompt, "prior": prior, "feedback": feedback}))
    }
}

/// Backend selection as a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Scripted replies.
    Mock { script: MockScript },
    /// The rule-based planner.
    Rule,
    /// An external program, see [`CommandBackend`].
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl BackendSpec {
    pub fn build(&self) -> Box<dyn PlannerBackend> {
        match self {
            BackendSpec::Mock { script } => Box::new(MockBackend::new(script.clone())),
            BackendSpec::Rule => Box::new(RuleBackend),
            BackendSpec::Command { program, args } => {
                Box::new(CommandBackend::new(program.clone(), args.clone()))
            }
        }
    }

    /// Builds the backend, corrupted by `faults` when given.
    pub fn build_with_faults(&self, faults: Option<FaultPlan>) -> Box<dyn PlannerBackend> {
        match faults {
            Some(plan) => Box::new(FaultyBackend::new(self.build(), plan)),
            None => self.build(),
        }
    }
}
