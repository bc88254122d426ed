//! Loading and running mechanisms inside resource limits.
//!
//! External commands run one process per invocation with an empty
//! environment (only `PATH` is kept), the system temporary directory as
//! working directory, and no access to anything the broker does not pass on
//! stdin. They are killed when the deadline passes.

use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use structoid_core::mechanisms::{self, Inputs, InvokeReply, Mechanism, Params};
use structoid_core::wire::{decode_frame, encode_frame, to_wire_inputs, WireMessage};
use structoid_core::{ExecutionSpec, MechanismEntry};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::process::Command;
use tokio::time::Instant;

use crate::error::BrokerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SandboxLimits {
    /// Wall-clock budget for a whole PerformBehavior.
    pub timeout: Duration,
    /// Largest result body accepted from a mechanism.
    pub max_output: usize,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(10), max_output: 16 * 1024 * 1024 }
    }
}

impl SandboxLimits {
    /// Largest reply frame that can carry a body of `max_output` bytes.
    fn max_frame(&self) -> usize {
        self.max_output / 3 * 4 + 4 + 64 * 1024
    }
}

#[derive(Clone)]
enum Executor {
    Builtin(Arc<dyn Mechanism>),
    Command { program: String, args: Vec<String> },
    Endpoint { url: reqwest::Url },
}

#[derive(Clone)]
pub struct MechanismRunner {
    pub entry: Arc<MechanismEntry>,
    pub limits: SandboxLimits,
    executor: Executor,
    http: reqwest::Client,
}

impl std::fmt::Debug for MechanismRunner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MechanismRunner")
            .field("mechanism_id", &self.entry.mechanism_id)
            .field("execution", &self.entry.execution)
            .field("limits", &self.limits)
            .finish()
    }
}

fn fault(message: impl Into<String>) -> BrokerError {
    BrokerError::MechanismFault(message.into())
}

impl MechanismRunner {
    pub fn new(entry: Arc<MechanismEntry>, limits: SandboxLimits, http: reqwest::Client) -> Result<Self, BrokerError> {
        let executor = match &entry.execution {
            ExecutionSpec::Builtin { name } => Executor::Builtin(
                mechanisms::builtin(name)
                    .ok_or_else(|| BrokerError::UnsupportedExecution(format!("no builtin mechanism named `{name}`")))?,
            ),
            ExecutionSpec::Command { program, args } => {
                if program.trim().is_empty() {
                    return Err(BrokerError::UnsupportedExecution("empty command".into()));
                }
                Executor::Command { program: program.clone(), args: args.clone() }
            }
            ExecutionSpec::Endpoint { url } => {
                let parsed = reqwest::Url::parse(url)
                    .map_err(|e| BrokerError::UnsupportedExecution(format!("endpoint `{url}`: {e}")))?;
                if parsed.scheme() != "http" {
                    return Err(BrokerError::UnsupportedExecution(format!("endpoint scheme `{}`", parsed.scheme())));
                }
                Executor::Endpoint { url: parsed }
            }
        };
        Ok(Self { entry, limits, executor, http })
    }

    pub fn kind(&self) -> &'static str {
        match self.executor {
            Executor::Builtin(_) => "builtin",
            Executor::Command { .. } => "command",
            Executor::Endpoint { .. } => "endpoint",
        }
    }

    /// Invokes one behavior, finishing before `deadline` or failing with
    /// `Timeout`. Empty `inputs` make a probe.
    pub async fn invoke(
        &self,
        behavior: &str,
        params: &Params,
        inputs: &Inputs,
        deadline: Instant,
    ) -> Result<InvokeReply, BrokerError> {
        if self.entry.interface.behavior(behavior).is_none() {
            return Err(BrokerError::BehaviorNotFound {
                mechanism: self.entry.mechanism_id.clone(),
                behavior: behavior.to_string(),
            });
        }
        let work = async {
            match &self.executor {
                Executor::Builtin(mechanism) => {
                    let (mechanism, behavior, params, inputs) =
                        (mechanism.clone(), behavior.to_string(), params.clone(), inputs.clone());
                    tokio::task::spawn_blocking(move || mechanism.invoke(&behavior, &params, &inputs))
                        .await
                        .map_err(|e| fault(format!("builtin panicked: {e}")))?
                        .map_err(|f| fault(f.0))
                }
                Executor::Command { program, args } => {
                    self.run_command(program, args, &request(behavior, params, inputs)).await
                }
                Executor::Endpoint { url } => self.call_endpoint(url, &request(behavior, params, inputs)).await,
            }
        };
        let reply = tokio::time::timeout_at(deadline, work)
            .await
            .map_err(|_| BrokerError::Timeout(self.limits.timeout))??;
        if let InvokeReply::Result(r) = &reply {
            if r.body.len() > self.limits.max_output {
                return Err(BrokerError::OutputTooLarge(self.limits.max_output));
            }
        }
        Ok(reply)
    }

    async fn run_command(&self, program: &str, args: &[String], message: &WireMessage) -> Result<InvokeReply, BrokerError> {
        let mut cmd = Command::new(program);
        cmd.args(args)
            .env_clear()
            .current_dir(std::env::temp_dir())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .kill_on_drop(true);
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }
        let mut child = cmd.spawn().map_err(|e| fault(format!("cannot start `{program}`: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let frame = encode_frame(message);
        let write = async move {
            // A mechanism may answer without reading its whole request.
            let _ = stdin.write_all(&frame).await;
        };
        let cap = self.limits.max_frame();
        let read = async move {
            let mut out = Vec::new();
            stdout.take(cap as u64 + 1).read_to_end(&mut out).await.map(|_| out)
        };
        let ((), output) = tokio::join!(write, read);
        let output = output.map_err(|e| fault(format!("reading mechanism output: {e}")))?;
        if output.len() > cap {
            let _ = child.start_kill();
            return Err(BrokerError::OutputTooLarge(self.limits.max_output));
        }
        let status = child.wait().await.map_err(|e| fault(e.to_string()))?;
        if !status.success() {
            return Err(fault(format!("`{program}` exited with {status}")));
        }
        // The output is already within the cap, so an oversized length
        // header can only mean a truncated or garbled frame.
        let (reply, used) = decode_frame(&output, usize::MAX).map_err(|e| fault(format!("malformed reply: {e}")))?;
        if used != output.len() {
            return Err(fault("trailing bytes after the reply frame"));
        }
        reply.into_reply().map_err(fault)
    }

    async fn call_endpoint(&self, url: &reqwest::Url, message: &WireMessage) -> Result<InvokeReply, BrokerError> {
        let mut response = self
            .http
            .post(url.clone())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(message.to_json())
            .send()
            .await
            .map_err(|e| fault(format!("endpoint unreachable: {e}")))?;
        if !response.status().is_success() {
            return Err(fault(format!("endpoint answered {}", response.status())));
        }
        let cap = self.limits.max_frame();
        let mut body = Vec::new();
        while let Some(chunk) = response.chunk().await.map_err(|e| fault(e.to_string()))? {
            body.extend_from_slice(&chunk);
            if body.len() > cap {
                return Err(BrokerError::OutputTooLarge(self.limits.max_output));
            }
        }
        WireMessage::from_json(&body)
            .map_err(|e| fault(format!("malformed reply: {e}")))?
            .into_reply()
            .map_err(fault)
    }
}

fn request(behavior: &str, params: &Params, inputs: &Inputs) -> WireMessage {
    if inputs.is_empty() {
        WireMessage::Probe { behavior: behavior.to_string(), params: params.clone() }
    } else {
        WireMessage::Supply { behavior: behavior.to_string(), params: params.clone(), inputs: to_wire_inputs(inputs) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use structoid_core::mechanisms::gallery_manifest;

    fn shell_entry(script: &str) -> Arc<MechanismEntry> {
        let mut entry = gallery_manifest();
        entry.execution = ExecutionSpec::Command { program: "sh".into(), args: vec!["-c".into(), script.into()] };
        Arc::new(entry)
    }

    fn runner(entry: Arc<MechanismEntry>, limits: SandboxLimits) -> MechanismRunner {
        MechanismRunner::new(entry, limits, reqwest::Client::new()).unwrap()
    }

    #[tokio::test]
    async fn builtin_probe() {
        let r = runner(Arc::new(gallery_manifest()), SandboxLimits::default());
        let reply = r
            .invoke("Description", &Params::new(), &Inputs::new(), Instant::now() + Duration::from_secs(5))
            .await
            .unwrap();
        assert_eq!(reply, InvokeReply::NeedsInput(vec!["description".into()]));
        let missing = r.invoke("Rotate", &Params::new(), &Inputs::new(), Instant::now() + Duration::from_secs(5)).await;
        assert!(matches!(missing, Err(BrokerError::BehaviorNotFound { .. })));
    }

    #[tokio::test]
    async fn slow_command_times_out() {
        let limits = SandboxLimits { timeout: Duration::from_millis(300), ..Default::default() };
        let r = runner(shell_entry("sleep 30"), limits);
        let started = std::time::Instant::now();
        let result = r.invoke("Gallery", &Params::new(), &Inputs::new(), Instant::now() + limits.timeout).await;
        assert!(matches!(result, Err(BrokerError::Timeout(_))), "{result:?}");
        assert!(started.elapsed() < Duration::from_secs(2));
    }

    #[tokio::test]
    async fn misbehaving_commands_fault() {
        let deadline = || Instant::now() + Duration::from_secs(5);
        let junk = runner(shell_entry("cat >/dev/null; printf 'junk'"), SandboxLimits::default());
        assert!(matches!(
            junk.invoke("Gallery", &Params::new(), &Inputs::new(), deadline()).await,
            Err(BrokerError::MechanismFault(_))
        ));
        let failing = runner(shell_entry("exit 3"), SandboxLimits::default());
        assert!(matches!(
            failing.invoke("Gallery", &Params::new(), &Inputs::new(), deadline()).await,
            Err(BrokerError::MechanismFault(_))
        ));
        let flood = runner(shell_entry("head -c 200000 /dev/zero"), SandboxLimits { max_output: 1000, ..Default::default() });
        assert!(matches!(
            flood.invoke("Gallery", &Params::new(), &Inputs::new(), deadline()).await,
            Err(BrokerError::OutputTooLarge(1000))
        ));
        let absent = runner(
            Arc::new(MechanismEntry {
                execution: ExecutionSpec::Command { program: "/nonexistent/mechanism".into(), args: vec![] },
                ..gallery_manifest()
            }),
            SandboxLimits::default(),
        );
        assert!(matches!(
            absent.invoke("Gallery", &Params::new(), &Inputs::new(), deadline()).await,
            Err(BrokerError::MechanismFault(_))
        ));
    }

    #[test]
    fn unsupported_executions() {
        let with = |execution| MechanismRunner::new(
            Arc::new(MechanismEntry { execution, ..gallery_manifest() }),
            SandboxLimits::default(),
            reqwest::Client::new(),
        );
        assert!(matches!(
            with(ExecutionSpec::Builtin { name: "nope".into() }),
            Err(BrokerError::UnsupportedExecution(_))
        ));
        assert!(matches!(
            with(ExecutionSpec::Endpoint { url: "ftp://x/".into() }),
            Err(BrokerError::UnsupportedExecution(_))
        ));
        assert_eq!(with(ExecutionSpec::Endpoint { url: "http://127.0.0.1:1/m".into() }).unwrap().kind(), "endpoint");
    }
}
