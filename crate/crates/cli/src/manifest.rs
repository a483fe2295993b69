use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use asmbt_core::executor::{ExecutionConfig, Scenario};
use asmbt_core::fixtures;
use asmbt_core::planner::{BackendSpec, DemonstrationTranscript, Fault, Gold, MockScript};
use asmbt_core::sim::{DisturbanceKind, WorkcellDoc};
use asmbt_core::world::SetupDoc;
use serde::{Deserialize, Serialize};

use crate::{GateKind, InputArgs};

/// Run manifest document. Relative paths resolve against the directory of
/// the manifest file; command-line flags override every field.
///
/// ```json
/// {"transcript": "demo.json", "setup": "setup.json", "scenario": "s.json",
///  "backend": "mock:demo.mock.json", "seed": 7, "out": "out"}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Bundled task length used for every document not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workcell: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    /// Bundled scenario disturbance (`none`, `I`, `II`, `III`) when no
    /// scenario path is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faults: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec: Option<ExecutionConfig>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let mut m: RunManifest = serde_json::from_str(&text)
            .with_context(|| format!("invalid manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut m.transcript,
            &mut m.setup,
            &mut m.workcell,
            &mut m.scenario,
            &mut m.faults,
            &mut m.gold,
            &mut m.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(b) = &mut m.backend {
            if let Some(rest) = b.strip_prefix("mock:") {
                let p = Path::new(rest);
                if p.is_relative() {
                    *b = format!("mock:{}", base.join(p).display());
                }
            }
        }
        Ok(m)
    }

    /// Flags in `args` take precedence over the manifest.
    fn overlay(
        mut self,
        args: &InputArgs,
        scenario: Option<&PathBuf>,
        disturbance: Option<&String>,
    ) -> Self {
        fn set<T: Clone>(dst: &mut Option<T>, src: Option<&T>) {
            if let Some(v) = src {
                *dst = Some(v.clone());
            }
        }
        set(&mut self.task, args.task.as_ref());
        set(&mut self.transcript, args.transcript.as_ref());
        set(&mut self.setup, args.setup.as_ref());
        set(&mut self.workcell, args.workcell.as_ref());
        set(&mut self.scenario, scenario);
        set(&mut self.disturbance, disturbance);
        set(&mut self.backend, args.backend.as_ref());
        set(&mut self.faults, args.faults.as_ref());
        set(&mut self.gate, args.gate.as_ref());
        set(&mut self.gold, args.gold.as_ref());
        set(&mut self.max_rounds, args.max_rounds.as_ref());
        set(&mut self.seed, args.seed.as_ref());
        set(&mut self.out, args.out.as_ref());
        self
    }
}

/// Fully resolved and validated inputs of one command.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub task: Option<usize>,
    pub transcript: DemonstrationTranscript,
    pub setup: SetupDoc,
    pub workcell: WorkcellDoc,
    pub backend: BackendSpec,
    pub faults: Option<Vec<Fault>>,
    pub gate: GateKind,
    pub gold: Option<Gold>,
    pub max_rounds: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub exec: ExecutionConfig,
    scenario: Option<PathBuf>,
    disturbance: Option<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?)
        .with_context(|| format!("invalid document {}", path.display()))
}

fn bundled(task: Option<usize>, what: &str) -> Result<usize> {
    match task {
        Some(len) if fixtures::TASK_LENGTHS.contains(&len) => Ok(len),
        Some(len) => bail!("no bundled fixtures for task length {len}"),
        None => bail!("no {what} given; pass --{what} or --task"),
    }
}

/// Parses a backend selection: `fallback` (or `rule`), `mock` (bundled
/// script of `task`), `mock:PATH` or `shim:PROGRAM [ARGS...]`.
pub fn parse_backend(text: &str, task: Option<usize>) -> Result<BackendSpec> {
    let text = text.trim();
    if text == "fallback" || text == "rule" {
        return Ok(BackendSpec::Rule);
    }
    if text == "mock" {
        let len = bundled(task, "task")?;
        let script: MockScript =
            serde_json::from_str(fixtures::mock_script(len).expect("bundled"))?;
        return Ok(BackendSpec::Mock { script });
    }
    if let Some(path) = text.strip_prefix("mock:") {
        return Ok(BackendSpec::Mock {
            script: parse(Path::new(path))?,
        });
    }
    if let Some(cmd) = text.strip_prefix("shim:") {
        let mut words = cmd.split_whitespace().map(str::to_owned);
        let Some(program) = words.next() else {
            bail!("shim backend needs a program");
        };
        return Ok(BackendSpec::Command {
            program,
            args: words.collect(),
        });
    }
    bail!("unknown backend `{text}`; expected fallback, mock, mock:PATH or shim:PROGRAM")
}

/// Parses `none` or a disturbance kind.
pub fn parse_disturbance(text: &str) -> Result<Option<DisturbanceKind>> {
    match text {
        "none" => Ok(None),
        k => k.parse().map(Some).map_err(anyhow::Error::msg),
    }
}

impl Inputs {
    pub fn resolve(args: &InputArgs) -> Result<Self> {
        Self::resolve_with(args, None, None)
    }

    pub fn resolve_with(
        args: &InputArgs,
        scenario: Option<&PathBuf>,
        disturbance: Option<&String>,
    ) -> Result<Self> {
        let manifest = match &args.manifest {
            Some(p) => RunManifest::load(p)?,
            None => RunManifest::default(),
        };
        Self::from_manifest(manifest.overlay(args, scenario, disturbance))
    }

    pub fn from_manifest(m: RunManifest) -> Result<Self> {
        let task = m.task;
        let transcript = match &m.transcript {
            Some(p) => DemonstrationTranscript::from_json(&read(p)?)
                .with_context(|| format!("invalid transcript {}", p.display()))?,
            None => DemonstrationTranscript::from_json(
                fixtures::transcript(bundled(task, "transcript")?).expect("bundled"),
            )?,
        };
        transcript.validate().context("invalid transcript")?;
        let setup = match &m.setup {
            Some(p) => parse(p)?,
            None => SetupDoc::from_json(fixtures::SETUP)?,
        };
        let workcell = match &m.workcell {
            Some(p) => parse(p)?,
            None => WorkcellDoc::from_json(fixtures::WORKCELL)?,
        };
        let backend = match &m.backend {
            Some(b) => parse_backend(b, task)?,
            None if task.is_some() => parse_backend("mock", task)?,
            None => BackendSpec::Rule,
        };
        let faults = m.faults.as_deref().map(parse).transpose()?;
        let gate = m.gate.unwrap_or_default();
        let gold = match (&m.gold, gate) {
            (Some(p), _) => Some(parse(p)?),
            (None, GateKind::Scripted) => {
                let len = bundled(task, "gold")?;
                Some(serde_json::from_str(fixtures::gold(len).expect("bundled"))?)
            }
            (None, GateKind::Auto) => None,
        };
        if m.max_rounds == Some(0) {
            bail!("--max-rounds must be positive");
        }
        let exec = m.exec.unwrap_or_default();
        exec.validate()?;
        Ok(Self {
            task,
            transcript,
            setup,
            workcell,
            backend,
            faults,
            gate,
            gold,
            max_rounds: m.max_rounds,
            seed: m.seed,
            out: m.out,
            exec,
            scenario: m.scenario,
            disturbance: m.disturbance,
        })
    }

    /// The scenario: a document, a bundled one, or an undisturbed run of
    /// `stages` stages. `--seed` replaces the scenario seed.
    pub fn scenario(&self, stages: usize) -> Result<Scenario> {
        let mut s = match (&self.scenario, &self.disturbance) {
            (Some(p), _) => parse(p)?,
            (None, Some(d)) => {
                let kind = parse_disturbance(d)?;
                let len = bundled(self.task, "scenario")?;
                let text = fixtures::scenario(len, kind).with_context(|| {
                    format!("no bundled scenario for task {len} and disturbance {d}")
                })?;
                Scenario::from_json(text)?
            }
            (None, None) => Scenario::undisturbed(stages, 0),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        Ok(s)
    }
}
