use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use asmbt_core::bt::from_document;
use asmbt_core::executor::{
    compute_metrics, noise_sweep, run_scenario, BenchConfig, BenchTable, EventKind,
    ExecutionConfig, ExecutionTrace, RunMetrics, SweepRow,
};
use asmbt_core::fixtures;
use asmbt_core::planner::{
    generate_plan, validate_logical, validate_syntactic, AutoApprove, DemonstrationTranscript,
    FaultPlan, LogicReport, PlanBundle, PlanConfig, ReviewGate, ScriptedGate, SyntaxReport,
};
use asmbt_core::sim::WorkcellDoc;
use asmbt_core::world::{init_state, Domain, SetupDoc};
use serde::Serialize;
use serde_json::Value;

use crate::manifest::{parse_backend, parse_disturbance, Inputs, RunManifest};
use crate::{BenchArgs, Format, GateKind, PlanArgs, ReplayArgs, RunArgs, ServeArgs, ValidateArgs};

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("documents serialize");
    s.push('\n');
    s
}

fn write_docs(dir: &Path, docs: &[(&str, &str)]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (name, text) in docs {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

/// Generates the plan bundle described by `inputs`.
pub fn cmd_plan(inputs: &Inputs) -> Result<PlanBundle> {
    let faults = inputs.faults.clone().map(FaultPlan::Scripted);
    let mut backend = inputs.backend.build_with_faults(faults);
    let mut gate: Box<dyn ReviewGate> = match (inputs.gate, &inputs.gold) {
        (GateKind::Scripted, Some(gold)) => Box::new(ScriptedGate::with_gold(gold.clone())),
        (GateKind::Scripted, None) => return Err(anyhow!("the scripted gate needs --gold")),
        (GateKind::Auto, _) => Box::new(AutoApprove),
    };
    let mut cfg = PlanConfig::default();
    if let Some(r) = inputs.max_rounds {
        cfg.max_rounds = r;
    }
    let bundle = generate_plan(
        &inputs.transcript,
        &inputs.setup,
        Arc::new(Domain::gearset()),
        &mut backend,
        gate.as_mut(),
        &cfg,
    )?;
    Ok(bundle)
}

/// Syntactic and logical verdicts on one tree document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub svr: bool,
    pub syntax: SyntaxReport,
    /// `None` when the document is not a valid tree.
    pub lcr: Option<bool>,
    pub logic: Option<LogicReport>,
    /// Node ids from the root to the failing node.
    pub failed_path: Option<Vec<String>>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.svr && self.lcr == Some(true)
    }

    fn render(&self) -> String {
        let mut out = String::new();
        let verdict = |b: bool| if b { "pass" } else { "fail" };
        let _ = writeln!(out, "SVR {}", verdict(self.svr));
        for v in &self.syntax.violations {
            let _ = writeln!(out, "  {v}");
        }
        match (&self.lcr, &self.logic) {
            (Some(ok), Some(l)) => {
                let _ = writeln!(out, "LCR {}", verdict(*ok));
                if let Some(g) = &l.goal {
                    let _ = writeln!(out, "  goal {g}");
                }
                if let Some(p) = &self.failed_path {
                    let _ = writeln!(out, "  failed at {}", p.join(" / "));
                }
                if let Some(m) = &l.message {
                    let _ = writeln!(out, "  {m}");
                }
            }
            _ => out.push_str("LCR skipped\n"),
        }
        out
    }
}

/// Checks a tree document against the domain and the initial state of
/// `setup`.
pub fn cmd_validate(doc: &Value, setup: &SetupDoc) -> Result<ValidationReport> {
    let domain = Arc::new(Domain::gearset());
    let syntax = validate_syntactic(doc, Some(&domain));
    let mut report = ValidationReport {
        svr: syntax.valid,
        syntax,
        lcr: None,
        logic: None,
        failed_path: None,
    };
    if !report.svr {
        return Ok(report);
    }
    let tree = from_document(doc)?;
    let (state, _) = init_state(setup, domain)?;
    let logic = validate_logical(&tree, &state);
    report.failed_path = logic.failed_node.as_ref().and_then(|id| {
        tree.root
            .path_to(id)
            .map(|p| p.iter().map(|n| n.id.to_string()).collect())
    });
    report.lcr = Some(logic.coherent);
    report.logic = Some(logic);
    Ok(report)
}

/// Outcome of one planned and executed scenario.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub plan: PlanBundle,
    pub trace: ExecutionTrace,
    pub metrics: RunMetrics,
}

impl RunOutput {
    pub fn trace_json(&self) -> String {
        pretty(&self.trace)
    }

    pub fn metrics_json(&self) -> String {
        pretty(&self.metrics)
    }
}

/// Plans, then executes the scenario of `inputs`. The scenario seed drives
/// the simulation.
pub fn cmd_run(inputs: &Inputs) -> Result<RunOutput> {
    let plan = cmd_plan(inputs)?;
    let scenario = inputs.scenario(plan.len())?;
    let exec = ExecutionConfig {
        seed: scenario.seed,
        ..inputs.exec
    };
    let (trace, metrics) = run_scenario(&plan, &inputs.workcell, &scenario, exec)?;
    Ok(RunOutput {
        plan,
        trace,
        metrics,
    })
}

/// Plans every bundled task length with `backend`, approving every artifact.
pub fn bench_plans(
    backend: &str,
    setup: &SetupDoc,
    lengths: &[usize],
) -> Result<BTreeMap<usize, PlanBundle>> {
    let domain = Arc::new(Domain::gearset());
    let mut plans = BTreeMap::new();
    for &len in lengths {
        let text = fixtures::transcript(len)
            .ok_or_else(|| anyhow!("no bundled transcript for task length {len}"))?;
        let transcript = DemonstrationTranscript::from_json(text)?;
        let mut b = parse_backend(backend, Some(len))?.build();
        let plan = generate_plan(
            &transcript,
            setup,
            domain.clone(),
            &mut b,
            &mut AutoApprove,
            &PlanConfig::default(),
        )
        .with_context(|| format!("planning task length {len}"))?;
        plans.insert(len, plan);
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOutput {
    pub table: BenchTable,
    /// Empty unless a sweep was requested.
    pub sweep: Vec<SweepRow>,
}

impl BenchOutput {
    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("level,loss_rate,misassign_rate,pose_sigma,CR,TS,DRR\n");
        for r in &self.sweep {
            let drr = r
                .drr_mean
                .map_or_else(|| "N/A".to_owned(), |d| format!("{d:.4}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{}",
                r.level,
                r.noise.loss_rate,
                r.noise.misassign_rate,
                r.noise.pose_sigma,
                r.cr_mean,
                r.ts_rate,
                drr
            );
        }
        out
    }
}

/// Runs the matrix of `cfg`, then the noise sweep over `sweep` levels.
pub fn cmd_bench(
    plans: &BTreeMap<usize, PlanBundle>,
    workcell: &WorkcellDoc,
    cfg: &BenchConfig,
    sweep: &[f64],
) -> Result<BenchOutput> {
    let table = asmbt_core::executor::bench(plans, workcell, cfg)?;
    let sweep = if sweep.is_empty() {
        Vec::new()
    } else {
        noise_sweep(plans, workcell, cfg, sweep)?
    };
    Ok(BenchOutput { table, sweep })
}

/// Renders a trace as a stage timeline, or its metrics document.
pub fn cmd_replay(trace: &ExecutionTrace, format: Format) -> String {
    match format {
        Format::Table => trace.render(),
        Format::Json => {
            let stages = trace
                .events
                .iter()
                .rev()
                .find_map(|e| match &e.kind {
                    EventKind::RunFinished { stages, .. } => Some(*stages),
                    _ => None,
                })
                .unwrap_or_else(|| {
                    trace
                        .events
                        .iter()
                        .filter_map(|e| match &e.kind {
                            EventKind::Tick { stage, .. } => Some(stage + 1),
                            _ => None,
                        })
                        .max()
                        .unwrap_or(0)
                });
            pretty(&compute_metrics(trace, stages))
        }
    }
}

fn plan_summary(plan: &PlanBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} subtasks", plan.len());
    for (i, (t, g)) in plan.subtasks.iter().zip(&plan.goals).enumerate() {
        let _ = writeln!(
            out,
            "  {i}  {} {} -> {}  goal {g}",
            t.skill, t.part, t.target
        );
    }
    let _ = writeln!(out, "{} review records", plan.review_log.len());
    out
}

fn metrics_summary(m: &RunMetrics) -> String {
    let drr = if m.drr_applicable {
        format!("{:.4}", m.drr)
    } else {
        "N/A".into()
    };
    let mut out = format!(
        "TS {}  CR {:.4}  DRR {}  ticks {}  replans {}",
        m.ts, m.cr, drr, m.ticks, m.replans
    );
    if let Some(b) = &m.bound {
        let _ = write!(out, "  bound {b}");
    }
    out.push('\n');
    out
}

pub(crate) fn plan(a: PlanArgs) -> Result<ExitCode> {
    let inputs = Inputs::resolve(&a.input)?;
    let plan = cmd_plan(&inputs)?;
    if let Some(dir) = &inputs.out {
        write_docs(
            dir,
            &[
                ("plan.json", &pretty(&plan)),
                ("review_log.json", &pretty(&plan.review_log)),
            ],
        )?;
    }
    match a.input.format {
        Format::Table => print!("{}", plan_summary(&plan)),
        Format::Json => print!("{}", pretty(&plan)),
    }
    Ok(ExitCode::SUCCESS)
}

pub(crate) fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let doc: Value = serde_json::from_str(
        &fs::read_to_string(&a.tree)
            .with_context(|| format!("cannot read {}", a.tree.display()))?,
    )
    .with_context(|| format!("{} is not JSON", a.tree.display()))?;
    let setup = match &a.setup {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        )
        .with_context(|| format!("invalid setup {}", p.display()))?,
        None => SetupDoc::from_json(fixtures::SETUP)?,
    };
    let report = cmd_validate(&doc, &setup)?;
    match a.format {
        Format::Table => print!("{}", report.render()),
        Format::Json => print!("{}", pretty(&report)),
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

pub(crate) fn run(a: RunArgs) -> Result<ExitCode> {
    let inputs = Inputs::resolve_with(&a.input, a.scenario.as_ref(), a.disturbance.as_ref())?;
    let out = cmd_run(&inputs)?;
    if let Some(dir) = &inputs.out {
        write_docs(
            dir,
            &[
                ("trace.json", &out.trace_json()),
                ("metrics.json", &out.metrics_json()),
            ],
        )?;
    }
    match a.input.format {
        Format::Table => print!("{}{}", out.trace.render(), metrics_summary(&out.metrics)),
        Format::Json => print!("{}", out.metrics_json()),
    }
    Ok(ExitCode::SUCCESS)
}

fn cells_table(t: &BenchTable) -> String {
    let mut out = format!(
        "{:>11} {:>11} {:>6} {:>7} {:>7} {:>7} {:>8} {:>8}\n",
        "task_length", "disturbance", "trials", "TS", "CR", "DRR", "ticks", "replans"
    );
    for c in &t.cells {
        let drr = c
            .drr_mean
            .map_or_else(|| "N/A".to_owned(), |d| format!("{d:.3}"));
        let _ = writeln!(
            out,
            "{:>11} {:>11} {:>6} {:>7.3} {:>7.3} {:>7} {:>8.1} {:>8.2}",
            c.task_length,
            c.disturbance
                .map_or_else(|| "none".to_owned(), |k| k.to_string()),
            c.trials,
            c.ts_rate,
            c.cr_mean,
            drr,
            c.ticks_mean,
            c.replans_mean
        );
    }
    out
}

pub(crate) fn bench(a: BenchArgs) -> Result<ExitCode> {
    let m = match &a.manifest {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::default(),
    };
    let setup = match &m.setup {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("invalid setup {}", p.display()))?,
        None => SetupDoc::from_json(fixtures::SETUP)?,
    };
    let workcell = match &m.workcell {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("invalid workcell {}", p.display()))?,
        None => WorkcellDoc::from_json(fixtures::WORKCELL)?,
    };
    let backend = a
        .backend
        .clone()
        .or(m.backend.clone())
        .unwrap_or_else(|| "mock".into());
    let disturbances = a
        .disturbances
        .iter()
        .map(|d| parse_disturbance(d))
        .collect::<Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        task_lengths: a.lengths.clone(),
        disturbances,
        trials: a.trials,
        master_seed: a.seed.or(m.seed).unwrap_or(0),
        noise_level: a.noise,
        exec: m.exec.unwrap_or_default(),
    };
    let plans = bench_plans(&backend, &setup, &cfg.task_lengths)?;
    let out = cmd_bench(&plans, &workcell, &cfg, &a.sweep)?;
    let dir: Option<PathBuf> = a.out.clone().or(m.out.clone());
    if let Some(dir) = &dir {
        write_docs(
            dir,
            &[
                ("results.csv", &out.table.to_csv()),
                ("cells.csv", &out.table.cells_csv()),
                ("results.json", &pretty(&out.table)),
            ],
        )?;
        if !out.sweep.is_empty() {
            write_docs(
                dir,
                &[
                    ("sweep.csv", &out.sweep_csv()),
                    ("sweep.json", &pretty(&out.sweep)),
                ],
            )?;
        }
    }
    match a.format {
        Format::Table => {
            print!("{}", cells_table(&out.table));
            if !out.sweep.is_empty() {
                print!("\n{}", out.sweep_csv());
            }
        }
        Format::Json => print!("{}", pretty(&out)),
    }
    Ok(ExitCode::SUCCESS)
}

pub(crate) fn replay(a: ReplayArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&a.trace)
        .with_context(|| format!("cannot read {}", a.trace.display()))?;
    let trace = ExecutionTrace::from_json(&text)
        .with_context(|| format!("invalid trace {}", a.trace.display()))?;
    print!("{}", cmd_replay(&trace, a.format));
    Ok(ExitCode::SUCCESS)
}

pub(crate) fn serve(a: ServeArgs) -> Result<ExitCode> {
    let cfg = asmbt_service::ServiceConfig {
        event_capacity: a.event_capacity,
        tick_delay_ms: a.tick_delay_ms,
        data_dir: a.data_dir,
        ..Default::default()
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    eprintln!(
        "listening on http://{}/{}",
        a.addr,
        asmbt_service::API_VERSION
    );
    rt.block_on(asmbt_service::serve(a.addr, cfg))?;
    Ok(ExitCode::SUCCESS)
}
