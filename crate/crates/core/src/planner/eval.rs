//! Generation metrics over a corpus of annotated demonstrations.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bt::{from_document, BehaviorTree};
use crate::world::{init_state, virtual_tick, Domain, SetupDoc, WorldState};

use super::backend::{fallback_reply, BackendError, PlannerBackend, Prompt};
use super::gate::corrective_feedback;
use super::validate::{
    check_interpretation, check_logical, check_shape, parse_interpretation, parse_subtree,
};
use super::{
    fallback_sequence, fallback_subtree, validate_syntactic, DemonstrationTranscript, Gold,
    PlanError, Subtask,
};

/// Fraction of positions at which `predicted` matches `gold`, over the
/// longer of the two lists. Two empty lists agree fully.
pub fn score_decomposition(predicted: &[Subtask], gold: &[Subtask]) -> f64 {
    let n = predicted.len().max(gold.len());
    if n == 0 {
        return 1.0;
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    hits as f64 / n as f64
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub transcript: DemonstrationTranscript,
    pub gold: Gold,
    pub setup: SetupDoc,
}

/// Scores of one demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScores {
    pub name: String,
    pub initial: Scores,
    pub refined: Scores,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub tda: f64,
    pub lcr: f64,
    pub svr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    /// `initial` or `refined`.
    pub response: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationTable {
    pub rows: Vec<GenerationRow>,
    pub videos: Vec<VideoScores>,
}

impl GenerationTable {
    /// Delimited text: `response,TDA,LCR,SVR`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("response,TDA,LCR,SVR\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{:.4}",
                r.response, r.scores.tda, r.scores.lcr, r.scores.svr
            );
        }
        out
    }
}

/// Scores initial and once-refined replies of `backend` on every entry.
///
/// Stage A is scored against the gold subtasks; the refine round gets
/// validation diagnostics or gold-derived corrective feedback. Stage B is
/// scored per subtree on the gold subtasks, chained through the rule-based
/// planner's subtrees so that every request starts from a coherent state.
pub fn evaluate_generation(
    corpus: &[CorpusEntry],
    domain: Arc<Domain>,
    mut backend_for: impl FnMut(&CorpusEntry) -> Box<dyn PlannerBackend>,
) -> Result<GenerationTable, PlanError> {
    let mut table = GenerationTable::default();
    for entry in corpus {
        let mut backend = backend_for(entry);
        let (initial_tda, refined_tda) = score_interpretation(entry, &domain, backend.as_mut())?;
        let (initial_b, refined_b) = score_subtrees(entry, &domain, backend.as_mut())?;
        table.videos.push(VideoScores {
            name: entry.name.clone(),
            initial: Scores {
                tda: initial_tda,
                lcr: initial_b.0,
                svr: initial_b.1,
            },
            refined: Scores {
                tda: refined_tda,
                lcr: refined_b.0,
                svr: refined_b.1,
            },
        });
    }
    if !table.videos.is_empty() {
        let n = table.videos.len() as f64;
        for (name, pick) in [("initial", 0), ("refined", 1)] {
            let mut s = Scores::default();
            for v in &table.videos {
                let x = if pick == 0 { v.initial } else { v.refined };
                s.tda += x.tda / n;
                s.lcr += x.lcr / n;
                s.svr += x.svr / n;
            }
            table.rows.push(GenerationRow {
                response: name.into(),
                scores: s,
            });
        }
    }
    Ok(table)
}

fn ask(
    backend: &mut dyn PlannerBackend,
    prompt: &Prompt,
    refine: Option<(&str, &str)>,
) -> Option<String> {
    let r = match refine {
        None => backend.interpret(prompt),
        Some((prior, fb)) => backend.refine(prompt, prior, fb),
    };
    match r {
        Ok(s) => Some(s),
        Err(BackendError::Declined) => fallback_reply(prompt),
        Err(_) => None,
    }
}

fn score_interpretation(
    entry: &CorpusEntry,
    domain: &Domain,
    backend: &mut dyn PlannerBackend,
) -> Result<(f64, f64), PlanError> {
    entry.transcript.validate()?;
    let prompt = Prompt::interpret(&entry.transcript, domain);
    let gold = &entry.gold.subtasks;
    let Some(first) = ask(backend, &prompt, None) else {
        return Ok((0.0, 0.0));
    };
    let parsed = parse_interpretation(&first);
    let initial = parsed
        .as_ref()
        .map_or(0.0, |i| score_decomposition(&i.subtasks, gold));
    let feedback = match &parsed {
        Err(e) => Some(e.to_string()),
        Ok(i) => match check_interpretation(i, &entry.transcript.objects, domain) {
            Err(e) => Some(e.to_string()),
            Ok(()) => corrective_feedback(&i.subtasks, gold),
        },
    };
    let Some(feedback) = feedback else {
        return Ok((initial, initial));
    };
    let refined = ask(backend, &prompt, Some((&first, &feedback)))
        .and_then(|r| parse_interpretation(&r).ok())
        .map_or(0.0, |i| score_decomposition(&i.subtasks, gold));
    Ok((initial, refined))
}

/// `(syntactically valid, logically coherent)` for one subtree reply, plus
/// diagnostics when either fails.
fn score_tree(reply: &str, subtask: &Subtask, state: &WorldState) -> (bool, bool, String) {
    let domain = state.domain();
    let doc = match parse_subtree(reply) {
        Ok(d) => d,
        Err(e) => return (false, false, e.to_string()),
    };
    let report = validate_syntactic(&doc, Some(domain));
    if !report.valid {
        let text = report
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return (false, false, text);
    }
    let Ok(goal) = subtask.goal(domain) else {
        return (true, false, "unknown skill".into());
    };
    let tree: BehaviorTree = match from_document(&doc) {
        Ok(t) => t,
        Err(e) => return (false, false, e.to_string()),
    };
    if let Err(e) = check_shape(&tree, &goal) {
        return (false, false, e.to_string());
    }
    match check_logical(&tree, state, &goal) {
        Ok(_) => (true, true, String::new()),
        Err(e) => (true, false, e.to_string()),
    }
}

/// `(LCR, SVR)` of one response.
type SubtreeScores = (f64, f64);

/// Per-video `((initial LCR, SVR), (refined LCR, SVR))`.
fn score_subtrees(
    entry: &CorpusEntry,
    domain: &Arc<Domain>,
    backend: &mut dyn PlannerBackend,
) -> Result<(SubtreeScores, SubtreeScores), PlanError> {
    let subtasks = &entry.gold.subtasks;
    if subtasks.is_empty() {
        return Ok(((1.0, 1.0), (1.0, 1.0)));
    }
    let (s0, _) = init_state(&entry.setup, domain.clone())?;
    let mut state = s0.with_constraints(&entry.gold.constraints)?;
    let (mut init, mut refd) = ([0usize; 2], [0usize; 2]);
    for (i, t) in subtasks.iter().enumerate() {
        let actions = fallback_sequence(t, &state).map_err(|e| e.at_stage(i))?;
        let prompt = Prompt::Subtree {
            stage: i,
            subtask: t.clone(),
            actions: actions.clone(),
            state: state.clone(),
        };
        let first = ask(backend, &prompt, None).unwrap_or_default();
        let (svr, lcr, diag) = score_tree(&first, t, &state);
        init[0] += lcr as usize;
        init[1] += svr as usize;
        let (svr, lcr) = if svr && lcr {
            (svr, lcr)
        } else {
            let second = ask(backend, &prompt, Some((&first, &diag))).unwrap_or_default();
            let (s, l, _) = score_tree(&second, t, &state);
            (s, l)
        };
        refd[0] += lcr as usize;
        refd[1] += svr as usize;
        let chain = fallback_subtree(i, t, &actions, &state).map_err(|e| e.at_stage(i))?;
        state = virtual_tick(&chain, &state).map_err(|e| PlanError::from(e).at_stage(i))?;
    }
    let n = subtasks.len() as f64;
    let frac = |c: [usize; 2]| (c[0] as f64 / n, c[1] as f64 / n);
    Ok((frac(init), frac(refd)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::planner::{FaultyBackend, MockBackend};

    fn entry(len: usize) -> CorpusEntry {
        CorpusEntry {
            name: format!("task{len}"),
            transcript: DemonstrationTranscript::from_json(fixtures::transcript(len).unwrap())
                .unwrap(),
            gold: serde_json::from_str(fixtures::gold(len).unwrap()).unwrap(),
            setup: SetupDoc::from_json(fixtures::SETUP).unwrap(),
        }
    }

    #[test]
    fn tda_is_positional() {
        let g: Vec<_> = (0..5)
            .map(|k| Subtask::new("insert", &format!("p{k}"), "t"))
            .collect();
        assert_eq!(score_decomposition(&g, &g), 1.0);
        let mut p = g.clone();
        p[3].target = "u".into();
        assert!((score_decomposition(&p, &g) - 0.8).abs() < 1e-12);
        assert_eq!(score_decomposition(&[], &[]), 1.0);
        assert!((score_decomposition(&g[..4], &g) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clean_mock_scores_full_marks() {
        let corpus: Vec<_> = fixtures::TASK_LENGTHS.iter().map(|&l| entry(l)).collect();
        let t = evaluate_generation(&corpus, Arc::new(Domain::gearset()), |e| {
            let len: usize = e.name[4..].parse().unwrap();
            Box::new(MockBackend::from_json(fixtures::mock_script(len).unwrap()).unwrap())
        })
        .unwrap();
        for r in &t.rows {
            assert_eq!(
                (r.scores.tda, r.scores.lcr, r.scores.svr),
                (1.0, 1.0, 1.0),
                "{}",
                r.response
            );
        }
    }

    #[test]
    fn faults_lower_initial_scores_and_feedback_restores_them() {
        let t = evaluate_generation(&[entry(5)], Arc::new(Domain::gearset()), |_| {
            let inner = MockBackend::from_json(fixtures::mock_script(5).unwrap()).unwrap();
            Box::new(FaultyBackend::scripted_json(inner, fixtures::TASK5_FAULTS).unwrap())
        })
        .unwrap();
        let v = &t.videos[0];
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        // one wrong subtask of five; one malformed and one more incoherent subtree of five
        assert!(close(v.initial.tda, 4.0 / 5.0));
        assert!(close(v.initial.svr, 4.0 / 5.0));
        assert!(close(v.initial.lcr, 3.0 / 5.0));
        assert_eq!(
            v.refined,
            Scores {
                tda: 1.0,
                lcr: 1.0,
                svr: 1.0
            }
        );
    }

    #[test]
    fn empty_corpus_gives_empty_table() {
        let t = evaluate_generation(&[], Arc::new(Domain::gearset()), |_| unreachable!()).unwrap();
        assert!(t.rows.is_empty() && t.videos.is_empty());
        assert_eq!(t.to_csv(), "response,TDA,LCR,SVR\n");
    }
}
