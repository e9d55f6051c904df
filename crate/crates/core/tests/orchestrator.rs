use std::sync::Arc;

use prompt_catalyst::llmopt::{LlmError, LlmSettings, OracleClient, Origin, ScriptedClient};
use prompt_catalyst::objective::{make_quadratic, make_synthetic_task, Objective, SyntheticTask, SyntheticTaskSpec};
use prompt_catalyst::orchestrator::{
    run, run_ablation, run_gradient_only, run_noise_restart, write_events, AblationAxes,
    AblationError, ContextFlags, EventKind, InitMode, RunConfig, RunError, RunResult,
};
use prompt_catalyst::vocab::{Metric, Vocabulary};

const PLANTED_LOSS_SEED0: f64 = 1.1294325618717558;

fn task(seed: u64) -> SyntheticTask {
    make_synthetic_task(&SyntheticTaskSpec { seed, ..Default::default() }).unwrap()
}

fn quick(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        final_iterations: 30,
        llm: LlmSettings { max_retries: 0, backoff_ms: 0, ..Default::default() },
        ..Default::default()
    }
}

fn jsonl(r: &RunResult) -> Vec<u8> {
    let mut buf = Vec::new();
    write_events(&r.events, &mut buf).unwrap();
    buf
}

fn count(r: &RunResult, kind: EventKind) -> usize {
    r.events.iter().filter(|e| e.kind == kind).count()
}

#[test]
fn zero_rounds_is_a_pure_gradient_run() {
    let t = task(0);
    let cfg = RunConfig { rounds: 0, ..quick(1) };
    let mut client = ScriptedClient::from_texts(["never"]);
    let r = run(&cfg, &t.objective, &t.vocab, &mut client).unwrap();
    assert_eq!(client.calls(), 0);
    assert_eq!(r.grad_steps, 30);
    assert_eq!(count(&r, EventKind::Snapshot), 30);
    assert_eq!(r.events.len(), 30);
    let g = run_gradient_only(&cfg, &t.objective, &t.vocab).unwrap();
    assert_eq!(jsonl(&r), jsonl(&g));
}

#[test]
fn oracle_run_converges_to_planted_loss() {
    let t = task(0);
    let cfg = RunConfig { seed: 0, init: InitMode::Adversarial { draws: 16 }, ..RunConfig::default() };
    let mut client = OracleClient::new(t.planted.text());
    let r = run(&cfg, &t.objective, &t.vocab, &mut client).unwrap();
    assert!((r.final_loss - PLANTED_LOSS_SEED0).abs() < 1e-6, "final {}", r.final_loss);
    assert_eq!(r.final_text, t.planted.text());
    for s in &r.rounds {
        assert_eq!(s.restart_text.as_deref(), Some(t.planted.text()));
    }
    // starting losses never go up once the oracle restarts kick in
    let starts: Vec<f64> = r.rounds.iter().skip(1).map(|s| s.start_loss).collect();
    assert!(starts.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn scripted_runs_are_byte_identical() {
    let t = task(2);
    let replies = ["1. goba poba dobe nobe\n2. a photo of the\n3. zzz qqq"];
    let a = run(&quick(4), &t.objective, &t.vocab, &mut ScriptedClient::from_texts(replies).cycling()).unwrap();
    let b = run(&quick(4), &t.objective, &t.vocab, &mut ScriptedClient::from_texts(replies).cycling()).unwrap();
    assert_eq!(jsonl(&a), jsonl(&b));
    assert_eq!(a.best_loss.to_bits(), b.best_loss.to_bits());
}

#[test]
fn budget_and_pool_resets() {
    let t = task(1);
    let cfg = RunConfig { rounds: 4, inner_iterations: 7, final_iterations: 11, ..quick(3) };
    let mut client = OracleClient::new(t.planted.text());
    let r = run(&cfg, &t.objective, &t.vocab, &mut client).unwrap();
    assert_eq!(r.grad_steps, 4 * 7 + 11);
    assert_eq!(count(&r, EventKind::Snapshot), 4 * 7 + 11);
    assert_eq!(count(&r, EventKind::PoolReset), 4);
    for round in 1..=4 {
        let first = r.events.iter().find(|e| e.round == round).unwrap();
        assert_eq!(first.kind, EventKind::PoolReset);
        let snaps = r.events.iter().filter(|e| e.round == round && e.kind == EventKind::Snapshot).count();
        assert_eq!(snaps, 7);
    }
    let seqs: Vec<usize> = r.events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..r.events.len()).collect::<Vec<_>>());
}

#[test]
fn restarts_are_embedded_templates() {
    let t = task(5);
    let replies = ["Sure! Here are some:\n1. a photo of the\n2. \"goba poba dobe\"\n3. image style of"];
    let cfg = quick(5);
    let mut client = ScriptedClient::from_texts(replies).cycling();
    let r = run(&cfg, &t.objective, &t.vocab, &mut client).unwrap();
    let restarts: Vec<_> = r.events.iter().filter(|e| e.kind == EventKind::Restart).collect();
    assert_eq!(restarts.len(), 3);
    for (summary, ev) in r.rounds.iter().zip(&restarts) {
        assert_eq!(ev.origin, Some(Origin::Llm));
        assert!(["a photo of the", "goba poba dobe", "image style of"].contains(&ev.prompt.as_str()));
        assert_eq!(summary.restart_text.as_deref(), Some(ev.prompt.as_str()));
    }
    // the next round starts exactly at the embedding of the restart text
    for w in r.rounds.windows(2) {
        let text = w[0].restart_text.as_deref().unwrap();
        let theta = t.vocab.embed(&t.vocab.tokenize(text).unwrap().prompt);
        assert_eq!(w[1].start_loss, t.objective.loss(&theta).unwrap());
    }
}

#[test]
fn best_loss_is_the_running_minimum() {
    let t = task(6);
    let mut client = prompt_catalyst::llmopt::NeighborhoodClient::new(t.vocab.clone(), 6);
    let r = run(&quick(6), &t.objective, &t.vocab, &mut client).unwrap();
    let min = r
        .events
        .iter()
        .filter(|e| e.is_evaluation())
        .map(|e| e.loss.unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_loss, min);
    let best = r.events.iter().find(|e| e.is_evaluation() && e.loss == Some(min)).unwrap();
    assert_eq!(best.prompt, r.best_text);
}

#[test]
fn llm_failure_degrades_to_gradient_only() {
    let t = task(0);
    let cfg = quick(2);
    let failing = || ScriptedClient::new((0..10).map(|_| Err(LlmError::Transport("refused".into()))));
    let r = run(&cfg, &t.objective, &t.vocab, &mut failing()).unwrap();
    assert_eq!(count(&r, EventKind::LlmFailure), 3);
    assert_eq!(count(&r, EventKind::Restart), 0);
    assert!(r.rounds.iter().all(|s| s.llm_failed));
    assert_eq!(r.grad_steps, cfg.gradient_budget());

    // without restarts the run follows the gradient-only trajectory
    let g = run_gradient_only(&cfg, &t.objective, &t.vocab).unwrap();
    assert_eq!(r.final_theta, g.final_theta);

    let abort = RunConfig { abort_on_llm_failure: true, ..cfg };
    assert!(matches!(
        run(&abort, &t.objective, &t.vocab, &mut failing()),
        Err(RunError::Llm(LlmError::Transport(_)))
    ));
}

#[test]
fn unusable_reply_falls_back_to_pool_minimum() {
    let t = task(0);
    let mut client = ScriptedClient::from_texts(["Sure! Here are templates:"]).cycling();
    let r = run(&quick(0), &t.objective, &t.vocab, &mut client).unwrap();
    for ev in r.events.iter().filter(|e| e.kind == EventKind::Restart) {
        assert_eq!(ev.origin, Some(Origin::Gradient));
        assert!(ev.note.as_deref().unwrap().contains("fallback"));
    }
    for s in &r.rounds {
        assert_eq!(s.restart_loss, Some(s.best_snapshot_loss));
    }
}

#[test]
fn zero_noise_restart_matches_gradient_only() {
    let t = task(3);
    let cfg = RunConfig { noise_sigma: 0.0, ..quick(8) };
    let n = run_noise_restart(&cfg, &t.objective, &t.vocab).unwrap();
    let g = run_gradient_only(&cfg, &t.objective, &t.vocab).unwrap();
    assert_eq!(n.final_theta, g.final_theta);
    assert_eq!(n.best_loss, g.best_loss);
    let snaps = |r: &RunResult| -> Vec<(String, u64)> {
        r.events
            .iter()
            .filter(|e| e.kind == EventKind::Snapshot)
            .map(|e| (e.prompt.clone(), e.loss.unwrap().to_bits()))
            .collect()
    };
    assert_eq!(snaps(&n), snaps(&g));
}

#[test]
fn noise_restarts_are_reproducible() {
    let t = task(3);
    let cfg = RunConfig { noise_sigma: 0.5, ..quick(9) };
    let a = run_noise_restart(&cfg, &t.objective, &t.vocab).unwrap();
    let b = run_noise_restart(&cfg, &t.objective, &t.vocab).unwrap();
    assert_eq!(jsonl(&a), jsonl(&b));
    assert_eq!(count(&a, EventKind::Restart), 3);
    let g = run_gradient_only(&cfg, &t.objective, &t.vocab).unwrap();
    assert_ne!(a.final_theta, g.final_theta);
}

#[test]
fn gradient_only_on_quadratic_reaches_target() {
    let vocab = Arc::new(Vocabulary::random(2, 80, 8).unwrap());
    let target = vocab.prompt_from_ids(&[10, 20, 30, 40]).unwrap();
    let q = make_quadratic(&target, vocab.clone()).unwrap();
    let cfg = RunConfig { rounds: 3, inner_iterations: 10, final_iterations: 100, ..quick(0) };
    let r = run_gradient_only(&cfg, &q, &vocab).unwrap();
    assert_eq!(r.grad_steps, 130);
    assert!(q.loss(&r.final_theta).unwrap() < 1e-12);
    assert_eq!(r.final_text, target.text());
    assert_eq!(r.best_accuracy, 100.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let t = task(0);
    let bad = [
        RunConfig { inner_iterations: 0, ..quick(0) },
        RunConfig { prompt_length: 0, ..quick(0) },
        RunConfig { init: InitMode::Adversarial { draws: 0 }, ..quick(0) },
    ];
    for cfg in bad {
        assert!(matches!(run_gradient_only(&cfg, &t.objective, &t.vocab), Err(RunError::Config(_))));
    }
}

#[test]
fn manual_init_and_cosine_metric() {
    let t = task(0);
    let cfg = RunConfig {
        init: InitMode::Manual { text: "a photo of the".into() },
        metric: Metric::Cosine,
        ..quick(0)
    };
    let mut client = OracleClient::new(t.planted.text());
    let r = run(&cfg, &t.objective, &t.vocab, &mut client).unwrap();
    let start = t.vocab.embed(&t.vocab.tokenize("a photo of the").unwrap().prompt);
    assert_eq!(r.rounds[0].start_loss, t.objective.loss(&start).unwrap());
}

#[test]
fn ablation_grid_shapes_and_failures() {
    let t = task(0);
    let base = RunConfig { rounds: 1, final_iterations: 5, ..quick(0) };
    let oracle = |_: &RunConfig| -> Result<Box<dyn prompt_catalyst::llmopt::LlmClient>, RunError> {
        Ok(Box::new(OracleClient::new("goba poba dobe nobe")))
    };

    assert!(matches!(
        run_ablation(&AblationAxes::default(), &base, &t.objective, &t.vocab, oracle),
        Err(AblationError::EmptyGrid)
    ));

    let axes = AblationAxes { rounds: vec![1, 2, 3, 4], seeds: vec![0, 1], ..Default::default() };
    let report = run_ablation(&axes, &base, &t.objective, &t.vocab, oracle).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert!(report.cells.iter().all(|c| c.runs.len() == 2));
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);

    // MP without a manual prompt fails those cells only
    let axes = AblationAxes { flags: ContextFlags::TABLE.to_vec(), ..Default::default() };
    let report = run_ablation(&axes, &base, &t.objective, &t.vocab, oracle).unwrap();
    assert_eq!(report.cells.len(), 4);
    let failed: Vec<bool> = report.cells.iter().map(|c| !c.failures.is_empty()).collect();
    assert_eq!(failed, vec![false, true, false, true]);
    assert_eq!(report.cells[0].cell.arm(), "noise");
    assert!(report.failures().next().unwrap().to_string().contains("flags=TTF"));
}
