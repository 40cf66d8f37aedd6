use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use trajaudit::gateway::Gateway;
use trajaudit::metrics::{evaluate as score, read_predictions, render_domain_table, render_table, write_predictions};
use trajaudit::metrics::{EvalOptions, MetricsReport, Prediction};
use trajaudit::monitor::{compare_with_restart, run_with_monitor, MonitorConfig, RunOutcome, RunStatus};
use trajaudit::rng::UnitRng;
use trajaudit::scriptenv::fixtures::{faucet_loop_spec, load_faucet_loop, monitor_suite, FAUCET_LOOP_TASK};
use trajaudit::scriptenv::{
    default_rules, golden_run, task_names, OnRejection, ScriptEnv, ScriptEnvGenerator, ScriptEnvPerturber,
    ScriptedAgent, ScriptedAgentSpec, META_ENV_TASK,
};
use trajaudit::synth::corpus::synthetic_seeds;
use trajaudit::synth::{
    assemble_balanced, filter_seeds, stratified_split, synthesize as run_synthesis, GenerationFailure, Generator,
    LlmGenerator, PerturbedPrefix, RuleValidator, ScriptedGenerator, StepDraft, SynthesisConfig,
};
use trajaudit::trajectory::{read_jsonl, write_jsonl, Manifest};
use trajaudit::verifier::{OracleVerifier, PromptTemplate, RemoteVerifier, RuleVerifier, Verifier};
use trajaudit::{AnomalyLabel, Dataset, LabeledTrajectory, Trajectory};
use trajaudit_review::{router, serve, ReviewStore};

use crate::config::{CliConfig, GeneratorKind, VerifierKind};
use crate::{CliError, ScenarioArgs, SeedSource};

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a CliConfig,
    inputs: Value,
    outputs: BTreeMap<&'a str, PathBuf>,
    result: Value,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::domain("Io", format!("{}: {e}", path.display()))
}

fn write_summary(
    config: &CliConfig,
    command: &str,
    inputs: Value,
    outputs: BTreeMap<&str, PathBuf>,
    result: Value,
) -> Result<PathBuf, CliError> {
    let path = config.out.join(format!("{command}.summary.json"));
    let summary = Summary {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        inputs,
        outputs,
        result,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
    println!("summary: {}", path.display());
    Ok(path)
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

fn read_items(path: &Path) -> Result<Vec<LabeledTrajectory>, CliError> {
    read_jsonl(path).map_err(|e| CliError::domain("Parse", format!("{}: {e}", path.display())))
}

/// Items from `path`, with the conventions of its manifest when one sits next to it.
fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let items = read_items(path)?;
    let mpath = manifest_path(path);
    let conventions = match std::fs::read_to_string(&mpath) {
        Ok(text) => serde_json::from_str::<Manifest>(&text)
            .map_err(|e| CliError::domain("Parse", format!("{}: {e}", mpath.display())))?
            .conventions,
        Err(_) => BTreeMap::new(),
    };
    Dataset::with_conventions(items, conventions).map_err(|e| CliError::domain("Dataset", e))
}

fn save_dataset(path: &Path, dataset: &Dataset) -> Result<(), CliError> {
    write_jsonl(path, dataset.items()).map_err(|e| io_error(path, e))?;
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(dataset.manifest()).expect("manifest serializes");
    std::fs::write(&mpath, text + "\n").map_err(|e| io_error(&mpath, e))
}

fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<(), CliError> {
    let items: Vec<LabeledTrajectory> = trajectories
        .iter()
        .map(|t| LabeledTrajectory {
            trajectory: t.clone(),
            label: AnomalyLabel::normal(),
        })
        .collect();
    write_jsonl(path, &items).map_err(|e| io_error(path, e))
}

fn load_seeds(source: &SeedSource, config: &CliConfig) -> Result<Vec<Trajectory>, CliError> {
    if let Some(path) = &source.input {
        return Ok(read_items(path)?.into_iter().map(|i| i.trajectory).collect());
    }
    if let Some(n) = source.synthetic {
        return Ok(synthetic_seeds(n, config.seed));
    }
    task_names()
        .into_iter()
        .map(|n| golden_run(n).map_err(|e| CliError::domain("Env", e)))
        .collect()
}

pub fn validate_seeds(config: &CliConfig, source: &SeedSource) -> Result<(), CliError> {
    let seeds = load_seeds(source, config)?;
    let validator = RuleValidator::new(&config.reject_pattern)
        .map_err(|e| CliError::Usage(format!("reject_pattern: {e}")))?;
    let (accepted, rejected, report) = filter_seeds(seeds, &validator);
    let out = config.out.join("seeds.accepted.jsonl");
    write_trajectories(&out, &accepted)?;
    let rejected: Vec<Value> = rejected
        .iter()
        .map(|(t, reason)| json!({"id": t.id, "reason": reason}))
        .collect();
    println!("accepted {} of {} seeds ({})", report.accepted_seed_count, report.raw_seed_count, report.pass_rate.display);
    write_summary(
        config,
        "validate-seeds",
        to_value(source),
        BTreeMap::from([("accepted", out)]),
        json!({"report": report, "rejected": rejected}),
    )?;
    Ok(())
}

/// Environment-backed completion for scriptenv seeds, the golden suffix for the rest.
struct ScriptedRouting {
    fallback: ScriptedGenerator,
}

impl Generator for ScriptedRouting {
    fn generate(&self, prefix: &PerturbedPrefix, rng: &mut UnitRng) -> Result<Vec<StepDraft>, GenerationFailure> {
        if prefix.source.metadata.contains_key(META_ENV_TASK) {
            ScriptEnvGenerator.generate(prefix, rng)
        } else {
            self.fallback.generate(prefix, rng)
        }
    }
}

fn gateway(config: trajaudit::gateway::GatewayConfig) -> Result<Arc<Gateway>, CliError> {
    Gateway::new(config).map(Arc::new).map_err(|e| CliError::domain("Gateway", e))
}

fn generator(config: &CliConfig) -> Result<Box<dyn Generator>, CliError> {
    Ok(match config.generator {
        GeneratorKind::Scripted => Box::new(ScriptedRouting {
            fallback: ScriptedGenerator::golden_suffix(),
        }),
        kind => Box::new(LlmGenerator::new(gateway(config.gateway.generator(kind)?)?)),
    })
}

fn template(config: &CliConfig) -> Result<PromptTemplate, CliError> {
    match &config.template {
        None => Ok(PromptTemplate::default_v1()),
        Some(path) => {
            let source = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            PromptTemplate::parse(&source).map_err(|e| CliError::domain("Template", e))
        }
    }
}

/// The configured verifier. The oracle knows the labels of `labeled`.
fn verifier(config: &CliConfig, labeled: &[LabeledTrajectory]) -> Result<Box<dyn Verifier>, CliError> {
    Ok(match config.verifier {
        VerifierKind::Oracle => Box::new(OracleVerifier::new(labeled.iter().cloned())),
        VerifierKind::Rule => Box::new(RuleVerifier { rules: default_rules() }),
        VerifierKind::Remote => Box::new(RemoteVerifier::new(gateway(config.gateway.verifier())?, template(config)?)),
    })
}

pub fn synthesize(config: &CliConfig, source: &SeedSource) -> Result<(), CliError> {
    let seeds = load_seeds(source, config)?;
    let generator = generator(config)?;
    let synth_config = SynthesisConfig::new(config.seed);
    let output = run_synthesis(&seeds, &ScriptEnvPerturber, generator.as_ref(), &synth_config)
        .map_err(|e| CliError::domain("Synthesis", e))?;
    let anomalies: Vec<LabeledTrajectory> = output.pairs.iter().map(|(_, a)| a.clone()).collect();
    let anomalies_path = config.out.join("anomalies.jsonl");
    write_jsonl(&anomalies_path, &anomalies).map_err(|e| io_error(&anomalies_path, e))?;
    let seeds_path = config.out.join("seeds.jsonl");
    write_trajectories(&seeds_path, &seeds)?;
    let failures_path = config.out.join("failures.jsonl");
    let failures: String = output
        .failures
        .iter()
        .map(|f| serde_json::to_string(f).expect("failure serializes") + "\n")
        .collect();
    std::fs::write(&failures_path, failures).map_err(|e| io_error(&failures_path, e))?;
    let dataset = assemble_balanced(output.pairs).map_err(|e| CliError::domain("Assemble", e))?;
    let dataset_path = config.out.join("dataset.jsonl");
    save_dataset(&dataset_path, &dataset)?;
    println!(
        "synthesized {} of {} units ({}), dataset of {} items",
        output.report.synthesis_successes,
        output.report.synthesis_attempts,
        output.report.success_rate.display,
        dataset.len()
    );
    write_summary(
        config,
        "synthesize",
        to_value(source),
        BTreeMap::from([
            ("anomalies", anomalies_path),
            ("dataset", dataset_path.clone()),
            ("failures", failures_path),
            ("manifest", manifest_path(&dataset_path)),
            ("seeds", seeds_path),
        ]),
        json!({
            "report": output.report,
            "plan": output.plan,
            "synthesis": synth_config,
            "manifest": dataset.manifest(),
        }),
    )?;
    Ok(())
}

pub fn assemble(config: &CliConfig, seeds: &Path, anomalies: &Path) -> Result<(), CliError> {
    let golden: HashMap<String, Trajectory> = read_items(seeds)?
        .into_iter()
        .map(|i| (i.trajectory.id.clone(), i.trajectory))
        .collect();
    let pairs = read_items(anomalies)?
        .into_iter()
        .map(|a| {
            let source = a.label.source_id.clone().unwrap_or_default();
            let gold = golden.get(&source).cloned().ok_or_else(|| {
                CliError::domain("Assemble", format!("anomaly {} names unknown seed `{source}`", a.id()))
            })?;
            Ok((gold, a))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let dataset = assemble_balanced(pairs).map_err(|e| CliError::domain("Assemble", e))?;
    let path = config.out.join("dataset.jsonl");
    save_dataset(&path, &dataset)?;
    println!("assembled {} items", dataset.len());
    write_summary(
        config,
        "assemble",
        json!({"seeds": seeds, "anomalies": anomalies}),
        BTreeMap::from([("dataset", path.clone()), ("manifest", manifest_path(&path))]),
        json!({"manifest": dataset.manifest()}),
    )?;
    Ok(())
}

pub fn split(config: &CliConfig, dataset_path: &Path) -> Result<(), CliError> {
    let dataset = load_dataset(dataset_path)?;
    let (train, test) = stratified_split(&dataset, config.test_fraction, config.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let train_path = config.out.join("train.jsonl");
    let test_path = config.out.join("test.jsonl");
    save_dataset(&train_path, &train)?;
    save_dataset(&test_path, &test)?;
    println!("train {} items, test {} items", train.len(), test.len());
    write_summary(
        config,
        "split",
        json!({"dataset": dataset_path}),
        BTreeMap::from([("test", test_path), ("train", train_path)]),
        json!({"train": train.manifest(), "test": test.manifest()}),
    )?;
    Ok(())
}

pub fn evaluate(
    config: &CliConfig,
    dataset_path: &Path,
    predictions: Option<&Path>,
    label: Option<String>,
) -> Result<(), CliError> {
    let dataset = load_dataset(dataset_path)?;
    let mut outputs = BTreeMap::new();
    let (reports, source) = match predictions {
        Some(path) => (
            read_predictions(path).map_err(|e| CliError::domain("Parse", format!("{}: {e}", path.display())))?,
            "predictions".to_string(),
        ),
        None => {
            let v = verifier(config, dataset.items())?;
            let mut reports = HashMap::new();
            let mut lines = Vec::new();
            for item in dataset.items() {
                let r = v.verify(&item.trajectory).map_err(|e| CliError::domain("Verifier", e))?;
                lines.push(Prediction::from_report(item.id(), &r));
                reports.insert(item.id().to_string(), r);
            }
            let path = config.out.join("predictions.jsonl");
            write_predictions(&path, &lines).map_err(|e| io_error(&path, e))?;
            outputs.insert("predictions", path);
            (reports, to_value(&config.verifier).as_str().unwrap_or("verifier").to_string())
        }
    };
    let options = EvalOptions {
        tau: config.tau,
        ..EvalOptions::default()
    };
    let metrics = score(&dataset, &reports, options);
    let label = label.unwrap_or(source);
    print!("{}", render_table(&label, &metrics));
    write_summary(
        config,
        "evaluate",
        json!({"dataset": dataset_path, "predictions": predictions}),
        outputs,
        json!({"label": label, "metrics": metrics}),
    )?;
    Ok(())
}

struct Scenario {
    name: String,
    task: &'static str,
    agent: ScriptedAgentSpec,
    labeled: LabeledTrajectory,
}

fn scenarios(args: &ScenarioArgs, on_rejection: OnRejection) -> Result<Vec<Scenario>, CliError> {
    let faucet_loop = || -> Result<Scenario, CliError> {
        Ok(Scenario {
            name: "faucet-loop".into(),
            task: FAUCET_LOOP_TASK,
            agent: ScriptedAgentSpec::for_task(FAUCET_LOOP_TASK)
                .map_err(|e| CliError::domain("Env", e))?
                .with_injection(faucet_loop_spec(), on_rejection),
            labeled: load_faucet_loop().map_err(|e| CliError::domain("Parse", e))?,
        })
    };
    let suite = || {
        monitor_suite(on_rejection).into_iter().map(|s| Scenario {
            name: s.name,
            task: s.task,
            agent: s.agent,
            labeled: s.labeled,
        })
    };
    if args.all {
        return Ok(std::iter::once(faucet_loop()?).chain(suite()).collect());
    }
    if args.scenario == "faucet-loop" {
        return Ok(vec![faucet_loop()?]);
    }
    suite()
        .find(|s| s.name == args.scenario)
        .map(|s| vec![s])
        .ok_or_else(|| CliError::Usage(format!("unknown scenario `{}`", args.scenario)))
}

fn monitor_config(config: &CliConfig) -> MonitorConfig {
    MonitorConfig {
        check_interval: config.interval,
        retry_budget: config.retry_budget,
        max_steps: config.max_steps,
        tau: config.tau,
    }
}

fn agent(s: &Scenario) -> Result<ScriptedAgent, CliError> {
    ScriptedAgent::new(&s.agent).map_err(|e| CliError::domain("Agent", e))
}

fn env(s: &Scenario) -> Result<ScriptEnv, CliError> {
    ScriptEnv::new(s.task).map_err(|e| CliError::domain("Env", e))
}

fn outcome_summary(o: &RunOutcome) -> Value {
    json!({
        "status": o.status,
        "env_steps_executed": o.env_steps_executed,
        "rollbacks": o.rollbacks.iter().map(|r| [r.detected_at_step, r.rolled_back_to]).collect::<Vec<_>>(),
        "steps_saved_vs_restart": o.steps_saved_vs_restart,
        "final_length": o.final_trajectory.len(),
    })
}

pub fn monitor_run(config: &CliConfig, args: &ScenarioArgs) -> Result<(), CliError> {
    let mc = monitor_config(config);
    let mut report = String::new();
    let mut results = Vec::new();
    let mut completed = 0;
    for s in scenarios(args, config.on_rejection.into())? {
        let v = verifier(config, std::slice::from_ref(&s.labeled))?;
        let outcome = run_with_monitor(&mut agent(&s)?, &mut env(&s)?, v.as_ref(), &mc)
            .map_err(|e| CliError::domain("Monitor", e))?;
        completed += usize::from(outcome.status == RunStatus::Completed);
        report.push_str(&json!({"event": "scenario", "name": s.name}).to_string());
        report.push('\n');
        report.push_str(&outcome.to_report_jsonl());
        let mut line = outcome_summary(&outcome);
        line["scenario"] = json!(s.name);
        results.push(line);
    }
    let path = config.out.join("monitor-run.report.jsonl");
    std::fs::write(&path, report).map_err(|e| io_error(&path, e))?;
    println!("{completed} of {} runs completed", results.len());
    write_summary(
        config,
        "monitor-run",
        to_value(args),
        BTreeMap::from([("report", path)]),
        json!({"monitor": mc, "completed": completed, "runs": results}),
    )?;
    Ok(())
}

pub fn compare_restart(config: &CliConfig, args: &ScenarioArgs) -> Result<(), CliError> {
    let mc = monitor_config(config);
    let mut results = Vec::new();
    let mut extra_total = 0;
    for s in scenarios(args, config.on_rejection.into())? {
        let v = verifier(config, std::slice::from_ref(&s.labeled))?;
        agent(&s)?;
        env(&s)?;
        let cmp = compare_with_restart(
            || agent(&s).expect("checked above"),
            || env(&s).expect("checked above"),
            v.as_ref(),
            &mc,
        )
        .map_err(|e| CliError::domain("Monitor", e))?;
        extra_total += cmp.extra_baseline_steps();
        println!(
            "{}: monitored {} steps, restart baseline {} steps ({:+})",
            s.name,
            cmp.monitored.env_steps_executed,
            cmp.restart_baseline.env_steps_executed,
            cmp.extra_baseline_steps()
        );
        results.push(json!({
            "scenario": s.name,
            "monitored": outcome_summary(&cmp.monitored),
            "restart_baseline": outcome_summary(&cmp.restart_baseline),
            "extra_baseline_steps": cmp.extra_baseline_steps(),
        }));
    }
    write_summary(
        config,
        "compare-restart",
        to_value(args),
        BTreeMap::new(),
        json!({"monitor": mc, "extra_baseline_steps_total": extra_total, "runs": results}),
    )?;
    Ok(())
}

pub fn review_serve(
    config: &CliConfig,
    dataset_path: &Path,
    addr: Option<String>,
    log: Option<PathBuf>,
) -> Result<(), CliError> {
    let token_var = &config.review.token_env_var;
    let token = std::env::var(token_var)
        .ok()
        .filter(|t| !t.is_empty())
        .ok_or_else(|| CliError::Usage(format!("set {token_var} to the shared access token")))?;
    let dataset = load_dataset(dataset_path)?;
    let log = log
        .or_else(|| config.review.log.clone())
        .unwrap_or_else(|| config.out.join("verdicts.jsonl"));
    let store = ReviewStore::open(&log, dataset).map_err(|e| CliError::domain(e.code(), e))?;
    let addr = addr.unwrap_or_else(|| config.review.addr.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::domain("Io", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot listen on {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::domain("Io", e))?;
        write_summary(
            config,
            "review-serve",
            json!({"dataset": dataset_path, "addr": addr}),
            BTreeMap::from([("log", log.clone())]),
            json!({"listening": bound.to_string(), "dataset_digest": store.dataset_digest()}),
        )?;
        println!("listening on {bound}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, router(store, token), shutdown)
            .await
            .map_err(|e| CliError::domain("Io", e))
    })
}

pub fn report(config: &CliConfig, summary: &Path, label: Option<String>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(summary).map_err(|e| io_error(summary, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::domain("Parse", format!("{}: {e}", summary.display())))?;
    let (metrics, stored_label) = match value.pointer("/result/metrics") {
        Some(m) => (m.clone(), value.pointer("/result/label").and_then(Value::as_str).map(str::to_string)),
        None => (value, None),
    };
    let metrics: MetricsReport = serde_json::from_value(metrics)
        .map_err(|e| CliError::domain("Parse", format!("{} holds no metrics report: {e}", summary.display())))?;
    let label = label.or(stored_label).unwrap_or_else(|| "verifier".into());
    let table = format!("{}\n{}", render_table(&label, &metrics), render_domain_table(&metrics));
    print!("{table}");
    let path = config.out.join("report.md");
    std::fs::write(&path, &table).map_err(|e| io_error(&path, e))?;
    write_summary(
        config,
        "report",
        json!({"summary": summary, "label": label}),
        BTreeMap::from([("table", path)]),
        json!({"label": label, "precision": metrics.precision, "recall": metrics.recall, "macro_f1": metrics.macro_f1, "jem": metrics.jem}),
    )?;
    Ok(())
}
