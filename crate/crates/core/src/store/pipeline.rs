//! Stage orchestration: each stage reads its upstream JSONL, writes its
//! output JSONL plus a manifest entry, and is individually rerunnable —
//! identical inputs and scripts reproduce identical bytes.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    export_sft, file_checksum, read_jsonl, write_atomic, write_jsonl_atomic, Manifest,
    PipelineConfig, SimulatorKind, StageEntry, StoreError,
};
use crate::dsl::render_trace;
use crate::eval::{
    avg_api_calls, err_ecr, forge_refine_case, judge_error_handling, judge_pass, pass_rate,
    run_win_eval, AnswerPair, ErrorJudgement, RefineCase, RefineSource, Scenario,
};
use crate::explore::{build_reflection_dataset, ExploreBackends};
use crate::forge::{
    admit_instance, check_format, find_consecutive_duplicate, run_episode, verify_trace,
    EpisodeLimits, Rejection,
};
use crate::gateway::{BackendHandle, GenParams};
use crate::hub::{
    origin_after_probe, probe_api, refine_doc, ApiRegistry, CallExecutor, SimExecutor, SimMode,
};
use crate::model::{AnswerStatus, Group, Query, Terminal, ToolSpec, Trace, VerifiedInstance};
use crate::querygate::{assess_query, filter_queries, QueryVerdict};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("probe failed for `{api}`: {reason}")]
    Probe { api: String, reason: String },
    #[error("stage failed: {0}")]
    Stage(String),
}

/// The runnable pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Probe,
    VerifyQueries,
    Forge,
    Explore,
    Export,
    EvalPass,
    EvalWin,
    EvalRefine,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Probe => "probe",
            Stage::VerifyQueries => "verify-queries",
            Stage::Forge => "forge",
            Stage::Explore => "explore",
            Stage::Export => "export",
            Stage::EvalPass => "eval-pass",
            Stage::EvalWin => "eval-win",
            Stage::EvalRefine => "eval-refine",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Some(match s {
            "probe" => Stage::Probe,
            "verify-queries" => Stage::VerifyQueries,
            "forge" => Stage::Forge,
            "explore" => Stage::Explore,
            "export" => Stage::Export,
            "eval-pass" => Stage::EvalPass,
            "eval-win" => Stage::EvalWin,
            "eval-refine" => Stage::EvalRefine,
            _ => return None,
        })
    }

    /// All stages in canonical execution order.
    pub const ALL: [Stage; 8] = [
        Stage::Probe,
        Stage::VerifyQueries,
        Stage::Forge,
        Stage::Explore,
        Stage::Export,
        Stage::EvalPass,
        Stage::EvalWin,
        Stage::EvalRefine,
    ];
}

/// Result of running one stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub entry: StageEntry,
    /// True when every output checksum matches the previous manifest entry.
    pub no_op: bool,
}

/// One rejected trajectory with its reason, persisted for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectRecord {
    pub query_id: String,
    pub reason: String,
    pub trace: Trace,
}

struct StageIo<'a> {
    config: &'a PipelineConfig,
    manifest: Manifest,
    entry: StageEntry,
}

impl<'a> StageIo<'a> {
    fn new(config: &'a PipelineConfig) -> Result<StageIo<'a>, StoreError> {
        let manifest = Manifest::load(&config.data_path("manifest.json"))?;
        Ok(StageIo {
            config,
            manifest,
            entry: StageEntry {
                seed: config.seed,
                ..StageEntry::default()
            },
        })
    }

    fn read_input<T: serde::de::DeserializeOwned>(
        &mut self,
        name: &str,
    ) -> Result<Vec<T>, StoreError> {
        let path = self.config.data_path(name);
        if !path.exists() {
            return Err(StoreError::MissingInput(path));
        }
        let checksum = self.manifest.verify_input(&path)?;
        self.entry.inputs.insert(name.to_string(), checksum);
        read_jsonl(&path)
    }

    fn write_output<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<(), StoreError> {
        let path = self.config.data_path(name);
        write_jsonl_atomic(&path, records)?;
        self.entry
            .outputs
            .insert(name.to_string(), file_checksum(&path)?);
        Ok(())
    }

    fn write_json_output<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), StoreError> {
        let path = self.config.data_path(name);
        let mut body = serde_json::to_string_pretty(value).expect("serializable");
        body.push('\n');
        write_atomic(&path, body.as_bytes())?;
        self.entry
            .outputs
            .insert(name.to_string(), file_checksum(&path)?);
        Ok(())
    }

    fn count(&mut self, key: &str, value: u64) {
        self.entry.counts.insert(key.to_string(), value);
    }

    fn backend_id(&mut self, role: &str, backend: &BackendHandle) {
        self.entry
            .backends
            .insert(role.to_string(), backend.id());
    }

    fn finish(mut self, stage: Stage) -> Result<StageOutcome, StoreError> {
        let previous = self.manifest.stages.get(stage.name()).cloned();
        let no_op = previous
            .as_ref()
            .map(|p| p.outputs == self.entry.outputs && p.inputs == self.entry.inputs)
            .unwrap_or(false);
        self.manifest
            .stages
            .insert(stage.name().to_string(), self.entry.clone());
        self.manifest.save(&self.config.data_path("manifest.json"))?;
        Ok(StageOutcome {
            stage: stage.name().to_string(),
            entry: self.entry,
            no_op,
        })
    }
}

fn executor_for(
    config: &PipelineConfig,
    registry: Arc<ApiRegistry>,
    stage: Stage,
) -> Result<Box<dyn CallExecutor>, StoreError> {
    let mode = match config.simulator.kind {
        SimulatorKind::Deterministic => SimMode::Deterministic(config.simulator.seed),
        SimulatorKind::Llm => {
            let backend = config.backend("simulator", stage)?;
            SimMode::LlmBacked(backend)
        }
    };
    Ok(Box::new(SimExecutor::new(registry, mode)))
}

/// Run one pipeline stage against the configured backends and data files.
pub fn run_pipeline(config: &PipelineConfig, stage: Stage) -> Result<StageOutcome, PipelineError> {
    match stage {
        Stage::Probe => run_probe(config),
        Stage::VerifyQueries => run_verify_queries(config),
        Stage::Forge => run_forge(config),
        Stage::Explore => run_explore(config),
        Stage::Export => run_export(config),
        Stage::EvalPass => run_eval_pass(config),
        Stage::EvalWin => run_eval_win(config),
        Stage::EvalRefine => run_eval_refine(config),
    }
}

fn run_probe(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let mut io = StageIo::new(config)?;
    let docs: Vec<serde_json::Value> = io.read_input("apis.jsonl")?;
    let agent = config.backend("agent", Stage::Probe)?;
    io.backend_id("agent", &agent);

    let mut specs = Vec::new();
    for doc in &docs {
        let spec = crate::model::validate_tool_spec(doc).map_err(|e| PipelineError::Stage(
            format!("invalid api document: {e}"),
        ))?;
        specs.push(spec);
    }
    let registry = Arc::new(ApiRegistry::from_specs(specs.clone()));
    let executor = executor_for(config, registry, Stage::Probe)?;

    let mut refined_specs = Vec::new();
    let mut valid = 0u64;
    let mut invalid = 0u64;
    let mut flaky = 0u64;
    let mut refined_count = 0u64;
    for spec in &specs {
        let report = probe_api(spec, agent.as_ref(), executor.as_ref()).map_err(|e| {
            PipelineError::Probe {
                api: spec.name().to_string(),
                reason: e.to_string(),
            }
        })?;
        match &report.classification {
            crate::hub::ProbeClassification::Valid => valid += 1,
            crate::hub::ProbeClassification::Invalid(_) => invalid += 1,
            crate::hub::ProbeClassification::Flaky => flaky += 1,
        }
        let outcome = refine_doc(spec, &report, agent.as_ref()).map_err(|e| {
            PipelineError::Probe {
                api: spec.name().to_string(),
                reason: e.to_string(),
            }
        })?;
        let base = match outcome.refined {
            Some(refined) => {
                refined_count += 1;
                refined
            }
            None => spec.clone(),
        };
        let origin = origin_after_probe(base.origin(), &report.classification);
        refined_specs.push(base.with_origin(origin));
    }

    // The registry file is sorted by name for stable diffs.
    let registry_out = ApiRegistry::from_specs(refined_specs);
    let sorted: Vec<ToolSpec> = registry_out.iter().cloned().collect();
    io.write_output("registry.jsonl", &sorted)?;
    io.count("apis", docs.len() as u64);
    io.count("valid", valid);
    io.count("invalid", invalid);
    io.count("flaky", flaky);
    io.count("refined", refined_count);
    Ok(io.finish(Stage::Probe)?)
}

fn load_registry(io: &mut StageIo<'_>) -> Result<Arc<ApiRegistry>, StoreError> {
    let specs: Vec<ToolSpec> = io.read_input("registry.jsonl")?;
    Ok(Arc::new(ApiRegistry::from_specs(specs)))
}

fn run_verify_queries(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let mut io = StageIo::new(config)?;
    let queries: Vec<Query> = io.read_input("queries.jsonl")?;
    let registry = load_registry(&mut io)?;
    let judge = config.backend("judge", Stage::VerifyQueries)?;
    io.backend_id("judge", &judge);

    let mut verdicts: Vec<QueryVerdict> = Vec::new();
    for query in &queries {
        let tools = registry
            .resolve(&query.tools)
            .map_err(|e| PipelineError::Stage(e.to_string()))?;
        let verdict = assess_query(query, &tools, judge.as_ref())
            .map_err(|e| PipelineError::Stage(e.to_string()))?;
        verdicts.push(verdict);
    }
    let (retained, stats) = filter_queries(&queries, &verdicts, config.quality_threshold)
        .map_err(|e| PipelineError::Stage(e.to_string()))?;

    io.write_output("verdicts.jsonl", &verdicts)?;
    io.write_output("queries_retained.jsonl", &retained)?;
    io.count("total", stats.total as u64);
    io.count("solvable", stats.solvable as u64);
    io.count("retained", stats.retained as u64);
    for (group, counts) in &stats.per_group {
        io.count(&format!("{group}_retained").to_lowercase(), counts.retained as u64);
    }
    Ok(io.finish(Stage::VerifyQueries)?)
}

fn run_forge(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let mut io = StageIo::new(config)?;
    let retained: Vec<Query> = io.read_input("queries_retained.jsonl")?;
    let registry = load_registry(&mut io)?;
    let agent = config.backend("agent", Stage::Forge)?;
    let judge = config.backend("judge", Stage::Forge)?;
    io.backend_id("agent", &agent);
    io.backend_id("judge", &judge);
    let executor = executor_for(config, registry.clone(), Stage::Forge)?;

    let limits = EpisodeLimits {
        max_iterations: config.episode.max_iterations,
        ..EpisodeLimits::default()
    };
    let params = GenParams::agent(config.episode.temperature);

    let mut admitted: Vec<VerifiedInstance> = Vec::new();
    let mut rejects: Vec<RejectRecord> = Vec::new();
    for query in &retained {
        let tools = registry
            .resolve(&query.tools)
            .map_err(|e| PipelineError::Stage(e.to_string()))?;
        let trace = run_episode(query, &tools, agent.as_ref(), executor.as_ref(), &limits, &params)
            .map_err(|e| PipelineError::Stage(e.to_string()))?;

        // Mechanical pre-filters run before any judge spend.
        if !check_format(&trace) {
            rejects.push(RejectRecord {
                query_id: query.id.clone(),
                reason: Rejection::FormatFailed.to_string(),
                trace,
            });
            continue;
        }
        if let Some(dup) = find_consecutive_duplicate(&trace) {
            rejects.push(RejectRecord {
                query_id: query.id.clone(),
                reason: Rejection::DuplicateCall(dup).to_string(),
                trace,
            });
            continue;
        }
        let verdict = verify_trace(query, &trace, judge.as_ref())
            .map_err(|e| PipelineError::Stage(e.to_string()))?;
        match admit_instance(query, &tools, &trace, &verdict) {
            Ok(instance) => admitted.push(instance),
            Err(rejection) => rejects.push(RejectRecord {
                query_id: query.id.clone(),
                reason: rejection.to_string(),
                trace,
            }),
        }
    }

    io.write_output("toolbench_v.jsonl", &admitted)?;
    io.write_output("rejects.jsonl", &rejects)?;
    io.count("episodes", retained.len() as u64);
    io.count("admitted", admitted.len() as u64);
    io.count("rejected", rejects.len() as u64);
    Ok(io.finish(Stage::Forge)?)
}

fn run_explore(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let mut io = StageIo::new(config)?;
    let instances: Vec<VerifiedInstance> = io.read_input("toolbench_v.jsonl")?;
    let registry = load_registry(&mut io)?;
    let agent = config.backend("agent", Stage::Explore)?;
    let judge = config.backend("judge", Stage::Explore)?;
    io.backend_id("agent", &agent);
    io.backend_id("judge", &judge);
    let executor = executor_for(config, registry, Stage::Explore)?;

    let backends = ExploreBackends {
        agent: agent.as_ref(),
        judge: judge.as_ref(),
        reflector: judge.as_ref(),
    };
    let (dataset, report) =
        build_reflection_dataset(&instances, &config.explore, &backends, executor.as_ref())
            .map_err(|e| PipelineError::Stage(e.to_string()))?;

    io.write_output("toolbench_r.jsonl", &dataset)?;
    io.write_json_output("explore_report.json", &report)?;
    io.count("instances", report.instances as u64);
    io.count("points", report.points as u64);
    io.count("branches", report.branches_sampled as u64);
    io.count("failures", report.failures as u64);
    io.count("reflections", report.reflections_kept as u64);
    io.count("dropped", report.dropped.len() as u64);
    Ok(io.finish(Stage::Explore)?)
}

fn run_export(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let mut io = StageIo::new(config)?;
    let verified: Vec<VerifiedInstance> = io.read_input("toolbench_v.jsonl")?;
    let reflections: Vec<crate::model::ReflectionInstance> = io.read_input("toolbench_r.jsonl")?;
    let records = export_sft(&verified, &reflections, config.mix_ratio, config.seed)
        .map_err(|e| PipelineError::Stage(e.to_string()))?;
    let v_count = records
        .iter()
        .filter(|r| matches!(r.source, super::SftSource::V { .. }))
        .count();
    io.write_output("sft.jsonl", &records)?;
    io.count("records", records.len() as u64);
    io.count("v_records", v_count as u64);
    io.count("r_records", (records.len() - v_count) as u64);
    Ok(io.finish(Stage::Export)?)
}

fn merge_results(
    config: &PipelineConfig,
    io: &mut StageIo<'_>,
    section: &str,
    value: serde_json::Value,
) -> Result<(), StoreError> {
    let path = config.data_path("results.json");
    let mut results: serde_json::Value = if path.exists() {
        let bytes = std::fs::read(&path).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_slice(&bytes).unwrap_or_else(|_| serde_json::json!({}))
    } else {
        serde_json::json!({})
    };
    results[section] = value;
    let mut body = serde_json::to_string_pretty(&results).expect("results serialize");
    body.push('\n');
    write_atomic(&path, body.as_bytes())?;
    io.entry
        .outputs
        .insert("results.json".to_string(), file_checksum(&path)?);
    Ok(())
}

fn run_eval_pass(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let mut io = StageIo::new(config)?;
    let instances: Vec<VerifiedInstance> = io.read_input("toolbench_v.jsonl")?;
    if instances.is_empty() {
        return Err(PipelineError::Stage("no instances to evaluate".into()));
    }
    let judge = config.backend("judge", Stage::EvalPass)?;
    io.backend_id("judge", &judge);

    let mut statuses: Vec<AnswerStatus> = Vec::new();
    let mut per_group: BTreeMap<Group, Vec<AnswerStatus>> = BTreeMap::new();
    let mut traces: Vec<Trace> = Vec::new();
    for instance in &instances {
        let final_answer = match instance.trace.terminal() {
            Terminal::FinalAnswer(text) => text.clone(),
            _ => String::new(),
        };
        let judgement = judge_pass(
            &instance.query.text,
            &final_answer,
            &render_trace(&instance.trace),
            judge.as_ref(),
        )
        .map_err(|e| PipelineError::Stage(e.to_string()))?;
        statuses.push(judgement.status);
        per_group
            .entry(instance.query.group)
            .or_default()
            .push(judgement.status);
        traces.push(instance.trace.clone());
    }

    let overall = pass_rate(&statuses).map_err(|e| PipelineError::Stage(e.to_string()))?;
    let avg_calls = avg_api_calls(&traces).map_err(|e| PipelineError::Stage(e.to_string()))?;
    let group_rates: BTreeMap<String, f64> = per_group
        .iter()
        .map(|(g, s)| (g.to_string(), pass_rate(s).unwrap_or(0.0)))
        .collect();

    merge_results(
        config,
        &mut io,
        "pass",
        serde_json::json!({
            "pass_rate": overall,
            "per_group": group_rates,
            "avg_api_calls": avg_calls,
            "cases": statuses.len(),
        }),
    )?;
    io.count("cases", statuses.len() as u64);
    Ok(io.finish(Stage::EvalPass)?)
}

fn run_eval_win(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let mut io = StageIo::new(config)?;
    let pairs: Vec<AnswerPair> = io.read_input("win_pairs.jsonl")?;
    let judge = config.backend("judge", Stage::EvalWin)?;
    io.backend_id("judge", &judge);

    let report = run_win_eval(&pairs, judge.as_ref(), config.eval.swap_fraction, config.eval.seed)
        .map_err(|e| PipelineError::Stage(e.to_string()))?;
    merge_results(
        config,
        &mut io,
        "win",
        serde_json::json!({
            "win_rate": report.win_rate,
            "comparisons": report.comparisons.len(),
            "discarded": report.discarded,
            "audited": report.audited,
            "swap_disagreements": report.swap_disagreements,
        }),
    )?;
    io.count("pairs", pairs.len() as u64);
    io.count("discarded", report.discarded as u64);
    Ok(io.finish(Stage::EvalWin)?)
}

/// A candidate model's handling of one forged case, provided externally.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RefineResponse {
    index: usize,
    after_messages: String,
}

fn run_eval_refine(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let mut io = StageIo::new(config)?;
    let retained: Vec<Query> = io.read_input("queries_retained.jsonl")?;
    let registry = load_registry(&mut io)?;
    let instances: Vec<VerifiedInstance> = io.read_input("toolbench_v.jsonl")?;
    let agent = config.backend("agent", Stage::EvalRefine)?;
    io.backend_id("agent", &agent);
    let executor = executor_for(config, registry.clone(), Stage::EvalRefine)?;

    // (query, tool) pairs in file order, split by post-probe origin.
    let mut live_pairs: Vec<(Query, ToolSpec)> = Vec::new();
    let mut sim_pairs: Vec<(Query, ToolSpec)> = Vec::new();
    for query in &retained {
        for name in &query.tools {
            if let Some(tool) = registry.get(name) {
                match tool.origin() {
                    crate::model::Origin::Live => live_pairs.push((query.clone(), tool.clone())),
                    crate::model::Origin::Simulated => {
                        sim_pairs.push((query.clone(), tool.clone()))
                    }
                }
            }
        }
    }
    // Instances whose traces can host a mid-trace perturbation.
    let injectable: Vec<&VerifiedInstance> = instances
        .iter()
        .filter(|i| i.trace.action_step_indices().iter().any(|&t| t > 0))
        .collect();

    let mut cases: Vec<RefineCase> = Vec::new();
    let mut skipped = 0u64;
    let mut case_seed = config.refine.seed;
    let forge_one = |scenario: Scenario,
                         source: RefineSource<'_>,
                         cases: &mut Vec<RefineCase>,
                         skipped: &mut u64,
                         case_seed: &mut u64| {
        *case_seed = case_seed.wrapping_add(1);
        match forge_refine_case(scenario, &source, *case_seed, agent.as_ref(), executor.as_ref()) {
            Ok(case) => cases.push(case),
            Err(e) => {
                *skipped += 1;
                tracing::warn!(?scenario, error = %e, "case skipped");
            }
        }
    };

    for i in 0..config.refine.i1 {
        if live_pairs.is_empty() {
            skipped += (config.refine.i1 - i) as u64;
            break;
        }
        let (q, t) = &live_pairs[i % live_pairs.len()];
        forge_one(
            Scenario::I1,
            RefineSource::Single { query: q, tool: t },
            &mut cases,
            &mut skipped,
            &mut case_seed,
        );
    }
    for i in 0..config.refine.i2 {
        if sim_pairs.is_empty() {
            skipped += (config.refine.i2 - i) as u64;
            break;
        }
        let (q, t) = &sim_pairs[i % sim_pairs.len()];
        forge_one(
            Scenario::I2,
            RefineSource::Single { query: q, tool: t },
            &mut cases,
            &mut skipped,
            &mut case_seed,
        );
    }
    for i in 0..config.refine.i3 {
        if injectable.is_empty() {
            skipped += (config.refine.i3 - i) as u64;
            break;
        }
        forge_one(
            Scenario::I3,
            RefineSource::Instance(injectable[i % injectable.len()]),
            &mut cases,
            &mut skipped,
            &mut case_seed,
        );
    }

    io.write_output("refine_bench.jsonl", &cases)?;
    for scenario in [Scenario::I1, Scenario::I2, Scenario::I3] {
        let count = cases.iter().filter(|c| c.scenario == scenario).count();
        io.count(&format!("{scenario:?}").to_lowercase(), count as u64);
    }
    io.count("skipped", skipped);

    // When candidate responses exist, judge them into ERR/ECR.
    let responses_path = config.data_path("refine_responses.jsonl");
    if responses_path.exists() {
        let judge = config.backend("judge", Stage::EvalRefine)?;
        io.backend_id("judge", &judge);
        let responses: Vec<RefineResponse> = io.read_input("refine_responses.jsonl")?;
        let mut per_scenario: BTreeMap<String, Vec<ErrorJudgement>> = BTreeMap::new();
        let mut all: Vec<ErrorJudgement> = Vec::new();
        for response in &responses {
            let Some(case) = cases.get(response.index) else {
                continue;
            };
            let initial = format!("Query: {}", case.query.text);
            let wrong = format!(
                "Action: {}\nObservation: {}",
                case.wrong_action,
                crate::model::canonical_json(&case.wrong_observation)
            );
            let judgement =
                judge_error_handling(&initial, &wrong, &response.after_messages, judge.as_ref())
                    .map_err(|e| PipelineError::Stage(e.to_string()))?;
            per_scenario
                .entry(format!("{:?}", case.scenario))
                .or_default()
                .push(judgement);
            all.push(judgement);
        }
        if !all.is_empty() {
            let (err, ecr) = err_ecr(&all).map_err(|e| PipelineError::Stage(e.to_string()))?;
            let per: BTreeMap<String, serde_json::Value> = per_scenario
                .iter()
                .map(|(s, js)| {
                    let (e, c) = err_ecr(js).unwrap_or((0.0, 0.0));
                    (s.clone(), serde_json::json!({"err": e, "ecr": c, "cases": js.len()}))
                })
                .collect();
            merge_results(
                config,
                &mut io,
                "refine",
                serde_json::json!({"err": err, "ecr": ecr, "per_scenario": per, "cases": all.len()}),
            )?;
        }
    }
    Ok(io.finish(Stage::EvalRefine)?)
}
