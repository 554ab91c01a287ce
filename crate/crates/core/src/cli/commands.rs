use std::path::PathBuf;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{parse_list, parse_range, parse_usize_range, sha256_file, write_manifest, RunConfig};
use super::Failure;
use crate::construction::{
    build_construction, doubled_layernorm_variant, eps_sweep, exhaustive_sequences, random_sequences, run_suite_on,
    ConstructionConfig, ConstructionDecoder, EpsSweepRow,
};
use crate::datagen::{
    encode_all, gen_dataset, gen_fixed_length_set, gen_rep_test_set, read_dataset, sorted, write_dataset, Dataset,
    DatasetHeader, EncodedExample, GenConfig, LengthSpec, RawExample, RepTestConfig, Task, TaskFamily, TokenTable,
    DELIM_ID,
};
use crate::evaluator::{evaluate_increment, evaluate_lengths, parse_suites, EvalReport, Suite};
use crate::model::{Model, PositionalEmbeddings, SequenceModel, SoftmaxMode};
use crate::numerics::{Activation, Real};
use crate::probe::{
    emit_projection_report, identity_successor_accuracy, min_finding_accuracy, orthogonality_report, project_trace,
    span_rank, BasisKind, OrthogonalityReport, ProbeTarget, Stage,
};
use crate::trainer::{
    append_metrics, check_dataset, checkpoint_precision, desk_model_config, load_checkpoint, save_checkpoint,
    TrainConfig, Trainer,
};

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn parse_enum<T: DeserializeOwned>(s: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| usage(format!("unknown {what} `{s}`")))
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct GenArgs {
    /// sort, successor, count, fill, increment or carry.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Context length the examples are padded to; defaults to the longest.
    #[arg(long)]
    pub context: Option<usize>,
    /// Inclusive range of sorting numbers, as LO-HI.
    #[arg(long)]
    pub values: Option<String>,
    /// Lengths sharing the head mass, as LO-HI.
    #[arg(long)]
    pub head_lengths: Option<String>,
    #[arg(long)]
    pub tail_lengths: Option<String>,
    #[arg(long)]
    pub head_mass: Option<f64>,
    #[arg(long)]
    pub repetition_prob: Option<f64>,
    #[arg(long)]
    pub nines_prob: Option<f64>,
    /// A `rep(i,r)` test set instead of the training mixture.
    #[arg(long)]
    pub rep: Option<String>,
    /// A single-length test set.
    #[arg(long)]
    pub fixed_length: Option<usize>,
    /// Dataset file name inside the output directory.
    #[arg(long)]
    pub output: Option<String>,
}

pub fn gen(run: &RunConfig, a: GenArgs) -> Result<(), Failure> {
    let task: Task = a.task.as_deref().ok_or_else(|| usage("--task is required"))?.parse().map_err(usage)?;
    let count = a.count.unwrap_or(10_000);
    let mut cfg = GenConfig::for_task(task, run.seed, count);
    if let Some(v) = &a.values {
        cfg.values = parse_range(v)?;
    }
    if let Some(h) = &a.head_lengths {
        cfg.lengths.head = parse_usize_range(h)?;
    }
    if let Some(t) = &a.tail_lengths {
        cfg.lengths.tail = parse_usize_range(t)?;
    }
    cfg.lengths.head_mass = a.head_mass.unwrap_or(cfg.lengths.head_mass);
    cfg.repetition_prob = a.repetition_prob.unwrap_or(cfg.repetition_prob);
    cfg.nines_prob = a.nines_prob.unwrap_or(cfg.nines_prob);
    cfg.validate().map_err(usage)?;

    let mut rep = None;
    let raws: Vec<RawExample> = match (&a.rep, a.fixed_length) {
        (Some(_), Some(_)) => return Err(usage("--rep and --fixed-length are exclusive")),
        (Some(tag), None) => {
            let Ok(Suite::Rep { i, r }) = tag.parse::<Suite>() else {
                return Err(usage(format!("`{tag}` is not a rep(i,r) tag")));
            };
            if task != Task::Sort {
                return Err(usage("rep(i,r) sets are sorting sets"));
            }
            let r = RepTestConfig { i, r, count };
            rep = Some(r);
            gen_rep_test_set(&r, cfg.values, run.seed).map_err(usage)?
        }
        (None, Some(len)) => {
            cfg.lengths = LengthSpec { head: (len, len), tail: (len, len), head_mass: 1.0 };
            gen_fixed_length_set(task, len, count, cfg.values, run.seed).map_err(usage)?
        }
        (None, None) => gen_dataset(task, &cfg)?,
    };
    let longest = raws.iter().map(|r| r.sequence().len() - 1).max().unwrap_or(1);
    let context = a.context.unwrap_or(longest);
    let table = TokenTable::for_family(task.family());
    let examples = encode_all(&raws, &table, context).map_err(usage)?;
    let mut header = DatasetHeader::new(task, &cfg, context, examples.len());
    header.rep = rep;
    let path = run.out.join(a.output.clone().unwrap_or_else(|| format!("{}.jsonl", task.name())));
    write_dataset(&path, &header, &examples)?;
    write_manifest(run, &serde_json::json!({ "args": a, "generator": cfg, "context": context }), &[path.clone()])?;
    println!("wrote {} examples to {}", examples.len(), path.display());
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Main-task dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Auxiliary task trained on alternate steps (successor, count, fill,
    /// carry).
    #[arg(long)]
    pub hint: Option<String>,
    /// Auxiliary dataset; generated alongside the main set when absent.
    #[arg(long)]
    pub hint_data: Option<PathBuf>,
    /// standard or tempered.
    #[arg(long)]
    pub softmax: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Stop after this many updates; the schedule still spans `--steps`.
    #[arg(long)]
    pub until: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_mlp: Option<usize>,
    /// gelu or relu.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub context: Option<usize>,
    /// Continue from a checkpoint with its own configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

fn load_aux(a: &TrainArgs, main: &Dataset) -> Result<Option<Dataset>, Failure> {
    let Some(hint) = &a.hint else {
        return Ok(None);
    };
    let task: Task = hint.parse().map_err(usage)?;
    if !task.is_hint() || task.family() != main.header.task.family() {
        return Err(usage(format!("`{task}` is not a hint task for `{}`", main.header.task)));
    }
    let data = match &a.hint_data {
        Some(p) => read_dataset(p)?,
        None => {
            let g = GenConfig { seed: main.header.generator.seed.wrapping_add(1), ..main.header.generator.clone() };
            let raws = gen_dataset(task, &g)?;
            let longest = raws.iter().map(|r| r.sequence().len() - 1).max().unwrap_or(1);
            let table = main.header.token_table();
            let examples = encode_all(&raws, &table, longest)?;
            Dataset { header: DatasetHeader::new(task, &g, longest, examples.len()), examples }
        }
    };
    if data.header.task != task {
        return Err(usage(format!("hint dataset holds `{}`, expected `{task}`", data.header.task)));
    }
    Ok(Some(data))
}

fn train_as<R: Real>(
    run: &RunConfig,
    a: &TrainArgs,
    main: &Dataset,
    aux: Option<&Dataset>,
) -> Result<(Vec<PathBuf>, serde_json::Value), Failure> {
    let ckpt_path = run.out.join("checkpoint.lgck");
    let metrics_path = run.out.join("metrics.csv");
    let mut trainer = match &a.resume {
        Some(p) => Trainer::<R>::from_checkpoint(load_checkpoint(p)?)?,
        None => {
            let mut mc = desk_model_config(main.header.token_table().vocab_size(), SoftmaxMode::Standard);
            if let Some(s) = &a.softmax {
                mc.softmax_mode = parse_enum(s, "softmax mode")?;
            }
            if let Some(s) = &a.activation {
                mc.activation = parse_enum::<Activation>(s, "activation")?;
            }
            mc.depth = a.depth.unwrap_or(mc.depth);
            mc.d = a.d.unwrap_or(mc.d);
            mc.heads = a.heads.unwrap_or(mc.heads);
            mc.d_mlp = a.d_mlp.unwrap_or(mc.d_mlp);
            mc.context_length = a.context.unwrap_or(mc.context_length.max(main.header.context_length));
            mc.positional_embeddings = PositionalEmbeddings::None;
            mc.validate().map_err(usage)?;
            let steps = a.steps.unwrap_or(TrainConfig::DESK_STEPS);
            let mut tc = TrainConfig::desk(run.seed, steps);
            tc.base_lr = a.lr.unwrap_or(tc.base_lr);
            tc.warmup_steps = a.warmup.unwrap_or(tc.warmup_steps);
            tc.batch_size = a.batch.unwrap_or(tc.batch_size);
            tc.clip = a.clip.or(tc.clip);
            tc.validate().map_err(usage)?;
            if metrics_path.exists() {
                std::fs::remove_file(&metrics_path)?;
            }
            Trainer::new(Model::<R>::init(mc, run.seed)?, tc)?
        }
    };
    let main_ex = check_dataset(main, &trainer.model)?;
    let aux_ex = aux.map(|d| check_dataset(d, &trainer.model)).transpose()?;
    let until = a.until.unwrap_or(trainer.config.total_steps);
    let mut pending = Vec::new();
    trainer.run(main_ex, aux_ex, until, run.deterministic, |t, row| {
        pending.push(row.clone());
        if pending.len() == 1000 || t.step == until.min(t.config.total_steps) {
            append_metrics(&metrics_path, &pending)?;
            let last = pending.last().expect("non-empty");
            eprintln!("step {} {} loss {:.4} lr {:.2e}", last.step, last.head, last.loss, last.lr);
            pending.clear();
        }
        Ok(())
    })?;
    if !metrics_path.exists() {
        append_metrics(&metrics_path, &[])?;
    }
    save_checkpoint(&ckpt_path, &trainer.checkpoint())?;
    println!("step {} checkpoint {}", trainer.step, ckpt_path.display());
    let resolved = serde_json::json!({
        "args": a,
        "model": trainer.model.config,
        "train": trainer.config,
        "main_task": main.header.task,
        "aux_task": aux.map(|d| d.header.task),
        "until": until,
    });
    Ok((vec![ckpt_path, metrics_path], resolved))
}

pub fn train(run: &RunConfig, a: TrainArgs) -> Result<(), Failure> {
    let data = a.data.as_ref().ok_or_else(|| usage("--data is required"))?;
    let main = read_dataset(data)?;
    let aux = load_aux(&a, &main)?;
    let precision = match &a.resume {
        Some(p) => checkpoint_precision(p)?,
        None => run.precision.clone(),
    };
    let (artifacts, resolved) = match precision.as_str() {
        "f32" => train_as::<f32>(run, &a, &main, aux.as_ref())?,
        _ => train_as::<f64>(run, &a, &main, aux.as_ref())?,
    };
    write_manifest(run, &resolved, &artifacts)?;
    Ok(())
}

/// A decoder that can also be probed.
trait Target: SequenceModel + ProbeTarget {}
impl<T: SequenceModel + ProbeTarget> Target for T {}

fn load_target(checkpoint: &Option<PathBuf>, construction: Option<usize>) -> Result<(Box<dyn Target>, String), Failure> {
    match (checkpoint, construction) {
        (Some(p), None) => {
            let id = format!("checkpoint:{}", &sha256_file(p)?[..16]);
            let model: Box<dyn Target> = match checkpoint_precision(p)?.as_str() {
                "f32" => Box::new(load_checkpoint::<f32>(p)?.model),
                _ => Box::new(load_checkpoint::<f64>(p)?.model),
            };
            Ok((model, id))
        }
        (None, Some(q)) => Ok((Box::new(ConstructionDecoder::new(q).map_err(usage)?), format!("construction(q={q})"))),
        _ => Err(usage("exactly one of --checkpoint and --construction is required")),
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the exact construction over numbers 1..=Q instead.
    #[arg(long)]
    pub construction: Option<usize>,
    /// Comma-separated lengths and rep(i,r) tags.
    #[arg(long)]
    pub lengths: Option<String>,
    /// Examples per suite.
    #[arg(long)]
    pub count: Option<usize>,
    /// Sorting numbers as LO-HI; defaults to 1-Q for the construction and
    /// 1-100 otherwise.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long)]
    pub output: Option<String>,
}

pub fn eval(run: &RunConfig, a: EvalArgs) -> Result<(), Failure> {
    let (model, id) = load_target(&a.checkpoint, a.construction)?;
    let lengths = a.lengths.as_deref().unwrap_or("10,12");
    let count = a.count.unwrap_or(1000);
    let report: EvalReport = if model.vocab_size() == TokenTable::INCREMENT.vocab_size() {
        evaluate_increment(model.as_ref(), &id, &parse_list(lengths)?, count, run.seed)?
    } else {
        let suites = parse_suites(lengths).map_err(usage)?;
        let values = match (&a.values, a.construction) {
            (Some(v), _) => parse_range(v)?,
            (None, Some(q)) => (1, q as u32),
            (None, None) => (1, 100),
        };
        evaluate_lengths(model.as_ref(), &id, &suites, count, values, run.seed)?
    };
    let path = run.out.join(a.output.clone().unwrap_or_else(|| "eval.csv".into()));
    report.write_csv(&path)?;
    print!("{}", report.to_csv());
    write_manifest(run, &a, &[path])?;
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub construction: Option<usize>,
    /// Sorting dataset; generated from --lengths when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lengths: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub values: Option<String>,
    /// Dataset index of the example whose profiles are written.
    #[arg(long)]
    pub example: Option<usize>,
    /// Comma-separated zero-based depths; all by default.
    #[arg(long)]
    pub depths: Option<String>,
    #[arg(long)]
    pub stages: Option<String>,
    #[arg(long)]
    pub bases: Option<String>,
    /// Depth probed by the min-finding metric.
    #[arg(long)]
    pub min_depth: Option<usize>,
    /// Depth probed by the Identity+Successor metric.
    #[arg(long)]
    pub successor_depth: Option<usize>,
    /// Stage probed by both metrics.
    #[arg(long)]
    pub metric_stage: Option<String>,
    /// Also write one SVG chart per profile.
    #[arg(long)]
    #[serde(default)]
    pub svg: bool,
}

#[derive(Serialize)]
struct ProbeSummary {
    model: String,
    examples: usize,
    min_depth: usize,
    successor_depth: usize,
    stage: &'static str,
    min_finding_accuracy: f64,
    identity_successor_accuracy: f64,
    encoder_orthogonality: Option<Orth>,
    decoder_orthogonality: Option<Orth>,
    span_rank: usize,
}

#[derive(Serialize)]
struct Orth {
    max_abs_cosine: f64,
    min_norm: f64,
    max_norm: f64,
    length_spread: f64,
}

impl From<OrthogonalityReport> for Orth {
    fn from(r: OrthogonalityReport) -> Self {
        Orth { max_abs_cosine: r.max_abs_cosine, min_norm: r.min_norm, max_norm: r.max_norm, length_spread: r.length_spread }
    }
}

fn probe_data(run: &RunConfig, a: &ProbeArgs) -> Result<Vec<EncodedExample>, Failure> {
    if let Some(p) = &a.data {
        let d = read_dataset(p)?;
        if d.header.task.family() != TaskFamily::Sorting {
            return Err(usage("probing needs a sorting dataset"));
        }
        return Ok(d.examples.into_iter().filter(|e| e.task == Task::Sort).collect());
    }
    let values = match (&a.values, a.construction) {
        (Some(v), _) => parse_range(v)?,
        (None, Some(q)) => (1, q as u32),
        (None, None) => (1, 100),
    };
    let mut out = Vec::new();
    for n in parse_list::<usize>(a.lengths.as_deref().unwrap_or("5"))? {
        let seed = Suite::Length(n).seed(run.seed);
        let raws = gen_fixed_length_set(Task::Sort, n, a.count.unwrap_or(200), values, seed).map_err(usage)?;
        out.extend(encode_all(&raws, &TokenTable::SORTING, 2 * n)?);
    }
    Ok(out)
}

fn nonzero(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    vs.iter().filter(|v| v.iter().any(|&x| x != 0.0)).cloned().collect()
}

pub fn probe(run: &RunConfig, a: ProbeArgs) -> Result<(), Failure> {
    let (target, id) = load_target(&a.checkpoint, a.construction)?;
    if target.vocab_size() != TokenTable::SORTING.vocab_size() {
        return Err(usage("probing needs a sorting model"));
    }
    let data = probe_data(run, &a)?;
    let k = a.example.unwrap_or(0);
    let ex = data.get(k).ok_or_else(|| usage(format!("example {k} of {}", data.len())))?;
    let input = &ex.tokens[..ex.n_input];
    let mut tokens = input.to_vec();
    tokens.push(DELIM_ID);
    tokens.extend_from_slice(&sorted(input)[..input.len() - 1]);
    let trace = target.trace(&tokens, input.len())?;
    let bases = target.bases()?;

    let depths: Vec<usize> = match &a.depths {
        Some(s) => parse_list(s)?,
        None => (0..trace.depth()).collect(),
    };
    let stages: Vec<Stage> = parse_list(a.stages.as_deref().unwrap_or("pre,post"))?;
    let kinds: Vec<BasisKind> = parse_list(a.bases.as_deref().unwrap_or("encoder,decoder"))?;
    let mut profiles = Vec::new();
    for position in 0..tokens.len() {
        for &depth in &depths {
            for &stage in &stages {
                for &basis in &kinds {
                    profiles.push(project_trace(&trace, &bases, position, depth, stage, basis).map_err(usage)?);
                }
            }
        }
    }
    let csv = run.out.join("projections.csv");
    let svg_dir = run.out.join("svg");
    let mut artifacts = emit_projection_report(&profiles, &csv, a.svg.then_some(svg_dir.as_path()))?;

    let stage: Stage = a.metric_stage.as_deref().unwrap_or("pre").parse().map_err(usage)?;
    let (min_depth, successor_depth) = (a.min_depth.unwrap_or(0), a.successor_depth.unwrap_or(1));
    let summary = ProbeSummary {
        model: id,
        examples: data.len(),
        min_depth,
        successor_depth,
        stage: stage.name(),
        min_finding_accuracy: min_finding_accuracy(target.as_ref(), &data, min_depth, stage)?,
        identity_successor_accuracy: identity_successor_accuracy(target.as_ref(), &data, successor_depth, stage)?,
        encoder_orthogonality: orthogonality_report(&nonzero(&bases.encoder)).ok().map(Orth::from),
        decoder_orthogonality: orthogonality_report(&nonzero(&bases.decoder)).ok().map(Orth::from),
        span_rank: span_rank(&bases.encoder.iter().chain(&bases.decoder).cloned().collect::<Vec<_>>(), 1e-9),
    };
    let path = run.out.join("probe_metrics.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)? + "\n")?;
    println!(
        "min_finding_accuracy {:.6}\nidentity_successor_accuracy {:.6}",
        summary.min_finding_accuracy, summary.identity_successor_accuracy
    );
    artifacts.push(path);
    write_manifest(run, &a, &artifacts)?;
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Alphabet size.
    #[arg(long)]
    pub q: Option<usize>,
    /// Check every sequence of lengths 2..=N.
    #[arg(long)]
    pub exhaustive_upto: Option<usize>,
    /// Lengths for random sequences.
    #[arg(long)]
    pub lengths: Option<String>,
    /// Random sequences per length.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Also run the stage checks.
    #[arg(long)]
    #[serde(default)]
    pub stages: bool,
    /// Also compare the doubled layer-norm variant.
    #[arg(long)]
    #[serde(default)]
    pub doubled: bool,
    /// Report failures under ε = 1/4 and ε = 1/(4(n+1)) per random length.
    #[arg(long)]
    #[serde(default)]
    pub eps_sweep: bool,
}

#[derive(Serialize)]
struct SuiteRow {
    kind: &'static str,
    n: usize,
    total: usize,
    sorted_failures: usize,
    stage_failures: usize,
    doubled_mismatches: Option<usize>,
}

#[derive(Serialize)]
struct VerifyReport {
    q: usize,
    suites: Vec<SuiteRow>,
    eps_sweep: Vec<(usize, EpsSweepRow)>,
    pass: bool,
}

fn check_suite(q: usize, n: usize, kind: &'static str, seqs: &[Vec<u32>], a: &VerifyArgs) -> Result<SuiteRow, Failure> {
    let model = build_construction(ConstructionConfig::new(q, n)).map_err(usage)?;
    let base = run_suite_on(&model, seqs, a.stages)?;
    let doubled_mismatches = if a.doubled {
        let dm = doubled_layernorm_variant(&model);
        let other = run_suite_on(&dm, seqs, false)?;
        Some(base.iter().zip(&other).filter(|(x, y)| x.output != y.output || !y.sorted_ok).count())
    } else {
        None
    };
    Ok(SuiteRow {
        kind,
        n,
        total: seqs.len(),
        sorted_failures: base.iter().filter(|o| !o.sorted_ok).count(),
        stage_failures: base.iter().filter(|o| o.stages.as_ref().is_some_and(|s| !s.pass)).count(),
        doubled_mismatches,
    })
}

pub fn verify(run: &RunConfig, a: VerifyArgs) -> Result<(), Failure> {
    let q = a.q.unwrap_or(10);
    let samples = a.samples.unwrap_or(1000);
    let mut suites = Vec::new();
    if let Some(upto) = a.exhaustive_upto {
        for n in 2..=upto {
            suites.push(check_suite(q, n, "exhaustive", &exhaustive_sequences(q, n), &a)?);
        }
    }
    let lengths: Vec<usize> = parse_list(a.lengths.as_deref().unwrap_or(""))?;
    let mut sweep = Vec::new();
    for &n in &lengths {
        let seqs = random_sequences(q, n, samples, run.seed.wrapping_add(n as u64));
        suites.push(check_suite(q, n, "random", &seqs, &a)?);
        if a.eps_sweep {
            sweep.extend(eps_sweep(q, n, &seqs)?.into_iter().map(|r| (n, r)));
        }
    }
    if suites.is_empty() {
        return Err(usage("nothing to verify: give --exhaustive-upto or --lengths"));
    }
    let pass = suites
        .iter()
        .all(|s| s.sorted_failures == 0 && s.stage_failures == 0 && s.doubled_mismatches.unwrap_or(0) == 0);
    for s in &suites {
        println!(
            "{} n={} total={} sorted_failures={} stage_failures={}{}",
            s.kind,
            s.n,
            s.total,
            s.sorted_failures,
            s.stage_failures,
            s.doubled_mismatches.map(|m| format!(" doubled_mismatches={m}")).unwrap_or_default()
        );
    }
    for (n, r) in &sweep {
        println!("eps n={n} eps={:.6} failures={}/{}", r.eps, r.failures, r.total);
    }
    let report = VerifyReport { q, suites, eps_sweep: sweep, pass };
    let path = run.out.join("verify.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n")?;
    write_manifest(run, &a, &[path])?;
    if pass {
        println!("PASS");
        Ok(())
    } else {
        Err(Failure::Verification("construction disagrees with the oracle".into()))
    }
}
