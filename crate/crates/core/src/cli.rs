//! Command-line front end: `gen-data`, `train`, `eval`, `generate`,
//! `speculate` and `diagnose`.
//!
//! Exit status is 0 on success, 2 on configuration errors and 1 on any
//! other failure. Progress and errors go to standard error; results go to
//! files under the output directory and to standard output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{RunConfig, Task};
use crate::datagen::{
    config_hash, poly_vocab, render, write_records, write_vocab, ByteCorpus, Manifest, PolySample,
    BYTE_EOS,
};
use crate::decoding::{bench_csv, benchmark_decoding, greedy_generate};
use crate::diagnostics as diag;
use crate::error::{MtpError, Result};
use crate::eval;
use crate::model::MultiTokenModel;
use crate::rng;
use crate::training::{BatchSource, MetricsLog, Trainer};

#[derive(Parser, Debug)]
#[command(name = "mtp", about = "Multi-token prediction lab", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write test sets, vocabulary and manifest for the configured task.
    GenData,
    /// Train (or resume with --checkpoint) and write metrics and checkpoints.
    Train,
    /// Score a checkpoint on the task's test data.
    Eval,
    /// Greedy completions of task prompts (or --prompt).
    Generate,
    /// Self-speculative decoding benchmark over --k values.
    Speculate,
    /// Information-identity checks, implicit weights, and head MI.
    Diagnose,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (`run.out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated head counts for decoding, e.g. `1,2,4`.
    #[arg(long, global = true)]
    pub k: Option<String>,
    #[arg(long = "n-future", global = true)]
    pub n_future: Option<usize>,
    #[arg(long = "head-arch", global = true)]
    pub head_arch: Option<String>,
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// `key=value`, repeatable; applied last.
    #[arg(long = "override", global = true)]
    pub overrides: Vec<String>,
    /// Prompt for `generate`: raw text for the bytes task, space-separated
    /// glyphs otherwise.
    #[arg(long, global = true)]
    pub prompt: Option<String>,
}

impl CommonArgs {
    fn flag_pairs(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        if let Some(s) = self.seed {
            pairs.push(("seed".into(), s.to_string()));
        }
        if let Some(o) = &self.out {
            pairs.push(("run.out_dir".into(), o.display().to_string()));
        }
        if let Some(k) = &self.k {
            pairs.push(("decode.k".into(), k.clone()));
        }
        if let Some(n) = self.n_future {
            pairs.push(("model.n_future".into(), n.to_string()));
        }
        if let Some(h) = &self.head_arch {
            pairs.push(("model.head_arch".into(), h.clone()));
        }
        if let Some(s) = self.steps {
            pairs.push(("train.steps".into(), s.to_string()));
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| MtpError::Config(format!("--override '{o}' is not key=value")))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        Ok(pairs)
    }

    /// Defaults, then the config file, then flags and overrides.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut pairs = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => Vec::new(),
        };
        pairs.extend(self.flag_pairs()?);
        RunConfig::from_pairs(pairs)
    }

    /// Checkpoint configuration with flags and overrides on top. Any change
    /// to the model itself is refused.
    fn checkpoint_config(&self, ckpt: &Checkpoint) -> Result<RunConfig> {
        let (base, _) = ckpt.run_config()?;
        let mut pairs = RunConfig::parse_text(&base.canonical())?;
        if let Some(p) = &self.config {
            pairs.extend(RunConfig::load(p)?.into_iter().filter(|(k, _)| !k.starts_with("model.")));
        }
        pairs.extend(self.flag_pairs()?);
        let run = RunConfig::from_pairs(pairs)?;
        if run.model != base.model {
            return Err(MtpError::Config(format!(
                "model settings differ from the checkpoint: {}",
                run.diff(&base)
                    .into_iter()
                    .filter(|d| d.starts_with("model.") || d.starts_with("task") || d.starts_with("seed"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(run)
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging() {
    let level = std::env::var("MTP_LOG").unwrap_or_else(|_| "info".into());
    let _ = env_logger::Builder::new()
        .parse_filters(&level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}

pub fn execute(cli: &Cli) -> Result<()> {
    let a = &cli.common;
    match cli.command {
        Command::GenData => cmd_gen_data(&a.run_config()?),
        Command::Train => cmd_train(a),
        Command::Eval => with_checkpoint(a, cmd_eval),
        Command::Generate => with_checkpoint(a, |m, r| cmd_generate(m, r, a.prompt.as_deref())),
        Command::Speculate => with_checkpoint(a, cmd_speculate),
        Command::Diagnose => {
            let (model, run) = match &a.checkpoint {
                Some(p) => {
                    let ckpt = Checkpoint::load(p)?;
                    let run = a.checkpoint_config(&ckpt)?;
                    (Some(checkpoint::load_model(&ckpt)?.0), run)
                }
                None => (None, a.run_config()?),
            };
            cmd_diagnose(&run, model.as_ref())
        }
    }
}

fn with_checkpoint(a: &CommonArgs, f: impl FnOnce(&MultiTokenModel, &RunConfig) -> Result<()>) -> Result<()> {
    let path = a
        .checkpoint
        .as_ref()
        .ok_or_else(|| MtpError::Config("this command needs --checkpoint PATH".into()))?;
    let ckpt = Checkpoint::load(path)?;
    let run = a.checkpoint_config(&ckpt)?;
    let (model, _) = checkpoint::load_model(&ckpt)?;
    f(&model, &run)
}

fn out_dir(run: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&run.out_dir).map_err(|e| MtpError::io(&run.out_dir, e))?;
    Ok(&run.out_dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MtpError::io(path, e))
}

/// Glyph for each token id of the task vocabulary.
pub fn glyphs(run: &RunConfig) -> Vec<String> {
    match run.task {
        Task::Poly => poly_vocab::GLYPHS.iter().map(|s| s.to_string()).collect(),
        Task::Induction => (0..run.induction.vocab_size()).map(|i| run.induction.glyph(i)).collect(),
        Task::Bytes => (0..crate::datagen::BYTE_VOCAB)
            .map(|i| match i {
                0..=255 => format!("{i:02x}"),
                crate::datagen::BYTE_BOS => "<bos>".into(),
                _ => "<eos>".into(),
            })
            .collect(),
    }
}

fn render_ids(run: &RunConfig, ids: &[usize]) -> String {
    match run.task {
        Task::Poly => render(ids),
        Task::Bytes => String::from_utf8_lossy(&crate::datagen::byte_detokenize(ids).unwrap_or_default()).into_owned(),
        Task::Induction => ids.iter().map(|&i| run.induction.glyph(i)).collect::<Vec<_>>().join(" "),
    }
}

pub fn cmd_gen_data(run: &RunConfig) -> Result<()> {
    let dir = out_dir(run)?;
    let mut counts = Vec::new();
    match run.task {
        Task::Poly => {
            for (m, set) in run.poly.test_sets()? {
                let name = format!("poly_test_m{m}.txt");
                let recs: Vec<Vec<usize>> = set.iter().map(PolySample::tokens).collect();
                write_records(&dir.join(&name), &recs)?;
                counts.push((name, recs.len()));
            }
        }
        Task::Induction => {
            let spec = run.induction.eval_spec()?;
            write_records(&dir.join("induction_eval.txt"), &spec.corpus)?;
            let mut pos = String::from("sequence position prior_mention\n");
            for p in &spec.name_positions {
                let _ = writeln!(pos, "{} {} {}", p.sequence, p.position, u8::from(p.prior_mention));
            }
            write_text(&dir.join("induction_positions.txt"), &pos)?;
            counts.push(("induction_eval.txt".into(), spec.corpus.len()));
            counts.push(("induction_positions.scored".into(), spec.scored().count()));
        }
        Task::Bytes => {
            let corpus = byte_corpus(run)?;
            write_records(&dir.join("bytes.txt"), &[corpus.ids.clone()])?;
            counts.push(("bytes.txt".into(), corpus.ids.len()));
        }
    }
    write_vocab(&dir.join("vocab.txt"), &glyphs(run))?;
    let manifest = Manifest {
        task: run.task.to_string(),
        seed: run.seed,
        config_hash: config_hash(&run.canonical_semantic()),
        counts,
    };
    manifest.write(&dir.join("manifest.txt"))?;
    write_text(&dir.join("config.txt"), &run.canonical_semantic())?;
    log::info!("wrote dataset for task {} to {}", run.task, dir.display());
    Ok(())
}

fn byte_corpus(run: &RunConfig) -> Result<ByteCorpus> {
    let path = run
        .bytes_path
        .as_ref()
        .ok_or_else(|| MtpError::Config("task bytes needs bytes.path".into()))?;
    let text = fs::read(path).map_err(|e| MtpError::io(path, e))?;
    Ok(ByteCorpus::new(&text, run.seed))
}

/// Training data stream of the configured task.
pub fn batch_source(run: &RunConfig) -> Result<Box<dyn BatchSource>> {
    Ok(match run.task {
        Task::Poly => Box::new(run.poly.clone()),
        Task::Induction => Box::new(run.induction.train_source()?),
        Task::Bytes => Box::new(byte_corpus(run)?),
    })
}

/// Fresh trainer for a run configuration.
pub fn build_trainer(run: &RunConfig) -> Result<Trainer> {
    let mut t = Trainer::new(MultiTokenModel::new(run.model.clone())?, run.train.clone())?;
    t.seq_len = run.train_seq_len;
    Ok(t)
}

fn cmd_train(a: &CommonArgs) -> Result<()> {
    let (mut trainer, run) = match &a.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let (trainer, saved) = checkpoint::to_trainer(&ckpt)?;
            let requested = if a.config.is_some() {
                a.run_config()?
            } else {
                let mut pairs = RunConfig::parse_text(&saved.canonical())?;
                pairs.extend(a.flag_pairs()?);
                RunConfig::from_pairs(pairs)?
            };
            let diff = requested.diff(&saved);
            if !diff.is_empty() {
                return Err(MtpError::Config(format!(
                    "configuration differs from checkpoint {}: {}",
                    path.display(),
                    diff.join(", ")
                )));
            }
            log::info!("resuming from step {}", trainer.step);
            (trainer, requested)
        }
        None => (build_trainer(&a.run_config()?)?, a.run_config()?),
    };
    let dir = out_dir(&run)?.to_path_buf();
    let source = batch_source(&run)?;
    let params = trainer.model.count_params()["total"];
    log::info!(
        "training {} params, n_future {}, {} heads, {} steps",
        params,
        run.model.n_future,
        run.model.head_arch,
        run.train.steps
    );
    let started_at = trainer.step;
    let mut log = MetricsLog::default();
    let every = if run.checkpoint_every == 0 { run.train.steps } else { run.checkpoint_every };
    while !trainer.is_done() {
        let until = (trainer.step / every + 1) * every;
        trainer.run_until(source.as_ref(), until, &mut log, run.log_every)?;
        if !trainer.is_done() {
            let p = dir.join(format!("ckpt_step{}.mtpc", trainer.step));
            checkpoint::from_trainer(&trainer, &run).save(&p)?;
            log::info!("saved {}", p.display());
        }
    }
    let metrics = if started_at == 0 {
        "metrics.csv".to_string()
    } else {
        format!("metrics_from_step{started_at}.csv")
    };
    write_text(&dir.join(metrics), &log.to_csv())?;
    let final_path = dir.join("final.mtpc");
    checkpoint::from_trainer(&trainer, &run).save(&final_path)?;
    if let Some(last) = log.rows.last() {
        println!("step={} loss={:.6}", last.step, last.loss.total);
    }
    log::info!("saved {}", final_path.display());
    Ok(())
}

fn cmd_eval(model: &MultiTokenModel, run: &RunConfig) -> Result<()> {
    let dir = out_dir(run)?;
    match run.task {
        Task::Poly => {
            let buckets = eval::poly_accuracy(model, &run.poly.test_sets()?)?;
            let csv = eval::poly_csv(&buckets);
            write_text(&dir.join("eval.csv"), &csv)?;
            print!("{csv}");
            let (ind, ood) = eval::in_and_out_of_domain(&buckets, run.poly.train_m.1);
            log::info!("in-domain accuracy {ind:.4}, out-of-domain accuracy {ood:.4}");
        }
        Task::Induction => {
            let acc = eval::induction_accuracy(model, &run.induction.eval_spec()?)?;
            let csv = format!(
                "scored,correct,accuracy\n{},{},{:.6}\n",
                acc.scored, acc.correct, acc.accuracy
            );
            write_text(&dir.join("eval.csv"), &csv)?;
            print!("{csv}");
        }
        Task::Bytes => {
            let corpus = byte_corpus(run)?;
            let batch = corpus.batch(0, 8, run.train_seq_len)?;
            let report = crate::training::multi_token_loss(model, &batch)?;
            println!("loss={:.6} per_head={:?}", report.total, report.per_head);
        }
    }
    Ok(())
}

/// Prompts drawn from the task's held-out data, and the stop ids to use.
pub fn task_prompts(run: &RunConfig, count: usize) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    match run.task {
        Task::Poly => {
            let sets = run.poly.test_sets()?;
            let mut out = Vec::with_capacity(count);
            let mut i = 0;
            while out.len() < count {
                for (_, set) in &sets {
                    if let Some(s) = set.get(i) {
                        if out.len() < count {
                            out.push(s.prompt());
                        }
                    }
                }
                i += 1;
                if i > run.poly.test_per_m {
                    break;
                }
            }
            Ok((out, vec![poly_vocab::EOS]))
        }
        Task::Induction => {
            let spec = run.induction.eval_spec()?;
            let prompts = spec
                .scored()
                .take(count)
                .map(|p| spec.corpus[p.sequence][..p.position].to_vec())
                .collect();
            Ok((prompts, vec![crate::datagen::InductionConfig::EOS_ID]))
        }
        Task::Bytes => {
            let corpus = byte_corpus(run)?;
            let len = (run.model.context_len / 2).min(corpus.ids.len());
            let mut r = rng::stream(run.seed, &[rng::purpose("prompts")]);
            let prompts = (0..count)
                .map(|_| {
                    use rand::Rng;
                    let start = r.random_range(0..=corpus.ids.len() - len);
                    corpus.ids[start..start + len].to_vec()
                })
                .collect();
            Ok((prompts, vec![BYTE_EOS]))
        }
    }
}

fn budget(run: &RunConfig, prompt_len: usize) -> usize {
    run.decode
        .max_new_tokens
        .min(run.model.context_len + 1 - prompt_len)
}

fn parse_prompt(run: &RunConfig, text: &str) -> Result<Vec<usize>> {
    match run.task {
        Task::Bytes => Ok(crate::datagen::byte_tokenize(text.as_bytes())),
        _ => {
            let g = glyphs(run);
            text.split_whitespace()
                .map(|w| {
                    g.iter()
                        .position(|x| x == w)
                        .ok_or_else(|| MtpError::Config(format!("unknown glyph '{w}' in prompt")))
                })
                .collect()
        }
    }
}

fn cmd_generate(model: &MultiTokenModel, run: &RunConfig, prompt: Option<&str>) -> Result<()> {
    let (prompts, stops) = match prompt {
        Some(p) => (vec![parse_prompt(run, p)?], task_prompts(run, 1).map(|x| x.1).unwrap_or_default()),
        None => task_prompts(run, run.decode.prompts)?,
    };
    for p in prompts {
        if p.len() > run.model.context_len {
            return Err(MtpError::ContextOverflow {
                needed: p.len(),
                context_len: run.model.context_len,
            });
        }
        let g = greedy_generate(model, &p, budget(run, p.len()), &stops)?;
        println!("{} => {}", render_ids(run, &p), render_ids(run, &g.tokens));
    }
    Ok(())
}

fn cmd_speculate(model: &MultiTokenModel, run: &RunConfig) -> Result<()> {
    if let Some(&bad) = run.decode.k.iter().find(|&&k| k > model.n_future()) {
        return Err(MtpError::Config(format!(
            "k = {bad} exceeds the checkpoint's {} heads",
            model.n_future()
        )));
    }
    let (prompts, stops) = task_prompts(run, run.decode.prompts)?;
    let max_len = prompts.iter().map(Vec::len).max().unwrap_or(0);
    let rows = benchmark_decoding(model, &prompts, &run.decode.k, budget(run, max_len), &stops)?;
    let csv = bench_csv(&rows);
    write_text(&out_dir(run)?.join("speculate.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Sweep of the information identities over random distribution pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentitySweep {
    pub pairs: usize,
    pub max_lemma: f64,
    pub max_symmetrized: f64,
    pub max_route_gap: f64,
    pub max_decomposition: f64,
    pub max_self_gap: f64,
    pub negative_example: Option<f64>,
}

pub fn identity_sweep(seed: u64, pairs: usize) -> Result<IdentitySweep> {
    use rand::Rng;
    let mut r = rng::stream(seed, &[rng::purpose("diagnose")]);
    let mut s = IdentitySweep {
        pairs,
        max_lemma: 0.0,
        max_symmetrized: 0.0,
        max_route_gap: 0.0,
        max_decomposition: 0.0,
        max_self_gap: 0.0,
        negative_example: None,
    };
    for _ in 0..pairs {
        let (nx, ny) = (r.random_range(2..=8), r.random_range(2..=8));
        let p = diag::DiscreteJoint::random(&mut r, nx, ny, 0.3);
        let q = diag::DiscreteJoint::random(&mut r, nx, ny, 0.0);
        let pair = diag::DistPair::new(p.clone(), q)?;
        let res = diag::verify_lemma(&pair)?;
        let rel = diag::relative_mutual_information(&pair)?;
        s.max_lemma = s.max_lemma.max(res.lemma);
        s.max_symmetrized = s.max_symmetrized.max(res.symmetrized);
        s.max_route_gap = s.max_route_gap.max(rel.discrepancy());
        s.max_decomposition = s.max_decomposition.max(diag::decomposition_residual(&p));
        let selfp = diag::DistPair::new(p.clone(), p.clone())?;
        let gap = (diag::relative_mutual_information(&selfp)?.value() - diag::mutual_information(&p)).abs();
        s.max_self_gap = s.max_self_gap.max(gap);
        if rel.value() < 0.0 && s.negative_example.is_none() {
            s.negative_example = Some(rel.value());
        }
    }
    Ok(s)
}

fn cmd_diagnose(run: &RunConfig, model: Option<&MultiTokenModel>) -> Result<()> {
    let dir = out_dir(run)?;
    let sweep = identity_sweep(run.seed, 1000)?;
    let mut report = String::new();
    let _ = writeln!(report, "identity sweep over {} random pairs", sweep.pairs);
    let _ = writeln!(report, "  lemma residual max        {:.3e}", sweep.max_lemma);
    let _ = writeln!(report, "  symmetrized residual max  {:.3e}", sweep.max_symmetrized);
    let _ = writeln!(report, "  two-route gap max         {:.3e}", sweep.max_route_gap);
    let _ = writeln!(report, "  decomposition residual    {:.3e}", sweep.max_decomposition);
    let _ = writeln!(report, "  |I_p||p - I_p| max        {:.3e}", sweep.max_self_gap);
    if let Some(v) = sweep.negative_example {
        let _ = writeln!(report, "  negative relative MI seen {v:.6}");
    }
    let mut weights_csv = String::from("n,index,kind,weight,truncated\n");
    for n in 1..=4 {
        let seq = diag::example_sequence(n);
        let w = diag::implicit_weights(&seq)?;
        let (text, csv) = diag::weights_report(&seq, &w);
        let _ = writeln!(report, "implicit weights, n = {n}\n{text}");
        for line in csv.lines().skip(1) {
            let _ = writeln!(weights_csv, "{n},{line}");
        }
    }
    let mut mi_csv = String::from("quantity,value\n");
    if let (Some(model), Task::Poly) = (model, run.task) {
        if model.n_future() >= 2 {
            let samples: Vec<PolySample> = run.poly.test_sets()?.into_iter().flat_map(|(_, s)| s).collect();
            let contexts: Vec<Vec<usize>> = samples.iter().map(PolySample::prompt).collect();
            let pairs: Vec<(usize, usize)> = samples
                .iter()
                .map(|s| (s.answer_tokens[0], s.answer_tokens[1]))
                .collect();
            let q = diag::model_head_joint(model, &contexts)?;
            let p = diag::empirical_joint(&pairs, run.model.vocab_size, 100)?;
            let pair = diag::DistPair::new(p.joint.clone(), q)?;
            let rel = diag::relative_mutual_information(&pair)?;
            let ip = diag::mutual_information(&p.joint);
            let _ = writeln!(
                report,
                "answer-start heads 1/2: I_p = {ip:.6}, I_p||q = {:.6} (support {}{})",
                rel.value(),
                p.support,
                if p.low_support { ", low support" } else { "" }
            );
            let _ = writeln!(mi_csv, "I_p,{ip}\nI_p_q,{}\nsupport,{}", rel.value(), p.support);
        }
    }
    write_text(&dir.join("diagnose.txt"), &report)?;
    write_text(&dir.join("weights.csv"), &weights_csv)?;
    write_text(&dir.join("mi.csv"), &mi_csv)?;
    print!("{report}");
    Ok(())
}
