//! Non-interactive subcommands.

use crate::config::{self, ConfigMap};
use crate::{ConfigArgs, Failure, PartArg, Target};
use anyhow::{anyhow, Context};
use convrec_core::checkpoint::Checkpoint;
use convrec_core::corpus::{
    chronological_split, load_corpus, load_split, sample_eval_users, save_corpus,
    save_split, synthesize_corpus, Corpus, Part, Split,
};
use convrec_core::dialogue::{
    evaluate_dialogue, extract_dialogue_instances, train_dialogue, user_vectors_for_instances,
    DialogueConfig, DialogueModel, DialogueTrainConfig, Vocab,
};
use convrec_core::rec::{
    evaluate_rec, Ablation, MetricRow, ModelConfig, RankingReport, RecError, RecModel, TrainConfig,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
pub struct RecCheckpointConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
pub struct DialCheckpointConfig {
    pub dialogue: DialogueConfig,
    pub train: DialogueTrainConfig,
    /// Hash of the recommendation checkpoint whose user vectors fed
    /// training; evaluation warns when it differs.
    pub rec_checkpoint_hash: String,
}

pub fn resolve_config(args: &ConfigArgs) -> Result<ConfigMap, Failure> {
    let mut map = ConfigMap::default();
    if let Some(path) = &args.config {
        map.merge(&ConfigMap::load(path).map_err(Failure::config)?);
    }
    for assignment in &args.sets {
        map.set(assignment).map_err(Failure::config)?;
    }
    config::check_all_known(&map).map_err(Failure::config)?;
    // the full configuration resolves before any command runs, so a bad
    // value in an unused section is still a configuration error
    config::model_config(&map).map_err(Failure::config)?;
    config::train_config(&map).map_err(Failure::config)?;
    config::dialogue_config(&map, 0, 0).map_err(Failure::config)?;
    config::dialogue_train_config(&map).map_err(Failure::config)?;
    config::gen_config(&map).map_err(Failure::config)?;
    config::decode_config(&map).map_err(Failure::config)?;
    Ok(map)
}

/// Resolves the run directory (flag, else $CONVREC_RUN_ROOT) and writes
/// the resolved config plus a version stamp into it.
pub fn prepare_run_dir(args: &ConfigArgs, command: &str, seed: u64, map: &ConfigMap) -> Result<Option<PathBuf>, Failure> {
    let dir = match &args.run_dir {
        Some(d) => Some(d.clone()),
        None => std::env::var_os("CONVREC_RUN_ROOT")
            .map(|root| PathBuf::from(root).join(format!("{command}-seed{seed}"))),
    };
    if let Some(dir) = &dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create run directory {}", dir.display()))
            .map_err(Failure::data)?;
        let mut resolved = map.render();
        if resolved.is_empty() {
            resolved.push_str("# all defaults\n");
        }
        write_file(&dir.join("config.resolved.ini"), &resolved)?;
        write_file(&dir.join("version.txt"), &format!("convrec {}\nseed {}\n", env!("CARGO_PKG_VERSION"), seed))?;
    }
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::data)
}

fn load_corpus_arg(path: &Path) -> Result<Corpus, Failure> {
    load_corpus(path).map_err(|e| Failure::data(anyhow!(e)))
}

fn load_split_arg(path: &Path) -> Result<Split, Failure> {
    load_split(path).map_err(|e| Failure::data(anyhow!(e)))
}

pub fn load_rec_model(path: &Path, corpus: &Corpus) -> Result<(RecModel, RecCheckpointConfig, Checkpoint), Failure> {
    let ck = Checkpoint::load(path).map_err(|e| Failure::data(anyhow!(e)))?;
    ck.expect_kind("rec").map_err(|e| Failure::data(anyhow!(e)))?;
    if !ck.hash_consistent() {
        eprintln!("warning: checkpoint config hash mismatch in {} (file edited?)", path.display());
    }
    let cfg: RecCheckpointConfig = ck.decode_config().map_err(|e| Failure::data(anyhow!(e)))?;
    let mut model = RecModel::new(corpus, cfg.model.clone(), ck.seed).map_err(|e| Failure::data(anyhow!(e)))?;
    let mut entries = Vec::new();
    model.params.visit_mut(&mut entries);
    ck.apply(&mut entries).map_err(|e| Failure::data(anyhow!(e)))?;
    Ok((model, cfg, ck))
}

pub fn load_dial_model(path: &Path) -> Result<(DialogueModel, DialCheckpointConfig, Checkpoint), Failure> {
    let ck = Checkpoint::load(path).map_err(|e| Failure::data(anyhow!(e)))?;
    ck.expect_kind("dial").map_err(|e| Failure::data(anyhow!(e)))?;
    if !ck.hash_consistent() {
        eprintln!("warning: checkpoint config hash mismatch in {} (file edited?)", path.display());
    }
    let cfg: DialCheckpointConfig = ck.decode_config().map_err(|e| Failure::data(anyhow!(e)))?;
    let mut model =
        DialogueModel::new(cfg.dialogue.clone(), ck.seed).map_err(|e| Failure::data(anyhow!(e)))?;
    let mut entries = Vec::new();
    model.params.visit_mut(&mut entries);
    ck.apply(&mut entries).map_err(|e| Failure::data(anyhow!(e)))?;
    Ok((model, cfg, ck))
}

pub fn cmd_synth(args: ConfigArgs, out: PathBuf, seed: u64) -> Result<(), Failure> {
    let map = resolve_config(&args)?;
    let gen = config::gen_config(&map).map_err(Failure::config)?;
    let run_dir = prepare_run_dir(&args, "synth", seed, &map)?;
    let corpus = synthesize_corpus(&gen, seed).map_err(|e| Failure::config(anyhow!(e)))?;
    save_corpus(&corpus, &out).map_err(|e| Failure::data(anyhow!(e)))?;

    let manifest = serde_json::json!({ "seed": seed, "gen": gen });
    let manifest_path = out.with_extension("manifest.json");
    write_file(&manifest_path, &serde_json::to_string_pretty(&manifest).unwrap())?;
    println!(
        "wrote corpus: {} users, {} entities ({} items), {} words, {} triples -> {}",
        corpus.n_users(),
        corpus.n_entities(),
        corpus.n_items(),
        corpus.n_words(),
        corpus.triples.len(),
        out.display()
    );
    if let Some(dir) = run_dir {
        println!("run artifacts in {}", dir.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_split(
    args: ConfigArgs,
    corpus_path: PathBuf,
    out: PathBuf,
    n_val: usize,
    n_test: usize,
    eval_users: Vec<String>,
    sample_n: usize,
    eval_seed: u64,
) -> Result<(), Failure> {
    let map = resolve_config(&args)?;
    let _ = prepare_run_dir(&args, "split", eval_seed, &map)?;
    let corpus = load_corpus_arg(&corpus_path)?;
    let eval_users = if !eval_users.is_empty() {
        eval_users
    } else if sample_n > 0 {
        sample_eval_users(&corpus, sample_n, eval_seed)
    } else {
        corpus.users.iter().map(|u| u.user_id.clone()).collect()
    };
    let split =
        chronological_split(&corpus, &eval_users, n_val, n_test).map_err(|e| Failure::data(anyhow!(e)))?;
    save_split(&split, &out).map_err(|e| Failure::data(anyhow!(e)))?;

    let eval: Vec<&str> = split.eval_users();
    let cold = eval.iter().filter(|u| split.is_cold_start(u)).count();
    println!(
        "split written to {}: {} eval users ({} new without train history, {} old)",
        out.display(),
        eval.len(),
        cold,
        eval.len() - cold
    );
    Ok(())
}

pub fn cmd_train(
    args: ConfigArgs,
    corpus_path: PathBuf,
    split_path: PathBuf,
    target: Target,
    out: PathBuf,
    rec_checkpoint: Option<PathBuf>,
    dump_snapshots: Option<PathBuf>,
) -> Result<(), Failure> {
    let map = resolve_config(&args)?;
    let corpus = load_corpus_arg(&corpus_path)?;
    let split = load_split_arg(&split_path)?;

    match target {
        Target::Rec => {
            let model_config = config::model_config(&map).map_err(Failure::config)?;
            let train_config = config::train_config(&map).map_err(Failure::config)?;
            let run_dir = prepare_run_dir(&args, "train-rec", train_config.seed, &map)?;

            let trained = train_rec_tagged(&corpus, &split, model_config, &train_config)?;
            let mut log_text = String::new();
            for entry in &trained.log {
                println!("{}", entry.line());
                log_text.push_str(&entry.line());
                log_text.push('\n');
            }
            if let Some(dir) = &run_dir {
                write_file(&dir.join("train.log"), &log_text)?;
            }

            let mut entries = Vec::new();
            trained.model.params.visit(&mut entries);
            let cfg = RecCheckpointConfig { model: trained.model.config.clone(), train: train_config.clone() };
            let ck = Checkpoint::build("rec", train_config.seed, train_config.epochs, &cfg, &entries);
            ck.save(&out).map_err(|e| Failure::data(anyhow!(e)))?;
            println!("checkpoint written to {}", out.display());

            if let Some(path) = dump_snapshots {
                convrec_core::lookalike::dump_store(&trained.store, &corpus, &path)
                    .map_err(|e| Failure::data(anyhow!(e)))?;
                println!("snapshot store dumped to {}", path.display());
            }
            Ok(())
        }
        Target::Dial => {
            let rec_path = rec_checkpoint.ok_or_else(|| {
                Failure::config(anyhow!("--rec-checkpoint is required when training the dialogue target"))
            })?;
            let (rec_model, _, rec_ck) = load_rec_model(&rec_path, &corpus)?;
            let train_config = config::dialogue_train_config(&map).map_err(Failure::config)?;
            let run_dir = prepare_run_dir(&args, "train-dial", train_config.seed, &map)?;

            let vocab = Vocab::for_corpus(&corpus);
            let dial_config = config::dialogue_config(&map, vocab.size(), rec_model.dim())
                .map_err(Failure::config)?;
            let instances = extract_dialogue_instances(&corpus, &split, Part::Train, &vocab);
            if instances.is_empty() {
                return Err(Failure::data(anyhow!("no dialogue training pairs in the train part")));
            }
            {
                let probe = DialogueModel::new(dial_config.clone(), 0)
                    .map_err(|e| Failure::config(anyhow!(e)))?;
                let truncated =
                    instances.iter().filter(|i| probe.truncate_context(&i.context).1).count();
                if truncated > 0 {
                    eprintln!("warning: {truncated} contexts exceed max_context_len and were left-truncated");
                }
            }
            let store = if rec_model.config.ablation.no_lookalike {
                None
            } else {
                Some(rec_model.rebuild_snapshots(&corpus, &split, rec_ck.epoch as u64))
            };
            let user_vecs = user_vectors_for_instances(
                &rec_model,
                &corpus,
                &instances,
                store.as_ref().map(|s| (s, rec_ck.epoch as u64)),
            )
            .map_err(|e| Failure::data(anyhow!(e)))?;

            let trained = train_dialogue(dial_config.clone(), &instances, &user_vecs, &train_config)
                .map_err(|e| match e {
                    convrec_core::dialogue::DialogueError::NumericFailure { .. } => Failure::numeric(anyhow!(e)),
                    other => Failure::config(anyhow!(other)),
                })?;
            let mut log_text = String::new();
            for (epoch, loss) in &trained.log {
                let line = format!("dialogue epoch {epoch} nll {loss:.6}");
                println!("{line}");
                log_text.push_str(&line);
                log_text.push('\n');
            }
            if let Some(dir) = &run_dir {
                write_file(&dir.join("train.log"), &log_text)?;
            }

            let mut entries = Vec::new();
            trained.model.params.visit(&mut entries);
            let cfg = DialCheckpointConfig {
                dialogue: dial_config,
                train: train_config.clone(),
                rec_checkpoint_hash: rec_ck.config_hash.clone(),
            };
            let ck = Checkpoint::build("dial", train_config.seed, train_config.epochs, &cfg, &entries);
            ck.save(&out).map_err(|e| Failure::data(anyhow!(e)))?;
            println!("checkpoint written to {}", out.display());
            Ok(())
        }
    }
}

fn train_rec_tagged(
    corpus: &Corpus,
    split: &Split,
    model_config: ModelConfig,
    train_config: &TrainConfig,
) -> Result<convrec_core::rec::TrainedRec, Failure> {
    convrec_core::rec::train_rec(corpus, split, model_config, train_config).map_err(|e| match e {
        RecError::NumericFailure { .. } => Failure::numeric(anyhow!(e)),
        RecError::EmptyItemSet => Failure::data(anyhow!(e)),
        other => Failure::data(anyhow!(other)),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    args: ConfigArgs,
    corpus_path: PathBuf,
    split_path: PathBuf,
    checkpoint: PathBuf,
    target: Target,
    part: PartArg,
    out: PathBuf,
    rec_checkpoint: Option<PathBuf>,
    gen_dump: Option<PathBuf>,
) -> Result<(), Failure> {
    let map = resolve_config(&args)?;
    let corpus = load_corpus_arg(&corpus_path)?;
    let split = load_split_arg(&split_path)?;
    let part_enum: Part = part.into();

    match target {
        Target::Rec => {
            let (model, _, ck) = load_rec_model(&checkpoint, &corpus)?;
            let _ = prepare_run_dir(&args, "eval-rec", ck.seed, &map)?;
            let store = if model.config.ablation.no_lookalike {
                None
            } else {
                Some(model.rebuild_snapshots(&corpus, &split, ck.epoch as u64))
            };
            let report = evaluate_rec(
                &model,
                &corpus,
                &split,
                part_enum,
                store.as_ref().map(|s| (s, ck.epoch as u64)),
            )
            .map_err(|e| Failure::data(anyhow!(e)))?
            .ok_or_else(|| Failure::data(anyhow!("no labeled instances in the selected part")))?;
            write_file(&out, &serde_json::to_string_pretty(&report).unwrap())?;
            print_ranking_report(&report);
            println!("metrics written to {}", out.display());
            Ok(())
        }
        Target::Dial => {
            let rec_path = rec_checkpoint.ok_or_else(|| {
                Failure::config(anyhow!("--rec-checkpoint is required when evaluating the dialogue target"))
            })?;
            let (dial_model, dial_cfg, _) = load_dial_model(&checkpoint)?;
            let (rec_model, _, rec_ck) = load_rec_model(&rec_path, &corpus)?;
            let _ = prepare_run_dir(&args, "eval-dial", rec_ck.seed, &map)?;
            if dial_cfg.rec_checkpoint_hash != rec_ck.config_hash {
                eprintln!("warning: dialogue checkpoint was trained with a different recommendation checkpoint");
            }
            let decode = config::decode_config(&map).map_err(Failure::config)?;

            let vocab = Vocab::for_corpus(&corpus);
            let instances = extract_dialogue_instances(&corpus, &split, part_enum, &vocab);
            if instances.is_empty() {
                return Err(Failure::data(anyhow!("no dialogue pairs in the selected part")));
            }
            let store = if rec_model.config.ablation.no_lookalike {
                None
            } else {
                Some(rec_model.rebuild_snapshots(&corpus, &split, rec_ck.epoch as u64))
            };
            let user_vecs = user_vectors_for_instances(
                &rec_model,
                &corpus,
                &instances,
                store.as_ref().map(|s| (s, rec_ck.epoch as u64)),
            )
            .map_err(|e| Failure::data(anyhow!(e)))?;

            let refs: Vec<&convrec_core::dialogue::DialogueInstance> = instances.iter().collect();
            let vec_refs: Vec<&convrec_core::tensor::Array> = user_vecs.iter().collect();
            let mean_nll = dial_model.mean_nll(&refs, &vec_refs);

            let strip_eos = |tokens: &[usize]| -> Vec<usize> {
                let mut t = tokens.to_vec();
                if t.last() == Some(&Vocab::EOS) {
                    t.pop();
                }
                t
            };
            let truncated = instances
                .iter()
                .filter(|i| dial_model.truncate_context(&i.context).1)
                .count();
            if truncated > 0 {
                eprintln!("warning: {truncated} contexts exceed max_context_len and were left-truncated");
            }
            let mut hypotheses = Vec::with_capacity(instances.len());
            let mut references = Vec::with_capacity(instances.len());
            let mut dump_lines = String::new();
            for (inst, user_vec) in instances.iter().zip(&user_vecs) {
                let generated = dial_model.generate(&inst.context, user_vec, &decode);
                if gen_dump.is_some() {
                    let record = serde_json::json!({
                        "context": inst.context,
                        "generated": generated,
                        "reference": inst.response,
                    });
                    dump_lines.push_str(&record.to_string());
                    dump_lines.push('\n');
                }
                hypotheses.push(strip_eos(&generated));
                references.push(strip_eos(&inst.response));
            }
            if let Some(path) = &gen_dump {
                write_file(path, &dump_lines)?;
                println!("generation dump written to {}", path.display());
            }
            let report = evaluate_dialogue(&hypotheses, &references, mean_nll);
            write_file(&out, &serde_json::to_string_pretty(&report).unwrap())?;
            println!(
                "dialogue metrics ({} pairs): bleu2 {:.4} bleu3 {:.4} dist2 {:.4} dist3 {:.4} dist4 {:.4} ppl {:.2}",
                report.count, report.bleu2, report.bleu3, report.dist2, report.dist3, report.dist4, report.ppl
            );
            println!("metrics written to {}", out.display());
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AblationTable {
    part: String,
    rows: Vec<AblationRow>,
}

#[derive(Serialize, Deserialize)]
struct AblationRow {
    variant: String,
    #[serde(flatten)]
    metrics: MetricRow,
}

pub fn cmd_ablate(
    args: ConfigArgs,
    corpus_path: PathBuf,
    split_path: PathBuf,
    variants: Vec<String>,
    part: PartArg,
    out: PathBuf,
) -> Result<(), Failure> {
    let map = resolve_config(&args)?;
    let base_model = config::model_config(&map).map_err(Failure::config)?;
    let train_config = config::train_config(&map).map_err(Failure::config)?;
    let _ = prepare_run_dir(&args, "ablate", train_config.seed, &map)?;
    let corpus = load_corpus_arg(&corpus_path)?;
    let split = load_split_arg(&split_path)?;
    let part_enum: Part = part.into();

    let parsed: Vec<(String, Ablation)> = variants
        .iter()
        .map(|v| Ablation::parse(v).map(|a| (v.clone(), a)).map_err(|e| Failure::config(anyhow!(e))))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (label, ablation) in parsed {
        let model_config = ModelConfig { ablation, ..base_model.clone() };
        let trained = train_rec_tagged(&corpus, &split, model_config, &train_config)?;
        let report = evaluate_rec(
            &trained.model,
            &corpus,
            &split,
            part_enum,
            Some((&trained.store, trained.store_epoch)),
        )
        .map_err(|e| Failure::data(anyhow!(e)))?
        .ok_or_else(|| Failure::data(anyhow!("no labeled instances in the selected part")))?;
        println!(
            "{label}: hr@10 {:.4} hr@50 {:.4} mrr@10 {:.4} ndcg@10 {:.4}",
            report.overall.hr_10, report.overall.hr_50, report.overall.mrr_10, report.overall.ndcg_10
        );
        rows.push(AblationRow { variant: label, metrics: report.overall });
    }
    let table = AblationTable {
        part: format!("{part_enum:?}").to_lowercase(),
        rows,
    };
    write_file(&out, &serde_json::to_string_pretty(&table).unwrap())?;
    println!("ablation table written to {}", out.display());
    Ok(())
}

fn print_metric_row(label: &str, row: &MetricRow) {
    println!(
        "{label:>10} | {:>7.4} {:>7.4} | {:>7.4} {:>7.4} | {:>7.4} {:>7.4} | {:>5}",
        row.hr_10, row.hr_50, row.mrr_10, row.mrr_50, row.ndcg_10, row.ndcg_50, row.count
    );
}

fn print_ranking_report(report: &RankingReport) {
    println!("{:>10} | {:>7} {:>7} | {:>7} {:>7} | {:>7} {:>7} | {:>5}", "cohort", "hr@10", "hr@50", "mrr@10", "mrr@50", "ndcg@10", "ndcg@50", "count");
    print_metric_row("overall", &report.overall);
    for (bucket, row) in &report.by_entity_count {
        match row {
            Some(r) => print_metric_row(&format!("ent {bucket}"), r),
            None => println!("{:>10} | (empty)", format!("ent {bucket}")),
        }
    }
    for (cohort, row) in &report.by_user_cohort {
        match row {
            Some(r) => print_metric_row(cohort, r),
            None => println!("{cohort:>10} | (empty)"),
        }
    }
}

pub fn cmd_report(metrics: PathBuf) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&metrics)
        .with_context(|| format!("cannot read {}", metrics.display()))
        .map_err(Failure::data)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse {}", metrics.display()))
        .map_err(Failure::data)?;

    if value.get("overall").is_some() {
        let report: RankingReport = serde_json::from_value(value).map_err(|e| Failure::data(anyhow!(e)))?;
        print_ranking_report(&report);
    } else if value.get("bleu2").is_some() {
        let report: convrec_core::dialogue::DialogueReport =
            serde_json::from_value(value).map_err(|e| Failure::data(anyhow!(e)))?;
        println!("pairs: {}", report.count);
        println!("bleu2 {:.4}  bleu3 {:.4}", report.bleu2, report.bleu3);
        println!(
            "dist2 {:.4}  dist3 {:.4}  dist4 {:.4} (corpus level)",
            report.dist2, report.dist3, report.dist4
        );
        println!(
            "dist2 {:.4}  dist3 {:.4}  dist4 {:.4} (sentence mean)",
            report.dist2_sentence_mean, report.dist3_sentence_mean, report.dist4_sentence_mean
        );
        println!("ppl {:.3}", report.ppl);
    } else if value.get("rows").is_some() {
        let table: AblationTable = serde_json::from_value(value).map_err(|e| Failure::data(anyhow!(e)))?;
        println!("part: {}", table.part);
        println!("{:>32} | {:>7} {:>7} | {:>7} {:>7} | {:>7} {:>7}", "variant", "hr@10", "hr@50", "mrr@10", "mrr@50", "ndcg@10", "ndcg@50");
        for row in &table.rows {
            println!(
                "{:>32} | {:>7.4} {:>7.4} | {:>7.4} {:>7.4} | {:>7.4} {:>7.4}",
                row.variant,
                row.metrics.hr_10,
                row.metrics.hr_50,
                row.metrics.mrr_10,
                row.metrics.mrr_50,
                row.metrics.ndcg_10,
                row.metrics.ndcg_50
            );
        }
    } else {
        return Err(Failure::data(anyhow!("unrecognized metrics document {}", metrics.display())));
    }
    Ok(())
}
