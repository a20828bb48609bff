use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, IsTerminal, Write};
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use hred_core::analysis::io::{
    read_context_map, write_analysis, write_report, CENTROIDS_FILE, POINTS_FILE, REDUCTIONS_FILE, REPORT_FILE,
    REPORT_TABLE_FILE, TSNE_FILE, VECTORS_FILE,
};
use hred_core::analysis::{
    build_context_map, distance_reduction_experiment, silhouette_score, ExperimentConfig, TsneConfig,
};
use hred_core::corpus::{
    encode_corpus, encode_text, filter_top_topics, import_eou_format, read_canonical, tokenize_corpus,
    write_canonical, RawConversation,
};
use hred_core::embeddings::{load_embeddings, train_sgns, EmbeddingMode, SgnsConfig, Vocabulary, UNK};
use hred_core::models::{
    evaluate_batches, load_checkpoint, optimizer_state, pad_and_batch, save_checkpoint, train as train_model,
    ModelConfig, OptimizerSnapshot, TrainConfig,
};
use hred_core::numerics::OptimizerConfig;
use hred_core::{Error, Model};
use hred_service::{Analysis, AppState, ServiceConfig};
use serde_json::json;

use crate::chat::{repl, ChatSession};
use crate::manifest::{beside, Recorder};
use crate::{AnalyzeArgs, ChatArgs, CliError, EmbedArgs, ExperimentArgs, ImportArgs, Paths, ServeArgs, TrainArgs};

type Result<T = ()> = std::result::Result<T, CliError>;

const ANALYSIS_MANIFEST: &str = "manifest.json";
const EXPERIMENT_MANIFEST: &str = "experiment.manifest.json";

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn read_corpus(path: &Path) -> Result<Vec<RawConversation>> {
    let convs = read_canonical(open(path)?)?;
    if convs.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    Ok(convs)
}

fn load_model(path: &Path) -> Result<Model> {
    let m = load_checkpoint::<f64>(path)?.model;
    log::info!(
        "loaded {} model from {} ({} tokens, hidden {})",
        m.arch(),
        path.display(),
        m.config.vocab_size,
        m.config.hidden_dim
    );
    Ok(m)
}

pub fn import(a: &ImportArgs, paths: &Paths) -> Result {
    if a.top_topics == 0 {
        return Err(CliError::Usage("--top-topics must be at least 1".into()));
    }
    let rec = Recorder::start("import", None, a)?;
    let (dialogs, topics, out) = (paths.resolve(&a.dialogs), paths.resolve(&a.topics), paths.resolve(&a.out));
    let (convs, report) = import_eou_format(open(&dialogs)?, open(&topics)?)?;
    let total = convs.len();
    let (kept, retained) = filter_top_topics(convs, a.top_topics);
    if kept.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    let mut w = create(&out)?;
    write_canonical(&kept, &mut w)?;
    w.flush()?;

    println!("topic\tconversations");
    for t in &retained {
        println!("{t}\t{}", kept.iter().filter(|c| &c.topic == t).count());
    }
    println!("kept {} of {total} conversations", kept.len());
    rec.finish(
        &[&dialogs, &topics],
        &[&out],
        Vec::new(),
        json!({
            "conversations": kept.len(),
            "read": total,
            "skipped_empty_lines": report.skipped_empty_lines,
            "topics": retained,
        }),
        &beside(&out),
    )?;
    Ok(())
}

fn build_vocab(convs: &[RawConversation], min_count: usize, max_vocab: usize) -> Result<Vocabulary> {
    let tokens = tokenize_corpus(convs);
    Ok(Vocabulary::build(tokens.iter().flatten(), min_count, max_vocab)?)
}

pub fn embed(a: &EmbedArgs, paths: &Paths) -> Result {
    let rec = Recorder::start("embed", Some(a.seed), a)?;
    let (corpus, out) = (paths.resolve(&a.corpus), paths.resolve(&a.out));
    let raw = read_corpus(&corpus)?;
    let vocab = build_vocab(&raw, a.vocab.min_count, a.vocab.max_vocab)?;
    let sentences: Vec<Vec<usize>> = encode_corpus(&raw, &vocab).into_iter().flat_map(|c| c.turns).collect();
    let cfg = SgnsConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
    };
    log::info!("training {}-dimensional vectors for {} tokens", a.dim, vocab.len());
    let table = train_sgns::<f64>(&sentences, vocab.len(), &cfg)?;
    let mut w = create(&out)?;
    table.write_text(&vocab, &mut w)?;
    w.flush()?;
    println!("wrote {} vectors of dimension {} to {}", vocab.len(), a.dim, out.display());
    rec.finish(
        &[&corpus],
        &[&out],
        Vec::new(),
        json!({"vocab_size": vocab.len(), "sentences": sentences.len()}),
        &beside(&out),
    )?;
    Ok(())
}

pub fn train(a: &TrainArgs, paths: &Paths) -> Result {
    let rec = Recorder::start("train", Some(a.seed), a)?;
    let (corpus, out) = (paths.resolve(&a.corpus), paths.resolve(&a.out));
    let raw = read_corpus(&corpus)?;
    let vocab = build_vocab(&raw, a.vocab.min_count, a.vocab.max_vocab)?;
    let convs = encode_corpus(&raw, &vocab);
    let mode: EmbeddingMode = a.embedding_mode.into();
    let cfg = ModelConfig {
        arch: a.arch.into(),
        vocab_size: vocab.len(),
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden,
        depth: a.depth,
        head: a.head.into(),
        embedding_mode: mode,
    };
    let tc = TrainConfig {
        optimizer: OptimizerConfig {
            learning_rate: a.lr,
            decay_rho: a.rho,
            clip_norm: a.clip,
            ..OptimizerConfig::default()
        },
        epochs: a.epochs,
        batch_size: a.batch,
        granularity: a.granularity.into(),
        seed: a.seed,
        target_accuracy: a.target_accuracy,
    };
    tc.validate()?;

    let mut inputs = vec![corpus.clone()];
    let embedding = match &a.embeddings {
        Some(p) => {
            let p = paths.resolve(p);
            let loaded = load_embeddings::<f64, _>(open(&p)?, &vocab, a.embed_dim, mode, a.seed)?;
            log::info!("word vectors cover {:.1}% of the vocabulary", 100.0 * loaded.coverage);
            inputs.push(p);
            Some(loaded.matrix)
        }
        None => {
            if mode == EmbeddingMode::Frozen {
                log::warn!("frozen embeddings without --embeddings keep their random initialization");
            }
            None
        }
    };
    let mut model = Model::new(cfg, vocab, embedding, a.seed)?;
    let batches = pad_and_batch(&convs, a.batch);
    let mut state = optimizer_state(&model);
    log::info!(
        "training {} model with {} parameters on {} conversations ({} batches)",
        cfg.arch,
        model.params.num_parameters(),
        convs.len(),
        batches.len()
    );
    let log = train_model(&mut model, &batches, &tc, &mut state)?;
    let fin = evaluate_batches(&model, &batches)?;
    for m in &log.epochs {
        log::debug!("epoch {}: loss {:.6} accuracy {:.4}", m.epoch, m.loss, m.token_accuracy);
    }
    println!(
        "{} epochs, final loss {:.6}, teacher-forced token accuracy {:.4}",
        log.epochs.len(),
        fin.loss,
        fin.accuracy()
    );
    let snapshot = OptimizerSnapshot {
        config: tc.optimizer,
        state,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_checkpoint(&model, Some(&snapshot), &out)?;
    println!("wrote {}", out.display());
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    rec.finish(
        &inputs,
        &[&out],
        log.epochs,
        json!({
            "parameters": model.params.num_parameters(),
            "vocab_size": model.config.vocab_size,
            "conversations": convs.len(),
            "final_loss": fin.loss,
            "final_accuracy": fin.accuracy(),
        }),
        &beside(&out),
    )?;
    Ok(())
}

pub fn chat(a: &ChatArgs, paths: &Paths) -> Result {
    let model = load_model(&paths.resolve(&a.checkpoint))?;
    let mut session = ChatSession::new(&model, a.decode.mode(), a.decode.max_len, a.seed)?;
    let mut transcript = match &a.transcript {
        Some(p) => {
            let p = paths.resolve(p);
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&p)
                    .map_err(|e| Error::io(&p, e))?,
            )
        }
        None => None,
    };
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    if interactive {
        println!("{} model; /reset clears the conversation, /quit leaves", model.arch());
    }
    let n = repl(
        &mut session,
        stdin.lock(),
        std::io::stdout().lock(),
        transcript.as_mut().map(|f| f as &mut dyn Write),
        interactive,
    )?;
    log::info!("{n} replies");
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs, paths: &Paths) -> Result {
    let rec = Recorder::start("analyze", Some(a.seed), a)?;
    let (ckpt, corpus, dir) = (
        paths.resolve(&a.checkpoint),
        paths.resolve(&a.corpus),
        paths.resolve(&a.out_dir),
    );
    let model = load_model(&ckpt)?;
    let convs = encode_corpus(&read_corpus(&corpus)?, &model.vocab);
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iters,
        seed: a.seed,
        ..TsneConfig::default()
    };
    let (map, result) = build_context_map(&model, &convs, &cfg)?;
    write_analysis(&dir, &map, &result)?;

    let silhouette = silhouette_score(&map.points, &map.reference.topics).ok();
    let (kl0, kl1) = (result.kl_trace[0], *result.kl_trace.last().expect("non-empty trace"));
    println!("topic\tx\ty\tconversations");
    for c in &map.centroids {
        println!("{}\t{:.4}\t{:.4}\t{}", c.topic, c.point[0], c.point[1], c.count);
    }
    println!("{} points, KL {kl0:.4} -> {kl1:.4}", map.points.rows());
    if let Some(s) = silhouette {
        println!("topic silhouette {s:.4}");
    }
    let outputs: Vec<PathBuf> = [POINTS_FILE, CENTROIDS_FILE, VECTORS_FILE, TSNE_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let outputs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    rec.finish(
        &[&ckpt, &corpus],
        &outputs,
        Vec::new(),
        json!({
            "corpus": corpus,
            "checkpoint": ckpt,
            "points": map.points.rows(),
            "perplexity": result.perplexity,
            "kl_initial": kl0,
            "kl_final": kl1,
            "silhouette": silhouette,
        }),
        &dir.join(ANALYSIS_MANIFEST),
    )?;
    Ok(())
}

fn corpus_from_manifest(dir: &Path) -> Result<PathBuf> {
    let path = dir.join(ANALYSIS_MANIFEST);
    let missing = || CliError::Usage(format!("no corpus recorded in {}; pass --corpus", path.display()));
    let text = std::fs::read_to_string(&path).map_err(|_| missing())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    v["summary"]["corpus"].as_str().map(PathBuf::from).ok_or_else(missing)
}

pub fn experiment(a: &ExperimentArgs, paths: &Paths) -> Result {
    let rec = Recorder::start("experiment", Some(a.seed), a)?;
    let ckpt = paths.resolve(&a.checkpoint);
    let dir = paths.resolve(&a.analysis_dir);
    let model = load_model(&ckpt)?;
    let map = read_context_map(&dir)?;
    if map.reference.vectors.cols() != model.config.hidden_dim {
        return Err(Error::Consistency(format!(
            "analysis vectors have {} dimensions but the model's context has {}",
            map.reference.vectors.cols(),
            model.config.hidden_dim
        ))
        .into());
    }
    let corpus = match &a.corpus {
        Some(c) => paths.resolve(c),
        None => corpus_from_manifest(&dir)?,
    };
    let convs = encode_corpus(&read_corpus(&corpus)?, &model.vocab);
    let probe = encode_text(&a.probe, &model.vocab);
    let unknown = probe.iter().filter(|&&t| t == UNK).count();
    if unknown > 0 {
        log::warn!("{unknown} probe words are outside the vocabulary");
    }
    let cfg = ExperimentConfig {
        sample: a.sample,
        seed: a.seed,
        space: a.space.into(),
    };
    let report = distance_reduction_experiment(&model, &map, &convs, &probe, &cfg)?;
    let out = a.out_dir.as_ref().map_or_else(|| dir.clone(), |d| paths.resolve(d));
    write_report(&out, &report, &a.probe)?;

    let closest = report.closest_topic().unwrap_or_default().to_string();
    let ci = report.topic_index(&closest);
    println!("topic\tmean_reduction\tp_vs_{}", closest.replace(' ', "_"));
    for (i, t) in report.topics.iter().enumerate() {
        let p = ci.and_then(|c| report.p_values[i][c]);
        let p = p.map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
        println!("{t}\t{:.4}\t{p}", report.means[i]);
    }
    println!("{} conversations; largest reduction: {closest}", report.conversation_ids.len());
    let outputs: Vec<PathBuf> = [REPORT_FILE, REPORT_TABLE_FILE, REDUCTIONS_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    let outputs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    rec.finish(
        &[&ckpt, &corpus, &dir.join(POINTS_FILE), &dir.join(VECTORS_FILE)],
        &outputs,
        Vec::new(),
        json!({"closest_topic": closest, "means": report.means, "topics": report.topics}),
        &out.join(EXPERIMENT_MANIFEST),
    )?;
    Ok(())
}

fn model_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((id, path)) if !id.is_empty() => (id.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(spec);
            let id = p.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
            (id, p)
        }
    }
}

pub fn serve(a: &ServeArgs, paths: &Paths) -> Result {
    let mut models = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for spec in &a.models {
        let (id, path) = model_spec(spec);
        if !seen.insert(id.clone()) {
            return Err(CliError::Usage(format!("model id `{id}` given twice; use id=path")));
        }
        models.insert(id, load_model(&paths.resolve(&path))?);
    }
    let analysis = match &a.analysis {
        Some(d) => Some(Analysis::load(&paths.resolve(d))?),
        None => {
            log::warn!("no --analysis directory; the context map endpoints will answer 409");
            None
        }
    };
    let config = ServiceConfig {
        session_ttl: Duration::from_secs(a.ttl),
        transcript_dir: a.transcripts.as_ref().map(|d| paths.resolve(d)),
        decode_mode: a.decode.mode(),
        max_reply_len: a.decode.max_len,
    };
    let state = AppState::new(models, analysis, config);
    for (id, m) in &state.models {
        if m.arch() == hred_core::models::Architecture::Hred && state.analysis.is_some() && state.map_for(m).is_none() {
            log::warn!("model `{id}` does not match the analysis dimensions; its sessions get no context points");
        }
    }
    let addr = (a.host.as_str(), a.port)
        .to_socket_addrs()
        .map_err(|e| CliError::Usage(format!("bad address {}:{}: {e}", a.host, a.port)))?
        .next()
        .ok_or_else(|| CliError::Usage(format!("{} does not resolve", a.host)))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(hred_service::serve(addr, state))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_specs() {
        assert_eq!(model_spec("runs/hred.ckpt"), ("hred".into(), PathBuf::from("runs/hred.ckpt")));
        assert_eq!(model_spec("a=b/c.ckpt"), ("a".into(), PathBuf::from("b/c.ckpt")));
    }
}
