//! Interactive chat: each line may carry `@entity:NAME` / `#word:NAME`
//! mention markup and bare integers as dialogue token ids. Every turn
//! updates the live session, prints a generated reply and the top-10
//! recommendations, and is appended to the transcript. `quit` ends the
//! session.

use crate::commands::{load_dial_model, load_rec_model, prepare_run_dir, resolve_config};
use crate::config;
use crate::{ConfigArgs, Failure};
use anyhow::{anyhow, Context};
use convrec_core::corpus::{chronological_split, load_corpus, UserRecord};
use convrec_core::dialogue::Vocab;
use convrec_core::rec::ScoringContext;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::PathBuf;

pub fn cmd_chat(
    args: ConfigArgs,
    corpus_path: PathBuf,
    rec_checkpoint: PathBuf,
    dial_checkpoint: PathBuf,
    user: Option<String>,
    transcript_path: Option<PathBuf>,
) -> Result<(), Failure> {
    let map = resolve_config(&args)?;
    let decode = config::decode_config(&map).map_err(Failure::config)?;
    let mut corpus = load_corpus(&corpus_path).map_err(|e| Failure::data(anyhow!(e)))?;

    // resolve the acting user; a fresh visitor has no history
    let user_idx = match &user {
        Some(id) => corpus
            .users
            .iter()
            .position(|u| &u.user_id == id)
            .ok_or_else(|| Failure::data(anyhow!("user {id:?} is not in the corpus")))?,
        None => {
            corpus.users.push(UserRecord { user_id: "__visitor__".to_string(), sessions: Vec::new() });
            corpus.n_users() - 1
        }
    };
    let session_index = corpus.users[user_idx].sessions.len() + 1;

    let (rec_model, _, rec_ck) = load_rec_model(&rec_checkpoint, &corpus)?;
    let (dial_model, _, _) = load_dial_model(&dial_checkpoint)?;
    let _ = prepare_run_dir(&args, "chat", rec_ck.seed, &map)?;
    let vocab = Vocab::for_corpus(&corpus);

    // every session in the corpus backs the look-alike store here
    let full_split = chronological_split(&corpus, &[], 0, 0).map_err(|e| Failure::data(anyhow!(e)))?;
    let store = if rec_model.config.ablation.no_lookalike {
        None
    } else {
        Some(rec_model.rebuild_snapshots(&corpus, &full_split, rec_ck.epoch as u64))
    };

    let entity_index = corpus.entity_index();
    let word_index = corpus.word_index();

    let mut mention_entities: Vec<usize> = Vec::new();
    let mut mention_words: Vec<usize> = Vec::new();
    let mut turn_tokens: Vec<Vec<usize>> = Vec::new();
    let mut transcript = String::new();

    println!("chat ready: mention entities as @entity:NAME, words as #word:NAME, token ids as bare integers; `quit` ends");
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line.context("cannot read stdin").map_err(Failure::data)?;
        let trimmed = line.trim();
        if trimmed == "quit" {
            break;
        }
        let _ = writeln!(transcript, "user: {trimmed}");

        // resolve markup
        let mut tokens: Vec<usize> = Vec::new();
        for piece in trimmed.split_whitespace() {
            if let Some(name) = piece.strip_prefix("@entity:") {
                match entity_index.get(name) {
                    Some(&e) => mention_entities.push(e),
                    None => eprintln!("warning: unknown entity {name:?}; turn still processed"),
                }
            } else if let Some(name) = piece.strip_prefix("#word:") {
                match word_index.get(name) {
                    Some(&w) => mention_words.push(w),
                    None => eprintln!("warning: unknown word {name:?}; turn still processed"),
                }
            } else if let Ok(tok) = piece.parse::<u32>() {
                tokens.push(vocab.encode(tok));
            } else {
                eprintln!("warning: {piece:?} is neither markup nor a token id; ignored");
            }
        }
        turn_tokens.push(tokens);

        // score the catalog from the accumulated session state
        let ctx = ScoringContext {
            user_idx,
            session_index,
            entities: &mention_entities,
            words: &mention_words,
        };
        let store_ref = store.as_ref().map(|s| (s, rec_ck.epoch as u64));
        let probs = rec_model
            .score_context(&corpus, &ctx, store_ref)
            .map_err(|e| Failure::data(anyhow!(e)))?;
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        let top: Vec<String> = order
            .iter()
            .take(10)
            .map(|&i| format!("{} ({:.3})", corpus.entities[corpus.items[i]], probs[i]))
            .collect();

        // generate the reply biased by the live user vector
        let user_vec = {
            let mut tape = convrec_core::Tape::new();
            let (vars, tables) = rec_model.inject(&mut tape);
            let views = rec_model.views(&mut tape, &vars, &tables, &corpus, &ctx);
            let user_var = rec_model
                .user_vector(&mut tape, &vars, &views, store_ref, user_idx)
                .map_err(|e| Failure::data(anyhow!(e)))?;
            tape.value(user_var).clone()
        };
        let mut dial_context: Vec<usize> = Vec::new();
        for (i, turn) in turn_tokens.iter().enumerate() {
            if i > 0 {
                dial_context.push(Vocab::SEP);
            }
            dial_context.extend_from_slice(turn);
        }
        if dial_model.truncate_context(&dial_context).1 {
            eprintln!("warning: context exceeds max_context_len; older tokens dropped");
        }
        let reply = dial_model.generate(&dial_context, &user_vec, &decode);
        let decoded: Vec<String> = reply
            .iter()
            .map(|&id| match vocab.decode(id) {
                Some(t) => t.to_string(),
                None if id == Vocab::EOS => "<eos>".to_string(),
                None => format!("<{id}>"),
            })
            .collect();

        println!("reply tokens: {}", decoded.join(" "));
        println!("top-10: {}", top.join(", "));
        let _ = writeln!(transcript, "system: {}", decoded.join(" "));
        let _ = writeln!(transcript, "recommendations: {}", top.join(", "));

        // the reply becomes a system turn: its top recommendation counts
        // as a system-side entity mention, matching the corpus convention
        if rec_model.config.include_system_mentions {
            if let Some(&best) = order.first() {
                mention_entities.push(corpus.items[best]);
            }
        }
        turn_tokens.push(reply.iter().filter(|&&t| t != Vocab::EOS).copied().collect());
    }

    if let Some(path) = &transcript_path {
        std::fs::write(path, &transcript)
            .with_context(|| format!("cannot write transcript {}", path.display()))
            .map_err(Failure::data)?;
        println!("transcript written to {}", path.display());
    }
    Ok(())
}
