use std::io::{BufRead, Write};

use hred_core::corpus::encode_text;
use hred_core::embeddings::BOS;
use hred_core::models::{Architecture, ContextState};
use hred_core::recurrent::DecodeMode;
use hred_core::{Model, Result};
use serde_json::json;

/// Terminal conversation with one model. HRED keeps the running context;
/// ENCDEC answers each line on its own.
pub struct ChatSession<'a> {
    model: &'a Model,
    mode: DecodeMode,
    max_len: Option<usize>,
    seed: u64,
    context: Option<ContextState<f64>>,
    turn: u64,
}

impl<'a> ChatSession<'a> {
    pub fn new(model: &'a Model, mode: DecodeMode, max_len: Option<usize>, seed: u64) -> Result<Self> {
        let mut s = Self {
            model,
            mode,
            max_len,
            seed,
            context: None,
            turn: 0,
        };
        s.reset()?;
        Ok(s)
    }

    pub fn reset(&mut self) -> Result<()> {
        self.turn = 0;
        self.context = match self.model.arch() {
            Architecture::Hred => Some(self.model.new_context()?),
            Architecture::EncDec => None,
        };
        Ok(())
    }

    pub fn reply(&mut self, text: &str) -> Result<String> {
        let m = self.model;
        let ids = encode_text(text, &m.vocab);
        let seed = self.seed.wrapping_add(self.turn);
        let reply = match &self.context {
            Some(ctx) => {
                let after_user = m.hred_observe(&ids, ctx)?;
                let reply = m.hred_respond(&after_user, self.mode, self.max_len, seed)?;
                let mut framed = vec![BOS];
                framed.extend_from_slice(&reply);
                self.context = Some(m.hred_observe(&framed, &after_user)?);
                reply
            }
            None => m.encdec_forward(&ids, self.mode, self.max_len, seed)?,
        };
        self.turn += 1;
        Ok(m.vocab.decode(&reply).join(" "))
    }
}

/// Reads lines until EOF or `/quit`; `/reset` starts a new conversation.
/// Returns the number of replies written.
pub fn repl<R: BufRead, W: Write>(
    session: &mut ChatSession<'_>,
    input: R,
    mut out: W,
    mut transcript: Option<&mut dyn Write>,
    interactive: bool,
) -> Result<usize> {
    let mut replies = 0;
    if interactive {
        write!(out, "you> ")?;
        out.flush()?;
    }
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "" => {}
            "/quit" | "/exit" => break,
            "/reset" => {
                session.reset()?;
                if let Some(t) = transcript.as_mut() {
                    writeln!(t, "{}", json!({"event": "reset"}))?;
                }
                if interactive {
                    writeln!(out, "(context cleared)")?;
                }
            }
            _ => {
                let turn = session.turn;
                let reply = session.reply(text)?;
                if interactive {
                    writeln!(out, "bot> {reply}")?;
                } else {
                    writeln!(out, "{reply}")?;
                }
                if let Some(t) = transcript.as_mut() {
                    writeln!(t, "{}", json!({"turn": turn, "user": text, "reply": reply}))?;
                }
                replies += 1;
            }
        }
        if interactive {
            write!(out, "you> ")?;
        }
        out.flush()?;
    }
    Ok(replies)
}
