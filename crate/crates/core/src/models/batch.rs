use crate::corpus::TokenizedConversation;
use crate::embeddings::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Padded mini-batch of conversations.
///
/// `ids[b][s]` is sentence `s` of conversation `b`, PAD-filled to the batch-wide
/// length of sentence `s`. Conversations shorter than the batch are extended
/// with empty sentences `[BOS, EOS]`. `mask[b][s][l]` is 1 where position `l`
/// is a real prediction target: a non-PAD token after BOS in a real reply
/// sentence (`s ≥ 1`, `s <` the conversation's true turn count).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<Vec<Vec<usize>>>,
    pub mask: Vec<Vec<Vec<u8>>>,
    /// Real turn count of each conversation.
    pub turns: Vec<usize>,
    /// Index of each conversation in the list given to [`pad_and_batch`].
    pub source: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn sentences(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn sentence_len(&self, s: usize) -> usize {
        self.ids.first().map_or(0, |c| c[s].len())
    }

    /// Number of positions with mask 1.
    pub fn target_count(&self) -> usize {
        self.mask.iter().flatten().flatten().filter(|&&m| m == 1).count()
    }

    /// Sentence `s` of conversation `b` up to and including its EOS.
    pub fn sentence(&self, b: usize, s: usize) -> &[usize] {
        let ids = &self.ids[b][s];
        let end = ids.iter().position(|&t| t == EOS).map_or(ids.len(), |p| p + 1);
        &ids[..end]
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Consistency(msg));
        if self.mask.len() != self.ids.len() || self.turns.len() != self.ids.len() {
            return bad("batch fields have different conversation counts".into());
        }
        let s_count = self.sentences();
        for (b, (conv, mask)) in self.ids.iter().zip(&self.mask).enumerate() {
            if conv.len() != s_count || mask.len() != s_count {
                return bad(format!("conversation {b} has a different sentence count"));
            }
            for (s, (sent, m)) in conv.iter().zip(mask).enumerate() {
                if sent.len() != self.ids[0][s].len() || m.len() != sent.len() {
                    return bad(format!("sentence {s} of conversation {b} is misaligned"));
                }
                if sent.first() != Some(&BOS) {
                    return bad(format!("sentence {s} of conversation {b} does not start with BOS"));
                }
                if sent.iter().filter(|&&t| t == EOS).count() != 1 {
                    return bad(format!("sentence {s} of conversation {b} needs exactly one EOS"));
                }
                let eos = sent.iter().position(|&t| t == EOS).expect("checked");
                if sent[eos + 1..].iter().any(|&t| t != PAD) || sent[..eos].contains(&PAD) {
                    return bad(format!("sentence {s} of conversation {b} has misplaced padding"));
                }
                for (l, (&t, &mv)) in sent.iter().zip(m).enumerate() {
                    if mv > 1 || (mv == 1 && (t == PAD || l == 0)) {
                        return bad(format!("mask of sentence {s} in conversation {b} is malformed"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sorts conversations by turn count (then token count, then original order),
/// groups them into batches and pads each batch.
pub fn pad_and_batch(conversations: &[TokenizedConversation], batch_size: usize) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..conversations.len()).collect();
    let tokens = |c: &TokenizedConversation| c.turns.iter().map(Vec::len).sum::<usize>();
    order.sort_by_key(|&i| (conversations[i].turns.len(), tokens(&conversations[i])));
    order
        .chunks(batch_size)
        .map(|chunk| build_batch(conversations, chunk))
        .collect()
}

fn build_batch(all: &[TokenizedConversation], members: &[usize]) -> Batch {
    let s_max = members.iter().map(|&i| all[i].turns.len()).max().unwrap_or(0);
    let empty = vec![BOS, EOS];
    let sentence = |i: usize, s: usize| all[i].turns.get(s).unwrap_or(&empty);
    let lens: Vec<usize> = (0..s_max)
        .map(|s| members.iter().map(|&i| sentence(i, s).len()).max().unwrap_or(2))
        .collect();
    let mut ids = Vec::with_capacity(members.len());
    let mut mask = Vec::with_capacity(members.len());
    for &i in members {
        let real = all[i].turns.len();
        let mut conv_ids = Vec::with_capacity(s_max);
        let mut conv_mask = Vec::with_capacity(s_max);
        for (s, &len) in lens.iter().enumerate() {
            let mut sent = sentence(i, s).clone();
            sent.resize(len, PAD);
            let m = sent
                .iter()
                .enumerate()
                .map(|(l, &t)| u8::from(s >= 1 && s < real && l >= 1 && t != PAD))
                .collect();
            conv_ids.push(sent);
            conv_mask.push(m);
        }
        ids.push(conv_ids);
        mask.push(conv_mask);
    }
    Batch {
        ids,
        mask,
        turns: members.iter().map(|&i| all[i].turns.len()).collect(),
        source: members.to_vec(),
    }
}
