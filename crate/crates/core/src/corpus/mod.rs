//! Multi-turn dialogue corpora: the `__eou__` distribution format, the
//! canonical JSON-lines file, tokenization and topic filtering.

mod tokenize;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::embeddings::{Vocabulary, BOS, EOS};
use crate::error::{Error, Result};

pub use tokenize::{tokenize, PUNCTUATION};

/// Utterance delimiter of the distribution format.
pub const EOU: &str = "__eou__";

/// Topic names of the DailyDialog label codes 1–10.
pub const DAILYDIALOG_TOPICS: [&str; 10] = [
    "Ordinary Life",
    "School Life",
    "Culture & Education",
    "Attitude & Emotion",
    "Relationship",
    "Tourism",
    "Health",
    "Work",
    "Politics",
    "Finance",
];

/// Maps a DailyDialog topic code to its name; other labels pass through.
pub fn topic_label(code: &str) -> String {
    match code.trim().parse::<usize>() {
        Ok(n) if (1..=DAILYDIALOG_TOPICS.len()).contains(&n) => DAILYDIALOG_TOPICS[n - 1].to_string(),
        _ => code.trim().to_string(),
    }
}

/// One line of the canonical corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawConversation {
    pub id: String,
    pub topic: String,
    pub utterances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedConversation {
    pub id: String,
    pub topic: String,
    /// Each turn is `[BOS, w…, EOS]`.
    pub turns: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub conversations: usize,
    pub skipped_empty_lines: usize,
}

/// Reads the `__eou__`-delimited dialog text plus the parallel topic file.
///
/// Conversation ids are `dd-<line number>`; topic codes are mapped through
/// [`topic_label`].
pub fn import_eou_format<D: BufRead, P: BufRead>(
    dialogs: D,
    topics: P,
) -> Result<(Vec<RawConversation>, ImportReport)> {
    let dialog_lines = dialogs.lines().collect::<std::io::Result<Vec<_>>>()?;
    let topic_lines = topics.lines().collect::<std::io::Result<Vec<_>>>()?;
    if dialog_lines.len() != topic_lines.len() {
        return Err(Error::format(
            dialog_lines.len().min(topic_lines.len()) + 1,
            format!(
                "dialog file has {} lines but topic file has {}",
                dialog_lines.len(),
                topic_lines.len()
            ),
        ));
    }
    let mut report = ImportReport::default();
    let mut out = Vec::new();
    for (idx, (dialog, topic)) in dialog_lines.iter().zip(&topic_lines).enumerate() {
        let utterances: Vec<String> = dialog
            .split(EOU)
            .map(str::trim)
            .filter(|u| !u.is_empty())
            .map(String::from)
            .collect();
        if utterances.is_empty() {
            report.skipped_empty_lines += 1;
            continue;
        }
        let topic = topic.trim();
        if topic.is_empty() {
            return Err(Error::format(idx + 1, "missing topic label"));
        }
        out.push(RawConversation {
            id: format!("dd-{}", idx + 1),
            topic: topic_label(topic),
            utterances,
        });
    }
    if report.skipped_empty_lines > 0 {
        log::warn!("skipped {} empty dialog lines", report.skipped_empty_lines);
    }
    report.conversations = out.len();
    Ok((out, report))
}

/// Keeps conversations whose topic is among the `k` most frequent.
///
/// Frequency ties are broken by label order. Returns the retained conversations
/// (in input order) and the retained topics, most frequent first.
pub fn filter_top_topics(
    convs: Vec<RawConversation>,
    k: usize,
) -> (Vec<RawConversation>, Vec<String>) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &convs {
        *counts.entry(c.topic.as_str()).or_default() += 1;
    }
    if counts.len() < k {
        log::warn!(
            "only {} distinct topics, fewer than the {k} requested; keeping all",
            counts.len()
        );
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep: Vec<String> = ranked.into_iter().take(k).map(|(t, _)| t.to_string()).collect();
    let filtered = convs.into_iter().filter(|c| keep.contains(&c.topic)).collect();
    (filtered, keep)
}

/// Tokenizes every utterance of every conversation.
pub fn tokenize_corpus(convs: &[RawConversation]) -> Vec<Vec<Vec<String>>> {
    convs
        .iter()
        .map(|c| c.utterances.iter().map(|u| tokenize(u)).collect())
        .collect()
}

/// Frames `tokens` as `[BOS, ids…, EOS]`, mapping unknown words to UNK.
pub fn encode_sentence<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<usize> {
    let mut ids = Vec::with_capacity(tokens.len() + 2);
    ids.push(BOS);
    ids.extend(vocab.encode(tokens));
    ids.push(EOS);
    ids
}

/// Tokenizes `text` and frames it as a model-ready sentence.
pub fn encode_text(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    encode_sentence(&tokenize(text), vocab)
}

pub fn encode_corpus(convs: &[RawConversation], vocab: &Vocabulary) -> Vec<TokenizedConversation> {
    convs
        .iter()
        .map(|c| TokenizedConversation {
            id: c.id.clone(),
            topic: c.topic.clone(),
            turns: c
                .utterances
                .iter()
                .map(|u| encode_text(u, vocab))
                .collect(),
        })
        .collect()
}

/// Writes one JSON object per line: `{"id", "topic", "utterances"}`.
pub fn write_canonical<W: Write>(convs: &[RawConversation], mut w: W) -> Result<()> {
    for c in convs {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_canonical<R: BufRead>(r: R) -> Result<Vec<RawConversation>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: RawConversation = serde_json::from_str(&line)
            .map_err(|e| Error::format(idx + 1, e.to_string()))?;
        if conv.utterances.is_empty() || conv.utterances.iter().any(|u| u.trim().is_empty()) {
            return Err(Error::format(idx + 1, "conversation has an empty utterance"));
        }
        out.push(conv);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(topic: &str) -> RawConversation {
        RawConversation {
            id: String::new(),
            topic: topic.into(),
            utterances: vec!["x".into()],
        }
    }

    #[test]
    fn imports_eou_lines() {
        let (convs, report) =
            import_eou_format(&b"hi ! __eou__ hello . __eou__\na __eou__\n"[..], &b"1\n6\n"[..]).unwrap();
        assert_eq!(report.conversations, 2);
        assert_eq!(convs[0].utterances, ["hi !", "hello ."]);
        assert_eq!(convs[0].topic, "Ordinary Life");
        assert_eq!(convs[1].utterances, ["a"]);
        assert_eq!(convs[1].topic, "Tourism");
    }

    #[test]
    fn line_count_mismatch_is_a_format_error() {
        let dialogs = "a __eou__\n".repeat(10);
        let topics = "1\n".repeat(9);
        assert!(matches!(
            import_eou_format(dialogs.as_bytes(), topics.as_bytes()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn empty_dialog_lines_are_skipped_and_counted() {
        let (convs, report) = import_eou_format(&b"a __eou__\n\nb __eou__\n"[..], &b"1\n2\n3\n"[..]).unwrap();
        assert_eq!(convs.len(), 2);
        assert_eq!(report.skipped_empty_lines, 1);
        assert_eq!(convs[1].id, "dd-3");
    }

    #[test]
    fn top_topic_filter() {
        let convs: Vec<_> = ["A", "B", "A", "C", "B", "A"].iter().map(|t| conv(t)).collect();
        let (kept, topics) = filter_top_topics(convs.clone(), 2);
        assert_eq!(topics, ["A", "B"]);
        assert_eq!(kept.len(), 5);
        let (all, topics) = filter_top_topics(convs.clone(), 5);
        assert_eq!(all, convs);
        assert_eq!(topics.len(), 3);
    }

    #[test]
    fn frequency_ties_follow_label_order() {
        let convs: Vec<_> = ["B", "A", "C"].iter().map(|t| conv(t)).collect();
        let (_, topics) = filter_top_topics(convs, 2);
        assert_eq!(topics, ["A", "B"]);
    }

    #[test]
    fn encoding_round_trips_in_vocabulary_text() {
        let raw = vec![RawConversation {
            id: "c".into(),
            topic: "t".into(),
            utterances: vec!["hello , world !".into(), "zebra hello".into()],
        }];
        let vocab = Vocabulary::from_words(["hello", ",", "world", "!"].map(String::from)).unwrap();
        let enc = encode_corpus(&raw, &vocab);
        assert_eq!(enc[0].turns[0].first(), Some(&BOS));
        assert_eq!(enc[0].turns[0].last(), Some(&EOS));
        assert_eq!(vocab.decode(&enc[0].turns[0]).join(" "), "hello , world !");
        assert_eq!(enc[0].turns[1][1], crate::embeddings::UNK);
        assert_eq!(encode_text("", &vocab), vec![BOS, EOS]);
    }

    #[test]
    fn canonical_round_trip() {
        let raw = vec![RawConversation {
            id: "c1".into(),
            topic: "Work".into(),
            utterances: vec!["a \"quoted\" line".into(), "b".into()],
        }];
        let mut buf = Vec::new();
        write_canonical(&raw, &mut buf).unwrap();
        assert_eq!(read_canonical(&buf[..]).unwrap(), raw);
        assert!(read_canonical(&b"{not json}\n"[..]).is_err());
    }
}
