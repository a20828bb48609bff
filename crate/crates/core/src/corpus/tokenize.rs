use crate::embeddings::SPECIAL_TOKENS;

/// Characters emitted as standalone tokens.
pub const PUNCTUATION: [char; 8] = ['.', ',', '!', '?', '\'', ';', ':', '"'];

const NUMBER_TOKEN: &str = SPECIAL_TOKENS[crate::embeddings::NUMBER];

/// Lowercases, splits punctuation into its own tokens and replaces digit runs
/// (optionally with `.`/`,` between digits) by the number token.
///
/// A whitespace-separated word that spells the number token itself is kept as
/// is, so tokenizing the space-joined output reproduces it.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if word.eq_ignore_ascii_case(NUMBER_TOKEN) {
            out.push(NUMBER_TOKEN.to_string());
            continue;
        }
        let lower = word.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut current = String::new();
        let mut i = 0;
        while i < chars.len() {
            let ch = chars[i];
            if ch.is_ascii_digit() {
                flush(&mut current, &mut out);
                let mut j = i + 1;
                while j < chars.len() {
                    if chars[j].is_ascii_digit() {
                        j += 1;
                    } else if matches!(chars[j], '.' | ',')
                        && j + 1 < chars.len()
                        && chars[j + 1].is_ascii_digit()
                    {
                        j += 2;
                    } else {
                        break;
                    }
                }
                out.push(NUMBER_TOKEN.to_string());
                i = j;
            } else if PUNCTUATION.contains(&ch) {
                flush(&mut current, &mut out);
                out.push(ch.to_string());
                i += 1;
            } else {
                current.push(ch);
                i += 1;
            }
        }
        flush(&mut current, &mut out);
    }
    out
}

fn flush(current: &mut String, out: &mut Vec<String>) {
    if !current.is_empty() {
        out.push(std::mem::take(current));
    }
}
