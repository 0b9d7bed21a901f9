//! Rule-based microblog tokenizer.
//!
//! Text is split on whitespace. Each chunk then sheds its leading and
//! trailing punctuation runs as separate tokens. What remains is mapped to
//! a generic tag when it is a link (`http://`, `https://`), a hashtag
//! (`#word`) or a mention (`@user`), and lower-cased otherwise. Punctuation
//! inside a chunk (`don't`, `gun-control`) is kept as part of the word.

pub const HASH_TAG: &str = "HASH";
pub const MENTION_TAG: &str = "MENT";
pub const URL_TAG: &str = "URL";

const URL_SCHEMES: [&str; 2] = ["http://", "https://"];

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace() && c != '_'
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// True when every character of the token is punctuation.
pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct)
}

fn starts_with_url(s: &str) -> bool {
    let lower = s.to_ascii_lowercase();
    URL_SCHEMES.iter().any(|scheme| lower.starts_with(scheme))
}

/// Whether a '#' or '@' at the start of `s` introduces a tag.
fn opens_tag(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('#') | Some('@')) && chars.next().is_some_and(is_word_char)
}

fn push_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut rest = chunk;

    // Leading punctuation run, stopping at a tag opener or a link.
    let lead_end = rest
        .char_indices()
        .find(|&(i, c)| !is_punct(c) || opens_tag(&rest[i..]) || starts_with_url(&rest[i..]))
        .map_or(rest.len(), |(i, _)| i);
    if lead_end > 0 {
        out.push(rest[..lead_end].to_string());
        rest = &rest[lead_end..];
    }
    if rest.is_empty() {
        return;
    }

    // Trailing punctuation run. Links keep their internal slashes but still
    // shed sentence punctuation such as a final period.
    let trail_start = rest
        .char_indices()
        .rev()
        .take_while(|&(_, c)| is_punct(c))
        .last()
        .map_or(rest.len(), |(i, _)| i);
    let (core, trailing) = if starts_with_url(rest) {
        let cut = rest
            .char_indices()
            .rev()
            .take_while(|&(_, c)| matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | ')' | '"' | '\''))
            .last()
            .map_or(rest.len(), |(i, _)| i);
        rest.split_at(cut)
    } else {
        rest.split_at(trail_start)
    };

    if core.is_empty() {
        out.push(trailing.to_string());
        return;
    }
    if starts_with_url(core) {
        out.push(URL_TAG.to_string());
    } else if core.starts_with('#') && opens_tag(core) {
        out.push(HASH_TAG.to_string());
    } else if core.starts_with('@') && opens_tag(core) {
        out.push(MENTION_TAG.to_string());
    } else {
        out.push(core.to_lowercase());
    }
    if !trailing.is_empty() {
        out.push(trailing.to_string());
    }
}

/// Tokenize and normalize a message.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        push_chunk(chunk, &mut out);
    }
    out
}

/// Raw hashtags of a message, lower-cased and keeping the leading '#'.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    let mut tags = Vec::new();
    for chunk in text.split_whitespace() {
        let start = chunk
            .char_indices()
            .find(|&(i, _)| opens_tag(&chunk[i..]) && chunk[i..].starts_with('#'));
        if let Some((i, _)) = start {
            let body: String = chunk[i + 1..].chars().take_while(|&c| is_word_char(c)).collect();
            tags.push(format!("#{}", body.to_lowercase()));
        }
    }
    tags
}

/// Heuristic language flag: at least `min_fraction` of the alphabetic
/// characters are ASCII letters.
pub fn is_mostly_ascii(text: &str, min_fraction: f64) -> bool {
    let (ascii, total) = text
        .chars()
        .filter(|c| c.is_alphabetic())
        .fold((0usize, 0usize), |(a, t), c| (a + usize::from(c.is_ascii()), t + 1));
    total == 0 || ascii as f64 >= min_fraction * total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        normalize_tokens(s)
    }

    #[test]
    fn tags_links_hashtags_mentions() {
        assert_eq!(
            toks("Check https://t.co/x #gun @bob"),
            vec!["check", "URL", "HASH", "MENT"]
        );
    }

    #[test]
    fn keeps_punctuation_and_lowercases() {
        assert_eq!(toks("Gun Control!"), vec!["gun", "control", "!"]);
    }

    #[test]
    fn empty_text() {
        assert!(toks("").is_empty());
        assert!(toks("   \n\t").is_empty());
    }

    #[test]
    fn wrapped_tags_and_trailing_period_on_link() {
        assert_eq!(toks("(#Gun)"), vec!["(", "HASH", ")"]);
        assert_eq!(toks("see http://a.b/c."), vec!["see", "URL", "."]);
        assert_eq!(toks("@amy: really?!"), vec!["MENT", ":", "really", "?!"]);
    }

    #[test]
    fn inner_punctuation_stays_in_word() {
        assert_eq!(toks("Don't gun-control"), vec!["don't", "gun-control"]);
        assert_eq!(toks("... :/"), vec!["...", ":/"]);
        assert_eq!(toks("# @"), vec!["#", "@"]);
    }

    #[test]
    fn hashtag_extraction() {
        assert_eq!(
            extract_hashtags("Vote #Trump! and #DonaldTrump, no # here"),
            vec!["#trump", "#donaldtrump"]
        );
    }

    #[test]
    fn ascii_heuristic() {
        assert!(is_mostly_ascii("hello world", 0.9));
        assert!(!is_mostly_ascii("привет мир", 0.9));
        assert!(is_mostly_ascii("123 !!", 0.9));
    }
}
