//! Post-processing of free-form LLM replies into template strings.

use super::LlmOptError;

const CHATTER_PREFIXES: &[&str] = &[
    "sure",
    "here are",
    "here is",
    "here's",
    "certainly",
    "of course",
    "i hope",
    "i have",
    "these templates",
    "note:",
    "note that",
    "absolutely",
    "okay",
    "ok,",
];

const LABEL_PREFIXES: &[&str] = &["templates", "template", "prompts", "prompt", "new template"];

const QUOTES: &[(char, char)] = &[('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('`', '`')];

/// Words counted against the cap; a `{}` placeholder does not count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace()
        .filter(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).len() > 0)
        .count()
}

fn strip_numbering(line: &str) -> &str {
    let line = line.trim_start();
    for bullet in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        for sep in [".", ")", ":", "-"] {
            if let Some(after) = rest.strip_prefix(sep) {
                return after.trim_start();
            }
        }
    }
    line
}

fn strip_label(line: &str) -> &str {
    let lower = line.to_ascii_lowercase();
    for label in LABEL_PREFIXES {
        if let Some(rest) = lower.strip_prefix(label) {
            // "Template 2:" style labels carry an index
            let idx = rest.trim_start().chars().take_while(|c| c.is_ascii_digit()).count();
            let rest = rest.trim_start()[idx..].trim_start();
            if rest.starts_with(':') {
                let consumed = lower.len() - rest.len() + 1;
                return line[consumed..].trim_start();
            }
        }
    }
    line
}

fn strip_markup(line: &str) -> &str {
    line.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace())
}

/// If the line opens with a quote, keep only the quoted span.
fn unquote(line: &str) -> &str {
    for &(open, close) in QUOTES {
        if let Some(rest) = line.strip_prefix(open) {
            return match rest.find(close) {
                Some(end) => &rest[..end],
                None => rest,
            };
        }
    }
    line
}

fn is_chatter(line: &str) -> bool {
    let lower = line.to_lowercase();
    lower.ends_with(':')
        || lower.starts_with("loss:")
        || lower.starts_with("accuracy:")
        || CHATTER_PREFIXES.iter().any(|p| lower.starts_with(p))
}

fn clean_line(raw: &str) -> Option<String> {
    let line = strip_markup(raw.trim());
    if line.is_empty() || is_chatter(line) {
        return None;
    }
    let line = strip_markup(strip_numbering(line));
    let line = strip_markup(strip_label(line));
    let line = unquote(line).trim();
    if line.is_empty() || is_chatter(line) {
        return None;
    }
    Some(line.to_string())
}

/// Extracts up to `n_expected` distinct templates of at most `max_words` words,
/// in order of appearance.
pub fn parse_response(
    text: &str,
    n_expected: usize,
    max_words: usize,
) -> Result<Vec<String>, LlmOptError> {
    let mut out: Vec<String> = Vec::new();
    for raw in text.lines() {
        if out.len() == n_expected {
            break;
        }
        let Some(line) = clean_line(raw) else { continue };
        let words = word_count(&line);
        if words == 0 || words > max_words {
            continue;
        }
        if out.iter().any(|t| t.eq_ignore_ascii_case(&line)) {
            continue;
        }
        out.push(line);
    }
    if out.is_empty() {
        return Err(LlmOptError::NoTemplatesParsed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numbered_list() {
        let out =
            parse_response("1. a clear satellite image of\n2. a detailed aerial view of", 3, 10)
                .unwrap();
        assert_eq!(out, vec!["a clear satellite image of", "a detailed aerial view of"]);
    }

    #[test]
    fn word_cap() {
        let long = "one two three four five six seven eight nine ten eleven";
        let out = parse_response(&format!("{long}\na photo of dogs"), 3, 10).unwrap();
        assert_eq!(out, vec!["a photo of dogs"]);
    }

    #[test]
    fn chatty_preamble_and_quotes() {
        let out = parse_response("Sure! Here are templates:\n\"a crisp photo of\"", 3, 10).unwrap();
        assert_eq!(out, vec!["a crisp photo of"]);
    }

    #[test]
    fn placeholder_not_counted() {
        assert_eq!(word_count("a photo of {}."), 3);
        let out = parse_response("a b c {}", 3, 3).unwrap();
        assert_eq!(out, vec!["a b c {}"]);
    }

    #[test]
    fn label_prefixes() {
        assert_eq!(strip_label("Template 2: a photo"), "a photo");
        assert_eq!(strip_label("Templates: a photo"), "a photo");
        assert_eq!(strip_label("templates are great"), "templates are great");
    }

    #[test]
    fn caps_to_n_expected() {
        let out = parse_response("a\nb\nc\nd", 2, 10).unwrap();
        assert_eq!(out, vec!["a", "b"]);
    }

    #[test]
    fn nothing_usable() {
        assert!(matches!(parse_response("", 3, 10), Err(LlmOptError::NoTemplatesParsed)));
        assert!(matches!(
            parse_response("Sure, here you go:\n\n", 3, 10),
            Err(LlmOptError::NoTemplatesParsed)
        ));
    }

    proptest! {
        #[test]
        fn clean_lines_round_trip(
            lines in prop::collection::vec(
                prop::collection::vec("[a-z]{1,8}", 1..6).prop_map(|w| w.join(" ")),
                1..5,
            )
        ) {
            let mut uniq: Vec<String> = Vec::new();
            for l in lines {
                let blocked = CHATTER_PREFIXES.iter().chain(LABEL_PREFIXES).any(|p| l.starts_with(p));
                if !blocked && !uniq.contains(&l) {
                    uniq.push(l);
                }
            }
            prop_assume!(!uniq.is_empty());
            let parsed = parse_response(&uniq.join("\n"), uniq.len(), 10).unwrap();
            prop_assert_eq!(parsed, uniq);
        }
    }
}
