//! `{name}` placeholder substitution for the shipped prompt templates.

use crate::dataset::sha256_hex;

pub const TEST_PROMPT: &str = include_str!("../templates/test_prompt.txt");

/// Replaces every `{key}` whose key appears in `vars`, in one pass, so
/// substituted text is never expanded again. Other braces are kept.
pub fn fill(text: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let key_len = tail.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(tail.len());
        let key = &tail[..key_len];
        match vars.iter().find(|(k, _)| *k == key) {
            Some((_, v)) if tail[key_len..].starts_with('}') => {
                out.push_str(v);
                rest = &tail[key_len + 1..];
            }
            _ => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Placeholder names used in `text`, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut names = Vec::new();
    for (i, _) in text.match_indices('{') {
        let tail = &text[i + 1..];
        let n = tail.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(tail.len());
        if n > 0 && tail[n..].starts_with('}') && !names.iter().any(|s: &String| s == &tail[..n]) {
            names.push(tail[..n].to_string());
        }
    }
    names
}

pub fn template_hash(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        let out = fill("a {x} b {y} {z}", &[("x", "{y}"), ("y", "2")]);
        assert_eq!(out, "a {y} b 2 {z}");
    }

    #[test]
    fn keeps_unmatched_braces() {
        assert_eq!(fill("{ {x", &[("x", "1")]), "{ {x");
        assert_eq!(placeholders("{a} {b} {a} {c"), vec!["a", "b"]);
    }
}
