//! Single-pass `{name}` placeholder substitution.
//!
//! Values are inserted verbatim and never re-scanned, so a field that itself
//! contains `{best_answer}` comes out unchanged. Brace sequences that are not
//! a bare identifier (for example the JSON skeleton `{ "a": 1 }`) are left
//! alone.

/// Replace every `{key}` in `template` whose key appears in `values`.
///
/// Panics in debug builds if a known-looking placeholder has no value; the
/// prompt templates in this crate are fixed, so that is a programming error.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_identifier(&after[..close]) => {
                let key = &after[..close];
                match values.iter().find(|(k, _)| *k == key) {
                    Some((_, value)) => out.push_str(value),
                    None => {
                        debug_assert!(false, "no value for placeholder `{key}`");
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Placeholders (`{identifier}`) still present in `text`.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        if let Some(close) = after.find('}') {
            if is_identifier(&after[..close]) {
                found.push(after[..close].to_string());
            }
        }
        rest = after;
    }
    found
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}
