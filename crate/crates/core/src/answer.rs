//! Rendering analysis results as answer text, and the scoring comparison.

use serde_json::Value;

/// Renders a JSON answer value.
///
/// Integers print verbatim, other numbers with at most two fractional
/// digits (trailing zeros trimmed), lists one element per line, and maps as
/// `key : value` pairs joined by `, `.
pub fn render_answer(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::String(s) => s.clone(),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => i.to_string(),
            (_, Some(u), _) => u.to_string(),
            (_, _, Some(f)) => render_decimal(f),
            _ => n.to_string(),
        },
        Value::Array(items) => items.iter().map(render_answer).collect::<Vec<_>>().join("\n"),
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| format!("{k} : {}", render_answer(v)))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

pub fn render_decimal(value: f64) -> String {
    let text = format!("{value:.2}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if text == "-0" {
        "0".to_string()
    } else {
        text.to_string()
    }
}

/// Trim, case-fold and collapse internal whitespace runs (line breaks
/// included) to one space.
pub fn normalize_answer(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Normalized equality; two answers that both parse as numbers compare
/// within 1e-9.
pub fn answers_match(got: &str, expected: &str) -> bool {
    let (a, b) = (normalize_answer(got), normalize_answer(expected));
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-9,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn scalars() {
        assert_eq!(render_answer(&json!(42)), "42");
        assert_eq!(render_answer(&json!(12.5)), "12.5");
        assert_eq!(render_answer(&json!(12.345678)), "12.35");
        assert_eq!(render_answer(&json!(3.0)), "3");
        assert_eq!(render_answer(&json!(-0.001)), "0");
        assert_eq!(render_answer(&json!("Administrator")), "Administrator");
        assert_eq!(render_answer(&Value::Null), "");
    }

    #[test]
    fn lists_and_maps() {
        assert_eq!(render_answer(&json!(["A", "B"])), "A\nB");
        assert_eq!(
            render_answer(&json!({"<50": 0, "50-99": 0, "100+": 0})),
            "<50 : 0, 50-99 : 0, 100+ : 0"
        );
    }

    #[test]
    fn matching() {
        assert!(answers_match("  Hello\n  World ", "hello world"));
        assert!(answers_match("12.50", "12.5"));
        assert!(!answers_match("12.51", "12.5"));
        assert!(!answers_match("A\nB", "B\nA"));
    }
}
