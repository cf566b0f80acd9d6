//! Small helpers for second-valued timestamps.

/// Shortest decimal form of a timestamp: `12` rather than `12.0`, `12.5` as is.
pub fn format_seconds(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Whitespace-delimited word count; punctuation stays attached to words.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// First `limit` whitespace-delimited words, rejoined with single spaces.
pub fn truncate_words(text: &str, limit: usize) -> String {
    text.split_whitespace()
        .take(limit)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats() {
        assert_eq!(format_seconds(12.0), "12");
        assert_eq!(format_seconds(0.0), "0");
        assert_eq!(format_seconds(12.5), "12.5");
        assert_eq!(format_seconds(0.1 + 0.2), "0.30000000000000004");
    }

    #[test]
    fn words() {
        assert_eq!(word_count("  a b,  c. "), 3);
        assert_eq!(truncate_words("a  b c d", 2), "a b");
        assert_eq!(truncate_words("", 5), "");
    }
}
