/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Canonical answer string: lowercased tokens joined by single spaces.
pub fn normalize_answer(text: &str) -> String {
    tokenize(text).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_case_and_spacing() {
        assert_eq!(normalize_answer("  Green   Apple "), "green apple");
        assert_eq!(tokenize("What IS\tthis"), vec!["what", "is", "this"]);
        assert_eq!(normalize_answer("   "), "");
    }
}
