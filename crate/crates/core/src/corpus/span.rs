//! Character-offset helpers. Rust strings index by byte; QA offsets index by
//! character.

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring of `s` covering `len` characters starting at character `start`.
pub fn char_slice(s: &str, start: usize, len: usize) -> Option<&str> {
    let mut indices = s.char_indices().map(|(b, _)| b).chain(std::iter::once(s.len()));
    let begin = indices.nth(start)?;
    if len == 0 {
        return Some(&s[begin..begin]);
    }
    let end = indices.nth(len - 1)?;
    Some(&s[begin..end])
}

/// Character offset of the first occurrence of `needle` in `haystack`.
pub fn char_find(haystack: &str, needle: &str) -> Option<usize> {
    let byte = haystack.find(needle)?;
    Some(haystack[..byte].chars().count())
}
