//! Closed vocabulary for the synthetic sentences.

pub const WORDS: [&str; 22] = [
    "<unk>",
    "the",
    "moving",
    "red",
    "green",
    "blue",
    "yellow",
    "cyan",
    "magenta",
    "orange",
    "white",
    "black",
    "square",
    "rectangle",
    "bar",
    "left",
    "right",
    "up",
    "down",
    "nowhere",
    "a",
    "object",
];

pub const UNK: usize = 0;

pub fn size() -> usize {
    WORDS.len()
}

/// Lower-cased whitespace tokens; unknown words map to [`UNK`]. Never empty.
pub fn tokenize(sentence: &str) -> Vec<usize> {
    let ids: Vec<usize> = sentence
        .split_whitespace()
        .map(|w| {
            let w = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            WORDS.iter().position(|&v| v == w).unwrap_or(UNK)
        })
        .collect();
    if ids.is_empty() {
        vec![UNK]
    } else {
        ids
    }
}
