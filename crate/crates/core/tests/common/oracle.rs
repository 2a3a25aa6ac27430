//! Brute-force EM / F1 scorer written directly from the normalization
//! rules, sharing no code with the library:
//!
//! 1. lowercase
//! 2. delete every Unicode punctuation character and every ASCII
//!    punctuation character
//! 3. split on whitespace (Chinese: one token per non-space character)
//! 4. drop the language's articles (en: a, an, the; es: el, la, los, las,
//!    un, una, unos, unas; others: none)

use unicode_general_category::{get_general_category, GeneralCategory as G};

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            get_general_category(c),
            G::ConnectorPunctuation
                | G::DashPunctuation
                | G::OpenPunctuation
                | G::ClosePunctuation
                | G::InitialPunctuation
                | G::FinalPunctuation
                | G::OtherPunctuation
        )
}

fn articles(lang: &str) -> &'static [&'static str] {
    match lang {
        "en" => &["a", "an", "the"],
        "es" => &["el", "la", "los", "las", "un", "una", "unos", "unas"],
        _ => &[],
    }
}

pub fn tokens(text: &str, lang: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut stripped = String::new();
    for c in lowered.chars() {
        if !is_punct(c) {
            stripped.push(c);
        }
    }
    let raw: Vec<String> = if lang == "zh" {
        stripped.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_string()).collect()
    } else {
        stripped.split_whitespace().map(String::from).collect()
    };
    let arts = articles(lang);
    raw.into_iter().filter(|t| !arts.contains(&t.as_str())).collect()
}

pub fn em(pred: &str, gold: &str, lang: &str) -> f64 {
    if tokens(pred, lang).join(" ") == tokens(gold, lang).join(" ") {
        1.0
    } else {
        0.0
    }
}

/// Token F1 with O(n·m) greedy matching of equal tokens.
pub fn f1(pred: &str, gold: &str, lang: &str) -> f64 {
    let p = tokens(pred, lang);
    let g = tokens(gold, lang);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; g.len()];
    let mut common = 0usize;
    for pt in &p {
        for (j, gt) in g.iter().enumerate() {
            if !used[j] && gt == pt {
                used[j] = true;
                common += 1;
                break;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// (prediction, gold, lang) cases covering cases, punctuation, articles,
/// scripts and the empty cases.
pub fn cases() -> Vec<(&'static str, &'static str, &'static str)> {
    vec![
        ("a b c", "b c d", "hi"),
        ("the cat", "cat", "en"),
        ("The Eiffel Tower!", "eiffel tower", "en"),
        ("an apple a day", "the apple day", "en"),
        ("Paris, France", "Paris", "en"),
        ("", "", "en"),
        ("", "something", "en"),
        ("something", "", "en"),
        ("the", "", "en"),
        ("el perro", "perro", "es"),
        ("Los Ángeles", "los ángeles", "es"),
        ("unos libros y unas revistas", "libros revistas", "es"),
        ("¿Dónde? En Madrid.", "en madrid", "es"),
        ("la la la", "la", "es"),
        ("नई दिल्ली", "दिल्ली", "hi"),
        ("भारत की राजधानी।", "भारत की राजधानी", "hi"),
        ("एक दो तीन", "तीन दो एक", "hi"),
        ("北京大学", "北京", "zh"),
        ("北京，中国。", "中国北京", "zh"),
        ("上 海", "上海", "zh"),
        ("1,000 people", "1000 people", "en"),
        ("state-of-the-art", "state of the art", "en"),
        ("it's", "its", "en"),
        ("“quoted” text", "quoted text", "en"),
        ("cat cat dog", "cat dog dog", "en"),
        ("A", "a", "en"),
        ("THE END", "end", "en"),
        ("x_y", "xy", "de"),
        ("$100", "100", "en"),
        ("Ünïcödé Straße", "ünïcödé straße", "de"),
    ]
}
