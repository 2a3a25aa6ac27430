//! SQuAD v1.1 document format.
//!
//! Layout: `data` → articles → `paragraphs` → `{context, qas}` with each qa
//! holding `{id, question, answers: [{text, answer_start}]}`. On write, three
//! optional qa keys carry fields the format has no slot for: `lang`,
//! `source` (omitted for gold) and `gen_meta`. Readers that only know the
//! base format ignore them.

use serde::{Deserialize, Serialize};

use super::span::{char_find, char_len, char_slice};
use super::{Answer, CorpusError, Dataset, GenerationMeta, QaRecord, Source};

#[derive(Deserialize)]
struct Document {
    data: Option<Vec<Article>>,
}

#[derive(Deserialize)]
struct Article {
    paragraphs: Option<Vec<Paragraph>>,
}

#[derive(Deserialize)]
struct Paragraph {
    context: Option<String>,
    qas: Option<Vec<Qa>>,
}

#[derive(Deserialize)]
struct Qa {
    id: Option<serde_json::Value>,
    question: Option<String>,
    answers: Option<Vec<RawAnswer>>,
    lang: Option<String>,
    source: Option<Source>,
    gen_meta: Option<GenerationMeta>,
}

#[derive(Deserialize)]
struct RawAnswer {
    text: Option<String>,
    answer_start: Option<i64>,
}

#[derive(Serialize)]
struct OutDocument<'a> {
    version: &'static str,
    data: Vec<OutArticle<'a>>,
}

#[derive(Serialize)]
struct OutArticle<'a> {
    title: &'a str,
    paragraphs: Vec<OutParagraph<'a>>,
}

#[derive(Serialize)]
struct OutParagraph<'a> {
    context: &'a str,
    qas: Vec<OutQa<'a>>,
}

#[derive(Serialize)]
struct OutQa<'a> {
    id: &'a str,
    question: &'a str,
    answers: Vec<OutAnswer<'a>>,
    lang: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<Source>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gen_meta: Option<&'a GenerationMeta>,
}

#[derive(Serialize)]
struct OutAnswer<'a> {
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    answer_start: Option<usize>,
}

fn missing(what: &str, at: &str) -> CorpusError {
    CorpusError::Schema(format!("missing `{what}` in {at}"))
}

fn load(bytes: &[u8]) -> Result<Vec<Article>, CorpusError> {
    let doc: Document = serde_json::from_slice(bytes).map_err(|e| CorpusError::Schema(e.to_string()))?;
    doc.data.ok_or_else(|| missing("data", "document"))
}

/// Parses a SQuAD-v1.1 document. Records without a `lang` key get
/// `default_lang`.
///
/// A gold `answer_start` that does not align with its text is relocated to
/// the first occurrence of the text in the context; if the text does not
/// occur at all the whole parse fails with [`CorpusError::Span`].
pub fn parse_squad(bytes: &[u8], default_lang: &str, name: &str) -> Result<Dataset, CorpusError> {
    let mut records = Vec::new();
    for (a_idx, article) in load(bytes)?.into_iter().enumerate() {
        let paragraphs = article
            .paragraphs
            .ok_or_else(|| missing("paragraphs", &format!("article {a_idx}")))?;
        for (p_idx, para) in paragraphs.into_iter().enumerate() {
            let at = format!("article {a_idx} paragraph {p_idx}");
            let context = para.context.ok_or_else(|| missing("context", &at))?;
            let qas = para.qas.ok_or_else(|| missing("qas", &at))?;
            for qa in qas {
                records.push(parse_qa(qa, &context, default_lang, &at)?);
            }
        }
    }
    let source = format!("squad-v1.1:{name}");
    Dataset::new(name, source, records)
}

fn parse_qa(qa: Qa, context: &str, default_lang: &str, at: &str) -> Result<QaRecord, CorpusError> {
    let id = match qa.id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => return Err(CorpusError::Schema(format!("non-scalar qa id in {at}"))),
        None => return Err(missing("id", at)),
    };
    let at = format!("qa `{id}`");
    let question = qa.question.ok_or_else(|| missing("question", &at))?;
    let raw_answers = qa.answers.ok_or_else(|| missing("answers", &at))?;
    let source = qa.source.unwrap_or(Source::Gold);

    let mut answers = Vec::with_capacity(raw_answers.len());
    for raw in raw_answers {
        let text = raw.text.ok_or_else(|| missing("text", &at))?;
        let start = match raw.answer_start {
            Some(s) => Some(place_answer(context, &text, s, &id)?),
            None if source == Source::Synthetic => None,
            None => return Err(missing("answer_start", &at)),
        };
        answers.push(Answer { text, start });
    }

    let record = QaRecord {
        id,
        lang: qa.lang.unwrap_or_else(|| default_lang.to_string()),
        context: context.to_string(),
        question,
        answers,
        source,
        gen_meta: qa.gen_meta,
    };
    record.check().map_err(|e| match e {
        CorpusError::InvalidRecord { id, message } => CorpusError::Schema(format!("qa `{id}`: {message}")),
        other => other,
    })?;
    Ok(record)
}

fn place_answer(context: &str, text: &str, start: i64, id: &str) -> Result<usize, CorpusError> {
    if let Ok(s) = usize::try_from(start) {
        if char_slice(context, s, char_len(text)) == Some(text) {
            return Ok(s);
        }
    }
    match char_find(context, text) {
        Some(found) => {
            log::warn!("qa `{id}`: answer_start {start} misaligned, relocated to {found}");
            Ok(found)
        }
        None => Err(CorpusError::Span { id: id.to_string() }),
    }
}

/// Writes a dataset back to SQuAD-v1.1 shape. Consecutive records sharing a
/// context become one paragraph; the whole dataset is one article.
pub fn serialize_squad(ds: &Dataset) -> Vec<u8> {
    let mut paragraphs: Vec<OutParagraph<'_>> = Vec::new();
    for r in ds.records() {
        let qa = OutQa {
            id: &r.id,
            question: &r.question,
            answers: r
                .answers
                .iter()
                .map(|a| OutAnswer {
                    text: &a.text,
                    answer_start: a.start,
                })
                .collect(),
            lang: &r.lang,
            source: (r.source != Source::Gold).then_some(r.source),
            gen_meta: r.gen_meta.as_ref(),
        };
        match paragraphs.last_mut() {
            Some(p) if p.context == r.context => p.qas.push(qa),
            _ => paragraphs.push(OutParagraph {
                context: &r.context,
                qas: vec![qa],
            }),
        }
    }
    let data = if paragraphs.is_empty() {
        Vec::new()
    } else {
        vec![OutArticle {
            title: &ds.name,
            paragraphs,
        }]
    };
    serde_json::to_vec_pretty(&OutDocument { version: "1.1", data }).expect("serialization to memory is infallible")
}

/// An unlabeled context to generate from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextItem {
    pub id: String,
    pub lang: String,
    pub text: String,
}

/// Distinct paragraph contexts of a SQuAD-shaped document, in first-seen
/// order, with ids `<lang>-c<index>`. `qas` may be absent or empty.
pub fn parse_squad_contexts(bytes: &[u8], lang: &str) -> Result<Vec<ContextItem>, CorpusError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (a_idx, article) in load(bytes)?.into_iter().enumerate() {
        let paragraphs = article
            .paragraphs
            .ok_or_else(|| missing("paragraphs", &format!("article {a_idx}")))?;
        for (p_idx, para) in paragraphs.into_iter().enumerate() {
            let context = para
                .context
                .ok_or_else(|| missing("context", &format!("article {a_idx} paragraph {p_idx}")))?;
            if context.trim().is_empty() || !seen.insert(context.clone()) {
                continue;
            }
            out.push(ContextItem {
                id: format!("{lang}-c{:05}", out.len()),
                lang: lang.to_string(),
                text: context,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(answer_start: i64, answer: &str) -> String {
        serde_json::json!({
            "version": "1.1",
            "data": [{
                "title": "t",
                "paragraphs": [{
                    "context": "Juan vive en Madrid desde 2010.",
                    "qas": [{
                        "id": "q1",
                        "question": "¿Dónde vive Juan?",
                        "answers": [{"text": answer, "answer_start": answer_start}]
                    }]
                }]
            }]
        })
        .to_string()
    }

    #[test]
    fn minimal_document() {
        let ds = parse_squad(doc(13, "Madrid").as_bytes(), "es", "mini").unwrap();
        assert_eq!(ds.len(), 1);
        let r = &ds.records()[0];
        assert_eq!(r.id, "q1");
        assert_eq!(r.lang, "es");
        assert_eq!(r.answers[0].start, Some(13));
        assert_eq!(r.source, Source::Gold);
    }

    #[test]
    fn drifted_offset_is_repaired_to_first_occurrence() {
        // "Madrid" starts at 13; the file says 15.
        let ds = parse_squad(doc(15, "Madrid").as_bytes(), "es", "mini").unwrap();
        let context = &ds.records()[0].context;
        let expected = char_find(context, "Madrid").unwrap();
        assert_eq!(expected, 13);
        assert_eq!(ds.records()[0].answers[0].start, Some(expected));
    }

    #[test]
    fn absent_answer_names_the_qa() {
        let err = parse_squad(doc(0, "Barcelona").as_bytes(), "es", "mini").unwrap_err();
        assert!(matches!(err, CorpusError::Span { ref id } if id == "q1"), "{err}");
    }

    #[test]
    fn missing_keys_are_schema_errors() {
        let no_data = br#"{"version": "1.1"}"#;
        assert!(matches!(parse_squad(no_data, "en", "x"), Err(CorpusError::Schema(_))));
        let no_qas = br#"{"data": [{"paragraphs": [{"context": "c"}]}]}"#;
        let err = parse_squad(no_qas, "en", "x").unwrap_err();
        assert!(err.to_string().contains("qas"), "{err}");
        let no_question = br#"{"data": [{"paragraphs": [{"context": "c", "qas": [{"id": "a", "answers": []}]}]}]}"#;
        let err = parse_squad(no_question, "en", "x").unwrap_err();
        assert!(err.to_string().contains("question"), "{err}");
    }

    #[test]
    fn empty_dataset_serializes_to_empty_data() {
        let bytes = serialize_squad(&Dataset::empty("none"));
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["data"], serde_json::json!([]));
        assert!(parse_squad(&bytes, "en", "none").unwrap().is_empty());
    }

    #[test]
    fn multi_language_round_trip_with_stable_checksum() {
        let records = vec![
            QaRecord::gold("a", "es", "Vive en Madrid.", "¿Dónde?", vec![Answer::new("Madrid", 8)]),
            QaRecord::gold("b", "es", "Vive en Madrid.", "¿Quién vive?", vec![Answer::new("Vive", 0)]),
            QaRecord::gold("c", "hi", "वह दिल्ली में रहता है।", "वह कहाँ रहता है?", vec![Answer::new("दिल्ली", 3)]),
        ];
        let ds = Dataset::new("mixed", "test", records).unwrap();
        let first = serialize_squad(&ds);
        let back = parse_squad(&first, "en", "mixed").unwrap();
        assert_eq!(back.records(), ds.records());
        let second = serialize_squad(&back);
        assert_eq!(ds.checksum(), back.checksum());
        assert_eq!(
            parse_squad(&second, "en", "mixed").unwrap().checksum(),
            ds.checksum()
        );
    }

    #[test]
    fn contexts_are_distinct_and_ordered() {
        let bytes = br#"{"data": [{"paragraphs": [
            {"context": "uno", "qas": []},
            {"context": "dos"},
            {"context": "uno", "qas": []}
        ]}]}"#;
        let ctx = parse_squad_contexts(bytes, "es").unwrap();
        assert_eq!(ctx.len(), 2);
        assert_eq!(ctx[0].id, "es-c00000");
        assert_eq!(ctx[1].text, "dos");
    }
}
