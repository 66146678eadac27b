//! Line-oriented dataset files: a `{"format":"nuer-v1"}` header followed by
//! one JSON record per line.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use super::{Corpus, EntityLabel, Sentence};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "nuer-v1";

const RECORD_FIELDS: &[&str] = &[
    "id",
    "tokens",
    "labels",
    "question",
    "answer_span",
    "mask_index",
    "mask_entity",
    "mask_answer",
    "confidences",
];

pub fn save_dataset(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_dataset(corpus)).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(corpus: &Corpus) -> String {
    let mut header = Map::new();
    header.insert("format".into(), DATASET_FORMAT.into());
    if !corpus.provenance.is_empty() {
        header.insert("provenance".into(), corpus.provenance.clone().into());
    }
    let mut out = Value::Object(header).to_string();
    out.push('\n');
    for s in &corpus.sentences {
        out.push_str(&record_to_json(s).to_string());
        out.push('\n');
    }
    out
}

fn record_to_json(s: &Sentence) -> Value {
    let strings = |v: &[String]| Value::Array(v.iter().map(|t| Value::from(t.as_str())).collect());
    let mut m = Map::new();
    m.insert("id".into(), s.id.as_str().into());
    m.insert("tokens".into(), strings(&s.tokens));
    m.insert(
        "labels".into(),
        Value::Array(s.labels.iter().map(|l| l.as_str().into()).collect()),
    );
    if let Some(q) = &s.question {
        m.insert("question".into(), strings(q));
    }
    if let Some((a, b)) = s.answer_span {
        m.insert("answer_span".into(), Value::Array(vec![a.into(), b.into()]));
    }
    if let Some(i) = s.mask_index {
        m.insert("mask_index".into(), i.into());
    }
    if let Some(e) = s.mask_entity {
        m.insert("mask_entity".into(), e.as_str().into());
    }
    if let Some(a) = &s.mask_answer {
        m.insert("mask_answer".into(), a.as_str().into());
    }
    if let Some(c) = &s.confidences {
        m.insert("confidences".into(), Value::Array(c.iter().map(|&x| x.into()).collect()));
    }
    Value::Object(m)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// Parses dataset text; `source` names the input in error messages.
pub fn parse_dataset(text: &str, source: &str) -> Result<Corpus> {
    let err = |line: usize, field: &str, msg: String| Error::Schema {
        path: source.to_string(),
        line,
        field: field.to_string(),
        msg,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines
        .next()
        .ok_or_else(|| err(1, "format", "missing header line".into()))?;
    let header: Value =
        serde_json::from_str(first).map_err(|e| err(1, "format", format!("bad header: {e}")))?;
    let header = header
        .as_object()
        .ok_or_else(|| err(1, "format", "header is not an object".into()))?;
    for k in header.keys() {
        if k != "format" && k != "provenance" {
            return Err(err(1, k, "unknown header field".into()));
        }
    }
    match header.get("format").and_then(Value::as_str) {
        Some(DATASET_FORMAT) => {}
        Some(other) => {
            return Err(Error::Version {
                expected: DATASET_FORMAT.into(),
                found: other.into(),
            })
        }
        None => return Err(err(1, "format", "missing format tag".into())),
    }
    let provenance = match header.get("provenance") {
        None => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(err(1, "provenance", "expected string".into())),
    };

    let mut sentences = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_record(line).map_err(|(f, m)| err(lineno, f, m))?;
        if !ids.insert(s.id.clone()) {
            return Err(err(lineno, "id", format!("duplicate id `{}`", s.id)));
        }
        sentences.push(s);
    }
    Ok(Corpus {
        sentences,
        provenance,
    })
}

type FieldErr = (&'static str, String);

fn parse_record(line: &str) -> std::result::Result<Sentence, FieldErr> {
    let v: Value = serde_json::from_str(line).map_err(|e| ("record", format!("invalid JSON: {e}")))?;
    let obj = v.as_object().ok_or(("record", "not a JSON object".to_string()))?;
    for k in obj.keys() {
        if !RECORD_FIELDS.contains(&k.as_str()) {
            return Err(("record", format!("unknown field `{k}`")));
        }
    }

    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(("id", "expected string".into())),
        None => return Err(("id", "missing".into())),
    };
    let tokens = string_array(obj.get("tokens"), "tokens")?.ok_or(("tokens", "missing".to_string()))?;
    // unannotated text: every token is O
    let labels = match string_array(obj.get("labels"), "labels")? {
        Some(ls) => ls
            .iter()
            .map(|l| l.parse::<EntityLabel>().map_err(|_| ("labels", format!("unknown entity `{l}`"))))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        None => vec![EntityLabel::Other; tokens.len()],
    };
    let question = string_array(obj.get("question"), "question")?;
    let answer_span = match obj.get("answer_span") {
        None => None,
        Some(Value::Array(a)) if a.len() == 2 => {
            let s = index(&a[0], "answer_span")?;
            let e = index(&a[1], "answer_span")?;
            Some((s, e))
        }
        Some(_) => return Err(("answer_span", "expected [start, end]".into())),
    };
    let mask_index = obj.get("mask_index").map(|v| index(v, "mask_index")).transpose()?;
    let mask_entity = match obj.get("mask_entity") {
        None => None,
        Some(Value::String(s)) => Some(
            s.parse::<EntityLabel>()
                .map_err(|_| ("mask_entity", format!("unknown entity `{s}`")))?,
        ),
        Some(_) => return Err(("mask_entity", "expected string".into())),
    };
    let mask_answer = match obj.get("mask_answer") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(("mask_answer", "expected string".into())),
    };
    let confidences = match obj.get("confidences") {
        None => None,
        Some(Value::Array(a)) => Some(
            a.iter()
                .map(|x| x.as_f64().ok_or(("confidences", "expected numbers".to_string())))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err(("confidences", "expected array".into())),
    };

    let s = Sentence {
        id,
        tokens,
        labels,
        question,
        answer_span,
        mask_index,
        mask_entity,
        mask_answer,
        confidences,
    };
    s.check()?;
    Ok(s)
}

fn string_array(v: Option<&Value>, field: &'static str) -> std::result::Result<Option<Vec<String>>, FieldErr> {
    match v {
        None => Ok(None),
        Some(Value::Array(a)) => a
            .iter()
            .map(|x| {
                x.as_str()
                    .map(String::from)
                    .ok_or((field, "expected array of strings".to_string()))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some),
        Some(_) => Err((field, "expected array of strings".into())),
    }
}

fn index(v: &Value, field: &'static str) -> std::result::Result<usize, FieldErr> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or((field, "expected nonnegative integer".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"format":"nuer-v1"}
{"id":"s1","tokens":["in","2003"],"labels":["O","YEAR"],"mask_index":1,"mask_entity":"YEAR","mask_answer":"2003"}
"#;

    fn schema_err(text: &str) -> (usize, String) {
        match parse_dataset(text, "t").unwrap_err() {
            Error::Schema { line, field, .. } => (line, field),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn parses_good_file() {
        let c = parse_dataset(GOOD, "t").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].labels[1], EntityLabel::Year);
        assert_eq!(parse_dataset(&write_dataset(&c), "t").unwrap(), c);
    }

    #[test]
    fn short_labels_error_names_line() {
        let text = "{\"format\":\"nuer-v1\"}\n{\"id\":\"a\",\"tokens\":[\"x\"],\"labels\":[\"O\"]}\n{\"id\":\"b\",\"tokens\":[\"in\",\"2003\"],\"labels\":[\"O\"]}\n";
        assert_eq!(schema_err(text), (3, "labels".into()));
    }

    #[test]
    fn lowercase_label_rejected() {
        let text = GOOD.replace("\"YEAR\"]", "\"year\"]");
        assert_eq!(schema_err(&text), (2, "labels".into()));
    }

    #[test]
    fn unknown_field_and_header() {
        let text = GOOD.replace("\"id\":\"s1\"", "\"id\":\"s1\",\"extra\":1");
        assert_eq!(schema_err(&text), (2, "record".into()));
        assert!(parse_dataset("{\"id\":\"a\"}\n", "t").is_err());
        assert!(matches!(
            parse_dataset("{\"format\":\"nuer-v0\"}\n", "t"),
            Err(Error::Version { .. })
        ));
        assert!(parse_dataset("", "t").is_err());
    }
}
