use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use super::{Corpus, Document};
use crate::error::{Error, Result};

const KNOWN_KEYS: [&str; 7] = [
    "id",
    "text",
    "source_label",
    "role",
    "dataset",
    "split",
    "prompt_id",
];
const REQUIRED_KEYS: [&str; 6] = ["id", "text", "source_label", "role", "dataset", "split"];

/// What to do with keys outside the document schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownKeys {
    #[default]
    Error,
    Warn,
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    load_jsonl_with(path, UnknownKeys::Error)
}

pub fn load_jsonl_with(path: impl AsRef<Path>, unknown: UnknownKeys) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path, unknown)
}

/// Parses JSONL text; `origin` is only used in error messages.
pub fn parse_jsonl(text: &str, origin: &Path, unknown: UnknownKeys) -> Result<Corpus> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut docs = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut obj: Map<String, Value> = match serde_json::from_str(raw) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(err(line, "expected a JSON object".into())),
            Err(e) => return Err(err(line, format!("malformed JSON: {e}"))),
        };
        for key in REQUIRED_KEYS {
            if !obj.contains_key(key) {
                return Err(err(line, format!("missing required field {key:?}")));
            }
        }
        let extra: Vec<String> = obj
            .keys()
            .filter(|k| !KNOWN_KEYS.contains(&k.as_str()))
            .cloned()
            .collect();
        if !extra.is_empty() {
            match unknown {
                UnknownKeys::Error => {
                    return Err(err(line, format!("unknown field(s) {extra:?}")));
                }
                UnknownKeys::Warn => {
                    log::warn!("{}:{line}: ignoring unknown field(s) {extra:?}", origin.display());
                    for k in &extra {
                        obj.remove(k);
                    }
                }
            }
        }
        let doc: Document =
            serde_json::from_value(Value::Object(obj)).map_err(|e| err(line, e.to_string()))?;
        if doc.text.is_empty() {
            return Err(err(line, "field \"text\" is empty".into()));
        }
        if !ids.insert(doc.id.clone()) {
            return Err(err(line, format!("duplicate id {:?}", doc.id)));
        }
        docs.push(doc);
    }
    Corpus::new(docs)
}

pub fn save_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for d in corpus {
        serde_json::to_writer(&mut out, d)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Role, Split};

    const TWO: &str = concat!(
        r#"{"id":"a","text":"Cats sleep.","source_label":"m1","role":"teacher","dataset":"d","split":"train"}"#,
        "\n",
        r#"{"id":"b","text":"Dogs bark.","source_label":"m2","role":"student","dataset":"d","split":"test","prompt_id":"p1"}"#,
        "\n"
    );

    fn parse(s: &str) -> Result<Corpus> {
        parse_jsonl(s, Path::new("mem.jsonl"), UnknownKeys::Error)
    }

    #[test]
    fn two_lines_in_order() {
        let c = parse(TWO).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.documents()[0].id, "a");
        assert_eq!(c.documents()[1].role, Role::Student);
        assert_eq!(c.documents()[1].split, Split::Test);
        assert_eq!(c.documents()[1].prompt_id.as_deref(), Some("p1"));
        assert_eq!(c.label_set(), ["m1", "m2"]);
    }

    #[test]
    fn empty_input() {
        let c = parse("").unwrap();
        assert!(c.is_empty());
        assert!(c.label_set().is_empty());
    }

    #[test]
    fn missing_text_names_line() {
        let bad = format!(
            "{}{}\n",
            TWO, r#"{"id":"c","source_label":"m1","role":"teacher","dataset":"d","split":"train"}"#
        );
        match parse(&bad) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("text"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        assert!(matches!(parse("{not json}\n"), Err(Error::Parse { line: 1, .. })));
        let dup = format!("{TWO}{}", TWO.lines().next().unwrap());
        assert!(matches!(parse(&dup), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn unknown_keys_policy() {
        let line = r#"{"id":"a","text":"t","source_label":"m","role":"teacher","dataset":"d","split":"dev","extra":1}"#;
        assert!(parse(line).is_err());
        let c = parse_jsonl(line, Path::new("x"), UnknownKeys::Warn).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn bad_enum_value_rejected() {
        let line = r#"{"id":"a","text":"t","source_label":"m","role":"teacher","dataset":"d","split":"holdout"}"#;
        assert!(matches!(parse(line), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let c = parse(TWO).unwrap();
        save_jsonl(&c, &p).unwrap();
        assert_eq!(load_jsonl(&p).unwrap(), c);
    }
}
