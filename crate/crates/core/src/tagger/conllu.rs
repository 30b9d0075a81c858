use std::fs;
use std::path::Path;

use super::{TaggedSentence, Upos};
use crate::error::{Error, Result};

/// Reads FORM and UPOS from a CoNLL-U file.
///
/// Comment lines, multiword token ranges (`3-4`) and empty nodes (`5.1`)
/// are skipped. Every other non-blank line must have exactly 10
/// tab-separated columns and a UPOS tag in column 4.
pub fn load_conllu(path: impl AsRef<Path>) -> Result<Vec<TaggedSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&text, path)
}

pub fn parse_conllu(text: &str, origin: &Path) -> Result<Vec<TaggedSentence>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut cur = TaggedSentence::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            if !cur.tokens.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(line, format!("expected 10 columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let tag: Upos = cols[3]
            .parse()
            .map_err(|_| err(line, format!("{:?} is not a UPOS tag", cols[3])))?;
        cur.tokens.push(cols[1].to_string());
        cur.tags.push(tag);
    }
    if !cur.tokens.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Writes sentences as minimal CoNLL-U: ID, FORM and UPOS filled, the
/// other columns `_`.
pub fn write_conllu(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, (tok, tag)) in s.tokens.iter().zip(&s.tags).enumerate() {
            out.push_str(&format!("{}\t{tok}\t_\t{tag}\t_\t_\t_\t_\t_\t_\n", i + 1));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "# sent_id = 1\n\
# text = The cat sleeps.\n\
1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n\
2\tcat\tcat\tNOUN\tNN\t_\t3\tnsubj\t_\t_\n\
3\tsleeps\tsleep\tVERB\tVBZ\t_\t0\troot\t_\tSpaceAfter=No\n\
4\t.\t.\tPUNCT\t.\t_\t3\tpunct\t_\t_\n\
\n\
# sent_id = 2\n\
1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
1\tdo\tdo\tAUX\tVBP\t_\t3\taux\t_\t_\n\
2\tn't\tnot\tPART\tRB\t_\t3\tadvmod\t_\t_\n\
2.1\tgo\tgo\tVERB\tVB\t_\t_\t_\t3:conj\t_\n\
3\tgo\tgo\tVERB\tVB\t_\t0\troot\t_\t_\n\
\n";

    #[test]
    fn parses_fixture() {
        let s = parse_conllu(FIXTURE, Path::new("f.conllu")).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens, ["The", "cat", "sleeps", "."]);
        assert_eq!(s[0].tags, [Upos::DET, Upos::NOUN, Upos::VERB, Upos::PUNCT]);
        assert_eq!(s[1].tokens, ["do", "n't", "go"]);
        assert_eq!(s[1].tags, [Upos::AUX, Upos::PART, Upos::VERB]);
    }

    #[test]
    fn nine_columns_is_an_error() {
        let bad = "1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\n";
        match parse_conllu(bad, Path::new("f")) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_upos_tag_is_an_error() {
        let bad = "# c\n1\tThe\tthe\tDT\tDT\t_\t2\tdet\t_\t_\n";
        assert!(matches!(parse_conllu(bad, Path::new("f")), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn no_trailing_blank_line() {
        let s = parse_conllu("1\tHi\thi\tINTJ\tUH\t_\t0\troot\t_\t_", Path::new("f")).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn write_then_parse() {
        let s = parse_conllu(FIXTURE, Path::new("f.conllu")).unwrap();
        assert_eq!(parse_conllu(&write_conllu(&s), Path::new("g")).unwrap(), s);
    }
}
