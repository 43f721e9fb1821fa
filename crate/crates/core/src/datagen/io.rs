use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::datagen::question::QuestionInstance;
use crate::error::{Error, Result};

pub fn save_split(questions: &[QuestionInstance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_split(questions, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_split(questions: &[QuestionInstance], out: &mut impl Write) -> std::io::Result<()> {
    for q in questions {
        serde_json::to_writer(&mut *out, q)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Vec<QuestionInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_split(BufReader::new(file))
}

/// Parses a JSON-lines split. Errors name the line, the question id when it
/// can be recovered, and the offending field.
pub fn read_split(reader: impl BufRead) -> Result<Vec<QuestionInstance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let qid = value
            .get("qid")
            .and_then(|v| v.as_str())
            .unwrap_or("<unknown>")
            .to_string();
        let q: QuestionInstance = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            Error::schema(
                format!("line {line_no}: question {qid}"),
                field_in_message(&msg),
                msg,
            )
        })?;
        q.validate()?;
        out.push(q);
    }
    Ok(out)
}

fn field_in_message(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("?").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate::{generate_dataset, DatasetConfig, QuestionOptions};
    use crate::geo::{generate_catalog, CatalogConfig};

    fn sample_questions() -> Vec<QuestionInstance> {
        let cat = generate_catalog(&CatalogConfig {
            n_cities: 3,
            min_size: 50,
            max_size: 200,
            seed: 2,
        })
        .unwrap();
        let cfg = DatasetConfig {
            sizes: [10, 0, 0],
            seed: 1,
            question: QuestionOptions { negatives: 8, ..Default::default() },
        };
        generate_dataset(&cat, &cfg).unwrap().train.questions
    }

    #[test]
    fn round_trip() {
        let qs = sample_questions();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        save_split(&qs, &path).unwrap();
        assert_eq!(load_split(&path).unwrap(), qs);
    }

    fn first_line_as_value() -> serde_json::Value {
        let qs = sample_questions();
        serde_json::to_value(&qs[0]).unwrap()
    }

    #[test]
    fn missing_bio_tags_names_qid() {
        let mut v = first_line_as_value();
        v.as_object_mut().unwrap().remove("bio_tags");
        let err = read_split(v.to_string().as_bytes()).unwrap_err().to_string();
        assert!(err.contains("train-00000"), "{err}");
        assert!(err.contains("bio_tags"), "{err}");
    }

    #[test]
    fn dangling_inside_tag_rejected() {
        let mut v = first_line_as_value();
        let obj = v.as_object_mut().unwrap();
        obj.insert("tokens".into(), serde_json::json!(["a", "b", "c"]));
        obj.insert("bio_tags".into(), serde_json::json!(["O", "I", "O"]));
        obj.insert("mentions".into(), serde_json::json!([]));
        let err = read_split(v.to_string().as_bytes()).unwrap_err().to_string();
        assert!(err.contains("I without preceding B"), "{err}");
    }
}
