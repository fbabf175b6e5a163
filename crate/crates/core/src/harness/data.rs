use std::path::Path;

use crate::error::{Error, Result};
use crate::template::Task;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub s1: String,
    pub s2: Option<String>,
    pub label: String,
}

/// Labeled examples of one task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub task: String,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks labels and sentence arity against the task.
    pub fn validate(&self, task: &Task) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if task.verbalizer.class_of(&r.label).is_none() {
                return Err(Error::Config(format!(
                    "record {} has label `{}`, which task `{}` does not define",
                    i + 1,
                    r.label,
                    task.name
                )));
            }
            let arity = 1 + r.s2.is_some() as usize;
            if arity != task.arity {
                return Err(Error::Arity(format!(
                    "record {} has {arity} sentence(s); task `{}` expects {}",
                    i + 1,
                    task.name,
                    task.arity
                )));
            }
        }
        Ok(())
    }

    /// Class index of every record under the task's label order.
    pub fn classes(&self, task: &Task) -> Result<Vec<usize>> {
        self.validate(task)?;
        Ok(self
            .records
            .iter()
            .map(|r| task.verbalizer.class_of(&r.label).expect("validated"))
            .collect())
    }

    /// Parses `s1<TAB>label` or `s1<TAB>s2<TAB>label` lines.
    pub fn parse_tsv(task: &str, bytes: &[u8], arity: usize, header: bool) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
            let line_no = i + 1;
            if header && i == 0 {
                continue;
            }
            let line = std::str::from_utf8(raw).map_err(|_| Error::Parse {
                line: line_no,
                message: "invalid UTF-8".into(),
            })?;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != arity + 1 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {} tab-separated fields, found {}", arity + 1, fields.len()),
                });
            }
            records.push(Record {
                s1: fields[0].to_string(),
                s2: (arity == 2).then(|| fields[1].to_string()),
                label: fields[arity].to_string(),
            });
        }
        Ok(Dataset {
            task: task.to_string(),
            records,
        })
    }

    pub fn load_tsv(task: &str, path: &Path, arity: usize, header: bool) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(task, &bytes, arity, header)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.s1);
            if let Some(s2) = &r.s2 {
                out.push('\t');
                out.push_str(s2);
            }
            out.push('\t');
            out.push_str(&r.label);
            out.push('\n');
        }
        out
    }
}

/// Reads a corpus file, one sentence per line.
pub fn parse_corpus(bytes: &[u8]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw).map_err(|_| Error::Parse {
            line: i + 1,
            message: "invalid UTF-8".into(),
        })?;
        let line = line.trim();
        if !line.is_empty() {
            out.push(line.to_string());
        }
    }
    if out.is_empty() {
        return Err(Error::Config("corpus is empty".into()));
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::TaskSet;

    #[test]
    fn single_and_pair_lines() {
        let d = Dataset::parse_tsv("t", b"a fine film\tpositive\nbad\tnegative\n", 1, false).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.records[1].label, "negative");
        let p = Dataset::parse_tsv("t", b"s1\ts2\tlabel\nq one\tq two\tyes\n", 2, true).unwrap();
        assert_eq!(p.records[0].s2.as_deref(), Some("q two"));
        assert_eq!(Dataset::parse_tsv("t", p.to_tsv().as_bytes(), 2, false).unwrap(), p);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let err = Dataset::parse_tsv("t", b"ok\tpositive\nbroken\n", 1, false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = Dataset::parse_tsv("t", b"ok\tpositive\n\xff\xfe\tpositive\n", 1, false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(
            parse_corpus(b"fine\n\xc3\x28\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn validate_against_task() {
        let task = TaskSet::bundled().get("SST-2").unwrap();
        let good = Dataset::parse_tsv("SST-2", b"x\tpositive\ny\tnegative\n", 1, false).unwrap();
        assert_eq!(good.classes(&task).unwrap(), vec![0, 1]);
        let bad = Dataset::parse_tsv("SST-2", b"x\tneutral\n", 1, false).unwrap();
        assert!(bad.validate(&task).is_err());
        let pair = Dataset::parse_tsv("SST-2", b"x\ty\tpositive\n", 2, false).unwrap();
        assert!(matches!(pair.validate(&task), Err(Error::Arity(_))));
    }
}
