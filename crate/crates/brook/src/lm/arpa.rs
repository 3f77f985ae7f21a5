//! ARPA text serialization for [`NGramLM`].
//!
//! The writer emits entries in sorted key order with six decimal places, so
//! writing is deterministic and `write -> read -> write` reproduces the
//! first file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use super::{LmError, NGramEntry, NGramLM};

#[derive(Debug, thiserror::Error)]
pub enum ArpaError {
    #[error("failed to read/write ARPA file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: section {order}-grams declared {declared} entries but has {found}")]
    CountMismatch { line: usize, order: usize, declared: usize, found: usize },
    #[error("missing \\end\\ marker")]
    MissingEnd,
    #[error("parsed model is inconsistent: {0}")]
    Model(#[from] LmError),
}

/// Format a log10 weight with canonical 6-decimal text. Values that round
/// to zero (including -0.0 and tiny negatives) print as "0.000000".
fn fmt_log(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// Render the model in ARPA text format.
pub fn arpa_to_string(lm: &NGramLM) -> String {
    let mut out = String::new();
    out.push_str("\\data\\\n");
    for n in 1..=lm.order() {
        out.push_str(&format!("ngram {n}={}\n", lm.ngram_count(n)));
    }
    out.push('\n');
    for n in 1..=lm.order() {
        out.push_str(&format!("\\{n}-grams:\n"));
        for (key, entry) in lm.ngrams(n) {
            out.push_str(&fmt_log(entry.logprob));
            out.push('\t');
            out.push_str(&key.join(" "));
            if let Some(bow) = entry.backoff {
                out.push('\t');
                out.push_str(&fmt_log(bow));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str("\\end\\\n");
    out
}

pub fn write_arpa(lm: &NGramLM, path: impl AsRef<Path>) -> Result<(), ArpaError> {
    std::fs::write(path.as_ref(), arpa_to_string(lm))?;
    Ok(())
}

pub fn read_arpa(path: impl AsRef<Path>) -> Result<NGramLM, ArpaError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    read_arpa_str(&text)
}

/// Parse ARPA text. Errors carry 1-based line numbers.
pub fn read_arpa_str(text: &str) -> Result<NGramLM, ArpaError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut pos = 0usize;

    let skip_blank = |pos: &mut usize| {
        while *pos < lines.len() && lines[*pos].trim().is_empty() {
            *pos += 1;
        }
    };

    skip_blank(&mut pos);
    if pos >= lines.len() || lines[pos].trim() != "\\data\\" {
        return Err(ArpaError::Malformed {
            line: pos + 1,
            msg: format!("expected \\data\\ header, got {:?}", lines.get(pos).unwrap_or(&"")),
        });
    }
    pos += 1;

    // "ngram N=C" declarations, contiguous from order 1.
    let mut declared: Vec<usize> = Vec::new();
    while pos < lines.len() && !lines[pos].trim().is_empty() {
        let line = lines[pos].trim();
        let rest = line.strip_prefix("ngram ").ok_or_else(|| ArpaError::Malformed {
            line: pos + 1,
            msg: format!("expected 'ngram N=C' declaration, got {line:?}"),
        })?;
        let (n_str, c_str) = rest.split_once('=').ok_or_else(|| ArpaError::Malformed {
            line: pos + 1,
            msg: format!("expected 'ngram N=C' declaration, got {line:?}"),
        })?;
        let n: usize = n_str.trim().parse().map_err(|_| ArpaError::Malformed {
            line: pos + 1,
            msg: format!("bad order {n_str:?}"),
        })?;
        let c: usize = c_str.trim().parse().map_err(|_| ArpaError::Malformed {
            line: pos + 1,
            msg: format!("bad count {c_str:?}"),
        })?;
        if n != declared.len() + 1 {
            return Err(ArpaError::Malformed {
                line: pos + 1,
                msg: format!("orders must be contiguous from 1, got {n}"),
            });
        }
        declared.push(c);
        pos += 1;
    }
    if declared.is_empty() {
        return Err(ArpaError::Malformed { line: pos + 1, msg: "no ngram declarations".into() });
    }

    let order = declared.len();
    let mut tables: Vec<BTreeMap<Vec<String>, NGramEntry>> = Vec::with_capacity(order);
    for (idx, &count) in declared.iter().enumerate() {
        let n = idx + 1;
        skip_blank(&mut pos);
        let header = format!("\\{n}-grams:");
        if pos >= lines.len() || lines[pos].trim() != header {
            return Err(ArpaError::Malformed {
                line: pos + 1,
                msg: format!("expected {header:?}, got {:?}", lines.get(pos).unwrap_or(&"")),
            });
        }
        pos += 1;
        let mut table: BTreeMap<Vec<String>, NGramEntry> = BTreeMap::new();
        while pos < lines.len() && !lines[pos].trim().is_empty() && !lines[pos].starts_with('\\') {
            let line_no = pos + 1;
            let fields: Vec<&str> = lines[pos].split_whitespace().collect();
            if fields.len() < n + 1 || fields.len() > n + 2 {
                return Err(ArpaError::Malformed {
                    line: line_no,
                    msg: format!("expected {} or {} fields, got {}", n + 1, n + 2, fields.len()),
                });
            }
            let logprob: f64 = fields[0].parse().map_err(|_| ArpaError::Malformed {
                line: line_no,
                msg: format!("bad log-probability {:?}", fields[0]),
            })?;
            let key: Vec<String> = fields[1..=n].iter().map(|s| s.to_string()).collect();
            let backoff = if fields.len() == n + 2 {
                if n == order {
                    return Err(ArpaError::Malformed {
                        line: line_no,
                        msg: "backoff weight on highest-order entry".into(),
                    });
                }
                Some(fields[n + 1].parse::<f64>().map_err(|_| ArpaError::Malformed {
                    line: line_no,
                    msg: format!("bad backoff weight {:?}", fields[n + 1]),
                })?)
            } else if n < order {
                Some(0.0)
            } else {
                None
            };
            if table.insert(key.clone(), NGramEntry { logprob, backoff }).is_some() {
                return Err(ArpaError::Malformed {
                    line: line_no,
                    msg: format!("duplicate {n}-gram {key:?}"),
                });
            }
            pos += 1;
        }
        if table.len() != count {
            return Err(ArpaError::CountMismatch {
                line: pos + 1,
                order: n,
                declared: count,
                found: table.len(),
            });
        }
        tables.push(table);
    }

    skip_blank(&mut pos);
    if pos >= lines.len() || lines[pos].trim() != "\\end\\" {
        return Err(ArpaError::MissingEnd);
    }

    Ok(NGramLM::from_tables(tables)?)
}
