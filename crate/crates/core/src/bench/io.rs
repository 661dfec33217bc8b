//! Plain-text dataset format.
//!
//! ```text
//! C L D max_len count version
//! label domain split content_len v_1 ... v_{max_len·D}
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Dataset, Domain, Example, Split};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "{} {} {} {} {} {}",
        ds.classes,
        ds.frames,
        ds.dims,
        ds.max_len,
        ds.examples.len(),
        FORMAT_VERSION
    )?;
    let mut line = String::new();
    for e in &ds.examples {
        line.clear();
        write!(
            line,
            "{} {} {} {}",
            e.label,
            e.domain.as_str(),
            e.split.as_str(),
            e.content_len
        )
        .expect("string write");
        for v in &e.features {
            write!(line, " {v:.16e}").expect("string write");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        line,
        detail: detail.into(),
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("bad {what} {tok:?}")))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))??;
    let mut it = header.split_whitespace();
    let classes: usize = field(it.next(), 1, "class count")?;
    let frames: usize = field(it.next(), 1, "frame count")?;
    let dims: usize = field(it.next(), 1, "dims")?;
    let max_len: usize = field(it.next(), 1, "max_len")?;
    let count: usize = field(it.next(), 1, "example count")?;
    let version: u32 = field(it.next(), 1, "version")?;
    if version != FORMAT_VERSION {
        return Err(parse_err(1, format!("unsupported version {version}")));
    }
    if dims == 0 || max_len == 0 {
        return Err(parse_err(1, "dims and max_len must be positive"));
    }
    let width = max_len * dims;
    let mut examples = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let label: usize = field(it.next(), lineno, "label")?;
        if label >= classes {
            return Err(parse_err(lineno, format!("label {label} >= {classes}")));
        }
        let domain = match it.next() {
            Some("source") => Domain::Source,
            Some("target") => Domain::Target,
            other => return Err(parse_err(lineno, format!("bad domain {other:?}"))),
        };
        let split = match it.next() {
            Some("train") => Split::Train,
            Some("test") => Split::Test,
            other => return Err(parse_err(lineno, format!("bad split {other:?}"))),
        };
        let content_len: usize = field(it.next(), lineno, "content_len")?;
        if content_len > max_len {
            return Err(parse_err(lineno, "content_len exceeds max_len"));
        }
        let features = it
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad value {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.len() != width {
            return Err(parse_err(
                lineno,
                format!("expected {width} values, found {}", features.len()),
            ));
        }
        examples.push(Example {
            features,
            content_len,
            dims,
            label,
            domain,
            split,
        });
    }
    if examples.len() != count {
        return Err(parse_err(
            examples.len() + 2,
            format!("header promises {count} examples, found {}", examples.len()),
        ));
    }
    Ok(Dataset {
        examples,
        classes,
        frames,
        dims,
        max_len,
        config: None,
        oracle: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{gen_benchmark, BenchConfig};

    #[test]
    fn round_trip_and_row_count() {
        let cfg = BenchConfig {
            classes: 4,
            n_source_per_class: 3,
            n_target_test_per_class: 2,
            ..BenchConfig::default()
        };
        let ds = gen_benchmark(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.txt");
        write_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * (3 + 1 + 2));
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.examples, ds.examples);
        assert_eq!(
            (back.classes, back.frames, back.dims, back.max_len),
            (ds.classes, ds.frames, ds.dims, ds.max_len)
        );
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let ds = gen_benchmark(&BenchConfig {
            classes: 2,
            n_source_per_class: 2,
            n_target_test_per_class: 1,
            ..BenchConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.txt");
        write_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() / 2];
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { .. })));

        std::fs::write(&path, "").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "2 16 8 28 1 1\n0 sideways train 16\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 2, .. })));
    }
}
