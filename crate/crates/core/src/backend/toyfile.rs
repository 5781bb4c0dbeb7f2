//! Plain-text tensor fixtures (`ADIRTOY v1`).
//!
//! ```text
//! ADIRTOY v1
//! # comments start with '#'
//! @kind disnet
//! @resolution 112 112
//! @grid 14
//! @labels bw red_cyan green_magenta blue_yellow
//! conv.weight 4  3 3 3 3   0 -1 0 ...
//! fc.weight 2  4 3   1 1 1 ...
//! ```
//!
//! Lines starting with `@` are directives: a key followed by
//! whitespace-separated values. Everything else is a stream of tensor records
//! `name rank dim_0 .. dim_{rank-1} value_0 ..`, whitespace-separated decimals
//! that may wrap across lines. Values are row-major.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &str = "ADIRTOY v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        Self { dims, values }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ToyFile {
    pub directives: BTreeMap<String, Vec<String>>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ToyFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parse fixture text; `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };

        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, first)) if first.trim() == MAGIC => {}
            Some((n, first)) => {
                return Err(err(n, format!("expected header `{MAGIC}`, found `{}`", first.trim())))
            }
            None => return Err(err(1, "empty file".into())),
        }

        let mut out = ToyFile::default();
        let mut tokens: Vec<(usize, &str)> = Vec::new();
        for (n, line) in lines {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('@') {
                let mut parts = rest.split_whitespace();
                let key = parts
                    .next()
                    .ok_or_else(|| err(n, "empty directive".into()))?;
                out.directives
                    .insert(key.to_string(), parts.map(str::to_string).collect());
                continue;
            }
            tokens.extend(trimmed.split_whitespace().map(|t| (n, t)));
        }

        let mut it = tokens.into_iter();
        while let Some((n, name)) = it.next() {
            let mut next_number = |what: &str| -> Result<(usize, &str)> {
                it.next().ok_or_else(|| {
                    err(n, format!("tensor `{name}` truncated while reading {what}"))
                })
            };
            let (ln, rank_tok) = next_number("rank")?;
            let rank: usize = rank_tok
                .parse()
                .map_err(|_| err(ln, format!("bad rank `{rank_tok}` for tensor `{name}`")))?;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let (ln, tok) = next_number("dims")?;
                dims.push(
                    tok.parse::<usize>()
                        .map_err(|_| err(ln, format!("bad dimension `{tok}` for `{name}`")))?,
                );
            }
            let count: usize = dims.iter().product();
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let (ln, tok) = next_number("values")?;
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| err(ln, format!("bad value `{tok}` in `{name}`")))?,
                );
            }
            if out.tensors.insert(name.to_string(), Tensor { dims, values }).is_some() {
                return Err(err(n, format!("duplicate tensor `{name}`")));
            }
        }
        Ok(out)
    }

    pub fn directive(&self, key: &str) -> Option<&[String]> {
        self.directives.get(key).map(Vec::as_slice)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn set_directive(&mut self, key: &str, values: impl IntoIterator<Item = impl ToString>) {
        self.directives.insert(
            key.to_string(),
            values.into_iter().map(|v| v.to_string()).collect(),
        );
    }

    pub fn set_tensor(&mut self, name: &str, tensor: Tensor) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(MAGIC);
        s.push('\n');
        for (k, v) in &self.directives {
            let _ = writeln!(s, "@{k} {}", v.join(" "));
        }
        for (name, t) in &self.tensors {
            let _ = write!(s, "{name} {}", t.rank());
            for d in &t.dims {
                let _ = write!(s, " {d}");
            }
            let _ = writeln!(s);
            let row = t.dims.last().copied().unwrap_or(1).max(1);
            for chunk in t.values.chunks(row) {
                let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
                let _ = writeln!(s, "  {}", line.join(" "));
            }
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn parse_usize_directive(file: &ToyFile, key: &str, origin: &PathBuf) -> Result<Vec<usize>> {
    let vals = file.directive(key).ok_or_else(|| Error::Parse {
        path: origin.clone(),
        line: 0,
        message: format!("missing directive @{key}"),
    })?;
    vals.iter()
        .map(|v| {
            v.parse::<usize>().map_err(|_| Error::Parse {
                path: origin.clone(),
                line: 0,
                message: format!("@{key}: `{v}` is not a non-negative integer"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "ADIRTOY v1
# a comment
@kind disnet
@labels a b
w 2 2 3
  1 2 3
  4 5 6
b 1 2 0.5 -1e-3
";

    #[test]
    fn parses_directives_and_tensors() {
        let f = ToyFile::parse(SAMPLE, Path::new("x")).unwrap();
        assert_eq!(f.directive("kind").unwrap(), ["disnet"]);
        assert_eq!(f.directive("labels").unwrap(), ["a", "b"]);
        let w = f.tensor("w").unwrap();
        assert_eq!(w.dims, vec![2, 3]);
        assert_eq!(w.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(f.tensor("b").unwrap().values, vec![0.5, -0.001]);
    }

    #[test]
    fn text_round_trips() {
        let f = ToyFile::parse(SAMPLE, Path::new("x")).unwrap();
        let again = ToyFile::parse(&f.to_text(), Path::new("y")).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn truncated_tensor_is_an_error() {
        let text = &SAMPLE[..SAMPLE.len() - 8];
        let e = ToyFile::parse(text, Path::new("t")).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }), "{e}");
        assert!(e.to_string().contains("truncated"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let e = ToyFile::parse("ADIRTOY v2\n", Path::new("t")).unwrap_err();
        assert!(e.to_string().contains("expected header"));
        assert!(ToyFile::parse("", Path::new("t")).is_err());
    }

    #[test]
    fn bad_number_reports_its_line() {
        let e = ToyFile::parse("ADIRTOY v1\nw 1 2\n 1 x\n", Path::new("t")).unwrap_err();
        match e {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }
}
