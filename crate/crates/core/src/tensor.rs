//! Feature tensors and the named-tensor text file format.
//!
//! # Tensor file format
//!
//! Parameter sets and encoded features are exchanged through a plain-text
//! file (conventional extension `.tns`). The file starts with the header
//! line `mcsa-tensors v1`, followed by one record per tensor:
//!
//! ```text
//! tensor <name> <rank> <dim0> ... <dimk>
//! <row-major values, whitespace separated, possibly over several lines>
//! ```
//!
//! Names match `[A-Za-z0-9_.-]+`. Values are written with Rust's shortest
//! round-trip float formatting, so save → load reproduces every `f64`
//! bit-exactly. Non-finite values are rejected on both paths.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};

use crate::error::{Error, Result};

/// Real-valued feature array indexed `[time T, channel C, feature D]`.
///
/// All entries are finite and every dimension is strictly positive; both
/// are enforced at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Array3<f64>,
}

impl FeatureTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (t, c, d) = data.dim();
        if t == 0 || c == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "feature tensor dimensions must be positive, got [{t}, {c}, {d}]"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("feature tensor contains non-finite entries"));
        }
        Ok(Self { data })
    }

    pub fn zeros(t: usize, c: usize, d: usize) -> Result<Self> {
        Self::new(Array3::zeros((t, c, d)))
    }

    /// Frame count `T`.
    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    /// Channel count `C`.
    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    /// Feature dimension `D`.
    pub fn features(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '_' | '.' | '-'))
}

/// An ordered collection of named tensors, the in-memory image of a `.tns`
/// file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    entries: BTreeMap<String, ArrayD<f64>>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: ArrayD<f64>) -> Result<()> {
        if !valid_name(name) {
            return Err(Error::invalid(format!("invalid tensor name {name:?}")));
        }
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("tensor {name:?} has non-finite entries")));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn insert_vec(&mut self, name: &str, v: &Array1<f64>) -> Result<()> {
        self.insert(name, v.clone().into_dyn())
    }

    pub fn insert_mat(&mut self, name: &str, m: &Array2<f64>) -> Result<()> {
        self.insert(name, m.clone().into_dyn())
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vec(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.require(name)?;
        t.clone()
            .into_dimensionality()
            .map_err(|_| Error::invalid(format!("tensor {name:?} is not rank 1")))
    }

    pub fn mat(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.require(name)?;
        t.clone()
            .into_dimensionality()
            .map_err(|_| Error::invalid(format!("tensor {name:?} is not rank 2")))
    }

    pub fn require(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::invalid(format!("tensor file is missing {name:?}")))
    }

    /// Serializes to the documented text format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("mcsa-tensors v1\n");
        for (name, tensor) in &self.entries {
            write!(out, "tensor {} {}", name, tensor.ndim()).unwrap();
            for dim in tensor.shape() {
                write!(out, " {dim}").unwrap();
            }
            out.push('\n');
            let mut col = 0usize;
            for v in tensor.iter() {
                let s = format!("{v:?}");
                if col > 0 {
                    out.push(if col % 8 == 0 { '\n' } else { ' ' });
                }
                out.push_str(&s);
                col += 1;
            }
            if tensor.len() > 0 {
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Tokens::new(text);
        let header: Vec<&str> = match tokens.line() {
            Some(l) => l,
            None => return Err(Error::parse(1, "empty tensor file")),
        };
        if header != ["mcsa-tensors", "v1"] {
            return Err(Error::parse(tokens.line_no, "expected header `mcsa-tensors v1`"));
        }
        let mut file = TensorFile::new();
        while let Some(line) = tokens.line() {
            let line_no = tokens.line_no;
            if line[0] != "tensor" {
                return Err(Error::parse(line_no, format!("expected `tensor`, got {:?}", line[0])));
            }
            if line.len() < 3 {
                return Err(Error::parse(line_no, "tensor record needs a name and a rank"));
            }
            let name = line[1];
            if !valid_name(name) {
                return Err(Error::parse(line_no, format!("invalid tensor name {name:?}")));
            }
            let rank: usize = line[2]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad rank {:?}", line[2])))?;
            if line.len() != 3 + rank {
                return Err(Error::parse(
                    line_no,
                    format!("expected {rank} dimensions, got {}", line.len() - 3),
                ));
            }
            let mut shape = Vec::with_capacity(rank);
            for dim in &line[3..] {
                let d: usize = dim
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad dimension {dim:?}")))?;
                shape.push(d);
            }
            let count: usize = shape.iter().product();
            let mut values = Vec::with_capacity(count);
            while values.len() < count {
                let (tok, tok_line) = tokens
                    .token()
                    .ok_or_else(|| Error::parse(tokens.line_no, format!("tensor {name:?} is truncated")))?;
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(tok_line, format!("bad value {tok:?}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(tok_line, format!("non-finite value in tensor {name:?}")));
                }
                values.push(v);
            }
            let array = ArrayD::from_shape_vec(IxDyn(&shape), values)
                .map_err(|e| Error::parse(line_no, format!("shape mismatch: {e}")))?;
            file.entries.insert(name.to_string(), array);
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

/// Whitespace tokenizer that tracks line numbers for parse errors.
struct Tokens<'a> {
    lines: std::str::Lines<'a>,
    current: std::str::SplitWhitespace<'a>,
    line_no: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines(), current: "".split_whitespace(), line_no: 0 }
    }

    /// Next non-empty line, split on whitespace. Discards any tokens left on
    /// the current line.
    fn line(&mut self) -> Option<Vec<&'a str>> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !toks.is_empty() {
                self.current = "".split_whitespace();
                return Some(toks);
            }
        }
    }

    fn token(&mut self) -> Option<(&'a str, usize)> {
        loop {
            if let Some(tok) = self.current.next() {
                return Some((tok, self.line_no));
            }
            let line = self.lines.next()?;
            self.line_no += 1;
            self.current = line.split_whitespace();
        }
    }
}
