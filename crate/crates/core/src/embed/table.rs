use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array1;

use super::{EmbedError, EmbeddingSource, EmbeddingVector};

/// Precomputed vectors keyed by item id.
///
/// Text format: a `dim <d>` header line, then one `<id> v1 ... vd` line per
/// item. Ids may not contain whitespace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    order: Vec<String>,
    vectors: HashMap<String, EmbeddingVector>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, v: EmbeddingVector) -> Result<(), EmbedError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(EmbedError::Format(format!("invalid id {id:?}")));
        }
        if v.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch(v.dim(), self.dim));
        }
        if self.vectors.insert(id.clone(), v).is_none() {
            self.order.push(id);
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, EmbedError> {
        let mut lines = reader.lines().enumerate();
        let dim = loop {
            let Some((_, line)) = lines.next() else {
                return Err(EmbedError::Format("missing `dim <d>` header".into()));
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next().map(str::parse::<usize>), parts.next()) {
                (Some("dim"), Some(Ok(d)), None) if d > 0 => break d,
                _ => return Err(EmbedError::Format(format!("bad header {line:?}"))),
            }
        };
        let mut table = Self::new(dim);
        for (n, line) in lines {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(id) = parts.next() else { continue };
            let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| EmbedError::Format(format!("line {}: {e}", n + 1)))?;
            if values.len() != dim {
                return Err(EmbedError::Format(format!("line {}: expected {dim} values, got {}", n + 1, values.len())));
            }
            let v = EmbeddingVector::new(Array1::from(values))
                .map_err(|e| EmbedError::Format(format!("line {}: {e}", n + 1)))?;
            table.insert(id, v)?;
        }
        Ok(table)
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        writeln!(w, "dim {}", self.dim)?;
        for id in &self.order {
            let mut line = id.clone();
            for x in self.vectors[id].view() {
                write!(line, " {x}").expect("write to string");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

impl EmbeddingSource for EmbeddingTable {
    fn embed(&self, id: &str, _target: &str, _text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.vectors.get(id).cloned().ok_or_else(|| EmbedError::MissingId(id.to_string()))
    }
}
