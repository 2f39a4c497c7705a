//! Pretrained concept vectors in the plain `word v1 v2 …` text format.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{idx, ModelParams};
use crate::data::Vocab;
use crate::error::{Error, Result};

/// Reads one vector per line; blank lines are skipped.
pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<f64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let v = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        match width {
            None => width = Some(v.len()),
            Some(w) if w != v.len() => {
                return Err(Error::format(
                    path,
                    format!("line {}: {} values, expected {w}", lineno + 1, v.len()),
                ))
            }
            _ => {}
        }
        out.insert(word.to_string(), v);
    }
    Ok(out)
}

impl ModelParams {
    /// Overwrites concept-table rows whose name has a pretrained vector.
    /// Returns the number of rows replaced.
    pub fn apply_word_vectors(
        &mut self,
        vocab: &Vocab,
        vectors: &HashMap<String, Vec<f64>>,
    ) -> Result<usize> {
        let width = self.dims.word_dim;
        let mut replaced = 0;
        for (table, names) in [
            (idx::ATTR_TABLE, &vocab.attrs),
            (idx::OBJ_TABLE, &vocab.objs),
        ] {
            for (row, name) in names.iter().enumerate() {
                if let Some(v) = vectors.get(name) {
                    if v.len() != width {
                        return Err(Error::Config(format!(
                            "word vector for '{name}' has {} values, model word_dim is {width}",
                            v.len()
                        )));
                    }
                    self.tensors[table].row_slice_mut(row).copy_from_slice(v);
                    replaced += 1;
                }
            }
        }
        Ok(replaced)
    }
}
