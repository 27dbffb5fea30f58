use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::io::{io_err, write_atomic, IoError};
use crate::model::{Example, SpanTarget};

/// Corpus-wide `(semantic_type, surface)` pairs for extrinsic swaps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntityIndex {
    by_type: BTreeMap<String, BTreeSet<String>>,
}

impl EntityIndex {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut index = EntityIndex::default();
        for (ty, surface) in pairs {
            index.insert(ty, surface);
        }
        index
    }

    /// Collects source-side entities and numbers of every example.
    pub fn build(examples: &[Example]) -> Self {
        let mut index = EntityIndex::default();
        for ex in examples {
            let ann = &ex.annotations;
            for span in ann.entities.iter().chain(&ann.numbers) {
                if span.target == SpanTarget::Source {
                    index.insert(&span.semantic_type, &span.surface);
                }
            }
        }
        index
    }

    pub fn insert(&mut self, semantic_type: &str, surface: &str) {
        let surface = surface.trim();
        if !surface.is_empty() {
            self.by_type
                .entry(semantic_type.to_owned())
                .or_default()
                .insert(surface.to_owned());
        }
    }

    /// Surfaces of one type in sorted order.
    pub fn surfaces<'a>(&'a self, semantic_type: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.by_type
            .get(semantic_type)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_type.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (ty, surfaces) in &self.by_type {
            for s in surfaces {
                out.push_str(ty);
                out.push('\t');
                out.push_str(s);
                out.push('\n');
            }
        }
        out
    }

    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self, IoError> {
        let mut index = EntityIndex::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (ty, surface) = line.split_once('\t').ok_or_else(|| IoError::Record {
                path: path.to_owned(),
                line: i + 1,
                message: "expected type<TAB>surface".into(),
            })?;
            index.insert(ty, surface);
        }
        Ok(index)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_tsv(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}
