//! Name-keyed strategy tables.

use std::collections::BTreeMap;

use crate::error::{Result, T2lError};

/// Name-keyed table of constructors.
pub struct Registry<F> {
    what: &'static str,
    entries: BTreeMap<&'static str, F>,
}

impl<F: Copy> Registry<F> {
    pub fn new(what: &'static str) -> Self {
        Registry {
            what,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: F) -> &mut Self {
        self.entries.insert(name, factory);
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<F> {
        self.entries.get(name).copied().ok_or_else(|| T2lError::UnknownStrategy {
            kind: self.what,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }
}
