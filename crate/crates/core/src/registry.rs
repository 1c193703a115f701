//! Name-keyed registry of trait objects.

use indexmap::IndexMap;

use crate::error::{Error, Names, Result};

/// Implementations of one strategy family, looked up by name at runtime.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: IndexMap<String, Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: IndexMap::new(),
        }
    }

    /// Register under `name`, replacing any previous entry.
    pub fn register(&mut self, name: impl Into<String>, entry: Box<T>) -> &mut Self {
        self.entries.insert(name.into(), entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .get(name)
            .map(|b| &**b)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: Names(self.names().map(str::to_string).collect()),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
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
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greet {
        fn hello(&self) -> String;
    }

    struct En;
    impl Greet for En {
        fn hello(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_and_unknown_names() {
        let mut reg: Registry<dyn Greet> = Registry::new("greeter");
        reg.register("en", Box::new(En));
        assert_eq!(reg.get("en").unwrap().hello(), "hello");
        let err = reg.get("fr").err().unwrap().to_string();
        assert!(err.contains("greeter") && err.contains("fr") && err.contains("en"), "{err}");
    }
}
