//! Name-keyed factories for interchangeable algorithm variants.

use crate::error::{Error, Result};

type Factory<T> = Box<dyn Fn() -> Box<T> + Send + Sync>;

/// Maps names to constructors of `T` (usually a trait object).
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Factory<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds `name`, replacing any earlier entry of the same name.
    pub fn register(&mut self, name: &'static str, factory: impl Fn() -> Box<T> + Send + Sync + 'static) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, Box::new(factory)));
    }

    pub fn with(mut self, name: &'static str, factory: impl Fn() -> Box<T> + Send + Sync + 'static) -> Self {
        self.register(name, factory);
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

impl<T: ?Sized> std::fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn hi(&self) -> String;
    }
    struct A;
    impl Greeter for A {
        fn hi(&self) -> String {
            "a".into()
        }
    }
    struct B;
    impl Greeter for B {
        fn hi(&self) -> String {
            "b".into()
        }
    }

    #[test]
    fn create_by_name_and_report_unknown() {
        let r: Registry<dyn Greeter> = Registry::new("greeter")
            .with("a", || Box::new(A) as Box<dyn Greeter>)
            .with("b", || Box::new(B) as Box<dyn Greeter>);
        assert_eq!(r.create("b").unwrap().hi(), "b");
        let err = r.create("c").err().unwrap().to_string();
        assert!(err.contains("greeter") && err.contains("a, b"), "{err}");
    }

    #[test]
    fn reregistering_replaces() {
        let r: Registry<dyn Greeter> = Registry::new("greeter")
            .with("a", || Box::new(A) as Box<dyn Greeter>)
            .with("a", || Box::new(B) as Box<dyn Greeter>);
        assert_eq!(r.names(), vec!["a"]);
        assert_eq!(r.create("a").unwrap().hi(), "b");
    }
}
