use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, LazyLock};

/// A unary real function usable as an activation gate.
pub type ActivationFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `sign(x)` is 1 for strictly positive inputs and 0 otherwise, so `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Name-to-function table consulted when evaluating activation gates.
#[derive(Clone)]
pub struct ActivationRegistry {
    table: BTreeMap<String, ActivationFn>,
}

static BUILTIN: LazyLock<ActivationRegistry> = LazyLock::new(ActivationRegistry::with_builtins);

impl ActivationRegistry {
    pub fn empty() -> Self {
        ActivationRegistry { table: BTreeMap::new() }
    }

    /// Registry holding `sign`, `exp` and `id`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("sign", sign);
        r.register("exp", f64::exp);
        r.register("id", |x| x);
        r
    }

    /// Shared instance of [`ActivationRegistry::with_builtins`].
    pub fn builtin() -> &'static ActivationRegistry {
        &BUILTIN
    }

    pub fn register<F>(&mut self, name: &str, f: F)
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.table.insert(name.to_string(), Arc::new(f));
    }

    pub fn get(&self, name: &str) -> Option<&ActivationFn> {
        self.table.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.table.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }
}

impl Default for ActivationRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl fmt::Debug for ActivationRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.table.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_is_zero_at_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(1e-300), 1.0);
        assert_eq!(sign(-3.0), 0.0);
    }

    #[test]
    fn builtins_resolve() {
        let r = ActivationRegistry::builtin();
        assert_eq!(r.get("id").unwrap()(2.5), 2.5);
        assert_eq!(r.get("sign").unwrap()(2.5), 1.0);
        assert!((r.get("exp").unwrap()(1.0) - std::f64::consts::E).abs() < 1e-15);
        assert!(r.get("relu").is_none());
    }
}
