//! Runtime multiply-accumulate counter.
//!
//! Kernels report the MACs they perform; callers attribute them to a named
//! scope. The counter is thread-local and off unless [`measure`] is active,
//! so normal training pays one branch per kernel call.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static SCOPE: RefCell<Vec<&'static str>> = const { RefCell::new(Vec::new()) };
    static TALLY: RefCell<BTreeMap<String, u64>> = const { RefCell::new(BTreeMap::new()) };
}

/// MAC totals keyed by scope path, e.g. `stage2/attention`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub by_scope: BTreeMap<String, u64>,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.by_scope.values().sum()
    }

    /// Sum over every scope path containing `segment` as a component.
    pub fn matching(&self, segment: &str) -> u64 {
        self.by_scope
            .iter()
            .filter(|(k, _)| k.split('/').any(|s| s == segment))
            .map(|(_, v)| *v)
            .sum()
    }
}

/// Runs `f` with counting enabled and returns what it counted.
/// Nested calls are not supported; the inner call wins.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, Tally) {
    TALLY.with(|t| t.borrow_mut().clear());
    let was = ACTIVE.with(|a| a.replace(true));
    let out = f();
    ACTIVE.with(|a| a.set(was));
    let by_scope = TALLY.with(|t| std::mem::take(&mut *t.borrow_mut()));
    (out, Tally { by_scope })
}

/// Attributes MACs performed inside `f` to `name` (nested under any
/// enclosing scope).
pub fn scope<R>(name: &'static str, f: impl FnOnce() -> R) -> R {
    SCOPE.with(|s| s.borrow_mut().push(name));
    let out = f();
    SCOPE.with(|s| s.borrow_mut().pop());
    out
}

pub(crate) fn add(macs: u64) {
    if !ACTIVE.with(|a| a.get()) {
        return;
    }
    let key = SCOPE.with(|s| s.borrow().join("/"));
    TALLY.with(|t| *t.borrow_mut().entry(key).or_default() += macs);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_only_inside_measure() {
        add(5);
        let ((), tally) = measure(|| {
            scope("a", || {
                add(3);
                scope("b", || add(4));
            });
            add(1);
        });
        assert_eq!(tally.total(), 8);
        assert_eq!(tally.by_scope["a"], 3);
        assert_eq!(tally.by_scope["a/b"], 4);
        assert_eq!(tally.by_scope[""], 1);
        assert_eq!(tally.matching("b"), 4);
        assert_eq!(tally.matching("a"), 7);
    }
}
