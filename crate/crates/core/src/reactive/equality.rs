use std::fmt;
use std::rc::Rc;

/// Decides whether a freshly produced value counts as a change.
///
/// A write or recomputation judged equal to the previous value leaves the
/// node's version untouched and does not dirty its subscribers.
pub enum Equality<V> {
    /// Structural equality through `PartialEq`.
    Value(fn(&V, &V) -> bool),
    /// Every write or recomputation counts as a change.
    AlwaysChanged,
    /// User-supplied comparator; `true` means "equal, cut propagation".
    Custom(Rc<dyn Fn(&V, &V) -> bool>),
}

impl<V: PartialEq> Equality<V> {
    pub fn value() -> Self {
        Equality::Value(<V as PartialEq>::eq)
    }
}

impl<V> Equality<V> {
    pub fn custom(cmp: impl Fn(&V, &V) -> bool + 'static) -> Self {
        Equality::Custom(Rc::new(cmp))
    }

    pub fn is_equal(&self, old: &V, new: &V) -> bool {
        match self {
            Equality::Value(eq) => eq(old, new),
            Equality::AlwaysChanged => false,
            Equality::Custom(cmp) => cmp(old, new),
        }
    }
}

impl<V> Clone for Equality<V> {
    fn clone(&self) -> Self {
        match self {
            Equality::Value(eq) => Equality::Value(*eq),
            Equality::AlwaysChanged => Equality::AlwaysChanged,
            Equality::Custom(cmp) => Equality::Custom(Rc::clone(cmp)),
        }
    }
}

impl<V> fmt::Debug for Equality<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Equality::Value(_) => f.write_str("Value"),
            Equality::AlwaysChanged => f.write_str("AlwaysChanged"),
            Equality::Custom(_) => f.write_str("Custom"),
        }
    }
}
