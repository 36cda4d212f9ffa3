//! Fault injection for exercising the gradient checker.
//!
//! Flipping a primitive negates every gradient its backward rule produces.
//! State is thread-local so a flipped rule never leaks into other threads.

use std::cell::RefCell;

thread_local! {
    static FLIPPED: RefCell<Vec<String>> = const { RefCell::new(Vec::new()) };
}

/// Negate the backward rule of the primitive called `name` on this thread.
pub fn inject_sign_flip(name: &str) {
    FLIPPED.with(|f| {
        let mut f = f.borrow_mut();
        if !f.iter().any(|n| n == name) {
            f.push(name.to_string());
        }
    });
}

pub fn clear() {
    FLIPPED.with(|f| f.borrow_mut().clear());
}

pub(crate) fn is_flipped(name: &str) -> bool {
    FLIPPED.with(|f| {
        let f = f.borrow();
        !f.is_empty() && f.iter().any(|n| n == name)
    })
}
