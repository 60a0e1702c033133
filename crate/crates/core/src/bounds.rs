//! Counted-loop bounds: comparison kinds and closed-form trip counts.
//!
//! A counted loop runs its body with index `initial`, then keeps
//! stepping by `step` and re-entering while `compare(index, final)` holds
//! for the stepped value. The body therefore always runs at least once.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compare {
    Lt,
    Le,
    Gt,
    Ge,
    Ne,
}

impl Compare {
    pub const ALL: [Compare; 5] = [Compare::Lt, Compare::Le, Compare::Gt, Compare::Ge, Compare::Ne];

    pub fn holds(self, value: i32, bound: i32) -> bool {
        match self {
            Compare::Lt => value < bound,
            Compare::Le => value <= bound,
            Compare::Gt => value > bound,
            Compare::Ge => value >= bound,
            Compare::Ne => value != bound,
        }
    }

    /// Encoding used by the ZOLC configuration port.
    pub fn code(self) -> i32 {
        match self {
            Compare::Lt => 0,
            Compare::Le => 1,
            Compare::Gt => 2,
            Compare::Ge => 3,
            Compare::Ne => 4,
        }
    }

    pub fn from_code(code: i32) -> Option<Compare> {
        Compare::ALL.iter().copied().find(|c| c.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Compare::Lt => "LT",
            Compare::Le => "LE",
            Compare::Gt => "GT",
            Compare::Ge => "GE",
            Compare::Ne => "NE",
        }
    }
}

impl fmt::Display for Compare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Compare {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Compare::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown comparison `{s}`"))
    }
}

/// Number of body executions for the given bounds, or `None` when the
/// loop never terminates (including when the index would wrap past the
/// 32-bit range before the comparison fails).
pub fn trip_count(initial: i32, step: i32, final_: i32, compare: Compare) -> Option<u64> {
    if step == 0 {
        return None;
    }
    let (init, step, fin) = (initial as i64, step as i64, final_ as i64);
    let first = init + step;
    let in_range = |v: i64| v >= i32::MIN as i64 && v <= i32::MAX as i64;
    if !in_range(first) {
        return None;
    }
    if !compare.holds(first as i32, final_) {
        return Some(1);
    }
    // Smallest k >= 1 with !compare(init + k*step, final).
    let trips = match compare {
        Compare::Lt if step > 0 => ceil_div(fin - init, step),
        Compare::Le if step > 0 => (fin - init).div_euclid(step) + 1,
        Compare::Gt if step < 0 => ceil_div(init - fin, -step),
        Compare::Ge if step < 0 => (init - fin).div_euclid(-step) + 1,
        Compare::Ne => {
            let span = fin - init;
            if span % step != 0 || span / step < 1 {
                return None;
            }
            span / step
        }
        _ => return None,
    };
    let trips = trips.max(1);
    if !in_range(init + trips * step) {
        return None;
    }
    Some(trips as u64)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    (a + b - 1).div_euclid(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force enumeration of the do-while index sequence.
    fn enumerate(initial: i32, step: i32, final_: i32, compare: Compare, cap: u64) -> Option<u64> {
        let mut idx = initial as i64;
        let mut trips = 1u64;
        loop {
            idx += step as i64;
            if idx < i32::MIN as i64 || idx > i32::MAX as i64 {
                return None;
            }
            if !compare.holds(idx as i32, final_) {
                return Some(trips);
            }
            trips += 1;
            if trips > cap {
                return None;
            }
        }
    }

    #[test]
    fn simple_counts() {
        assert_eq!(trip_count(0, 1, 16, Compare::Lt), Some(16));
        assert_eq!(trip_count(0, 1, 16, Compare::Le), Some(17));
        assert_eq!(trip_count(10, -2, 0, Compare::Gt), Some(5));
        assert_eq!(trip_count(32, -1, 0, Compare::Ne), Some(32));
        assert_eq!(trip_count(0, 0, 16, Compare::Lt), None);
        assert_eq!(trip_count(0, 3, 10, Compare::Ne), None);
        assert_eq!(trip_count(0, -1, 10, Compare::Lt), None);
        // Stepped value already fails: single pass.
        assert_eq!(trip_count(0, -1, -5, Compare::Lt), Some(1));
    }

    #[test]
    fn wrapping_loops_are_rejected() {
        assert_eq!(trip_count(i32::MAX - 1, 2, i32::MAX, Compare::Lt), None);
        assert_eq!(trip_count(i32::MAX - 1, 1, i32::MAX, Compare::Lt), Some(1));
        assert_eq!(trip_count(0, 2, i32::MAX, Compare::Ne), None);
    }

    proptest! {
        #[test]
        fn closed_form_matches_enumeration(
            initial in -40i32..40,
            step in prop_oneof![-7i32..0, 1i32..8],
            final_ in -40i32..40,
            ci in 0usize..5,
        ) {
            let cmp = Compare::ALL[ci];
            prop_assert_eq!(trip_count(initial, step, final_, cmp), enumerate(initial, step, final_, cmp, 10_000));
        }
    }
}
