//! Random non-empty combinations of the three reference expressions.

use groundkit_core::{ReferenceBundle, RngStream};
use rand::Rng;

pub const FUNCTIONAL: u8 = 0b001;
pub const POSITIONAL: u8 = 0b010;
pub const APPEARANCE: u8 = 0b100;

/// Joins the selected expressions with single spaces, always in
/// functional, positional, appearance order.
pub fn combine(bundle: &ReferenceBundle, mask: u8) -> String {
    [
        (FUNCTIONAL, bundle.functional.as_str()),
        (POSITIONAL, bundle.positional.as_str()),
        (APPEARANCE, bundle.appearance.as_str()),
    ]
    .into_iter()
    .filter(|(bit, text)| mask & bit != 0 && !text.is_empty())
    .map(|(_, text)| text)
    .collect::<Vec<_>>()
    .join(" ")
}

/// Draws one of the seven non-empty subsets uniformly and returns its mask
/// alongside the combined text.
pub fn sample_re_combination(bundle: &ReferenceBundle, rng: &mut RngStream) -> (u8, String) {
    let mask = rng.random_range(1..=7u8);
    (mask, combine(bundle, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> ReferenceBundle {
        ReferenceBundle {
            context: "ctx".into(),
            functional: "F".into(),
            positional: "P".into(),
            appearance: "A".into(),
            area_type: None,
            interactive: None,
        }
    }

    #[test]
    fn order_is_fixed() {
        let b = bundle();
        let all: Vec<String> = (1..=7).map(|m| combine(&b, m)).collect();
        assert_eq!(all, ["F", "P", "F P", "A", "F A", "P A", "F P A"]);
    }

    #[test]
    fn subsets_are_uniform() {
        let b = bundle();
        let mut rng = RngStream::new(7, "combos");
        let mut counts = [0usize; 8];
        for _ in 0..7000 {
            let (mask, text) = sample_re_combination(&b, &mut rng);
            assert_eq!(text, combine(&b, mask));
            counts[mask as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        for c in &counts[1..] {
            assert!((850..=1150).contains(c), "{counts:?}");
        }
    }
}
