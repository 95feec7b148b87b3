//! Turning free-form completions into strategy labels.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::prompts::{ExpectedLabels, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Yes,
    No,
    A,
    B,
    /// Selecting answer; 0 is "none of the above".
    Index(usize),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Yes => f.write_str("Yes"),
            Label::No => f.write_str("No"),
            Label::A => f.write_str("A"),
            Label::B => f.write_str("B"),
            Label::Index(i) => write!(f, "{i}"),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Label::Index(i) => s.serialize_u64(*i as u64),
            other => s.collect_str(other),
        }
    }
}

impl ExpectedLabels {
    pub fn strategy(&self) -> Strategy {
        match self {
            ExpectedLabels::YesNo => Strategy::Matching,
            ExpectedLabels::RecordAB => Strategy::Comparing,
            ExpectedLabels::Index { .. } => Strategy::Selecting,
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        match *self {
            ExpectedLabels::YesNo => vec![Label::Yes, Label::No],
            ExpectedLabels::RecordAB => vec![Label::A, Label::B],
            ExpectedLabels::Index { n, allow_none } => {
                let start = if allow_none { 0 } else { 1 };
                (start..=n).map(Label::Index).collect()
            }
        }
    }

    pub fn contains(&self, label: Label) -> bool {
        match (*self, label) {
            (ExpectedLabels::YesNo, Label::Yes | Label::No) => true,
            (ExpectedLabels::RecordAB, Label::A | Label::B) => true,
            (ExpectedLabels::Index { n, allow_none }, Label::Index(i)) => {
                i <= n && (allow_none || i > 0)
            }
            _ => false,
        }
    }

    /// Answer assumed when nothing parses: no match, keep order, none.
    /// A forced-choice selecting prompt falls back to the first candidate.
    pub fn fallback(&self) -> Label {
        match *self {
            ExpectedLabels::YesNo => Label::No,
            ExpectedLabels::RecordAB => Label::A,
            ExpectedLabels::Index { allow_none, .. } => Label::Index(usize::from(!allow_none)),
        }
    }

    /// Maps a single token (as emitted in log-probability listings) onto a label.
    pub fn label_for_token(&self, token: &str) -> Option<Label> {
        let t = token
            .trim()
            .trim_matches(|c: char| c == '[' || c == ']' || c == '"' || c == '.')
            .to_ascii_lowercase();
        let label = match self {
            ExpectedLabels::YesNo => match t.as_str() {
                "yes" => Label::Yes,
                "no" => Label::No,
                _ => return None,
            },
            ExpectedLabels::RecordAB => match t.as_str() {
                "a" => Label::A,
                "b" => Label::B,
                _ => return None,
            },
            ExpectedLabels::Index { .. } => Label::Index(t.parse().ok()?),
        };
        self.contains(label).then_some(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParsedLabel {
    pub strategy: Strategy,
    pub label: Label,
    pub parse_ok: bool,
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
}

fn find_record_ab(lower: &str) -> Option<Label> {
    let tokens: Vec<&str> = words(lower).collect();
    tokens.windows(2).find_map(|w| match (w[0], w[1]) {
        ("record", "a") => Some(Label::A),
        ("record", "b") => Some(Label::B),
        _ => None,
    })
}

fn find_bracketed(text: &str, expected: &ExpectedLabels) -> Option<Label> {
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        if let Some(close) = after.find(']') {
            if let Ok(k) = after[..close].trim().parse::<usize>() {
                let label = Label::Index(k);
                if expected.contains(label) {
                    return Some(label);
                }
            }
        }
        rest = after;
    }
    None
}

/// Scans a completion for the first answer the prompt allows. Never fails:
/// unparseable text yields the strategy's fallback with `parse_ok = false`.
pub fn parse_label(text: &str, expected: &ExpectedLabels) -> ParsedLabel {
    let lower = text.to_lowercase();
    let found = match expected {
        ExpectedLabels::YesNo => words(&lower).find_map(|w| match w {
            "yes" => Some(Label::Yes),
            "no" => Some(Label::No),
            _ => None,
        }),
        ExpectedLabels::RecordAB => find_record_ab(&lower).or_else(|| {
            words(&lower).find_map(|w| match w {
                "a" => Some(Label::A),
                "b" => Some(Label::B),
                _ => None,
            })
        }),
        ExpectedLabels::Index { .. } => find_bracketed(&lower, expected).or_else(|| {
            words(&lower)
                .filter_map(|w| w.parse::<usize>().ok().map(Label::Index))
                .find(|l| expected.contains(*l))
        }),
    };
    ParsedLabel {
        strategy: expected.strategy(),
        label: found.unwrap_or_else(|| expected.fallback()),
        parse_ok: found.is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::prompts::Strategy;

    const SEL10: ExpectedLabels = ExpectedLabels::Index { n: 10, allow_none: true };

    fn ok(text: &str, expected: ExpectedLabels) -> Label {
        let p = parse_label(text, &expected);
        assert!(p.parse_ok, "{text:?} did not parse");
        p.label
    }

    #[test]
    fn matching_first_token() {
        assert_eq!(ok("Yes, they match.", ExpectedLabels::YesNo), Label::Yes);
        assert_eq!(ok("NO. Yes would be wrong", ExpectedLabels::YesNo), Label::No);
        assert_eq!(ok("Answer: yes", ExpectedLabels::YesNo), Label::Yes);
        // "yesterday" / "nothing" are not standalone tokens
        let p = parse_label("Nothing yesterday", &ExpectedLabels::YesNo);
        assert_eq!((p.label, p.parse_ok), (Label::No, false));
    }

    #[test]
    fn matching_default_is_no() {
        let p = parse_label("Unsure.", &ExpectedLabels::YesNo);
        assert_eq!(p.label, Label::No);
        assert!(!p.parse_ok);
        assert_eq!(p.strategy, Strategy::Matching);
    }

    #[test]
    fn comparing_record_phrase() {
        assert_eq!(ok("Record B", ExpectedLabels::RecordAB), Label::B);
        assert_eq!(ok("I'd pick record  a over b", ExpectedLabels::RecordAB), Label::A);
        assert_eq!(ok("The answer is B.", ExpectedLabels::RecordAB), Label::B);
        // "record about" must not read as "record a"
        let p = parse_label("no record about it", &ExpectedLabels::RecordAB);
        assert_eq!((p.label, p.parse_ok), (Label::A, false));
    }

    #[test]
    fn selecting_brackets_then_integers() {
        assert_eq!(ok("I believe the answer is [3].", SEL10), Label::Index(3));
        assert_eq!(ok("[0]", SEL10), Label::Index(0));
        assert_eq!(ok("[42] no, [ 7 ]", SEL10), Label::Index(7));
        assert_eq!(ok("Candidate 4 matches", SEL10), Label::Index(4));
        let p = parse_label("none of them", &SEL10);
        assert_eq!((p.label, p.parse_ok), (Label::Index(0), false));
    }

    #[test]
    fn selecting_forced_choice() {
        let e = ExpectedLabels::Index { n: 3, allow_none: false };
        let p = parse_label("[0]", &e);
        assert_eq!((p.label, p.parse_ok), (Label::Index(1), false));
        assert_eq!(ok("[0] or maybe [2]", e), Label::Index(2));
    }

    #[test]
    fn token_mapping() {
        assert_eq!(ExpectedLabels::YesNo.label_for_token(" Yes"), Some(Label::Yes));
        assert_eq!(ExpectedLabels::RecordAB.label_for_token(" B"), Some(Label::B));
        assert_eq!(SEL10.label_for_token("[3"), Some(Label::Index(3)));
        assert_eq!(SEL10.label_for_token("11"), None);
    }

    proptest! {
        #[test]
        fn parse_is_total_and_in_range(text in ".{0,80}", n in 1usize..12, none in any::<bool>()) {
            for expected in [
                ExpectedLabels::YesNo,
                ExpectedLabels::RecordAB,
                ExpectedLabels::Index { n, allow_none: none },
            ] {
                let p = parse_label(&text, &expected);
                prop_assert!(expected.contains(p.label));
            }
        }
    }
}
