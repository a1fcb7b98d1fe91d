//! Version ordering for dotted/dashed version strings.
//!
//! Segments split on `.` and `-`; absent or empty segments read as `0`. A
//! segment with leading digits compares by that number first, then by the
//! remaining suffix, where no suffix sorts before any suffix (`1` < `1a`).
//! Segments without leading digits sort after numeric ones and compare
//! bytewise among themselves. Numbers are compared as digit strings, so
//! arbitrarily long segments never overflow.

use std::cmp::Ordering;

#[derive(Debug, PartialEq, Eq)]
enum Segment<'a> {
    Numeric { digits: &'a str, suffix: &'a str },
    Text(&'a str),
}

fn segment(text: &str) -> Segment<'_> {
    let split = text.bytes().position(|b| !b.is_ascii_digit()).unwrap_or(text.len());
    if text.is_empty() {
        return Segment::Numeric {
            digits: "0",
            suffix: "",
        };
    }
    if split == 0 {
        return Segment::Text(text);
    }
    let digits = text[..split].trim_start_matches('0');
    Segment::Numeric {
        digits: if digits.is_empty() { "0" } else { digits },
        suffix: &text[split..],
    }
}

fn compare_segments(a: &Segment<'_>, b: &Segment<'_>) -> Ordering {
    match (a, b) {
        (Segment::Numeric { digits: da, suffix: sa }, Segment::Numeric { digits: db, suffix: sb }) => da
            .len()
            .cmp(&db.len())
            .then_with(|| da.cmp(db))
            .then_with(|| match (sa.is_empty(), sb.is_empty()) {
                (true, true) => Ordering::Equal,
                (true, false) => Ordering::Less,
                (false, true) => Ordering::Greater,
                (false, false) => sa.as_bytes().cmp(sb.as_bytes()),
            }),
        (Segment::Numeric { .. }, Segment::Text(_)) => Ordering::Less,
        (Segment::Text(_), Segment::Numeric { .. }) => Ordering::Greater,
        (Segment::Text(x), Segment::Text(y)) => x.as_bytes().cmp(y.as_bytes()),
    }
}

pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let sa: Vec<&str> = a.split(['.', '-']).collect();
    let sb: Vec<&str> = b.split(['.', '-']).collect();
    let n = sa.len().max(sb.len());
    for i in 0..n {
        let x = segment(sa.get(i).copied().unwrap_or(""));
        let y = segment(sb.get(i).copied().unwrap_or(""));
        let ord = compare_segments(&x, &y);
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}
