//! The structured point message: `<ref>N</ref><point>[[x1,y1],[x2,y2]]</point>`.
//!
//! `N` is the declared number of fixation points and each `[x,y]` is an
//! integer coordinate on the `[0, 1000]²` grid. The parser is tolerant: it
//! never fails, and reports problems through [`ParseOutcome::valid_format`]
//! and its diagnostics.
//!
//! A message has a valid format when
//! * the first `<ref>…</ref>` span holds a nonnegative integer,
//! * at least one complete `<point>…</point>` span exists,
//! * every point span consists only of `[x,y]` integer pairs, brackets,
//!   commas and whitespace, and
//! * every pair lies inside the grid.
//!
//! Later `<ref>` spans are ignored. Multiple `<point>` spans are
//! concatenated, so both the single-list form and one-span-per-point output
//! are accepted.

use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::geometry::{GridPoint, GRID_EXTENT};
use crate::{Error, Result};

pub const REF_OPEN: &str = "<ref>";
pub const REF_CLOSE: &str = "</ref>";
pub const POINT_OPEN: &str = "<point>";
pub const POINT_CLOSE: &str = "</point>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMessage {
    pub n_ref: usize,
    pub points: Vec<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParseOutcome {
    pub valid_format: bool,
    pub n_ref: Option<usize>,
    /// Number of syntactically complete `[x,y]` pairs found.
    pub n_actual: usize,
    pub points: Vec<GridPoint>,
    pub diagnostics: Vec<String>,
}

impl ParseOutcome {
    /// The parsed message, when the format is valid.
    pub fn message(&self) -> Option<PointMessage> {
        match (self.valid_format, self.n_ref) {
            (true, Some(n_ref)) => Some(PointMessage {
                n_ref,
                points: self.points.clone(),
            }),
            _ => None,
        }
    }
}

/// Emits the wire form. Coordinates are rounded to integers.
pub fn serialize(msg: &PointMessage) -> Result<String> {
    let mut out = format!("{REF_OPEN}{}{REF_CLOSE}{POINT_OPEN}[", msg.n_ref);
    for (i, p) in msg.points.iter().enumerate() {
        if !p.in_range() {
            return Err(Error::validation(format!(
                "point ({}, {}) outside [0, 1000]",
                p.gx, p.gy
            )));
        }
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("[{},{}]", p.gx.round() as i64, p.gy.round() as i64));
    }
    out.push(']');
    out.push_str(POINT_CLOSE);
    Ok(out)
}

/// Complete `open…close` spans, left to right, non-overlapping. Returns the
/// inner text of each span and whether an unmatched opener was seen.
fn spans<'a>(text: &'a str, open: &str, close: &str) -> (Vec<&'a str>, bool) {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let Some(start) = rest.find(open) else {
            return (out, false);
        };
        let after = &rest[start + open.len()..];
        match after.find(close) {
            Some(end) => {
                out.push(&after[..end]);
                rest = &after[end + close.len()..];
            }
            None => return (out, true),
        }
    }
}

/// One `[int,int]` pair at the start of `s`, returning the pair and the
/// number of bytes consumed.
fn pair_at(s: &[u8]) -> Option<((i64, i64), usize)> {
    fn skip_ws(s: &[u8], mut i: usize) -> usize {
        while i < s.len() && s[i].is_ascii_whitespace() {
            i += 1;
        }
        i
    }
    fn int_at(s: &[u8], i: usize) -> Option<(i64, usize)> {
        let mut j = i;
        if j < s.len() && s[j] == b'-' {
            j += 1;
        }
        let digits = j;
        while j < s.len() && s[j].is_ascii_digit() {
            j += 1;
        }
        if j == digits {
            return None;
        }
        std::str::from_utf8(&s[i..j]).ok()?.parse().ok().map(|v| (v, j))
    }
    if s.first() != Some(&b'[') {
        return None;
    }
    let i = skip_ws(s, 1);
    let (x, i) = int_at(s, i)?;
    let i = skip_ws(s, i);
    if s.get(i) != Some(&b',') {
        return None;
    }
    let i = skip_ws(s, i + 1);
    let (y, i) = int_at(s, i)?;
    let i = skip_ws(s, i);
    if s.get(i) != Some(&b']') {
        return None;
    }
    Some(((x, y), i + 1))
}

/// Extracts every complete pair from a point span. The flag reports whether
/// the span contained anything besides pairs, brackets, commas and
/// whitespace.
fn scan_pairs(span: &str) -> (Vec<(i64, i64)>, bool) {
    let bytes = span.as_bytes();
    let mut pairs = Vec::new();
    let mut clean = true;
    let mut i = 0;
    while i < bytes.len() {
        if let Some((pair, used)) = pair_at(&bytes[i..]) {
            pairs.push(pair);
            i += used;
            continue;
        }
        let b = bytes[i];
        if !(b == b'[' || b == b']' || b == b',' || b.is_ascii_whitespace()) {
            clean = false;
        }
        i += 1;
    }
    (pairs, clean)
}

pub fn parse(text: &str) -> ParseOutcome {
    let mut diagnostics = Vec::new();

    let (ref_spans, ref_dangling) = spans(text, REF_OPEN, REF_CLOSE);
    let n_ref = match ref_spans.first() {
        None => {
            diagnostics.push(if ref_dangling || text.contains(REF_OPEN) {
                format!("missing {REF_CLOSE}")
            } else if text.contains(REF_CLOSE) {
                format!("missing {REF_OPEN}")
            } else {
                format!("missing {REF_OPEN} and {REF_CLOSE}")
            });
            None
        }
        Some(inner) => {
            let trimmed = inner.trim();
            let parsed = if !trimmed.is_empty() && trimmed.bytes().all(|b| b.is_ascii_digit()) {
                trimmed.parse::<usize>().ok()
            } else {
                None
            };
            if parsed.is_none() {
                diagnostics.push(format!("{REF_OPEN} content `{trimmed}` is not a nonnegative integer"));
            }
            parsed
        }
    };
    if ref_spans.len() > 1 {
        diagnostics.push(format!("{} extra {REF_OPEN} spans ignored", ref_spans.len() - 1));
    }

    let (point_spans, point_dangling) = spans(text, POINT_OPEN, POINT_CLOSE);
    let mut has_points = true;
    if point_spans.is_empty() {
        has_points = false;
        diagnostics.push(if point_dangling || text.contains(POINT_OPEN) {
            format!("missing {POINT_CLOSE}")
        } else if text.contains(POINT_CLOSE) {
            format!("missing {POINT_OPEN}")
        } else {
            format!("missing {POINT_OPEN} and {POINT_CLOSE}")
        });
    } else if point_dangling {
        diagnostics.push(format!("unterminated {POINT_OPEN} after complete spans ignored"));
    }
    if point_spans.len() > 1 {
        diagnostics.push(format!("{} {POINT_OPEN} spans concatenated", point_spans.len()));
    }

    let mut raw_pairs = Vec::new();
    let mut clean = true;
    for span in &point_spans {
        let (pairs, ok) = scan_pairs(span);
        raw_pairs.extend(pairs);
        clean &= ok;
    }
    if !clean {
        diagnostics.push(format!("malformed content inside {POINT_OPEN} span"));
    }
    let extent = GRID_EXTENT as i64;
    let out_of_range = raw_pairs
        .iter()
        .filter(|(x, y)| !(0..=extent).contains(x) || !(0..=extent).contains(y))
        .count();
    if out_of_range > 0 {
        diagnostics.push(format!("{out_of_range} coordinate pairs outside [0, 1000]"));
    }

    let points: Vec<GridPoint> = raw_pairs
        .iter()
        .map(|&(x, y)| GridPoint::new(x as f64, y as f64))
        .collect();
    ParseOutcome {
        valid_format: n_ref.is_some() && has_points && clean && out_of_range == 0,
        n_ref,
        n_actual: points.len(),
        points,
        diagnostics,
    }
}

/// One model output in an offline batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub prompt_id: String,
    pub text: String,
}

/// Reads a JSONL batch of `{prompt_id, text}` records.
pub fn load_batch<R: Read>(source: R) -> Result<Vec<BatchRecord>> {
    let mut out = Vec::new();
    let mut row = 0;
    for line in BufReader::new(source).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            row,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(n_ref: usize, pts: &[(i64, i64)]) -> PointMessage {
        PointMessage {
            n_ref,
            points: pts.iter().map(|&(x, y)| GridPoint::new(x as f64, y as f64)).collect(),
        }
    }

    #[test]
    fn serialize_examples() {
        assert_eq!(
            serialize(&msg(2, &[(475, 142), (361, 156)])).unwrap(),
            "<ref>2</ref><point>[[475,142],[361,156]]</point>"
        );
        assert_eq!(serialize(&msg(0, &[])).unwrap(), "<ref>0</ref><point>[]</point>");
        assert!(serialize(&msg(1, &[(1001, 0)])).is_err());
    }

    #[test]
    fn missing_close_point_is_invalid_and_named() {
        let out = parse("<ref>2</ref><point>[[1,2],[3,4]]");
        assert!(!out.valid_format);
        assert!(out.diagnostics.iter().any(|d| d.contains("</point>")), "{:?}", out.diagnostics);
    }

    #[test]
    fn count_mismatch_is_still_valid() {
        let out = parse("<ref>3</ref><point>[[1,2],[3,4]]</point>");
        assert!(out.valid_format);
        assert_eq!(out.n_ref, Some(3));
        assert_eq!(out.n_actual, 2);
    }

    #[test]
    fn invalid_cases() {
        for text in [
            "",
            "no tokens at all",
            "<point>[[1,2]]</point>",
            "<ref>1</ref>",
            "<ref>-1</ref><point>[[1,2]]</point>",
            "<ref>two</ref><point>[[1,2]]</point>",
            "<ref>1</ref><point>[[1,2001]]</point>",
            "<ref>1</ref><point>[[1,x]]</point>",
            "<ref>1</ref><point>[[1.5,2]]</point>",
            "<ref>1<point>[[1,2]]</point>",
        ] {
            assert!(!parse(text).valid_format, "{text}");
        }
    }

    #[test]
    fn malformed_pairs_not_counted() {
        let out = parse("<ref>2</ref><point>[[1,2],[3,]]</point>");
        assert!(!out.valid_format);
        assert_eq!(out.n_actual, 1);
    }

    #[test]
    fn whitespace_and_span_per_point_forms() {
        let out = parse("<ref> 2 </ref>\n<point>[ [ 10 , 20 ] , [30,40] ]</point>");
        assert!(out.valid_format);
        assert_eq!(out.message().unwrap(), msg(2, &[(10, 20), (30, 40)]));

        let out = parse("<ref>2</ref><point>[10,20]</point><point>[30,40]</point>");
        assert!(out.valid_format);
        assert_eq!(out.n_actual, 2);
    }

    #[test]
    fn first_ref_wins() {
        let out = parse("<ref>4</ref><ref>9</ref><point>[]</point>");
        assert_eq!(out.n_ref, Some(4));
        assert!(out.valid_format);
        assert!(out.diagnostics.iter().any(|d| d.contains("extra")));
    }

    #[test]
    fn huge_numbers_do_not_panic() {
        let out = parse("<ref>99999999999999999999999999</ref><point>[[99999999999999999999999,1]]</point>");
        assert!(!out.valid_format);
    }

    #[test]
    fn batch_jsonl() {
        let src = "{\"prompt_id\":\"a\",\"text\":\"<ref>0</ref><point>[]</point>\"}\n\n{\"prompt_id\":\"b\",\"text\":\"x\"}\n";
        let b = load_batch(src.as_bytes()).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].prompt_id, "b");
        assert!(matches!(load_batch("{oops".as_bytes()), Err(Error::Record { row: 1, .. })));
    }

    fn arb_msg() -> impl Strategy<Value = PointMessage> {
        (0usize..500, prop::collection::vec((0i64..=1000, 0i64..=1000), 0..40))
            .prop_map(|(n, pts)| msg(n, &pts))
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(m in arb_msg()) {
            let text = serialize(&m).unwrap();
            let out = parse(&text);
            prop_assert!(out.valid_format);
            prop_assert_eq!(out.message().unwrap(), m);
        }

        #[test]
        fn appending_garbage_keeps_validity(m in arb_msg(), garbage in "[^<]{0,40}") {
            let text = serialize(&m).unwrap() + &garbage;
            prop_assert!(parse(&text).valid_format);
        }

        #[test]
        fn never_panics(s in "\\PC{0,80}") {
            let out = parse(&s);
            prop_assert_eq!(out.n_actual, out.points.len());
        }
    }
}
