//! `HEADS` annotation text files:
//!
//! ```text
//! HEADS 1
//! image <width> <height>
//! count <N>
//! <x> <y>        (N lines)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{read_file, write_file};
use crate::error::{FormatError, Result};
use crate::groundtruth::HeadAnnotations;

pub const VERSION: u32 = 1;

fn parse_err(line: usize, reason: impl Into<String>) -> crate::error::Error {
    FormatError::Parse {
        format: "HEADS",
        line,
        reason: reason.into(),
    }
    .into()
}

fn fields<'a>(line: &'a str, n: usize, keyword: Option<&str>, lineno: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let offset = usize::from(keyword.is_some());
    if let Some(k) = keyword {
        if parts.first() != Some(&k) {
            return Err(parse_err(lineno, format!("expected `{k}`")));
        }
    }
    if parts.len() != n + offset {
        return Err(parse_err(lineno, format!("expected {n} value(s)")));
    }
    Ok(parts[offset..].to_vec())
}

fn number<T: std::str::FromStr>(s: &str, lineno: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(lineno, format!("invalid {what} `{s}`")))
}

pub fn parse(text: &str) -> Result<HeadAnnotations> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| parse_err(0, format!("missing {what}")));

    let (n, l) = next("header")?;
    let v: u32 = number(fields(l, 1, Some("HEADS"), n)?[0], n, "version")?;
    if v != VERSION {
        return Err(FormatError::Version {
            format: "HEADS",
            expected: VERSION,
            found: v,
        }
        .into());
    }
    let (n, l) = next("image line")?;
    let f = fields(l, 2, Some("image"), n)?;
    let width: usize = number(f[0], n, "width")?;
    let height: usize = number(f[1], n, "height")?;
    if width == 0 || height == 0 {
        return Err(parse_err(n, "image dims must be positive"));
    }
    let (n, l) = next("count line")?;
    let count: usize = number(fields(l, 1, Some("count"), n)?[0], n, "count")?;

    let mut points = Vec::with_capacity(count.min(text.len() / 4 + 1));
    for (n, l) in lines {
        if points.len() == count {
            return Err(parse_err(n, format!("more points than the declared {count}")));
        }
        let f = fields(l, 2, None, n)?;
        let x: f64 = number(f[0], n, "x")?;
        let y: f64 = number(f[1], n, "y")?;
        points.push((x, y));
    }
    if points.len() != count {
        return Err(parse_err(0, format!("declared {count} points, found {}", points.len())));
    }
    HeadAnnotations::new(width, height, points)
}

pub fn format(ann: &HeadAnnotations) -> String {
    let mut s = format!("HEADS {VERSION}\nimage {} {}\ncount {}\n", ann.width, ann.height, ann.points.len());
    for &(x, y) in &ann.points {
        let _ = writeln!(s, "{x} {y}");
    }
    s
}

pub fn load(path: &Path) -> Result<HeadAnnotations> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| parse_err(0, "file is not UTF-8"))?;
    parse(text)
}

pub fn save(path: &Path, ann: &HeadAnnotations) -> Result<()> {
    write_file(path, format(ann).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn parses_and_round_trips() {
        let text = "HEADS 1\nimage 100 80\ncount 2\n10.5 20.25\n0 79.9\n";
        let ann = parse(text).unwrap();
        assert_eq!((ann.width, ann.height), (100, 80));
        assert_eq!(ann.points, vec![(10.5, 20.25), (0.0, 79.9)]);
        assert_eq!(format(&ann), text);
        assert_eq!(parse(&format(&ann)).unwrap(), ann);
    }

    #[test]
    fn count_mismatch() {
        assert!(matches!(
            parse("HEADS 1\nimage 10 10\ncount 2\n1 1\n"),
            Err(Error::Format(FormatError::Parse { .. }))
        ));
        assert!(matches!(
            parse("HEADS 1\nimage 10 10\ncount 0\n1 1\n"),
            Err(Error::Format(FormatError::Parse { line: 4, .. }))
        ));
    }

    #[test]
    fn out_of_bounds_rejected() {
        assert!(matches!(
            parse("HEADS 1\nimage 10 10\ncount 1\n10 3\n"),
            Err(Error::PointOutOfBounds { .. })
        ));
        assert!(parse("HEADS 1\nimage 10 10\ncount 1\n-0.1 3\n").is_err());
        assert!(parse("HEADS 1\nimage 10 10\ncount 1\nNaN 3\n").is_err());
    }

    #[test]
    fn malformed_headers() {
        for text in [
            "",
            "HEAD 1\n",
            "HEADS 2\nimage 1 1\ncount 0\n",
            "HEADS 1\nimage 0 5\ncount 0\n",
            "HEADS 1\nimage 5\ncount 0\n",
            "HEADS 1\nimage 5 5\ncount -1\n",
            "HEADS 1\nimage 5 5\ncount 1\n1 2 3\n",
        ] {
            assert!(parse(text).is_err(), "{text:?}");
        }
    }

    #[test]
    fn empty_annotation_is_valid() {
        assert!(parse("HEADS 1\nimage 4 4\ncount 0\n").unwrap().points.is_empty());
    }
}
