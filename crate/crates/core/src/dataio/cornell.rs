//! Parser for Cornell-style grasp rectangle files.
//!
//! The format is plain text with one "x y" vertex per line and four
//! consecutive lines forming one rectangle. Some labels in the original data
//! contain NaN vertices; such groups are skipped and counted rather than
//! failing the whole file.

use crate::error::{Error, Result};
use crate::geometry::{rect_from_vertices, OrientedRect, Point};

/// Parse outcome: the rectangles plus the number of NaN groups skipped.
#[derive(Debug, Clone, Default)]
pub struct ParsedRects {
    pub rects: Vec<OrientedRect>,
    pub skipped: usize,
}

/// One Cornell sample: graspable and non-graspable rectangles for an image.
#[derive(Debug, Clone)]
pub struct CornellSample {
    pub image_id: String,
    pub positives: Vec<OrientedRect>,
    pub negatives: Vec<OrientedRect>,
    /// Object identity key used for object-wise cross-validation splits.
    pub group_key: String,
    pub skipped: usize,
}

impl CornellSample {
    pub fn from_texts(image_id: &str, pos_text: &str, neg_text: &str) -> Result<Self> {
        let pos = parse_cornell_rect_file(pos_text)?;
        let neg = parse_cornell_rect_file(neg_text)?;
        Ok(Self {
            image_id: image_id.to_string(),
            positives: pos.rects,
            negatives: neg.rects,
            group_key: object_group_key(image_id),
            skipped: pos.skipped + neg.skipped,
        })
    }
}

/// Object-group key: the numeric id from the image name with its last digit
/// dropped, so neighbouring captures of the same object share a key. The rule
/// is a documented convention; use your own keys for other datasets.
pub fn object_group_key(image_id: &str) -> String {
    let digits: String = image_id.chars().filter(|c| c.is_ascii_digit()).collect();
    if digits.len() > 1 {
        digits[..digits.len() - 1].to_string()
    } else {
        image_id.to_string()
    }
}

/// Parse a rectangle file. Four lines of "x y" per rectangle; a group with
/// any NaN coordinate is skipped and counted; non-numeric tokens and a line
/// count not divisible by four are hard errors with line numbers.
pub fn parse_cornell_rect_file(text: &str) -> Result<ParsedRects> {
    let mut points: Vec<(usize, Point, bool)> = Vec::new(); // (line, point, has_nan)
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::MalformedLine {
                line,
                token: trimmed.to_string(),
            });
        }
        let mut coords = [0.0f64; 2];
        let mut has_nan = false;
        for (k, tok) in tokens.iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::MalformedLine {
                line,
                token: tok.to_string(),
            })?;
            if v.is_nan() {
                has_nan = true;
            }
            coords[k] = v;
        }
        points.push((line, coords, has_nan));
    }

    if points.len() % 4 != 0 {
        let extra = points.len() % 4;
        return Err(Error::TruncatedFile {
            line: points[points.len() - extra].0,
            extra,
        });
    }

    let mut out = ParsedRects::default();
    for group in points.chunks_exact(4) {
        if group.iter().any(|(_, _, nan)| *nan) {
            out.skipped += 1;
            continue;
        }
        let pts = [group[0].1, group[1].1, group[2].1, group[3].1];
        let rect = rect_from_vertices(&pts).map_err(|e| Error::BadRectangleGroup {
            line: group[0].0,
            source: Box::new(e),
        })?;
        out.rects.push(rect);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn parses_single_rectangle() {
        let text = "2 1\n-2 1\n-2 -1\n2 -1\n";
        let parsed = parse_cornell_rect_file(text).unwrap();
        assert_eq!(parsed.rects.len(), 1);
        assert_eq!(parsed.skipped, 0);
        let r = &parsed.rects[0];
        assert_abs_diff_eq!(r.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.h, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.w, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn nan_group_skipped_clean_group_kept() {
        let text = "NaN 1\n-2 1\n-2 -1\n2 -1\n2 1\n-2 1\n-2 -1\n2 -1\n";
        let parsed = parse_cornell_rect_file(text).unwrap();
        assert_eq!(parsed.rects.len(), 1);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn truncated_file_rejected() {
        let text = "2 1\n-2 1\n-2 -1\n2 -1\n5 5\n6 6\n";
        match parse_cornell_rect_file(text) {
            Err(Error::TruncatedFile { line: 5, extra: 2 }) => {}
            other => panic!("expected TruncatedFile at line 5, got {other:?}"),
        }
    }

    #[test]
    fn malformed_token_rejected() {
        let text = "2 1\nfoo 1\n-2 -1\n2 -1\n";
        match parse_cornell_rect_file(text) {
            Err(Error::MalformedLine { line: 2, token }) => assert_eq!(token, "foo"),
            other => panic!("expected MalformedLine, got {other:?}"),
        }
    }

    #[test]
    fn group_key_drops_last_digit() {
        assert_eq!(object_group_key("pcd0135r"), "013");
        assert_eq!(object_group_key("0100"), "010");
    }
}
