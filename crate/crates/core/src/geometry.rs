//! Relative-coordinate boxes and their textual form.
//!
//! Boxes live in `[0,1]²` with `(x1, y1)` the top-left and `(x2, y2)` the
//! bottom-right corner. In text a group of boxes is written inside one bracket
//! pair, coordinates with two decimals and boxes separated by `;`:
//!
//! ```text
//! [0.10, 0.05, 0.64, 1.00; 0.50, 0.15, 0.64, 1.00]
//! ```
//!
//! Groups with more than [`MAX_ENCODED_BOXES`] members are replaced by their
//! covering box when encoded.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest group written out box by box; larger groups collapse to one box.
pub const MAX_ENCODED_BOXES: usize = 3;

/// Coordinates this far outside `[0,1]` are clamped instead of rejected.
pub const COORD_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub const FULL: BBox = BBox {
        x1: 0.0,
        y1: 0.0,
        x2: 1.0,
        y2: 1.0,
    };

    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        if coords.iter().any(|c| !c.is_finite() || !(0.0..=1.0).contains(c)) {
            return Err(Error::validation(format!(
                "box coordinates must lie in [0,1], got [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::validation(format!(
                "box corners out of order: [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.2}, {:.2}, {:.2}, {:.2}",
            self.x1, self.y1, self.x2, self.y2
        )
    }
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Non-empty ordered list of boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BBox>", into = "Vec<BBox>")]
pub struct BoxGroup(Vec<BBox>);

impl BoxGroup {
    pub fn new(boxes: Vec<BBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::validation("box group must contain at least one box"));
        }
        Ok(BoxGroup(boxes))
    }

    pub fn single(b: BBox) -> Self {
        BoxGroup(vec![b])
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Smallest box containing every member.
    pub fn covering_box(&self) -> BBox {
        let mut out = self.0[0];
        for b in &self.0[1..] {
            out.x1 = out.x1.min(b.x1);
            out.y1 = out.y1.min(b.y1);
            out.x2 = out.x2.max(b.x2);
            out.y2 = out.y2.max(b.y2);
        }
        out
    }
}

impl TryFrom<Vec<BBox>> for BoxGroup {
    type Error = Error;

    fn try_from(v: Vec<BBox>) -> Result<Self> {
        BoxGroup::new(v)
    }
}

impl From<BoxGroup> for Vec<BBox> {
    fn from(g: BoxGroup) -> Self {
        g.0
    }
}

/// Covering box of an arbitrary slice; errors on an empty slice.
pub fn covering_box(boxes: &[BBox]) -> Result<BBox> {
    Ok(BoxGroup::new(boxes.to_vec())?.covering_box())
}

/// Canonical text for a group: two decimals, `"; "` between boxes, merged
/// into the covering box when the group has more than three members.
pub fn encode_group(group: &BoxGroup) -> String {
    if group.len() > MAX_ENCODED_BOXES {
        return format!("[{}]", group.covering_box());
    }
    let parts: Vec<String> = group.boxes().iter().map(|b| b.to_string()).collect();
    format!("[{}]", parts.join("; "))
}

/// Parses exactly one bracketed group, optionally surrounded by whitespace.
pub fn parse_group(text: &str) -> Result<BoxGroup> {
    let mut p = GroupParser::new(text, 0);
    p.skip_ws();
    let group = p.group()?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.err("trailing characters after closing bracket"));
    }
    Ok(group)
}

/// Parses a group whose opening bracket is at the start of `text`; offsets in
/// errors are shifted by `base`. Returns the group and the bytes consumed.
pub(crate) fn parse_group_prefix(text: &str, base: usize) -> Result<(BoxGroup, usize)> {
    let mut p = GroupParser::new(text, base);
    let g = p.group()?;
    Ok((g, p.pos))
}

struct GroupParser<'a> {
    src: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> GroupParser<'a> {
    fn new(text: &'a str, base: usize) -> Self {
        GroupParser {
            src: text.as_bytes(),
            pos: 0,
            base,
        }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        self.err_at(self.pos, reason)
    }

    fn err_at(&self, pos: usize, reason: impl Into<String>) -> Error {
        Error::BoxParse {
            offset: self.base + pos,
            reason: reason.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, byte: u8) -> Result<()> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", byte as char)))
        }
    }

    fn group(&mut self) -> Result<BoxGroup> {
        self.expect(b'[')?;
        let mut boxes = Vec::new();
        loop {
            boxes.push(self.bbox()?);
            self.skip_ws();
            match self.peek() {
                Some(b';') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return BoxGroup::new(boxes);
                }
                Some(b',') => return Err(self.err("box has more than 4 coordinates")),
                Some(_) => return Err(self.err("expected ';' or ']'")),
                None => return Err(self.err("unterminated box group")),
            }
        }
    }

    fn bbox(&mut self) -> Result<BBox> {
        self.skip_ws();
        let start = self.pos;
        let mut c = [0.0; 4];
        for (i, slot) in c.iter_mut().enumerate() {
            if i > 0 {
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b';') | Some(b']') => {
                        return Err(self.err(format!("box has {i} coordinates, expected 4")))
                    }
                    _ => return Err(self.err("expected ','")),
                }
            }
            *slot = self.coord()?;
        }
        BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| self.err_at(start, e.to_string()))
    }

    fn coord(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E'))
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a coordinate"));
        }
        // Only ASCII bytes were consumed, so this slice is valid UTF-8.
        let lit = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let v: f64 = lit
            .parse()
            .map_err(|_| self.err_at(start, format!("invalid number {lit:?}")))?;
        if !v.is_finite() || !(-COORD_TOLERANCE..=1.0 + COORD_TOLERANCE).contains(&v) {
            return Err(self.err_at(start, format!("coordinate {lit} outside [0,1]")));
        }
        Ok(v.clamp(0.0, 1.0))
    }
}
