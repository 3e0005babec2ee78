//! Annotation ingestion: HTML structure tokens plus cell or text-line boxes
//! into a [`LogicalTable`].
//!
//! Two box styles are supported. Cell-level boxes become cell quads
//! directly. Text-line boxes are widened to their column/row extents and the
//! gaps between neighboring rows and columns are split at the midpoint; the
//! cell quads are then rebuilt from those separators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Quad};
use crate::grid_model::{Cell, LogicalTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HtmlToken {
    TableOpen,
    TableClose,
    TheadOpen,
    TheadClose,
    TbodyOpen,
    TbodyClose,
    RowOpen,
    RowClose,
    CellOpen { rowspan: usize, colspan: usize },
    CellClose,
    Text(String),
}

impl fmt::Display for HtmlToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HtmlToken::TableOpen => f.write_str("<table>"),
            HtmlToken::TableClose => f.write_str("</table>"),
            HtmlToken::TheadOpen => f.write_str("<thead>"),
            HtmlToken::TheadClose => f.write_str("</thead>"),
            HtmlToken::TbodyOpen => f.write_str("<tbody>"),
            HtmlToken::TbodyClose => f.write_str("</tbody>"),
            HtmlToken::RowOpen => f.write_str("<tr>"),
            HtmlToken::RowClose => f.write_str("</tr>"),
            HtmlToken::CellOpen { rowspan, colspan } => {
                f.write_str("<td")?;
                if *rowspan != 1 {
                    write!(f, " rowspan=\"{rowspan}\"")?;
                }
                if *colspan != 1 {
                    write!(f, " colspan=\"{colspan}\"")?;
                }
                f.write_str(">")
            }
            HtmlToken::CellClose => f.write_str("</td>"),
            HtmlToken::Text(t) => f.write_str(t),
        }
    }
}

/// Ordered structure tokens of one table.
///
/// Serialized as a list of token strings. On read it also accepts a single
/// raw HTML string, and list items split PubTabNet-style
/// (`"<td"`, `" colspan=\"2\""`, `">"`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HtmlTokenStream(pub Vec<HtmlToken>);

impl fmt::Display for HtmlTokenStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|t| write!(f, "{t}"))
    }
}

impl Serialize for HtmlTokenStream {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.iter().map(ToString::to_string).collect::<Vec<_>>().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HtmlTokenStream {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Html(String),
            Tokens(Vec<String>),
        }
        match Raw::deserialize(d)? {
            Raw::Html(s) => s.parse(),
            Raw::Tokens(t) => HtmlTokenStream::from_token_strings(&t),
        }
        .map_err(serde::de::Error::custom)
    }
}

fn parse_span_attr(attrs: &str, name: &str) -> Result<usize> {
    let lower = attrs.to_ascii_lowercase();
    let Some(pos) = lower.find(name) else { return Ok(1) };
    let rest = attrs[pos + name.len()..].trim_start();
    let rest = rest
        .strip_prefix('=')
        .ok_or_else(|| Error::Html(format!("malformed {name} attribute in `{attrs}`")))?
        .trim_start();
    let value: String = rest
        .trim_start_matches(['"', '\''])
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let v: usize = value.parse().map_err(|_| Error::Html(format!("malformed {name} attribute in `{attrs}`")))?;
    if v == 0 {
        return Err(Error::Html(format!("{name} must be at least 1")));
    }
    Ok(v)
}

/// Classifies one complete tag like `<td colspan="2">` or `</tr>`.
/// Returns `None` for tags outside the structural vocabulary.
fn classify_tag(tag: &str) -> Result<Option<HtmlToken>> {
    let inner = tag.trim_start_matches('<').trim_end_matches('>').trim();
    let (closing, inner) = match inner.strip_prefix('/') {
        Some(rest) => (true, rest.trim()),
        None => (false, inner),
    };
    let name_end = inner.find(|c: char| c.is_whitespace()).unwrap_or(inner.len());
    let name = inner[..name_end].to_ascii_lowercase();
    let attrs = &inner[name_end..];
    Ok(Some(match (name.as_str(), closing) {
        ("table", false) => HtmlToken::TableOpen,
        ("table", true) => HtmlToken::TableClose,
        ("thead", false) => HtmlToken::TheadOpen,
        ("thead", true) => HtmlToken::TheadClose,
        ("tbody", false) => HtmlToken::TbodyOpen,
        ("tbody", true) => HtmlToken::TbodyClose,
        ("tr", false) => HtmlToken::RowOpen,
        ("tr", true) => HtmlToken::RowClose,
        ("td" | "th", false) => HtmlToken::CellOpen {
            rowspan: parse_span_attr(attrs, "rowspan")?,
            colspan: parse_span_attr(attrs, "colspan")?,
        },
        ("td" | "th", true) => HtmlToken::CellClose,
        _ => return Ok(None),
    }))
}

impl HtmlTokenStream {
    pub fn from_token_strings<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut k = 0;
        while k < items.len() {
            let item = items[k].as_ref();
            let trimmed = item.trim();
            if trimmed == "<td" || trimmed == "<th" {
                // split form: "<td", attr..., ">"
                let mut tag = String::from("<td");
                k += 1;
                loop {
                    let part = items.get(k).ok_or_else(|| Error::Html("unterminated <td".into()))?.as_ref();
                    k += 1;
                    if part.trim() == ">" {
                        break;
                    }
                    tag.push(' ');
                    tag.push_str(part.trim());
                }
                tag.push('>');
                tokens.extend(classify_tag(&tag)?);
                continue;
            }
            if trimmed.starts_with('<') && trimmed.ends_with('>') {
                if let Some(t) = classify_tag(trimmed)? {
                    tokens.push(t);
                }
            } else if !trimmed.is_empty() {
                tokens.push(HtmlToken::Text(item.to_string()));
            }
            k += 1;
        }
        Ok(HtmlTokenStream(merge_text(tokens)))
    }

    /// Number of `<td>` tokens.
    pub fn cell_count(&self) -> usize {
        self.0.iter().filter(|t| matches!(t, HtmlToken::CellOpen { .. })).count()
    }
}

fn merge_text(tokens: Vec<HtmlToken>) -> Vec<HtmlToken> {
    let mut out: Vec<HtmlToken> = Vec::with_capacity(tokens.len());
    for t in tokens {
        match (out.last_mut(), t) {
            (Some(HtmlToken::Text(prev)), HtmlToken::Text(next)) => prev.push_str(&next),
            (_, t) => out.push(t),
        }
    }
    out
}

impl FromStr for HtmlTokenStream {
    type Err = Error;

    /// Tokenizes raw HTML. Tags outside the table vocabulary (`<b>`, `<br>`, ...)
    /// are dropped; text between tags is kept.
    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut rest = s;
        while !rest.is_empty() {
            match rest.find('<') {
                Some(0) => {
                    let end = rest.find('>').ok_or_else(|| Error::Html("unterminated tag".into()))?;
                    tokens.extend(classify_tag(&rest[..=end])?);
                    rest = &rest[end + 1..];
                }
                Some(p) => {
                    push_text(&mut tokens, &rest[..p]);
                    rest = &rest[p..];
                }
                None => {
                    push_text(&mut tokens, rest);
                    rest = "";
                }
            }
        }
        Ok(HtmlTokenStream(merge_text(tokens)))
    }
}

fn push_text(tokens: &mut Vec<HtmlToken>, text: &str) {
    if !text.trim().is_empty() {
        tokens.push(HtmlToken::Text(text.to_string()));
    }
}

/// Logical grid read from HTML structure. Cells are in `<td>` order and carry
/// content but no geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct HtmlStructure {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
}

#[derive(Clone, Copy, PartialEq)]
enum Scope {
    Outside,
    Table,
    Section,
    Row,
    Cell,
}

/// Assigns each `<td>` its spans with an occupancy scan: rows fill left to
/// right, skipping slots already taken by rowspans from above.
pub fn parse_html_structure(h: &HtmlTokenStream) -> Result<HtmlStructure> {
    let mut scope = Scope::Outside;
    let mut seen_table = false;
    let mut in_section = false;
    let mut occupied: Vec<Vec<bool>> = Vec::new();
    let mut cells: Vec<Cell> = Vec::new();
    let mut row: Option<usize> = None;
    let mut rows = 0usize;
    let mut col = 0usize;
    let unbalanced = |what: &str| Error::Html(format!("unbalanced tokens: unexpected {what}"));

    for tok in &h.0 {
        match (tok, scope) {
            (HtmlToken::TableOpen, Scope::Outside) if !seen_table => {
                seen_table = true;
                scope = Scope::Table;
            }
            (HtmlToken::TableClose, Scope::Table) => scope = Scope::Outside,
            (HtmlToken::TheadOpen | HtmlToken::TbodyOpen, Scope::Table) => {
                scope = Scope::Section;
                in_section = true;
            }
            (HtmlToken::TheadClose | HtmlToken::TbodyClose, Scope::Section) => {
                scope = Scope::Table;
                in_section = false;
            }
            (HtmlToken::RowOpen, Scope::Table | Scope::Section) => {
                let r = rows;
                rows += 1;
                row = Some(r);
                col = 0;
                scope = Scope::Row;
            }
            (HtmlToken::RowClose, Scope::Row) => scope = if in_section { Scope::Section } else { Scope::Table },
            (HtmlToken::CellOpen { rowspan, colspan }, Scope::Row) => {
                let r = row.expect("inside row");
                let grow = |occ: &mut Vec<Vec<bool>>, rr: usize, cc: usize| {
                    if occ.len() <= rr {
                        occ.resize(rr + 1, Vec::new());
                    }
                    if occ[rr].len() <= cc {
                        occ[rr].resize(cc + 1, false);
                    }
                };
                grow(&mut occupied, r, col);
                while occupied[r].get(col).copied().unwrap_or(false) {
                    col += 1;
                }
                for rr in r..r + rowspan {
                    for cc in col..col + colspan {
                        grow(&mut occupied, rr, cc);
                        if occupied[rr][cc] {
                            return Err(Error::Html(format!("cell {} overlaps slot ({rr},{cc})", cells.len())));
                        }
                        occupied[rr][cc] = true;
                    }
                }
                cells.push(Cell::new(r, r + rowspan - 1, col, col + colspan - 1));
                col += colspan;
                scope = Scope::Cell;
            }
            (HtmlToken::CellClose, Scope::Cell) => scope = Scope::Row,
            (HtmlToken::Text(t), Scope::Cell) => {
                let cell = cells.last_mut().expect("inside cell");
                match &mut cell.content {
                    Some(c) => c.push_str(t),
                    None => cell.content = Some(t.clone()),
                }
            }
            (HtmlToken::Text(_), _) => {}
            (other, _) => return Err(unbalanced(&other.to_string())),
        }
    }
    if scope != Scope::Outside || !seen_table {
        return Err(Error::Html("unbalanced tokens: table not closed".into()));
    }
    if rows == 0 || cells.is_empty() {
        return Err(Error::Html("table has no cells".into()));
    }
    if occupied.len() > rows {
        return Err(Error::Html(format!("rowspan extends past the last row ({} > {rows})", occupied.len())));
    }
    let cols = occupied.iter().map(|r| r.iter().rposition(|&o| o).map_or(0, |p| p + 1)).max().unwrap_or(0);
    for (r, occ) in occupied.iter().enumerate() {
        let filled = occ.iter().filter(|&&o| o).count();
        if filled != cols {
            return Err(Error::Html(format!("ragged row {r}: {filled} of {cols} slots occupied")));
        }
    }
    if occupied.len() < rows {
        return Err(Error::Html(format!("ragged row {}: no cells", occupied.len())));
    }
    Ok(HtmlStructure { rows, cols, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxGranularity {
    #[default]
    CellLevel,
    TextLineLevel,
}

/// One annotated box: a bare `[x1,y1,x2,y2]`, a bare quad, or an object that
/// can also carry logical spans and content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxAnn {
    Rect(BBox),
    Quad(Quad),
    Detailed(DetailedBox),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetailedBox {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad: Option<Quad>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl BoxAnn {
    pub fn quad(&self) -> Option<Quad> {
        match self {
            BoxAnn::Rect(b) => Some(b.to_quad()),
            BoxAnn::Quad(q) => Some(*q),
            BoxAnn::Detailed(d) => d.quad.or_else(|| d.bbox.map(|b| b.to_quad())),
        }
    }

    fn content(&self) -> Option<&str> {
        match self {
            BoxAnn::Detailed(d) => d.content.as_deref(),
            _ => None,
        }
    }

    fn spans(&self) -> Option<(usize, usize, usize, usize)> {
        match self {
            BoxAnn::Detailed(DetailedBox {
                row_start: Some(rs),
                row_end: Some(re),
                col_start: Some(cs),
                col_end: Some(ce),
                ..
            }) => Some((*rs, *re, *cs, *ce)),
            _ => None,
        }
    }
}

/// One annotated table as it appears in a dataset file. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image_w: f64,
    pub image_h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html: Option<HtmlTokenStream>,
    /// One entry per cell in reading order; `null` marks a cell without a box.
    #[serde(default)]
    pub boxes: Vec<Option<BoxAnn>>,
    #[serde(default)]
    pub box_granularity: BoxGranularity,
}

/// Pairs boxes with `<td>` cells. Equal counts pair one-to-one; otherwise the
/// boxes must match the cells that have text, in order.
fn align_boxes<'a>(cells: &[Cell], boxes: &'a [Option<BoxAnn>]) -> Result<Vec<Option<&'a BoxAnn>>> {
    if boxes.len() == cells.len() {
        return Ok(boxes.iter().map(Option::as_ref).collect());
    }
    let with_text = cells.iter().filter(|c| c.has_text()).count();
    if boxes.len() != with_text {
        return Err(Error::Annotation(format!(
            "{} boxes for {} cells ({} with text)",
            boxes.len(),
            cells.len(),
            with_text
        )));
    }
    let mut it = boxes.iter();
    Ok(cells
        .iter()
        .map(|c| if c.has_text() { it.next().and_then(Option::as_ref) } else { None })
        .collect())
}

/// Rebuilds cell-level quads from text-line boxes.
///
/// Column `c` extends from the leftmost box edge among cells starting at `c`
/// to the rightmost edge among cells ending at `c` (single-column cells
/// preferred when present); rows likewise. A separator is the mean of the
/// facing extents of its two neighbors, or the one that exists. The outer
/// separators are the outer extents. Every quad is then the rectangle between
/// its separators.
pub fn normalize_textline_boxes(
    structure: &HtmlStructure,
    boxes: &[Option<BBox>],
    image_w: f64,
    image_h: f64,
) -> Result<LogicalTable> {
    if boxes.len() != structure.cells.len() {
        return Err(Error::Annotation(format!("{} boxes for {} cells", boxes.len(), structure.cells.len())));
    }
    let col_seps = separators(
        structure.cols,
        structure.cells.iter().zip(boxes).filter_map(|(c, b)| b.map(|b| (c.col_start, c.col_end, b.x1, b.x2))),
        "column",
    )?;
    let row_seps = separators(
        structure.rows,
        structure.cells.iter().zip(boxes).filter_map(|(c, b)| b.map(|b| (c.row_start, c.row_end, b.y1, b.y2))),
        "row",
    )?;
    let cells = structure
        .cells
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.quad = Some(
                BBox::new(col_seps[c.col_start], row_seps[c.row_start], col_seps[c.col_end + 1], row_seps[c.row_end + 1])
                    .to_quad(),
            );
            c
        })
        .collect();
    Ok(LogicalTable { rows: structure.rows, cols: structure.cols, image_w, image_h, cells })
}

/// Separator positions `0..=count` along one axis from `(start, end, lo, hi)`
/// box extents.
fn separators(count: usize, extents: impl Iterator<Item = (usize, usize, f64, f64)>, axis: &str) -> Result<Vec<f64>> {
    let extents: Vec<_> = extents.collect();
    let mut covered = vec![false; count];
    // (best over single-span boxes, best over any box)
    let mut lo: Vec<(Option<f64>, Option<f64>)> = vec![(None, None); count];
    let mut hi: Vec<(Option<f64>, Option<f64>)> = vec![(None, None); count];
    let fold = |slot: &mut Option<f64>, v: f64, better: fn(f64, f64) -> f64| {
        *slot = Some(slot.map_or(v, |s| better(s, v)));
    };
    for &(s, e, a, b) in &extents {
        if e >= count || s > e || !(a < b) {
            return Err(Error::Annotation(format!("bad {axis} extent {s}..{e} [{a}, {b}]")));
        }
        covered[s..=e].iter_mut().for_each(|c| *c = true);
        let single = s == e;
        if single {
            fold(&mut lo[s].0, a, f64::min);
            fold(&mut hi[e].0, b, f64::max);
        }
        fold(&mut lo[s].1, a, f64::min);
        fold(&mut hi[e].1, b, f64::max);
    }
    if let Some(k) = covered.iter().position(|&c| !c) {
        return Err(Error::Annotation(format!("{axis} {k} has no box")));
    }
    let pick = |p: (Option<f64>, Option<f64>)| p.0.or(p.1);
    let mut seps = Vec::with_capacity(count + 1);
    seps.push(pick(lo[0]).ok_or_else(|| Error::Annotation(format!("no outer {axis} boundary")))?);
    for k in 1..count {
        let sep = match (pick(hi[k - 1]), pick(lo[k])) {
            (Some(a), Some(b)) => (a + b) / 2.0,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => return Err(Error::Annotation(format!("no boundary between {axis}s {} and {k}", k - 1))),
        };
        seps.push(sep);
    }
    seps.push(pick(hi[count - 1]).ok_or_else(|| Error::Annotation(format!("no outer {axis} boundary")))?);
    if seps.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Annotation(format!("{axis} separators not increasing: {seps:?}")));
    }
    Ok(seps)
}

/// Converts one raw annotation into a validated logical table.
pub fn ingest(a: &RawAnnotation) -> Result<LogicalTable> {
    let table = match &a.html {
        Some(html) => {
            let mut structure = parse_html_structure(html)?;
            let aligned = align_boxes(&structure.cells, &a.boxes)?;
            for (cell, b) in structure.cells.iter_mut().zip(&aligned) {
                if cell.content.is_none() {
                    cell.content = b.and_then(|b| b.content()).map(str::to_string);
                }
            }
            match a.box_granularity {
                BoxGranularity::CellLevel => {
                    let cells = structure
                        .cells
                        .into_iter()
                        .zip(aligned)
                        .map(|(mut c, b)| {
                            c.quad = b.and_then(BoxAnn::quad);
                            c
                        })
                        .collect();
                    LogicalTable { rows: structure.rows, cols: structure.cols, image_w: a.image_w, image_h: a.image_h, cells }
                }
                BoxGranularity::TextLineLevel => {
                    let rects = aligned
                        .iter()
                        .map(|b| match b.and_then(|b| b.quad()) {
                            None => Ok(None),
                            Some(q) if q.is_axis_aligned() => Ok(Some(q.bbox())),
                            Some(_) => Err(Error::Annotation("text-line boxes must be axis-aligned".into())),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    normalize_textline_boxes(&structure, &rects, a.image_w, a.image_h)?
                }
            }
        }
        None => {
            if a.box_granularity != BoxGranularity::CellLevel {
                return Err(Error::Annotation("text-line boxes need an html structure".into()));
            }
            let mut cells = Vec::with_capacity(a.boxes.len());
            for (k, b) in a.boxes.iter().enumerate() {
                let b = b.as_ref().ok_or_else(|| Error::Annotation(format!("box {k} is null")))?;
                let (rs, re, cs, ce) =
                    b.spans().ok_or_else(|| Error::Annotation(format!("box {k} lacks logical spans")))?;
                let mut c = Cell::new(rs, re, cs, ce);
                c.quad = b.quad();
                c.content = b.content().map(str::to_string);
                cells.push(c);
            }
            let rows = cells.iter().map(|c| c.row_end + 1).max().unwrap_or(0);
            let cols = cells.iter().map(|c| c.col_end + 1).max().unwrap_or(0);
            LogicalTable { rows, cols, image_w: a.image_w, image_h: a.image_h, cells }
        }
    };
    table.validate()?;
    Ok(table)
}
