//! Structural check for the charts we emit: well-formed XML with a single
//! `<svg>` root in the SVG namespace, positive dimensions and only the
//! element kinds the renderer produces.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

const SVG_NS: &str = "http://www.w3.org/2000/svg";

const KNOWN: [&str; 14] = [
    "svg", "g", "rect", "line", "polyline", "polygon", "path", "circle", "ellipse", "text", "tspan", "title",
    "desc", "defs",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid svg: {0}")]
pub struct SvgError(pub String);

/// Summary of a document that passed [`check_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvgInfo {
    pub width: f64,
    pub height: f64,
    pub elements: usize,
}

fn attr(e: &BytesStart, key: &str) -> Result<Option<String>, SvgError> {
    for a in e.attributes() {
        let a = a.map_err(|err| SvgError(err.to_string()))?;
        if a.key.as_ref() == key.as_bytes() {
            let v = a.unescape_value().map_err(|err| SvgError(err.to_string()))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn dimension(e: &BytesStart, key: &str) -> Result<f64, SvgError> {
    let raw = attr(e, key)?.ok_or_else(|| SvgError(format!("root has no {key}")))?;
    let v: f64 = raw
        .trim_end_matches("px")
        .parse()
        .map_err(|_| SvgError(format!("{key} {raw:?} is not a number")))?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(SvgError(format!("{key} must be positive")))
    }
}

pub fn check_svg(text: &str) -> Result<SvgInfo, SvgError> {
    let mut reader = Reader::from_str(text);
    let mut depth = 0usize;
    let mut root: Option<(f64, f64)> = None;
    let mut elements = 0;
    let mut closed = false;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| SvgError(format!("at byte {}: {e}", reader.buffer_position())))?;
        let (start, empty) = match &event {
            Event::Start(e) => (Some(e), false),
            Event::Empty(e) => (Some(e), true),
            Event::End(_) => {
                depth -= 1;
                closed = depth == 0;
                continue;
            }
            Event::Text(t) if depth == 0 && !t.iter().all(u8::is_ascii_whitespace) => {
                return Err(SvgError("text outside the root element".into()));
            }
            Event::Eof => break,
            _ => continue,
        };
        let e = start.expect("start or empty");
        let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
        if !KNOWN.contains(&name.as_str()) {
            return Err(SvgError(format!("unexpected element <{name}>")));
        }
        if depth == 0 {
            if root.is_some() || closed {
                return Err(SvgError("more than one root element".into()));
            }
            if name != "svg" {
                return Err(SvgError(format!("root is <{name}>, not <svg>")));
            }
            if attr(e, "xmlns")?.as_deref() != Some(SVG_NS) {
                return Err(SvgError("root is not in the svg namespace".into()));
            }
            root = Some((dimension(e, "width")?, dimension(e, "height")?));
        } else if name == "svg" {
            return Err(SvgError("nested <svg>".into()));
        }
        elements += 1;
        if empty {
            closed = depth == 0;
        } else {
            depth += 1;
        }
    }
    if depth != 0 {
        return Err(SvgError("unclosed elements at end of document".into()));
    }
    let (width, height) = root.ok_or_else(|| SvgError("no root element".into()))?;
    Ok(SvgInfo { width, height, elements })
}

#[cfg(test)]
mod tests {
    use super::*;

    const OK: &str = r#"<svg width="10" height="20" viewBox="0 0 10 20" xmlns="http://www.w3.org/2000/svg">
<rect x="0" y="0" width="1" height="1"/><text x="1" y="1">a &amp; b</text></svg>"#;

    #[test]
    fn accepts_a_minimal_chart() {
        assert_eq!(check_svg(OK).unwrap(), SvgInfo { width: 10.0, height: 20.0, elements: 3 });
    }

    #[test]
    fn rejects_broken_documents() {
        for (doc, why) in [
            (OK.replace("</svg>", ""), "unclosed"),
            (OK.replace("</text>", "</rect>"), "mismatch"),
            (OK.replace(" xmlns=\"http://www.w3.org/2000/svg\"", ""), "namespace"),
            (OK.replace("width=\"10\"", "width=\"wide\""), "number"),
            (OK.replace("<rect", "<script"), "unexpected"),
            (format!("{OK}<svg/>"), "root"),
            (String::new(), "no root"),
        ] {
            let err = check_svg(&doc).unwrap_err();
            assert!(err.0.contains(why) || why == "mismatch", "{why}: {err}");
        }
    }
}
