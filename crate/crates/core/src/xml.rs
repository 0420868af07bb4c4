//! A small non-validating XML reader.
//!
//! Covers the subset the descriptor and feed formats need: elements,
//! attributes, text, CDATA sections, comments, processing instructions, the
//! five predefined entities and numeric character references. Namespace
//! prefixes are kept verbatim in element names; callers match on
//! [`Element::local_name`] when they want prefix-insensitive lookup. Document
//! type declarations are skipped when they carry no internal subset and
//! rejected otherwise.

use std::fmt::Write as _;

const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(Element),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Element {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed XML at byte {offset}: {message}")]
pub struct XmlError {
    pub offset: usize,
    pub message: String,
}

impl Element {
    /// Name with any `prefix:` removed.
    pub fn local_name(&self) -> &str {
        match self.name.rsplit_once(':') {
            Some((_, local)) => local,
            None => &self.name,
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn child_elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    /// First direct child whose local name matches.
    pub fn child(&self, local: &str) -> Option<&Element> {
        self.child_elements().find(|e| e.local_name() == local)
    }

    /// First direct child whose full (prefixed) name matches exactly.
    pub fn child_exact(&self, name: &str) -> Option<&Element> {
        self.child_elements().find(|e| e.name == name)
    }

    /// Concatenation of every descendant text node, in document order.
    pub fn text(&self) -> String {
        let mut out = String::new();
        self.collect_text(&mut out);
        out
    }

    fn collect_text(&self, out: &mut String) {
        for child in &self.children {
            match child {
                Node::Text(t) => out.push_str(t),
                Node::Element(e) => e.collect_text(out),
            }
        }
    }

    /// All descendant elements (not including `self`) with the exact name, in
    /// document order.
    pub fn descendants_named<'a>(&'a self, name: &str) -> Vec<&'a Element> {
        let mut out = Vec::new();
        self.collect_named(name, &mut out);
        out
    }

    fn collect_named<'a>(&'a self, name: &str, out: &mut Vec<&'a Element>) {
        for e in self.child_elements() {
            if e.name == name {
                out.push(e);
            }
            e.collect_named(name, out);
        }
    }
}

/// Parses a complete document and returns its root element.
pub fn parse(input: &[u8]) -> Result<Element, XmlError> {
    let text = std::str::from_utf8(input).map_err(|e| XmlError {
        offset: e.valid_up_to(),
        message: "input is not valid UTF-8".into(),
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let normalized;
    let text = if text.contains('\r') {
        normalized = text.replace("\r\n", "\n").replace('\r', "\n");
        normalized.as_str()
    } else {
        text
    };
    Parser { src: text, pos: 0 }.document()
}

/// Escapes text content so that [`parse`] reads it back unchanged.
pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\t' | '\n' => out.push(c),
            c if c.is_control() => {
                let _ = write!(out, "&#{};", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, XmlError> {
        Err(XmlError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn starts_with(&self, s: &str) -> bool {
        self.rest().starts_with(s)
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) -> bool {
        let before = self.pos;
        let trimmed = self.rest().trim_start_matches([' ', '\t', '\n']);
        self.pos = self.src.len() - trimmed.len();
        self.pos != before
    }

    fn expect(&mut self, s: &str) -> Result<(), XmlError> {
        if self.starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    /// Advances past `terminator`, returning the text before it.
    fn take_until(&mut self, terminator: &str, what: &str) -> Result<&'a str, XmlError> {
        match self.rest().find(terminator) {
            Some(i) => {
                let s = &self.rest()[..i];
                self.pos += i + terminator.len();
                Ok(s)
            }
            None => self.err(format!("unterminated {what}")),
        }
    }

    fn document(mut self) -> Result<Element, XmlError> {
        self.misc(true)?;
        if !self.starts_with("<") {
            return self.err("expected root element");
        }
        let root = self.element(0)?;
        self.misc(false)?;
        if self.pos != self.src.len() {
            return self.err("content after root element");
        }
        Ok(root)
    }

    /// Whitespace, comments and processing instructions outside the root.
    fn misc(&mut self, prolog: bool) -> Result<(), XmlError> {
        loop {
            self.skip_ws();
            if self.starts_with("<?") {
                self.pos += 2;
                self.take_until("?>", "processing instruction")?;
            } else if self.starts_with("<!--") {
                self.pos += 4;
                self.take_until("-->", "comment")?;
            } else if prolog && self.starts_with("<!DOCTYPE") {
                let body = self.take_until(">", "document type declaration")?;
                if body.contains('[') {
                    return self.err("internal DTD subsets are not supported");
                }
            } else {
                return Ok(());
            }
        }
    }

    fn name(&mut self) -> Result<&'a str, XmlError> {
        let rest = self.rest();
        let end = rest
            .find(|c: char| c.is_whitespace() || matches!(c, '/' | '>' | '=' | '<' | '"' | '\''))
            .unwrap_or(rest.len());
        let name = &rest[..end];
        match name.chars().next() {
            Some(c) if c.is_alphabetic() || c == '_' || c == ':' => {
                self.pos += end;
                Ok(name)
            }
            _ => self.err("expected a name"),
        }
    }

    fn element(&mut self, depth: usize) -> Result<Element, XmlError> {
        if depth >= MAX_DEPTH {
            return self.err("element nesting too deep");
        }
        self.expect("<")?;
        let name = self.name()?.to_string();
        let mut element = Element {
            name,
            ..Element::default()
        };

        loop {
            let had_ws = self.skip_ws();
            if self.starts_with("/>") {
                self.pos += 2;
                return Ok(element);
            }
            if self.starts_with(">") {
                self.pos += 1;
                break;
            }
            if !had_ws {
                return self.err("expected whitespace before attribute");
            }
            let key = self.name()?.to_string();
            self.skip_ws();
            self.expect("=")?;
            self.skip_ws();
            let quote = match self.peek() {
                Some(q @ ('"' | '\'')) => q,
                _ => return self.err("expected quoted attribute value"),
            };
            self.pos += 1;
            let start = self.pos;
            let raw = self.take_until(&quote.to_string(), "attribute value")?;
            if raw.contains('<') {
                self.pos = start;
                return self.err("`<` in attribute value");
            }
            let value = decode_entities(raw, start)?;
            if element.attributes.iter().any(|(k, _)| *k == key) {
                return self.err(format!("duplicate attribute `{key}`"));
            }
            element.attributes.push((key, value));
        }

        let mut text = String::new();
        loop {
            if self.pos >= self.src.len() {
                return self.err(format!("unclosed element `{}`", element.name));
            }
            if self.starts_with("</") {
                flush_text(&mut element, &mut text);
                self.pos += 2;
                let close = self.name()?;
                if close != element.name {
                    return self.err(format!(
                        "mismatched end tag: expected `{}`, found `{close}`",
                        element.name
                    ));
                }
                self.skip_ws();
                self.expect(">")?;
                return Ok(element);
            } else if self.starts_with("<!--") {
                self.pos += 4;
                self.take_until("-->", "comment")?;
            } else if self.starts_with("<![CDATA[") {
                self.pos += 9;
                text.push_str(self.take_until("]]>", "CDATA section")?);
            } else if self.starts_with("<?") {
                self.pos += 2;
                self.take_until("?>", "processing instruction")?;
            } else if self.starts_with("<!") {
                return self.err("unsupported markup declaration");
            } else if self.starts_with("<") {
                flush_text(&mut element, &mut text);
                let child = self.element(depth + 1)?;
                element.children.push(Node::Element(child));
            } else {
                let start = self.pos;
                let end = self.rest().find('<').unwrap_or(self.rest().len());
                let raw = &self.rest()[..end];
                self.pos += end;
                text.push_str(&decode_entities(raw, start)?);
            }
        }
    }
}

fn flush_text(element: &mut Element, text: &mut String) {
    if !text.is_empty() {
        element.children.push(Node::Text(std::mem::take(text)));
    }
}

fn decode_entities(raw: &str, base: usize) -> Result<String, XmlError> {
    if !raw.contains('&') {
        return Ok(raw.to_string());
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let offset = base + (raw.len() - rest.len()) + amp;
        let after = &rest[amp + 1..];
        let semi = after.find(';').ok_or_else(|| XmlError {
            offset,
            message: "unterminated entity reference".into(),
        })?;
        let entity = &after[..semi];
        let decoded = match entity {
            "lt" => Some('<'),
            "gt" => Some('>'),
            "amp" => Some('&'),
            "apos" => Some('\''),
            "quot" => Some('"'),
            _ => entity
                .strip_prefix("#x")
                .map(|hex| u32::from_str_radix(hex, 16))
                .or_else(|| entity.strip_prefix('#').map(|dec| dec.parse::<u32>()))
                .and_then(Result::ok)
                .filter(|&v| v != 0)
                .and_then(char::from_u32),
        };
        match decoded {
            Some(c) => out.push(c),
            None => {
                return Err(XmlError {
                    offset,
                    message: format!("unknown entity `&{entity};`"),
                })
            }
        }
        rest = &after[semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_elements_and_text() {
        let root = parse(b"<?xml version=\"1.0\"?>\n<a x='1'><b>hi</b> <c/></a>").unwrap();
        assert_eq!(root.name, "a");
        assert_eq!(root.attribute("x"), Some("1"));
        assert_eq!(root.child("b").unwrap().text(), "hi");
        assert!(root.child("c").unwrap().children.is_empty());
        assert_eq!(root.text(), "hi ");
    }

    #[test]
    fn entities_and_cdata_merge_into_one_text_node() {
        let root = parse(b"<t>a &amp; b<![CDATA[<raw>&amp;]]>&#65;&#x42;</t>").unwrap();
        assert_eq!(root.children.len(), 1);
        assert_eq!(root.text(), "a & b<raw>&amp;AB");
    }

    #[test]
    fn comments_and_pis_are_skipped() {
        let root = parse(b"<!-- head --><r><!-- x -->a<?pi stuff?>b</r><!-- tail -->").unwrap();
        assert_eq!(root.text(), "ab");
    }

    #[test]
    fn line_endings_normalized() {
        let root = parse(b"<r>a\r\nb\rc&#13;</r>").unwrap();
        assert_eq!(root.text(), "a\nb\nc\r");
    }

    #[test]
    fn prefixes_kept_but_local_name_available() {
        let root = parse(b"<r><dc:title>x</dc:title></r>").unwrap();
        assert!(root.child_exact("title").is_none());
        assert_eq!(root.child("title").unwrap().name, "dc:title");
    }

    #[test]
    fn malformed_inputs() {
        for bad in [
            &b""[..],
            b"not xml",
            b"<a>",
            b"<a></b>",
            b"<a>&bogus;</a>",
            b"<a>&amp</a>",
            b"<a/><b/>",
            b"<a x=1/>",
            b"<a x='1' x='2'/>",
            b"<!DOCTYPE a [<!ENTITY e 'x'>]><a/>",
            b"<a>\xff</a>",
            b"<a><![CDATA[x</a>",
        ] {
            assert!(parse(bad).is_err(), "accepted {:?}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn simple_doctype_is_skipped() {
        assert!(parse(b"<!DOCTYPE rss><rss/>").is_ok());
    }

    #[test]
    fn deep_nesting_is_bounded() {
        let doc = "<a>".repeat(1000) + &"</a>".repeat(1000);
        assert!(parse(doc.as_bytes()).is_err());
    }

    #[test]
    fn escape_round_trips() {
        let s = "a<b>&c\r\u{1}\t\nz";
        let doc = format!("<r>{}</r>", escape_text(s));
        assert_eq!(parse(doc.as_bytes()).unwrap().text(), s);
    }

    #[test]
    fn descendants_in_document_order() {
        let root = parse(b"<r><i n='1'><i n='2'/></i><x><i n='3'/></x></r>").unwrap();
        let ns: Vec<_> = root
            .descendants_named("i")
            .iter()
            .map(|e| e.attribute("n").unwrap())
            .collect();
        assert_eq!(ns, ["1", "2", "3"]);
    }
}
