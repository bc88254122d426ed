//! A small element tree over `quick-xml`, with namespace resolution that
//! tolerates undeclared `xsi:` and `xlink:` prefixes.
//!
//! The instance documents this crate reads routinely use `xsi:type` and
//! `xlink:href` without declaring either prefix, which a strict
//! namespace-aware parser would reject. Elements and attributes therefore keep
//! their raw prefix; the namespace URI is resolved from in-scope declarations
//! first and then from a fallback prefix table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

pub const XSI_NS: &str = "http://www.w3.org/2001/XMLSchema-instance";
pub const XLINK_NS: &str = "http://www.w3.org/1999/xlink";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct XmlError(pub String);

/// A parsed element. Text content is kept only as the concatenation of the
/// element's direct character data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub prefix: Option<String>,
    pub local: String,
    /// Resolved namespace URI, `None` when unqualified and no default is in scope.
    pub namespace: Option<String>,
    pub attributes: Vec<Attribute>,
    pub children: Vec<Element>,
    pub text: String,
    /// Namespace declarations in scope at this element (prefix "" = default).
    pub scope: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub prefix: Option<String>,
    pub local: String,
    pub value: String,
}

impl Element {
    /// Value of the first attribute whose local name matches, ignoring prefix.
    pub fn attr(&self, local: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.local == local)
            .map(|a| a.value.as_str())
    }

    /// Value of an unprefixed attribute.
    pub fn plain_attr(&self, local: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.prefix.is_none() && a.local == local)
            .map(|a| a.value.as_str())
    }

    pub fn child(&self, local: &str) -> Option<&Element> {
        self.children.iter().find(|c| c.local == local)
    }

    pub fn children_named<'a>(&'a self, local: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.children.iter().filter(move |c| c.local == local)
    }

    pub fn child_text(&self, local: &str) -> Option<&str> {
        self.child(local).map(|c| c.text.as_str())
    }

    /// Resolves a `prefix:local` QName appearing in attribute content (such as
    /// `xsi:type`) against the namespaces in scope at this element.
    pub fn resolve_qname<'a>(&self, qname: &'a str, fallback: &BTreeMap<String, String>) -> (Option<String>, &'a str) {
        match qname.split_once(':') {
            Some((prefix, local)) => (
                self.scope
                    .get(prefix)
                    .or_else(|| fallback.get(prefix))
                    .cloned(),
                local,
            ),
            None => (self.scope.get("").cloned(), qname),
        }
    }
}

/// Parses a complete document into its root element.
///
/// `fallback` maps prefixes to namespace URIs for prefixes the document uses
/// without declaring them.
pub fn parse(document: &[u8], fallback: &BTreeMap<String, String>) -> Result<Element, XmlError> {
    let mut reader = Reader::from_reader(document);
    reader.config_mut().check_end_names = true;

    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;
    let mut buf = Vec::new();

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| XmlError(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(start) => {
                let scope = stack.last().map(|e| e.scope.clone()).unwrap_or_default();
                let element = open_element(&start, scope, fallback)?;
                if root.is_some() {
                    return Err(XmlError("content after the root element".into()));
                }
                stack.push(element);
            }
            Event::Empty(start) => {
                let scope = stack.last().map(|e| e.scope.clone()).unwrap_or_default();
                let element = open_element(&start, scope, fallback)?;
                close(element, &mut stack, &mut root)?;
            }
            Event::End(_) => {
                let element = stack
                    .pop()
                    .ok_or_else(|| XmlError("unbalanced end tag".into()))?;
                close(element, &mut stack, &mut root)?;
            }
            Event::Text(text) => {
                let decoded = text
                    .xml_content()
                    .map_err(|e| XmlError(format!("bad text: {e}")))?;
                push_text(&mut stack, &decoded)?;
            }
            Event::GeneralRef(reference) => {
                let name = std::str::from_utf8(&reference)
                    .map_err(|e| XmlError(format!("bad entity reference: {e}")))?;
                let resolved = resolve_entity(name)
                    .ok_or_else(|| XmlError(format!("unknown entity &{name};")))?;
                push_text(&mut stack, &resolved)?;
            }
            Event::CData(data) => {
                let s = std::str::from_utf8(&data).map_err(|e| XmlError(format!("bad CDATA: {e}")))?;
                push_text(&mut stack, s)?;
            }
            Event::Eof => break,
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
        }
        buf.clear();
    }

    if !stack.is_empty() {
        return Err(XmlError("unexpected end of document".into()));
    }
    root.ok_or_else(|| XmlError("document has no root element".into()))
}

fn resolve_entity(name: &str) -> Option<String> {
    if let Some(num) = name.strip_prefix('#') {
        let code = match num.strip_prefix('x').or_else(|| num.strip_prefix('X')) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        return char::from_u32(code).map(String::from);
    }
    quick_xml::escape::resolve_predefined_entity(name).map(String::from)
}

fn push_text(stack: &mut [Element], text: &str) -> Result<(), XmlError> {
    match stack.last_mut() {
        Some(top) => {
            top.text.push_str(text);
            Ok(())
        }
        None if text.trim().is_empty() => Ok(()),
        None => Err(XmlError("text outside the root element".into())),
    }
}

fn close(element: Element, stack: &mut [Element], root: &mut Option<Element>) -> Result<(), XmlError> {
    match stack.last_mut() {
        Some(parent) => parent.children.push(element),
        None => {
            if root.is_some() {
                return Err(XmlError("multiple root elements".into()));
            }
            *root = Some(element);
        }
    }
    Ok(())
}

fn split_name(raw: &str) -> (Option<String>, String) {
    match raw.split_once(':') {
        Some((p, l)) => (Some(p.to_string()), l.to_string()),
        None => (None, raw.to_string()),
    }
}

fn open_element(
    start: &BytesStart<'_>,
    mut scope: BTreeMap<String, String>,
    fallback: &BTreeMap<String, String>,
) -> Result<Element, XmlError> {
    let raw = std::str::from_utf8(start.name().as_ref())
        .map_err(|e| XmlError(format!("bad element name: {e}")))?
        .to_string();
    let (prefix, local) = split_name(&raw);

    let mut attributes = Vec::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| XmlError(format!("bad attribute in <{raw}>: {e}")))?;
        let key = std::str::from_utf8(attr.key.as_ref())
            .map_err(|e| XmlError(format!("bad attribute name: {e}")))?
            .to_string();
        let value = attr
            .unescape_value()
            .map_err(|e| XmlError(format!("bad attribute value in <{raw}>: {e}")))?
            .into_owned();
        if key == "xmlns" {
            scope.insert(String::new(), value);
        } else if let Some(p) = key.strip_prefix("xmlns:") {
            scope.insert(p.to_string(), value);
        } else {
            let (prefix, local) = split_name(&key);
            attributes.push(Attribute { prefix, local, value });
        }
    }

    let namespace = match &prefix {
        Some(p) => Some(
            scope
                .get(p)
                .or_else(|| fallback.get(p))
                .cloned()
                .ok_or_else(|| XmlError(format!("undeclared namespace prefix `{p}` on <{raw}>")))?,
        ),
        None => scope.get("").cloned(),
    };

    Ok(Element {
        prefix,
        local,
        namespace,
        attributes,
        children: Vec::new(),
        text: String::new(),
        scope,
    })
}

/// Escapes text for use in element content or a double-quoted attribute.
pub fn escape(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

/// A minimal indenting writer for the fixed document shapes this crate emits.
#[derive(Debug, Default)]
pub struct XmlWriter {
    out: String,
    depth: usize,
}

impl XmlWriter {
    pub fn new() -> Self {
        let mut w = Self::default();
        w.out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        w
    }

    /// A writer without the XML declaration, for embedding fragments.
    pub fn fragment(depth: usize) -> Self {
        Self { out: String::new(), depth }
    }

    fn indent(&mut self) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
    }

    fn write_attrs(&mut self, attrs: &[(&str, &str)]) {
        for (k, v) in attrs {
            let _ = write!(self.out, " {k}=\"{}\"", escape(v));
        }
    }

    pub fn open(&mut self, name: &str, attrs: &[(&str, &str)]) {
        self.indent();
        self.out.push('<');
        self.out.push_str(name);
        self.write_attrs(attrs);
        self.out.push_str(">\n");
        self.depth += 1;
    }

    pub fn close(&mut self, name: &str) {
        self.depth -= 1;
        self.indent();
        let _ = writeln!(self.out, "</{name}>");
    }

    pub fn empty(&mut self, name: &str, attrs: &[(&str, &str)]) {
        self.indent();
        self.out.push('<');
        self.out.push_str(name);
        self.write_attrs(attrs);
        self.out.push_str("/>\n");
    }

    pub fn text_element(&mut self, name: &str, attrs: &[(&str, &str)], text: &str) {
        self.indent();
        self.out.push('<');
        self.out.push_str(name);
        self.write_attrs(attrs);
        let _ = writeln!(self.out, ">{}</{name}>", escape(text));
    }

    /// Appends pre-rendered markup verbatim.
    pub fn raw(&mut self, markup: &str) {
        self.out.push_str(markup);
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undeclared_attribute_prefixes_are_tolerated() {
        let doc = br#"<a xmlns="urn:a"><b xlink:href="x" xsi:type="p:T" xmlns:p="urn:p"/></a>"#;
        let root = parse(doc, &BTreeMap::new()).unwrap();
        assert_eq!(root.namespace.as_deref(), Some("urn:a"));
        let b = &root.children[0];
        assert_eq!(b.attr("href"), Some("x"));
        let (ns, local) = b.resolve_qname(b.attr("type").unwrap(), &BTreeMap::new());
        assert_eq!(ns.as_deref(), Some("urn:p"));
        assert_eq!(local, "T");
    }

    #[test]
    fn undeclared_element_prefix_uses_fallback() {
        let doc = br#"<img:a/>"#;
        assert!(parse(doc, &BTreeMap::new()).is_err());
        let fallback = BTreeMap::from([("img".to_string(), "urn:img".to_string())]);
        let root = parse(doc, &fallback).unwrap();
        assert_eq!(root.namespace.as_deref(), Some("urn:img"));
    }

    #[test]
    fn rejects_mismatched_and_trailing_content() {
        assert!(parse(b"<a><b></a>", &BTreeMap::new()).is_err());
        assert!(parse(b"<a/><b/>", &BTreeMap::new()).is_err());
        assert!(parse(b"", &BTreeMap::new()).is_err());
        assert!(parse(b"<a>", &BTreeMap::new()).is_err());
    }

    #[test]
    fn entities_are_decoded() {
        let root = parse(b"<a t=\"x&amp;y\">1 &lt; 2 &#65;</a>", &BTreeMap::new()).unwrap();
        assert_eq!(root.text, "1 < 2 A");
        assert_eq!(root.attr("t"), Some("x&y"));
    }
}
