//! HTML to plain text.

use scraper::{ElementRef, Html, Node};

const SKIPPED: &[&str] = &[
    "head", "script", "style", "noscript", "template", "iframe", "svg",
];

const BLOCKS: &[&str] = &[
    "address",
    "article",
    "aside",
    "blockquote",
    "body",
    "dd",
    "details",
    "div",
    "dl",
    "dt",
    "fieldset",
    "figcaption",
    "figure",
    "footer",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "header",
    "hr",
    "li",
    "main",
    "nav",
    "ol",
    "p",
    "pre",
    "section",
    "summary",
    "table",
    "tbody",
    "td",
    "tfoot",
    "th",
    "thead",
    "tr",
    "ul",
];

/// Extracts readable text from an HTML page.
///
/// Script, style and head content is dropped, entities are decoded, runs of
/// whitespace collapse to one space, and block-level element boundaries become
/// paragraph breaks (`"\n\n"`). Never fails: html5ever recovers from any input.
pub fn clean_html(raw_html: &str) -> String {
    let doc = Html::parse_document(raw_html);
    let mut out = Collector::default();
    out.walk(doc.root_element());
    out.flush();
    out.paragraphs.join("\n\n")
}

#[derive(Default)]
struct Collector {
    current: String,
    paragraphs: Vec<String>,
}

impl Collector {
    fn walk(&mut self, element: ElementRef<'_>) {
        let name = element.value().name();
        if SKIPPED.contains(&name) {
            return;
        }
        let block = BLOCKS.contains(&name);
        if block {
            self.flush();
        }
        if name == "br" {
            self.current.push(' ');
        }
        for child in element.children() {
            match child.value() {
                Node::Text(text) => self.current.push_str(text),
                Node::Element(_) => {
                    if let Some(el) = ElementRef::wrap(child) {
                        self.walk(el);
                    }
                }
                _ => {}
            }
        }
        if block {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let collapsed = self
            .current
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if !collapsed.is_empty() {
            self.paragraphs.push(collapsed);
        }
        self.current.clear();
    }
}
