//! RSS 2.0 reading and rendering.
//!
//! [`parse_feed`] is lenient: absent tags read as empty text and nothing is
//! required beyond an `rss` root with a `channel`. [`validate_feed`] applies
//! the required-tag rules separately, so the parsed fields remember whether
//! their element existed at all.
//!
//! Rendering substitutes text verbatim. Markup inside feed text reaches the
//! output unescaped.

use crate::xml::{self, Element, XmlError};

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error(transparent)]
    MalformedXml(#[from] XmlError),
    #[error("root element is `{0}`, expected `rss`")]
    NoRssRoot(String),
    #[error("`rss` has no `channel` element")]
    NoChannel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelMeta {
    pub title: Option<String>,
    pub link: Option<String>,
    pub description: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedItem {
    pub title: Option<String>,
    pub link: Option<String>,
    pub description: Option<String>,
    pub pub_date: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Feed {
    pub channel: ChannelMeta,
    pub items: Vec<FeedItem>,
}

fn or_empty(v: &Option<String>) -> &str {
    v.as_deref().unwrap_or("")
}

impl ChannelMeta {
    pub fn title(&self) -> &str {
        or_empty(&self.title)
    }
    pub fn link(&self) -> &str {
        or_empty(&self.link)
    }
    pub fn description(&self) -> &str {
        or_empty(&self.description)
    }
}

impl FeedItem {
    pub fn title(&self) -> &str {
        or_empty(&self.title)
    }
    pub fn link(&self) -> &str {
        or_empty(&self.link)
    }
    pub fn description(&self) -> &str {
        or_empty(&self.description)
    }
    pub fn pub_date(&self) -> &str {
        or_empty(&self.pub_date)
    }
}

fn field(parent: &Element, name: &str) -> Option<String> {
    parent.child_exact(name).map(Element::text)
}

pub fn parse_feed(bytes: &[u8]) -> Result<Feed, FeedError> {
    let root = xml::parse(bytes)?;
    if root.name != "rss" {
        return Err(FeedError::NoRssRoot(root.name));
    }
    let channel = root.child_exact("channel").ok_or(FeedError::NoChannel)?;
    let items = channel
        .descendants_named("item")
        .into_iter()
        .map(|item| FeedItem {
            title: field(item, "title"),
            link: field(item, "link"),
            description: field(item, "description"),
            pub_date: field(item, "pubDate"),
        })
        .collect();
    Ok(Feed {
        channel: ChannelMeta {
            title: field(channel, "title"),
            link: field(channel, "link"),
            description: field(channel, "description"),
        },
        items,
    })
}

/// Dotted paths of every missing required element. Empty means valid.
pub fn validate_feed(feed: &Feed) -> Vec<String> {
    let mut report = Vec::new();
    let c = &feed.channel;
    for (name, v) in [
        ("title", &c.title),
        ("link", &c.link),
        ("description", &c.description),
    ] {
        if v.is_none() {
            report.push(format!("channel.{name} missing"));
        }
    }
    if feed.items.is_empty() {
        report.push("channel.items: at least one required".to_string());
    }
    for (i, item) in feed.items.iter().enumerate() {
        for (name, v) in [
            ("title", &item.title),
            ("link", &item.link),
            ("description", &item.description),
        ] {
            if v.is_none() {
                report.push(format!("item[{i}].{name} missing"));
            }
        }
    }
    report
}

pub fn render_item_html(item: &FeedItem) -> String {
    format!(
        "<div class='entry'><h2 class='postTitle'>{}</h2><em class='date'>{}</em>\
         <p class='description'>{}</p><a href='{}' target='_blank'>Read More >></a></div>",
        item.title(),
        item.pub_date(),
        item.description(),
        item.link()
    )
}

pub fn render_feed_html(feed: &Feed) -> String {
    feed.items.iter().map(render_item_html).collect()
}

pub fn render_feed_text(feed: &Feed) -> String {
    feed.items
        .iter()
        .map(|i| {
            format!(
                "= {}\n{}\n{}\n-> {}\n\n",
                i.title(),
                i.pub_date(),
                i.description(),
                i.link()
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const XUL: &str = r#"<rss version="2.0">
<channel>
  <title>Xul</title>
  <link>http://www.xul.fr/</link>
  <description></description>
<item>
  <title>Xul news</title>
  <link>http://www.xul.fr/en-xml-rss.html</link>
  <description>... some text... </description>
</item>
</channel>
</rss>
"#;

    const XUL_ITEM_HTML: &str = "<div class='entry'><h2 class='postTitle'>Xul news</h2><em class='date'></em><p class='description'>... some text... </p><a href='http://www.xul.fr/en-xml-rss.html' target='_blank'>Read More >></a></div>";

    fn item(title: &str, link: &str) -> FeedItem {
        FeedItem {
            title: Some(title.into()),
            link: Some(link.into()),
            description: Some(String::new()),
            pub_date: None,
        }
    }

    #[test]
    fn minimal_document() {
        let feed = parse_feed(XUL.as_bytes()).unwrap();
        assert_eq!(feed.channel.title(), "Xul");
        assert_eq!(feed.channel.link(), "http://www.xul.fr/");
        assert_eq!(feed.channel.description, Some(String::new()));
        assert_eq!(feed.items.len(), 1);
        let it = &feed.items[0];
        assert_eq!(it.title(), "Xul news");
        assert_eq!(it.link(), "http://www.xul.fr/en-xml-rss.html");
        assert_eq!(it.description(), "... some text... ");
        assert_eq!(it.pub_date(), "");
        assert!(validate_feed(&feed).is_empty());
        assert_eq!(render_item_html(it), XUL_ITEM_HTML);
        assert_eq!(render_feed_html(&feed), XUL_ITEM_HTML);
        assert_eq!(
            render_feed_text(&feed),
            "= Xul news\n\n... some text... \n-> http://www.xul.fr/en-xml-rss.html\n\n"
        );
    }

    #[test]
    fn lenient_defaults() {
        let feed = parse_feed(b"<rss><channel><title>t</title></channel></rss>").unwrap();
        assert_eq!(feed.channel.title(), "t");
        assert_eq!(feed.channel.link(), "");
        assert_eq!(feed.channel.description(), "");
        assert!(feed.items.is_empty());
        assert_eq!(
            validate_feed(&feed),
            [
                "channel.link missing",
                "channel.description missing",
                "channel.items: at least one required"
            ]
        );
        assert_eq!(render_feed_html(&feed), "");
        assert_eq!(render_feed_text(&feed), "");
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(parse_feed(b"not xml"), Err(FeedError::MalformedXml(_))));
        assert!(matches!(parse_feed(b"<feed/>"), Err(FeedError::NoRssRoot(n)) if n == "feed"));
        assert!(matches!(
            parse_feed(b"<rss><title/></rss>"),
            Err(FeedError::NoChannel)
        ));
    }

    #[test]
    fn missing_item_link() {
        let feed = parse_feed(
            b"<rss><channel><title/><link/><description/><item><title>a</title><description/></item></channel></rss>",
        )
        .unwrap();
        assert_eq!(validate_feed(&feed), ["item[0].link missing"]);
    }

    #[test]
    fn text_semantics() {
        let feed = parse_feed(
            b"<rss><channel><item><title>A &amp; B</title><description><![CDATA[<b>x</b>]]> y</description>\
              <pubDate>Tue, 10 Jun 2003</pubDate></item></channel></rss>",
        )
        .unwrap();
        let it = &feed.items[0];
        assert_eq!(it.title(), "A & B");
        assert_eq!(it.description(), "<b>x</b> y");
        assert_eq!(it.pub_date(), "Tue, 10 Jun 2003");
        let html = render_item_html(it);
        assert!(html.contains("<h2 class='postTitle'>A & B</h2>"));
        assert!(html.contains("<p class='description'><b>x</b> y</p>"));
    }

    #[test]
    fn all_empty_item_and_order() {
        assert_eq!(
            render_item_html(&FeedItem::default()),
            "<div class='entry'><h2 class='postTitle'></h2><em class='date'></em><p class='description'></p><a href='' target='_blank'>Read More >></a></div>"
        );
        let feed = Feed {
            channel: ChannelMeta::default(),
            items: vec![item("1", "a"), item("2", "b")],
        };
        assert_eq!(
            render_feed_html(&feed),
            render_item_html(&feed.items[0]) + &render_item_html(&feed.items[1])
        );
        assert_eq!(render_feed_text(&feed), "= 1\n\n\n-> a\n\n= 2\n\n\n-> b\n\n");
    }

    #[test]
    fn prefixed_names_do_not_match() {
        let feed = parse_feed(
            b"<rss xmlns:dc='x'><channel><item><dc:title>no</dc:title><title>yes</title></item></channel></rss>",
        )
        .unwrap();
        assert_eq!(feed.items[0].title(), "yes");
    }

    // Random feed: a tree of channel children where some `item` elements are
    // nested inside other wrapper elements.
    #[derive(Debug, Clone)]
    enum Part {
        Item(String),
        Wrapped(Vec<Part>),
        Other(String),
    }

    fn part() -> impl Strategy<Value = Part> {
        let leaf = prop_oneof![
            "[a-z <&>]{0,8}".prop_map(Part::Item),
            "[a-z]{0,8}".prop_map(Part::Other),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop::collection::vec(inner, 0..4).prop_map(Part::Wrapped)
        })
    }

    fn emit(p: &Part, out: &mut String, titles: &mut Vec<String>) {
        match p {
            Part::Item(t) => {
                titles.push(t.clone());
                out.push_str(&format!("<item><title>{}</title></item>", xml::escape_text(t)));
            }
            Part::Other(t) => out.push_str(&format!("<other>{t}</other>")),
            Part::Wrapped(ps) => {
                out.push_str("<group>");
                for p in ps {
                    emit(p, out, titles);
                }
                out.push_str("</group>");
            }
        }
    }

    proptest! {
        #[test]
        fn item_count_matches_oracle(parts in prop::collection::vec(part(), 0..6)) {
            let mut body = String::new();
            let mut titles = Vec::new();
            for p in &parts {
                emit(p, &mut body, &mut titles);
            }
            let doc = format!("<rss version='2.0'><channel><title>c</title>{body}</channel></rss>");
            let feed = parse_feed(doc.as_bytes()).unwrap();
            let got: Vec<_> = feed.items.iter().map(|i| i.title().to_string()).collect();
            prop_assert_eq!(got, titles);
        }

        #[test]
        fn html_length_is_additive(titles in prop::collection::vec("(?s).{0,12}", 0..5)) {
            let feed = Feed {
                channel: ChannelMeta::default(),
                items: titles.iter().map(|t| item(t, "l")).collect(),
            };
            let sum: usize = feed.items.iter().map(|i| render_item_html(i).len()).sum();
            prop_assert_eq!(render_feed_html(&feed).len(), sum);
        }

        #[test]
        fn rendering_is_injective_on_link(a in "(?s).{0,16}", b in "(?s).{0,16}") {
            prop_assume!(a != b);
            prop_assert_ne!(render_item_html(&item("t", &a)), render_item_html(&item("t", &b)));
            prop_assert_ne!(
                render_feed_text(&Feed { channel: ChannelMeta::default(), items: vec![item("t", &a)] }),
                render_feed_text(&Feed { channel: ChannelMeta::default(), items: vec![item("t", &b)] })
            );
        }
    }
}
