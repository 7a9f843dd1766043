//! Per-kind extraction of items from fetched bodies.

use chrono::{DateTime, NaiveDate};
use regex::Regex;
use std::sync::OnceLock;

/// One item found in a feed or listing, before fetch metadata is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub url: Option<String>,
    pub title: Option<String>,
    pub raw: String,
    pub declared_date: Option<NaiveDate>,
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_rfc2822(s))
        .map(|d| d.naive_utc().date())
        .ok()
        .or_else(|| NaiveDate::parse_from_str(s.get(..10).unwrap_or(s), "%Y-%m-%d").ok())
}

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, names: &[&str]) -> Option<String> {
    for name in names {
        let found = node.children().find(|c| c.is_element() && c.tag_name().name() == *name);
        if let Some(c) = found {
            let text: String = c.descendants().filter(|d| d.is_text()).filter_map(|d| d.text()).collect();
            let text = text.trim();
            if !text.is_empty() {
                return Some(text.to_string());
            }
        }
    }
    None
}

fn atom_link(entry: roxmltree::Node) -> Option<String> {
    let links: Vec<_> = entry
        .children()
        .filter(|c| c.is_element() && c.tag_name().name() == "link")
        .collect();
    links
        .iter()
        .find(|l| l.attribute("rel").is_none_or(|r| r == "alternate"))
        .or(links.first())
        .and_then(|l| l.attribute("href").map(str::to_string))
        .or_else(|| child_text(entry, &["link"]))
}

/// Items of an RSS 2.0, RSS 1.0 or Atom feed. The body is the longest of
/// the content fields present.
pub fn parse_feed(xml: &str) -> Result<Vec<Item>, String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| e.to_string())?;
    let root = doc.root_element();
    let mut items = Vec::new();
    for node in root.descendants().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "item" => {
                let raw = ["encoded", "description"]
                    .iter()
                    .filter_map(|n| child_text(node, &[n]))
                    .max_by_key(String::len)
                    .unwrap_or_default();
                items.push(Item {
                    url: child_text(node, &["link", "guid"]),
                    title: child_text(node, &["title"]),
                    raw,
                    declared_date: child_text(node, &["pubDate", "date", "published", "updated"]).and_then(|d| parse_date(&d)),
                });
            }
            "entry" => {
                let raw = ["content", "summary"]
                    .iter()
                    .filter_map(|n| child_text(node, &[n]))
                    .max_by_key(String::len)
                    .unwrap_or_default();
                items.push(Item {
                    url: atom_link(node),
                    title: child_text(node, &["title"]),
                    raw,
                    declared_date: child_text(node, &["published", "updated"]).and_then(|d| parse_date(&d)),
                });
            }
            _ => {}
        }
    }
    if items.is_empty() && !matches!(root.tag_name().name(), "rss" | "feed" | "RDF") {
        return Err(format!("root element <{}> is not a feed", root.tag_name().name()));
    }
    Ok(items)
}

/// Preprint API responses are Atom; the abstract is the summary and the
/// body combines title and abstract.
pub fn parse_arxiv(xml: &str) -> Result<Vec<Item>, String> {
    Ok(parse_feed(xml)?
        .into_iter()
        .map(|mut it| {
            let title = it.title.clone().unwrap_or_default();
            it.raw = format!("{}\n\n{}", title, it.raw.split_whitespace().collect::<Vec<_>>().join(" "));
            it
        })
        .collect())
}

/// Entries of a MediaWiki `list=recentchanges` response: (title, date).
pub fn parse_recent_changes(json: &str) -> Result<Vec<(String, Option<NaiveDate>)>, String> {
    let v: serde_json::Value = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let list = v
        .pointer("/query/recentchanges")
        .and_then(|l| l.as_array())
        .ok_or("missing query.recentchanges")?;
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for rc in list {
        let Some(title) = rc.get("title").and_then(|t| t.as_str()) else {
            continue;
        };
        if seen.insert(title.to_string()) {
            let date = rc.get("timestamp").and_then(|t| t.as_str()).and_then(parse_date);
            out.push((title.to_string(), date));
        }
    }
    Ok(out)
}

/// Plain-text extract from a MediaWiki `prop=extracts` response.
pub fn parse_extract(json: &str) -> Result<String, String> {
    let v: serde_json::Value = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let pages = v
        .pointer("/query/pages")
        .and_then(|p| p.as_object())
        .ok_or("missing query.pages")?;
    pages
        .values()
        .find_map(|p| p.get("extract").and_then(|e| e.as_str()))
        .map(str::to_string)
        .ok_or_else(|| String::from("no extract in response"))
}

/// Link selection rule for listing pages: `a`, `a.class`, `a[href^=prefix]`,
/// `a[href*=part]` or `a[href$=suffix]`; a class and one attribute test
/// may be combined (`a.story[href*=/news/]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRule {
    class: Option<String>,
    href: Option<(char, String)>,
}

impl LinkRule {
    pub fn parse(rule: &str) -> Result<Self, String> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r#"^a(?:\.([A-Za-z0-9_-]+))?(?:\[href([\^*$])=["']?([^"'\]]*)["']?\])?$"#).expect("valid regex")
        });
        let caps = re.captures(rule.trim()).ok_or_else(|| format!("unsupported selector {rule:?}"))?;
        Ok(Self {
            class: caps.get(1).map(|m| m.as_str().to_string()),
            href: caps
                .get(2)
                .map(|op| (op.as_str().chars().next().unwrap_or('*'), caps[3].to_string())),
        })
    }

    pub fn any() -> Self {
        Self { class: None, href: None }
    }

    fn accepts(&self, href: &str, class: Option<&str>) -> bool {
        if let Some(want) = &self.class {
            if !class.is_some_and(|c| c.split_whitespace().any(|x| x == want)) {
                return false;
            }
        }
        match &self.href {
            Some(('^', p)) => href.starts_with(p.as_str()),
            Some(('$', p)) => href.ends_with(p.as_str()),
            Some((_, p)) => href.contains(p.as_str()),
            None => true,
        }
    }
}

fn attr(tag: &str, name: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#"(?is)([a-z_:-]+)\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))"#).expect("valid regex"));
    re.captures_iter(tag)
        .find(|c| c[1].eq_ignore_ascii_case(name))
        .and_then(|c| c.get(2).or(c.get(3)).or(c.get(4)).map(|m| m.as_str().to_string()))
}

/// Anchors on a listing page accepted by `rule`, resolved against `base`,
/// in page order without duplicates.
pub fn extract_links(html: &str, base: &url::Url, rule: &LinkRule) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?is)<a\s[^>]*>").expect("valid regex"));
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for m in re.find_iter(html) {
        let tag = m.as_str();
        let Some(href) = attr(tag, "href") else {
            continue;
        };
        if !rule.accepts(&href, attr(tag, "class").as_deref()) {
            continue;
        }
        if let Ok(u) = base.join(&href) {
            if matches!(u.scheme(), "http" | "https") && seen.insert(u.to_string()) {
                out.push(u.to_string());
            }
        }
    }
    out
}

/// Title and publication date declared in an article page's head.
pub fn page_metadata(html: &str) -> (Option<String>, Option<NaiveDate>) {
    static TITLE: OnceLock<Regex> = OnceLock::new();
    static META: OnceLock<Regex> = OnceLock::new();
    static TIME: OnceLock<Regex> = OnceLock::new();
    let title = TITLE
        .get_or_init(|| Regex::new(r"(?is)<title[^>]*>(.*?)</title>").expect("valid regex"))
        .captures(html)
        .map(|c| c[1].trim().to_string())
        .filter(|t| !t.is_empty());
    let meta_re = META.get_or_init(|| Regex::new(r"(?is)<meta\s[^>]*>").expect("valid regex"));
    let date = meta_re
        .find_iter(html)
        .find_map(|m| {
            let tag = m.as_str();
            let key = attr(tag, "property").or_else(|| attr(tag, "name"))?;
            let wanted = ["article:published_time", "date", "dc.date", "pubdate"];
            wanted
                .iter()
                .any(|w| key.eq_ignore_ascii_case(w))
                .then(|| attr(tag, "content"))
                .flatten()
                .and_then(|c| parse_date(&c))
        })
        .or_else(|| {
            TIME.get_or_init(|| Regex::new(r#"(?is)<time\s[^>]*datetime\s*=\s*["']([^"']+)["']"#).expect("valid regex"))
                .captures(html)
                .and_then(|c| parse_date(&c[1]))
        });
    (title, date)
}
