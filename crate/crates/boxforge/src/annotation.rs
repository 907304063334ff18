//! Data model, parser, writer and statistics for Manga109-style annotation
//! corpora.
//!
//! A corpus is a single JSON document: volumes hold pages, pages hold
//! annotated objects. Boxes are in pixel coordinates within their page.
//! Irregular pages (covers, tables of contents) carry a flag instead of
//! being dropped, so skipping them is a query-time policy.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const SCHEMA_VERSION: u32 = 1;

/// The four annotation categories, in weight order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Frame,
    Text,
    Face,
    Body,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Frame, Category::Text, Category::Face, Category::Body];

    pub fn index(self) -> usize {
        match self {
            Category::Frame => 0,
            Category::Text => 1,
            Category::Face => 2,
            Category::Body => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Frame => "frame",
            Category::Text => "text",
            Category::Face => "face",
            Category::Body => "body",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Category> {
        match s {
            "frame" => Ok(Category::Frame),
            "text" => Ok(Category::Text),
            "face" => Ok(Category::Face),
            "body" => Ok(Category::Body),
            other => Err(Error::parse(format!("unknown category {other:?}"))),
        }
    }
}

/// One annotated object: a pixel box, a category, and the optional extras
/// (character name on face/body, text content on text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub category: Category,
    /// `[x_min, y_min, x_max, y_max]` in page pixels.
    #[serde(rename = "box", with = "bbox_array")]
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub character_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_content: Option<String>,
}

/// Serializes a box as the 4-element array the corpus schema uses.
pub(crate) mod bbox_array {
    use super::BBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> std::result::Result<S::Ok, S::Error> {
        [b.x_min, b.y_min, b.x_max, b.y_max].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BBox, D::Error> {
        let [x_min, y_min, x_max, y_max] = <[f64; 4]>::deserialize(d)?;
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub page_id: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub irregular: bool,
    pub objects: Vec<AnnotatedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    pub pages: Vec<Page>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationCorpus {
    pub schema_version: u32,
    pub volumes: Vec<Volume>,
}

impl AnnotationCorpus {
    pub fn new(volumes: Vec<Volume>) -> Self {
        AnnotationCorpus {
            schema_version: SCHEMA_VERSION,
            volumes,
        }
    }

    /// Pages across all volumes, optionally keeping irregular ones.
    pub fn pages(&self, include_irregular: bool) -> impl Iterator<Item = &Page> {
        self.volumes
            .iter()
            .flat_map(|v| v.pages.iter())
            .filter(move |p| include_irregular || !p.irregular)
    }

    pub fn find_page(&self, page_id: &str) -> Option<&Page> {
        self.volumes
            .iter()
            .flat_map(|v| v.pages.iter())
            .find(|p| p.page_id == page_id)
    }

    pub fn validate(&self) -> Result<()> {
        for (vi, volume) in self.volumes.iter().enumerate() {
            let mut ids = BTreeSet::new();
            for (pi, page) in volume.pages.iter().enumerate() {
                let at = |detail: &str| {
                    format!(
                        "volumes[{vi}] ({}), pages[{pi}] ({}): {detail}",
                        volume.title, page.page_id
                    )
                };
                if !(page.width > 0.0 && page.height > 0.0) {
                    return Err(Error::validation(at("page size must be positive")));
                }
                if !ids.insert(&page.page_id) {
                    return Err(Error::validation(at("duplicate page_id within volume")));
                }
                for (oi, obj) in page.objects.iter().enumerate() {
                    let b = &obj.bbox;
                    if !(b.x_min <= b.x_max && b.y_min <= b.y_max) {
                        return Err(Error::validation(at(&format!(
                            "objects[{oi}]: box corners are not ordered"
                        ))));
                    }
                    if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > page.width || b.y_max > page.height
                    {
                        return Err(Error::validation(at(&format!(
                            "objects[{oi}] ({}): box [{}, {}, {}, {}] exceeds page bounds {}x{}",
                            obj.category, b.x_min, b.y_min, b.x_max, b.y_max, page.width, page.height
                        ))));
                    }
                    if obj.character_name.is_some()
                        && !matches!(obj.category, Category::Face | Category::Body)
                    {
                        return Err(Error::validation(at(&format!(
                            "objects[{oi}]: character_name is only valid on face/body"
                        ))));
                    }
                    if obj.text_content.is_some() && obj.category != Category::Text {
                        return Err(Error::validation(at(&format!(
                            "objects[{oi}]: text_content is only valid on text"
                        ))));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a corpus document.
pub fn parse_corpus(document: &str) -> Result<AnnotationCorpus> {
    let corpus: AnnotationCorpus =
        serde_json::from_str(document).map_err(|e| Error::parse(e.to_string()))?;
    corpus.validate()?;
    Ok(corpus)
}

/// Canonical serialization: fixed field order, two-space indent, trailing
/// newline. Byte-identical across runs for equal corpora.
pub fn write_corpus(corpus: &AnnotationCorpus) -> String {
    let mut out = serde_json::to_string_pretty(corpus).expect("corpus serializes");
    out.push('\n');
    out
}

/// Exact corpus counts (Table-1 style).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub volumes: usize,
    pub pages: usize,
    pub frames: usize,
    pub texts: usize,
    pub faces: usize,
    pub bodies: usize,
    pub unique_character_names: usize,
    /// Unicode scalar values across all text contents.
    pub text_letters: usize,
}

impl CorpusStats {
    pub fn category_count(&self, c: Category) -> usize {
        match c {
            Category::Frame => self.frames,
            Category::Text => self.texts,
            Category::Face => self.faces,
            Category::Body => self.bodies,
        }
    }
}

/// Counts objects, pages, character names and text letters. Irregular
/// pages are skipped unless `include_irregular` is set; volume count is
/// the raw volume count either way.
pub fn stats(corpus: &AnnotationCorpus, include_irregular: bool) -> CorpusStats {
    let mut s = CorpusStats {
        volumes: corpus.volumes.len(),
        ..Default::default()
    };
    let mut names: BTreeSet<&str> = BTreeSet::new();
    for page in corpus.pages(include_irregular) {
        s.pages += 1;
        for obj in &page.objects {
            match obj.category {
                Category::Frame => s.frames += 1,
                Category::Text => s.texts += 1,
                Category::Face => s.faces += 1,
                Category::Body => s.bodies += 1,
            }
            if let Some(name) = &obj.character_name {
                names.insert(name);
            }
            if let Some(text) = &obj.text_content {
                s.text_letters += text.chars().count();
            }
        }
    }
    s.unique_character_names = names.len();
    s
}

/// Concatenates a left and right page into one double-sided page. The
/// right page's objects shift by the left page's width; heights must
/// match.
pub fn concat_double_page(left: &Page, right: &Page) -> Result<Page> {
    if left.height != right.height {
        return Err(Error::validation(format!(
            "page heights differ: {} ({}) vs {} ({})",
            left.page_id, left.height, right.page_id, right.height
        )));
    }
    let mut objects = left.objects.clone();
    for obj in &right.objects {
        let mut shifted = obj.clone();
        shifted.bbox.x_min += left.width;
        shifted.bbox.x_max += left.width;
        objects.push(shifted);
    }
    Ok(Page {
        page_id: format!("{}+{}", left.page_id, right.page_id),
        width: left.width + right.width,
        height: left.height,
        irregular: left.irregular || right.irregular,
        objects,
    })
}

/// Splits a corpus into (train, test) by volume title. Every requested
/// title must exist.
pub fn split_train_test(
    corpus: &AnnotationCorpus,
    test_volume_titles: &[String],
) -> Result<(AnnotationCorpus, AnnotationCorpus)> {
    let wanted: BTreeSet<&str> = test_volume_titles.iter().map(String::as_str).collect();
    let known: BTreeSet<&str> = corpus.volumes.iter().map(|v| v.title.as_str()).collect();
    for title in &wanted {
        if !known.contains(title) {
            return Err(Error::validation(format!("unknown volume title {title:?}")));
        }
    }
    let (test, train): (Vec<Volume>, Vec<Volume>) = corpus
        .volumes
        .iter()
        .cloned()
        .partition(|v| wanted.contains(v.title.as_str()));
    Ok((AnnotationCorpus::new(train), AnnotationCorpus::new(test)))
}
