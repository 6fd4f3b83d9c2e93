//! Entity type vocabularies shared across the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Coarse mention type produced by the extraction prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionType {
    Person,
    Publication,
    Venue,
}

impl MentionType {
    pub const ALL: [MentionType; 3] = [Self::Person, Self::Publication, Self::Venue];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Person => "person",
            Self::Publication => "publication",
            Self::Venue => "venue",
        }
    }

    /// The knowledge-graph class whose index partition serves this mention type.
    pub fn kg_type(self) -> KgType {
        match self {
            Self::Person => KgType::Creator,
            Self::Publication => KgType::Publication,
            Self::Venue => KgType::Stream,
        }
    }
}

impl fmt::Display for MentionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown type `{0}`")]
pub struct UnknownType(pub String);

impl FromStr for MentionType {
    type Err = UnknownType;

    /// Case-insensitive, surrounding whitespace ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "person" => Ok(Self::Person),
            "publication" => Ok(Self::Publication),
            "venue" => Ok(Self::Venue),
            _ => Err(UnknownType(s.to_string())),
        }
    }
}

/// Entity class in the scholarly knowledge graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KgType {
    Creator,
    Publication,
    Stream,
}

impl KgType {
    pub const ALL: [KgType; 3] = [Self::Creator, Self::Publication, Self::Stream];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Creator => "Creator",
            Self::Publication => "Publication",
            Self::Stream => "Stream",
        }
    }

    /// Maps an `rdf:type` class IRI onto a partition by its local name.
    ///
    /// Venue subclasses (conference, journal, series, repository) fold into
    /// `Stream`; `Person` folds into `Creator`.
    pub fn from_class_iri(iri: &str) -> Option<Self> {
        let local = iri.rsplit(['#', '/']).next().unwrap_or(iri);
        match local {
            "Creator" | "Person" => Some(Self::Creator),
            "Publication" | "Article" | "Inproceedings" | "Book" | "Incollection"
            | "Informal" | "Editorship" => Some(Self::Publication),
            "Stream" | "Conference" | "Journal" | "Series" | "Repository" => Some(Self::Stream),
            _ => None,
        }
    }
}

impl fmt::Display for KgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KgType {
    type Err = UnknownType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Creator" => Ok(Self::Creator),
            "Publication" => Ok(Self::Publication),
            "Stream" => Ok(Self::Stream),
            other if other.contains(['#', '/']) => {
                Self::from_class_iri(other).ok_or_else(|| UnknownType(s.to_string()))
            }
            _ => Err(UnknownType(s.to_string())),
        }
    }
}

/// Whether `s` is a syntactically valid absolute IRI.
pub fn is_absolute_iri(s: &str) -> bool {
    oxrdf::NamedNode::new(s).is_ok()
}
