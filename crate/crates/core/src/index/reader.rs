//! Label catalog readers.
//!
//! TSV: `iri \t type \t label \t alias1|alias2...`, UTF-8, one record per
//! line. Blank lines and lines starting with `#` are ignored; the alias
//! column is optional.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};

use oxrdf::{Subject, Term};
use oxttl::NTriplesParser;

use super::LabelRecord;
use crate::entity::KgType;

pub(crate) const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub(crate) const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";
pub(crate) const SKOS_ALT_LABEL: &str = "http://www.w3.org/2004/02/skos/core#altLabel";

/// A catalog line that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct MalformedRecord {
    pub line: usize,
    pub reason: String,
}

pub fn read_tsv<R: Read>(reader: R) -> impl Iterator<Item = Result<LabelRecord, MalformedRecord>> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line_no = i + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(MalformedRecord {
                        line: line_no,
                        reason: e.to_string(),
                    }))
                }
            };
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                return None;
            }
            Some(parse_tsv_line(line).map_err(|reason| MalformedRecord {
                line: line_no,
                reason,
            }))
        })
}

fn parse_tsv_line(line: &str) -> Result<LabelRecord, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if !(3..=4).contains(&cols.len()) {
        return Err(format!("expected 3 or 4 tab-separated columns, found {}", cols.len()));
    }
    let kg_type = cols[1]
        .parse::<KgType>()
        .map_err(|e| e.to_string())?;
    let aliases = cols
        .get(3)
        .map(|a| a.split('|').map(str::to_string).collect::<Vec<_>>())
        .unwrap_or_default();
    LabelRecord::new(cols[0], cols[2], kg_type, aliases)
}

#[derive(Default)]
struct Pending {
    labels: Vec<String>,
    aliases: Vec<String>,
    kg_type: Option<KgType>,
}

/// Extracts label records from N-Triples: `rdfs:label` gives the label
/// (further labels become aliases), `skos:altLabel` gives aliases and
/// `rdf:type` selects the partition. Subjects without a recognized class
/// or without a label are not records. Output is ordered by IRI.
pub fn read_ntriples_labels<R: Read>(reader: R) -> (Vec<LabelRecord>, Vec<MalformedRecord>) {
    let mut subjects: BTreeMap<String, Pending> = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, triple) in NTriplesParser::new().for_reader(reader).enumerate() {
        let triple = match triple {
            Ok(t) => t,
            Err(e) => {
                errors.push(MalformedRecord {
                    line: i + 1,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let Subject::NamedNode(subject) = triple.subject else {
            continue;
        };
        let entry = subjects.entry(subject.into_string()).or_default();
        match (triple.predicate.as_str(), &triple.object) {
            (RDFS_LABEL, Term::Literal(l)) => entry.labels.push(l.value().to_string()),
            (SKOS_ALT_LABEL, Term::Literal(l)) => entry.aliases.push(l.value().to_string()),
            (RDF_TYPE, Term::NamedNode(class)) => {
                if let Some(ty) = KgType::from_class_iri(class.as_str()) {
                    entry.kg_type.get_or_insert(ty);
                }
            }
            _ => {}
        }
    }
    let records = subjects
        .into_iter()
        .filter_map(|(iri, p)| {
            let kg_type = p.kg_type?;
            let (label, extra) = p.labels.split_first()?;
            let aliases = extra.iter().chain(&p.aliases).cloned();
            match LabelRecord::new(&iri, label, kg_type, aliases) {
                Ok(r) => Some(r),
                Err(reason) => {
                    errors.push(MalformedRecord { line: 0, reason: format!("{iri}: {reason}") });
                    None
                }
            }
        })
        .collect();
    (records, errors)
}
