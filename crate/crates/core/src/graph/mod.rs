//! Integrated knowledge graph: dictionaries, triples, adjacency, provenance.

mod ddi;
mod ntriples;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ddi::{extract_ddi_pairs, DdiDataset, DdiPair, DdiSource, DrugUniverse};
pub use ntriples::{parse_ntriples, write_ntriples, LabeledTriple, ParsedTriples};

/// Predicates that carry drug-drug interaction facts and must never reach
/// an embedding stage.
pub const DDI_PREDICATES: [&str; 2] = [
    "http://bio2rdf.org/drugbank_vocabulary:ddi-interactor-in",
    "http://bio2rdf.org/kegg_vocabulary:Interaction",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Bijective label <-> dense id map. Ids are assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut dict = Self::new();
        for label in labels {
            let label = label.into();
            if dict.id(&label).is_some() {
                return Err(Error::Usage(format!("duplicate label `{label}`")));
            }
            dict.get_or_insert(&label);
        }
        Ok(dict)
    }

    pub fn get_or_insert(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// `source -> canonical` identifier pairs (owl:sameAs style).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MappingTable {
    pub entries: Vec<(String, String)>,
}

impl MappingTable {
    pub fn parse_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 2 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected `source_iri<TAB>canonical_iri`".into(),
                });
            }
            entries.push((fields[0].trim().to_string(), fields[1].trim().to_string()));
        }
        Ok(Self { entries })
    }

    /// Closes the table transitively.
    ///
    /// Every label connected through mapping entries is rewritten to the
    /// lexicographically smallest label of its connected group. A directed
    /// cycle of length two or more is rejected.
    pub fn canonicalizer(&self) -> Result<Canonicalizer> {
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        for (s, c) in &self.entries {
            let n = ids.len();
            ids.entry(s.as_str()).or_insert(n);
            let n = ids.len();
            ids.entry(c.as_str()).or_insert(n);
        }
        let labels: Vec<&str> = {
            let mut v = vec![""; ids.len()];
            for (&l, &i) in &ids {
                v[i] = l;
            }
            v
        };

        let mut edges: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ids.len()];
        for (s, c) in &self.entries {
            let (a, b) = (ids[s.as_str()], ids[c.as_str()]);
            if a != b {
                edges[a].insert(b);
            }
        }
        if let Some(node) = find_cycle(&edges) {
            return Err(Error::Integration(format!(
                "mapping cycle through `{}`",
                labels[node]
            )));
        }

        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, outs) in edges.iter().enumerate() {
            for &b in outs {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra != rb {
                    // Keep the smaller label as root.
                    if labels[ra] < labels[rb] {
                        parent[rb] = ra;
                    } else {
                        parent[ra] = rb;
                    }
                }
            }
        }
        let mut canonical = HashMap::new();
        for (i, &label) in labels.iter().enumerate() {
            let r = root(&mut parent, i);
            if r != i {
                canonical.insert(label.to_string(), labels[r].to_string());
            }
        }
        Ok(Canonicalizer { canonical })
    }
}

fn find_cycle(edges: &[BTreeSet<usize>]) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; edges.len()];
    for start in 0..edges.len() {
        if mark[start] != Mark::New {
            continue;
        }
        let mut stack = vec![(start, edges[start].iter())];
        mark[start] = Mark::Active;
        while let Some((node, iter)) = stack.last_mut() {
            match iter.next() {
                Some(&next) => match mark[next] {
                    Mark::Active => return Some(next),
                    Mark::New => {
                        mark[next] = Mark::Active;
                        stack.push((next, edges[next].iter()));
                    }
                    Mark::Done => {}
                },
                None => {
                    mark[*node] = Mark::Done;
                    stack.pop();
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, Default)]
pub struct Canonicalizer {
    canonical: HashMap<String, String>,
}

impl Canonicalizer {
    pub fn canonical<'a>(&'a self, label: &'a str) -> &'a str {
        self.canonical.get(label).map_or(label, String::as_str)
    }
}

/// Triples from one named graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSource {
    pub name: String,
    pub triples: ParsedTriples,
}

impl NamedSource {
    pub fn new(name: impl Into<String>, triples: ParsedTriples) -> Self {
        Self {
            name: name.into(),
            triples,
        }
    }
}

/// Immutable integer-indexed multigraph of `(head, relation, tail)` triples.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    entities: Dictionary,
    relations: Dictionary,
    adjacency: Vec<Vec<(usize, usize)>>,
    sources: Vec<String>,
    triple_sources: Vec<usize>,
    triple_set: HashSet<Triple>,
    dropped_literals: usize,
    duplicates_dropped: usize,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.triples == other.triples
            && self.entities == other.entities
            && self.relations == other.relations
            && self.sources == other.sources
            && self.triple_sources == other.triple_sources
    }
}

/// Merges named sources into one graph.
///
/// Labels are rewritten through the closed mapping before dictionary
/// assignment. A triple seen in several sources is kept once, tagged with
/// the first source that contributed it.
pub fn build_graph(sources: &[NamedSource], mapping: &MappingTable) -> Result<KnowledgeGraph> {
    let canon = mapping.canonicalizer()?;
    let mut entities = Dictionary::new();
    let mut relations = Dictionary::new();
    let mut source_names = Vec::new();
    let mut triples = Vec::new();
    let mut triple_sources = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped_literals = 0;
    let mut duplicates = 0;

    for source in sources {
        let tag = source_names.len();
        source_names.push(source.name.clone());
        dropped_literals += source.triples.dropped_literals;
        for rec in &source.triples.records {
            let head = canon.canonical(&rec.subject);
            let rel = canon.canonical(&rec.predicate);
            let tail = canon.canonical(&rec.object);
            // Look up before inserting so duplicates do not grow dictionaries.
            if let (Some(h), Some(r), Some(t)) =
                (entities.id(head), relations.id(rel), entities.id(tail))
            {
                if seen.contains(&Triple::new(h, r, t)) {
                    duplicates += 1;
                    continue;
                }
            }
            let h = entities.get_or_insert(head);
            let r = relations.get_or_insert(rel);
            let t = entities.get_or_insert(tail);
            let triple = Triple::new(h, r, t);
            seen.insert(triple);
            triples.push(triple);
            triple_sources.push(tag);
        }
    }

    let mut graph = KnowledgeGraph {
        triples,
        entities,
        relations,
        adjacency: Vec::new(),
        sources: source_names,
        triple_sources,
        triple_set: seen,
        dropped_literals,
        duplicates_dropped: duplicates,
    };
    graph.rebuild_adjacency();
    Ok(graph)
}

impl KnowledgeGraph {
    /// Builds a graph directly from ids, for toy graphs and tests.
    pub fn from_ids(
        entity_labels: Vec<String>,
        relation_labels: Vec<String>,
        triples: Vec<Triple>,
    ) -> Result<Self> {
        let entities = Dictionary::from_labels(entity_labels)?;
        let relations = Dictionary::from_labels(relation_labels)?;
        let mut kept = Vec::with_capacity(triples.len());
        let mut set = HashSet::new();
        for t in triples {
            if t.head >= entities.len() || t.tail >= entities.len() || t.relation >= relations.len()
            {
                return Err(Error::Usage(format!("triple {t:?} out of range")));
            }
            if set.insert(t) {
                kept.push(t);
            }
        }
        let n = kept.len();
        let mut graph = Self {
            triples: kept,
            entities,
            relations,
            adjacency: Vec::new(),
            sources: vec!["default".into()],
            triple_sources: vec![0; n],
            triple_set: set,
            dropped_literals: 0,
            duplicates_dropped: 0,
        };
        graph.rebuild_adjacency();
        Ok(graph)
    }

    /// Toy graph with entities `e0..` and relations `r0..`.
    pub fn toy(
        entity_count: usize,
        relation_count: usize,
        triples: &[(usize, usize, usize)],
    ) -> Result<Self> {
        Self::from_ids(
            (0..entity_count).map(|i| format!("e{i}")).collect(),
            (0..relation_count).map(|i| format!("r{i}")).collect(),
            triples
                .iter()
                .map(|&(h, r, t)| Triple::new(h, r, t))
                .collect(),
        )
    }

    fn rebuild_adjacency(&mut self) {
        let mut adjacency = vec![Vec::new(); self.entities.len()];
        for t in &self.triples {
            adjacency[t.head].push((t.relation, t.tail));
        }
        self.adjacency = adjacency;
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entities(&self) -> &Dictionary {
        &self.entities
    }

    pub fn relations(&self) -> &Dictionary {
        &self.relations
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// Outgoing `(relation, tail)` pairs of an entity.
    pub fn out_edges(&self, entity: usize) -> &[(usize, usize)] {
        &self.adjacency[entity]
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn source_of(&self, triple_index: usize) -> &str {
        &self.sources[self.triple_sources[triple_index]]
    }

    pub fn dropped_literals(&self) -> usize {
        self.dropped_literals
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    /// Regroups triples by source tag, as labeled records.
    pub fn to_sources(&self) -> Vec<NamedSource> {
        let mut out: Vec<NamedSource> = self
            .sources
            .iter()
            .map(|name| NamedSource::new(name.clone(), ParsedTriples::default()))
            .collect();
        for (t, &src) in self.triples.iter().zip(&self.triple_sources) {
            out[src].triples.records.push(self.labeled(t));
        }
        out
    }

    pub fn labeled(&self, t: &Triple) -> LabeledTriple {
        LabeledTriple::new(
            self.entities.label(t.head),
            self.relations.label(t.relation),
            self.entities.label(t.tail),
        )
    }

    /// Returns a copy without any triple whose predicate is in `predicates`.
    ///
    /// The entity dictionary is kept as is, so entities may become isolated.
    /// Surviving relations are renumbered in their original order.
    pub fn strip_relations<S: AsRef<str>>(&self, predicates: &[S]) -> KnowledgeGraph {
        let stripped: HashSet<usize> = predicates
            .iter()
            .filter_map(|p| self.relations.id(p.as_ref()))
            .collect();
        let mut relations = Dictionary::new();
        let mut remap = vec![None; self.relations.len()];
        for (id, label) in self.relations.labels().iter().enumerate() {
            if !stripped.contains(&id) {
                remap[id] = Some(relations.get_or_insert(label));
            }
        }
        let mut triples = Vec::new();
        let mut triple_sources = Vec::new();
        for (t, &src) in self.triples.iter().zip(&self.triple_sources) {
            if let Some(r) = remap[t.relation] {
                triples.push(Triple::new(t.head, r, t.tail));
                triple_sources.push(src);
            }
        }
        let mut graph = KnowledgeGraph {
            triple_set: triples.iter().copied().collect(),
            triples,
            entities: self.entities.clone(),
            relations,
            adjacency: Vec::new(),
            sources: self.sources.clone(),
            triple_sources,
            dropped_literals: self.dropped_literals,
            duplicates_dropped: self.duplicates_dropped,
        };
        graph.rebuild_adjacency();
        graph
    }

    /// Triples whose predicate label is in `predicates`.
    pub fn count_with_predicates<S: AsRef<str>>(&self, predicates: &[S]) -> usize {
        let ids: HashSet<usize> = predicates
            .iter()
            .filter_map(|p| self.relations.id(p.as_ref()))
            .collect();
        self.triples
            .iter()
            .filter(|t| ids.contains(&t.relation))
            .count()
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub triples: usize,
    pub entities: usize,
    pub relation_types: usize,
    pub per_source: BTreeMap<String, usize>,
    pub dropped_literals: usize,
    pub skipped_pairs: usize,
}

pub fn graph_stats(graph: &KnowledgeGraph) -> GraphStats {
    let mut per_source: BTreeMap<String, usize> =
        graph.sources.iter().map(|s| (s.clone(), 0)).collect();
    for &src in &graph.triple_sources {
        *per_source
            .get_mut(&graph.sources[src])
            .expect("known source") += 1;
    }
    let used: HashSet<usize> = graph.triples.iter().map(|t| t.relation).collect();
    GraphStats {
        triples: graph.triples.len(),
        entities: graph.entities.len(),
        relation_types: used.len(),
        per_source,
        dropped_literals: graph.dropped_literals,
        skipped_pairs: 0,
    }
}
