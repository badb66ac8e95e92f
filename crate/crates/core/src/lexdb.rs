//! Lexical concept hierarchy: synsets linked by "is a" (hypernym) edges.
//!
//! A [`Lexicon`] is the validated, unfiltered set of synsets read from a
//! JSON-lines file. A [`Hierarchy`] is an immutable, indexed view over a
//! subset of it (typically the ancestor closure of a seed list) and answers
//! the graph queries used by the rest of the crate: descendant sets,
//! ancestor chains, concept search and shortest-path distance.
//!
//! Real hypernym graphs are DAGs, so a node may have several parents. All
//! closures are deduplicated.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum LexError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("synset {child} references unknown hypernym {parent}")]
    DanglingHypernym { child: String, parent: String },
    #[error("duplicate synset id {0}")]
    DuplicateId(String),
    #[error("\"is a\" cycle detected through {0}")]
    Cycle(String),
    #[error("unknown synset {0}")]
    UnknownSynset(String),
    #[error("no path between {0} and {1}")]
    NoPath(String, String),
}

/// A lexical concept: a set of synonyms sharing one definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synset {
    pub id: String,
    #[serde(default)]
    pub lemmas: Vec<String>,
    pub definition: String,
    /// Direct "is a" parents.
    #[serde(rename = "hypernyms", default)]
    pub hypernym_ids: Vec<String>,
}

/// Validated collection of synsets. Every hypernym reference resolves and
/// the "is a" relation is acyclic.
#[derive(Debug, Clone)]
pub struct Lexicon {
    synsets: Vec<Synset>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    pub fn from_synsets(synsets: Vec<Synset>) -> Result<Self, LexError> {
        let mut index = HashMap::with_capacity(synsets.len());
        for (i, s) in synsets.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(LexError::DuplicateId(s.id.clone()));
            }
        }
        for s in &synsets {
            for p in &s.hypernym_ids {
                if !index.contains_key(p) {
                    return Err(LexError::DanglingHypernym {
                        child: s.id.clone(),
                        parent: p.clone(),
                    });
                }
            }
        }
        let parents: Vec<Vec<usize>> = synsets
            .iter()
            .map(|s| s.hypernym_ids.iter().map(|p| index[p]).collect())
            .collect();
        if let Some(node) = find_cycle(&parents) {
            return Err(LexError::Cycle(synsets[node].id.clone()));
        }
        Ok(Self { synsets, index })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, LexError> {
        let mut synsets = Vec::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| LexError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let synset: Synset = serde_json::from_str(trimmed).map_err(|e| LexError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if synset.id.is_empty() {
                return Err(LexError::Parse {
                    line: line_no,
                    message: "empty synset id".into(),
                });
            }
            if synset.definition.trim().is_empty() {
                return Err(LexError::Parse {
                    line: line_no,
                    message: format!("synset {} has an empty definition", synset.id),
                });
            }
            synsets.push(synset);
        }
        Self::from_synsets(synsets)
    }

    pub fn len(&self) -> usize {
        self.synsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synsets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Synset> {
        self.index.get(id).map(|&i| &self.synsets[i])
    }

    pub fn synsets(&self) -> &[Synset] {
        &self.synsets
    }
}

/// Reads a lexicon file: one JSON object per line with fields
/// `id`, `lemmas`, `definition`, `hypernyms`.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, LexError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| LexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Lexicon::from_reader(file)
}

/// Parses a seed list: one synset id per line, `#` starts a comment.
pub fn parse_seed_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn load_seed_list(path: impl AsRef<Path>) -> Result<Vec<String>, LexError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_seed_list(&text))
}

// Iterative three-colour DFS over parent edges; returns a node on a cycle.
fn find_cycle(parents: &[Vec<usize>]) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut mark = vec![Mark::White; parents.len()];
    for start in 0..parents.len() {
        if mark[start] != Mark::White {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        mark[start] = Mark::Grey;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&p) = parents[node].get(*next) {
                *next += 1;
                match mark[p] {
                    Mark::Grey => return Some(p),
                    Mark::White => {
                        mark[p] = Mark::Grey;
                        stack.push((p, 0));
                    }
                    Mark::Black => {}
                }
            } else {
                mark[node] = Mark::Black;
                stack.pop();
            }
        }
    }
    None
}

/// Immutable, indexed "is a" graph. Nodes are stored sorted by id so that
/// node indices are stable for a given node set.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    nodes: Vec<Synset>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
}

impl Hierarchy {
    /// Hierarchy over every synset of the lexicon.
    pub fn from_lexicon(lexicon: &Lexicon) -> Self {
        Self::build(lexicon.synsets.clone())
    }

    // Parent references to nodes outside `nodes` are dropped.
    fn build(mut nodes: Vec<Synset>) -> Self {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let index: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        let mut parents = vec![Vec::new(); nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        for (i, s) in nodes.iter_mut().enumerate() {
            s.hypernym_ids.retain(|p| index.contains_key(p));
            s.hypernym_ids.sort();
            s.hypernym_ids.dedup();
            for p in &s.hypernym_ids {
                let pi = index[p];
                parents[i].push(pi);
                children[pi].push(i);
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }
        let roots = (0..nodes.len()).filter(|&i| parents[i].is_empty()).collect();
        Self {
            nodes,
            index,
            parents,
            children,
            roots,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in index order (sorted by id).
    pub fn nodes(&self) -> &[Synset] {
        &self.nodes
    }

    pub fn get(&self, id: &str) -> Option<&Synset> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, id: &str) -> Result<usize, LexError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| LexError::UnknownSynset(id.to_owned()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn roots(&self) -> impl Iterator<Item = &str> {
        self.roots.iter().map(|&i| self.nodes[i].id.as_str())
    }

    pub fn parents_of(&self, id: &str) -> Result<Vec<&str>, LexError> {
        let i = self.index_of(id)?;
        Ok(self.parents[i]
            .iter()
            .map(|&p| self.nodes[p].id.as_str())
            .collect())
    }

    pub fn children_of(&self, id: &str) -> Result<Vec<&str>, LexError> {
        let i = self.index_of(id)?;
        Ok(self.children[i]
            .iter()
            .map(|&c| self.nodes[c].id.as_str())
            .collect())
    }

    /// Node indices of `id` and everything below it, ascending.
    pub fn descendant_indices(&self, id: &str) -> Result<Vec<usize>, LexError> {
        let start = self.index_of(id)?;
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(n) = stack.pop() {
            for &c in &self.children[n] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        Ok((0..self.nodes.len()).filter(|&i| seen[i]).collect())
    }

    /// The set of synsets that are (transitively) "a kind of" `id`,
    /// including `id` itself.
    pub fn descendants(&self, id: &str) -> Result<BTreeSet<&str>, LexError> {
        Ok(self
            .descendant_indices(id)?
            .into_iter()
            .map(|i| self.nodes[i].id.as_str())
            .collect())
    }

    /// All transitive hypernyms, nearest first. Nodes at equal distance are
    /// ordered by id.
    pub fn ancestors(&self, id: &str) -> Result<Vec<&str>, LexError> {
        let start = self.index_of(id)?;
        let mut seen = vec![false; self.nodes.len()];
        seen[start] = true;
        let mut out = Vec::new();
        let mut frontier = vec![start];
        while !frontier.is_empty() {
            let mut next: Vec<usize> = Vec::new();
            for &n in &frontier {
                for &p in &self.parents[n] {
                    if !seen[p] {
                        seen[p] = true;
                        next.push(p);
                    }
                }
            }
            // indices are id-sorted
            next.sort_unstable();
            out.extend(next.iter().map(|&i| self.nodes[i].id.as_str()));
            frontier = next;
        }
        Ok(out)
    }

    /// Case-insensitive substring search over ids and lemmas. Exact matches
    /// (on a lemma, the full id, or the id's head word) come first, then the
    /// rest; both groups ordered by id.
    pub fn search(&self, query: &str, limit: usize) -> Vec<&str> {
        let q = normalize_term(query.trim());
        if q.is_empty() || limit == 0 {
            return Vec::new();
        }
        let mut exact = Vec::new();
        let mut partial = Vec::new();
        for s in &self.nodes {
            let id = normalize_term(&s.id);
            let head = id.split('.').next().unwrap_or("");
            let lemmas: Vec<String> = s.lemmas.iter().map(|l| normalize_term(l)).collect();
            if id == q || head == q || lemmas.contains(&q) {
                exact.push(s.id.as_str());
            } else if id.contains(&q) || lemmas.iter().any(|l| l.contains(&q)) {
                partial.push(s.id.as_str());
            }
        }
        exact.into_iter().chain(partial).take(limit).collect()
    }

    /// Shortest path length between two synsets with "is a" edges treated
    /// as undirected.
    pub fn semantic_distance(&self, a: &str, b: &str) -> Result<usize, LexError> {
        let start = self.index_of(a)?;
        let goal = self.index_of(b)?;
        if start == goal {
            return Ok(0);
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &m in self.parents[n].iter().chain(&self.children[n]) {
                if dist[m] == usize::MAX {
                    dist[m] = dist[n] + 1;
                    if m == goal {
                        return Ok(dist[m]);
                    }
                    queue.push_back(m);
                }
            }
        }
        Err(LexError::NoPath(a.to_owned(), b.to_owned()))
    }

    /// SHA-256 over ids and definitions in index order. Identifies the
    /// text content a definition matrix was built from.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.nodes.len() as u64).to_le_bytes());
        for s in &self.nodes {
            h.update(s.id.as_bytes());
            h.update([0u8]);
            h.update(s.definition.as_bytes());
            h.update([0u8]);
        }
        h.finalize().into()
    }
}

fn normalize_term(s: &str) -> String {
    s.to_lowercase().replace('_', " ")
}

/// Restricts the lexicon to the seeds and all of their transitive "is a"
/// ancestors.
pub fn filter_hierarchy<S: AsRef<str>>(
    lexicon: &Lexicon,
    seed_ids: &[S],
) -> Result<Hierarchy, LexError> {
    let mut keep = vec![false; lexicon.len()];
    let mut stack = Vec::with_capacity(seed_ids.len());
    for seed in seed_ids {
        let seed = seed.as_ref();
        let &i = lexicon
            .index
            .get(seed)
            .ok_or_else(|| LexError::UnknownSynset(seed.to_owned()))?;
        if !keep[i] {
            keep[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        for p in &lexicon.synsets[i].hypernym_ids {
            let pi = lexicon.index[p];
            if !keep[pi] {
                keep[pi] = true;
                stack.push(pi);
            }
        }
    }
    let nodes = lexicon
        .synsets
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s.clone())
        .collect();
    Ok(Hierarchy::build(nodes))
}
