//! Token-level inverted index over entity names and wiki titles.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::KnowledgeBase;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"PLIDX1";

/// Lowercased alphanumeric runs. Underscores in wiki titles act as separators.
pub fn index_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InvertedIndex {
    /// Entity ids in ascending order; postings refer to positions in this list.
    ids: Vec<String>,
    postings: BTreeMap<String, Vec<u32>>,
}

impl InvertedIndex {
    pub fn build(kb: &KnowledgeBase) -> Self {
        let ids: Vec<String> = kb.ids().map(str::to_string).collect();
        let mut postings: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
        for (idx, entity) in kb.entities().enumerate() {
            let mut tokens = index_tokens(&entity.name);
            if let Some(title) = &entity.wiki_title {
                tokens.extend(index_tokens(title));
            }
            for t in tokens {
                postings.entry(t).or_default().insert(idx as u32);
            }
        }
        InvertedIndex { ids, postings: postings.into_iter().map(|(t, p)| (t, p.into_iter().collect())).collect() }
    }

    pub fn num_entities(&self) -> usize {
        self.ids.len()
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    fn idf(&self, df: usize) -> f64 {
        (1.0 + self.ids.len() as f64 / df as f64).ln()
    }

    /// Entities sharing at least one token with `text`, ranked by summed idf
    /// of the shared tokens; ties by ascending id. At most `limit` ids.
    pub fn query(&self, text: &str, limit: usize) -> Vec<String> {
        self.query_scored(text, limit).into_iter().map(|(id, _)| id).collect()
    }

    pub fn query_scored(&self, text: &str, limit: usize) -> Vec<(String, f64)> {
        let terms: BTreeSet<String> = index_tokens(text).into_iter().collect();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            if let Some(post) = self.postings.get(term) {
                let w = self.idf(post.len());
                for &idx in post {
                    *scores.entry(idx).or_insert(0.0) += w;
                }
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(limit);
        ranked.into_iter().map(|(idx, s)| (self.ids[idx as usize].clone(), s)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.ids.len() as u32);
        for id in &self.ids {
            put_str(&mut out, id);
        }
        put_u32(&mut out, self.postings.len() as u32);
        for (term, post) in &self.postings {
            put_str(&mut out, term);
            put_u32(&mut out, post.len() as u32);
            for &p in post {
                put_u32(&mut out, p);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let n_ids = r.u32()? as usize;
        let mut ids = Vec::with_capacity(n_ids.min(1 << 20));
        for _ in 0..n_ids {
            ids.push(r.string()?);
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::IndexFormat("entity ids not sorted".into()));
        }
        let n_terms = r.u32()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = r.string()?;
            let n = r.u32()? as usize;
            let mut post = Vec::with_capacity(n.min(n_ids));
            for _ in 0..n {
                let p = r.u32()?;
                if p as usize >= n_ids {
                    return Err(Error::IndexFormat(format!("posting {p} out of range")));
                }
                post.push(p);
            }
            if post.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::IndexFormat(format!("postings for `{term}` not sorted")));
            }
            postings.insert(term, post);
        }
        if r.pos != bytes.len() {
            return Err(Error::IndexFormat("trailing bytes".into()));
        }
        Ok(InvertedIndex { ids, postings })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::IndexFormat("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::IndexFormat("invalid UTF-8".into()))
    }
}
