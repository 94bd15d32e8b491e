//! Pooled subword representations of mentions and entities.
//!
//! Every mention–entity pair is described by four vectors:
//!
//! * `m_s`: the mention's containing sentence is encoded and the subwords
//!   overlapping the mention span are max-pooled;
//! * `e_s`: the entity name, encoded on its own and max-pooled;
//! * `m_c`: a window of sentences around the mention, grown alternately
//!   after/before while it fits in the subword limit, max-pooled;
//! * `e_c`: the first `subword_limit` subwords of the entity description,
//!   max-pooled (zero vector for an empty description).

mod cache;
mod stub;

pub use cache::{content_key, decode_vector, encode_vector, RepCache};
pub use stub::{block_orthogonal, random_orthogonal, Matrix, StubEncoder};

use std::sync::Arc;

use crate::corpus::{Document, Mention};
use crate::error::{Error, Result};
use crate::kb::{Entity, KnowledgeBase};

pub const DEFAULT_SUBWORD_LIMIT: usize = 512;
pub const DEFAULT_DIM: usize = 768;

/// A subword with half-open character offsets into the tokenized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subword {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Subword {
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

/// A subword encoder producing one `dim()`-sized vector per subword.
///
/// Implementations must be deterministic for fixed weights and return exactly
/// one vector per input subword.
pub trait EncoderAdapter: Send + Sync {
    fn dim(&self) -> usize;
    fn subword_limit(&self) -> usize;
    /// Identifies the weights and preprocessing; used to key caches.
    fn fingerprint(&self) -> String;
    fn tokenize(&self, text: &str, language: &str) -> Vec<Subword>;
    fn encode(&self, subwords: &[Subword], language: &str) -> Vec<Vec<f32>>;
}

/// Component-wise max over `vectors`; `None` when there are none.
pub fn max_pool<'a>(vectors: impl IntoIterator<Item = &'a [f32]>) -> Option<Vec<f32>> {
    let mut iter = vectors.into_iter();
    let mut acc = iter.next()?.to_vec();
    for v in iter {
        for (a, &x) in acc.iter_mut().zip(v) {
            if x > *a {
                *a = x;
            }
        }
    }
    Some(acc)
}

fn encode_checked<E: EncoderAdapter + ?Sized>(enc: &E, subwords: &[Subword], language: &str) -> Result<Vec<Vec<f32>>> {
    let out = enc.encode(subwords, language);
    if out.len() != subwords.len() {
        return Err(Error::DimMismatch { what: "encoder output count", expected: subwords.len(), found: out.len() });
    }
    if let Some(v) = out.iter().find(|v| v.len() != enc.dim()) {
        return Err(Error::DimMismatch { what: "encoder output width", expected: enc.dim(), found: v.len() });
    }
    Ok(out)
}

fn sentence<'a>(doc: &'a Document, mention: &Mention) -> Result<&'a str> {
    doc.sentences.get(mention.sentence_index).map(String::as_str).ok_or_else(|| Error::InvalidMention {
        mention_id: mention.id.clone(),
        message: format!("sentence index {} out of range", mention.sentence_index),
    })
}

pub fn mention_string_rep<E: EncoderAdapter + ?Sized>(enc: &E, doc: &Document, mention: &Mention) -> Result<Vec<f32>> {
    let text = sentence(doc, mention)?;
    let mut subs = enc.tokenize(text, &doc.language);
    subs.truncate(enc.subword_limit());
    let vecs = encode_checked(enc, &subs, &doc.language)?;
    let pooled = subs.iter().zip(&vecs).filter(|(s, _)| s.overlaps(mention.start, mention.end)).map(|(_, v)| v.as_slice());
    max_pool(pooled).ok_or_else(|| Error::Alignment(mention.id.clone()))
}

/// Indices `lo..=hi` of the sentences forming the context window, and whether
/// the mention sentence alone had to be truncated.
pub fn context_window(counts: &[usize], center: usize, limit: usize) -> (usize, usize, bool) {
    if counts[center] > limit {
        return (center, center, true);
    }
    let (mut lo, mut hi) = (center, center);
    let mut total = counts[center];
    let mut prefer_after = true;
    loop {
        let after = hi + 1 < counts.len();
        let before = lo > 0;
        let take_after = match (after, before) {
            (false, false) => break,
            (true, false) => true,
            (false, true) => false,
            (true, true) => prefer_after,
        };
        let next = if take_after { counts[hi + 1] } else { counts[lo - 1] };
        if total + next > limit {
            break;
        }
        total += next;
        if take_after {
            hi += 1;
        } else {
            lo -= 1;
        }
        prefer_after = !take_after;
    }
    (lo, hi, false)
}

/// Subwords of the context window around the mention, in document order.
pub fn context_subwords<E: EncoderAdapter + ?Sized>(enc: &E, doc: &Document, mention: &Mention) -> Result<Vec<Subword>> {
    sentence(doc, mention)?;
    let per_sentence: Vec<Vec<Subword>> = doc.sentences.iter().map(|s| enc.tokenize(s, &doc.language)).collect();
    let counts: Vec<usize> = per_sentence.iter().map(Vec::len).collect();
    let limit = enc.subword_limit();
    let (lo, hi, truncated) = context_window(&counts, mention.sentence_index, limit);
    let mut subs: Vec<Subword> = per_sentence[lo..=hi].iter().flatten().cloned().collect();
    if truncated {
        subs.truncate(limit);
    }
    Ok(subs)
}

pub fn mention_context_rep<E: EncoderAdapter + ?Sized>(enc: &E, doc: &Document, mention: &Mention) -> Result<Vec<f32>> {
    let subs = context_subwords(enc, doc, mention)?;
    let vecs = encode_checked(enc, &subs, &doc.language)?;
    max_pool(vecs.iter().map(Vec::as_slice)).ok_or_else(|| Error::Alignment(mention.id.clone()))
}

/// Max-pools the first `subword_limit` subwords of `text` encoded on its own.
/// `None` when the text has no subwords.
pub fn standalone_rep<E: EncoderAdapter + ?Sized>(enc: &E, text: &str, language: &str) -> Result<Option<Vec<f32>>> {
    let mut subs = enc.tokenize(text, language);
    subs.truncate(enc.subword_limit());
    let vecs = encode_checked(enc, &subs, language)?;
    Ok(max_pool(vecs.iter().map(Vec::as_slice)))
}

pub fn entity_name_rep<E: EncoderAdapter + ?Sized>(enc: &E, entity: &Entity) -> Result<Vec<f32>> {
    if entity.name.is_empty() {
        return Err(Error::Invalid(format!("entity `{}` has an empty name", entity.id)));
    }
    standalone_rep(enc, &entity.name, &entity.language)?
        .ok_or_else(|| Error::Invalid(format!("entity `{}` name has no subwords", entity.id)))
}

pub fn entity_context_rep<E: EncoderAdapter + ?Sized>(enc: &E, entity: &Entity) -> Result<Vec<f32>> {
    Ok(standalone_rep(enc, &entity.description, &entity.language)?.unwrap_or_else(|| vec![0.0; enc.dim()]))
}

/// Representations of one mention–entity pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationBundle {
    pub m_s: Arc<[f32]>,
    pub e_s: Arc<[f32]>,
    pub m_c: Arc<[f32]>,
    pub e_c: Arc<[f32]>,
    pub popularity: f64,
}

impl RepresentationBundle {
    pub fn new(m_s: Vec<f32>, e_s: Vec<f32>, m_c: Vec<f32>, e_c: Vec<f32>, popularity: f64) -> Self {
        RepresentationBundle { m_s: m_s.into(), e_s: e_s.into(), m_c: m_c.into(), e_c: e_c.into(), popularity }
    }

    pub fn dim(&self) -> usize {
        self.m_s.len()
    }

    pub fn with_popularity(&self, popularity: f64) -> Self {
        RepresentationBundle { popularity, ..self.clone() }
    }

    pub fn is_finite(&self) -> bool {
        [&self.m_s, &self.e_s, &self.m_c, &self.e_c].iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.popularity.is_finite()
            && self.popularity >= 0.0
    }
}

/// Mention-side half of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionReps {
    pub m_s: Arc<[f32]>,
    pub m_c: Arc<[f32]>,
}

/// Entity-side half of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityReps {
    pub e_s: Arc<[f32]>,
    pub e_c: Arc<[f32]>,
    pub popularity: f64,
}

pub fn combine(m: &MentionReps, e: &EntityReps) -> RepresentationBundle {
    RepresentationBundle {
        m_s: m.m_s.clone(),
        e_s: e.e_s.clone(),
        m_c: m.m_c.clone(),
        e_c: e.e_c.clone(),
        popularity: e.popularity,
    }
}

/// Cached mention representations, keyed by content.
pub fn cached_mention_reps<E: EncoderAdapter + ?Sized>(
    enc: &E,
    cache: &RepCache,
    doc: &Document,
    mention: &Mention,
) -> Result<MentionReps> {
    let sent = sentence(doc, mention)?;
    let (start, end) = (mention.start.to_string(), mention.end.to_string());
    let ms_key = cache.key("ms", &[&doc.language, sent, &start, &end]);
    let m_s = cache.get_or_compute(&ms_key, || mention_string_rep(enc, doc, mention))?;
    let mut parts: Vec<&str> = vec![&doc.language];
    let idx = mention.sentence_index.to_string();
    parts.push(&idx);
    parts.extend(doc.sentences.iter().map(String::as_str));
    let mc_key = cache.key("mc", &parts);
    let m_c = cache.get_or_compute(&mc_key, || mention_context_rep(enc, doc, mention))?;
    Ok(MentionReps { m_s, m_c })
}

/// Cached entity representations plus the KB popularity score.
pub fn cached_entity_reps<E: EncoderAdapter + ?Sized>(
    enc: &E,
    cache: &RepCache,
    kb: &KnowledgeBase,
    entity_id: &str,
) -> Result<EntityReps> {
    let entity = kb.entity(entity_id)?;
    let es_key = cache.key("es", &[&entity.language, &entity.name]);
    let e_s = cache.get_or_compute(&es_key, || entity_name_rep(enc, entity))?;
    let ec_key = cache.key("ec", &[&entity.language, &entity.description]);
    let e_c = cache.get_or_compute(&ec_key, || entity_context_rep(enc, entity))?;
    Ok(EntityReps { e_s, e_c, popularity: kb.popularity_score(entity_id)? })
}

/// Cached standalone text representation (adversarial pool items).
pub fn cached_text_rep<E: EncoderAdapter + ?Sized>(enc: &E, cache: &RepCache, text: &str, language: &str) -> Result<Arc<[f32]>> {
    let key = cache.key("tx", &[language, text]);
    cache.get_or_compute(&key, || {
        standalone_rep(enc, text, language)?.ok_or_else(|| Error::Invalid(format!("text `{text}` has no subwords")))
    })
}

pub fn build_bundle<E: EncoderAdapter + ?Sized>(
    enc: &E,
    cache: &RepCache,
    kb: &KnowledgeBase,
    doc: &Document,
    mention: &Mention,
    entity_id: &str,
) -> Result<RepresentationBundle> {
    let e = cached_entity_reps(enc, cache, kb, entity_id)?;
    let m = cached_mention_reps(enc, cache, doc, mention)?;
    Ok(combine(&m, &e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Link;
    use proptest::prelude::*;

    /// Encoder with a fixed lookup table; unknown subwords map to zeros.
    struct TableEncoder {
        table: Vec<(&'static str, Vec<f32>)>,
        limit: usize,
    }

    impl EncoderAdapter for TableEncoder {
        fn dim(&self) -> usize {
            self.table[0].1.len()
        }
        fn subword_limit(&self) -> usize {
            self.limit
        }
        fn fingerprint(&self) -> String {
            "table".into()
        }
        fn tokenize(&self, text: &str, _: &str) -> Vec<Subword> {
            let mut out = Vec::new();
            let mut pos = 0;
            for w in text.split(' ') {
                let n = w.chars().count();
                if n > 0 {
                    out.push(Subword { text: w.into(), start: pos, end: pos + n });
                }
                pos += n + 1;
            }
            out
        }
        fn encode(&self, subwords: &[Subword], _: &str) -> Vec<Vec<f32>> {
            subwords
                .iter()
                .map(|s| {
                    self.table.iter().find(|(k, _)| *k == s.text).map(|(_, v)| v.clone()).unwrap_or_else(|| vec![0.0; self.dim()])
                })
                .collect()
        }
    }

    fn table() -> TableEncoder {
        TableEncoder {
            table: vec![
                ("Senado", vec![1.0, -2.0]),
                ("Alto", vec![0.0, 3.0]),
                ("de", vec![2.0, 0.0]),
                ("Arizona", vec![0.0, 2.0]),
                ("el", vec![-1.0, -1.0]),
            ],
            limit: 512,
        }
    }

    fn doc(sentences: &[&str]) -> Document {
        Document { id: "d".into(), language: "es".into(), sentences: sentences.iter().map(|s| s.to_string()).collect() }
    }

    fn mention(si: usize, start: usize, end: usize, surface: &str) -> Mention {
        Mention {
            id: "m".into(),
            doc_id: "d".into(),
            sentence_index: si,
            start,
            end,
            surface: surface.into(),
            gold: Link::Nil,
            mention_type: None,
            language: "es".into(),
            original_gold: None,
        }
    }

    fn entity(name: &str, description: &str) -> Entity {
        Entity {
            id: "e".into(),
            language: "es".into(),
            name: name.into(),
            description: description.into(),
            wiki_title: None,
            outlinks: Default::default(),
        }
    }

    #[test]
    fn mention_pools_only_its_subwords() {
        let enc = table();
        let d = doc(&["el Senado Alto de"]);
        let v = mention_string_rep(&enc, &d, &mention(0, 3, 14, "Senado Alto")).unwrap();
        assert_eq!(v, vec![1.0, 3.0]);
        let single = mention_string_rep(&enc, &d, &mention(0, 3, 9, "Senado")).unwrap();
        assert_eq!(single, vec![1.0, -2.0]);
        assert_eq!(single, mention_string_rep(&enc, &d, &mention(0, 3, 9, "Senado")).unwrap());
    }

    #[test]
    fn mention_in_whitespace_gap_fails_alignment() {
        let enc = table();
        let d = doc(&["el  Senado"]);
        let r = mention_string_rep(&enc, &d, &mention(0, 2, 3, " "));
        assert!(matches!(r, Err(Error::Alignment(id)) if id == "m"));
    }

    #[test]
    fn entity_name_pools_all() {
        let enc = table();
        assert_eq!(entity_name_rep(&enc, &entity("de Arizona", "")).unwrap(), vec![2.0, 2.0]);
        assert_eq!(entity_name_rep(&enc, &entity("Senado", "")).unwrap(), vec![1.0, -2.0]);
        assert!(entity_name_rep(&enc, &entity("", "")).is_err());
    }

    #[test]
    fn entity_context_truncates_and_zero_fills() {
        let enc = StubEncoder::new(6, 3).with_subword_limit(512);
        let long: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let e = entity("x", &long.join(" "));
        let got = entity_context_rep(&enc, &e).unwrap();
        let subs = enc.tokenize(&e.description, "es");
        assert_eq!(subs.len(), 600);
        let vecs = enc.encode(&subs[..512], "es");
        assert_eq!(got, max_pool(vecs.iter().map(Vec::as_slice)).unwrap());

        assert_eq!(entity_context_rep(&enc, &entity("x", "")).unwrap(), vec![0.0; 6]);

        let short = entity("x", "a b c");
        let vecs = enc.encode(&enc.tokenize("a b c", "es"), "es");
        assert_eq!(vecs.len(), 3);
        assert_eq!(entity_context_rep(&enc, &short).unwrap(), max_pool(vecs.iter().map(Vec::as_slice)).unwrap());
    }

    #[test]
    fn window_rules() {
        assert_eq!(context_window(&[10], 0, 512), (0, 0, false));
        assert_eq!(context_window(&[300, 300, 300], 1, 512), (1, 1, false));
        assert_eq!(context_window(&[8], 0, 5), (0, 0, true));
        // after first, then before, then after
        assert_eq!(context_window(&[1, 1, 1, 1, 1], 2, 3), (1, 3, false));
        assert_eq!(context_window(&[1, 1, 1, 1, 1], 2, 2), (2, 3, false));
        // exhausted side falls through to the other
        assert_eq!(context_window(&[1, 1, 1, 1], 3, 3), (1, 3, false));
        // stops at the first addition that would overflow
        assert_eq!(context_window(&[1, 1, 5, 1], 1, 4), (1, 1, false));
    }

    #[test]
    fn context_truncates_long_sentence() {
        let enc = table();
        let enc = TableEncoder { limit: 5, ..enc };
        let d = doc(&["el Senado de Alto el de Alto el", "Arizona"]);
        let subs = context_subwords(&enc, &d, &mention(0, 3, 9, "Senado")).unwrap();
        assert_eq!(subs.len(), 5);
        let v = mention_context_rep(&enc, &d, &mention(0, 3, 9, "Senado")).unwrap();
        // first five: el Senado de Alto el
        assert_eq!(v, vec![2.0, 3.0]);
    }

    #[test]
    fn bundle_is_cached_and_complete() {
        let enc = StubEncoder::new(8, 5);
        let kb =
            KnowledgeBase::from_entities(vec![entity("Senado de la República", "El Senado de los Estados Unidos Mexicanos")])
                .unwrap();
        let d = doc(&["Lo acompañan el presidente del Senado.", "Otra frase."]);
        let m = mention(0, 31, 37, "Senado");
        let cache = RepCache::in_memory(enc.fingerprint());
        let a = build_bundle(&enc, &cache, &kb, &d, &m, "e").unwrap();
        assert!(a.is_finite());
        assert_eq!(a.dim(), 8);
        let b = build_bundle(&enc, &cache, &kb, &d, &m, "e").unwrap();
        assert!(Arc::ptr_eq(&a.m_s, &b.m_s));
        assert_eq!(a, b);
        assert!(matches!(build_bundle(&enc, &cache, &kb, &d, &m, "zz"), Err(Error::NotFound { .. })));
    }

    proptest! {
        #[test]
        fn max_pool_matches_brute_force(vs in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 5), 1..10)) {
            let pooled = max_pool(vs.iter().map(Vec::as_slice)).unwrap();
            for j in 0..5 {
                let mut best = f32::NEG_INFINITY;
                for v in &vs {
                    if v[j] > best { best = v[j]; }
                }
                prop_assert_eq!(pooled[j], best);
            }
        }

        #[test]
        fn context_window_within_limit_and_contains_center(
            counts in prop::collection::vec(1usize..20, 1..12),
            center in any::<prop::sample::Index>(),
            limit in 1usize..60,
        ) {
            let c = center.index(counts.len());
            let (lo, hi, truncated) = context_window(&counts, c, limit);
            prop_assert!(lo <= c && c <= hi);
            let total: usize = counts[lo..=hi].iter().sum();
            if truncated {
                prop_assert_eq!((lo, hi), (c, c));
                prop_assert!(counts[c] > limit);
            } else {
                prop_assert!(total <= limit);
            }
        }
    }
}
