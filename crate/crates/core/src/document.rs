//! Documents, vocabularies, context-window inputs and document splitting.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::SentenceMap;
use crate::error::{Error, Result};

pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";
pub const BOD: &str = "<bod>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

pub const RESERVED: [&str; 5] = [PAD, UNK, SEP, EOS, BOD];

pub type TokenId = usize;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const SEP_ID: TokenId = 2;
pub const EOS_ID: TokenId = 3;
pub const BOD_ID: TokenId = 4;

pub fn is_reserved(token: &str) -> bool {
    RESERVED.contains(&token)
}

/// A document of tokenized sentences; the target side is optional at
/// test time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub src: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt: Option<Vec<Vec<String>>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, src: Vec<Vec<String>>, tgt: Option<Vec<Vec<String>>>) -> Result<Self> {
        let doc = Self {
            doc_id: doc_id.into(),
            src,
            tgt,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(tgt) = &self.tgt {
            if tgt.len() != self.src.len() {
                return Err(Error::InvalidArgument(format!(
                    "document {}: {} source vs {} target sentences",
                    self.doc_id,
                    self.src.len(),
                    tgt.len()
                )));
            }
        }
        let sides = std::iter::once(&self.src).chain(self.tgt.as_ref());
        for side in sides {
            for sentence in side {
                if let Some(t) = sentence.iter().find(|t| is_reserved(t)) {
                    return Err(Error::InvalidArgument(format!(
                        "document {} contains reserved token {t}",
                        self.doc_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn target(&self) -> Result<&[Vec<String>]> {
        self.tgt
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("document {} has no target side", self.doc_id)))
    }

    pub fn target_tokens(&self) -> usize {
        self.tgt.as_ref().map_or(0, |t| t.iter().map(Vec::len).sum())
    }
}

/// Parses a whitespace-tokenized sentence.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    reserved: HashMap<String, TokenId>,
}

/// Joint source/target vocabulary with fixed reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let extra: BTreeSet<String> = words.into_iter().map(Into::into).filter(|w| !is_reserved(w)).collect();
        tokens.extend(extra);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Vocabulary over every token of both sides of a corpus.
    pub fn build(docs: &[Document]) -> Self {
        let words = docs
            .iter()
            .flat_map(|d| d.src.iter().chain(d.tgt.iter().flatten()).flatten().cloned());
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> TokenId {
        PAD_ID
    }

    pub fn unk(&self) -> TokenId {
        UNK_ID
    }

    pub fn sep(&self) -> TokenId {
        SEP_ID
    }

    pub fn eos(&self) -> TokenId {
        EOS_ID
    }

    pub fn bod(&self) -> TokenId {
        BOD_ID
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(self.unk())
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> Result<String> {
        let reserved = RESERVED
            .iter()
            .map(|r| (r.trim_matches(['<', '>']).to_string(), self.id(r)))
            .collect();
        Ok(serde_json::to_string_pretty(&VocabFile {
            tokens: self.tokens.clone(),
            reserved,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        for (i, r) in RESERVED.iter().enumerate() {
            let name = r.trim_matches(['<', '>']);
            if file.reserved.get(name) != Some(&i) {
                return Err(Error::InvalidArgument(format!(
                    "vocab file must reserve id {i} for {r}"
                )));
            }
        }
        Self::from_tokens(file.tokens)
    }

    /// Vocabulary with the given id order; the reserved tokens must come
    /// first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::InvalidArgument(format!("vocab must reserve id {i} for {r}")));
            }
        }
        let index: HashMap<String, TokenId> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::InvalidArgument("duplicate vocab entries".into()));
        }
        Ok(Self { tokens, index })
    }
}

/// Encoder input and forced target prefix for one sentence with context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextInput {
    /// `F_{n-k} <sep> … <sep> F_n <eos>`
    pub source: Vec<String>,
    /// `E_{n-k} <sep> … <sep> E_{n-1} <sep>`; empty when `k = 0`.
    pub prefix: Vec<String>,
    /// Lengths of the source sentences making up `source`, without
    /// separators.
    pub source_sentence_lengths: Vec<usize>,
}

fn sentence_or_bod(side: &[Vec<String>], m: usize) -> Vec<String> {
    if m == 0 {
        vec![BOD.to_string()]
    } else {
        side[m - 1].clone()
    }
}

/// Concatenates sentence `n` (1-based) with its `k` predecessors.
///
/// When the context reaches before the first sentence, `<bod>` stands in
/// for `F_0`/`E_0` on both sides.
pub fn build_context_input(doc: &Document, n: usize, k: usize) -> Result<ContextInput> {
    if n == 0 || n > doc.len() {
        return Err(Error::InvalidArgument(format!(
            "sentence {n} outside document {} of {} sentences",
            doc.doc_id,
            doc.len()
        )));
    }
    let first = n.saturating_sub(k);
    let mut source = Vec::new();
    let mut lengths = Vec::new();
    for m in first..=n {
        let s = sentence_or_bod(&doc.src, m);
        lengths.push(s.len());
        source.extend(s);
        source.push(if m == n { EOS } else { SEP }.to_string());
    }
    let mut prefix = Vec::new();
    if k > 0 {
        let tgt = doc.target()?;
        for m in first..n {
            prefix.extend(sentence_or_bod(tgt, m));
            prefix.push(SEP.to_string());
        }
    }
    Ok(ContextInput {
        source,
        prefix,
        source_sentence_lengths: lengths,
    })
}

/// `s(i)`: 1-based sentence index per position. The separator belongs to
/// the sentence it closes.
pub fn sentence_map<T: PartialEq>(sequence: &[T], separator: &T) -> SentenceMap {
    let mut current = 1;
    let mut out = Vec::with_capacity(sequence.len());
    for tok in sequence {
        out.push(current);
        if tok == separator {
            current += 1;
        }
    }
    SentenceMap::new(out).expect("non-decreasing by construction")
}

/// A sentence that alone exceeds the split limit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SplitWarning {
    pub doc_id: String,
    pub sentence: usize,
    pub tokens: usize,
}

/// Splits a parallel document at sentence boundaries into parts of
/// roughly equal target length, none above the limit unless a single
/// sentence is longer.
pub fn split_document(doc: &Document, max_target_tokens: usize) -> Result<(Vec<Document>, Vec<SplitWarning>)> {
    if max_target_tokens == 0 {
        return Err(Error::InvalidArgument("split limit must be positive".into()));
    }
    let tgt = doc.target()?;
    let lens: Vec<usize> = tgt.iter().map(Vec::len).collect();
    let total: usize = lens.iter().sum();
    let warnings: Vec<SplitWarning> = lens
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > max_target_tokens)
        .map(|(i, &l)| {
            log::warn!(
                "document {}: sentence {} has {l} target tokens, above the split limit {max_target_tokens}",
                doc.doc_id,
                i + 1
            );
            SplitWarning {
                doc_id: doc.doc_id.clone(),
                sentence: i + 1,
                tokens: l,
            }
        })
        .collect();
    if total <= max_target_tokens || doc.len() <= 1 {
        return Ok((vec![doc.clone()], warnings));
    }
    // oversized sentences become parts of their own; each run between
    // them is balanced on its own share of the limit
    let mut cuts = vec![0];
    let mut run_start = 0;
    for i in 0..=lens.len() {
        let oversized = i < lens.len() && lens[i] > max_target_tokens;
        if i < lens.len() && !oversized {
            continue;
        }
        if i > run_start {
            let run = &lens[run_start..i];
            let run_total: usize = run.iter().sum();
            let parts = run_total.div_ceil(max_target_tokens).clamp(1, run.len());
            cuts.extend(balanced_cuts(run, parts)[1..].iter().map(|c| c + run_start));
        }
        if oversized {
            cuts.push(i + 1);
        }
        run_start = i + 1;
    }
    let tgt_side = tgt.to_vec();
    let docs = cuts
        .windows(2)
        .enumerate()
        .map(|(p, w)| Document {
            doc_id: format!("{}#{}", doc.doc_id, p + 1),
            src: doc.src[w[0]..w[1]].to_vec(),
            tgt: Some(tgt_side[w[0]..w[1]].to_vec()),
        })
        .collect();
    Ok((docs, warnings))
}

/// Sentence boundaries `0 = c_0 < c_1 < … < c_parts = N`, each cut placed
/// at the boundary whose cumulative length is closest to its equal share.
fn balanced_cuts(lens: &[usize], parts: usize) -> Vec<usize> {
    let n = lens.len();
    let total: usize = lens.iter().sum();
    let mut prefix = vec![0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + lens[i];
    }
    let mut cuts = vec![0];
    for p in 1..parts {
        let ideal = total as f64 * p as f64 / parts as f64;
        let lo = cuts[p - 1] + 1;
        let hi = n - (parts - p);
        let best = (lo..=hi)
            .min_by(|&a, &b| {
                let da = (prefix[a] as f64 - ideal).abs();
                let db = (prefix[b] as f64 - ideal).abs();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .unwrap_or(lo);
        cuts.push(best);
    }
    cuts.push(n);
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn doc(src: &[&str], tgt: &[&str]) -> Document {
        Document::new(
            "d",
            src.iter().map(|s| toks(s)).collect(),
            Some(tgt.iter().map(|s| toks(s)).collect()),
        )
        .unwrap()
    }

    fn sized(lens: &[usize]) -> Document {
        let src: Vec<Vec<String>> = lens.iter().map(|&l| vec!["x".to_string(); l]).collect();
        Document::new("d", src.clone(), Some(src)).unwrap()
    }

    #[test]
    fn sentence_level_input() {
        let d = doc(&["a b", "c", "d e"], &["A B", "C", "D E"]);
        for n in 1..=3 {
            let ci = build_context_input(&d, n, 0).unwrap();
            let mut expect = d.src[n - 1].clone();
            expect.push(EOS.into());
            assert_eq!(ci.source, expect);
            assert!(ci.prefix.is_empty());
        }
    }

    #[test]
    fn context_at_document_start_uses_bod() {
        let d = doc(&["a b", "c"], &["A B", "C"]);
        let ci = build_context_input(&d, 1, 2).unwrap();
        assert_eq!(ci.source, toks("<bod> <sep> a b <eos>"));
        assert_eq!(ci.prefix, toks("<bod> <sep>"));
        assert_eq!(ci.source_sentence_lengths, vec![1, 2]);
    }

    #[test]
    fn one_sentence_of_context() {
        let d = doc(&["a", "b c", "d"], &["A", "B C", "D"]);
        let ci = build_context_input(&d, 3, 1).unwrap();
        assert_eq!(ci.source, toks("b c <sep> d <eos>"));
        assert_eq!(ci.prefix, toks("B C <sep>"));
    }

    #[test]
    fn out_of_range_sentence() {
        let d = doc(&["a"], &["A"]);
        assert!(build_context_input(&d, 0, 1).is_err());
        assert!(build_context_input(&d, 2, 1).is_err());
    }

    #[test]
    fn reserved_tokens_are_rejected() {
        assert!(Document::new("x", vec![toks("a <sep>")], None).is_err());
        assert!(Document::new("x", vec![toks("a")], Some(vec![])).is_err());
    }

    #[test]
    fn sentence_map_examples() {
        assert_eq!(
            sentence_map(&toks("a b <eos>"), &SEP.to_string()).as_slice(),
            &[1, 1, 1]
        );
        assert_eq!(
            sentence_map(&toks("a <sep> b c <eos>"), &SEP.to_string()).as_slice(),
            &[1, 1, 2, 2, 2]
        );
    }

    #[test]
    fn short_document_is_not_split() {
        let d = sized(&[200, 300, 300]);
        let (parts, warnings) = split_document(&d, 1000).unwrap();
        assert_eq!(parts, vec![d]);
        assert!(warnings.is_empty());
    }

    #[test]
    fn fifteen_hundred_tokens_split_in_halves() {
        let d = sized(&[150; 10]);
        let (parts, _) = split_document(&d, 1000).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].target_tokens(), 750);
        assert_eq!(parts[1].target_tokens(), 750);
    }

    #[test]
    fn three_thousand_tokens_split_in_thirds() {
        let d = sized(&[300; 10]);
        let (parts, _) = split_document(&d, 1000).unwrap();
        assert_eq!(parts.len(), 3);
        let total: usize = parts.iter().map(Document::target_tokens).sum();
        assert_eq!(total, 3000);
        for p in &parts {
            let t = p.target_tokens();
            assert!((700..=1300).contains(&t), "{t}");
        }
        // a three-way split of ten equal sentences cannot stay under 1000
        assert!(parts.iter().any(|p| p.target_tokens() > 1000));
        // concatenation reproduces the document
        let src: Vec<Vec<String>> = parts.iter().flat_map(|p| p.src.clone()).collect();
        assert_eq!(src, d.src);
    }

    #[test]
    fn oversized_sentence_is_its_own_part() {
        let d = sized(&[100, 1200, 100]);
        let (parts, warnings) = split_document(&d, 1000).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].sentence, 2);
        let sizes: Vec<usize> = parts.iter().map(Document::target_tokens).collect();
        assert_eq!(sizes, vec![100, 1200, 100]);
    }

    #[test]
    fn tie_prefers_the_earlier_boundary() {
        let d = sized(&[400; 5]);
        let (parts, _) = split_document(&d, 1000).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Document::target_tokens).collect();
        assert_eq!(sizes, vec![800, 1200]);
    }

    #[test]
    fn vocab_reserved_ids_survive_round_trip() {
        let d = doc(&["a b"], &["c"]);
        let v = Vocab::build(&[d]);
        assert_eq!(v.len(), 8);
        assert_eq!(v.id(SEP), v.sep());
        assert_eq!(v.id("zzz"), v.unk());
        let back = Vocab::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back, v);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_doc() -> impl Strategy<Value = Document> {
            proptest::collection::vec(
                (
                    proptest::collection::vec("[a-z]{1,3}", 1..5),
                    proptest::collection::vec("[a-z]{1,3}", 1..5),
                ),
                1..6,
            )
            .prop_map(|pairs| {
                let (src, tgt) = pairs.into_iter().unzip();
                Document::new("p", src, Some(tgt)).unwrap()
            })
        }

        proptest! {
            #[test]
            fn corpus_jsonl_round_trip(docs in proptest::collection::vec(arb_doc(), 0..4)) {
                let dir = std::env::temp_dir().join(format!("docwin-rt-{}", std::process::id()));
                std::fs::create_dir_all(&dir).unwrap();
                let path = dir.join("c.jsonl");
                write_corpus(&path, &docs).unwrap();
                prop_assert_eq!(read_corpus(&path).unwrap(), docs);
            }

            #[test]
            fn context_input_shape(d in arb_doc(), k in 0usize..4) {
                for n in 1..=d.len() {
                    let ci = build_context_input(&d, n, k).unwrap();
                    prop_assert_eq!(ci.source.last().map(String::as_str), Some(EOS));
                    prop_assert_eq!(ci.prefix.last().map(String::as_str) == Some(SEP), k >= 1);
                }
            }

            #[test]
            fn split_parts_are_balanced(lens in proptest::collection::vec(1usize..40, 1..30), max in 5usize..80) {
                let d = sized(&lens);
                let (parts, _) = split_document(&d, max).unwrap();
                let longest = *lens.iter().max().unwrap();
                let total: usize = lens.iter().sum();
                let src: Vec<Vec<String>> = parts.iter().flat_map(|p| p.src.clone()).collect();
                prop_assert_eq!(src, d.src.clone());
                if total > max && longest <= max {
                    prop_assert_eq!(parts.len(), total.div_ceil(max).min(lens.len()));
                }
                let share = total.div_ceil(parts.len());
                for p in &parts {
                    prop_assert!(p.target_tokens() <= share + longest);
                }
            }
        }
    }
}
