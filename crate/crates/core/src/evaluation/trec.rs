use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

/// Graded relevance judgments, `qid 0 docid rel` per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse<R: BufRead>(reader: R, source_name: &str) -> Result<Qrels> {
        let mut q = Qrels::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(Error::parse(source_name, i + 1, "expected `qid 0 docid rel`"));
            }
            let rel: u32 = fields[3]
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, format!("bad relevance {:?}", fields[3])))?;
            if !q.insert(fields[0], fields[2], rel) {
                return Err(Error::parse(
                    source_name,
                    i + 1,
                    format!("duplicate judgment for ({}, {})", fields[0], fields[2]),
                ));
            }
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Qrels> {
        let f = std::fs::File::open(path)?;
        Qrels::parse(std::io::BufReader::new(f), &path.display().to_string())
    }

    /// Adds a judgment; returns false if the pair was already judged.
    pub fn insert(&mut self, qid: &str, docid: &str, rel: u32) -> bool {
        let per = self.judgments.entry(qid.to_string()).or_default();
        if per.contains_key(docid) {
            return false;
        }
        per.insert(docid.to_string(), rel);
        true
    }

    pub fn relevance(&self, qid: &str, docid: &str) -> u32 {
        self.judgments
            .get(qid)
            .and_then(|m| m.get(docid))
            .copied()
            .unwrap_or(0)
    }

    pub fn judged(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn num_relevant(&self, qid: &str) -> usize {
        self.judged(qid).map_or(0, |m| m.values().filter(|&&r| r >= 1).count())
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, r) in docs {
                let _ = writeln!(out, "{q} 0 {d} {r}");
            }
        }
        out
    }
}

/// Ranked documents for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub qid: String,
    pub entries: Vec<(String, f64)>,
}

impl QueryRanking {
    /// Sorts by descending score; equal scores by ascending doc id.
    pub fn from_scores(qid: impl Into<String>, mut entries: Vec<(String, f64)>) -> Result<QueryRanking> {
        if let Some((d, s)) = entries.iter().find(|(_, s)| s.is_nan()) {
            return Err(Error::NonFinite(format!("score {s} for document {d}")));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let r = QueryRanking { qid: qid.into(), entries };
        r.validate()?;
        Ok(r)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(d, _)| d.as_str())
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (d, _) in &self.entries {
            if !seen.insert(d.as_str()) {
                return Err(Error::invalid(format!("document {d} ranked twice for query {}", self.qid)));
            }
        }
        if self.entries.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::invalid(format!("scores increase within query {}", self.qid)));
        }
        Ok(())
    }
}

/// A TREC run: rankings in canonical (insertion) query order plus a tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub tag: String,
    pub rankings: Vec<QueryRanking>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            rankings: Vec::new(),
        }
    }

    pub fn push(&mut self, ranking: QueryRanking) -> Result<()> {
        if self.get(&ranking.qid).is_some() {
            return Err(Error::invalid(format!("query {} already in run", ranking.qid)));
        }
        self.rankings.push(ranking);
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&QueryRanking> {
        self.rankings.iter().find(|r| r.qid == qid)
    }

    /// `qid Q0 docid rank score tag`, ranks from 1.
    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for r in &self.rankings {
            for (i, (d, s)) in r.entries.iter().enumerate() {
                let _ = writeln!(out, "{} Q0 {} {} {} {}", r.qid, d, i + 1, s, self.tag);
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_trec())?;
        Ok(())
    }

    /// Parses and validates a run: contiguous ranks from 1, non-increasing
    /// scores, unique documents per query, a single tag.
    pub fn parse<R: BufRead>(reader: R, source_name: &str) -> Result<Run> {
        let mut order: Vec<String> = Vec::new();
        let mut rows: BTreeMap<String, Vec<(usize, String, f64, usize)>> = BTreeMap::new();
        let mut tag: Option<String> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() != 6 {
                return Err(Error::parse(source_name, i + 1, "expected `qid Q0 docid rank score tag`"));
            }
            let rank: usize = f[3]
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, format!("bad rank {:?}", f[3])))?;
            let score: f64 = f[4]
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, format!("bad score {:?}", f[4])))?;
            match &tag {
                Some(t) if t != f[5] => {
                    return Err(Error::parse(source_name, i + 1, format!("mixed tags {t:?} and {:?}", f[5])))
                }
                None => tag = Some(f[5].to_string()),
                _ => {}
            }
            if !rows.contains_key(f[0]) {
                order.push(f[0].to_string());
            }
            rows.entry(f[0].to_string())
                .or_default()
                .push((rank, f[2].to_string(), score, i + 1));
        }
        let mut run = Run::new(tag.unwrap_or_default());
        for qid in order {
            let mut r = rows.remove(&qid).expect("collected");
            r.sort_by_key(|x| x.0);
            for (expect, (rank, _, _, line)) in r.iter().enumerate() {
                if *rank != expect + 1 {
                    return Err(Error::parse(
                        source_name,
                        *line,
                        format!("query {qid}: ranks must run 1..{}", r.len()),
                    ));
                }
            }
            let ranking = QueryRanking {
                qid,
                entries: r.into_iter().map(|(_, d, s, _)| (d, s)).collect(),
            };
            ranking
                .validate()
                .map_err(|e| Error::parse(source_name, 0, e.to_string()))?;
            run.rankings.push(ranking);
        }
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Run> {
        let f = std::fs::File::open(path)?;
        Run::parse(std::io::BufReader::new(f), &path.display().to_string())
    }
}
