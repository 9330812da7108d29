//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use select_rank::autodiff::{gradient_check_against, Graph, ParameterStore, Var};
use select_rank::commands;
use select_rank::config::Config;
use select_rank::evaluation::{
    empirical_cdf, evaluate_run, missing_token_fraction, Gain, Qrels, QueryRanking, Run,
};
use select_rank::experiments::{head_plateau, selection_vs_truncation, PlateauExperiment, SelectionExperiment};
use select_rank::model::SelectAndRank;
use select_rank::ranker::{assemble_input, Coupling, Ranker, RankerConfig, SurrogateOffsets};
use select_rank::sampling::{hard_topk, relaxed_topk, subset_sample_with_uniforms, GumbelKeys};
use select_rank::selectors::{LinearSelector, NeuralSelectorConfig, Summary, TrainableSelector};
use select_rank::synthetic::{SyntheticCollection, SyntheticConfig};
use select_rank::text::{Corpus, CorpusLimits, Document, Query};
use select_rank::training::hinge_graph;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 ----------------------------------------------------------------------

/// P(first two draws form {i, j}) under sampling without replacement.
fn pair_probability(w: &[f64], i: usize, j: usize) -> f64 {
    let total: f64 = w.iter().sum();
    w[i] / total * w[j] / (total - w[i]) + w[j] / total * w[i] / (total - w[j])
}

fn sampler_distribution() -> Outcome {
    let start = Instant::now();
    let w = [1.0, 2.0, 3.0, 4.0];
    let logits: Vec<f64> = w.iter().map(|x: &f64| x.ln()).collect();
    let draws = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for _ in 0..draws {
        let keys = GumbelKeys::sample(&logits, &mut rng);
        let s = hard_topk(&keys.keys, 2).map_err(|e| e.to_string())?;
        *counts.entry((s[0], s[1])).or_default() += 1;
    }
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            let f = counts.get(&(i, j)).copied().unwrap_or(0) as f64 / draws as f64;
            worst = worst.max((f - pair_probability(&w, i, j)).abs());
        }
    }
    let p23 = pair_probability(&w, 2, 3);
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 0.005 && secs < 10.0 && (p23 - 0.3714).abs() < 1e-4,
        format!("max |freq - p| = {worst:.4} (tol 0.005), P({{2,3}}) = {p23:.4}, {secs:.1}s (< 10s)"),
    )
}

// 2 ----------------------------------------------------------------------

fn relaxed_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let k = rng.random_range(1..=n);
        let t = rng.random_range(0.05..5.0);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let keys = GumbelKeys::sample(&logits, &mut rng);
        let r = relaxed_topk(&keys, k, t).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((r.v.iter().sum::<f64>() - k as f64).abs());
    }
    let mut worst_hot: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let k = rng.random_range(1..=n);
        // keys at least 1e-2 apart, in random order
        let mut keys: Vec<f64> = Vec::with_capacity(n);
        let mut at = rng.random_range(-3.0..3.0);
        for _ in 0..n {
            keys.push(at);
            at += rng.random_range(0.01..0.5);
        }
        keys.shuffle(&mut rng);
        let gk = GumbelKeys {
            keys: keys.clone(),
            uniforms: vec![0.5; n],
        };
        let r = relaxed_topk(&gk, k, 1e-4).map_err(|e| e.to_string())?;
        let hot: BTreeSet<usize> = hard_topk(&keys, k).map_err(|e| e.to_string())?.into_iter().collect();
        for (i, v) in r.v.iter().enumerate() {
            let exact = if hot.contains(&i) { 1.0 } else { 0.0 };
            worst_hot = worst_hot.max((v - exact).abs());
        }
    }
    check(
        worst_sum <= 1e-9 && worst_hot <= 1e-6,
        format!("max |sum v - k| = {worst_sum:.2e} (tol 1e-9), max |v - k-hot| at t=1e-4 = {worst_hot:.2e} (tol 1e-6)"),
    )
}

// 3 ----------------------------------------------------------------------

struct E2eFixture {
    corpus: Corpus,
    queries: Vec<Query>,
    selector: LinearSelector,
    ranker: Ranker,
    /// (query index, positive doc, negative doc)
    triples: Vec<(usize, &'static str, &'static str)>,
    uniforms: Vec<Vec<f64>>,
}

fn e2e_fixture(seed: u64) -> (E2eFixture, ParameterStore) {
    let corpus = Corpus::from_texts(
        [
            ("d1", "hot yoga class today. the water is cold. mats are sold here. yoga helps you relax."),
            ("d2", "cold water swimming. a pool opens at noon. bring a towel. hot showers after the swim."),
        ],
        CorpusLimits::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let v = corpus.vocab().len();
    let ranker = Ranker::new(
        &mut store,
        RankerConfig {
            vocab_size: v,
            dim: 8,
            heads: 2,
            layers: 1,
            ff_dim: 12,
            max_len: 32,
            dropout: 0.1,
        },
        &mut rng,
    )
    .unwrap();
    let cfg = NeuralSelectorConfig {
        embed_dim: 8,
        hidden: 6,
        embedding_name: Ranker::EMBEDDING.into(),
        ..Default::default()
    };
    let selector = LinearSelector::new(&mut store, v, &cfg, &mut rng).unwrap();
    let queries = vec![
        Query::new("q1", "hot yoga", corpus.vocab()),
        Query::new("q2", "cold water swimming", corpus.vocab()),
    ];
    let uniforms = (0..4).map(|_| (0..4).map(|_| rng.random_range(0.05..0.95)).collect()).collect();
    (
        E2eFixture {
            corpus,
            queries,
            selector,
            ranker,
            triples: vec![(0, "d1", "d2"), (1, "d2", "d1")],
            uniforms,
        },
        store,
    )
}

/// Mean hinge loss over the fixture's triples; `coupling(slot, v)` picks the
/// coupling for forward pass `slot`.
fn e2e_loss<'a>(
    f: &E2eFixture,
    g: &mut Graph,
    s: &ParameterStore,
    coupling: &dyn Fn(usize, Var) -> Coupling<'a>,
) -> select_rank::Result<Var> {
    let mut total: Option<Var> = None;
    let mut slot = 0;
    for &(qi, pos, neg) in &f.triples {
        let q = &f.queries[qi];
        let mut score = |g: &mut Graph, docid: &str| -> select_rank::Result<Var> {
            let doc = f.corpus.document(docid)?;
            let logits = f.selector.logits(g, s, &q.tokens, doc)?;
            let sample = subset_sample_with_uniforms(g, logits, 2, 1.0, f.uniforms[slot].clone())?;
            let summary = Summary::from_indices(doc, sample.hard.clone(), 2)?;
            let input = assemble_input(&q.tokens, &summary, doc, 32)?;
            let y = f.ranker.forward(g, s, &input, coupling(slot, sample.v), None)?;
            slot += 1;
            Ok(y)
        };
        let sp = score(g, pos)?;
        let sn = score(g, neg)?;
        let l = hinge_graph(g, sp, sn, 0.2)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let t = total.expect("two triples");
    Ok(g.scale(t, 1.0 / f.triples.len() as f64))
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let (f, mut store) = e2e_fixture(3);
    let offsets: Vec<SurrogateOffsets> = (0..4).map(|_| SurrogateOffsets::new()).collect();
    {
        // record the frozen offsets at the base point
        let mut g = Graph::new();
        e2e_loss(&f, &mut g, &store, &|i, v| Coupling::Surrogate(v, &offsets[i])).map_err(|e| e.to_string())?;
    }
    let report = gradient_check_against(
        &mut store,
        1e-6,
        12,
        |g, s| e2e_loss(&f, g, s, &|_, v| Coupling::StraightThrough(v)),
        |g, s| e2e_loss(&f, g, s, &|i, v| Coupling::Surrogate(v, &offsets[i])),
    )
    .map_err(|e| e.to_string())?;

    // the selector really receives gradient
    let mut g = Graph::new();
    let loss = e2e_loss(&f, &mut g, &store, &|_, v| Coupling::StraightThrough(v)).map_err(|e| e.to_string())?;
    let grads = g.backward(loss).map_err(|e| e.to_string())?;
    let (w, _) = f.selector.layer();
    let selector_grad: f64 = grads.get(w).map(|gw| gw.iter().map(|x| x.abs()).sum()).unwrap_or(0.0);
    let secs = start.elapsed().as_secs_f64();
    check(
        report.max_rel_error < 1e-4 && selector_grad > 0.0 && secs < 30.0,
        format!(
            "max rel. error {:.2e} over {} coordinates (tol 1e-4), |dL/dW_sel| = {selector_grad:.2e}, {secs:.1}s (< 30s)",
            report.max_rel_error, report.coords_checked
        ),
    )
}

// 4 ----------------------------------------------------------------------

fn forward_identity() -> Outcome {
    let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut equal = 0;
    for case in 0..100 {
        let n_sent = rng.random_range(1..=6);
        let text: Vec<String> = (0..n_sent)
            .map(|_| {
                let len = rng.random_range(1..=5);
                let s: Vec<&str> = (0..len).map(|_| *words.choose(&mut rng).unwrap()).collect();
                s.join(" ") + "."
            })
            .collect();
        let text = text.join(" ");
        let corpus = Corpus::from_texts([("d", text.as_str())], CorpusLimits::default()).unwrap();
        let doc = corpus.document("d").unwrap();
        let mut store = ParameterStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(case);
        let v = corpus.vocab().len();
        let ranker = Ranker::new(
            &mut store,
            RankerConfig {
                vocab_size: v,
                dim: 8,
                heads: 2,
                layers: 2,
                ff_dim: 16,
                max_len: 48,
                dropout: 0.0,
            },
            &mut prng,
        )
        .unwrap();
        let cfg = NeuralSelectorConfig {
            embed_dim: 8,
            hidden: 4,
            embedding_name: Ranker::EMBEDDING.into(),
            ..Default::default()
        };
        let selector = LinearSelector::new(&mut store, v, &cfg, &mut prng).unwrap();
        let qlen = rng.random_range(1..=3);
        let qtext: Vec<&str> = (0..qlen).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let q = Query::new("q", qtext.join(" "), corpus.vocab());
        let k = rng.random_range(1..=n_sent);
        let uniforms: Vec<f64> = (0..n_sent).map(|_| rng.random_range(0.01..0.99)).collect();
        let run = |identity: bool| -> f64 {
            let mut g = Graph::new();
            let logits = selector.logits(&mut g, &store, &q.tokens, doc).unwrap();
            let sample = subset_sample_with_uniforms(&mut g, logits, k, 1.0, uniforms.clone()).unwrap();
            let summary = Summary::from_indices(doc, sample.hard.clone(), k).unwrap();
            let input = assemble_input(&q.tokens, &summary, doc, 48).unwrap();
            let c = if identity {
                Coupling::Identity(sample.v)
            } else {
                Coupling::StraightThrough(sample.v)
            };
            let y = ranker.forward(&mut g, &store, &input, c, None).unwrap();
            g.item(y).unwrap()
        };
        if run(false).to_bits() == run(true).to_bits() {
            equal += 1;
        }
    }
    check(equal == 100, format!("{equal}/100 fixtures bit-equal"))
}

// 5 ----------------------------------------------------------------------

fn selection_beats_truncation() -> Outcome {
    let start = Instant::now();
    let exp = SelectionExperiment::default();
    let r = selection_vs_truncation(&exp).map_err(|e| e.to_string())?;
    let gain = r.e2e_ndcg - r.truncate_ndcg;
    let secs = start.elapsed().as_secs_f64();
    check(
        r.recall >= 0.9 && gain >= 0.15 && r.visible_sentences <= 6 && exp.corpus.vocab_words == 200,
        format!(
            "held-out recall {:.3} (>= 0.9), nDCG@10 e2e {:.4} vs truncation {:.4} (+{gain:.4}, >= 0.15), truncation sees {} sentences, {} test queries, {secs:.0}s",
            r.recall, r.e2e_ndcg, r.truncate_ndcg, r.visible_sentences, r.test_queries
        ),
    )
}

// 6 ----------------------------------------------------------------------

fn head_restricted_plateau() -> Outcome {
    let start = Instant::now();
    let exp = PlateauExperiment::default();
    let r = head_plateau(&exp).map_err(|e| e.to_string())?;
    let full = r.ndcg_at(exp.head_limit).ok_or("missing k = head_limit")?;
    let half = r.ndcg_at(exp.head_limit / 2).ok_or("missing k = head_limit/2")?;
    let one = r.ndcg_at(1).ok_or("missing k = 1")?;
    let secs = start.elapsed().as_secs_f64();
    check(
        (full - half).abs() <= 0.02 && one < full && one < half,
        format!(
            "head_limit {}: nDCG@10 k=1 {one:.4}, k={} {half:.4}, k={} {full:.4} (|diff| {:.4} <= 0.02, k=1 lower), {secs:.0}s",
            exp.head_limit,
            exp.head_limit / 2,
            exp.head_limit,
            (full - half).abs()
        ),
    )
}

// 7 ----------------------------------------------------------------------

fn oracle_ap(rels: &[u32], num_relevant: usize) -> f64 {
    if num_relevant == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..rels.len() {
        if rels[i] >= 1 {
            let hits = rels[..=i].iter().filter(|&&r| r >= 1).count();
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / num_relevant as f64
}

fn dcg(rels: &[u32], k: usize) -> f64 {
    rels.iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| r as f64 / ((i + 2) as f64).log2())
        .sum()
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// nDCG with the ideal DCG found by trying every ordering of the judged grades.
fn oracle_ndcg(rels: &[u32], judged: &[u32], k: usize) -> f64 {
    let ideal = permutations(judged).iter().map(|p| dcg(p, k)).fold(0.0, f64::max);
    if ideal == 0.0 {
        0.0
    } else {
        dcg(rels, k) / ideal
    }
}

fn oracle_rr(rels: &[u32]) -> f64 {
    rels.iter().position(|&r| r >= 1).map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn metrics_oracle() -> Outcome {
    // worked examples
    let ap = select_rank::evaluation::average_precision(&[1, 0, 1, 0], 2);
    let nd = select_rank::evaluation::ndcg_at_k(&[1, 0, 1], &[1, 1, 0], 3, Gain::Linear);
    let nd_expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
    if (ap - 5.0 / 6.0).abs() > 1e-15 || (nd - nd_expected).abs() > 1e-15 || (nd - 0.9197).abs() > 5e-5 {
        return Err(format!("worked examples: AP {ap} (5/6), nDCG {nd:.6} (0.9197)"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for fixture in 0..50 {
        let qid = format!("q{fixture}");
        let n_docs = rng.random_range(1..=10);
        let docs: Vec<String> = (0..n_docs).map(|i| format!("d{i}")).collect();
        let mut qrels = Qrels::new();
        // at most 8 judged documents, possibly some never retrieved
        let mut pool: Vec<String> = (0..12).map(|i| format!("d{i}")).collect();
        pool.shuffle(&mut rng);
        let n_judged = rng.random_range(1..=8);
        for d in &pool[..n_judged] {
            qrels.insert(&qid, d, rng.random_range(0..=3));
        }
        if qrels.num_relevant(&qid) == 0 {
            qrels.insert(&qid, &pool[0], 0);
            let d = pool[0].clone();
            let mut fresh = Qrels::new();
            for (od, &r) in qrels.judged(&qid).unwrap() {
                fresh.insert(&qid, od, if *od == d { 1 } else { r });
            }
            qrels = fresh;
        }
        let entries: Vec<(String, f64)> = docs.iter().map(|d| (d.clone(), rng.random_range(0.0..1.0))).collect();
        let mut run = Run::new("t");
        run.push(QueryRanking::from_scores(qid.clone(), entries).unwrap()).unwrap();
        let report = evaluate_run(&run, &qrels, &[1, 3, 5, 10], Gain::Linear).map_err(|e| e.to_string())?;

        let ranked: Vec<u32> = run.rankings[0].doc_ids().map(|d| qrels.relevance(&qid, d)).collect();
        let judged: Vec<u32> = qrels.judged(&qid).unwrap().values().copied().collect();
        let r = qrels.num_relevant(&qid);
        let m = &report.per_query[0];
        worst = worst.max((m.ap - oracle_ap(&ranked, r)).abs());
        worst = worst.max((m.rr - oracle_rr(&ranked)).abs());
        for (i, &k) in [1, 3, 5, 10].iter().enumerate() {
            worst = worst.max((m.ndcg[i] - oracle_ndcg(&ranked, &judged, k)).abs());
        }
        checked += 1;
    }
    check(
        worst <= 1e-9,
        format!("AP = 5/6 and nDCG = {nd:.4} exact; {checked} random fixtures, max deviation {worst:.2e} (tol 1e-9)"),
    )
}

// 8 ----------------------------------------------------------------------

fn explanation_faithfulness() -> Outcome {
    let c = SyntheticCollection::generate(&SyntheticConfig {
        queries: 10,
        docs_per_query: 5,
        sentences_per_doc: 8,
        signal_region: 8,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = Config::resolve(
        None,
        &["dim=16", "heads=2", "layers=1", "ff_dim=16", "max_len=40", "k=3", "mode=e2e", "selector=linear"]
            .map(String::from),
    )
    .map_err(|e| e.to_string())?;
    let model = SelectAndRank::new(&cfg, c.corpus.vocab().len(), None).map_err(|e| e.to_string())?;
    let run = model
        .rerank(&c.corpus, &c.queries, &c.candidates, "faithful")
        .map_err(|e| e.to_string())?;
    let mut pairs = 0;
    let mut exact = 0;
    for r in &run.rankings {
        let q = c.queries.iter().find(|q| q.query_id == r.qid).unwrap();
        for (docid, score) in &r.entries {
            let doc: &Document = c.corpus.document(docid).map_err(|e| e.to_string())?;
            let ex = model.explain(q, doc, &c.corpus).map_err(|e| e.to_string())?;
            let selected: Vec<usize> = ex.selected().map(|s| s.index).collect();
            let summary = Summary::from_indices(doc, selected, model.k()).map_err(|e| e.to_string())?;
            let input = assemble_input(&q.tokens, &summary, doc, model.max_len()).map_err(|e| e.to_string())?;
            let rescored = model.ranker().score(&model.store, &input).map_err(|e| e.to_string())?;
            pairs += 1;
            if rescored.to_bits() == score.to_bits() && ex.score.to_bits() == score.to_bits() {
                exact += 1;
            }
        }
    }
    check(pairs == 50 && exact == pairs, format!("{exact}/{pairs} pairs re-scored bit-exactly"))
}

// 9 ----------------------------------------------------------------------

fn doc_with_lengths(lengths: &[usize]) -> Corpus {
    let text: Vec<String> = lengths
        .iter()
        .enumerate()
        .map(|(s, &n)| (0..n).map(|i| format!("w{s}x{i}")).collect::<Vec<_>>().join(" ") + ".")
        .collect();
    let text = text.join(" ");
    Corpus::from_texts([("d", text.as_str())], CorpusLimits::default()).unwrap()
}

fn missing_tokens() -> Outcome {
    // (sentence lengths, selected, budget, expected fraction)
    let fixtures: Vec<(Vec<usize>, Vec<usize>, usize, f64)> = vec![
        (vec![20; 30], vec![2, 10, 12], 100, 40.0 / 60.0),
        (vec![20; 30], vec![0, 1, 4], 100, 0.0),
        (vec![10, 10, 10], vec![1, 2], 15, 15.0 / 20.0),
        (vec![3, 5, 2, 4], vec![1, 3], 6, 6.0 / 9.0),
        (vec![4, 4], vec![0, 1], 0, 1.0),
    ];
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for (lengths, selected, budget, expected) in &fixtures {
        let corpus = doc_with_lengths(lengths);
        let doc = corpus.document("d").unwrap();
        let summary = Summary::from_indices(doc, selected.clone(), selected.len()).map_err(|e| e.to_string())?;
        worst = worst.max((missing_token_fraction(doc, &summary, *budget) - expected).abs());
        let total: usize = lengths.iter().sum();
        let mut last = f64::INFINITY;
        for b in 0..=total + 1 {
            let f = missing_token_fraction(doc, &summary, b);
            monotone &= f <= last;
            last = f;
        }
    }
    let values: Vec<f64> = fixtures.iter().map(|f| f.3).collect();
    let cdf = empirical_cdf(&values);
    let cdf_ok = cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
        && cdf.last().map(|p| (p.1 - 1.0).abs() < 1e-12).unwrap_or(false);
    check(
        worst < 1e-12 && monotone && cdf_ok,
        format!(
            "{} fixtures match hand counts (max error {worst:.1e}), non-increasing in budget: {monotone}, CDF monotone ending at 1: {cdf_ok}",
            fixtures.len()
        ),
    )
}

// 10 ---------------------------------------------------------------------

fn full_pipeline(dir: &std::path::Path, data: &std::path::Path) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>), String> {
    let p = |name: &str| dir.join(name).display().to_string();
    let d = |name: &str| data.join(name).display().to_string();
    let base: Vec<String> = vec![
        format!("docs={}", d("docs.jsonl")),
        format!("corpus={}", p("corpus.bin")),
        format!("queries={}", d("queries.tsv")),
        format!("qrels={}", d("qrels.txt")),
        format!("checkpoint={}", p("model.ckpt")),
        format!("train_log={}", p("train.jsonl")),
        "dim=16".into(),
        "heads=2".into(),
        "layers=1".into(),
        "ff_dim=16".into(),
        "max_len=40".into(),
        "k=3".into(),
        "mode=e2e".into(),
        "selector=linear".into(),
        "epochs=2".into(),
        "triples_per_epoch=24".into(),
        "depth=10".into(),
        "seed=11".into(),
    ];
    let with = |extra: &[String]| -> Result<Config, String> {
        let mut o = base.clone();
        o.extend_from_slice(extra);
        Config::resolve(None, &o).map_err(|e| e.to_string())
    };
    let first_stage = format!("run={}", p("bm25.run"));
    commands::cmd_ingest(&with(&[])?).map_err(|e| e.to_string())?;
    commands::cmd_retrieve(&with(&[first_stage.clone()])?).map_err(|e| e.to_string())?;
    commands::cmd_train(&with(&[first_stage.clone()])?).map_err(|e| e.to_string())?;
    commands::cmd_rank(&with(&[first_stage, format!("output={}", p("reranked.run"))])?).map_err(|e| e.to_string())?;
    commands::cmd_evaluate(&with(&[format!("run={}", p("reranked.run")), format!("output={}", p("eval.tsv"))])?)
        .map_err(|e| e.to_string())?;
    let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| e.to_string());
    Ok((read("bm25.run")?, read("reranked.run")?, read("train.jsonl")?, read("eval.tsv")?))
}

fn determinism() -> Outcome {
    let c = SyntheticCollection::generate(&SyntheticConfig {
        queries: 12,
        docs_per_query: 4,
        sentences_per_doc: 8,
        signal_region: 8,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    c.write_files(data.path()).map_err(|e| e.to_string())?;
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ra = full_pipeline(a.path(), data.path())?;
    let rb = full_pipeline(b.path(), data.path())?;
    let log_lines = ra.2.iter().filter(|&&c| c == b'\n').count();
    check(
        ra == rb && !ra.1.is_empty() && log_lines > 0,
        format!(
            "first-stage run, re-ranked run ({} bytes), training log ({log_lines} records) and metric report identical across two runs",
            ra.1.len()
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("sampler distribution", sampler_distribution),
        ("relaxed k-hot algebra", relaxed_algebra),
        ("gradient integrity", gradient_integrity),
        ("straight-through forward identity", forward_identity),
        ("selection beats truncation", selection_beats_truncation),
        ("head-restricted plateau", head_restricted_plateau),
        ("metrics oracle", metrics_oracle),
        ("explanation faithfulness", explanation_faithfulness),
        ("missing-token analysis", missing_tokens),
        ("determinism", determinism),
    ];
    // `cargo test --test acceptance -- 3 7` runs a subset
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
