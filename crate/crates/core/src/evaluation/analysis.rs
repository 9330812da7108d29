use crate::selectors::Summary;
use crate::text::Document;

/// Share of the summary's tokens lying at or beyond `head_budget` in the
/// document's untruncated token stream — what a head-truncating ranker would miss.
pub fn missing_token_fraction(doc: &Document, summary: &Summary, head_budget: usize) -> f64 {
    let offsets = doc.sentence_offsets();
    let mut total = 0usize;
    let mut missing = 0usize;
    for &i in &summary.indices {
        let len = doc.sentences[i].tokens.len();
        let start = offsets[i];
        total += len;
        missing += (start + len).saturating_sub(start.max(head_budget));
    }
    if total == 0 {
        0.0
    } else {
        missing as f64 / total as f64
    }
}

/// Empirical CDF as (value, cumulative share) pairs at each distinct value.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let share = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = share,
            _ => out.push((*v, share)),
        }
    }
    out
}
