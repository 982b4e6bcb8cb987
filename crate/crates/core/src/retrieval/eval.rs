use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::index::{PassageIndex, Scorer};
use super::RetrievalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalCategory {
    Specs,
    Testbench,
    Build,
}

/// A benchmark question with its golden passages resolved to pids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query: String,
    pub golden_pids: Vec<String>,
    pub category: EvalCategory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitReport {
    pub k: usize,
    pub per_category: BTreeMap<EvalCategory, f64>,
    pub overall: f64,
    /// Hit flag per query, in input order.
    pub hits: Vec<bool>,
}

/// Fraction of queries with at least one golden pid in the top `k`.
pub fn hit_rate(
    index: &PassageIndex,
    queries: &[EvalQuery],
    k: usize,
    scorer: Scorer<'_>,
) -> Result<HitReport, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::NoQueries);
    }
    for q in queries {
        if q.golden_pids.is_empty() {
            return Err(RetrievalError::UnknownGoldenPid(format!("<none> for {:?}", q.query)));
        }
        if let Some(p) = q.golden_pids.iter().find(|p| index.passage(p).is_none()) {
            return Err(RetrievalError::UnknownGoldenPid(p.clone()));
        }
    }
    let prepared = index.prepare(scorer)?;
    let mut hits = Vec::with_capacity(queries.len());
    let mut per: BTreeMap<EvalCategory, (usize, usize)> = BTreeMap::new();
    for q in queries {
        let top = index.retrieve_prepared(&q.query, k, &prepared)?;
        let golden: HashSet<&str> = q.golden_pids.iter().map(String::as_str).collect();
        let hit = top.iter().any(|(p, _)| golden.contains(p.as_str()));
        let e = per.entry(q.category).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
        hits.push(hit);
    }
    let overall = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
    Ok(HitReport {
        k,
        per_category: per.into_iter().map(|(c, (h, n))| (c, h as f64 / n as f64)).collect(),
        overall,
        hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Passage;

    fn idx() -> PassageIndex {
        let texts = [
            "clock gating enable", "reset tree", "scan chain", "timing slack report",
            "power grid", "netlist lint", "floorplan macro", "placement density",
            "routing congestion", "clock skew target",
        ];
        PassageIndex::build(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    pid: format!("p{i:02}"),
                    doc_id: "d".into(),
                    text: t.to_string(),
                    char_start: 0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn q(query: &str, gold: &str, category: EvalCategory) -> EvalQuery {
        EvalQuery {
            query: query.into(),
            golden_pids: vec![gold.into()],
            category,
        }
    }

    #[test]
    fn half_overall() {
        let r = hit_rate(
            &idx(),
            &[q("scan chain", "p02", EvalCategory::Specs), q("scan chain", "p05", EvalCategory::Specs)],
            1,
            Scorer::Bm25,
        )
        .unwrap();
        assert_eq!(r.overall, 0.5);
        assert_eq!(r.hits, [true, false]);
    }

    #[test]
    fn ninth_place_misses_at_eight() {
        let index = idx();
        let query = "clock gating enable";
        let ranked = index.retrieve(query, index.len(), Scorer::Bm25).unwrap();
        let ninth = ranked[8].0.clone();
        let r = hit_rate(&index, &[q(query, &ninth, EvalCategory::Build)], 8, Scorer::Bm25).unwrap();
        assert_eq!(r.overall, 0.0);
        let r = hit_rate(&index, &[q(query, &ninth, EvalCategory::Build)], 9, Scorer::Bm25).unwrap();
        assert_eq!(r.overall, 1.0);
    }

    #[test]
    fn per_category_counts() {
        let queries = [
            q("scan chain", "p02", EvalCategory::Specs),
            q("power grid", "p04", EvalCategory::Specs),
            q("power grid", "p07", EvalCategory::Build),
        ];
        let r = hit_rate(&idx(), &queries, 1, Scorer::Bm25).unwrap();
        assert_eq!(r.per_category[&EvalCategory::Specs], 1.0);
        assert_eq!(r.per_category[&EvalCategory::Build], 0.0);
        assert!(!r.per_category.contains_key(&EvalCategory::Testbench));
        assert!((r.overall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_golden_pid() {
        let err = hit_rate(&idx(), &[q("x", "nope", EvalCategory::Specs)], 8, Scorer::Bm25).unwrap_err();
        assert!(matches!(err, RetrievalError::UnknownGoldenPid(p) if p == "nope"));
        assert!(matches!(hit_rate(&idx(), &[], 8, Scorer::Bm25), Err(RetrievalError::NoQueries)));
    }

    #[test]
    fn monotone_in_k() {
        let index = idx();
        let queries: Vec<EvalQuery> = (0..10)
            .map(|i| q(&index.passages()[(i * 3) % 10].text, &format!("p{i:02}"), EvalCategory::Testbench))
            .collect();
        let mut prev = 0.0;
        for k in 1..=10 {
            let r = hit_rate(&index, &queries, k, Scorer::Bm25).unwrap();
            assert!(r.overall >= prev);
            prev = r.overall;
        }
        assert_eq!(prev, 1.0);
    }
}
