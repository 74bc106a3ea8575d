use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::codes::{hamming, BinaryCodeMatrix};
use crate::dataset::{HeadTailPartition, LabelMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::ImageToText => "I2T",
            Direction::TextToImage => "T2I",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I2T" => Ok(Direction::ImageToText),
            "T2I" => Ok(Direction::TextToImage),
            _ => Err(Error::config(format!("unknown direction {s:?} (expected I2T or T2I)"))),
        }
    }
}

/// Database indices by ascending Hamming distance, ties by ascending index.
pub fn rank_by_hamming(query: &[u64], db: &BinaryCodeMatrix) -> Vec<usize> {
    let c = db.code_length();
    let dist: Vec<u32> = (0..db.len()).map(|j| hamming(query, db.row(j))).collect();
    // Counting sort over distances 0..=c keeps index order within a bucket.
    let mut start = vec![0usize; c + 2];
    for &d in &dist {
        start[d as usize + 1] += 1;
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    let mut ranked = vec![0usize; dist.len()];
    for (j, &d) in dist.iter().enumerate() {
        ranked[start[d as usize]] = j;
        start[d as usize] += 1;
    }
    ranked
}

/// Mean of precision@r over the ranks `r` of relevant items; 0 when
/// nothing is relevant.
pub fn average_precision(relevant: impl IntoIterator<Item = bool>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, rel) in relevant.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub direction: Direction,
    pub code_bits: usize,
    /// Ranked database indices, one list per query.
    pub rankings: Vec<Vec<usize>>,
    pub average_precision: Vec<f64>,
    /// Query carries at least one tail class.
    pub is_tail: Vec<bool>,
    pub map: f64,
    /// `None` when no query falls in the group.
    pub map_head: Option<f64>,
    pub map_tail: Option<f64>,
}

impl RetrievalResult {
    pub fn num_queries(&self) -> usize {
        self.average_precision.len()
    }

    pub fn num_tail(&self) -> usize {
        self.is_tail.iter().filter(|&&t| t).count()
    }

    pub fn num_head(&self) -> usize {
        self.num_queries() - self.num_tail()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Ranks the whole database for every query. Relevance is sharing at least
/// one label; group membership only splits the queries, the database is
/// never filtered.
pub fn evaluate(
    query_codes: &BinaryCodeMatrix,
    query_labels: &LabelMatrix,
    db_codes: &BinaryCodeMatrix,
    db_labels: &LabelMatrix,
    partition: &HeadTailPartition,
    direction: Direction,
) -> Result<RetrievalResult> {
    if query_codes.is_empty() {
        return Err(Error::Eval("empty query set".into()));
    }
    if query_codes.len() != query_labels.rows() || db_codes.len() != db_labels.rows() {
        return Err(Error::Eval("code and label counts differ".into()));
    }
    if query_codes.code_length() != db_codes.code_length() {
        return Err(Error::Eval(format!(
            "query codes have {} bits, database codes {}",
            query_codes.code_length(),
            db_codes.code_length()
        )));
    }
    let classes = query_labels.num_classes();
    if db_labels.num_classes() != classes || partition.num_classes() != classes {
        return Err(Error::Eval("label widths disagree".into()));
    }

    let per_query: Vec<(Vec<usize>, f64)> = (0..query_codes.len())
        .into_par_iter()
        .map(|q| {
            let ranked = rank_by_hamming(query_codes.row(q), db_codes);
            let ap = average_precision(ranked.iter().map(|&j| query_labels.shares_label(q, db_labels, j)));
            (ranked, ap)
        })
        .collect();
    let is_tail: Vec<bool> = (0..query_labels.rows())
        .map(|q| query_labels.row_labels(q).iter().any(|&k| !partition.is_head(k)))
        .collect();
    let (rankings, aps): (Vec<_>, Vec<_>) = per_query.into_iter().unzip();
    let map = mean(aps.iter().copied()).expect("non-empty");
    let map_head = mean(aps.iter().zip(&is_tail).filter(|(_, &t)| !t).map(|(&a, _)| a));
    let map_tail = mean(aps.iter().zip(&is_tail).filter(|(_, &t)| t).map(|(&a, _)| a));
    Ok(RetrievalResult {
        direction,
        code_bits: query_codes.code_length(),
        rankings,
        average_precision: aps,
        is_tail,
        map,
        map_head,
        map_tail,
    })
}

/// Columns `direction, group, code_bits, map, num_queries`; rows all, head,
/// tail for each result. An empty group has an empty `map` field.
pub fn write_results_csv<W: Write>(results: &[RetrievalResult], mut out: W) -> Result<W> {
    writeln!(out, "direction,group,code_bits,map,num_queries")?;
    for r in results {
        let rows = [
            ("all", Some(r.map), r.num_queries()),
            ("head", r.map_head, r.num_head()),
            ("tail", r.map_tail, r.num_tail()),
        ];
        for (group, map, count) in rows {
            let map = map.map(|m| m.to_string()).unwrap_or_default();
            writeln!(out, "{},{group},{},{map},{count}", r.direction.name(), r.code_bits)?;
        }
    }
    Ok(out)
}

pub fn save_results_csv(results: &[RetrievalResult], path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_results_csv(results, file)?.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split_head_tail;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision([true, true]), 1.0);
        assert!((average_precision([true, false, true]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision([false, false]), 0.0);
        assert_eq!(average_precision([true, true, true, false, false]), 1.0);
    }

    #[test]
    fn ranking_ties_and_trivial() {
        let one = BinaryCodeMatrix::from_fn(1, 8, |_, b| b % 2 == 0);
        assert_eq!(rank_by_hamming(one.row(0), &one), vec![0]);
        let same = BinaryCodeMatrix::from_fn(6, 16, |_, b| b < 3);
        assert_eq!(rank_by_hamming(same.row(0), &same), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn ranking_matches_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let db = BinaryCodeMatrix::from_fn(20, 12, |_, _| rng.random_bool(0.5));
        let q = BinaryCodeMatrix::from_fn(1, 12, |_, _| rng.random_bool(0.5));
        let mut oracle: Vec<(u32, usize)> = (0..20)
            .map(|j| ((0..12).filter(|&b| q.bit(0, b) != db.bit(j, b)).count() as u32, j))
            .collect();
        oracle.sort();
        let expect: Vec<usize> = oracle.into_iter().map(|(_, j)| j).collect();
        assert_eq!(rank_by_hamming(q.row(0), &db), expect);
    }

    #[test]
    fn single_perfect_query() {
        let codes = BinaryCodeMatrix::from_fn(1, 8, |_, b| b < 4);
        let labels = LabelMatrix::from_rows(&[vec![0]], 2).unwrap();
        let db = BinaryCodeMatrix::from_fn(2, 8, |i, b| if i == 0 { b >= 4 } else { b < 4 });
        let db_labels = LabelMatrix::from_rows(&[vec![1], vec![0]], 2).unwrap();
        let p = split_head_tail(&[5, 1], 3).unwrap();
        let r = evaluate(&codes, &labels, &db, &db_labels, &p, Direction::ImageToText).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.map_head, Some(1.0));
        assert_eq!(r.map_tail, None);
        assert_eq!(r.rankings, vec![vec![1, 0]]);
    }

    #[test]
    fn empty_queries_and_mismatches() {
        let p = split_head_tail(&[1], 1).unwrap();
        let labels = LabelMatrix::from_rows(&[vec![0]], 1).unwrap();
        let db = BinaryCodeMatrix::zeros(1, 8);
        let none = BinaryCodeMatrix::zeros(0, 8);
        let no_labels = LabelMatrix::new(0, 1);
        assert!(matches!(
            evaluate(&none, &no_labels, &db, &labels, &p, Direction::TextToImage),
            Err(Error::Eval(_))
        ));
        let wide = BinaryCodeMatrix::zeros(1, 16);
        assert!(evaluate(&wide, &labels, &db, &labels, &p, Direction::TextToImage).is_err());
    }

    #[test]
    fn groups_use_any_tail_rule() {
        let q = BinaryCodeMatrix::zeros(3, 4);
        let ql = LabelMatrix::from_rows(&[vec![0], vec![0, 1], vec![1]], 2).unwrap();
        let db = BinaryCodeMatrix::zeros(2, 4);
        let dl = LabelMatrix::from_rows(&[vec![0], vec![1]], 2).unwrap();
        let p = split_head_tail(&[10, 1], 5).unwrap();
        let r = evaluate(&q, &ql, &db, &dl, &p, Direction::ImageToText).unwrap();
        assert_eq!(r.is_tail, vec![false, true, true]);
        // all codes tie: ranking [0, 1]
        assert_eq!(r.average_precision, vec![1.0, 1.0, 0.5]);
        assert_eq!(r.map_tail, Some(0.75));
    }

    #[test]
    fn csv_layout() {
        let q = BinaryCodeMatrix::zeros(1, 4);
        let ql = LabelMatrix::from_rows(&[vec![0]], 1).unwrap();
        let p = split_head_tail(&[3], 1).unwrap();
        let a = evaluate(&q, &ql, &q, &ql, &p, Direction::ImageToText).unwrap();
        let b = evaluate(&q, &ql, &q, &ql, &p, Direction::TextToImage).unwrap();
        let text = String::from_utf8(write_results_csv(&[a, b], Vec::new()).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "direction,group,code_bits,map,num_queries");
        let keys: Vec<(String, String)> = lines[1..]
            .iter()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].to_string())
            })
            .collect();
        let mut expect = Vec::new();
        for d in ["I2T", "T2I"] {
            for g in ["all", "head", "tail"] {
                expect.push((d.to_string(), g.to_string()));
            }
        }
        assert_eq!(keys, expect);
        assert_eq!(lines[3], "I2T,tail,4,,0");
    }
}
