//! Ranking datasets: SVMLight/LETOR text I/O and the two-query toy set.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

/// Documents of one query occupy rows `start..start + len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryGroup {
    pub id: String,
    pub start: usize,
    pub len: usize,
}

impl QueryGroup {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Dense, row-major ranking data grouped by query.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingDataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    queries: Vec<QueryGroup>,
    feature_count: usize,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub queries: usize,
    pub documents: usize,
    pub feature_count: usize,
    /// `(label, count)` sorted by label.
    pub label_histogram: Vec<(f64, usize)>,
}

/// A document's label and feature row.
pub type LabeledRow = (f64, Vec<f64>);

impl RankingDataset {
    /// Builds a dataset from per-query documents, each a `(label, features)`
    /// pair. Rows shorter than `feature_count` are zero-padded.
    pub fn from_queries(
        queries: Vec<(String, Vec<LabeledRow>)>,
        feature_count: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::with_capacity(queries.len());
        for (id, docs) in queries {
            if docs.is_empty() {
                return Err(Error::Empty("query has no documents"));
            }
            groups.push(QueryGroup {
                id,
                start: labels.len(),
                len: docs.len(),
            });
            for (label, row) in docs {
                if !label.is_finite() {
                    return Err(Error::NonFinite {
                        what: "label",
                        index: labels.len(),
                        value: label,
                    });
                }
                if row.len() > feature_count {
                    return Err(Error::LengthMismatch {
                        what: "feature row",
                        got: row.len(),
                        expected: feature_count,
                    });
                }
                labels.push(label);
                let pad = feature_count - row.len();
                features.extend(row);
                features.extend(std::iter::repeat_n(0.0, pad));
            }
        }
        if groups.is_empty() {
            return Err(Error::Empty("dataset has no queries"));
        }
        Ok(Self {
            features,
            labels,
            queries: groups,
            feature_count,
            provenance: provenance.into(),
        })
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, doc: usize) -> &[f64] {
        &self.features[doc * self.feature_count..(doc + 1) * self.feature_count]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn queries(&self) -> &[QueryGroup] {
        &self.queries
    }

    pub fn query_labels(&self, q: usize) -> &[f64] {
        &self.labels[self.queries[q].range()]
    }

    /// Widens every row with zero columns; never narrows.
    pub fn pad_features(&mut self, feature_count: usize) {
        if feature_count <= self.feature_count {
            return;
        }
        let old = self.feature_count;
        let mut widened = Vec::with_capacity(self.labels.len() * feature_count);
        for row in self.features.chunks_exact(old.max(1)).take(self.labels.len()) {
            widened.extend_from_slice(&row[..old]);
            widened.extend(std::iter::repeat_n(0.0, feature_count - old));
        }
        if old == 0 {
            widened = vec![0.0; self.labels.len() * feature_count];
        }
        self.features = widened;
        self.feature_count = feature_count;
    }

    /// Maps every label to `1{label > 0}`.
    pub fn binarize_labels(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.labels {
            *l = if *l > 0.0 { 1.0 } else { 0.0 };
        }
        out
    }

    pub fn max_label(&self) -> f64 {
        self.labels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut sorted = self.labels.clone();
        sorted.sort_by(f64::total_cmp);
        let mut label_histogram: Vec<(f64, usize)> = Vec::new();
        for l in sorted {
            match label_histogram.last_mut() {
                Some((v, c)) if *v == l => *c += 1,
                _ => label_histogram.push((l, 1)),
            }
        }
        DatasetSummary {
            queries: self.queries.len(),
            documents: self.labels.len(),
            feature_count: self.feature_count,
            label_histogram,
        }
    }

    /// Dense SVMLight output, one line per document.
    pub fn write_svmlight<W: Write>(&self, mut out: W) -> Result<()> {
        for q in &self.queries {
            for doc in q.range() {
                write!(out, "{} qid:{}", self.labels[doc], q.id)?;
                for (j, v) in self.row(doc).iter().enumerate() {
                    write!(out, " {}:{}", j + 1, v)?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Parses `label qid:<id> <index>:<value> ... [# comment]` lines. Gzip input is
/// detected by its magic bytes. Documents of a query that appears in several
/// separate runs of lines are merged in file order.
pub fn parse_svmlight<R: Read>(mut input: R, provenance: &str) -> Result<RankingDataset> {
    let mut magic = [0u8; 2];
    let mut got = 0;
    while got < 2 {
        let k = input.read(&mut magic[got..])?;
        if k == 0 {
            break;
        }
        got += k;
    }
    let chained = std::io::Cursor::new(magic[..got].to_vec()).chain(input);
    if got == 2 && magic == [0x1f, 0x8b] {
        parse_lines(BufReader::new(GzDecoder::new(chained)), provenance)
    } else {
        parse_lines(BufReader::new(chained), provenance)
    }
}

pub fn read_svmlight_file(path: &Path) -> Result<RankingDataset> {
    let file = std::fs::File::open(path)?;
    parse_svmlight(file, &path.display().to_string())
}

type Doc = (f64, Vec<(usize, f64)>);

fn parse_lines<R: BufRead>(input: R, provenance: &str) -> Result<RankingDataset> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Vec<Doc>> = HashMap::new();
    let mut feature_count = 0usize;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok.parse().map_err(|_| err(format!("bad label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(err(format!("non-finite label `{label_tok}`")));
        }
        let qid = tokens
            .next()
            .and_then(|t| t.strip_prefix("qid:"))
            .filter(|id| !id.is_empty())
            .ok_or_else(|| err("expected `qid:<id>` after the label".into()))?
            .to_owned();
        let mut pairs = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("bad feature token `{tok}`")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad feature index in `{tok}`")))?;
            if idx == 0 {
                return Err(err("feature indices start at 1".into()));
            }
            let val: f64 = val.parse().map_err(|_| err(format!("bad feature value in `{tok}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value in `{tok}`")));
            }
            feature_count = feature_count.max(idx);
            pairs.push((idx - 1, val));
        }
        let docs = by_id.entry(qid.clone()).or_insert_with(|| {
            order.push(qid);
            Vec::new()
        });
        docs.push((label, pairs));
    }
    let queries = order
        .into_iter()
        .map(|id| {
            let docs = by_id
                .remove(&id)
                .unwrap_or_default()
                .into_iter()
                .map(|(label, pairs)| {
                    let mut row = vec![0.0; feature_count];
                    for (j, v) in pairs {
                        row[j] = v;
                    }
                    (label, row)
                })
                .collect();
            (id, docs)
        })
        .collect();
    RankingDataset::from_queries(queries, feature_count, provenance)
}

/// Two queries over three one-hot documents `x1, x2, x3`: the first ranks
/// them with labels (3, 2, 1), the second holds `x3` then `x1` with labels
/// (3, 2). No single ordering of the three vectors is ideal for both.
pub fn synthetic_dataset() -> RankingDataset {
    let x = |i: usize| {
        let mut v = vec![0.0; 3];
        v[i] = 1.0;
        v
    };
    let queries = vec![
        ("1".to_owned(), vec![(3.0, x(0)), (2.0, x(1)), (1.0, x(2))]),
        ("2".to_owned(), vec![(3.0, x(2)), (2.0, x(0))]),
    ];
    RankingDataset::from_queries(queries, 3, "synthetic").expect("static data is valid")
}
