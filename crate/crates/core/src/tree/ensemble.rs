use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::oblivious::{ObliviousTree, Split};
use crate::error::{Error, Result};

const MAGIC: &str = "stochrank-model v1";

/// One boosting step: `F <- shrink * F + step * tree(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub tree: ObliviousTree,
    pub shrink: f64,
    pub step: f64,
}

/// Tree ensemble with per-iteration shrinkage, evaluated in training order
/// so that predictions reproduce the scores seen during boosting bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    feature_count: usize,
    stages: Vec<Stage>,
}

impl Ensemble {
    pub fn new(feature_count: usize) -> Self {
        Self {
            feature_count,
            stages: Vec::new(),
        }
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn push(&mut self, tree: ObliviousTree, shrink: f64, step: f64) {
        self.stages.push(Stage { tree, shrink, step });
    }

    pub fn truncate(&mut self, len: usize) {
        self.stages.truncate(len);
    }

    /// Scale applied to each tree in the final model,
    /// `step_t * prod_{s>t} shrink_s`.
    pub fn effective_scales(&self) -> Vec<f64> {
        let mut scales = vec![0.0; self.stages.len()];
        let mut tail = 1.0;
        for (t, stage) in self.stages.iter().enumerate().rev() {
            scales[t] = stage.step * tail;
            tail *= stage.shrink;
        }
        scales
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.stages
            .iter()
            .fold(0.0, |acc, s| acc * s.shrink + s.step * s.tree.predict_row(row))
    }

    /// Scores for a row-major matrix.
    pub fn predict(&self, rows: &[f64], feature_count: usize) -> Result<Vec<f64>> {
        if feature_count != self.feature_count {
            return Err(Error::Model(format!(
                "model expects {} features, data has {feature_count}",
                self.feature_count
            )));
        }
        if feature_count == 0 {
            return Err(Error::Empty("feature matrix"));
        }
        Ok(rows.chunks_exact(feature_count).map(|r| self.predict_row(r)).collect())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        // `{}` on f64 prints the shortest string that parses back exactly
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "features {}", self.feature_count);
        let _ = writeln!(s, "stages {}", self.stages.len());
        for stage in &self.stages {
            let _ = writeln!(s, "stage {} {} {}", stage.shrink, stage.step, stage.tree.depth());
            for sp in &stage.tree.splits {
                let _ = writeln!(s, "split {} {} {}", sp.feature, sp.border, sp.threshold);
            }
            let leaves: Vec<String> = stage.tree.leaf_values.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "leaves {}", leaves.join(" "));
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |expect: &str| -> Result<(usize, Vec<String>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::Model(format!("unexpected end of model, wanted `{expect}`")))?;
            let line = line?;
            let fields: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
            if fields.first().map(String::as_str) != Some(expect) {
                return Err(Error::Parse {
                    line: no,
                    message: format!("expected `{expect}`"),
                });
            }
            Ok((no, fields))
        };
        let (_, header) = next("stochrank-model")?;
        if header.get(1).map(String::as_str) != Some("v1") {
            return Err(Error::Model("unsupported model version".into()));
        }
        let (no, f) = next("features")?;
        let feature_count: usize = field(&f, 1, no)?;
        let (no, f) = next("stages")?;
        let count: usize = field(&f, 1, no)?;
        let mut ensemble = Ensemble::new(feature_count);
        for _ in 0..count {
            let (no, f) = next("stage")?;
            let shrink: f64 = field(&f, 1, no)?;
            let step: f64 = field(&f, 2, no)?;
            let depth: usize = field(&f, 3, no)?;
            let mut splits = Vec::with_capacity(depth);
            for _ in 0..depth {
                let (no, f) = next("split")?;
                let split = Split {
                    feature: field(&f, 1, no)?,
                    border: field(&f, 2, no)?,
                    threshold: field(&f, 3, no)?,
                };
                if split.feature >= feature_count {
                    return Err(Error::Parse {
                        line: no,
                        message: format!("feature {} out of range", split.feature),
                    });
                }
                splits.push(split);
            }
            let (no, f) = next("leaves")?;
            let leaf_values = f[1..]
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Parse {
                        line: no,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if leaf_values.len() != 1 << depth {
                return Err(Error::Parse {
                    line: no,
                    message: format!("expected {} leaves, found {}", 1usize << depth, leaf_values.len()),
                });
            }
            ensemble.push(ObliviousTree { splits, leaf_values }, shrink, step);
        }
        Ok(ensemble)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn field<T: std::str::FromStr>(fields: &[String], i: usize, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = fields.get(i).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field {i}"),
    })?;
    raw.parse().map_err(|e: T::Err| Error::Parse {
        line,
        message: format!("`{raw}`: {e}"),
    })
}
