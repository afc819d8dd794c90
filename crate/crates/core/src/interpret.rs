//! Characterize top-layer units by the input features they correlate with,
//! and score how semantically coherent those feature lists are under a
//! pretrained word embedding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::builder::TrfNetwork;
use crate::data::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        if dim < 1 {
            return Err(Error::Argument("embedding dimension must be at least 1".into()));
        }
        let mut vectors = HashMap::new();
        for (token, v) in entries {
            if v.len() != dim {
                return Err(Error::Shape(format!("embedding of {token:?} has {} values, expected {dim}", v.len())));
            }
            vectors.insert(token, v);
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    /// Text format: a `count dim` header, then `token v_1 … v_dim` per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::EmptyInput(format!("{}: no embedding header", path.display())))?;
        let hdr: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match hdr.as_slice() {
            [c, d] => (
                c.parse::<usize>().map_err(|_| parse_err(1, "bad token count".into()))?,
                d.parse::<usize>().map_err(|_| parse_err(1, "bad dimension".into()))?,
            ),
            _ => return Err(parse_err(1, "header must be 'count dim'".into())),
        };
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("nonblank line").to_string();
            let v: Vec<f64> = parts
                .map(|t| t.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| parse_err(i + 1, format!("non-numeric value in vector of {token:?}")))?;
            if v.len() != dim {
                return Err(parse_err(i + 1, format!("{} values, expected {dim}", v.len())));
            }
            entries.push((token, v));
        }
        if entries.len() != count {
            return Err(parse_err(1, format!("header announces {count} tokens, file has {}", entries.len())));
        }
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedFeature {
    pub index: usize,
    pub name: Option<String>,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitProfile {
    pub unit: usize,
    pub features: Vec<RankedFeature>,
    /// The unit's activation was constant over the data, so every
    /// correlation is reported as 0.
    pub degenerate: bool,
}

fn is_constant(col: ndarray::ArrayView1<'_, f64>) -> bool {
    col.iter().all(|&x| x == col[0])
}

/// Pearson correlations between every column of `x` (N×V) and every column
/// of `a` (N×H), as a V×H matrix. Constant columns correlate 0 with
/// everything.
pub fn correlation_matrix(x: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    let center = |m: &Array2<f64>| {
        let mean = m.mean_axis(Axis(0)).expect("nonempty");
        let c = m - &mean;
        let norms: Vec<f64> = c
            .axis_iter(Axis(1))
            .zip(m.axis_iter(Axis(1)))
            .map(|(cc, raw)| if is_constant(raw) { 0.0 } else { cc.dot(&cc).sqrt() })
            .collect();
        (c, norms)
    };
    let (xc, xn) = center(x);
    let (ac, an) = center(a);
    let mut c = xc.t().dot(&ac);
    for ((i, j), v) in c.indexed_iter_mut() {
        *v = if xn[i] == 0.0 || an[j] == 0.0 {
            0.0
        } else {
            (*v / (xn[i] * an[j])).clamp(-1.0, 1.0)
        };
    }
    c
}

fn rank(column: ndarray::ArrayView1<'_, f64>, names: Option<&[String]>, k: usize) -> Vec<RankedFeature> {
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&p, &q| column[q].abs().total_cmp(&column[p].abs()).then(p.cmp(&q)));
    order
        .into_iter()
        .take(k)
        .map(|i| RankedFeature {
            index: i,
            name: names.map(|n| n[i].clone()),
            correlation: column[i],
        })
        .collect()
}

/// Top-`k` input features of every top-layer unit, ranked by absolute
/// Pearson correlation between the raw feature column and the unit's
/// activation; ties go to the lower feature index.
pub fn profile_units(net: &TrfNetwork, d: &Dataset, k: usize) -> Result<Vec<UnitProfile>> {
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if d.n_features() != net.input_width() {
        return Err(Error::Shape(format!(
            "data has {} features, network reads {}",
            d.n_features(),
            net.input_width()
        )));
    }
    let act = net.top_activations(d.values())?;
    let corr = correlation_matrix(d.values(), &act);
    let names = d.feature_names();
    Ok((0..act.ncols())
        .into_par_iter()
        .map(|u| {
            let degenerate = is_constant(act.column(u));
            if degenerate {
                log::warn!("unit {u} has constant activation; its correlations are all 0");
            }
            UnitProfile {
                unit: u,
                features: rank(corr.column(u), names, k),
                degenerate,
            }
        })
        .collect())
}

/// Top-`k` features of a single top-layer unit.
pub fn top_correlated_features(net: &TrfNetwork, d: &Dataset, unit: usize, k: usize) -> Result<UnitProfile> {
    if unit >= net.top_width() {
        return Err(Error::Argument(format!("unit {unit} but the top layer has {}", net.top_width())));
    }
    Ok(profile_units(net, d, k)?.swap_remove(unit))
}

/// Cosine similarity; `None` if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // sqrt(na * nb) rather than sqrt(na) * sqrt(nb) keeps cos(a, a) == 1 exactly.
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean cosine over unordered pairs of tokens that both have embeddings;
/// `None` when no pair can be scored.
pub fn token_list_score(tokens: &[&str], emb: &EmbeddingTable) -> Option<f64> {
    let vecs: Vec<&[f64]> = tokens.iter().filter_map(|t| emb.get(t)).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            if let Some(c) = cosine(vecs[i], vecs[j]) {
                sum += c;
                pairs += 1;
            }
        }
    }
    (pairs > 0).then(|| sum / pairs as f64)
}

/// Per-unit score of the top-`k` features' names, `None` for units without
/// a scored pair.
pub fn unit_scores(profiles: &[UnitProfile], emb: &EmbeddingTable) -> Vec<Option<f64>> {
    profiles
        .iter()
        .map(|p| {
            let tokens: Vec<&str> = p.features.iter().filter_map(|f| f.name.as_deref()).collect();
            token_list_score(&tokens, emb)
        })
        .collect()
}

/// Mean over top-layer units of the unit scores, skipping units without a
/// scored pair.
pub fn interpretability_score(net: &TrfNetwork, d: &Dataset, emb: &EmbeddingTable, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::Argument("k must be at least 2 to form pairs".into()));
    }
    if d.feature_names().is_none() {
        return Err(Error::Argument("feature names are required to look up embeddings".into()));
    }
    let profiles = profile_units(net, d, k)?;
    let scored: Vec<f64> = unit_scores(&profiles, emb).into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(Error::NoCoverage(format!(
            "none of the {} units has two top-{k} features with embeddings",
            profiles.len()
        )));
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}
