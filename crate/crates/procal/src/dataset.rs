//! Loading, validation, and splitting of precomputed classifier outputs.
//!
//! Two on-disk formats exist: a human-editable prediction-table CSV
//! (`id,true_label,pred_label,confidence[,logit_0..logit_{C-1}]`) and a
//! bit-exact binary embedding container (`PROCALEM` magic, length-prefixed
//! JSON header, row-major f32 payload, trailing i64 ids). Embeddings also
//! load from a CSV fallback (`id,f_0,...,f_{d-1}`).

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"PROCALEM";

/// Per-sample classifier outputs: labels, confidences, optional logits.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub num_classes: usize,
    pub sample_id: Vec<i64>,
    pub true_label: Vec<usize>,
    pub pred_label: Vec<usize>,
    pub confidence: Vec<f64>,
    /// Row-major n x num_classes when present.
    pub logits: Option<Vec<f64>>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.sample_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_id.is_empty()
    }

    pub fn logits_row(&self, i: usize) -> Option<&[f64]> {
        let c = self.num_classes;
        self.logits.as_ref().map(|l| &l[i * c..(i + 1) * c])
    }

    /// Per-sample correctness indicators.
    pub fn correct(&self) -> Vec<bool> {
        self.true_label
            .iter()
            .zip(&self.pred_label)
            .map(|(t, p)| t == p)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 1 {
            return Err(Error::InsufficientSamples {
                context: "prediction set".into(),
                needed: 1,
                got: 0,
            });
        }
        if self.num_classes < 2 {
            return Err(Error::MalformedHeader(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for i in 0..n {
            if !seen.insert(self.sample_id[i]) {
                return Err(Error::DuplicateId(self.sample_id[i]));
            }
            if self.true_label[i] >= self.num_classes {
                return Err(Error::LabelOutOfRange(format!(
                    "true_label {} at id {} (C={})",
                    self.true_label[i], self.sample_id[i], self.num_classes
                )));
            }
            if self.pred_label[i] >= self.num_classes {
                return Err(Error::LabelOutOfRange(format!(
                    "pred_label {} at id {} (C={})",
                    self.pred_label[i], self.sample_id[i], self.num_classes
                )));
            }
            let c = self.confidence[i];
            if !c.is_finite() {
                return Err(Error::NonFinite(format!("confidence at id {}", self.sample_id[i])));
            }
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "confidence {} at id {} outside (0,1]",
                    c, self.sample_id[i]
                )));
            }
        }
        if let Some(logits) = &self.logits {
            if logits.len() != n * self.num_classes {
                return Err(Error::DimensionMismatch {
                    expected: n * self.num_classes,
                    got: logits.len(),
                });
            }
            if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "logit at row {}",
                    bad / self.num_classes
                )));
            }
        }
        Ok(())
    }

    /// Subset by row indices, preserving the given order.
    pub fn subset(&self, idx: &[usize]) -> PredictionSet {
        let c = self.num_classes;
        PredictionSet {
            num_classes: c,
            sample_id: idx.iter().map(|&i| self.sample_id[i]).collect(),
            true_label: idx.iter().map(|&i| self.true_label[i]).collect(),
            pred_label: idx.iter().map(|&i| self.pred_label[i]).collect(),
            confidence: idx.iter().map(|&i| self.confidence[i]).collect(),
            logits: self.logits.as_ref().map(|l| {
                let mut out = Vec::with_capacity(idx.len() * c);
                for &i in idx {
                    out.extend_from_slice(&l[i * c..(i + 1) * c]);
                }
                out
            }),
        }
    }
}

/// Dense n x d feature matrix with per-row sample ids.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    pub d: usize,
    /// Row-major, n x d.
    pub values: Vec<f32>,
    pub sample_id: Vec<i64>,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.sample_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_id.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::MalformedHeader("embedding dimension must be >= 1".into()));
        }
        if self.values.len() != self.len() * self.d {
            return Err(Error::PayloadLengthMismatch {
                expected: self.len() * self.d * 4,
                found: self.values.len() * 4,
            });
        }
        if let Some(bad) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding value at row {}", bad / self.d)));
        }
        let mut seen = HashSet::with_capacity(self.len());
        for &id in &self.sample_id {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> EmbeddingMatrix {
        let d = self.d;
        let mut values = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            d,
            values,
            sample_id: idx.iter().map(|&i| self.sample_id[i]).collect(),
        }
    }
}

/// Calibration/evaluation split parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "split fraction {} outside (0,1)",
                fraction
            )));
        }
        Ok(SplitSpec { fraction, seed })
    }
}

/// Numerically stable softmax over one logit row: returns the argmax
/// (lowest index on exact ties) and its softmax probability.
pub fn softmax_confidence(logits: &[f64]) -> Result<(usize, f64)> {
    if logits.len() < 2 {
        return Err(Error::MalformedHeader(format!(
            "need at least 2 logits, got {}",
            logits.len()
        )));
    }
    if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logit at index {}", bad)));
    }
    let mut arg = 0usize;
    let mut max = logits[0];
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > max {
            max = z;
            arg = i;
        }
    }
    let denom: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    Ok((arg, 1.0 / denom))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("cannot parse {} from '{}'", what, s)))?;
    if !v.is_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(v)
}

/// Load a prediction-table CSV. When logit columns are present, pred_label
/// and confidence are recomputed from them and the stored values are
/// cross-checked (tolerance 1e-4 for confidence, exact for the argmax).
pub fn load_prediction_table<P: AsRef<Path>>(path: P) -> Result<PredictionSet> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 4
        || cols[0] != "id"
        || cols[1] != "true_label"
        || cols[2] != "pred_label"
        || cols[3] != "confidence"
    {
        return Err(Error::MalformedHeader(format!(
            "expected 'id,true_label,pred_label,confidence[,logit_0..]', got '{}'",
            cols.join(",")
        )));
    }
    let num_logits = cols.len() - 4;
    for (j, col) in cols[4..].iter().enumerate() {
        if *col != format!("logit_{}", j) {
            return Err(Error::MalformedHeader(format!(
                "expected column 'logit_{}', got '{}'",
                j, col
            )));
        }
    }
    if num_logits == 1 {
        return Err(Error::MalformedHeader("a single logit column is not a valid class space".into()));
    }

    let mut sample_id = Vec::new();
    let mut true_label = Vec::new();
    let mut pred_label = Vec::new();
    let mut confidence = Vec::new();
    let mut logits: Vec<f64> = Vec::new();

    for record in reader.records() {
        let record = record?;
        if record.len() != cols.len() {
            return Err(Error::MalformedHeader(format!(
                "row has {} fields, header has {}",
                record.len(),
                cols.len()
            )));
        }
        let id: i64 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("cannot parse id '{}'", &record[0])))?;
        let tl: i64 = record[1].trim().parse().map_err(|_| {
            Error::MalformedHeader(format!("cannot parse true_label '{}'", &record[1]))
        })?;
        let pl: i64 = record[2].trim().parse().map_err(|_| {
            Error::MalformedHeader(format!("cannot parse pred_label '{}'", &record[2]))
        })?;
        if tl < 0 {
            return Err(Error::LabelOutOfRange(format!("true_label {} at id {}", tl, id)));
        }
        if pl < 0 {
            return Err(Error::LabelOutOfRange(format!("pred_label {} at id {}", pl, id)));
        }
        let stored_conf = parse_f64(&record[3], "confidence")?;

        if num_logits > 0 {
            let row_start = logits.len();
            for j in 0..num_logits {
                logits.push(parse_f64(&record[4 + j], &format!("logit_{}", j))?);
            }
            let (arg, conf) = softmax_confidence(&logits[row_start..])?;
            if pl as usize != arg {
                return Err(Error::PredLabelMismatch {
                    id,
                    stored: pl as usize,
                    computed: arg,
                });
            }
            if (stored_conf - conf).abs() > 1e-4 {
                return Err(Error::ConfidenceMismatch {
                    id,
                    stored: stored_conf,
                    computed: conf,
                });
            }
            confidence.push(conf);
        } else {
            confidence.push(stored_conf);
        }
        sample_id.push(id);
        true_label.push(tl as usize);
        pred_label.push(pl as usize);
    }

    let num_classes = if num_logits > 0 {
        num_logits
    } else {
        true_label
            .iter()
            .chain(pred_label.iter())
            .max()
            .map(|&m| (m + 1).max(2))
            .unwrap_or(2)
    };
    let set = PredictionSet {
        num_classes,
        sample_id,
        true_label,
        pred_label,
        confidence,
        logits: if num_logits > 0 { Some(logits) } else { None },
    };
    set.validate()?;
    Ok(set)
}

/// Write a prediction-table CSV (round-trips through [`load_prediction_table`]).
pub fn write_prediction_table<P: AsRef<Path>>(path: P, preds: &PredictionSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "id".to_string(),
        "true_label".to_string(),
        "pred_label".to_string(),
        "confidence".to_string(),
    ];
    let c = preds.num_classes;
    if preds.logits.is_some() {
        for j in 0..c {
            header.push(format!("logit_{}", j));
        }
    }
    w.write_record(&header)?;
    for i in 0..preds.len() {
        let mut row = vec![
            preds.sample_id[i].to_string(),
            preds.true_label[i].to_string(),
            preds.pred_label[i].to_string(),
            format!("{:.17}", preds.confidence[i]),
        ];
        if let Some(l) = preds.logits_row(i) {
            for &z in l {
                row.push(format!("{:.17}", z));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BinaryHeader {
    n: usize,
    d: usize,
    dtype: String,
    order: String,
}

/// Load an embedding matrix: binary container if the file starts with the
/// magic, CSV fallback otherwise.
pub fn load_embeddings<P: AsRef<Path>>(path: P) -> Result<EmbeddingMatrix> {
    let mut file = std::fs::File::open(&path)?;
    let mut magic = [0u8; 8];
    let read = file.read(&mut magic)?;
    if read == 8 && &magic == EMBEDDING_MAGIC {
        load_embeddings_binary(file)
    } else {
        load_embeddings_csv(path)
    }
}

fn load_embeddings_binary(mut file: std::fs::File) -> Result<EmbeddingMatrix> {
    let mut len_buf = [0u8; 4];
    file.read_exact(&mut len_buf)
        .map_err(|_| Error::MalformedHeader("truncated header length".into()))?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    let mut header_buf = vec![0u8; header_len];
    file.read_exact(&mut header_buf)
        .map_err(|_| Error::MalformedHeader("truncated JSON header".into()))?;
    let header: BinaryHeader = serde_json::from_slice(&header_buf)
        .map_err(|e| Error::MalformedHeader(format!("invalid JSON header: {}", e)))?;
    if header.dtype != "f32" {
        return Err(Error::MalformedHeader(format!("unsupported dtype '{}'", header.dtype)));
    }
    if header.order != "row-major" {
        return Err(Error::MalformedHeader(format!("unsupported order '{}'", header.order)));
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    let expected = header.n * header.d * 4 + header.n * 8;
    if rest.len() != expected {
        return Err(Error::PayloadLengthMismatch {
            expected,
            found: rest.len(),
        });
    }
    let mut values = Vec::with_capacity(header.n * header.d);
    for chunk in rest[..header.n * header.d * 4].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut sample_id = Vec::with_capacity(header.n);
    for chunk in rest[header.n * header.d * 4..].chunks_exact(8) {
        sample_id.push(i64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let m = EmbeddingMatrix {
        d: header.d,
        values,
        sample_id,
    };
    m.validate()?;
    Ok(m)
}

fn load_embeddings_csv<P: AsRef<Path>>(path: P) -> Result<EmbeddingMatrix> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.is_empty() || cols[0] != "id" {
        return Err(Error::MalformedHeader(format!(
            "expected 'id,f_0,...', got '{}'",
            cols.join(",")
        )));
    }
    let d = cols.len() - 1;
    if d < 1 {
        return Err(Error::MalformedHeader("embedding CSV has no feature columns".into()));
    }
    for (j, col) in cols[1..].iter().enumerate() {
        if *col != format!("f_{}", j) {
            return Err(Error::MalformedHeader(format!(
                "expected column 'f_{}', got '{}'",
                j, col
            )));
        }
    }
    let mut values = Vec::new();
    let mut sample_id = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != d + 1 {
            return Err(Error::MalformedHeader(format!(
                "row has {} fields, header has {}",
                record.len(),
                d + 1
            )));
        }
        let id: i64 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("cannot parse id '{}'", &record[0])))?;
        sample_id.push(id);
        for j in 0..d {
            values.push(parse_f64(&record[1 + j], &format!("f_{}", j))? as f32);
        }
    }
    let m = EmbeddingMatrix { d, values, sample_id };
    m.validate()?;
    Ok(m)
}

/// Write the binary embedding container (bit-exact round trip).
pub fn write_embeddings_binary<P: AsRef<Path>>(path: P, m: &EmbeddingMatrix) -> Result<()> {
    let header = serde_json::to_vec(&BinaryHeader {
        n: m.len(),
        d: m.d,
        dtype: "f32".into(),
        order: "row-major".into(),
    })?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(EMBEDDING_MAGIC)?;
    file.write_all(&(header.len() as u32).to_le_bytes())?;
    file.write_all(&header)?;
    for v in &m.values {
        file.write_all(&v.to_le_bytes())?;
    }
    for id in &m.sample_id {
        file.write_all(&id.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Calibration/evaluation split of a prediction set and optional aligned
/// embeddings: seeded uniform shuffle, then prefix cut of size
/// `floor(fraction * n)`.
#[allow(clippy::type_complexity)]
pub fn split_dataset(
    preds: &PredictionSet,
    embs: Option<&EmbeddingMatrix>,
    spec: SplitSpec,
) -> Result<(
    (PredictionSet, Option<EmbeddingMatrix>),
    (PredictionSet, Option<EmbeddingMatrix>),
)> {
    if let Some(embs) = embs {
        if embs.sample_id != preds.sample_id {
            return Err(Error::MisalignedIds);
        }
    }
    let n = preds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let cut = (spec.fraction * n as f64).floor() as usize;
    let (first, second) = idx.split_at(cut);
    let part = |ix: &[usize]| {
        (
            preds.subset(ix),
            embs.map(|e| e.subset(ix)),
        )
    };
    Ok((part(first), part(second)))
}
