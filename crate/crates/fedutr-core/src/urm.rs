//! Universal item representations: providers that turn an item corpus into
//! the initial embedding matrix. The training loop consumes the matrix
//! through one interface, so providers are swappable.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::ItemCorpus;
use crate::error::{Error, Result};
use crate::numeric::rng::{tags, RngStream};
use crate::{Matrix, Real, Vector};

/// Produces the initial universal embedding matrix for a corpus.
/// Implementations must be deterministic for fixed config and corpus.
pub trait UniversalProvider: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn embed(&self, corpus: &ItemCorpus) -> Result<Matrix>;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, PartialEq, Eq, Copy)]
pub enum ProviderKind {
    Precomputed,
    HashedNgram,
    Random,
}

impl ProviderKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "precomputed" => Ok(ProviderKind::Precomputed),
            "hashed_ngram" => Ok(ProviderKind::HashedNgram),
            "random" => Ok(ProviderKind::Random),
            other => Err(Error::invalid(format!(
                "unknown provider {other:?}; expected precomputed | hashed_ngram | random"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    /// Character n-gram width; 0 disables character n-grams.
    pub char_ngram: usize,
    /// Include whole-word tokens as features.
    pub word_unigrams: bool,
    pub normalize: bool,
    /// Seed for the random kind.
    pub seed: u64,
    /// Embedding file for the precomputed kind.
    pub path: Option<PathBuf>,
}

impl ProviderConfig {
    pub fn new(kind: ProviderKind, dim: usize) -> Self {
        ProviderConfig {
            kind,
            dim,
            char_ngram: 3,
            word_unigrams: true,
            normalize: true,
            seed: 0,
            path: None,
        }
    }

    pub fn build(&self) -> Result<Box<dyn UniversalProvider>> {
        if self.dim == 0 {
            return Err(Error::invalid("provider dim must be positive"));
        }
        Ok(match self.kind {
            ProviderKind::HashedNgram => Box::new(HashedNgramProvider {
                config: self.clone(),
            }),
            ProviderKind::Random => Box::new(RandomProvider {
                dim: self.dim,
                seed: self.seed,
            }),
            ProviderKind::Precomputed => {
                let path = self.path.clone().ok_or_else(|| {
                    Error::invalid("precomputed provider requires an embedding file path")
                })?;
                Box::new(PrecomputedProvider {
                    path,
                    dim: self.dim,
                    normalize: self.normalize,
                })
            }
        })
    }
}

fn l2_normalize_rows(e: &mut Matrix) {
    for r in 0..e.rows() {
        let norm: Real = e.row(r).iter().map(|v| v * v).sum::<Real>().sqrt();
        if norm > 0.0 {
            for v in e.row_mut(r) {
                *v /= norm;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// hashed n-gram provider

/// FNV-1a 64-bit with a fixed offset, so feature coordinates are stable
/// across platforms and runs.
fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic bag-of-features embedder: word unigrams plus character
/// n-grams, each hashed to a coordinate and a sign.
pub struct HashedNgramProvider {
    config: ProviderConfig,
}

impl HashedNgramProvider {
    fn accumulate(&self, text: &str, row: &mut [Real]) {
        let d = self.config.dim as u64;
        let lower = text.to_lowercase();
        for word in lower.split_whitespace() {
            if self.config.word_unigrams {
                Self::bump(fnv1a64(word.as_bytes()), d, row);
            }
            let n = self.config.char_ngram;
            if n > 0 {
                let chars: Vec<char> = word.chars().collect();
                if chars.len() >= n {
                    for window in chars.windows(n) {
                        let gram: String = window.iter().collect();
                        Self::bump(fnv1a64(gram.as_bytes()), d, row);
                    }
                }
            }
        }
    }

    fn bump(h: u64, d: u64, row: &mut [Real]) {
        let j = (h % d) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        row[j] += sign;
    }
}

impl UniversalProvider for HashedNgramProvider {
    fn embed_dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, corpus: &ItemCorpus) -> Result<Matrix> {
        let mut e = Matrix::zeros(corpus.len(), self.config.dim);
        for (i, text) in corpus.iter().enumerate() {
            self.accumulate(text, e.row_mut(i));
        }
        if self.config.normalize {
            l2_normalize_rows(&mut e);
        }
        e.finite_or_err("hashed n-gram embedding")?;
        Ok(e)
    }

    fn name(&self) -> &'static str {
        "hashed_ngram"
    }
}

// ---------------------------------------------------------------------------
// random provider (the no-URM ablation)

pub struct RandomProvider {
    dim: usize,
    seed: u64,
}

impl RandomProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        RandomProvider { dim, seed }
    }
}

impl UniversalProvider for RandomProvider {
    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, corpus: &ItemCorpus) -> Result<Matrix> {
        Ok(random_init(corpus.len(), self.dim, self.seed))
    }

    fn name(&self) -> &'static str {
        "random"
    }
}

/// Gaussian init with std 0.1.
pub fn random_init(m: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::tagged(seed, tags::PROVIDER);
    rng.gaussian_matrix(m, d, 0.0, 0.1)
}

// ---------------------------------------------------------------------------
// precomputed provider

pub struct PrecomputedProvider {
    path: PathBuf,
    dim: usize,
    normalize: bool,
}

impl UniversalProvider for PrecomputedProvider {
    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, corpus: &ItemCorpus) -> Result<Matrix> {
        load_precomputed(&self.path, corpus.len(), self.dim, self.normalize)
    }

    fn name(&self) -> &'static str {
        "precomputed"
    }
}

#[derive(Deserialize)]
struct BlobSidecar {
    dim: usize,
    count: usize,
    order: String,
}

/// Loads an embedding file in either supported format:
///
/// * text: header `#dim=<d> count=<m>`, then `item_id<TAB>v1 v2 ...` rows;
/// * raw little-endian f32 blob with a `<path>.json` sidecar
///   `{"dim": d, "count": m, "order": "by_item_id"}`.
pub fn load_precomputed(
    path: &Path,
    expected_m: usize,
    expected_d: usize,
    normalize: bool,
) -> Result<Matrix> {
    let sidecar = path.with_extension(format!(
        "{}json",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    let mut e = if sidecar.exists() {
        load_blob(path, &sidecar, expected_m, expected_d)?
    } else {
        load_text_embeddings(path, expected_m, expected_d)?
    };
    e.finite_or_err("precomputed embeddings")?;
    if normalize {
        l2_normalize_rows(&mut e);
    }
    Ok(e)
}

fn load_text_embeddings(path: &Path, expected_m: usize, expected_d: usize) -> Result<Matrix> {
    let raw = fs::read_to_string(path)?;
    let label = path.display().to_string();
    let mut lines = raw.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::MalformedLine {
        path: label.clone(),
        line: 1,
        msg: "empty embedding file".into(),
    })?;
    let (dim, count) = parse_embedding_header(header).ok_or_else(|| Error::MalformedLine {
        path: label.clone(),
        line: 1,
        msg: format!("expected `#dim=<d> count=<m>` header, got {header:?}"),
    })?;
    if dim != expected_d || count != expected_m {
        return Err(Error::shape(
            "precomputed embeddings",
            format!("dim {expected_d} count {expected_m}"),
            format!("dim {dim} count {count}"),
        ));
    }
    let mut rows: HashMap<usize, Vec<Real>> = HashMap::with_capacity(count);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() {
            continue;
        }
        let (id_str, values) = trimmed.split_once('\t').ok_or_else(|| Error::MalformedLine {
            path: label.clone(),
            line: line_no,
            msg: "expected item_id<TAB>values".into(),
        })?;
        let id: usize = id_str.parse().map_err(|_| Error::MalformedLine {
            path: label.clone(),
            line: line_no,
            msg: format!("item id not an integer: {id_str:?}"),
        })?;
        let parsed: std::result::Result<Vec<Real>, _> =
            values.split(' ').map(|v| v.parse::<Real>()).collect();
        let vec = parsed.map_err(|e| Error::MalformedLine {
            path: label.clone(),
            line: line_no,
            msg: format!("bad value: {e}"),
        })?;
        if vec.len() != dim {
            return Err(Error::shape(
                "precomputed embedding row",
                dim,
                format!("{} (line {line_no})", vec.len()),
            ));
        }
        rows.insert(id, vec);
    }
    if rows.len() != count {
        return Err(Error::shape("precomputed embedding rows", count, rows.len()));
    }
    let mut e = Matrix::zeros(count, dim);
    for (id, vec) in rows {
        if id >= count {
            return Err(Error::invalid(format!(
                "embedding row id {id} out of range (count {count})"
            )));
        }
        e.set_row(id, &Vector::from_vec(vec))?;
    }
    Ok(e)
}

fn parse_embedding_header(header: &str) -> Option<(usize, usize)> {
    let rest = header.strip_prefix("#dim=")?;
    let (dim_str, count_part) = rest.split_once(' ')?;
    let count_str = count_part.strip_prefix("count=")?;
    Some((dim_str.parse().ok()?, count_str.trim().parse().ok()?))
}

fn load_blob(
    path: &Path,
    sidecar: &Path,
    expected_m: usize,
    expected_d: usize,
) -> Result<Matrix> {
    let meta: BlobSidecar = serde_json::from_str(&fs::read_to_string(sidecar)?)?;
    if meta.order != "by_item_id" {
        return Err(Error::invalid(format!(
            "unsupported blob order {:?}",
            meta.order
        )));
    }
    if meta.dim != expected_d || meta.count != expected_m {
        return Err(Error::shape(
            "precomputed blob",
            format!("dim {expected_d} count {expected_m}"),
            format!("dim {} count {}", meta.dim, meta.count),
        ));
    }
    let bytes = fs::read(path)?;
    let expected_len = meta.dim * meta.count * 4;
    if bytes.len() != expected_len {
        return Err(Error::shape("precomputed blob bytes", expected_len, bytes.len()));
    }
    let mut data = Vec::with_capacity(meta.dim * meta.count);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as Real);
    }
    Matrix::from_vec(meta.count, meta.dim, data)
}

/// Gaussian random projection for embedding files wider than the model
/// dimension. Callers should record its use in run metadata.
pub fn random_projection(e: &Matrix, target_d: usize, seed: u64) -> Result<Matrix> {
    if target_d == 0 || target_d > e.cols() {
        return Err(Error::invalid(format!(
            "projection target {target_d} invalid for source dim {}",
            e.cols()
        )));
    }
    let mut rng = RngStream::tagged(seed, tags::PROVIDER ^ 0xff);
    let scale = 1.0 / (target_d as Real).sqrt();
    let proj = rng.gaussian_matrix::<Real>(e.cols(), target_d, 0.0, scale);
    let mut out = Matrix::zeros(e.rows(), target_d);
    for r in 0..e.rows() {
        let row = e.row_vector(r);
        let projected = proj.matvec_t(&row)?;
        out.set_row(r, &projected)?;
    }
    Ok(out)
}
