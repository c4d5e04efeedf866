//! CMC and mAP under the cross-camera protocol, plus multiple-query pooling.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::hamcode::{rank_counting, BitCode, CodeIndex};

/// One gallery entry's labels. `identity == None` marks a distractor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GalleryRecord {
    pub id: String,
    pub identity: Option<u32>,
    pub camera: u32,
}

impl GalleryRecord {
    pub fn is_distractor(&self) -> bool {
        self.identity.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// cmc[r] = fraction of scored queries whose first good match appears at
    /// rank <= r+1
    pub cmc: Vec<f64>,
    pub map: f64,
    pub queries: usize,
    pub skipped: usize,
}

impl EvalReport {
    pub fn rank_k(&self, k: usize) -> f64 {
        if self.cmc.is_empty() {
            return 0.0;
        }
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }

    pub fn summary_line(&self) -> String {
        format!(
            "rank1={:.4} rank5={:.4} rank10={:.4} rank20={:.4} mAP={:.4} queries={} skipped={}",
            self.rank_k(1),
            self.rank_k(5),
            self.rank_k(10),
            self.rank_k(20),
            self.map,
            self.queries,
            self.skipped
        )
    }

    pub fn cmc_csv(&self) -> String {
        let mut out = String::from("rank,cmc\n");
        for (r, v) in self.cmc.iter().enumerate() {
            out.push_str(&format!("{},{:.6}\n", r + 1, v));
        }
        out
    }
}

/// Cross-camera split: good = same identity, different camera; junk = same
/// identity same camera plus every distractor. Indices are gallery positions.
pub fn good_junk_split(
    query_identity: u32,
    query_camera: u32,
    gallery: &[GalleryRecord],
) -> (HashSet<usize>, HashSet<usize>) {
    let mut good = HashSet::new();
    let mut junk = HashSet::new();
    for (i, rec) in gallery.iter().enumerate() {
        match rec.identity {
            None => {
                junk.insert(i);
            }
            Some(id) if id == query_identity => {
                if rec.camera == query_camera {
                    junk.insert(i);
                } else {
                    good.insert(i);
                }
            }
            _ => {}
        }
    }
    (good, junk)
}

/// Average precision after deleting junk entries from the ranking. Returns
/// None when the good set is empty (the query is skipped).
pub fn average_precision(
    ranked_indices: &[u32],
    good: &HashSet<usize>,
    junk: &HashSet<usize>,
) -> Option<f64> {
    if good.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut rank = 0usize;
    let mut precision_sum = 0.0;
    for &idx in ranked_indices {
        let idx = idx as usize;
        if junk.contains(&idx) {
            continue;
        }
        rank += 1;
        if good.contains(&idx) {
            hits += 1;
            precision_sum += hits as f64 / rank as f64;
        }
    }
    Some(precision_sum / good.len() as f64)
}

/// Rank (1-based, junk removed) of the first good match, if any.
pub fn first_good_rank(
    ranked_indices: &[u32],
    good: &HashSet<usize>,
    junk: &HashSet<usize>,
) -> Option<usize> {
    let mut rank = 0usize;
    for &idx in ranked_indices {
        let idx = idx as usize;
        if junk.contains(&idx) {
            continue;
        }
        rank += 1;
        if good.contains(&idx) {
            return Some(rank);
        }
    }
    None
}

/// Evaluate queries against a gallery index. `query_meta[i]` carries the
/// identity and camera of `query_codes[i]`; `gallery` parallels the index.
pub fn evaluate(
    query_codes: &[BitCode],
    query_meta: &[(u32, u32)],
    gallery: &[GalleryRecord],
    index: &CodeIndex,
) -> Result<EvalReport> {
    if query_codes.len() != query_meta.len() {
        return Err(Error::Evaluation(format!(
            "{} query codes but {} query labels",
            query_codes.len(),
            query_meta.len()
        )));
    }
    if gallery.len() != index.len() {
        return Err(Error::Evaluation(format!(
            "{} gallery records but {} gallery codes",
            gallery.len(),
            index.len()
        )));
    }
    let max_rank = gallery.len();
    let mut first_good_hist = vec![0usize; max_rank + 1];
    let mut ap_sum = 0.0;
    let mut scored = 0usize;
    let mut skipped = 0usize;
    for (code, &(identity, camera)) in query_codes.iter().zip(query_meta) {
        let ranking = rank_counting(code, index)?;
        let (good, junk) = good_junk_split(identity, camera, gallery);
        match average_precision(&ranking.indices, &good, &junk) {
            None => skipped += 1,
            Some(ap) => {
                scored += 1;
                ap_sum += ap;
                if let Some(r) = first_good_rank(&ranking.indices, &good, &junk) {
                    first_good_hist[r] += 1;
                }
            }
        }
    }
    let mut cmc = vec![0.0; max_rank];
    if scored > 0 {
        let mut cum = 0usize;
        for r in 1..=max_rank {
            cum += first_good_hist[r];
            cmc[r - 1] = cum as f64 / scored as f64;
        }
    }
    Ok(EvalReport {
        cmc,
        map: if scored > 0 { ap_sum / scored as f64 } else { 0.0 },
        queries: scored,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

impl PoolMode {
    pub fn parse(s: &str) -> Result<Option<PoolMode>> {
        match s {
            "single" => Ok(None),
            "avg" => Ok(Some(PoolMode::Avg)),
            "max" => Ok(Some(PoolMode::Max)),
            _ => Err(Error::Config(format!(
                "unknown pooling mode {s:?} (expected single, avg or max)"
            ))),
        }
    }
}

/// Pool several relaxed query codes of one identity+camera into one vector,
/// elementwise mean or max. Binarize afterwards for retrieval.
pub fn pool_queries(relaxed_codes: &[Vec<f64>], mode: PoolMode) -> Result<Vec<f64>> {
    let Some(first) = relaxed_codes.first() else {
        return Err(Error::Domain("cannot pool an empty query list".into()));
    };
    let len = first.len();
    for (i, code) in relaxed_codes.iter().enumerate() {
        if code.len() != len {
            return Err(Error::Dimension(format!(
                "pooled code {i} has {} values, expected {len}",
                code.len()
            )));
        }
        if let Some(&v) = code.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("relaxed value {v} outside [0,1]")));
        }
    }
    let mut out = vec![0.0; len];
    match mode {
        PoolMode::Avg => {
            for code in relaxed_codes {
                for (o, v) in out.iter_mut().zip(code) {
                    *o += v;
                }
            }
            let n = relaxed_codes.len() as f64;
            for o in &mut out {
                *o /= n;
            }
        }
        PoolMode::Max => {
            out.copy_from_slice(first);
            for code in &relaxed_codes[1..] {
                for (o, &v) in out.iter_mut().zip(code) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

// -- relaxed code file (PDHRELX1) -------------------------------------------
//
// Multiple-query pooling runs on pre-binarization codes, so the encoder also
// persists relaxed query codes: magic, L (u32), n (u32), then per record the
// id length (u32), id bytes, and L little-endian f64 values.

pub const RELAXED_FILE_MAGIC: &[u8; 9] = b"PDHRELX1\n";

pub struct RelaxedSet {
    pub value_length: usize,
    pub values: Vec<Vec<f64>>,
    pub ids: Vec<String>,
}

pub fn write_relaxed<W: std::io::Write>(out: &mut W, set: &RelaxedSet) -> Result<()> {
    if set.values.len() != set.ids.len() {
        return Err(Error::Dimension(format!(
            "{} relaxed codes but {} ids",
            set.values.len(),
            set.ids.len()
        )));
    }
    out.write_all(RELAXED_FILE_MAGIC)?;
    out.write_all(&(set.value_length as u32).to_le_bytes())?;
    out.write_all(&(set.values.len() as u32).to_le_bytes())?;
    for (v, id) in set.values.iter().zip(&set.ids) {
        if v.len() != set.value_length {
            return Err(Error::Dimension(format!(
                "relaxed code for {id} has {} values, expected {}",
                v.len(),
                set.value_length
            )));
        }
        out.write_all(&(id.len() as u32).to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        for x in v {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_relaxed_file(path: &std::path::Path, set: &RelaxedSet) -> Result<()> {
    use std::io::Write as _;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_relaxed(&mut f, set)?;
    f.flush()?;
    Ok(())
}

pub fn read_relaxed<R: std::io::Read>(input: &mut R, path: &std::path::Path) -> Result<RelaxedSet> {
    let mut off = 0usize;
    let fail = |message: String, offset: usize| Error::Format {
        path: path.to_path_buf(),
        message,
        offset,
    };
    let read_exact = |input: &mut R, buf: &mut [u8], off: &mut usize| -> Result<()> {
        input.read_exact(buf).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            message: "unexpected end of file".into(),
            offset: *off,
        })?;
        *off += buf.len();
        Ok(())
    };
    let mut magic = [0u8; 9];
    read_exact(input, &mut magic, &mut off)?;
    if &magic != RELAXED_FILE_MAGIC {
        return Err(fail("bad magic, expected PDHRELX1".into(), 0));
    }
    let mut u32buf = [0u8; 4];
    read_exact(input, &mut u32buf, &mut off)?;
    let value_length = u32::from_le_bytes(u32buf) as usize;
    read_exact(input, &mut u32buf, &mut off)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    let mut values = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        read_exact(input, &mut u32buf, &mut off)?;
        let id_len = u32::from_le_bytes(u32buf) as usize;
        let mut id = vec![0u8; id_len];
        read_exact(input, &mut id, &mut off)?;
        ids.push(String::from_utf8(id).map_err(|_| fail("id is not valid UTF-8".into(), off))?);
        let mut v = vec![0.0f64; value_length];
        for x in &mut v {
            let mut b = [0u8; 8];
            read_exact(input, &mut b, &mut off)?;
            *x = f64::from_le_bytes(b);
        }
        values.push(v);
    }
    Ok(RelaxedSet { value_length, values, ids })
}

pub fn read_relaxed_file(path: &std::path::Path) -> Result<RelaxedSet> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_relaxed(&mut f, path)
}
