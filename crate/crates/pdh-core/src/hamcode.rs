//! Packed binary codes, Hamming distance, and O(n) counting-sort ranking.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Packed binary code of `bit_length` bits in little-endian word/bit order:
/// bit i lives in word i/64 at position i%64. Padding bits are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitCode {
    bit_length: usize,
    words: Vec<u64>,
}

impl BitCode {
    pub fn zeros(bit_length: usize) -> Self {
        BitCode {
            bit_length,
            words: vec![0; bit_length.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut code = BitCode::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                code.words[i / 64] |= 1u64 << (i % 64);
            }
        }
        code
    }

    pub fn bit_length(&self) -> usize {
        self.bit_length
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        if value {
            self.words[i / 64] |= 1u64 << (i % 64);
        } else {
            self.words[i / 64] &= !(1u64 << (i % 64));
        }
    }

    /// Concatenate codes, preserving per-code bit order.
    pub fn concat(parts: &[BitCode]) -> Self {
        let total: usize = parts.iter().map(|p| p.bit_length).sum();
        let mut out = BitCode::zeros(total);
        let mut offset = 0;
        for part in parts {
            for i in 0..part.bit_length {
                if part.get(i) {
                    out.set(offset + i, true);
                }
            }
            offset += part.bit_length;
        }
        out
    }

    /// Little-endian byte serialization, ceil(L/8) bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nbytes = self.bit_length.div_ceil(8);
        let mut out = vec![0u8; nbytes];
        for (i, byte) in out.iter_mut().enumerate() {
            let word = self.words[i / 8];
            *byte = (word >> (8 * (i % 8))) as u8;
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], bit_length: usize) -> Result<Self> {
        if bytes.len() != bit_length.div_ceil(8) {
            return Err(Error::Dimension(format!(
                "{} bytes cannot hold a {}-bit code",
                bytes.len(),
                bit_length
            )));
        }
        let mut code = BitCode::zeros(bit_length);
        for (i, &b) in bytes.iter().enumerate() {
            code.words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        // canonical form: clear padding bits
        let tail = bit_length % 64;
        if tail != 0 {
            let last = code.words.len() - 1;
            code.words[last] &= (1u64 << tail) - 1;
        }
        Ok(code)
    }
}

/// Threshold a relaxed code: bit i = 1 iff value > 0.5 (ties give 0).
pub fn binarize(relaxed: &[f64]) -> Result<BitCode> {
    for (i, &v) in relaxed.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "relaxed code value {v} at index {i} outside [0,1]"
            )));
        }
    }
    let mut code = BitCode::zeros(relaxed.len());
    for (i, &v) in relaxed.iter().enumerate() {
        if v > 0.5 {
            code.set(i, true);
        }
    }
    Ok(code)
}

/// Number of differing bits between two equal-length codes.
pub fn hamming(a: &BitCode, b: &BitCode) -> Result<u32> {
    if a.bit_length != b.bit_length {
        return Err(Error::Dimension(format!(
            "hamming over codes of {} and {} bits",
            a.bit_length, b.bit_length
        )));
    }
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

/// Immutable gallery of codes with parallel record ids.
#[derive(Debug, Clone)]
pub struct CodeIndex {
    bit_length: usize,
    codes: Vec<BitCode>,
    ids: Vec<String>,
}

impl CodeIndex {
    pub fn new(codes: Vec<BitCode>, ids: Vec<String>) -> Result<Self> {
        if codes.len() != ids.len() {
            return Err(Error::Dimension(format!(
                "{} codes but {} ids",
                codes.len(),
                ids.len()
            )));
        }
        let bit_length = codes.first().map_or(0, |c| c.bit_length);
        if codes.iter().any(|c| c.bit_length != bit_length) {
            return Err(Error::Dimension("index codes have mixed bit lengths".into()));
        }
        Ok(CodeIndex { bit_length, codes, ids })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn bit_length(&self) -> usize {
        self.bit_length
    }

    pub fn codes(&self) -> &[BitCode] {
        &self.codes
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Gallery order by ascending Hamming distance, ties broken by ascending
/// gallery index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub indices: Vec<u32>,
    pub distances: Vec<u32>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Full ranking via counting sort over the L+1 possible distance values.
pub fn rank_counting(query: &BitCode, index: &CodeIndex) -> Result<Ranking> {
    if index.is_empty() {
        return Ok(Ranking { indices: vec![], distances: vec![] });
    }
    if query.bit_length != index.bit_length {
        return Err(Error::Dimension(format!(
            "query has {} bits, index has {}",
            query.bit_length, index.bit_length
        )));
    }
    let n = index.len();
    let buckets = index.bit_length + 1;
    let mut dists = vec![0u32; n];
    let mut counts = vec![0u32; buckets + 1];
    for (d, code) in dists.iter_mut().zip(&index.codes) {
        *d = hamming(query, code)?;
        counts[*d as usize + 1] += 1;
    }
    for i in 1..=buckets {
        counts[i] += counts[i - 1];
    }
    let mut indices = vec![0u32; n];
    let mut out_dists = vec![0u32; n];
    // forward scan keeps equal distances in ascending gallery order
    for (i, &d) in dists.iter().enumerate() {
        let slot = counts[d as usize] as usize;
        counts[d as usize] += 1;
        indices[slot] = i as u32;
        out_dists[slot] = d;
    }
    Ok(Ranking { indices, distances: out_dists })
}

/// First min(k, n) entries of [`rank_counting`].
pub fn top_k(query: &BitCode, index: &CodeIndex, k: usize) -> Result<Ranking> {
    if k == 0 {
        return Err(Error::Config("top_k requires k >= 1".into()));
    }
    let mut full = rank_counting(query, index)?;
    full.indices.truncate(k);
    full.distances.truncate(k);
    Ok(full)
}

// -- code file format (PDHCODE1) --------------------------------------------

pub const CODE_FILE_MAGIC: &[u8; 9] = b"PDHCODE1\n";

/// Write a code file: magic, L (u32), n (u32), then per record the id length
/// (u32), id bytes, and ceil(L/8) code bytes in little-endian bit order.
pub fn write_codes<W: Write>(out: &mut W, index: &CodeIndex) -> Result<()> {
    out.write_all(CODE_FILE_MAGIC)?;
    out.write_all(&(index.bit_length as u32).to_le_bytes())?;
    out.write_all(&(index.len() as u32).to_le_bytes())?;
    for (code, id) in index.codes.iter().zip(&index.ids) {
        out.write_all(&(id.len() as u32).to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        out.write_all(&code.to_bytes())?;
    }
    Ok(())
}

pub fn write_codes_file(path: &Path, index: &CodeIndex) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_codes(&mut f, index)?;
    f.flush()?;
    Ok(())
}

pub fn read_codes<R: Read>(input: &mut R, path: &Path) -> Result<CodeIndex> {
    let mut off = 0usize;
    let fail = |message: String, offset: usize| Error::Format {
        path: path.to_path_buf(),
        message,
        offset,
    };
    let mut magic = [0u8; 9];
    read_exact(input, &mut magic, &mut off, path)?;
    if &magic != CODE_FILE_MAGIC {
        return Err(fail("bad magic, expected PDHCODE1".into(), 0));
    }
    let bit_length = read_u32(input, &mut off, path)? as usize;
    let n = read_u32(input, &mut off, path)? as usize;
    let mut codes = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let id_len = read_u32(input, &mut off, path)? as usize;
        let mut id = vec![0u8; id_len];
        read_exact(input, &mut id, &mut off, path)?;
        let id = String::from_utf8(id)
            .map_err(|_| fail("record id is not valid UTF-8".into(), off))?;
        let mut bytes = vec![0u8; bit_length.div_ceil(8)];
        read_exact(input, &mut bytes, &mut off, path)?;
        codes.push(BitCode::from_bytes(&bytes, bit_length)?);
        ids.push(id);
    }
    CodeIndex::new(codes, ids)
}

pub fn read_codes_file(path: &Path) -> Result<CodeIndex> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_codes(&mut f, path)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], off: &mut usize, path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "unexpected end of file".into(),
        offset: *off,
    })?;
    *off += buf.len();
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, off: &mut usize, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, off, path)?;
    Ok(u32::from_le_bytes(b))
}

// -- benchmark harness -------------------------------------------------------

/// Mean per-query timings for the packed-Hamming pipeline and the unpacked
/// single-precision Euclidean pipeline over the same synthetic codes.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub gallery_size: usize,
    pub bit_length: usize,
    pub repeats: usize,
    /// packed XOR+popcount distance pass, seconds per query
    pub hamming_distance_s: f64,
    /// counting-sort ranking pass, seconds per query
    pub counting_sort_s: f64,
    /// unpacked f32 squared-Euclidean distance pass, seconds per query
    pub euclidean_distance_s: f64,
    /// comparison-sort ranking pass, seconds per query
    pub comparison_sort_s: f64,
    pub rankings_agree: bool,
}

impl BenchReport {
    pub fn hamming_total_s(&self) -> f64 {
        self.hamming_distance_s + self.counting_sort_s
    }

    pub fn euclidean_total_s(&self) -> f64 {
        self.euclidean_distance_s + self.comparison_sort_s
    }
}

fn random_codes(n: usize, bits: usize, rng: &mut ChaCha8Rng) -> Vec<BitCode> {
    (0..n)
        .map(|_| {
            let mut c = BitCode::zeros(bits);
            for w in &mut c.words {
                *w = rng.gen();
            }
            let tail = bits % 64;
            if tail != 0 {
                let last = c.words.len() - 1;
                c.words[last] &= (1u64 << tail) - 1;
            }
            c
        })
        .collect()
}

fn unpack_f32(code: &BitCode) -> Vec<f32> {
    (0..code.bit_length()).map(|i| code.get(i) as u8 as f32).collect()
}

/// Comparison-sort ranking of f32 distances with the same stable tie rule.
fn rank_comparison_f32(dists: &[f32]) -> (Vec<u32>, Vec<f32>) {
    let mut order: Vec<u32> = (0..dists.len() as u32).collect();
    order.sort_by(|&a, &b| {
        dists[a as usize]
            .partial_cmp(&dists[b as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    let d = order.iter().map(|&i| dists[i as usize]).collect();
    (order, d)
}

/// Time both retrieval pipelines on `n` random codes of `bits` bits,
/// averaging over `repeats` random queries.
pub fn bench_search(n: usize, bits: usize, repeats: usize, seed: u64) -> Result<BenchReport> {
    if n == 0 || bits == 0 || repeats == 0 {
        return Err(Error::Config("bench_search needs positive n, bits, repeats".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = random_codes(n, bits, &mut rng);
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let index = CodeIndex::new(codes, ids)?;
    let gallery_f32: Vec<Vec<f32>> = index.codes().iter().map(unpack_f32).collect();
    let queries = random_codes(repeats, bits, &mut rng);

    let mut t_ham = 0.0;
    let mut t_count = 0.0;
    let mut t_euc = 0.0;
    let mut t_cmp = 0.0;
    let mut agree = true;

    for query in &queries {
        // packed pipeline, distance and sort timed separately
        let t0 = Instant::now();
        let mut dists = vec![0u32; n];
        for (d, code) in dists.iter_mut().zip(index.codes()) {
            *d = hamming(query, code)?;
        }
        t_ham += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let buckets = bits + 1;
        let mut counts = vec![0u32; buckets + 1];
        for &d in &dists {
            counts[d as usize + 1] += 1;
        }
        for i in 1..=buckets {
            counts[i] += counts[i - 1];
        }
        let mut ham_order = vec![0u32; n];
        for (i, &d) in dists.iter().enumerate() {
            let slot = counts[d as usize] as usize;
            counts[d as usize] += 1;
            ham_order[slot] = i as u32;
        }
        t_count += t0.elapsed().as_secs_f64();

        // unpacked pipeline
        let qf = unpack_f32(query);
        let t0 = Instant::now();
        let mut edists = vec![0f32; n];
        for (d, g) in edists.iter_mut().zip(&gallery_f32) {
            let mut acc = 0f32;
            for (x, y) in qf.iter().zip(g) {
                let diff = x - y;
                acc += diff * diff;
            }
            *d = acc;
        }
        t_euc += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let (euc_order, _) = rank_comparison_f32(&edists);
        t_cmp += t0.elapsed().as_secs_f64();

        // Hamming == squared L2 on 0/1 vectors, so rankings must match
        agree &= ham_order == euc_order;
    }

    let r = repeats as f64;
    Ok(BenchReport {
        gallery_size: n,
        bit_length: bits,
        repeats,
        hamming_distance_s: t_ham / r,
        counting_sort_s: t_count / r,
        euclidean_distance_s: t_euc / r,
        comparison_sort_s: t_cmp / r,
        rankings_agree: agree,
    })
}

/// Mean counting-sort ranking time per query at gallery size `n`, for the
/// linear-scaling check. Distances are precomputed so only the ranking pass
/// is timed, and no unpacked gallery is materialized.
pub fn counting_sort_time(n: usize, bits: usize, repeats: usize, seed: u64) -> Result<f64> {
    if n == 0 || bits == 0 || repeats == 0 {
        return Err(Error::Config("counting_sort_time needs positive n, bits, repeats".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buckets = bits + 1;
    // buffers live outside the timed region so allocation and page-fault
    // behavior (which shifts with the allocator's mmap threshold) does not
    // pollute the scaling measurement
    let mut counts = vec![0u32; buckets + 1];
    let mut order = vec![0u32; n];
    let mut total = 0.0;
    for _ in 0..repeats {
        let dists: Vec<u32> = (0..n).map(|_| rng.gen_range(0..buckets as u32)).collect();
        let t0 = Instant::now();
        counts.fill(0);
        for &d in &dists {
            counts[d as usize + 1] += 1;
        }
        for i in 1..=buckets {
            counts[i] += counts[i - 1];
        }
        for (i, &d) in dists.iter().enumerate() {
            let slot = counts[d as usize] as usize;
            counts[d as usize] += 1;
            order[slot] = i as u32;
        }
        total += t0.elapsed().as_secs_f64();
        std::hint::black_box(&order);
    }
    Ok(total / repeats as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(bits: &str) -> BitCode {
        BitCode::from_bits(&bits.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn binarize_thresholds_and_ties() {
        let c = binarize(&[0.9, 0.1, 0.51, 0.49]).unwrap();
        assert_eq!(c, code("1010"));
        let half = binarize(&[0.5; 6]).unwrap();
        assert_eq!(half, BitCode::zeros(6));
    }

    #[test]
    fn binarize_rejects_out_of_domain() {
        assert!(matches!(binarize(&[0.2, 1.3]), Err(Error::Domain(_))));
        assert!(matches!(binarize(&[-0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn hamming_hand_cases() {
        assert_eq!(hamming(&code("1010"), &code("1010")).unwrap(), 0);
        assert_eq!(hamming(&code("1010"), &code("0110")).unwrap(), 2);
        assert!(hamming(&code("1010"), &code("101")).is_err());
    }

    #[test]
    fn hamming_matches_bit_loop_and_squared_l2() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let codes = random_codes(2, 2048, &mut rng);
            let (a, b) = (&codes[0], &codes[1]);
            let loop_count = (0..2048).filter(|&i| a.get(i) != b.get(i)).count() as u32;
            let l2: f64 = (0..2048)
                .map(|i| {
                    let d = a.get(i) as u8 as f64 - b.get(i) as u8 as f64;
                    d * d
                })
                .sum();
            let h = hamming(a, b).unwrap();
            assert_eq!(h, loop_count);
            assert_eq!(h as f64, l2);
        }
    }

    #[test]
    fn ranking_self_first_and_stable_ties() {
        let q = code("1100");
        let codes = vec![code("0000"), code("1100"), code("0000"), code("1100")];
        let ids = (0..4).map(|i| i.to_string()).collect();
        let index = CodeIndex::new(codes, ids).unwrap();
        let r = rank_counting(&q, &index).unwrap();
        assert_eq!(r.indices, vec![1, 3, 0, 2]);
        assert_eq!(r.distances, vec![0, 0, 2, 2]);
    }

    #[test]
    fn ranking_all_equal_is_index_order() {
        let codes = vec![code("10"); 5];
        let index = CodeIndex::new(codes, (0..5).map(|i| i.to_string()).collect()).unwrap();
        let r = rank_counting(&code("01"), &index).unwrap();
        assert_eq!(r.indices, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_index_gives_empty_ranking() {
        let index = CodeIndex::new(vec![], vec![]).unwrap();
        let r = rank_counting(&code("1"), &index).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn counting_matches_comparison_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = 200 + trial * 37;
            let codes = random_codes(n, 128, &mut rng);
            let ids = (0..n).map(|i| i.to_string()).collect();
            let index = CodeIndex::new(codes, ids).unwrap();
            let q = random_codes(1, 128, &mut rng).remove(0);
            let fast = rank_counting(&q, &index).unwrap();
            let mut order: Vec<u32> = (0..n as u32).collect();
            let dists: Vec<u32> = index
                .codes()
                .iter()
                .map(|c| hamming(&q, c).unwrap())
                .collect();
            order.sort_by_key(|&i| (dists[i as usize], i));
            assert_eq!(fast.indices, order);
        }
    }

    #[test]
    fn top_k_is_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let codes = random_codes(100, 64, &mut rng);
        let index = CodeIndex::new(codes, (0..100).map(|i| i.to_string()).collect()).unwrap();
        let q = random_codes(1, 64, &mut rng).remove(0);
        let full = rank_counting(&q, &index).unwrap();
        let k10 = top_k(&q, &index, 10).unwrap();
        assert_eq!(k10.indices, full.indices[..10]);
        let kbig = top_k(&q, &index, 1000).unwrap();
        assert_eq!(kbig, full);
    }

    #[test]
    fn triangle_inequality_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let codes = random_codes(3, 96, &mut rng);
            let ab = hamming(&codes[0], &codes[1]).unwrap();
            let bc = hamming(&codes[1], &codes[2]).unwrap();
            let ac = hamming(&codes[0], &codes[2]).unwrap();
            assert!(ac <= ab + bc);
            assert_eq!(ab, hamming(&codes[1], &codes[0]).unwrap());
        }
    }

    #[test]
    fn code_file_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let codes = random_codes(17, 100, &mut rng);
        let ids = (0..17).map(|i| format!("{i:04}_c1s1_{i:06}_00")).collect();
        let index = CodeIndex::new(codes, ids).unwrap();
        let mut buf = Vec::new();
        write_codes(&mut buf, &index).unwrap();
        let loaded = read_codes(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(loaded.codes(), index.codes());
        assert_eq!(loaded.ids(), index.ids());
        let mut buf2 = Vec::new();
        write_codes(&mut buf2, &loaded).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn code_file_bad_magic() {
        let buf = b"PDHXXXX1\n\x00\x00\x00\x00".to_vec();
        let err = read_codes(&mut buf.as_slice(), Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn bench_report_sane_on_small_input() {
        let r = bench_search(500, 64, 2, 1).unwrap();
        assert!(r.hamming_distance_s > 0.0);
        assert!(r.euclidean_distance_s > 0.0);
        assert!(r.rankings_agree);
    }
}
