//! C ABI for the part-based deep hashing pipeline.
//!
//! Handles are opaque pointers owned by this library; every `*_free`
//! function accepts NULL. Functions returning [`PdhStatus`] set a
//! thread-local error message readable via [`pdh_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use pdh_core::dataio::{PersonImage, INGEST_HEIGHT, INGEST_WIDTH};
use pdh_core::error::Error;
use pdh_core::hamcode::{hamming, read_codes_file, top_k, BitCode, CodeIndex};
use pdh_core::parts::PartModelBank;

/// Result of a fallible call. Nonzero values mirror the CLI exit codes,
/// plus FFI-specific argument errors.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum PdhStatus {
    Ok = 0,
    Config = 2,
    Ingestion = 3,
    Numeric = 4,
    Evaluation = 5,
    NullArgument = 10,
    InvalidArgument = 11,
}

/// Opaque handle to a loaded part model bank.
#[repr(C)]
pub struct PdhBank {
    _private: [u8; 0],
}

/// Opaque handle to an immutable gallery code index.
#[repr(C)]
pub struct PdhIndex {
    _private: [u8; 0],
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let cleaned: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap();
    });
}

fn status_of(err: &Error) -> PdhStatus {
    match err.exit_code() {
        2 => PdhStatus::Config,
        3 => PdhStatus::Ingestion,
        5 => PdhStatus::Evaluation,
        _ => PdhStatus::Numeric,
    }
}

fn fail(err: Error) -> PdhStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pdh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn path_from_c(path: *const c_char) -> Result<std::path::PathBuf, PdhStatus> {
    if path.is_null() {
        set_error("path is NULL");
        return Err(PdhStatus::NullArgument);
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(Path::new(s).to_path_buf()),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(PdhStatus::InvalidArgument)
        }
    }
}

// -- bank --------------------------------------------------------------------

/// Load a bank checkpoint directory. Returns NULL on failure (see
/// `pdh_last_error_message`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pdh_bank_load(path: *const c_char) -> *mut PdhBank {
    let Ok(path) = path_from_c(path) else {
        return ptr::null_mut();
    };
    match PartModelBank::load_dir(&path) {
        Ok(bank) => Box::into_raw(Box::new(bank)) as *mut PdhBank,
        Err(e) => {
            fail(e);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `bank` must be NULL or a pointer returned by `pdh_bank_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdh_bank_free(bank: *mut PdhBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank as *mut PartModelBank));
    }
}

/// Total code length in bits (parts x bits-per-part); 0 for NULL.
///
/// # Safety
/// `bank` must be NULL or a live pointer from `pdh_bank_load`.
#[no_mangle]
pub unsafe extern "C" fn pdh_bank_code_bits(bank: *const PdhBank) -> u32 {
    if bank.is_null() {
        return 0;
    }
    (*(bank as *const PartModelBank)).code_bits() as u32
}

/// Number of bytes `pdh_bank_encode` writes per image.
///
/// # Safety
/// `bank` must be NULL or a live pointer from `pdh_bank_load`.
#[no_mangle]
pub unsafe extern "C" fn pdh_bank_code_bytes(bank: *const PdhBank) -> usize {
    if bank.is_null() {
        return 0;
    }
    (*(bank as *const PartModelBank)).code_bits().div_ceil(8)
}

/// Encode one 128x64 RGB image. `pixels` holds 3*128*64 doubles in [0,1],
/// channel-major (all red rows, then green, then blue). The packed code is
/// written to `code_out` (little-endian bit order), which must hold at least
/// `pdh_bank_code_bytes(bank)` bytes.
///
/// # Safety
/// `bank` must be a live pointer from `pdh_bank_load`; `pixels` must point to
/// 3*128*64 doubles; `code_out` must point to `code_out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pdh_bank_encode(
    bank: *const PdhBank,
    pixels: *const f64,
    code_out: *mut u8,
    code_out_len: usize,
) -> PdhStatus {
    if bank.is_null() || pixels.is_null() || code_out.is_null() {
        set_error("NULL argument to pdh_bank_encode");
        return PdhStatus::NullArgument;
    }
    let bank = &*(bank as *const PartModelBank);
    let need = bank.code_bits().div_ceil(8);
    if code_out_len < need {
        set_error("output buffer too small for the code");
        return PdhStatus::InvalidArgument;
    }
    let n = 3 * INGEST_HEIGHT * INGEST_WIDTH;
    let image = PersonImage {
        pixels: std::slice::from_raw_parts(pixels, n).to_vec(),
        height: INGEST_HEIGHT,
        width: INGEST_WIDTH,
        identity: None,
        camera: 1,
        source_id: String::from("ffi"),
    };
    match bank.encode_image(&image) {
        Ok(code) => {
            let bytes = code.to_bytes();
            ptr::copy_nonoverlapping(bytes.as_ptr(), code_out, bytes.len());
            PdhStatus::Ok
        }
        Err(e) => fail(e),
    }
}

// -- index -------------------------------------------------------------------

/// Load a PDHCODE1 code file as a searchable index. NULL on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pdh_index_load(path: *const c_char) -> *mut PdhIndex {
    let Ok(path) = path_from_c(path) else {
        return ptr::null_mut();
    };
    match read_codes_file(&path) {
        Ok(index) => Box::into_raw(Box::new(index)) as *mut PdhIndex,
        Err(e) => {
            fail(e);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `index` must be NULL or a pointer returned by `pdh_index_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdh_index_free(index: *mut PdhIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index as *mut CodeIndex));
    }
}

/// # Safety
/// `index` must be NULL or a live pointer from `pdh_index_load`.
#[no_mangle]
pub unsafe extern "C" fn pdh_index_len(index: *const PdhIndex) -> usize {
    if index.is_null() {
        return 0;
    }
    (*(index as *const CodeIndex)).len()
}

/// # Safety
/// `index` must be NULL or a live pointer from `pdh_index_load`.
#[no_mangle]
pub unsafe extern "C" fn pdh_index_code_bits(index: *const PdhIndex) -> u32 {
    if index.is_null() {
        return 0;
    }
    (*(index as *const CodeIndex)).bit_length() as u32
}

/// Rank the index against a query code and return the top-k entries.
/// `code` holds ceil(code_bits/8) bytes in little-endian bit order.
/// `out_indices` and `out_distances` must each hold `k` entries; the number
/// actually written (min(k, index size)) lands in `out_count`.
///
/// # Safety
/// All pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn pdh_index_top_k(
    index: *const PdhIndex,
    code: *const u8,
    code_bits: u32,
    k: usize,
    out_indices: *mut u32,
    out_distances: *mut u32,
    out_count: *mut usize,
) -> PdhStatus {
    if index.is_null() || code.is_null() || out_indices.is_null() || out_distances.is_null()
        || out_count.is_null()
    {
        set_error("NULL argument to pdh_index_top_k");
        return PdhStatus::NullArgument;
    }
    if k == 0 {
        set_error("k must be at least 1");
        return PdhStatus::InvalidArgument;
    }
    let index = &*(index as *const CodeIndex);
    let nbytes = (code_bits as usize).div_ceil(8);
    let bytes = std::slice::from_raw_parts(code, nbytes);
    let query = match BitCode::from_bytes(bytes, code_bits as usize) {
        Ok(q) => q,
        Err(e) => return fail(e),
    };
    match top_k(&query, index, k) {
        Ok(ranking) => {
            let n = ranking.len();
            ptr::copy_nonoverlapping(ranking.indices.as_ptr(), out_indices, n);
            ptr::copy_nonoverlapping(ranking.distances.as_ptr(), out_distances, n);
            *out_count = n;
            PdhStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Hamming distance between two packed codes of `bits` bits each. Returns
/// `u32::MAX` on invalid input.
///
/// # Safety
/// `a` and `b` must each point to ceil(bits/8) readable bytes.
#[no_mangle]
pub unsafe extern "C" fn pdh_hamming(a: *const u8, b: *const u8, bits: u32) -> u32 {
    if a.is_null() || b.is_null() || bits == 0 {
        set_error("invalid argument to pdh_hamming");
        return u32::MAX;
    }
    let nbytes = (bits as usize).div_ceil(8);
    let parse = |p: *const u8| {
        BitCode::from_bytes(std::slice::from_raw_parts(p, nbytes), bits as usize)
    };
    match (parse(a), parse(b)) {
        (Ok(ca), Ok(cb)) => hamming(&ca, &cb).unwrap_or(u32::MAX),
        _ => {
            set_error("could not parse packed code");
            u32::MAX
        }
    }
}
