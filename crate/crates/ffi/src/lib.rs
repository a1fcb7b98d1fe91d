//! C ABI over the core library. Every function returns an [`LciStatus`];
//! on failure the message is available from [`lci_last_error`] on the same
//! thread. Strings handed out are NUL-terminated UTF-8 owned by the caller
//! and released with [`lci_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ledgerci::canonical::{canonical_encode, Digest};
use ledgerci::ledger::{Chain, ChainCheck};
use ledgerci::pipeline::{HomeError, LedgerHome};
use ledgerci::vulnscan::{
    compare_versions, parse_allowlist, parse_feed, parse_manifest, scan_manifest, SourceMode, Verdict,
};

#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LciStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    NotFound = 4,
    IntegrityViolation = 5,
    Io = 6,
    Panic = 7,
}

/// Source-URL policy for [`lci_scan`].
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LciSourceMode {
    Strict = 0,
    Permissive = 1,
}

/// Gate outcome written by [`lci_scan`].
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LciVerdict {
    Pass = 0,
    Halt = 1,
}

/// An opened ledger home: its configuration and the chain as loaded.
pub struct LciLedger {
    home: LedgerHome,
    chain: Chain,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LciStatus, String);

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, translating failures and panics into a status. The message
/// slot is cleared on entry.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LciStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LciStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside ledgerci".to_string());
            LciStatus::Panic
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(LciStatus::InvalidInput, message.into())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(LciStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(LciStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: non-null out-pointers are required to be valid and writable
    unsafe { p.as_mut() }.ok_or_else(|| Failure(LciStatus::NullArgument, format!("{name} is null")))
}

fn give_string(out: &mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| invalid(format!("output holds NUL: {e}")))?;
    *out = c.into_raw();
    Ok(())
}

fn home_failure(e: HomeError) -> Failure {
    match e {
        HomeError::NotInitialized(_) => Failure(LciStatus::NotFound, e.to_string()),
        HomeError::Corrupt(_) => Failure(LciStatus::IntegrityViolation, e.to_string()),
        HomeError::Io { .. } => Failure(LciStatus::Io, e.to_string()),
        HomeError::Network(_) => Failure(LciStatus::IntegrityViolation, e.to_string()),
    }
}

/// Message left by the last call on this thread, or null. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lci_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lci_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Re-encode arbitrary JSON text in canonical form.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lci_canonicalize(json: *const c_char, out: *mut *mut c_char) -> LciStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let bytes = canonical_encode(&value).map_err(|e| invalid(e.to_string()))?;
        give_string(out, String::from_utf8(bytes).expect("canonical JSON is UTF-8"))
    })
}

/// Lowercase hex SHA-256 of `len` bytes at `data`. `data` may be null
/// when `len` is 0.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lci_sha256_hex(data: *const u8, len: usize, out: *mut *mut c_char) -> LciStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let bytes = match (data.is_null(), len) {
            (_, 0) => &[][..],
            (true, _) => return Err(Failure(LciStatus::NullArgument, "data is null".into())),
            (false, _) => std::slice::from_raw_parts(data, len),
        };
        give_string(out, Digest::of(bytes).to_hex())
    })
}

/// Writes -1, 0 or 1 as `a` orders before, equal to or after `b`.
///
/// # Safety
/// `a` and `b` must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lci_compare_versions(a: *const c_char, b: *const c_char, out: *mut i32) -> LciStatus {
    guard(|| {
        let a = str_arg(a, "a")?;
        let b = str_arg(b, "b")?;
        *out_arg(out, "out")? = compare_versions(a, b) as i32;
        Ok(())
    })
}

/// Scan a `deps.json` manifest against a feed. `allowlist` is newline
/// separated URL prefixes and may be null; `mode` is an [`LciSourceMode`]. The canonical report goes to
/// `report_out`, the verdict to `verdict_out`.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings or null where
/// allowed; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn lci_scan(
    manifest_json: *const c_char,
    feed_json: *const c_char,
    threshold: u8,
    allowlist: *const c_char,
    mode: i32,
    report_out: *mut *mut c_char,
    verdict_out: *mut LciVerdict,
) -> LciStatus {
    guard(|| {
        let manifest = str_arg(manifest_json, "manifest_json")?;
        let feed = str_arg(feed_json, "feed_json")?;
        let allowlist = if allowlist.is_null() {
            Vec::new()
        } else {
            parse_allowlist(str_arg(allowlist, "allowlist")?)
        };
        let report_out = out_arg(report_out, "report_out")?;
        let verdict_out = out_arg(verdict_out, "verdict_out")?;
        let deps = parse_manifest(manifest.as_bytes(), "manifest").map_err(|e| invalid(e.to_string()))?;
        let feed = parse_feed(feed.as_bytes()).map_err(|e| invalid(e.to_string()))?;
        let mode = match mode {
            m if m == LciSourceMode::Strict as i32 => SourceMode::Strict,
            m if m == LciSourceMode::Permissive as i32 => SourceMode::Permissive,
            other => return Err(invalid(format!("unknown source mode {other}"))),
        };
        let report = scan_manifest(&deps, &feed, threshold, &allowlist, mode).map_err(|e| invalid(e.to_string()))?;
        give_string(
            report_out,
            String::from_utf8(report.to_canonical_bytes()).expect("UTF-8"),
        )?;
        *verdict_out = match report.verdict {
            Verdict::Pass => LciVerdict::Pass,
            Verdict::Halt => LciVerdict::Halt,
        };
        Ok(())
    })
}

/// Open the ledger home at `dir`, validating and loading its chain.
/// Release with [`lci_ledger_free`].
///
/// # Safety
/// `dir` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lci_ledger_open(dir: *const c_char, out: *mut *mut LciLedger) -> LciStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let out = out_arg(out, "out")?;
        let home = LedgerHome::new(Path::new(dir));
        let chain = home.load_chain().map_err(home_failure)?;
        *out = Box::into_raw(Box::new(LciLedger { home, chain }));
        Ok(())
    })
}

/// # Safety
/// `ledger` must come from [`lci_ledger_open`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lci_ledger_free(ledger: *mut LciLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// Number of blocks loaded at open time.
///
/// # Safety
/// `ledger` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lci_ledger_height(ledger: *const LciLedger, out: *mut u64) -> LciStatus {
    guard(|| {
        let ledger = ledger
            .as_ref()
            .ok_or_else(|| Failure(LciStatus::NullArgument, "ledger is null".into()))?;
        *out_arg(out, "out")? = ledger.chain.blocks().len() as u64;
        Ok(())
    })
}

/// Re-read the block files from disk. Writes 1 to `ok_out` when the chain
/// validates; otherwise 0 and the first bad height to `bad_height_out`.
/// Status stays `Ok` either way.
///
/// # Safety
/// `ledger` must be live; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn lci_ledger_verify(
    ledger: *const LciLedger,
    ok_out: *mut i32,
    bad_height_out: *mut u64,
) -> LciStatus {
    guard(|| {
        let ledger = ledger
            .as_ref()
            .ok_or_else(|| Failure(LciStatus::NullArgument, "ledger is null".into()))?;
        let ok_out = out_arg(ok_out, "ok_out")?;
        let bad_height_out = out_arg(bad_height_out, "bad_height_out")?;
        match ledger.home.verify().map_err(home_failure)? {
            ChainCheck::Ok => *ok_out = 1,
            ChainCheck::FirstBadHeight { height, fault } => {
                *ok_out = 0;
                *bad_height_out = height;
                set_error(format!("FirstBadHeight {height}: {fault}"));
            }
        }
        Ok(())
    })
}

/// Canonical JSON `{"value":<base64>,"version":{..}}` for `key` in the
/// world state as loaded. `NotFound` when the key is absent.
///
/// # Safety
/// `ledger` must be live; `key` a valid NUL-terminated string; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn lci_ledger_query(
    ledger: *const LciLedger,
    key: *const c_char,
    out: *mut *mut c_char,
) -> LciStatus {
    guard(|| {
        let ledger = ledger
            .as_ref()
            .ok_or_else(|| Failure(LciStatus::NullArgument, "ledger is null".into()))?;
        let key = str_arg(key, "key")?;
        let out = out_arg(out, "out")?;
        let entry = ledger
            .chain
            .state()
            .get(key)
            .ok_or_else(|| Failure(LciStatus::NotFound, format!("no key {key:?}")))?;
        let bytes = ledgerci::canonical::to_canonical(entry).map_err(|e| invalid(e.to_string()))?;
        give_string(out, String::from_utf8(bytes).expect("UTF-8"))
    })
}
