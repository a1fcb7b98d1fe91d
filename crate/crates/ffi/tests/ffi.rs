use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ledgerci::fixtures::{fixture_feed, write_fixture, Fixture, MANIFEST};
use ledgerci::ordering::NetworkConfig;
use ledgerci::pipeline::LedgerHome;
use ledgerci_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { lci_string_free(p) };
    s
}

fn last_error() -> String {
    let p = lci_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn canonicalize_and_hash() {
    let mut out = ptr::null_mut();
    let status = unsafe { lci_canonicalize(c(r#"{ "b": [1, 2], "a": {"y": 1, "x": null} }"#).as_ptr(), &mut out) };
    assert_eq!(status, LciStatus::Ok);
    assert_eq!(take(out), r#"{"a":{"x":null,"y":1},"b":[1,2]}"#);
    assert!(lci_last_error().is_null());

    let status = unsafe { lci_canonicalize(c("{\"f\": 1.5}").as_ptr(), &mut out) };
    assert_eq!(status, LciStatus::InvalidInput);
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { lci_canonicalize(ptr::null(), &mut out) },
        LciStatus::NullArgument
    );

    unsafe { lci_sha256_hex(ptr::null(), 0, &mut out) };
    assert_eq!(
        take(out),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
    unsafe { lci_sha256_hex(b"abc".as_ptr(), 3, &mut out) };
    assert_eq!(
        take(out),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    assert_eq!(
        unsafe { lci_sha256_hex(ptr::null(), 1, &mut out) },
        LciStatus::NullArgument
    );
}

#[test]
fn versions_compare() {
    let mut o = 9;
    for (a, b, want) in [
        ("2.14.1", "2.15.0", -1),
        ("1.0", "1", 0),
        ("1a", "1", 1),
        ("2.0.1", "2.0.1", 0),
    ] {
        assert_eq!(
            unsafe { lci_compare_versions(c(a).as_ptr(), c(b).as_ptr(), &mut o) },
            LciStatus::Ok
        );
        assert_eq!(o, want, "{a} vs {b}");
    }
    let bad = [0xffu8, 0];
    let status = unsafe { lci_compare_versions(bad.as_ptr().cast(), c("1").as_ptr(), &mut o) };
    assert_eq!(status, LciStatus::InvalidUtf8);
}

#[test]
fn scan_gates_the_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let feed = c(&serde_json::to_string(&fixture_feed()).unwrap());
    let allow = c("https://repo1.maven.org/maven2/\n");
    for (fixture, want) in [
        (Fixture::Clean, LciVerdict::Pass),
        (Fixture::Vulnerable, LciVerdict::Halt),
    ] {
        write_fixture(dir.path(), fixture).unwrap();
        let manifest = c(&std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap());
        let mut report = ptr::null_mut();
        let mut verdict = LciVerdict::Pass;
        let status = unsafe {
            lci_scan(
                manifest.as_ptr(),
                feed.as_ptr(),
                70,
                allow.as_ptr(),
                LciSourceMode::Strict as i32,
                &mut report,
                &mut verdict,
            )
        };
        assert_eq!(status, LciStatus::Ok);
        assert_eq!(verdict, want);
        let report = take(report);
        assert_eq!(report.contains("CVE-2021-44228"), want == LciVerdict::Halt);
    }
    let mut report = ptr::null_mut();
    let mut verdict = LciVerdict::Pass;
    let status = unsafe {
        lci_scan(
            c("[]").as_ptr(),
            feed.as_ptr(),
            101,
            ptr::null(),
            LciSourceMode::Permissive as i32,
            &mut report,
            &mut verdict,
        )
    };
    assert_eq!(status, LciStatus::InvalidInput);
    assert!(last_error().contains("threshold"));
    let status = unsafe {
        lci_scan(
            c("[]").as_ptr(),
            feed.as_ptr(),
            70,
            ptr::null(),
            7,
            &mut report,
            &mut verdict,
        )
    };
    assert_eq!(status, LciStatus::InvalidInput);
}

fn ledger_home() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    LedgerHome::new(dir.path()).ensure(&NetworkConfig::default()).unwrap();
    dir
}

#[test]
fn ledger_handle_round_trip() {
    let dir = ledger_home();
    let mut ledger = ptr::null_mut();
    let path = c(dir.path().to_str().unwrap());
    assert_eq!(unsafe { lci_ledger_open(path.as_ptr(), &mut ledger) }, LciStatus::Ok);
    let mut height = 0;
    assert_eq!(unsafe { lci_ledger_height(ledger, &mut height) }, LciStatus::Ok);
    assert!(height >= 2);

    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { lci_ledger_query(ledger, c("lifecycle/provenance").as_ptr(), &mut out) },
        LciStatus::Ok
    );
    let entry: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert!(entry["value"].is_string());
    assert_eq!(
        unsafe { lci_ledger_query(ledger, c("nope").as_ptr(), &mut out) },
        LciStatus::NotFound
    );

    let (mut ok, mut bad) = (0, 0);
    assert_eq!(unsafe { lci_ledger_verify(ledger, &mut ok, &mut bad) }, LciStatus::Ok);
    assert_eq!(ok, 1);
    let block = dir.path().join("ledger/cicd/blocks/1.json");
    let mut bytes = std::fs::read(&block).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&block, bytes).unwrap();
    assert_eq!(unsafe { lci_ledger_verify(ledger, &mut ok, &mut bad) }, LciStatus::Ok);
    assert_eq!((ok, bad), (0, 1));
    assert!(last_error().starts_with("FirstBadHeight 1"));
    unsafe { lci_ledger_free(ledger) };

    let mut again = ptr::null_mut();
    assert_eq!(
        unsafe { lci_ledger_open(path.as_ptr(), &mut again) },
        LciStatus::IntegrityViolation
    );
    assert!(again.is_null());
    let empty = tempfile::tempdir().unwrap();
    let empty = c(empty.path().to_str().unwrap());
    assert_eq!(
        unsafe { lci_ledger_open(empty.as_ptr(), &mut again) },
        LciStatus::NotFound
    );
    assert_eq!(
        unsafe { lci_ledger_height(ptr::null(), &mut height) },
        LciStatus::NullArgument
    );
    unsafe { lci_ledger_free(ptr::null_mut()) };
    unsafe { lci_string_free(ptr::null_mut()) };
}

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

/// Directory holding this profile's build outputs (`target/<profile>`).
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "ledgerci.h"

int main(void) {
    char *out = NULL;
    if (lci_sha256_hex((const uint8_t *)"abc", 3, &out) != LCI_STATUS_OK) return 1;
    int same = strcmp(out, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad") == 0;
    lci_string_free(out);
    if (!same) return 2;
    int32_t order = 0;
    if (lci_compare_versions("2.14.1", "2.15.0", &order) != LCI_STATUS_OK || order != -1) return 3;
    if (lci_canonicalize("{\"x\": 0.5}", &out) != LCI_STATUS_INVALID_INPUT) return 4;
    if (lci_last_error() == NULL) return 5;
    LciLedger *ledger = NULL;
    if (lci_ledger_open("/nonexistent-ledger-home", &ledger) != LCI_STATUS_NOT_FOUND) return 6;
    puts("ok");
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = crate_dir().join("include");
    assert!(header_dir.join("ledgerci.h").is_file());
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();

    let syntax = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header_dir)
        .arg(&src)
        .output()
        .expect("a C compiler is available");
    assert!(syntax.status.success(), "{}", String::from_utf8_lossy(&syntax.stderr));

    let profile = profile_dir();
    let lib = [
        profile.join("libledgerci_ffi.a"),
        profile.join("deps/libledgerci_ffi.a"),
    ]
    .into_iter()
    .find(|p| p.is_file())
    .expect("static library built alongside the tests");
    let exe = work.path().join("main");
    let link = Command::new("cc")
        .args(["-std=c99", "-I"])
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(link.status.success(), "{}", String::from_utf8_lossy(&link.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout), "ok\n");
}
