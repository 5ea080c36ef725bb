//! Compiles and runs a C program against the generated header and the
//! shared library. Skipped when no C compiler is on PATH.

use std::path::{Path, PathBuf};
use std::process::Command;

use nmst::checkpoint::{save_checkpoint, DataRecord, ModelCheckpoint};
use nmst::net::{Architecture, NeuralModel};
use nmst::{Head, HeadKind, Vocabulary};

const PROGRAM: &str = r#"
#include <stdio.h>
#include "nmst.h"

int main(int argc, char **argv) {
    NmstModel *m = NULL;
    if (nmst_model_load(argv[1], &m) != NMST_STATUS_OK) {
        fprintf(stderr, "%s\n", nmst_last_error());
        return 1;
    }
    uint32_t ctx[2] = {1, 2};
    NmstGeneration *g = NULL;
    if (nmst_generate(m, ctx, 2, "beam:2", 100, 0, &g) != NMST_STATUS_OK) {
        fprintf(stderr, "%s\n", nmst_last_error());
        return 1;
    }
    size_t n = 0;
    const uint32_t *toks = nmst_generation_tokens(g, &n);
    printf("%zu %d %u\n", n, nmst_generation_terminated(g), toks[n - 1]);
    if (nmst_generate(m, ctx, 2, "beam:0", 100, 0, &g) != NMST_STATUS_DECODER_SPEC) return 2;
    nmst_generation_free(g);
    nmst_model_free(m);
    return 0;
}
"#;

fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let head = Head::new(HeadKind::Nmst, Some(0.2)).unwrap();
    let model = NeuralModel::new(Vocabulary::synthetic(5).unwrap(), Architecture::default(), head, 1).unwrap();
    let ckpt_path = dir.path().join("m.nmst");
    save_checkpoint(
        &ckpt_path,
        &ModelCheckpoint {
            model,
            data: DataRecord::default(),
        },
    )
    .unwrap();

    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let libs = lib_dir();
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&libs)
        .arg("-lnmst_ffi")
        .arg(format!("-Wl,-rpath,{}", libs.display()))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run = Command::new(&exe).arg(&ckpt_path).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(fields[1..], ["1", "0"], "{stdout}");
    // t_half(0.2) = 4; a width-2 beam finishes within t_half + 2.
    assert!(fields[0].parse::<usize>().unwrap() <= 6, "{stdout}");
}
