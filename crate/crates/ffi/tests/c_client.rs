//! Compiles a small C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "mvsmooth.h"

int main(void) {
    MvsGraph *g = NULL;
    if (mvs_graph_spain47(&g) != MVS_STATUS_OK) return 1;
    if (mvs_graph_num_areas(g) != 47) return 2;
    double sigma[4] = {0.04, 0.0, 0.0, 0.04};
    double lam = 0.5, a = 0.0, b = 0.0;
    if (mvs_tcv(g, MVS_PRIOR_LCAR, &lam, 1, sigma, 2, &a, NULL) != MVS_STATUS_OK) return 3;
    sigma[1] = sigma[2] = 0.7 * 0.04;
    if (mvs_tcv(g, MVS_PRIOR_LCAR, &lam, 1, sigma, 2, &b, NULL) != MVS_STATUS_OK) return 4;
    if (fabs(b / a - 0.51) > 1e-12) return 5;
    if (mvs_tcv(g, 7, &lam, 1, sigma, 2, &a, NULL) != MVS_STATUS_INVALID_ARGUMENT) return 6;
    char msg[128];
    if (mvs_last_error_message(msg, sizeof msg) == 0) return 7;
    mvs_graph_free(g);
    printf("ok %.4f\n", b / a);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps/
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libmvsmooth_ffi.a");
    if !lib.exists() {
        let status = Command::new(env!("CARGO"))
            .args(["build", "-p", "mvsmooth-ffi", "--lib"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let bin = dir.path().join("client");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok 0.5100");
}
