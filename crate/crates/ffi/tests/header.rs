//! The generated header declares every exported symbol and compiles as C.

use std::path::Path;
use std::process::Command;

const EXPORTS: &[&str] = &[
    "adired_last_error_message",
    "adired_disnet_load",
    "adired_disnet_free",
    "adired_disnet_grid_size",
    "adired_disnet_num_classes",
    "adired_dismap_compute",
    "adired_normalize_map",
    "adired_select_regions",
    "adired_region_set_len",
    "adired_region_set_get",
    "adired_region_set_free",
    "adired_svm_load",
    "adired_svm_num_classes",
    "adired_svm_dim",
    "adired_svm_predict",
    "adired_svm_label",
    "adired_svm_free",
];

fn header() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/adired.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in EXPORTS {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exported = src.matches("pub unsafe extern \"C\" fn").count();
    assert_eq!(exported, EXPORTS.len());
    for ty in ["AdiredStatus", "AdiredPatch", "AdiredDisNet", "AdiredRegionSet", "AdiredSvm"] {
        assert!(text.contains(ty), "{ty} missing from header");
    }
}

#[test]
fn header_compiles_when_a_c_compiler_is_present() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"adired.h\"\nint main(void) {\n  AdiredPatch p = {0};\n  AdiredStatus s = adired_normalize_map(0, 0, 0);\n  \
         return (int)p.side + (s == ADIRED_STATUS_OK);\n}\n",
    )
    .unwrap();
    let include = header().parent().unwrap().to_path_buf();
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(status.success(), "header failed to compile");
}
