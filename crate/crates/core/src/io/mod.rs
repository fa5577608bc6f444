//! File formats: PGM images, test directories, CSV results, run manifests.

pub mod csv;
pub mod manifest;
pub mod pgm;
pub mod testdir;

pub use csv::{
    csv_string, curve_csv_string, g6, results_csv_string, trace_csv_string, write_csv,
    write_curve, write_results, write_trace_csv,
};
pub use manifest::{sha256_file, sha256_hex, RunManifest};
pub use pgm::{pgm_bytes, read_pgm, write_pgm};
pub use testdir::{load_test, render_test_to, save_test};
