use std::path::PathBuf;
use std::sync::OnceLock;

use repurpose_core::{parse_movielens, RatingsDataset};

pub fn ml100k_dir() -> PathBuf {
    match std::env::var_os("ML100K_DIR") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k"),
    }
}

pub fn ml100k() -> &'static RatingsDataset {
    static DS: OnceLock<RatingsDataset> = OnceLock::new();
    DS.get_or_init(|| {
        let dir = ml100k_dir();
        parse_movielens(&dir).unwrap_or_else(|e| {
            panic!(
                "cannot load ml-100k from {} ({e}); set ML100K_DIR or run scripts/reconstruct_ml100k.py data/ml-100k",
                dir.display()
            )
        })
    })
}
