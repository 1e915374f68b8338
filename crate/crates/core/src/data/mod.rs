//! Corpus and alignment file formats, experiment configuration and the
//! synthetic permutation corpus.

mod config;
mod corpus;
mod pharaoh;
mod synthetic;

pub use config::{ExperimentConfig, Supervision, TrainMode};
pub use corpus::{read_lines, tokenize, write_lines, LengthFilter, ParallelCorpus};
pub use pharaoh::{
    parse_alignment_line, parse_gold_line, read_alignment_file, read_gold_file,
    write_alignment_file, write_gold_file,
};
pub use synthetic::{generate_synthetic_corpus, PermutationScheme, SyntheticCorpus, SyntheticSpec};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Atomic write of a whole string.
pub fn write_string_atomic(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(contents.as_bytes())?))
}
