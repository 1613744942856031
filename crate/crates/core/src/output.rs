//! Writing traces and plots to disk. Every file is written to a temporary
//! sibling and renamed into place, so readers never see partial output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::metrics::Trace;
use crate::plot::Plot;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "CEDAS_OUT";
/// Output directory used when neither `--out` nor [`OUT_ENV`] is given.
pub const DEFAULT_OUT: &str = "out";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_trace(dir: &Path, stem: &str, trace: &Trace) -> io::Result<PathBuf> {
    let path = dir.join(format!("{stem}.csv"));
    write_atomic(&path, trace.to_csv_string().as_bytes())?;
    Ok(path)
}

pub fn write_plot(dir: &Path, stem: &str, plot: &Plot) -> io::Result<PathBuf> {
    let path = dir.join(format!("{stem}.svg"));
    write_atomic(&path, plot.to_svg().as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
