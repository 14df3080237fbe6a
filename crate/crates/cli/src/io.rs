//! File plumbing: atomic writes, schema and scenario sidecars, stream and
//! image loading.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmc_core::images::GrayImage;
use mmc_core::model::{self, validate_record};
use mmc_core::{ExamRecord, FeatureSchema};

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn schema_path(stream: &Path) -> PathBuf {
    sidecar(stream, ".schema.json")
}

pub fn scenario_path(stream: &Path) -> PathBuf {
    sidecar(stream, ".scenario.json")
}

pub fn read_schema(path: &Path) -> Result<FeatureSchema> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading schema {}", path.display()))?;
    let schema: FeatureSchema = serde_json::from_str(&text)
        .with_context(|| format!("parsing schema {}", path.display()))?;
    schema.check()?;
    Ok(schema)
}

/// Reads a line-delimited exam stream and checks every record against
/// `schema`.
pub fn read_stream(path: &Path, schema: &FeatureSchema) -> Result<Vec<ExamRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = model::read_stream(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?;
    records
        .into_iter()
        .map(|r| {
            let id = r.exam_id.clone();
            validate_record(r, schema).with_context(|| format!("{}: exam {id}", path.display()))
        })
        .collect()
}

pub fn stream_bytes(exams: &[ExamRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    model::write_stream(&mut buf, exams)?;
    Ok(buf)
}

/// Loads `*.pgm` images, and `*.txt` pixel dumps of the given size, from a
/// directory in file-name order.
pub fn read_image_dir(dir: &Path, width: usize, height: usize) -> Result<Vec<(String, GrayImage)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        let img = match ext {
            "pgm" => GrayImage::read_pgm(BufReader::new(fs::File::open(&p)?)),
            "txt" => GrayImage::read_text(fs::File::open(&p)?, width, height),
            _ => continue,
        }
        .with_context(|| format!("reading {}", p.display()))?;
        if (img.width, img.height) != (width, height) {
            bail!(
                "{} is {}x{}, expected {width}x{height}",
                p.display(),
                img.width,
                img.height
            );
        }
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, img));
    }
    if out.is_empty() {
        bail!("no .pgm or .txt images in {}", dir.display());
    }
    Ok(out)
}
