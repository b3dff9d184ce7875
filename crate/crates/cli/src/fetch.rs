//! `ff fetch-data`: download the canonical MNIST and CIFAR-10 archives.

use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::config::DatasetName;
use crate::{CliError, Result};

pub const MNIST_BASE: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";
pub const CIFAR_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

fn get(url: &str) -> Result<impl Read> {
    let resp = ureq::get(url).call().map_err(|e| CliError::Network(format!("{url}: {e}")))?;
    Ok(resp.into_body().into_reader())
}

/// Fetch the gzipped IDX files into `dir`; the loaders read `.gz` directly.
pub fn fetch_mnist(dir: &Path, base: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    for name in MNIST_FILES {
        if dir.join(name).is_file() {
            continue;
        }
        let path = dir.join(format!("{name}.gz"));
        let mut body = get(&format!("{}/{name}.gz", base.trim_end_matches('/')))?;
        let mut f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        io::copy(&mut body, &mut f).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Stream the tarball and keep only the `*.bin` batch files, flattened into `dir`.
pub fn extract_cifar(archive: impl Read, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tar = tar::Archive::new(GzDecoder::new(archive));
    let mut written = Vec::new();
    let entries = tar.entries().map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.path().ok().and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()));
        let Some(name) = name.filter(|n| n.ends_with(".bin")) else {
            continue;
        };
        let path = dir.join(&name);
        let mut f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        io::copy(&mut entry, &mut f).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn fetch_cifar(dir: &Path, url: &str) -> Result<Vec<PathBuf>> {
    if dir.join("test_batch.bin").is_file() {
        return Ok(Vec::new());
    }
    extract_cifar(get(url)?, dir)
}

pub fn fetch(root: &Path, which: &[DatasetName], mnist_base: &str, cifar_url: &str) -> Result<Vec<PathBuf>> {
    let mut all = Vec::new();
    for &d in which {
        let dir = root.join(d.dir_name());
        all.extend(match d {
            DatasetName::Mnist => fetch_mnist(&dir, mnist_base)?,
            DatasetName::Cifar10 => fetch_cifar(&dir, cifar_url)?,
        });
    }
    Ok(all)
}
