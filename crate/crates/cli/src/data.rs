use std::path::{Path, PathBuf};

use ff_core::datasets::{load_cifar10, load_mnist, ChannelStats, Dataset};
use ff_core::FfError;

use crate::config::{DatasetName, DATA_DIR_ENV};
use crate::{CliError, Result};

/// Data root: explicit setting, then `$FF_DATA_DIR`, then `./data`.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("data"),
    }
}

/// `root/<dataset>` when it exists, otherwise `root` itself.
pub fn dataset_dir(root: &Path, name: DatasetName) -> Result<PathBuf> {
    if !root.is_dir() {
        return Err(CliError::Ff(FfError::Data(format!(
            "data directory {} does not exist (set --data-dir or {DATA_DIR_ENV}, or run `ff fetch-data`)",
            root.display()
        ))));
    }
    let nested = root.join(name.dir_name());
    Ok(if nested.is_dir() { nested } else { root.to_path_buf() })
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub dir: PathBuf,
}

/// Load both splits, optionally standardise with training-set channel
/// statistics, then truncate to the requested subset sizes.
pub fn load(
    name: DatasetName,
    root: Option<&Path>,
    standardize: bool,
    train_subset: Option<usize>,
    test_subset: Option<usize>,
) -> Result<Splits> {
    let dir = dataset_dir(&data_root(root), name)?;
    let (mut train, mut test) = match name {
        DatasetName::Mnist => load_mnist(&dir)?,
        DatasetName::Cifar10 => load_cifar10(&dir)?,
    };
    if standardize {
        let stats = ChannelStats::compute(&train);
        train = train.standardized(&stats)?;
        test = test.standardized(&stats)?;
    }
    if let Some(n) = train_subset {
        train = train.take(n.min(train.len()))?;
    }
    if let Some(n) = test_subset {
        test = test.take(n.min(test.len()))?;
    }
    Ok(Splits { train, test, dir })
}
