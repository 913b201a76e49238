use std::path::{Path, PathBuf};

use super::{read_cloud, write_cloud, CloudFormat};
use crate::error::{invalid_arg, Result};
use crate::tasks::LabeledCloud;

/// Labelled clouds plus the class names their labels index.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clouds: Vec<LabeledCloud>,
    pub classes: Vec<String>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Reads `root/<split>/<class>/*.{xyz,ply}`; classes are labelled in
/// lexicographic order of their directory names.
pub fn load_dataset_dir(root: &Path, split: &str) -> Result<Dataset> {
    let base = root.join(split);
    if !base.is_dir() {
        return invalid_arg(format!("dataset split directory {} does not exist", base.display()));
    }
    let mut classes = Vec::new();
    let mut clouds = Vec::new();
    for class_dir in sorted_entries(&base)?.into_iter().filter(|p| p.is_dir()) {
        let label = classes.len();
        classes.push(class_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string());
        for file in sorted_entries(&class_dir)? {
            if CloudFormat::from_path(&file).is_err() {
                continue;
            }
            let cloud = read_cloud(&file, None).map_err(|e| match e {
                crate::Error::Parse { line, message } => crate::Error::Parse {
                    line,
                    message: format!("{}: {message}", file.display()),
                },
                other => other,
            })?;
            clouds.push(LabeledCloud { cloud, label });
        }
    }
    if clouds.is_empty() {
        return invalid_arg(format!("no clouds found under {}", base.display()));
    }
    Ok(Dataset { clouds, classes })
}

/// Writes clouds as `root/<split>/<class>/<index>.xyz`.
pub fn write_dataset_dir(root: &Path, split: &str, data: &Dataset) -> Result<()> {
    for (i, item) in data.clouds.iter().enumerate() {
        let Some(class) = data.classes.get(item.label) else {
            return invalid_arg(format!("label {} has no class name", item.label));
        };
        let dir = root.join(split).join(class);
        std::fs::create_dir_all(&dir)?;
        write_cloud(&dir.join(format!("{i:05}.xyz")), &item.cloud, Some(CloudFormat::Xyz))?;
    }
    Ok(())
}
