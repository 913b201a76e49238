use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{read_params, write_params, ParamStore};
use crate::error::{invalid_arg, Result};
use crate::tasks::{ClassifierConfig, PointNetClassifier, RepsClassifier};

/// Architecture description stored next to the weights as `<weights>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelManifest {
    Reps { config: ClassifierConfig, classes: Vec<String> },
    Pointnet { num_classes: usize, classes: Vec<String> },
}

#[derive(Debug, Clone)]
pub enum SavedModel {
    Reps(RepsClassifier),
    PointNet(PointNetClassifier),
}

impl SavedModel {
    pub fn store(&self) -> &ParamStore {
        match self {
            SavedModel::Reps(m) => &m.store,
            SavedModel::PointNet(m) => &m.store,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Reps(_) => "reps",
            SavedModel::PointNet(_) => "pointnet",
        }
    }
}

fn manifest_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_model(weights: &Path, model: &SavedModel, classes: &[String]) -> Result<()> {
    let manifest = match model {
        SavedModel::Reps(m) => ModelManifest::Reps { config: m.config, classes: classes.to_vec() },
        SavedModel::PointNet(m) => {
            ModelManifest::Pointnet { num_classes: m.num_classes(), classes: classes.to_vec() }
        }
    };
    let file = std::fs::File::create(weights)?;
    write_params(BufWriter::new(file), model.store())?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(manifest_path(weights), json)?;
    Ok(())
}

/// Rebuilds the architecture from the manifest and loads the weights into it.
pub fn load_model(weights: &Path) -> Result<(SavedModel, Vec<String>)> {
    let manifest_file = manifest_path(weights);
    let text = std::fs::read_to_string(&manifest_file).map_err(|e| {
        crate::Error::InvalidArgument(format!("cannot read manifest {}: {e}", manifest_file.display()))
    })?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    let stored = read_params(BufReader::new(std::fs::File::open(weights)?))?;
    let (mut model, classes) = match manifest {
        ModelManifest::Reps { config, classes } => (SavedModel::Reps(RepsClassifier::new(config, 0)?), classes),
        ModelManifest::Pointnet { num_classes, classes } => {
            (SavedModel::PointNet(PointNetClassifier::new(num_classes, 0)?), classes)
        }
    };
    let store = match &mut model {
        SavedModel::Reps(m) => &mut m.store,
        SavedModel::PointNet(m) => &mut m.store,
    };
    if store.len() != stored.len() {
        return invalid_arg(format!(
            "weights hold {} tensors but the manifest describes {}",
            stored.len(),
            store.len()
        ));
    }
    store.load_from(&stored)?;
    Ok((model, classes))
}
