use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::missing_fields;
use crate::data::{gen_hierarchical, gen_shortcut, write_columnar, Dataset, HierarchicalSpec, ShortcutSpec};
use crate::error::{Error, Result};

pub const DATA_SPEC_SCHEMA_VERSION: u32 = 1;

/// A generator invocation: which generator, its parameters and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpecKind {
    Hierarchical {
        #[serde(flatten)]
        spec: HierarchicalSpec,
        /// Also write a test split with this many samples per class.
        #[serde(default)]
        test_per_class: Option<usize>,
    },
    Shortcut {
        #[serde(flatten)]
        spec: ShortcutSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(flatten)]
    pub kind: DataSpecKind,
}

const COMMON: [&str; 3] = ["schema_version", "kind", "seed"];
const HIERARCHICAL: [&str; 3] = ["classes", "superclusters", "n_per_class"];
const SHORTCUT: [&str; 2] = ["n_train", "n_test"];

impl DataSpec {
    /// Parses a spec, listing every missing required field at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let mut missing = missing_fields(&value, &COMMON);
        match value.get("kind").and_then(Value::as_str) {
            Some("hierarchical") => missing.extend(missing_fields(&value, &HIERARCHICAL)),
            Some("shortcut") => missing.extend(missing_fields(&value, &SHORTCUT)),
            _ => {}
        }
        if !missing.is_empty() {
            return Err(Error::Schema { missing });
        }
        if value["schema_version"].as_u64() != Some(DATA_SPEC_SCHEMA_VERSION as u64) {
            return Err(Error::Version(format!(
                "data spec schema {}, expected {DATA_SPEC_SCHEMA_VERSION}",
                value["schema_version"]
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Named splits in file order.
    pub fn generate(&self) -> Result<Vec<(&'static str, Dataset)>> {
        match &self.kind {
            DataSpecKind::Hierarchical { spec, test_per_class } => {
                let data = gen_hierarchical(spec, self.seed)?;
                let mut out = vec![];
                if let Some(n) = test_per_class {
                    out.push(("test", data.test_split(*n)));
                }
                out.insert(0, ("train", data.dataset));
                Ok(out)
            }
            DataSpecKind::Shortcut { spec } => {
                let data = gen_shortcut(spec, self.seed)?;
                Ok(vec![("train", data.train), ("test", data.test)])
            }
        }
    }
}

/// Writes each generated split to `<out>/<split>.csv` in the columnar format.
pub fn generate_to(spec: &DataSpec, out: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let splits = spec.generate()?;
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::new();
    for (name, data) in &splits {
        let path = out.join(format!("{name}.csv"));
        if path.exists() && !force {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                path.display()
            )));
        }
        let file = std::fs::File::create(&path)?;
        write_columnar(data, BufWriter::new(file))?;
        paths.push(path);
    }
    Ok(paths)
}
