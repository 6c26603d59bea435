//! BagPack: `manifest.jsonl` with one JSON object per bag plus one file of
//! little-endian `f64` values (row-major `K×d`) per bag.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bag, BagDataset, Split};
use crate::autograd::Tensor;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub bag_id: String,
    pub label: u8,
    pub n_instances: usize,
    pub dim: usize,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_labels: Option<Vec<u8>>,
}

pub fn write_bagpack(ds: &BagDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest =
        BufWriter::new(File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
    for (i, bag) in ds.bags.iter().enumerate() {
        let file = format!("bag-{i:06}.f64");
        let entry = ManifestEntry {
            bag_id: bag.bag_id.clone(),
            label: bag.label,
            n_instances: bag.len(),
            dim: bag.dim(),
            file: file.clone(),
            instance_labels: bag.instance_labels.clone(),
        };
        let line = serde_json::to_string(&entry).expect("manifest entry serialises");
        writeln!(manifest, "{line}").map_err(|e| Error::io(&manifest_path, e))?;

        let path = dir.join(&file);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        for v in bag.instances.data() {
            w.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    if !ds.provenance.is_null() {
        let path = dir.join(PROVENANCE_FILE);
        let text = serde_json::to_string_pretty(&ds.provenance).expect("json value");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_bagpack(dir: &Path, split: Split) -> Result<BagDataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let reader =
        BufReader::new(File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
    let mut bags = Vec::new();
    let mut dim = None;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format(&manifest_path, format!("line {}: {e}", line_no + 1)))?;
        if *dim.get_or_insert(entry.dim) != entry.dim {
            return Err(Error::format(
                &manifest_path,
                format!(
                    "bag {} has dim {}, earlier bags have {}",
                    entry.bag_id,
                    entry.dim,
                    dim.unwrap()
                ),
            ));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = entry.n_instances * entry.dim * 8;
        if bytes.len() != expected {
            return Err(Error::format(
                &path,
                format!(
                    "bag {}: manifest declares {}×{} values ({expected} bytes), file holds {} bytes",
                    entry.bag_id,
                    entry.n_instances,
                    entry.dim,
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let x = Tensor::matrix(entry.n_instances, entry.dim, data)?;
        let bag = Bag::new(entry.bag_id, x, entry.label, entry.instance_labels)
            .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        bags.push(bag);
    }
    let prov_path = dir.join(PROVENANCE_FILE);
    let provenance = match fs::read_to_string(&prov_path) {
        Ok(text) => {
            serde_json::from_str(&text).map_err(|e| Error::format(&prov_path, e.to_string()))?
        }
        Err(_) => serde_json::Value::Null,
    };
    BagDataset::new(bags, split, provenance)
}
