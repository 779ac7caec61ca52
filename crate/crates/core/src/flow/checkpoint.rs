//! Checkpoint files: a key/value text manifest plus a flat little-endian
//! `f64` weight blob in parameter order.
//!
//! ```text
//! format = dpi-flow-checkpoint/1
//! dim = 2
//! layers = 32
//! widths = 64,64,64,64,64
//! output_map = none
//! seed = 7
//! scale_clamp = 1.5
//! actnorm_initialized = true
//! params = 278400
//! weights = model.bin
//! perm.0 = 1,0
//! ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::model::{CouplingLayer, FlowConfig, FlowModel, OutputMap, Permutation};
use super::FlowError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FORMAT: &str = "dpi-flow-checkpoint/1";

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Renders the manifest text for `model` referring to `weights_name`.
pub fn manifest_text(model: &FlowModel, weights_name: &str) -> String {
    let c = model.config();
    let mut s = String::new();
    let _ = writeln!(s, "format = {FORMAT}");
    let _ = writeln!(s, "dim = {}", c.dim);
    let _ = writeln!(s, "layers = {}", c.n_layers);
    let _ = writeln!(s, "widths = {}", join(&c.widths));
    let _ = writeln!(s, "output_map = {}", c.output_map.as_str());
    let _ = writeln!(s, "seed = {}", c.seed);
    let _ = writeln!(s, "scale_clamp = {}", c.scale_clamp);
    let _ = writeln!(s, "actnorm_initialized = {}", model.actnorm_initialized());
    let _ = writeln!(s, "params = {}", model.num_params());
    let _ = writeln!(s, "weights = {weights_name}");
    for (i, (_, perm)) in model.layers().iter().enumerate() {
        let _ = writeln!(s, "perm.{i} = {}", join(perm.indices()));
    }
    s
}

pub fn weights_blob(model: &FlowModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * model.num_params());
    for p in model.params() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes `<path>` (manifest) and a sibling `.bin` weight file. Returns both paths.
pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<(PathBuf, PathBuf), FlowError> {
    let bin = path.with_extension("bin");
    let bin_name = bin
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| FlowError::Checkpoint(format!("bad checkpoint path {}", path.display())))?
        .to_string();
    fs::write(path, manifest_text(model, &bin_name))?;
    fs::write(&bin, weights_blob(model))?;
    Ok((path.to_path_buf(), bin))
}

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>, FlowError> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            FlowError::Checkpoint(format!("manifest line {}: expected `key = value`", no + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn field<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, FlowError> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| FlowError::Checkpoint(format!("manifest is missing `{key}`")))
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, FlowError> {
    field(map, key)?
        .parse()
        .map_err(|_| FlowError::Checkpoint(format!("manifest field `{key}` is malformed")))
}

fn parse_list(s: &str, key: &str) -> Result<Vec<usize>, FlowError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| FlowError::Checkpoint(format!("manifest field `{key}` is malformed")))
        })
        .collect()
}

/// Rebuilds a model from manifest text and the raw weight bytes.
pub fn model_from_parts(manifest: &str, blob: &[u8]) -> Result<FlowModel, FlowError> {
    let map = parse_manifest(manifest)?;
    if field(&map, "format")? != FORMAT {
        return Err(FlowError::Checkpoint(format!(
            "unsupported checkpoint format `{}`",
            field(&map, "format")?
        )));
    }
    let output_map = OutputMap::parse(field(&map, "output_map")?)
        .ok_or_else(|| FlowError::Checkpoint("unknown output_map".into()))?;
    let config = FlowConfig {
        dim: parse(&map, "dim")?,
        n_layers: parse(&map, "layers")?,
        widths: parse_list(field(&map, "widths")?, "widths")?,
        output_map,
        seed: parse(&map, "seed")?,
        scale_clamp: parse(&map, "scale_clamp")?,
    };
    config.validate()?;
    // Architecture only; every weight is overwritten from the blob below.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let perm = Permutation::from_indices(parse_list(field(&map, &format!("perm.{i}"))?, "perm")?)?;
        if perm.indices().len() != config.dim {
            return Err(FlowError::Checkpoint(format!("perm.{i} has the wrong length")));
        }
        let coupling = CouplingLayer::new(config.dim, &config.widths, config.scale_clamp, &mut rng);
        layers.push((coupling, perm));
    }
    let actnorm: bool = parse(&map, "actnorm_initialized")?;
    let mut model = FlowModel::from_parts(config, layers, actnorm);
    let declared: usize = parse(&map, "params")?;
    if declared != model.num_params() || blob.len() != 8 * declared {
        return Err(FlowError::Checkpoint(format!(
            "weight blob holds {} bytes, expected {} parameters",
            blob.len(),
            model.num_params()
        )));
    }
    let mut chunks = blob.chunks_exact(8);
    for p in model.params_mut() {
        for v in p.iter_mut() {
            let bytes: [u8; 8] = chunks.next().expect("length checked").try_into().expect("8 bytes");
            *v = f64::from_le_bytes(bytes);
        }
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<FlowModel, FlowError> {
    let manifest = fs::read_to_string(path)?;
    let map = parse_manifest(&manifest)?;
    let bin = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(field(&map, "weights")?);
    let blob = fs::read(bin)?;
    model_from_parts(&manifest, &blob)
}
