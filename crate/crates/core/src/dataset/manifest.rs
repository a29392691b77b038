//! Sidecar manifest: UTF-8 `key=value` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{GenerationConfig, NormalizationSpec, Scale, SplitPreset, SplitSpec, DT, STEPS};
use crate::fem::Material;
use crate::{Error, Result};

/// Scale applied to nodal forces before they enter the network.
pub const FORCE_SCALE: f64 = 1e-4;
/// Characteristic acceleration used to nondimensionalize the equilibrium residual, m/s².
pub const G_CHAR: f64 = 9.81;

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub master_seed: u64,
    pub scale: Scale,
    pub sample_count: usize,
    pub edge_length: f64,
    pub jitter: f64,
    pub material: Material,
    pub force_scale: f64,
    pub g_char: f64,
    pub normalization: NormalizationSpec,
    pub split: SplitSpec,
}

impl Manifest {
    pub fn new(
        config: &GenerationConfig,
        scale: Scale,
        sample_count: usize,
        normalization: NormalizationSpec,
        split: SplitSpec,
    ) -> Self {
        Self {
            master_seed: config.seed,
            scale,
            sample_count,
            edge_length: config.edge_length,
            jitter: config.perturbation.jitter,
            material: config.material,
            force_scale: FORCE_SCALE,
            g_char: G_CHAR,
            normalization,
            split,
        }
    }

    /// `<container>.manifest`
    pub fn path_for(container: &Path) -> PathBuf {
        let mut s = container.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }

    pub fn to_text(&self) -> String {
        let join_f = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let join_i = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("format", "SPND".into());
        kv("version", "1".into());
        kv("master_seed", self.master_seed.to_string());
        kv("scale", self.scale.to_string());
        kv("sample_count", self.sample_count.to_string());
        kv("steps", STEPS.to_string());
        kv("dt", DT.to_string());
        kv("edge_length", self.edge_length.to_string());
        kv("jitter", self.jitter.to_string());
        kv("youngs_modulus", self.material.youngs_modulus.to_string());
        kv("poisson_ratio", self.material.poisson_ratio.to_string());
        kv("density", self.material.density.to_string());
        kv("thickness", self.material.thickness.to_string());
        kv("force_scale", self.force_scale.to_string());
        kv("g_char", self.g_char.to_string());
        kv("norm_min", join_f(&self.normalization.min));
        kv("norm_max", join_f(&self.normalization.max));
        kv("split_preset", self.split.preset.to_string());
        kv("split_train", join_i(&self.split.train));
        kv("split_val", join_i(&self.split.val));
        kv("split_test", join_i(&self.split.test));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("manifest", m);
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {} is not key=value", lineno + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| bad(format!("missing key `{k}`")));
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::format("manifest", format!("bad value for `{k}`: {v}")))
        }
        let f = |k: &str| -> Result<f64> { num(k, get(k)?) };
        let list = |k: &str| -> Result<Vec<usize>> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| num(k, x)).collect()
        };
        let triple = |k: &str| -> Result<[f64; 3]> {
            let v: Vec<f64> = get(k)?.split(',').map(|x| num(k, x)).collect::<Result<_>>()?;
            v.try_into().map_err(|_| bad(format!("`{k}` needs three values")))
        };
        if get("format")? != "SPND" {
            return Err(bad("format must be SPND".into()));
        }
        let normalization = NormalizationSpec {
            min: triple("norm_min")?,
            max: triple("norm_max")?,
        };
        Ok(Self {
            master_seed: num("master_seed", get("master_seed")?)?,
            scale: get("scale")?.parse()?,
            sample_count: num("sample_count", get("sample_count")?)?,
            edge_length: f("edge_length")?,
            jitter: f("jitter")?,
            material: Material {
                youngs_modulus: f("youngs_modulus")?,
                poisson_ratio: f("poisson_ratio")?,
                density: f("density")?,
                thickness: f("thickness")?,
            },
            force_scale: f("force_scale")?,
            g_char: f("g_char")?,
            normalization,
            split: SplitSpec {
                preset: get("split_preset")?.parse::<SplitPreset>()?,
                train: list("split_train")?,
                val: list("split_val")?,
                test: list("split_test")?,
            },
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
