use std::collections::BTreeMap;

use anyhow::{bail, Context};

/// Parses repeated `--set key=value` pairs into a scenario override map.
pub fn parse_overrides(pairs: &[String]) -> anyhow::Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let Some((key, value)) = pair.split_once('=') else {
            bail!("override `{pair}` must look like key=value");
        };
        let key = key.trim();
        if key.is_empty() {
            bail!("override `{pair}` has an empty key");
        }
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("override `{pair}` has a non-numeric value"))?;
        map.insert(key.to_string(), value);
    }
    Ok(map)
}

/// Seed fallback from the environment, used when no --seed flag is given.
pub fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var("MBI_SEED") {
        Ok(raw) => {
            let seed = raw
                .trim()
                .parse::<u64>()
                .with_context(|| format!("MBI_SEED=`{raw}` is not a non-negative integer"))?;
            Ok(Some(seed))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(err) => Err(err.into()),
    }
}

/// Seed precedence: explicit flag, then an explicit `--set seed=`, then
/// MBI_SEED, then the scenario default.
pub fn apply_seed(
    overrides: &mut BTreeMap<String, f64>,
    flag: Option<u64>,
) -> anyhow::Result<()> {
    if let Some(seed) = flag {
        overrides.insert("seed".to_string(), seed as f64);
    } else if !overrides.contains_key("seed") {
        if let Some(seed) = env_seed()? {
            overrides.insert("seed".to_string(), seed as f64);
        }
    }
    Ok(())
}
