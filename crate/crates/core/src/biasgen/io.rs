//! Columnar text format for bundles.
//!
//! `bundle.csv` holds one row per sample with columns
//! `s_0..s_{d_s-1}, b_0..b_{d_b-1}, label, group, bias_flag, split, forget`;
//! `bundle.json` holds the generator config and seed needed to rebuild the
//! typed bundle.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BiasgenError, DataBundle, GeneratorConfig, Result, Sample, Split};

pub const BUNDLE_CSV: &str = "bundle.csv";
pub const BUNDLE_META: &str = "bundle.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub generator: GeneratorConfig,
    pub seed: u64,
    pub num_classes: usize,
    pub d_s: usize,
    pub d_b: usize,
}

fn header(d_s: usize, d_b: usize) -> String {
    let mut cols: Vec<String> = (0..d_s).map(|i| format!("s_{i}")).collect();
    cols.extend((0..d_b).map(|i| format!("b_{i}")));
    cols.extend(["label", "group", "bias_flag", "split", "forget"].map(String::from));
    cols.join(",")
}

/// Writes the header line plus one row per `(sample, split, in_forget_set)`.
pub fn write_samples_csv<'a, W: Write>(
    out: W,
    d_s: usize,
    d_b: usize,
    rows: impl IntoIterator<Item = (&'a Sample, Split, bool)>,
) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", header(d_s, d_b))?;
    for (s, split, forget) in rows {
        for v in s.s.iter().chain(&s.b) {
            write!(w, "{v},")?;
        }
        writeln!(
            w,
            "{},{},{},{},{}",
            s.label,
            s.group,
            u8::from(s.bias_flag),
            split.as_str(),
            u8::from(forget)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: BufRead>(input: R, d_s: usize, d_b: usize) -> Result<Vec<(Sample, Split, bool)>> {
    let mut lines = input.lines();
    let expected = header(d_s, d_b);
    let first = lines.next().transpose()?;
    if first.as_deref() != Some(expected.as_str()) {
        return Err(BiasgenError::Format("missing or mismatched header line".into()));
    }
    let bad = |line: usize, what: &str| BiasgenError::Format(format!("line {line}: {what}"));
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let n = k + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d_s + d_b + 5 {
            return Err(bad(n, "wrong number of fields"));
        }
        let nums = fields[..d_s + d_b]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(n, "unparseable feature"))?;
        let int = |f: &str| f.parse::<usize>().map_err(|_| bad(n, "unparseable integer"));
        let flag = |f: &str| match f {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(n, "flag must be 0 or 1")),
        };
        let rest = &fields[d_s + d_b..];
        let split = match rest[3] {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            "counterfactual" => Split::Counterfactual,
            _ => return Err(bad(n, "unknown split")),
        };
        out.push((
            Sample {
                s: nums[..d_s].to_vec(),
                b: nums[d_s..].to_vec(),
                label: int(rest[0])?,
                group: int(rest[1])?,
                bias_flag: flag(rest[2])?,
            },
            split,
            flag(rest[4])?,
        ));
    }
    Ok(out)
}

pub fn save_bundle(bundle: &DataBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = BundleMeta {
        generator: bundle.config.clone(),
        seed: bundle.seed,
        num_classes: bundle.num_classes,
        d_s: bundle.d_s,
        d_b: bundle.d_b,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| BiasgenError::Format(e.to_string()))?;
    fs::write(dir.join(BUNDLE_META), json + "\n")?;

    let mut in_forget = vec![false; bundle.train.len()];
    for &i in &bundle.forget {
        in_forget[i] = true;
    }
    let rows = bundle
        .train
        .iter()
        .zip(in_forget)
        .map(|(s, f)| (s, Split::Train, f))
        .chain(bundle.val.iter().map(|s| (s, Split::Val, false)))
        .chain(bundle.test.iter().map(|s| (s, Split::Test, false)))
        .chain(bundle.counterfactual.iter().flatten().map(|s| (s, Split::Counterfactual, false)));
    write_samples_csv(File::create(dir.join(BUNDLE_CSV))?, bundle.d_s, bundle.d_b, rows)
}

pub fn load_bundle(dir: &Path) -> Result<DataBundle> {
    let meta: BundleMeta = serde_json::from_str(&fs::read_to_string(dir.join(BUNDLE_META))?)
        .map_err(|e| BiasgenError::Format(format!("{BUNDLE_META}: {e}")))?;
    let rows = read_samples_csv(BufReader::new(File::open(dir.join(BUNDLE_CSV))?), meta.d_s, meta.d_b)?;
    let mut bundle = DataBundle {
        config: meta.generator,
        seed: meta.seed,
        num_classes: meta.num_classes,
        d_s: meta.d_s,
        d_b: meta.d_b,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        retain: Vec::new(),
        forget: Vec::new(),
        counterfactual: None,
    };
    for (sample, split, forget) in rows {
        if sample.label >= bundle.num_classes {
            return Err(BiasgenError::Format(format!("label {} out of range", sample.label)));
        }
        match split {
            Split::Train => {
                let idx = bundle.train.len();
                if forget {
                    bundle.forget.push(idx);
                } else {
                    bundle.retain.push(idx);
                }
                bundle.train.push(sample);
            }
            Split::Val => bundle.val.push(sample),
            Split::Test => bundle.test.push(sample),
            Split::Counterfactual => bundle.counterfactual.get_or_insert_with(Vec::new).push(sample),
        }
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biasgen::{gen_patch_bias, PatchConfig};

    fn small() -> DataBundle {
        let c = PatchConfig {
            n_per_class: 30,
            num_classes: 3,
            d_s: 3,
            d_b: 2,
            ..Default::default()
        };
        gen_patch_bias(&c, 8).unwrap().with_counterfactual(1).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = small();
        save_bundle(&b, dir.path()).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn header_names_columns() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&small(), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(BUNDLE_CSV)).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "s_0,s_1,s_2,b_0,b_1,label,group,bias_flag,split,forget"
        );
    }

    #[test]
    fn malformed_row_rejected() {
        let text = format!("{}\n1,2,3,4,5,0,0,0,train\n", header(3, 2));
        assert!(read_samples_csv(text.as_bytes(), 3, 2).is_err());
    }
}
