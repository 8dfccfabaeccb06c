//! Synthetic attribute items, modification texts, triplets, and the frozen
//! stub encoders that stand in for learned image/text encoders.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{val_err, Error, Result};

pub const ENCODERS_MAGIC: &[u8; 4] = b"CGL1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct AttributeDef {
    pub name: String,
    pub values: Vec<String>,
}

impl AttributeDef {
    pub fn cardinality(&self) -> usize {
        self.values.len()
    }
}

pub fn default_schema() -> Vec<AttributeDef> {
    let def = |name: &str, values: &[&str]| AttributeDef {
        name: name.to_string(),
        values: values.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        def(
            "color",
            &["yellow", "black", "red", "blue", "green", "brown", "orange", "pink"],
        ),
        def(
            "pattern",
            &["striped", "dotted", "floral", "plain", "checked", "plaid", "paisley", "solid"],
        ),
        def("shape", &["round", "square", "slim", "wide"]),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetConfig {
    pub attributes: Vec<AttributeDef>,
    pub item_count: usize,
    pub train_triplets: usize,
    pub eval_triplets: usize,
    pub changes_per_text: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            attributes: default_schema(),
            item_count: 256,
            train_triplets: 2048,
            eval_triplets: 512,
            changes_per_text: 1,
            d_v: 64,
            d_t: 32,
            noise_scale: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Item {
    pub id: usize,
    /// Category index per attribute, aligned with the schema order.
    pub attributes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Hash)]
pub struct ModificationText {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TripletRecord {
    pub source_id: usize,
    pub target_id: usize,
    pub text: ModificationText,
    /// Position in the training list; the node key in the graph.
    pub key: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
}

impl Vocabulary {
    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub items: Vec<Item>,
    pub train: Vec<TripletRecord>,
    pub eval: Vec<TripletRecord>,
    pub vocab: Vocabulary,
}

/// Parse a modification text back into (attribute index, value index) changes.
/// Texts are triples of the form `make <attribute> <value>`.
pub fn parse_changes(
    schema: &[AttributeDef],
    text: &ModificationText,
) -> Result<Vec<(usize, usize)>> {
    if text.tokens.len() % 3 != 0 {
        return Err(val_err("modification text is not a list of change triples"));
    }
    let mut changes = Vec::new();
    for chunk in text.tokens.chunks(3) {
        if chunk[0] != "make" {
            return Err(val_err(format!("unexpected leading token {:?}", chunk[0])));
        }
        let attr = schema
            .iter()
            .position(|a| a.name == chunk[1])
            .ok_or_else(|| val_err(format!("unknown attribute {:?}", chunk[1])))?;
        let value = schema[attr]
            .values
            .iter()
            .position(|v| v == &chunk[2])
            .ok_or_else(|| val_err(format!("unknown value {:?}", chunk[2])))?;
        changes.push((attr, value));
    }
    Ok(changes)
}

/// Attribute-application oracle: the generator guarantees that applying the
/// text's changes to the source attributes yields the target attributes.
pub fn apply_text(
    schema: &[AttributeDef],
    source_attributes: &[usize],
    text: &ModificationText,
) -> Result<Vec<usize>> {
    let mut out = source_attributes.to_vec();
    for (attr, value) in parse_changes(schema, text)? {
        out[attr] = value;
    }
    Ok(out)
}

fn build_vocabulary(schema: &[AttributeDef]) -> Vocabulary {
    let mut tokens = vec!["make".to_string()];
    for a in schema {
        tokens.push(a.name.clone());
    }
    for a in schema {
        for v in &a.values {
            tokens.push(v.clone());
        }
    }
    Vocabulary { tokens }
}

fn enumerate_tuples(schema: &[AttributeDef]) -> Vec<Vec<usize>> {
    let mut tuples: Vec<Vec<usize>> = vec![vec![]];
    for a in schema {
        let mut next = Vec::with_capacity(tuples.len() * a.cardinality());
        for t in &tuples {
            for v in 0..a.cardinality() {
                let mut t2 = t.clone();
                t2.push(v);
                next.push(t2);
            }
        }
        tuples = next;
    }
    tuples
}

fn validate_config(config: &DatasetConfig) -> Result<()> {
    if config.item_count < 2 {
        return Err(val_err("item_count must be >= 2"));
    }
    if config.train_triplets < 1 {
        return Err(val_err("train_triplets must be >= 1"));
    }
    if config.changes_per_text < 1 || config.changes_per_text >= config.attributes.len() {
        return Err(val_err(
            "changes_per_text must be >= 1 and less than the attribute count",
        ));
    }
    if config.attributes.iter().any(|a| a.cardinality() < 2) {
        return Err(val_err("every attribute needs at least two categories"));
    }
    Ok(())
}

fn generate_items(config: &DatasetConfig, rng: &mut ChaCha8Rng) -> Vec<Item> {
    let mut tuples = enumerate_tuples(&config.attributes);
    tuples.shuffle(rng);
    let total = tuples.len();
    let mut out = Vec::with_capacity(config.item_count);
    for id in 0..config.item_count {
        let attributes = if id < total {
            tuples[id].clone()
        } else {
            // More items than attribute combinations: repeats are allowed,
            // the per-item noise keeps their features distinct.
            config
                .attributes
                .iter()
                .map(|a| rng.gen_range(0..a.cardinality()))
                .collect()
        };
        out.push(Item { id, attributes });
    }
    out
}

fn triplet_signature(t: &TripletRecord) -> (usize, usize, Vec<String>) {
    (t.source_id, t.target_id, t.text.tokens.clone())
}

fn generate_triplets(
    config: &DatasetConfig,
    items: &[Item],
    tuple_index: &HashMap<Vec<usize>, Vec<usize>>,
    count: usize,
    forbidden: &HashSet<(usize, usize, Vec<String>)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TripletRecord>> {
    let k = config.changes_per_text;
    let n_attrs = config.attributes.len();
    let mut out = Vec::with_capacity(count);
    let mut failures = 0usize;
    while out.len() < count {
        if failures > 100_000 {
            return Err(val_err(
                "dataset generation infeasible: no valid targets found",
            ));
        }
        let source = &items[rng.gen_range(0..items.len())];
        let mut attr_order: Vec<usize> = (0..n_attrs).collect();
        attr_order.shuffle(rng);
        let changed = &attr_order[..k];
        let mut target_tuple = source.attributes.clone();
        let mut tokens = Vec::with_capacity(3 * k);
        for &a in changed {
            let def = &config.attributes[a];
            let mut v = rng.gen_range(0..def.cardinality());
            while v == source.attributes[a] {
                v = rng.gen_range(0..def.cardinality());
            }
            target_tuple[a] = v;
            tokens.push("make".to_string());
            tokens.push(def.name.clone());
            tokens.push(def.values[v].clone());
        }
        let Some(candidates) = tuple_index.get(&target_tuple) else {
            failures += 1;
            continue;
        };
        let target_id = candidates[rng.gen_range(0..candidates.len())];
        let record = TripletRecord {
            source_id: source.id,
            target_id,
            text: ModificationText { tokens },
            key: out.len(),
        };
        if forbidden.contains(&triplet_signature(&record)) {
            failures += 1;
            continue;
        }
        failures = 0;
        out.push(record);
    }
    Ok(out)
}

/// Frozen random projections replacing the learned image/text encoders.
pub struct StubEncoders {
    pub d_v: usize,
    pub d_t: usize,
    pub seed: u64,
    onehot_dim: usize,
    vocab_size: usize,
    /// onehot_dim x d_v, row-major.
    image_projection: Vec<f64>,
    /// vocab_size x d_t, row-major.
    text_projection: Vec<f64>,
    /// item_count x d_v; fixed additive noise per item.
    item_noise: Vec<f64>,
    /// Cached one-hot offsets per attribute.
    offsets: Vec<usize>,
    items: Vec<Item>,
    vocab: Vocabulary,
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 strictly positive.
    let u1: f64 = loop {
        let v = rng.gen::<f64>();
        if v > 0.0 {
            break v;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl StubEncoders {
    fn build(config: &DatasetConfig, items: &[Item], vocab: &Vocabulary) -> Result<StubEncoders> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
        let onehot_dim: usize = config.attributes.iter().map(|a| a.cardinality()).sum();
        let mut offsets = Vec::with_capacity(config.attributes.len());
        let mut acc = 0;
        for a in &config.attributes {
            offsets.push(acc);
            acc += a.cardinality();
        }
        let scale_img = 1.0 / (onehot_dim as f64).sqrt();
        let image_projection: Vec<f64> = (0..onehot_dim * config.d_v)
            .map(|_| randn(&mut rng) * scale_img)
            .collect();
        let scale_txt = 1.0 / (vocab.len() as f64).sqrt();
        let text_projection: Vec<f64> = (0..vocab.len() * config.d_t)
            .map(|_| randn(&mut rng) * scale_txt)
            .collect();

        let mut enc = StubEncoders {
            d_v: config.d_v,
            d_t: config.d_t,
            seed: config.seed,
            onehot_dim,
            vocab_size: vocab.len(),
            image_projection,
            text_projection,
            item_noise: Vec::new(),
            offsets,
            items: items.to_vec(),
            vocab: vocab.clone(),
        };

        // Per-item noise scaled relative to the item's signal norm.
        let mut noise = Vec::with_capacity(items.len() * config.d_v);
        for item in items {
            let signal = enc.project_attributes(&item.attributes);
            let norm = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
            let raw: Vec<f64> = (0..config.d_v).map(|_| randn(&mut rng)).collect();
            let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let target = config.noise_scale * norm;
            noise.extend(raw.iter().map(|v| v / raw_norm * target));
        }
        enc.item_noise = noise;

        enc.check_injectivity()?;
        Ok(enc)
    }

    fn check_injectivity(&self) -> Result<()> {
        let feats: Vec<Vec<f64>> = self
            .items
            .iter()
            .map(|i| self.encode_image(i.id).expect("known id"))
            .collect();
        for i in 0..feats.len() {
            for j in (i + 1)..feats.len() {
                if feats[i] == feats[j] {
                    return Err(val_err(format!(
                        "stub encoders map items {i} and {j} to identical vectors"
                    )));
                }
            }
        }
        Ok(())
    }

    fn project_attributes(&self, attributes: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_v];
        for (a, &v) in attributes.iter().enumerate() {
            let row = self.offsets[a] + v;
            let proj = &self.image_projection[row * self.d_v..(row + 1) * self.d_v];
            for c in 0..self.d_v {
                out[c] += proj[c];
            }
        }
        out
    }

    pub fn encode_image(&self, item_id: usize) -> Result<Vec<f64>> {
        let item = self
            .items
            .get(item_id)
            .ok_or_else(|| val_err(format!("unknown item id {item_id}")))?;
        let mut out = self.project_attributes(&item.attributes);
        let noise = &self.item_noise[item_id * self.d_v..(item_id + 1) * self.d_v];
        for c in 0..self.d_v {
            out[c] += noise[c];
        }
        Ok(out)
    }

    pub fn encode_text(&self, text: &ModificationText) -> Result<Vec<f64>> {
        let mut bag = vec![0.0; self.vocab_size];
        for token in &text.tokens {
            let idx = self
                .vocab
                .index_of(token)
                .ok_or_else(|| val_err(format!("token {token:?} not in vocabulary")))?;
            bag[idx] += 1.0;
        }
        let mut out = vec![0.0; self.d_t];
        for (i, &count) in bag.iter().enumerate() {
            if count == 0.0 {
                continue;
            }
            let proj = &self.text_projection[i * self.d_t..(i + 1) * self.d_t];
            for c in 0..self.d_t {
                out[c] += count * proj[c];
            }
        }
        Ok(out)
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(ENCODERS_MAGIC)?;
        w.write_u32::<LittleEndian>(1)?; // version
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u32::<LittleEndian>(self.d_v as u32)?;
        w.write_u32::<LittleEndian>(self.d_t as u32)?;
        w.write_u32::<LittleEndian>(self.onehot_dim as u32)?;
        w.write_u32::<LittleEndian>(self.vocab_size as u32)?;
        w.write_u32::<LittleEndian>(self.items.len() as u32)?;
        for &v in self
            .image_projection
            .iter()
            .chain(&self.text_projection)
            .chain(&self.item_noise)
        {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path, items: &[Item], vocab: &Vocabulary, config: &DatasetConfig) -> Result<StubEncoders> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != ENCODERS_MAGIC {
            return Err(Error::Format("bad encoders magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported encoders version {version}")));
        }
        let seed = r.read_u64::<LittleEndian>()?;
        let d_v = r.read_u32::<LittleEndian>()? as usize;
        let d_t = r.read_u32::<LittleEndian>()? as usize;
        let onehot_dim = r.read_u32::<LittleEndian>()? as usize;
        let vocab_size = r.read_u32::<LittleEndian>()? as usize;
        let item_count = r.read_u32::<LittleEndian>()? as usize;
        if vocab_size != vocab.len() || item_count != items.len() {
            return Err(Error::Format("encoders file does not match dataset".into()));
        }
        let mut read_block = |n: usize| -> Result<Vec<f64>> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(r.read_f64::<LittleEndian>()?);
            }
            Ok(v)
        };
        let image_projection = read_block(onehot_dim * d_v)?;
        let text_projection = read_block(vocab_size * d_t)?;
        let item_noise = read_block(item_count * d_v)?;
        let mut offsets = Vec::with_capacity(config.attributes.len());
        let mut acc = 0;
        for a in &config.attributes {
            offsets.push(acc);
            acc += a.cardinality();
        }
        Ok(StubEncoders {
            d_v,
            d_t,
            seed,
            onehot_dim,
            vocab_size,
            image_projection,
            text_projection,
            item_noise,
            offsets,
            items: items.to_vec(),
            vocab: vocab.clone(),
        })
    }
}

/// Deterministically generate the full dataset and its frozen encoders.
pub fn generate_dataset(config: &DatasetConfig) -> Result<(Dataset, StubEncoders)> {
    validate_config(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = build_vocabulary(&config.attributes);
    let items = generate_items(config, &mut rng);

    let mut tuple_index: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for item in &items {
        tuple_index.entry(item.attributes.clone()).or_default().push(item.id);
    }

    let train = generate_triplets(
        config,
        &items,
        &tuple_index,
        config.train_triplets,
        &HashSet::new(),
        &mut rng,
    )?;
    let train_signatures: HashSet<_> = train.iter().map(triplet_signature).collect();
    let eval = generate_triplets(
        config,
        &items,
        &tuple_index,
        config.eval_triplets,
        &train_signatures,
        &mut rng,
    )?;

    // Generator self-check: every triplet must satisfy the attribute oracle.
    for t in train.iter().chain(&eval) {
        let expected = apply_text(&config.attributes, &items[t.source_id].attributes, &t.text)?;
        if expected != items[t.target_id].attributes {
            return Err(val_err(format!("inconsistent triplet key {}", t.key)));
        }
    }

    let encoders = StubEncoders::build(config, &items, &vocab)?;
    let dataset = Dataset {
        config: config.clone(),
        items,
        train,
        eval,
        vocab,
    };
    Ok((dataset, encoders))
}

// ---------------------------------------------------------------------------
// File formats: JSON-lines with a leading header record carrying the config.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    attributes: Vec<AttributeDef>,
}

fn write_jsonl<T: Serialize>(path: &Path, config: &DatasetConfig, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, config)?;
    w.write_all(b"\n")?;
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(DatasetConfig, Vec<T>)> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))??;
    let config: DatasetConfig = serde_json::from_str(&header)?;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok((config, rows))
}

pub mod files {
    pub const ITEMS: &str = "items.jsonl";
    pub const TRAIN: &str = "triplets_train.jsonl";
    pub const EVAL: &str = "triplets_eval.jsonl";
    pub const VOCAB: &str = "vocab.json";
    pub const ENCODERS: &str = "encoders.bin";
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(files::ITEMS), &self.config, &self.items)?;
        write_jsonl(&dir.join(files::TRAIN), &self.config, &self.train)?;
        write_jsonl(&dir.join(files::EVAL), &self.config, &self.eval)?;
        let vocab_file = VocabFile {
            tokens: self.vocab.tokens.clone(),
            attributes: self.config.attributes.clone(),
        };
        let mut w = BufWriter::new(std::fs::File::create(dir.join(files::VOCAB))?);
        serde_json::to_writer_pretty(&mut w, &vocab_file)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Dataset> {
        let (config, items) = read_jsonl::<Item>(&dir.join(files::ITEMS))?;
        let (_, train) = read_jsonl::<TripletRecord>(&dir.join(files::TRAIN))?;
        let (_, eval) = read_jsonl::<TripletRecord>(&dir.join(files::EVAL))?;
        let vocab_file: VocabFile =
            serde_json::from_reader(BufReader::new(std::fs::File::open(dir.join(files::VOCAB))?))?;
        Ok(Dataset {
            config,
            items,
            train,
            eval,
            vocab: Vocabulary {
                tokens: vocab_file.tokens,
            },
        })
    }

    pub fn read_encoders(&self, dir: &Path) -> Result<StubEncoders> {
        StubEncoders::read(&dir.join(files::ENCODERS), &self.items, &self.vocab, &self.config)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config(seed: u64) -> DatasetConfig {
        DatasetConfig {
            item_count: 64,
            train_triplets: 128,
            eval_triplets: 32,
            seed,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn single_change_consistency() {
        let schema = default_schema();
        let source = vec![0, 0, 0];
        let text = ModificationText {
            tokens: vec!["make".into(), "color".into(), "blue".into()],
        };
        let target = apply_text(&schema, &source, &text).unwrap();
        assert_eq!(target, vec![3, 0, 0]); // blue = index 3
        assert_ne!(target[0], source[0]);
        assert_eq!(&target[1..], &source[1..]);
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let config = small_config(7);
        let (d1, _) = generate_dataset(&config).unwrap();
        let (d2, _) = generate_dataset(&config).unwrap();
        assert_eq!(d1.items, d2.items);
        assert_eq!(d1.train, d2.train);
        assert_eq!(d1.eval, d2.eval);
        for t in d1.train.iter().chain(&d1.eval) {
            let expected =
                apply_text(&config.attributes, &d1.items[t.source_id].attributes, &t.text).unwrap();
            assert_eq!(expected, d1.items[t.target_id].attributes);
        }
    }

    #[test]
    fn default_scale_consistency_audit() {
        let config = DatasetConfig::default();
        let (d, _) = generate_dataset(&config).unwrap();
        assert_eq!(d.items.len(), 256);
        assert_eq!(d.train.len(), 2048);
        for (i, t) in d.train.iter().enumerate() {
            assert_eq!(t.key, i);
            let expected =
                apply_text(&config.attributes, &d.items[t.source_id].attributes, &t.text).unwrap();
            assert_eq!(expected, d.items[t.target_id].attributes);
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let config = small_config(3);
        let dir1 = tempdir().unwrap();
        let dir2 = tempdir().unwrap();
        for dir in [&dir1, &dir2] {
            let (d, e) = generate_dataset(&config).unwrap();
            d.write(dir.path()).unwrap();
            e.write(&dir.path().join(files::ENCODERS)).unwrap();
        }
        for name in [files::ITEMS, files::TRAIN, files::EVAL, files::VOCAB, files::ENCODERS] {
            let a = std::fs::read(dir1.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "file {name} differs between identical seeds");
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        let mut config = small_config(0);
        config.changes_per_text = 3; // equals attribute count
        assert!(generate_dataset(&config).is_err());
        let mut config = small_config(0);
        config.item_count = 1;
        assert!(generate_dataset(&config).is_err());
    }

    #[test]
    fn encoder_is_frozen_and_injective() {
        let config = small_config(5);
        let (d, e) = generate_dataset(&config).unwrap();
        let a = e.encode_image(3).unwrap();
        let b = e.encode_image(3).unwrap();
        assert_eq!(a, b);
        assert!(e.encode_image(d.items.len()).is_err());
        // Two items differing in at least one attribute are not colinear.
        let x = e.encode_image(0).unwrap();
        let y = e.encode_image(1).unwrap();
        assert!(cosine(&x, &y) < 1.0);
    }

    #[test]
    fn shared_attributes_raise_similarity() {
        // Config with duplicate attribute tuples so exact-attribute pairs
        // exist (4 * 4 = 16 tuples over 64 items).
        let config = DatasetConfig {
            attributes: vec![
                AttributeDef {
                    name: "color".into(),
                    values: (0..4).map(|i| format!("c{i}")).collect(),
                },
                AttributeDef {
                    name: "pattern".into(),
                    values: (0..4).map(|i| format!("p{i}")).collect(),
                },
            ],
            item_count: 64,
            train_triplets: 32,
            eval_triplets: 8,
            changes_per_text: 1,
            ..DatasetConfig::default()
        };
        let (d, e) = generate_dataset(&config).unwrap();
        let mut same = Vec::new();
        let mut disjoint = Vec::new();
        for i in 0..d.items.len() {
            for j in (i + 1)..d.items.len() {
                let (a, b) = (&d.items[i], &d.items[j]);
                let shared = a
                    .attributes
                    .iter()
                    .zip(&b.attributes)
                    .filter(|(x, y)| x == y)
                    .count();
                let cos = cosine(&e.encode_image(i).unwrap(), &e.encode_image(j).unwrap());
                if shared == a.attributes.len() {
                    same.push(cos);
                } else if shared == 0 {
                    disjoint.push(cos);
                }
            }
        }
        assert!(!same.is_empty() && !disjoint.is_empty());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&same) > mean(&disjoint));
    }

    #[test]
    fn text_encoding_is_bag_of_tokens() {
        let config = small_config(9);
        let (_, e) = generate_dataset(&config).unwrap();
        let empty = ModificationText { tokens: vec![] };
        assert_eq!(e.encode_text(&empty).unwrap(), vec![0.0; config.d_t]);

        let t1 = ModificationText {
            tokens: vec!["make".into(), "color".into(), "blue".into()],
        };
        let t2 = ModificationText {
            tokens: vec!["blue".into(), "make".into(), "color".into()],
        };
        assert_eq!(e.encode_text(&t1).unwrap(), e.encode_text(&t2).unwrap());

        let oov = ModificationText {
            tokens: vec!["purple".into()],
        };
        assert!(e.encode_text(&oov).is_err());
    }

    #[test]
    fn overlapping_texts_are_more_similar_than_disjoint() {
        let config = small_config(11);
        let (_, e) = generate_dataset(&config).unwrap();
        // k=2-style texts sharing one change token triple vs fully disjoint.
        let a = ModificationText {
            tokens: vec![
                "make".into(), "color".into(), "blue".into(),
                "make".into(), "pattern".into(), "dotted".into(),
            ],
        };
        let b = ModificationText {
            tokens: vec![
                "make".into(), "color".into(), "blue".into(),
                "make".into(), "pattern".into(), "floral".into(),
            ],
        };
        let c = ModificationText {
            tokens: vec![
                "make".into(), "color".into(), "red".into(),
                "make".into(), "shape".into(), "slim".into(),
            ],
        };
        let ea = e.encode_text(&a).unwrap();
        assert!(cosine(&ea, &e.encode_text(&b).unwrap()) > cosine(&ea, &e.encode_text(&c).unwrap()));
    }

    #[test]
    fn reencoding_dataset_is_bitwise_identical() {
        let config = small_config(13);
        let dir = tempdir().unwrap();
        let (d, e) = generate_dataset(&config).unwrap();
        d.write(dir.path()).unwrap();
        e.write(&dir.path().join(files::ENCODERS)).unwrap();

        let d2 = Dataset::read(dir.path()).unwrap();
        let e2 = d2.read_encoders(dir.path()).unwrap();
        assert_eq!(d2.train, d.train);
        for item in &d.items {
            assert_eq!(e.encode_image(item.id).unwrap(), e2.encode_image(item.id).unwrap());
        }
        for t in &d.train {
            assert_eq!(e.encode_text(&t.text).unwrap(), e2.encode_text(&t.text).unwrap());
        }
    }

    #[test]
    fn eval_triplets_disjoint_from_train() {
        let config = small_config(17);
        let (d, _) = generate_dataset(&config).unwrap();
        let train: HashSet<_> = d.train.iter().map(super::triplet_signature).collect();
        for t in &d.eval {
            assert!(!train.contains(&super::triplet_signature(t)));
        }
    }
}
