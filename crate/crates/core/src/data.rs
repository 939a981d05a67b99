//! Tokenization, labeled-data loading, and the deterministic synthetic
//! multilingual corpus generator with family structure.

use crate::error::{Error, Result};
use crate::model::LabelSpace;
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const RESERVED_TOKENS: usize = 4;

const RESERVED_NAMES: [&str; RESERVED_TOKENS] = ["<pad>", "<cls>", "<mask>", "<unk>"];

/// Word-level vocabulary. Ids 0..3 are reserved for pad, cls, mask, unk;
/// corpus tokens never receive a reserved id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build from whitespace-tokenized, lowercased corpora. Tokens seen
    /// fewer than twice map to unk.
    pub fn build<'a>(corpora: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpora {
            for word in text.split_whitespace() {
                let w = word.to_lowercase();
                if RESERVED_NAMES.contains(&w.as_str()) {
                    continue;
                }
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut id_to_token: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = BTreeMap::new();
        for (token, count) in counts {
            if count >= 2 {
                token_to_id.insert(token.clone(), id_to_token.len());
                id_to_token.push(token);
            }
        }
        Vocab { token_to_id, id_to_token }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }
}

/// Lowercase, whitespace-split, prepend cls, truncate to `max_seq_len`.
/// Empty text tokenizes to `[cls]`.
pub fn tokenize(text: &str, vocab: &Vocab, max_seq_len: usize) -> Vec<usize> {
    let mut ids = vec![CLS_ID];
    for word in text.split_whitespace() {
        if ids.len() >= max_seq_len {
            break;
        }
        ids.push(vocab.id(&word.to_lowercase()));
    }
    ids
}

/// One labeled text with a binary vector over the label space. All-zero
/// vectors are legal (neutral text).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub labels: Vec<bool>,
}

/// Optional header renames for externally produced CSV files.
pub type SchemaMap = BTreeMap<String, String>;

/// Parse a `id,text,<label...>` CSV whose label columns must match the label
/// space exactly, in order.
pub fn load_labeled_dataset(path: &Path, label_space: &LabelSpace) -> Result<Vec<LabeledExample>> {
    load_labeled_dataset_with(path, label_space, None)
}

pub fn load_labeled_dataset_with(
    path: &Path,
    label_space: &LabelSpace,
    renames: Option<&SchemaMap>,
) -> Result<Vec<LabeledExample>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| {
            let h = h.trim();
            match renames.and_then(|m| m.get(h)) {
                Some(renamed) => renamed.clone(),
                None => h.to_string(),
            }
        })
        .collect();

    let mut expected = vec!["id".to_string(), "text".to_string()];
    expected.extend(label_space.names().iter().cloned());
    if headers.len() < expected.len() {
        let missing = &expected[headers.len()..];
        return Err(Error::data(format!(
            "{}: missing label column `{}`",
            path.display(),
            missing[0]
        )));
    }
    if headers.len() > expected.len() {
        return Err(Error::data(format!(
            "{}: unexpected extra column `{}`",
            path.display(),
            headers[expected.len()]
        )));
    }
    for (got, want) in headers.iter().zip(expected.iter()) {
        if got != want {
            return Err(Error::data(format!(
                "{}: header column `{got}` does not match expected `{want}`",
                path.display()
            )));
        }
    }

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2; // header is line 1
        if record.len() != expected.len() {
            return Err(Error::data(format!(
                "{}: row {line} has {} fields, expected {}",
                path.display(),
                record.len(),
                expected.len()
            )));
        }
        let mut labels = Vec::with_capacity(label_space.len());
        for (l, cell) in record.iter().skip(2).enumerate() {
            match cell.trim() {
                "0" => labels.push(false),
                "1" => labels.push(true),
                other => {
                    return Err(Error::data(format!(
                        "{}: row {line}, column `{}`: label cell `{other}` is not 0 or 1",
                        path.display(),
                        label_space.names()[l]
                    )))
                }
            }
        }
        out.push(LabeledExample {
            id: record[0].to_string(),
            text: record[1].to_string(),
            labels,
        });
    }
    Ok(out)
}

/// Write examples in the same CSV schema the loader expects.
pub fn write_labeled_csv(
    path: &Path,
    examples: &[LabeledExample],
    label_space: &LabelSpace,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "text".to_string()];
    header.extend(label_space.names().iter().cloned());
    writer.write_record(&header)?;
    for ex in examples {
        if ex.labels.len() != label_space.len() {
            return Err(Error::data(format!(
                "example `{}` has {} labels, label space has {}",
                ex.id,
                ex.labels.len(),
                label_space.len()
            )));
        }
        let mut record = vec![ex.id.clone(), ex.text.clone()];
        record.extend(ex.labels.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Mapping from family name to its language tags; tags are pairwise
/// disjoint across families.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(transparent)]
pub struct FamilyPartition {
    pub families: BTreeMap<String, Vec<String>>,
}

impl FamilyPartition {
    pub fn new(families: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let p = FamilyPartition { families };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, &str> = HashMap::new();
        for (family, tags) in &self.families {
            for tag in tags {
                if let Some(other) = seen.insert(tag.as_str(), family.as_str()) {
                    return Err(Error::data(format!(
                        "language `{tag}` appears in families `{other}` and `{family}`"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn family_of(&self, tag: &str) -> Option<&str> {
        self.families
            .iter()
            .find(|(_, tags)| tags.iter().any(|t| t == tag))
            .map(|(f, _)| f.as_str())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: FamilyPartition = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// One family in a [`SynthSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    pub n_languages: usize,
    pub stem_count: usize,
}

fn default_sentence_len() -> (usize, usize) {
    (5, 12)
}

fn default_labels() -> Vec<String> {
    LabelSpace::six().names().to_vec()
}

fn default_unlabeled() -> usize {
    600
}

fn default_train() -> usize {
    300
}

fn default_dev() -> usize {
    60
}

fn default_test() -> usize {
    120
}

fn default_markers_per_label() -> usize {
    1
}

/// Recipe for the synthetic multilingual corpus. Languages in one family
/// share the family's stem vocabulary (each language applies its own
/// deterministic character substitution); emotion markers are shared across
/// a family and disjoint across families, so gold labels are exactly marker
/// presence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub families: Vec<FamilySpec>,
    #[serde(default = "default_markers_per_label")]
    pub markers_per_label: usize,
    #[serde(default = "default_sentence_len")]
    pub sentence_len: (usize, usize),
    pub marker_prob: f64,
    pub seed: u64,
    #[serde(default = "default_labels")]
    pub labels: Vec<String>,
    #[serde(default = "default_unlabeled")]
    pub unlabeled_sentences: usize,
    #[serde(default = "default_train")]
    pub train_examples: usize,
    #[serde(default = "default_dev")]
    pub dev_examples: usize,
    #[serde(default = "default_test")]
    pub test_examples: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::invalid("families: must not be empty"));
        }
        for (i, f) in self.families.iter().enumerate() {
            if f.name.is_empty() {
                return Err(Error::invalid(format!("families[{i}].name: must not be empty")));
            }
            if f.n_languages == 0 {
                return Err(Error::invalid(format!(
                    "families[{i}].n_languages: must be at least 1"
                )));
            }
            if f.stem_count < 10 {
                return Err(Error::invalid(format!(
                    "families[{i}].stem_count: must be at least 10"
                )));
            }
        }
        let names: HashSet<&str> = self.families.iter().map(|f| f.name.as_str()).collect();
        if names.len() != self.families.len() {
            return Err(Error::invalid("families: names must be unique"));
        }
        if self.markers_per_label == 0 {
            return Err(Error::invalid("markers_per_label: must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.marker_prob) {
            return Err(Error::invalid("marker_prob: must be within [0, 1]"));
        }
        let (lo, hi) = self.sentence_len;
        if lo == 0 || hi < lo {
            return Err(Error::invalid("sentence_len: invalid range"));
        }
        if self.labels.is_empty() {
            return Err(Error::invalid("labels: must not be empty"));
        }
        Ok(())
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        LabelSpace::new(self.labels.clone())
    }
}

/// All generated material for one language.
#[derive(Debug, Clone)]
pub struct LanguageData {
    pub tag: String,
    pub family: String,
    pub unlabeled: Vec<String>,
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// Pre-substitution stem inventory (family-pool identities).
    pub stems: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub partition: FamilyPartition,
    pub languages: Vec<LanguageData>,
    /// Per family, per label: the marker surface tokens.
    pub markers: BTreeMap<String, Vec<Vec<String>>>,
}

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

fn random_word(rng: &mut impl Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    w
}

fn fresh_word(rng: &mut impl Rng, used: &mut HashSet<String>, syllables: usize) -> String {
    loop {
        let w = random_word(rng, syllables);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// The per-language sound shift: rotate each vowel forward in the vowel
/// inventory by `shift` steps.
fn substitute(stem: &str, shift: usize) -> String {
    stem.chars()
        .map(|c| match VOWELS.iter().position(|&v| v == c) {
            Some(p) => VOWELS[(p + shift) % VOWELS.len()],
            None => c,
        })
        .collect()
}

struct FamilyMaterial {
    name: String,
    pool: Vec<String>,
    markers: Vec<Vec<String>>, // per label
}

/// Generate per-language unlabeled corpora, labeled train/dev/test splits,
/// and the family partition. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let n_labels = spec.labels.len();

    // Family stem pools: 2-syllable words, globally unique so cross-family
    // stem sharing is exactly zero.
    let mut used: HashSet<String> = HashSet::new();
    let mut families = Vec::new();
    for f in &spec.families {
        let mut rng = seed::stream(spec.seed, &["stems", &f.name]);
        let pool: Vec<String> =
            (0..f.stem_count).map(|_| fresh_word(&mut rng, &mut used, 2)).collect();
        families.push(FamilyMaterial { name: f.name.clone(), pool, markers: Vec::new() });
    }

    // Reserve every surface form any language can produce before drawing
    // markers, so a marker can never collide with ordinary text.
    for fam in &families {
        for shift in 0..VOWELS.len() {
            for stem in &fam.pool {
                used.insert(substitute(stem, shift));
            }
        }
    }

    // Markers: 3-syllable words shared across the family, distinct across
    // families and labels.
    for fam in &mut families {
        let mut rng = seed::stream(spec.seed, &["markers", &fam.name]);
        fam.markers = (0..n_labels)
            .map(|_| (0..spec.markers_per_label).map(|_| fresh_word(&mut rng, &mut used, 3)).collect())
            .collect();
    }

    let mut partition_map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut languages = Vec::new();
    for (fi, fam_spec) in spec.families.iter().enumerate() {
        let fam = &families[fi];
        let mut tags = Vec::new();
        for li in 0..fam_spec.n_languages {
            let tag = format!("{}{}", fam_spec.name, li);
            tags.push(tag.clone());

            // each language keeps 90% of the pool, omitting a rotating block
            let omit = (fam_spec.stem_count / 10).max(1);
            let start = (li * omit) % fam_spec.stem_count;
            let inventory: Vec<&String> = fam
                .pool
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    let rel = (i + fam_spec.stem_count - start) % fam_spec.stem_count;
                    rel >= omit
                })
                .map(|(_, s)| s)
                .collect();
            let shift = li % VOWELS.len();
            let surfaces: Vec<String> =
                inventory.iter().map(|s| substitute(s, shift)).collect();
            let stems: BTreeSet<String> = inventory.iter().map(|s| (*s).clone()).collect();

            let gen_sentence = |rng: &mut rand_chacha::ChaCha8Rng| -> (String, Vec<bool>) {
                let len = rng.gen_range(spec.sentence_len.0..=spec.sentence_len.1);
                let mut words: Vec<&str> = (0..len)
                    .map(|_| surfaces[rng.gen_range(0..surfaces.len())].as_str())
                    .collect();
                let mut labels = vec![false; n_labels];
                for (l, marker_set) in fam.markers.iter().enumerate() {
                    if rng.gen::<f64>() < spec.marker_prob {
                        labels[l] = true;
                        let marker = &marker_set[rng.gen_range(0..marker_set.len())];
                        let pos = rng.gen_range(0..=words.len());
                        words.insert(pos, marker.as_str());
                    }
                }
                (words.join(" "), labels)
            };

            let mut rng = seed::stream(spec.seed, &["unlabeled", &tag]);
            let unlabeled: Vec<String> =
                (0..spec.unlabeled_sentences).map(|_| gen_sentence(&mut rng).0).collect();

            let mut seen_texts: HashSet<String> = HashSet::new();
            let mut rng = seed::stream(spec.seed, &["labeled", &tag]);
            let mut make_split = |split: &str, count: usize| -> Result<Vec<LabeledExample>> {
                let mut out = Vec::with_capacity(count);
                for i in 0..count {
                    let mut attempts = 0;
                    let (text, labels) = loop {
                        let (text, labels) = gen_sentence(&mut rng);
                        if seen_texts.insert(text.clone()) {
                            break (text, labels);
                        }
                        attempts += 1;
                        if attempts > 500 {
                            return Err(Error::data(format!(
                                "could not generate enough distinct sentences for `{tag}`; \
                                 increase stem_count or reduce split sizes"
                            )));
                        }
                    };
                    out.push(LabeledExample { id: format!("{tag}-{split}-{i:04}"), text, labels });
                }
                Ok(out)
            };
            let train = make_split("train", spec.train_examples)?;
            let dev = make_split("dev", spec.dev_examples)?;
            let test = make_split("test", spec.test_examples)?;

            languages.push(LanguageData {
                tag,
                family: fam_spec.name.clone(),
                unlabeled,
                train,
                dev,
                test,
                stems,
            });
        }
        partition_map.insert(fam_spec.name.clone(), tags);
    }

    let markers = families
        .into_iter()
        .map(|f| (f.name, f.markers))
        .collect::<BTreeMap<_, _>>();

    Ok(SynthOutput {
        partition: FamilyPartition::new(partition_map)?,
        languages,
        markers,
    })
}

/// Recompute an example's labels by scanning its words for the family's
/// marker tokens; used to verify label faithfulness.
pub fn scan_labels(text: &str, family_markers: &[Vec<String>]) -> Vec<bool> {
    let words: HashSet<&str> = text.split_whitespace().collect();
    family_markers
        .iter()
        .map(|set| set.iter().any(|m| words.contains(m.as_str())))
        .collect()
}

/// Render an unlabeled corpus as one sentence per line.
pub fn corpus_to_string(sentences: &[String]) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "{s}");
    }
    out
}

/// Read a one-sentence-per-line corpus file, skipping blank lines.
pub fn load_corpus(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            families: vec![
                FamilySpec { name: "kol".into(), n_languages: 3, stem_count: 30 },
                FamilySpec { name: "vra".into(), n_languages: 3, stem_count: 30 },
            ],
            markers_per_label: 1,
            sentence_len: (5, 12),
            marker_prob: 0.3,
            seed: 42,
            labels: default_labels(),
            unlabeled_sentences: 50,
            train_examples: 40,
            dev_examples: 10,
            test_examples: 15,
        }
    }

    #[test]
    fn casefold_maps_variants_to_one_id() {
        let corpus = ["joy joy joy other other"];
        let vocab = Vocab::build(corpus.iter().copied());
        let ids = tokenize("Joy joy JOY", &vocab, 16);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(ids[1], ids[2]);
        assert_eq!(ids[2], ids[3]);
        assert_ne!(ids[1], UNK_ID);
    }

    #[test]
    fn unseen_and_rare_words_map_to_unk() {
        let vocab = Vocab::build(["twice twice once"]);
        assert_eq!(vocab.id("never"), UNK_ID);
        assert_eq!(vocab.id("once"), UNK_ID); // below frequency 2
        assert_ne!(vocab.id("twice"), UNK_ID);
    }

    #[test]
    fn tokenize_truncates_and_handles_empty() {
        let vocab = Vocab::build(["a a b b c c d d e e"]);
        assert_eq!(tokenize("", &vocab, 8), vec![CLS_ID]);
        let ids = tokenize("a b c d e", &vocab, 4);
        assert_eq!(ids.len(), 4); // cls + 3 words
        let ids = tokenize("a b", &vocab, 8);
        assert_eq!(ids.len(), 3); // word count + 1
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let space = LabelSpace::six();
        let examples = vec![
            LabeledExample {
                id: "x1".into(),
                text: "hello, \"quoted\" text".into(),
                labels: vec![true, false, false, true, false, false],
            },
            LabeledExample {
                id: "x2".into(),
                text: "plain".into(),
                labels: vec![false; 6],
            },
        ];
        write_labeled_csv(&path, &examples, &space).unwrap();
        let loaded = load_labeled_dataset(&path, &space).unwrap();
        assert_eq!(loaded, examples);
    }

    #[test]
    fn header_mismatch_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let six = LabelSpace::six();
        write_labeled_csv(&path, &[], &six).unwrap();
        // a five-label space must reject the disgust column
        let err = load_labeled_dataset(&path, &LabelSpace::five()).unwrap_err().to_string();
        assert!(err.contains("disgust") || err.contains("extra column"), "{err}");

        // missing column the other way around
        let path2 = dir.path().join("d5.csv");
        write_labeled_csv(&path2, &[], &LabelSpace::five()).unwrap();
        let err = load_labeled_dataset(&path2, &six).unwrap_err().to_string();
        assert!(err.contains("missing") || err.contains("does not match"), "{err}");
    }

    #[test]
    fn non_binary_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "id,text,anger,disgust,fear,joy,sadness,surprise\na,t,1,0,0,0,0,0\nb,t,2,0,0,0,0,0\n",
        )
        .unwrap();
        let err = load_labeled_dataset(&path, &LabelSpace::six()).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn header_only_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "id,text,anger,disgust,fear,joy,sadness,surprise\n").unwrap();
        assert!(load_labeled_dataset(&path, &LabelSpace::six()).unwrap().is_empty());
    }

    #[test]
    fn schema_map_renames_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("renamed.csv");
        std::fs::write(&path, "ID,Text,anger,disgust,fear,joy,sadness,surprise\na,t,1,0,0,0,0,0\n")
            .unwrap();
        let mut map = SchemaMap::new();
        map.insert("ID".into(), "id".into());
        map.insert("Text".into(), "text".into());
        let rows =
            load_labeled_dataset_with(&path, &LabelSpace::six(), Some(&map)).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn partition_rejects_overlapping_families() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec!["x".to_string(), "y".to_string()]);
        m.insert("b".to_string(), vec!["y".to_string()]);
        assert!(FamilyPartition::new(m).is_err());
    }

    #[test]
    fn injection_probability_extremes() {
        let mut spec = small_spec();
        spec.marker_prob = 0.0;
        let out = generate_synthetic(&spec).unwrap();
        assert!(out
            .languages
            .iter()
            .flat_map(|l| l.train.iter().chain(l.dev.iter()).chain(l.test.iter()))
            .all(|e| e.labels.iter().all(|&b| !b)));

        spec.marker_prob = 1.0;
        let out = generate_synthetic(&spec).unwrap();
        assert!(out
            .languages
            .iter()
            .flat_map(|l| l.train.iter())
            .all(|e| e.labels.iter().all(|&b| b)));
    }

    #[test]
    fn stem_sharing_within_family_and_zero_across() {
        let out = generate_synthetic(&small_spec()).unwrap();
        let by_tag: BTreeMap<&str, &LanguageData> =
            out.languages.iter().map(|l| (l.tag.as_str(), l)).collect();
        let a0 = &by_tag["kol0"].stems;
        let a1 = &by_tag["kol1"].stems;
        let b0 = &by_tag["vra0"].stems;
        let shared = a0.intersection(a1).count() as f64;
        let denom = a0.len().min(a1.len()) as f64;
        assert!(shared / denom >= 0.8, "within-family overlap {}", shared / denom);
        assert_eq!(a0.intersection(b0).count(), 0);
    }

    #[test]
    fn labels_match_marker_scan_exactly() {
        let out = generate_synthetic(&small_spec()).unwrap();
        for lang in &out.languages {
            let markers = &out.markers[&lang.family];
            for ex in lang.train.iter().chain(lang.dev.iter()).chain(lang.test.iter()) {
                assert_eq!(scan_labels(&ex.text, markers), ex.labels, "example {}", ex.id);
            }
        }
    }

    #[test]
    fn splits_are_disjoint_by_id_and_text() {
        let out = generate_synthetic(&small_spec()).unwrap();
        for lang in &out.languages {
            let mut ids = HashSet::new();
            let mut texts = HashSet::new();
            for ex in lang.train.iter().chain(lang.dev.iter()).chain(lang.test.iter()) {
                assert!(ids.insert(&ex.id), "duplicate id {}", ex.id);
                assert!(texts.insert(&ex.text), "text in two splits: {}", ex.text);
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_synthetic(&small_spec()).unwrap();
        let b = generate_synthetic(&small_spec()).unwrap();
        assert_eq!(a.partition, b.partition);
        for (la, lb) in a.languages.iter().zip(b.languages.iter()) {
            assert_eq!(la.unlabeled, lb.unlabeled);
            assert_eq!(la.train, lb.train);
            assert_eq!(la.dev, lb.dev);
            assert_eq!(la.test, lb.test);
        }
    }

    #[test]
    fn invalid_spec_names_the_field() {
        let mut spec = small_spec();
        spec.families[1].n_languages = 0;
        let err = generate_synthetic(&spec).unwrap_err().to_string();
        assert!(err.contains("families[1].n_languages"), "{err}");
    }
}
