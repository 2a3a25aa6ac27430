use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Dataset, QaRecord};

/// Selected ids of a seeded subset, reusable across runs.
///
/// File form: a header `# seed=<int> n=<int> source=<checksum>` then one id
/// per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetManifest {
    pub seed: u64,
    pub n: usize,
    pub source: String,
    pub ids: Vec<String>,
}

impl SubsetManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("# seed={} n={} source={}\n", self.seed, self.n, self.source);
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# "))
            .ok_or_else(|| CorpusError::Manifest("missing header line".into()))?;
        let (mut seed, mut n, mut source) = (None, None, None);
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => seed = v.parse().ok(),
                Some(("n", v)) => n = v.parse().ok(),
                Some(("source", v)) => source = Some(v.to_string()),
                _ => return Err(CorpusError::Manifest(format!("unknown header field `{field}`"))),
            }
        }
        let ids: Vec<String> = lines.filter(|l| !l.is_empty()).map(str::to_string).collect();
        let manifest = Self {
            seed: seed.ok_or_else(|| CorpusError::Manifest("bad or missing seed".into()))?,
            n: n.ok_or_else(|| CorpusError::Manifest("bad or missing n".into()))?,
            source: source.ok_or_else(|| CorpusError::Manifest("missing source".into()))?,
            ids,
        };
        if manifest.ids.len() != manifest.n {
            return Err(CorpusError::Manifest(format!(
                "header says n={} but {} ids listed",
                manifest.n,
                manifest.ids.len()
            )));
        }
        Ok(manifest)
    }

    /// Re-materializes the subset from `ds`, which must be the dataset the
    /// manifest was drawn from.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset, CorpusError> {
        let checksum = ds.checksum();
        if checksum != self.source {
            return Err(CorpusError::Manifest(format!(
                "manifest was drawn from {} but dataset checksum is {checksum}",
                self.source
            )));
        }
        let wanted: HashSet<&str> = self.ids.iter().map(String::as_str).collect();
        let records = ds.records().iter().filter(|r| wanted.contains(r.id.as_str())).cloned().collect();
        Dataset::new(format!("{}[subset]", ds.name), ds.source.clone(), records)
    }
}

pub fn read_subset_manifest(path: impl AsRef<Path>) -> Result<SubsetManifest, CorpusError> {
    SubsetManifest::parse(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone)]
pub struct Subset {
    pub dataset: Dataset,
    pub manifest: SubsetManifest,
}

/// Uniform sample of `n` records without replacement.
///
/// The draw runs over the records sorted by id, so the selection depends
/// only on the dataset's content (its checksum), `n` and `seed`; the chosen
/// records are returned in their original order.
pub fn sample_subset(ds: &Dataset, n: usize, seed: u64) -> Result<Subset, CorpusError> {
    if n > ds.len() {
        return Err(CorpusError::Count {
            requested: n,
            available: ds.len(),
        });
    }
    let mut by_id: Vec<usize> = (0..ds.len()).collect();
    by_id.sort_by(|&a, &b| ds.records()[a].id.cmp(&ds.records()[b].id));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, ds.len(), n)
        .into_iter()
        .map(|i| by_id[i])
        .collect();
    chosen.sort_unstable();

    let records: Vec<QaRecord> = chosen.iter().map(|&i| ds.records()[i].clone()).collect();
    let manifest = SubsetManifest {
        seed,
        n,
        source: ds.checksum(),
        ids: records.iter().map(|r| r.id.clone()).collect(),
    };
    let dataset = Dataset::new(format!("{}[subset]", ds.name), ds.source.clone(), records)?;
    Ok(Subset { dataset, manifest })
}

fn normalize_for_key(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Duplicate key: (context, question, first answer text), each with
/// whitespace collapsed and case folded.
pub fn dedup_key(r: &QaRecord) -> (String, String, String) {
    (
        normalize_for_key(&r.context),
        normalize_for_key(&r.question),
        normalize_for_key(r.first_answer().map(|a| a.text.as_str()).unwrap_or("")),
    )
}

/// Keeps the first record of every duplicate group.
pub fn dedup(ds: &Dataset) -> (Dataset, usize) {
    let mut seen = HashSet::with_capacity(ds.len());
    let kept: Vec<QaRecord> = ds.records().iter().filter(|r| seen.insert(dedup_key(r))).cloned().collect();
    let removed = ds.len() - kept.len();
    let out = Dataset::new(ds.name.clone(), ds.source.clone(), kept).expect("subset of unique ids is unique");
    (out, removed)
}
