//! Fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gemquad::backend::MockScript;
use gemquad::corpus::{serialize_squad, write_jsonl, Answer, Dataset, QaRecord, Source};
use gemquad::MetricValue;
use serde_json::json;

/// Difficulty histogram per language for the five-round mock run:
/// skills [0.30, 0.45, 0.55, 0.58, 0.59] accept 30, 15, 10, 3, 2.
pub const E2E_HISTOGRAM: [(f64, usize); 6] = [(0.2, 30), (0.4, 15), (0.5, 10), (0.57, 3), (0.585, 2), (0.9, 40)];
pub const E2E_SKILLS: [f64; 5] = [0.30, 0.45, 0.55, 0.58, 0.59];

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub mode: &'static str,
    pub languages: Vec<&'static str>,
    pub histogram: Vec<(f64, usize)>,
    pub skills: Vec<f64>,
    pub validation: Vec<MetricValue>,
    pub max_rounds: u32,
    pub gold: usize,
    pub step_budget: Option<u64>,
    pub seed: u64,
    /// Extra synthetic records per language whose answer is not in the context.
    pub out_of_context: usize,
    /// Extra synthetic records per language duplicating an earlier record.
    pub duplicates: usize,
    pub eval: bool,
    /// Write contexts and exemplars only; `generate` produces the synthetic files.
    pub via_generate: bool,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            mode: "gemquad",
            languages: vec!["hi", "es"],
            histogram: E2E_HISTOGRAM.to_vec(),
            skills: E2E_SKILLS.to_vec(),
            validation: Vec::new(),
            max_rounds: 5,
            gold: 400,
            step_budget: Some(2000),
            seed: 7,
            out_of_context: 0,
            duplicates: 0,
            eval: true,
            via_generate: false,
        }
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
    pub opts: FixtureOptions,
}

pub fn context_text(lang: &str, i: usize) -> (String, String, String) {
    match lang {
        "hi" => (
            format!("दस्तावेज़ {i} में उत्तरी नगर{i} का वर्णन है।"),
            format!("दस्तावेज़ {i} किस नगर का वर्णन करता है?"),
            format!("नगर{i}"),
        ),
        "es" => (
            format!("El documento {i} describe la villa Pueblo{i} del norte."),
            format!("¿Qué villa describe el documento {i}?"),
            format!("Pueblo{i}"),
        ),
        _ => (
            format!("Record {i} says the harbour of Port{i} is busy."),
            format!("Which harbour does record {i} mention?"),
            format!("Port{i}"),
        ),
    }
}

pub fn synthetic_id(lang: &str, i: usize) -> String {
    format!("{lang}-c{i:05}-q0")
}

fn gold_records(n: usize, prefix: &str) -> Vec<QaRecord> {
    (0..n)
        .map(|i| {
            let context = format!("Entry {i} of the {prefix} set names City{i} as the capital.");
            let answer = format!("City{i}");
            let start = context.find(&answer).unwrap();
            QaRecord::gold(
                format!("{prefix}-{i:05}"),
                "en",
                context.clone(),
                format!("Which city does entry {i} name?"),
                vec![Answer::new(answer, start)],
            )
        })
        .collect()
}

fn write_squad(path: &Path, records: Vec<QaRecord>) {
    let ds = Dataset::new(path.file_stem().unwrap().to_string_lossy(), "fixture", records).unwrap();
    fs::write(path, serialize_squad(&ds)).unwrap();
}

impl Fixture {
    pub fn build(opts: FixtureOptions) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for sub in ["synthetic", "contexts", "exemplars"] {
            fs::create_dir_all(root.join(sub)).unwrap();
        }
        write_squad(&root.join("gold.json"), gold_records(opts.gold, "gold"));
        write_squad(&root.join("dev.json"), gold_records(20, "dev"));

        let mut student = MockScript {
            skills: opts.skills.clone(),
            validation: opts.validation.clone(),
            ..MockScript::default()
        };
        let mut teacher = MockScript::default();

        for lang in &opts.languages {
            let mut synthetic = Vec::new();
            let mut contexts = Vec::new();
            let mut i = 0;
            for &(d, n) in &opts.histogram {
                for _ in 0..n {
                    let (context, question, answer) = context_text(lang, i);
                    let id = synthetic_id(lang, i);
                    student.difficulty.insert(id.clone(), d);
                    student.answers.insert(id.clone(), answer.clone());
                    let ctx_id = format!("{lang}-c{i:05}");
                    teacher.contexts.insert(ctx_id.clone(), context.clone());
                    teacher.generations.insert(ctx_id, format!(" {question}\nAnswer: {answer}"));
                    contexts.push(context.clone());
                    synthetic.push(QaRecord {
                        id,
                        lang: lang.to_string(),
                        context,
                        question,
                        answers: vec![Answer::unplaced(answer)],
                        source: Source::Synthetic,
                        gen_meta: None,
                    });
                    i += 1;
                }
            }
            for j in 0..opts.out_of_context {
                let (context, question, _) = context_text(lang, i);
                synthetic.push(QaRecord {
                    id: format!("{lang}-bad{j}"),
                    lang: lang.to_string(),
                    context,
                    question,
                    answers: vec![Answer::unplaced(format!("Nowhere{j}"))],
                    source: Source::Synthetic,
                    gen_meta: None,
                });
                i += 1;
            }
            for j in 0..opts.duplicates {
                let mut dup = synthetic[j].clone();
                dup.id = format!("{lang}-dup{j}");
                dup.question = dup.question.to_uppercase();
                synthetic.push(dup);
            }
            if !opts.via_generate {
                write_jsonl(root.join("synthetic").join(format!("{lang}.jsonl")), &synthetic).unwrap();
            }

            let paragraphs: Vec<_> = contexts.iter().map(|c| json!({"context": c, "qas": []})).collect();
            let doc = json!({"version": "1.1", "data": [{"title": lang, "paragraphs": paragraphs}]});
            fs::write(root.join("contexts").join(format!("{lang}.json")), serde_json::to_vec(&doc).unwrap()).unwrap();

            let exemplars: Vec<QaRecord> = (0..10)
                .map(|k| {
                    let (context, question, answer) = context_text(lang, 10_000 + k);
                    let offset = gemquad::corpus::char_find(&context, &answer).unwrap();
                    QaRecord::gold(format!("x{lang}-{k}"), lang.to_string(), context, question, vec![Answer::new(answer, offset)])
                })
                .collect();
            write_squad(&root.join("exemplars").join(format!("{lang}.json")), exemplars);
        }
        fs::write(root.join("student.json"), serde_json::to_vec_pretty(&student).unwrap()).unwrap();
        fs::write(root.join("teacher.json"), serde_json::to_vec_pretty(&teacher).unwrap()).unwrap();

        let config = root.join("config.toml");
        fs::write(&config, config_text(&opts)).unwrap();
        Self { dir, config, opts }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root().join("run")
    }

    pub fn load_config(&self) -> gemquad::orchestrator::RunConfig {
        gemquad::orchestrator::RunConfig::load(&self.config).unwrap()
    }

    pub fn validated_total(&self) -> usize {
        self.opts.histogram.iter().map(|(_, n)| n).sum::<usize>() * self.opts.languages.len()
    }
}

pub fn config_text(opts: &FixtureOptions) -> String {
    let langs: Vec<String> = opts.languages.iter().map(|l| format!("\"{l}\"")).collect();
    let mut out = format!(
        "mode = \"{}\"\nlanguages = [{}]\nstage_order = [{}]\nrun_dir = \"run\"\n\n[datasets]\ngold = \"gold.json\"\nvalidation = \"dev.json\"\n",
        opts.mode,
        langs.join(", "),
        langs.join(", ")
    );
    if opts.eval {
        out.push_str("eval.dev = { path = \"dev.json\", lang = \"en\" }\n");
    }
    for l in &opts.languages {
        out.push_str(&format!("synthetic.{l} = \"synthetic/{l}.jsonl\"\ncontexts.{l} = \"contexts/{l}.json\"\n"));
    }
    out.push_str("\n[exemplars]\n");
    for l in &opts.languages {
        out.push_str(&format!("{l} = \"exemplars/{l}.json\"\n"));
    }
    out.push_str("\n[backend.generate]\nbase_url = \"mock://teacher.json\"\nconcurrency = 3\n");
    out.push_str("\n[backend.student]\nbase_url = \"mock://student.json\"\n");
    out.push_str(&format!(
        "\n[criteria]\nk = 2\ne = 0.005\nv = 0.01\nmax_rounds = {}\n\n[train]\nlearning_rate = 2e-5\nbatch_size = 8\n",
        opts.max_rounds
    ));
    if let Some(s) = opts.step_budget {
        out.push_str(&format!("step_budget = {s}\n"));
    }
    out.push_str(&format!("\n[seeds]\nmaster = {}\n", opts.seed));
    out
}

/// Every file under `dir` (relative path → bytes), excluding the lock.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else if p.file_name().is_some_and(|n| n != ".lock") {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Asserts two snapshots are byte-identical, naming the first differing file.
pub fn assert_same_tree(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) {
    let keys_a: Vec<_> = a.keys().collect();
    let keys_b: Vec<_> = b.keys().collect();
    assert_eq!(keys_a, keys_b, "file sets differ");
    for (k, v) in a {
        assert!(v == &b[k], "{k} differs");
    }
}
