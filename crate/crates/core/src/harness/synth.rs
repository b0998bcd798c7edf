//! Deterministic synthetic task sequences with controlled lexical overlap.
//!
//! Every task draws its words from its own lexicon of pseudo-words. Between
//! consecutive tasks a fraction `overlap` of each word class is carried over
//! from the previous task, so input TF-IDF similarity tracks the overlap.
//! Question templates use each task's own function words, which is what a
//! model forgets when it moves on to the next task.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TaskSpec;
use super::dataset::save_dataset;
use crate::encoding::{Format, QgInstance};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub num_tasks: usize,
    /// Overlap between task `k` and `k + 1`; one entry per transition.
    /// Missing entries mean no overlap.
    pub overlaps: Vec<f64>,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub adjectives: usize,
    pub subjects: usize,
    pub verbs: usize,
    pub objects: usize,
    pub fillers: usize,
    /// Dominant format per task; cycles through all four when empty.
    pub formats: Vec<Format>,
    /// Share of each task drawn in its dominant format.
    pub primary_share: f64,
    /// Filler sentences around the focus sentence, inclusive range.
    pub min_fillers: usize,
    pub max_fillers: usize,
    /// Overlap applied to function words instead of `overlaps`; `1.0` makes
    /// question words common to every task.
    pub function_overlap: Option<f64>,
    /// Share of each task written in a common extractive style whose
    /// question words are shared by every task.
    pub common_share: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            num_tasks: 4,
            overlaps: Vec::new(),
            train_size: 500,
            dev_size: 60,
            test_size: 60,
            adjectives: 8,
            subjects: 16,
            verbs: 8,
            objects: 16,
            fillers: 16,
            formats: Vec::new(),
            primary_share: 0.7,
            min_fillers: 0,
            max_fillers: 2,
            function_overlap: None,
            common_share: 0.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return Err(Error::usage("task count and split sizes must be positive"));
        }
        if let Some(o) = self
            .overlaps
            .iter()
            .chain(&self.function_overlap)
            .find(|o| !(0.0..=1.0).contains(*o))
        {
            return Err(Error::usage(format!("overlap {o} outside [0, 1]")));
        }
        if self.overlaps.len() > self.num_tasks.saturating_sub(1) {
            return Err(Error::usage("more overlaps than task transitions"));
        }
        if !(0.0..=1.0).contains(&self.primary_share) || !(0.0..=1.0).contains(&self.common_share) {
            return Err(Error::usage("shares must lie in [0, 1]"));
        }
        if self.max_fillers < self.min_fillers {
            return Err(Error::usage("max_fillers below min_fillers"));
        }
        if self.objects < 3 || self.fillers < 4 || [self.adjectives, self.subjects, self.verbs].contains(&0) {
            return Err(Error::usage("lexicon too small"));
        }
        Ok(())
    }

    pub fn overlap(&self, transition: usize) -> f64 {
        self.overlaps.get(transition).copied().unwrap_or(0.0)
    }

    pub fn format(&self, task: usize) -> Format {
        if self.formats.is_empty() {
            Format::ALL[task % Format::ALL.len()]
        } else {
            self.formats[task % self.formats.len()]
        }
    }
}

/// One task's words, by class.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub adjectives: Vec<String>,
    pub subjects: Vec<String>,
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
    /// Paired index-for-index with `objects`; abstractive answers.
    pub synonyms: Vec<String>,
    /// Words of the sentences around the focus sentence.
    pub fillers: Vec<String>,
    /// Determiner, auxiliary and two question words.
    pub function: Vec<String>,
    /// Function words of the common style, identical across tasks.
    pub common: Vec<String>,
}

impl Lexicon {
    fn classes(&self) -> [&Vec<String>; 8] {
        [
            &self.adjectives,
            &self.subjects,
            &self.verbs,
            &self.objects,
            &self.synonyms,
            &self.fillers,
            &self.function,
            &self.common,
        ]
    }

    /// Every word of the lexicon.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.classes().into_iter().flatten().map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTask {
    pub name: String,
    pub format: Format,
    pub lexicon: Lexicon,
    pub train: Vec<QgInstance>,
    pub dev: Vec<QgInstance>,
    pub test: Vec<QgInstance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSuite {
    pub tasks: Vec<SynthTask>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const RESERVED: [&str; 5] = ["answer", "passage", "distractor", "yes", "no"];

struct WordSource {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordSource {
    fn fresh(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(*CONSONANTS.choose(&mut self.rng).unwrap() as char);
                w.push(*VOWELS.choose(&mut self.rng).unwrap() as char);
            }
            if !RESERVED.contains(&w.as_str()) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn class(&mut self, prev: Option<&Vec<String>>, size: usize, overlap: f64) -> Vec<String> {
        let keep = prev.map_or(0, |p| ((overlap * size as f64).round() as usize).min(p.len()));
        let mut out: Vec<String> = prev.map_or(Vec::new(), |p| p[..keep].to_vec());
        while out.len() < size {
            out.push(self.fresh());
        }
        out
    }
}

fn lexicons(params: &SynthParams, seed: u64) -> Vec<Lexicon> {
    let mut src = WordSource {
        rng: rng::stream(seed, &[rng::SYNTH, 0]),
        used: HashSet::new(),
    };
    let common: Vec<String> = (0..4).map(|_| src.fresh()).collect();
    let mut out: Vec<Lexicon> = Vec::with_capacity(params.num_tasks);
    for k in 0..params.num_tasks {
        let o = if k == 0 { 0.0 } else { params.overlap(k - 1) };
        let prev = out.last();
        let lex = Lexicon {
            adjectives: src.class(prev.map(|p| &p.adjectives), params.adjectives, o),
            subjects: src.class(prev.map(|p| &p.subjects), params.subjects, o),
            verbs: src.class(prev.map(|p| &p.verbs), params.verbs, o),
            objects: src.class(prev.map(|p| &p.objects), params.objects, o),
            synonyms: src.class(prev.map(|p| &p.synonyms), params.objects, o),
            fillers: src.class(prev.map(|p| &p.fillers), params.fillers, o),
            function: src.class(prev.map(|p| &p.function), 4, params.function_overlap.unwrap_or(o)),
            common: common.clone(),
        };
        out.push(lex);
    }
    out
}

fn draw_format(params: &SynthParams, task: usize, rng: &mut ChaCha8Rng) -> Format {
    let primary = params.format(task);
    if rng.random::<f64>() < params.primary_share {
        return primary;
    }
    let others: Vec<Format> = Format::ALL.iter().copied().filter(|f| *f != primary).collect();
    *others.choose(rng).unwrap()
}

/// A passage holds one focus sentence `det adj subject verb object` among
/// filler sentences built from filler words only. Questions copy the focus
/// sentence's words into a task-specific template.
fn draw_instance(params: &SynthParams, task: usize, lex: &Lexicon, rng: &mut ChaCha8Rng) -> QgInstance {
    let common = rng.random::<f64>() < params.common_share;
    let format = if common {
        Format::Extractive
    } else {
        draw_format(params, task, rng)
    };
    let function = if common { &lex.common } else { &lex.function };
    let [det, aux, what, which] = [0, 1, 2, 3].map(|i| function[i].as_str());
    let adj = lex.adjectives.choose(rng).unwrap();
    let subj = lex.subjects.choose(rng).unwrap();
    let verb = lex.verbs.choose(rng).unwrap();
    let objs = rand::seq::index::sample(rng, lex.objects.len(), 3).into_vec();
    let obj = &lex.objects[objs[0]];
    let focus = format!("{det} {adj} {subj} {verb} {obj}");

    let n_fillers = rng.random_range(params.min_fillers..=params.max_fillers);
    let at = rng.random_range(0..=n_fillers);
    let mut sentences: Vec<String> = (0..n_fillers)
        .map(|_| {
            let w: Vec<&str> = (0..4).map(|_| lex.fillers.choose(rng).unwrap().as_str()).collect();
            format!("{det} {}", w.join(" "))
        })
        .collect();
    sentences.insert(at, focus);
    let context = sentences.join(" ");

    let (answer, question, distractors) = match format {
        Format::Extractive => (obj.clone(), format!("{what} {aux} {det} {adj} {subj} {verb} ?"), Vec::new()),
        Format::Abstractive => (
            lex.synonyms[objs[0]].clone(),
            format!("{which} {aux} {det} {adj} {subj} {verb} ?"),
            Vec::new(),
        ),
        Format::Multichoice => (
            obj.clone(),
            format!("{which} {det} {subj} {verb} {aux} ?"),
            vec![lex.objects[objs[1]].clone(), lex.objects[objs[2]].clone()],
        ),
        Format::Boolean => {
            if rng.random::<bool>() {
                ("yes".to_string(), format!("{aux} {det} {subj} {verb} {det} {obj} ?"), Vec::new())
            } else {
                ("no".to_string(), format!("{aux} {det} {obj} {verb} {det} {subj} ?"), Vec::new())
            }
        }
    };
    QgInstance {
        format,
        context,
        answer,
        question,
        distractors,
    }
}

/// Generates the suite. Identical `(params, seed)` give identical output.
pub fn gen_synthetic_suite(params: &SynthParams, seed: u64) -> Result<SyntheticSuite> {
    params.validate()?;
    let lexicons = lexicons(params, seed);
    let mut tasks = Vec::with_capacity(params.num_tasks);
    for (k, lex) in lexicons.into_iter().enumerate() {
        let mut rng = rng::stream(seed, &[rng::SYNTH, k as u64 + 1]);
        let want = params.train_size + params.dev_size + params.test_size;
        let mut seen = HashSet::new();
        let mut all = Vec::with_capacity(want);
        let mut attempts = 0usize;
        while all.len() < want {
            attempts += 1;
            if attempts > want * 50 {
                return Err(Error::usage(format!(
                    "lexicon of task {} too small for {want} distinct examples",
                    k + 1
                )));
            }
            let inst = draw_instance(params, k, &lex, &mut rng);
            inst.validate()?;
            if seen.insert((inst.context.clone(), inst.answer.clone(), inst.question.clone())) {
                all.push(inst);
            }
        }
        let test = all.split_off(params.train_size + params.dev_size);
        let dev = all.split_off(params.train_size);
        let format = params.format(k);
        tasks.push(SynthTask {
            name: format!("task{}_{}", k + 1, format),
            format,
            lexicon: lex,
            train: all,
            dev,
            test,
        });
    }
    Ok(SyntheticSuite { tasks })
}

/// Relative file names for one task's splits.
fn split_files(name: &str) -> [String; 3] {
    ["train", "dev", "test"].map(|s| format!("{name}.{s}.jsonl"))
}

/// Writes every split as JSONL plus `suite.json` listing the tasks with
/// paths relative to `dir`. Returns the specs with paths under `dir`.
pub fn write_suite(suite: &SyntheticSuite, dir: &Path) -> Result<Vec<TaskSpec>> {
    fs::create_dir_all(dir)?;
    let mut relative = Vec::with_capacity(suite.tasks.len());
    for task in &suite.tasks {
        let [train, dev, test] = split_files(&task.name);
        save_dataset(&dir.join(&train), &task.train)?;
        save_dataset(&dir.join(&dev), &task.dev)?;
        save_dataset(&dir.join(&test), &task.test)?;
        relative.push(TaskSpec {
            name: task.name.clone(),
            format: Some(task.format),
            train: train.into(),
            dev: dev.into(),
            test: test.into(),
            max_examples: None,
        });
    }
    fs::write(dir.join("suite.json"), serde_json::to_string_pretty(&relative)?)?;
    Ok(relative.iter().map(|t| t.rebased(dir)).collect())
}
