use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;

use crate::error::{Result, UstError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `label<TAB>text`, UTF-8, no quoting.
    Tsv,
    /// Header `label,text`, standard CSV quoting.
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "tsv" | "txt" => Some(Format::Tsv),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            Format::Tsv => "tsv",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub text: String,
    pub label: usize,
}

/// Assigns class indices in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct LabelIndex {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl LabelIndex {
    pub fn index(&mut self, name: &str) -> usize {
        if let Some(&i) = self.lookup.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.lookup.insert(name.to_string(), i);
        i
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub loaded: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub class_names: Vec<String>,
    pub train: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
}

impl Corpus {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// Writes `train.tsv` and `test.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| UstError::io(dir, e))?;
        for (name, part) in [("train.tsv", &self.train), ("test.tsv", &self.test)] {
            let path = dir.join(name);
            let mut w =
                std::io::BufWriter::new(File::create(&path).map_err(|e| UstError::io(&path, e))?);
            for ex in part {
                writeln!(w, "{}\t{}", self.class_names[ex.label], ex.text)
                    .map_err(|e| UstError::io(&path, e))?;
            }
            w.flush().map_err(|e| UstError::io(&path, e))?;
        }
        Ok(())
    }
}

fn accept(label: &str, text: &str, index: &mut LabelIndex, out: &mut Vec<LabeledText>) -> bool {
    let (label, text) = (label.trim(), text.trim());
    if label.is_empty() || text.is_empty() {
        return false;
    }
    out.push(LabeledText {
        text: text.to_string(),
        label: index.index(label),
    });
    true
}

/// Reads one labeled file. Malformed rows are skipped and counted.
pub fn load_labeled_file(
    path: &Path,
    format: Format,
    index: &mut LabelIndex,
) -> Result<(Vec<LabeledText>, LoadStats)> {
    let file = File::open(path).map_err(|e| UstError::io(path, e))?;
    let mut out = Vec::new();
    let mut stats = LoadStats::default();
    match format {
        Format::Tsv => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| UstError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let ok = line
                    .split_once('\t')
                    .is_some_and(|(l, t)| accept(l, t, index, &mut out));
                if !ok {
                    stats.skipped += 1;
                }
            }
        }
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            let headers = reader.headers()?.clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let (Some(lc), Some(tc)) = (col("label"), col("text")) else {
                return Err(UstError::Corpus(format!(
                    "{}: CSV header must contain label and text",
                    path.display()
                )));
            };
            for record in reader.records() {
                let record = record?;
                let ok = match (record.get(lc), record.get(tc)) {
                    (Some(l), Some(t)) => accept(l, t, index, &mut out),
                    _ => false,
                };
                if !ok {
                    stats.skipped += 1;
                }
            }
        }
    }
    stats.loaded = out.len();
    if stats.skipped > 0 {
        warn!(
            "{}: skipped {} malformed rows",
            path.display(),
            stats.skipped
        );
    }
    Ok((out, stats))
}

/// Loads a corpus.
///
/// `path` is either a single labeled file (no test partition) or a directory
/// holding `train.<ext>` and optionally `test.<ext>`. The format is taken from
/// `format` or the file extension.
pub fn load_corpus(path: &Path, format: Option<Format>) -> Result<(Corpus, LoadStats)> {
    let mut index = LabelIndex::default();
    let (train, test, stats) = if path.is_dir() {
        let candidates = match format {
            Some(f) => vec![f],
            None => vec![Format::Tsv, Format::Csv],
        };
        let format = candidates
            .into_iter()
            .find(|f| path.join(format!("train.{}", f.extension())).is_file())
            .ok_or_else(|| {
                UstError::Corpus(format!("{}: no train.tsv or train.csv", path.display()))
            })?;
        let ext = format.extension();
        let (train, mut stats) =
            load_labeled_file(&path.join(format!("train.{ext}")), format, &mut index)?;
        let test_path = path.join(format!("test.{ext}"));
        let test = if test_path.is_file() {
            let (test, s) = load_labeled_file(&test_path, format, &mut index)?;
            stats.loaded += s.loaded;
            stats.skipped += s.skipped;
            test
        } else {
            Vec::new()
        };
        (train, test, stats)
    } else {
        let format = format
            .or_else(|| Format::from_path(path))
            .unwrap_or(Format::Tsv);
        let (train, stats) = load_labeled_file(path, format, &mut index)?;
        (train, Vec::new(), stats)
    };

    if train.is_empty() {
        return Err(UstError::Corpus(format!("{}: no examples", path.display())));
    }
    if index.names().len() < 2 {
        return Err(UstError::Corpus(format!(
            "{}: need at least two classes, found {}",
            path.display(),
            index.names().len()
        )));
    }
    let corpus = Corpus {
        class_names: index.names().to_vec(),
        train,
        test,
    };
    Ok((corpus, stats))
}
