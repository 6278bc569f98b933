//! On-disk corpora: `<root>/<lang>/*.txt`, one document per file, and
//! parallel bundles `<root>/<lang>.txt` with one sentence per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{split_documents, LanguageCorpus};
use crate::error::{data_err, Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn read_utf8(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    std::str::from_utf8(&bytes).map_err(|e| data_err!("{}: not UTF-8: {e}", path.display()))?;
    Ok(bytes)
}

/// Loads every language folder under `root`. Documents are the `.txt` files
/// of a folder in file-name order; splits follow
/// [`split_documents`](super::split_documents).
pub fn load_corpus_dir(root: &Path) -> Result<BTreeMap<String, LanguageCorpus>> {
    if !root.is_dir() {
        return Err(data_err!("corpus directory {} does not exist", root.display()));
    }
    let mut out = BTreeMap::new();
    for lang_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let lang = lang_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| data_err!("{}: language folder name is not UTF-8", lang_dir.display()))?
            .to_string();
        let mut docs = Vec::new();
        for file in sorted_entries(&lang_dir)? {
            if file.is_file() && file.extension().is_some_and(|e| e == "txt") {
                docs.push(read_utf8(&file)?);
            }
        }
        if docs.is_empty() {
            return Err(data_err!("{}: no .txt documents", lang_dir.display()));
        }
        let (train, validation, probe) =
            split_documents(docs).map_err(|e| data_err!("{}: {e}", lang_dir.display()))?;
        out.insert(
            lang.clone(),
            LanguageCorpus {
                lang_id: lang,
                train,
                validation,
                probe,
                parallel: None,
            },
        );
    }
    if out.is_empty() {
        return Err(data_err!("{}: no language folders", root.display()));
    }
    Ok(out)
}

/// Loads `<root>/<lang>.txt` sentence lists; all languages must have the same
/// number of lines.
pub fn load_parallel_dir(root: &Path) -> Result<BTreeMap<String, Vec<Vec<u8>>>> {
    if !root.is_dir() {
        return Err(data_err!("parallel directory {} does not exist", root.display()));
    }
    let mut out = BTreeMap::new();
    for file in sorted_entries(root)? {
        if !(file.is_file() && file.extension().is_some_and(|e| e == "txt")) {
            continue;
        }
        let lang = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let bytes = read_utf8(&file)?;
        let mut lines: Vec<Vec<u8>> = bytes.split(|&b| b == b'\n').map(|l| l.to_vec()).collect();
        if lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        out.insert(lang, lines);
    }
    let mut counts = out.iter().map(|(l, s)| (l, s.len()));
    if let Some((first_lang, n)) = counts.next() {
        if let Some((lang, m)) = counts.find(|&(_, m)| m != n) {
            return Err(data_err!(
                "parallel bundle misaligned: {first_lang} has {n} sentences, {lang} has {m}"
            ));
        }
    } else {
        return Err(data_err!("{}: no parallel files", root.display()));
    }
    Ok(out)
}

pub fn write_corpus_dir(root: &Path, lang: &str, docs: &[Vec<u8>]) -> Result<()> {
    let dir = root.join(lang);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, doc) in docs.iter().enumerate() {
        let path = dir.join(format!("{i:05}.txt"));
        fs::write(&path, doc).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn write_parallel_dir(root: &Path, lang: &str, sentences: &[Vec<u8>]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut buf = Vec::new();
    for s in sentences {
        if s.contains(&b'\n') {
            return Err(data_err!("{lang}: parallel sentence contains a newline"));
        }
        buf.extend_from_slice(s);
        buf.push(b'\n');
    }
    let path = root.join(format!("{lang}.txt"));
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))
}
