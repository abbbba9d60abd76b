//! Tokenization, keyword extraction, copy labels and fold assignment on the
//! bundled corpus.

use std::path::Path;

use reqgen::corpus::{encode_pair, extract_keywords, load_records, make_folds, Vocabulary};

fn main() -> reqgen::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/corpus.jsonl");
    let mut records = load_records(path)?;

    for (i, r) in records.iter_mut().enumerate() {
        if r.keywords.is_empty() {
            r.keywords = extract_keywords(&r.text, i as u64)?;
            println!("extracted {:?} from {:?}", r.keywords, r.text);
        }
    }

    let vocab = Vocabulary::build(records.iter().map(|r| r.text.as_str()), 1);
    println!("\nvocabulary: {} tokens", vocab.len());

    let record = &records[1];
    let pair = encode_pair(record, &vocab, 64)?;
    println!("\nkeywords {:?}", record.keywords);
    println!("source   {}", vocab.decode(&pair.src_ids).join(" "));
    let target = vocab.decode(&pair.tgt_ids);
    let marked: Vec<String> = target
        .iter()
        .zip(&pair.copy_labels)
        .map(|(t, &c)| if c { format!("*{t}*") } else { t.clone() })
        .collect();
    println!("target   {}", marked.join(" "));

    let split = make_folds(&records, 10, 7)?;
    let sizes: Vec<usize> = split.folds.iter().map(Vec::len).collect();
    println!("\n10 folds, sizes {sizes:?}");
    Ok(())
}
