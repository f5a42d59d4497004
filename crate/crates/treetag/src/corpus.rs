//! Data ingestion and evaluation: CoNLL-2000 column files, GloVe-style text
//! embeddings, subset construction, and chunk-level scoring.
//!
//! The file format is one token per line with three whitespace-separated
//! columns (word, POS, chunk tag) and a blank line between sentences.
//! Predictions are written in the same layout with a fourth column holding
//! the predicted tag, so external span scorers can cross-check ours.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{Sentence, TagId, TagInventory};

/// One input token: surface form, POS tag (carried through, unused by the
/// model), and the gold chunk tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawToken {
    pub surface: String,
    pub pos: String,
    pub chunk: String,
}

pub type RawSentence = Vec<RawToken>;

/// Parses the three-column format. Sentence order and tag strings are
/// preserved verbatim; trailing blank lines are harmless.
pub fn parse_conll(reader: impl BufRead) -> Result<Vec<RawSentence>> {
    let mut sentences = Vec::new();
    let mut current: RawSentence = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected 3 columns (word, POS, chunk), found {}", fields.len()),
            });
        }
        current.push(RawToken {
            surface: fields[0].to_string(),
            pos: fields[1].to_string(),
            chunk: fields[2].to_string(),
        });
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Parses a predictions file: the three input columns plus the predicted tag.
pub fn parse_predictions(reader: impl BufRead) -> Result<Vec<Vec<(RawToken, String)>>> {
    let mut sentences = Vec::new();
    let mut current: Vec<(RawToken, String)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected 4 columns (word, POS, chunk, predicted), found {}", fields.len()),
            });
        }
        current.push((
            RawToken {
                surface: fields[0].to_string(),
                pos: fields[1].to_string(),
                chunk: fields[2].to_string(),
            },
            fields[3].to_string(),
        ));
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

pub fn write_conll(w: &mut impl Write, sentences: &[RawSentence]) -> Result<()> {
    for sentence in sentences {
        for token in sentence {
            writeln!(w, "{} {} {}", token.surface, token.pos, token.chunk)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes the four-column prediction format, one predicted tag sequence per
/// input sentence.
pub fn write_predictions(
    w: &mut impl Write,
    sentences: &[RawSentence],
    predicted: &[Vec<String>],
) -> Result<()> {
    if sentences.len() != predicted.len() {
        return Err(Error::Input(format!(
            "{} sentences but {} predicted sequences",
            sentences.len(),
            predicted.len()
        )));
    }
    for (sentence, tags) in sentences.iter().zip(predicted) {
        if sentence.len() != tags.len() {
            return Err(Error::Input("prediction length differs from sentence length".into()));
        }
        for (token, tag) in sentence.iter().zip(tags) {
            writeln!(w, "{} {} {} {}", token.surface, token.pos, token.chunk, tag)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Word -> vector table with total lookup: surface forms are lowercased (the
/// standard distributed tables are uncased) and out-of-vocabulary words map
/// to the zero vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Array1<f64>>,
    dim: usize,
    oov: Array1<f64>,
}

impl EmbeddingTable {
    /// Loads the text format: a word followed by exactly `dim` floats per
    /// line.
    pub fn load(reader: impl BufRead, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut vectors = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("non-blank line has a first field");
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        msg: format!("not a number: `{f}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected {dim} values, found {}", values.len()),
                });
            }
            vectors.insert(word.to_lowercase(), Array1::from_vec(values));
        }
        Ok(Self { vectors, dim, oov: Array1::zeros(dim) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Case-folded, total lookup.
    pub fn lookup(&self, word: &str) -> &Array1<f64> {
        self.vectors.get(&word.to_lowercase()).unwrap_or(&self.oov)
    }

    /// Builds a model-ready [`Sentence`] from raw tokens.
    pub fn embed_sentence(&self, tokens: &[RawToken]) -> Result<Arc<Sentence>> {
        let surfaces: Vec<String> = tokens.iter().map(|t| t.surface.clone()).collect();
        let embeds: Vec<Array1<f64>> =
            tokens.iter().map(|t| self.lookup(&t.surface).clone()).collect();
        Ok(Arc::new(Sentence::new(surfaces, embeds)?))
    }
}

/// Filters sentences to `max_len` tokens, draws a seeded uniform sample of
/// `n`, and splits it into `n_train` training sentences plus the rest for
/// testing. Deterministic given the seed.
pub fn build_subset(
    sentences: Vec<RawSentence>,
    max_len: usize,
    n: usize,
    n_train: usize,
    seed: u64,
) -> Result<(Vec<RawSentence>, Vec<RawSentence>)> {
    if n_train > n {
        return Err(Error::Config(format!("train size {n_train} exceeds sample size {n}")));
    }
    let mut qualifying: Vec<RawSentence> =
        sentences.into_iter().filter(|s| s.len() <= max_len).collect();
    if qualifying.len() < n {
        return Err(Error::Input(format!(
            "only {} sentences of length <= {max_len}, need {n}",
            qualifying.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    qualifying.shuffle(&mut rng);
    qualifying.truncate(n);
    let test = qualifying.split_off(n_train);
    Ok((qualifying, test))
}

/// Collects the tag inventory from a training split in first-occurrence
/// order.
pub fn build_inventory(sentences: &[RawSentence]) -> Result<TagInventory> {
    let mut seen = HashMap::new();
    let mut tags = Vec::new();
    for sentence in sentences {
        for token in sentence {
            if !seen.contains_key(&token.chunk) {
                seen.insert(token.chunk.clone(), tags.len());
                tags.push(token.chunk.clone());
            }
        }
    }
    TagInventory::from_tags(tags)
}

/// Verifies that every tag appearing in `sentences` is in the inventory.
pub fn check_coverage(inventory: &TagInventory, sentences: &[RawSentence]) -> Result<()> {
    for sentence in sentences {
        for token in sentence {
            if inventory.id(&token.chunk).is_none() {
                return Err(Error::Input(format!(
                    "tag `{}` appears in the data but not in the training inventory",
                    token.chunk
                )));
            }
        }
    }
    Ok(())
}

/// Converts a raw sentence's gold chunk column to tag ids.
pub fn gold_ids(inventory: &TagInventory, sentence: &RawSentence) -> Result<Vec<TagId>> {
    sentence
        .iter()
        .map(|t| {
            inventory
                .id(&t.chunk)
                .ok_or_else(|| Error::Input(format!("tag `{}` not in inventory", t.chunk)))
        })
        .collect()
}

/// Per-chunk-type tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TypeCount {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

/// Token accuracy plus chunk-level precision/recall/F1 with per-type counts.
#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_type: BTreeMap<String, TypeCount>,
}

/// A maximal chunk span: half-open token range plus chunk type.
pub type Chunk = (usize, usize, String);

/// Extracts maximal `B-X (I-X)*` spans. A stray I-X with no live chunk of
/// type X starts a new chunk, matching the conventional scorer's behavior.
pub fn extract_chunks(tags: &[String]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (begins, ty) = match tag.strip_prefix("B-") {
            Some(ty) => (true, Some(ty)),
            None => match tag.strip_prefix("I-") {
                Some(ty) => (false, Some(ty)),
                None if tag == "O" => (false, None),
                // A bare non-O tag begins a single-type chunk.
                None => (true, Some(tag.as_str())),
            },
        };
        let continues = !begins
            && matches!((&open, ty), (Some((_, open_ty)), Some(ty)) if open_ty == ty);
        if !continues {
            if let Some((start, open_ty)) = open.take() {
                chunks.push((start, i, open_ty));
            }
            if let Some(ty) = ty {
                open = Some((i, ty.to_string()));
            }
        }
    }
    if let Some((start, ty)) = open {
        chunks.push((start, tags.len(), ty));
    }
    chunks
}

/// Scores aligned gold and predicted tag sequences: micro token accuracy and
/// exact-match chunk precision/recall/F1. With no chunks on a side, that
/// side's ratio is 1 when the other side is also empty and 0 otherwise, so
/// F1 = 1 exactly when the chunk sets coincide.
pub fn evaluate(gold: &[Vec<String>], predicted: &[Vec<String>]) -> Result<EvalResult> {
    if gold.len() != predicted.len() {
        return Err(Error::Input(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut tokens = 0usize;
    let mut hits = 0usize;
    let mut per_type: BTreeMap<String, TypeCount> = BTreeMap::new();
    let mut totals = TypeCount::default();

    for (sentence_idx, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Input(format!(
                "sentence {sentence_idx}: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        tokens += g.len();
        hits += g.iter().zip(p).filter(|(a, b)| a == b).count();

        let gold_chunks = extract_chunks(g);
        let pred_chunks = extract_chunks(p);
        for c in &gold_chunks {
            per_type.entry(c.2.clone()).or_default().gold += 1;
            totals.gold += 1;
        }
        for c in &pred_chunks {
            per_type.entry(c.2.clone()).or_default().predicted += 1;
            totals.predicted += 1;
        }
        for c in &pred_chunks {
            if gold_chunks.contains(c) {
                per_type.entry(c.2.clone()).or_default().correct += 1;
                totals.correct += 1;
            }
        }
    }
    if tokens == 0 {
        return Err(Error::Input("nothing to evaluate".into()));
    }

    let ratio = |num: usize, den: usize, other_empty: bool| {
        if den == 0 {
            if other_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(totals.correct, totals.predicted, totals.gold == 0);
    let recall = ratio(totals.correct, totals.gold, totals.predicted == 0);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    Ok(EvalResult {
        accuracy: hits as f64 / tokens as f64,
        precision,
        recall,
        f1,
        per_type,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const SAMPLE: &str = "\
Confidence NN B-NP
in IN B-PP
the DT B-NP
pound NN I-NP
. . O

Rockwell NNP B-NP
said VBD B-VP
. . O
";

    #[test]
    fn parses_the_column_format() {
        let sentences = parse_conll(Cursor::new(SAMPLE)).unwrap();
        assert_eq!(sentences.len(), 2);
        assert_eq!(
            sentences[0][0],
            RawToken { surface: "Confidence".into(), pos: "NN".into(), chunk: "B-NP".into() }
        );
        assert_eq!(sentences[1].len(), 3);
    }

    #[test]
    fn trailing_blank_lines_are_ignored() {
        let with = format!("{SAMPLE}\n\n\n");
        assert_eq!(
            parse_conll(Cursor::new(SAMPLE)).unwrap(),
            parse_conll(Cursor::new(with)).unwrap()
        );
    }

    #[test]
    fn wrong_column_count_reports_the_line() {
        let bad = "Confidence NN B-NP\nin IN\n";
        match parse_conll(Cursor::new(bad)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_parses_to_nothing() {
        assert!(parse_conll(Cursor::new("")).unwrap().is_empty());
        assert!(parse_conll(Cursor::new("\n\n")).unwrap().is_empty());
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        let sentences = parse_conll(Cursor::new(SAMPLE)).unwrap();
        let mut out = Vec::new();
        write_conll(&mut out, &sentences).unwrap();
        let reparsed = parse_conll(Cursor::new(out)).unwrap();
        assert_eq!(sentences, reparsed);
    }

    #[test]
    fn embeddings_load_lookup_and_oov() {
        let text = "the 0.1 0.2 0.3\ncat -1.0 0.5 2.25\n";
        let table = EmbeddingTable::load(Cursor::new(text), 3).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.lookup("the"), &Array1::from_vec(vec![0.1, 0.2, 0.3]));
        // Case folding and the zero OOV vector.
        assert_eq!(table.lookup("The"), table.lookup("the"));
        assert_eq!(table.lookup("missing"), &Array1::<f64>::zeros(3));
    }

    #[test]
    fn embedding_arity_errors_carry_line_numbers() {
        let text = "the 0.1 0.2 0.3\ncat 1.0 2.0\n";
        match EmbeddingTable::load(Cursor::new(text), 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn n_token_sentences(lens: &[usize]) -> Vec<RawSentence> {
        lens.iter()
            .enumerate()
            .map(|(i, &len)| {
                (0..len)
                    .map(|j| RawToken {
                        surface: format!("w{i}_{j}"),
                        pos: "NN".into(),
                        chunk: "B-NP".into(),
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn subset_filters_samples_and_splits() {
        let sentences = n_token_sentences(&[3, 20, 5, 13, 14, 2, 9, 1, 13, 4, 8, 6]);
        let (train, test) = build_subset(sentences.clone(), 13, 8, 6, 7).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(test.len(), 2);
        assert!(train.iter().chain(&test).all(|s| s.len() <= 13));

        let (train2, test2) = build_subset(sentences, 13, 8, 6, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn subset_needs_enough_sentences() {
        let sentences = n_token_sentences(&[1, 1, 1]);
        let (train, test) = build_subset(sentences.clone(), 1, 3, 2, 0).unwrap();
        assert_eq!(train.len() + test.len(), 3);
        assert!(matches!(build_subset(sentences, 1, 4, 2, 0), Err(Error::Input(_))));
    }

    #[test]
    fn inventory_is_first_occurrence_ordered() {
        let sentences = parse_conll(Cursor::new(SAMPLE)).unwrap();
        let inv = build_inventory(&sentences).unwrap();
        assert_eq!(inv.tags(), &["B-NP", "B-PP", "I-NP", "O", "B-VP"]);
        assert!(check_coverage(&inv, &sentences).is_ok());

        let extra = n_token_sentences(&[1])
            .into_iter()
            .map(|mut s| {
                s[0].chunk = "B-ADJP".into();
                s
            })
            .collect::<Vec<_>>();
        assert!(check_coverage(&inv, &extra).is_err());
    }

    #[test]
    fn chunk_extraction_follows_scorer_conventions() {
        let tags: Vec<String> =
            ["B-NP", "I-NP", "O", "B-VP", "B-NP", "I-VP"].map(String::from).to_vec();
        assert_eq!(
            extract_chunks(&tags),
            vec![
                (0, 2, "NP".to_string()),
                (3, 4, "VP".to_string()),
                (4, 5, "NP".to_string()),
                // Stray I-VP after B-NP starts a fresh VP chunk.
                (5, 6, "VP".to_string()),
            ]
        );
        let all_o: Vec<String> = vec!["O".into(); 3];
        assert!(extract_chunks(&all_o).is_empty());
    }

    #[test]
    fn evaluate_hand_example() {
        let gold = vec![vec!["B-NP".to_string(), "I-NP".into(), "O".into()]];
        let pred = vec![vec!["B-NP".to_string(), "O".into(), "O".into()]];
        let r = evaluate(&gold, &pred).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        // Gold chunk NP(0..2) vs predicted NP(0..1): no exact match.
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn evaluate_identical_is_perfect() {
        let gold = vec![
            vec!["B-NP".to_string(), "I-NP".into(), "B-VP".into(), "O".into()],
            vec!["O".to_string(), "B-PP".into()],
        ];
        let r = evaluate(&gold, &gold).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn evaluate_rejects_misalignment() {
        let gold = vec![vec!["O".to_string(), "O".into()]];
        let pred = vec![vec!["O".to_string()]];
        assert!(matches!(evaluate(&gold, &pred), Err(Error::Input(_))));
    }

    #[test]
    fn f1_is_one_iff_chunk_sets_match_even_when_empty() {
        let gold = vec![vec!["O".to_string(), "O".into()]];
        let r = evaluate(&gold, &gold).unwrap();
        assert_eq!(r.f1, 1.0);

        let pred = vec![vec!["B-NP".to_string(), "O".into()]];
        let r = evaluate(&gold, &pred).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.f1, 0.0);
    }
}
