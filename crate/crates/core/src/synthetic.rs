//! A tiny artificial language for end-to-end tests.
//!
//! Words are random strings over a 20-letter alphabet. Some letters are
//! "non-joiners": a word ending in one is written directly against the next
//! word with no space, mimicking space omission in scripts where the gap is
//! visually redundant. Spacing is therefore a deterministic function of the
//! word sequence and the segmentation has to be learned from the lexicon.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Labeled, Sentence};

pub const ALPHABET: [char; 20] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's', 't',
];

/// Letters after which no space is written.
pub const NON_JOINERS: [char; 6] = ['a', 'd', 'h', 'l', 'o', 'r'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticLanguage {
    pub lexicon: Vec<String>,
    pub min_words: usize,
    pub max_words: usize,
}

impl SyntheticLanguage {
    /// `size` distinct words of 2 to 6 letters.
    pub fn generate(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut lexicon = Vec::with_capacity(size);
        while lexicon.len() < size {
            let len = rng.gen_range(2..=6);
            let w: String = (0..len).map(|_| *ALPHABET.choose(&mut rng).unwrap()).collect();
            if seen.insert(w.clone()) {
                lexicon.push(w);
            }
        }
        SyntheticLanguage { lexicon, min_words: 5, max_words: 10 }
    }

    pub fn joins_next(word: &str) -> bool {
        word.chars().last().is_some_and(|c| NON_JOINERS.contains(&c))
    }

    pub fn sentence<R: Rng>(&self, rng: &mut R) -> Sentence {
        let n = rng.gen_range(self.min_words..=self.max_words);
        let words: Vec<&str> = (0..n).map(|_| self.lexicon.choose(rng).unwrap().as_str()).collect();
        let joins: Vec<bool> = words.iter().map(|w| Self::joins_next(w)).collect();
        Sentence::from_tokens(&words, &joins)
    }

    pub fn corpus(&self, n: usize, seed: u64) -> Vec<Labeled> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Labeled::from_sentence(self.sentence(&mut rng)).expect("generated spans are valid"))
            .collect()
    }
}

/// The standard toy task: a 60-word lexicon, 100 training and 20 dev
/// sentences.
pub fn toy_task(seed: u64) -> (SyntheticLanguage, Vec<Labeled>, Vec<Labeled>) {
    let lang = SyntheticLanguage::generate(60, seed);
    let train = lang.corpus(100, seed.wrapping_add(1));
    let dev = lang.corpus(20, seed.wrapping_add(2));
    (lang, train, dev)
}
