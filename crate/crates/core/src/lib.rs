//! Character-level neural word segmentation.
//!
//! Text is labeled per character with the five-tag alphabet `B`, `I`, `E`,
//! `S`, `X` (begin, inside, end of a multi-character token, single-character
//! token, whitespace). The tagger stacks character n-gram embeddings and a
//! composed per-token subword vector, a BiLSTM encoder, a dense hidden layer,
//! single-head self-attention, and a linear-chain CRF. Softmax and
//! reduced-feature baselines share the same machinery.
//!
//! ```
//! use sgnws_core::corpus::{segmentation_from_tags, tags_from_segmentation, Sentence};
//!
//! let sentence = Sentence::from_text("ab c");
//! let tags = tags_from_segmentation(&sentence).unwrap();
//! assert_eq!(tags.to_string(), "BEXS");
//! let seg = segmentation_from_tags(&sentence.chars, &tags).unwrap();
//! assert_eq!(seg.tokens, vec!["ab", "c"]);
//! ```

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod eval;
pub mod model;
pub mod nncore;
pub mod subword;
pub mod synthetic;
pub mod tags;

pub use tags::{Tag, TagSequence, NUM_TAGS};
