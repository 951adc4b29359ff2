//! Hash-then-embed text stub. A token's table row is the CLIP-like encoding
//! of a procedural "concept" texture keyed by the token's hash, so a caption
//! and an image of its concept land close together by construction.

use super::texture::TextureParams;
use super::{l2_normalize, PseudoClip};
use crate::features::{Domain, FeatureSet, Provenance};
use crate::image::Image;
use crate::{Error, Result};

pub const CONCEPT_SIZE: usize = 32;
const TABLE_SEED: u64 = 0x7E47_7AB1;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn concept_params(token: &str) -> TextureParams {
    TextureParams::random(fnv1a(token.to_lowercase().as_bytes()) ^ TABLE_SEED)
}

/// Text features: mean of the tokens' table rows, L2-normalised (the
/// CLIP-like image features are unit length too).
pub fn encode_text(clip: &PseudoClip, tokens: &[String]) -> Result<FeatureSet> {
    if tokens.is_empty() {
        return Err(Error::invalid("encode_text needs at least one token"));
    }
    let mut acc = vec![0.0f64; clip.dim()];
    for t in tokens {
        let row = clip.embed(&concept_params(t).render(CONCEPT_SIZE, CONCEPT_SIZE))?;
        acc.iter_mut().zip(&row).for_each(|(a, &r)| *a += r as f64);
    }
    let mean: Vec<f32> = acc.iter().map(|a| (a / tokens.len() as f64) as f32).collect();
    FeatureSet::new(
        Domain::ClipLike,
        clip.dim(),
        l2_normalize(mean),
        Provenance::SyntheticPair,
    )
}

/// An image of `word`'s concept (a jittered variant of its texture) together
/// with its one-word caption.
pub fn concept_pair(word: &str, jitter_seed: u64, size: usize) -> (Image, Vec<String>) {
    let img = concept_params(word).jittered(jitter_seed).render(size, size);
    (img, vec![word.to_string()])
}
